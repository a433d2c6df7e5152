"""Grasp execution oracle and automatic dataset labeling.

Instead of simulating dynamics, a grasp attempt is judged by four staged
geometric checks against the decomposed scene, each built on exact convex
distance queries:

  1. approach  - the open jaws descend straight down; touching anything on
                 the way is a collision.
  2. close     - the jaws shrink toward the grasp center until each rests
                 against something; the cable ids they touch decide between
                 an empty close, a multi-cable pinch, and a clean hold.
  3. hold      - antipodal friction-cone test at the two closing contacts,
                 using the 3D face normals of the contacted pieces.
  4. lift      - the held cable sweeps straight up; any other cable that
                 overlaps the swept volume by more than the entanglement
                 threshold would be dragged along.

Every failure is a labeled outcome rather than an error, so the oracle can
auto-label sampled candidates at scale. `generate_dataset` runs the whole
scene -> render -> noise -> sample -> label loop with per-scene derived
seeds and writes a binary patch blob plus a JSON-lines index.
"""

from __future__ import annotations

import json
import math
import os
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .depthproc import Patch, add_noise, patch_from_record, record_bytes
from .errors import DatasetNotFound, DegenerateInput, NoCandidates, Overfilled, SingleClass
from .geometry import ConvexPiece, convex_hull, gjk_world
from .sampler import GraspPose, SamplerConfig, sample_grasps
from .scene import BinSpec, CableSpec, Camera, Scene, bin_pieces, render_depth, settle_scene

FAILURE_REASONS = ("none", "approach_collision", "multi_object",
                   "no_force_closure", "empty_close")

_TOUCH = 1e-9            # overlap test threshold for sweep collisions
CONTACT_TOL = 1e-3       # mm; a closing jaw stops within this gap
ENTANGLE_EROSION = 2.5   # mm per body; 5 mm combined overlap means entangled
_CLOSE_ITER_CAP = 200


@dataclass(frozen=True)
class GripperModel:
    """Two-jaw parallel gripper approaching straight down.

    Each jaw is a box: `jaw_thickness` along the closing axis, `jaw_height`
    across it, `finger_length` vertically. Fingertips hover `tip_clearance`
    above the nominal grasp depth so resting on the floor plane is not
    counted as a collision. Before closing, the jaws open `open_clearance`
    wider than the estimated grasp width.
    """

    jaw_thickness: float = 4.0
    jaw_height: float = 12.0
    finger_length: float = 30.0
    w_max: float = 30.0
    open_clearance: float = 10.0
    tip_clearance: float = 0.2

    def __post_init__(self):
        for name in ("jaw_thickness", "jaw_height", "finger_length",
                     "w_max", "open_clearance"):
            if getattr(self, name) <= 0.0:
                raise DegenerateInput(f"{name} must be positive")
        if self.tip_clearance < 0.0:
            raise DegenerateInput("tip_clearance must be non-negative")

    def jaw_pieces(self, g: GraspPose, width: float) -> tuple[ConvexPiece, ConvexPiece]:
        """Collision boxes of both jaws at the given separation; the boxes
        are disjoint for any width > 0 (gap between inner faces == width)."""
        if width <= 0.0:
            raise DegenerateInput("jaw separation must be positive")
        return (convex_hull(_jaw_verts(g, self, 1.0, width / 2.0)),
                convex_hull(_jaw_verts(g, self, -1.0, width / 2.0)))


@dataclass(frozen=True)
class GraspOutcome:
    label: int
    failure_reason: str
    contacted_ids: frozenset[int]

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DegenerateInput("label must be 0 or 1")
        if self.failure_reason not in FAILURE_REASONS:
            raise DegenerateInput(f"unknown failure reason {self.failure_reason!r}")
        if (self.label == 1) != (self.failure_reason == "none"):
            raise DegenerateInput("label 1 and reason 'none' must coincide")
        if self.label == 1 and len(self.contacted_ids) != 1:
            raise DegenerateInput("a successful grasp holds exactly one cable")


@dataclass(frozen=True)
class GraspSample:
    patch: Patch
    label: int
    meta: dict

    def __post_init__(self):
        if not np.isfinite(self.patch.data).all():
            raise DegenerateInput("patch contains non-finite values")
        if self.label not in (0, 1):
            raise DegenerateInput("label must be 0 or 1")
        reason = self.meta.get("reason")
        if reason is not None and (self.label == 1) != (reason == "none"):
            raise DegenerateInput("label does not match stored outcome")


@dataclass(frozen=True)
class ClassWeights:
    """Per-class loss weights, inverse to class frequency, mean 1."""

    phi: tuple[float, float]

    def __post_init__(self):
        if len(self.phi) != 2:
            raise DegenerateInput("exactly two classes are supported")
        if any(p <= 0.0 for p in self.phi):
            raise DegenerateInput("class weights must be positive")
        if abs((self.phi[0] + self.phi[1]) / 2.0 - 1.0) > 1e-9:
            raise DegenerateInput("class weights must average to 1")

    def __getitem__(self, label: int) -> float:
        return self.phi[int(label)]


def _grasp_axes(theta: float) -> tuple[np.ndarray, np.ndarray]:
    u = np.array([math.cos(theta), math.sin(theta), 0.0])
    v = np.array([-math.sin(theta), math.cos(theta), 0.0])
    return u, v


def _jaw_verts(g: GraspPose, grip: GripperModel, side: float, offset: float,
               z_top: float | None = None) -> np.ndarray:
    """Corner vertices of one jaw box. `offset` is the distance from the
    grasp center to the jaw's inner face along `side` times the closing
    axis; extending z_top past the finger length turns the box into the
    exact swept volume of a straight-down descent."""
    u, v = _grasp_axes(g.theta)
    z0 = g.z + grip.tip_clearance
    z1 = z0 + grip.finger_length if z_top is None else z_top
    center = np.array([g.x, g.y, 0.0])
    corners = []
    for du in (offset, offset + grip.jaw_thickness):
        for dv in (-grip.jaw_height / 2.0, grip.jaw_height / 2.0):
            for z in (z0, z1):
                corners.append(center + side * du * u + dv * v + np.array([0.0, 0.0, z]))
    return np.array(corners)


class _Body:
    """One world-frame convex piece with its owner (-1 = bin)."""

    __slots__ = ("owner", "verts", "equations", "lo", "hi")

    def __init__(self, owner: int, verts: np.ndarray, equations: np.ndarray):
        self.owner = owner
        self.verts = verts
        self.equations = equations
        self.lo = verts.min(axis=0)
        self.hi = verts.max(axis=0)


def _scene_bodies(scene: Scene) -> list[_Body]:
    bodies = [_Body(-1, p.vertices, p.equations) for p in bin_pieces(scene.bin)]
    for cable in scene.cables:
        rot = cable.pose.matrix()
        t = cable.pose.translation
        for piece in cable.decomposition.pieces:
            verts = cable.pose.apply(piece.vertices)
            normals = piece.equations[:, :3] @ rot.T
            offsets = piece.equations[:, 3] - normals @ t
            bodies.append(_Body(cable.id, verts, np.column_stack([normals, offsets])))
    return bodies


def _overlaps(lo_a, hi_a, body: _Body, pad: float = 0.0) -> bool:
    return bool(((lo_a - pad) <= body.hi).all() and ((hi_a + pad) >= body.lo).all())


def _face_normal(equations: np.ndarray, point: np.ndarray, hint: np.ndarray) -> np.ndarray:
    """Outward unit normal of the face supporting `point`; ties at an edge
    or vertex resolve toward the face best aligned with `hint`."""
    residual = equations[:, :3] @ point + equations[:, 3]
    active = np.flatnonzero(residual >= residual.max() - 1e-6)
    best = active[int(np.argmax(equations[active, :3] @ hint))]
    return equations[best, :3]


def _close_jaw(g: GraspPose, grip: GripperModel, side: float, a_start: float,
               bodies: list[_Body]):
    """Advance one jaw from separation a_start toward the grasp center until
    it touches something or its inner face reaches the center. Returns the
    bodies resting against the final jaw position."""
    first = _jaw_verts(g, grip, side, a_start)
    last = _jaw_verts(g, grip, side, 0.0)
    lo = np.minimum(first.min(axis=0), last.min(axis=0))
    hi = np.maximum(first.max(axis=0), last.max(axis=0))
    near = [b for b in bodies if _overlaps(lo, hi, b, pad=CONTACT_TOL)]
    if not near:
        return []

    def probe(a: float):
        jaw = _jaw_verts(g, grip, side, a)
        return [(b, gjk_world(jaw, b.verts, max_distance=a_start + 1.0)) for b in near]

    a = a_start
    results = probe(a)
    for _ in range(_CLOSE_ITER_CAP):
        dmin = min(r.distance for _, r in results)
        if dmin <= CONTACT_TOL:
            return [(b, r) for b, r in results if r.distance <= CONTACT_TOL]
        step = dmin - CONTACT_TOL / 2.0
        if a - step <= 0.0:
            results = probe(0.0)
            return [(b, r) for b, r in results if r.distance <= CONTACT_TOL]
        a -= step
        results = probe(a)
    # conservative steps cannot tunnel, so landing here means a grazing
    # trajectory; accept the nearest bodies as the contact set
    dmin = min(r.distance for _, r in results)
    return [(b, r) for b, r in results if r.distance <= dmin + CONTACT_TOL]


def execute_grasp(scene: Scene, g: GraspPose, gripper: GripperModel,
                  f: float) -> GraspOutcome:
    """Label one grasp: approach, close, hold, lift. Every failure mode maps
    to a labeled outcome; only a grasp that passes all four stages holding
    exactly one cable gets label 1."""
    if f <= 0.0:
        raise DegenerateInput("friction coefficient must be positive")
    bodies = _scene_bodies(scene)
    u, _ = _grasp_axes(g.theta)
    w_open = g.w + gripper.open_clearance
    top_z = max(b.hi[2] for b in bodies) + 1.0

    # stage 1: straight-down approach of both open jaws. The swept volume of
    # a box translating along -z is itself a box, so one exact query per jaw
    # covers the entire descent.
    for side in (1.0, -1.0):
        sweep = _jaw_verts(g, gripper, side, w_open / 2.0,
                           z_top=top_z + gripper.finger_length)
        lo, hi = sweep.min(axis=0), sweep.max(axis=0)
        for b in bodies:
            if not _overlaps(lo, hi, b):
                continue
            if gjk_world(sweep, b.verts, max_distance=1.0).distance <= _TOUCH:
                return GraspOutcome(0, "approach_collision", frozenset())

    # stage 2: close both jaws independently; each stops at first touch
    contacts = {side: _close_jaw(g, gripper, side, w_open / 2.0, bodies)
                for side in (1.0, -1.0)}
    ids = {b.owner for side in contacts for b, _ in contacts[side] if b.owner >= 0}
    if not ids:
        return GraspOutcome(0, "empty_close", frozenset())
    if len(ids) >= 2:
        return GraspOutcome(0, "multi_object", frozenset(ids))
    cid = next(iter(ids))

    # stage 3: antipodal friction-cone test at the two closing contacts
    limit = math.atan(f)
    for side in (1.0, -1.0):
        on_cable = [(b, r) for b, r in contacts[side] if b.owner == cid]
        if not on_cable:
            # pinched from one side only (other jaw on the bin or nothing)
            return GraspOutcome(0, "no_force_closure", frozenset(ids))
        body, res = min(on_cable, key=lambda t: t[1].distance)
        normal = _face_normal(body.equations, res.point_b, side * u)
        cos_a = float(np.clip(normal @ (side * u), -1.0, 1.0))
        if math.acos(cos_a) >= limit:
            return GraspOutcome(0, "no_force_closure", frozenset(ids))

    # stage 4: lift the held cable straight up; another cable overlapping the
    # swept volume deeply enough would be dragged along
    lift = top_z + gripper.finger_length
    shift = np.array([0.0, 0.0, lift])
    for held in (b for b in bodies if b.owner == cid):
        swept = np.vstack([held.verts, held.verts + shift])
        lo = held.lo
        hi = held.hi + shift
        for other in bodies:
            if other.owner < 0 or other.owner == cid:
                continue
            if not _overlaps(lo, hi, other):
                continue
            res = gjk_world(swept, other.verts, erosion_a=ENTANGLE_EROSION,
                            erosion_b=ENTANGLE_EROSION, max_distance=1.0)
            if res.distance <= _TOUCH:
                return GraspOutcome(0, "multi_object", frozenset({cid, other.owner}))

    return GraspOutcome(1, "none", frozenset(ids))


def class_weights(dataset) -> ClassWeights:
    """Inverse-frequency class weights normalized to mean 1. Accepts either
    GraspSample sequences or raw 0/1 labels."""
    labels = [s.label if isinstance(s, GraspSample) else int(s) for s in dataset]
    if not set(labels) <= {0, 1}:
        raise DegenerateInput("labels must be 0 or 1")
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=2)
    if counts[0] == 0 or counts[1] == 0:
        raise SingleClass(f"need both classes, got counts {counts.tolist()}")
    inv = 1.0 / counts
    phi = inv / inv.mean()
    return ClassWeights(phi=(float(phi[0]), float(phi[1])))


@dataclass(frozen=True)
class DatasetConfig:
    """Domain randomization ranges plus the fixed scene/gripper setup."""

    scene_count: int = 80
    cable_count_range: tuple[int, int] = (4, 10)
    grasps_per_scene: int = 25
    friction_range: tuple[float, float] = (0.1, 0.5)
    gauss_sigma: float = 0.6
    salt_pepper_frac: float = 0.002
    patch_size: int = 64
    resample_attempts: int = 10
    bin: BinSpec = BinSpec()
    cable: CableSpec = CableSpec()
    camera: Camera = Camera()
    gripper: GripperModel = GripperModel()

    def __post_init__(self):
        if self.scene_count < 1:
            raise DegenerateInput("scene_count must be at least 1")
        lo, hi = self.cable_count_range
        if not 1 <= lo <= hi:
            raise DegenerateInput("cable_count_range must satisfy 1 <= lo <= hi")
        if self.grasps_per_scene < 1:
            raise DegenerateInput("grasps_per_scene must be at least 1")
        f_lo, f_hi = self.friction_range
        if not 0.0 < f_lo <= f_hi:
            raise DegenerateInput("friction_range must satisfy 0 < lo <= hi")
        if self.resample_attempts < 1:
            raise DegenerateInput("resample_attempts must be at least 1")


def _scene_rng(master_seed: int, index: int) -> np.random.Generator:
    # per-scene stream derived from the master seed and the scene index, so
    # scenes are independent work units regardless of generation order
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(index,)))


def scene_plan(cfg: DatasetConfig, master_seed: int, index: int) -> dict:
    """Per-scene draws (seed, cable count, friction) plus the live stream.

    The returned "rng" continues the same per-scene stream, so noise and
    sampling draws line up whether a stage runs fused or standalone.
    """
    rng = _scene_rng(master_seed, index)
    scene_seed = int(rng.integers(0, 2**31 - 1))
    count = int(rng.integers(cfg.cable_count_range[0], cfg.cable_count_range[1] + 1))
    f = float(rng.uniform(*cfg.friction_range))
    return {"scene_seed": scene_seed, "cable_count": count, "f": f, "rng": rng}


def _scene_candidates(cfg: DatasetConfig, master_seed: int, index: int):
    """Settle, render, and sample one scene.

    Returns (scene, candidates, info) where info carries the draws needed to
    replay the scene; on a skipped scene, (None, None, {"skip": reason}).
    """
    info = scene_plan(cfg, master_seed, index)
    scene_seed, count, f = info["scene_seed"], info["cable_count"], info["f"]
    rng = info["rng"]
    try:
        scene = settle_scene(cfg.bin, [cfg.cable] * count, scene_seed)
    except Overfilled:
        return None, None, {"skip": "overfilled"}
    img, _ = render_depth(scene, cfg.camera)
    scfg = SamplerConfig(n=cfg.grasps_per_scene, f=f, patch_size=cfg.patch_size,
                         camera_height=cfg.camera.height)
    cands = None
    for _ in range(cfg.resample_attempts):
        noisy = add_noise(img, rng, cfg.gauss_sigma, cfg.salt_pepper_frac)
        try:
            cands = sample_grasps(noisy, scfg, rng)
            break
        except NoCandidates:
            continue
    if cands is None:
        return None, None, {"skip": "no_candidates"}
    return scene, cands, info


def _scene_samples(cfg: DatasetConfig, master_seed: int, index: int):
    """All labeled samples for one scene, or a skip reason."""
    scene, cands, info = _scene_candidates(cfg, master_seed, index)
    if scene is None:
        return [], info["skip"]
    scene_seed, count, f = info["scene_seed"], info["cable_count"], info["f"]
    rows = []
    for j, (pose, _, patch) in enumerate(cands):
        out = execute_grasp(scene, pose, cfg.gripper, f)
        rows.append({
            "scene_index": index,
            "candidate_index": j,
            "patch": patch,
            "label": out.label,
            "reason": out.failure_reason,
            "contacted_ids": sorted(out.contacted_ids),
            "scene_seed": scene_seed,
            "cable_count": count,
            "f": f,
            "pose": {"x": pose.x, "y": pose.y, "z": pose.z,
                     "theta": pose.theta, "w": pose.w},
        })
    return rows, None


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def generate_dataset(cfg: DatasetConfig, master_seed: int, out_dir: str | Path,
                     stem: str = "dataset") -> Path:
    """Generate, label, and store a dataset; returns the index path.

    Writes three sibling files under out_dir: `<stem>.blob` (concatenated
    patch records), `<stem>.idx` (JSON lines, one sample per line), and
    `<stem>.summary.json`. Scenes that overfill the bin or yield no
    candidates are skipped and counted. Output depends only on the master
    seed and config.
    """
    all_rows = []
    skips = {"overfilled": 0, "no_candidates": 0}
    for i in range(cfg.scene_count):
        rows, skip = _scene_samples(cfg, master_seed, i)
        if skip is not None:
            skips[skip] += 1
        all_rows.extend(rows)
    return write_dataset(all_rows, skips, cfg.scene_count, master_seed,
                         out_dir, stem)


def write_dataset(rows: list, skips: dict, scene_count: int, master_seed: int,
                  out_dir: str | Path, stem: str = "dataset") -> Path:
    """Serialize labeled rows as the blob/index/summary file triple.

    Each row needs the keys produced by the labeling step: scene_index,
    candidate_index, patch, label, reason, contacted_ids, scene_seed,
    cable_count, f, pose. Rows may arrive in any order.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # stable global order even if scenes were produced out of order
    all_rows = sorted(rows, key=lambda r: (r["scene_index"], r["candidate_index"]))

    blob = bytearray()
    lines = []
    for row in all_rows:
        row = dict(row)
        patch = row.pop("patch")
        row["patch_offset"] = len(blob)
        row["patch_size_px"] = patch.size
        blob += record_bytes(patch)
        lines.append(json.dumps(row, sort_keys=True))
    positives = sum(r["label"] for r in all_rows)
    summary = {
        "samples": len(all_rows),
        "positives": positives,
        "negatives": len(all_rows) - positives,
        "reasons": dict(sorted(Counter(r["reason"] for r in all_rows).items())),
        "skipped": dict(skips),
        "scene_count": scene_count,
        "master_seed": master_seed,
    }
    _atomic_write(out / f"{stem}.blob", bytes(blob))
    index_path = out / f"{stem}.idx"
    _atomic_write(index_path, ("\n".join(lines) + "\n" if lines else "").encode())
    _atomic_write(out / f"{stem}.summary.json",
                  (json.dumps(summary, indent=2, sort_keys=True) + "\n").encode())
    return index_path


def load_dataset(index_path: str | Path) -> list[GraspSample]:
    """Read an index plus its sibling blob back into memory."""
    path = Path(index_path)
    if not path.exists():
        raise DatasetNotFound(str(path))
    blob_path = path.with_suffix(".blob")
    if not blob_path.exists():
        raise DatasetNotFound(str(blob_path))
    blob = blob_path.read_bytes()
    samples = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        patch = patch_from_record(blob, row["patch_offset"])
        meta = {k: v for k, v in row.items()
                if k not in ("patch_offset", "patch_size_px", "label")}
        samples.append(GraspSample(patch=patch, label=int(row["label"]), meta=meta))
    return samples


def replay_sample(sample: GraspSample | dict, cfg: DatasetConfig | None = None) -> GraspOutcome:
    """Rebuild a sample's scene from its stored seed and re-run the oracle
    on the stored pose; must reproduce the stored label for any dataset
    generated with the same config."""
    if cfg is None:
        cfg = DatasetConfig()
    meta = sample.meta if isinstance(sample, GraspSample) else dict(sample)
    scene = settle_scene(cfg.bin, [cfg.cable] * int(meta["cable_count"]),
                         int(meta["scene_seed"]))
    p = meta["pose"]
    pose = GraspPose(x=p["x"], y=p["y"], z=p["z"], theta=p["theta"], w=p["w"])
    return execute_grasp(scene, pose, cfg.gripper, float(meta["f"]))
