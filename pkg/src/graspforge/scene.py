"""Synthetic cable piles: procedural tube meshes, a rigid bin, sequential
quasi-static settling, and orthographic depth rendering.

Settling replaces dynamics with a deterministic drop: each cable falls
straight down by conservative advancement (each step moves by the current
minimum separation, which a 1-Lipschitz distance field cannot overshoot),
stops at contact, and is re-dropped elsewhere when its center of mass is
not supported by the contact footprint.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .depthproc import DepthImage
from .errors import DegenerateInput, Overfilled, SelfIntersecting
from .geometry import (
    ConvexPiece, DecompositionResult, Pose3, TriMesh, convex_hull, gjk_world,
    load_obj, save_obj,
)

CONTACT_EPS = 0.05       # mm; resting contact tolerance
SUPPORT_TOL = 0.5        # mm; gap still counted as support during settling
OVERLAP_TOL = 2.0        # mm; scene invariant on pairwise penetration


# ---------------------------------------------------------------------------
# Bin

@dataclass(frozen=True)
class BinSpec:
    """Open-top box; the floor's upper surface sits at z = 0, centered at
    the origin in x and y."""

    inner_x: float = 200.0
    inner_y: float = 150.0
    wall_height: float = 45.0
    thickness: float = 8.0

    def footprint(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([-self.inner_x / 2.0, -self.inner_y / 2.0])
        return lo, -lo


def _bin_boxes(spec: BinSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    hx, hy = spec.inner_x / 2.0, spec.inner_y / 2.0
    t, wh = spec.thickness, spec.wall_height
    return [
        # (center, half_extents)
        (np.array([0.0, 0.0, -t / 2.0]), np.array([hx + t, hy + t, t / 2.0])),
        (np.array([hx + t / 2.0, 0.0, wh / 2.0]), np.array([t / 2.0, hy + t, wh / 2.0])),
        (np.array([-hx - t / 2.0, 0.0, wh / 2.0]), np.array([t / 2.0, hy + t, wh / 2.0])),
        (np.array([0.0, hy + t / 2.0, wh / 2.0]), np.array([hx, t / 2.0, wh / 2.0])),
        (np.array([0.0, -hy - t / 2.0, wh / 2.0]), np.array([hx, t / 2.0, wh / 2.0])),
    ]


def bin_pieces(spec: BinSpec) -> list[ConvexPiece]:
    """Floor slab plus four wall slabs as convex collision pieces."""
    from .geometry.mesh import box_mesh
    return [convex_hull(box_mesh(c, h).vertices) for c, h in _bin_boxes(spec)]


def bin_mesh(spec: BinSpec) -> TriMesh:
    """Render mesh for the bin (concatenated box shells)."""
    from .geometry.mesh import box_mesh
    verts = []
    faces = []
    off = 0
    for c, h in _bin_boxes(spec):
        m = box_mesh(c, h)
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += len(m.vertices)
    return TriMesh(np.vstack(verts), np.vstack(faces))


# ---------------------------------------------------------------------------
# Cables

@dataclass(frozen=True)
class CableSpec:
    segment_count: int = 5
    segment_length: float = 22.0
    radius: float = 4.0
    bend_angle_range: tuple[float, float] = (0.0, 30.0)  # degrees
    tube_sides: int = 12

    def __post_init__(self):
        if self.radius <= 0:
            raise DegenerateInput("radius must be positive")
        if self.segment_count < 2:
            raise DegenerateInput("need at least 2 segments")
        if self.tube_sides < 6:
            raise DegenerateInput("need at least 6 tube sides")


def _rotate_about(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    return (v * math.cos(angle)
            + np.cross(axis, v) * math.sin(angle)
            + axis * (axis @ v) * (1.0 - math.cos(angle)))


def _polyline(spec: CableSpec, rng: np.random.Generator) -> np.ndarray:
    lo, hi = spec.bend_angle_range
    d = np.array([1.0, 0.0, 0.0])
    pts = [np.zeros(3)]
    for i in range(spec.segment_count):
        if i > 0:
            bend = math.radians(rng.uniform(lo, hi))
            azimuth = rng.uniform(0.0, 2.0 * math.pi)
            # perpendicular to d, rotated around d by the azimuth
            ref = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
            perp = np.cross(d, ref)
            perp /= np.linalg.norm(perp)
            perp = _rotate_about(perp, d, azimuth)
            d = _rotate_about(d, perp, bend)
        pts.append(pts[-1] + d * spec.segment_length)
    return np.array(pts)


def _self_intersects(pts: np.ndarray, radius: float) -> bool:
    # non-adjacent centerline segments closer than a tube diameter fold
    # the surface into itself
    n = len(pts) - 1
    for i in range(n):
        for j in range(i + 2, n):
            a, b = pts[i], pts[i + 1]
            c, d = pts[j], pts[j + 1]
            if _segment_distance(a, b, c, d) < 2.0 * radius:
                return True
    return False


def _segment_distance(p1, q1, p2, q2) -> float:
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = d1 @ d1
    e = d2 @ d2
    c = d1 @ r
    f = d2 @ r
    b = d1 @ d2
    den = a * e - b * b
    s = np.clip((b * f - c * e) / den, 0.0, 1.0) if den > 1e-24 else 0.0
    t = (b * s + f) / e if e > 1e-24 else 0.0
    if t < 0.0:
        t = 0.0
        s = np.clip(-c / a, 0.0, 1.0)
    elif t > 1.0:
        t = 1.0
        s = np.clip((b - c) / a, 0.0, 1.0)
    return float(np.linalg.norm(p1 + d1 * s - (p2 + d2 * t)))


def make_cable_mesh(spec: CableSpec, rng: np.random.Generator) -> TriMesh:
    """Watertight mitered tube along a random piecewise-linear centerline,
    recentered on its volume centroid. Deterministic per rng state."""
    pts = None
    for _ in range(100):
        cand = _polyline(spec, rng)
        if not _self_intersects(cand, spec.radius):
            pts = cand
            break
    if pts is None:
        raise SelfIntersecting("could not draw a non-folding centerline in 100 tries")

    n_seg = len(pts) - 1
    dirs = np.diff(pts, axis=0)
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]

    # parallel-transported frame along the centerline
    ref = np.array([0.0, 0.0, 1.0]) if abs(dirs[0][2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    n1 = np.cross(dirs[0], ref)
    n1 /= np.linalg.norm(n1)
    frames = []
    d_prev = dirs[0]
    for k in range(n_seg):
        d = dirs[k]
        cross = np.cross(d_prev, d)
        s = np.linalg.norm(cross)
        if s > 1e-12:
            n1 = _rotate_about(n1, cross / s, math.asin(np.clip(s, -1, 1)))
        n1 = n1 - (n1 @ d) * d
        n1 /= np.linalg.norm(n1)
        frames.append((n1.copy(), np.cross(d, n1)))
        d_prev = d

    sides = spec.tube_sides
    ang = 2.0 * np.pi * np.arange(sides) / sides
    cos_a, sin_a = np.cos(ang), np.sin(ang)

    rings = []
    for k in range(len(pts)):
        if k == 0:
            axis = dirs[0]
            a1, a2 = frames[0]
        elif k == len(pts) - 1:
            axis = dirs[-1]
            a1, a2 = frames[-1]
        else:
            axis = dirs[k - 1] + dirs[k]
            axis /= np.linalg.norm(axis)
            a1, a2 = frames[k]  # frame of the outgoing segment
            a1 = a1 - (a1 @ axis) * axis
            a1 /= np.linalg.norm(a1)
            a2 = np.cross(axis, a1)
        # stretch the ring in the miter plane so the tube wall stays at
        # constant radius from the centerline
        if k in (0, len(pts) - 1):
            stretch = 1.0
        else:
            half = math.acos(np.clip(dirs[k - 1] @ dirs[k], -1.0, 1.0)) / 2.0
            stretch = 1.0 / max(math.cos(half), 1e-6)
        ring = (pts[k]
                + np.outer(cos_a * spec.radius * stretch, a1)
                + np.outer(sin_a * spec.radius, a2))
        rings.append(ring)

    verts = [np.vstack(rings)]
    faces: list[list[int]] = []
    for k in range(n_seg):
        base0, base1 = k * sides, (k + 1) * sides
        for s in range(sides):
            s2 = (s + 1) % sides
            faces.append([base0 + s, base0 + s2, base1 + s2])
            faces.append([base0 + s, base1 + s2, base1 + s])
    # end caps: fan around the ring centers
    cap0 = len(pts) * sides
    cap1 = cap0 + 1
    verts.append(pts[[0]])
    verts.append(pts[[-1]])
    for s in range(sides):
        s2 = (s + 1) % sides
        faces.append([cap0, s2, s])
        last = (len(pts) - 1) * sides
        faces.append([cap1, last + s, last + s2])

    mesh = TriMesh(np.vstack(verts), np.array(faces))
    return TriMesh(mesh.vertices - mesh.centroid(), mesh.faces)


def cable_decomposition(mesh: TriMesh, tube_sides: int) -> DecompositionResult:
    """Exact convex cover of a tube from make_cable_mesh: one hull per
    centerline segment. A mitered tube segment is convex (a cylinder cut
    by two planes), so each piece has zero concavity and the union covers
    the whole solid while staying tight to the surface.

    Relies on the vertex layout of make_cable_mesh: ring k occupies
    indices [k*tube_sides, (k+1)*tube_sides), followed by the two cap
    center vertices.
    """
    n_rings = (len(mesh.vertices) - 2) // tube_sides
    if n_rings < 2 or n_rings * tube_sides + 2 != len(mesh.vertices):
        raise DegenerateInput("vertex layout is not a make_cable_mesh tube")
    pieces = []
    for k in range(n_rings - 1):
        ring_pair = mesh.vertices[k * tube_sides:(k + 2) * tube_sides]
        pieces.append(convex_hull(ring_pair))
    return DecompositionResult(pieces=pieces, concavities=[0.0] * len(pieces),
                               source=mesh, cell_size=0.0, concavity_tol=0.0,
                               budget_exceeded=False)


# ---------------------------------------------------------------------------
# Scene

@dataclass(frozen=True)
class PlacedCable:
    id: int
    spec: CableSpec
    mesh: TriMesh
    decomposition: DecompositionResult
    pose: Pose3


@dataclass(frozen=True)
class Scene:
    bin: BinSpec
    cables: list[PlacedCable]
    rng_seed: int


class _WorldBody:
    """Pre-transformed piece vertex arrays with AABBs, for fast queries."""

    def __init__(self, pieces: list[ConvexPiece], pose: Pose3 | None = None):
        if pose is None:
            self.verts = [p.vertices for p in pieces]
        else:
            self.verts = [pose.apply(p.vertices) for p in pieces]
        self.lo = np.array([v.min(axis=0) for v in self.verts])
        self.hi = np.array([v.max(axis=0) for v in self.verts])

    def shifted(self, dz: float) -> "_WorldBody":
        out = _WorldBody.__new__(_WorldBody)
        off = np.array([0.0, 0.0, dz])
        out.verts = [v + off for v in self.verts]
        out.lo = self.lo + off
        out.hi = self.hi + off
        return out

    @property
    def aabb_lo(self) -> np.ndarray:
        return self.lo.min(axis=0)

    @property
    def aabb_hi(self) -> np.ndarray:
        return self.hi.max(axis=0)


def _xy_distance(va: np.ndarray, vb: np.ndarray) -> float:
    """Separation of the xy projections (shapes flattened onto z = 0)."""
    fa = np.column_stack([va[:, :2], np.zeros(len(va))])
    fb = np.column_stack([vb[:, :2], np.zeros(len(vb))])
    return gjk_world(fa, fb, max_distance=2.0 * CONTACT_EPS).distance


def _blocking_pairs(body: _WorldBody, statics: list[_WorldBody]):
    """Piece pairs that can obstruct straight-down motion of the body.

    A pair whose xy projections stay separated never collides under
    vertical translation, so only projection-overlapping pairs are kept.
    The body's xy extent does not change while it falls, so the list is
    valid for the whole drop.
    """
    pairs = []
    for st in statics:
        overlap = ~((body.hi[:, None, :2] < st.lo[None, :, :2] - CONTACT_EPS).any(axis=2)
                    | (body.lo[:, None, :2] > st.hi[None, :, :2] + CONTACT_EPS).any(axis=2))
        for i, j in np.argwhere(overlap):
            if _xy_distance(body.verts[i], st.verts[j]) <= CONTACT_EPS:
                pairs.append((int(i), st, int(j)))
    return pairs


def _pairs_min_distance(body: _WorldBody, pairs, cap: float) -> float:
    """Min separation over the blocking pairs, early-exiting past cap."""
    best = cap
    for i, st, j in pairs:
        # vertical gap already exceeding the working bound
        if body.lo[i, 2] > st.hi[j, 2] + best or body.hi[i, 2] < st.lo[j, 2] - best:
            continue
        r = gjk_world(body.verts[i], st.verts[j], max_distance=best)
        if r.distance < best:
            best = r.distance
        if best <= 0.0:
            return 0.0
    return best


def _contact_points(body: _WorldBody, statics: list[_WorldBody],
                    tol: float) -> list[np.ndarray]:
    """Contact points between the body and its supports.

    Besides the closest-point witness of each touching pair, body
    vertices lying within tol of the support are added, so a flat-on-flat
    rest reports the extremes of its true support region, not just one
    interior point (the toppling pivot must be the region's edge)."""
    pts = []
    for st in statics:
        for i in range(len(body.verts)):
            for j in range(len(st.verts)):
                if (body.lo[i] > st.hi[j] + 2 * tol).any() or (body.hi[i] < st.lo[j] - 2 * tol).any():
                    continue
                r = gjk_world(body.verts[i], st.verts[j], max_distance=4 * tol)
                if r.distance > tol:
                    continue
                pts.append(0.5 * (r.point_a + r.point_b))
                near = ((body.verts[i] >= st.lo[j] - 2 * tol)
                        & (body.verts[i] <= st.hi[j] + 2 * tol)).all(axis=1)
                for v in body.verts[i][near]:
                    if gjk_world(v[None, :], st.verts[j], max_distance=2 * tol).distance <= tol:
                        pts.append(v)
    return pts


def _support_analysis(com: np.ndarray, contacts: list[np.ndarray]):
    """Distance from the center of mass to the support polygon in the
    horizontal plane, plus the tipping element (the nearest boundary
    edge or vertex, as 3D contact points) when the mass sits outside."""
    if len(contacts) == 0:
        return np.inf, []
    pts3 = np.array(contacts)
    com_xy = com[:2]
    xy = pts3[:, :2]
    pts_idx = list(range(len(pts3)))
    if len(pts3) >= 3:
        try:
            hull = ConvexHull(xy)
            eq = hull.equations
            if (eq[:, :2] @ com_xy + eq[:, 2] <= 1e-12).all():
                return 0.0, []
            pts_idx = [int(v) for v in hull.vertices]
        except QhullError:
            pass
    best = np.inf
    tip: list[np.ndarray] = []
    for i in pts_idx:
        d = float(np.linalg.norm(com_xy - xy[i]))
        if d < best:
            best, tip = d, [pts3[i]]
    for a in range(len(pts_idx)):
        for b in range(a + 1, len(pts_idx)):
            i, j = pts_idx[a], pts_idx[b]
            d, t = _point_segment_closest(com_xy, xy[i], xy[j])
            if d < best:
                best = d
                tip = [pts3[i], pts3[j]] if 0.0 < t < 1.0 else [pts3[i] if t <= 0 else pts3[j]]
    return best, tip


def _point_segment_closest(p, a, b) -> tuple[float, float]:
    ab = b - a
    den = float(ab @ ab)
    if den < 1e-24:
        return float(np.linalg.norm(p - a)), 0.0
    t = float(np.clip(float((p - a) @ ab) / den, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab))), t


def _tip_rotation(com: np.ndarray, tip: list[np.ndarray], angle: float) -> Pose3 | None:
    """Rigid rotation about the tipping element that lowers the center of
    mass, or None when the geometry is degenerate."""
    p = tip[0]
    if len(tip) == 2:
        axis = tip[1] - tip[0]
        n = np.linalg.norm(axis)
        if n < 1e-9:
            return None
        axis = axis / n
    else:
        u = com - p
        if np.hypot(u[0], u[1]) < 1e-9:
            return None
        axis = np.array([-u[1], u[0], 0.0])
        axis /= np.linalg.norm(axis)
    # choose the rotation sense that moves the mass center downward
    vz = float(np.cross(axis, com - p)[2])
    if abs(vz) < 1e-12:
        return None
    rot = Pose3.from_axis_angle(axis, -math.copysign(angle, vz))
    # conjugate so the axis passes through the contact point p
    return Pose3(p - rot.apply(p[None])[0], (1.0, 0.0, 0.0, 0.0)).compose(rot)


def _advance_down(pieces: list[ConvexPiece], rotation: np.ndarray,
                  cx: float, cy: float, z: float, statics: list[_WorldBody]):
    """Conservative advancement straight down from z: each step moves by
    the current minimum separation, which vertical motion cannot
    overshoot, so the body never penetrates. Returns (body, pose) resting
    within CONTACT_EPS, or None when advancement fails to reach contact."""
    body = _WorldBody(pieces, Pose3((cx, cy, z), rotation))
    pairs = _blocking_pairs(body, statics)
    d = np.inf
    for it in range(128):
        d = _pairs_min_distance(body, pairs, cap=body.aabb_lo[2])
        if d <= CONTACT_EPS:
            # a start already in contact cannot be certified overlap-free
            if it == 0:
                return None
            break
        step = d - 0.5 * CONTACT_EPS
        body = body.shifted(-step)
        z -= step
    if d > CONTACT_EPS:
        return None
    return body, Pose3(np.array([cx, cy, z]), rotation)


def _drop(pieces: list[ConvexPiece], rotation: np.ndarray, cx: float, cy: float,
          statics: list[_WorldBody]):
    """Advancement drop starting above everything already placed."""
    base = _WorldBody(pieces, Pose3((cx, cy, 0.0), rotation))
    top = max(s.aabb_hi[2] for s in statics)
    return _advance_down(pieces, rotation, cx, cy,
                         top - base.aabb_lo[2] + 5.0, statics)


def _inside_footprint(body: _WorldBody, lo_fp: np.ndarray, hi_fp: np.ndarray) -> bool:
    return bool((body.aabb_lo[:2] >= lo_fp - 1e-9).all()
                and (body.aabb_hi[:2] <= hi_fp + 1e-9).all())


def settle_scene(bin_spec: BinSpec, cable_specs: list[CableSpec],
                 seed: int) -> Scene:
    """Drop cables one at a time at random (x, y, yaw) until each rests in
    contact and supported; raises Overfilled after 50 failed attempts for
    any single cable. Same seed, same scene.

    After first contact the cable topples quasi-statically: it pivots
    about its support edge or point, re-drops, and keeps the move only
    when its center of mass strictly descends, until the support polygon
    brackets the mass center or no descent is possible.
    """
    if not 1 <= len(cable_specs) <= 30:
        raise DegenerateInput("cable count must be in [1, 30]")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    statics = [_WorldBody(bin_pieces(bin_spec))]
    placed: list[PlacedCable] = []
    lo_fp, hi_fp = bin_spec.footprint()

    for cable_id, spec in enumerate(cable_specs):
        mesh = make_cable_mesh(spec, rng)
        dec = cable_decomposition(mesh, spec.tube_sides)
        centroid = mesh.centroid()

        pose = None
        for _ in range(50):
            yaw = rng.uniform(0.0, 2.0 * math.pi)
            yawed = _WorldBody(dec.pieces, Pose3.from_yaw(yaw))
            half_x = (yawed.aabb_hi[0] - yawed.aabb_lo[0]) / 2.0
            half_y = (yawed.aabb_hi[1] - yawed.aabb_lo[1]) / 2.0
            if half_x * 2 > bin_spec.inner_x or half_y * 2 > bin_spec.inner_y:
                continue
            center_off = (yawed.aabb_hi[:2] + yawed.aabb_lo[:2]) / 2.0
            # leave room to topple without leaving the footprint
            mx = min(12.0, max(0.0, (bin_spec.inner_x / 2.0 - half_x) * 0.5))
            my = min(12.0, max(0.0, (bin_spec.inner_y / 2.0 - half_y) * 0.5))
            cx = rng.uniform(lo_fp[0] + half_x + mx, hi_fp[0] - half_x - mx) - center_off[0]
            cy = rng.uniform(lo_fp[1] + half_y + my, hi_fp[1] - half_y - my) - center_off[1]

            dropped = _drop(dec.pieces, Pose3.from_yaw(yaw).rotation, cx, cy, statics)
            if dropped is None:
                continue
            body, cur = dropped

            # gravity-driven rolling to a supported rest: rotate about
            # the support edge or point, then re-seat with a small lift
            # and vertical advancement (absorbs the slight surface dip a
            # discrete pivot causes without losing the pivot locality);
            # only moves that strictly lower the mass center are kept
            for _ in range(64):
                contacts = _contact_points(body, statics, tol=SUPPORT_TOL)
                com = cur.apply(centroid)
                fd, tip = _support_analysis(com, contacts)
                if not tip:
                    break  # mass center strictly inside the support
                moved = False
                for angle_deg in (6.0, 3.0, 1.5, 0.5, 0.15):
                    tipped = _tip_rotation(com, tip, math.radians(angle_deg))
                    if tipped is None:
                        break
                    cand = tipped.compose(cur)
                    seated = None
                    for lift in (1.0, 4.0, 16.0):
                        seated = _advance_down(dec.pieces, cand.rotation,
                                               cand.translation[0], cand.translation[1],
                                               cand.translation[2] + lift, statics)
                        if seated is not None:
                            break
                    if seated is None:
                        continue
                    cand_body, cand_pose = seated
                    if not _inside_footprint(cand_body, lo_fp, hi_fp):
                        continue
                    if cand_pose.apply(centroid)[2] < com[2] - 1e-6:
                        body, cur, moved = cand_body, cand_pose, True
                        break
                if not moved:
                    break

            # two perturbation passes: a random tilt is kept only when it
            # strictly reduces the deepest penetration, so a contact-only
            # rest (zero penetration) consumes the draws and keeps its pose
            pen0 = _penetration(body, statics)
            for _ in range(2):
                axis = rng.normal(size=3)
                angle = math.radians(rng.uniform(0.0, 5.0))
                if pen0 <= 0.0:
                    continue
                tilt = Pose3.from_axis_angle(axis, angle)
                cand = Pose3(cur.translation,
                             tilt.compose(Pose3((0, 0, 0), cur.rotation)).rotation)
                cand_body = _WorldBody(dec.pieces, cand)
                if not _inside_footprint(cand_body, lo_fp, hi_fp):
                    continue
                pen = _penetration(cand_body, statics)
                if pen < pen0:
                    cur, body, pen0 = cand, cand_body, pen

            contacts = _contact_points(body, statics, tol=SUPPORT_TOL)
            com = cur.apply(centroid)
            fd, _ = _support_analysis(com, contacts)
            # reject rests poking above the rim: keeps piles physical and
            # rendered depth within its contract band
            rim = bin_spec.wall_height + 2.0 * spec.radius
            if contacts and fd <= spec.radius and body.aabb_hi[2] <= rim:
                pose = cur
                break
        if pose is None:
            raise Overfilled(f"cable {cable_id} found no resting pose in 50 attempts")

        placed.append(PlacedCable(id=cable_id, spec=spec, mesh=mesh,
                                  decomposition=dec, pose=pose))
        statics.append(_WorldBody(dec.pieces, pose))

    return Scene(bin=bin_spec, cables=placed, rng_seed=seed)


def _penetration(body: _WorldBody, statics: list[_WorldBody]) -> float:
    """Deepest pairwise penetration, by bisecting the erosion radius that
    separates the pair (0 when nothing is in contact)."""
    worst = 0.0
    for st in statics:
        for i in range(len(body.verts)):
            for j in range(len(st.verts)):
                if (body.lo[i] > st.hi[j]).any() or (body.hi[i] < st.lo[j]).any():
                    continue
                if gjk_world(body.verts[i], st.verts[j]).distance > 0.0:
                    continue
                lo, hi = 0.0, OVERLAP_TOL * 2.0
                for _ in range(6):
                    mid = 0.5 * (lo + hi)
                    if gjk_world(body.verts[i], st.verts[j],
                                 erosion_a=mid / 2, erosion_b=mid / 2).distance > 0.0:
                        hi = mid
                    else:
                        lo = mid
                worst = max(worst, hi)
    return worst


# ---------------------------------------------------------------------------
# Camera and rendering

@dataclass(frozen=True)
class Camera:
    """Downward orthographic camera centered over the bin."""

    center_xy: tuple[float, float] = (0.0, 0.0)
    height: float = 70.0
    pitch: float = 0.5
    width_px: int = 480
    height_px: int = 360

    def __post_init__(self):
        if self.pitch <= 0.0:
            raise DegenerateInput("camera pitch must be positive")
        if self.width_px < 1 or self.height_px < 1:
            raise DegenerateInput("camera must have at least one pixel")

    def footprint_half_extents(self) -> tuple[float, float]:
        return (self.width_px * self.pitch / 2.0, self.height_px * self.pitch / 2.0)

    def px_to_world(self, px: np.ndarray, py: np.ndarray):
        x = self.center_xy[0] + (np.asarray(px) - (self.width_px - 1) / 2.0) * self.pitch
        y = self.center_xy[1] + ((self.height_px - 1) / 2.0 - np.asarray(py)) * self.pitch
        return x, y

    def world_to_px(self, x: np.ndarray, y: np.ndarray):
        px = (np.asarray(x) - self.center_xy[0]) / self.pitch + (self.width_px - 1) / 2.0
        py = (self.height_px - 1) / 2.0 - (np.asarray(y) - self.center_xy[1]) / self.pitch
        return px, py


def render_depth(scene: Scene, cam: Camera) -> tuple[DepthImage, np.ndarray]:
    """Top-down z-buffer over all triangles; equivalent to a per-pixel
    downward raycast. Returns the depth image and a per-pixel cable-id map
    (-1 for bin, floor, or background)."""
    half_x, half_y = cam.footprint_half_extents()
    if (half_x < scene.bin.inner_x / 2.0 - 1e-9
            or half_y < scene.bin.inner_y / 2.0 - 1e-9):
        raise DegenerateInput("camera frustum does not cover the bin interior")
    W, H = cam.width_px, cam.height_px
    zbuf = np.zeros((H, W), dtype=np.float64)   # floor plane z = 0
    idmap = np.full((H, W), -1, dtype=np.int32)

    groups = [(-1, bin_mesh(scene.bin).triangles())]
    for c in scene.cables:
        tris = c.mesh.triangles().reshape(-1, 3)
        groups.append((c.id, c.pose.apply(tris).reshape(-1, 3, 3)))

    for gid, tris in groups:
        for tri in tris:
            px, py = cam.world_to_px(tri[:, 0], tri[:, 1])
            x0 = max(0, int(np.ceil(px.min())))
            x1 = min(W - 1, int(np.floor(px.max())))
            y0 = max(0, int(np.ceil(py.min())))
            y1 = min(H - 1, int(np.floor(py.max())))
            if x1 < x0 or y1 < y0:
                continue
            gx, gy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
            # barycentric in pixel space
            ax, ay = px[0], py[0]
            v0 = np.array([px[1] - ax, py[1] - ay])
            v1 = np.array([px[2] - ax, py[2] - ay])
            den = v0[0] * v1[1] - v0[1] * v1[0]
            if abs(den) < 1e-12:
                continue
            qx = gx - ax
            qy = gy - ay
            u = (qx * v1[1] - qy * v1[0]) / den
            v = (qy * v0[0] - qx * v0[1]) / den
            inside = (u >= -1e-9) & (v >= -1e-9) & (u + v <= 1.0 + 1e-9)
            if not inside.any():
                continue
            z = tri[0, 2] + u * (tri[1, 2] - tri[0, 2]) + v * (tri[2, 2] - tri[0, 2])
            sel = inside & (z > zbuf[y0:y1 + 1, x0:x1 + 1])
            zb = zbuf[y0:y1 + 1, x0:x1 + 1]
            im = idmap[y0:y1 + 1, x0:x1 + 1]
            zb[sel] = z[sel]
            im[sel] = gid

    depth = (cam.height - zbuf).astype(np.float32)
    return DepthImage(data=depth, pitch=cam.pitch), idmap


# ---------------------------------------------------------------------------
# Persistence

def save_scene(scene: Scene, out_dir: str) -> str:
    """Write a JSON manifest plus one OBJ per cable; returns manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    cables = []
    for c in scene.cables:
        mesh_name = f"cable_{c.id:02d}.obj"
        save_obj(c.mesh, os.path.join(out_dir, mesh_name))
        cables.append({
            "id": c.id,
            "mesh": mesh_name,
            "pose": {
                "translation": [float(v) for v in c.pose.translation],
                "rotation": [float(v) for v in c.pose.rotation],
            },
            "spec": {
                "segment_count": c.spec.segment_count,
                "segment_length": c.spec.segment_length,
                "radius": c.spec.radius,
                "bend_angle_range": list(c.spec.bend_angle_range),
                "tube_sides": c.spec.tube_sides,
            },
        })
    manifest = {
        "rng_seed": scene.rng_seed,
        "bin": {
            "inner_x": scene.bin.inner_x,
            "inner_y": scene.bin.inner_y,
            "wall_height": scene.bin.wall_height,
            "thickness": scene.bin.thickness,
        },
        "cables": cables,
    }
    path = os.path.join(out_dir, "scene.json")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def load_scene(manifest_path: str) -> Scene:
    """Reload a saved scene; decompositions are recomputed (deterministic)."""
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = os.path.dirname(manifest_path)
    b = manifest["bin"]
    bin_spec = BinSpec(inner_x=b["inner_x"], inner_y=b["inner_y"],
                       wall_height=b["wall_height"], thickness=b["thickness"])
    cables = []
    for c in manifest["cables"]:
        mesh = load_obj(os.path.join(base, c["mesh"]))
        s = c["spec"]
        dec = cable_decomposition(mesh, s["tube_sides"])
        spec = CableSpec(segment_count=s["segment_count"],
                         segment_length=s["segment_length"],
                         radius=s["radius"],
                         bend_angle_range=tuple(s["bend_angle_range"]),
                         tube_sides=s["tube_sides"])
        pose = Pose3(np.array(c["pose"]["translation"]),
                     np.array(c["pose"]["rotation"]))
        cables.append(PlacedCable(id=c["id"], spec=spec, mesh=mesh,
                                  decomposition=dec, pose=pose))
    return Scene(bin=bin_spec, cables=cables, rng_seed=manifest["rng_seed"])
