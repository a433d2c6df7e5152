"""Flat key = value run configuration shared by the command-line tools.

One plain-text file drives every pipeline stage; each key can also be set
on the command line, and a flag always wins over the file. The environment
variable GRASPFORGE_CONFIG names a default file used when no --config flag
is given.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import DegenerateInput
from .model import TrainConfig
from .policy import EvalConfig, PolicyConfig
from .simlab import DatasetConfig

ENV_VAR = "GRASPFORGE_CONFIG"


@dataclass
class RunConfig:
    master_seed: int = 0
    # output roots
    mesh_dir: str = "meshes"
    dataset_dir: str = "datasets"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"
    # scene generation and labeling
    scene_count: int = 80
    cable_count_min: int = 4
    cable_count_max: int = 10
    grasps_per_scene: int = 25
    friction_min: float = 0.1
    friction_max: float = 0.5
    gauss_sigma: float = 0.6
    salt_pepper_frac: float = 0.002
    patch_size: int = 64
    resample_attempts: int = 10
    # mesh decomposition; high-curvature tubes need a deep piece budget
    decompose_tol: float = 0.05
    decompose_cell: float = 2.0
    decompose_pieces: int = 512
    # training
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    val_fraction: float = 0.2
    augment: bool = True
    train_seed: int = 0
    # selection and evaluation
    policy: str = "cgcnn"
    lam: float = 0.2
    trials: int = 100
    eval_cable_min: int = 5
    eval_cable_max: int = 15
    candidates_per_scene: int = 25
    # worker cap for stages that could fan out
    jobs: int = 1

    def __post_init__(self):
        if self.jobs < 1:
            raise DegenerateInput("jobs must be >= 1")

    def dataset_config(self) -> DatasetConfig:
        return DatasetConfig(
            scene_count=self.scene_count,
            cable_count_range=(self.cable_count_min, self.cable_count_max),
            grasps_per_scene=self.grasps_per_scene,
            friction_range=(self.friction_min, self.friction_max),
            gauss_sigma=self.gauss_sigma,
            salt_pepper_frac=self.salt_pepper_frac,
            patch_size=self.patch_size,
            resample_attempts=self.resample_attempts)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            val_fraction=self.val_fraction, augment=self.augment,
            seed=self.train_seed)

    def eval_config(self) -> EvalConfig:
        return EvalConfig(
            trials=self.trials,
            cable_count_range=(self.eval_cable_min, self.eval_cable_max),
            candidates_per_scene=self.candidates_per_scene,
            friction_range=(self.friction_min, self.friction_max),
            gauss_sigma=self.gauss_sigma,
            salt_pepper_frac=self.salt_pepper_frac,
            patch_size=self.patch_size,
            resample_attempts=self.resample_attempts)

    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(kind=self.policy, lam=self.lam)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise DegenerateInput(f"{key}: expected a boolean, got {raw!r}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise DegenerateInput(f"{key}: {exc}") from None
    return raw.strip("\"'")


def parse_config_text(text: str) -> dict:
    """Key = value lines into a typed dict; '#' starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DegenerateInput(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise DegenerateInput(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_run_config(path: str | Path | None = None,
                    overrides: dict | None = None) -> RunConfig:
    """Defaults, then the config file, then explicit overrides.

    With no path, GRASPFORGE_CONFIG names the file; unset means defaults.
    """
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise DegenerateInput(f"config file not found: {p}")
        values.update(parse_config_text(p.read_text()))
    for key, val in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise DegenerateInput(f"unknown config key {key!r}")
        if val is not None:
            values[key] = val
    return RunConfig(**values)


def save_run_config(cfg: RunConfig, path: str | Path) -> None:
    lines = []
    for f in fields(RunConfig):
        val = getattr(cfg, f.name)
        if isinstance(val, bool):
            val = "true" if val else "false"
        lines.append(f"{f.name} = {val}")
    Path(path).write_text("\n".join(lines) + "\n")
