"""Run configuration: one JSON file drives every command.

A RunConfig bundles dataset parameters, network widths, loss weights,
optimizer settings, the training schedule, and ablation switches. The
same file round-trips through JSON and is echoed into every output
directory so a run can always be reproduced from its artifacts alone.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .datagen.scan import DEPTH_SIGMA
from .datagen.templates import TEMPLATE_NAMES
from .errors import ConfigError
from .losses import LossWeights
from .nets import THETA_STOP, NetConfig

ABLATION_SWITCHES = (
    "no_rnn",
    "no_geom",
    "no_disp",
    "no_mot",
    "no_seg",
    "no_mob_net",
    "no_p0",
    "basenet",
)


@dataclass
class RunConfig:
    """Everything a gen/train/predict/eval run needs, in one place."""

    seed: int = 0

    # dataset
    categories: tuple = TEMPLATE_NAMES
    shapes_per_category: int = 25
    n_points: int = 256
    n_frames: int = 8
    scan_sigma: float = DEPTH_SIGMA
    scan_fraction: float = 1.0

    # model
    net: NetConfig = field(default_factory=NetConfig)
    theta_stop: float = THETA_STOP

    # objective
    weights: LossWeights = field(default_factory=LossWeights)

    # optimizer
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_grad_norm: float = 25.0

    # schedule
    epochs: int = 4
    mobility_epochs: int = 30
    log_every: int = 100
    checkpoint_every: int = 0      # steps between mid-run checkpoints, 0 = final only

    # ablation switches (mutually composable, basenet exclusive)
    no_rnn: bool = False
    no_geom: bool = False
    no_disp: bool = False
    no_mot: bool = False
    no_seg: bool = False
    no_mob_net: bool = False
    no_p0: bool = False
    basenet: bool = False

    # paths
    dataset_dir: str = "dataset"
    out_dir: str = "run"

    def __post_init__(self) -> None:
        self.categories = tuple(self.categories)
        unknown = [c for c in self.categories if c not in TEMPLATE_NAMES]
        if unknown:
            raise ConfigError(f"unknown categories {unknown}; choose from {list(TEMPLATE_NAMES)}")
        if not self.categories:
            raise ConfigError("need at least one category")
        if self.shapes_per_category < 1:
            raise ConfigError("shapes_per_category must be positive")
        if self.n_frames < 2:
            raise ConfigError("n_frames must be at least 2")
        if not 0.0 <= self.scan_fraction <= 1.0:
            raise ConfigError(f"scan fraction must lie in [0, 1], got {self.scan_fraction}")
        if self.epochs < 1 or self.mobility_epochs < 0:
            raise ConfigError("epoch counts must be positive")
        if self.lr <= 0.0:
            raise ConfigError("learning rate must be positive")
        if self.basenet and any(getattr(self, s) for s in ABLATION_SWITCHES if s != "basenet"):
            raise ConfigError("basenet is exclusive; it cannot combine with other switches")

    @property
    def ablation_tags(self) -> list[str]:
        return [s for s in ABLATION_SWITCHES if getattr(self, s)]

    def replaced(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["categories"] = list(self.categories)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        if "net" in data and not isinstance(data["net"], NetConfig):
            data["net"] = _net_from_dict(data["net"])
        if "weights" in data and not isinstance(data["weights"], LossWeights):
            data["weights"] = LossWeights(**data["weights"])
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    def echo_into(self, out_dir: str | Path) -> Path:
        """Copy this config into an output directory for reproducibility."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        target = out / "config.json"
        self.save(target)
        return target


def _net_from_dict(data: dict) -> NetConfig:
    data = dict(data)
    if "sa_stages" in data:
        data["sa_stages"] = tuple(
            (int(count), float(radius), tuple(int(w) for w in widths))
            for count, radius, widths in data["sa_stages"]
        )
    if "group_sizes" in data:
        data["group_sizes"] = tuple(int(k) for k in data["group_sizes"])
    return NetConfig(**data)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return RunConfig.from_dict(data)
