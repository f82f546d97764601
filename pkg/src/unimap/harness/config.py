"""Study configuration: JSON documents with every default materialised."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..attention import AttentionMode
from ..errors import ArgumentError

KINDS = ("train", "recon", "corr", "edit")

# regime name -> (attention mode, which prompt feeds the network)
REGIMES = {
    "null": (AttentionMode.STANDARD, "null"),
    "source": (AttentionMode.STANDARD, "src"),
    "mismatch": (AttentionMode.STANDARD, "mismatch"),
    "uniform-null": (AttentionMode.UNIFORM, "null"),
    "uniform-src": (AttentionMode.UNIFORM, "src"),
    "uniform-mismatch": (AttentionMode.UNIFORM, "mismatch"),
    "zero": (AttentionMode.ZERO, "src"),
    "zero-null": (AttentionMode.ZERO, "null"),
    "zero-mismatch": (AttentionMode.ZERO, "mismatch"),
}
DEFAULT_REGIMES = ["null", "source", "uniform-null", "uniform-src", "zero", "mismatch", "uniform-mismatch"]


@dataclass
class ScheduleParams:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    ddim_steps: int = 20


@dataclass
class TrainParams:
    steps: int = 6000
    batch_size: int = 32
    lr: float = 1e-3
    warmup: int = 200
    grad_clip: float = 1.0
    null_prob: float = 0.1
    ema_decay: float = 0.999
    pool_size: int = 4096
    widths: list = field(default_factory=lambda: [16, 32, 64])
    d_c: int = 32
    d: int = 64
    t_dim: int = 64
    heads: int = 1
    checkpoint_every: int = 0
    lr_schedule: str = "cosine"


@dataclass
class EditParams:
    quantiles: list = field(default_factory=lambda: [0.3, 0.5, 0.7])
    t_masks: list = field(default_factory=lambda: [0, 200, 400])
    kernel: int = 3
    guidance: float = 1.0
    ddim_steps: int = 50
    mask_dump_images: int = 2


@dataclass
class StudyConfig:
    kind: str = "recon"
    seed: int = 0
    out: str = "runs/out"
    checkpoint: str = ""
    images: int = 50
    batch: int = 32
    workers: int = 1
    guidance: float = 1.0
    regimes: list = field(default_factory=lambda: list(DEFAULT_REGIMES))
    modes: list = field(default_factory=lambda: [m.value for m in AttentionMode])
    corr_regime: str = "source"
    schedule: ScheduleParams = field(default_factory=ScheduleParams)
    train: TrainParams = field(default_factory=TrainParams)
    edit: EditParams = field(default_factory=EditParams)

    def validate(self) -> "StudyConfig":
        if self.kind not in KINDS:
            raise ArgumentError(f"unknown study kind {self.kind!r}; expected one of {KINDS}")
        for r in self.regimes + [self.corr_regime]:
            if r not in REGIMES:
                raise ArgumentError(f"unknown prompt regime {r!r}")
        for m in self.modes:
            AttentionMode.parse(m)
        if self.images < 1 or self.batch < 1 or self.workers < 1:
            raise ArgumentError("images, batch and workers must be positive")
        if self.guidance < 0:
            raise ArgumentError("guidance scale must be >= 0")
        if self.train.lr_schedule not in ("constant", "cosine"):
            raise ArgumentError(f"unknown lr schedule {self.train.lr_schedule!r}")
        for q in self.edit.quantiles:
            if not 0.0 <= q <= 1.0:
                raise ArgumentError(f"quantile {q} outside [0, 1]")
        for tm in self.edit.t_masks:
            if not 0 <= tm <= self.schedule.T:
                raise ArgumentError(f"t_mask {tm} outside [0, {self.schedule.T}]")
        return self

    def active_regimes(self) -> list:
        modes = {AttentionMode.parse(m) for m in self.modes}
        return [r for r in self.regimes if REGIMES[r][0] in modes]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_NESTED = {"schedule": ScheduleParams, "train": TrainParams, "edit": EditParams}


def _build(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ArgumentError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for k, v in data.items():
        if cls is StudyConfig and k in _NESTED:
            kwargs[k] = _build(_NESTED[k], v or {})
        else:
            kwargs[k] = v
    return cls(**kwargs)


def from_dict(data: dict) -> StudyConfig:
    return _build(StudyConfig, dict(data)).validate()


def load_config(path) -> StudyConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ArgumentError(f"config {path} is not valid JSON: {e}") from None
    return from_dict(data)
