"""Checkpoint directories: one UTNS file per weight plus ``manifest.txt``.

Manifest lines are space-separated records::

    format unimap-checkpoint 1
    config widths 32,64,128
    schedule T 1000
    vocab 0 red
    tensor enc0.conv1.w enc0.conv1.w.utns
"""

from __future__ import annotations

from pathlib import Path

from ..errors import FormatError
from ..numerics import utns
from .model import DenoiserModel, ModelConfig
from .prompts import VOCAB

MANIFEST = "manifest.txt"


def save_checkpoint(model: DenoiserModel, out_dir, schedule=None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["format unimap-checkpoint 1"]
    for key, val in model.cfg.to_dict().items():
        if isinstance(val, (tuple, list)):
            val = ",".join(str(v) for v in val)
        lines.append(f"config {key} {val}")
    if schedule is not None:
        lines.append(f"schedule T {schedule.T}")
        lines.append(f"schedule beta_start {schedule.beta_start!r}")
        lines.append(f"schedule beta_end {schedule.beta_end!r}")
    for i, word in enumerate(VOCAB):
        lines.append(f"vocab {i} {word}")
    for name in sorted(model.params):
        fname = f"{name}.utns"
        utns.save(out / fname, model.params[name])
        lines.append(f"tensor {name} {fname}")
    (out / MANIFEST).write_text("\n".join(lines) + "\n")
    return out


def read_manifest(ckpt_dir) -> dict:
    path = Path(ckpt_dir) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no checkpoint manifest at {path}")
    info = {"config": {}, "schedule": {}, "vocab": {}, "tensors": {}}
    for line in path.read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        kind = parts[0]
        if kind == "format":
            if parts[1:3] != ["unimap-checkpoint", "1"]:
                raise FormatError(f"unsupported checkpoint format: {line}")
        elif kind == "config":
            info["config"][parts[1]] = parts[2]
        elif kind == "schedule":
            info["schedule"][parts[1]] = float(parts[2])
        elif kind == "vocab":
            info["vocab"][int(parts[1])] = parts[2]
        elif kind == "tensor":
            info["tensors"][parts[1]] = parts[2]
        else:
            raise FormatError(f"unknown manifest record: {line}")
    return info


def load_checkpoint(ckpt_dir) -> DenoiserModel:
    info = read_manifest(ckpt_dir)
    if tuple(info["vocab"][i] for i in range(len(info["vocab"]))) != VOCAB:
        raise FormatError("checkpoint vocabulary does not match this build")
    raw = info["config"]
    cfg = ModelConfig(
        **{
            k: tuple(int(x) for x in v.split(",")) if k == "widths" else int(v)
            for k, v in raw.items()
        }
    )
    params = {name: utns.load(Path(ckpt_dir) / fname) for name, fname in info["tensors"].items()}
    return DenoiserModel(cfg, params)
