"""Command-line entry point: ``unimap {train,recon-study,corr-study,edit}``."""

from __future__ import annotations

import argparse
import logging
import sys

from ..errors import UnimapError
from .config import StudyConfig, from_dict, load_config
from . import studies

KIND_OF = {"train": "train", "recon-study": "recon", "corr-study": "corr", "edit": "edit"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="unimap", description="DDIM inversion / reconstruction and mask-guided editing studies.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON study config; flags below override it")
        sp.add_argument("--seed", type=int, help="u64 seed")
        sp.add_argument("--out", help="run directory (must be new or empty)")
        sp.add_argument("--steps", type=int, help="training steps (train) or DDIM steps (studies)")
        sp.add_argument("--workers", type=int, help="worker processes over image chunks")
        return sp

    common(sub.add_parser("train", help="train the toy denoiser"))
    for name, helptext in (("recon-study", "inversion/reconstruction fidelity"), ("corr-study", "attention vs clean-prediction discrepancy")):
        sp = common(sub.add_parser(name, help=helptext))
        sp.add_argument("--checkpoint", help="checkpoint directory")
        sp.add_argument("--images", type=int, help="number of held-out images")
        sp.add_argument("--mode", choices=["standard", "uniform", "zero"], action="append", help="restrict to attention mode (repeatable)")
    sp = common(sub.add_parser("edit", help="adaptive-mask recolor edits over a (q, t_mask) grid"))
    sp.add_argument("--checkpoint", help="checkpoint directory")
    sp.add_argument("--images", type=int, help="number of held-out images")
    sp.add_argument("--quantile", type=float, action="append", help="mask quantile (repeatable)")
    sp.add_argument("--t-mask", type=int, action="append", dest="t_mask", help="blend threshold timestep (repeatable)")
    return p


def resolve_config(args) -> StudyConfig:
    cfg = load_config(args.config) if args.config else StudyConfig()
    data = cfg.to_dict()
    data["kind"] = KIND_OF[args.command]
    for key in ("seed", "out", "workers", "checkpoint", "images"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    if args.steps is not None:
        if args.command == "train":
            data["train"]["steps"] = args.steps
        elif args.command == "edit":
            data["edit"]["ddim_steps"] = args.steps
        else:
            data["schedule"]["ddim_steps"] = args.steps
    if getattr(args, "mode", None):
        data["modes"] = list(args.mode)
        if args.command == "corr-study":
            data["corr_regime"] = {"standard": "source", "uniform": "uniform-src", "zero": "zero"}[args.mode[0]]
    if getattr(args, "quantile", None):
        data["edit"]["quantiles"] = args.quantile
    if getattr(args, "t_mask", None):
        data["edit"]["t_masks"] = args.t_mask
    return from_dict(data)


def run(args) -> int:
    cfg = resolve_config(args)
    if args.command == "train":
        ckpt = studies.cmd_train(cfg)
        print(f"checkpoint written to {ckpt}")
    elif args.command == "recon-study":
        report = studies.cmd_recon_study(cfg)
        print(report.summary_table())
    elif args.command == "corr-study":
        pairs, r = studies.cmd_corr_study(cfg)
        print(f"r = {r:.4f} (n = {len(pairs)})")
    elif args.command == "edit":
        rows = studies.cmd_edit(cfg)
        for row in rows:
            print(f"q={row['quantile']:g} t_mask={row['t_mask']} bg_mse={row['bg_mse']:.5f} success={row['target_success']:.2f}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except UnimapError as e:
        print(f"{e.category}: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
