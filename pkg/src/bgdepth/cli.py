"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import gradsuite
from .fusion import AblationMode
from .grid import GridParams, bilateral_filter, lift_gray, normalize, read_grid, slice, write_grid
from .imageio import (
    DepthFormatError,
    ImageFormatError,
    ImageGray,
    load_gray,
    load_image,
    save_depth,
    save_image,
)
from .metrics import visualize
from .pipeline.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .pipeline.config import ConfigError, TrainConfig, load_config
from .pipeline.data import DatasetError, Sample, load_dataset, synth_dataset, write_dataset
from .pipeline.evaluate import evaluate, run_ablation
from .pipeline.train import Model, NumericalError, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p, out_required=False):
    p.add_argument("--config", type=Path, help="key=value config file")
    p.add_argument("--seed", type=int, help="overrides train.seed")
    p.add_argument("--out", type=Path, required=out_required)


def _build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="bgdepth", description="Bilateral-grid depth estimation toolkit")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("lift", help="lift an image (luma) into a bilateral grid dump")
    p.add_argument("image", type=Path)
    p.add_argument("--sr-s", type=int, default=2)
    p.add_argument("--bins", type=int, default=16)
    _common(p, out_required=True)

    p = sub.add_parser("slice", help="slice a grid dump at a reference image")
    p.add_argument("grid", type=Path)
    p.add_argument("reference", type=Path)
    p.add_argument("--sr-s", type=int, default=2)
    _common(p, out_required=True)

    p = sub.add_parser("filter", help="classic bilateral filter via the grid")
    p.add_argument("image", type=Path)
    p.add_argument("--sr-s", type=int, default=1)
    p.add_argument("--bins", type=int, default=32)
    p.add_argument("--sigma-s", type=float, default=4.0, help="spatial sigma in grid cells")
    p.add_argument("--sigma-r", type=float, default=1.0, help="range sigma in bins")
    _common(p, out_required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--n-objects", type=int, default=3)
    p.add_argument("--min-gap", type=float, default=0.5)
    _common(p, out_required=True)

    for name, helptext in (("train-bg", "train the grid network"), ("train-fusion", "train the refinement network")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", type=Path, help="dataset directory (default: synthetic set from config)")
        p.add_argument("--steps", type=int, help="overrides train.max_steps")
        p.add_argument("--lr", type=float, help="overrides optim.lr")
        p.add_argument("--resume", type=Path, help="checkpoint to continue from")
        if name == "train-fusion":
            p.add_argument("--mode", choices=[m.value for m in AblationMode], default="full")
            p.add_argument("--geometry", type=Path, help="trained grid-network checkpoint")
            p.add_argument("--joint", action="store_true", help="fine-tune the grid network too")
        _common(p, out_required=True)

    p = sub.add_parser("predict", help="predict depth for images")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("images", type=Path, nargs="+")
    _common(p, out_required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("data", type=Path)
    _common(p)

    p = sub.add_parser("gradcheck", help="run the finite-difference suite")
    _common(p)

    p = sub.add_parser("ablation", help="train and evaluate all four refinement input modes")
    p.add_argument("--data", type=Path, help="training dataset directory")
    p.add_argument("--test", type=Path, help="test dataset directory")
    p.add_argument("--bg-steps", type=int, default=200)
    p.add_argument("--fusion-steps", type=int, default=200)
    _common(p)
    return ap


def _config(args, **over) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        over["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        over["max_steps"] = args.steps
    if getattr(args, "lr", None) is not None:
        over["optim"] = dataclasses.replace(cfg.optim, lr=args.lr)
    return cfg.replace(**over)


def _dataset(cfg: TrainConfig, path: Path | None, prefix="scene"):
    path = path or (Path(cfg.data.path) if cfg.data.path else None)
    if path is not None:
        return load_dataset(path)
    d = cfg.data
    return synth_dataset(cfg.seed, d.count, d.width, d.height, d.n_objects, d.min_gap, prefix=prefix)


def _emit(text: str, out: Path | None):
    sys.stdout.write(text)
    if out is not None:
        out.write_text(text, encoding="utf-8")


def cmd_lift(args):
    p = GridParams(args.sr_s, args.bins)
    g = lift_gray(load_gray(args.image), p)
    write_grid(g, args.out)
    print(g.summary())


def cmd_slice(args):
    g = read_grid(args.grid)
    ref = load_gray(args.reference)
    p = GridParams(args.sr_s, g.dims[2])
    try:
        out = slice(normalize(g), ref, p)
    except ValueError as e:
        raise DatasetError(str(e)) from e
    save_image(out, args.out)


def cmd_filter(args):
    p = GridParams(args.sr_s, args.bins)
    save_image(bilateral_filter(load_gray(args.image), p, args.sigma_s, args.sigma_r), args.out)


def cmd_synth(args):
    cfg = _config(args)
    samples = synth_dataset(cfg.seed, args.count, args.width, args.height, args.n_objects, args.min_gap)
    write_dataset(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")


def _train(args, cfg):
    data = _dataset(cfg, args.data)
    resume = load_checkpoint(args.resume, expect=cfg) if args.resume else None
    geometry = load_checkpoint(args.geometry) if getattr(args, "geometry", None) else None
    res = train(cfg, data, resume=resume, geometry=geometry, log=print)
    save_checkpoint(res.checkpoint, args.out)
    print(f"final step {res.checkpoint.step} loss {res.step_loss[-1]:.6e}" if res.step_loss else "no steps run")


def cmd_train_bg(args):
    _train(args, _config(args, kind="bg"))


def cmd_train_fusion(args):
    base = load_config(args.config) if args.config else TrainConfig()
    fu = dataclasses.replace(base.fusion, mode=AblationMode(args.mode), joint=args.joint or base.fusion.joint)
    _train(args, _config(args, kind="fusion", fusion=fu))


def cmd_predict(args):
    ck = load_checkpoint(args.checkpoint)
    model = Model.from_checkpoint(ck)
    args.out.mkdir(parents=True, exist_ok=True)
    for path in args.images:
        stem = path.name.split(".")[0]
        seg_p, edge_p = path.with_name(f"{stem}.seg.ppm"), path.with_name(f"{stem}.edge.pgm")
        s = Sample(load_image(path), None,
                   load_image(seg_p) if seg_p.exists() else None,
                   load_gray(edge_p) if edge_p.exists() else None, id=stem)
        (pred,) = model.predict([s])
        save_depth(pred, args.out / f"{stem}.depth.pgm")
        save_image(visualize(pred), args.out / f"{stem}.vis.pgm")
        print(f"{stem}: depth {pred.data.min():.3f}-{pred.data.max():.3f} m")


def cmd_eval(args):
    ck = load_checkpoint(args.checkpoint)
    res = evaluate(ck, load_dataset(args.data))
    _emit(res.to_tsv(), args.out)


def cmd_gradcheck(args):
    results = gradsuite.run(args.seed or 0)
    worst = 0.0
    for name, err in results:
        ok = err <= gradsuite.TOLERANCE
        print(f"{name:24s} max_rel_err={err:.3e} {'ok' if ok else 'FAIL'}")
        worst = max(worst, err)
    if worst > gradsuite.TOLERANCE:
        raise NumericalError(-1, worst)


def cmd_ablation(args):
    cfg = _config(args)
    train_set = _dataset(cfg, args.data, prefix="train")
    if args.test is not None:
        test_set = load_dataset(args.test)
    else:
        d = cfg.data
        test_set = synth_dataset(cfg.seed, max(d.count // 4, 1), d.width, d.height, d.n_objects, d.min_gap,
                                 prefix="test")
    rep = run_ablation(cfg, train_set, test_set, args.bg_steps, args.fusion_steps, log=print)
    _emit(rep.to_tsv(), args.out)


COMMANDS = {
    "lift": cmd_lift, "slice": cmd_slice, "filter": cmd_filter, "synth": cmd_synth,
    "train-bg": cmd_train_bg, "train-fusion": cmd_train_fusion, "predict": cmd_predict,
    "eval": cmd_eval, "gradcheck": cmd_gradcheck, "ablation": cmd_ablation,
}


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    try:
        COMMANDS[args.cmd](args)
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, ImageFormatError, DepthFormatError, CheckpointError, ConfigError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
