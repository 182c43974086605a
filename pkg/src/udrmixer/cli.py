"""``udrmixer`` command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Settings resolve
as command-line flag over ``--config`` file over built-in default, and
every command writes the resolved configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import RunConfig
from .imageio import DatasetError, ensure_writable, list_images, read_png, write_png
from .model import ConfigError, complexity_report
from .rainsynth import load_backgrounds, procedural_background, synthesize_dataset
from .tensor import ShapeError
from .train import CheckpointError, derain, load_checkpoint, params_from_checkpoint, train
from .train.evaluate import evaluate_dirs

RUNTIME_ERRORS = (DatasetError, ConfigError, CheckpointError, ShapeError, ValueError, OSError)


def _resolve(args, flag_map: dict[str, str]) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value if isinstance(value, str) else str(value)
    return cfg.with_overrides(overrides)


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None
    return h, w


# -- commands ----------------------------------------------------------------

SYNTH_FLAGS = {"seed": "rain.seed", "density": "rain.density", "length_range": "rain.length_range",
               "angle_range": "rain.angle_range", "thickness": "rain.thickness",
               "alpha_range": "rain.alpha_range", "base_width": "rain.base_width",
               "passes": "rain.passes", "brightness": "rain.streak_brightness"}


def cmd_synth(args) -> int:
    cfg = _resolve(args, SYNTH_FLAGS)
    if args.backgrounds:
        bgs = load_backgrounds(args.backgrounds)
    else:
        h, w = args.procedural
        bgs = [procedural_background(h, w, seed=cfg.rain.seed * 100003 + i) for i in range(args.count)]
    ids = synthesize_dataset(bgs, args.out, args.count, cfg.rain)
    cfg.save(Path(args.out) / "config.txt")
    print(f"wrote {len(ids)} pairs to {args.out}")
    return 0


TRAIN_FLAGS = {"epochs": "train.epochs", "batch": "train.batch_size", "patch": "train.patch_size",
               "lr": "train.lr", "seed": "train.seed", "steps": "train.max_steps"}


def cmd_train(args) -> int:
    cfg = _resolve(args, TRAIN_FLAGS)
    ensure_writable(args.out)
    cfg.save(Path(args.out) / "config.txt")

    def progress(rec):
        if args.verbose:
            print(f"step {rec.step} epoch {rec.epoch} loss {rec.loss:.5f}", flush=True)

    trainer = train(cfg.model, cfg.train, args.data, args.out, resume=args.resume, progress=progress)
    print(f"trained {trainer.step} steps; checkpoint {Path(args.out) / 'final.udrm'}")
    return 0


def _infer_one(params, model_cfg, src: Path, dst: Path, tile, overlap) -> None:
    write_png(dst, derain(params, model_cfg, read_png(src), tile, overlap))


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model_cfg = ckpt.config()
    params = params_from_checkpoint(ckpt, model_cfg)
    src, dst = Path(args.input), Path(args.output)
    if src.is_dir():
        inputs = list_images(src)
        if not inputs:
            raise DatasetError(f"no PNG images in {src}")
        ensure_writable(dst)
        for p in inputs:
            _infer_one(params, model_cfg, p, dst / p.name, args.tile, args.overlap)
        record_dir = dst
    else:
        _infer_one(params, model_cfg, src, dst, args.tile, args.overlap)
        record_dir = dst.parent
    resolved = {"checkpoint": str(args.checkpoint), "input": str(src), "output": str(dst),
                "tile": args.tile, "overlap": args.overlap, "model": model_cfg.to_dict()}
    (record_dir / "infer_config.json").write_text(json.dumps(resolved, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_eval(args) -> int:
    report = evaluate_dirs(args.pred, args.gt, channel=args.channel)
    report.write_csv(args.report)
    m = report.mean()
    print(f"{len(report.records)} images: PSNR {m.psnr:.4f} dB, SSIM {m.ssim:.6f}, MSE {m.mse:.4f}")
    return 0


def cmd_complexity(args) -> int:
    cfg = _resolve(args, {})
    rep = complexity_report(cfg.model, args.height, args.width)
    print(rep.format(reference=True))
    return 0


def cmd_config(args) -> int:
    sys.stdout.write(_resolve(args, {}).serialize())
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="udrmixer", description="UHD image deraining toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="key=value run configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
        return sp

    s = with_config(sub.add_parser("synth", help="synthesize a paired rain dataset"))
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--backgrounds", help="directory of clean background images")
    src.add_argument("--procedural", type=_size, metavar="WxH",
                     help="generate procedural backgrounds of this size instead")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--density", type=float)
    s.add_argument("--length-range", dest="length_range", metavar="LO,HI")
    s.add_argument("--angle-range", dest="angle_range", metavar="LO,HI")
    s.add_argument("--thickness", type=float)
    s.add_argument("--alpha-range", dest="alpha_range", metavar="LO,HI")
    s.add_argument("--base-width", dest="base_width", type=int)
    s.add_argument("--passes", type=int)
    s.add_argument("--brightness", type=float)
    s.set_defaults(func=cmd_synth)

    t = with_config(sub.add_parser("train", help="train a model"))
    t.add_argument("--data", required=True, help="dataset root with rain/ and gt/")
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--patch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int, help="stop after this many steps")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="derain an image or a directory of PNGs")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--output", required=True)
    i.add_argument("--tile", type=int)
    i.add_argument("--overlap", type=int, default=0)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--report", required=True, help="output CSV path")
    e.add_argument("--channel", choices=["rgb", "y"], default="rgb")
    e.set_defaults(func=cmd_eval)

    c = with_config(sub.add_parser("complexity", help="parameter and FLOP accounting"))
    c.add_argument("--height", type=int, default=1024)
    c.add_argument("--width", type=int, default=1024)
    c.set_defaults(func=cmd_complexity)

    d = with_config(sub.add_parser("config", help="print the resolved configuration"))
    d.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RUNTIME_ERRORS as exc:
        print(f"udrmixer {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
