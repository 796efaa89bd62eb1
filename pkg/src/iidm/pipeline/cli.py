"""Command-line entry point: ``iidm <subcommand> [flags]``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..checkpoint import load_checkpoint
from ..raster import FormatError, read_raster, write_raster
from .config import ConfigError, RunConfig, apply_overrides, load_config
from . import run as stages

EPILOG = """\
Module toggles ([modules] section) and what "off" means:
  mask=off           train on every pixel, leave the output unmasked, score all pixels
  vgg/kd_vgg=off     condition the denoiser on the standardised raw bands
  attention_mlp=off  replace attention fusion with channel concat + 1x1 conv
vgg and kd_vgg may not both be on.

Artifacts are written under --out: scenes/, distill/, train/, estimate/,
eval/, baseline/, ablation/. IIDM_THREADS caps parallel ablation rows.
"""


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run configuration")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--out", type=Path, default=Path("out"), help="artifact directory (default: out)")
    common.add_argument("--size", type=int, help="override run.size (scene side in pixels)")
    common.add_argument("--steps", type=int, help="override diffusion.steps")
    common.add_argument("-v", "--verbose", action="store_true")

    p = Parser(prog="iidm", description="Forest carbon density estimation with a conditional diffusion model.",
               epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", parser_class=Parser, metavar="subcommand")
    sub.required = True
    sub.add_parser("gen", parents=[common], help="generate synthetic scenes")
    sub.add_parser("distill", parents=[common], help="train teacher, eigenbases and slim coder")
    sub.add_parser("train", parents=[common], help="train the diffusion denoiser")
    est = sub.add_parser("estimate", parents=[common], help="run the reverse chain on imagery")
    est.add_argument("--checkpoint", type=Path, help="default: OUT/train/iidm.ckp")
    est.add_argument("--imagery", type=Path, help="default: the held-out scene's imagery")
    est.add_argument("--mask", type=Path, help="default: the held-out scene's mask when masking is on")
    est.add_argument("--n-samples", type=int, help="override diffusion.n_samples")
    ev = sub.add_parser("eval", parents=[common], help="score a prediction raster")
    ev.add_argument("--pred", type=Path, required=True)
    ev.add_argument("--truth", type=Path, required=True)
    ev.add_argument("--mask", type=Path)
    ev.add_argument("--run-id", default="run")
    ab = sub.add_parser("ablate", parents=[common], help="run the 12-row module ablation")
    ab.add_argument("--rows", help="comma-separated subset of rows 1..12")
    ab.add_argument("--ablation-steps", type=int, help="override ablation.steps")
    sub.add_parser("baseline", parents=[common], help="fit and score the OLS baseline")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return apply_overrides(cfg, seed=args.seed, size=args.size, steps=args.steps)


def cmd_gen(cfg, args):
    stages.gen_stage(cfg, args.out)
    print(f"wrote {cfg.run.n_scenes} scenes to {args.out / 'scenes'}")


def cmd_distill(cfg, args):
    train, _ = stages.split(stages.load_scenes(args.out))
    res = stages.distill_stage(cfg, train, args.out / "distill")
    for row in res.report:
        print(f"layer {row['layer']}: {row['teacher_channels']} -> {row['student_channels']} "
              f"channels, mCEV {row['mcev']:.3f}")


def cmd_train(cfg, args):
    train, _ = stages.split(stages.load_scenes(args.out))
    coders = None
    if stages.extractor_kind(cfg) != "raw":
        coders = stages.read_distill(args.out / "distill")
    _, losses = stages.train_stage(cfg, train, coders, out=args.out / "train")
    print(f"trained {len(losses)} steps, final loss {losses[-1]:.4f}")


def cmd_estimate(cfg, args):
    ckpt = args.checkpoint or args.out / "train" / "iidm.ckp"
    if not Path(ckpt).exists():
        raise stages.MissingInput(f"{ckpt} not found; run `train` first")
    blobs = load_checkpoint(ckpt)
    masked = bool(blobs.get("meta/mask", [1.0])[0])
    if args.imagery is not None:
        imagery = read_raster(args.imagery)
        mask = read_raster(args.mask) if args.mask else None
    else:
        _, test = stages.split(stages.load_scenes(args.out))
        imagery = test.imagery
        mask = read_raster(args.mask) if args.mask else (test.mask if masked else None)
    n = args.n_samples or cfg.diffusion.n_samples
    pred = stages.estimate(imagery, mask, blobs, stages.estimate_seed(cfg), n)
    (args.out / "estimate").mkdir(parents=True, exist_ok=True)
    write_raster(pred, args.out / "estimate" / "pred.ras")
    print(f"wrote {args.out / 'estimate' / 'pred.ras'}")


def cmd_eval(cfg, args):
    pred, truth = read_raster(args.pred), read_raster(args.truth)
    mask = read_raster(args.mask) if args.mask else None
    rep = stages.evaluate(pred, truth, mask)
    (args.out / "eval").mkdir(parents=True, exist_ok=True)
    path = args.out / "eval" / "metrics.csv"
    stages.write_report_csv([(args.run_id, rep)], path)
    print(path.read_text(), end="")


def cmd_ablate(cfg, args):
    if args.ablation_steps is not None:
        cfg = cfg.with_values("ablation", steps=args.ablation_steps)
    rows = None
    if args.rows:
        try:
            rows = [int(r) for r in args.rows.split(",")]
        except ValueError:
            raise UsageError(f"--rows must be integers, got {args.rows!r}") from None
        if any(not 1 <= r <= 12 for r in rows):
            raise UsageError("--rows entries must lie in 1..12")
    table = stages.run_ablation(cfg, args.out, rows)
    failed = [r[0] for r in table if r[5] != "ok"]
    print(f"wrote {args.out / 'ablation' / 'ablation.csv'} ({len(table)} rows, {len(failed)} failed)")


def cmd_baseline(cfg, args):
    rep, _, _ = stages.baseline_stage(cfg, stages.load_scenes(args.out), args.out / "baseline")
    print(f"OLS rmse {rep.rmse:.4f} ssim {rep.ssim:.4f}")


COMMANDS = {"gen": cmd_gen, "distill": cmd_distill, "train": cmd_train, "estimate": cmd_estimate,
            "eval": cmd_eval, "ablate": cmd_ablate, "baseline": cmd_baseline}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(sys.argv[1:] if argv is None else argv)
        cfg = resolve_config(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"iidm: config error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:   # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"iidm {args.command}: {exc}", file=sys.stderr)
        return 1
    except (stages.MissingInput, FormatError, ValueError, ArithmeticError, KeyError, OSError) as exc:
        print(f"iidm {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
