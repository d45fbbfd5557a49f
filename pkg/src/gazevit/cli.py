"""``gaze-vit`` command line: fixations, heatmap, mask, synth, train, eval, explain, ablate.

Exit codes: 0 success, 1 usage error, 2 runtime error.  ``--config FILE``
(TOML or JSON) supplies defaults; explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import GazeVitError

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger("gazevit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on|off")
    return value == "on"


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--image-size", type=int, default=224)
    g.add_argument("--patch-size", type=int, default=16)
    g.add_argument("--channels", type=int, default=1)
    g.add_argument("--hidden-dim", type=int, default=384)
    g.add_argument("--depth", type=int, default=12)
    g.add_argument("--heads", type=int, default=6)
    g.add_argument("--mlp-ratio", type=int, default=4)
    g.add_argument("--mask-mode", choices=["drop", "zero"], default="drop")
    g.add_argument("--reinject", type=_on_off, default=True, metavar="on|off")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=70)
    g.add_argument("--lr", type=float, default=1e-4)
    g.add_argument("--min-lr", type=float, default=0.0)
    g.add_argument("--warmup", type=int, default=8)
    g.add_argument("--batch-size", type=int, default=64)
    g.add_argument("--k", type=int, default=49)
    g.add_argument("--window", type=int, default=7)
    g.add_argument("--no-augment", action="store_true")
    g.add_argument("--max-shift", type=int, default=8)
    g.add_argument("--no-test-mask", action="store_true", help="evaluate without gaze masks")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gaze-vit", description="Eye-gaze-guided vision transformer toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("fixations", help="gaze CSV -> fixation CSV")
    p.add_argument("--gaze", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dispersion", type=float, default=35.0)
    p.add_argument("--min-duration", type=float, default=100.0)

    p = sub.add_parser("heatmap", help="fixations (or raw gaze) -> EGHM heatmap")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--fixations")
    src.add_argument("--gaze")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--sigma", type=float, default=25.0)
    p.add_argument("--unweighted", action="store_true", help="ignore fixation durations")
    p.add_argument("--dispersion", type=float, default=35.0)
    p.add_argument("--min-duration", type=float, default=100.0)
    p.add_argument("--out", required=True)
    p.add_argument("--pgm", help="also write a 16-bit PGM preview")

    p = sub.add_parser("mask", help="EGHM heatmap -> mask text file")
    p.add_argument("--heatmap", required=True)
    p.add_argument("--variant", choices=["separated", "gathered"], default="separated")
    p.add_argument("--k", type=int, default=49)
    p.add_argument("--window", type=int, default=7)
    p.add_argument("--grid", type=int, default=14)
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="generate the synthetic shortcut dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--image-size", type=int, default=224)
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--num-classes", type=int, default=2)
    p.add_argument("--rho-train", type=float, default=0.95)
    p.add_argument("--rho-test", type=float, default=0.5)

    p = sub.add_parser("train", help="train ViT / EG-ViT on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask-variant", choices=["separated", "gathered", "none"], default="separated")
    _add_model_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--out", required=True, help="metrics CSV")
    p.add_argument("--no-test-mask", action="store_true")

    p = sub.add_parser("explain", help="Grad-CAM maps for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--heatmap", help="EGHM heatmap used to build the gaze mask")
    p.add_argument("--target-class", type=int, default=None)
    p.add_argument("--layer", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("ablate", help="mask-variant x re-injection grid -> ablation.csv")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--variants", nargs="+", default=["separated", "gathered", "none"])
    _add_model_flags(p)
    _add_train_flags(p)

    for name, sp in sub.choices.items():
        sp.add_argument("--config", help="TOML or JSON file of flag defaults")
    return parser


def _load_config_file(path: str) -> dict:
    text = Path(path).read_bytes()
    data = tomllib.loads(text.decode("utf-8")) if path.endswith(".toml") else json.loads(text)
    return {k.replace("-", "_"): v for k, v in data.items()}


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage().strip())
    if getattr(args, "config", None):
        sp = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sp._actions}
        overrides = _load_config_file(args.config)
        unknown = set(overrides) - known
        if unknown:
            raise UsageError(f"unknown keys in {args.config}: {sorted(unknown)}")
        sp.set_defaults(**overrides)
        args = parser.parse_args(argv)
    return args


def _write_args(directory: Path, args: argparse.Namespace) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "args.json").write_text(json.dumps(vars(args), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(path: str) -> Path:
    """Directory that receives args.json for a file output."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p.parent


def _model_config(args, num_classes: int):
    from .vit import ModelConfig

    return ModelConfig(
        image_size=args.image_size,
        patch_size=args.patch_size,
        channels=args.channels,
        hidden_dim=args.hidden_dim,
        depth=args.depth,
        heads=args.heads,
        mlp_ratio=args.mlp_ratio,
        num_classes=num_classes,
        mask_mode=args.mask_mode,
        reinject_enabled=args.reinject,
    )


def _train_config(args, seed: int, variant: str):
    from .training import TrainConfig

    return TrainConfig(
        epochs=args.epochs,
        base_lr=args.lr,
        min_lr=args.min_lr,
        warmup_epochs=args.warmup,
        batch_size=args.batch_size,
        seed=seed,
        mask_variant=variant,
        mask_k=args.k,
        window=args.window,
        augment=not args.no_augment,
        max_shift_px=args.max_shift,
        test_time_mask=not args.no_test_mask,
    )


def cmd_fixations(args) -> None:
    from .gaze import FixationConfig, detect_fixations
    from .io import read_gaze_csv, write_fixations_csv

    fixations = detect_fixations(read_gaze_csv(args.gaze), FixationConfig(args.dispersion, args.min_duration))
    write_fixations_csv(args.out, fixations)
    _write_args(_out_dir(args.out), args)


def cmd_heatmap(args) -> None:
    from .gaze import FixationConfig, detect_fixations, render_heatmap
    from .io import read_fixations_csv, read_gaze_csv, write_eghm, write_pgm16

    if args.fixations:
        fixations = read_fixations_csv(args.fixations)
    else:
        cfg = FixationConfig(args.dispersion, args.min_duration)
        fixations = detect_fixations(read_gaze_csv(args.gaze), cfg, bounds=(args.width, args.height))
    hm = render_heatmap(fixations, args.width, args.height, args.sigma, duration_weighted=not args.unweighted)
    write_eghm(args.out, hm.values)
    if args.pgm:
        write_pgm16(args.pgm, hm.values)
    _write_args(_out_dir(args.out), args)


def cmd_mask(args) -> None:
    from .gaze import downsample_heatmap, make_mask
    from .io import read_eghm, write_mask_txt

    grid = downsample_heatmap(read_eghm(args.heatmap), args.grid, args.grid)
    write_mask_txt(args.out, make_mask(grid, args.variant, args.k, args.window))
    _write_args(_out_dir(args.out), args)


def cmd_synth(args) -> None:
    from .synth import ShortcutSpec, SynthSpec, generate_dataset

    spec = SynthSpec.for_size(
        args.image_size, args.patch_size, num_classes=args.num_classes, n_train=args.n_train, n_test=args.n_test
    )
    spec = replace(spec, shortcut=replace(spec.shortcut, rho_train=args.rho_train, rho_test=args.rho_test))
    generate_dataset(spec, args.seed, args.out, workers=_threads())
    _write_args(Path(args.out), args)


def cmd_train(args) -> None:
    from .training import DatasetManifest, train

    manifest = DatasetManifest.load(args.manifest)
    config = _model_config(args, len(manifest.classes))
    cfg = _train_config(args, args.seed, args.mask_variant)
    out = Path(args.out)
    _write_args(out, args)
    train(manifest, config, cfg, out)


def cmd_eval(args) -> None:
    from .checkpoint import load_checkpoint
    from .metrics import fmt
    from .training import DatasetManifest, TrainConfig, evaluate

    model, meta = load_checkpoint(args.checkpoint)
    cfg = TrainConfig.from_dict(meta.get("train_config", {}))
    cfg = replace(cfg, test_time_mask=cfg.test_time_mask and not args.no_test_mask)
    m = evaluate(model, DatasetManifest.load(args.manifest), args.split, cfg)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "acc", "f1", "auc"])
        w.writerow([args.split, fmt(m.acc), fmt(m.f1), fmt(m.auc)])
    _write_args(_out_dir(args.out), args)


def cmd_explain(args) -> None:
    from .checkpoint import load_checkpoint
    from .explain import grad_cam, overlay
    from .gaze import downsample_heatmap, make_mask
    from .io import load_image, read_eghm, save_image_u8, write_eghm
    from .training import TrainConfig

    model, meta = load_checkpoint(args.checkpoint)
    cfg = model.config
    img = load_image(args.image)
    if img.shape[2] != cfg.channels:
        img = np.repeat(img, 3, axis=2) if cfg.channels == 3 else img.mean(axis=2, keepdims=True)
    mask = None
    if args.heatmap:
        tc = TrainConfig.from_dict(meta.get("train_config", {}))
        grid = downsample_heatmap(read_eghm(args.heatmap), cfg.grid, cfg.grid)
        mask = make_mask(grid, tc.mask_variant if tc.mask_variant != "none" else "separated", tc.mask_k, tc.window)
    cam = grad_cam(model, img, mask, args.target_class, args.layer, upsample=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_eghm(out / "cam.eghm", cam.values)
    save_image_u8(out / "overlay.png", overlay(img, cam.upsampled))
    (out / "cam.json").write_text(
        json.dumps({"target_class": cam.target_class, "degenerate": cam.degenerate}, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    _write_args(out, args)


ABLATION_HEADER = ["variant", "reinject", "mask_mode", "acc", "f1", "auc", "seed"]


def run_ablation(args) -> list[list]:
    from .metrics import fmt
    from .training import DatasetManifest, load_split, train

    manifest = DatasetManifest.load(args.manifest)
    base = _model_config(args, len(manifest.classes))
    need_hm = any(v != "none" for v in args.variants)
    train_data = load_split(manifest, "train", base, need_hm)
    test_data = load_split(manifest, "test", base, need_hm)
    rows = []
    for variant in args.variants:
        for reinject in (True, False):
            config = replace(base, reinject_enabled=reinject)
            for seed in args.seeds:
                cfg = _train_config(args, seed, variant)
                res = train(manifest, config, cfg, None, train_data, test_data)
                last = [h for h in res.history if h["split"] == "test"][-1]
                log.info("ablate %s reinject=%s seed=%d acc=%.4f", variant, reinject, seed, last["acc"])
                rows.append([variant, "on" if reinject else "off", config.mask_mode, fmt(last["acc"]), fmt(last["f1"]), fmt(last["auc"]), seed])
    return rows


def cmd_ablate(args) -> None:
    out = Path(args.out)
    _write_args(out, args)
    rows = run_ablation(args)
    with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATION_HEADER)
        w.writerows(rows)


COMMANDS = {
    "fixations": cmd_fixations,
    "heatmap": cmd_heatmap,
    "mask": cmd_mask,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "explain": cmd_explain,
    "ablate": cmd_ablate,
}


def _threads() -> int:
    value = os.environ.get("GAZEVIT_THREADS")
    return max(1, int(value)) if value else (os.cpu_count() or 1)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr, format="%(message)s")
    import torch

    torch.set_num_threads(_threads())
    try:
        COMMANDS[args.command](args)
    except (GazeVitError, OSError, ValueError) as exc:
        print(f"gaze-vit {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
