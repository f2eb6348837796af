"""Command line entry point: ``heteraug {corrupt,augment,eval,toy}``.

Exit codes: 0 success, 1 operational error, 2 integrity error (the
benchmark and the predictions disagree on the corruption schedule).
"""
import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .chainaug import ChainConfig
from .core import ImageIOError, derive_rng, load_image, resolve_threads, save_image
from .corruptions import SEVERITIES, constants_digest, parse_corruptions
from .metrics import ABSENT_F1, IntegrityError, evaluate_benchmark
from .pipeline import MODES, DatasetError, HeterConfig, Manifest, build_benchmark, heter_stages
from .randnet import RandNetConfig, sample_network

EXIT_OK, EXIT_ERROR, EXIT_INTEGRITY = 0, 1, 2

# ordering of the comparison rows, following the usual ablation layout
TOY_ROWS = (("clean", "Clean"), ("imageaug-only", "+ImageAug"),
            ("modelaug-only", "+ModelAug"), ("heteraug", "+HeterAug"))
TOY_FULL = {"n_train": 500, "n_val": 100, "epochs": 20}
TOY_QUICK = {"n_train": 128, "n_val": 16, "epochs": 4}
PANEL_GAP = 2


class CliError(Exception):
    pass


def _write_config(out_dir, command, resolved):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "version": __version__,
           "corruption_digest": constants_digest(), **resolved}
    path = out_dir / "config.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def _parse_severities(text):
    if text is None:
        return list(SEVERITIES)
    try:
        out = sorted({int(t) for t in text.split(",") if t.strip()})
    except ValueError:
        raise CliError(f"bad severity list {text!r}; expected e.g. 1,3,5") from None
    if not out or any(s not in SEVERITIES for s in out):
        raise CliError("severities must be integers in 1..5")
    return out


def _parse_subset(text):
    if text is None:
        return None
    path = Path(text)
    if path.is_file():
        ids = path.read_text(encoding="utf-8").split()
    else:
        ids = [t.strip() for t in text.split(",") if t.strip()]
    return ids


# ---------------------------------------------------------------------------
# corrupt


def cmd_corrupt(args):
    corruptions = parse_corruptions(args.corruptions)
    severities = _parse_severities(args.severities)
    threads = resolve_threads(args.threads)
    manifest = build_benchmark(args.data, args.out, args.seed, subset=_parse_subset(args.subset),
                               corruptions=corruptions, severities=severities,
                               threads=threads, overwrite=args.overwrite)
    _write_config(args.out, "corrupt", {
        "data": str(Path(args.data).resolve()),
        "seed": args.seed,
        "subset": _parse_subset(args.subset),
        "corruptions": [c.value for c in corruptions],
        "severities": severities,
        "threads": threads,
    })
    n = len(manifest.records) * len(corruptions) * len(severities)
    print(f"wrote {n} corrupted images for {len(manifest.records)} images to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# augment


def _image_files(root):
    root = Path(root)
    if not root.is_dir():
        raise CliError(f"{root}: not a directory")
    base = root / "images" if (root / "images").is_dir() else root
    files = sorted(p for p in base.iterdir() if p.suffix.lower() in (".png", ".ppm"))
    if not files:
        raise CliError(f"{root}: no PNG or PPM images found")
    return files


def make_panel(stages, gap=PANEL_GAP):
    """Place equally sized images side by side with white gaps."""
    h = stages[0].shape[0]
    sep = np.ones((h, gap, 3))
    parts = []
    for i, img in enumerate(stages):
        if i:
            parts.append(sep)
        parts.append(img)
    return np.concatenate(parts, axis=1)


def split_panel(panel, count=4, gap=PANEL_GAP):
    """Inverse of :func:`make_panel`."""
    w = (panel.shape[1] - gap * (count - 1)) // count
    return [panel[:, i * (w + gap):i * (w + gap) + w] for i in range(count)]


def _heter_config(args):
    chain = ChainConfig(ratio=args.chain_ratio, gate_mode=args.gate_mode)
    modelaug = RandNetConfig(channels=args.channels, ratio=args.model_ratio)
    return HeterConfig.for_mode(args.mode, chain=chain, modelaug=modelaug,
                                composition=args.composition)


def cmd_augment(args):
    files = _image_files(args.input)
    cfg = _heter_config(args)
    n = len(files) if args.n is None else args.n
    if n < 1:
        raise CliError("--n must be positive")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        src = files[i % len(files)]
        img = load_image(src)
        net = sample_network(derive_rng(args.seed, ["augment-net", i]), cfg=cfg.modelaug)
        aug, mixed, heter = heter_stages(img, derive_rng(args.seed, ["augment", i]), cfg, net)
        save_image(make_panel([img, aug, mixed, heter]), out / f"panel_{i:04d}_{src.stem}.png")
    _write_config(out, "augment", {
        "input": str(Path(args.input).resolve()),
        "seed": args.seed,
        "n": n,
        "mode": args.mode,
        "heter": cfg.to_dict(),
        "panel_layout": ["input", "I_aug", "I_mix", "I_heter"],
    })
    print(f"wrote {n} panels to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise CliError(f"{path}: manifest not found")
    return Manifest.load(path)


def _render(report, fmt):
    if fmt == "json":
        return report.to_json()
    if fmt == "csv":
        return report.to_csv()
    return report.to_table()


def cmd_eval(args):
    manifest = _load_manifest(args.manifest)
    report = evaluate_benchmark(args.pred, manifest, clean_pred_dir=args.clean_pred,
                                ignore_id=args.ignore_id,
                                include_background_f1=args.include_background_f1,
                                absent_f1=args.absent_f1)
    text = _render(report, args.format)
    sys.stdout.write(text)
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        suffix = {"json": "json", "csv": "csv", "table": "txt"}[args.format]
        (out / f"report.{suffix}").write_text(text, encoding="utf-8")
        _write_config(out, "eval", {
            "pred": str(Path(args.pred).resolve()),
            "manifest": str(Path(args.manifest).resolve()),
            "clean_pred": None if args.clean_pred is None else str(Path(args.clean_pred).resolve()),
            "format": args.format,
            "ignore_id": args.ignore_id,
            "include_background_f1": args.include_background_f1,
            "absent_f1": args.absent_f1,
        })
    return EXIT_OK


# ---------------------------------------------------------------------------
# toy


def cmd_toy(args):
    from .toyseg import (
        BenchmarkCache,
        TrainConfig,
        make_dataset,
        robustness_eval,
        save_checkpoint,
        train,
        write_dataset,
    )

    sizes = dict(TOY_QUICK if args.quick else TOY_FULL)
    for key in sizes:
        if getattr(args, key) is not None:
            sizes[key] = getattr(args, key)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.overwrite:
        raise CliError(f"{out} exists and is not empty (pass --overwrite)")
    modes = [m for m, _ in TOY_ROWS] if args.ablate else ["clean", "heteraug"]
    threads = resolve_threads(args.threads)
    tcfg = TrainConfig(epochs=sizes["epochs"])
    _write_config(out, "toy", {
        "seed": args.seed, "quick": args.quick, "ablate": args.ablate, **sizes,
        "modes": modes, "train": asdict(tcfg), "threads": threads,
    })

    train_set = make_dataset(sizes["n_train"], args.seed, prefix="train")
    val_set = make_dataset(sizes["n_val"], args.seed, prefix="val")
    write_dataset(val_set, out / "data" / "val")
    manifest = build_benchmark(out / "data" / "val", out / "benchmark", args.seed,
                               threads=threads, overwrite=True)
    cache = BenchmarkCache(manifest)

    rows = []
    for mode, label in TOY_ROWS:
        if mode not in modes:
            continue

        def log(epoch, loss, mode=mode):
            if args.verbose:
                print(f"[{mode}] epoch {epoch} loss {loss:.4f}", file=sys.stderr)

        net = train(mode, args.seed, train_set, tcfg, log=log)
        save_checkpoint(net, out / "checkpoints" / f"{mode}.json")
        report = robustness_eval(net, manifest, cache)
        (out / "reports").mkdir(parents=True, exist_ok=True)
        (out / "reports" / f"{mode}.json").write_text(report.to_json(), encoding="utf-8")
        fam = report.per_family()
        rows.append([label, report.clean_miou, report.miou_c, report.f1_c,
                     fam["blur"], fam["digital"], fam["noise"], fam["weather"]])
        print(f"{label:>10}  clean mIoU {100 * report.clean_miou:6.2f}  "
              f"mIoU_c {100 * report.miou_c:6.2f}")

    header = ["model", "clean_mIoU", "mIoU_c", "F1_c", "blur", "digital", "noise", "weather"]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join([row[0]] + [f"{v:.6f}" for v in row[1:]]))
    (out / "comparison.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out / 'comparison.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    def __init__(self, prog):
        super().__init__(prog, max_help_position=32, width=100)


def build_parser():
    p = argparse.ArgumentParser(
        prog="heteraug", formatter_class=_Formatter,
        description="Corruption benchmarks, heterogeneous augmentation and robustness evaluation.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    c = sub.add_parser("corrupt", formatter_class=_Formatter,
                       help="build a corrupted benchmark from a dataset",
                       description="Write every corruption/severity variant of a dataset plus a manifest.")
    c.add_argument("--data", required=True, help="dataset directory with images/ and labels/")
    c.add_argument("--out", required=True, help="output benchmark directory")
    c.add_argument("--seed", type=int, default=0, help="master seed")
    c.add_argument("--subset", default=None, help="comma-separated image ids, or a file of ids")
    c.add_argument("--corruptions", default=None,
                   help="comma-separated corruption or family names (all 16 if omitted)")
    c.add_argument("--severities", default=None, help="comma-separated severities (1..5 if omitted)")
    c.add_argument("--threads", type=int, default=None,
                   help="worker processes (fallback: HETERAUG_THREADS, then CPU count)")
    c.add_argument("--overwrite", action="store_true", help="replace a non-empty output directory")
    c.set_defaults(func=cmd_corrupt)

    a = sub.add_parser("augment", formatter_class=_Formatter,
                       help="write augmentation preview panels",
                       description="Write panels laid out as input | I_aug | I_mix | I_heter.")
    a.add_argument("--in", dest="input", required=True, help="directory of images (or a dataset directory)")
    a.add_argument("--out", required=True, help="output directory for panels")
    a.add_argument("--seed", type=int, default=0, help="master seed")
    a.add_argument("--n", type=int, default=None, help="number of panels (one per image if omitted)")
    a.add_argument("--mode", choices=MODES, default="heteraug", help="augmentation mode")
    a.add_argument("--composition", choices=("sequential", "random"), default="sequential",
                   help="how the two augmentations are combined")
    a.add_argument("--chain-ratio", type=float, default=1.0, help="fraction of images given the chain")
    a.add_argument("--gate-mode", choices=("per_op", "whole"), default="per_op",
                   help="gate each op separately or the whole chain at once")
    a.add_argument("--model-ratio", type=float, default=0.25,
                   help="probability an image goes through the random network")
    a.add_argument("--channels", type=int, default=16, help="random network width")
    a.add_argument("--threads", type=int, default=None, help="accepted for symmetry; preview is serial")
    a.set_defaults(func=cmd_augment)

    e = sub.add_parser("eval", formatter_class=_Formatter,
                       help="score predictions against a benchmark",
                       description="Score <pred>/<corruption>/<severity>/<id>.png against a benchmark manifest.")
    e.add_argument("--pred", required=True, help="prediction directory")
    e.add_argument("--manifest", required=True, help="manifest.json or the benchmark directory")
    e.add_argument("--clean-pred", default=None, help="directory of clean-image predictions <id>.png")
    e.add_argument("--format", choices=("csv", "json", "table"), default="table", help="report format")
    e.add_argument("--out", default=None, help="also write the report and config snapshot here")
    e.add_argument("--ignore-id", type=int, default=None, help="ground-truth id to skip")
    e.add_argument("--include-background-f1", action="store_true",
                   help="include class 0 in the mean F1")
    e.add_argument("--absent-f1", choices=ABSENT_F1, default="zero",
                   help="F1 of a class absent from truth and prediction: score 0 or leave out")
    e.set_defaults(func=cmd_eval)

    t = sub.add_parser("toy", formatter_class=_Formatter,
                       help="run the synthetic robustness demonstration",
                       description="Generate data, build a benchmark, train and compare toy segmenters.")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--seed", type=int, default=0, help="seed for data, benchmark and training")
    t.add_argument("--quick", action="store_true",
                   help=f"small smoke run ({TOY_QUICK['n_train']}/{TOY_QUICK['n_val']} scenes, "
                        f"{TOY_QUICK['epochs']} epochs)")
    t.add_argument("--ablate", action="store_true", help="also train the two single-augmentation modes")
    t.add_argument("--epochs", type=int, default=None, help="override the epoch count")
    t.add_argument("--n-train", type=int, default=None, help="override the training set size")
    t.add_argument("--n-val", type=int, default=None, help="override the validation set size")
    t.add_argument("--threads", type=int, default=None,
                   help="worker processes for the benchmark (fallback: HETERAUG_THREADS)")
    t.add_argument("--overwrite", action="store_true", help="reuse a non-empty run directory")
    t.add_argument("--verbose", action="store_true", help="log per-epoch training loss to stderr")
    t.set_defaults(func=cmd_toy)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except IntegrityError as exc:
        print(f"heteraug {args.command}: integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (CliError, DatasetError, ImageIOError, OSError, ValueError, RuntimeError) as exc:
        print(f"heteraug {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
