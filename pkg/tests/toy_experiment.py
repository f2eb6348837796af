"""Multi-seed robustness experiment on the synthetic task.

Importable from the acceptance tests; also runnable on its own:

    python3 tests/toy_experiment.py [--seeds 0,1,2,3,4] [--modes clean,heteraug]
"""
import argparse
import json
import tempfile
import time
from pathlib import Path

import numpy as np

from heteraug.pipeline import MODES, build_benchmark
from heteraug.toyseg import (
    BenchmarkCache,
    TrainConfig,
    make_dataset,
    robustness_eval,
    train,
    write_dataset,
)

DATA_SEED = 0
N_TRAIN, N_VAL, EPOCHS = 500, 100, 20
SEEDS = (0, 1, 2, 3, 4)


def run(modes=MODES, seeds=SEEDS, epochs=EPOCHS, log=print):
    """Train every (mode, seed) pair once; returns a JSON-able result dict."""
    t0 = time.perf_counter()
    train_set = make_dataset(N_TRAIN, DATA_SEED, prefix="train")
    val_set = make_dataset(N_VAL, DATA_SEED, prefix="val")
    results = {"modes": list(modes), "seeds": list(seeds), "epochs": epochs, "runs": {}}
    with tempfile.TemporaryDirectory() as tmp:
        write_dataset(val_set, Path(tmp) / "val")
        manifest = build_benchmark(Path(tmp) / "val", Path(tmp) / "bench", DATA_SEED, threads=1)
        cache = BenchmarkCache(manifest)
        for mode in modes:
            runs = results["runs"][mode] = []
            for seed in seeds:
                t = time.perf_counter()
                net = train(mode, seed, train_set, TrainConfig(epochs=epochs))
                rep = robustness_eval(net, manifest, cache)
                runs.append({"seed": seed, "clean": rep.clean_miou, "miou_c": rep.miou_c,
                             "families": rep.per_family(), "seconds": time.perf_counter() - t})
                if log:
                    log(f"{mode:>14} seed {seed}: clean {rep.clean_miou:.4f} "
                        f"mIoU_c {rep.miou_c:.4f} ({time.perf_counter() - t:.0f}s)")
    results["seconds"] = time.perf_counter() - t0
    return results


def medians(results):
    out = {}
    for mode, runs in results["runs"].items():
        out[mode] = {
            "clean": float(np.median([r["clean"] for r in runs])),
            "miou_c": float(np.median([r["miou_c"] for r in runs])),
        }
    return out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", default=",".join(map(str, SEEDS)))
    p.add_argument("--modes", default=",".join(MODES))
    p.add_argument("--epochs", type=int, default=EPOCHS)
    p.add_argument("--json", default=None, help="write the raw results here")
    args = p.parse_args()
    res = run(args.modes.split(","), [int(s) for s in args.seeds.split(",")], args.epochs)
    for mode, m in medians(res).items():
        print(f"median {mode:>14}: clean {m['clean']:.4f} mIoU_c {m['miou_c']:.4f}")
    print(f"total {res['seconds']:.0f}s")
    if args.json:
        Path(args.json).write_text(json.dumps(res, indent=2) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
