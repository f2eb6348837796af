"""HeterAug composition, benchmark generation and the training stream."""
import json
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .chainaug import ChainConfig, image_aware_stages
from .core import (
    check_image,
    check_labels,
    derive_rng,
    load_image,
    load_labels,
    resolve_threads,
    save_image,
    save_labels,
)
from .corruptions import SEVERITIES, Corruption, apply_corruption, constants_digest
from .randnet import RandNetConfig, forward, model_aware_augment, sample_network

__all__ = [
    "MODES",
    "DatasetError",
    "HeterConfig",
    "Sample",
    "Record",
    "Manifest",
    "heter_augment",
    "heter_stages",
    "load_dataset",
    "build_benchmark",
    "training_stream",
]

MANIFEST_VERSION = 1
MODES = ("clean", "imageaug-only", "modelaug-only", "heteraug")


class DatasetError(ValueError):
    """The dataset directory is malformed or empty."""


@dataclass(frozen=True)
class HeterConfig:
    chain: ChainConfig = field(default_factory=ChainConfig)
    modelaug: RandNetConfig = field(default_factory=RandNetConfig)
    # "sequential" (chain -> mix -> network) or "random" (pick exactly one branch)
    composition: str = "sequential"
    # random composition only: probabilities of (original, chain, network)
    sample_ratios: tuple = (0.25, 0.5, 0.25)

    def __post_init__(self):
        if self.composition not in ("sequential", "random"):
            raise ValueError("composition must be 'sequential' or 'random'")
        r = tuple(float(x) for x in self.sample_ratios)
        if len(r) != 3 or min(r) < 0 or abs(sum(r) - 1.0) > 1e-9:
            raise ValueError("sample_ratios must be three non-negative numbers summing to 1")
        object.__setattr__(self, "sample_ratios", r)

    @classmethod
    def for_mode(cls, mode, **overrides):
        """Configuration for one of the training modes in :data:`MODES`."""
        cfg = cls(**overrides)
        if mode == "clean":
            return replace(cfg, chain=replace(cfg.chain, ratio=0.0),
                           modelaug=replace(cfg.modelaug, ratio=0.0))
        if mode == "imageaug-only":
            return replace(cfg, modelaug=replace(cfg.modelaug, ratio=0.0))
        if mode == "modelaug-only":
            return replace(cfg, chain=replace(cfg.chain, ratio=0.0))
        if mode == "heteraug":
            return cfg
        raise ValueError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(
            chain=ChainConfig(**d.get("chain", {})),
            modelaug=RandNetConfig(**d.get("modelaug", {})),
            composition=d.get("composition", "sequential"),
            sample_ratios=tuple(d.get("sample_ratios", (0.25, 0.5, 0.25))),
        )


def heter_stages(img, rng, cfg, net, policy=None):
    """Return ``(I_aug, I_mix, I_heter)`` for one image.

    Sequential: chain -> mix -> network (with the network's ratio).
    Random: exactly one of original / image-aware / network output; stages
    that were not taken equal their input. ``policy`` forces the chain.
    """
    img = check_image(img)
    if cfg.composition == "sequential":
        aug, mixed = image_aware_stages(img, rng, cfg.chain, policy)
        return aug, mixed, model_aware_augment(mixed, rng, net, cfg.modelaug.ratio)
    u = rng.random()
    p_orig, p_chain, _ = cfg.sample_ratios
    if u < p_orig:
        return img, img, img
    if u < p_orig + p_chain:
        aug, mixed = image_aware_stages(img, rng, replace(cfg.chain, ratio=1.0), policy)
        return aug, mixed, mixed
    return img, img, forward(net, img)


def heter_augment(img, rng, cfg, net, policy=None):
    return heter_stages(img, rng, cfg, net, policy)[2]


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Sample:
    id: str
    image: np.ndarray
    labels: np.ndarray


def _dataset_meta(root):
    meta_path = root / "dataset.json"
    if meta_path.is_file():
        return json.loads(meta_path.read_text(encoding="utf-8"))
    return {}


def _list_ids(root, subset=None):
    img_dir, lab_dir = root / "images", root / "labels"
    if not img_dir.is_dir():
        raise DatasetError(f"{root}: missing images/ directory")
    if not lab_dir.is_dir():
        raise DatasetError(f"{root}: missing labels/ directory")
    files = sorted(p for p in img_dir.iterdir() if p.suffix.lower() in (".png", ".ppm"))
    ids = [p.stem for p in files]
    if subset is not None:
        wanted = set(subset)
        unknown = wanted - set(ids)
        if unknown:
            raise DatasetError(f"subset ids not in dataset: {', '.join(sorted(unknown))}")
        files = [p for p in files if p.stem in wanted]
    if not files:
        raise DatasetError(f"{root}: dataset is empty")
    for p in files:
        if not (lab_dir / f"{p.stem}.png").is_file():
            raise DatasetError(f"{root}: no label map for image {p.name}")
    return files


def load_dataset(dataset_dir, subset=None):
    """Load ``images/<id>.png`` with ``labels/<id>.png`` into memory, sorted by id."""
    root = Path(dataset_dir)
    samples = []
    for p in _list_ids(root, subset):
        img = load_image(p)
        lab = check_labels(load_labels(root / "labels" / f"{p.stem}.png"), shape=img.shape[:2])
        samples.append(Sample(p.stem, img, lab))
    return samples


# ---------------------------------------------------------------------------
# benchmark manifest


@dataclass
class Record:
    id: str
    image: str
    label: str
    # corruption value -> {severity: relative path}
    corrupted: dict

    def path(self, corruption, severity):
        return self.corrupted[Corruption(corruption).value][int(severity)]


@dataclass
class Manifest:
    dataset: str
    num_classes: int
    class_names: list
    master_seed: int
    digest: str
    corruptions: list
    severities: list
    records: list
    root: Path = None

    def resolve(self, rel):
        return Path(self.root) / rel if self.root is not None else Path(rel)

    def to_dict(self):
        return {
            "schema_version": MANIFEST_VERSION,
            "dataset": self.dataset,
            "num_classes": self.num_classes,
            "class_names": list(self.class_names),
            "master_seed": self.master_seed,
            "corruption_digest": self.digest,
            "corruptions": [c.value for c in self.corruptions],
            "severities": list(self.severities),
            "records": [
                {
                    "id": r.id,
                    "image": r.image,
                    "label": r.label,
                    "corrupted": {c: {str(s): p for s, p in sev.items()} for c, sev in r.corrupted.items()},
                }
                for r in self.records
            ],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path):
        path = Path(path)
        d = json.loads(path.read_text(encoding="utf-8"))
        if d.get("schema_version") != MANIFEST_VERSION:
            raise ValueError(f"{path}: unsupported manifest schema {d.get('schema_version')!r}")
        records = [
            Record(r["id"], r["image"], r["label"],
                   {c: {int(s): p for s, p in sev.items()} for c, sev in r["corrupted"].items()})
            for r in d["records"]
        ]
        m = cls(d["dataset"], d["num_classes"], d["class_names"], d["master_seed"],
                d["corruption_digest"], [Corruption(c) for c in d["corruptions"]],
                [int(s) for s in d["severities"]], records, root=path.parent)
        for r in records:
            if sum(len(v) for v in r.corrupted.values()) != len(m.corruptions) * len(m.severities):
                raise ValueError(f"{path}: record {r.id} has an incomplete set of corrupted images")
        return m


def _corrupt_one(job):
    src, rec_id, out_root, seed, corruptions, severities = job
    img = load_image(src)
    for c in corruptions:
        for s in severities:
            rng = derive_rng(seed, [rec_id, c.value, s])
            save_image(apply_corruption(img, c, s, rng), out_root / c.value / str(s) / f"{rec_id}.png")
    return rec_id


def build_benchmark(dataset_dir, out_dir, seed, subset=None, corruptions=None,
                    severities=None, threads=None, overwrite=False):
    """Write every (corruption, severity) variant of a dataset plus a manifest.

    Layout under ``out_dir``: ``<corruption>/<severity>/<id>.png``,
    ``clean/<id>.png``, ``labels/<id>.png`` and ``manifest.json``. Output is
    staged in a sibling directory and moved into place only on success, so a
    failure leaves no partial tree behind.
    """
    root = Path(dataset_dir)
    out_dir = Path(out_dir)
    corruptions = list(Corruption) if corruptions is None else [Corruption(c) for c in corruptions]
    severities = list(SEVERITIES) if severities is None else sorted({int(s) for s in severities})
    if not corruptions or not severities:
        raise ValueError("need at least one corruption and one severity")
    if any(s not in SEVERITIES for s in severities):
        raise ValueError("severities must lie in 1..5")
    if out_dir.exists() and any(out_dir.iterdir()) and not overwrite:
        raise FileExistsError(f"{out_dir} exists and is not empty")

    files = _list_ids(root, subset)
    meta = _dataset_meta(root)
    stage = out_dir.parent / f".{out_dir.name}.partial"
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir(parents=True)
    try:
        max_label = -1
        records = []
        for p in files:
            lab = load_labels(root / "labels" / f"{p.stem}.png")
            img = load_image(p)
            check_labels(lab, meta.get("num_classes"), shape=img.shape[:2])
            max_label = max(max_label, int(lab.max()) if lab.size else -1)
            save_labels(lab, stage / "labels" / f"{p.stem}.png")
            save_image(img, stage / "clean" / f"{p.stem}.png")
            records.append(Record(
                p.stem, f"clean/{p.stem}.png", f"labels/{p.stem}.png",
                {c.value: {s: f"{c.value}/{s}/{p.stem}.png" for s in severities} for c in corruptions},
            ))
        jobs = [(p, p.stem, stage, seed, corruptions, severities) for p in files]
        workers = min(resolve_threads(threads), len(jobs))
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                list(pool.map(_corrupt_one, jobs))
        else:
            for job in jobs:
                _corrupt_one(job)
        num_classes = int(meta.get("num_classes", max_label + 1))
        class_names = meta.get("class_names", [f"class_{i}" for i in range(num_classes)])
        manifest = Manifest(meta.get("name", root.name), num_classes, class_names, int(seed),
                            constants_digest(), corruptions, severities, records)
        manifest.save(stage / "manifest.json")
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    if out_dir.exists():
        shutil.rmtree(out_dir)
    os.replace(stage, out_dir)
    manifest.root = out_dir
    return manifest


# ---------------------------------------------------------------------------
# training stream


@dataclass
class Batch:
    epoch: int
    index: int
    ids: list
    images: np.ndarray
    labels: np.ndarray
    net: object


def training_stream(dataset, cfg, seed, batch_size, epochs=1, start_epoch=0, on_network=None):
    """Yield shuffled, augmented mini-batches.

    ``dataset`` is a directory (see :func:`load_dataset`) or a list of
    :class:`Sample`. One random network is drawn per batch (``on_network``
    is called with it); labels pass through untouched because every
    augmentation here is photometric. Images in a batch must share a shape.
    """
    if isinstance(dataset, (str, os.PathLike)):
        dataset = load_dataset(dataset)
    if not dataset:
        raise DatasetError("empty dataset")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    n = len(dataset)
    for epoch in range(start_epoch, start_epoch + epochs):
        order = derive_rng(seed, ["shuffle", epoch]).permutation(n)
        for b, lo in enumerate(range(0, n, batch_size)):
            idx = order[lo:lo + batch_size]
            net = sample_network(derive_rng(seed, ["net", epoch, b]), cfg=cfg.modelaug)
            if on_network is not None:
                on_network(net)
            imgs, labs = [], []
            for k, i in enumerate(idx):
                s = dataset[i]
                rng = derive_rng(seed, ["aug", epoch, b, k])
                imgs.append(heter_augment(s.image, rng, cfg, net))
                labs.append(s.labels)
            yield Batch(epoch, b, [dataset[i].id for i in idx], np.stack(imgs), np.stack(labs), net)
