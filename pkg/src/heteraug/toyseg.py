"""Desk-scale segmentation task used to measure the robustness gain.

Scenes are textured backgrounds with one to three coloured shapes (circle,
rectangle, triangle); the segmenter is a three-layer fully convolutional net
trained with hand-written backprop and SGD with momentum.
"""
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from ._conv import conv2d, conv2d_grad_input, conv2d_grad_weight
from .core import derive_rng, from_uint8, load_image, save_image, save_labels
from .metrics import evaluate_predictor
from .pipeline import MODES, HeterConfig, Sample, training_stream

__all__ = [
    "CLASS_NAMES",
    "SceneSpec",
    "ToyNet",
    "TrainConfig",
    "TrainingDiverged",
    "gen_scene",
    "make_dataset",
    "write_dataset",
    "init_net",
    "forward",
    "predict",
    "loss_and_grad",
    "geometric_augment",
    "train",
    "robustness_eval",
    "BenchmarkCache",
    "save_checkpoint",
    "load_checkpoint",
]

CLASS_NAMES = ("background", "circle", "rectangle", "triangle")
CHECKPOINT_FORMAT = "heteraug-toynet"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    num_classes: int = 4
    min_size: int = 6
    max_size: int = 14
    color_jitter: float = 0.1
    texture_amplitude: float = 0.08
    # base RGB per shape class (circle, rectangle, triangle)
    colors: tuple = ((0.85, 0.25, 0.2), (0.2, 0.75, 0.3), (0.25, 0.35, 0.9))


def _triangle_mask(yy, xx, pts):
    (x0, y0), (x1, y1), (x2, y2) = pts

    def side(ax, ay, bx, by):
        return (xx - bx) * (ay - by) - (ax - bx) * (yy - by)

    d1 = side(x0, y0, x1, y1)
    d2 = side(x1, y1, x2, y2)
    d3 = side(x2, y2, x0, y0)
    neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
    pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
    return ~(neg & pos)


def gen_scene(spec, rng):
    """Render one scene; returns ``(image, labels)``.

    Shapes are painted back to front, so each pixel is labelled with the
    topmost shape covering it.
    """
    h, w = spec.height, spec.width
    base = rng.uniform(0.35, 0.65) + rng.uniform(-0.05, 0.05, size=3)
    texture = ndimage.gaussian_filter(rng.normal(size=(h, w)), 2.0, mode="wrap")
    texture /= texture.std() + 1e-12
    img = base + spec.texture_amplitude * texture[..., None]
    labels = np.zeros((h, w), dtype=np.int64)
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    for _ in range(int(rng.integers(1, 4))):
        cls = int(rng.integers(1, spec.num_classes))
        size = rng.uniform(spec.min_size, spec.max_size)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        if cls == 1:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= size ** 2
        elif cls == 2:
            ha, hb = size, rng.uniform(spec.min_size, spec.max_size)
            mask = (np.abs(yy - cy) <= ha) & (np.abs(xx - cx) <= hb)
        else:
            rot = rng.uniform(0, 2 * math.pi)
            r = size * 1.3
            pts = [(cx + r * math.cos(rot + k * 2 * math.pi / 3),
                    cy + r * math.sin(rot + k * 2 * math.pi / 3)) for k in range(3)]
            mask = _triangle_mask(yy, xx, pts)
        color = np.asarray(spec.colors[cls - 1]) + rng.uniform(-spec.color_jitter, spec.color_jitter, size=3)
        img[mask] = color
        labels[mask] = cls
    return np.clip(img, 0.0, 1.0), labels


def make_dataset(n, seed, spec=SceneSpec(), prefix="scene"):
    """``n`` scenes; scene ``i`` uses stream ``(seed, ["scene", prefix, i])``.

    Images are quantised to 8 bits so in-memory data equals what a PNG
    round trip yields.
    """
    out = []
    for i in range(n):
        img, lab = gen_scene(spec, derive_rng(seed, ["scene", prefix, i]))
        img = np.floor(img * 255.0 + 0.5) / 255.0
        out.append(Sample(f"{prefix}{i:05d}", img, lab))
    return out


def write_dataset(samples, root, name="toyseg", spec=SceneSpec()):
    root = Path(root)
    for s in samples:
        save_image(s.image, root / "images" / f"{s.id}.png")
        save_labels(s.labels, root / "labels" / f"{s.id}.png")
    meta = {"name": name, "num_classes": spec.num_classes, "class_names": list(CLASS_NAMES)}
    (root / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return root


# ---------------------------------------------------------------------------
# network


@dataclass
class ToyNet:
    """conv3x3(3->8) ReLU, conv3x3(8->8) ReLU, conv1x1(8->K), softmax."""

    params: dict
    num_classes: int = 4

    PARAM_ORDER = ("w1", "b1", "w2", "b2", "w3", "b3")

    @property
    def dtype(self):
        return self.params["w1"].dtype

    def copy(self):
        return ToyNet({k: v.copy() for k, v in self.params.items()}, self.num_classes)


def init_net(rng, num_classes=4, hidden=8, dtype=np.float32):
    """He-normal weights, zero biases."""
    def he(shape, fan_in):
        return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape).astype(dtype)

    params = {
        "w1": he((3, 3, 3, hidden), 27),
        "b1": np.zeros(hidden, dtype),
        "w2": he((3, 3, hidden, hidden), 9 * hidden),
        "b2": np.zeros(hidden, dtype),
        "w3": he((hidden, num_classes), hidden),
        "b3": np.zeros(num_classes, dtype),
    }
    return ToyNet(params, num_classes)


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_cache(net, x):
    p = net.params
    z1 = conv2d(x, p["w1"], p["b1"])
    a1 = np.maximum(z1, 0)
    z2 = conv2d(a1, p["w2"], p["b2"])
    a2 = np.maximum(z2, 0)
    logits = a2 @ p["w3"] + p["b3"]
    return z1, a1, z2, a2, logits


def _batch(img, dtype):
    x = np.asarray(img, dtype=dtype)
    return (x[None], True) if x.ndim == 3 else (x, False)


def forward(net, img):
    """Per-pixel class probabilities, shape ``(..., H, W, num_classes)``."""
    x, single = _batch(img, net.dtype)
    probs = _softmax(_forward_cache(net, x)[-1])
    return probs[0] if single else probs


def predict(net, img, chunk=32):
    """Arg-max label map(s)."""
    x, single = _batch(img, net.dtype)
    out = np.concatenate([
        _forward_cache(net, x[i:i + chunk])[-1].argmax(axis=-1) for i in range(0, len(x), chunk)
    ])
    return out[0] if single else out


def loss_and_grad(net, img, gt):
    """Mean pixel-wise cross-entropy and its gradient for every parameter."""
    x, single = _batch(img, net.dtype)
    gt = np.asarray(gt)
    if single:
        gt = gt[None]
    if gt.shape != x.shape[:3]:
        raise ValueError(f"labels {gt.shape} do not match images {x.shape[:3]}")
    p = net.params
    z1, a1, z2, a2, logits = _forward_cache(net, x)
    z = logits - logits.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1))
    picked = np.take_along_axis(z, gt[..., None], axis=-1)[..., 0]
    npix = gt.size
    loss = float(np.sum(logsum - picked) / npix)

    dlogits = np.exp(z - logsum[..., None])
    np.put_along_axis(dlogits, gt[..., None], np.take_along_axis(dlogits, gt[..., None], -1) - 1, -1)
    dlogits /= npix
    k = dlogits.shape[-1]
    hidden = a2.shape[-1]
    grads = {
        "w3": a2.reshape(-1, hidden).T @ dlogits.reshape(-1, k),
        "b3": dlogits.reshape(-1, k).sum(0),
    }
    dz2 = (dlogits @ p["w3"].T) * (z2 > 0)
    grads["w2"] = conv2d_grad_weight(a1, dz2, 3, 3)
    grads["b2"] = dz2.reshape(-1, hidden).sum(0)
    dz1 = conv2d_grad_input(dz2, p["w2"]) * (z1 > 0)
    grads["w1"] = conv2d_grad_weight(x, dz1, 3, 3)
    grads["b1"] = dz1.reshape(-1, dz1.shape[-1]).sum(0)
    grads = {name: g.astype(p[name].dtype, copy=False) for name, g in grads.items()}
    return loss, grads


# ---------------------------------------------------------------------------
# training


def geometric_augment(img, labels, rng, scale_range=(0.75, 1.25), flip_prob=0.5):
    """Random horizontal flip and scale jitter applied identically to both maps.

    Each output pixel takes the nearest source pixel (clamped at the border)
    under one shared coordinate map, so image and labels stay aligned.
    """
    h, w = labels.shape
    flip = rng.random() < flip_prob
    s = rng.uniform(*scale_range)
    oy = rng.uniform(min(0.0, h - h * s), max(0.0, h - h * s))
    ox = rng.uniform(min(0.0, w - w * s), max(0.0, w - w * s))
    ys = np.clip(np.floor((np.arange(h) + 0.5 - oy) / s), 0, h - 1).astype(np.int64)
    xs = np.clip(np.floor((np.arange(w) + 0.5 - ox) / s), 0, w - 1).astype(np.int64)
    if flip:
        xs = xs[::-1]
    return img[ys][:, xs], labels[ys][:, xs]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 0.05
    momentum: float = 0.9
    # lr is multiplied by lr_drop once this fraction of epochs is done
    drop_at: float = 0.7
    lr_drop: float = 0.1
    geometric: bool = True
    dtype: str = "float32"


def lr_at(cfg, epoch):
    return cfg.lr * (cfg.lr_drop if epoch >= int(round(cfg.drop_at * cfg.epochs)) else 1.0)


def train(mode, seed, train_set, cfg=TrainConfig(), heter=None, log=None, on_network=None):
    """Train a :class:`ToyNet` under one augmentation mode.

    ``heter`` overrides the :class:`HeterConfig` derived from ``mode``.
    Initialisation, shuffling, augmentation and geometric jitter draw from
    separate streams of ``seed``, so disabling augmentation leaves the rest
    of the trajectory unchanged.
    """
    if heter is None:
        heter = HeterConfig.for_mode(mode)
    elif mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    dtype = np.dtype(cfg.dtype)
    net = init_net(derive_rng(seed, ["init"]), dtype=dtype)
    velocity = {k: np.zeros_like(v) for k, v in net.params.items()}
    stream = training_stream(train_set, heter, seed, cfg.batch_size, epochs=cfg.epochs,
                             on_network=on_network)
    epoch_loss, count, current = 0.0, 0, 0
    for batch in stream:
        if batch.epoch != current:
            if log:
                log(current, epoch_loss / max(count, 1))
            epoch_loss, count, current = 0.0, 0, batch.epoch
        images, labels = batch.images, batch.labels
        if cfg.geometric:
            pairs = [
                geometric_augment(im, lab, derive_rng(seed, ["geom", batch.epoch, batch.index, k]))
                for k, (im, lab) in enumerate(zip(images, labels))
            ]
            images = np.stack([p[0] for p in pairs])
            labels = np.stack([p[1] for p in pairs])
        loss, grads = loss_and_grad(net, images.astype(dtype), labels)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss} at epoch {batch.epoch}, batch {batch.index}")
        lr = dtype.type(lr_at(cfg, batch.epoch))
        mom = dtype.type(cfg.momentum)
        for name in ToyNet.PARAM_ORDER:
            velocity[name] = mom * velocity[name] + grads[name]
            net.params[name] -= lr * velocity[name]
        epoch_loss += loss
        count += 1
    if log and count:
        log(current, epoch_loss / count)
    return net


# ---------------------------------------------------------------------------
# evaluation


class BenchmarkCache:
    """Corrupted benchmark images held in memory as uint8, loaded once."""

    def __init__(self, manifest):
        self.manifest = manifest
        self._clean = {}
        self._cells = {}
        for rec in manifest.records:
            self._clean[rec.id] = _load_u8(manifest.resolve(rec.image))
        for c in manifest.corruptions:
            for s in manifest.severities:
                self._cells[c, s] = np.stack(
                    [_load_u8(manifest.resolve(rec.path(c, s))) for rec in manifest.records]
                )

    def clean(self):
        return np.stack([self._clean[r.id] for r in self.manifest.records])

    def cell(self, corruption, severity):
        return self._cells[corruption, severity]


def _load_u8(path):
    return np.floor(load_image(path) * 255.0 + 0.5).astype(np.uint8)


def robustness_eval(net, manifest, cache=None):
    """Predict every clean and corrupted benchmark image, then score them."""
    if cache is None:
        cache = BenchmarkCache(manifest)
    index = {r.id: i for i, r in enumerate(manifest.records)}
    preds = {
        (c, s): predict(net, from_uint8(cache.cell(c, s)))
        for c in manifest.corruptions for s in manifest.severities
    }
    clean = predict(net, from_uint8(cache.clean()))
    return evaluate_predictor(
        lambda rec, c, s: preds[c, s][index[rec.id]],
        manifest,
        lambda rec: clean[index[rec.id]],
    )


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(net, path):
    """JSON checkpoint: format tag, version, dtype and shaped flat arrays."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "dtype": str(net.dtype),
        "num_classes": net.num_classes,
        "params": {
            name: {"shape": list(net.params[name].shape),
                   "data": [float(v) for v in net.params[name].ravel()]}
            for name in ToyNet.PARAM_ORDER
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version {CHECKPOINT_VERSION} toy-net checkpoint")
    dtype = np.dtype(doc["dtype"])
    params = {
        name: np.asarray(entry["data"], dtype=dtype).reshape(entry["shape"])
        for name, entry in doc["params"].items()
    }
    return ToyNet(params, doc["num_classes"])
