"""Model-aware augmentation: an untrained residual image-to-image network.

Layout: ``stem (3x3, 3->C) -> 4 x Res2 block -> head (3x3, C->3)`` plus a
global skip, so ``I_heter = clip(I + head(blocks(stem(I))))``. Each block is
``x + beta * F(x)`` where ``F`` splits channels into 4 groups, runs the
hierarchical group convolutions and fuses them with a 1x1 conv. All convs
are bias-free, stride 1, reflect padded. Weights are never trained; a new
network is drawn for every mini-batch.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from ._conv import conv2d
from .core import check_image

__all__ = [
    "RandNetConfig",
    "Res2BlockParams",
    "RandomNet",
    "sample_network",
    "res2_forward",
    "forward",
    "model_aware_augment",
]


@dataclass(frozen=True)
class RandNetConfig:
    channels: int = 16
    blocks: int = 4
    scale: int = 4
    beta_min: float = 0.375
    beta_max: float = 0.75
    # probability that an image goes through the network
    ratio: float = 0.25
    gain_min: float = 0.75
    gain_max: float = 1.25

    def __post_init__(self):
        if self.channels % self.scale:
            raise ValueError(f"channels ({self.channels}) must be divisible by scale ({self.scale})")
        if self.scale < 2:
            raise ValueError("Res2 scale must be at least 2")
        if not 0.0 <= self.beta_min <= self.beta_max:
            raise ValueError("need 0 <= beta_min <= beta_max")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError("model-aware ratio must lie in [0, 1]")
        if not 0.0 < self.gain_min <= self.gain_max:
            raise ValueError("need 0 < gain_min <= gain_max")


@dataclass
class Res2BlockParams:
    # (scale - 1, 3, 3, C/s, C/s): kernels for groups 2..scale
    group_kernels: np.ndarray
    # (C, C) 1x1 fuse
    fuse: np.ndarray
    beta: float

    def __post_init__(self):
        gk = np.asarray(self.group_kernels, dtype=np.float64)
        fuse = np.asarray(self.fuse, dtype=np.float64)
        if gk.ndim != 5 or gk.shape[3] != gk.shape[4]:
            raise ValueError(f"bad group kernel shape {gk.shape}")
        width = gk.shape[3] * (gk.shape[0] + 1)
        if fuse.shape != (width, width):
            raise ValueError(f"fuse must be ({width}, {width}), got {fuse.shape}")
        if not (np.all(np.isfinite(gk)) and np.all(np.isfinite(fuse))):
            raise ValueError("non-finite kernel weights")
        self.group_kernels = gk
        self.fuse = fuse

    @property
    def scale(self):
        return self.group_kernels.shape[0] + 1

    @property
    def channels(self):
        return self.fuse.shape[0]


@dataclass
class RandomNet:
    stem: np.ndarray
    blocks: list
    head: np.ndarray
    gain: float = 1.0
    config: RandNetConfig = field(default_factory=RandNetConfig)

    @property
    def channels(self):
        return self.stem.shape[3]


def _normal(rng, shape, gain, fan_in):
    return rng.normal(0.0, gain / np.sqrt(fan_in), size=shape)


def sample_network(rng, c=None, cfg=RandNetConfig()):
    """Draw a fresh network.

    Weights are ``N(0, (gain / sqrt(fan_in))^2)`` with one ``gain`` per
    network drawn from ``U[gain_min, gain_max]``; each block's beta is drawn
    from ``U[beta_min, beta_max]``.
    """
    if c is not None:
        cfg = replace(cfg, channels=int(c))
    c, s = cfg.channels, cfg.scale
    g = c // s
    gain = float(rng.uniform(cfg.gain_min, cfg.gain_max))
    stem = _normal(rng, (3, 3, 3, c), gain, 27)
    blocks = []
    for _ in range(cfg.blocks):
        kernels = _normal(rng, (s - 1, 3, 3, g, g), gain, 9 * g)
        fuse = _normal(rng, (c, c), gain, c)
        beta = float(rng.uniform(cfg.beta_min, cfg.beta_max))
        blocks.append(Res2BlockParams(kernels, fuse, beta))
    head = _normal(rng, (3, 3, c, 3), gain, 9 * c)
    return RandomNet(stem, blocks, head, gain, cfg)


def res2_forward(x, block):
    """Apply one Res2 block to a feature map ``(H, W, C)`` or ``(N, H, W, C)``.

    ``y1 = x1``; ``yj = relu(conv_j(xj + y(j-1)))``; result
    ``x + beta * fuse(concat(y))``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    c = x.shape[-1]
    if c != block.channels:
        raise ValueError(f"feature map has {c} channels, block expects {block.channels}")
    s = block.scale
    g = c // s
    parts = [x[..., j * g:(j + 1) * g] for j in range(s)]
    ys = [parts[0]]
    for j in range(1, s):
        ys.append(np.maximum(conv2d(parts[j] + ys[-1], block.group_kernels[j - 1], padding="reflect"), 0.0))
    fused = np.concatenate(ys, axis=-1) @ block.fuse
    out = x + block.beta * fused
    return out[0] if single else out


def forward(net, img):
    """``clip(img + head(blocks(stem(img))), 0, 1)``; accepts one image or a batch."""
    img = np.asarray(img, dtype=np.float64)
    single = img.ndim == 3
    batch = img[None] if single else img
    for im in batch:
        check_image(im)
    h = conv2d(batch, net.stem, padding="reflect")
    for block in net.blocks:
        h = res2_forward(h, block)
    out = np.clip(batch + conv2d(h, net.head, padding="reflect"), 0.0, 1.0)
    return out[0] if single else out


def model_aware_augment(img, rng, net, ratio=None):
    """Send ``img`` through ``net`` with probability ``ratio`` (default from the net's config)."""
    if ratio is None:
        ratio = net.config.ratio
    if rng.random() < ratio:
        return forward(net, img)
    return check_image(img)
