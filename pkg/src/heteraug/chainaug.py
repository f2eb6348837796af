"""Image-aware augmentation: a gated chain of photometric ops, mixed back.

The five ops act on the 8-bit quantised image (round-half-up) and return
values on the ``k / 255`` grid, as their PIL counterparts do. The op set is
disjoint from the benchmark corruptions by construction.
"""
import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import check_image, to_uint8

__all__ = [
    "Op",
    "ChainConfig",
    "ChainPolicy",
    "sample_chain",
    "apply_op",
    "apply_chain",
    "mix",
    "image_aware_stages",
    "image_aware_augment",
]


class Op(enum.Enum):
    EQUALIZE = "equalize"
    POSTERIZE = "posterize"
    SOLARIZE = "solarize"
    INVERT = "invert"
    SHARPNESS = "sharpness"


OPS = tuple(Op)

_SMOOTH = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float64) / 13.0


@dataclass(frozen=True)
class ChainConfig:
    k: int = 2
    beta_a: float = 1.0
    beta_b: float = 1.0
    # fraction of images that receive the chain at all
    ratio: float = 1.0
    # "per_op": each op has its own random gate; "whole": one gate for the chain
    gate_mode: str = "per_op"
    # False reproduces plain chain augmentation (no blend with the original)
    mix: bool = True
    posterize_bits: int = 4
    solarize_threshold: int = 128
    sharpness: float = 1.5

    def __post_init__(self):
        if not 1 <= self.k <= len(OPS):
            raise ValueError(f"chain length k must be in 1..{len(OPS)}")
        if self.beta_a <= 0 or self.beta_b <= 0:
            raise ValueError("Beta parameters must be positive")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError("chain ratio must lie in [0, 1]")
        if self.gate_mode not in ("per_op", "whole"):
            raise ValueError("gate_mode must be 'per_op' or 'whole'")
        if not 1 <= self.posterize_bits <= 8:
            raise ValueError("posterize_bits must be in 1..8")


@dataclass(frozen=True)
class ChainPolicy:
    ops: tuple
    gates: tuple
    alpha: float = field(default=0.0)

    def __post_init__(self):
        ops = tuple(Op(o) for o in self.ops)
        object.__setattr__(self, "ops", ops)
        object.__setattr__(self, "gates", tuple(bool(g) for g in self.gates))
        if len(set(ops)) != len(ops):
            raise ValueError("chain ops must be distinct")
        if len(self.gates) != len(ops):
            raise ValueError("one gate per op required")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


def sample_chain(rng, cfg=ChainConfig()):
    """Draw ops (without replacement), gate outcomes and the mix weight.

    Each gate opens with a probability that is itself uniform on [0, 1], so
    the marginal apply rate is 1/2. Draw order is fixed: ops, gate
    probabilities, gate coins, alpha.
    """
    idx = rng.choice(len(OPS), size=cfg.k, replace=False)
    ops = tuple(OPS[i] for i in idx)
    if cfg.gate_mode == "per_op":
        p = rng.random(cfg.k)
        gates = tuple(rng.random(cfg.k) < p)
    else:
        p = rng.random()
        gates = (rng.random() < p,) * cfg.k
    alpha = float(rng.beta(cfg.beta_a, cfg.beta_b))
    return ChainPolicy(ops, gates, alpha)


def _equalize_channel(q):
    hist = np.bincount(q.ravel(), minlength=256)
    used = hist[hist > 0]
    if used.size <= 1:
        return q
    step = (used.sum() - used[-1]) // 255
    if step == 0:
        return q
    before = np.concatenate([[0], np.cumsum(hist)[:-1]])
    lut = np.minimum((step // 2 + before) // step, 255).astype(np.uint8)
    return lut[q]


def apply_op(img, op, cfg=ChainConfig()):
    """Apply one op at its constant magnitude; result lies on the 8-bit grid."""
    op = Op(op)
    q = to_uint8(img)
    if op is Op.INVERT:
        out = 255 - q
    elif op is Op.POSTERIZE:
        shift = 8 - cfg.posterize_bits
        out = (q >> shift) << shift
    elif op is Op.SOLARIZE:
        out = np.where(q < cfg.solarize_threshold, q, 255 - q)
    elif op is Op.EQUALIZE:
        out = np.stack([_equalize_channel(q[..., c]) for c in range(q.shape[2])], axis=-1)
    else:
        v = q.astype(np.float64)
        blur = np.stack(
            [ndimage.correlate(v[..., c], _SMOOTH, mode="reflect") for c in range(v.shape[2])],
            axis=-1,
        )
        sharp = np.clip(v + cfg.sharpness * (v - blur), 0.0, 255.0)
        out = np.floor(sharp + 0.5)
    return np.asarray(out, dtype=np.float64) / 255.0


def apply_chain(img, policy, cfg=ChainConfig()):
    """Run the gated ops in order; closed gates pass the image through."""
    out = check_image(img)
    for op, gate in zip(policy.ops, policy.gates):
        if gate:
            out = apply_op(out, op, cfg)
    return out


def mix(original, augmented, alpha):
    """Convex blend ``alpha * original + (1 - alpha) * augmented``."""
    original = np.asarray(original, dtype=np.float64)
    augmented = np.asarray(augmented, dtype=np.float64)
    if original.shape != augmented.shape:
        raise ValueError(f"shape mismatch: {original.shape} vs {augmented.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if alpha == 1.0:
        return original.copy()
    if alpha == 0.0:
        return augmented.copy()
    out = alpha * original + (1.0 - alpha) * augmented
    # rounding can step one ulp past the convex hull
    return np.clip(out, np.minimum(original, augmented), np.maximum(original, augmented))


def image_aware_stages(img, rng, cfg=ChainConfig(), policy=None):
    """Return ``(I_aug, I_mix)`` for one image.

    The chain is sampled even when the ratio coin skips the image, so the
    stream position never depends on the outcome.
    """
    img = check_image(img)
    if policy is None:
        policy = sample_chain(rng, cfg)
    use = rng.random() < cfg.ratio
    if not use:
        return img, img
    aug = apply_chain(img, policy, cfg)
    if not cfg.mix:
        return aug, aug
    return aug, mix(img, aug, policy.alpha)


def image_aware_augment(img, rng, cfg=ChainConfig(), policy=None):
    return image_aware_stages(img, rng, cfg, policy)[1]
