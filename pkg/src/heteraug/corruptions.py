"""Sixteen common corruptions in four families, five severities each.

The parameter tables below are frozen; :func:`constants_digest` hashes them
so a generated benchmark can be tied to the exact schedule that made it.
Every filter pads by reflection (``d c b a | a b c d``).
"""
import enum
import hashlib
import io
import json
import math

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from . import _kernels
from .core import check_image, from_uint8, to_uint8

__all__ = [
    "Family",
    "Corruption",
    "SEVERITIES",
    "SEVERITY_TABLE",
    "STRENGTH",
    "IDENTICAL",
    "constants_digest",
    "severity_schedule",
    "apply_corruption",
    "parse_corruptions",
    "psnr",
]

SCHEDULE_VERSION = 1
SEVERITIES = (1, 2, 3, 4, 5)

# psnr() sentinel for identical images
IDENTICAL = math.inf


class Family(enum.Enum):
    BLUR = "blur"
    DIGITAL = "digital"
    NOISE = "noise"
    WEATHER = "weather"


class Corruption(enum.Enum):
    DEFOCUS_BLUR = "defocus_blur"
    GAUSSIAN_BLUR = "gaussian_blur"
    MOTION_BLUR = "motion_blur"
    GLASS_BLUR = "glass_blur"
    BRIGHTNESS = "brightness"
    CONTRAST = "contrast"
    SATURATE = "saturate"
    JPEG_COMPRESSION = "jpeg_compression"
    GAUSSIAN_NOISE = "gaussian_noise"
    IMPULSE_NOISE = "impulse_noise"
    SHOT_NOISE = "shot_noise"
    SPECKLE_NOISE = "speckle_noise"
    FOG = "fog"
    FROST = "frost"
    SNOW = "snow"
    SPATTER = "spatter"

    @property
    def family(self):
        return _FAMILY[self]

    @property
    def stochastic(self):
        return self not in _DETERMINISTIC


_FAMILY = {c: Family(f) for f, names in {
    "blur": ("defocus_blur", "gaussian_blur", "motion_blur", "glass_blur"),
    "digital": ("brightness", "contrast", "saturate", "jpeg_compression"),
    "noise": ("gaussian_noise", "impulse_noise", "shot_noise", "speckle_noise"),
    "weather": ("fog", "frost", "snow", "spatter"),
} .items() for c in map(Corruption, names)}

_DETERMINISTIC = frozenset({
    Corruption.DEFOCUS_BLUR, Corruption.GAUSSIAN_BLUR, Corruption.BRIGHTNESS,
    Corruption.CONTRAST, Corruption.SATURATE, Corruption.JPEG_COMPRESSION,
})


def _rows(**columns):
    keys = list(columns)
    return tuple(dict(zip(keys, vals)) for vals in zip(*columns.values()))


SEVERITY_TABLE = {
    Corruption.DEFOCUS_BLUR: _rows(radius=[1, 2, 3, 4, 6]),
    Corruption.GAUSSIAN_BLUR: _rows(sigma=[0.6, 1.0, 1.5, 2.0, 3.0]),
    Corruption.MOTION_BLUR: _rows(length=[3, 5, 7, 11, 15]),
    Corruption.GLASS_BLUR: _rows(
        sigma=[0.5, 0.6, 0.7, 0.8, 1.0],
        max_delta=[1, 1, 2, 2, 3],
        iterations=[1, 2, 2, 3, 3],
    ),
    Corruption.BRIGHTNESS: _rows(offset=[0.1, 0.2, 0.3, 0.4, 0.5]),
    Corruption.CONTRAST: _rows(factor=[0.4, 0.3, 0.2, 0.1, 0.05]),
    Corruption.SATURATE: _rows(
        scale=[1.5, 2.5, 4.0, 8.0, 20.0],
        offset=[0.0, 0.0, 0.05, 0.1, 0.1],
    ),
    Corruption.JPEG_COMPRESSION: _rows(quality=[25, 18, 15, 10, 7]),
    Corruption.GAUSSIAN_NOISE: _rows(sigma=[0.08, 0.12, 0.18, 0.26, 0.38]),
    Corruption.IMPULSE_NOISE: _rows(fraction=[0.03, 0.06, 0.09, 0.17, 0.27]),
    Corruption.SHOT_NOISE: _rows(rate=[60.0, 25.0, 12.0, 5.0, 3.0]),
    Corruption.SPECKLE_NOISE: _rows(sigma=[0.15, 0.2, 0.35, 0.45, 0.6]),
    Corruption.FOG: _rows(
        thickness=[0.3, 0.4, 0.5, 0.6, 0.7],
        decay=[2.0, 2.0, 1.7, 1.5, 1.4],
    ),
    Corruption.FROST: _rows(weight=[0.3, 0.4, 0.5, 0.6, 0.7]),
    Corruption.SNOW: _rows(
        density=[0.1, 0.15, 0.2, 0.25, 0.3],
        threshold=[0.7, 0.7, 0.65, 0.65, 0.6],
        length=[3, 5, 7, 9, 11],
        keep=[0.9, 0.85, 0.8, 0.75, 0.7],
    ),
    Corruption.SPATTER: _rows(
        threshold=[1.5, 1.2, 0.9, 0.6, 0.3],
        sigma=[2.0, 2.0, 2.0, 2.0, 2.0],
        opacity=[0.5, 0.55, 0.6, 0.65, 0.7],
    ),
}

# driving parameter per corruption and whether it grows (+1) or shrinks (-1)
STRENGTH = {
    Corruption.DEFOCUS_BLUR: ("radius", 1),
    Corruption.GAUSSIAN_BLUR: ("sigma", 1),
    Corruption.MOTION_BLUR: ("length", 1),
    Corruption.GLASS_BLUR: ("sigma", 1),
    Corruption.BRIGHTNESS: ("offset", 1),
    Corruption.CONTRAST: ("factor", -1),
    Corruption.SATURATE: ("scale", 1),
    Corruption.JPEG_COMPRESSION: ("quality", -1),
    Corruption.GAUSSIAN_NOISE: ("sigma", 1),
    Corruption.IMPULSE_NOISE: ("fraction", 1),
    Corruption.SHOT_NOISE: ("rate", -1),
    Corruption.SPECKLE_NOISE: ("sigma", 1),
    Corruption.FOG: ("thickness", 1),
    Corruption.FROST: ("weight", 1),
    Corruption.SNOW: ("density", 1),
    Corruption.SPATTER: ("threshold", -1),
}

# fixed colours for the weather layers
_FROST_TINT = np.array([0.88, 0.94, 1.0])
_WATER = np.array([0.45, 0.55, 0.68])


def constants_digest():
    """SHA-256 over the frozen schedule (and its version tag), hex encoded."""
    payload = {
        "version": SCHEDULE_VERSION,
        "table": {c.value: list(rows) for c, rows in SEVERITY_TABLE.items()},
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _check_severity(s):
    if isinstance(s, bool) or int(s) != s or not 1 <= s <= 5:
        raise ValueError(f"severity must be an integer in 1..5, got {s!r}")
    return int(s)


def severity_schedule(corruption, severity):
    """Parameters for one (corruption, severity) pair, as a fresh dict."""
    corruption = Corruption(corruption)
    return dict(SEVERITY_TABLE[corruption][_check_severity(severity) - 1])


def parse_corruptions(spec):
    """Resolve a comma-separated list of corruption or family names.

    ``None`` or ``"all"`` selects all sixteen. Order follows :class:`Corruption`.
    """
    if spec is None or spec == "all":
        return list(Corruption)
    wanted = set()
    for token in (t.strip() for t in spec.split(",")):
        if not token:
            continue
        if token in Family._value2member_map_:
            fam = Family(token)
            wanted.update(c for c in Corruption if c.family is fam)
        elif token in Corruption._value2member_map_:
            wanted.add(Corruption(token))
        else:
            valid = ", ".join(c.value for c in Corruption)
            raise ValueError(f"unknown corruption {token!r}; valid names: {valid}")
    return [c for c in Corruption if c in wanted]


# ---------------------------------------------------------------------------
# filters


def _filter_channels(img, kernel):
    return np.stack(
        [ndimage.correlate(img[..., c], kernel, mode="reflect") for c in range(img.shape[2])],
        axis=-1,
    )


def _gaussian(img, sigma):
    axes = (sigma, sigma, 0) if img.ndim == 3 else sigma
    return ndimage.gaussian_filter(img, sigma=axes, mode="reflect")


def disk_kernel(radius):
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    k = (xx ** 2 + yy ** 2 <= r * r).astype(np.float64)
    return k / k.sum()


def line_kernel(length, angle_deg):
    """Normalised anti-aliased line of ``length`` pixels through the centre."""
    length = max(int(length), 1)
    half = (length - 1) / 2.0
    size = 2 * int(math.ceil(half)) + 1
    k = np.zeros((size, size))
    c = size // 2
    theta = math.radians(angle_deg)
    dx, dy = math.cos(theta), -math.sin(theta)
    for t in np.linspace(-half, half, 4 * length + 1):
        x, y = c + t * dx, c + t * dy
        x0, y0 = int(math.floor(x)), int(math.floor(y))
        fx, fy = x - x0, y - y0
        for yy, wy in ((y0, 1 - fy), (y0 + 1, fy)):
            for xx, wx in ((x0, 1 - fx), (x0 + 1, fx)):
                if 0 <= yy < size and 0 <= xx < size:
                    k[yy, xx] += wx * wy
    return k / k.sum()


def _rgb_to_hsv(rgb):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(-1)
    minc = rgb.min(-1)
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1), 0.0)
    safe = np.where(delta > 0, delta, 1)
    rc, gc, bc = (maxc - r) / safe, (maxc - g) / safe, (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, maxc], axis=-1)


def _hsv_to_rgb(hsv):
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    i = i.astype(np.int64) % 6
    choices = [
        np.stack(c, axis=-1)
        for c in ((v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q))
    ]
    out = np.zeros(hsv.shape)
    for k, rgb in enumerate(choices):
        out = np.where((i == k)[..., None], rgb, out)
    return out


# ---------------------------------------------------------------------------
# operators; each takes (img, params, rng) and may return values outside [0, 1]


def _defocus(img, p, rng):
    return _filter_channels(img, disk_kernel(p["radius"]))


def _gaussian_blur(img, p, rng):
    return _gaussian(img, p["sigma"])


def _motion(img, p, rng):
    angle = rng.uniform(0.0, 180.0)
    return _filter_channels(img, line_kernel(p["length"], angle))


def _glass(img, p, rng):
    d, iters = p["max_delta"], p["iterations"]
    out = _gaussian(img, p["sigma"])
    h, w = img.shape[:2]
    span_y, span_x = max(h - 2 * d, 0), max(w - 2 * d, 0)
    offsets = rng.integers(-d, d + 1, size=(iters, span_y, span_x, 2))
    out = _kernels.glass_shuffle(out, offsets, d)
    return _gaussian(out, p["sigma"])


def _brightness(img, p, rng):
    return img + p["offset"]


def _contrast(img, p, rng):
    mean = img.mean(axis=(0, 1), keepdims=True)
    return (img - mean) * p["factor"] + mean


def _saturate(img, p, rng):
    hsv = _rgb_to_hsv(img)
    hsv[..., 1] = np.clip(hsv[..., 1] * p["scale"] + p["offset"], 0.0, 1.0)
    return _hsv_to_rgb(hsv)


def _jpeg(img, p, rng):
    buf = io.BytesIO()
    PILImage.fromarray(to_uint8(img)).save(buf, format="JPEG", quality=int(p["quality"]))
    buf.seek(0)
    with PILImage.open(buf) as im:
        return from_uint8(np.asarray(im.convert("RGB")))


def _gaussian_noise(img, p, rng):
    return img + rng.normal(0.0, p["sigma"], size=img.shape)


def _impulse(img, p, rng):
    h, w = img.shape[:2]
    hit = rng.random((h, w)) < p["fraction"]
    salt = rng.random((h, w)) < 0.5
    out = img.copy()
    out[hit] = np.where(salt[hit], 1.0, 0.0)[:, None]
    return out


def _shot(img, p, rng):
    lam = p["rate"]
    return rng.poisson(img * lam) / lam


def _speckle(img, p, rng):
    return img * (1.0 + rng.normal(0.0, p["sigma"], size=img.shape))


def _fog(img, p, rng):
    h, w = img.shape[:2]
    size = 1 << max(1, math.ceil(math.log2(max(h, w))))
    noise = rng.uniform(-1.0, 1.0, size=(size, size))
    haze = _kernels.plasma_fractal(noise, p["decay"])[:h, :w, None]
    t = p["thickness"]
    return img * (1.0 - t) + t * img.max() * haze


def _frost(img, p, rng):
    h, w = img.shape[:2]
    noise = rng.normal(size=(h, w))
    band = ndimage.gaussian_filter(noise, 1.0, mode="wrap") - ndimage.gaussian_filter(noise, 3.0, mode="wrap")
    angle = rng.uniform(0.0, 180.0)
    band = ndimage.correlate(band, line_kernel(5, angle), mode="wrap")
    z = band / (band.std() + 1e-12)
    crystals = np.clip((np.abs(z) - 0.5) / 1.5, 0.0, 1.0)
    layer = (0.6 + 0.4 * crystals)[..., None] * _FROST_TINT
    wgt = p["weight"]
    return (1.0 - wgt) * img + wgt * layer


def _snow(img, p, rng):
    h, w = img.shape[:2]
    flakes = rng.normal(p["density"], 0.3, size=(h, w))
    flakes[flakes < p["threshold"]] = 0.0
    flakes = np.clip(flakes, 0.0, 1.0)
    angle = rng.uniform(0.0, 180.0)
    flakes = ndimage.correlate(flakes, line_kernel(p["length"], angle), mode="reflect")
    gray = img @ np.array([0.299, 0.587, 0.114])
    keep = p["keep"]
    base = keep * img + (1.0 - keep) * np.maximum(img, (gray * 1.5 + 0.5)[..., None])
    layer = flakes + flakes[::-1, ::-1]
    return base + layer[..., None]


def _spatter(img, p, rng):
    h, w = img.shape[:2]
    field = ndimage.gaussian_filter(rng.normal(size=(h, w)), p["sigma"], mode="reflect")
    field /= field.std() + 1e-12
    mask = (field > p["threshold"]).astype(np.float64)
    mask = ndimage.gaussian_filter(mask, 0.5, mode="reflect")[..., None]
    a = p["opacity"] * mask
    return img * (1.0 - a) + a * _WATER


_OPS = {
    Corruption.DEFOCUS_BLUR: _defocus,
    Corruption.GAUSSIAN_BLUR: _gaussian_blur,
    Corruption.MOTION_BLUR: _motion,
    Corruption.GLASS_BLUR: _glass,
    Corruption.BRIGHTNESS: _brightness,
    Corruption.CONTRAST: _contrast,
    Corruption.SATURATE: _saturate,
    Corruption.JPEG_COMPRESSION: _jpeg,
    Corruption.GAUSSIAN_NOISE: _gaussian_noise,
    Corruption.IMPULSE_NOISE: _impulse,
    Corruption.SHOT_NOISE: _shot,
    Corruption.SPECKLE_NOISE: _speckle,
    Corruption.FOG: _fog,
    Corruption.FROST: _frost,
    Corruption.SNOW: _snow,
    Corruption.SPATTER: _spatter,
}


def apply_corruption(img, corruption, severity, rng=None):
    """Corrupt ``img`` at the given severity; output is clamped to [0, 1].

    ``rng`` (a ``numpy.random.Generator``) is required for stochastic
    corruptions and left untouched by deterministic ones.
    """
    img = check_image(img)
    corruption = Corruption(corruption)
    params = severity_schedule(corruption, severity)
    if corruption.stochastic and rng is None:
        raise ValueError(f"{corruption.value} is stochastic and needs an rng")
    out = _OPS[corruption](img, params, rng)
    return np.clip(out, 0.0, 1.0)


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for [0, 1] images.

    Returns :data:`IDENTICAL` (``inf``) when the images are equal.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return IDENTICAL
    return 10.0 * math.log10(1.0 / mse)
