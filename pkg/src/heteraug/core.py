"""Image/label containers, seeded random streams and PNG I/O.

Images are ``float64`` numpy arrays of shape ``(H, W, 3)``, channel-interleaved
(HWC), with every value in [0, 1]. Label maps are integer arrays of shape
``(H, W)``. Quantisation to 8 bits happens only at file boundaries and uses
round-half-up: ``byte = floor(v * 255 + 0.5)``.
"""
import hashlib
import os
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

__all__ = [
    "ImageIOError",
    "check_image",
    "check_labels",
    "derive_rng",
    "load_image",
    "save_image",
    "load_labels",
    "save_labels",
    "to_uint8",
    "from_uint8",
]


class ImageIOError(OSError):
    """Raised when an image or label file cannot be read or written."""


def check_image(img):
    """Validate an image array and return it as float64.

    Raises:
        ValueError: wrong shape or values outside [0, 1].
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return img


def check_labels(labels, num_classes=None, shape=None):
    labels = np.asarray(labels)
    if labels.ndim != 2 or not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"expected an (H, W) integer label map, got {labels.dtype} {labels.shape}")
    if shape is not None and labels.shape != tuple(shape):
        raise ValueError(f"label map shape {labels.shape} does not match image {tuple(shape)}")
    if labels.size and labels.min() < 0:
        raise ValueError("negative class id in label map")
    if num_classes is not None and labels.size and labels.max() >= num_classes:
        raise ValueError(f"class id {labels.max()} >= num_classes {num_classes}")
    return labels


# ---------------------------------------------------------------------------
# randomness


def _label_bytes(label):
    if isinstance(label, (bool, np.bool_)):
        raise TypeError("boolean stream labels are ambiguous; use str or int")
    if isinstance(label, (int, np.integer)):
        return b"i" + str(int(label)).encode()
    if isinstance(label, str):
        return b"s" + label.encode("utf-8")
    raise TypeError(f"stream labels must be str or int, got {type(label).__name__}")


def derive_rng(master_seed, labels=()):
    """Return an independent random stream keyed by ``(master_seed, labels)``.

    The key is a BLAKE2b digest of the seed and the length-prefixed labels, fed
    to numpy's counter-based Philox generator. Same inputs give the same stream
    on every platform; any change in the label path gives an unrelated stream.

    >>> a = derive_rng(7, ["img0", "gauss", 1]).random(3)
    >>> b = derive_rng(7, ["img0", "gauss", 1]).random(3)
    >>> bool((a == b).all())
    True
    """
    h = hashlib.blake2b(digest_size=16, person=b"heteraug-rng")
    h.update(int(master_seed).to_bytes(8, "little", signed=int(master_seed) < 0))
    for label in labels:
        part = _label_bytes(label)
        h.update(len(part).to_bytes(4, "little"))
        h.update(part)
    key = int.from_bytes(h.digest(), "little")
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# file I/O


def to_uint8(img):
    img = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1] before quantisation")
    return np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)


def from_uint8(arr):
    return np.asarray(arr, dtype=np.float64) / 255.0


def load_image(path):
    """Read an 8-bit PNG (or PPM) as an ``(H, W, 3)`` float image in [0, 1].

    Grayscale files are replicated to three channels; an alpha channel is
    dropped.
    """
    path = Path(path)
    if not path.is_file():
        raise ImageIOError(f"{path}: no such file")
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I", "F"):
                raise ImageIOError(f"{path}: unsupported bit depth (mode {mode})")
            if mode == "1" or mode == "L" or mode == "LA":
                arr = np.asarray(im.convert("L"))
                arr = np.repeat(arr[:, :, None], 3, axis=2)
            elif mode in ("RGB", "RGBA", "P", "PA"):
                arr = np.asarray(im.convert("RGB"))
            else:
                raise ImageIOError(f"{path}: unsupported image mode {mode}")
    except ImageIOError:
        raise
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageIOError(f"{path}: cannot decode image ({exc})") from exc
    return from_uint8(arr)


def save_image(img, path):
    """Write an image as 8-bit RGB PNG, creating parent directories.

    Raises:
        ValueError: values outside [0, 1] (no silent clamping).
        ImageIOError: the file cannot be written.
    """
    data = to_uint8(check_image(img))
    _write_png(PILImage.fromarray(data), path)


def _write_png(pil_img, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        pil_img.save(path, format="PNG", compress_level=6)
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot write ({exc})") from exc


def save_labels(labels, path):
    """Write a label map as 8-bit gray PNG, or 16-bit when ids exceed 255."""
    labels = check_labels(labels)
    if labels.size and labels.max() > 65535:
        raise ValueError("class ids above 65535 cannot be stored in PNG")
    if labels.size == 0 or labels.max() <= 255:
        pil = PILImage.fromarray(labels.astype(np.uint8))
    else:
        pil = PILImage.fromarray(labels.astype("<u2"))
    _write_png(pil, path)


def load_labels(path):
    path = Path(path)
    if not path.is_file():
        raise ImageIOError(f"{path}: no such file")
    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode in ("L", "P", "I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im)
            else:
                raise ImageIOError(f"{path}: label maps must be single-channel (got {im.mode})")
    except ImageIOError:
        raise
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageIOError(f"{path}: cannot decode label map ({exc})") from exc
    return arr.astype(np.int64)


def resolve_threads(threads=None):
    """Worker cap: explicit value, else ``HETERAUG_THREADS``, else CPU count."""
    if threads is None:
        env = os.environ.get("HETERAUG_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))
