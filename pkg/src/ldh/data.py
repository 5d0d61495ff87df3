"""Image I/O, resizing, 8-bit quantization, and dataset splits.

Images are numpy arrays of shape (H, W, 3), float values in [0, 1]. The
canonical stego serialization is lossless 8-bit RGB PNG where the stored byte
is round(v * 255), halves rounded away from zero.
"""

import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError


def validate_image(img):
    """Raise ValueError unless img is an (H, W, 3) float array in [0, 1]."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        raise ValueError(f"expected float image, got dtype {arr.dtype}")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("image values must lie in [0, 1]")
    return arr


def load_image(path):
    """Load an 8-bit RGB image file as an (H, W, 3) float32 array in [0, 1].

    Grayscale inputs are replicated to 3 channels with a warning. Other modes
    (palette, RGBA, ...) are rejected.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image file: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "L":
                warnings.warn(f"{path}: grayscale input replicated to 3 channels")
                im = im.convert("RGB")
            elif mode != "RGB":
                raise ValueError(f"{path}: unsupported image mode {mode!r} (need RGB or L)")
            arr = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as e:
        raise ValueError(f"{path}: not a decodable image") from e
    return (arr.astype(np.float32) / 255.0).reshape(arr.shape[0], arr.shape[1], 3)


def _to_bytes(img):
    # round half away from zero; exact for values that are multiples of 1/255
    arr = validate_image(img).astype(np.float64)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def save_image(img, path):
    """Write an image as lossless 8-bit RGB PNG, stored byte = round(v * 255)."""
    path = Path(path)
    Image.fromarray(_to_bytes(img), mode="RGB").save(path, format="PNG")


def quantize(img):
    """8-bit round trip without touching disk; identical to save_image + load_image."""
    return (_to_bytes(img).astype(np.float32) / 255.0).astype(np.asarray(img).dtype)


def resize(img, h, w):
    """Bilinear resize to h x w (half-pixel centers, edges clamped).

    Exact identity when the size is unchanged; constant images stay constant.
    """
    if h < 1 or w < 1:
        raise ValueError("target size must be at least 1x1")
    arr = validate_image(img)
    if arr.shape[0] == h and arr.shape[1] == w:
        return arr.copy()
    out = _interp_axis(arr, h, axis=0)
    out = _interp_axis(out, w, axis=1)
    return np.clip(out, 0.0, 1.0).astype(arr.dtype)


def _interp_axis(arr, n_out, axis):
    n_in = arr.shape[axis]
    x = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    x0 = np.floor(x)
    f = (x - x0).astype(arr.dtype)
    i0 = np.clip(x0, 0, n_in - 1).astype(np.intp)
    i1 = np.clip(x0 + 1, 0, n_in - 1).astype(np.intp)
    a = np.take(arr, i0, axis=axis)
    b = np.take(arr, i1, axis=axis)
    shape = [1, 1, 1]
    shape[axis] = n_out
    # a + f*(b - a) keeps constants bit-exact
    return a + f.reshape(shape) * (b - a)


@dataclass
class DatasetSplit:
    """Disjoint train/val/test reference lists; a pure function of (refs, seed)."""

    train: list
    val: list
    test: list
    seed: int = 0

    def __post_init__(self):
        try:
            parts = set(self.train), set(self.val), set(self.test)
        except TypeError:
            return  # unhashable refs (e.g. raw arrays): caller's responsibility
        if parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2]:
            raise ValueError("split parts must be disjoint")


def split_dataset(refs, seed, ratios=(0.8, 0.1, 0.1)):
    """Shuffle refs with the seed and split by ratios (floor sizes, remainder to train)."""
    refs = list(refs)
    if not refs:
        raise ValueError("cannot split an empty reference list")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(refs))
    shuffled = [refs[i] for i in order]
    n = len(refs)
    n_val = int(np.floor(n * ratios[1]))
    n_test = int(np.floor(n * ratios[2]))
    n_train = n - n_val - n_test
    return DatasetSplit(
        train=shuffled[:n_train],
        val=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
        seed=seed,
    )


def read_manifest(path):
    """Read a newline-delimited manifest of image paths, resolved against its directory."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such manifest: {path}")
    base = path.parent
    refs = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line:
            p = Path(line)
            refs.append(str(p if p.is_absolute() else base / p))
    return refs


def write_manifest(refs, path):
    """Write image paths, one per line, relative to the manifest directory when possible."""
    path = Path(path)
    lines = []
    for r in refs:
        try:
            lines.append(str(Path(r).relative_to(path.parent)))
        except ValueError:
            lines.append(str(r))
    path.write_text("\n".join(lines) + "\n")
