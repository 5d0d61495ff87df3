"""Noise layers for adversarial training and attack operators for evaluation.

Every distortion maps valid [0,1] images to valid [0,1] images. The torch
variants (suffix _t, batched CHW tensors) are differentiable and used as noise
layers during training; the array functions are the public single-image API.
Training-time JPEG uses soft rounding; the attack path uses the true-rounding
codec so evaluation reflects a real codec.
"""

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from ldh.jpeg import jpeg_codec_t
from ldh.networks import from_tensor, to_tensor

NOISE_KINDS = ("dropout", "gaussian", "jpeg")
ATTACK_KINDS = NOISE_KINDS + ("crop", "cropout")

DEFAULT_DROPOUT_P = 0.3
DEFAULT_GAUSSIAN_KERNEL = 5
DEFAULT_GAUSSIAN_SIGMA = 1.0
DEFAULT_JPEG_QUALITY = 80
DEFAULT_ATTACK_GRID = 4


def dropout_noise_t(stego, cover, p, rng):
    """Replace each pixel (all channels) of stego by the cover pixel with
    probability p; gradients flow through the kept stego pixels."""
    if stego.shape != cover.shape:
        raise ValueError(f"shape mismatch: {tuple(stego.shape)} vs {tuple(cover.shape)}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"dropout probability must be in [0,1], got {p}")
    b, _, h, w = stego.shape
    keep = torch.from_numpy((rng.random((b, 1, h, w)) >= p).astype(np.float32))
    keep = keep.to(stego.dtype)
    return keep * stego + (1.0 - keep) * cover


def _gaussian_kernel1d(size, sigma, dtype):
    x = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g = torch.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _pad_symmetric(x, pad):
    x = torch.cat([x[..., :pad].flip(-1), x, x[..., -pad:].flip(-1)], dim=-1)
    x = torch.cat([x[..., :pad, :].flip(-2), x, x[..., -pad:, :].flip(-2)], dim=-2)
    return x


def gaussian_blur_t(img, kernel=DEFAULT_GAUSSIAN_KERNEL, sigma=DEFAULT_GAUSSIAN_SIGMA):
    """Per-channel convolution with a normalized Gaussian, symmetric padding
    (edge-inclusive reflection, which preserves the image mean exactly)."""
    if kernel % 2 == 0 or kernel < 1:
        raise ValueError(f"kernel size must be odd, got {kernel}")
    c = img.shape[1]
    k = _gaussian_kernel1d(kernel, sigma, img.dtype)
    pad = kernel // 2
    x = _pad_symmetric(img, pad)
    x = F.conv2d(x, k.view(1, 1, 1, kernel).expand(c, 1, 1, kernel), groups=c)
    x = F.conv2d(x, k.view(1, 1, kernel, 1).expand(c, 1, kernel, 1), groups=c)
    return x.clamp(0.0, 1.0)


def jpeg_approx_t(img, quality=DEFAULT_JPEG_QUALITY):
    """Differentiable JPEG: soft rounding in the quantization step."""
    return jpeg_codec_t(img, quality, hard=False)


def jpeg_true_t(img, quality=DEFAULT_JPEG_QUALITY):
    """True-rounding JPEG round trip (what a real codec does to pixels)."""
    return jpeg_codec_t(img, quality, hard=True)


def dropout_noise(stego, cover, p, rng):
    stego = np.asarray(stego)
    cover = np.asarray(cover)
    if stego.shape != cover.shape:
        raise ValueError(f"shape mismatch: {stego.shape} vs {cover.shape}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"dropout probability must be in [0,1], got {p}")
    replace = rng.random(stego.shape[:2]) < p
    out = stego.copy()
    out[replace] = cover[replace]
    return out


def gaussian_blur(img, kernel=DEFAULT_GAUSSIAN_KERNEL, sigma=DEFAULT_GAUSSIAN_SIGMA):
    img = np.asarray(img)
    t = torch.from_numpy(np.ascontiguousarray(img)).permute(2, 0, 1).unsqueeze(0)
    out = gaussian_blur_t(t, kernel, sigma)
    return out.squeeze(0).permute(1, 2, 0).numpy().astype(img.dtype)


def jpeg_approx(img, quality=DEFAULT_JPEG_QUALITY):
    return from_tensor(jpeg_approx_t(to_tensor(img), quality))


def jpeg_true(img, quality=DEFAULT_JPEG_QUALITY):
    return from_tensor(jpeg_true_t(to_tensor(img), quality))


def attack_blocks(side, grid=DEFAULT_ATTACK_GRID):
    """Block side length for a grid x grid attack tiling."""
    if side % grid:
        raise ValueError(f"image side {side} not divisible by attack grid {grid}")
    return side // grid


def crop_attack(stego, cover, block_indices, mode, grid=DEFAULT_ATTACK_GRID):
    """Erase grid blocks from the stego: fill with zeros (Crop) or with the
    cover content (Cropout). Untouched pixels are bit-identical."""
    stego = np.asarray(stego)
    cover = np.asarray(cover)
    if mode not in ("crop", "cropout"):
        raise ValueError(f"mode must be 'crop' or 'cropout', got {mode!r}")
    if mode == "cropout" and stego.shape != cover.shape:
        raise ValueError(f"shape mismatch: {stego.shape} vs {cover.shape}")
    bs = attack_blocks(stego.shape[0], grid)
    if stego.shape[1] % grid:
        raise ValueError(f"image width {stego.shape[1]} not divisible by grid {grid}")
    out = stego.copy()
    for idx in block_indices:
        if not 0 <= idx < grid * grid:
            raise ValueError(f"block index {idx} out of range for a {grid}x{grid} grid")
        i, j = divmod(int(idx), grid)
        sl = (slice(i * bs, (i + 1) * bs), slice(j * bs, (j + 1) * bs))
        out[sl] = 0.0 if mode == "crop" else cover[sl]
    return out


@dataclass(frozen=True)
class DistortionSpec:
    """One distortion with its parameters, e.g. from a CLI string like
    'jpeg:q=80', 'dropout:p=0.3', 'gaussian:k=5,sigma=1.0',
    'crop:blocks=3,7' or 'cropout:n=2' (n random blocks)."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}")
        p = self.params
        if self.kind == "dropout" and not 0.0 <= p.get("p", DEFAULT_DROPOUT_P) <= 1.0:
            raise ValueError("dropout p must be in [0,1]")
        if self.kind == "gaussian" and p.get("k", DEFAULT_GAUSSIAN_KERNEL) % 2 == 0:
            raise ValueError("gaussian kernel must be odd")
        if self.kind == "jpeg" and not 1 <= p.get("q", DEFAULT_JPEG_QUALITY) <= 100:
            raise ValueError("jpeg quality must be in 1..100")

    @property
    def label(self):
        if self.kind in ("crop", "cropout"):
            n = self.params.get("n", len(self.params.get("blocks", ())))
            return f"{self.kind}-{n}"
        return self.kind

    @staticmethod
    def parse(text):
        kind, _, rest = text.partition(":")
        params = {}
        if rest:
            for item in rest.split(","):
                key, _, val = item.partition("=")
                if not val:
                    raise ValueError(f"malformed distortion parameter {item!r} in {text!r}")
                if key == "blocks":
                    params.setdefault("blocks", []).append(int(val))
                elif key in ("n", "q", "k", "grid"):
                    params[key] = int(val)
                elif key in ("p", "sigma"):
                    params[key] = float(val)
                else:
                    raise ValueError(f"unknown distortion parameter {key!r} in {text!r}")
        if "blocks" in params:
            params["blocks"] = tuple(params["blocks"])
        return DistortionSpec(kind.strip(), params)


def apply_attack(spec, stego, cover, rng):
    """Apply an attack to one stego image (evaluation path: true JPEG)."""
    p = spec.params
    if spec.kind == "dropout":
        return dropout_noise(stego, cover, p.get("p", DEFAULT_DROPOUT_P), rng)
    if spec.kind == "gaussian":
        return gaussian_blur(
            stego, p.get("k", DEFAULT_GAUSSIAN_KERNEL), p.get("sigma", DEFAULT_GAUSSIAN_SIGMA)
        )
    if spec.kind == "jpeg":
        return jpeg_true(stego, p.get("q", DEFAULT_JPEG_QUALITY))
    grid = p.get("grid", DEFAULT_ATTACK_GRID)
    if "blocks" in p:
        blocks = p["blocks"]
    else:
        blocks = rng.choice(grid * grid, size=p.get("n", 1), replace=False)
    return crop_attack(stego, cover, blocks, spec.kind, grid)


def make_noise_layer(kind):
    """Training-time noise layer: (stego_t, cover_t, rng) -> distorted stego_t."""
    if kind == "dropout":
        return lambda s, c, rng: dropout_noise_t(s, c, DEFAULT_DROPOUT_P, rng)
    if kind == "gaussian":
        return lambda s, c, rng: gaussian_blur_t(s)
    if kind == "jpeg":
        return lambda s, c, rng: jpeg_approx_t(s)
    raise ValueError(f"unknown noise layer kind {kind!r}")
