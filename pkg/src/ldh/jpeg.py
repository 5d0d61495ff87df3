"""JPEG compression as a torch pipeline: color transform, 8x8 block DCT,
quality-scaled quantization, inverse transform.

Two rounding modes share the pipeline: soft rounding r(x) = x - sin(2*pi*x)/(2*pi)
keeps everything differentiable for adversarial training; hard rounding plus a
final 8-bit quantization reproduces what a real codec does to pixel data
(entropy coding is lossless and therefore skipped). Chroma is not subsampled.
"""

import math

import numpy as np
import torch

# Annex-K base quantization tables (luminance, chrominance).
QT_LUMA = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)
QT_CHROMA = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.float64,
)


def quality_tables(quality):
    """Quality-scaled integer quantization tables (IJG convention)."""
    if not 1 <= quality <= 100:
        raise ValueError(f"JPEG quality must be in 1..100, got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    tables = []
    for base in (QT_LUMA, QT_CHROMA):
        t = np.floor((base * scale + 50.0) / 100.0)
        tables.append(np.clip(t, 1.0, 255.0))
    return tables[0], tables[1]


def _dct_matrix(dtype, device):
    u = torch.arange(8, dtype=dtype, device=device).unsqueeze(1)
    x = torch.arange(8, dtype=dtype, device=device).unsqueeze(0)
    a = torch.cos((2 * x + 1) * u * math.pi / 16.0)
    a = a * math.sqrt(2.0 / 8.0)
    a[0] = math.sqrt(1.0 / 8.0)
    return a


def _blockify(x):
    # (B, H, W) -> (B, N, 8, 8)
    b, h, w = x.shape
    return x.view(b, h // 8, 8, w // 8, 8).permute(0, 1, 3, 2, 4).reshape(b, -1, 8, 8)


def _unblockify(x, h, w):
    b = x.shape[0]
    return x.view(b, h // 8, w // 8, 8, 8).permute(0, 1, 3, 2, 4).reshape(b, h, w)


SOFT_ROUND_TAU = 0.99


def soft_round(x, tau=SOFT_ROUND_TAU):
    """Smooth staircase approximation of round.

    r(x) = x - atan(tau*sin(2*pi*x) / (1 + tau*cos(2*pi*x))) / pi is infinitely
    differentiable for tau < 1 and converges to exact rounding as tau -> 1;
    its small-tau expansion is the familiar x - tau*sin(2*pi*x)/pi surrogate.
    tau = 0.99 keeps the codec within ~2 APD of a real integer codec while
    leaving nonzero gradients everywhere.
    """
    angle = 2.0 * math.pi * x
    return x - torch.atan2(tau * torch.sin(angle), 1.0 + tau * torch.cos(angle)) / math.pi


def rgb_to_ycbcr(x255):
    r, g, b = x255[:, 0], x255[:, 1], x255[:, 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return torch.stack([y, cb, cr], dim=1)


def ycbcr_to_rgb(x):
    y = x[:, 0]
    cb = x[:, 1] - 128.0
    cr = x[:, 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return torch.stack([r, g, b], dim=1)


def jpeg_codec_t(x, quality, hard):
    """JPEG round trip on a (B, 3, H, W) tensor in [0,1]; sides must be
    multiples of 8. hard=True uses true rounding and 8-bit output."""
    if x.dim() != 4 or x.shape[1] != 3:
        raise ValueError(f"expected (B, 3, H, W), got {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h % 8 or w % 8:
        raise ValueError(f"image sides must be multiples of 8, got {h}x{w}")
    dtype, device = x.dtype, x.device
    qt_y, qt_c = quality_tables(quality)
    qts = (qt_y, qt_c, qt_c)
    dct = _dct_matrix(dtype, device)
    rounder = torch.round if hard else soft_round
    # codecs store integer YCbCr samples before the transform
    ycc = rounder(rgb_to_ycbcr(x * 255.0))
    if hard:
        ycc = ycc.clamp(0.0, 255.0)
    chans = []
    for c in range(3):
        qt = torch.as_tensor(qts[c], dtype=dtype, device=device)
        blocks = _blockify(ycc[:, c]) - 128.0
        coef = dct @ blocks @ dct.T
        coef = rounder(coef / qt) * qt
        rec = dct.T @ coef @ dct + 128.0
        chans.append(_unblockify(rec, h, w))
    out = ycbcr_to_rgb(torch.stack(chans, dim=1)) / 255.0
    out = out.clamp(0.0, 1.0)
    if hard:
        out = torch.round(out * 255.0) / 255.0
    return out
