"""Image quality metrics: APD, MSE, PSNR, SSIM, and locating IoU.

APD is reported on the 0-255 scale; PSNR uses MAX=1 on [0,1] images. All
metrics are symmetric and computed in double precision.
"""

import math
from dataclasses import dataclass

import numpy as np

SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def apd(a, b):
    """Mean absolute difference over all elements, scaled to 0-255."""
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)) * 255.0)


def mse(a, b):
    """Mean squared error over all elements (on the [0,1] scale)."""
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b):
    """10*log10(1/MSE) in dB; +inf for identical images."""
    m = mse(a, b)
    if m == 0.0:
        return math.inf
    return float(10.0 * np.log10(1.0 / m))


def _gaussian_window(size, sigma):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _windowed_stats(x, win):
    # separable valid-mode correlation; window fully inside the image
    k = len(win)
    rows = x.shape[0] - k + 1
    cols = x.shape[1] - k + 1
    tmp = np.empty((rows, x.shape[1]))
    for i in range(rows):
        tmp[i] = win @ x[i : i + k]
    out = np.empty((rows, cols))
    for j in range(cols):
        out[:, j] = tmp[:, j : j + k] @ win
    return out


def _ssim_map(a, b, win):
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    mu_a = _windowed_stats(a, win)
    mu_b = _windowed_stats(b, win)
    e_aa = _windowed_stats(a * a, win)
    e_bb = _windowed_stats(b * b, win)
    e_ab = _windowed_stats(a * b, win)
    var_a = e_aa - mu_a**2
    var_b = e_bb - mu_b**2
    cov = e_ab - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, window=11, sigma=1.5, mode="windowed"):
    """Structural similarity, averaged over channels.

    mode="windowed" (default) uses local Gaussian windows on each channel;
    mode="global" evaluates the single-window formula on whole-image statistics.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        if mode == "global":
            mu_x, mu_y = x.mean(), y.mean()
            var_x, var_y = x.var(), y.var()
            cov = ((x - mu_x) * (y - mu_y)).mean()
            num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
            den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
            vals.append(num / den)
        elif mode == "windowed":
            if x.shape[0] < window or x.shape[1] < window:
                raise ValueError(f"image smaller than the {window}x{window} SSIM window")
            win = _gaussian_window(window, sigma)
            vals.append(_ssim_map(x, y, win).mean())
        else:
            raise ValueError(f"unknown ssim mode {mode!r}")
    return float(np.mean(vals))


def locating_iou(truth, pred):
    """Intersection over union of two binary maps; 1.0 when both are empty."""
    t, p = _pair(truth, pred)
    for name, m in (("truth", t), ("pred", p)):
        if not np.isin(m, (0.0, 1.0)).all():
            raise ValueError(f"{name} map is not binary")
    inter = np.logical_and(t, p).sum()
    union = np.logical_or(t, p).sum()
    if union == 0:
        return 1.0
    return float(inter / union)


@dataclass
class QualityReport:
    """Aggregated metrics for one image pair kind."""

    pair_kind: str  # "cover-stego" or "secret-revealed"
    apd: float
    psnr: float
    ssim: float

    def csv_row(self):
        p = "inf" if math.isinf(self.psnr) else f"{self.psnr:.6f}"
        return f"{self.pair_kind},{self.apd:.6f},{p},{self.ssim:.6f}"


def report_for(pair_kind, a, b):
    return QualityReport(pair_kind=pair_kind, apd=apd(a, b), psnr=psnr(a, b), ssim=ssim(a, b))
