"""Synthetic image generation for demos, smoke training, and tests.

Images are smooth random fields (cosine waves + soft blobs + light grain),
deterministic per (seed, index), so training runs are reproducible without an
external dataset.
"""

from pathlib import Path

import numpy as np

from ldh import data


def synthetic_image(side, rng):
    yy, xx = np.mgrid[0:side, 0:side] / side
    img = np.tile(rng.uniform(0.2, 0.8, 3), (side, side, 1))
    for _ in range(4):
        fx, fy = rng.uniform(0.5, 4.0, size=2)
        px, py = rng.uniform(0.0, 1.0, size=2)
        wave = np.cos(2 * np.pi * (fx * (xx + px))) * np.cos(2 * np.pi * (fy * (yy + py)))
        img += rng.uniform(0.05, 0.25) * wave[..., None] * rng.uniform(-1.0, 1.0, size=3)
    for _ in range(3):
        cy, cx = rng.uniform(0.0, 1.0, size=2)
        s = rng.uniform(0.05, 0.3)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * s * s))
        img += blob[..., None] * rng.uniform(-0.4, 0.4, size=3)
    img += rng.normal(0.0, 0.02, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synthetic_images(n, side, seed):
    return [synthetic_image(side, np.random.default_rng([seed, i])) for i in range(n)]


def make_synthetic_dataset(out_dir, n, side, seed):
    """Write n synthetic PNGs plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for i in range(n):
        name = f"img_{i:04d}.png"
        data.save_image(synthetic_image(side, np.random.default_rng([seed, i])), out_dir / name)
        names.append(name)
    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n".join(names) + "\n")
    return manifest
