"""Local embedding geometry: regions, element-wise local addition, ground
truth location maps, region extraction from predicted maps, and cropping.

Regions are axis-aligned squares of side cover_side/omega. Pixels outside a
region are never touched by local_add, which is what makes the hiding of
disjoint secrets independent.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class OvercrowdedError(RuntimeError):
    """Random placement could not find disjoint regions; use grid mode."""


@dataclass(frozen=True, order=True)
class Region:
    top: int
    left: int
    side: int

    def __post_init__(self):
        if self.side < 1 or self.top < 0 or self.left < 0:
            raise ValueError(f"invalid region {self}")

    def slices(self):
        return slice(self.top, self.top + self.side), slice(self.left, self.left + self.side)

    def check_bounds(self, height, width=None):
        width = height if width is None else width
        if self.top + self.side > height or self.left + self.side > width:
            raise ValueError(f"region {self} exceeds {height}x{width} bounds")

    def overlaps(self, other):
        return not (
            self.top + self.side <= other.top
            or other.top + other.side <= self.top
            or self.left + self.side <= other.left
            or other.left + other.side <= self.left
        )


def grid_cells(cover_side, omega):
    """The omega x omega partition of a cover into code-sized cells, row-major."""
    if cover_side % omega:
        raise ValueError(f"cover side {cover_side} not divisible by omega {omega}")
    s = cover_side // omega
    return [Region(i * s, j * s, s) for i in range(omega) for j in range(omega)]


def sample_regions(n, cover_side, omega, rng, mode="random"):
    """Sample n pairwise-disjoint code-sized regions inside a cover.

    random mode draws uniform positions, rejecting overlaps (fails after 1000
    attempts); grid mode returns a random selection of distinct grid cells.
    """
    if n < 1:
        raise ValueError("need at least one region")
    side = cover_side // omega
    if cover_side % omega:
        raise ValueError(f"cover side {cover_side} not divisible by omega {omega}")
    if mode == "grid":
        cells = grid_cells(cover_side, omega)
        if n > len(cells):
            raise ValueError(f"at most {omega}**2 = {len(cells)} regions in grid mode")
        picks = rng.permutation(len(cells))[:n]
        return [cells[i] for i in picks]
    if mode == "random":
        regions = []
        hi = cover_side - side + 1
        for _ in range(1000):
            cand = Region(int(rng.integers(0, hi)), int(rng.integers(0, hi)), side)
            if not any(cand.overlaps(r) for r in regions):
                regions.append(cand)
                if len(regions) == n:
                    return regions
        raise OvercrowdedError(
            f"could not place {n} disjoint regions after 1000 attempts; use grid mode"
        )
    raise ValueError(f"unknown placement mode {mode!r}")


def texture_regions(cover, n, omega):
    """The n grid cells with the highest pixel variance (stand-in for a
    perceptual sensitivity model: busy texture hides the code best)."""
    cover = np.asarray(cover)
    cells = grid_cells(cover.shape[0], omega)
    variances = [float(cover[r.slices()].var()) for r in cells]
    order = sorted(range(len(cells)), key=lambda i: (-variances[i], i))
    return [cells[i] for i in order[:n]]


def local_add(cover, code, region):
    """Add a code into one region of the cover, clamped to [0,1].

    Every pixel outside the region is bit-identical to the cover.
    """
    cover = np.asarray(cover)
    code = np.asarray(code)
    region.check_bounds(cover.shape[0], cover.shape[1])
    if code.shape[:2] != (region.side, region.side):
        raise ValueError(f"code shape {code.shape} does not match region side {region.side}")
    out = cover.copy()
    sl = region.slices()
    out[sl] = np.clip(cover[sl] + code, 0.0, 1.0)
    return out


def crop(img, region):
    """Extract the exact sub-tensor of a region (copy, bit-identical pixels)."""
    img = np.asarray(img)
    region.check_bounds(img.shape[0], img.shape[1])
    return img[region.slices()].copy()


def make_ground_truth_map(regions, side):
    """Hard {0,1} map with ones exactly at the pixels of the given regions."""
    out = np.zeros((side, side), dtype=np.float64)
    for r in regions:
        r.check_bounds(side)
        sl = r.slices()
        if out[sl].any():
            raise ValueError(f"region {r} overlaps a previous region")
        out[sl] = 1.0
    return out


def extract_regions(map_, omega, threshold=0.5):
    """Grid-scan decision rule: report each grid cell whose mean map value
    exceeds the threshold, sorted row-major."""
    map_ = np.asarray(map_)
    if map_.ndim != 2 or map_.shape[0] != map_.shape[1]:
        raise ValueError(f"expected a square 2-d map, got shape {map_.shape}")
    return [r for r in grid_cells(map_.shape[0], omega) if map_[r.slices()].mean() > threshold]


def save_regions(regions, path):
    """One region per line: 'top left side'."""
    Path(path).write_text("".join(f"{r.top} {r.left} {r.side}\n" for r in regions))


def load_regions(path):
    regions = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            top, left, side = (int(v) for v in line.split())
            regions.append(Region(top, left, side))
    return regions
