"""Experiment harness: quality tables, robustness-under-attack tables, and the
embedding-rate-under-threshold analysis.

The evaluation path always hides into grid-aligned regions, passes the stego
through 8-bit quantization (unless disabled), locates with P, and reveals from
the extracted regions. Locating failures (extracted regions != ground truth)
are counted, and the failed image still contributes the metrics of whatever
the receiver would have revealed.
"""

import math
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ldh import data, metrics
from ldh.distortions import apply_attack
from ldh.embedding import extract_regions, local_add, make_ground_truth_map, sample_regions
from ldh.metrics import QualityReport
from ldh.networks import from_tensor, to_tensor
from ldh.training import to_batch

BITS_PER_SECRET = 24  # one full-size RGB secret per cover pixel


def embedding_rate_bpp(n_secrets):
    return n_secrets * BITS_PER_SECRET


@dataclass
class RateAnalysisConfig:
    thresholds_db: tuple = (26.0, 32.0)
    max_secrets: int = None  # defaults to omega**2
    restoration_hook: object = None  # callable(img)->img or "cmd {in} {out}"
    quantize: bool = True

    def __post_init__(self):
        if any(t <= 0 for t in self.thresholds_db):
            raise ValueError("thresholds must be positive")


@dataclass
class EvaluationResult:
    cover_stego: QualityReport
    secret_revealed: QualityReport
    locating_iou: float
    locating_failure_rate: float
    n_secrets: int
    n_images: int
    secret_slot_psnr: list = field(default_factory=list)  # mean revealed PSNR per slot


def run_restoration_hook(hook, img):
    """Apply a post-processing hook to a revealed image: either an in-process
    callable or an external command template with {in} and {out} placeholders."""
    if callable(hook):
        return data.validate_image(hook(img))
    with tempfile.TemporaryDirectory() as tmp:
        src = Path(tmp) / "in.png"
        dst = Path(tmp) / "out.png"
        data.save_image(img, src)
        cmd = [a.replace("{in}", str(src)).replace("{out}", str(dst)) for a in shlex.split(hook)]
        subprocess.run(cmd, check=True)
        return data.load_image(dst)


def _reveal_batch(r_model, stego, regions):
    if not regions:
        return []
    patches = to_batch([stego[reg.slices()] for reg in regions])
    with torch.no_grad():
        out = r_model(patches)
    return [np.clip(a, 0.0, 1.0) for a in out.permute(0, 2, 3, 1).numpy().astype(np.float32)]


def _hide_image(h_model, cover, secrets, regions):
    with torch.no_grad():
        codes = h_model(to_batch(secrets)).permute(0, 2, 3, 1).numpy().astype(np.float32)
    stego = cover
    for code, reg in zip(codes, regions):
        stego = local_add(stego, code, reg)
    return stego


def _match_regions(truth_regions, extracted):
    """Pair each ground-truth region with what the receiver would crop: the
    matching extracted cell when present, a leftover (wrong) cell otherwise,
    or None when the receiver has nothing left to reveal from."""
    extracted = list(extracted)
    matches = []
    leftovers = [e for e in extracted if e not in truth_regions]
    for reg in truth_regions:
        if reg in extracted:
            matches.append(reg)
        elif leftovers:
            matches.append(leftovers.pop(0))
        else:
            matches.append(None)
    return matches


def _pipeline_one(models, cover, secrets, rng, quantize, attack_spec, use_locating, hook):
    h, p, r = models
    side = cover.shape[0]
    omega = h.config.omega
    regions = sample_regions(len(secrets), side, omega, rng, mode="grid")
    stego = _hide_image(h, cover, secrets, regions)
    if quantize:
        stego = data.quantize(stego)
    attacked = stego
    if attack_spec is not None:
        attacked = apply_attack(attack_spec, stego, cover, rng)

    truth_map = make_ground_truth_map(regions, side)
    if use_locating:
        with torch.no_grad():
            soft = from_tensor(p(to_tensor(attacked)))
        hard = (soft > 0.5).astype(np.float64)
        extracted = extract_regions(soft, omega)
        iou = metrics.locating_iou(truth_map, hard)
        failure = sorted(extracted) != sorted(regions)
        crops = _match_regions(regions, extracted)
    else:
        iou = 1.0
        failure = False
        crops = list(regions)

    code_side = side // omega
    patch_regions = [c for c in crops if c is not None]
    revealed_list = _reveal_batch(r, attacked, patch_regions)
    revealed = []
    it = iter(revealed_list)
    for c in crops:
        revealed.append(next(it) if c is not None else np.zeros((side, side, 3), dtype=np.float32))
    if hook is not None:
        revealed = [run_restoration_hook(hook, im) for im in revealed]

    secret_rows = [
        (metrics.apd(s, rv), metrics.psnr(s, rv), metrics.ssim(s, rv))
        for s, rv in zip(secrets, revealed)
    ]
    return {
        "stego": (metrics.apd(cover, stego), metrics.psnr(cover, stego), metrics.ssim(cover, stego)),
        "secrets": secret_rows,
        "iou": iou,
        "failure": failure,
    }


def _load_side(ref, side, cache):
    key = id(ref) if isinstance(ref, np.ndarray) else ref
    if key not in cache:
        img = ref if isinstance(ref, np.ndarray) else data.load_image(ref)
        if img.shape[:2] != (side, side):
            img = data.resize(img, side, side)
        cache[key] = img
    return cache[key]


def _evaluate(models, refs, n_secrets, seed, quantize, attack_spec, use_locating, hook, cache):
    h = models[0]
    side = h.config.image_side
    refs = list(refs)
    n_img = len(refs)
    if n_img == 0:
        raise ValueError("empty test set")
    if n_secrets > h.config.omega**2:
        raise ValueError(f"at most omega**2 = {h.config.omega ** 2} secrets per cover")
    # deterministic pairing: slot k pairs covers with a fixed permutation
    slot_perms = [
        np.random.default_rng([seed, 31337, k]).permutation(n_img) for k in range(n_secrets)
    ]
    records = []
    for i in range(n_img):
        cover = _load_side(refs[i], side, cache)
        secrets = [_load_side(refs[slot_perms[k][i]], side, cache) for k in range(n_secrets)]
        rng = np.random.default_rng([seed, 11, i])
        if n_secrets == 0:
            records.append(
                {
                    "stego": (metrics.apd(cover, cover), math.inf, metrics.ssim(cover, cover)),
                    "secrets": [],
                    "iou": 1.0,
                    "failure": False,
                }
            )
            continue
        records.append(
            _pipeline_one(models, cover, secrets, rng, quantize, attack_spec, use_locating, hook)
        )

    stego_cols = np.array([rec["stego"] for rec in records], dtype=np.float64)
    secret_rows = [row for rec in records for row in rec["secrets"]]
    secret_cols = np.array(secret_rows, dtype=np.float64) if secret_rows else np.zeros((0, 3))
    slot_psnr = []
    for k in range(n_secrets):
        slot_psnr.append(float(np.mean([rec["secrets"][k][1] for rec in records])))
    return EvaluationResult(
        cover_stego=QualityReport("cover-stego", *stego_cols.mean(axis=0)),
        secret_revealed=QualityReport(
            "secret-revealed",
            *(secret_cols.mean(axis=0) if len(secret_cols) else (0.0, math.inf, 1.0)),
        ),
        locating_iou=float(np.mean([rec["iou"] for rec in records])),
        locating_failure_rate=float(np.mean([rec["failure"] for rec in records])),
        n_secrets=n_secrets,
        n_images=n_img,
        secret_slot_psnr=slot_psnr,
    )


def evaluate_quality(
    models,
    refs,
    n_secrets,
    seed,
    quantize=True,
    use_locating=True,
    restoration_hook=None,
    cache=None,
):
    """Hide -> quantize -> locate -> crop -> reveal over a test set; mean
    quality of the cover/stego and secret/revealed pairs."""
    cache = cache if cache is not None else {}
    return _evaluate(
        models, refs, n_secrets, seed, quantize, None, use_locating, restoration_hook, cache
    )


def evaluate_robustness(models, refs, attacks, seed, quantize=True, cache=None):
    """Apply each attack to the quantized stegos before locating/revealing.

    attacks is a list of DistortionSpec (None means no attack); returns a list
    of (label, EvaluationResult) in input order.
    """
    cache = cache if cache is not None else {}
    rows = []
    for spec in attacks:
        label = spec.label if spec is not None else "none"
        rows.append(
            (label, _evaluate(models, refs, 1, seed, quantize, spec, True, None, cache))
        )
    return rows


def max_embedding_rate(models, refs, config, seed, use_locating=True, cache=None):
    """Sweep n = 1..max_secrets on a fixed pairing; for each threshold report
    the largest n whose mean revealed PSNR clears it, as n*24 bpp.

    Returns (rates, sweep): rates maps threshold -> bpp, sweep is a list of
    (n, bpp, mean revealed PSNR) rows.
    """
    omega = models[0].config.omega
    max_secrets = config.max_secrets if config.max_secrets is not None else omega**2
    if max_secrets > omega**2:
        raise ValueError(f"max_secrets cannot exceed omega**2 = {omega ** 2}")
    cache = cache if cache is not None else {}
    sweep = []
    for n in range(1, max_secrets + 1):
        res = _evaluate(
            models, refs, n, seed, config.quantize, None, use_locating,
            config.restoration_hook, cache,
        )
        sweep.append((n, embedding_rate_bpp(n), res.secret_revealed.psnr))
    rates = {}
    for t in config.thresholds_db:
        passing = [n for n, _, psnr in sweep if psnr >= t]
        rates[t] = embedding_rate_bpp(max(passing)) if passing else 0
    return rates, sweep


def write_quality_csv(result, path):
    lines = ["pair_kind,apd,psnr,ssim"]
    lines.append(result.cover_stego.csv_row())
    lines.append(result.secret_revealed.csv_row())
    Path(path).write_text("\n".join(lines) + "\n")


def write_robustness_csv(rows, path):
    lines = ["attack,secret_apd,secret_psnr,secret_ssim,locating_iou,failure_rate"]
    for label, res in rows:
        s = res.secret_revealed
        p = "inf" if math.isinf(s.psnr) else f"{s.psnr:.6f}"
        lines.append(
            f"{label},{s.apd:.6f},{p},{s.ssim:.6f},"
            f"{res.locating_iou:.6f},{res.locating_failure_rate:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_rate_csv(rates, sweep, path):
    lines = ["threshold_db,bpp"]
    for t in sorted(rates):
        lines.append(f"{t:g},{rates[t]}")
    lines.append("")
    lines.append("n_secrets,bpp,secret_psnr")
    for n, bpp, psnr in sweep:
        p = "inf" if math.isinf(psnr) else f"{psnr:.6f}"
        lines.append(f"{n},{bpp},{p}")
    Path(path).write_text("\n".join(lines) + "\n")


def render_table(headers, rows):
    """Plain-text table in the shape of the paper's results tables."""
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    out = []
    for j, row in enumerate(cells):
        out.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if j == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out)


def plot_sweep(sweep, path):
    """Revealed quality vs number of embedded secrets, written as an image."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ns = [n for n, _, _ in sweep]
    psnrs = [p for _, _, p in sweep]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ns, psnrs, marker="o")
    ax.set_xlabel("embedded secret images")
    ax.set_ylabel("revealed PSNR (dB)")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
