"""Two-stage training: pre-train H and R with ground-truth crops, then co-train
with the locating network.

All stochasticity (shuffles, region placement, noise masks) is derived from
(seed, epoch), so a run is reproducible and a checkpoint written at an epoch
boundary resumes exactly.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ldh import data, metrics
from ldh.distortions import NOISE_KINDS, make_noise_layer
from ldh.embedding import Region, make_ground_truth_map, sample_regions
from ldh.losses import LossWeights, hiding_loss, locating_loss, revealing_loss, total_loss
from ldh.networks import save_checkpoint

HISTORY_COLUMNS = [
    "epoch",
    "phase",
    "lr",
    "loss_total",
    "loss_hide",
    "loss_locate",
    "loss_reveal",
    "val_stego_apd",
    "val_stego_psnr",
    "val_stego_ssim",
    "val_secret_apd",
    "val_secret_psnr",
    "val_secret_ssim",
    "val_iou",
]


@dataclass
class TrainingSchedule:
    """Loss weights, phase lengths, and optimizer settings (paper defaults)."""

    pretrain_epochs: int = 60
    cotrain_epochs: int = 30
    pretrain_weights: LossWeights = LossWeights(0.25, 0.0, 0.75)
    cotrain_weights: LossWeights = LossWeights(0.1, 0.8, 0.1)
    lr0: float = 1e-3
    lr_decay: float = 0.1
    lr_step_epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    p_hide: int = 1
    p_locate: int = 2
    p_reveal: int = 1

    def __post_init__(self):
        if self.pretrain_weights.lambda2 != 0.0:
            raise ValueError("pre-training must not weight the locating loss")

    @property
    def total_epochs(self):
        return self.pretrain_epochs + self.cotrain_epochs

    def phase_at(self, epoch):
        return "pretrain" if epoch < self.pretrain_epochs else "cotrain"

    def weights_at(self, epoch):
        return self.pretrain_weights if epoch < self.pretrain_epochs else self.cotrain_weights

    def lr_at(self, epoch):
        return self.lr0 * self.lr_decay ** (epoch // self.lr_step_epochs)


def to_batch(images):
    """List of (H, W, 3) arrays -> (B, 3, H, W) float32 tensor."""
    arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


def local_add_batch(covers, codes, regions):
    """Differentiable per-sample local addition, clamped to [0,1]."""
    stego = covers.clone()
    for i, r in enumerate(regions):
        rs, cs = r.slices()
        stego[i, :, rs, cs] = (covers[i, :, rs, cs] + codes[i]).clamp(0.0, 1.0)
    return stego


def crop_batch(x, regions):
    return torch.stack([x[i, :, r.slices()[0], r.slices()[1]] for i, r in enumerate(regions)])


def maps_batch(regions, side, dtype=torch.float32):
    maps = np.stack([make_ground_truth_map([r], side) for r in regions])
    return torch.from_numpy(maps).unsqueeze(1).to(dtype)


def train_step(models, optimizer, batch, phase, schedule, noise_layer=None, rng=None):
    """One gradient update of all three networks on the weighted total loss.

    Pre-training never touches P (its loss is skipped entirely); both phases
    crop with the ground-truth regions for the revealing loss.
    """
    h, p, r = models
    secrets, covers = batch
    if secrets.shape != covers.shape:
        raise ValueError(f"secret/cover shape mismatch: {secrets.shape} vs {covers.shape}")
    rng = rng if rng is not None else np.random.default_rng(schedule.seed)
    side = covers.shape[-1]
    omega = h.config.omega

    codes = h(secrets)
    regions = [sample_regions(1, side, omega, rng)[0] for _ in range(covers.shape[0])]
    stego = local_add_batch(covers, codes, regions)
    noised = noise_layer(stego, covers, rng) if noise_layer is not None else stego

    lh = hiding_loss(covers, stego, schedule.p_hide)
    if phase == "cotrain":
        truth = maps_batch(regions, side, covers.dtype)
        lp = locating_loss(truth, p(noised), schedule.p_locate)
    elif phase == "pretrain":
        lp = None
    else:
        raise ValueError(f"unknown phase {phase!r}")
    revealed = r(crop_batch(noised, regions))
    lrv = revealing_loss(secrets, revealed, schedule.p_reveal)

    weights = schedule.pretrain_weights if phase == "pretrain" else schedule.cotrain_weights
    lt = total_loss(lh, lp if lp is not None else torch.zeros(()), lrv, weights)
    if not torch.isfinite(lt):
        raise RuntimeError(f"training diverged: non-finite loss {float(lt)} in {phase}")

    optimizer.zero_grad(set_to_none=True)
    lt.backward()
    optimizer.step()
    return {
        "loss_total": float(lt),
        "loss_hide": float(lh),
        "loss_locate": float(lp) if lp is not None else math.nan,
        "loss_reveal": float(lrv),
    }


def _load_ref(ref, side, cache):
    key = id(ref) if isinstance(ref, np.ndarray) else ref
    if key in cache:
        return cache[key]
    img = ref if isinstance(ref, np.ndarray) else data.load_image(ref)
    if img.shape[:2] != (side, side):
        img = data.resize(img, side, side)
    cache[key] = img
    return img


def validate(models, val_refs, schedule, epoch, cache=None):
    """Per-epoch validation: hide into random regions, quantize, then score
    stego quality, ground-truth-crop reveals, and the predicted-map IoU."""
    h, p, r = models
    side = h.config.image_side
    cache = cache if cache is not None else {}
    rng = np.random.default_rng([schedule.seed, 104729, epoch])
    n = len(val_refs)
    pairing = rng.permutation(n)
    rows = []
    with torch.no_grad():
        for start in range(0, n, schedule.batch_size):
            idx = range(start, min(start + schedule.batch_size, n))
            covers_np = [_load_ref(val_refs[i], side, cache) for i in idx]
            secrets_np = [_load_ref(val_refs[pairing[i]], side, cache) for i in idx]
            covers = to_batch(covers_np)
            secrets = to_batch(secrets_np)
            codes = h(secrets)
            regions = [sample_regions(1, side, h.config.omega, rng)[0] for _ in idx]
            stego = local_add_batch(covers, codes, regions)
            stego_q = to_batch([data.quantize(im) for im in _to_images(stego)])
            pred_maps = p(stego_q)
            revealed = r(crop_batch(stego_q, regions))
            for k, (cov, sec) in enumerate(zip(covers_np, secrets_np)):
                st = _to_images(stego_q[k : k + 1])[0]
                rv = _to_images(revealed[k : k + 1])[0]
                truth = make_ground_truth_map([regions[k]], side)
                hard = (pred_maps[k, 0].numpy() > 0.5).astype(np.float64)
                rows.append(
                    {
                        "stego_apd": metrics.apd(cov, st),
                        "stego_psnr": metrics.psnr(cov, st),
                        "stego_ssim": metrics.ssim(cov, st),
                        "secret_apd": metrics.apd(sec, rv),
                        "secret_psnr": metrics.psnr(sec, rv),
                        "secret_ssim": metrics.ssim(sec, rv),
                        "iou": metrics.locating_iou(truth, hard),
                    }
                )
    return {k: float(np.mean([row[k] for row in rows])) for k in rows[0]}


def _to_images(batch_t):
    arr = batch_t.detach().permute(0, 2, 3, 1).cpu().numpy().astype(np.float32)
    return [np.clip(a, 0.0, 1.0) for a in arr]


def _optimizer_state_np(optimizer):
    def conv(v):
        if isinstance(v, torch.Tensor):
            return ("t", v.detach().cpu().numpy())
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, list):
            return [conv(x) for x in v]
        return v

    return conv(optimizer.state_dict())


def _optimizer_state_torch(state):
    def conv(v):
        if isinstance(v, tuple) and len(v) == 2 and v[0] == "t":
            return torch.from_numpy(v[1].copy())
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, list):
            return [conv(x) for x in v]
        return v

    return conv(state)


def write_history_csv(history, path):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for row in history:
            out = {}
            for k in HISTORY_COLUMNS:
                v = row.get(k, "")
                if isinstance(v, float) and math.isnan(v):
                    v = ""
                out[k] = v
            writer.writerow(out)


def train(
    models,
    split,
    schedule,
    distortion_mode="none",
    out_dir=None,
    resume=None,
    cache_images=True,
    stop_when=None,
    log=None,
):
    """Run the two-stage schedule over a DatasetSplit of image refs (paths or
    arrays). Checkpoints every epoch into out_dir; resumable from the payload
    of such a checkpoint. Returns (models, history).

    distortion_mode: "none", one of dropout/gaussian/jpeg (specialized), or
    "combined" (round-robin over the three noise layers per batch).
    stop_when: optional predicate on the epoch history row for early exit.
    """
    h, p, r = models
    if distortion_mode not in ("none", "combined") + NOISE_KINDS:
        raise ValueError(f"unknown distortion mode {distortion_mode!r}")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    optimizer = torch.optim.Adam(
        [*h.parameters(), *p.parameters(), *r.parameters()], lr=schedule.lr0
    )
    start_epoch = 0
    history = []
    global_step = 0
    if resume is not None:
        extra = resume["extra"]
        optimizer.load_state_dict(_optimizer_state_torch(extra["optimizer"]))
        start_epoch = extra["epoch"]
        history = list(extra.get("history", []))
        global_step = extra.get("global_step", 0)

    side = h.config.image_side
    cache = {} if cache_images else _NoCache()
    n = len(split.train)
    if n == 0:
        raise ValueError("empty training split")

    for epoch in range(start_epoch, schedule.total_epochs):
        phase = schedule.phase_at(epoch)
        lr = schedule.lr_at(epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        rng = np.random.default_rng([schedule.seed, 1000003, epoch])
        cover_order = rng.permutation(n)
        secret_order = rng.permutation(n)
        step_metrics = []
        n_steps = max(n // schedule.batch_size, 1)
        for step in range(n_steps):
            start = step * schedule.batch_size
            idx = range(start, min(start + schedule.batch_size, n))
            covers = to_batch([_load_ref(split.train[cover_order[i]], side, cache) for i in idx])
            secrets = to_batch([_load_ref(split.train[secret_order[i]], side, cache) for i in idx])
            noise_layer = None
            if distortion_mode == "combined":
                noise_layer = make_noise_layer(NOISE_KINDS[global_step % len(NOISE_KINDS)])
            elif distortion_mode != "none":
                noise_layer = make_noise_layer(distortion_mode)
            step_metrics.append(
                train_step(models, optimizer, (secrets, covers), phase, schedule, noise_layer, rng)
            )
            global_step += 1

        row = {"epoch": epoch, "phase": phase, "lr": lr}
        for key in ("loss_total", "loss_hide", "loss_locate", "loss_reveal"):
            vals = [m[key] for m in step_metrics]
            row[key] = float(np.mean(vals)) if vals else math.nan
        if split.val:
            val = validate(models, split.val, schedule, epoch, cache)
            row.update(
                val_stego_apd=val["stego_apd"],
                val_stego_psnr=val["stego_psnr"],
                val_stego_ssim=val["stego_ssim"],
                val_secret_apd=val["secret_apd"],
                val_secret_psnr=val["secret_psnr"],
                val_secret_ssim=val["secret_ssim"],
                val_iou=val["iou"],
            )
        history.append(row)
        if log is not None:
            log(row)

        if out_dir is not None:
            extra = {
                "epoch": epoch + 1,
                "global_step": global_step,
                "optimizer": _optimizer_state_np(optimizer),
                "history": history,
                "schedule_seed": schedule.seed,
                "distortion_mode": distortion_mode,
            }
            save_checkpoint(out_dir / "ckpt-last.ldh", models, h.config, global_step, extra)
            write_history_csv(history, out_dir / "history.csv")
        if stop_when is not None and stop_when(row):
            break
    return models, history


class _NoCache(dict):
    def __setitem__(self, key, value):
        pass
