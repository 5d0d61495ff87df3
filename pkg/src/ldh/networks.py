"""The three networks: hiding (H), locating (P), and revealing (R).

H maps a secret (side x side) to a signed compact code (side/omega square),
P maps a stego image to a same-size soft location map, R maps a cropped code
region back to a full-size secret. All three are plain convolutional networks
(leaky slope 0.2), fully differentiable, with widths controlled by nhf.
"""

import pickle
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_MAGIC = b"LDH-CKPT-1\n"

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class NetworkConfig:
    omega: int = 4
    nhf: int = 64
    image_side: int = 1024

    def __post_init__(self):
        if self.omega < 2 or self.omega & (self.omega - 1):
            raise ValueError(f"omega must be a power of 2 >= 2, got {self.omega}")
        if self.image_side % self.omega:
            raise ValueError(f"image side {self.image_side} not divisible by omega {self.omega}")
        if self.nhf < 1:
            raise ValueError("nhf must be positive")

    @property
    def code_side(self):
        return self.image_side // self.omega

    @property
    def down_stages(self):
        return int(np.log2(self.omega))

    def validate(self):
        """Pipeline-level constraints: studied omega range, JPEG-compatible
        sizes, and at least the minimum useful width. Tiny test instances may
        skip this; the training and CLI entry points do not."""
        if self.omega not in (2, 4, 8):
            raise ValueError(f"omega must be one of 2, 4, 8, got {self.omega}")
        if self.image_side % (self.omega * 8):
            raise ValueError(
                f"image side {self.image_side} must be divisible by omega*8 = {self.omega * 8}"
            )
        if self.nhf < 8:
            raise ValueError(f"nhf must be at least 8, got {self.nhf}")
        return self


def _conv(cin, cout):
    return nn.Conv2d(cin, cout, kernel_size=3, padding=1)


def _act(x):
    return F.leaky_relu(x, LEAKY_SLOPE)


class HidingNetwork(nn.Module):
    """Secret image -> compact signed code, 1/omega of the side.

    log2(omega) stages of conv + 2x max pool bring the input down to code
    resolution; a small U-shaped body with skip connections encodes it; the
    head has no activation, the code is an unbounded residual.
    """

    def __init__(self, config):
        super().__init__()
        self.config = config
        w = config.nhf
        self.down = nn.ModuleList(
            _conv(3 if i == 0 else w, w) for i in range(config.down_stages)
        )
        # body depth capped by how often the code side halves cleanly
        self.levels = min(4, (config.code_side & -config.code_side).bit_length() - 1)
        enc_w = [min(w * 2**l, 8 * w) for l in range(self.levels)]
        bott_w = min(w * 2**self.levels, 8 * w)
        self.enc = nn.ModuleList(
            _conv(w if l == 0 else enc_w[l - 1], enc_w[l]) for l in range(self.levels)
        )
        self.bottleneck = _conv(enc_w[-1] if enc_w else w, bott_w)
        self.dec = nn.ModuleList(
            _conv((bott_w if l == self.levels - 1 else enc_w[l + 1]) + enc_w[l], enc_w[l])
            for l in reversed(range(self.levels))
        )
        self.head = _conv(enc_w[0] if enc_w else bott_w, 3)
        # zero head: the code starts at exactly 0 (stego == cover), so the
        # revealing loss grows it only in useful directions instead of the
        # hiding loss killing the channel before R can read it
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, s, s) secret batch, got {tuple(x.shape)}")
        need = self.config.omega * 2**self.levels
        if x.shape[-1] % need or x.shape[-2] % need:
            raise ValueError(f"secret side {tuple(x.shape[-2:])} not divisible by {need}")
        for conv in self.down:
            x = F.max_pool2d(_act(conv(x)), 2)
        skips = []
        for conv in self.enc:
            x = _act(conv(x))
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = _act(self.bottleneck(x))
        for conv, skip in zip(self.dec, reversed(skips)):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = _act(conv(torch.cat([x, skip], dim=1)))
        return self.head(x)


class LocatingNetwork(nn.Module):
    """Stego image -> soft location map in (0,1), same spatial size.

    Six 3x3 convolutions, no pooling, sigmoid head.
    """

    def __init__(self, config):
        super().__init__()
        self.config = config
        w = config.nhf
        self.body = nn.ModuleList([_conv(3, w)] + [_conv(w, w) for _ in range(4)])
        self.head = _conv(w, 1)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, s, s) stego batch, got {tuple(x.shape)}")
        for conv in self.body:
            x = _act(conv(x))
        return torch.sigmoid(self.head(x))


class RevealingNetwork(nn.Module):
    """Cropped code region -> full-size secret in [0,1].

    Six convolutions preprocess at code resolution, then log2(omega) stages of
    2x nearest upsampling + conv grow the maps back to the secret size;
    sigmoid head keeps the output a valid image.
    """

    def __init__(self, config):
        super().__init__()
        self.config = config
        w = config.nhf
        self.body = nn.ModuleList([_conv(3, w)] + [_conv(w, w) for _ in range(5)])
        self.up = nn.ModuleList(_conv(w, w) for _ in range(config.down_stages))
        self.head = _conv(w, 3)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, s, s) code batch, got {tuple(x.shape)}")
        for conv in self.body:
            x = _act(conv(x))
        for conv in self.up:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = _act(conv(x))
        return torch.sigmoid(self.head(x))


def init_params(config, seed):
    """Build (H, P, R) with seed-deterministic fan-in-scaled initialization."""
    torch.manual_seed(seed)
    return HidingNetwork(config), LocatingNetwork(config), RevealingNetwork(config)


def parameter_count(module):
    return sum(p.numel() for p in module.parameters())


def to_tensor(arr):
    """(H, W, C) or (H, W) numpy array -> (1, C, H, W) float32 tensor."""
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[..., None]
    return torch.from_numpy(np.ascontiguousarray(arr)).permute(2, 0, 1).unsqueeze(0)


def from_tensor(t):
    """(1, C, H, W) tensor -> (H, W, C) float32 array ((H, W) if C == 1)."""
    arr = t.detach().squeeze(0).permute(1, 2, 0).cpu().numpy().astype(np.float32)
    return arr[..., 0] if arr.shape[2] == 1 else arr


@torch.no_grad()
def forward_hide(model, secret):
    """Secret image array -> compact code array of side secret_side/omega."""
    return from_tensor(model(to_tensor(secret)))


@torch.no_grad()
def forward_locate(model, stego):
    """Stego image array -> soft location map array (same spatial size)."""
    return from_tensor(model(to_tensor(stego)))


@torch.no_grad()
def forward_reveal(model, patch):
    """Cropped code region array -> revealed full-size secret array."""
    return np.clip(from_tensor(model(to_tensor(patch))), 0.0, 1.0)


def _state_np(module):
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def _load_np(module, state):
    module.load_state_dict({k: torch.from_numpy(v) for k, v in state.items()})


def save_checkpoint(path, models, config, step=0, extra=None):
    """Write a versioned checkpoint: config echo, per-layer parameters,
    training step counter, and the torch RNG state."""
    h, p, r = models
    payload = {
        "config": asdict(config),
        "step": int(step),
        "params": {"hiding": _state_np(h), "locating": _state_np(p), "revealing": _state_np(r)},
        "torch_rng": torch.get_rng_state().numpy().tobytes(),
        "extra": extra if extra is not None else {},
    }
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        pickle.dump(payload, f, protocol=4)


def load_checkpoint(path):
    """Read a checkpoint; returns ((H, P, R), payload dict)."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not an LDH checkpoint (bad magic {magic!r})")
        payload = pickle.load(f)
    config = NetworkConfig(**payload["config"])
    h, p, r = init_params(config, seed=0)
    _load_np(h, payload["params"]["hiding"])
    _load_np(p, payload["params"]["locating"])
    _load_np(r, payload["params"]["revealing"])
    return (h, p, r), payload
