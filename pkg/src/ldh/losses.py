"""Loss terms for the three networks and their weighted total.

Each loss is the mean of |a - b|**p over elements (mean rather than sum, so
the weights transfer across image sizes). Defaults: p=1 for the hiding and
revealing losses, p=2 for the locating loss. Works on numpy arrays and torch
tensors alike (torch keeps gradients).
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class LossWeights:
    lambda1: float  # hiding
    lambda2: float  # locating
    lambda3: float  # revealing

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.lambda1 == self.lambda2 == self.lambda3 == 0:
            raise ValueError("at least one loss weight must be positive")


def _mean_p_distance(a, b, p):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = abs(a - b)
    if p != 1:
        d = d**p
    return d.mean()


def hiding_loss(cover, stego, p=1):
    """Imperceptibility of the embedded code: distance between cover and stego."""
    return _mean_p_distance(cover, stego, p)


def locating_loss(truth, pred, p=2):
    """Map regression: distance between the ground-truth and predicted maps."""
    return _mean_p_distance(truth, pred, p)


def revealing_loss(secret, revealed, p=1):
    """Reconstruction: distance between the original and revealed secrets."""
    return _mean_p_distance(secret, revealed, p)


def total_loss(lh, lp, lr_, weights):
    """Weighted sum of the three loss terms."""
    return weights.lambda1 * lh + weights.lambda2 * lp + weights.lambda3 * lr_
