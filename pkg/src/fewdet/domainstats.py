"""Forward-mode domain-gap statistics: channel-wise style normalization, the
warm-up ramp, multi-kernel MMD, and VAE loss statistics.

Everything here is a statistic computed on given arrays; nothing is
optimized. Channel arrays are channels-last: an input of shape (..., C)
pairs with per-channel stats of length C.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import ValidationError

SIGMA_GUARD = 1e-6


@dataclass(frozen=True, eq=False)
class ChannelStats:
    """Per-channel mean and standard deviation; zero-variance channels are
    legal but flagged via :attr:`zero_variance`."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=np.float64).reshape(-1)
        if mu.shape != sigma.shape:
            raise ValidationError(f"mu has {mu.shape[0]} channels, sigma {sigma.shape[0]}")
        if np.any(sigma < 0):
            raise ValidationError("sigma entries must be >= 0")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_channels(self) -> int:
        return int(self.mu.shape[0])

    @property
    def zero_variance(self) -> np.ndarray:
        return self.sigma == 0.0

    @classmethod
    def from_array(cls, x: np.ndarray) -> ChannelStats:
        """Population (ddof=0) stats over all axes but the last."""
        x = np.asarray(x, dtype=np.float64)
        flat = x.reshape(-1, x.shape[-1])
        return cls(flat.mean(axis=0), flat.std(axis=0))


@dataclass(frozen=True)
class MMDConfig:
    bandwidths: tuple[float, ...] = (0.5, 1.0, 2.0, 5.0)

    def __post_init__(self):
        object.__setattr__(self, "bandwidths", tuple(self.bandwidths))
        if not self.bandwidths:
            raise ValidationError("bandwidths must be non-empty")
        if any(b <= 0 for b in self.bandwidths):
            raise ValidationError("bandwidths must be > 0")


def style_transfer(x: np.ndarray, src: ChannelStats, tgt: ChannelStats) -> np.ndarray:
    """Per-channel affine restyling: sigma_t * (x - mu_s) / sigma_s + mu_t.

    Channels whose source and target stats are bit-equal pass through
    unchanged (the affine form is not a floating-point identity, and
    identical stats must be the exact identity). A zero-variance source
    sigma is replaced by 1e-6 with a warning.
    """
    x = np.asarray(x, dtype=np.float64)
    channels = x.shape[-1]
    if src.n_channels != channels or tgt.n_channels != channels:
        raise ValidationError(
            f"channel mismatch: data {channels}, src {src.n_channels}, tgt {tgt.n_channels}"
        )
    sigma_s = src.sigma.copy()
    guarded = sigma_s == 0.0
    if np.any(guarded):
        warnings.warn(
            f"{int(guarded.sum())} zero-variance source channel(s); "
            f"sigma replaced by {SIGMA_GUARD}",
            stacklevel=2,
        )
        sigma_s[guarded] = SIGMA_GUARD
    out = tgt.sigma * ((x - src.mu) / sigma_s) + tgt.mu
    identical = (src.mu == tgt.mu) & (src.sigma == tgt.sigma)
    if np.any(identical):
        out[..., identical] = x[..., identical]
    return out


def style_gap(x: np.ndarray, src: ChannelStats, tgt: ChannelStats) -> float:
    """Scalar style deviation: mean squared difference between the
    restyled array's channel stats and the target stats.

    Harness-defined reduction; the underlying transform is per-channel and
    has no published scalar form.
    """
    restyled = ChannelStats.from_array(style_transfer(x, src, tgt))
    deltas = np.concatenate([restyled.mu - tgt.mu, restyled.sigma - tgt.sigma])
    return float(np.mean(deltas ** 2))


def warmup_alpha(t: int, t_warmup: int = 500) -> float:
    """Clamped linear ramp min(1, t / t_warmup)."""
    if t < 0:
        raise ValidationError(f"t must be >= 0, got {t}")
    if t_warmup <= 0:
        raise ValidationError(f"t_warmup must be positive, got {t_warmup}")
    return min(1.0, t / t_warmup)


def mmd(x: np.ndarray, y: np.ndarray, cfg: MMDConfig = MMDConfig()) -> float:
    """Biased multi-kernel MMD^2 (V-statistic, diagonal included).

    Per bandwidth: mean(K_xx) + mean(K_yy) - 2 mean(K_xy) with
    k(a, b) = exp(-||a - b||^2 / (2 sigma^2)); the result is the mean over
    bandwidths. Symmetric, >= 0 up to round-off, and exactly 0 for x == y.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise ValidationError("mmd expects 2-D sample matrices")
    if x.shape[0] < 1 or y.shape[0] < 1:
        raise ValidationError("each sample set needs at least one row")
    if x.shape[1] != y.shape[1]:
        raise ValidationError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")

    d_xx = _sq_dists(x, x)
    d_yy = _sq_dists(y, y)
    d_xy = _sq_dists(x, y)
    total = 0.0
    for bandwidth in cfg.bandwidths:
        denom = 2.0 * bandwidth * bandwidth
        total += (
            float(np.exp(-d_xx / denom).mean())
            + float(np.exp(-d_yy / denom).mean())
            - 2.0 * float(np.exp(-d_xy / denom).mean())
        )
    return total / len(cfg.bandwidths)


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # computed from explicit differences: exact symmetry, no cancellation
    diff = a[:, None, :] - b[None, :, :]
    return np.sum(diff * diff, axis=2)


class VaeLosses(NamedTuple):
    reconstruction: float
    kl: float
    total: float


def vae_losses(x: np.ndarray, x_hat: np.ndarray, mu: np.ndarray, log_var: np.ndarray) -> VaeLosses:
    """Forward VAE loss statistics.

    reconstruction = (1/N) sum_i ||x_hat_i - x_i||^2 over the N rows;
    kl = -1/2 sum(1 + log_var - mu^2 - exp(log_var)) over every element;
    total = reconstruction + kl. Statistics only, no training step.
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValidationError(f"x {x.shape} and x_hat {x_hat.shape} differ")
    if mu.shape != log_var.shape:
        raise ValidationError(f"mu {mu.shape} and log_var {log_var.shape} differ")
    if x.ndim != 2 or mu.ndim != 2 or x.shape[0] != mu.shape[0]:
        raise ValidationError("x/x_hat and mu/log_var must be 2-D with matching row counts")
    recon = float(np.sum((x_hat - x) ** 2) / x.shape[0])
    kl = float(-0.5 * np.sum(1.0 + log_var - mu ** 2 - np.exp(log_var)))
    return VaeLosses(recon, kl, recon + kl)


def reparameterize(mu: np.ndarray, log_var: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """z = mu + exp(log_var / 2) * noise, with externally supplied noise."""
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if mu.shape != log_var.shape or mu.shape != noise.shape:
        raise ValidationError(
            f"shape mismatch: mu {mu.shape}, log_var {log_var.shape}, noise {noise.shape}"
        )
    return mu + np.exp(log_var / 2.0) * noise


def combined_objective(
    detection_loss: float,
    mmd_value: float,
    style_value: float,
    lambda_mmd: float = 0.16,
    lambda_style: float = 0.12,
) -> float:
    """Combined statistic L_det + lambda_mmd * MMD + lambda_style * style."""
    return detection_loss + lambda_mmd * mmd_value + lambda_style * style_value
