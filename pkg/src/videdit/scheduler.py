"""Deterministic DDIM schedule, sampling step, inversion, and guidance.

All updates are the eta=0 (fully deterministic) form:

    x0_hat  = (z_t - sqrt(1 - abar_t) * eps) / sqrt(abar_t)
    z_{t-1} = sqrt(abar_{t-1}) * x0_hat + sqrt(1 - abar_{t-1}) * eps

Inversion runs the same update reversed, evaluating eps at the current
(lower-noise) latent. Under the exact toy backbone the round trip is an
algebraic identity, which the tests assert at machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .types import LatentVideo, RegionConditioning, ValidationError


@dataclass
class DDIMSchedule:
    """Cumulative alpha-bar table for T steps; abar[0] == 1 is the clean end.

    timestep_band is the (lo, hi] slice of noisiest steps used for mask
    accumulation: a step t contributes iff lo < t <= hi.
    """

    alpha_bar: np.ndarray
    timestep_band: Tuple[int, int]

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        self.alpha_bar = ab
        if ab.ndim != 1 or ab.shape[0] < 2:
            raise ValidationError("alpha_bar must be a [T+1] vector with T >= 1")
        if ab[0] != 1.0:
            raise ValidationError(f"alpha_bar[0] must be exactly 1, got {ab[0]}")
        if not (0.0 < ab[-1] < 1.0):
            raise ValidationError(f"alpha_bar[T] must lie in (0, 1), got {ab[-1]}")
        if not np.all(np.diff(ab) < 0.0):
            raise ValidationError("alpha_bar must be strictly decreasing")
        lo, hi = self.timestep_band
        if not (0 <= lo < hi <= self.num_steps):
            raise ValidationError(f"bad timestep band {self.timestep_band} for T={self.num_steps}")

    @property
    def num_steps(self) -> int:
        return self.alpha_bar.shape[0] - 1

    def band_steps(self, band: Optional[Tuple[int, int]] = None) -> List[int]:
        """Band timesteps, noisiest first. For T=50 and the default 0.8 band
        this is exactly the 10 steps 50..41."""
        lo, hi = band if band is not None else self.timestep_band
        steps = [t for t in range(hi, lo, -1) if 1 <= t <= self.num_steps]
        if not steps:
            raise ValidationError(f"empty timestep band ({lo}, {hi}]")
        return steps


def make_schedule(T: int, curve: str = "linear", alpha_bar_end: float = 0.01,
                  band_fraction: float = 0.8) -> DDIMSchedule:
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    if not 0.0 < alpha_bar_end < 1.0:
        raise ValidationError("alpha_bar_end must lie in (0, 1)")
    t = np.arange(T + 1, dtype=np.float64)
    if curve == "linear":
        ab = 1.0 - (t / T) * (1.0 - alpha_bar_end)
    elif curve == "cosine":
        s = 0.008
        f = np.cos((t / T + s) / (1.0 + s) * np.pi / 2.0) ** 2
        ab = alpha_bar_end + (1.0 - alpha_bar_end) * (f / f[0])
    else:
        raise ValidationError(f"unknown schedule curve {curve!r}")
    ab[0] = 1.0
    band = (int(round(band_fraction * T)), T)
    if band[0] >= T:
        band = (T - 1, T)
    return DDIMSchedule(alpha_bar=ab, timestep_band=band)


def ddim_step(z_t: LatentVideo, eps: np.ndarray, t: int, sched: DDIMSchedule) -> LatentVideo:
    """One deterministic denoising update from t to t-1."""
    if not 1 <= t <= sched.num_steps:
        raise ValidationError(f"timestep {t} outside [1, {sched.num_steps}]")
    if eps.shape != z_t.latents.shape:
        raise ValidationError(f"eps shape {eps.shape} != latent shape {z_t.latents.shape}")
    ab_t = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t - 1]
    x0 = (z_t.latents - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)
    z_prev = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps
    return LatentVideo(latents=z_prev, timestep=t - 1)


def ddim_sample(z_T: LatentVideo, cond: RegionConditioning, denoiser, sched: DDIMSchedule,
                t_end: int = 0) -> LatentVideo:
    """Full denoising loop from the latent's timestep down to t_end."""
    z = z_T
    for t in range(z_T.timestep, t_end, -1):
        eps = denoiser.denoise(z, t, cond).eps
        z = ddim_step(z, eps, t, sched)
    return z


def ddim_invert(clean: LatentVideo, cond: RegionConditioning, denoiser, sched: DDIMSchedule) -> LatentVideo:
    """Map clean latents to the noise latent whose deterministic sampling
    reconstructs them.

    Standard reversed update: eps is evaluated at the current, lower-noise
    latent (clamped to timestep 1 at the clean end, where x0_hat reduces to
    the latent itself because abar[0] == 1).
    """
    if clean.timestep != 0:
        raise ValidationError(f"inversion starts from clean latents, got t={clean.timestep}")
    z = clean.latents
    ab = sched.alpha_bar
    for t in range(1, sched.num_steps + 1):
        s = t - 1
        eps = denoiser.denoise(LatentVideo(z, timestep=s), max(s, 1), cond).eps
        x0 = (z - np.sqrt(1.0 - ab[s]) * eps) / np.sqrt(ab[s])
        z = np.sqrt(ab[t]) * x0 + np.sqrt(1.0 - ab[t]) * eps
    return LatentVideo(latents=z, timestep=sched.num_steps)


def cfg_combine(eps_uncond: np.ndarray, eps_cond: np.ndarray, scale: float) -> np.ndarray:
    """Classifier-free guidance: extrapolate from unconditional toward conditional."""
    if eps_uncond.shape != eps_cond.shape:
        raise ValidationError(f"shape mismatch: {eps_uncond.shape} vs {eps_cond.shape}")
    return eps_uncond + scale * (eps_cond - eps_uncond)


@dataclass
class GuidanceConfig:
    """Guidance scale 12.5 is the stock value for the production backbone;
    it is disabled by default at desk scale because the exact toy denoiser
    needs no guidance (and extrapolating an analytic render breaks the
    pipeline's exactness guarantees)."""

    scale: float = 12.5
    enabled: bool = False
    enabled_for_mask: bool = False

    def __post_init__(self):
        if (self.enabled or self.enabled_for_mask) and self.scale < 1.0:
            raise ValidationError("guidance scale must be >= 1 when enabled")
