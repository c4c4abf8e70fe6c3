"""Edit-mask generation from denoising-noise differences.

Two denoising branches run from the same inverted noise: one conditioned on
the source prompt and per-frame source image embeddings, one on the target
prompt and the (foreground-segmented) target image embedding. Wherever the
two branches will eventually decode different content their noise estimates
disagree, so the per-step absolute difference, averaged over the noisiest
steps, normalized per frame, and thresholded, localizes the edit -- including
regions shaped like the *target* object, which masks derived from the source
video alone cannot see.

The zero law is structural: identical conditioning on both branches gives an
identically zero heatmap, hence an empty mask at any positive threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .scheduler import DDIMSchedule, GuidanceConfig, cfg_combine, ddim_invert, ddim_step
from .types import (
    Conditioning,
    FrameVideo,
    HeatmapSequence,
    LatentVideo,
    MaskSequence,
    RegionConditioning,
    ValidationError,
)

# both binarization thresholds ship as named presets; 0.6 is the default
MASK_THRESHOLD_PRESETS = {"default": 0.6, "strict": 0.8}


@dataclass
class MaskGenConfig:
    threshold: float = MASK_THRESHOLD_PRESETS["default"]
    band: Optional[Tuple[int, int]] = None  # None: use the schedule's band
    closing_radius: int = 0  # optional speckle cleanup, off by default

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValidationError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.closing_radius < 0:
            raise ValidationError("closing radius must be >= 0")


def noise_difference(eps_src: np.ndarray, eps_trg: np.ndarray) -> HeatmapSequence:
    """Per-location heat = mean over latent channels of |eps_src - eps_trg|."""
    if eps_src.shape != eps_trg.shape:
        raise ValidationError(f"eps shapes differ: {eps_src.shape} vs {eps_trg.shape}")
    heat = np.abs(eps_src - eps_trg).mean(axis=1)
    return HeatmapSequence(heat=heat, normalized=False)


def normalize_heat(heat: HeatmapSequence) -> HeatmapSequence:
    """Per-frame min-max normalization; constant frames normalize to all-zero."""
    h = heat.heat
    lo = h.min(axis=(1, 2), keepdims=True)
    hi = h.max(axis=(1, 2), keepdims=True)
    rng = hi - lo
    out = np.zeros_like(h)
    ok = (rng > 0.0).reshape(-1)
    out[ok] = (h[ok] - lo[ok]) / rng[ok]
    return HeatmapSequence(heat=out, normalized=True)


def accumulate_and_binarize(heat_by_t: Dict[int, HeatmapSequence],
                            band: Tuple[int, int],
                            alpha: float,
                            closing_radius: int = 0) -> MaskSequence:
    """Mean heat over band timesteps (lo, hi], normalized per frame, then
    thresholded at alpha (strictly greater)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
    lo, hi = band
    steps = sorted(t for t in heat_by_t if lo < t <= hi)
    if not steps:
        raise ValidationError(f"empty timestep band ({lo}, {hi}]: no heat recorded")
    acc = np.zeros_like(heat_by_t[steps[0]].heat)
    for t in steps:
        acc += heat_by_t[t].heat
    mean = HeatmapSequence(heat=acc / len(steps), normalized=False)
    norm = normalize_heat(mean)
    masks = (norm.heat > alpha).astype(np.float64)
    if closing_radius > 0:
        masks = np.stack([binary_closing(m, closing_radius) for m in masks])
    return MaskSequence(masks=masks, threshold_used=alpha)


def _shift_reduce(m: np.ndarray, radius: int, reduce) -> np.ndarray:
    pad = np.pad(m, radius, mode="edge")
    h, w = m.shape
    out = m.copy()
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            out = reduce(out, pad[radius + dr : radius + dr + h, radius + dc : radius + dc + w])
    return out


def binary_closing(mask: np.ndarray, radius: int = 1) -> np.ndarray:
    """Morphological closing (dilate then erode) with a square element."""
    dilated = _shift_reduce(mask, radius, np.maximum)
    return _shift_reduce(dilated, radius, np.minimum)


# ---------------------------------------------------------------------------
# foreground segmentation of the target image (external tools replaced by
# simple strategies; the pipeline only needs *a* binary image mask)


@dataclass
class MaskProvider:
    strategy: str = "full_image"  # full_image | alpha_channel | intensity_threshold | external
    threshold: float = 0.5
    mask_path: Optional[str] = None


def segment_target_foreground(image: np.ndarray, provider: MaskProvider) -> np.ndarray:
    """Binary [H, W] foreground mask for a [C, H, W] target image."""
    if image.ndim != 3:
        raise ValidationError(f"target image must be [C, H, W], got {image.shape}")
    if provider.strategy == "full_image":
        return np.ones(image.shape[1:], dtype=bool)
    if provider.strategy == "alpha_channel":
        if image.shape[0] != 4:
            raise ValidationError("alpha_channel strategy needs an RGBA image")
        return image[3] > 0.5
    if provider.strategy == "intensity_threshold":
        return image.mean(axis=0) > provider.threshold
    if provider.strategy == "external":
        if not provider.mask_path:
            raise ValidationError("external mask strategy requires a mask file path")
        from .frame_io import load_mask_image

        mask = load_mask_image(provider.mask_path)
        if mask.shape != image.shape[1:]:
            raise ValidationError(f"external mask {mask.shape} != image {image.shape[1:]}")
        return mask
    raise ValidationError(f"unknown mask provider strategy {provider.strategy!r}")


def apply_foreground_mask(image: np.ndarray, fg_mask: np.ndarray) -> np.ndarray:
    """Zero out the background before embedding the target image."""
    return image * fg_mask[None, :, :]


# ---------------------------------------------------------------------------
# the two-branch mask computation


@dataclass
class MaskGenResult:
    masks: MaskSequence
    heat: HeatmapSequence  # accumulated over the band and normalized
    heat_mean_by_t: Dict[int, float] = field(default_factory=dict)


def _branch_eps(denoiser, z: LatentVideo, t: int, cond: Conditioning,
                guidance: Optional[GuidanceConfig], null_cond: Optional[Conditioning]) -> np.ndarray:
    eps = denoiser.denoise(z, t, RegionConditioning.uniform(cond)).eps
    if guidance is not None and guidance.enabled_for_mask:
        if null_cond is None:
            raise ValidationError("guidance for mask branches needs a null conditioning")
        eps_u = denoiser.denoise(z, t, RegionConditioning.uniform(null_cond)).eps
        eps = cfg_combine(eps_u, eps, guidance.scale)
    return eps


def run_mask_branches(z_T: LatentVideo,
                      cond_src: Conditioning,
                      cond_trg: Conditioning,
                      denoiser,
                      sched: DDIMSchedule,
                      config: Optional[MaskGenConfig] = None,
                      guidance: Optional[GuidanceConfig] = None,
                      null_cond: Optional[Conditioning] = None) -> MaskGenResult:
    """Run both denoising branches over the band and binarize the mean heat.

    Both branches start from the same inverted latents; heat accumulation is
    per-timestep and order-independent.
    """
    config = config or MaskGenConfig()
    band = config.band if config.band is not None else sched.timestep_band
    heat_by_t: Dict[int, HeatmapSequence] = {}
    z_src = z_T
    z_trg = LatentVideo(z_T.latents.copy(), timestep=z_T.timestep)
    for t in sched.band_steps(band):
        eps_src = _branch_eps(denoiser, z_src, t, cond_src, guidance, null_cond)
        eps_trg = _branch_eps(denoiser, z_trg, t, cond_trg, guidance, null_cond)
        heat_by_t[t] = noise_difference(eps_src, eps_trg)
        z_src = ddim_step(z_src, eps_src, t, sched)
        z_trg = ddim_step(z_trg, eps_trg, t, sched)
    masks = accumulate_and_binarize(heat_by_t, band, config.threshold, config.closing_radius)
    acc = np.mean([h.heat for h in heat_by_t.values()], axis=0)
    heat = normalize_heat(HeatmapSequence(heat=acc, normalized=False))
    stats = {t: float(h.heat.mean()) for t, h in heat_by_t.items()}
    return MaskGenResult(masks=masks, heat=heat, heat_mean_by_t=stats)


def generate_masks(video: FrameVideo,
                   cond_src: Conditioning,
                   cond_trg: Conditioning,
                   denoiser,
                   sched: DDIMSchedule,
                   autoencoder,
                   config: Optional[MaskGenConfig] = None,
                   guidance: Optional[GuidanceConfig] = None,
                   null_cond: Optional[Conditioning] = None) -> MaskSequence:
    """End-to-end mask generation: encode, invert with the source conditioning,
    run both branches, binarize."""
    clean = autoencoder.encode(video)
    z_T = ddim_invert(clean, RegionConditioning.uniform(cond_src), denoiser, sched)
    result = run_mask_branches(z_T, cond_src, cond_trg, denoiser, sched,
                               config=config, guidance=guidance, null_cond=null_cond)
    return result.masks
