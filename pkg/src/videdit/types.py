"""Shared array containers used across the editing pipeline.

Everything is plain float64 numpy. Videos are [N, C, H, W] stacks, latents
[N, C, h, w], masks and heatmaps [N, h, w] at latent resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np


class ValidationError(ValueError):
    """Raised when a container violates its documented invariants."""


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


@dataclass
class FrameVideo:
    """A video as a stack of frames in [0, 1].

    frames: [N, C, H, W]
    """

    frames: np.ndarray
    frame_rate: Optional[float] = None

    def __post_init__(self):
        self.frames = _as_f64(self.frames)
        if self.frames.ndim != 4:
            raise ValidationError(f"frames must be [N, C, H, W], got shape {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ValidationError("video needs at least one frame")
        if not np.all(np.isfinite(self.frames)):
            raise ValidationError("frames contain non-finite values")
        if self.frames.min() < 0.0 or self.frames.max() > 1.0:
            raise ValidationError("frame values must lie in [0, 1]")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class LatentVideo:
    """Per-frame latents at a single diffusion timestep.

    latents: [N, C, h, w]; timestep 0 means clean (fully denoised).
    """

    latents: np.ndarray
    timestep: int = 0

    def __post_init__(self):
        self.latents = _as_f64(self.latents)
        if self.latents.ndim != 4:
            raise ValidationError(f"latents must be [N, C, h, w], got shape {self.latents.shape}")
        if self.timestep < 0:
            raise ValidationError("timestep must be >= 0")

    @property
    def num_frames(self) -> int:
        return self.latents.shape[0]

    def with_latents(self, latents: np.ndarray, timestep: Optional[int] = None) -> "LatentVideo":
        return LatentVideo(latents=latents, timestep=self.timestep if timestep is None else timestep)


@dataclass(frozen=True)
class Conditioning:
    """Text-token embedding plus a global image embedding.

    text:  [L, D] token sequence.
    image: [D] shared across frames, or [N, D] per frame. The production
    adapter contract uses D = 768; the toy embedders use whatever fits the
    synthetic world.
    """

    text: np.ndarray
    image: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "text", _as_f64(self.text))
        object.__setattr__(self, "image", _as_f64(self.image))
        if self.text.ndim != 2:
            raise ValidationError(f"text embedding must be [L, D], got {self.text.shape}")
        if self.image.ndim not in (1, 2):
            raise ValidationError(f"image embedding must be [D] or [N, D], got {self.image.shape}")
        if self.text.shape[1] != self.image.shape[-1]:
            raise ValidationError(
                f"embedding width mismatch: text D={self.text.shape[1]}, image D={self.image.shape[-1]}"
            )
        if not (np.all(np.isfinite(self.text)) and np.all(np.isfinite(self.image))):
            raise ValidationError("conditioning contains non-finite values")

    @property
    def dim(self) -> int:
        return self.text.shape[1]

    def image_for_frame(self, n: int) -> np.ndarray:
        if self.image.ndim == 1:
            return self.image
        return self.image[n]

    def is_null(self) -> bool:
        return not (np.any(self.text) or np.any(self.image))


@dataclass(frozen=True)
class RegionConditioning:
    """Conditioning pair routed by a binary mask.

    With mask=None (the "no mask" sentinel) only the foreground conditioning
    is consulted and it is injected everywhere. With a mask, the background
    conditioning's image embedding is injected where the mask is 0 and the
    foreground's where it is 1.
    """

    foreground: Conditioning
    background: Optional[Conditioning] = None
    mask: Optional["MaskSequence"] = None

    def __post_init__(self):
        if self.mask is not None and self.background is None:
            raise ValidationError("masked conditioning requires a background conditioning")

    @classmethod
    def uniform(cls, cond: Conditioning) -> "RegionConditioning":
        return cls(foreground=cond, background=cond, mask=None)


@dataclass
class MaskSequence:
    """Per-frame binary masks at latent resolution.

    masks: [N, h, w] with values in {0, 1} (stored as float64 for arithmetic).
    """

    masks: np.ndarray
    threshold_used: Optional[float] = None

    def __post_init__(self):
        self.masks = _as_f64(self.masks)
        if self.masks.ndim != 3:
            raise ValidationError(f"masks must be [N, h, w], got shape {self.masks.shape}")
        vals = np.unique(self.masks)
        if not np.all(np.isin(vals, (0.0, 1.0))):
            raise ValidationError(f"masks must be strictly binary, found values {vals[:8]}")

    @property
    def num_frames(self) -> int:
        return self.masks.shape[0]

    @classmethod
    def zeros(cls, n: int, h: int, w: int) -> "MaskSequence":
        return cls(masks=np.zeros((n, h, w)))

    @classmethod
    def ones(cls, n: int, h: int, w: int) -> "MaskSequence":
        return cls(masks=np.ones((n, h, w)))


@dataclass
class HeatmapSequence:
    """Per-frame nonnegative heatmaps, optionally min-max normalized per frame."""

    heat: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.heat = _as_f64(self.heat)
        if self.heat.ndim != 3:
            raise ValidationError(f"heat must be [N, h, w], got shape {self.heat.shape}")
        if self.heat.min() < 0.0:
            raise ValidationError("heatmaps must be nonnegative")


@dataclass
class DenoiserOutput:
    """Predicted noise plus intermediate block features.

    eps: [N, C, h, w], same shape as the input latents.
    block_features: block name -> [N, C_f, h_f, w_f]. The block configured
    for latent correction must always be present.
    """

    eps: np.ndarray
    block_features: Dict[str, np.ndarray] = field(default_factory=dict)
