"""Inter-frame latent correction and background preservation.

Inside the edit mask, each frame's latents are blended with its neighbors'
latents gathered along nearest-neighbor correspondence fields computed on a
designated decoder block's features:

    z_i[p] <- w_prev * z_{i-1}[p + N_prev(p)]
            + w_center * z_i[p]
            + w_next * z_{i+1}[p + N_next(p)]        (inside the mask)
    z_i[p] <- z_i[p]                                  (outside the mask)

Weights are nonnegative and sum to one; at the sequence boundaries the
missing neighbor's weight is dropped and the rest renormalized. Blending is
Jacobi-style: every frame reads the pre-blend snapshot, so frame order can
never change the result.

Background preservation overwrites everything outside the mask with the
encoded clean source latents, each step, so untouched regions pass through
the pipeline bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .backbone import CORRECTION_BLOCK
from .nnfield import NNField, SearchWindow, apply_field, compute_nn_field
from .types import MaskSequence, ValidationError

WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True)
class BlendWeights:
    """Stock values 0.1 / 0.8 / 0.1."""

    w_prev: float = 0.1
    w_center: float = 0.8
    w_next: float = 0.1

    def __post_init__(self):
        for w in (self.w_prev, self.w_center, self.w_next):
            if w < 0.0:
                raise ValidationError("blend weights must be nonnegative")
        if abs(self.w_prev + self.w_center + self.w_next - 1.0) > WEIGHT_SUM_TOL:
            raise ValidationError(
                f"blend weights must sum to 1, got {self.w_prev + self.w_center + self.w_next!r}")

    def drop_prev(self) -> "BlendWeights":
        s = self.w_center + self.w_next
        return BlendWeights(0.0, self.w_center / s, self.w_next / s)

    def drop_next(self) -> "BlendWeights":
        s = self.w_prev + self.w_center
        return BlendWeights(self.w_prev / s, self.w_center / s, 0.0)


@dataclass
class CorrectionConfig:
    """Knobs for the per-step latent correction."""

    block_name: str = CORRECTION_BLOCK
    window: SearchWindow = field(default_factory=SearchWindow.corner4)
    active_tail: int = 5  # blend while t >= T - active_tail
    weights: BlendWeights = field(default_factory=BlendWeights)
    tiebreak: str = "l1_rowmajor"
    backend: str = "auto"

    def is_active(self, t: int, num_steps: int) -> bool:
        return t >= num_steps - self.active_tail


def blend_frame(z_cur: np.ndarray,
                z_prev: Optional[np.ndarray],
                z_next: Optional[np.ndarray],
                field_prev: Optional[NNField],
                field_next: Optional[NNField],
                mask: np.ndarray,
                weights: BlendWeights) -> np.ndarray:
    """Blend one frame's latents [C, h, w] with field-aligned neighbors.

    Missing neighbors (sequence boundaries) drop their term; the remaining
    weights are renormalized so the combination stays convex.
    """
    if z_prev is None and z_next is None:
        return z_cur.copy()
    w = weights
    if z_prev is None:
        w = w.drop_prev()
    if z_next is None:
        w = w.drop_next()
    inside = w.w_center * z_cur
    if z_prev is not None:
        if field_prev is None:
            raise ValidationError("previous frame given without its correspondence field")
        inside = inside + w.w_prev * apply_field(z_prev, field_prev)
    if z_next is not None:
        if field_next is None:
            raise ValidationError("next frame given without its correspondence field")
        inside = inside + w.w_next * apply_field(z_next, field_next)
    m = mask[None, :, :]
    return m * inside + (1.0 - m) * z_cur


def fields_for_frames(features: np.ndarray, config: CorrectionConfig
                      ) -> Tuple[List[Optional[NNField]], List[Optional[NNField]]]:
    """Per-frame correspondence fields on block features [N, C_f, h_f, w_f].

    Returns (prev_fields, next_fields); entries are None at the boundaries.
    """
    n = features.shape[0]
    prev_fields: List[Optional[NNField]] = [None] * n
    next_fields: List[Optional[NNField]] = [None] * n
    for i in range(n):
        if i > 0:
            prev_fields[i] = compute_nn_field(
                features[i], features[i - 1], window=config.window,
                tiebreak=config.tiebreak, backend=config.backend, direction="prev")
        if i < n - 1:
            next_fields[i] = compute_nn_field(
                features[i], features[i + 1], window=config.window,
                tiebreak=config.tiebreak, backend=config.backend, direction="next")
    return prev_fields, next_fields


def blend_video(latents: np.ndarray,
                prev_fields: Sequence[Optional[NNField]],
                next_fields: Sequence[Optional[NNField]],
                masks: MaskSequence,
                weights: BlendWeights) -> np.ndarray:
    """Blend a whole latent stack [N, C, h, w]; reads only the input snapshot."""
    n = latents.shape[0]
    if masks.num_frames != n:
        raise ValidationError(f"mask frames {masks.num_frames} != latent frames {n}")
    out = np.empty_like(latents)
    for i in range(n):
        out[i] = blend_frame(
            latents[i],
            latents[i - 1] if i > 0 else None,
            latents[i + 1] if i < n - 1 else None,
            prev_fields[i],
            next_fields[i],
            masks.masks[i],
            weights,
        )
    return out


def preserve_background(latents: np.ndarray, masks: MaskSequence,
                        clean_src: np.ndarray) -> np.ndarray:
    """Replace everything outside the mask with the clean source latents."""
    if latents.shape != clean_src.shape:
        raise ValidationError(f"latents {latents.shape} != clean source {clean_src.shape}")
    if masks.num_frames != latents.shape[0]:
        raise ValidationError("mask / latent frame count mismatch")
    m = masks.masks[:, None, :, :]
    return (1.0 - m) * clean_src + m * latents
