"""Quantitative scores and correspondence-error maps.

Scores are plain mean cosine similarities through a pluggable embedder:
text-to-frame alignment, target-image-to-frame alignment, and inter-frame
temporal consistency over consecutive pairs. The toy pixel embedder makes
them deterministic at desk scale; real CLIP/DINO models plug in behind the
same two-method interface, and their absolute numbers are reported, never
asserted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence

import numpy as np

from .backbone import ImageEmbedder, TextEmbedder
from .nnfield import NNField
from .types import FrameVideo, ValidationError

# Published full-scale reference scores for this editing method, shipped for
# orientation only: they require the pretrained production backbone and are
# not reproducible with the toy embedders.
REFERENCE_FULL_SCALE_SCORES = {"CLIP-T": 0.241, "DINO": 0.374, "Temp": 0.967}

METRICS_HEADER = ["Method", "CLIP-T", "DINO", "Temp"]


class Embedder(Protocol):
    def embed_frame(self, frame: np.ndarray) -> np.ndarray: ...

    def embed_text(self, prompt: str) -> np.ndarray: ...


class ToyPixelEmbedder:
    """Frames embed as normalized downsampled pixels; prompts as the mean of
    their hash tokens, renormalized. Both land in the same dimension."""

    def __init__(self, channels: int = 1, pool: int = 4, seed: int = 0):
        self.image = ImageEmbedder(pool, target_dim=pool * pool * channels)
        self.text = TextEmbedder(pool * pool * channels, seed=seed)

    def embed_frame(self, frame: np.ndarray) -> np.ndarray:
        return self.image.embed(frame)

    def embed_text(self, prompt: str) -> np.ndarray:
        tokens = self.text.embed(prompt)
        v = tokens.mean(axis=0)
        norm = np.linalg.norm(v)
        return v / norm if norm >= 1e-12 else np.zeros_like(v)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity with an exact fast path: bit-identical vectors score
    exactly 1.0 (a constant video must reach Temp == 1.0, not 1 - ulp)."""
    if a.shape != b.shape:
        raise ValidationError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    if np.array_equal(a, b):
        return 0.0 if not np.any(a) else 1.0
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def clip_t_score(video: FrameVideo, prompt: str, embedder: Embedder,
                 prompt_embedding: Optional[np.ndarray] = None) -> float:
    """Mean frame-to-prompt similarity."""
    p = prompt_embedding if prompt_embedding is not None else embedder.embed_text(prompt)
    sims = [cosine(embedder.embed_frame(f), p) for f in video.frames]
    return float(np.mean(sims))


def dino_score(video: FrameVideo, target_image: np.ndarray, embedder: Embedder) -> float:
    """Mean frame-to-target-image similarity."""
    t = embedder.embed_frame(target_image)
    sims = [cosine(embedder.embed_frame(f), t) for f in video.frames]
    return float(np.mean(sims))


def temp_score(video: FrameVideo, embedder: Embedder) -> float:
    """Mean similarity over consecutive frame pairs."""
    if video.num_frames < 2:
        raise ValidationError("temporal consistency needs at least 2 frames")
    embs = [embedder.embed_frame(f) for f in video.frames]
    sims = [cosine(embs[i], embs[i + 1]) for i in range(len(embs) - 1)]
    return float(np.mean(sims))


def correspondence_error_map(field: NNField, gt_flow: np.ndarray,
                             eval_mask: Optional[np.ndarray] = None):
    """Per-location endpoint error against quantized ground-truth flow.

    Returns (ce_map [h, w], scalar mean over the evaluation mask).
    """
    gt = np.asarray(gt_flow)
    if gt.shape != field.offsets.shape:
        raise ValidationError(f"flow {gt.shape} does not match field {field.offsets.shape}")
    ce = np.linalg.norm((field.offsets - gt).astype(np.float64), axis=-1)
    if eval_mask is None:
        scalar = float(ce.mean())
    else:
        if eval_mask.shape != ce.shape:
            raise ValidationError("evaluation mask resolution mismatch")
        scalar = float(ce[eval_mask.astype(bool)].mean()) if eval_mask.any() else 0.0
    return ce, scalar


def write_metrics_table(path, rows: Sequence[Dict[str, object]]) -> None:
    """Comma-separated score table, one row per method."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in METRICS_HEADER})
