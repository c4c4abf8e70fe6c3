"""Windowed nearest-neighbor correspondence fields on feature maps.

For every location p in frame i's feature map, the field stores the offset
to the location q in a neighbor frame's map whose feature vector has maximal
cosine similarity, with q restricted to a small window around p. Offsets are
integers, so an accelerated implementation must agree with this reference
exactly, not within a tolerance. To make that possible the numeric contract
is pinned down:

* dot products and squared norms accumulate over channels sequentially
  (c = 0, 1, ...), one fused multiply per channel, no FMA, float64;
* similarity is dot / (sqrt(n_i) * sqrt(n_j)), defined as 0 when either
  norm is below 1e-12;
* ties take the candidate minimizing (|dr| + |dc|, dr, dc) for the default
  "l1_rowmajor" rule, or (dr, dc) for "rowmajor".

A compiled kernel (the optional ``nnfield_kernel`` extension) is picked up at
import time; everything falls back to the pure numpy path when it is absent
or when ``VIDEDIT_NO_KERNEL`` is set.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .types import ValidationError

NORM_EPS = 1e-12
TIEBREAKS = ("l1_rowmajor", "rowmajor")

try:  # compiled extension is optional; the reference path is always available
    if os.environ.get("VIDEDIT_NO_KERNEL"):
        _kernel = None
    else:
        import nnfield_kernel as _kernel
except ImportError:
    _kernel = None


def kernel_available() -> bool:
    return _kernel is not None


def active_backend() -> str:
    return "accel" if kernel_available() else "reference"


@dataclass(frozen=True)
class SearchWindow:
    """Inclusive offset bounds per axis. Must contain the zero offset so every
    location keeps at least one in-bounds candidate."""

    rows: Tuple[int, int]
    cols: Tuple[int, int]

    def __post_init__(self):
        for lo, hi in (self.rows, self.cols):
            if lo > hi:
                raise ValidationError(f"empty window axis ({lo}, {hi})")
            if lo > 0 or hi < 0:
                raise ValidationError("search window must contain the zero offset")

    @classmethod
    def radius(cls, r: int) -> "SearchWindow":
        if r < 0:
            raise ValidationError("window radius must be >= 0")
        return cls(rows=(-r, r), cols=(-r, r))

    @classmethod
    def corner4(cls) -> "SearchWindow":
        """The 4x4-neighborhood reading of the stock search window: offsets in
        {-2..1}^2. The symmetric radius-2 window is the documented alternative."""
        return cls(rows=(-2, 1), cols=(-2, 1))

    def offsets(self):
        for dr in range(self.rows[0], self.rows[1] + 1):
            for dc in range(self.cols[0], self.cols[1] + 1):
                yield dr, dc

    @property
    def max_abs(self) -> int:
        return max(abs(v) for v in (*self.rows, *self.cols))


def _as_window(window) -> SearchWindow:
    if isinstance(window, SearchWindow):
        return window
    return SearchWindow.radius(int(window))


@dataclass
class NNField:
    """Integer offset field: offsets[p] = q - p, shape [h, w, 2]."""

    offsets: np.ndarray
    window: SearchWindow
    direction: Optional[str] = None  # "prev" or "next" when frame-pair bound

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        if self.offsets.ndim != 3 or self.offsets.shape[2] != 2:
            raise ValidationError(f"offsets must be [h, w, 2], got {self.offsets.shape}")

    @property
    def grid(self) -> Tuple[int, int]:
        return self.offsets.shape[0], self.offsets.shape[1]

    def validate(self) -> None:
        h, w = self.grid
        dr, dc = self.offsets[..., 0], self.offsets[..., 1]
        if dr.min() < self.window.rows[0] or dr.max() > self.window.rows[1] \
                or dc.min() < self.window.cols[0] or dc.max() > self.window.cols[1]:
            raise ValidationError("offsets escape the search window")
        rows = np.arange(h)[:, None] + dr
        cols = np.arange(w)[None, :] + dc
        if rows.min() < 0 or rows.max() >= h or cols.min() < 0 or cols.max() >= w:
            raise ValidationError("mapped coordinates out of bounds")


def _tie_keys(window: SearchWindow, tiebreak: str):
    """Candidate offsets sorted so that earlier-is-better under strict
    improvement implements the tie rule."""
    if tiebreak not in TIEBREAKS:
        raise ValidationError(f"unknown tiebreak {tiebreak!r}, options {TIEBREAKS}")
    offs = list(window.offsets())
    if tiebreak == "l1_rowmajor":
        offs.sort(key=lambda o: (abs(o[0]) + abs(o[1]), o[0], o[1]))
    else:
        offs.sort(key=lambda o: (o[0], o[1]))
    return offs


def _sequential_sumsq(f: np.ndarray) -> np.ndarray:
    # channel-sequential accumulation, per the numeric contract
    acc = np.zeros(f.shape[1:], dtype=np.float64)
    for c in range(f.shape[0]):
        acc += f[c] * f[c]
    return acc


def _reference_nn_field(f_i: np.ndarray, f_j: np.ndarray, window: SearchWindow,
                        tiebreak: str) -> np.ndarray:
    c, h, w = f_i.shape
    n_i = np.sqrt(_sequential_sumsq(f_i))
    n_j = np.sqrt(_sequential_sumsq(f_j))
    best_sim = np.full((h, w), -np.inf)
    best = np.zeros((h, w, 2), dtype=np.int64)
    found = np.zeros((h, w), dtype=bool)
    for dr, dc in _tie_keys(window, tiebreak):
        # valid source region for which p + (dr, dc) stays in bounds
        r0, r1 = max(0, -dr), h - max(0, dr)
        c0, c1 = max(0, -dc), w - max(0, dc)
        if r0 >= r1 or c0 >= c1:
            continue
        src = (slice(r0, r1), slice(c0, c1))
        dst = (slice(r0 + dr, r1 + dr), slice(c0 + dc, c1 + dc))
        dot = np.zeros((r1 - r0, c1 - c0), dtype=np.float64)
        for ch in range(c):
            dot += f_i[ch][src] * f_j[ch][dst]
        s_i = n_i[src]
        s_j = n_j[dst]
        sim = np.zeros_like(dot)
        ok = (s_i >= NORM_EPS) & (s_j >= NORM_EPS)
        sim[ok] = dot[ok] / (s_i[ok] * s_j[ok])
        win = sim > best_sim[src]  # strict: earlier tie-key candidates keep ties
        bs = best_sim[src]
        bs[win] = sim[win]
        best_sim[src] = bs
        bo = best[src]
        bo[win] = (dr, dc)
        best[src] = bo
        f = found[src]
        f[win] = True
        found[src] = f
    if not found.all():
        raise ValidationError("some locations had no in-bounds candidate")
    return best


def compute_nn_field(f_i: np.ndarray, f_j: np.ndarray, window=1,
                     tiebreak: str = "l1_rowmajor", backend: str = "auto",
                     direction: Optional[str] = None) -> NNField:
    """Windowed argmax-cosine correspondence field from f_i to f_j.

    f_i, f_j: [C, h, w] feature maps of identical shape. ``window`` is an
    integer radius or a SearchWindow. backend: "auto" uses the compiled
    kernel when present, "reference"/"accel" force a path.
    """
    f_i = np.ascontiguousarray(f_i, dtype=np.float64)
    f_j = np.ascontiguousarray(f_j, dtype=np.float64)
    if f_i.shape != f_j.shape:
        raise ValidationError(f"feature shapes differ: {f_i.shape} vs {f_j.shape}")
    if f_i.ndim != 3:
        raise ValidationError(f"features must be [C, h, w], got {f_i.shape}")
    win = _as_window(window)
    if tiebreak not in TIEBREAKS:
        raise ValidationError(f"unknown tiebreak {tiebreak!r}, options {TIEBREAKS}")
    if backend == "auto":
        backend = active_backend()
    if backend == "accel":
        if _kernel is None:
            raise ValidationError("accel backend requested but nnfield_kernel is not installed")
        offsets = _accel_nn_field(f_i, f_j, win, tiebreak)
    elif backend == "reference":
        offsets = _reference_nn_field(f_i, f_j, win, tiebreak)
    else:
        raise ValidationError(f"unknown backend {backend!r}")
    return NNField(offsets=offsets, window=win, direction=direction)


def _accel_nn_field(f_i: np.ndarray, f_j: np.ndarray, window: SearchWindow,
                    tiebreak: str) -> np.ndarray:
    c, h, w = f_i.shape
    # kernel boundary: contiguous [h, w, C] slabs plus a dims header
    slab_i = np.ascontiguousarray(np.moveaxis(f_i, 0, -1))
    slab_j = np.ascontiguousarray(np.moveaxis(f_j, 0, -1))
    raw = _kernel.nn_field_accel(
        slab_i, slab_j, h, w, c,
        window.rows[0], window.rows[1], window.cols[0], window.cols[1],
        tiebreak,
    )
    return np.frombuffer(raw, dtype=np.int64).reshape(h, w, 2).copy()


def upsample_field(field: NNField, factor: int) -> NNField:
    """Replicate a feature-resolution field up to latent resolution.

    Offsets are nearest-neighbor replicated, scaled by the factor, and
    clamped so mapped coordinates stay in bounds.
    """
    if factor < 1 or int(factor) != factor:
        raise ValidationError(f"upsample factor must be a positive integer, got {factor}")
    if factor == 1:
        return field
    h, w = field.grid
    H, W = h * factor, w * factor
    up = np.repeat(np.repeat(field.offsets * factor, factor, axis=0), factor, axis=1)
    rows = np.arange(H)[:, None]
    cols = np.arange(W)[None, :]
    up[..., 0] = np.clip(up[..., 0], -rows, (H - 1) - rows)
    up[..., 1] = np.clip(up[..., 1], -cols, (W - 1) - cols)
    big_window = SearchWindow(
        rows=(field.window.rows[0] * factor, field.window.rows[1] * factor),
        cols=(field.window.cols[0] * factor, field.window.cols[1] * factor),
    )
    return NNField(offsets=up, window=big_window, direction=field.direction)


def apply_field(values: np.ndarray, field: NNField) -> np.ndarray:
    """Gather neighbor values along a field: out[:, p] = values[:, p + offset(p)].

    values: [C, h, w] at the field's resolution.
    """
    if values.shape[1:] != field.grid:
        raise ValidationError(f"values {values.shape} do not match field grid {field.grid}")
    h, w = field.grid
    rows = np.arange(h)[:, None] + field.offsets[..., 0]
    cols = np.arange(w)[None, :] + field.offsets[..., 1]
    if rows.min() < 0 or rows.max() >= h or cols.min() < 0 or cols.max() >= w:
        raise ValidationError("field maps out of bounds")
    return values[:, rows, cols]
