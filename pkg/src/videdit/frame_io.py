"""Frame, mask, and heatmap file IO.

Videos live on disk as numbered lossless PNG files (no container decoding),
so identity edits can be checked byte-for-byte. Pixels quantize to the 1/255
grid on write; the toy image embedder snaps to the same grid, which keeps
scene resolution stable across a save/load round trip.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .types import FrameVideo, HeatmapSequence, MaskSequence, ValidationError


class FrameIOError(OSError):
    """Missing or malformed frame/mask files."""


_MODES = {1: "L", 3: "RGB", 4: "RGBA"}


def _to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8)


def _frame_to_image(frame: np.ndarray) -> Image.Image:
    c = frame.shape[0]
    if c not in _MODES:
        raise ValidationError(f"cannot write {c}-channel frames (supported: 1, 3, 4)")
    data = _to_uint8(frame)
    if c == 1:
        return Image.fromarray(data[0], mode="L")
    return Image.fromarray(np.moveaxis(data, 0, -1), mode=_MODES[c])


def _image_to_array(img: Image.Image) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        return arr[None, :, :]
    return np.moveaxis(arr, -1, 0)


def save_frames(directory, video: FrameVideo, prefix: str = "frame") -> list:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for n, frame in enumerate(video.frames):
        path = d / f"{prefix}_{n:05d}.png"
        _frame_to_image(frame).save(path)
        paths.append(path)
    return paths


def load_frames(directory, prefix: str = "frame") -> FrameVideo:
    d = Path(directory)
    if not d.is_dir():
        raise FrameIOError(f"frame directory not found: {d}")
    paths = sorted(d.glob(f"{prefix}_*.png"))
    if not paths:
        raise FrameIOError(f"no '{prefix}_*.png' frames in {d}")
    frames = []
    for path in paths:
        try:
            with Image.open(path) as img:
                frames.append(_image_to_array(img))
        except OSError as exc:
            raise FrameIOError(f"unreadable frame {path}: {exc}") from exc
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        raise FrameIOError(f"frames disagree on shape: {sorted(shapes)}")
    return FrameVideo(frames=np.stack(frames))


def load_image(path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise FrameIOError(f"image not found: {p}")
    with Image.open(p) as img:
        return _image_to_array(img)


def save_mask_sequence(directory, masks: MaskSequence, prefix: str = "mask") -> list:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for n, m in enumerate(masks.masks):
        path = d / f"{prefix}_{n:05d}.png"
        Image.fromarray((m * 255).astype(np.uint8), mode="L").save(path)
        paths.append(path)
    return paths


def load_mask_image(path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise FrameIOError(f"mask image not found: {p}")
    with Image.open(p) as img:
        arr = np.asarray(img.convert("L"))
    return arr > 127


def save_heatmaps(directory, heat: HeatmapSequence, prefix: str = "heat") -> list:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    h = heat.heat
    if not heat.normalized:
        lo = h.min(axis=(1, 2), keepdims=True)
        rng = h.max(axis=(1, 2), keepdims=True) - lo
        rng[rng == 0] = 1.0
        h = (h - lo) / rng
    paths = []
    for n, frame in enumerate(h):
        path = d / f"{prefix}_{n:05d}.png"
        Image.fromarray(np.round(frame * 255).astype(np.uint8), mode="L").save(path)
        paths.append(path)
    return paths
