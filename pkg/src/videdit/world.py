"""Synthetic video world with exact ground truth.

Scenes are piecewise-constant grids: a flat background plus one rectangle
that translates by an integer per-frame velocity. Optionally the rectangle
carries a fixed random texture (rigid with the motion) so feature matching
has something to lock onto. Because geometry, motion, and intensities are
registered up front, object footprints and optical flow are known exactly
and every downstream stage can be checked against closed-form oracles.

The registry round-trips through a plain ``key = value`` text file.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .types import FrameVideo, ValidationError


@dataclass(frozen=True)
class SceneSpec:
    """One registered scene: background + a moving, optionally textured rectangle.

    rect is (row0, col0, height, width) at frame 0; velocity is integer
    (d_row, d_col) per frame. Sub-cell motion is deliberately unsupported so
    ground-truth flow stays exact on the latent grid.
    """

    name: str
    grid: Tuple[int, int]
    background: float
    value: float
    rect: Tuple[int, int, int, int]
    velocity: Tuple[int, int]
    channels: int = 1
    prompt: str = ""
    texture_amp: float = 0.0
    texture_seed: int = 0
    max_frames: int = 32

    def __post_init__(self):
        if "." in self.name or "=" in self.name or not self.name:
            raise ValidationError(f"bad scene name {self.name!r} (no dots or '=' allowed)")
        if min(self.grid) < 1 or min(self.rect[2:]) < 1:
            raise ValidationError("grid and rectangle dims must be positive")
        if self.channels < 1 or self.max_frames < 1:
            raise ValidationError("channels and max_frames must be positive")
        lo = self.value - self.texture_amp
        hi = self.value + self.texture_amp
        for v in (self.background, lo, hi):
            if not 0.0 <= v <= 1.0:
                raise ValidationError(
                    f"scene {self.name!r}: values must stay in [0,1], got background="
                    f"{self.background}, textured range [{lo}, {hi}]"
                )
        if not self.prompt:
            object.__setattr__(self, "prompt", self.name)


class UnknownSceneError(KeyError):
    """Raised for scene ids that were never registered."""


class SyntheticWorld:
    """Registry of scenes plus exact renders, footprints, and flow."""

    def __init__(self, image_scale: int = 1):
        if image_scale < 1:
            raise ValidationError("image_scale must be >= 1")
        self.image_scale = image_scale
        self.scenes: Dict[str, SceneSpec] = {}
        self._textures: Dict[str, np.ndarray] = {}

    # -- registry ------------------------------------------------------------

    def register(self, spec: SceneSpec) -> SceneSpec:
        if spec.name in self.scenes:
            raise ValidationError(f"scene {spec.name!r} already registered")
        self.scenes[spec.name] = spec
        return spec

    def get(self, name: str) -> SceneSpec:
        try:
            return self.scenes[name]
        except KeyError:
            raise UnknownSceneError(f"unknown scene id: {name!r}") from None

    def scene_for_prompt(self, prompt: str) -> Optional[SceneSpec]:
        for spec in self.scenes.values():
            if spec.prompt == prompt:
                return spec
        return None

    # -- rendering -----------------------------------------------------------

    def _texture(self, name: str) -> np.ndarray:
        # Fixed per-scene pattern in [-1, 1], shape [C, rect_h, rect_w].
        if name not in self._textures:
            spec = self.get(name)
            rng = np.random.default_rng(spec.texture_seed)
            pat = 2.0 * rng.random((spec.channels, spec.rect[2], spec.rect[3])) - 1.0
            self._textures[name] = pat
        return self._textures[name]

    def _rect_at(self, spec: SceneSpec, n: int) -> Tuple[int, int, int, int]:
        r0 = spec.rect[0] + n * spec.velocity[0]
        c0 = spec.rect[1] + n * spec.velocity[1]
        return r0, c0, spec.rect[2], spec.rect[3]

    def _check_frame(self, spec: SceneSpec, n: int) -> None:
        if not 0 <= n < spec.max_frames:
            raise ValidationError(f"frame {n} outside [0, {spec.max_frames}) for scene {spec.name!r}")

    def render_latent(self, name: str, n: int) -> np.ndarray:
        """Clean latent-resolution render of scene ``name`` at frame ``n``: [C, h, w]."""
        spec = self.get(name)
        self._check_frame(spec, n)
        h, w = spec.grid
        out = np.full((spec.channels, h, w), spec.background, dtype=np.float64)
        r0, c0, rh, rw = self._rect_at(spec, n)
        rlo, rhi = max(r0, 0), min(r0 + rh, h)
        clo, chi = max(c0, 0), min(c0 + rw, w)
        if rlo < rhi and clo < chi:
            out[:, rlo:rhi, clo:chi] = spec.value
            if spec.texture_amp > 0.0:
                pat = self._texture(name)[:, rlo - r0 : rhi - r0, clo - c0 : chi - c0]
                out[:, rlo:rhi, clo:chi] = spec.value + spec.texture_amp * pat
        return out

    def render_frame(self, name: str, n: int) -> np.ndarray:
        """Image-resolution render: latent render block-replicated by image_scale."""
        lat = self.render_latent(name, n)
        k = self.image_scale
        if k == 1:
            return lat
        return np.repeat(np.repeat(lat, k, axis=1), k, axis=2)

    def footprint(self, name: str, n: int) -> np.ndarray:
        """Boolean [h, w] mask of the rectangle at frame ``n`` (clipped to the grid)."""
        spec = self.get(name)
        self._check_frame(spec, n)
        h, w = spec.grid
        fp = np.zeros((h, w), dtype=bool)
        r0, c0, rh, rw = self._rect_at(spec, n)
        fp[max(r0, 0) : min(r0 + rh, h), max(c0, 0) : min(c0 + rw, w)] = True
        return fp

    def flow(self, name: str, n: int, direction: int = +1) -> np.ndarray:
        """Ground-truth flow [h, w, 2] from frame ``n`` to ``n + direction``.

        Inside the frame-``n`` footprint the offset is the scene velocity
        (negated for direction -1); the static background has zero flow.
        """
        if direction not in (+1, -1):
            raise ValidationError("direction must be +1 or -1")
        spec = self.get(name)
        fp = self.footprint(name, n)
        gt = np.zeros(spec.grid + (2,), dtype=np.int64)
        gt[fp] = np.asarray(spec.velocity, dtype=np.int64) * direction
        return gt

    def synth_video(self, name: str, num_frames: int) -> FrameVideo:
        """Deterministic N-frame video of a scene at image resolution."""
        if num_frames < 1:
            raise ValidationError("num_frames must be >= 1")
        frames = np.stack([self.render_frame(name, n) for n in range(num_frames)])
        return FrameVideo(frames=frames)

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        Path(path).write_text(serialize_world(self))

    @classmethod
    def load(cls, path) -> "SyntheticWorld":
        return parse_world(Path(path).read_text())


def serialize_world(world: SyntheticWorld) -> str:
    lines: List[str] = ["# videdit synthetic world registry"]
    lines.append(f"world.image_scale = {world.image_scale}")
    for name in sorted(world.scenes):
        s = world.scenes[name]
        p = f"scene.{name}"
        lines.append(f"{p}.grid = {s.grid[0]},{s.grid[1]}")
        lines.append(f"{p}.background = {s.background!r}")
        lines.append(f"{p}.value = {s.value!r}")
        lines.append(f"{p}.rect = {','.join(str(v) for v in s.rect)}")
        lines.append(f"{p}.velocity = {s.velocity[0]},{s.velocity[1]}")
        lines.append(f"{p}.channels = {s.channels}")
        lines.append(f"{p}.prompt = {s.prompt}")
        lines.append(f"{p}.texture_amp = {s.texture_amp!r}")
        lines.append(f"{p}.texture_seed = {s.texture_seed}")
        lines.append(f"{p}.max_frames = {s.max_frames}")
    return "\n".join(lines) + "\n"


def parse_world(text: str) -> SyntheticWorld:
    entries: Dict[str, Dict[str, str]] = {}
    image_scale = 1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"registry line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "world.image_scale":
            image_scale = int(value)
            continue
        parts = key.split(".")
        if len(parts) != 3 or parts[0] != "scene":
            raise ValidationError(f"registry line {lineno}: unknown key {key!r}")
        entries.setdefault(parts[1], {})[parts[2]] = value

    world = SyntheticWorld(image_scale=image_scale)
    for name, kv in entries.items():
        known = {"grid", "background", "value", "rect", "velocity", "channels",
                 "prompt", "texture_amp", "texture_seed", "max_frames"}
        unknown = set(kv) - known
        if unknown:
            raise ValidationError(f"scene {name!r}: unknown fields {sorted(unknown)}")
        for required in ("grid", "background", "value", "rect", "velocity"):
            if required not in kv:
                raise ValidationError(f"scene {name!r}: missing field {required!r}")

        def ints(s):
            return tuple(int(v) for v in s.split(","))

        world.register(SceneSpec(
            name=name,
            grid=ints(kv["grid"]),
            background=float(kv["background"]),
            value=float(kv["value"]),
            rect=ints(kv["rect"]),
            velocity=ints(kv["velocity"]),
            channels=int(kv.get("channels", "1")),
            prompt=kv.get("prompt", ""),
            texture_amp=float(kv.get("texture_amp", "0.0")),
            texture_seed=int(kv.get("texture_seed", "0")),
            max_frames=int(kv.get("max_frames", "32")),
        ))
    return world


# The shape-edit pairs below keep |value_src - value_trg| == |value_trg - background|
# and the target rectangle strictly containing the source one under a shared
# velocity. Both branches then disagree by the same amount everywhere on the
# target footprint, so the expected edit mask is exactly that footprint.
SHAPE_PAIRS: List[Tuple[str, str]] = [
    ("shape-src-a", "shape-trg-a"),
    ("shape-src-b", "shape-trg-b"),
    ("shape-src-c", "shape-trg-c"),
    ("shape-src-d", "shape-trg-d"),
    ("shape-src-e", "shape-trg-e"),
]


def default_world(image_scale: int = 1) -> SyntheticWorld:
    """The stock registry used by tests and the CLI demos."""
    # max_frames keeps every moving rectangle at least partly visible; fully
    # clipped frames are flat, and flat frames of different scenes embed
    # identically after normalization
    w = SyntheticWorld(image_scale=image_scale)
    w.register(SceneSpec("square-8", (8, 8), 0.2, 0.9, (2, 1, 3, 3), (0, 1), max_frames=7))
    w.register(SceneSpec("blank-8", (8, 8), 0.0, 0.0, (0, 0, 1, 1), (0, 0)))
    # dyadic values: block-pooled means are exact in floating point
    w.register(SceneSpec("pool-8", (8, 8), 0.25, 0.75, (2, 2, 4, 4), (0, 1), max_frames=6))

    shape = dict(grid=(16, 16), background=0.0, channels=1, max_frames=8)
    w.register(SceneSpec("shape-src-a", value=1.0, rect=(6, 6, 3, 3), velocity=(0, 1), **shape))
    w.register(SceneSpec("shape-trg-a", value=0.5, rect=(5, 5, 5, 5), velocity=(0, 1), **shape))
    w.register(SceneSpec("shape-src-b", value=1.0, rect=(7, 3, 2, 4), velocity=(0, 1), **shape))
    w.register(SceneSpec("shape-trg-b", value=0.5, rect=(6, 2, 4, 6), velocity=(0, 1), **shape))
    w.register(SceneSpec("shape-src-c", value=1.0, rect=(4, 8, 4, 2), velocity=(1, 0), **shape))
    w.register(SceneSpec("shape-trg-c", value=0.5, rect=(3, 7, 6, 5), velocity=(1, 0), **shape))
    w.register(SceneSpec("shape-src-d", value=1.0, rect=(8, 5, 3, 4), velocity=(0, 1), **shape))
    w.register(SceneSpec("shape-trg-d", value=0.5, rect=(7, 4, 5, 5), velocity=(0, 1), **shape))
    w.register(SceneSpec("shape-src-e", value=1.0, rect=(6, 4, 2, 2), velocity=(0, 1), **shape))
    w.register(SceneSpec("shape-trg-e", value=0.5, rect=(5, 3, 4, 4), velocity=(0, 1), **shape))

    # textured drift scenes: large texture amplitude spreads the per-cell
    # feature directions, which cosine matching needs to stay discriminative
    # under injected latent noise
    w.register(SceneSpec("drift-a", (16, 16), 0.1, 0.5, (4, 2, 6, 6), (0, 1),
                         channels=3, texture_amp=0.4, texture_seed=11, max_frames=8))
    w.register(SceneSpec("drift-b", (16, 16), 0.15, 0.5, (3, 3, 7, 6), (1, 1),
                         channels=3, texture_amp=0.5, texture_seed=23, max_frames=8))
    return w


def expected_edit_mask(world: SyntheticWorld, src: str, trg: str, n: int) -> np.ndarray:
    """Geometric oracle for the edit mask: where the two clean renders differ.

    Computed from registry geometry alone (footprints and registered values),
    independent of any denoising code path.
    """
    s, t = world.get(src), world.get(trg)
    if s.grid != t.grid:
        raise ValidationError("scene pair must share a grid")
    if s.texture_amp > 0 or t.texture_amp > 0:
        raise ValidationError("geometric oracle only defined for flat (untextured) scenes")
    fp_s, fp_t = world.footprint(src, n), world.footprint(trg, n)
    only_s = fp_s & ~fp_t
    only_t = fp_t & ~fp_s
    both = fp_s & fp_t
    diff = np.zeros(s.grid, dtype=bool)
    diff |= only_s & (s.value != t.background)
    diff |= only_t & (t.value != s.background)
    diff |= both & (s.value != t.value)
    diff |= ~(fp_s | fp_t) & (s.background != t.background)
    return diff
