"""Denoiser, autoencoder, and embedder contracts plus the exact toy backbone.

The toy denoiser is analytic: given conditioning that names a registered
scene, it predicts

    eps_hat = (z_t - sqrt(abar_t) * R) / sqrt(1 - abar_t)

where R is the clean scene render. Every deterministic-sampler identity then
holds to machine precision (one step lands on R, inversion round-trips
exactly, and the noise-difference heat between two branches has closed form),
which is what makes the whole pipeline testable at desk scale.

A real diffusion checkpoint plugs in by satisfying ``DenoiserBackend``:
``denoise`` must accept a latent stack, an integer schedule timestep, and a
region conditioning, and return the predicted noise plus the named decoder
block features (the production family maps 768x768 frames to 96x96 latents,
embedding width 768, and should reproduce an inversion/sampling round trip
within 1e-4 max abs error).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Dict, Optional, Protocol, Tuple

import numpy as np

from .types import (
    Conditioning,
    DenoiserOutput,
    FrameVideo,
    LatentVideo,
    MaskSequence,
    RegionConditioning,
    ValidationError,
)
from .world import SyntheticWorld, UnknownSceneError

CORRECTION_BLOCK = "up2"  # decoder block whose features drive latent correction


class DenoiserBackend(Protocol):
    """Contract a denoiser must satisfy to drive the pipeline."""

    feature_blocks: Tuple[str, ...]

    def denoise(self, lat: LatentVideo, t: int, cond: RegionConditioning) -> DenoiserOutput:
        ...


# ---------------------------------------------------------------------------
# autoencoder


class ToyAutoencoder:
    """Identity (scale 1) or block-pooling autoencoder.

    Pooling averages scale x scale pixel blocks; decoding replicates them
    back. On scenes that are constant over the pooling grid the round trip is
    exact, so pixel-level claims can be checked through the latent space.
    """

    def __init__(self, scale: int = 1):
        if scale < 1:
            raise ValidationError("autoencoder scale must be >= 1")
        self.scale = scale

    def encode(self, video: FrameVideo) -> LatentVideo:
        x = video.frames
        k = self.scale
        if k == 1:
            return LatentVideo(latents=x.copy(), timestep=0)
        n, c, h, w = x.shape
        if h % k or w % k:
            raise ValidationError(f"frame dims {h}x{w} not divisible by scale {k}")
        pooled = x.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))
        return LatentVideo(latents=pooled, timestep=0)

    def decode(self, lat: LatentVideo) -> FrameVideo:
        if lat.timestep != 0:
            raise ValidationError(f"decode expects clean latents (timestep 0), got t={lat.timestep}")
        x = lat.latents
        k = self.scale
        if k > 1:
            x = np.repeat(np.repeat(x, k, axis=2), k, axis=3)
        return FrameVideo(frames=np.clip(x, 0.0, 1.0))


# ---------------------------------------------------------------------------
# toy embedders


def _stable_seed(*parts) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


class TextEmbedder:
    """Deterministic hash-to-tokens text embedder.

    A prompt maps to a fixed [tokens, dim] matrix drawn from a generator
    seeded by a stable digest of the string. The empty prompt is the null
    (all-zero) embedding used as the unconditional input.
    """

    def __init__(self, dim: int, tokens: int = 4, seed: int = 0):
        self.dim = dim
        self.tokens = tokens
        self.seed = seed

    def embed(self, prompt: str) -> np.ndarray:
        if prompt == "":
            return np.zeros((self.tokens, self.dim))
        rng = np.random.default_rng(_stable_seed("text", self.seed, prompt))
        v = rng.standard_normal((self.tokens, self.dim))
        return v / np.linalg.norm(v, axis=1, keepdims=True)


class ImageEmbedder:
    """Normalized downsampled-pixel image embedder.

    Pixels are snapped to the 1/255 grid first so an image that round-trips
    through 8-bit files embeds bit-identically to the in-memory original.
    Output dim is pool*pool*channels, zero-padded to target_dim when set (so
    worlds mixing channel counts share one embedding width).
    """

    def __init__(self, pool: int = 4, target_dim: Optional[int] = None):
        self.pool = pool
        self.target_dim = target_dim

    def dim_for(self, channels: int) -> int:
        return self.pool * self.pool * channels

    def embed(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3:
            raise ValidationError(f"image must be [C, H, W], got {image.shape}")
        c, h, w = image.shape
        p = self.pool
        if h % p or w % p:
            raise ValidationError(f"image dims {h}x{w} not divisible by pool {p}")
        snapped = np.round(image * 255.0) / 255.0
        pooled = snapped.reshape(c, p, h // p, p, w // p).mean(axis=(2, 4))
        v = pooled.reshape(-1)
        if self.target_dim is not None:
            if v.shape[0] > self.target_dim:
                raise ValidationError(f"image embeds to {v.shape[0]} dims > target {self.target_dim}")
            v = np.pad(v, (0, self.target_dim - v.shape[0]))
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            return np.zeros_like(v)
        return v / norm


# ---------------------------------------------------------------------------
# scene conditioning


class SceneConditioner:
    """Binds a synthetic world to the toy embedders.

    Conditionings built here carry the scene identity in their embeddings:
    the image part is the embedded render (resolved back by exact byte
    lookup), the text part is the embedded registered prompt. Image wins over
    text when both resolve, mirroring how the image embedding dominates
    appearance.
    """

    def __init__(self, world: SyntheticWorld, pool: int = 8, text_tokens: int = 4, seed: int = 0):
        self.world = world
        self.channels = max((s.channels for s in world.scenes.values()), default=1)
        self.dim = pool * pool * self.channels
        self.image_embedder = ImageEmbedder(pool, target_dim=self.dim)
        self.text_embedder = TextEmbedder(self.dim, tokens=text_tokens, seed=seed)
        self._by_image: Dict[bytes, Tuple[str, int]] = {}
        self._by_text: Dict[bytes, str] = {}
        for name, spec in world.scenes.items():
            self._by_text[self.text_embedder.embed(spec.prompt).tobytes()] = name
            for n in range(spec.max_frames):
                v = self.image_embedder.embed(world.render_frame(name, n))
                if not np.any(v):  # all-zero == null sentinel, resolvable via text only
                    continue
                key = v.tobytes()
                hit = self._by_image.get(key)
                if hit is not None and hit[0] != name:
                    raise ValidationError(
                        f"scene embeddings collide: {name!r} frame {n} vs {hit[0]!r} frame "
                        f"{hit[1]}; use a finer pool or more distinct scenes")
                self._by_image.setdefault(key, (name, n))

    def register_image_alias(self, scene: str, image: np.ndarray, frame: int = 0) -> None:
        """Bind an extra image (e.g. a segmented variant) to a scene."""
        self.world.get(scene)
        self._by_image[self.image_embedder.embed(image).tobytes()] = (scene, frame)

    def conditioning_for(self, scene: str, num_frames: Optional[int] = None, frame: int = 0) -> Conditioning:
        """Conditioning for a scene: per-frame image embeddings when num_frames is given."""
        spec = self.world.get(scene)
        text = self.text_embedder.embed(spec.prompt)
        if num_frames is None:
            image = self.image_embedder.embed(self.world.render_frame(scene, frame))
        else:
            image = np.stack([
                self.image_embedder.embed(self.world.render_frame(scene, n))
                for n in range(num_frames)
            ])
        return Conditioning(text=text, image=image)

    def conditioning_for_image(self, image: np.ndarray, prompt: str) -> Conditioning:
        return Conditioning(text=self.text_embedder.embed(prompt),
                            image=self.image_embedder.embed(image))

    def null_conditioning(self) -> Conditioning:
        return Conditioning(text=self.text_embedder.embed(""), image=np.zeros(self.dim))

    def resolve(self, cond: Conditioning, frame: int) -> str:
        """Scene id for a conditioning; image embedding first, then text."""
        image = cond.image_for_frame(frame)
        hit = self._by_image.get(image.tobytes()) if np.any(image) else None
        if hit is not None:
            return hit[0]
        name = self._by_text.get(np.ascontiguousarray(cond.text).tobytes())
        if name is not None:
            return name
        raise UnknownSceneError("unknown scene id: conditioning matches no registered scene")


# ---------------------------------------------------------------------------
# mask plumbing shared by backbones


def downsample_mask(masks: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbor mask downsample to an internal feature resolution.

    Re-binarized at > 0.5 so the result stays strictly {0, 1}.
    """
    if factor == 1:
        return masks
    n, h, w = masks.shape
    if h % factor or w % factor:
        raise ValidationError(f"mask dims {h}x{w} not divisible by factor {factor}")
    small = masks[:, ::factor, ::factor]
    return (small > 0.5).astype(np.float64)


def _pool_features(x: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return x
    n, c, h, w = x.shape
    return x.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))


# ---------------------------------------------------------------------------
# exact toy denoiser


class ToyDenoiser:
    """Closed-form denoiser over the synthetic world.

    Resolves the scene named by the conditioning, renders its clean latent R
    for each frame, and returns (z_t - sqrt(abar_t) R) / sqrt(1 - abar_t).
    With a mask, the render is composed per region from the background and
    foreground conditionings; injection happens at latent resolution (the
    only internal resolution this backbone has).

    Exposes clean renders as block features: ``up2`` at the configured
    feature scale, plus a coarser ``mid`` when the dims allow.
    """

    def __init__(self, conditioner: SceneConditioner, schedule, feature_downscale: int = 1):
        self.conditioner = conditioner
        self.schedule = schedule
        self.feature_downscale = feature_downscale
        self.feature_blocks = (CORRECTION_BLOCK, "mid")

    # the analytic clean target for a single frame
    def render_for(self, cond: Conditioning, frame_index: int,
                   shape: Optional[Tuple[int, ...]] = None) -> np.ndarray:
        if cond.is_null():
            # unconditional input: an all-zero clean target of the right shape
            if shape is None:
                spec = next(iter(self.conditioner.world.scenes.values()), None)
                if spec is None:
                    raise UnknownSceneError("empty world")
                shape = (spec.channels,) + spec.grid
            return np.zeros(shape)
        scene = self.conditioner.resolve(cond, frame_index)
        return self.conditioner.world.render_latent(scene, frame_index)

    def _compose_render(self, cond: RegionConditioning, num_frames: int,
                        frame_shape: Tuple[int, ...]) -> np.ndarray:
        fg = np.stack([self.render_for(cond.foreground, n, frame_shape)
                       for n in range(num_frames)])
        if cond.mask is None:
            return fg
        if cond.mask.num_frames != num_frames:
            raise ValidationError(
                f"mask has {cond.mask.num_frames} frames, latents have {num_frames}")
        bg = np.stack([self.render_for(cond.background, n, frame_shape)
                       for n in range(num_frames)])
        m = cond.mask.masks[:, None, :, :]  # [N,1,h,w] in {0,1}
        return np.where(m > 0.5, fg, bg)

    def denoise(self, lat: LatentVideo, t: int, cond: RegionConditioning) -> DenoiserOutput:
        sched = self.schedule
        if not 1 <= t <= sched.num_steps:
            raise ValidationError(f"timestep {t} outside [1, {sched.num_steps}]")
        z = lat.latents
        render = self._compose_render(cond, lat.num_frames, z.shape[1:])
        if render.shape != z.shape:
            raise ValidationError(f"render shape {render.shape} != latent shape {z.shape}")
        ab = sched.alpha_bar[t]
        eps = (z - np.sqrt(ab) * render) / np.sqrt(1.0 - ab)
        feats = {CORRECTION_BLOCK: _pool_features(render, self.feature_downscale)}
        h, w = render.shape[2], render.shape[3]
        mid_factor = self.feature_downscale * 2
        if h % mid_factor == 0 and w % mid_factor == 0:
            feats["mid"] = _pool_features(render, mid_factor)
        return DenoiserOutput(eps=eps, block_features=feats)
