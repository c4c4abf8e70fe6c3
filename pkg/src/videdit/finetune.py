"""One-shot finetuning of the inflated attention parameters.

Standard latent reconstruction objective: draw a timestep and a noise sample,
form z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) noise, and regress the
predicted noise onto the injected one with MSE. Per step the image
conditioning comes from one randomly chosen source frame, and with
probability cond_dropout the conditioning is replaced by the null embedding
(the dropout rate is a desk-scale knob, not a published value).

Every random draw flows from one generator, so equal seeds give bit-identical
loss curves.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional

import numpy as np
import torch

from .attention import TrainableToyDenoiser
from .backbone import ImageEmbedder, TextEmbedder, ToyAutoencoder
from .scheduler import DDIMSchedule
from .types import FrameVideo, LatentVideo, RegionConditioning, ValidationError


@dataclass
class FinetuneConfig:
    """Stock values: 16 frames, lr 1e-5, 400 iterations."""

    frames: int = 16
    lr: float = 1e-5
    iterations: int = 400
    cond_dropout: float = 0.1

    def __post_init__(self):
        if self.lr < 0.0:
            raise ValidationError("learning rate must be >= 0")
        if self.iterations < 0:
            raise ValidationError("iterations must be >= 0")
        if not 0.0 <= self.cond_dropout < 1.0:
            raise ValidationError("cond_dropout must lie in [0, 1)")
        if self.frames < 1:
            raise ValidationError("frames must be >= 1")


@dataclass
class FinetuneResult:
    loss_curve: List[float]
    frame_indices: List[int]
    config_hash: str


def config_hash(config: FinetuneConfig) -> str:
    canon = repr(sorted(asdict(config).items()))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def finetune_step(lat0: LatentVideo, cond: RegionConditioning, t: int,
                  noise: np.ndarray, denoiser, sched: DDIMSchedule) -> float:
    """Reconstruction loss of one step for any DenoiserBackend (no gradients).

    The exact toy backbone scores 0 by construction; a unit-variance noise
    sample against a zero predictor scores ~1.
    """
    if noise.shape != lat0.latents.shape:
        raise ValidationError(f"noise {noise.shape} != latents {lat0.latents.shape}")
    if not 1 <= t <= sched.num_steps:
        raise ValidationError(f"timestep {t} outside [1, {sched.num_steps}]")
    ab = sched.alpha_bar[t]
    z_t = LatentVideo(np.sqrt(ab) * lat0.latents + np.sqrt(1.0 - ab) * noise, timestep=t)
    eps = denoiser.denoise(z_t, t, cond).eps
    return float(np.mean((eps - noise) ** 2))


def select_frames(total: int, k: int) -> List[int]:
    """Uniform temporal stride when the source video is longer than the budget."""
    if k > total:
        raise ValidationError(f"finetune frames {k} > video frames {total}")
    if k == total:
        return list(range(total))
    return sorted({int(round(i)) for i in np.linspace(0, total - 1, k)})


def build_trainable_denoiser(channels: int, embed_dim: int, hidden: int = 16,
                             seed: int = 0) -> TrainableToyDenoiser:
    torch.manual_seed(seed)
    return TrainableToyDenoiser(channels=channels, embed_dim=embed_dim, hidden=hidden)


def finetune(model: TrainableToyDenoiser,
             video: FrameVideo,
             prompt: str,
             config: FinetuneConfig,
             sched: DDIMSchedule,
             text_embedder: TextEmbedder,
             image_embedder: ImageEmbedder,
             seed: int = 0,
             autoencoder: Optional[ToyAutoencoder] = None,
             on_step: Optional[Callable[[int, float], None]] = None) -> FinetuneResult:
    """Train the three inflated-attention groups on one source video.

    All selected frames form the batch each step (the spatio-temporal and
    temporal attention need the whole stack anyway).
    """
    autoencoder = autoencoder or ToyAutoencoder(scale=1)
    rng = np.random.default_rng(seed)
    idx = select_frames(video.num_frames, config.frames)
    lat0 = autoencoder.encode(FrameVideo(frames=video.frames[idx])).latents
    z0 = torch.from_numpy(lat0)
    n = z0.shape[0]

    tokens_full = torch.from_numpy(text_embedder.embed(prompt))
    tokens_null = torch.zeros_like(tokens_full)
    frame_embs = torch.stack([torch.from_numpy(image_embedder.embed(video.frames[i]))
                              for i in idx])
    null_emb = torch.zeros(frame_embs.shape[1], dtype=frame_embs.dtype)

    opt = torch.optim.AdamW(model.trainable_parameters(), lr=config.lr)
    curve: List[float] = []
    for it in range(config.iterations):
        t = int(rng.integers(1, sched.num_steps + 1))
        noise = torch.from_numpy(rng.standard_normal(z0.shape))
        pick = int(rng.integers(0, n))
        dropped = rng.random() < config.cond_dropout
        tokens = tokens_null if dropped else tokens_full
        img = null_emb if dropped else frame_embs[pick]
        ab = float(sched.alpha_bar[t])
        z_t = np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * noise

        eps, _ = model(z_t, t, tokens, img.expand(n, -1))
        loss = torch.mean((eps - noise) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
        curve.append(float(loss.detach()))
        if on_step is not None:
            on_step(it, curve[-1])
    return FinetuneResult(loss_curve=curve, frame_indices=idx, config_hash=config_hash(config))


# ---------------------------------------------------------------------------
# checkpoints: only the trainable tensors plus the config hash


def save_checkpoint(path, model: TrainableToyDenoiser, config: FinetuneConfig) -> None:
    trainable = {name: p.detach().clone() for name, p in model.named_parameters()
                 if p.requires_grad}
    torch.save({"trainable": trainable, "config_hash": config_hash(config)}, path)


def load_checkpoint(path, model: TrainableToyDenoiser) -> str:
    blob = torch.load(path, weights_only=True)
    own = dict(model.named_parameters())
    for name, tensor in blob["trainable"].items():
        if name not in own:
            raise ValidationError(f"checkpoint parameter {name!r} not in model")
        with torch.no_grad():
            own[name].copy_(tensor)
    return blob["config_hash"]
