"""Inflated attention stack and the trainable toy denoiser built from it.

Inflation follows the one-shot video-editing recipe: spatial self-attention
becomes spatio-temporal attention whose keys/values for frame n come from
the concatenated features of frame 0 and frame n-1 (frame 0 attends to
itself only, the unique consistent degeneration at N == 1), and a temporal
self-attention over the frame axis is added after the cross-attention.

Only three parameter groups ever train: the spatio-temporal attention query
weights, the cross-attention query weights, and all temporal-attention
weights. Everything else is frozen, and the census helpers make that
auditable.

The toy network here is deliberately tiny; it exists so finetuning, masked
embedding injection, and checkpointing can be exercised end to end on a
synthetic video in seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from .backbone import CORRECTION_BLOCK, downsample_mask
from .types import DenoiserOutput, LatentVideo, RegionConditioning, ValidationError

TRAINABLE_GROUPS = frozenset({"st_attn_query", "cross_attn_query", "t_attn_all"})

_DTYPE = torch.float64


@dataclass(frozen=True)
class AttentionInflationSpec:
    """Construction policy for the inflated stack."""

    key_frame_policy: str = "first_and_prev"
    t_attn_enabled: bool = True
    trainable: frozenset = field(default_factory=lambda: TRAINABLE_GROUPS)

    def __post_init__(self):
        if self.key_frame_policy != "first_and_prev":
            raise ValidationError(f"unknown key-frame policy {self.key_frame_policy!r}")
        unknown = set(self.trainable) - TRAINABLE_GROUPS
        if unknown:
            raise ValidationError(f"unknown trainable groups {sorted(unknown)}")


def _attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    scale = 1.0 / math.sqrt(q.shape[-1])
    attn = torch.softmax(q @ k.transpose(-2, -1) * scale, dim=-1)
    return attn @ v


class SpatioTemporalAttention(nn.Module):
    """Self-attention where frame n's keys/values come from frames {0, n-1}."""

    def __init__(self, dim: int):
        super().__init__()
        self.to_q = nn.Linear(dim, dim, bias=False, dtype=_DTYPE)
        self.to_k = nn.Linear(dim, dim, bias=False, dtype=_DTYPE)
        self.to_v = nn.Linear(dim, dim, bias=False, dtype=_DTYPE)
        self.to_out = nn.Linear(dim, dim, bias=False, dtype=_DTYPE)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        # h: [N, S, d]; context per frame: concat(features of frame 0, frame n-1)
        n = h.shape[0]
        outs = []
        for i in range(n):
            if i == 0:
                ctx = h[0]
            else:
                ctx = torch.cat([h[0], h[i - 1]], dim=0)
            q = self.to_q(h[i])
            k = self.to_k(ctx)
            v = self.to_v(ctx)
            outs.append(self.to_out(_attend(q, k, v)))
        return h + torch.stack(outs)


class CrossAttention(nn.Module):
    """Features query the prompt tokens."""

    def __init__(self, dim: int, text_dim: int):
        super().__init__()
        self.to_q = nn.Linear(dim, dim, bias=False, dtype=_DTYPE)
        self.to_k = nn.Linear(text_dim, dim, bias=False, dtype=_DTYPE)
        self.to_v = nn.Linear(text_dim, dim, bias=False, dtype=_DTYPE)
        self.to_out = nn.Linear(dim, dim, bias=False, dtype=_DTYPE)

    def forward(self, h: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        # h: [N, S, d], tokens: [L, text_dim]
        q = self.to_q(h)
        k = self.to_k(tokens)
        v = self.to_v(tokens)
        return h + self.to_out(_attend(q, k.unsqueeze(0), v.unsqueeze(0)))


class TemporalAttention(nn.Module):
    """Self-attention along the frame axis, one head per spatial location."""

    def __init__(self, dim: int):
        super().__init__()
        self.to_q = nn.Linear(dim, dim, bias=False, dtype=_DTYPE)
        self.to_k = nn.Linear(dim, dim, bias=False, dtype=_DTYPE)
        self.to_v = nn.Linear(dim, dim, bias=False, dtype=_DTYPE)
        self.to_out = nn.Linear(dim, dim, bias=False, dtype=_DTYPE)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        # permute so the attention axis is time: [N, S, d] -> [S, N, d]
        ht = h.permute(1, 0, 2)
        out = self.to_out(_attend(self.to_q(ht), self.to_k(ht), self.to_v(ht)))
        return h + out.permute(1, 0, 2)


def sinusoidal_time_embedding(t: int, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=_DTYPE) / max(half - 1, 1))
    ang = t * freqs
    emb = torch.cat([torch.sin(ang), torch.cos(ang)])
    if emb.shape[0] < dim:
        emb = torch.nn.functional.pad(emb, (0, dim - emb.shape[0]))
    return emb


class TrainableToyDenoiser(nn.Module):
    """A minimal inflated denoiser: project in, inject timestep + image
    embedding (per region when a mask is given), run ST-attn, cross-attn,
    T-attn, project out to a noise prediction."""

    def __init__(self, channels: int, embed_dim: int, hidden: int = 16,
                 spec: Optional[AttentionInflationSpec] = None):
        super().__init__()
        self.spec = spec or AttentionInflationSpec()
        self.channels = channels
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.in_proj = nn.Linear(channels, hidden, bias=False, dtype=_DTYPE)
        self.img_proj = nn.Linear(embed_dim, hidden, bias=False, dtype=_DTYPE)
        self.st_attn = SpatioTemporalAttention(hidden)
        self.cross_attn = CrossAttention(hidden, embed_dim)
        self.t_attn = TemporalAttention(hidden) if self.spec.t_attn_enabled else None
        self.out_proj = nn.Linear(hidden, channels, bias=False, dtype=_DTYPE)
        self.feature_blocks: Tuple[str, ...] = (CORRECTION_BLOCK,)
        self._apply_trainable_flags()

    # -- trainable bookkeeping ------------------------------------------------

    def _group_parameters(self) -> Dict[str, Iterable[nn.Parameter]]:
        groups = {
            "st_attn_query": list(self.st_attn.to_q.parameters()),
            "cross_attn_query": list(self.cross_attn.to_q.parameters()),
            "t_attn_all": list(self.t_attn.parameters()) if self.t_attn is not None else [],
        }
        return groups

    def _apply_trainable_flags(self) -> None:
        for p in self.parameters():
            p.requires_grad_(False)
        for name, params in self._group_parameters().items():
            if name in self.spec.trainable:
                for p in params:
                    p.requires_grad_(True)

    def trainable_census(self) -> Dict[str, int]:
        """Trainable parameter count per group, plus any strays under 'other'."""
        census = {name: sum(p.numel() for p in params if p.requires_grad)
                  for name, params in self._group_parameters().items()}
        grouped = {id(p) for params in self._group_parameters().values() for p in params}
        census["other"] = sum(p.numel() for p in self.parameters()
                              if p.requires_grad and id(p) not in grouped)
        return census

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    # -- forward ----------------------------------------------------------------

    def forward(self, z: torch.Tensor, t: int, tokens: torch.Tensor,
                img_fg: torch.Tensor, img_bg: Optional[torch.Tensor] = None,
                mask: Optional[torch.Tensor] = None,
                ) -> Tuple[torch.Tensor, torch.Tensor]:
        """z: [N, C, h, w]; tokens: [L, embed_dim]; img_fg/img_bg: [N, embed_dim];
        mask: [N, h, w] in {0,1} or None. Returns (eps, block features)."""
        n, c, h, w = z.shape
        hid = self.in_proj(z.permute(0, 2, 3, 1).reshape(n, h * w, c))
        t_emb = sinusoidal_time_embedding(t, self.hidden)
        inj_fg = self.img_proj(img_fg)  # [N, hidden]
        if mask is None:
            inj = inj_fg[:, None, :]
        else:
            if img_bg is None:
                raise ValidationError("masked injection needs a background embedding")
            inj_bg = self.img_proj(img_bg)
            m = mask.reshape(n, h * w, 1)
            inj = torch.where(m > 0.5, inj_fg[:, None, :], inj_bg[:, None, :])
        hid = hid + t_emb + inj
        hid = self.st_attn(hid)
        hid = self.cross_attn(hid, tokens)
        if self.t_attn is not None:
            hid = self.t_attn(hid)
        feats = hid.reshape(n, h, w, self.hidden).permute(0, 3, 1, 2)
        eps = self.out_proj(hid).reshape(n, h, w, c).permute(0, 3, 1, 2)
        return eps, feats

    # -- DenoiserBackend facade ---------------------------------------------------

    def denoise(self, lat: LatentVideo, t: int, cond: RegionConditioning) -> DenoiserOutput:
        n = lat.num_frames
        z = torch.from_numpy(lat.latents)
        tokens = torch.from_numpy(np.ascontiguousarray(cond.foreground.text))
        img_fg = torch.stack([torch.from_numpy(cond.foreground.image_for_frame(i)) for i in range(n)])
        if cond.mask is None:
            eps, feats = self.forward_nograd(z, t, tokens, img_fg)
        else:
            if cond.mask.num_frames != n:
                raise ValidationError(
                    f"mask has {cond.mask.num_frames} frames, latents have {n}")
            img_bg = torch.stack([torch.from_numpy(cond.background.image_for_frame(i))
                                  for i in range(n)])
            mask = torch.from_numpy(downsample_mask(cond.mask.masks, 1))
            eps, feats = self.forward_nograd(z, t, tokens, img_fg, img_bg, mask)
        return DenoiserOutput(eps=eps.numpy(), block_features={CORRECTION_BLOCK: feats.numpy()})

    def forward_nograd(self, *args, **kwargs):
        with torch.no_grad():
            return self.forward(*args, **kwargs)
