"""End-to-end edit orchestration.

Per inference step (t = T .. 1):

1. two denoiser passes from the same latents: one conditioned on the target
   prompt + target image everywhere, one region-conditioned (source image
   embedding outside the edit mask, target inside);
2. latent fusion of the two stepped outputs: outside the mask the region
   pass wins outright, inside the two are averaged;
3. on the noisiest steps (t >= T - active_tail), inter-frame blending along
   correspondence fields computed on the designated block's features from
   the unmasked pass;
4. optional background preservation, pinning everything outside the mask to
   the encoded source latents.

The loop runs down to t = 1 so the final latents are clean (timestep 0) and
decodable; identity requests collapse every stage to a no-op and reproduce
the source bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .backbone import ToyAutoencoder
from .correction import CorrectionConfig, blend_video, fields_for_frames
from .maskgen import (
    MaskGenConfig,
    MaskGenResult,
    MaskProvider,
    apply_foreground_mask,
    run_mask_branches,
    segment_target_foreground,
)
from .metrics import correspondence_error_map
from .nnfield import compute_nn_field, upsample_field
from .scheduler import (
    DDIMSchedule,
    GuidanceConfig,
    cfg_combine,
    ddim_invert,
    ddim_step,
)
from .types import (
    Conditioning,
    DenoiserOutput,
    FrameVideo,
    HeatmapSequence,
    LatentVideo,
    MaskSequence,
    RegionConditioning,
    ValidationError,
)


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage identity."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    maskgen: MaskGenConfig = field(default_factory=MaskGenConfig)
    correction: CorrectionConfig = field(default_factory=CorrectionConfig)
    image_cond_mode: str = "per_frame"  # or "random_frame"
    seed: int = 0

    def __post_init__(self):
        if self.image_cond_mode not in ("per_frame", "random_frame"):
            raise ValidationError(f"unknown image_cond_mode {self.image_cond_mode!r}")


@dataclass
class EditRequest:
    source_video: FrameVideo
    source_prompt: str
    target_prompt: str
    target_image: np.ndarray  # [C, H, W]
    mask_provider: MaskProvider = field(default_factory=MaskProvider)
    preserve_background: bool = True
    config: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        if not self.source_prompt or not self.target_prompt:
            raise ValidationError("prompts must be nonempty")
        self.target_image = np.asarray(self.target_image, dtype=np.float64)
        if self.target_image.ndim != 3:
            raise ValidationError(f"target image must be [C, H, W], got {self.target_image.shape}")


@dataclass
class EditResult:
    edited_video: FrameVideo
    masks: MaskSequence
    heatmaps: HeatmapSequence
    per_step_diagnostics: List[Dict] = field(default_factory=list)


def pseudo_image_from_text(text_tokens: np.ndarray) -> np.ndarray:
    """Image-slot stand-in derived from prompt tokens, used for the background
    conditioning when the background is allowed to change."""
    v = text_tokens.mean(axis=0)
    norm = np.linalg.norm(v)
    return v / norm if norm >= 1e-12 else np.zeros_like(v)


def latent_fusion(z_t: LatentVideo, t: int,
                  eps_unmasked: np.ndarray, eps_masked: np.ndarray,
                  masks: MaskSequence, sched: DDIMSchedule) -> LatentVideo:
    """Mask-weighted combination of the two stepped passes:

        z_{t-1} = (M * step(eps_unmasked) + step(eps_masked)) / (1 + M)

    so the region-conditioned pass carries the background alone and the two
    passes average inside the mask.
    """
    stepped_u = ddim_step(z_t, eps_unmasked, t, sched).latents
    stepped_m = ddim_step(z_t, eps_masked, t, sched).latents
    m = masks.masks[:, None, :, :]
    fused = (m * stepped_u + stepped_m) / (1.0 + m)
    return LatentVideo(latents=fused, timestep=t - 1)


class EditPipeline:
    """Binds a denoiser backend, its conditioning embedders, an autoencoder,
    and a schedule into the runnable pipeline."""

    def __init__(self, denoiser, conditioner, autoencoder: ToyAutoencoder,
                 sched: DDIMSchedule):
        self.denoiser = denoiser
        self.conditioner = conditioner
        self.autoencoder = autoencoder
        self.sched = sched

    # -- conditioning construction -------------------------------------------

    def _build_conditionings(self, req: EditRequest, rng: np.random.Generator):
        emb_t = self.conditioner.text_embedder
        emb_i = self.conditioner.image_embedder
        n = req.source_video.num_frames
        text_src = emb_t.embed(req.source_prompt)
        text_trg = emb_t.embed(req.target_prompt)
        if req.config.image_cond_mode == "per_frame":
            img_src = np.stack([emb_i.embed(f) for f in req.source_video.frames])
        else:
            pick = int(rng.integers(0, n))
            img_src = np.broadcast_to(emb_i.embed(req.source_video.frames[pick]),
                                      (n, self.conditioner.dim)).copy()
        fg = segment_target_foreground(req.target_image, req.mask_provider)
        img_trg = emb_i.embed(apply_foreground_mask(req.target_image, fg))
        cond_src = Conditioning(text=text_src, image=img_src)
        cond_trg = Conditioning(text=text_trg, image=img_trg)
        return cond_src, cond_trg

    def _guided_eps(self, z: LatentVideo, t: int, cond: RegionConditioning,
                    guidance: GuidanceConfig) -> DenoiserOutput:
        out = self.denoiser.denoise(z, t, cond)
        if guidance.enabled:
            null = RegionConditioning.uniform(self.conditioner.null_conditioning())
            eps_u = self.denoiser.denoise(z, t, null).eps
            return DenoiserOutput(eps=cfg_combine(eps_u, out.eps, guidance.scale),
                                  block_features=out.block_features)
        return out

    # -- stages ----------------------------------------------------------------

    def _stage(self, name: str, fn):
        try:
            return fn()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc

    def edit_video(self, req: EditRequest) -> EditResult:
        cfg = req.config
        rng = np.random.default_rng(cfg.seed)
        diagnostics: List[Dict] = []

        clean = self._stage("encode", lambda: self.autoencoder.encode(req.source_video))
        cond_src, cond_trg = self._stage("embed", lambda: self._build_conditionings(req, rng))
        z_T = self._stage("invert", lambda: ddim_invert(
            clean, RegionConditioning.uniform(cond_src), self.denoiser, self.sched))

        mask_result: MaskGenResult = self._stage("mask", lambda: run_mask_branches(
            z_T, cond_src, cond_trg, self.denoiser, self.sched,
            config=cfg.maskgen, guidance=cfg.guidance,
            null_cond=self.conditioner.null_conditioning()
            if cfg.guidance.enabled_for_mask else None))
        masks = mask_result.masks
        for t, mean in sorted(mask_result.heat_mean_by_t.items(), reverse=True):
            diagnostics.append({"phase": "mask", "t": t, "heat_mean": mean})

        z_final = self._stage("inference", lambda: self._inference_loop(
            req, z_T, cond_src, cond_trg, masks, clean, diagnostics))

        edited = self._stage("decode", lambda: self.autoencoder.decode(z_final))
        return EditResult(edited_video=edited, masks=masks, heatmaps=mask_result.heat,
                          per_step_diagnostics=diagnostics)

    def edit_image(self, req: EditRequest) -> EditResult:
        """Zero-shot single-frame editing: the same pipeline with the temporal
        machinery degenerate."""
        if req.source_video.num_frames != 1:
            raise ValidationError("edit_image expects a single-frame video")
        return self.edit_video(req)

    # -- the per-step loop -------------------------------------------------------

    def _inference_loop(self, req: EditRequest, z_T: LatentVideo,
                        cond_src: Conditioning, cond_trg: Conditioning,
                        masks: MaskSequence, clean: LatentVideo,
                        diagnostics: List[Dict]) -> LatentVideo:
        cfg = req.config
        n = req.source_video.num_frames
        sched = self.sched
        corr = cfg.correction

        if req.preserve_background:
            bg_cond = Conditioning(text=cond_trg.text, image=cond_src.image)
        else:
            # background free to change: fill the source slot from the target prompt
            bg_cond = Conditioning(text=cond_trg.text,
                                   image=pseudo_image_from_text(cond_trg.text))
        unmasked = RegionConditioning.uniform(cond_trg)
        masked = RegionConditioning(foreground=cond_trg, background=bg_cond, mask=masks)

        z = z_T
        for t in range(sched.num_steps, 0, -1):
            out_u = self._guided_eps(z, t, unmasked, cfg.guidance)
            out_m = self._guided_eps(z, t, masked, cfg.guidance)
            z_next = latent_fusion(z, t, out_u.eps, out_m.eps, masks, sched)

            record: Dict = {"phase": "infer", "t": t, "blend_active": False}
            if corr.is_active(t, sched.num_steps) and n > 1:
                if corr.block_name not in out_u.block_features:
                    raise ValidationError(
                        f"correction block {corr.block_name!r} missing from backbone features "
                        f"{sorted(out_u.block_features)}")
                feats = out_u.block_features[corr.block_name]
                factor = z.latents.shape[2] // feats.shape[2]
                if feats.shape[2] * factor != z.latents.shape[2]:
                    raise ValidationError("feature dims do not divide latent dims")
                prev_f, next_f = fields_for_frames(feats, corr)
                up_prev = [upsample_field(f, factor) if f is not None else None for f in prev_f]
                up_next = [upsample_field(f, factor) if f is not None else None for f in next_f]
                record.update(self._ce_stats(z_next.latents, up_next, masks, corr, before=True))
                blended = blend_video(z_next.latents, up_prev, up_next, masks, corr.weights)
                record.update(self._ce_stats(blended, up_next, masks, corr, before=False))
                m = masks.masks[:, None, :, :]
                record["blend_delta"] = float(np.abs((blended - z_next.latents) * m).mean())
                record["blend_active"] = True
                z_next = LatentVideo(latents=blended, timestep=z_next.timestep)

            if req.preserve_background:
                from .correction import preserve_background

                z_next = LatentVideo(
                    latents=preserve_background(z_next.latents, masks, clean.latents),
                    timestep=z_next.timestep)
            diagnostics.append(record)
            z = z_next
        return z

    def _ce_stats(self, latents: np.ndarray, feature_fields, masks: MaskSequence,
                  corr: CorrectionConfig, before: bool) -> Dict:
        """Latent-field vs feature-field agreement on adjacent pairs.

        On the synthetic worlds the feature fields come from clean renders, so
        this matches correspondence error against ground truth; on any backend
        it measures how much the latents' own correspondences disagree with
        the features'.
        """
        errs = []
        for i in range(latents.shape[0] - 1):
            if feature_fields[i] is None:
                continue
            lat_field = compute_nn_field(latents[i], latents[i + 1],
                                         window=feature_fields[i].window,
                                         tiebreak=corr.tiebreak, backend=corr.backend)
            _, scalar = correspondence_error_map(
                lat_field, feature_fields[i].offsets, eval_mask=masks.masks[i])
            errs.append(scalar)
        key = "ce_before" if before else "ce_after"
        return {key: float(np.mean(errs))} if errs else {}
