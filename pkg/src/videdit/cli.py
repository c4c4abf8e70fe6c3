"""Command-line surface: finetune / mask / edit / eval.

Every subcommand reads one flat key=value config file; each schema key is
also exposed as a ``--key-with-dashes`` flag, and ``--set key=value`` works
for scripting. ``VIDEDIT_OUTPUT_DIR`` overrides the output directory (the
only environment override).

Exit codes: 0 success, 2 IO error, 3 config/validation error, 4 pipeline
stage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, SCHEMA, load_config, save_config
from .frame_io import (
    FrameIOError,
    load_frames,
    load_image,
    save_frames,
    save_heatmaps,
    save_mask_sequence,
)
from .pipeline import EditPipeline, EditRequest, PipelineConfig, StageError
from .types import ValidationError


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are validation errors (exit 3)
        raise ConfigError(message)


def _add_common(sub):
    sub.add_argument("--config", help="path to a key=value run config file")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="override one config key")
    for key in SCHEMA:
        flag = "--" + key.replace(".", "-").replace("_", "-")
        sub.add_argument(flag, dest=key, default=None, metavar="V", help=argparse.SUPPRESS)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="videdit",
                     description="target-image- and shape-aware latent video editing")
    subs = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("finetune", "one-shot finetuning of the inflated attention layers"),
        ("mask", "compute edit masks and heatmaps from noise differences"),
        ("edit", "run the full editing pipeline"),
        ("eval", "score a frame directory against prompt and target image"),
    ):
        _add_common(subs.add_parser(name, help=doc))
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig.defaults()
    overrides = {}
    for key in SCHEMA:
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    cfg = cfg.with_overrides(overrides)
    env_out = os.environ.get("VIDEDIT_OUTPUT_DIR")
    if env_out:
        cfg = cfg.with_overrides({"paths.output_dir": env_out})
    return cfg


# ---------------------------------------------------------------------------
# shared construction


def _build_stack(cfg: RunConfig, channels: int = 0):
    """channels: latent channel count for the trainable backbone (taken from
    the loaded video); the analytic backbone needs none."""
    from .backbone import SceneConditioner, ToyAutoencoder, ToyDenoiser
    from .world import SyntheticWorld, default_world

    registry = cfg["paths.scene_registry"]
    scale = cfg["backbone.latent_scale"]
    if registry:
        world = SyntheticWorld.load(registry)
        world.image_scale = scale
    else:
        world = default_world(image_scale=scale)
    conditioner = SceneConditioner(world, pool=cfg["backbone.embed_pool"], seed=cfg["seed"])
    sched = cfg.build_schedule()
    autoencoder = ToyAutoencoder(scale=scale)

    kind = cfg["backbone.kind"]
    if kind == "toy_exact":
        denoiser = ToyDenoiser(conditioner, sched,
                               feature_downscale=cfg["backbone.feature_downscale"])
    elif kind == "toy_trainable":
        from .finetune import build_trainable_denoiser, load_checkpoint

        denoiser = build_trainable_denoiser(channels or conditioner.channels,
                                            conditioner.dim,
                                            hidden=cfg["backbone.hidden_dim"],
                                            seed=cfg["seed"])
        if cfg["paths.checkpoint"]:
            load_checkpoint(cfg["paths.checkpoint"], denoiser)
    else:
        raise ConfigError(f"unknown backbone.kind {kind!r}")
    return world, conditioner, sched, autoencoder, denoiser


def _load_video(cfg: RunConfig):
    video = load_frames(cfg["paths.frames_dir"])
    want = cfg["edit.frames"]
    if want and video.num_frames != want:
        raise ConfigError(
            f"frame directory holds {video.num_frames} frames but edit.frames = {want}")
    return video


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg["paths.output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pipeline_config(cfg: RunConfig) -> PipelineConfig:
    return PipelineConfig(
        guidance=cfg.build_guidance(),
        maskgen=cfg.build_maskgen(),
        correction=cfg.build_correction(),
        image_cond_mode=cfg["backbone.image_cond_mode"],
        seed=cfg["seed"],
    )


def _edit_request(cfg: RunConfig, video, target_image) -> EditRequest:
    if not cfg["edit.source_prompt"] or not cfg["edit.target_prompt"]:
        raise ConfigError("edit.source_prompt and edit.target_prompt must be set")
    return EditRequest(
        source_video=video,
        source_prompt=cfg["edit.source_prompt"],
        target_prompt=cfg["edit.target_prompt"],
        target_image=target_image,
        mask_provider=cfg.build_mask_provider(),
        preserve_background=cfg["pipeline.preserve_background"],
        config=_pipeline_config(cfg),
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_finetune(cfg: RunConfig) -> int:
    from .finetune import FinetuneConfig, finetune, save_checkpoint

    # finetuning only makes sense on the trainable backbone
    video = _load_video(cfg)
    world, conditioner, sched, autoencoder, denoiser = _build_stack(
        cfg.with_overrides({"backbone.kind": "toy_trainable"}),
        channels=video.frames.shape[1])
    ft_cfg = FinetuneConfig(frames=min(cfg["finetune.frames"], video.num_frames),
                            lr=cfg["finetune.lr"],
                            iterations=cfg["finetune.iterations"],
                            cond_dropout=cfg["finetune.cond_dropout"])
    result = finetune(denoiser, video, cfg["edit.source_prompt"] or "source video",
                      ft_cfg, sched, conditioner.text_embedder, conditioner.image_embedder,
                      seed=cfg["seed"], autoencoder=autoencoder)
    out = _out_dir(cfg)
    save_checkpoint(out / "checkpoint.pt", denoiser, ft_cfg)
    with open(out / "loss_log.csv", "w") as fh:
        fh.write("iteration,loss\n")
        for i, loss in enumerate(result.loss_curve):
            fh.write(f"{i},{loss!r}\n")
    save_config(out / "run_config.cfg", cfg)
    print(f"finetune: {len(result.loss_curve)} iterations, checkpoint at {out / 'checkpoint.pt'}")
    return 0


def cmd_mask(cfg: RunConfig) -> int:
    from .maskgen import apply_foreground_mask, run_mask_branches, segment_target_foreground
    from .scheduler import ddim_invert
    from .types import Conditioning, RegionConditioning

    import numpy as np

    video = _load_video(cfg)
    world, conditioner, sched, autoencoder, denoiser = _build_stack(
        cfg, channels=video.frames.shape[1])
    target = load_image(cfg["paths.target_image"])
    fg = segment_target_foreground(target, cfg.build_mask_provider())
    emb_t, emb_i = conditioner.text_embedder, conditioner.image_embedder
    cond_src = Conditioning(text=emb_t.embed(cfg["edit.source_prompt"]),
                            image=np.stack([emb_i.embed(f) for f in video.frames]))
    cond_trg = Conditioning(text=emb_t.embed(cfg["edit.target_prompt"]),
                            image=emb_i.embed(apply_foreground_mask(target, fg)))
    clean = autoencoder.encode(video)
    z_T = ddim_invert(clean, RegionConditioning.uniform(cond_src), denoiser, sched)
    result = run_mask_branches(z_T, cond_src, cond_trg, denoiser, sched,
                               config=cfg.build_maskgen(), guidance=cfg.build_guidance(),
                               null_cond=conditioner.null_conditioning())
    out = _out_dir(cfg)
    mask_paths = save_mask_sequence(out / "masks", result.masks)
    heat_paths = save_heatmaps(out / "heat", result.heat)
    meta = [
        f"threshold_used = {result.masks.threshold_used!r}",
        f"band = {sched.timestep_band[0]},{sched.timestep_band[1]}",
        f"frames = {result.masks.num_frames}",
    ]
    (out / "mask_meta.txt").write_text("\n".join(meta) + "\n")
    print(f"mask: wrote {len(mask_paths)} masks and {len(heat_paths)} heatmaps to {out}")
    return 0


def cmd_edit(cfg: RunConfig) -> int:
    video = _load_video(cfg)
    world, conditioner, sched, autoencoder, denoiser = _build_stack(
        cfg, channels=video.frames.shape[1])
    target = load_image(cfg["paths.target_image"])
    pipeline = EditPipeline(denoiser, conditioner, autoencoder, sched)
    result = pipeline.edit_video(_edit_request(cfg, video, target))
    out = _out_dir(cfg)
    frame_paths = save_frames(out / "frames", result.edited_video)
    save_mask_sequence(out / "masks", result.masks)
    save_heatmaps(out / "heat", result.heatmaps)
    with open(out / "diagnostics.jsonl", "w") as fh:
        for record in result.per_step_diagnostics:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    if cfg["eval.enabled"]:
        _write_scores(cfg, out, result.edited_video, target)
    print(f"edit: wrote {len(frame_paths)} frames to {out / 'frames'}")
    return 0


def _write_scores(cfg: RunConfig, out: Path, video, target) -> None:
    from .metrics import (
        ToyPixelEmbedder,
        clip_t_score,
        dino_score,
        temp_score,
        write_metrics_table,
    )

    embedder = ToyPixelEmbedder(channels=video.frames.shape[1], seed=cfg["seed"])
    row = {
        "Method": cfg["eval.method_label"],
        "CLIP-T": clip_t_score(video, cfg["edit.target_prompt"], embedder),
        "DINO": dino_score(video, target, embedder),
        "Temp": temp_score(video, embedder) if video.num_frames >= 2 else "",
    }
    write_metrics_table(out / "metrics.csv", [row])


def cmd_eval(cfg: RunConfig) -> int:
    video = _load_video(cfg)
    target = load_image(cfg["paths.target_image"])
    out = _out_dir(cfg)
    _write_scores(cfg, out, video, target)
    print(f"eval: wrote {out / 'metrics.csv'}")
    return 0


COMMANDS = {"finetune": cmd_finetune, "mask": cmd_mask, "edit": cmd_edit, "eval": cmd_eval}


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except FrameIOError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"pipeline error in stage {exc.stage!r}: {exc}", file=sys.stderr)
        return 4
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
