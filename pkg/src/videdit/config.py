"""Run configuration: one flat ``key = value`` text file.

Every knob of every stage lives under a dotted key; unknown keys are
rejected, values are typed against the schema, and parse -> serialize ->
parse is a fixed point. Defaults follow the stock hyperparameters of the
editing method (50 DDIM steps, mask band top 20%, threshold 0.6, blend
weights 0.1/0.8/0.1, 4x4 search window, finetune 16 frames / lr 1e-5 /
400 iterations, guidance scale 12.5).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict

from .correction import BlendWeights, CorrectionConfig
from .maskgen import MaskGenConfig, MaskProvider
from .nnfield import SearchWindow
from .scheduler import DDIMSchedule, GuidanceConfig, make_schedule
from .types import ValidationError


class ConfigError(ValidationError):
    """Bad key, bad value, or unreadable config file."""


def _bool(s: str) -> bool:
    if s in ("true", "True", "1"):
        return True
    if s in ("false", "False", "0"):
        return False
    raise ValueError(f"expected true/false, got {s!r}")


# key -> (type converter, default)
SCHEMA: Dict[str, tuple] = {
    "seed": (int, 0),
    "paths.frames_dir": (str, ""),
    "paths.target_image": (str, ""),
    "paths.output_dir": (str, "out"),
    "paths.checkpoint": (str, ""),
    "paths.scene_registry": (str, ""),
    "backbone.kind": (str, "toy_exact"),  # toy_exact | toy_trainable
    "backbone.latent_scale": (int, 1),
    "backbone.feature_downscale": (int, 1),
    "backbone.hidden_dim": (int, 16),
    "backbone.embed_pool": (int, 8),
    "backbone.image_cond_mode": (str, "per_frame"),
    "schedule.steps": (int, 50),
    "schedule.curve": (str, "linear"),
    "schedule.alpha_bar_end": (float, 0.01),
    "schedule.band_fraction": (float, 0.8),
    "guidance.scale": (float, 12.5),
    "guidance.enabled": (_bool, False),
    "guidance.enabled_for_mask": (_bool, False),
    "finetune.frames": (int, 16),
    "finetune.lr": (float, 1e-5),
    "finetune.iterations": (int, 400),
    "finetune.cond_dropout": (float, 0.1),
    "mask.threshold": (float, 0.6),
    "mask.closing_radius": (int, 0),
    "mask.provider": (str, "full_image"),
    "mask.provider_threshold": (float, 0.5),
    "mask.provider_mask_path": (str, ""),
    "correction.block": (str, "up2"),
    "correction.window": (str, "corner4"),  # corner4 | radius:<r>
    "correction.active_tail": (int, 5),
    "correction.w_prev": (float, 0.1),
    "correction.w_center": (float, 0.8),
    "correction.w_next": (float, 0.1),
    "correction.tiebreak": (str, "l1_rowmajor"),
    "correction.backend": (str, "auto"),
    "pipeline.preserve_background": (_bool, True),
    "edit.source_prompt": (str, ""),
    "edit.target_prompt": (str, ""),
    "edit.frames": (int, 0),  # 0: use every frame in the directory
    "eval.enabled": (_bool, False),
    "eval.method_label": (str, "videdit-toy"),
}


@dataclass
class RunConfig:
    values: Dict[str, Any]

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str):
        return self.values[key]

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls(values={k: default for k, (_, default) in SCHEMA.items()})

    def with_overrides(self, overrides: Dict[str, str]) -> "RunConfig":
        merged = dict(self.values)
        for key, raw in overrides.items():
            merged[key] = _convert(key, raw)
        return RunConfig(values=merged)

    # -- object builders -------------------------------------------------------

    def build_schedule(self) -> DDIMSchedule:
        return make_schedule(self["schedule.steps"], curve=self["schedule.curve"],
                             alpha_bar_end=self["schedule.alpha_bar_end"],
                             band_fraction=self["schedule.band_fraction"])

    def build_guidance(self) -> GuidanceConfig:
        return GuidanceConfig(scale=self["guidance.scale"], enabled=self["guidance.enabled"],
                              enabled_for_mask=self["guidance.enabled_for_mask"])

    def build_maskgen(self) -> MaskGenConfig:
        return MaskGenConfig(threshold=self["mask.threshold"],
                             closing_radius=self["mask.closing_radius"])

    def build_mask_provider(self) -> MaskProvider:
        return MaskProvider(strategy=self["mask.provider"],
                            threshold=self["mask.provider_threshold"],
                            mask_path=self["mask.provider_mask_path"] or None)

    def build_window(self) -> SearchWindow:
        spec = self["correction.window"]
        if spec == "corner4":
            return SearchWindow.corner4()
        if spec.startswith("radius:"):
            return SearchWindow.radius(int(spec.split(":", 1)[1]))
        raise ConfigError(f"correction.window must be 'corner4' or 'radius:<r>', got {spec!r}")

    def build_correction(self) -> CorrectionConfig:
        return CorrectionConfig(
            block_name=self["correction.block"],
            window=self.build_window(),
            active_tail=self["correction.active_tail"],
            weights=BlendWeights(self["correction.w_prev"], self["correction.w_center"],
                                 self["correction.w_next"]),
            tiebreak=self["correction.tiebreak"],
            backend=self["correction.backend"],
        )


def _convert(key: str, raw: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    conv, _ = SCHEMA[key]
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc


def parse_config(text: str) -> RunConfig:
    values = dict(RunConfig.defaults().values)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        values[key] = _convert(key, value)
    return RunConfig(values=values)


def serialize_config(config: RunConfig) -> str:
    lines = ["# videdit run configuration"]
    for key in sorted(config.values):
        v = config.values[key]
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())


def save_config(path, config: RunConfig) -> None:
    Path(path).write_text(serialize_config(config))
