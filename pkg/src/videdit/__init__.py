"""Target-image- and shape-aware latent video editing, testable at desk scale.

The pieces: a deterministic sampler (`scheduler`), edit-mask generation from
denoising-noise differences (`maskgen`), nearest-neighbor latent correction
(`nnfield`, `correction`), the end-to-end pipeline (`pipeline`), toy backbones
and a synthetic world with exact ground truth (`backbone`, `world`), scoring
(`metrics`), and the operator CLI (`cli`).
"""

from .backbone import (
    CORRECTION_BLOCK,
    DenoiserBackend,
    ImageEmbedder,
    SceneConditioner,
    TextEmbedder,
    ToyAutoencoder,
    ToyDenoiser,
)
from .correction import BlendWeights, CorrectionConfig, blend_frame, blend_video, preserve_background
from .maskgen import (
    MaskGenConfig,
    MaskProvider,
    accumulate_and_binarize,
    generate_masks,
    noise_difference,
    segment_target_foreground,
)
from .metrics import clip_t_score, correspondence_error_map, dino_score, temp_score
from .nnfield import NNField, SearchWindow, compute_nn_field, upsample_field
from .pipeline import EditPipeline, EditRequest, EditResult, PipelineConfig, latent_fusion
from .scheduler import DDIMSchedule, GuidanceConfig, cfg_combine, ddim_invert, ddim_step, make_schedule
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
from .world import SceneSpec, SyntheticWorld, default_world

__version__ = "0.1.0"
