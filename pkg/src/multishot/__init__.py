"""Multi-shot video attention machinery at desk scale.

Shot-aware and box-grounded rotary position tables, the per-shot reference
attention mask, reference-copy temporal attention with an analytic backward
pass, rectified-flow training and sampling math, and the arithmetic cores
of the grounding/transition metrics. Heavy inner loops run on a compiled
kernel extension when available and fall back to numpy otherwise; see
multishot.kernels.backend().
"""

from .attention import (
    AttnWeights,
    InContext,
    aggregate_copies,
    expand_copies,
    temporal_attention_backward,
    temporal_attention_forward,
    temporal_attention_naive,
)
from .errors import FullyMaskedRowError, LayoutError
from .flow import (
    DEFAULT_CFG_SCALE,
    DEFAULT_STEPS,
    FlowSample,
    cfg_combine,
    euler_sample,
    interpolate,
    lcm_loss,
    subject_weight_map,
    velocity_target,
)
from .layout import (
    Box,
    ReferenceSpec,
    ShotPlan,
    TokenLayout,
    build_token_layout,
    load_plan_config,
    replicate_text_embeddings,
    shot_of_frame,
)
from .mask import build_mask, mask_blocks, mask_rule
from .metrics import DetBox, grounding_miou, iou, transition_deviation
from .rope import (
    FreqVec,
    RopeSpec,
    RopeTable,
    freq_vector,
    reference_rope_angles,
    sequence_rope_angles,
    video_rope_angles,
)
from .tensor import as_tensor, read_msmt, write_msmt

__version__ = "0.1.0"

__all__ = [
    "AttnWeights", "InContext", "aggregate_copies", "expand_copies",
    "temporal_attention_backward", "temporal_attention_forward",
    "temporal_attention_naive", "FullyMaskedRowError", "LayoutError",
    "DEFAULT_CFG_SCALE", "DEFAULT_STEPS", "FlowSample", "cfg_combine",
    "euler_sample", "interpolate", "lcm_loss", "subject_weight_map",
    "velocity_target", "Box", "ReferenceSpec", "ShotPlan", "TokenLayout",
    "build_token_layout", "load_plan_config", "replicate_text_embeddings",
    "shot_of_frame", "build_mask", "mask_blocks", "mask_rule", "DetBox",
    "grounding_miou", "iou", "transition_deviation", "FreqVec", "RopeSpec",
    "RopeTable", "freq_vector", "reference_rope_angles",
    "sequence_rope_angles", "video_rope_angles", "as_tensor", "read_msmt",
    "write_msmt", "__version__",
]
