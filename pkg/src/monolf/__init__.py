"""Self-supervised light-field video synthesis from monocular video, desk scale.

The package follows the pipeline end to end: an adaptive low-rank
tensor-display light-field model (:mod:`~monolf.lightfield`), differentiable
warping (:mod:`~monolf.warping`), the self-supervised losses with explicit
disocclusion handling (:mod:`~monolf.losses`), toy-scale synthesis /
displacement / refinement networks (:mod:`~monolf.networks`), a per-frame
direct-fit optimizer (:mod:`~monolf.fitting`), training drivers
(:mod:`~monolf.training`), synthetic ground-truth scenes
(:mod:`~monolf.scenes`), and an evaluation harness
(:mod:`~monolf.metrics`, :mod:`~monolf.experiments`).
"""

from .lightfield import (
    DisplacementVector,
    LightField,
    TDRepresentation,
    angular_offsets,
    center_view,
    extract_epi,
    refocus,
    td_synthesize,
    uniform_displacements,
)
from .losses import (
    LossReport,
    LossWeights,
    bin_density_loss,
    disocclusion_loss,
    geometric_loss,
    photometric_loss,
    refinement_loss,
    temporal_loss,
    total_self_loss,
    tv_loss,
)
from .warping import (
    AffineDepthParams,
    bilinear_sample,
    depth_to_disparity,
    disocclusion_masks,
    flow_warp_candidate,
    forward_splat_disparity,
    inverse_warp,
    warp_sai_to_center,
)

__all__ = [
    "AffineDepthParams",
    "DisplacementVector",
    "LightField",
    "LossReport",
    "LossWeights",
    "TDRepresentation",
    "angular_offsets",
    "bilinear_sample",
    "bin_density_loss",
    "center_view",
    "depth_to_disparity",
    "disocclusion_loss",
    "disocclusion_masks",
    "extract_epi",
    "flow_warp_candidate",
    "forward_splat_disparity",
    "geometric_loss",
    "inverse_warp",
    "photometric_loss",
    "refinement_loss",
    "refocus",
    "td_synthesize",
    "temporal_loss",
    "total_self_loss",
    "tv_loss",
    "uniform_displacements",
    "warp_sai_to_center",
]

__version__ = "0.1.0"
