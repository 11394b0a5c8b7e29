"""Recurrent existence determination: hard-attention glimpses, a
convolutional GRU state, k-maximum prediction aggregation, and a two-term
policy-gradient estimator, with a synthetic stained-digit task generator
and a training/evaluation harness."""

from .aggregate import AggregationConfig, aggregate_gradient, k_argmax, k_max_aggregate, temp_predict
from .autodiff import Tape, Tensor, backward, conv2d_same, finite_diff_check
from .config import RunConfig, format_config, parse_config
from .glimpse import GlimpseConfig, PixelReadCounter, encode_where, extract_glimpse, low_res_overview, to_pixel
from .gru import GruParams, gru_step, init_gru_params, init_state
from .harness import Metrics, evaluate, heatmap, load_dataset, train
from .policy import (
    EpisodeConfig,
    GradientEstimate,
    ModelParams,
    Trajectory,
    apply_update,
    estimate_baseline,
    init_model_params,
    log_prob_grad,
    policy_gradient,
    regret,
    rollout,
    select_action,
)
from .stained import StainConfig, add_stains, central_gradient, gaussian_smooth, synthesize_dataset, thin_writings, upscale_bilinear
from .toytask import make_toy_dataset

__all__ = [name for name in dir() if not name.startswith("_")]
