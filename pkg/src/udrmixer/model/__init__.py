from .complexity import (
    REFERENCE_FLOPS_G,
    REFERENCE_PARAMS_M,
    ComplexityReport,
    complexity_report,
    count_params,
    estimate_flops,
)
from .config import ConfigError, ModelConfig, toy_config
from .layers import (
    ffl_forward,
    ffmb_forward,
    ffml_forward,
    sfmb_forward,
    sfrl_forward,
    sfrl_stage_names,
)
from .network import ModelParams, check_input_shape, init_params, l1_loss, param_shapes, udr_mixer_forward

__all__ = [
    "REFERENCE_FLOPS_G", "REFERENCE_PARAMS_M", "ComplexityReport", "complexity_report", "count_params",
    "estimate_flops", "ConfigError", "ModelConfig", "toy_config", "ffl_forward", "ffmb_forward",
    "ffml_forward", "sfmb_forward", "sfrl_forward", "sfrl_stage_names", "ModelParams",
    "check_input_shape", "init_params", "l1_loss", "param_shapes", "udr_mixer_forward",
]
