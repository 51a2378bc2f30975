"""Conditional normalizing-flow perturbation generator."""

from .dct import dct2, dct_down, dct_up, idct2
from .generator import (
    clone_params,
    flow_forward,
    flow_inverse,
    load_generator,
    log_likelihood,
    mode,
    project_ste,
    rsample,
    sample,
    save_generator,
)
from .glow import ConditionalGlow

__all__ = [
    "ConditionalGlow",
    "clone_params",
    "dct2",
    "dct_down",
    "dct_up",
    "flow_forward",
    "flow_inverse",
    "idct2",
    "load_generator",
    "log_likelihood",
    "mode",
    "project_ste",
    "rsample",
    "sample",
    "save_generator",
]
