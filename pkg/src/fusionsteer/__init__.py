"""Dual-branch RGB-D fusion networks (NetConEmb, NetGated) for steering regression, in numpy."""
from .models import PROFILES, FusionModel, ModelConfig, build_model, count_flops, count_parameters, mask_modality
from .tensor import make_rng, set_deterministic

__version__ = "0.1.0"

__all__ = ["PROFILES", "FusionModel", "ModelConfig", "build_model", "count_flops", "count_parameters",
           "mask_modality", "make_rng", "set_deterministic"]
