"""Reconstruction of two-echo cine phase-contrast MRI from undersampled k-space.

Four methods are provided: a sensitivity-weighted least-squares solution
(SWS), a locally low-rank regularised solution (LLR), a magnitude-phase
neural field fitted to both echoes, and a hybrid voxel solution pulled
towards the field.
"""
__version__ = "0.1.0"

from .errors import ConfigError, ContainerError, DomainError, NumericError, ShapeError
from .metrics import flow, flow_errors, psnr
from .phantom import PhantomConfig, acquire, make_coilmaps, make_phantom, undersample
from .recon import (embed_field, field_images, solve_hybrid, solve_llr, solve_sws,
                    train_field)
from .sampling import cartesian_plan, radial_plan

__all__ = [
    "ConfigError", "ContainerError", "DomainError", "NumericError", "ShapeError",
    "PhantomConfig", "acquire", "cartesian_plan", "embed_field", "field_images", "flow",
    "flow_errors", "make_coilmaps", "make_phantom", "psnr", "radial_plan", "solve_hybrid",
    "solve_llr", "solve_sws", "train_field", "undersample",
]
