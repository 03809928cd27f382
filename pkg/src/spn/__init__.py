"""Soft proposal networks: random-walk objectness maps coupled into a small CNN."""

from spn.sp_core import (
    FeatureMaps,
    ProposalMap,
    SpConfig,
    TransferMatrix,
    build_transfer_matrix,
    generate_proposal,
    random_walk,
    sp_backward,
    sp_forward,
    spatial_kernel,
)

__all__ = [
    "FeatureMaps",
    "ProposalMap",
    "SpConfig",
    "TransferMatrix",
    "build_transfer_matrix",
    "generate_proposal",
    "random_walk",
    "sp_backward",
    "sp_forward",
    "spatial_kernel",
]

__version__ = "0.1.0"
