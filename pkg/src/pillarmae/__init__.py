"""Masked-autoencoder pre-training for LiDAR pillar tokens at desk scale.

A float64 autodiff core, a sparse pyramid transformer encoder, three masking
granularities, a generative decoder that expands visible features into
masked regions, and Chamfer-distance point reconstruction.
"""

from .tensor import Tensor, backward, no_grad
from .pillars import GridSpec, PointCloud, TokenSet, voxelize
from .config import RunConfig, load_config
from .model import PretrainModel

__all__ = [
    "Tensor",
    "backward",
    "no_grad",
    "GridSpec",
    "PointCloud",
    "TokenSet",
    "voxelize",
    "RunConfig",
    "load_config",
    "PretrainModel",
]
