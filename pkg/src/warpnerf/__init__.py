"""Deformable radiance fields with a factorized motion module.

Subpackages are intentionally flat: autodiff core, networks, input
encodings, scene model, volume renderer, temporal occupancy grid, trainer,
dataset IO, metrics, checkpointing, and a streaming render service.
"""

__version__ = "0.1.0"
