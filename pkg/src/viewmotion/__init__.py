"""Unsupervised cross-view scene flow prediction on synthetic multi-view clips.

The package is organized as:

- ``autodiff``: tape-based reverse-mode differentiation and layers
- ``model``: the recurrent encoder, decoders, and classifier heads
- ``world``: synthetic scenes, cameras, rendering, and dataset files
- ``training``: optimization loops, checkpoints, and metric logs
- ``evaluation``: flow/action metrics, invariance probes, ablations
"""

__version__ = "0.1.0"
