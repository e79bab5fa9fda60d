"""Video polyp-style detector with proposal-guided alignment and channel-aware temporal aggregation.

Subpackages and modules:

- ``tensor``: numpy-backed reverse-mode autodiff, convolution, sampling, tensor files
- ``model``: backbone and image-based detection heads
- ``spatial`` / ``temporal``: feature alignment and aggregation across frames
- ``targets``, ``losses``, ``postprocess``: training targets, objectives, NMS and fusion
- ``simdata``, ``metrics``: synthetic benchmark and evaluation
- ``pipeline``: training, inference and the ablation harness
- ``cli``: the ``stftdet`` command
"""

__version__ = "0.1.0"
