"""hierseg: hierarchical panoptic segmentation at desk scale.

Provides exact distance transforms, boundary/focal/dice losses with
analytic gradients, a dual-decoder mask-formation head trained by
set-prediction matching, panoptic-quality evaluation, a synthetic scene
generator, and a command-line front end.
"""

__version__ = "0.1.0"
