"""Texture-aware domain randomization for semantic segmentation, at desk scale.

Built on a small numpy reverse-mode autodiff engine (:mod:`tldrseg.autodiff`).
"""

__version__ = "0.1.0"
