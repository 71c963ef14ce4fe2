"""Scene-text recognition with position-queried dual-branch fusion.

A desk-scale, trainable recognizer (three-branch encoder, stacked gated
dual-cross-attention decoder, autoregressive beam decoding) together with a
fiducial-point/TPS elastic augmentation engine, built on a minimal
reverse-mode autodiff tensor core.
"""

from .model import BeamHypothesis, ModelConfig, Recognizer
from .vocab import Vocabulary

__version__ = "0.1.0"

__all__ = ["BeamHypothesis", "ModelConfig", "Recognizer", "Vocabulary", "__version__"]
