"""Cross-lingual speech emotion recognition with dynamic-feature resonance."""
from .errors import *  # noqa: F401,F403
from .dsp import AudioBuffer, FeatureConfig, decode_wav, encode_wav, extract_static
from .idfe import EmbeddingSequence, EnhancedRepresentation, IdfeParams, run_idfe
from .irf import IrfParams, ResonanceResult, resonate
from .tric import Batch, Sample, TricParams, classify, total_loss
from .trainer import TrainConfig, cross_validate, evaluate, train

__version__ = "0.1.0"
