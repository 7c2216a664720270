"""glyphflow: joint generation/recognition flow matching on glyph strips.

One small transformer is trained in two randomly alternating modes over
three aligned modalities (content canvas, calligraphy strip, box map):
generation denoises the strip and box map given clean content, and
recognition denoises the content given a clean strip and box map. The
corpus is a procedural pseudo-glyph alphabet, so every pipeline stage is
deterministic and exactly scorable.
"""

from .codec import decode, encode
from .duplexdit import DuplexDiT, ModelConfig
from .errors import GlyphflowError
from .flowcore import Mode, assign_timesteps, composite_loss, noise_latent, velocity_target
from .glyphgen import (
    Alphabet,
    CharBox,
    ConditionVector,
    CorpusConfig,
    Polarity,
    Sample,
    Source,
    StyleParams,
)
from .sampler import SampleRequest, decode_glyphs, generate, recognize
from .trainer import TrainConfig, fit, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "Alphabet",
    "CharBox",
    "ConditionVector",
    "CorpusConfig",
    "DuplexDiT",
    "GlyphflowError",
    "Mode",
    "ModelConfig",
    "Polarity",
    "Sample",
    "SampleRequest",
    "Source",
    "StyleParams",
    "TrainConfig",
    "assign_timesteps",
    "composite_loss",
    "decode",
    "decode_glyphs",
    "encode",
    "fit",
    "generate",
    "load_checkpoint",
    "noise_latent",
    "recognize",
    "save_checkpoint",
    "velocity_target",
    "__version__",
]
