"""mmtlab: a desk-scale multimodal machine translation laboratory.

Pieces: a small autodiff tensor core, BPE subword models, verb masking over
annotated corpora, three visual feature constructions, a transformer
encoder-decoder with additive (AIC) and attention-based (AIF) visual
conditioning, beam-search decoding, corpus BLEU and ranking evaluation,
an incongruent-decoding probe, and a pipeline CLI tying them together.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, backward  # noqa: F401
from .bpe import BpeModel, learn_merges  # noqa: F401
from .evaluation import bleu, rank_score  # noqa: F401
from .masking import ActionLexicon, AnnotatedSentence, MaskVariant, mask  # noqa: F401
from .model import Mode, ModelConfig, VisualKind  # noqa: F401
