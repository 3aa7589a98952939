"""Incongruent decoding: rerun test decoding with deliberately mismatched
visual features and report the BLEU delta."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .decoding import translate_sentence
from .evaluation import bleu
from .model import Mode, ModelConfig


def make_incongruent(features: Sequence) -> list:
    """Reverse the segment -> feature assignment over the whole test set:
    segment i receives the feature of segment N-1-i (self-inverse)."""
    if len(features) < 2:
        raise ValueError(
            "incongruent reversal needs at least 2 segments (reversing a "
            "single feature is the identity)")
    return list(features)[::-1]


@dataclass(frozen=True)
class ProbeResult:
    """Congruent vs incongruent BLEU for one (setup, variant) cell."""

    setup: str
    variant: str
    congruent_bleu: float
    incongruent_bleu: float

    @property
    def delta(self) -> float:
        return self.incongruent_bleu - self.congruent_bleu


def probe(config: ModelConfig, params: dict, sources: list[np.ndarray],
          references: list[list[str]], features: list,
          bos_id: int, eos_id: int,
          detokenize: Callable[[Sequence[int]], list[str]],
          beam_size: int = 10, alpha: float = 1.0,
          setup: str = "", variant: str = "",
          max_len: Optional[int] = None
          ) -> tuple[ProbeResult, list[list[str]], list[list[str]]]:
    """Decode the test set twice, congruently and with reversed feature
    assignment, under identical decoding settings.

    Only defined for visual modes. Returns the result plus both hypothesis
    lists (congruent, incongruent) so they can be persisted.
    """
    if config.mode is Mode.TEXT_ONLY:
        raise ValueError("incongruent probe is undefined for a text-only model")
    if len(sources) != len(features):
        raise ValueError(
            f"{len(sources)} test segments but {len(features)} features")

    def decode_all(feats: Sequence) -> list[list[str]]:
        hyps = []
        for src, feat in zip(sources, feats):
            hyp = translate_sentence(config, params, src, feat, bos_id,
                                     eos_id, beam_size=beam_size, alpha=alpha,
                                     max_len=max_len)
            hyps.append(detokenize([t for t in hyp.tokens if t != eos_id]))
        return hyps

    congruent = decode_all(features)
    incongruent = decode_all(make_incongruent(features))
    result = ProbeResult(setup=setup, variant=variant,
                         congruent_bleu=bleu(congruent, references),
                         incongruent_bleu=bleu(incongruent, references))
    return result, congruent, incongruent
