"""Beam-search and greedy decoding with length-penalized scoring."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import Mode, ModelConfig, apply_aic, decode_forward, encode


def length_penalty(length: int, alpha: float) -> float:
    """((5 + length) / 6) ** alpha; 1 when alpha is 0."""
    return ((5.0 + length) / 6.0) ** alpha


@dataclass(frozen=True)
class Hypothesis:
    """A decoded target sequence (generated ids, without the start symbol).

    ``score`` is logprob / length_penalty(len(tokens), alpha). A finished
    hypothesis ends at its first end-of-sentence symbol; ``finished`` is
    False only when decoding hit max_len first.
    """

    tokens: tuple[int, ...]
    logprob: float
    score: float
    finished: bool


StepFn = Callable[[tuple[int, ...]], np.ndarray]
# maps a prefix (start symbol included) to the log-probability vector of
# the next token


def greedy(step_fn: StepFn, bos: int, eos: int, alpha: float = 1.0,
           max_len: int = 64) -> Hypothesis:
    """Argmax decoding; equals beam_search with beam_size 1."""
    tokens: list[int] = []
    logprob = 0.0
    for _ in range(max_len):
        logp = step_fn((bos, *tokens))
        tok = int(np.argmax(logp))
        tokens.append(tok)
        logprob += float(logp[tok])
        if tok == eos:
            return Hypothesis(tuple(tokens), logprob,
                              logprob / length_penalty(len(tokens), alpha),
                              True)
    return Hypothesis(tuple(tokens), logprob,
                      logprob / length_penalty(len(tokens), alpha), False)


def beam_search(step_fn: StepFn, bos: int, eos: int, beam_size: int = 10,
                alpha: float = 1.0, max_len: int = 64) -> Hypothesis:
    """Beam expansion over cumulative log-probabilities.

    Finished hypotheses are scored by logprob / length_penalty. The greedy
    rollout always joins the candidate pool, so a wider beam can never
    return a hypothesis scored below the beam-1 result. If no finished
    hypothesis beats the pool the best unfinished one is returned with
    ``finished=False``. Ties break deterministically toward the
    lexicographically smaller token sequence.
    """
    if beam_size < 1:
        raise ValueError(f"beam_size must be >= 1, got {beam_size}")
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")

    baseline = greedy(step_fn, bos, eos, alpha=alpha, max_len=max_len)
    if beam_size == 1:
        return baseline

    beam: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finished: list[Hypothesis] = [baseline] if baseline.finished else []
    for _ in range(max_len):
        candidates: list[tuple[tuple[int, ...], float]] = []
        for tokens, logprob in beam:
            logp = step_fn((bos, *tokens))
            for tok in range(len(logp)):
                candidates.append(((*tokens, tok), logprob + float(logp[tok])))
        candidates.sort(key=lambda c: (-c[1], c[0]))
        beam = []
        for tokens, logprob in candidates[:beam_size]:
            if tokens[-1] == eos:
                finished.append(Hypothesis(
                    tokens, logprob,
                    logprob / length_penalty(len(tokens), alpha), True))
            else:
                beam.append((tokens, logprob))
        if not beam:
            break

    pool = list(finished)
    if not baseline.finished:
        pool.append(baseline)
    best = max(pool, key=lambda h: (h.score, h.finished,
                                    tuple(-t for t in h.tokens)))
    if not best.finished and beam:
        # an unfinished survivor could still outrank the greedy rollout
        tokens, logprob = beam[0]
        alt = Hypothesis(tokens, logprob,
                         logprob / length_penalty(len(tokens), alpha), False)
        if alt.score > best.score:
            best = alt
    return best


def model_step_fn(config: ModelConfig, params: dict, memory: Tensor,
                  visual) -> StepFn:
    """Build a StepFn that re-runs the decoder over the growing prefix and
    returns the last position's log-probabilities."""

    def step(prefix: tuple[int, ...]) -> np.ndarray:
        with ad.no_grad():
            logits = decode_forward(config, params, memory, visual,
                                    np.asarray(prefix, dtype=np.int64))
            row = logits.data[-1]
        shifted = row - row.max()
        return shifted - np.log(np.exp(shifted).sum())

    return step


def translate_sentence(config: ModelConfig, params: dict, source_ids,
                       visual, bos: int, eos: int, beam_size: int = 10,
                       alpha: float = 1.0,
                       max_len: Optional[int] = None) -> Hypothesis:
    """Encode one source sentence (conditioning the memory in AIC mode) and
    beam-decode it. ``visual`` is the raw feature for the configured kind:
    the global vector for AIC, the row matrix for AIF, None for text-only.
    """
    if max_len is None:
        max_len = config.max_len
    with ad.no_grad():
        memory = encode(config, params, source_ids)
        decoder_visual = visual
        if config.mode is Mode.AIC:
            memory = apply_aic(config, params, memory, visual)
            decoder_visual = None
        step = model_step_fn(config, params, memory, decoder_visual)
    if beam_size == 1:
        return greedy(step, bos, eos, alpha=alpha, max_len=max_len)
    return beam_search(step, bos, eos, beam_size=beam_size, alpha=alpha,
                       max_len=max_len)
