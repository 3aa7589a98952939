"""Independent reference implementations used only to check the package.

These are deliberately written as plain, slow brute force so they share no
code or structure with the implementations under test.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


def bleu_brute_force(hypotheses: Sequence[Sequence[str]],
                     references: Sequence[Sequence[str]]) -> float:
    """Corpus 4-gram BLEU via explicit per-sentence n-gram dictionaries."""
    assert len(hypotheses) == len(references)
    log_sum = 0.0
    for n in (1, 2, 3, 4):
        clipped = 0
        total = 0
        for hyp, ref in zip(hypotheses, references):
            hyp_grams: dict[tuple, int] = {}
            for i in range(len(hyp) - n + 1):
                g = tuple(hyp[i: i + n])
                hyp_grams[g] = hyp_grams.get(g, 0) + 1
            ref_grams: dict[tuple, int] = {}
            for i in range(len(ref) - n + 1):
                g = tuple(ref[i: i + n])
                ref_grams[g] = ref_grams.get(g, 0) + 1
            for g, c in hyp_grams.items():
                clipped += min(c, ref_grams.get(g, 0))
            total += max(len(hyp) - n + 1, 0)
        if total == 0 or clipped == 0:
            return 0.0
        log_sum += 0.25 * math.log(clipped / total)
    hyp_len = sum(len(h) for h in hypotheses)
    ref_len = sum(len(r) for r in references)
    if hyp_len == 0:
        return 0.0
    bp = math.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return 100.0 * bp * math.exp(log_sum)


def rank_credit_brute_force(items, systems) -> dict[str, float]:
    """Per-item credit counting for the ranking score, including ties and
    zero (incomprehensible) ranks; all-zero items leave the denominator."""
    credits = {s: 0 for s in systems}
    counted = 0
    for item in items:
        nonzero = [s for s in systems if item.ranks[s] != 0]
        if not nonzero:
            continue
        counted += 1
        for s in systems:
            if item.ranks[s] == 0:
                continue
            beats_all = True
            for t in systems:
                if t == s or item.ranks[t] == 0:
                    continue
                if item.ranks[s] > item.ranks[t]:
                    beats_all = False
            if beats_all:
                credits[s] += 1
    return {s: credits[s] / counted for s in systems}


def finite_difference_gradient(f: Callable[[], float], param,
                               eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. one
    parameter tensor (mutated in place entry by entry)."""
    data = param.data
    grad = np.zeros_like(data)
    flat = data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def gradient_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-case relative error between two gradient arrays.

    The denominator floor (1e-6) marks the resolution of central
    differences at eps=1e-5 in double precision; gradients that are
    mathematically zero (e.g. attention key biases, which cancel through
    the softmax shift invariance) only produce difference noise of ~1e-11
    and must not be divided by themselves.
    """
    denom = max(np.abs(analytic).max(initial=0.0),
                np.abs(numeric).max(initial=0.0), 1e-6)
    return float(np.abs(analytic - numeric).max(initial=0.0) / denom)


def enumerate_hypotheses(step_fn, bos: int, eos: int, vocab: int,
                         alpha: float, max_len: int):
    """Exhaustively score every token sequence of length <= max_len.

    Returns (best_finished, all_finished) where sequences either end at
    their first eos or are truncated at max_len (unfinished ones are
    ignored for the best, matching a search that found any finished one).
    """

    def penalty(length):
        return ((5.0 + length) / 6.0) ** alpha

    finished = []

    def walk(prefix: tuple[int, ...], logprob: float) -> None:
        if prefix and prefix[-1] == eos:
            finished.append((prefix, logprob, logprob / penalty(len(prefix))))
            return
        if len(prefix) == max_len:
            return
        logp = step_fn((bos, *prefix))
        for tok in range(vocab):
            walk((*prefix, tok), logprob + float(logp[tok]))

    walk((), 0.0)
    best = max(finished, key=lambda t: t[2]) if finished else None
    return best, finished
