"""Corpus-level BLEU and the human-ranking aggregation score.

BLEU operates on pre-tokenized, lowercased sentences (tokenization happens
upstream); it is classic corpus BLEU-4 with clipped counts aggregated over
the corpus before taking ratios, and no smoothing: any zero n-gram
precision gives a score of 0.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

MAX_ORDER = 4


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses: Sequence[Sequence[str]],
         references: Sequence[Sequence[str]]) -> float:
    """Corpus BLEU-4 in [0, 100]: geometric mean of modified n-gram
    precisions times the brevity penalty exp(min(0, 1 - ref_len/hyp_len))."""
    if len(hypotheses) == 0:
        raise ValueError("BLEU of an empty hypothesis set")
    if len(hypotheses) != len(references):
        raise ValueError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references")

    clipped = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp = list(hyp)
        ref = list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, MAX_ORDER + 1):
            counts = _ngrams(hyp, n)
            if not counts:
                continue
            ref_counts = _ngrams(ref, n)
            totals[n - 1] += sum(counts.values())
            clipped[n - 1] += sum(min(c, ref_counts[g])
                                  for g, c in counts.items())

    if hyp_len == 0 or any(t == 0 or c == 0 for c, t in zip(clipped, totals)):
        return 0.0
    log_precision = sum(math.log(c / t) for c, t in zip(clipped, totals))
    brevity = math.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return 100.0 * brevity * math.exp(log_precision / MAX_ORDER)


def load_sentences(path) -> list[list[str]]:
    """One pre-tokenized sentence per line, tokens separated by whitespace."""
    with open(path, "r", encoding="utf-8") as f:
        return [line.split() for line in f.read().splitlines()]


def save_sentences(path, sentences: Sequence[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for sent in sentences:
            f.write(" ".join(sent) + "\n")


# -- human ranking aggregation ------------------------------------------------

@dataclass(frozen=True)
class RankingItem:
    """One annotator's ranking of all systems for one item.

    Ranks run 1 (best) to 3 with ties permitted; rank 0 marks a translation
    judged incomprehensible.
    """

    item_id: str
    annotator_id: str
    ranks: Mapping[str, int]

    def __post_init__(self):
        for system, rank in self.ranks.items():
            if not 0 <= rank <= 3:
                raise ValueError(
                    f"rank {rank} for system {system!r} out of range 0..3")


def rank_score(items: Sequence[RankingItem],
               systems: Sequence[str]) -> dict[str, float]:
    """Proportion of items on which each system is judged at least as good
    as every other comprehensible system, micro-averaged over all
    annotators' items.

    A system earns credit on an item iff its rank is nonzero and is <= the
    rank of every other system with a nonzero rank. Items where every
    system is rank 0 are excluded from the denominator.
    """
    systems = list(systems)
    credits = {s: 0 for s in systems}
    counted = 0
    for item in items:
        missing = [s for s in systems if s not in item.ranks]
        if missing:
            raise ValueError(
                f"item {item.item_id!r}/{item.annotator_id!r} missing "
                f"systems: {', '.join(missing)}")
        ranks = {s: item.ranks[s] for s in systems}
        nonzero = [r for r in ranks.values() if r != 0]
        if not nonzero:
            continue
        counted += 1
        floor = min(nonzero)
        for s in systems:
            if ranks[s] != 0 and ranks[s] <= floor:
                credits[s] += 1
    if counted == 0:
        raise ValueError("no item has a comprehensible translation")
    return {s: credits[s] / counted for s in systems}


def load_rankings(path) -> list[RankingItem]:
    """TSV with one judgement per line: item, annotator, system, rank."""
    rows: dict[tuple[str, str], dict[str, int]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(
                    f"{path}:{lineno}: expected item<TAB>annotator<TAB>"
                    f"system<TAB>rank, got {line!r}")
            item, annotator, system, rank = parts
            key = (item, annotator)
            if system in rows.setdefault(key, {}):
                raise ValueError(
                    f"{path}:{lineno}: duplicate rank for {system!r}")
            rows[key][system] = int(rank)
    return [RankingItem(item_id=k[0], annotator_id=k[1], ranks=v)
            for k, v in rows.items()]
