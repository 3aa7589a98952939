"""Verb masking over POS/lemma-annotated source corpora.

Annotations are ingested, never computed here: a corpus file carries one
token per line as ``surface<TAB>lemma<TAB>pos`` with blank lines between
sentences. The coarse tag set follows the universal convention (VERB, AUX,
NOUN, PRON, DET, ADJ, ADV, ADP, CCONJ, SCONJ, PART, NUM, PUNCT, SYM, INTJ,
PROPN, X); a token is *verbal* when its tag is VERB or AUX. The target side
of a parallel corpus is never touched.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

DEFAULT_PLACEHOLDER = "<v>"
VERBAL_TAGS = frozenset({"VERB", "AUX"})


class MaskVariant(enum.Enum):
    ORG = "ORG"   # identity transform
    ACT = "ACT"   # verbs whose lemma is in the action lexicon
    ALL = "ALL"   # every verbal token

    @classmethod
    def parse(cls, name: str) -> "MaskVariant":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown mask variant {name!r}; "
                             f"expected one of ORG, ACT, ALL") from None


@dataclass(frozen=True)
class Token:
    surface: str
    lemma: str
    pos: str


@dataclass(frozen=True)
class AnnotatedSentence:
    tokens: tuple[Token, ...]

    def __post_init__(self):
        for t in self.tokens:
            if not t.surface:
                raise ValueError("annotated token with empty surface form")

    def surfaces(self) -> list[str]:
        return [t.surface for t in self.tokens]

    def __len__(self) -> int:
        return len(self.tokens)


def reduce_label(category_label: str) -> str:
    """Reduce a '+'-joined action category label to its verb component.

    Single-component labels pass through. For multiword labels the verb is
    identified as the unique '-ing' form among the components (the gerund
    convention of the action category inventory).
    """
    parts = [p for p in category_label.split("+") if p]
    if not parts:
        raise ValueError(f"empty action category label {category_label!r}")
    if len(parts) == 1:
        return parts[0]
    gerunds = [p for p in parts if p.endswith("ing")]
    if len(gerunds) != 1:
        raise ValueError(
            f"no identifiable verb component in label {category_label!r}")
    return gerunds[0]


@dataclass(frozen=True)
class ActionLexicon:
    """Deduplicated set of action-verb lemmas, matched case-insensitively."""

    verbs: frozenset[str]

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> "ActionLexicon":
        return cls(frozenset(reduce_label(lab).lower() for lab in labels))

    @classmethod
    def load(cls, path) -> "ActionLexicon":
        with open(path, "r", encoding="utf-8") as f:
            labels = [line.strip() for line in f if line.strip()]
        return cls.from_labels(labels)

    def __contains__(self, lemma: str) -> bool:
        return lemma.lower() in self.verbs

    def __len__(self) -> int:
        return len(self.verbs)


def mask(sentence: AnnotatedSentence, variant: MaskVariant,
         lexicon: ActionLexicon, placeholder: str = DEFAULT_PLACEHOLDER
         ) -> list[str]:
    """Produce the masked surface sequence for one sentence.

    ACT replaces exactly the verbal tokens whose lemma is in the lexicon;
    ALL replaces every verbal token; ORG is the identity. Output length
    always equals input length.
    """
    if not isinstance(variant, MaskVariant):
        raise ValueError(f"unknown mask variant {variant!r}")
    if variant is MaskVariant.ORG:
        return sentence.surfaces()
    out = []
    for tok in sentence.tokens:
        verbal = tok.pos in VERBAL_TAGS
        if variant is MaskVariant.ALL:
            hit = verbal
        else:
            hit = verbal and tok.lemma in lexicon
        out.append(placeholder if hit else tok.surface)
    return out


def mask_stats(corpus: Sequence[AnnotatedSentence], variant: MaskVariant,
               lexicon: ActionLexicon) -> float:
    """Fraction of tokens the variant masks over one corpus split."""
    if not corpus:
        raise ValueError("mask_stats over an empty corpus")
    total = 0
    masked = 0
    for sent in corpus:
        surfaces = mask(sent, variant, lexicon)
        total += len(surfaces)
        masked += sum(1 for s, t in zip(surfaces, sent.tokens)
                      if s != t.surface)
    return masked / total


# -- corpus file format -----------------------------------------------------

def read_annotated(path) -> list[AnnotatedSentence]:
    """Read a UTF-8 TSV annotated corpus (surface, lemma, pos per line)."""
    sentences: list[AnnotatedSentence] = []
    tokens: list[Token] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                if tokens:
                    sentences.append(AnnotatedSentence(tuple(tokens)))
                    tokens = []
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(
                    f"{path}:{lineno}: expected surface<TAB>lemma<TAB>pos, "
                    f"got {line!r}")
            surface, lemma, pos = parts
            if not surface:
                raise ValueError(f"{path}:{lineno}: empty surface form")
            tokens.append(Token(surface, lemma, pos))
    if tokens:
        sentences.append(AnnotatedSentence(tuple(tokens)))
    return sentences


def write_annotated(path, sentences: Sequence[AnnotatedSentence]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for sent in sentences:
            for t in sent.tokens:
                f.write(f"{t.surface}\t{t.lemma}\t{t.pos}\n")
            f.write("\n")
