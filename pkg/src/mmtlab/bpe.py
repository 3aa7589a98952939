"""Byte-pair-encoding subword learning and application.

One model is learned per text variant (original source, each masked source,
and the target side), so id spaces are never shared between variants.
Word-boundary convention: the continuation marker (default ``@@``) is
appended to every non-final subword of a word at segmentation time; merge
learning itself is position-agnostic. Protected symbols (the verb-mask
placeholder) are atomic: never character-split, never merged.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

PAD = "<pad>"
BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
DEFAULT_SPECIALS = (PAD, BOS, EOS, UNK)
DEFAULT_MARKER = "@@"

FORMAT_NAME = "mmtlab-bpe"
FORMAT_VERSION = 1


@dataclass
class BpeModel:
    """An ordered merge list plus the derived subword vocabulary.

    ``vocab`` maps every emittable subword (bare form and, for non-special
    symbols, the continuation-marked form) to a dense id starting at 0.
    Specials occupy the lowest ids and never participate in merges.
    """

    merges: list[tuple[str, str]]
    vocab: dict[str, int]
    specials: tuple[str, ...]
    marker: str = DEFAULT_MARKER
    protected: frozenset[str] = frozenset()
    _ranks: dict[tuple[str, str], int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._ranks:
            self._ranks = {pair: i for i, pair in enumerate(self.merges)}

    @property
    def pad_id(self) -> int:
        return self.vocab[PAD]

    @property
    def bos_id(self) -> int:
        return self.vocab[BOS]

    @property
    def eos_id(self) -> int:
        return self.vocab[EOS]

    @property
    def unk_id(self) -> int:
        return self.vocab[UNK]

    def __len__(self) -> int:
        return len(self.vocab)

    # -- segmentation ------------------------------------------------------

    def split_word(self, word: str) -> list[str]:
        """Segment one token into subwords, marking non-final pieces."""
        if word in self.protected or word in self.specials:
            return [word]
        symbols = list(word)
        while len(symbols) > 1:
            best_rank = None
            best_idx = -1
            for i in range(len(symbols) - 1):
                rank = self._ranks.get((symbols[i], symbols[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
                    best_idx = i
            if best_rank is None:
                break
            pair = (symbols[best_idx], symbols[best_idx + 1])
            symbols = _merge_once(symbols, pair)
        return [s + self.marker for s in symbols[:-1]] + [symbols[-1]]

    def apply(self, tokens: Sequence[str]) -> list[str]:
        """Segment a token sequence; deterministic, merges in learned order."""
        out: list[str] = []
        for tok in tokens:
            out.extend(self.split_word(tok))
        return out

    def detokenize(self, subwords: Sequence[str]) -> list[str]:
        """Inverse of apply: join marked pieces back into tokens."""
        tokens: list[str] = []
        buf = ""
        for sw in subwords:
            if sw in self.specials:
                if buf:
                    tokens.append(buf)
                    buf = ""
                tokens.append(sw)
            elif sw.endswith(self.marker) and sw not in self.protected:
                buf += sw[: -len(self.marker)]
            else:
                tokens.append(buf + sw)
                buf = ""
        if buf:
            tokens.append(buf)
        return tokens

    def encode(self, tokens: Sequence[str]) -> list[int]:
        """Segment and map to ids; unseen subwords map to the unknown id."""
        unk = self.unk_id
        return [self.vocab.get(sw, unk) for sw in self.apply(tokens)]

    def decode(self, ids: Sequence[int], strip_specials: bool = True) -> list[str]:
        """Map ids back to tokens, undoing the subword segmentation.

        Specials are dropped after detokenization (a special acts as a word
        boundary, so pieces never merge across one); the protected mask
        placeholder is always kept.
        """
        inv = self._inverse_vocab()
        words = self.detokenize([inv[i] for i in ids])
        if strip_specials:
            keep = set(self.protected)
            words = [w for w in words if w not in self.specials or w in keep]
        return words

    def _inverse_vocab(self) -> dict[int, str]:
        # learned models are immutable, so the inverse is cached
        if not hasattr(self, "_inv"):
            self._inv = {i: s for s, i in self.vocab.items()}
        return self._inv

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        """Plain-text model file; bit-exact across platforms."""
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            header = "\t".join([
                FORMAT_NAME,
                f"version={FORMAT_VERSION}",
                f"merges={len(self.merges)}",
                f"marker={self.marker}",
                "specials=" + ",".join(self.specials),
                "protected=" + ",".join(sorted(self.protected)),
            ])
            f.write(header + "\n")
            for a, b in self.merges:
                f.write(f"{a}\t{b}\n")
            for sym, idx in sorted(self.vocab.items(), key=lambda kv: kv[1]):
                f.write(f"{sym}\t{idx}\n")

    @classmethod
    def load(cls, path) -> "BpeModel":
        with open(path, "r", encoding="utf-8", newline="\n") as f:
            header = f.readline().rstrip("\n").split("\t")
            if not header or header[0] != FORMAT_NAME:
                raise ValueError(f"{path}: not a {FORMAT_NAME} model file")
            fields = dict(part.split("=", 1) for part in header[1:])
            if int(fields["version"]) != FORMAT_VERSION:
                raise ValueError(f"{path}: unsupported version {fields['version']}")
            n_merges = int(fields["merges"])
            marker = fields["marker"]
            specials = tuple(fields["specials"].split(","))
            protected = frozenset(
                s for s in fields.get("protected", "").split(",") if s)
            merges = []
            for _ in range(n_merges):
                a, b = f.readline().rstrip("\n").split("\t")
                merges.append((a, b))
            vocab = {}
            for line in f:
                sym, idx = line.rstrip("\n").split("\t")
                vocab[sym] = int(idx)
        return cls(merges=merges, vocab=vocab, specials=specials,
                   marker=marker, protected=protected)


def _merge_once(symbols: list[str], pair: tuple[str, str]) -> list[str]:
    """Replace non-overlapping left-to-right occurrences of pair."""
    merged = []
    i = 0
    while i < len(symbols):
        if (i + 1 < len(symbols)
                and symbols[i] == pair[0] and symbols[i + 1] == pair[1]):
            merged.append(pair[0] + pair[1])
            i += 2
        else:
            merged.append(symbols[i])
            i += 1
    return merged


def learn_merges(corpus: Iterable[Sequence[str]], n_merges: int,
                 protected: Iterable[str] = (),
                 specials: Sequence[str] = DEFAULT_SPECIALS,
                 marker: str = DEFAULT_MARKER) -> BpeModel:
    """Learn up to ``n_merges`` merges by greedy highest-pair-frequency
    selection; frequency ties go to the lexicographically smallest pair.

    Protected symbols are kept whole. The corpus must be non-empty and its
    tokens must not contain tab, newline or the marker string (they would
    break the model file format and the detokenization inverse).
    """
    if n_merges < 0:
        raise ValueError("n_merges must be >= 0")
    protected_set = frozenset(protected)
    specials = tuple(specials)
    for p in protected_set:
        if p not in specials:
            raise ValueError(
                f"protected symbol {p!r} must be one of the reserved specials")

    word_freq: Counter[str] = Counter()
    for sent in corpus:
        for tok in sent:
            if marker in tok and tok not in protected_set and tok not in specials:
                raise ValueError(f"token {tok!r} contains the marker {marker!r}")
            if "\t" in tok or "\n" in tok:
                raise ValueError(f"token {tok!r} contains tab/newline")
            word_freq[tok] += 1
    if not word_freq:
        raise ValueError("cannot learn BPE merges from an empty corpus")

    atomic = protected_set | set(specials)
    words: dict[str, list[str]] = {
        w: ([w] if w in atomic else list(w)) for w in word_freq}

    merges: list[tuple[str, str]] = []
    for _ in range(n_merges):
        pair_freq: Counter[tuple[str, str]] = Counter()
        for w, symbols in words.items():
            freq = word_freq[w]
            for i in range(len(symbols) - 1):
                pair_freq[(symbols[i], symbols[i + 1])] += freq
        if not pair_freq:
            break
        top = max(pair_freq.values())
        best = min(p for p, c in pair_freq.items() if c == top)
        merges.append(best)
        words = {w: _merge_once(s, best) if len(s) > 1 else s
                 for w, s in words.items()}

    chars = sorted({c for w in word_freq if w not in atomic for c in w})
    vocab: dict[str, int] = {}
    for s in specials:
        vocab[s] = len(vocab)
    for base in chars + ["".join(p) for p in merges]:
        if base not in vocab:
            vocab[base] = len(vocab)
        marked = base + marker
        if marked not in vocab:
            vocab[marked] = len(vocab)
    return BpeModel(merges=merges, vocab=vocab, specials=specials,
                    marker=marker, protected=protected_set)
