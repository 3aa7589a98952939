"""The three visual feature constructions and their raw-artifact inputs.

Ingested raw artifacts per video segment:
  * chunk feature vectors (k x D) -> averaged into a single ``videosum``;
  * a spatial activation grid (G x G x D) -> flattened to G*G region rows;
  * an action-category posterior (C) -> scaled category embeddings (C x E).

Dimensions are configurable at desk scale; the validated full-scale defaults
are D=2048, G=7 (49 regions), C=339 categories with E=300-dimensional
embeddings, and a 32x64 reshape of the global vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

VIDEO_DIM = 2048
REGION_GRID = 7
N_CATEGORIES = 339
EMB_DIM = 300
VIDEOSUM_ROWS = 32
VIDEOSUM_COLS = 64


def _check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class Videosum:
    """Global segment descriptor: one D-vector."""

    vector: np.ndarray
    dim: int = VIDEO_DIM

    def __post_init__(self):
        vec = _check_finite("videosum", self.vector)
        if vec.shape != (self.dim,):
            raise ValueError(
                f"videosum must have shape ({self.dim},), got {vec.shape}")
        object.__setattr__(self, "vector", vec)


@dataclass(frozen=True)
class Conv4Regions:
    """Spatial region descriptors: one row per grid cell, row-major cells."""

    matrix: np.ndarray
    n_regions: int = REGION_GRID * REGION_GRID
    dim: int = VIDEO_DIM

    def __post_init__(self):
        mat = _check_finite("conv4 regions", self.matrix)
        if mat.shape != (self.n_regions, self.dim):
            raise ValueError(
                f"conv4 regions must have shape ({self.n_regions}, {self.dim}), "
                f"got {mat.shape}")
        object.__setattr__(self, "matrix", mat)


@dataclass(frozen=True)
class EmbCategories:
    """Posterior-scaled category embeddings: one row per action category."""

    matrix: np.ndarray
    n_categories: int = N_CATEGORIES
    dim: int = EMB_DIM

    def __post_init__(self):
        mat = _check_finite("category embedding feature", self.matrix)
        if mat.shape != (self.n_categories, self.dim):
            raise ValueError(
                f"emb feature must have shape ({self.n_categories}, {self.dim}), "
                f"got {mat.shape}")
        object.__setattr__(self, "matrix", mat)


VisualFeature = Union[Videosum, Conv4Regions, EmbCategories]


@dataclass(frozen=True)
class CategoryPosterior:
    """Nonnegative category probabilities summing to 1 (within 1e-5)."""

    probs: np.ndarray

    def __post_init__(self):
        p = _check_finite("posterior", self.probs)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("posterior must be a non-empty vector")
        if (p < 0).any():
            raise ValueError("posterior has negative entries")
        total = p.sum()
        if abs(total - 1.0) > 1e-5:
            raise ValueError(f"posterior sums to {total}, expected 1 within 1e-5")
        object.__setattr__(self, "probs", p)

    def __len__(self) -> int:
        return len(self.probs)


class LabelEmbeddingTable:
    """Word -> embedding map used to embed '+'-joined category labels."""

    def __init__(self, vectors: Mapping[str, np.ndarray]):
        if not vectors:
            raise ValueError("empty embedding table")
        dims = {np.asarray(v).shape for v in vectors.values()}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise ValueError(f"inconsistent embedding shapes: {dims}")
        self.dim = next(iter(dims))[0]
        self._vectors = {w: _check_finite(f"embedding of {w!r}", v)
                         for w, v in vectors.items()}

    def __contains__(self, word: str) -> bool:
        return word in self._vectors

    def __getitem__(self, word: str) -> np.ndarray:
        try:
            return self._vectors[word]
        except KeyError:
            raise KeyError(f"no embedding for word {word!r}") from None

    def phrase(self, label: str) -> np.ndarray:
        """Average the embeddings of the '+'-separated words of a label."""
        words = [w for w in label.split("+") if w]
        if not words:
            raise ValueError(f"empty category label {label!r}")
        missing = [w for w in words if w not in self._vectors]
        if missing:
            raise KeyError(f"no embedding for word {missing[0]!r} "
                           f"(label {label!r})")
        return np.mean([self._vectors[w] for w in words], axis=0)

    @classmethod
    def load(cls, path) -> "LabelEmbeddingTable":
        """Text format: ``word v1 v2 ... vE`` per line, space-separated."""
        vectors: dict[str, np.ndarray] = {}
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) < 2:
                    raise ValueError(f"{path}:{lineno}: bad embedding line")
                vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
        return cls(vectors)


# -- constructions -----------------------------------------------------------

def average_chunks(chunk_vectors: Sequence[np.ndarray],
                   dim: int = VIDEO_DIM) -> Videosum:
    """Elementwise arithmetic mean of per-chunk feature vectors."""
    if len(chunk_vectors) == 0:
        raise ValueError("average_chunks needs at least one chunk")
    arrs = [np.asarray(v, dtype=np.float64) for v in chunk_vectors]
    lengths = {a.shape for a in arrs}
    if len(lengths) != 1:
        raise ValueError(f"chunk vectors have mixed shapes: {lengths}")
    stacked = _check_finite("chunk vectors", np.stack(arrs))
    return Videosum(stacked.mean(axis=0), dim=dim)


def reshape_videosum(v: Videosum, rows: int = VIDEOSUM_ROWS,
                     cols: int = VIDEOSUM_COLS) -> np.ndarray:
    """Row-major reshape of the global vector: element (r, c) = v[cols*r + c]."""
    if rows * cols != v.dim:
        raise ValueError(
            f"cannot reshape a {v.dim}-vector into {rows}x{cols}")
    return v.vector.reshape(rows, cols)


def regions_from_conv4(grid: np.ndarray, grid_size: int = REGION_GRID,
                       dim: int = VIDEO_DIM) -> Conv4Regions:
    """Flatten a (G, G, D) activation grid into G*G region rows; region
    index G*i + j holds cell (i, j)."""
    grid = _check_finite("conv4 grid", grid)
    if grid.shape != (grid_size, grid_size, dim):
        raise ValueError(
            f"conv4 grid must have shape ({grid_size}, {grid_size}, {dim}), "
            f"got {grid.shape}")
    return Conv4Regions(grid.reshape(grid_size * grid_size, dim),
                        n_regions=grid_size * grid_size, dim=dim)


def build_emb_feature(posterior: CategoryPosterior, labels: Sequence[str],
                      table: LabelEmbeddingTable) -> EmbCategories:
    """Row k = posterior[k] * phrase_embedding(labels[k]).

    Multiword labels are embedded by averaging their per-word embeddings;
    labels are used in full here (verb-component reduction applies only to
    the masking lexicon).
    """
    if len(labels) != len(posterior):
        raise ValueError(
            f"{len(labels)} labels but posterior of length {len(posterior)}")
    rows = np.stack([table.phrase(lab) for lab in labels])
    matrix = posterior.probs[:, None] * rows
    return EmbCategories(matrix, n_categories=len(labels), dim=table.dim)
