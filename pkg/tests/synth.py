"""Synthetic experiment builders for pipeline and acceptance tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from mmtlab.masking import AnnotatedSentence, Token, write_annotated
from mmtlab.mmtf import MmtfWriter

NAMES = ["anna", "ben", "carla", "dev", "emma", "finn", "gita", "hugo",
         "ines", "jon"]
PLACES = ["river", "market", "garden", "bridge", "forest", "harbor",
          "meadow", "tower", "valley", "square"]
VERBS = ["jump", "run", "swim", "sing", "dance", "read", "write", "sleep"]


def write_mmtf(path, arrays: dict[str, np.ndarray]) -> None:
    with MmtfWriter(path) as w:
        for key, arr in arrays.items():
            w.add(key, arr)


def category_embeddings(dim: int = 8, seed: int = 77) -> np.ndarray:
    """Orthonormal rows, one per verb category."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(len(VERBS), dim)).T)
    return q.T[: len(VERBS)]


def make_sentence(rng, with_verb=True):
    """(annotated source, target tokens, verb category or None)."""
    name = NAMES[rng.integers(len(NAMES))]
    place = PLACES[rng.integers(len(PLACES))]
    tokens = [Token(name, name, "NOUN")]
    category = None
    if with_verb:
        category = int(rng.integers(len(VERBS)))
        verb = VERBS[category]
        tokens.append(Token(verb, verb, "VERB"))
    tokens.append(Token("near", "near", "ADP"))
    tokens.append(Token(place, place, "NOUN"))
    tokens.append(Token(".", ".", "PUNCT"))
    sent = AnnotatedSentence(tuple(tokens))
    return sent, sent.surfaces(), category


def build_split(rng, n):
    sentences, targets, categories = [], [], []
    for _ in range(n):
        s, t, c = make_sentence(rng)
        sentences.append(s)
        targets.append(t)
        categories.append(c)
    return sentences, targets, categories


def write_experiment(root: Path, n_train=40, n_val=10, n_test=10, seed=11,
                     setups="text-only", variants="ORG",
                     extra: dict | None = None,
                     feature_kinds=("videosum", "conv4", "emb")) -> Path:
    """Create a complete miniature experiment directory; returns the config
    file path. Desk dims: 16-d videosum (4x4 reshape), 2x2 conv grid, 8
    verb categories with 8-d label embeddings."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    data = root / "data"
    data.mkdir(exist_ok=True)
    rng = np.random.default_rng(seed)
    emb = category_embeddings()

    lines = {}
    for split, n in (("train", n_train), ("val", n_val), ("test", n_test)):
        sentences, targets, categories = build_split(rng, n)
        write_annotated(data / f"{split}.src.tsv", sentences)
        with open(data / f"{split}.tgt.txt", "w", encoding="utf-8",
                  newline="\n") as f:
            for t in targets:
                f.write(" ".join(t) + "\n")
        if "videosum" in feature_kinds:
            write_mmtf(data / f"{split}.videosum.mmtf",
                       {str(i): rng.normal(size=(3, 16)) for i in range(n)})
        if "conv4" in feature_kinds:
            write_mmtf(data / f"{split}.conv4.mmtf",
                       {str(i): rng.normal(size=(2, 2, 16)) for i in range(n)})
        if "emb" in feature_kinds:
            posts = {}
            for i, c in enumerate(categories):
                p = np.zeros(len(VERBS))
                p[c if c is not None else 0] = 1.0
                posts[str(i)] = p
            write_mmtf(data / f"{split}.emb.mmtf", posts)
        lines[split] = n

    if "emb" in feature_kinds:
        with open(data / "labels.txt", "w", encoding="utf-8",
                  newline="\n") as f:
            for v in VERBS:
                f.write(v + "\n")
        with open(data / "embeddings.txt", "w", encoding="utf-8",
                  newline="\n") as f:
            for v, row in zip(VERBS, emb):
                f.write(v + " " + " ".join(f"{x:.8f}" for x in row) + "\n")
    with open(data / "lexicon.txt", "w", encoding="utf-8", newline="\n") as f:
        for v in VERBS:
            f.write(v + "\n")

    values = {
        "seed": "11",
        "out": "run",
        "mask.variants": variants,
        "model.setups": setups,
        "data.lexicon": "data/lexicon.txt",
        "bpe.merges": "120",
        "features.video_dim": "16",
        "features.grid_size": "2",
        "features.videosum_rows": "4",
        "features.videosum_cols": "4",
        "model.layers": "1",
        "model.heads": "2",
        "model.dim": "16",
        "model.ff_dim": "32",
        "model.max_len": "12",
        "train.epochs": "2",
        "train.patience": "5",
        "train.batch_tokens": "200",
        "train.base_rate": "0.2",
        "train.warmup_steps": "40",
        "decode.beam_size": "2",
        "decode.alpha": "1.0",
        "report.reference": "builtin",
    }
    for split in ("train", "val", "test"):
        values[f"data.{split}_source"] = f"data/{split}.src.tsv"
        values[f"data.{split}_target"] = f"data/{split}.tgt.txt"
        if "videosum" in feature_kinds:
            values[f"features.videosum.{split}"] = f"data/{split}.videosum.mmtf"
        if "conv4" in feature_kinds:
            values[f"features.conv4.{split}"] = f"data/{split}.conv4.mmtf"
        if "emb" in feature_kinds:
            values[f"features.emb_posterior.{split}"] = f"data/{split}.emb.mmtf"
    if "emb" in feature_kinds:
        values["features.emb_labels"] = "data/labels.txt"
        values["features.emb_embeddings"] = "data/embeddings.txt"
    if extra:
        values.update(extra)

    config_path = root / "experiment.cfg"
    with open(config_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("# synthetic miniature experiment\n")
        for k, v in values.items():
            f.write(f"{k} = {v}\n")
    return config_path


def write_verb_task(root: Path, n_train=2000, n_val=200, n_test=200,
                    seed=4242, extra: dict | None = None) -> Path:
    """The verb-from-feature task: under ACT masking the source verb
    disappears and only the one-hot category posterior identifies it."""
    overrides = {
        "mask.variants": "ACT",
        "model.setups": "text-only,aif-emb",
        "bpe.merges": "300",
        "model.dim": "32",
        "model.ff_dim": "64",
        "model.heads": "4",
        "train.epochs": "12",
        "train.patience": "3",
        "train.batch_tokens": "400",
        "train.base_rate": "0.3",
        "train.warmup_steps": "100",
        "decode.beam_size": "2",
    }
    if extra:
        overrides.update(extra)
    return write_experiment(root, n_train=n_train, n_val=n_val,
                            n_test=n_test, seed=seed, extra=overrides,
                            feature_kinds=("emb",))
