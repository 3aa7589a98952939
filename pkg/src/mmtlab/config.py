"""Line-based ``key = value`` experiment configuration.

Later assignments win, '#' starts a comment, and command-line flags override
file values. See the README for the documented key set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .masking import DEFAULT_PLACEHOLDER, MaskVariant
from .model import parse_setup

SPLITS = ("train", "val", "test")


def parse_kv_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', "
                                 f"got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


@dataclass
class ExperimentConfig:
    """Everything one experiment run needs: corpus paths, masking variants,
    model setups, architecture overrides, decoding settings, seed and the
    output directory."""

    seed: int
    out_dir: Path

    source_paths: dict[str, Path]       # split -> annotated TSV
    target_paths: dict[str, Path]       # split -> tokenized text
    lexicon_path: Path

    variants: list[MaskVariant] = field(
        default_factory=lambda: [MaskVariant.ORG])
    setups: list[str] = field(default_factory=lambda: ["text-only"])
    placeholder: str = DEFAULT_PLACEHOLDER

    bpe_merges: int = 500
    bpe_marker: str = "@@"

    # feature files per kind and split; empty when a kind is unused
    videosum_paths: dict[str, Path] = field(default_factory=dict)
    conv4_paths: dict[str, Path] = field(default_factory=dict)
    emb_posterior_paths: dict[str, Path] = field(default_factory=dict)
    emb_labels_path: Path | None = None
    emb_embeddings_path: Path | None = None
    video_dim: int = 2048
    grid_size: int = 7
    videosum_rows: int = 32
    videosum_cols: int = 64

    n_layers: int = 2
    n_heads: int = 4
    model_dim: int = 128
    ff_dim: int = 256
    dropout: float = 0.1
    max_len: int = 64

    epochs: int = 30
    patience: int = 10
    batch_tokens: int = 2000
    base_rate: float = 0.05
    warmup_steps: int = 100
    val_beam: int = 1

    beam_size: int = 10
    alpha: float = 1.0

    reference_display: str = "builtin"   # builtin | none | <path>

    def __post_init__(self):
        kinds_used = {parse_setup(s)[1].value for s in self.setups}
        if (any(s.startswith("aif-videosum") for s in self.setups)
                and self.videosum_rows * self.videosum_cols != self.video_dim):
            raise ValueError(
                f"videosum reshape {self.videosum_rows}x{self.videosum_cols} "
                f"does not cover a {self.video_dim}-vector")
        missing = []
        if "videosum" in kinds_used:
            missing += [f"features.videosum.{s}" for s in SPLITS
                        if s not in self.videosum_paths]
        if "conv4" in kinds_used:
            missing += [f"features.conv4.{s}" for s in SPLITS
                        if s not in self.conv4_paths]
        if "emb" in kinds_used:
            missing += [f"features.emb_posterior.{s}" for s in SPLITS
                        if s not in self.emb_posterior_paths]
            if self.emb_labels_path is None:
                missing.append("features.emb_labels")
            if self.emb_embeddings_path is None:
                missing.append("features.emb_embeddings")
        if missing:
            raise ValueError("config is missing feature keys: "
                             + ", ".join(missing))

    @classmethod
    def from_file(cls, path, seed: int | None = None,
                  out_dir: str | None = None,
                  overrides: dict[str, str] | None = None
                  ) -> "ExperimentConfig":
        values = parse_kv_file(path)
        if overrides:
            values.update(overrides)
        if seed is not None:
            values["seed"] = str(seed)
        if out_dir is not None:
            values["out"] = str(out_dir)
        base = Path(path).parent
        return cls.from_values(values, base)

    @classmethod
    def from_values(cls, values: dict[str, str], base: Path | None = None
                    ) -> "ExperimentConfig":
        base = base or Path(".")
        values = dict(values)

        def take(key: str, default=None, required: bool = False) -> str | None:
            if key in values:
                return values.pop(key)
            if required:
                raise ValueError(f"config key {key!r} is required")
            return default

        def path_of(value: str) -> Path:
            p = Path(value)
            return p if p.is_absolute() else base / p

        seed_raw = take("seed", required=True)
        out_raw = take("out", required=True)

        source_paths = {}
        target_paths = {}
        for split in SPLITS:
            source_paths[split] = path_of(
                take(f"data.{split}_source", required=True))
            target_paths[split] = path_of(
                take(f"data.{split}_target", required=True))
        lexicon_path = path_of(take("data.lexicon", required=True))

        def feature_paths(kind: str) -> dict[str, Path]:
            found = {}
            for split in SPLITS:
                raw = take(f"features.{kind}.{split}")
                if raw is not None:
                    found[split] = path_of(raw)
            return found

        emb_labels = take("features.emb_labels")
        emb_embeddings = take("features.emb_embeddings")

        cfg = cls(
            seed=int(seed_raw),
            out_dir=path_of(out_raw),
            source_paths=source_paths,
            target_paths=target_paths,
            lexicon_path=lexicon_path,
            variants=[MaskVariant.parse(v) for v in
                      take("mask.variants", "ORG").split(",")],
            setups=[s.strip() for s in
                    take("model.setups", "text-only").split(",")],
            placeholder=take("mask.placeholder", DEFAULT_PLACEHOLDER),
            bpe_merges=int(take("bpe.merges", "500")),
            bpe_marker=take("bpe.marker", "@@"),
            videosum_paths=feature_paths("videosum"),
            conv4_paths=feature_paths("conv4"),
            emb_posterior_paths=feature_paths("emb_posterior"),
            emb_labels_path=path_of(emb_labels) if emb_labels else None,
            emb_embeddings_path=(path_of(emb_embeddings)
                                 if emb_embeddings else None),
            video_dim=int(take("features.video_dim", "2048")),
            grid_size=int(take("features.grid_size", "7")),
            videosum_rows=int(take("features.videosum_rows", "32")),
            videosum_cols=int(take("features.videosum_cols", "64")),
            n_layers=int(take("model.layers", "2")),
            n_heads=int(take("model.heads", "4")),
            model_dim=int(take("model.dim", "128")),
            ff_dim=int(take("model.ff_dim", "256")),
            dropout=float(take("model.dropout", "0.1")),
            max_len=int(take("model.max_len", "64")),
            epochs=int(take("train.epochs", "30")),
            patience=int(take("train.patience", "10")),
            batch_tokens=int(take("train.batch_tokens", "2000")),
            base_rate=float(take("train.base_rate", "0.05")),
            warmup_steps=int(take("train.warmup_steps", "100")),
            val_beam=int(take("train.val_beam", "1")),
            beam_size=int(take("decode.beam_size", "10")),
            alpha=float(take("decode.alpha", "1.0")),
            reference_display=take("report.reference", "builtin"),
        )
        if values:
            raise ValueError("unknown config keys: " + ", ".join(sorted(values)))
        # validate setup names eagerly so typos fail before any stage runs
        for s in cfg.setups:
            parse_setup(s)
        return cfg

    def fingerprint_payload(self) -> dict:
        """The values that identify a run for manifest compatibility
        (input paths are taken as given; seeds and knobs all count). The
        output directory itself is excluded so a moved run directory can
        still resume."""
        d = {}
        for key, value in vars(self).items():
            if key == "out_dir":
                continue
            if isinstance(value, Path):
                d[key] = str(value)
            elif isinstance(value, dict):
                d[key] = {k: str(v) for k, v in value.items()}
            elif isinstance(value, list):
                d[key] = [getattr(v, "value", v) for v in value]
            else:
                d[key] = value
        return d
