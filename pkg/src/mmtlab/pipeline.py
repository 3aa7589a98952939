"""End-to-end experiment orchestration.

Stages: mask -> learn BPE (one model per source variant plus the target)
-> encode -> per (setup, variant) cell: train, translate, evaluate -> probe
visual cells -> report. Every stage persists its artifacts under the output
directory and records them in ``manifest.json``; rerunning with an existing
manifest skips completed stages. All stage randomness derives from the
experiment seed, so a fixed seed gives byte-identical results tables and
probe reports.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bpe as bpe_mod
from . import reporting
from .config import SPLITS, ExperimentConfig
from .decoding import translate_sentence
from .evaluation import bleu, load_sentences, save_sentences
from .features import (CategoryPosterior, LabelEmbeddingTable, average_chunks,
                       build_emb_feature, regions_from_conv4, reshape_videosum)
from .masking import ActionLexicon, MaskVariant, mask, mask_stats, read_annotated
from .mmtf import MmtfReader
from .model import Mode, ModelConfig, VisualKind, parse_setup
from .probe import probe
from .training import (TrainSettings, load_checkpoint, save_checkpoint,
                       train_model)

MANIFEST_VERSION = 1


class StageError(RuntimeError):
    """A pipeline failure tagged with the stage that caused it."""

    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage

    def __str__(self) -> str:
        return f"[{self.stage}] {super().__str__()}"


def cell_seed(seed: int, key: str) -> int:
    """Deterministic per-stage seed derived from the experiment seed."""
    return int(np.random.SeedSequence(
        [seed, zlib.crc32(key.encode())]).generate_state(1)[0])


class Manifest:
    def __init__(self, path: Path, fingerprint: str):
        self.path = path
        self.fingerprint = fingerprint
        self.stages: dict[str, dict] = {}
        if path.exists():
            saved = json.loads(path.read_text(encoding="utf-8"))
            if saved.get("fingerprint") != fingerprint:
                raise StageError(
                    "manifest",
                    f"{path} was produced by a different configuration; "
                    f"use a fresh output directory or delete the manifest")
            self.stages = saved.get("stages", {})

    def done(self, key: str, root: Path) -> bool:
        entry = self.stages.get(key)
        if not entry or not entry.get("done"):
            return False
        return all((root / rel).exists() for rel in entry.get("outputs", []))

    def mark(self, key: str, outputs: list[str]) -> None:
        self.stages[key] = {"done": True, "outputs": outputs}
        payload = {"version": MANIFEST_VERSION, "fingerprint": self.fingerprint,
                   "stages": self.stages}
        self.path.write_text(json.dumps(payload, indent=1, sort_keys=True),
                             encoding="utf-8")


@dataclass
class Workspace:
    """Holds the config, manifest and lazily loaded shared inputs."""

    cfg: ExperimentConfig
    manifest: Manifest
    _cache: dict = field(default_factory=dict)

    @classmethod
    def open(cls, cfg: ExperimentConfig) -> "Workspace":
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        payload = json.dumps(cfg.fingerprint_payload(), sort_keys=True)
        fingerprint = hashlib.sha256(payload.encode()).hexdigest()[:16]
        manifest = Manifest(cfg.out_dir / "manifest.json", fingerprint)
        return cls(cfg=cfg, manifest=manifest)

    def rel(self, *parts: str) -> Path:
        p = self.cfg.out_dir.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    # -- shared inputs -------------------------------------------------------

    def lexicon(self) -> ActionLexicon:
        if "lexicon" not in self._cache:
            try:
                self._cache["lexicon"] = ActionLexicon.load(self.cfg.lexicon_path)
            except (OSError, ValueError) as e:
                raise StageError("mask", f"lexicon {self.cfg.lexicon_path}: {e}")
        return self._cache["lexicon"]

    def annotated(self, split: str):
        key = f"annotated:{split}"
        if key not in self._cache:
            try:
                self._cache[key] = read_annotated(self.cfg.source_paths[split])
            except (OSError, ValueError) as e:
                raise StageError("mask", str(e))
        return self._cache[key]

    def targets(self, split: str) -> list[list[str]]:
        key = f"targets:{split}"
        if key not in self._cache:
            try:
                self._cache[key] = load_sentences(self.cfg.target_paths[split])
            except OSError as e:
                raise StageError("encode", str(e))
        return self._cache[key]

    def raw_features(self, kind: VisualKind, split: str) -> dict[str, np.ndarray]:
        """All raw feature records of one kind for one split, keyed by
        segment id (the 0-based sentence index as a string)."""
        key = f"raw:{kind.value}:{split}"
        if key not in self._cache:
            paths = {VisualKind.VIDEOSUM: self.cfg.videosum_paths,
                     VisualKind.CONV4: self.cfg.conv4_paths,
                     VisualKind.EMB: self.cfg.emb_posterior_paths}[kind]
            try:
                with MmtfReader(paths[split]) as reader:
                    self._cache[key] = dict(reader.items())
            except (OSError, ValueError, KeyError) as e:
                raise StageError("features", f"{kind.value}/{split}: {e}")
        return self._cache[key]

    def embedding_table(self) -> LabelEmbeddingTable:
        if "emb_table" not in self._cache:
            try:
                self._cache["emb_table"] = LabelEmbeddingTable.load(
                    self.cfg.emb_embeddings_path)
            except (OSError, ValueError) as e:
                raise StageError("features", f"embedding table: {e}")
        return self._cache["emb_table"]

    def emb_labels(self) -> list[str]:
        if "emb_labels" not in self._cache:
            with open(self.cfg.emb_labels_path, "r", encoding="utf-8") as f:
                self._cache["emb_labels"] = [ln.strip() for ln in f
                                             if ln.strip()]
        return self._cache["emb_labels"]

    def visual_features(self, kind: VisualKind, split: str,
                        for_mode: Mode) -> list[np.ndarray]:
        """Constructed per-segment features aligned with the split's
        sentences; aborts listing every missing segment id."""
        n = len(self.annotated(split))
        raw = self.raw_features(kind, split)
        missing = [str(i) for i in range(n) if str(i) not in raw]
        if missing:
            raise StageError(
                "features",
                f"{kind.value}/{split}: no record for segment ids "
                + ", ".join(missing))
        cfg = self.cfg
        out = []
        for i in range(n):
            rec = raw[str(i)]
            try:
                if kind is VisualKind.VIDEOSUM:
                    vs = average_chunks(rec, dim=cfg.video_dim)
                    if for_mode is Mode.AIC:
                        out.append(vs.vector)
                    else:
                        out.append(reshape_videosum(vs, cfg.videosum_rows,
                                                    cfg.videosum_cols))
                elif kind is VisualKind.CONV4:
                    out.append(regions_from_conv4(
                        rec, grid_size=cfg.grid_size, dim=cfg.video_dim).matrix)
                else:
                    labels = self.emb_labels()
                    feat = build_emb_feature(
                        CategoryPosterior(rec), labels, self.embedding_table())
                    out.append(feat.matrix)
            except (ValueError, KeyError) as e:
                raise StageError("features",
                                 f"{kind.value}/{split} segment {i}: {e}")
        return out


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def masked_path(ws: Workspace, variant: MaskVariant, split: str) -> Path:
    return ws.rel("masked", f"{variant.value}.{split}.txt")


def bpe_path(ws: Workspace, name: str) -> Path:
    return ws.rel("bpe", f"{name}.model")


def encoded_src_path(ws: Workspace, variant: MaskVariant, split: str) -> Path:
    return ws.rel("encoded", f"{variant.value}.{split}.src")


def encoded_tgt_path(ws: Workspace, split: str) -> Path:
    return ws.rel("encoded", f"target.{split}.tgt")


def checkpoint_path(ws: Workspace, setup: str, variant: MaskVariant) -> Path:
    return ws.rel("models", f"{setup}.{variant.value}.ckpt")


def hyp_path(ws: Workspace, setup: str, variant: MaskVariant,
             flavor: str = "") -> Path:
    suffix = f".{flavor}" if flavor else ""
    return ws.rel("hyps", f"{setup}.{variant.value}.test{suffix}.words")


def stage_mask(ws: Workspace) -> None:
    cfg = ws.cfg
    lexicon = ws.lexicon()
    stats_rows = []
    for variant in cfg.variants:
        key = f"mask:{variant.value}"
        if ws.manifest.done(key, cfg.out_dir):
            continue
        outputs = []
        for split in SPLITS:
            sentences = ws.annotated(split)
            if not sentences:
                raise StageError(key, f"{cfg.source_paths[split]}: no sentences")
            masked = [mask(s, variant, lexicon, cfg.placeholder)
                      for s in sentences]
            out = masked_path(ws, variant, split)
            save_sentences(out, masked)
            outputs.append(str(out.relative_to(cfg.out_dir)))
            stats_rows.append({
                "variant": variant.value, "split": split,
                "masked_fraction": round(
                    mask_stats(sentences, variant, lexicon), 6)})
        ws.manifest.mark(key, outputs)
    if stats_rows:
        stats_file = ws.rel("masked", "stats.jsonl")
        with open(stats_file, "a", encoding="utf-8", newline="\n") as f:
            for row in stats_rows:
                f.write(json.dumps(row, sort_keys=True) + "\n")


def stage_bpe(ws: Workspace) -> None:
    stage_mask(ws)
    cfg = ws.cfg
    specials = (*bpe_mod.DEFAULT_SPECIALS, cfg.placeholder)
    for variant in cfg.variants:
        key = f"bpe:{variant.value}"
        if ws.manifest.done(key, cfg.out_dir):
            continue
        corpus = load_sentences(masked_path(ws, variant, "train"))
        try:
            model = bpe_mod.learn_merges(corpus, cfg.bpe_merges,
                                         protected={cfg.placeholder},
                                         specials=specials,
                                         marker=cfg.bpe_marker)
        except ValueError as e:
            raise StageError(key, str(e))
        out = bpe_path(ws, variant.value)
        model.save(out)
        ws.manifest.mark(key, [str(out.relative_to(cfg.out_dir))])
    key = "bpe:target"
    if not ws.manifest.done(key, cfg.out_dir):
        corpus = ws.targets("train")
        try:
            model = bpe_mod.learn_merges(corpus, cfg.bpe_merges,
                                         protected=set(),
                                         specials=bpe_mod.DEFAULT_SPECIALS,
                                         marker=cfg.bpe_marker)
        except ValueError as e:
            raise StageError(key, str(e))
        out = bpe_path(ws, "target")
        model.save(out)
        ws.manifest.mark(key, [str(out.relative_to(cfg.out_dir))])


def stage_encode(ws: Workspace) -> None:
    stage_bpe(ws)
    cfg = ws.cfg
    tgt_model = bpe_mod.BpeModel.load(bpe_path(ws, "target"))
    for variant in cfg.variants:
        key = f"encode:{variant.value}"
        if ws.manifest.done(key, cfg.out_dir):
            continue
        src_model = bpe_mod.BpeModel.load(bpe_path(ws, variant.value))
        outputs = []
        for split in SPLITS:
            sentences = load_sentences(masked_path(ws, variant, split))
            out = encoded_src_path(ws, variant, split)
            save_sentences(out, [src_model.apply(s) for s in sentences])
            outputs.append(str(out.relative_to(cfg.out_dir)))
        ws.manifest.mark(key, outputs)
    key = "encode:target"
    if not ws.manifest.done(key, cfg.out_dir):
        outputs = []
        for split in SPLITS:
            sentences = ws.targets(split)
            out = encoded_tgt_path(ws, split)
            save_sentences(out, [tgt_model.apply(s) for s in sentences])
            outputs.append(str(out.relative_to(cfg.out_dir)))
        ws.manifest.mark(key, outputs)


def _load_pairs(ws: Workspace, variant: MaskVariant, split: str,
                src_model, tgt_model) -> list[tuple[np.ndarray, np.ndarray]]:
    src_lines = load_sentences(encoded_src_path(ws, variant, split))
    tgt_lines = load_sentences(encoded_tgt_path(ws, split))
    if len(src_lines) != len(tgt_lines):
        raise StageError(
            f"train:{variant.value}",
            f"{split}: {len(src_lines)} source vs {len(tgt_lines)} target "
            f"sentences")
    pairs = []
    for i, (src, tgt) in enumerate(zip(src_lines, tgt_lines)):
        if not src or not tgt:
            side = "source" if not src else "target"
            raise StageError(f"train:{variant.value}",
                             f"{split}: empty {side} sentence at segment {i}")
        src_ids = np.array([src_model.vocab.get(s, src_model.unk_id)
                            for s in src], dtype=np.int64)
        tgt_ids = np.array(
            [tgt_model.bos_id]
            + [tgt_model.vocab.get(s, tgt_model.unk_id) for s in tgt]
            + [tgt_model.eos_id], dtype=np.int64)
        pairs.append((src_ids, tgt_ids))
    return pairs


def cell_model_config(ws: Workspace, setup: str, src_vocab: int,
                      tgt_vocab: int) -> ModelConfig:
    mode, kind = parse_setup(setup)
    cfg = ws.cfg
    visual_dim = 0
    visual_rows = 0
    if mode is Mode.AIC:
        visual_dim = cfg.video_dim
    elif mode is Mode.AIF:
        if kind is VisualKind.VIDEOSUM:
            visual_rows, visual_dim = cfg.videosum_rows, cfg.videosum_cols
        elif kind is VisualKind.CONV4:
            visual_rows, visual_dim = cfg.grid_size ** 2, cfg.video_dim
        else:
            visual_rows = len(ws.emb_labels())
            visual_dim = ws.embedding_table().dim
    return ModelConfig(
        src_vocab=src_vocab, tgt_vocab=tgt_vocab, n_layers=cfg.n_layers,
        n_heads=cfg.n_heads, model_dim=cfg.model_dim, ff_dim=cfg.ff_dim,
        dropout=cfg.dropout, mode=mode, visual_kind=kind,
        visual_dim=visual_dim, visual_rows=visual_rows, max_len=cfg.max_len)


def stage_train(ws: Workspace) -> None:
    stage_encode(ws)
    cfg = ws.cfg
    tgt_model = bpe_mod.BpeModel.load(bpe_path(ws, "target"))
    for variant in cfg.variants:
        src_model = bpe_mod.BpeModel.load(bpe_path(ws, variant.value))
        for setup in cfg.setups:
            key = f"train:{setup}:{variant.value}"
            if ws.manifest.done(key, cfg.out_dir):
                continue
            mode, kind = parse_setup(setup)
            model_cfg = cell_model_config(ws, setup, len(src_model),
                                          len(tgt_model))
            train_pairs = _load_pairs(ws, variant, "train", src_model, tgt_model)
            val_pairs = _load_pairs(ws, variant, "val", src_model, tgt_model)
            train_vis = val_vis = None
            if mode is not Mode.TEXT_ONLY:
                train_vis = ws.visual_features(kind, "train", mode)
                val_vis = ws.visual_features(kind, "val", mode)
            log_file = ws.rel("logs", f"{setup}.{variant.value}.log.jsonl")
            settings = TrainSettings(
                epochs=cfg.epochs, patience=cfg.patience,
                batch_tokens=cfg.batch_tokens, base_rate=cfg.base_rate,
                warmup_steps=cfg.warmup_steps, val_beam_size=cfg.val_beam,
                val_alpha=cfg.alpha, log_path=str(log_file))
            try:
                result = train_model(
                    model_cfg, train_pairs, val_pairs, settings,
                    seed=cell_seed(cfg.seed, key),
                    pad_id=tgt_model.pad_id, bos_id=tgt_model.bos_id,
                    eos_id=tgt_model.eos_id,
                    train_visuals=train_vis, val_visuals=val_vis,
                    detokenize=tgt_model.decode,
                    val_refs=ws.targets("val"))
            except ValueError as e:
                raise StageError(key, str(e))
            ckpt = checkpoint_path(ws, setup, variant)
            save_checkpoint(ckpt, model_cfg, result.params)
            ws.manifest.mark(key, [
                str(ckpt.relative_to(cfg.out_dir)),
                str(log_file.relative_to(cfg.out_dir))])


def stage_translate(ws: Workspace) -> None:
    stage_train(ws)
    cfg = ws.cfg
    for variant in cfg.variants:
        src_model = bpe_mod.BpeModel.load(bpe_path(ws, variant.value))
        tgt_model = bpe_mod.BpeModel.load(bpe_path(ws, "target"))
        for setup in cfg.setups:
            key = f"translate:{setup}:{variant.value}"
            if ws.manifest.done(key, cfg.out_dir):
                continue
            mode, kind = parse_setup(setup)
            model_cfg, params = load_checkpoint(
                checkpoint_path(ws, setup, variant))
            pairs = _load_pairs(ws, variant, "test", src_model, tgt_model)
            visuals = (ws.visual_features(kind, "test", mode)
                       if mode is not Mode.TEXT_ONLY else None)
            hyps = []
            for i, (src, _) in enumerate(pairs):
                visual = visuals[i] if visuals is not None else None
                hyp = translate_sentence(
                    model_cfg, params, src, visual, tgt_model.bos_id,
                    tgt_model.eos_id, beam_size=cfg.beam_size,
                    alpha=cfg.alpha, max_len=cfg.max_len)
                hyps.append(tgt_model.decode(
                    [t for t in hyp.tokens if t != tgt_model.eos_id]))
            out = hyp_path(ws, setup, variant)
            save_sentences(out, hyps)
            ws.manifest.mark(key, [str(out.relative_to(cfg.out_dir))])


def stage_evaluate(ws: Workspace) -> list[dict]:
    stage_translate(ws)
    cfg = ws.cfg
    refs = ws.targets("test")
    rows = []
    for variant in cfg.variants:
        for setup in cfg.setups:
            hyp_file = hyp_path(ws, setup, variant)
            hyps = load_sentences(hyp_file)
            if len(hyps) != len(refs):
                raise StageError(
                    f"evaluate:{setup}:{variant.value}",
                    f"{len(hyps)} hypotheses vs {len(refs)} references")
            rows.append({
                "setup": setup, "variant": variant.value,
                "bleu": round(bleu(hyps, refs), 4),
                "hypotheses": str(hyp_file.relative_to(cfg.out_dir))})
    results_file = ws.rel("report", "results.jsonl")
    with open(results_file, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    ws.manifest.mark("evaluate", ["report/results.jsonl"])
    return rows


def stage_probe(ws: Workspace) -> list[dict]:
    stage_translate(ws)
    cfg = ws.cfg
    visual_setups = [s for s in cfg.setups if parse_setup(s)[0] is not Mode.TEXT_ONLY]
    rows = []
    refs = ws.targets("test")
    tgt_model = bpe_mod.BpeModel.load(bpe_path(ws, "target"))
    for variant in cfg.variants:
        src_model = bpe_mod.BpeModel.load(bpe_path(ws, variant.value))
        for setup in visual_setups:
            key = f"probe:{setup}:{variant.value}"
            row_file = ws.rel("report", f"probe.{setup}.{variant.value}.json")
            if ws.manifest.done(key, cfg.out_dir):
                rows.append(json.loads(row_file.read_text(encoding="utf-8")))
                continue
            mode, kind = parse_setup(setup)
            model_cfg, params = load_checkpoint(
                checkpoint_path(ws, setup, variant))
            pairs = _load_pairs(ws, variant, "test", src_model, tgt_model)
            visuals = ws.visual_features(kind, "test", mode)
            try:
                result, congruent, incongruent = probe(
                    model_cfg, params, [p[0] for p in pairs], refs, visuals,
                    tgt_model.bos_id, tgt_model.eos_id, tgt_model.decode,
                    beam_size=cfg.beam_size, alpha=cfg.alpha, setup=setup,
                    variant=variant.value, max_len=cfg.max_len)
            except ValueError as e:
                raise StageError(key, str(e))
            cong_file = hyp_path(ws, setup, variant, "congruent")
            incong_file = hyp_path(ws, setup, variant, "incongruent")
            save_sentences(cong_file, congruent)
            save_sentences(incong_file, incongruent)
            row = {"setup": setup, "variant": variant.value,
                   "congruent_bleu": round(result.congruent_bleu, 4),
                   "incongruent_bleu": round(result.incongruent_bleu, 4),
                   "delta": round(result.delta, 4),
                   "congruent_hypotheses":
                       str(cong_file.relative_to(cfg.out_dir)),
                   "incongruent_hypotheses":
                       str(incong_file.relative_to(cfg.out_dir))}
            row_file.write_text(json.dumps(row, sort_keys=True),
                                encoding="utf-8")
            rows.append(row)
            ws.manifest.mark(key, [
                str(cong_file.relative_to(cfg.out_dir)),
                str(incong_file.relative_to(cfg.out_dir)),
                str(row_file.relative_to(cfg.out_dir))])
    probe_file = ws.rel("report", "probe.jsonl")
    with open(probe_file, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    return rows


def stage_report(ws: Workspace) -> None:
    result_rows = stage_evaluate(ws)
    probe_rows = stage_probe(ws)
    cfg = ws.cfg
    reporting.write_report(ws.rel("report"), cfg, result_rows, probe_rows)


def run_pipeline(cfg: ExperimentConfig) -> Workspace:
    """Run every stage; returns the workspace for inspection."""
    ws = Workspace.open(cfg)
    stage_report(ws)
    return ws
