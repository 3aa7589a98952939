"""Teacher-forced training with Adam, the warmup schedule, and
validation-BLEU early stopping."""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import mmtf
from .autodiff import Tensor
from .decoding import translate_sentence
from .evaluation import bleu
from .model import Mode, ModelConfig, VisualKind, apply_aic, decode_forward, \
    encode, init_params
from .optim import Adam, LrSchedule


class EarlyStopping:
    """Stop once validation BLEU has failed to improve for more than
    ``patience`` consecutive epochs; the best-scoring epoch (earliest on
    ties) supplies the checkpoint."""

    def __init__(self, patience: int):
        if patience < 0:
            raise ValueError("patience must be >= 0")
        self.patience = patience
        self.best_score: Optional[float] = None
        self.best_epoch: Optional[int] = None
        self.streak = 0

    def update(self, epoch: int, score: float) -> bool:
        """Record one epoch's validation score; returns True on improvement."""
        if self.best_score is None or score > self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            self.streak = 0
            return True
        self.streak += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.streak > self.patience


@dataclass
class TrainSettings:
    epochs: int = 30
    patience: int = 10
    batch_tokens: int = 2000
    base_rate: float = 0.05
    warmup_steps: int = 100
    val_beam_size: int = 1
    val_alpha: float = 1.0
    log_path: Optional[str] = None


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    best_epoch: int
    best_bleu: float
    epochs_run: int
    log_lines: list[dict] = field(default_factory=list)


SentencePair = tuple[np.ndarray, np.ndarray]   # (source ids, target ids with BOS/EOS)


def make_batches(lengths: Sequence[tuple[int, int]], order: np.ndarray,
                 batch_tokens: int) -> list[list[int]]:
    """Greedy token-count batching over a given sentence order: a batch is
    closed once adding the next sentence would push
    n_sentences * max(src_len, tgt_len) past ``batch_tokens``."""
    batches: list[list[int]] = []
    current: list[int] = []
    width = 0
    for idx in order:
        w = max(lengths[idx])
        new_width = max(width, w)
        if current and (len(current) + 1) * new_width > batch_tokens:
            batches.append(current)
            current = [idx]
            width = w
        else:
            current.append(idx)
            width = new_width
    if current:
        batches.append(current)
    return batches


def _pad_batch(seqs: list[np.ndarray], pad_id: int) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), pad_id, dtype=np.int64)
    ok = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        ok[i, : len(s)] = True
    return ids, ok


def batch_loss(config: ModelConfig, params: dict, batch: list[SentencePair],
               visuals: Optional[list], pad_id: int, rng,
               training: bool = True) -> Tensor:
    """Teacher-forced cross-entropy averaged over non-padding target tokens."""
    src_ids, src_ok = _pad_batch([p[0] for p in batch], pad_id)
    tgt = [p[1] for p in batch]
    tgt_in, tgt_in_ok = _pad_batch([t[:-1] for t in tgt], pad_id)
    tgt_out, tgt_out_ok = _pad_batch([t[1:] for t in tgt], pad_id)

    memory = encode(config, params, src_ids, src_ok, rng=rng, training=training)
    visual = None
    if config.mode is Mode.AIC:
        memory = apply_aic(config, params, memory, np.stack(visuals))
    elif config.mode is Mode.AIF:
        visual = np.stack(visuals)
    logits = decode_forward(config, params, memory, visual, tgt_in,
                            src_ok=src_ok, tgt_ok=tgt_in_ok, rng=rng,
                            training=training)
    return ad.cross_entropy(logits, tgt_out, mask=tgt_out_ok)


def _clone_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {name: Tensor(p.data.copy(), requires_grad=True, name=name)
            for name, p in params.items()}


def align_features(n_sentences: int, feature_map, split: str) -> list:
    """Resolve one raw feature per sentence index; a missing id aborts with
    the full list of absent ids."""
    missing = [str(i) for i in range(n_sentences) if str(i) not in feature_map]
    if missing:
        raise ValueError(
            f"{split}: no visual feature for segment ids: {', '.join(missing)}")
    return [feature_map[str(i)] for i in range(n_sentences)]


def train_model(config: ModelConfig,
                train_pairs: list[SentencePair],
                val_pairs: list[SentencePair],
                settings: TrainSettings,
                seed: int,
                pad_id: int, bos_id: int, eos_id: int,
                train_visuals: Optional[list] = None,
                val_visuals: Optional[list] = None,
                detokenize: Optional[Callable[[Sequence[int]], list[str]]] = None,
                val_refs: Optional[list[list[str]]] = None,
                params: Optional[dict[str, Tensor]] = None) -> TrainResult:
    """Train until the early-stopping rule fires or ``epochs`` is reached;
    returns the parameters of the best validation-BLEU epoch plus the log.

    ``detokenize`` maps generated id sequences to word tokens for BLEU; by
    default ids are compared as string tokens against ``val_refs`` (or the
    detokenized gold targets when no references are given).
    """
    if config.mode is not Mode.TEXT_ONLY:
        if train_visuals is None or val_visuals is None:
            raise ValueError(f"{config.mode.value} training needs visual features")
        if len(train_visuals) != len(train_pairs):
            raise ValueError("train visuals misaligned with train corpus")
        if len(val_visuals) != len(val_pairs):
            raise ValueError("val visuals misaligned with val corpus")
    if not train_pairs or not val_pairs:
        raise ValueError("empty training or validation corpus")

    if detokenize is None:
        detokenize = lambda ids: [str(i) for i in ids]  # noqa: E731
    if val_refs is None:
        val_refs = [detokenize([t for t in tgt[1:] if t != eos_id])
                    for _, tgt in val_pairs]

    if params is None:
        params = init_params(config, seed)
    schedule = LrSchedule(base_rate=settings.base_rate,
                          model_dim=config.model_dim,
                          warmup_steps=settings.warmup_steps)
    optimizer = Adam(params, schedule)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    dropout_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    stopper = EarlyStopping(settings.patience)

    lengths = [(len(s), len(t)) for s, t in train_pairs]
    log_lines: list[dict] = []
    best_params = _clone_params(params)
    best_epoch = 0
    step = 0
    epochs_run = 0

    for epoch in range(1, settings.epochs + 1):
        epochs_run = epoch
        order = shuffle_rng.permutation(len(train_pairs))
        epoch_loss = 0.0
        epoch_tokens = 0
        for batch_idx in make_batches(lengths, order, settings.batch_tokens):
            batch = [train_pairs[i] for i in batch_idx]
            visuals = ([train_visuals[i] for i in batch_idx]
                       if train_visuals is not None else None)
            loss = batch_loss(config, params, batch, visuals, pad_id,
                              dropout_rng, training=True)
            optimizer.zero_grad()
            ad.backward(loss)
            lr = optimizer.step()
            step += 1
            n_tok = sum(len(t) - 1 for _, t in batch)
            epoch_loss += loss.item() * n_tok
            epoch_tokens += n_tok
            log_lines.append({"epoch": epoch, "step": step,
                              "loss": round(loss.item(), 6),
                              "lr": float(f"{lr:.8g}")})

        val_bleu = evaluate_corpus_bleu(
            config, params, val_pairs, val_visuals, bos_id, eos_id,
            detokenize, val_refs, beam_size=settings.val_beam_size,
            alpha=settings.val_alpha)
        log_lines.append({"epoch": epoch, "step": step,
                          "loss": round(epoch_loss / max(epoch_tokens, 1), 6),
                          "val_bleu": round(val_bleu, 4)})
        if stopper.update(epoch, val_bleu):
            best_params = _clone_params(params)
            best_epoch = epoch
        if stopper.should_stop:
            break

    if settings.log_path:
        with open(settings.log_path, "w", encoding="utf-8", newline="\n") as f:
            for line in log_lines:
                f.write(json.dumps(line, sort_keys=True) + "\n")
    return TrainResult(params=best_params, best_epoch=best_epoch,
                       best_bleu=stopper.best_score or 0.0,
                       epochs_run=epochs_run, log_lines=log_lines)


def evaluate_corpus_bleu(config: ModelConfig, params: dict,
                         pairs: list[SentencePair], visuals: Optional[list],
                         bos_id: int, eos_id: int,
                         detokenize: Callable[[Sequence[int]], list[str]],
                         refs: list[list[str]], beam_size: int = 1,
                         alpha: float = 1.0) -> float:
    hyps = []
    for i, (src, _) in enumerate(pairs):
        visual = visuals[i] if visuals is not None else None
        hyp = translate_sentence(config, params, src, visual, bos_id, eos_id,
                                 beam_size=beam_size, alpha=alpha,
                                 max_len=config.max_len)
        hyps.append(detokenize([t for t in hyp.tokens if t != eos_id]))
    return bleu(hyps, refs)


# -- checkpoints --------------------------------------------------------------

CKPT_MAGIC = b"MMTCKPT1"


def save_checkpoint(path, config: ModelConfig, params: dict[str, Tensor]) -> None:
    """Single-file checkpoint: magic, a JSON header (config + record table),
    then one MMTF record per parameter tensor."""
    names = sorted(params)
    offsets = {}
    buf = io.BytesIO()
    for name in names:
        offsets[name] = mmtf.write_record(buf, params[name].data)
    payload = buf.getvalue()

    header = {
        "version": 1,
        "config": config_to_dict(config),
        "records": [{"name": n, "offset": offsets[n]} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, Tensor]]:
    with open(path, "rb") as f:
        magic = f.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("version") != 1:
            raise ValueError(f"{path}: unsupported checkpoint version")
        base = f.tell()
        params = {}
        for rec in header["records"]:
            f.seek(base + rec["offset"])
            params[rec["name"]] = Tensor(mmtf.read_record(f),
                                         requires_grad=True, name=rec["name"])
    config = config_from_dict(header["config"])
    return config, params


def config_to_dict(config: ModelConfig) -> dict:
    return {
        "src_vocab": config.src_vocab, "tgt_vocab": config.tgt_vocab,
        "n_layers": config.n_layers, "n_heads": config.n_heads,
        "model_dim": config.model_dim, "ff_dim": config.ff_dim,
        "dropout": config.dropout, "mode": config.mode.value,
        "visual_kind": config.visual_kind.value,
        "visual_dim": config.visual_dim, "visual_rows": config.visual_rows,
        "max_len": config.max_len,
    }


def config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(
        src_vocab=d["src_vocab"], tgt_vocab=d["tgt_vocab"],
        n_layers=d["n_layers"], n_heads=d["n_heads"],
        model_dim=d["model_dim"], ff_dim=d["ff_dim"], dropout=d["dropout"],
        mode=Mode(d["mode"]), visual_kind=VisualKind(d["visual_kind"]),
        visual_dim=d["visual_dim"], visual_rows=d["visual_rows"],
        max_len=d["max_len"])
