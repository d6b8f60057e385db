"""Training loop, evaluation, checkpoint round-trip and the ablation runner."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numgrad as ng
from .corpusio import Corpus, CorpusError, PostRecord
from .heads import EmbeddingTable, OOV
from .metrics import Metrics, compute_metrics
from .model import Example, PrefFEND
from .numgrad import Tensor
from .objective import ABLATIONS, Adam, LossBreakdown, TrainConfig, batch_objective

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.ckpt"
EPOCH_LOG_NAME = "epochs.jsonl"
METRICS_NAME = "metrics.json"


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: PrefFEND
    config: TrainConfig
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    val_metrics: Metrics | None = None
    checkpoint: Path | None = None


def build_model(config: TrainConfig, vocab_tokens: Sequence[Sequence[str]] | dict[str, int]) -> PrefFEND:
    rng = np.random.default_rng(config.seed)
    if isinstance(vocab_tokens, dict):
        table = EmbeddingTable(dict(vocab_tokens), Tensor(np.zeros((len(vocab_tokens), config.d)), trainable=True))
    else:
        table = EmbeddingTable.build(vocab_tokens, config.d, rng, config.min_count)
    return PrefFEND(table, mode=config.mode, layers=config.layers, alpha=config.alpha,
                    pattern_hidden=config.pattern_hidden, fact_dim=config.fact_dim,
                    attn_dim=config.attn_dim, fusion_hidden=config.fusion_hidden,
                    uniform_maps=config.uniform_maps, seed=config.seed + 1)


def prepare_examples(model: PrefFEND, posts: Sequence[PostRecord], corpus: Corpus,
                     config: TrainConfig) -> list[Example]:
    articles = corpus.article_map()
    seed = config.seed if config.ablation == "rand-init-maps" else None
    return [model.prepare(p, corpus.stylistic, corpus.entity, corpus.evidence.get(p.id, []), articles, seed)
            for p in posts]


def evaluate_examples(model: PrefFEND, examples: Sequence[Example], batch_size: int = 128) -> Metrics:
    probs, _ = model.predict(examples, batch_size)
    return compute_metrics([ex.label for ex in examples], probs)


def train_step(model: PrefFEND, batch, betas, optimizer: Adam) -> LossBreakdown:
    if betas[2]:
        out = model.forward(batch, with_swap=True)
        swapped = out.y_hat_swapped
    else:
        out = model.forward(batch, with_swap=False)
        with ng.no_grad():
            swapped = model.forward(batch, with_swap=True).y_hat_swapped
    loss, parts = batch_objective(batch.labels, out.y_hat, out.maps.m_P, out.maps.m_F, swapped, betas)
    if not math.isfinite(parts.total):
        return parts
    optimizer.zero_grad()
    ng.backward(loss)
    optimizer.step()
    return parts


def train(config: TrainConfig, corpus: Corpus, out_dir=None) -> TrainResult:
    """Minimize the weighted objective; keep the epoch with the best validation macro F1."""
    train_posts, val_posts = corpus.split("train"), corpus.split("val")
    if not train_posts:
        raise CorpusError("training split is empty")
    if not val_posts:
        raise CorpusError("validation split is empty")

    model = build_model(config, [p.tokens for p in train_posts])
    train_ex = prepare_examples(model, train_posts, corpus, config)
    val_ex = prepare_examples(model, val_posts, corpus, config)
    betas = config.effective_betas()
    optimizer = Adam(model.parameters(), lr=config.lr)
    shuffle_rng = np.random.default_rng([config.seed, 7])

    history: list[dict] = []
    best_f1, best_epoch, best_state, best_metrics = -1.0, 0, model.state_dict(), None
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_ex))
        sums = np.zeros(4)
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = model.collate([train_ex[i] for i in order[start:start + config.batch_size]])
            parts = train_step(model, batch, betas, optimizer)
            if not math.isfinite(parts.total):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}: {parts}")
            sums += len(batch.examples) * np.array([parts.cls, parts.cos, parts.rev, parts.total])
        means = sums / len(train_ex)
        val = evaluate_examples(model, val_ex, config.eval_batch_size)
        record = {"epoch": epoch,
                  "loss": dict(zip(("cls", "cos", "rev", "total"), means.tolist())),
                  "val": val.to_dict()}
        history.append(record)
        log.info("epoch %d loss %.4f val macF1 %.4f", epoch, means[3], val.macro_f1)
        if val.macro_f1 > best_f1:
            best_f1, best_epoch, best_state, best_metrics = val.macro_f1, epoch, model.state_dict(), val
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                log.info("early stop after %d stale epochs", stale)
                break

    model.load_state_dict(best_state)
    result = TrainResult(model, config, history, best_epoch, best_metrics)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result.checkpoint = out_dir / CHECKPOINT_NAME
        save_model(result.checkpoint, model, config, {"best_epoch": best_epoch, "val": best_metrics.to_dict()})
        write_epoch_log(out_dir / EPOCH_LOG_NAME, history)
        (out_dir / METRICS_NAME).write_text(json.dumps(best_metrics.to_dict(), sort_keys=True) + "\n")
    return result


def write_epoch_log(path, history: Sequence[dict]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def save_model(path, model: PrefFEND, config: TrainConfig, extra: dict | None = None) -> None:
    vocab = sorted(model.table.vocab, key=model.table.vocab.get)
    meta = {"config": config.to_dict(), "vocab": vocab, **(extra or {})}
    ng.save_checkpoint(path, model.state_dict(), meta)


def load_model(path) -> tuple[PrefFEND, TrainConfig]:
    state, meta = ng.load_checkpoint(path)
    config = TrainConfig.from_dict(meta["config"])
    vocab = {tok: i for i, tok in enumerate(meta["vocab"])}
    if vocab.get(OOV) != 0:
        raise ValueError(f"{path}: vocabulary must start with {OOV}")
    model = build_model(config, vocab)
    model.load_state_dict(state)
    return model, config


def evaluate(checkpoint, corpus: Corpus, split: str = "test") -> Metrics:
    model, config = load_model(checkpoint) if not isinstance(checkpoint, PrefFEND) else (checkpoint, None)
    if config is None:
        raise TypeError("evaluate() needs a checkpoint path; use evaluate_examples for a live model")
    posts = corpus.split(split)
    if not posts:
        raise CorpusError(f"split {split!r} is empty")
    return evaluate_examples(model, prepare_examples(model, posts, corpus, config), config.eval_batch_size)


# ablations ---------------------------------------------------------------

ARMS = ("full",) + ABLATIONS[1:]


def arm_config(base: TrainConfig, arm: str) -> TrainConfig:
    if arm not in ARMS:
        raise ValueError(f"unknown ablation arm {arm!r}")
    return replace(base, ablation="none" if arm == "full" else arm)


def run_ablation(base: TrainConfig, corpus: Corpus, out_dir=None, arms: Sequence[str] = ARMS) -> list[dict]:
    """Train every arm on the same corpus and seed; one row per arm."""
    rows = []
    for arm in arms:
        cfg = arm_config(base, arm)
        arm_dir = Path(out_dir) / arm if out_dir is not None else None
        res = train(cfg, corpus, arm_dir)
        test_posts = corpus.split("test")
        test = evaluate_examples(res.model, prepare_examples(res.model, test_posts, corpus, cfg),
                                 cfg.eval_batch_size) if test_posts else None
        last = res.history[-1]["loss"]
        rows.append({"arm": arm, "seed": cfg.seed, "betas": list(cfg.effective_betas()),
                     "best_epoch": res.best_epoch, "val": res.val_metrics.to_dict(),
                     "test": test.to_dict() if test else None, "loss_parts": last})
    if out_dir is not None:
        write_grid(Path(out_dir), rows)
    return rows


GRID_COLUMNS = ("accuracy", "macro_f1", "precision_fake", "recall_fake", "f1_fake",
                "precision_real", "recall_real", "f1_real")


def grid_text(rows: Sequence[dict], split: str = "test") -> str:
    header = ["arm"] + list(GRID_COLUMNS) + ["cls", "cos", "rev"]
    lines = [header]
    for row in rows:
        m = row.get(split) or row["val"]
        lines.append([row["arm"]] + [f"{m[c]:.4f}" for c in GRID_COLUMNS]
                     + [f"{row['loss_parts'][k]:.4f}" for k in ("cls", "cos", "rev")])
    widths = [max(len(r[i]) for r in lines) for i in range(len(header))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in lines) + "\n"


def write_grid(out_dir: Path, rows: Sequence[dict]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.json").write_text(json.dumps(list(rows), indent=2, sort_keys=True) + "\n")
    (out_dir / "ablation.txt").write_text(grid_text(rows))
