"""Command-line entry point: gen, train, eval, ablate, explain."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numgrad as ng
from .corpusio import (SPLITS, Corpus, CorpusError, PostRecord, build_evidence, build_index, load_corpus,
                       load_posts)
from .objective import ConfigError, TrainConfig
from .synthetic import SpecError, SyntheticSpec, generate_synthetic
from .train import TrainingError, evaluate, grid_text, load_model, prepare_examples, run_ablation, train

log = logging.getLogger("preffend")

PATTERN_GROUP, FACT_GROUP = "pattern", "fact"
SHADES = " .:-=+*#%@"
TOP_TOKENS = 10
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    """Bad input from the caller; exit code 2."""


# explain reports ------------------------------------------------------------


@dataclass
class TokenScore:
    token: str
    type: str
    m_P: float
    m_F: float
    group: str


@dataclass
class ExplainReport:
    post_id: str
    tokens: list[TokenScore]
    y_hat: float
    label: int

    def to_dict(self) -> dict:
        return asdict(self)


def dominant_group(p_score: float, f_score: float) -> str:
    # ties go to the fact group
    return PATTERN_GROUP if p_score > f_score else FACT_GROUP


def build_report(post_id: str, tokens: Sequence[str], tags: Sequence[str], m_P, m_F, y_hat: float,
                 label: int) -> ExplainReport:
    m_P, m_F = np.asarray(m_P, dtype=float), np.asarray(m_F, dtype=float)
    if not len(tokens) == len(tags) == len(m_P) == len(m_F):
        raise ValueError("tokens, tags and map lengths differ")
    entries = [TokenScore(t, g, float(p), float(f), dominant_group(p, f))
               for t, g, p, f in zip(tokens, tags, m_P, m_F)]
    return ExplainReport(post_id, entries, float(y_hat), int(label))


def explain_posts(model, config: TrainConfig, posts: Sequence[PostRecord], corpus: Corpus) -> list[ExplainReport]:
    reports = []
    with ng.no_grad():
        for ex in prepare_examples(model, posts, corpus, config):
            out = model.forward(model.collate([ex]), with_swap=False)
            reports.append(build_report(ex.id, ex.typed.tokens, ex.typed.tags,
                                        out.maps.m_P.values[0], out.maps.m_F.values[0],
                                        out.y_hat.values[0], ex.label))
    return reports


def group_summary(reports: Sequence[ExplainReport], top: int = TOP_TOKENS) -> dict[str, list[list]]:
    """Most frequent tokens per dominant group across reports."""
    counts = {PATTERN_GROUP: Counter(), FACT_GROUP: Counter()}
    for rep in reports:
        for entry in rep.tokens:
            counts[entry.group][entry.token] += 1
    # ties in frequency resolve alphabetically so output is stable
    return {g: [[tok, n] for tok, n in sorted(c.items(), key=lambda kv: (-kv[1], kv[0]))[:top]]
            for g, c in counts.items()}


def shade(score: float, top: float) -> str:
    if top <= 0:
        return SHADES[0]
    return SHADES[min(len(SHADES) - 1, int(round(score / top * (len(SHADES) - 1))))]


def render_report(rep: ExplainReport) -> str:
    top_p = max((e.m_P for e in rep.tokens), default=0.0)
    top_f = max((e.m_F for e in rep.tokens), default=0.0)
    width = max([len(e.token) for e in rep.tokens] + [5])
    lines = [f"post {rep.post_id}  y_hat {rep.y_hat:.4f}  label {rep.label}",
             f"{'token'.ljust(width)}  type  P  F  m_P      m_F      group"]
    for e in rep.tokens:
        lines.append(f"{e.token.ljust(width)}  {e.type:<4}  {shade(e.m_P, top_p)}  {shade(e.m_F, top_f)}  "
                     f"{e.m_P:.5f}  {e.m_F:.5f}  {e.group}")
    return "\n".join(lines) + "\n"


def render_summary(summary: dict[str, list[list]]) -> str:
    lines = []
    for group, items in summary.items():
        lines.append(f"{group}: " + ", ".join(f"{tok} ({n})" for tok, n in items))
    return "\n".join(lines) + "\n"


# commands -------------------------------------------------------------------


def _read_json(path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected a JSON object")
    return data


def load_config(path, seed: int | None = None) -> TrainConfig:
    config = TrainConfig.from_dict(_read_json(path)) if path else TrainConfig()
    return replace(config, seed=seed) if seed is not None else config


def _emit(obj, fmt: str, text: str | None = None) -> None:
    if fmt == "text" and text is not None:
        sys.stdout.write(text)
    else:
        sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_gen(args) -> int:
    spec = SyntheticSpec.from_dict(_read_json(args.config)) if args.config else SyntheticSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    corpus = generate_synthetic(spec)
    corpus.write(args.out)
    summary = {"out": str(args.out), "posts": len(corpus.posts), "articles": len(corpus.articles)}
    _emit(summary, args.format, f"wrote {summary['posts']} posts and {summary['articles']} articles "
                                f"to {args.out}\n")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config, args.seed)
    corpus = load_corpus(args.corpus, config.top_k, config.casefold)
    result = train(config, corpus, args.out)
    metrics = result.val_metrics.to_dict()
    _emit(metrics, args.format, _metrics_text(metrics, f"validation (best epoch {result.best_epoch})"))
    return 0


def cmd_eval(args) -> int:
    _, config = load_model(args.checkpoint)
    corpus = load_corpus(args.corpus, config.top_k, config.casefold)
    metrics = evaluate(args.checkpoint, corpus, args.split).to_dict()
    _emit(metrics, args.format, _metrics_text(metrics, args.split))
    return 0


def cmd_ablate(args) -> int:
    config = load_config(args.config, args.seed)
    corpus = load_corpus(args.corpus, config.top_k, config.casefold)
    rows = run_ablation(config, corpus, args.out)
    _emit(rows, args.format, grid_text(rows))
    return 0


def cmd_explain(args) -> int:
    model, config = load_model(args.checkpoint)
    corpus = load_corpus(args.corpus, config.top_k, config.casefold)
    if args.posts:
        posts = load_posts(args.posts)
        if not posts:
            raise UsageError(f"{args.posts}: no posts")
        fresh = [p for p in posts if p.id not in corpus.evidence]
        if fresh:
            corpus.evidence.update(build_evidence(fresh, build_index(corpus.articles), config.top_k))
    else:
        match = [p for p in corpus.posts if p.id == args.post]
        if not match:
            raise UsageError(f"unknown post id {args.post!r}")
        posts = match
    reports = explain_posts(model, config, posts, corpus)
    if args.posts:
        summary = group_summary(reports)
        payload = {"reports": [r.to_dict() for r in reports], "summary": summary}
        text = "".join(render_report(r) + "\n" for r in reports) + render_summary(summary)
    else:
        payload, text = reports[0].to_dict(), render_report(reports[0])
    _emit(payload, args.format, text)
    return 0


def _metrics_text(metrics: dict, title: str) -> str:
    keys = ("accuracy", "macro_f1", "precision_fake", "recall_fake", "f1_fake",
            "precision_real", "recall_real", "f1_real")
    return f"{title}\n" + "".join(f"  {k:<15} {metrics[k]:.4f}\n" for k in keys)


# parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="preffend", description="Preference-aware fake news detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_help="JSON config mirroring TrainConfig"):
        p.add_argument("--config", type=Path, help=config_help)
        p.add_argument("--seed", type=int, help="overrides the seed in the config")
        p.add_argument("--format", choices=("json", "text"), default="json")

    p = sub.add_parser("gen", help="write a seeded synthetic corpus")
    common(p, "JSON synthetic-corpus spec")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model and save the best checkpoint")
    common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on one split")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train every ablation arm and write a comparison grid")
    common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("explain", help="per-token preference scores for posts")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--post", help="id of a post in the corpus")
    which.add_argument("--posts", type=Path, help="JSON Lines file of posts; adds a group summary")
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.set_defaults(func=cmd_explain)
    return parser


def configure_logging() -> None:
    level = os.environ.get("PREFFEND_LOG", "info").lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"PREFFEND_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        configure_logging()
        return args.func(args)
    except (UsageError, ConfigError, SpecError, CorpusError, FileNotFoundError) as exc:
        print(f"preffend {args.command}: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, ng.ShapeError, ng.DomainError, ValueError, KeyError, OSError) as exc:
        print(f"preffend {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
