"""Seeded synthetic corpus with one pattern-driven and one fact-driven family.

Pattern family: fake posts carry more tokens from a planted stylistic pool
than real ones; nothing in them is checkable against the article base.  Fact
family: each post names an event and a slot value, the event's articles state
the true value, and a fake post states the other one.  Fact posts also carry
planted tokens, drawn independently of the label, so style alone cannot
decide them.  Filler words come from a vocabulary large enough that they
almost never repeat, which keeps retrieval keyed on the event token.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import corpusio as cio
from .corpusio import ArticleRecord, PostRecord

PATTERN, FACT = "pattern", "fact"
DEFAULT_PREFIXES = {"words": "w", "pattern": "pat", "neutral": "sty", "slot": "slot", "event": "evt"}


class SpecError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 500
    n_words: int = 1_000_000  # untyped filler vocabulary; large enough that filler rarely repeats
    pattern_pool: int = 10  # planted stylistic tokens
    neutral_pool: int = 10  # stylistic tokens used by every post
    slot_pool: int = 2  # entity slot values
    articles_per_event: int = 5
    distractor_articles: int = 500
    article_filler: tuple[int, int] = (0, 2)  # untyped body words per event article
    min_len: int = 12
    max_len: int = 32
    fake_pattern_count: tuple[int, int] = (3, 5)
    real_pattern_count: tuple[int, int] = (0, 1)
    fact_pattern_count: tuple[int, int] = (0, 5)  # planted tokens in fact posts, label-independent
    fact_fraction: float = 0.5
    noise_rate: float = 0.1
    top_k: int = cio.DEFAULT_TOP_K
    seed: int = 0
    prefixes: dict = field(default_factory=lambda: dict(DEFAULT_PREFIXES))

    def __post_init__(self):
        self.fake_pattern_count = tuple(self.fake_pattern_count)
        self.real_pattern_count = tuple(self.real_pattern_count)
        self.article_filler = tuple(self.article_filler)
        self.fact_pattern_count = tuple(self.fact_pattern_count)
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.noise_rate < 1.0:
            raise SpecError(f"noise_rate must lie in [0, 1), got {self.noise_rate}")
        if not 0.0 <= self.fact_fraction <= 1.0:
            raise SpecError("fact_fraction must lie in [0, 1]")
        for name in ("n_words", "pattern_pool", "neutral_pool", "articles_per_event"):
            if getattr(self, name) < 1:
                raise SpecError(f"{name} must be positive")
        if self.slot_pool < 2:
            raise SpecError("slot_pool needs at least two values to contradict")
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise SpecError("split sizes must be non-negative")
        lo_f, hi_f = self.fake_pattern_count
        lo_r, hi_r = self.real_pattern_count
        if not (0 <= lo_r <= hi_r < lo_f <= hi_f):
            raise SpecError("pattern counts must satisfy real range < fake range")
        if not 0 <= self.fact_pattern_count[0] <= self.fact_pattern_count[1]:
            raise SpecError("fact_pattern_count must be an ordered non-negative range")
        if not 0 <= self.article_filler[0] <= self.article_filler[1]:
            raise SpecError("article_filler must be an ordered non-negative range")
        if set(self.prefixes) != set(DEFAULT_PREFIXES):
            raise SpecError(f"prefixes must name exactly {sorted(DEFAULT_PREFIXES)}")
        self._check_disjoint()
        if self.min_len > self.max_len or self.min_len < max(hi_f, self.fact_pattern_count[1]) + 6:
            raise SpecError("min_len too small for the planted tokens")

    @property
    def pattern_threshold(self) -> int:
        return self.fake_pattern_count[0]

    def pool(self, name: str) -> list[str]:
        size = {"words": self.n_words, "pattern": self.pattern_pool, "neutral": self.neutral_pool,
                "slot": self.slot_pool}[name]
        width = 3 if name == "words" else 2
        return [f"{self.prefixes[name]}{i:0{width}d}" for i in range(size)]

    def word(self, i: int) -> str:
        return f"{self.prefixes['words']}{i:03d}"

    def pools(self) -> dict[str, list[str]]:
        return {name: self.pool(name) for name in ("words", "pattern", "neutral", "slot")}

    def _check_disjoint(self) -> None:
        # every pool token is prefix + digits, so two pools collide only if one
        # prefix extended by digits can spell another pool's tokens
        names = list(DEFAULT_PREFIXES)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                pa, pb = self.prefixes[a], self.prefixes[b]
                if not pa or not pb:
                    raise SpecError("pool prefixes must be non-empty")
                longer, shorter = (pa, pb) if len(pa) >= len(pb) else (pb, pa)
                if longer.startswith(shorter) and (longer == shorter or longer[len(shorter):].isdigit()):
                    raise SpecError(f"pools {a!r} and {b!r} overlap (prefixes {pa!r}, {pb!r})")

    @classmethod
    def from_dict(cls, data: dict) -> SyntheticSpec:
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise SpecError(f"unknown synthetic spec key(s) {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["fake_pattern_count"] = list(self.fake_pattern_count)
        out["real_pattern_count"] = list(self.real_pattern_count)
        out["article_filler"] = list(self.article_filler)
        out["fact_pattern_count"] = list(self.fact_pattern_count)
        out["prefixes"] = dict(self.prefixes)
        return out


@dataclass
class SyntheticCorpus:
    spec: SyntheticSpec
    posts: list[PostRecord]
    articles: list[ArticleRecord]
    stylistic: list[str]
    entities: list[str]
    evidence: dict[str, list[str]]

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        cio.save_posts(directory / cio.POSTS_FILE, self.posts)
        cio.save_articles(directory / cio.ARTICLES_FILE, self.articles)
        (directory / cio.STYLISTIC_FILE).write_text("\n".join(self.stylistic) + "\n", encoding="utf-8")
        (directory / cio.ENTITY_FILE).write_text("\n".join(self.entities) + "\n", encoding="utf-8")
        cio.save_evidence(directory / cio.EVIDENCE_FILE, self.evidence)
        (directory / "synthetic_spec.json").write_text(
            json.dumps(self.spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def generate_synthetic(spec: SyntheticSpec) -> SyntheticCorpus:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    pattern, neutral, slots = spec.pool("pattern"), spec.pool("neutral"), spec.pool("slot")

    def pick(pool: Sequence[str], k: int) -> list[str]:
        return [pool[i] for i in rng.integers(0, len(pool), size=k)]

    def filler(k: int) -> list[str]:
        return [spec.word(int(i)) for i in rng.integers(0, spec.n_words, size=k)]

    posts: list[PostRecord] = []
    articles: list[ArticleRecord] = []
    events: list[str] = []
    for split, size in zip(cio.SPLITS, (spec.n_train, spec.n_val, spec.n_test)):
        n_fact = int(round(size * spec.fact_fraction))
        families = np.array([FACT] * n_fact + [PATTERN] * (size - n_fact))
        rng.shuffle(families)
        for i, family in enumerate(families):
            pid = f"{split}-{i:05d}"
            clean = int(rng.integers(0, 2))
            length = int(rng.integers(spec.min_len, spec.max_len + 1))
            meta = {"family": str(family), "clean_label": clean}
            if family == PATTERN:
                lo, hi = spec.fake_pattern_count if clean else spec.real_pattern_count
                k = int(rng.integers(lo, hi + 1))
                toks = pick(pattern, k) + pick(neutral, int(rng.integers(1, 4)))
            else:
                lo, hi = spec.fact_pattern_count
                k = int(rng.integers(lo, hi + 1))
                event = f"{spec.prefixes['event']}{len(events):05d}"
                events.append(event)
                true_slot = slots[int(rng.integers(len(slots)))]
                if clean:
                    others = [s for s in slots if s != true_slot]
                    post_slot = others[int(rng.integers(len(others)))]
                else:
                    post_slot = true_slot
                descriptors = filler(2)
                for j in range(spec.articles_per_event):
                    lo, hi = spec.article_filler
                    body = descriptors + [true_slot] + filler(int(rng.integers(lo, hi + 1)))
                    rng.shuffle(body)
                    articles.append(ArticleRecord(f"{event}-{j}", [event, true_slot], body))
                toks = [event, post_slot] + descriptors + pick(pattern, k) + pick(neutral, int(rng.integers(1, 4)))
                meta.update(event=event, true_slot=true_slot, post_slot=post_slot)
            meta["pattern_count"] = k
            toks += filler(max(0, length - len(toks)))
            rng.shuffle(toks)
            label = clean if rng.random() >= spec.noise_rate else 1 - clean
            posts.append(PostRecord(pid, list(toks), int(label), split, meta=meta))

    for j in range(spec.distractor_articles):
        body = filler(int(rng.integers(6, 12))) + pick(slots, 1)
        articles.append(ArticleRecord(f"doc{j:05d}", filler(2), body))

    index = cio.build_index(articles)
    evidence = cio.build_evidence(posts, index, spec.top_k)
    stylistic = sorted(pattern + neutral)
    entities = sorted(slots + events)
    return SyntheticCorpus(spec, posts, articles, stylistic, entities, evidence)


def pattern_oracle(post: PostRecord, spec: SyntheticSpec) -> int:
    """Fake iff the post carries at least the planted-token threshold."""
    planted = set(spec.pool("pattern"))
    return int(sum(tok in planted for tok in post.tokens) >= spec.pattern_threshold)


def fact_oracle(post: PostRecord, articles: dict[str, ArticleRecord], evidence: Sequence[str],
                spec: SyntheticSpec) -> int:
    """Fake iff the post's slot value differs from the top article's."""
    slots = set(spec.pool("slot"))
    post_slots = [t for t in post.tokens if t in slots]
    if not evidence or not post_slots:
        return 0
    art_slots = [t for t in articles[evidence[0]].title if t in slots]
    return int(bool(art_slots) and post_slots[0] != art_slots[0])
