"""Post/article records, JSON Lines I/O, and BM25 retrieval over the article base."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .tokentype import TAGS

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
BM25_K1 = 1.5
BM25_B = 0.75
DEFAULT_TOP_K = 5


class CorpusError(ValueError):
    """Invalid corpus content; ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass
class PostRecord:
    id: str
    tokens: list[str]
    label: int  # 1 = fake
    split: str
    types: list[str] | None = None
    evidence_ids: list[str] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise CorpusError("post id must be a non-empty string")
        if not self.tokens or not all(isinstance(t, str) for t in self.tokens):
            raise CorpusError(f"post {self.id}: tokens must be a non-empty list of strings")
        if self.label not in (0, 1) or isinstance(self.label, bool):
            raise CorpusError(f"post {self.id}: label must be 0 or 1, got {self.label!r}")
        if self.split not in SPLITS:
            raise CorpusError(f"post {self.id}: unknown split {self.split!r}")
        if self.types is not None:
            if len(self.types) != len(self.tokens):
                raise CorpusError(f"post {self.id}: {len(self.types)} types for {len(self.tokens)} tokens")
            if set(self.types) - set(TAGS):
                raise CorpusError(f"post {self.id}: types must be drawn from {TAGS}")

    def to_json(self) -> dict:
        out = {"id": self.id, "tokens": self.tokens, "label": self.label, "split": self.split}
        if self.types is not None:
            out["types"] = self.types
        if self.evidence_ids is not None:
            out["evidence_ids"] = self.evidence_ids
        if self.meta:
            out["meta"] = self.meta
        return out

    @classmethod
    def from_json(cls, obj: dict) -> PostRecord:
        known = {"id", "tokens", "label", "split", "types", "evidence_ids", "meta"}
        extra = set(obj) - known
        if extra:
            raise CorpusError(f"unknown post field(s) {sorted(extra)}")
        missing = {"id", "tokens", "label", "split"} - set(obj)
        if missing:
            raise CorpusError(f"missing post field(s) {sorted(missing)}")
        return cls(obj["id"], list(obj["tokens"]), obj["label"], obj["split"],
                   obj.get("types"), obj.get("evidence_ids"), obj.get("meta") or {})


@dataclass
class ArticleRecord:
    id: str
    title: list[str]
    body: list[str]

    @property
    def tokens(self) -> list[str]:
        return self.title + self.body

    def to_json(self) -> dict:
        return {"id": self.id, "title": self.title, "body": self.body}

    @classmethod
    def from_json(cls, obj: dict) -> ArticleRecord:
        try:
            return cls(str(obj["id"]), list(obj.get("title", [])), list(obj.get("body", [])))
        except KeyError:
            raise CorpusError("article record needs an 'id'") from None


def _read_jsonl(path) -> Iterable[tuple[int, dict]]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"malformed JSON ({exc.msg})", path, lineno) from None
            if not isinstance(obj, dict):
                raise CorpusError("expected a JSON object", path, lineno)
            yield lineno, obj


def load_posts(path) -> list[PostRecord]:
    posts, seen = [], set()
    for lineno, obj in _read_jsonl(path):
        try:
            rec = PostRecord.from_json(obj)
        except CorpusError as exc:
            raise CorpusError(str(exc), path, lineno) from None
        if rec.id in seen:
            raise CorpusError(f"duplicate post id {rec.id!r}", path, lineno)
        seen.add(rec.id)
        posts.append(rec)
    if not posts:
        log.warning("%s contains no posts", path)
    return posts


def load_articles(path) -> list[ArticleRecord]:
    arts, seen = [], set()
    for lineno, obj in _read_jsonl(path):
        try:
            rec = ArticleRecord.from_json(obj)
        except CorpusError as exc:
            raise CorpusError(str(exc), path, lineno) from None
        if rec.id in seen:
            raise CorpusError(f"duplicate article id {rec.id!r}", path, lineno)
        seen.add(rec.id)
        arts.append(rec)
    return arts


def save_jsonl(path, records: Iterable) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


save_posts = save_jsonl
save_articles = save_jsonl


# retrieval ---------------------------------------------------------------


@dataclass
class RetrievalIndex:
    postings: dict[str, list[tuple[str, int]]]  # term -> [(article id, tf)] sorted by id
    doc_lengths: dict[str, int]
    avg_length: float
    n_docs: int

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        if df == 0:
            return 0.0
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)


def build_index(articles: Sequence[ArticleRecord]) -> RetrievalIndex:
    postings: dict[str, list[tuple[str, int]]] = defaultdict(list)
    lengths: dict[str, int] = {}
    for art in sorted(articles, key=lambda a: a.id):
        if art.id in lengths:
            raise CorpusError(f"duplicate article id {art.id!r}")
        toks = art.tokens
        lengths[art.id] = len(toks)
        for term, tf in Counter(toks).items():
            postings[term].append((art.id, tf))
    n = len(lengths)
    avg = sum(lengths.values()) / n if n else 0.0
    return RetrievalIndex(dict(postings), lengths, avg, n)


def retrieve_topk(index: RetrievalIndex, query: Sequence[str], k: int = DEFAULT_TOP_K,
                  k1: float = BM25_K1, b: float = BM25_B) -> list[tuple[str, float]]:
    """BM25 over distinct query terms; ties go to the smaller article id."""
    if k < 1:
        raise ValueError("k must be at least 1")
    scores: dict[str, float] = defaultdict(float)
    for term in set(query):
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for doc, tf in plist:
            norm = k1 * (1.0 - b + b * index.doc_lengths[doc] / index.avg_length)
            scores[doc] += idf * tf * (k1 + 1.0) / (tf + norm)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:k]


def build_evidence(posts: Sequence[PostRecord], index: RetrievalIndex, k: int = DEFAULT_TOP_K) -> dict[str, list[str]]:
    """Ranked article ids per post; explicit ``evidence_ids`` win over retrieval."""
    out = {}
    for post in posts:
        if post.evidence_ids is not None:
            out[post.id] = list(post.evidence_ids)[:k]
        else:
            out[post.id] = [doc for doc, _ in retrieve_topk(index, post.tokens, k)]
    return out


def save_evidence(path, evidence: dict[str, list[str]]) -> None:
    Path(path).write_text(json.dumps(evidence, sort_keys=True, indent=0) + "\n", encoding="utf-8")


def load_evidence(path) -> dict[str, list[str]]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise CorpusError("evidence cache must map post id to a list of article ids", path)
    return {str(k): [str(x) for x in v] for k, v in data.items()}


# corpus directory ---------------------------------------------------------

POSTS_FILE = "posts.jsonl"
ARTICLES_FILE = "articles.jsonl"
STYLISTIC_FILE = "stylistic.txt"
ENTITY_FILE = "entities.txt"
EVIDENCE_FILE = "evidence.json"


@dataclass
class Corpus:
    posts: list[PostRecord]
    articles: list[ArticleRecord]
    stylistic: "object"
    entity: "object"
    evidence: dict[str, list[str]]

    def split(self, name: str) -> list[PostRecord]:
        if name not in SPLITS:
            raise CorpusError(f"unknown split {name!r}; expected one of {SPLITS}")
        return [p for p in self.posts if p.split == name]

    def article_map(self) -> dict[str, ArticleRecord]:
        return {a.id: a for a in self.articles}


def load_corpus(directory, top_k: int = DEFAULT_TOP_K, casefold: bool = False) -> Corpus:
    """Load a corpus directory; evidence comes from the cache file when present."""
    from .tokentype import load_gazetteer

    directory = Path(directory)
    for name in (POSTS_FILE, ARTICLES_FILE, STYLISTIC_FILE, ENTITY_FILE):
        if not (directory / name).is_file():
            raise FileNotFoundError(str(directory / name))
    posts = load_posts(directory / POSTS_FILE)
    articles = load_articles(directory / ARTICLES_FILE)
    stylistic = load_gazetteer(directory / STYLISTIC_FILE, "stylistic", casefold)
    entity = load_gazetteer(directory / ENTITY_FILE, "entity", casefold)
    cache = directory / EVIDENCE_FILE
    if cache.is_file():
        evidence = load_evidence(cache)
        missing = [p.id for p in posts if p.id not in evidence]
        if missing:
            raise CorpusError(f"evidence cache lacks {len(missing)} post(s), e.g. {missing[0]!r}", cache)
        evidence = {pid: ids[:top_k] for pid, ids in evidence.items()}
    else:
        evidence = build_evidence(posts, build_index(articles), top_k)
    known = {a.id for a in articles}
    for pid, ids in evidence.items():
        unknown = [i for i in ids if i not in known]
        if unknown:
            raise CorpusError(f"post {pid!r} references unknown article {unknown[0]!r}")
    return Corpus(posts, articles, stylistic, entity, evidence)
