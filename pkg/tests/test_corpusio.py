import json
import logging
import math
from collections import Counter

import numpy as np
import pytest

from preffend.corpusio import (ArticleRecord, CorpusError, PostRecord, build_evidence, build_index,
                               load_articles, load_corpus, load_posts, retrieve_topk, save_articles,
                               save_evidence, save_posts)


def write_lines(path, objs):
    path.write_text("".join((o if isinstance(o, str) else json.dumps(o)) + "\n" for o in objs))
    return path


def post(i, **kw):
    base = {"id": f"p{i}", "tokens": ["a", "b"], "label": i % 2, "split": "train"}
    base.update(kw)
    return base


def test_load_three_posts(tmp_path):
    posts = load_posts(write_lines(tmp_path / "p.jsonl", [post(0), post(1), post(2)]))
    assert [p.id for p in posts] == ["p0", "p1", "p2"]


def test_types_length_mismatch_names_line(tmp_path):
    path = write_lines(tmp_path / "p.jsonl", [post(0), post(1, types=["S"])])
    with pytest.raises(CorpusError, match=r"p\.jsonl:2:") as err:
        load_posts(path)
    assert err.value.line == 2


@pytest.mark.parametrize("bad, pattern", [
    ("{not json", "malformed"),
    ('["list"]', "JSON object"),
    (json.dumps(post(9, label=2)), "label"),
    (json.dumps(post(9, split="dev")), "split"),
    (json.dumps(post(9, tokens=[])), "tokens"),
    (json.dumps(post(9, types=["S", "X"])), "types"),
    (json.dumps({"id": "q", "tokens": ["a"], "label": 0}), "missing"),
    (json.dumps(post(9, extra=1)), "unknown"),
])
def test_malformed_lines(tmp_path, bad, pattern):
    path = write_lines(tmp_path / "p.jsonl", [post(0), "", bad])
    with pytest.raises(CorpusError, match=pattern) as err:
        load_posts(path)
    assert err.value.line == 3


def test_duplicate_post_id(tmp_path):
    with pytest.raises(CorpusError, match="duplicate"):
        load_posts(write_lines(tmp_path / "p.jsonl", [post(0), post(0)]))


def test_empty_file_warns(tmp_path, caplog):
    path = tmp_path / "p.jsonl"
    path.write_text("")
    with caplog.at_level(logging.WARNING):
        assert load_posts(path) == []
    assert "no posts" in caplog.text


def test_round_trip(tmp_path):
    posts = [PostRecord("a", ["x", "y"], 1, "val", types=["S", "T"], evidence_ids=["d1"], meta={"k": 1}),
             PostRecord("b", ["z"], 0, "test")]
    arts = [ArticleRecord("d1", ["t"], ["x", "q"]), ArticleRecord("d2", [], ["z"])]
    save_posts(tmp_path / "p.jsonl", posts)
    save_articles(tmp_path / "a.jsonl", arts)
    assert load_posts(tmp_path / "p.jsonl") == posts
    assert load_articles(tmp_path / "a.jsonl") == arts


def test_duplicate_article_rejected(tmp_path):
    arts = [ArticleRecord("d", [], ["x"]), ArticleRecord("d", [], ["y"])]
    with pytest.raises(CorpusError):
        build_index(arts)
    path = write_lines(tmp_path / "a.jsonl", [a.to_json() for a in arts])
    with pytest.raises(CorpusError, match="duplicate"):
        load_articles(path)


def test_two_one_term_articles():
    idx = build_index([ArticleRecord("a", [], ["x"]), ArticleRecord("b", [], ["x"])])
    assert list(idx.postings) == ["x"]
    idx = build_index([ArticleRecord("a", [], ["x"]), ArticleRecord("b", [], ["y"])])
    assert sorted(idx.postings) == ["x", "y"]


def test_empty_base():
    idx = build_index([])
    assert idx.n_docs == 0 and idx.postings == {}
    assert retrieve_topk(idx, ["x"], 5) == []


def test_index_matches_recount():
    rng = np.random.default_rng(0)
    vocab = [f"t{i}" for i in range(30)]
    arts = [ArticleRecord(f"d{i:02d}", list(rng.choice(vocab, 2)), list(rng.choice(vocab, rng.integers(0, 15))))
            for i in rng.permutation(50)]
    idx = build_index(arts)
    assert idx.n_docs == 50
    assert idx.avg_length == pytest.approx(np.mean([len(a.tokens) for a in arts]))
    for a in arts:
        assert idx.doc_lengths[a.id] == len(a.tokens)
    for term in vocab:
        want = sorted((a.id, Counter(a.tokens)[term]) for a in arts if term in a.tokens)
        assert idx.postings.get(term, []) == want


def bm25_oracle(docs, query, k1=1.5, b=0.75):
    n = len(docs)
    avg = sum(len(d) for d in docs.values()) / n
    out = {}
    for doc_id, toks in docs.items():
        s = 0.0
        for term in set(query):
            tf = toks.count(term)
            if not tf:
                continue
            df = sum(term in t for t in docs.values())
            idf = math.log((n - df + 0.5) / (df + 0.5) + 1)
            s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(toks) / avg))
        if s:
            out[doc_id] = s
    return out


def test_bm25_three_article_base():
    docs = {"a": ["cat", "sat", "mat"], "b": ["dog", "sat", "log", "dog"], "c": ["cat", "cat", "dog", "ran", "far"]}
    idx = build_index([ArticleRecord(k, [], v) for k, v in docs.items()])
    for query in (["cat"], ["dog", "sat"], ["cat", "dog", "cat"], ["ran", "mat", "log"]):
        got = dict(retrieve_topk(idx, query, 3))
        want = bm25_oracle(docs, query)
        assert got.keys() == want.keys()
        for k in want:
            assert got[k] == pytest.approx(want[k], abs=1e-12)
    # hand value: "mat" appears once in "a" (length 3, avg 4), df 1 of 3
    idf = math.log((3 - 1 + 0.5) / 1.5 + 1)
    hand = idf * 2.5 / (1 + 1.5 * (0.25 + 0.75 * 3 / 4))
    assert dict(retrieve_topk(idx, ["mat"]))["a"] == pytest.approx(hand, abs=1e-12)


def test_retrieval_ordering_rules():
    arts = [ArticleRecord("b", [], ["x", "y"]), ArticleRecord("a", [], ["x", "y"]), ArticleRecord("c", [], ["z", "w"])]
    idx = build_index(arts)
    assert [d for d, _ in retrieve_topk(idx, ["x", "y"])] == ["a", "b"]
    assert [d for d, _ in retrieve_topk(idx, ["z", "w"])][0] == "c"
    assert retrieve_topk(idx, ["nothing"]) == []
    assert len(retrieve_topk(idx, ["x", "z"], k=1)) == 1
    with pytest.raises(ValueError):
        retrieve_topk(idx, ["x"], k=0)


def test_retrieval_deterministic():
    rng = np.random.default_rng(5)
    vocab = [f"t{i}" for i in range(20)]
    arts = [ArticleRecord(f"d{i}", [], list(rng.choice(vocab, 8))) for i in range(40)]
    q = list(rng.choice(vocab, 6))
    assert retrieve_topk(build_index(arts), q) == retrieve_topk(build_index(arts[::-1]), q)


def test_explicit_evidence_bypasses_retrieval():
    idx = build_index([ArticleRecord("a", [], ["x"]), ArticleRecord("b", [], ["y"])])
    posts = [PostRecord("p", ["x"], 0, "train", evidence_ids=["b"]), PostRecord("q", ["x"], 0, "train")]
    assert build_evidence(posts, idx) == {"p": ["b"], "q": ["a"]}


def _corpus_dir(tmp_path, evidence=None):
    save_posts(tmp_path / "posts.jsonl", [PostRecord("p", ["x", "Paris"], 1, "train"),
                                          PostRecord("q", ["y"], 0, "val")])
    save_articles(tmp_path / "articles.jsonl", [ArticleRecord("a", ["Paris"], ["x"]), ArticleRecord("b", [], ["y"])])
    (tmp_path / "stylistic.txt").write_text("!\n")
    (tmp_path / "entities.txt").write_text("Paris\n")
    if evidence is not None:
        save_evidence(tmp_path / "evidence.json", evidence)
    return tmp_path


def test_load_corpus_retrieves_without_cache(tmp_path):
    corpus = load_corpus(_corpus_dir(tmp_path))
    assert corpus.evidence == {"p": ["a"], "q": ["b"]}
    assert [p.id for p in corpus.split("val")] == ["q"]
    with pytest.raises(CorpusError):
        corpus.split("dev")


def test_load_corpus_cache_checks(tmp_path):
    with pytest.raises(CorpusError, match="lacks"):
        load_corpus(_corpus_dir(tmp_path, {"p": ["a"]}))
    with pytest.raises(CorpusError, match="unknown article"):
        load_corpus(_corpus_dir(tmp_path, {"p": ["a"], "q": ["zzz"]}))
    corpus = load_corpus(_corpus_dir(tmp_path, {"p": ["b", "a"], "q": []}), top_k=1)
    assert corpus.evidence == {"p": ["b"], "q": []}


def test_load_corpus_missing_file(tmp_path):
    (_corpus_dir(tmp_path) / "entities.txt").unlink()
    with pytest.raises(FileNotFoundError, match="entities.txt"):
        load_corpus(tmp_path)
