import numpy as np
import pytest

from preffend.corpusio import load_corpus
from preffend.synthetic import (SpecError, SyntheticSpec, fact_oracle, generate_synthetic, pattern_oracle)

SMALL = dict(n_train=120, n_val=40, n_test=40, distractor_articles=50, noise_rate=0.0)


def oracle_accuracy(corpus, oracle, family):
    arts = {a.id: a for a in corpus.articles}
    posts = [p for p in corpus.posts if p.meta["family"] == family]
    if oracle == "pattern":
        preds = [pattern_oracle(p, corpus.spec) for p in posts]
    else:
        preds = [fact_oracle(p, arts, corpus.evidence[p.id], corpus.spec) for p in posts]
    return float(np.mean([y == p.label for y, p in zip(preds, posts)]))


def test_byte_identical_for_fixed_seed(tmp_path):
    spec = SyntheticSpec(seed=3, **SMALL)
    generate_synthetic(spec).write(tmp_path / "a")
    generate_synthetic(SyntheticSpec(seed=3, **SMALL)).write(tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name
    generate_synthetic(SyntheticSpec(seed=4, **SMALL)).write(tmp_path / "c")
    assert (tmp_path / "a/posts.jsonl").read_bytes() != (tmp_path / "c/posts.jsonl").read_bytes()


def test_pattern_oracle_separates_pattern_family():
    corpus = generate_synthetic(SyntheticSpec(fact_fraction=0.0, seed=1, **SMALL))
    assert {p.meta["family"] for p in corpus.posts} == {"pattern"}
    assert oracle_accuracy(corpus, "pattern", "pattern") == 1.0


def test_fact_oracle_separates_fact_family():
    corpus = generate_synthetic(SyntheticSpec(fact_fraction=1.0, seed=1, **SMALL))
    assert oracle_accuracy(corpus, "fact", "fact") == 1.0


def test_each_signal_absent_from_other_family():
    spec = SyntheticSpec(seed=2, **{**SMALL, "n_train": 1000})
    corpus = generate_synthetic(spec)
    # the fact oracle never fires on pattern posts, and planted counts in fact
    # posts are drawn independently of the label
    arts = {a.id: a for a in corpus.articles}
    pattern_posts = [p for p in corpus.posts if p.meta["family"] == "pattern"]
    assert all(fact_oracle(p, arts, corpus.evidence[p.id], spec) == 0 for p in pattern_posts)
    fact_posts = [p for p in corpus.posts if p.meta["family"] == "fact"]
    counts = {y: np.mean([p.meta["pattern_count"] for p in fact_posts if p.label == y]) for y in (0, 1)}
    assert abs(counts[0] - counts[1]) < 0.5
    assert 0.4 < oracle_accuracy(corpus, "pattern", "fact") < 0.6


def test_contradiction_is_fake():
    corpus = generate_synthetic(SyntheticSpec(fact_fraction=1.0, seed=5, **SMALL))
    for p in corpus.posts:
        assert p.label == int(p.meta["post_slot"] != p.meta["true_slot"])


def test_noise_rate_flips_about_that_share():
    corpus = generate_synthetic(SyntheticSpec(seed=0, noise_rate=0.2, n_train=1500, n_val=0, n_test=0,
                                              distractor_articles=10))
    flipped = np.mean([p.label != p.meta["clean_label"] for p in corpus.posts])
    assert abs(flipped - 0.2) < 0.04


def test_families_are_balanced():
    corpus = generate_synthetic(SyntheticSpec(seed=0, **SMALL))
    for split, n in (("train", 120), ("val", 40), ("test", 40)):
        fams = [p.meta["family"] for p in corpus.posts if p.split == split]
        assert len(fams) == n and fams.count("fact") == n // 2


def test_gazetteers_cover_pools_exactly(tmp_path):
    spec = SyntheticSpec(seed=0, **SMALL)
    corpus = generate_synthetic(spec)
    pools = {name: spec.pool(name) for name in ("pattern", "neutral", "slot")}
    events = {p.meta["event"] for p in corpus.posts if p.meta["family"] == "fact"}
    assert set(corpus.stylistic) == set(pools["pattern"]) | set(pools["neutral"])
    assert set(corpus.entities) == set(pools["slot"]) | events
    corpus.write(tmp_path)
    loaded = load_corpus(tmp_path)
    assert loaded.evidence == corpus.evidence
    assert len(loaded.posts) == 200


@pytest.mark.parametrize("kw", [
    {"noise_rate": 1.0},
    {"noise_rate": -0.1},
    {"slot_pool": 1},
    {"fake_pattern_count": (1, 2), "real_pattern_count": (0, 1)},
    {"min_len": 4},
    {"prefixes": {"words": "w", "pattern": "pat", "neutral": "pat", "slot": "slot", "event": "evt"}},
    {"prefixes": {"words": "slot", "pattern": "pat", "neutral": "sty", "slot": "slot0", "event": "evt"}},
    {"prefixes": {"words": "w"}},
])
def test_invalid_specs_rejected(kw):
    with pytest.raises(SpecError):
        SyntheticSpec(**kw)


def test_from_dict_round_trip():
    spec = SyntheticSpec(seed=9, fact_pattern_count=(1, 2))
    assert SyntheticSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(SpecError, match="unknown"):
        SyntheticSpec.from_dict({"sead": 1})
