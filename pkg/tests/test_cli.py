import json

import numpy as np
import pytest

from preffend import cli
from preffend.corpusio import PostRecord, load_corpus, save_posts
from preffend.numgrad import Tensor
from preffend.prefgraph import readout_maps
from preffend.tokentype import ENTITY, OTHER, STYLISTIC, TypedPost
from preffend.train import evaluate

SPEC = {"n_train": 40, "n_val": 10, "n_test": 10, "distractor_articles": 20, "seed": 0}
CONFIG = {"epochs": 2, "d": 8, "pattern_hidden": 8, "fact_dim": 8, "attn_dim": 8, "fusion_hidden": 8,
          "batch_size": 8, "lr": 0.01}


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_json(root / "spec.json", SPEC)
    write_json(root / "config.json", CONFIG)
    assert cli.main(["gen", "--config", str(root / "spec.json"), "--out", str(root / "corpus")]) == 0
    assert cli.main(["train", "--config", str(root / "config.json"), "--corpus", str(root / "corpus"),
                     "--out", str(root / "run")]) == 0
    return root


def test_gen_writes_corpus_files(workspace):
    names = {p.name for p in (workspace / "corpus").iterdir()}
    assert {"posts.jsonl", "articles.jsonl", "stylistic.txt", "entities.txt", "evidence.json"} <= names


def test_gen_rejects_invalid_spec(tmp_path, capsys):
    code, _, err = run(capsys, "gen", "--config", write_json(tmp_path / "s.json", {"noise_rate": 2}),
                       "--out", tmp_path / "c")
    assert code != 0 and "noise_rate" in err


def test_train_prints_metrics_and_is_deterministic(workspace, tmp_path, capsys):
    argv = ["train", "--config", workspace / "config.json", "--corpus", workspace / "corpus"]
    code1, out1, _ = run(capsys, *argv, "--out", tmp_path / "a")
    code2, out2, _ = run(capsys, *argv, "--out", tmp_path / "b")
    assert code1 == code2 == 0
    assert out1 == out2
    assert set(json.loads(out1)) >= {"accuracy", "macro_f1", "f1_fake", "f1_real"}


def test_seed_flag_overrides_config(workspace, tmp_path, capsys):
    run(capsys, "train", "--config", workspace / "config.json", "--corpus", workspace / "corpus",
        "--seed", 7, "--out", tmp_path)
    meta = (tmp_path / "checkpoint.ckpt").read_text().splitlines()[1]
    assert json.loads(meta)["config"]["seed"] == 7


def test_train_missing_corpus_exit_2(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--corpus", tmp_path / "nowhere", "--out", tmp_path / "o")
    assert code == 2 and str(tmp_path / "nowhere") in err


def test_train_unknown_config_key_exit_2(workspace, tmp_path, capsys):
    code, _, err = run(capsys, "train", "--config", write_json(tmp_path / "c.json", {"learning_rate": 1}),
                       "--corpus", workspace / "corpus", "--out", tmp_path / "o")
    assert code == 2 and "learning_rate" in err


def test_eval_matches_library(workspace, capsys):
    code, out, _ = run(capsys, "eval", "--checkpoint", workspace / "run/checkpoint.ckpt",
                       "--corpus", workspace / "corpus", "--split", "test")
    assert code == 0
    corpus = load_corpus(workspace / "corpus")
    assert json.loads(out) == evaluate(workspace / "run/checkpoint.ckpt", corpus, "test").to_dict()


def test_eval_text_format(workspace, capsys):
    code, out, _ = run(capsys, "eval", "--checkpoint", workspace / "run/checkpoint.ckpt",
                       "--corpus", workspace / "corpus", "--format", "text")
    assert code == 0 and out.startswith("test\n") and "macro_f1" in out


def test_eval_rejects_unknown_split(workspace, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["eval", "--checkpoint", str(workspace / "run/checkpoint.ckpt"),
                  "--corpus", str(workspace / "corpus"), "--split", "dev"])
    assert exc.value.code == 2


def test_ablate_emits_five_arms(workspace, tmp_path, capsys):
    code, out, _ = run(capsys, "ablate", "--config", workspace / "config.json", "--corpus", workspace / "corpus",
                       "--seed", 3, "--out", tmp_path)
    assert code == 0
    rows = json.loads(out)
    assert [r["arm"] for r in rows] == ["full", "rand-init-maps", "no-cos", "no-rev", "only-cls"]
    assert {r["seed"] for r in rows} == {3}
    assert set(rows[0]["test"]) >= {"accuracy", "macro_f1", "precision_fake", "recall_real"}
    header = (tmp_path / "ablation.txt").read_text().splitlines()[0].split()
    assert header[:3] == ["arm", "accuracy", "macro_f1"]


def test_explain_single_post(workspace, capsys):
    pid = load_corpus(workspace / "corpus").split("test")[0].id
    code, out, _ = run(capsys, "explain", "--checkpoint", workspace / "run/checkpoint.ckpt",
                       "--corpus", workspace / "corpus", "--post", pid)
    assert code == 0
    rep = json.loads(out)
    assert rep["post_id"] == pid
    assert sum(t["m_P"] for t in rep["tokens"]) == pytest.approx(1.0, abs=1e-9)
    assert sum(t["m_F"] for t in rep["tokens"]) == pytest.approx(1.0, abs=1e-9)
    for t in rep["tokens"]:
        assert t["group"] == ("pattern" if t["m_P"] > t["m_F"] else "fact")


def test_explain_text_rendering(workspace, capsys):
    pid = load_corpus(workspace / "corpus").split("test")[0].id
    code, out, _ = run(capsys, "explain", "--checkpoint", workspace / "run/checkpoint.ckpt",
                       "--corpus", workspace / "corpus", "--post", pid, "--format", "text")
    assert code == 0 and out.startswith(f"post {pid}")


def test_explain_unknown_post_exit_2(workspace, capsys):
    code, _, err = run(capsys, "explain", "--checkpoint", workspace / "run/checkpoint.ckpt",
                       "--corpus", workspace / "corpus", "--post", "nope")
    assert code == 2 and "nope" in err


def test_symmetric_case_ties_go_to_fact():
    n = 4
    typed = TypedPost(tuple("abcd"), (OTHER,) * n)
    maps = readout_maps(Tensor(np.full((n, n), 0.5)), typed)
    rep = cli.build_report("p", typed.tokens, typed.tags, maps.m_P.values, maps.m_F.values, 0.5, 0)
    assert [t.m_P for t in rep.tokens] == [0.25] * n
    assert {t.group for t in rep.tokens} == {"fact"}


def test_three_node_instance_scores():
    A = np.array([[1.0, 0.2, 0.4], [0.2, 1.0, 0.6], [0.4, 0.6, 1.0]])
    typed = TypedPost(("a", "b", "c"), (STYLISTIC, ENTITY, OTHER))
    maps = readout_maps(Tensor(A), typed)
    rep = cli.build_report("p", typed.tokens, typed.tags, maps.m_P.values, maps.m_F.values, 0.9, 1)
    np.testing.assert_allclose([t.m_P for t in rep.tokens], [0.38889, 0.22222, 0.38889], atol=5e-6)
    np.testing.assert_allclose([t.m_F for t in rep.tokens], [0.15789, 0.42105, 0.42105], atol=5e-6)
    assert [t.group for t in rep.tokens] == ["pattern", "fact", "fact"]


def test_build_report_length_check():
    with pytest.raises(ValueError):
        cli.build_report("p", ["a"], ["S", "T"], [1.0], [1.0], 0.5, 0)


def test_shading_scales_with_score():
    assert cli.shade(0.0, 1.0) == " "
    assert cli.shade(1.0, 1.0) == "@"
    assert cli.shade(0.3, 0.0) == " "


def test_summary_lists_planted_tokens(workspace, tmp_path, capsys):
    write_json(tmp_path / "s.json", {**SPEC, "seed": 1, "n_train": 100, "n_val": 0, "n_test": 0})
    cli.main(["gen", "--config", str(tmp_path / "s.json"), "--out", str(tmp_path / "fresh")])
    capsys.readouterr()
    # new ids, so evidence is retrieved from the trained corpus's article base
    posts = [PostRecord(f"x{i}", p.tokens, p.label, "test") for i, p in enumerate(load_corpus(tmp_path / "fresh").posts)]
    save_posts(tmp_path / "posts.jsonl", posts)
    code, out, _ = run(capsys, "explain", "--checkpoint", workspace / "run/checkpoint.ckpt",
                       "--corpus", workspace / "corpus", "--posts", tmp_path / "posts.jsonl")
    assert code == 0
    payload = json.loads(out)
    assert len(payload["reports"]) == 100
    top_pattern = [tok for tok, _ in payload["summary"]["pattern"]]
    assert len(top_pattern) == 10
    assert sum(tok.startswith("pat") for tok in top_pattern) >= 3


def test_group_summary_orders_by_count_then_token():
    mk = lambda toks, groups: cli.ExplainReport("p", [cli.TokenScore(t, "T", 0, 0, g) for t, g in zip(toks, groups)],  # noqa: E731
                                                0.5, 0)
    reps = [mk(["b", "a", "c"], ["pattern"] * 3), mk(["a", "c"], ["pattern", "fact"])]
    summary = cli.group_summary(reps, top=2)
    assert summary == {"pattern": [["a", 2], ["b", 1]], "fact": [["c", 1]]}


def test_bad_log_level_is_usage_error(monkeypatch, capsys, workspace):
    monkeypatch.setenv("PREFFEND_LOG", "loud")
    code, _, err = run(capsys, "eval", "--checkpoint", workspace / "run/checkpoint.ckpt",
                       "--corpus", workspace / "corpus")
    assert code == 2 and "PREFFEND_LOG" in err
