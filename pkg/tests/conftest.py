import pytest

from preffend.corpusio import Corpus
from preffend.synthetic import SyntheticSpec, generate_synthetic
from preffend.tokentype import Gazetteer


def as_corpus(synth) -> Corpus:
    return Corpus(synth.posts, synth.articles, Gazetteer.from_entries("stylistic", synth.stylistic),
                  Gazetteer.from_entries("entity", synth.entities), dict(synth.evidence))


def small_synthetic(**kw):
    base = dict(n_train=60, n_val=20, n_test=20, distractor_articles=20, seed=0)
    base.update(kw)
    return generate_synthetic(SyntheticSpec(**base))


@pytest.fixture(scope="session")
def tiny_synth():
    return small_synthetic()


@pytest.fixture
def tiny_corpus(tiny_synth):
    return as_corpus(tiny_synth)


ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, passed: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains full-size models on the synthetic corpus")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
