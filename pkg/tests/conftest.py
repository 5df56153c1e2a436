"""Shared fixtures: small trained models and on-disk artifacts.

Training is slow relative to everything else, so every trained model is
session-scoped and the corpora are deliberately tiny but fully learnable.
"""

from __future__ import annotations

import time
from datetime import datetime

import numpy as np
import pytest

from typeahead import (
    CharGruLm,
    CountedTrie,
    DecoderConfig,
    QacEngine,
    QueryRecord,
    VectorTable,
    extract_prefixes,
)

# 50 queries, two families with unique first characters.  The model can
# memorize every continuation; the per-character loss floor is ln(2)/11
# (only the first character of each query is ambiguous between families).
MEMO_FIRST_CHARS = "abcdefghijklmnopqrstuvwxy"
MEMO_QUERIES = [c + tail for c in MEMO_FIRST_CHARS for tail in ("astle road", "ozy corner")]

# 50 queries sharing ten first words, with near-duplicate and distinct
# continuations competing after each stem.  Used for diversity behavior.
FAMILY_STEMS = ["apple", "bread", "cloud", "delta", "eagle",
                "flame", "grape", "house", "igloo", "jolly"]
FAMILY_TAILS = [" stone mix", " stone max", " stone map", " river bed", " plasma jet"]
FAMILY_QUERIES = [s + t for s in FAMILY_STEMS for t in FAMILY_TAILS]

# Two near-duplicates outweigh one distinct query three-to-one in frequency.
NEARDUPE_QUERIES = ["alpha beta one"] * 3 + ["alpha beta ona"] * 3 + ["alpha gamma xyz"]


def toy_lm(**overrides) -> CharGruLm:
    """Model configuration that reliably memorizes the toy corpora."""
    config = dict(
        hidden_size=64,
        num_layers=2,
        word_dim=0,
        user_dim=0,
        dropout=0.0,
        learning_rate=3e-3,
        clip_norm=0.5,
        epochs=250,
        batch_size=32,
        min_char_count=1,
        max_len=100,
        seed=0,
    )
    config.update(overrides)
    return CharGruLm(**config)


def all_prefixes(queries) -> list:
    samples = []
    for query in queries:
        samples.extend(extract_prefixes(QueryRecord("", query)))
    return samples


def gradcheck_worst_rel_error(model, x, y, mask, epsilon) -> tuple[float, int]:
    """Compare every backprop gradient against central finite differences.

    Returns (worst relative error, number of parameters checked).  The
    denominator is floored at 1e-6 so that near-zero gradients, where the
    difference quotient is pure roundoff, do not dominate the comparison.
    """
    _, grads = model.loss_and_gradients(x, y, mask)
    worst = 0.0
    checked = 0
    for name, grad in grads.items():
        param = model.params_[name]
        it = np.nditer(param, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            original = param[idx]
            param[idx] = original + epsilon
            up = model.loss(x, y, mask)
            param[idx] = original - epsilon
            down = model.loss(x, y, mask)
            param[idx] = original
            fd = (up - down) / (2.0 * epsilon)
            rel = abs(fd - grad[idx]) / max(abs(fd) + abs(grad[idx]), 1e-6)
            worst = max(worst, rel)
            checked += 1
            it.iternext()
    return worst, checked


# One line per acceptance criterion, surfaced at the end of the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if (
        report.when == "call"
        and report.failed
        and str(item.fspath).endswith("test_acceptance.py")
    ):
        ACCEPTANCE_LINES.append(f"[FAIL] {item.name}")


@pytest.fixture(scope="session")
def memo_lm():
    """Model overfit on MEMO_QUERIES, plus its training wall time."""
    model = toy_lm()
    started = time.perf_counter()
    model.fit(MEMO_QUERIES)
    model.train_seconds = time.perf_counter() - started
    return model


@pytest.fixture(scope="session")
def family_lm():
    model = toy_lm()
    model.fit(FAMILY_QUERIES)
    return model


@pytest.fixture(scope="session")
def neardupe_lm():
    model = toy_lm(hidden_size=48, epochs=300, batch_size=8)
    model.fit(NEARDUPE_QUERIES)
    return model


@pytest.fixture(scope="session")
def ctx_lm():
    """Tiny model with word, user and time slots active, for plumbing tests."""
    rng = np.random.default_rng(3)
    queries = ["green tea cup", "green tea pot", "black tea cup",
               "cold brew jar", "cold brew can"]
    words = sorted({w for q in queries for w in q.split(" ")})
    word_table = VectorTable({w: rng.uniform(-0.5, 0.5, 3) for w in words}, 3)
    user_table = VectorTable(
        {"u1": rng.uniform(-0.5, 0.5, 2), "u2": rng.uniform(-0.5, 0.5, 2)}, 2
    )
    records = [
        QueryRecord("u1" if i % 2 else "u2", q, datetime(2026, 3, 2 + i, 9 + i))
        for i, q in enumerate(queries)
    ]
    model = toy_lm(hidden_size=16, word_dim=3, user_dim=2, epochs=30)
    model.fit(records, word_table=word_table, user_vectors=user_table)
    model.word_table = word_table
    model.user_table = user_table
    return model


@pytest.fixture(scope="session")
def half_trie():
    """Trie over the castle-road half of MEMO_QUERIES: every cozy-corner
    prefix is unseen, so routing exercises both branches."""
    return CountedTrie({q: 1 for q in MEMO_QUERIES if q.endswith("astle road")})


@pytest.fixture(scope="session")
def routed_engine(memo_lm, half_trie):
    return QacEngine(
        trie=half_trie,
        model=memo_lm,
        decoder_config=DecoderConfig(beam_width=10, k=10, max_len=15),
    )


@pytest.fixture(scope="session")
def artifacts_dir(tmp_path_factory, memo_lm, half_trie):
    """On-disk artifacts matching the routed engine, for file-based tests."""
    root = tmp_path_factory.mktemp("artifacts")
    memo_lm.save(root / "model.bin")
    half_trie.save(root / "trie.bin")
    CountedTrie({q: 1 for q in MEMO_QUERIES}).save(root / "full_trie.bin")
    return root
