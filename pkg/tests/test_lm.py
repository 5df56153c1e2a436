"""Language model: encoding oracles, gradients, training invariants, IO."""

import json
import math

import numpy as np
import pytest

from typeahead import CharGruLm, InputSpec, QueryRecord, VectorTable, Vocabulary
from typeahead.encoding import (
    END_OF_QUERY,
    PAD_CHAR,
    UNK_CHAR,
    encode_query,
    pad_batch,
    target_indices,
)
from typeahead.errors import ArtifactError, TrainingDivergedError
from typeahead.lm import MODEL_MAGIC

from conftest import MEMO_QUERIES, gradcheck_worst_rel_error, toy_lm


# -- vocabulary ------------------------------------------------------------

def test_vocabulary_ordering_is_data_unk_eoq_pad():
    vocab = Vocabulary(["b", "a", " "])
    assert vocab.chars == [" ", "a", "b", UNK_CHAR, END_OF_QUERY, PAD_CHAR]
    assert vocab.unk_index == 3
    assert vocab.eoq_index == 4
    assert vocab.pad_index == 5
    assert len(vocab) == 6


def test_vocabulary_rejects_reserved_characters():
    for reserved in (END_OF_QUERY, PAD_CHAR, UNK_CHAR):
        with pytest.raises(ValueError):
            Vocabulary(["a", reserved])


def test_vocabulary_unknown_chars_fall_to_unk():
    vocab = Vocabulary(["a", "b"])
    assert vocab.encode_char("z") == vocab.unk_index
    assert vocab.encode("azb") == [0, vocab.unk_index, 1]
    no_unk = Vocabulary(["a", "b"], include_unk=False)
    with pytest.raises(KeyError):
        no_unk.encode_char("z")


def test_vocabulary_from_queries_applies_min_count():
    vocab = Vocabulary.from_queries(["aaab", "aab"], min_char_count=3)
    assert vocab.chars[0] == "a"
    assert "b" not in vocab.chars  # two occurrences only
    assert vocab.encode_char("b") == vocab.unk_index


def test_vocabulary_dict_round_trip():
    for include_unk in (True, False):
        vocab = Vocabulary(["x", "a"], include_unk=include_unk)
        back = Vocabulary.from_dict(vocab.to_dict())
        assert back.chars == vocab.chars
        assert back.unk_index == vocab.unk_index


# -- input encoding ---------------------------------------------------------

def test_encode_query_hand_built_oracle():
    vocab = Vocabulary([" ", "a", "b", "c"])
    spec = InputSpec(vocab_size=len(vocab), word_dim=2, user_dim=2, time_dim=4)
    word_table = VectorTable({"ab": np.array([0.5, -0.5])}, 2)
    user_vec = np.array([0.25, 0.75])
    time_vec = np.array([0.1, 0.2, 0.3, 0.4])

    x = encode_query("ab c", vocab, spec, word_table, user_vec, time_vec)
    assert x.shape == (5, len(vocab) + 2 + 2 + 4)

    expected = np.zeros_like(x)
    for t, ch in enumerate("ab c" + END_OF_QUERY):
        expected[t, vocab.encode_char(ch)] = 1.0
    expected[2, 7:9] = [0.5, -0.5]  # word slot filled at the space, word "ab"
    expected[:, 9:11] = user_vec
    expected[:, 11:] = time_vec
    assert np.array_equal(x, expected)


def test_encode_query_without_context_is_one_hot_only():
    vocab = Vocabulary(["a", "b"])
    spec = InputSpec(vocab_size=len(vocab), word_dim=3, user_dim=2)
    x = encode_query("ab", vocab, spec)
    assert x.shape == (3, len(vocab) + 3 + 2 + 4)
    assert np.array_equal(x.sum(axis=1), np.ones(3))  # one-hots only


def test_encode_query_terminate_false_drops_eoq_row():
    vocab = Vocabulary(["a", "b"])
    spec = InputSpec(vocab_size=len(vocab), word_dim=0, user_dim=0)
    x = encode_query("ab", vocab, spec, terminate=False)
    assert x.shape[0] == 2
    assert x[:, vocab.eoq_index].sum() == 0


def test_target_indices_shift_and_terminate():
    vocab = Vocabulary(["a", "b", "c"])
    assert target_indices("abc", vocab) == [1, 2, vocab.eoq_index]
    assert target_indices("a", vocab) == [vocab.eoq_index]


def test_pad_batch_layout():
    vocab = Vocabulary(["a", "b"])
    spec = InputSpec(vocab_size=len(vocab), word_dim=0, user_dim=0)
    encoded = [encode_query(q, vocab, spec) for q in ("ab", "a")]
    targets = [target_indices(q, vocab) for q in ("ab", "a")]
    x, y, mask = pad_batch(encoded, targets, pad_target=vocab.pad_index)
    assert x.shape == (2, 3, spec.total_dim)
    assert np.array_equal(mask, [[1, 1, 0], [1, 0, 0]])
    assert y[1, 1] == vocab.pad_index
    assert not x[1, 2].any()  # padded step is an all-zero vector


# -- forward / loss ----------------------------------------------------------

def zeroed_model(queries, **overrides):
    """Initialized (untrained) model with all parameters forced to zero."""
    model = toy_lm(hidden_size=8, epochs=0, **overrides)
    model.init(Vocabulary.from_queries(queries, min_char_count=1))
    for name in model.params_:
        model.params_[name] = np.zeros_like(model.params_[name])
    return model


def batch_for(model, queries):
    records = [QueryRecord("", q) for q in queries]
    return model._batch_arrays(records, None, None)


def test_uniform_model_loss_is_len_times_log_vocab():
    queries = ["ab", "abab", "b"]
    model = zeroed_model(queries)
    x, y, mask = batch_for(model, queries)
    expected = sum(len(q) for q in queries) / len(queries) * math.log(len(model.vocab_))
    assert model.loss(x, y, mask) == pytest.approx(expected, abs=1e-12)


def test_log_proba_rows_are_distributions(memo_lm):
    records = [QueryRecord("", q) for q in MEMO_QUERIES[:4]]
    x, _, _ = memo_lm._batch_arrays(records, None, None)
    logp = memo_lm.log_proba(x)
    sums = np.exp(logp).sum(axis=2)
    assert np.allclose(sums, 1.0, atol=1e-12)


def test_loss_is_invariant_to_batch_order():
    queries = ["ab", "ba", "aab", "b"]
    model = toy_lm(hidden_size=8, epochs=1).fit(queries)
    x, y, mask = batch_for(model, queries)
    perm = [2, 0, 3, 1]
    xp, yp, maskp = x[perm], y[perm], mask[perm]
    assert model.loss(x, y, mask) == pytest.approx(model.loss(xp, yp, maskp), abs=1e-12)


def test_loss_is_invariant_to_duplication():
    queries = ["ab", "ba"]
    model = toy_lm(hidden_size=8, epochs=1).fit(queries)
    x, y, mask = batch_for(model, queries)
    x2, y2, mask2 = batch_for(model, queries + queries)
    assert model.loss(x, y, mask) == pytest.approx(model.loss(x2, y2, mask2), abs=1e-12)


def test_empty_batch_is_rejected():
    model = zeroed_model(["ab"])
    empty_x = np.zeros((0, 3, model.input_spec_.total_dim))
    empty_y = np.zeros((0, 3), dtype=np.int64)
    empty_mask = np.zeros((0, 3))
    with pytest.raises(ValueError, match="empty batch"):
        model.loss(empty_x, empty_y, empty_mask)
    with pytest.raises(ValueError, match="empty batch"):
        model.loss_and_gradients(empty_x, empty_y, empty_mask)


# -- gradients ----------------------------------------------------------------

def test_tanh_gradient_check():
    queries = ["aba", "ba"]
    model = toy_lm(hidden_size=5, num_layers=1, candidate_activation="tanh",
                   epochs=0, seed=2)
    model.init(Vocabulary.from_queries(queries, min_char_count=1))
    x, y, mask = batch_for(model, queries)
    worst, _ = gradcheck_worst_rel_error(model, x, y, mask, epsilon=1e-5)
    assert worst < 1e-3


def test_relu_gradient_check_away_from_kinks():
    """The relu candidate is piecewise linear, so a difference quotient is
    only a valid oracle when the probe interval does not straddle a kink.
    A straddle shows up as disagreement between the two one-sided slopes,
    with twice the magnitude of the contamination it causes, so filtering
    on that disagreement keeps exactly the coordinates where the oracle is
    trustworthy.  Those must all match backprop; straddles must stay rare.
    """
    queries = ["aba", "ba"]
    model = toy_lm(hidden_size=5, num_layers=1, epochs=0, seed=2)
    model.init(Vocabulary.from_queries(queries, min_char_count=1))
    x, y, mask = batch_for(model, queries)
    base = model.loss(x, y, mask)
    _, grads = model.loss_and_gradients(x, y, mask)

    epsilon = 1e-5
    worst = 0.0
    kept = 0
    skipped = 0
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
            central = (up - down) / (2.0 * epsilon)
            one_sided_gap = abs((up - base) - (base - down)) / epsilon
            denom = max(abs(central) + abs(grad[idx]), 1e-6)
            if one_sided_gap / denom > 1e-4:
                skipped += 1
            else:
                worst = max(worst, abs(central - grad[idx]) / denom)
                kept += 1
            it.iternext()
    assert worst < 1e-3
    assert kept >= 9 * skipped  # the filter may drop at most 10%


def test_padding_receives_zero_input_gradient():
    queries = ["abab", "a"]
    model = toy_lm(hidden_size=6, epochs=1).fit(queries)
    x, y, mask = batch_for(model, queries)
    _, _, d_x = model.loss_and_gradients(x, y, mask, return_input_grads=True)
    # the short query occupies 2 rows; the padded tail must not leak gradient
    assert not d_x[1, 2:].any()
    assert d_x[0].any()


# -- dropout -------------------------------------------------------------------

def test_training_forward_requires_rng_when_dropout_on():
    model = zeroed_model(["ab"], dropout=0.5)
    x, y, mask = batch_for(model, ["ab"])
    with pytest.raises(ValueError, match="dropout_rng"):
        model.loss_and_gradients(x, y, mask, train=True)


def test_dropout_is_reproducible_per_seed():
    model = toy_lm(hidden_size=8, epochs=1, dropout=0.5).fit(["abc", "cab"])
    x, y, mask = batch_for(model, ["abc", "cab"])
    loss_a, _ = model.loss_and_gradients(
        x, y, mask, train=True, dropout_rng=np.random.default_rng(7)
    )
    loss_b, _ = model.loss_and_gradients(
        x, y, mask, train=True, dropout_rng=np.random.default_rng(7)
    )
    loss_c, _ = model.loss_and_gradients(
        x, y, mask, train=True, dropout_rng=np.random.default_rng(8)
    )
    assert loss_a == loss_b
    assert loss_a != loss_c


def test_config_validation():
    with pytest.raises(ValueError):
        toy_lm(dropout=1.0).fit(["ab"])
    with pytest.raises(ValueError):
        toy_lm(candidate_activation="gelu").fit(["ab"])
    with pytest.raises(ValueError):
        toy_lm(num_layers=0).fit(["ab"])


# -- training -------------------------------------------------------------------

def test_zero_learning_rate_leaves_parameters_at_init():
    queries = ["ab", "ba", "aab"]
    trained = toy_lm(hidden_size=8, epochs=3, learning_rate=0.0).fit(queries)
    reference = toy_lm(hidden_size=8, epochs=0)
    reference.init(Vocabulary.from_queries(queries, min_char_count=1))
    for name, param in trained.params_.items():
        assert np.array_equal(param, reference.params_[name]), name
    losses = [e["train_loss"] for e in trained.loss_history_]
    assert losses[0] == pytest.approx(losses[-1], abs=1e-9)


def test_update_norm_never_exceeds_clip():
    model = toy_lm(hidden_size=16, epochs=5, learning_rate=0.05, clip_norm=0.5)
    model.fit(MEMO_QUERIES[:10])
    assert model.update_norms_
    assert max(model.update_norms_) <= 0.5 + 1e-9


def test_training_loss_decreases(memo_lm):
    history = [e["train_loss"] for e in memo_lm.loss_history_]
    assert history[-1] < history[0] / 10.0


def test_divergence_raises_with_epoch():
    # an absurd learning rate overflows the forward pass within a few steps
    model = toy_lm(hidden_size=8, epochs=50, learning_rate=1e200, clip_norm=math.inf)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(TrainingDivergedError) as info:
            model.fit(["abc abc", "cba cba"])
    assert info.value.epoch >= 1


def test_fit_filters_overlong_and_rejects_empty():
    model = toy_lm(hidden_size=8, epochs=1, max_len=5)
    model.fit(["abc", "x" * 50])
    assert "x" not in model.vocab_.chars  # the long query was dropped
    with pytest.raises(ValueError, match="no usable"):
        toy_lm(max_len=5).fit(["x" * 50])


def test_metrics_file_has_one_json_line_per_epoch(tmp_path):
    path = tmp_path / "metrics.jsonl"
    model = toy_lm(hidden_size=8, epochs=3)
    model.fit(["abc", "bca"], validation=["cab"], metrics_path=path)
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 3
    for i, line in enumerate(lines, start=1):
        entry = json.loads(line)
        assert entry["epoch"] == i
        assert set(entry) == {"epoch", "train_loss", "train_loss_per_char",
                              "val_loss", "wall_seconds"}
        assert isinstance(entry["val_loss"], float)
    assert model.loss_history_[-1]["val_loss"] == json.loads(lines[-1])["val_loss"]


def test_metrics_val_loss_none_without_validation(tmp_path):
    path = tmp_path / "metrics.jsonl"
    toy_lm(hidden_size=8, epochs=1).fit(["abc"], metrics_path=path)
    assert json.loads(path.read_text().strip())["val_loss"] is None


def test_ablated_context_shrinks_input_dim():
    bare = toy_lm(hidden_size=8, epochs=1).fit(["abc"])
    assert bare.input_spec_.total_dim == len(bare.vocab_) + 4
    full = toy_lm(hidden_size=8, epochs=1, word_dim=3, user_dim=2).fit(["abc"])
    assert full.input_spec_.total_dim == len(full.vocab_) + 3 + 2 + 4


def test_fit_accepts_plain_strings_and_records():
    a = toy_lm(hidden_size=8, epochs=2).fit(["abc", "bca"])
    b = toy_lm(hidden_size=8, epochs=2).fit(
        [QueryRecord("", "abc"), QueryRecord("", "bca")]
    )
    for name in a.params_:
        assert np.array_equal(a.params_[name], b.params_[name])


def test_get_params_supports_cloning():
    from sklearn.base import clone

    model = toy_lm(hidden_size=12)
    twin = clone(model)
    assert twin.get_params() == model.get_params()


# -- persistence ------------------------------------------------------------------

def test_save_load_bit_identical(tmp_path, memo_lm):
    path = tmp_path / "model.bin"
    memo_lm.save(path)
    loaded = CharGruLm.load(path)
    assert set(loaded.params_) == set(memo_lm.params_)
    for name, param in memo_lm.params_.items():
        assert np.array_equal(loaded.params_[name], param), name
    assert loaded.vocab_.chars == memo_lm.vocab_.chars
    assert loaded.hidden_size == memo_lm.hidden_size
    assert loaded.candidate_activation == memo_lm.candidate_activation
    assert loaded.max_len == memo_lm.max_len
    # identical parameters give identical losses
    x, y, mask = batch_for(memo_lm, MEMO_QUERIES[:4])
    assert loaded.loss(x, y, mask) == memo_lm.loss(x, y, mask)


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE0000" + b"\x00" * 32)
    with pytest.raises(ArtifactError, match="magic"):
        CharGruLm.load(path)


def test_load_rejects_truncated_file(tmp_path, memo_lm):
    path = tmp_path / "model.bin"
    memo_lm.save(path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(ArtifactError):
        CharGruLm.load(path)


def test_load_rejects_trailing_bytes(tmp_path, memo_lm):
    path = tmp_path / "model.bin"
    memo_lm.save(path)
    path.write_bytes(path.read_bytes() + b"\x00\x00")
    with pytest.raises(ArtifactError, match="trailing"):
        CharGruLm.load(path)


def test_load_missing_file(tmp_path):
    with pytest.raises(ArtifactError, match="cannot read"):
        CharGruLm.load(tmp_path / "absent.bin")


def test_magic_is_pinned():
    assert MODEL_MAGIC == b"NQACLM01"
