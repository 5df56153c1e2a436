"""User vector training: classification behavior, symmetry, bookkeeping."""

import numpy as np
import pytest

from typeahead import ConfigError, QueryRecord, UserEmbeddings, histories_from_records

DISJOINT = {
    "med": ["protein", "genome", "enzyme", "clinical", "dosage"],
    "web": ["pizza", "weather", "movies", "football", "hotels"],
}


@pytest.fixture(scope="module")
def disjoint_model():
    return UserEmbeddings(dim=8, epochs=60, learning_rate=0.5, full_batch=True,
                          seed=0).fit(DISJOINT)


def test_disjoint_vocabularies_classify_perfectly(disjoint_model):
    for user, words in DISJOINT.items():
        for word in words:
            assert disjoint_model.predict_user(word) == user


def test_posterior_is_a_distribution(disjoint_model):
    post = disjoint_model.posterior("pizza")
    assert set(post) == {"med", "web"}
    assert abs(sum(post.values()) - 1.0) < 1e-9
    assert post["web"] > post["med"]


def test_objective_improves_and_matches_history(disjoint_model):
    history = disjoint_model.objective_history_
    assert history[-1] > history[0]
    assert disjoint_model.objective() == pytest.approx(history[-1], abs=1e-12)


def test_full_batch_objective_is_monotone(disjoint_model):
    history = disjoint_model.objective_history_
    assert all(b >= a - 1e-6 for a, b in zip(history, history[1:]))


def test_per_user_history_shape(disjoint_model):
    per_user = disjoint_model.per_user_loglik_history_
    assert len(per_user) == 60
    assert per_user[0].shape == (2,)
    # mean over users of the summed history log-likelihood is the objective
    assert disjoint_model.objective_history_[5] == pytest.approx(
        float(per_user[5].mean()), abs=1e-12
    )


def test_identical_histories_get_identical_vectors():
    histories = {"a": ["x", "y", "z"], "b": ["x", "y", "z"], "c": ["q", "r", "s"]}
    model = UserEmbeddings(dim=6, epochs=30, full_batch=True, seed=1).fit(histories)
    # Zero init keeps twins symmetric; only summation order separates them,
    # so agreement is up to rounding rather than bitwise.
    assert model.vectors_["a"] == pytest.approx(model.vectors_["b"], abs=1e-9)
    assert np.abs(model.vectors_["a"] - model.vectors_["c"]).max() > 1e-3


def test_stochastic_mode_learns_too():
    model = UserEmbeddings(dim=8, epochs=200, learning_rate=0.5,
                           samples_per_user=2, seed=0).fit(DISJOINT)
    correct = sum(
        model.predict_user(w) == u for u, words in DISJOINT.items() for w in words
    )
    assert correct >= 8  # 10 words total


def test_config_and_input_validation():
    with pytest.raises(ConfigError):
        UserEmbeddings(dim=0).fit(DISJOINT)
    with pytest.raises(ConfigError):
        UserEmbeddings().fit({"empty": []})


def test_unknown_word_raises(disjoint_model):
    with pytest.raises(KeyError):
        disjoint_model.predict_user("quasar")


def test_transform_zero_for_unknown_user(disjoint_model):
    out = disjoint_model.transform(["med", "stranger"])
    assert out.shape == (2, 8)
    assert out[0].any() and not out[1].any()


def test_history_limit_truncates():
    histories = {"a": ["w1", "w2", "w3", "w4"], "b": ["v1", "v2"]}
    model = UserEmbeddings(dim=4, epochs=2, full_batch=True,
                           history_limit=2, seed=0).fit(histories)
    assert set(model.word_index_) == {"w1", "w2", "v1", "v2"}


def test_histories_from_records_groups_words():
    records = [
        QueryRecord("u1", "green tea"),
        QueryRecord("u1", "green shoes"),
        QueryRecord("u2", "weather"),
        QueryRecord("", "no user id"),
    ]
    histories = histories_from_records(records)
    assert histories["u1"] == ["green", "tea", "green", "shoes"]
    assert histories["u2"] == ["weather"]
    assert "" not in histories
