"""User personalization vectors trained PV-DBOW style: predict the user from
a word sampled out of that user's query history.

The probability model is a softmax over all users of the dot product between
the user vector and an internal per-word input vector. The word-side vectors
are training internals; only user vectors are exported.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigError
from .word2vec import VectorTable

USER_VECTOR_DIM = 30


class UserEmbeddings(BaseEstimator):
    """PV-DBOW user vectors over query-word histories.

    `fit` takes a mapping user_id -> iterable of words (the union of words in
    that user's past queries; duplicates act as sampling weights).  Users with
    empty histories are dropped and resolve to the zero vector at lookup time.
    """

    def __init__(self, dim=USER_VECTOR_DIM, epochs=100, learning_rate=0.5,
                 samples_per_user=1, full_batch=False, history_limit=None, seed=0):
        self.dim = dim
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.samples_per_user = samples_per_user
        self.full_batch = full_batch
        self.history_limit = history_limit
        self.seed = seed

    def _setup(self, histories):
        if self.dim <= 0:
            raise ConfigError(f"user vector dim must be positive, got {self.dim}")
        users = sorted(u for u, words in histories.items() if len(list(words)) > 0)
        if not users:
            raise ConfigError("no user has a non-empty history")
        word_ids: dict[str, int] = {}
        user_words = []
        for u in users:
            words = list(histories[u])
            if self.history_limit is not None:
                words = words[: self.history_limit]
            ids = []
            for w in words:
                if w not in word_ids:
                    word_ids[w] = len(word_ids)
                ids.append(word_ids[w])
            user_words.append(np.array(ids, dtype=np.int64))
        return users, word_ids, user_words

    def fit(self, X, y=None):
        """Train user vectors; X is a mapping user_id -> word sequence."""
        users, word_ids, user_words = self._setup(X)
        rng = np.random.default_rng(self.seed)
        n_users = len(users)
        # Symmetric zero init for user vectors keeps identical histories
        # indistinguishable; word vectors carry the randomness.
        user_mat = np.zeros((n_users, self.dim))
        word_mat = (rng.random((len(word_ids), self.dim)) - 0.5) / self.dim

        objective_history = []
        per_user_history = []
        for _ in range(self.epochs):
            if self.full_batch:
                grad_u = np.zeros_like(user_mat)
                grad_w = np.zeros_like(word_mat)
                for u, ids in enumerate(user_words):
                    for w in ids:
                        self._accumulate(u, w, user_mat, word_mat, grad_u, grad_w, n_users)
                user_mat += self.learning_rate * grad_u / n_users
                word_mat += self.learning_rate * grad_w / n_users
            else:
                for u, ids in enumerate(user_words):
                    for w in rng.choice(ids, size=self.samples_per_user):
                        grad_u = np.zeros_like(user_mat)
                        grad_w = np.zeros_like(word_mat)
                        self._accumulate(u, w, user_mat, word_mat, grad_u, grad_w, n_users)
                        user_mat += self.learning_rate * grad_u
                        word_mat += self.learning_rate * grad_w
            per_user = self._per_user_loglik(user_mat, word_mat, user_words)
            per_user_history.append(per_user)
            objective_history.append(float(per_user.mean()))

        self.users_ = users
        self.word_index_ = word_ids
        self.user_matrix_ = user_mat
        self.word_matrix_ = word_mat
        self.user_words_ = user_words
        self.objective_history_ = objective_history
        self.per_user_loglik_history_ = per_user_history
        self.vectors_ = VectorTable(
            {u: user_mat[i] for i, u in enumerate(users)}, self.dim
        )
        return self

    @staticmethod
    def _posteriors(user_mat, word_vec):
        scores = user_mat @ word_vec
        scores -= scores.max()
        p = np.exp(scores)
        return p / p.sum()

    def _accumulate(self, u, w, user_mat, word_mat, grad_u, grad_w, n_users):
        # d log P(u|w) for the full-softmax model.
        p = self._posteriors(user_mat, word_mat[w])
        indicator = np.zeros(n_users)
        indicator[u] = 1.0
        grad_u += np.outer(indicator - p, word_mat[w])
        grad_w[w] += user_mat[u] - p @ user_mat

    def _per_user_loglik(self, user_mat, word_mat, user_words) -> np.ndarray:
        """Summed log-likelihood of each user's history words."""
        out = np.zeros(len(user_words))
        for u, ids in enumerate(user_words):
            for w in ids:
                out[u] += float(np.log(self._posteriors(user_mat, word_mat[w])[u]))
        return out

    def objective(self) -> float:
        """Mean over users of the summed history log-likelihood."""
        check_is_fitted(self)
        return float(
            self._per_user_loglik(self.user_matrix_, self.word_matrix_, self.user_words_).mean()
        )

    def predict_user(self, word: str) -> str:
        """Most probable user for a history word (classification view)."""
        check_is_fitted(self)
        w = self.word_index_.get(word)
        if w is None:
            raise KeyError(word)
        p = self._posteriors(self.user_matrix_, self.word_matrix_[w])
        return self.users_[int(np.argmax(p))]

    def posterior(self, word: str) -> dict[str, float]:
        check_is_fitted(self)
        w = self.word_index_.get(word)
        if w is None:
            raise KeyError(word)
        p = self._posteriors(self.user_matrix_, self.word_matrix_[w])
        return {u: float(p[i]) for i, u in enumerate(self.users_)}

    def transform(self, X) -> np.ndarray:
        """Stack user vectors; unknown users map to zeros."""
        check_is_fitted(self)
        return np.stack([self.vectors_[u] for u in X])


def histories_from_records(records) -> dict[str, list[str]]:
    """Group background records into per-user word lists.

    Records without a user id carry no personal history and are skipped.
    """
    histories: dict[str, list[str]] = {}
    for record in records:
        if not record.user_id:
            continue
        histories.setdefault(record.user_id, []).extend(record.query.split(" "))
    return histories
