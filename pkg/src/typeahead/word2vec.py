"""Skip-gram word embeddings with negative sampling, trained on the
background queries (each query is treated as a short sentence).

Tables persist in the textual word2vec format: a "count dim" header line,
then one "word v1 ... vdim" line per entry.
"""

from __future__ import annotations

import math
from collections import Counter

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigError, ParseError


class VectorTable:
    """Immutable id -> vector map with a zero default for unknown ids."""

    def __init__(self, vectors: dict[str, np.ndarray], dim: int):
        for key, vec in vectors.items():
            if vec.shape != (dim,):
                raise ConfigError(f"vector for {key!r} has shape {vec.shape}, want ({dim},)")
        self._vectors = vectors
        self.dim = dim
        self._zero = np.zeros(dim)

    def __contains__(self, key) -> bool:
        return key in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def __getitem__(self, key) -> np.ndarray:
        """Vector for `key`; the all-zeros vector when unknown."""
        vec = self._vectors.get(key)
        return self._zero.copy() if vec is None else vec

    def keys(self):
        return self._vectors.keys()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{len(self._vectors)} {self.dim}\n")
            for key in sorted(self._vectors):
                values = " ".join(repr(float(v)) for v in self._vectors[key])
                fh.write(f"{key} {values}\n")

    @classmethod
    def load(cls, path) -> "VectorTable":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline()
            if not header.strip():
                raise ParseError("empty embedding file", line_number=1)
            parts = header.split()
            if len(parts) != 2:
                raise ParseError(f"bad header {header!r}, want 'count dim'", line_number=1)
            try:
                count, dim = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"bad header {header!r}", line_number=1) from None
            vectors: dict[str, np.ndarray] = {}
            for i, line in enumerate(fh, start=2):
                line = line.rstrip("\n")
                if not line:
                    continue
                fields = line.split(" ")
                if len(fields) != dim + 1:
                    raise ParseError(
                        f"expected {dim} components, got {len(fields) - 1}", line_number=i
                    )
                try:
                    vectors[fields[0]] = np.array([float(x) for x in fields[1:]])
                except ValueError:
                    raise ParseError("non-numeric vector component", line_number=i) from None
        if len(vectors) != count:
            raise ParseError(f"header says {count} entries, file has {len(vectors)}")
        return cls(vectors, dim)


class SkipGramEmbeddings(BaseEstimator):
    """Word vectors from skip-gram with negative sampling.

    Deterministic for a fixed seed.  Every word that appears at least
    `min_count` times gets a vector; lookups of unknown words return zeros.
    """

    def __init__(self, dim=50, window=5, epochs=5, negative=5, learning_rate=0.025,
                 min_count=1, seed=0):
        self.dim = dim
        self.window = window
        self.epochs = epochs
        self.negative = negative
        self.learning_rate = learning_rate
        self.min_count = min_count
        self.seed = seed

    def fit(self, X, y=None):
        """Train on an iterable of sentences (token lists or plain strings)."""
        if self.dim <= 0:
            raise ConfigError(f"embedding dim must be positive, got {self.dim}")
        sentences = [s.split(" ") if isinstance(s, str) else list(s) for s in X]
        sentences = [s for s in sentences if s]
        if not sentences:
            raise ConfigError("cannot train embeddings on an empty corpus")

        freq = Counter(w for s in sentences for w in s)
        words = sorted(w for w, n in freq.items() if n >= self.min_count)
        if not words:
            raise ConfigError("no word meets min_count")
        index = {w: i for i, w in enumerate(words)}
        n_words = len(words)

        rng = np.random.default_rng(self.seed)
        w_in = (rng.random((n_words, self.dim)) - 0.5) / self.dim
        w_out = np.zeros((n_words, self.dim))

        # Unigram^0.75 negative-sampling distribution.
        noise = np.array([freq[w] ** 0.75 for w in words])
        noise /= noise.sum()

        pairs = []
        for sentence in sentences:
            ids = [index[w] for w in sentence if w in index]
            for pos, center in enumerate(ids):
                lo = max(0, pos - self.window)
                hi = min(len(ids), pos + self.window + 1)
                pairs.extend((center, ids[ctx]) for ctx in range(lo, hi) if ctx != pos)
        pairs = np.array(pairs, dtype=np.int64).reshape(-1, 2)

        total_steps = max(1, self.epochs * len(pairs))
        step = 0
        for _ in range(self.epochs):
            order = rng.permutation(len(pairs))
            for center, context in pairs[order]:
                lr = self.learning_rate * max(1e-4, 1.0 - step / total_steps)
                step += 1
                targets = [context]
                labels = [1.0]
                if self.negative > 0:
                    targets.extend(rng.choice(n_words, size=self.negative, p=noise))
                    labels.extend([0.0] * self.negative)
                v_in = w_in[center]
                grad_in = np.zeros(self.dim)
                for tgt, label in zip(targets, labels):
                    dot = min(60.0, max(-60.0, float(v_in @ w_out[tgt])))
                    score = 1.0 / (1.0 + math.exp(-dot))
                    g = lr * (label - score)
                    grad_in += g * w_out[tgt]
                    w_out[tgt] += g * v_in
                w_in[center] += grad_in

        self.vectors_ = VectorTable({w: w_in[index[w]] for w in words}, self.dim)
        self.vocabulary_ = words
        return self

    def transform(self, X) -> np.ndarray:
        """Stack vectors for the given words; unknown words map to zeros."""
        check_is_fitted(self)
        return np.stack([self.vectors_[w] for w in X])

    def similarity(self, a: str, b: str) -> float:
        """Cosine similarity of two word vectors (0 when either is unknown)."""
        check_is_fitted(self)
        va, vb = self.vectors_[a], self.vectors_[b]
        na, nb = np.linalg.norm(va), np.linalg.norm(vb)
        if na == 0.0 or nb == 0.0:
            return 0.0
        return float(va @ vb / (na * nb))
