"""Completion decoders: greedy, beam search and balanced diverse beam search.

All decoders consume a primed prefix (the model state after feeding the typed
text) and generate a suffix ending in the end-of-query marker.  Scores are
raw cumulative log-probabilities of the generated characters; the prefix is
conditioning only and contributes nothing.

The diverse variant re-ranks each step's candidate pool with a per-rank
penalty based on normalized Levenshtein distance between generated suffixes.
The top-ranked candidate is not exempt: it is rebalanced by the mean penalty
applied to ranks 2..B, so a redundant leader can be overtaken.  With a
diversity weight of zero the procedure is byte-identical to plain beam
search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class DecoderConfig:
    """Search settings.  max_len caps the generated suffix, not the full query."""

    beam_width: int = 10
    k: int = 10
    max_len: int = 100
    diversity: float = 0.0

    def __post_init__(self):
        if not self.beam_width >= self.k >= 1:
            raise ConfigError(
                f"need beam_width >= k >= 1, got beam_width={self.beam_width} k={self.k}"
            )
        if self.max_len < 0:
            raise ConfigError(f"max_len must be non-negative, got {self.max_len}")
        if self.diversity < 0:
            raise ConfigError(f"diversity must be non-negative, got {self.diversity}")


@dataclass
class PrimedPrefix:
    """Model state after consuming a prefix, plus the context the decoder
    needs to encode further characters."""

    prefix: str
    states: list
    dist: np.ndarray
    word_table: object = None
    user_vec: np.ndarray | None = None
    time_vec: np.ndarray | None = None


@dataclass
class BeamCandidate:
    suffix: str
    score: float
    finished: bool
    states: list | None = None
    dist: np.ndarray | None = None
    adjusted: float = 0.0


@dataclass
class GreedyResult:
    text: str
    score: float
    finished: bool


def prime(model, prefix: str, word_table=None, user_vec=None, time_vec=None) -> PrimedPrefix:
    """Feed a non-empty prefix through the model and capture the state."""
    from .encoding import encode_query

    if not prefix:
        raise ConfigError("cannot prime an empty prefix")
    x = encode_query(
        prefix,
        model.vocab_,
        model.input_spec_,
        word_table=word_table,
        user_vec=user_vec,
        time_vec=time_vec,
        terminate=False,
    )
    states = model.initial_states(1)
    dist = None
    for t in range(x.shape[0]):
        dist, states = model.advance(x[t : t + 1], states)
    return PrimedPrefix(
        prefix=prefix,
        states=[s[0] for s in states],
        dist=dist[0],
        word_table=word_table,
        user_vec=user_vec,
        time_vec=time_vec,
    )


def _step_row(model, ch: str, text_before: str, primed: PrimedPrefix) -> np.ndarray:
    """Input vector for one generated character, mirroring encode_query."""
    spec = model.input_spec_
    vocab = model.vocab_
    row = np.zeros(spec.total_dim)
    row[vocab.encode_char(ch)] = 1.0
    word_lo = spec.vocab_size
    user_lo = word_lo + spec.word_dim
    time_lo = user_lo + spec.user_dim
    if ch == " " and primed.word_table is not None:
        word = text_before.rsplit(" ", 1)[-1]
        if word:
            row[word_lo:user_lo] = primed.word_table[word]
    if primed.user_vec is not None:
        row[user_lo:time_lo] = primed.user_vec
    if primed.time_vec is not None:
        row[time_lo:] = primed.time_vec
    return row


def greedy_decode(model, primed: PrimedPrefix, max_len: int = 100) -> GreedyResult:
    """Argmax decoding; ties break toward the lowest vocabulary index."""
    vocab = model.vocab_
    states = [s[None, :] for s in primed.states]
    dist = primed.dist
    suffix = ""
    score = 0.0
    while len(suffix) < max_len:
        masked = dist.copy()
        masked[vocab.pad_index] = -np.inf
        idx = int(np.argmax(masked))
        score += float(dist[idx])
        if idx == vocab.eoq_index:
            return GreedyResult(primed.prefix + suffix, score, True)
        ch = vocab.chars[idx]
        row = _step_row(model, ch, primed.prefix + suffix, primed)
        suffix += ch
        logp, states = model.advance(row[None, :], states)
        dist = logp[0]
    return GreedyResult(primed.prefix + suffix, score, False)


def normalized_levenshtein(a: str, b: str) -> float:
    """Edit distance divided by the longer length; 0 when both strings are empty."""
    if a == b:
        return 0.0
    la, lb = len(a), len(b)
    if la == 0 or lb == 0:
        return 1.0
    if la < lb:
        a, b, la, lb = b, a, lb, la
    prev = list(range(lb + 1))
    for i in range(1, la + 1):
        ca = a[i - 1]
        cur = [i] + [0] * lb
        for j in range(1, lb + 1):
            cost = 0 if ca == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[lb] / la


def mean_pairwise_nld(texts) -> float:
    """Mean normalized Levenshtein distance over all unordered pairs."""
    texts = list(texts)
    n = len(texts)
    if n < 2:
        return 0.0
    total = 0.0
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            total += normalized_levenshtein(texts[i], texts[j])
            pairs += 1
    return total / pairs


@dataclass
class _PoolEntry:
    score: float
    suffix: str
    finished: bool
    parent: BeamCandidate | None = None
    char_index: int | None = None
    adjusted: float = 0.0

    def sort_key(self):
        return (-self.score, self.suffix, 0 if self.finished else 1)

    def adjusted_key(self):
        return (-self.adjusted, self.suffix, 0 if self.finished else 1)


def _apply_diversity(pool: list[_PoolEntry], beam_width: int, diversity: float) -> None:
    """Assign adjusted scores in place.

    Entries are assumed sorted by raw score.  Rank j >= 2 is penalized by
    lambda * (1 - mean distance to the provisional selections above it,
    capped at the beam width); rank 1 absorbs the mean of the penalties
    given to ranks 2..B.
    """
    penalties = [0.0] * len(pool)
    for j in range(1, len(pool)):
        compare = pool[: min(j, beam_width)]
        mean_dist = sum(
            normalized_levenshtein(pool[j].suffix, entry.suffix) for entry in compare
        ) / len(compare)
        penalties[j] = diversity * (1.0 - mean_dist)
    others = penalties[1:beam_width]
    penalties[0] = sum(others) / len(others) if others else 0.0
    for entry, penalty in zip(pool, penalties):
        entry.adjusted = entry.score - penalty


def _search(model, primed: PrimedPrefix, config: DecoderConfig, diversity: float):
    vocab = model.vocab_
    eoq = vocab.eoq_index
    pad = vocab.pad_index
    expand_indices = [i for i in range(len(vocab)) if i not in (eoq, pad)]
    budget = config.max_len

    beam = [
        BeamCandidate(
            suffix="",
            score=0.0,
            finished=False,
            states=[s.copy() for s in primed.states],
            dist=primed.dist,
        )
    ]
    for _ in range(budget + 1):
        if all(c.finished for c in beam):
            break
        pool: list[_PoolEntry] = []
        for cand in beam:
            if cand.finished:
                pool.append(_PoolEntry(cand.score, cand.suffix, True))
                continue
            pool.append(_PoolEntry(cand.score + float(cand.dist[eoq]), cand.suffix, True))
            if len(cand.suffix) < budget:
                for idx in expand_indices:
                    pool.append(
                        _PoolEntry(
                            cand.score + float(cand.dist[idx]),
                            cand.suffix + vocab.chars[idx],
                            False,
                            parent=cand,
                            char_index=idx,
                        )
                    )
        pool.sort(key=_PoolEntry.sort_key)
        if diversity > 0 and len(pool) > 1:
            _apply_diversity(pool, config.beam_width, diversity)
            pool.sort(key=_PoolEntry.adjusted_key)
        else:
            for entry in pool:
                entry.adjusted = entry.score
        kept = pool[: config.beam_width]

        beam = []
        live: list[tuple[BeamCandidate, _PoolEntry]] = []
        for entry in kept:
            cand = BeamCandidate(
                suffix=entry.suffix,
                score=entry.score,
                finished=entry.finished,
                adjusted=entry.adjusted,
            )
            beam.append(cand)
            if not entry.finished:
                live.append((cand, entry))
        if live:
            rows = np.stack(
                [
                    _step_row(
                        model,
                        vocab.chars[entry.char_index],
                        primed.prefix + entry.parent.suffix,
                        primed,
                    )
                    for _, entry in live
                ]
            )
            states = [
                np.stack([entry.parent.states[layer] for _, entry in live])
                for layer in range(len(primed.states))
            ]
            logp, new_states = model.advance(rows, states)
            for i, (cand, _) in enumerate(live):
                cand.dist = logp[i]
                cand.states = [layer[i] for layer in new_states]

    def final_key(c: BeamCandidate):
        return (-c.adjusted, c.suffix)

    finished = sorted((c for c in beam if c.finished), key=final_key)
    unfinished = sorted((c for c in beam if not c.finished), key=final_key)
    chosen = (finished + unfinished)[: config.k]
    return [(primed.prefix + c.suffix, c.adjusted) for c in chosen]


def beam_search(model, primed: PrimedPrefix, config: DecoderConfig):
    """Breadth-B search over completions, ranked by cumulative log-probability."""
    return _search(model, primed, config, diversity=0.0)


def diverse_beam_search(model, primed: PrimedPrefix, config: DecoderConfig):
    """Beam search with per-step diversity rebalancing (see module docstring)."""
    return _search(model, primed, config, diversity=config.diversity)
