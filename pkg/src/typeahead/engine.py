"""Suggestion engine: one suggest() interface over four strategies.

mpc serves popularity-ranked completions from the trie.  neural and
neural_diverse decode the language model with standard and diversity-balanced
beam search.  routed checks whether the typed prefix is seen in the
background trie (O(|prefix|)) and dispatches to mpc when it is, to the
standard neural decoder otherwise; the response records the branch actually
taken.  When mpc returns fewer than k completions under routing there is no
neural backfill: the variants stay cleanly separable for evaluation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from datetime import datetime

from .corpus import normalize_prefix
from .decoding import DecoderConfig, beam_search, diverse_beam_search, prime
from .errors import ArtifactError, ConfigError
from .time_encoding import time_vector

STRATEGIES = ("mpc", "neural", "neural_diverse", "routed")


@dataclass(frozen=True)
class SuggestRequest:
    prefix: str
    user_id: str | None = None
    timestamp: datetime | None = None
    k: int = 10
    strategy: str = "routed"


@dataclass(frozen=True)
class Suggestion:
    text: str
    score: float


@dataclass(frozen=True)
class SuggestResponse:
    suggestions: tuple[Suggestion, ...]
    strategy: str
    latency_ms: float


class QacEngine:
    """Immutable bundle of artifacts plus the suggest() dispatcher."""

    def __init__(
        self,
        trie=None,
        model=None,
        word_table=None,
        user_table=None,
        decoder_config: DecoderConfig | None = None,
    ):
        if trie is None and model is None:
            raise ConfigError("engine needs a trie, a model, or both")
        self.trie = trie
        self.model = model
        self.word_table = word_table
        self.user_table = user_table
        self.decoder_config = decoder_config or DecoderConfig()

    def _require_trie(self, strategy: str):
        if self.trie is None:
            raise ConfigError(f"strategy {strategy!r} requires a completion trie")
        return self.trie

    def _require_model(self, strategy: str):
        if self.model is None:
            raise ConfigError(f"strategy {strategy!r} requires a language model")
        return self.model

    def _mpc_suggestions(self, prefix: str, k: int) -> tuple[Suggestion, ...]:
        completions = self.trie.complete(prefix, k)
        return tuple(Suggestion(text, float(count)) for text, count in completions)

    def _neural_suggestions(self, prefix: str, request: SuggestRequest, diverse: bool):
        model = self.model
        user_vec = None
        if request.user_id and self.user_table is not None:
            vec = self.user_table[request.user_id]
            if vec.any():
                user_vec = vec
        time_vec = time_vector(request.timestamp)
        primed = prime(
            model,
            prefix,
            word_table=self.word_table,
            user_vec=user_vec,
            time_vec=time_vec,
        )
        budget = min(self.decoder_config.max_len, max(0, model.max_len - len(prefix)))
        config = replace(
            self.decoder_config,
            k=request.k,
            beam_width=max(self.decoder_config.beam_width, request.k),
            max_len=budget,
        )
        search = diverse_beam_search if diverse else beam_search
        results = search(model, primed, config)
        return tuple(Suggestion(text, score) for text, score in results)

    def suggest(self, request: SuggestRequest) -> SuggestResponse:
        started = time.perf_counter()
        if request.k < 1:
            raise ConfigError(f"k must be at least 1, got {request.k}")
        if request.strategy not in STRATEGIES:
            raise ConfigError(
                f"unknown strategy {request.strategy!r}, expected one of {STRATEGIES}"
            )
        prefix = normalize_prefix(request.prefix)
        if not prefix:
            raise ConfigError("prefix is empty after normalization")

        strategy = request.strategy
        if strategy == "routed":
            trie = self._require_trie("routed")
            strategy = "mpc" if trie.is_seen(prefix) else "neural"

        if strategy == "mpc":
            self._require_trie(request.strategy)
            suggestions = self._mpc_suggestions(prefix, request.k)
        else:
            self._require_model(request.strategy)
            suggestions = self._neural_suggestions(
                prefix, request, diverse=(strategy == "neural_diverse")
            )
        latency_ms = (time.perf_counter() - started) * 1000.0
        return SuggestResponse(suggestions=suggestions, strategy=strategy, latency_ms=latency_ms)


def build_engine(
    trie_path=None,
    model_path=None,
    word_table_path=None,
    user_table_path=None,
    decoder_config: DecoderConfig | None = None,
) -> QacEngine:
    """Load artifacts from disk and assemble an engine.

    Load failures are reported as artifact errors naming the offending file.
    """
    from .trie import CountedTrie
    from .lm import CharGruLm
    from .word2vec import VectorTable

    def load(path, loader, what):
        try:
            return loader(path)
        except ArtifactError:
            raise
        except Exception as exc:
            raise ArtifactError(f"cannot load {what} from {path}: {exc}") from exc

    trie = load(trie_path, CountedTrie.load, "trie") if trie_path else None
    model = load(model_path, CharGruLm.load, "model") if model_path else None
    word_table = (
        load(word_table_path, VectorTable.load, "word embeddings")
        if word_table_path
        else None
    )
    user_table = (
        load(user_table_path, VectorTable.load, "user vectors")
        if user_table_path
        else None
    )
    return QacEngine(
        trie=trie,
        model=model,
        word_table=word_table,
        user_table=user_table,
        decoder_config=decoder_config,
    )
