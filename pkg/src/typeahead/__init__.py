"""Query auto-completion: popularity trie, personalized character-level GRU
language model, diversity-balanced beam decoding, routing, evaluation and a
small HTTP service."""

from .corpus import (
    DatasetSplit,
    LogFormat,
    ParseReport,
    PrefixSample,
    QueryRecord,
    SplitPolicy,
    extract_prefixes,
    filter_background,
    normalize_prefix,
    normalize_query,
    parse_log,
    split_dataset,
)
from .decoding import (
    BeamCandidate,
    DecoderConfig,
    GreedyResult,
    PrimedPrefix,
    beam_search,
    diverse_beam_search,
    greedy_decode,
    mean_pairwise_nld,
    normalized_levenshtein,
    prime,
)
from .encoding import InputSpec, Vocabulary, encode_query
from .engine import (
    STRATEGIES,
    QacEngine,
    SuggestRequest,
    SuggestResponse,
    Suggestion,
    build_engine,
)
from .errors import (
    ArtifactError,
    ConfigError,
    EvaluationError,
    ParseError,
    TrainingDivergedError,
)
from .evaluation import EvalReport, evaluate, format_table, paired_ttest, reciprocal_rank
from .lm import CharGruLm
from .service import ServiceConfig, create_app, load_service_config, serve
from .time_encoding import TimeFeatures, encode_time, time_vector
from .trie import CountedTrie, MostPopularCompletion
from .user2vec import UserEmbeddings, histories_from_records
from .word2vec import SkipGramEmbeddings, VectorTable

__version__ = "0.1.0"

__all__ = [
    "ArtifactError",
    "BeamCandidate",
    "CharGruLm",
    "ConfigError",
    "CountedTrie",
    "DatasetSplit",
    "DecoderConfig",
    "EvalReport",
    "EvaluationError",
    "GreedyResult",
    "InputSpec",
    "LogFormat",
    "MostPopularCompletion",
    "ParseError",
    "ParseReport",
    "PrefixSample",
    "PrimedPrefix",
    "QacEngine",
    "QueryRecord",
    "STRATEGIES",
    "ServiceConfig",
    "SkipGramEmbeddings",
    "SplitPolicy",
    "SuggestRequest",
    "SuggestResponse",
    "Suggestion",
    "TimeFeatures",
    "TrainingDivergedError",
    "UserEmbeddings",
    "VectorTable",
    "Vocabulary",
    "beam_search",
    "build_engine",
    "create_app",
    "diverse_beam_search",
    "encode_query",
    "encode_time",
    "evaluate",
    "extract_prefixes",
    "filter_background",
    "format_table",
    "greedy_decode",
    "histories_from_records",
    "load_service_config",
    "mean_pairwise_nld",
    "normalize_prefix",
    "normalize_query",
    "normalized_levenshtein",
    "paired_ttest",
    "parse_log",
    "prime",
    "reciprocal_rank",
    "serve",
    "split_dataset",
    "time_vector",
]
