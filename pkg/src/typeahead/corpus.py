"""Query-log ingestion: parsing, normalization, background filtering, prefix
extraction and background/train/validation/test splitting.

All functions here are pure and safe to parallelize over records.
"""

from __future__ import annotations

import random
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime

from .errors import ConfigError, ParseError

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"

# Whitespace plus ASCII control characters collapse to a single space.
_WS_RUN = re.compile(r"[\s\x00-\x1f\x7f]+")


@dataclass(frozen=True)
class QueryRecord:
    """One normalized log line."""

    user_id: str
    query: str
    timestamp: datetime | None = None


@dataclass(frozen=True)
class PrefixSample:
    """A (prefix, target) evaluation pair carrying its request context."""

    prefix: str
    target: str
    user_id: str = ""
    timestamp: datetime | None = None


@dataclass
class ParseReport:
    total_lines: int = 0
    parsed: int = 0
    malformed: int = 0


@dataclass(frozen=True)
class LogFormat:
    """Column layout of a raw log file. Extra columns are ignored."""

    delimiter: str = "\t"
    user_col: int = 0
    query_col: int = 1
    time_col: int = 2
    has_header: bool = False


@dataclass
class SplitPolicy:
    """How to cut records into background/train/validation/test.

    mode "random" shuffles with `seed`; mode "time" sorts by timestamp so the
    background strictly precedes the evaluation parts.  Fractions must sum
    to 1.  Background filtering (min_count, max_len) applies only to the
    background part; the other parts are expanded into prefix samples.
    """

    fractions: tuple[float, float, float, float] = (0.7, 0.1, 0.1, 0.1)
    mode: str = "random"
    seed: int = 0
    min_count: int = 3
    max_len: int = 100


@dataclass
class DatasetSplit:
    background_records: list[QueryRecord] = field(default_factory=list)
    background_counts: dict[str, int] = field(default_factory=dict)
    train: list[PrefixSample] = field(default_factory=list)
    validation: list[PrefixSample] = field(default_factory=list)
    test: list[PrefixSample] = field(default_factory=list)


def normalize_query(text: str) -> str:
    """Lowercase, collapse whitespace/control runs to single spaces, trim."""
    return _WS_RUN.sub(" ", text.lower()).strip()


def normalize_prefix(text: str) -> str:
    """Like normalize_query but a trailing whitespace run keeps one space."""
    core = normalize_query(text)
    if not core:
        return ""
    if _WS_RUN.match(text[-1]):
        core += " "
    return core


def parse_log(lines, log_format: LogFormat = LogFormat()):
    """Parse raw log lines into records.

    Returns (records, report).  Malformed lines (too few columns, empty query
    after normalization, unparseable timestamp) are skipped and counted,
    never fatal.
    """
    records: list[QueryRecord] = []
    report = ParseReport()
    needed = max(log_format.user_col, log_format.query_col, log_format.time_col) + 1
    for i, line in enumerate(lines):
        if i == 0 and log_format.has_header:
            continue
        line = line.rstrip("\r\n")
        if not line:
            continue
        report.total_lines += 1
        cols = line.split(log_format.delimiter)
        if len(cols) < needed:
            report.malformed += 1
            continue
        query = normalize_query(cols[log_format.query_col])
        if not query:
            report.malformed += 1
            continue
        try:
            ts = datetime.strptime(cols[log_format.time_col].strip(), TIMESTAMP_FORMAT)
        except ValueError:
            report.malformed += 1
            continue
        user_id = cols[log_format.user_col].strip()
        records.append(QueryRecord(user_id=user_id, query=query, timestamp=ts))
        report.parsed += 1
    return records, report


def filter_background(records, min_count: int = 3, max_len: int = 100) -> dict[str, int]:
    """Count queries and keep those with count >= min_count and length <= max_len."""
    counts = Counter(r.query for r in records)
    return {
        q: n for q, n in counts.items() if n >= min_count and len(q) <= max_len
    }


def extract_prefixes(record: QueryRecord) -> list[PrefixSample]:
    """All character prefixes of the query starting after its first word.

    Prefix lengths run from |first word|+1 through |query|-1; the full query
    is always the target, never a prefix.  Single-word queries yield [].
    """
    query = record.query
    first_word_len = len(query.split(" ", 1)[0])
    return [
        PrefixSample(query[:length], query, record.user_id, record.timestamp)
        for length in range(first_word_len + 1, len(query))
    ]


def split_dataset(records, policy: SplitPolicy = SplitPolicy()) -> DatasetSplit:
    """Cut records into the four parts and post-process each part.

    Deterministic for a fixed (records, policy).  Part sizes follow
    cumulative rounding of the fractions, so they always sum to len(records).
    """
    if abs(sum(policy.fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {policy.fractions}")
    if policy.mode not in ("random", "time"):
        raise ConfigError(f"unknown split mode {policy.mode!r}")

    ordered = list(records)
    if policy.mode == "time":
        ordered.sort(key=lambda r: (r.timestamp is None, r.timestamp or datetime.min))
    else:
        random.Random(policy.seed).shuffle(ordered)

    n = len(ordered)
    bounds = []
    acc = 0.0
    for frac in policy.fractions[:-1]:
        acc += frac
        bounds.append(round(acc * n))
    bounds.append(n)

    parts = []
    start = 0
    for end in bounds:
        parts.append(ordered[start:end])
        start = end
    background, train, validation, test = parts

    split = DatasetSplit(
        background_records=background,
        background_counts=filter_background(
            background, min_count=policy.min_count, max_len=policy.max_len
        ),
    )
    for part, out in ((train, split.train), (validation, split.validation), (test, split.test)):
        for record in part:
            out.extend(extract_prefixes(record))
    return split


def records_from_samples(samples) -> list[QueryRecord]:
    """Unique (target, user, timestamp) records behind a list of prefix samples.

    Prefix expansion repeats the target once per prefix; language-model
    training wants each underlying query once.
    """
    seen = set()
    records = []
    for s in samples:
        key = (s.target, s.user_id, s.timestamp)
        if key in seen:
            continue
        seen.add(key)
        records.append(QueryRecord(s.user_id, s.target, s.timestamp))
    return records


# ---------------------------------------------------------------------------
# TSV persistence for records, counts and prefix samples.

def write_records_tsv(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            ts = r.timestamp.strftime(TIMESTAMP_FORMAT) if r.timestamp else ""
            fh.write(f"{r.user_id}\t{r.query}\t{ts}\n")


def read_records_tsv(path) -> list[QueryRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ParseError(f"expected 3 columns, got {len(cols)}", line_number=i)
            ts = datetime.strptime(cols[2], TIMESTAMP_FORMAT) if cols[2] else None
            records.append(QueryRecord(cols[0], cols[1], ts))
    return records


def write_counts_tsv(path, counts: dict[str, int]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for query in sorted(counts):
            fh.write(f"{query}\t{counts[query]}\n")


def read_counts_tsv(path) -> dict[str, int]:
    counts: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            query, sep, count = line.rpartition("\t")
            if not sep:
                raise ParseError("expected query<TAB>count", line_number=i)
            try:
                counts[query] = int(count)
            except ValueError:
                raise ParseError(f"bad count {count!r}", line_number=i) from None
    return counts


def write_samples_tsv(path, samples) -> None:
    """Persist prefix samples as (prefix, target, user_id, timestamp) TSV."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            ts = s.timestamp.strftime(TIMESTAMP_FORMAT) if s.timestamp else ""
            fh.write(f"{s.prefix}\t{s.target}\t{s.user_id}\t{ts}\n")


def read_samples_tsv(path) -> list[PrefixSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise ParseError(f"expected 4 columns, got {len(cols)}", line_number=i)
            ts = datetime.strptime(cols[3], TIMESTAMP_FORMAT) if cols[3] else None
            samples.append(PrefixSample(cols[0], cols[1], cols[2], ts))
    return samples
