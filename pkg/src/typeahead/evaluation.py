"""MRR evaluation with seen/unseen breakdown and per-prefix latency.

Reciprocal rank uses exact string equality after query normalization.  The
seen/unseen split keys on whether the typed prefix has at least one
completion in the background trie, the same check the routed strategy uses.
Latency is the wall time of suggest() alone, averaged over a configurable
number of passes per prefix.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .corpus import normalize_prefix, normalize_query
from .engine import SuggestRequest
from .errors import EvaluationError


@dataclass
class EvalReport:
    strategy: str
    mrr_all: float
    mrr_seen: float
    mrr_unseen: float
    n_seen: int
    n_unseen: int
    mean_latency_s: float
    p95_latency_s: float
    reciprocal_ranks: list[float] = field(default_factory=list, repr=False)

    def to_json_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "mrr_all": self.mrr_all,
            "mrr_seen": self.mrr_seen,
            "mrr_unseen": self.mrr_unseen,
            "n_seen": self.n_seen,
            "n_unseen": self.n_unseen,
            "mean_latency_s": self.mean_latency_s,
            "p95_latency_s": self.p95_latency_s,
        }


def reciprocal_rank(suggestions, target: str) -> float:
    """1/rank of the first suggestion equal to the target, 0 when absent."""
    wanted = normalize_query(target)
    for position, text in enumerate(suggestions, start=1):
        if normalize_query(text) == wanted:
            return 1.0 / position
    return 0.0


def evaluate(engine, samples, strategy: str, k: int = 10, latency_passes: int = 10) -> EvalReport:
    """Score a strategy over prefix samples.

    The engine must carry a background trie: the seen/unseen breakdown is
    part of the report regardless of strategy.
    """
    samples = list(samples)
    if not samples:
        raise EvaluationError("empty test set")
    if latency_passes < 1:
        raise EvaluationError(f"latency_passes must be at least 1, got {latency_passes}")
    if engine.trie is None:
        raise EvaluationError("seen/unseen breakdown requires an engine with a trie")

    ranks: list[float] = []
    seen_flags: list[bool] = []
    latencies: list[float] = []
    for sample in samples:
        request = SuggestRequest(
            prefix=sample.prefix,
            user_id=sample.user_id or None,
            timestamp=sample.timestamp,
            k=k,
            strategy=strategy,
        )
        per_pass = []
        response = None
        for _ in range(latency_passes):
            started = time.perf_counter()
            result = engine.suggest(request)
            per_pass.append(time.perf_counter() - started)
            if response is None:
                response = result
        ranks.append(reciprocal_rank([s.text for s in response.suggestions], sample.target))
        seen_flags.append(engine.trie.is_seen(normalize_prefix(sample.prefix)))
        latencies.append(sum(per_pass) / len(per_pass))

    ranks_arr = np.asarray(ranks)
    seen_arr = np.asarray(seen_flags)
    n_seen = int(seen_arr.sum())
    n_unseen = len(samples) - n_seen
    mrr_seen = float(ranks_arr[seen_arr].mean()) if n_seen else 0.0
    mrr_unseen = float(ranks_arr[~seen_arr].mean()) if n_unseen else 0.0
    return EvalReport(
        strategy=strategy,
        mrr_all=float(ranks_arr.mean()),
        mrr_seen=mrr_seen,
        mrr_unseen=mrr_unseen,
        n_seen=n_seen,
        n_unseen=n_unseen,
        mean_latency_s=float(np.mean(latencies)),
        p95_latency_s=float(np.percentile(latencies, 95)),
        reciprocal_ranks=ranks,
    )


def paired_ttest(report_a: EvalReport, report_b: EvalReport):
    """Two-sided paired t-test on per-prefix reciprocal ranks (descriptive only)."""
    a, b = report_a.reciprocal_ranks, report_b.reciprocal_ranks
    if len(a) != len(b) or not a:
        raise EvaluationError("paired t-test needs two reports over the same test set")
    result = stats.ttest_rel(a, b)
    return float(result.statistic), float(result.pvalue)


def format_table(reports) -> str:
    """Aligned text table with Seen/Unseen/All MRR and mean latency columns."""
    header = ("Strategy", "Seen", "Unseen", "All", "Time (s)")
    rows = [header]
    for r in reports:
        rows.append(
            (
                r.strategy,
                f"{r.mrr_seen:.3f}",
                f"{r.mrr_unseen:.3f}",
                f"{r.mrr_all:.3f}",
                f"{r.mean_latency_s:.4f}",
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for idx, row in enumerate(rows):
        lines.append(
            "  ".join(
                cell.ljust(widths[i]) if i == 0 else cell.rjust(widths[i])
                for i, cell in enumerate(row)
            )
        )
        if idx == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def report_json(reports) -> str:
    return json.dumps([r.to_json_dict() for r in reports], indent=2)
