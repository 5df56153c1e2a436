"""Popularity-ranked completion over a character trie.

The trie stores exact completion counts per query; ranking is by
(count descending, query ascending) everywhere.  Nodes covering many
completions carry a precomputed top-K list so short prefixes answer in
microseconds; small subtrees are walked on demand.
"""

from __future__ import annotations

import struct

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import ArtifactError

TRIE_MAGIC = b"NQACTRIE"
TRIE_VERSION = 1

# Subtrees with more distinct completions than this get a cached top-K list.
_CACHE_THRESHOLD = 64
_CACHE_K = 10


class TrieNode:
    __slots__ = ("children", "count", "query", "subtree_total", "top")

    def __init__(self):
        self.children: dict[str, TrieNode] = {}
        self.count = 0          # occurrences of the query ending exactly here
        self.query = None       # full query string when count > 0
        self.subtree_total = 0  # sum of counts at and below this node
        self.top = None         # cached [(count, query), ...] for big subtrees


class CountedTrie:
    """Character-keyed prefix tree with per-node completion counts."""

    def __init__(self, counts: dict[str, int] | None = None):
        self.root = TrieNode()
        if counts:
            for query, count in counts.items():
                self.insert(query, count)
            self.freeze()

    def insert(self, query: str, count: int) -> None:
        node = self.root
        for ch in query:
            node = node.children.setdefault(ch, TrieNode())
        node.count += count
        node.query = query

    def freeze(self) -> None:
        """Compute subtree totals and per-node top-K caches (call after inserts)."""
        self._freeze(self.root)

    def _freeze(self, node: TrieNode):
        # Returns (subtree_total, n_completions, top list ranked by (-count, query)).
        total = node.count
        n_completions = 1 if node.count else 0
        merged = [(-node.count, node.query)] if node.count else []
        for ch in sorted(node.children):
            child_total, child_n, child_top = self._freeze(node.children[ch])
            total += child_total
            n_completions += child_n
            merged.extend(child_top)
        merged.sort()
        top = merged[:_CACHE_K] if n_completions > _CACHE_THRESHOLD else merged
        node.subtree_total = total
        node.top = top if n_completions > _CACHE_THRESHOLD else None
        return total, n_completions, top

    def walk(self, prefix: str) -> TrieNode | None:
        node = self.root
        for ch in prefix:
            node = node.children.get(ch)
            if node is None:
                return None
        return node

    def is_seen(self, prefix: str) -> bool:
        """True iff at least one stored query starts with `prefix`. O(|prefix|)."""
        node = self.walk(prefix)
        return node is not None and node.subtree_total > 0

    def complete(self, prefix: str, k: int) -> list[tuple[str, int]]:
        """Top-k queries with this prefix, by count descending then query ascending."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        node = self.walk(prefix)
        if node is None or node.subtree_total == 0:
            return []
        if node.top is not None and k <= len(node.top):
            ranked = node.top[:k]
        else:
            ranked = sorted(self._collect(node))[:k]
        return [(query, -neg) for neg, query in ranked]

    def _collect(self, node: TrieNode):
        out = [(-node.count, node.query)] if node.count else []
        stack = list(node.children.values())
        while stack:
            cur = stack.pop()
            if cur.count:
                out.append((-cur.count, cur.query))
            stack.extend(cur.children.values())
        return out

    @property
    def total_occurrences(self) -> int:
        return self.root.subtree_total

    # -- binary persistence -------------------------------------------------

    def save(self, path) -> None:
        """Write magic, version and a preorder node stream (little-endian)."""
        with open(path, "wb") as fh:
            fh.write(TRIE_MAGIC)
            fh.write(struct.pack("<I", TRIE_VERSION))
            stack = [self.root]
            while stack:
                node = stack.pop()
                children = sorted(node.children.items())
                fh.write(struct.pack("<IH", node.count, len(children)))
                for ch, _ in children:
                    fh.write(struct.pack("<I", ord(ch)))
                # preorder: first child's subtree comes right after this node
                for _, child in reversed(children):
                    stack.append(child)

    @classmethod
    def load(cls, path) -> "CountedTrie":
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise ArtifactError(f"cannot read trie file {path}: {exc}") from exc
        if data[:8] != TRIE_MAGIC:
            raise ArtifactError(f"{path}: not a trie file (bad magic)")
        (version,) = struct.unpack_from("<I", data, 8)
        if version != TRIE_VERSION:
            raise ArtifactError(f"{path}: unsupported trie format version {version}")

        trie = cls()
        offset = 12
        try:
            offset = trie._read_node(data, offset, trie.root, "")
        except struct.error as exc:
            raise ArtifactError(f"{path}: truncated trie file") from exc
        if offset != len(data):
            raise ArtifactError(f"{path}: trailing bytes after node stream")
        trie.freeze()
        return trie

    def _read_node(self, data, offset, node, path):
        count, n_children = struct.unpack_from("<IH", data, offset)
        offset += 6
        node.count = count
        node.query = path if count else None
        chars = []
        for _ in range(n_children):
            (code,) = struct.unpack_from("<I", data, offset)
            offset += 4
            chars.append(chr(code))
        for ch in chars:
            child = TrieNode()
            node.children[ch] = child
            offset = self._read_node(data, offset, child, path + ch)
        return offset


class MostPopularCompletion(BaseEstimator):
    """Completion by historical popularity over a background query set.

    Parameters
    ----------
    k : int, default 10
        Number of completions returned by `predict`.
    """

    def __init__(self, k: int = 10):
        self.k = k

    def fit(self, X, y=None):
        """Fit from a {query: count} mapping or an iterable of query strings."""
        counts = X if isinstance(X, dict) else None
        if counts is None:
            counts = {}
            for query in X:
                counts[query] = counts.get(query, 0) + 1
        self.trie_ = CountedTrie(counts)
        self.n_queries_ = len(counts)
        return self

    def complete(self, prefix: str, k: int | None = None) -> list[tuple[str, int]]:
        check_is_fitted(self)
        return self.trie_.complete(prefix, self.k if k is None else k)

    def is_seen(self, prefix: str) -> bool:
        check_is_fitted(self)
        return self.trie_.is_seen(prefix)

    def predict(self, X) -> list[list[str]]:
        """Top-k completion strings for each prefix in X."""
        return [[q for q, _ in self.complete(p)] for p in X]

    def save(self, path) -> None:
        check_is_fitted(self)
        self.trie_.save(path)

    @classmethod
    def from_file(cls, path, k: int = 10) -> "MostPopularCompletion":
        est = cls(k=k)
        est.trie_ = CountedTrie.load(path)
        est.n_queries_ = sum(1 for _ in est.trie_._collect(est.trie_.root))
        return est
