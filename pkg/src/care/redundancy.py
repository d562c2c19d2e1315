"""Set-cover redundancy of human-labeled similarity data, and the chunk baseline.

Items are grouped into maximal sets of mutually similar items (maximal
cliques of the label graph). One representative per set is enough to convey
its content, so the smallest item set hitting every maximal set tells how
many items actually need to be sent; redundancy is the fraction that need not.
"""
from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence

SIMILAR_MEAN = 3.0
EXACT_LIMIT = 25


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class LabelRecord:
    item_a: Hashable
    item_b: Hashable
    scores: tuple[int, ...]


@dataclass
class SimilarityGraph:
    items: frozenset
    edges: frozenset = frozenset()  # frozensets of two items

    def __post_init__(self):
        self.items = frozenset(self.items)
        self.edges = frozenset(frozenset(e) for e in self.edges)
        for e in self.edges:
            if len(e) != 2:
                raise LabelError(f"self-loop or malformed edge {set(e)}")
            if not e <= self.items:
                raise LabelError(f"edge {sorted(e)} references unknown items")

    def adjacency(self) -> dict:
        adj = {v: set() for v in self.items}
        for e in self.edges:
            a, b = tuple(e)
            adj[a].add(b)
            adj[b].add(a)
        return adj


@dataclass
class SimilarSetCover:
    maximal_sets: list
    cover: frozenset
    redundancy: float
    exact: bool = True
    n_items: int = field(default=0)


def aggregate_labels(records: Iterable[LabelRecord], items: Iterable) -> SimilarityGraph:
    """Edge iff the labelers' mean score is at least 3 (on the 0-5 scale)."""
    items = frozenset(items)
    seen = set()
    edges = set()
    for r in records:
        if r.item_a == r.item_b:
            raise LabelError(f"pair ({r.item_a}, {r.item_b}) is a self-pair")
        if r.item_a not in items or r.item_b not in items:
            raise LabelError(f"pair ({r.item_a}, {r.item_b}) references an unknown item")
        if not r.scores:
            raise LabelError(f"pair ({r.item_a}, {r.item_b}) has no scores")
        for s in r.scores:
            if not (isinstance(s, int) and 0 <= s <= 5):
                raise LabelError(f"pair ({r.item_a}, {r.item_b}): score {s!r} not in 0..5")
        key = frozenset((r.item_a, r.item_b))
        if key in seen:
            raise LabelError(f"duplicate pair ({r.item_a}, {r.item_b})")
        seen.add(key)
        # compare sum against threshold*count to stay in integers
        if sum(r.scores) >= SIMILAR_MEAN * len(r.scores):
            edges.add(key)
    return SimilarityGraph(items, frozenset(edges))


def _sort_key(v):
    return (type(v).__name__, v)


def canonical_sets(sets: Iterable[Iterable]) -> list[tuple]:
    out = [tuple(sorted(s, key=_sort_key)) for s in sets]
    out.sort(key=lambda t: (tuple(_sort_key(v) for v in t)))
    return out


def maximal_similar_sets(g: SimilarityGraph) -> list[tuple]:
    """All maximal cliques (Bron-Kerbosch with pivoting), singletons included."""
    if not g.items:
        return []
    adj = g.adjacency()
    cliques = []

    def expand(r, p, x):
        if not p and not x:
            cliques.append(r)
            return
        pivot = max(p | x, key=lambda u: (len(adj[u] & p), _sort_key(u)))
        for v in sorted(p - adj[pivot], key=_sort_key):
            expand(r | {v}, p & adj[v], x & adj[v])
            p = p - {v}
            x = x | {v}

    expand(frozenset(), set(g.items), set())
    return canonical_sets(cliques)


def _greedy_cover(sets: list[frozenset]) -> set:
    uncovered = list(range(len(sets)))
    cover = set()
    while uncovered:
        counts = {}
        for k in uncovered:
            for v in sets[k]:
                counts[v] = counts.get(v, 0) + 1
        best = min(counts, key=lambda v: (-counts[v], _sort_key(v)))
        cover.add(best)
        uncovered = [k for k in uncovered if best not in sets[k]]
    return cover


def _exact_cover(sets: list[frozenset]) -> set:
    best = [_greedy_cover(sets)]

    def lower_bound(uncovered):
        # pairwise-disjoint uncovered sets each need their own cover member
        used = set()
        n = 0
        for s in sorted(uncovered, key=len):
            if not (s & used):
                used |= s
                n += 1
        return n

    def search(chosen, uncovered):
        if not uncovered:
            if len(chosen) < len(best[0]):
                best[0] = set(chosen)
            return
        if len(chosen) + lower_bound(uncovered) >= len(best[0]):
            return
        pick = min(uncovered, key=lambda s: (len(s), sorted(map(_sort_key, s))))
        for v in sorted(pick, key=_sort_key):
            search(chosen | {v}, [s for s in uncovered if v not in s])

    search(frozenset(), list(sets))
    return best[0]


def min_set_cover(sets: Sequence[Iterable], items: Iterable, exact: bool | None = None) -> SimilarSetCover:
    """Smallest item set meeting every maximal set.

    Exact branch-and-bound for up to ``EXACT_LIMIT`` items, greedy above
    that (``exact=False`` in the result). Pass ``exact`` to force a method.
    """
    items = frozenset(items)
    fsets = [frozenset(s) for s in sets]
    if exact is None:
        exact = len(items) <= EXACT_LIMIT
    cover = _exact_cover(fsets) if exact else _greedy_cover(fsets)
    n = len(items)
    redundancy = 1.0 - len(cover) / n if n else 0.0
    return SimilarSetCover(canonical_sets(fsets), frozenset(cover), redundancy, exact, n)


def analyze(g: SimilarityGraph, exact: bool | None = None) -> SimilarSetCover:
    return min_set_cover(maximal_similar_sets(g), g.items, exact=exact)


def chunk_dedup_ratio(blobs: Iterable[bytes], chunk_size: int = 512) -> float:
    """Fraction of bytes in fixed-size chunks whose digest appeared earlier."""
    if chunk_size < 16:
        raise ValueError("chunk_size must be >= 16")
    seen = set()
    total = dup = 0
    for blob in blobs:
        mv = memoryview(blob)
        for off in range(0, len(mv), chunk_size):
            chunk = mv[off:off + chunk_size]
            digest = hashlib.sha256(chunk).digest()
            total += len(chunk)
            if digest in seen:
                dup += len(chunk)
            else:
                seen.add(digest)
    return dup / total if total else 0.0


# -- file formats ------------------------------------------------------------

def read_items(path: str | Path) -> list[str]:
    return [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]


def read_labels(path: str | Path) -> list[LabelRecord]:
    """Label CSV: ``item_a,item_b,score1,...``; a header row is optional."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or not "".join(row).strip():
                continue
            if row[0].strip() == "item_a":
                continue
            try:
                scores = tuple(int(s) for s in row[2:] if s.strip() != "")
            except ValueError as exc:
                raise LabelError(f"bad score in row {row}") from exc
            out.append(LabelRecord(row[0].strip(), row[1].strip(), scores))
    return out


def report_csv(result: SimilarSetCover) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "value"])
    w.writerow(["n_items", result.n_items])
    w.writerow(["n_maximal_sets", len(result.maximal_sets)])
    w.writerow(["cover_size", len(result.cover)])
    w.writerow(["redundancy", f"{result.redundancy:.6f}"])
    w.writerow(["method", "exact" if result.exact else "greedy"])
    w.writerow(["cover", " ".join(map(str, sorted(result.cover, key=_sort_key)))])
    for s in result.maximal_sets:
        w.writerow(["maximal_set", " ".join(map(str, s))])
    return buf.getvalue()


def report_text(result: SimilarSetCover) -> str:
    lines = [
        f"items:          {result.n_items}",
        f"maximal sets:   {len(result.maximal_sets)}",
        f"cover size:     {len(result.cover)} ({'exact' if result.exact else 'greedy, approximate'})",
        f"redundancy:     {result.redundancy:.4f}",
    ]
    return "\n".join(lines) + "\n"
