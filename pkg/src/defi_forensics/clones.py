"""Bytecode clone detection with opcode n-gram sets.

Each contract becomes the set of its distinct length-``n`` opcode windows. Two
contracts are compared with set Jaccard similarity, and contracts are grouped by
single-linkage (connected components) over pairs scoring at or above a threshold.

Grams are stored as 64-bit fingerprints by default. Pass ``exact=True`` to
:func:`profile` to keep the opcode tuples themselves, e.g. to audit a collision.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

from .evm import OpcodeStream, load_bytecode_file, normalize

DEFAULT_N = 5
DEFAULT_THRESHOLD = 0.8


class InvalidN(ValueError):
    pass


class MismatchedN(ValueError):
    pass


class InvalidThreshold(ValueError):
    pass


class MissingIncidentId(ValueError):
    pass


@dataclass(frozen=True)
class NGramProfile:
    source_id: str
    n: int
    grams: frozenset[Hashable]
    incident_id: str | None = None
    exact: bool = False

    def __len__(self) -> int:
        return len(self.grams)


@dataclass(frozen=True)
class SimilarityMatrix:
    ids: tuple[str, ...]
    scores: tuple[tuple[float, ...], ...]

    def __getitem__(self, ij: tuple[int, int]) -> float:
        i, j = ij
        return self.scores[i][j]

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class Cluster:
    members: frozenset[str]
    threshold: float
    distinct_incidents: int = 0
    incidents: Mapping[str, str | None] = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.members)

    def to_dict(self) -> dict:
        return {
            "members": sorted(self.members),
            "threshold": self.threshold,
            "distinct_incidents": self.distinct_incidents,
            "incidents": {m: self.incidents.get(m) for m in sorted(self.members)},
        }


@dataclass(frozen=True)
class CloneReport:
    category: str
    threshold: float
    total_in_clusters: int
    cluster_count: int
    detectable: int

    CSV_COLUMNS = ("category", "threshold", "total", "clusters", "detectable")

    def row(self) -> tuple:
        return (self.category, self.threshold, self.total_in_clusters,
                self.cluster_count, self.detectable)


def fingerprint(gram: tuple[str, ...]) -> int:
    digest = hashlib.blake2b(" ".join(gram).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def profile(stream: OpcodeStream | Sequence[str], n: int = DEFAULT_N,
            incident_id: str | None = None, *, source_id: str | None = None,
            exact: bool = False) -> NGramProfile:
    if n < 1:
        raise InvalidN(f"gram width must be >= 1, got {n}")
    if isinstance(stream, OpcodeStream):
        ops = stream.opcodes
        sid = stream.source_id if source_id is None else source_id
    else:
        ops = tuple(stream)
        sid = source_id or ""
    windows = (tuple(ops[i:i + n]) for i in range(len(ops) - n + 1))
    grams = frozenset(windows) if exact else frozenset(map(fingerprint, windows))
    return NGramProfile(sid, n, grams, incident_id, exact)


def jaccard(a: NGramProfile, b: NGramProfile) -> float:
    if a.n != b.n:
        raise MismatchedN(f"gram widths differ: {a.n} vs {b.n}")
    if a.exact != b.exact:
        raise MismatchedN("cannot compare exact and fingerprinted profiles")
    if not a.grams and not b.grams:
        return 0.0
    inter = len(a.grams & b.grams)
    return inter / (len(a.grams) + len(b.grams) - inter)


def pairwise(profiles: Sequence[NGramProfile], workers: int = 1) -> SimilarityMatrix:
    """Full symmetric Jaccard matrix. Rows are scored concurrently when ``workers > 1``."""
    if len({(p.n, p.exact) for p in profiles}) > 1:
        raise MismatchedN("profiles do not share one gram width / mode")
    k = len(profiles)
    rows = [[0.0] * k for _ in range(k)]

    def score_row(i: int) -> list[float]:
        return [jaccard(profiles[i], profiles[j]) for j in range(i + 1, k)]

    if workers > 1 and k > 2:
        with ThreadPoolExecutor(workers) as pool:
            upper = list(pool.map(score_row, range(k)))
    else:
        upper = [score_row(i) for i in range(k)]
    for i in range(k):
        rows[i][i] = 1.0 if profiles[i].grams else 0.0
        for off, s in enumerate(upper[i]):
            j = i + 1 + off
            rows[i][j] = rows[j][i] = s
    return SimilarityMatrix(tuple(p.source_id for p in profiles), tuple(map(tuple, rows)))


def _check_threshold(threshold: float) -> None:
    if not 0 < threshold <= 1:
        raise InvalidThreshold(f"threshold must lie in (0, 1], got {threshold}")


def cluster(matrix: SimilarityMatrix, threshold: float = DEFAULT_THRESHOLD,
            incidents: Mapping[str, str | None] | None = None) -> list[Cluster]:
    """Connected components of the graph with an edge wherever score >= threshold.

    Singletons are dropped. Output is sorted by (smallest member id) for stable reports.
    """
    _check_threshold(threshold)
    k = len(matrix)
    parent = list(range(k))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(k):
        row = matrix.scores[i]
        for j in range(i + 1, k):
            if row[j] >= threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    groups: dict[int, list[str]] = {}
    for i in range(k):
        groups.setdefault(find(i), []).append(matrix.ids[i])
    incidents = incidents or {}
    out = []
    for members in groups.values():
        if len(members) < 2:
            continue
        inc = {m: incidents.get(m) for m in members}
        distinct = len({v for v in inc.values() if v is not None})
        out.append(Cluster(frozenset(members), threshold, distinct, inc))
    out.sort(key=lambda c: min(c.members))
    return out


def dedupe_per_incident(clusters: Iterable[Cluster]) -> list[Cluster]:
    """Keep one member per incident in every cluster (the lexicographically smallest id)."""
    out = []
    for c in clusters:
        keep: dict[str, str] = {}
        for member in sorted(c.members):
            inc = c.incidents.get(member)
            if inc is None:
                raise MissingIncidentId(f"cluster member {member!r} has no incident id")
            keep.setdefault(inc, member)
        if len(keep) < 2:
            continue
        members = frozenset(keep.values())
        out.append(Cluster(members, c.threshold, len(keep),
                           {m: c.incidents[m] for m in members}))
    return out


def report(clusters: Sequence[Cluster], category: str, threshold: float) -> CloneReport:
    total = sum(len(c) for c in clusters)
    return CloneReport(category, threshold, total, len(clusters), total - len(clusters))


# corpus manifest ---------------------------------------------------------------

@dataclass(frozen=True)
class CorpusEntry:
    source_id: str
    bytecode_path: Path
    incident_id: str | None
    category: str


def load_manifest(path: str | Path) -> list[CorpusEntry]:
    """Read a JSON corpus manifest; bytecode paths are resolved relative to it."""
    path = Path(path)
    raw = json.loads(path.read_text())
    entries = []
    for i, item in enumerate(raw):
        try:
            entries.append(CorpusEntry(
                str(item["source_id"]),
                (path.parent / item["bytecode_path"]).resolve(),
                None if item.get("incident_id") is None else str(item["incident_id"]),
                str(item["category"]),
            ))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"manifest entry {i}: missing field {exc}") from None
    ids = [e.source_id for e in entries]
    if len(ids) != len(set(ids)):
        raise ValueError("manifest source_ids are not unique")
    return entries


def analyze_corpus(entries: Sequence[CorpusEntry], threshold: float = DEFAULT_THRESHOLD,
                   n: int = DEFAULT_N, per_incident: bool = True, exact: bool = False,
                   workers: int = 1) -> tuple[list[CloneReport], dict[str, list[Cluster]]]:
    """Run the whole pipeline per category and return reports plus cluster membership."""
    reports, membership = [], {}
    for category in sorted({e.category for e in entries}):
        chosen = sorted((e for e in entries if e.category == category),
                        key=lambda e: e.source_id)
        profiles = [
            profile(normalize(load_bytecode_file(e.bytecode_path, e.source_id)), n,
                    e.incident_id, exact=exact)
            for e in chosen
        ]
        clusters = cluster(pairwise(profiles, workers), threshold,
                           {e.source_id: e.incident_id for e in chosen})
        if per_incident:
            clusters = dedupe_per_incident(clusters)
        reports.append(report(clusters, category, threshold))
        membership[category] = clusters
    return reports, membership
