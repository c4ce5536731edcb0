"""Readers and writers for the follow graph, label files and feature metadata.

All files are UTF-8, LF-terminated, tab separated, no header.

edges:     user_id<TAB>feature_id
labels:    user_id<TAB>age:<years> | user_id<TAB>proxy:<token>
metadata:  feature_id<TAB>follower_count
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .taxonomy import AgeTaxonomy, TaxonomyError, proxy_to_weights, years_to_category

log = logging.getLogger(__name__)

MAX_MALFORMED_FRACTION = 0.01
_MAX_ID = 2**64 - 1


class DataError(ValueError):
    """Input data that cannot be used (malformed beyond tolerance, bad values)."""


@dataclass
class ParseReport:
    lines: int = 0
    malformed: int = 0
    samples: list[str] = field(default_factory=list)

    def bad(self, lineno: int, raw: str, reason: str):
        self.malformed += 1
        if len(self.samples) < 5:
            self.samples.append(f"line {lineno}: {reason}: {raw.rstrip()!r}")


@dataclass
class FollowGraph:
    """Deduplicated user -> feature adjacency in CSR form plus degree maps.

    ``users`` is sorted; the followed feature ids of ``users[k]`` are
    ``features[offsets[k]:offsets[k+1]]`` (sorted, unique).
    """

    users: np.ndarray
    offsets: np.ndarray
    features: np.ndarray
    report: ParseReport = field(default_factory=ParseReport)

    @property
    def n_edges(self) -> int:
        return int(self.features.size)

    @property
    def user_degree(self) -> dict[int, int]:
        deg = np.diff(self.offsets)
        return {int(u): int(d) for u, d in zip(self.users, deg)}

    @property
    def feature_degree(self) -> dict[int, int]:
        ids, counts = np.unique(self.features, return_counts=True)
        return {int(f): int(c) for f, c in zip(ids, counts)}

    def followed(self, user_id: int) -> np.ndarray:
        k = np.searchsorted(self.users, np.uint64(user_id))
        if k < self.users.size and self.users[k] == user_id:
            return self.features[self.offsets[k]:self.offsets[k + 1]]
        return self.features[:0]

    def feature_support(self, user_ids: Iterable[int]) -> Counter:
        """Number of the given users following each feature."""
        support = Counter()
        for u in user_ids:
            support.update(int(f) for f in self.followed(u))
        return support

    def iter_edges(self) -> Iterator[tuple[int, int]]:
        for k, u in enumerate(self.users):
            for f in self.features[self.offsets[k]:self.offsets[k + 1]]:
                yield int(u), int(f)

    @classmethod
    def from_adjacency(cls, adjacency: dict[int, Iterable[int]], report: ParseReport | None = None) -> "FollowGraph":
        users = np.array(sorted(adjacency), dtype=np.uint64)
        chunks = [np.unique(np.fromiter(adjacency[int(u)], dtype=np.uint64)) for u in users]
        offsets = np.zeros(users.size + 1, dtype=np.int64)
        if chunks:
            offsets[1:] = np.cumsum([c.size for c in chunks])
            features = np.concatenate(chunks)
        else:
            features = np.zeros(0, dtype=np.uint64)
        return cls(users, offsets, features, report or ParseReport())


def _parse_id(text: str) -> int:
    if not text.isdigit():
        raise ValueError("not a decimal id")
    value = int(text)
    if value > _MAX_ID:
        raise ValueError("id exceeds 64 bits")
    return value


def _check_malformed(report: ParseReport, path):
    if report.lines and report.malformed / report.lines > MAX_MALFORMED_FRACTION:
        raise DataError(
            f"{path}: {report.malformed} of {report.lines} lines malformed; samples:\n  "
            + "\n  ".join(report.samples)
        )
    if report.malformed:
        log.warning("%s: skipped %d malformed lines", path, report.malformed)


def read_edges(path: str | Path, users: Iterable[int] | None = None) -> FollowGraph:
    """Read an edge file in one pass, deduplicating repeated (user, feature) pairs.

    With ``users`` only those accounts' edges are kept, so memory grows with
    the labelled subgraph rather than the whole file.
    """
    keep = None if users is None else {int(u) for u in users}
    report = ParseReport()
    adjacency: dict[int, set[int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            report.lines += 1
            parts = raw.rstrip("\n").split("\t")
            if len(parts) != 2:
                report.bad(lineno, raw, "expected 2 fields")
                continue
            try:
                u, f = _parse_id(parts[0]), _parse_id(parts[1])
            except ValueError as exc:
                report.bad(lineno, raw, str(exc))
                continue
            if keep is None or u in keep:
                adjacency.setdefault(u, set()).add(f)
    _check_malformed(report, path)
    return FollowGraph.from_adjacency(adjacency, report)


def write_edges(graph: FollowGraph, path: str | Path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, f in graph.iter_edges():
            fh.write(f"{u}\t{f}\n")


def iter_edge_chunks(path: str | Path, chunk_size: int = 1 << 20) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Stream an edge file as (user_ids, feature_ids) uint64 array pairs.

    Used on the scoring path where the file may be far larger than memory.
    Lines must be well formed; any malformed line raises DataError.
    """
    import pandas as pd

    try:
        reader = pd.read_csv(path, sep="\t", header=None, names=["u", "f"], dtype=np.uint64,
                             chunksize=chunk_size, engine="c")
        for frame in reader:
            yield frame["u"].to_numpy(), frame["f"].to_numpy()
    except pd.errors.EmptyDataError:
        return
    except (ValueError, pd.errors.ParserError) as exc:
        raise DataError(f"{path}: malformed edge file: {exc}") from None


@dataclass(frozen=True)
class LabeledAccount:
    user_id: int
    source: str  # "explicit_age" or the proxy token
    weights: np.ndarray

    @property
    def category(self) -> int | None:
        """The single category for explicit labels, None for spread proxies."""
        nz = np.flatnonzero(self.weights)
        return int(nz[0]) if nz.size == 1 else None


def parse_label(value: str, t: AgeTaxonomy) -> tuple[str, np.ndarray]:
    kind, _, arg = value.partition(":")
    if kind == "age":
        years = int(arg)
        w = np.zeros(len(t))
        w[years_to_category(t, years)] = 1.0
        return "explicit_age", w
    if kind == "proxy":
        return arg, proxy_to_weights(t, arg)
    raise ValueError(f"unknown label kind {kind!r}")


def read_labels(path: str | Path, t: AgeTaxonomy) -> list[LabeledAccount]:
    """Read labels; invalid lines (bad ages, unknown proxies) are skipped and counted."""
    return read_labels_report(path, t)[0]


def read_labels_report(path: str | Path, t: AgeTaxonomy) -> tuple[list[LabeledAccount], ParseReport]:
    report = ParseReport()
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            report.lines += 1
            parts = raw.rstrip("\n").split("\t")
            try:
                if len(parts) != 2:
                    raise ValueError("expected 2 fields")
                uid = _parse_id(parts[0])
                source, w = parse_label(parts[1].strip(), t)
            except (ValueError, TaxonomyError) as exc:
                report.bad(lineno, raw, str(exc))
                continue
            if uid in labels:
                log.warning("%s: duplicate label for user %d, keeping the last", path, uid)
            labels[uid] = LabeledAccount(uid, source, w)
    if report.malformed:
        log.warning("%s: skipped %d label lines", path, report.malformed)
    return [labels[u] for u in sorted(labels)], report


def format_label(account: LabeledAccount, t: AgeTaxonomy) -> str:
    if account.source == "explicit_age":
        return f"age:{t.bands[account.category].representative_age()}"
    return f"proxy:{account.source}"


def write_labels(labels: Iterable[LabeledAccount], t: AgeTaxonomy, path: str | Path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for acc in labels:
            fh.write(f"{acc.user_id}\t{format_label(acc, t)}\n")


@dataclass(frozen=True)
class FeatureMetadata:
    feature_id: int
    follower_count: int


def read_feature_metadata(path: str | Path | None) -> dict[int, FeatureMetadata]:
    """Whole-network follower counts; a missing file yields an empty map."""
    if path is None or not Path(path).exists():
        return {}
    report = ParseReport()
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            report.lines += 1
            parts = raw.rstrip("\n").split("\t")
            try:
                if len(parts) != 2:
                    raise ValueError("expected 2 fields")
                fid = _parse_id(parts[0])
                count = int(parts[1])
                if count < 0:
                    raise ValueError("negative follower count")
            except ValueError as exc:
                report.bad(lineno, raw, str(exc))
                continue
            meta[fid] = FeatureMetadata(fid, count)
    _check_malformed(report, path)
    return meta


def write_feature_metadata(meta: dict[int, int], path: str | Path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for fid in sorted(meta):
            fh.write(f"{fid}\t{int(meta[fid])}\n")
