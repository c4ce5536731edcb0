"""Beta-Bernoulli Naive Bayes over followed feature accounts.

Each feature i and category a carries a follow probability with a Beta prior
whose pseudo-counts scale with the labelled mass of the category::

    b_ia = alpha * n_a * n_i / K        c_a = alpha * n_a

so that before any data the expected follow probability is n_i / (K + n_i)
for every category. The trained table holds the Beta posterior means
(n_ia + b_ia) / (n_a + b_ia + c_a) in natural-log space. Prediction only uses
features a user follows; not following carries no evidence.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .ingestion import DataError, FeatureMetadata, FollowGraph, LabeledAccount
from .taxonomy import AgeTaxonomy, load_taxonomy, validate_prior

log = logging.getLogger(__name__)

TWITTER_POPULATION = 7e8


@dataclass(frozen=True)
class Hyperparameters:
    alpha: float = 1.0
    K: float = TWITTER_POPULATION
    min_support: int = 10

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.K > 0:
            raise ValueError(f"K must be positive, got {self.K}")
        if int(self.min_support) != self.min_support or self.min_support < 1:
            raise ValueError(f"min_support must be an integer >= 1, got {self.min_support}")


def follow_probability(n_ia, n_a, n_i, alpha: float, K: float):
    """Posterior mean follow probability, vectorized over broadcastable inputs.

    With no labelled mass in a category the result is the prior mean n_i/(K+n_i).
    """
    n_ia, n_a, n_i = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (n_ia, n_a, n_i)))
    b = alpha * n_a * n_i / K
    c = alpha * n_a
    den = n_a + b + c
    with np.errstate(divide="ignore", invalid="ignore"):
        p = (n_ia + b) / den
    no_data = den <= 0
    if np.any(no_data):
        p = np.where(no_data, n_i / (K + n_i), p)
    return p if p.ndim else float(p)


def log_follow_probability(n_ia, n_a, n_i, alpha: float, K: float):
    with np.errstate(divide="ignore"):
        return np.log(follow_probability(n_ia, n_a, n_i, alpha, K))


@dataclass
class ModelCounts:
    """Sufficient statistics for training; shards merge by addition.

    ``follower_counts`` holds the whole-network follower count n_i per selected
    feature, NaN where metadata was missing (filled at training time).
    """

    feature_ids: np.ndarray  # sorted uint64, length M
    n_a: np.ndarray  # (C,)
    n_ia: np.ndarray  # (M, C)
    support: np.ndarray  # (M,) labelled followers, unweighted
    follower_counts: np.ndarray  # (M,) float, NaN = unknown

    @property
    def M(self) -> int:
        return int(self.feature_ids.size)

    @property
    def total_mass(self) -> float:
        return float(self.n_a.sum())

    def merge(self, other: "ModelCounts") -> "ModelCounts":
        if not np.array_equal(self.feature_ids, other.feature_ids):
            raise ValueError("cannot merge counts over different feature sets")
        if not np.array_equal(self.follower_counts, other.follower_counts, equal_nan=True):
            raise ValueError("cannot merge counts with different follower metadata")
        return ModelCounts(self.feature_ids, self.n_a + other.n_a, self.n_ia + other.n_ia,
                           self.support + other.support, self.follower_counts)

    def resolved_follower_counts(self, hp: Hyperparameters) -> np.ndarray:
        """n_i with missing metadata extrapolated as support_i * K / total labelled mass."""
        n_i = self.follower_counts.copy()
        missing = np.isnan(n_i)
        if np.any(missing):
            mass = self.total_mass
            fallback = self.support * (hp.K / mass) if mass > 0 else np.zeros_like(n_i)
            n_i[missing] = fallback[missing]
        return n_i

    def feature_index(self) -> dict[int, int]:
        return {int(f): i for i, f in enumerate(self.feature_ids)}


def select_features(graph: FollowGraph, labels: Sequence[LabeledAccount], hp: Hyperparameters) -> dict[int, int]:
    """Features followed by at least ``min_support`` labelled accounts, densely indexed by id order."""
    support = graph.feature_support(acc.user_id for acc in labels)
    kept = sorted(f for f, s in support.items() if s >= hp.min_support)
    if not kept:
        best = max(support.values(), default=0)
        raise DataError(f"no feature has support >= {hp.min_support} (max support {best}); lower min_support")
    return {f: i for i, f in enumerate(kept)}


def _labelled_edges(graph: FollowGraph, labels: Sequence[LabeledAccount], feature_ids: np.ndarray):
    """(account row, feature index) for every follow of a selected feature by a labelled account."""
    rows, cols = [], []
    for r, acc in enumerate(labels):
        followed = graph.followed(acc.user_id)
        if followed.size == 0:
            continue
        idx = _matching(feature_ids, followed)
        rows.append(np.full(idx.size, r, dtype=np.int64))
        cols.append(idx)
    if not rows:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(rows), np.concatenate(cols)


def _matching(feature_ids: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Dense indices of the entries of ``ids`` present in sorted ``feature_ids``."""
    if feature_ids.size == 0 or ids.size == 0:
        return np.zeros(0, dtype=np.int64)
    idx = np.searchsorted(feature_ids, ids)
    idx[idx >= feature_ids.size] = 0
    hit = feature_ids[idx] == ids
    return idx[hit].astype(np.int64)


def accumulate_counts(graph: FollowGraph, labels: Sequence[LabeledAccount],
                      metadata: dict[int, FeatureMetadata], t: AgeTaxonomy, hp: Hyperparameters,
                      features: dict[int, int] | None = None) -> ModelCounts:
    if features is None:
        features = select_features(graph, labels, hp)
    feature_ids = np.array(sorted(features), dtype=np.uint64)
    C = len(t)
    W = np.array([acc.weights for acc in labels], dtype=float).reshape(len(labels), C)
    rows, cols = _labelled_edges(graph, labels, feature_ids)
    n_ia = np.zeros((feature_ids.size, C))
    np.add.at(n_ia, cols, W[rows])
    support = np.bincount(cols, minlength=feature_ids.size).astype(np.int64)
    follower_counts = np.array(
        [metadata[int(f)].follower_count if int(f) in metadata else np.nan for f in feature_ids], dtype=float)
    return ModelCounts(feature_ids, W.sum(axis=0), n_ia, support, follower_counts)


def smoothed_follow_prob(counts: ModelCounts, hp: Hyperparameters, i: int, a: int) -> float:
    n_i = counts.resolved_follower_counts(hp)[i]
    return follow_probability(counts.n_ia[i, a], counts.n_a[a], n_i, hp.alpha, hp.K)


@dataclass(frozen=True)
class TrainedModel:
    taxonomy: AgeTaxonomy
    prior: np.ndarray
    feature_ids: np.ndarray  # sorted uint64
    log_lik: np.ndarray  # (M, C) ln P(X_i = 1 | A = a, data)
    hp: Hyperparameters
    category_mass: np.ndarray  # n_a used in training
    follower_counts: np.ndarray  # resolved n_i

    @property
    def M(self) -> int:
        return int(self.feature_ids.size)

    @property
    def n_categories(self) -> int:
        return len(self.taxonomy)

    def feature_rows(self, ids) -> np.ndarray:
        return _matching(self.feature_ids, np.asarray(ids, dtype=np.uint64))


def model_from_counts(counts: ModelCounts, t: AgeTaxonomy, prior, hp: Hyperparameters) -> TrainedModel:
    prior = validate_prior(prior, len(t))
    n_i = counts.resolved_follower_counts(hp)
    L = log_follow_probability(counts.n_ia, counts.n_a[None, :], n_i[:, None], hp.alpha, hp.K)
    L = np.asarray(L, dtype=float).reshape(counts.M, len(t))
    if np.any(np.isneginf(L)):
        log.warning("%d log-likelihood entries are -inf (features with zero follower metadata)",
                    int(np.isneginf(L).sum()))
    mass = counts.n_a.copy()
    prior = prior.copy()
    for arr in (prior, L, mass, n_i):
        arr.setflags(write=False)
    return TrainedModel(t, prior, counts.feature_ids.copy(), L, hp, mass, n_i)


def train(graph: FollowGraph, labels: Sequence[LabeledAccount], metadata: dict[int, FeatureMetadata],
          t: AgeTaxonomy, prior, hp: Hyperparameters, features: dict[int, int] | None = None) -> TrainedModel:
    counts = accumulate_counts(graph, labels, metadata, t, hp, features)
    return model_from_counts(counts, t, prior, hp)


# -- prediction --------------------------------------------------------------

def _normalize_scores(scores: np.ndarray, log_prior: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; rows with no finite score fall back to the prior."""
    top = scores.max(axis=1, keepdims=True)
    dead = ~np.isfinite(top[:, 0])
    if np.any(dead):
        scores = scores.copy()
        scores[dead] = log_prior
        top[dead, 0] = log_prior.max()
    with np.errstate(under="ignore"):
        p = np.exp(scores - top)
    p /= p.sum(axis=1, keepdims=True)
    return p


def _score_block(model: TrainedModel, offsets: np.ndarray, feature_ids: np.ndarray) -> np.ndarray:
    """Posteriors for a block of users given CSR offsets into ``feature_ids``."""
    n = offsets.size - 1
    with np.errstate(divide="ignore"):
        log_prior = np.log(model.prior)
    scores = np.tile(log_prior, (n, 1))
    if feature_ids.size and model.M:
        owner = np.repeat(np.arange(n, dtype=np.int64), np.diff(offsets))
        idx = np.searchsorted(model.feature_ids, feature_ids)
        idx[idx >= model.M] = 0
        hit = model.feature_ids[idx] == feature_ids
        if np.any(hit):
            keys = np.unique(owner[hit] * model.M + idx[hit])  # dedup repeated follows
            who, rows = np.divmod(keys, model.M)
            starts = np.flatnonzero(np.r_[True, who[1:] != who[:-1]])
            scores[who[starts]] += np.add.reduceat(model.log_lik[rows], starts, axis=0)
    return _normalize_scores(scores, log_prior)


def predict(model: TrainedModel, followed: Iterable[int]) -> np.ndarray:
    """Posterior over categories for one account; unknown feature ids are ignored."""
    ids = np.fromiter((int(f) for f in followed), dtype=np.uint64)
    return _score_block(model, np.array([0, ids.size]), ids)[0]


def mode(posterior: np.ndarray) -> int:
    """Most probable category, lowest index on ties."""
    return int(np.argmax(posterior))


def predict_stream(model: TrainedModel, groups: Iterable[tuple[int, Sequence[int]]],
                   batch_size: int = 65536) -> Iterator[tuple[int, np.ndarray, int]]:
    """Score (user_id, followed feature ids) groups in ascending user order.

    Memory is bounded by ``batch_size`` users. A user id lower than its
    predecessor means the input is not grouped and raises DataError; a repeated
    id merges into the same group only when adjacent.
    """
    last = -1
    users: list[int] = []
    parts: list[np.ndarray] = []
    for uid, followed in groups:
        uid = int(uid)
        if uid < last:
            raise DataError(f"input not grouped by ascending user id: {uid} after {last}")
        arr = np.asarray(followed, dtype=np.uint64)
        if uid == last and users:
            parts[-1] = np.concatenate([parts[-1], arr])
            continue
        if len(users) >= batch_size:
            yield from _flush(model, users, parts)
            users, parts = [], []
        last = uid
        users.append(uid)
        parts.append(arr)
    if users:
        yield from _flush(model, users, parts)


def _flush(model, users, parts):
    offsets = np.zeros(len(parts) + 1, dtype=np.int64)
    np.cumsum([p.size for p in parts], out=offsets[1:])
    feats = np.concatenate(parts) if parts else np.zeros(0, dtype=np.uint64)
    post = _score_block(model, offsets, feats)
    modes = post.argmax(axis=1)
    for k, uid in enumerate(users):
        yield uid, post[k], int(modes[k])


def group_edge_chunks(chunks: Iterable[tuple[np.ndarray, np.ndarray]]) -> Iterator[tuple[int, np.ndarray]]:
    """Turn (user_ids, feature_ids) chunks sorted by user into per-user groups.

    A user's edges may straddle chunk boundaries; they are carried over.
    """
    carry_user = None
    carry: list[np.ndarray] = []
    for users, feats in chunks:
        if users.size == 0:
            continue
        if np.any(users[1:] < users[:-1]):
            bad = int(np.flatnonzero(users[1:] < users[:-1])[0])
            raise DataError(f"edges not sorted by user id: {int(users[bad + 1])} after {int(users[bad])}")
        starts = np.flatnonzero(np.r_[True, users[1:] != users[:-1]])
        ends = np.r_[starts[1:], users.size]
        for s, e in zip(starts, ends):
            u = int(users[s])
            if carry_user is not None:
                if u == carry_user:
                    carry.append(feats[s:e])
                    continue
                if u < carry_user:
                    raise DataError(f"edges not sorted by user id: {u} after {carry_user}")
                yield carry_user, np.concatenate(carry)
            carry_user, carry = u, [feats[s:e]]
    if carry_user is not None:
        yield carry_user, np.concatenate(carry)


def discriminative_features(model: TrainedModel, a: int, top_k: int) -> list[tuple[int, float]]:
    """Features ranked by P(A = a | X_i = 1), the prior-weighted normalized likelihood row."""
    d = category_given_follow(model)
    order = np.lexsort((model.feature_ids, -d[:, a]))[:top_k]
    return [(int(model.feature_ids[i]), float(d[i, a])) for i in order]


def category_given_follow(model: TrainedModel) -> np.ndarray:
    with np.errstate(divide="ignore"):
        s = model.log_lik + np.log(model.prior)[None, :]
    return _normalize_scores(s, np.log(model.prior))


# -- snapshot ----------------------------------------------------------------

MAGIC = b"FAGEMODL"
VERSION = 1
_HEADER = struct.Struct("<8sIIQddQI")


def save_model(model: TrainedModel, path: str | Path):
    """Write a little-endian binary snapshot; loading it back is bit-exact.

    Layout: header (magic, version, C, M, alpha, K, min_support, taxonomy
    length), taxonomy text, C prior float64, C category-mass float64, then M
    records of (feature_id uint64, C log-likelihood float64), then M follower
    counts float64.
    """
    C, M = model.n_categories, model.M
    tax = model.taxonomy.to_text().encode("utf-8")
    record = np.dtype([("feature_id", "<u8"), ("log_lik", "<f8", (C,))])
    recs = np.zeros(M, dtype=record)
    recs["feature_id"] = model.feature_ids
    recs["log_lik"] = model.log_lik
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, C, M, float(model.hp.alpha), float(model.hp.K),
                              int(model.hp.min_support), len(tax)))
        fh.write(tax)
        fh.write(np.asarray(model.prior, dtype="<f8").tobytes())
        fh.write(np.asarray(model.category_mass, dtype="<f8").tobytes())
        fh.write(recs.tobytes())
        fh.write(np.asarray(model.follower_counts, dtype="<f8").tobytes())


def load_model(path: str | Path) -> TrainedModel:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise DataError(f"{path}: truncated model snapshot")
    magic, version, C, M, alpha, K, min_support, tax_len = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise DataError(f"{path}: not a model snapshot")
    if version != VERSION:
        raise DataError(f"{path}: unsupported snapshot version {version}")
    pos = _HEADER.size
    taxonomy = load_taxonomy(buf[pos:pos + tax_len].decode("utf-8"))
    pos += tax_len

    def take(dtype, count):
        nonlocal pos
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
        pos += arr.nbytes
        return arr

    try:
        prior = take("<f8", C).astype(float)
        mass = take("<f8", C).astype(float)
        recs = take(np.dtype([("feature_id", "<u8"), ("log_lik", "<f8", (C,))]), M)
        n_i = take("<f8", M).astype(float)
    except ValueError:
        raise DataError(f"{path}: truncated model snapshot") from None
    if pos != len(buf):
        raise DataError(f"{path}: {len(buf) - pos} trailing bytes in model snapshot")
    L = np.ascontiguousarray(recs["log_lik"], dtype=float).reshape(M, C)
    ids = recs["feature_id"].astype(np.uint64)
    for arr in (prior, mass, L, n_i, ids):
        arr.setflags(write=False)
    hp = Hyperparameters(alpha, K, int(min_support))
    return TrainedModel(taxonomy, prior, ids, L, hp, mass, n_i)
