"""Leave-one-out influence scores for labelled accounts and MAD-based flagging.

The influence of account i is the KL divergence, in nats, between its own
predictive posterior under the full counts and under the counts with i's
label mass removed. Only n_a and the n_ia rows of features i follows change,
so each score costs O(|F_i| x categories). The selected feature set and the
follower counts n_i are held fixed when i is removed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ingestion import DataError, FeatureMetadata, FollowGraph, LabeledAccount
from .model import Hyperparameters, ModelCounts, _labelled_edges, accumulate_counts, log_follow_probability
from .taxonomy import AgeTaxonomy, validate_prior


@dataclass(frozen=True)
class InfluenceScore:
    user_id: int
    score: float


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats with 0 ln 0 = 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    for name, v in (("p", p), ("q", q)):
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} is not a probability vector")
    support = p > 0
    if np.any(q[support] <= 0):
        raise ValueError("q is zero where p is positive")
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def _log_softmax(s: np.ndarray) -> np.ndarray:
    top = s.max(axis=1, keepdims=True)
    with np.errstate(under="ignore"):
        z = np.log(np.exp(s - top).sum(axis=1, keepdims=True))
    return s - top - z


def _kl_rows(log_p: np.ndarray, log_q: np.ndarray) -> np.ndarray:
    p = np.exp(log_p)
    with np.errstate(invalid="ignore"):
        terms = np.where(p > 0, p * (log_p - log_q), 0.0)
    return np.maximum(terms.sum(axis=1), 0.0)


def _scores_for_block(counts, n_i, full_L, log_prior, hp, W, rows, cols, lo, hi):
    """Scores for accounts ``lo..hi-1``; rows/cols are that block's labelled edges."""
    n = hi - lo
    s_full = np.tile(log_prior, (n, 1))
    s_loo = s_full.copy()
    if rows.size:
        local = rows - lo
        w = W[rows]
        na_loo = np.maximum(counts.n_a[None, :] - w, 0.0)
        nia_loo = np.maximum(counts.n_ia[cols] - w, 0.0)
        L_loo = log_follow_probability(nia_loo, na_loo, n_i[cols][:, None], hp.alpha, hp.K)
        np.add.at(s_full, local, full_L[cols])
        np.add.at(s_loo, local, L_loo)
    return _kl_rows(_log_softmax(s_full), _log_softmax(s_loo))


def loo_influence(counts: ModelCounts, labels: Sequence[LabeledAccount], graph: FollowGraph,
                  prior, hp: Hyperparameters, workers: int = 1, block: int = 4096) -> list[InfluenceScore]:
    """Influence score per labelled account, ordered by user id.

    Accounts following no selected feature score 0: both posteriors equal the prior.
    """
    C = counts.n_a.size
    prior = validate_prior(prior, C)
    with np.errstate(divide="ignore"):
        log_prior = np.log(prior)
    labels = sorted(labels, key=lambda acc: acc.user_id)
    W = np.array([acc.weights for acc in labels], dtype=float).reshape(len(labels), C)
    n_i = counts.resolved_follower_counts(hp)
    full_L = log_follow_probability(counts.n_ia, counts.n_a[None, :], n_i[:, None], hp.alpha, hp.K)
    rows, cols = _labelled_edges(graph, labels, counts.feature_ids)
    bounds = [(lo, min(lo + block, len(labels))) for lo in range(0, len(labels), block)]
    cuts = np.searchsorted(rows, [b[0] for b in bounds] + [len(labels)])

    def work(k):
        lo, hi = bounds[k]
        sl = slice(cuts[k], cuts[k + 1])
        return _scores_for_block(counts, n_i, full_L, log_prior, hp, W, rows[sl], cols[sl], lo, hi)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(work, range(len(bounds))))
    else:
        parts = [work(k) for k in range(len(bounds))]
    scores = np.concatenate(parts) if parts else np.zeros(0)
    return [InfluenceScore(acc.user_id, float(s)) for acc, s in zip(labels, scores)]


def mad_threshold(scores, k: float = 3.0) -> float:
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise ValueError("no scores to threshold")
    med = np.median(s)
    mad = np.median(np.abs(s - med))
    return float(med + k * mad)


def mad_flag(scores: Sequence[InfluenceScore], k: float = 3.0) -> set[int]:
    """User ids whose score exceeds median + k * MAD (strictly).

    When MAD is zero this reduces to flagging everything above the median.
    """
    if not scores:
        raise ValueError("no scores to flag")
    cut = mad_threshold([s.score for s in scores], k)
    return {s.user_id for s in scores if s.score > cut}


@dataclass(frozen=True)
class FlagRow:
    user_id: int
    score: float
    flagged: bool


def clean_labels(labels: Sequence[LabeledAccount], graph: FollowGraph, metadata: dict[int, FeatureMetadata],
                 t: AgeTaxonomy, prior, hp: Hyperparameters, k: float = 3.0,
                 workers: int = 1) -> tuple[list[LabeledAccount], list[FlagRow]]:
    if not labels:
        raise DataError("no labelled accounts to clean")
    counts = accumulate_counts(graph, labels, metadata, t, hp)
    scores = loo_influence(counts, labels, graph, prior, hp, workers=workers)
    flagged = mad_flag(scores, k)
    report = [FlagRow(s.user_id, s.score, s.user_id in flagged) for s in scores]
    kept = [acc for acc in sorted(labels, key=lambda a: a.user_id) if acc.user_id not in flagged]
    return kept, report


def write_flag_report(rows: Sequence[FlagRow], path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(f"{r.user_id}\t{r.score!r}\t{int(r.flagged)}\n")
