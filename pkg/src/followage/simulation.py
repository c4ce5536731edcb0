"""Synthetic labelled follow graphs drawn from the hierarchical generative model.

1. each user draws a category A ~ Cat(pi)
2. each (feature, category) draws mu_ia ~ Beta(b_ia, c_a) once per run, with
   b_ia = alpha * n_a * n_i / K and c_a = alpha * n_a
3. each user follows feature i with probability mu_{i,A}

n_a defaults to the expected number of users per category (num_users * pi_a),
which makes the generator the same prior the trainer assumes for that alpha.
``pseudo_counts`` replaces n_a for sharper or flatter mu tables.

Label flips for ``outlier_fraction`` of users happen after the edges are drawn;
they exist only to exercise the cleaning stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingestion import FeatureMetadata, FollowGraph, LabeledAccount, write_feature_metadata, write_labels
from .model import TWITTER_POPULATION, TrainedModel
from .taxonomy import DEFAULT_TAXONOMY, AgeTaxonomy, default_prior, validate_prior


@dataclass(frozen=True)
class SimConfig:
    num_users: int
    num_features: int
    seed: int
    taxonomy: AgeTaxonomy = DEFAULT_TAXONOMY
    prior: tuple[float, ...] | None = None  # None = default prior of the taxonomy
    K: float = TWITTER_POPULATION
    alpha: float = 1.0
    follower_range: tuple[float, float] = (7e5, 7e6)  # log-uniform n_i targets
    follower_counts: tuple[int, ...] | None = None  # explicit n_i, overrides the range
    pseudo_counts: tuple[float, ...] | None = None  # replaces n_a in the Beta construction
    true_mu: np.ndarray | None = None  # (features, categories); skips the Beta draws
    outlier_fraction: float = 0.0
    chunk_users: int = 8192

    def __post_init__(self):
        if self.num_users < 1 or self.num_features < 1:
            raise ValueError("num_users and num_features must be positive")
        if not 0 <= self.outlier_fraction < 1:
            raise ValueError("outlier_fraction must be in [0, 1)")
        if self.alpha <= 0 or self.K <= 0:
            raise ValueError("alpha and K must be positive")
        lo, hi = self.follower_range
        if not 0 < lo <= hi:
            raise ValueError("follower_range must satisfy 0 < low <= high")

    def resolved_prior(self) -> np.ndarray:
        if self.prior is None:
            return default_prior(self.taxonomy)
        return validate_prior(self.prior, len(self.taxonomy))


@dataclass
class SimulatedData:
    config: SimConfig
    categories: np.ndarray  # true category per user
    labels: np.ndarray  # observed (possibly flipped) category per user
    outliers: np.ndarray  # bool mask of flipped users
    follower_counts: np.ndarray  # n_i per feature (integers)
    mu: np.ndarray  # (features, categories)
    offsets: np.ndarray  # CSR over users
    features: np.ndarray  # dense feature index per edge

    @property
    def user_ids(self) -> np.ndarray:
        return np.arange(self.categories.size, dtype=np.uint64)

    @property
    def feature_ids(self) -> np.ndarray:
        return np.arange(self.mu.shape[0], dtype=np.uint64)

    @property
    def n_edges(self) -> int:
        return int(self.features.size)

    def graph(self) -> FollowGraph:
        return FollowGraph(self.user_ids, self.offsets.copy(), self.features.astype(np.uint64))

    def labelled_accounts(self, observed: bool = True) -> list[LabeledAccount]:
        cats = self.labels if observed else self.categories
        C = self.mu.shape[1]
        eye = np.eye(C)
        return [LabeledAccount(int(u), "explicit_age", eye[c].copy()) for u, c in enumerate(cats)]

    def metadata(self) -> dict[int, FeatureMetadata]:
        return {i: FeatureMetadata(i, int(n)) for i, n in enumerate(self.follower_counts)}


def beta_parameters(n_a, n_i, alpha: float, K: float) -> tuple[np.ndarray, np.ndarray]:
    """(b_ia, c_a) broadcast to (features, categories)."""
    n_a = np.asarray(n_a, dtype=float)
    n_i = np.asarray(n_i, dtype=float)
    b = alpha * n_a[None, :] * n_i[:, None] / K
    c = np.broadcast_to(alpha * n_a[None, :], b.shape)
    return b, c


def simulate(config: SimConfig) -> SimulatedData:
    prior = config.resolved_prior()
    C = len(config.taxonomy)
    N, M = config.num_users, config.num_features
    ss = np.random.SeedSequence(config.seed)
    s_cat, s_ni, s_mu, s_out, s_edges = ss.spawn(5)

    categories = np.random.default_rng(s_cat).choice(C, size=N, p=prior)

    if config.follower_counts is not None:
        n_i = np.asarray(config.follower_counts, dtype=float)
        if n_i.shape != (M,):
            raise ValueError(f"follower_counts has {n_i.size} entries for {M} features")
    else:
        lo, hi = config.follower_range
        n_i = np.round(np.exp(np.random.default_rng(s_ni).uniform(np.log(lo), np.log(hi), size=M)))

    if config.true_mu is not None:
        mu = np.asarray(config.true_mu, dtype=float)
        if mu.shape != (M, C) or np.any(mu < 0) or np.any(mu > 1):
            raise ValueError(f"true_mu must be a ({M}, {C}) table of probabilities")
    else:
        n_a = (np.asarray(config.pseudo_counts, dtype=float) if config.pseudo_counts is not None
               else N * prior)
        b, c = beta_parameters(n_a, n_i, config.alpha, config.K)
        if np.any(b <= 0) or np.any(c <= 0):
            raise ValueError("degenerate Beta parameters (<= 0); check prior, pseudo_counts and follower counts")
        mu = np.random.default_rng(s_mu).beta(b, c)

    offsets = np.zeros(N + 1, dtype=np.int64)
    parts = []
    # one independent substream per user chunk; output depends on (seed, chunk_users)
    chunk_seeds = s_edges.spawn((N + config.chunk_users - 1) // config.chunk_users)
    for k, lo in enumerate(range(0, N, config.chunk_users)):
        hi = min(lo + config.chunk_users, N)
        rng = np.random.default_rng(chunk_seeds[k])
        follows = rng.random((hi - lo, M)) < mu[:, categories[lo:hi]].T
        users, feats = np.nonzero(follows)
        offsets[lo + 1:hi + 1] = np.bincount(users, minlength=hi - lo)
        parts.append(feats.astype(np.int64))
    np.cumsum(offsets, out=offsets)
    features = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)

    labels = categories.copy()
    outliers = np.zeros(N, dtype=bool)
    n_out = int(round(config.outlier_fraction * N))
    if n_out:
        rng = np.random.default_rng(s_out)
        who = rng.choice(N, size=n_out, replace=False)
        labels[who] = (categories[who] + rng.integers(1, C, size=n_out)) % C
        outliers[who] = True

    return SimulatedData(config, categories, labels, outliers, n_i.astype(np.int64), mu, offsets, features)


def write_simulation(data: SimulatedData, outdir: str | Path) -> dict[str, Path]:
    """Write edges, labels, metadata and true mu files in the ingestion formats."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / f"{name}.tsv" for name in ("edges", "labels", "metadata", "true_mu")}
    with open(paths["edges"], "w", encoding="utf-8", newline="\n") as fh:
        deg = np.diff(data.offsets)
        users = np.repeat(np.arange(deg.size), deg)
        for lo in range(0, users.size, 1 << 20):
            u, f = users[lo:lo + (1 << 20)], data.features[lo:lo + (1 << 20)]
            fh.write("".join(f"{a}\t{b}\n" for a, b in zip(u.tolist(), f.tolist())))
    write_labels(data.labelled_accounts(), data.config.taxonomy, paths["labels"])
    write_feature_metadata({i: int(n) for i, n in enumerate(data.follower_counts)}, paths["metadata"])
    with open(paths["true_mu"], "w", encoding="utf-8", newline="\n") as fh:
        for i, row in enumerate(data.mu):
            for a, v in enumerate(row):
                fh.write(f"{i}\t{a}\t{float(v)!r}\n")
    return paths


def generate(config: SimConfig, outdir: str | Path) -> dict[str, Path]:
    return write_simulation(simulate(config), outdir)


def read_true_mu(path: str | Path) -> dict[int, np.ndarray]:
    rows: dict[int, dict[int, float]] = {}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            if raw.strip():
                i, a, v = raw.rstrip("\n").split("\t")
                rows.setdefault(int(i), {})[int(a)] = float(v)
    C = 1 + max((max(r) for r in rows.values()), default=-1)
    return {i: np.array([r[a] for a in range(C)]) for i, r in rows.items()}


# -- recovery ----------------------------------------------------------------

DEFAULT_BUCKETS = (0, 100, 500, 2000, 10000, np.inf)


@dataclass
class BucketStats:
    low: float
    high: float
    cells: int
    mean_abs: float
    max_abs: float
    mean_signed: float


def recovery_errors(true_mu: dict[int, np.ndarray], model: TrainedModel) -> tuple[np.ndarray, np.ndarray]:
    """(signed error table estimated - true, effective observations per cell).

    A cell's effective observations are the labelled mass n_a of its category,
    i.e. the number of Bernoulli trials informing it.
    """
    model_ids = [int(f) for f in model.feature_ids]
    if set(model_ids) - set(true_mu):
        raise ValueError("model has features missing from the true mu table")
    truth = np.array([true_mu[f] for f in model_ids]).reshape(model.M, model.n_categories)
    signed = np.exp(model.log_lik) - truth
    eff = np.broadcast_to(model.category_mass[None, :], signed.shape)
    return signed, eff


def recovery_report(true_mu: dict[int, np.ndarray], model: TrainedModel,
                    buckets=DEFAULT_BUCKETS) -> list[BucketStats]:
    signed, eff = recovery_errors(true_mu, model)
    stats = []
    for lo, hi in zip(buckets, buckets[1:]):
        sel = (eff >= lo) & (eff < hi)
        if not np.any(sel):
            continue
        e = signed[sel]
        stats.append(BucketStats(lo, hi, int(e.size), float(np.abs(e).mean()), float(np.abs(e).max()),
                                 float(e.mean())))
    return stats


def format_recovery(stats) -> str:
    lines = ["low\thigh\tcells\tmean_abs\tmax_abs\tmean_signed"]
    lines += [f"{s.low:g}\t{s.high:g}\t{s.cells}\t{s.mean_abs:.6g}\t{s.max_abs:.6g}\t{s.mean_signed:.6g}"
              for s in stats]
    return "\n".join(lines) + "\n"
