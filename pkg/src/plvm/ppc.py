"""Posterior predictive simulation and the model-checking statistic battery.

Every statistic runs through one code path for observed data and replicates,
so a replicate equal to the observed matrix always scores zero discrepancy.
Reports serialize to a long CSV: statistic,feature,time,kind,replicate_id,value.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .corpus import CountMatrix, filter_features
from .exceptions import ConfigError, DomainError
from .inference import PosteriorSamples
from .numeric import Rng, asinh_transform, softmax


@dataclass(frozen=True)
class PpcReport:
    """Observed statistic values next to the same statistic on S replicates."""

    statistic: str
    observed: np.ndarray
    replicates: np.ndarray
    features: tuple[str, ...] | None = None
    times: np.ndarray | None = None

    def __post_init__(self):
        observed = np.asarray(self.observed, dtype=float)
        replicates = np.asarray(self.replicates, dtype=float)
        object.__setattr__(self, "observed", observed)
        object.__setattr__(self, "replicates", replicates)
        if replicates.shape[1:] != observed.shape:
            raise DomainError("replicate statistics must share the observed shape")

    @property
    def n_replicates(self) -> int:
        return self.replicates.shape[0]

    def to_frame(self) -> pd.DataFrame:
        """Long format with one row per (kind, replicate, statistic element)."""
        feature_col, time_col = self._labels()
        rows = [
            pd.DataFrame(
                {
                    "statistic": self.statistic,
                    "feature": feature_col,
                    "time": time_col,
                    "kind": "observed",
                    "replicate_id": "",
                    "value": self.observed.ravel(),
                }
            )
        ]
        for r in range(self.n_replicates):
            rows.append(
                pd.DataFrame(
                    {
                        "statistic": self.statistic,
                        "feature": feature_col,
                        "time": time_col,
                        "kind": "replicate",
                        "replicate_id": str(r),
                        "value": self.replicates[r].ravel(),
                    }
                )
            )
        return pd.concat(rows, ignore_index=True)

    def _labels(self):
        shape = self.observed.shape
        size = self.observed.size
        if self.times is not None and self.observed.ndim == 2:
            # (time, feature) grid
            t_n, f_n = shape
            features = self.features or tuple(str(j) for j in range(f_n))
            feature_col = np.tile(np.asarray(features, dtype=object), t_n)
            time_col = np.repeat(np.asarray(self.times, dtype=object).astype(str), f_n)
            return feature_col, time_col
        if self.features is not None:
            if len(self.features) != size:
                raise DomainError("feature labels do not match statistic length")
            return np.asarray(self.features, dtype=object), np.full(size, "", dtype=object)
        return (
            np.array([str(j) for j in range(size)], dtype=object),
            np.full(size, "", dtype=object),
        )


def write_ppc_reports(reports, csv_path) -> None:
    frames = [r.to_frame() for r in reports]
    table = (
        pd.concat(frames, ignore_index=True)
        if frames
        else pd.DataFrame(columns=["statistic", "feature", "time", "kind", "replicate_id", "value"])
    )
    table.to_csv(Path(csv_path), index=False, lineterminator="\n")


# -- predictive simulation -----------------------------------------------------


def draw_posterior_predictive(
    model: str,
    samples: PosteriorSamples,
    n_replicates: int,
    rng: Rng,
    observed: CountMatrix,
) -> list[CountMatrix]:
    """Simulate ``n_replicates`` datasets, each from one pooled posterior draw.

    Draw indices are uniform with replacement. Multinomial models (lda, dmm,
    unigram) preserve the observed per-sample totals; count totals under gap
    and zgap are generated by the model.
    """
    if n_replicates < 1:
        raise DomainError("need at least one predictive replicate")
    if not samples.params:
        raise DomainError("empty posterior store")
    n_pool = samples.n_chains * samples.n_draws
    totals = observed.counts.sum(axis=1)
    replicate_rngs = rng.split(n_replicates)
    out = []
    for rep_rng in replicate_rngs:
        i = int(rep_rng.integers(0, n_pool))
        counts = _simulate_one(model, samples, i, rep_rng, observed, totals)
        out.append(
            CountMatrix(
                counts,
                observed.sample_ids,
                observed.feature_ids,
                times=observed.times,
                taxonomy=observed.taxonomy,
            )
        )
    return out


def _simulate_one(model, samples, i, rng, observed, totals):
    if model in ("lda", "dmm"):
        beta = samples.pooled("beta")[i]
        if model == "lda":
            probs = samples.pooled("theta")[i] @ beta.T
        else:
            probs = beta.T[samples.pooled("z")[i].astype(np.int64)]
        return rng.multinomial_rows(totals, probs)
    if model == "unigram":
        if observed.times is None:
            raise DomainError("unigram predictive needs sample times")
        _, idx = np.unique(observed.times, return_inverse=True)
        mu = samples.pooled("mu")[i]
        return rng.multinomial_rows(totals, softmax(mu[idx]))
    if model in ("gap", "zgap"):
        lam = samples.pooled("theta")[i] @ samples.pooled("beta")[i].T
        counts = rng.poisson(lam)
        p0 = float(samples.metadata.get("p0", 0.0))
        if model == "zgap" and p0 > 0:
            mask = rng.bernoulli(p0, size=counts.shape)
            counts = np.where(mask, 0, counts)
        return counts
    raise ConfigError(f"unknown model {model!r}")


# -- statistic battery ---------------------------------------------------------


def _scalar_stat(values: np.ndarray, spec: dict) -> np.ndarray:
    kind = spec["kind"]
    if kind == "mean":
        return np.asarray(values, dtype=float).mean(axis=0)
    if kind == "variance":
        return np.asarray(values, dtype=float).var(axis=0, ddof=1)
    if kind == "histogram":
        edges = np.asarray(spec["edges"], dtype=float)
        if edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise DomainError("histogram edges must be strictly increasing, >= 2 of them")
        return np.histogram(np.asarray(values, dtype=float).ravel(), bins=edges)[0].astype(float)
    raise ConfigError(f"unknown scalar statistic {kind!r}")


def ppc_scalar_stats(observed, replicates, spec: dict, features=None) -> PpcReport:
    """Per-dimension mean or variance (over axis 0), or pooled histogram.

    ``spec``: {"kind": "mean" | "variance"} or {"kind": "histogram",
    "edges": [...]}. The identical function is applied to the observed array
    and every replicate.
    """
    obs_stat = _scalar_stat(np.asarray(observed), spec)
    rep_stats = (
        np.stack([_scalar_stat(np.asarray(r), spec) for r in replicates])
        if len(replicates)
        else np.empty((0,) + obs_stat.shape)
    )
    if spec["kind"] == "histogram":
        edges = np.asarray(spec["edges"], dtype=float)
        features = tuple(f"[{lo:g},{hi:g})" for lo, hi in zip(edges[:-1], edges[1:]))
    elif features is not None:
        features = tuple(features)
    return PpcReport(spec["kind"], obs_stat, rep_stats, features=features)


def _slot_series(x: CountMatrix, cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Counts summed per distinct time for selected columns: (times, T x m)."""
    if x.times is None:
        raise DomainError("count matrix has no sample times")
    uniq, idx = np.unique(x.times, return_inverse=True)
    series = np.zeros((uniq.size, cols.size))
    np.add.at(series, idx, x.counts[:, cols].astype(float))
    return uniq, series


def ppc_timeseries(observed: CountMatrix, replicates, feature_subset, transform: str = "asinh") -> PpcReport:
    """Per-(feature, time) trajectories, asinh-transformed.

    Counts from samples sharing a timepoint are summed before transforming.
    The feature subset is a list of feature ids; unknown ids error.
    """
    if transform != "asinh":
        raise ConfigError(f"unknown transform {transform!r}")
    subset = list(feature_subset)
    pos = {f: j for j, f in enumerate(observed.feature_ids)}
    missing = [f for f in subset if f not in pos]
    if missing:
        raise DomainError(f"unknown feature ids: {missing[:5]}")
    cols = np.array([pos[f] for f in subset], dtype=np.int64)
    times, obs_series = _slot_series(observed, cols)
    obs_stat = asinh_transform(obs_series)
    rep_stats = []
    for r in replicates:
        r_times, r_series = _slot_series(r, cols)
        if not np.array_equal(r_times, times):
            raise DomainError("replicate timepoints do not match observed")
        rep_stats.append(asinh_transform(r_series))
    rep_arr = np.stack(rep_stats) if rep_stats else np.empty((0,) + obs_stat.shape)
    return PpcReport("timeseries_asinh", obs_stat, rep_arr, features=tuple(subset), times=times)


@dataclass(frozen=True)
class PcaSummary:
    """Top-r spectrum of a centered matrix: nonincreasing eigenvalues with
    unit-norm score and loading vectors."""

    eigenvalues: np.ndarray
    scores: np.ndarray
    loadings: np.ndarray

    def __post_init__(self):
        eig = np.asarray(self.eigenvalues, dtype=float)
        object.__setattr__(self, "eigenvalues", eig)
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=float))
        object.__setattr__(self, "loadings", np.asarray(self.loadings, dtype=float))
        if np.any(eig < -1e-12) or np.any(np.diff(eig) > 1e-12):
            raise DomainError("eigenvalues must be nonnegative and nonincreasing")

    @property
    def rank(self) -> int:
        return self.eigenvalues.size


def _pca_of_counts(counts: np.ndarray, cols: np.ndarray, rank: int) -> PcaSummary:
    z = asinh_transform(counts[:, cols].astype(float))
    z = z - z.mean(axis=0, keepdims=True)
    u, s, vt = np.linalg.svd(z, full_matrices=False)
    eig = s**2 / max(counts.shape[0] - 1, 1)
    return PcaSummary(eig[:rank], u[:, :rank], vt[:rank].T)


def ppc_pca(observed: CountMatrix, replicates, rank: int, top_m: int) -> tuple[PcaSummary, list[PcaSummary]]:
    """Spectrum check: asinh, top-variance feature filter, center, SVD.

    The feature subset is chosen ONCE from the observed matrix and reused for
    every replicate so spectra are comparable. Eigenvalues are squared
    singular values over (D - 1).
    """
    d_n = observed.n_samples
    if rank < 1 or rank > min(d_n, top_m):
        raise DomainError("rank must satisfy 1 <= r <= min(D, m)")
    kept = filter_features(observed, "top_variance", top_m)
    pos = {f: j for j, f in enumerate(observed.feature_ids)}
    cols = np.array([pos[f] for f in kept.feature_ids], dtype=np.int64)
    obs = _pca_of_counts(observed.counts, cols, rank)
    reps = [_pca_of_counts(r.counts, cols, rank) for r in replicates]
    return obs, reps


def pca_eigenvalue_report(obs: PcaSummary, reps) -> PpcReport:
    """Eigenvalues as a PpcReport, component index in the feature column."""
    rep_arr = (
        np.stack([r.eigenvalues for r in reps])
        if reps
        else np.empty((0, obs.rank))
    )
    labels = tuple(f"eig{j + 1}" for j in range(obs.rank))
    return PpcReport("pca_eigenvalues", obs.eigenvalues, rep_arr, features=labels)


def procrustes_align(reference: PcaSummary, target: PcaSummary) -> PcaSummary:
    """Rotate/reflect target scores onto the reference; loadings follow.

    The optimal orthogonal map is the polar factor of target' @ reference on
    the score space; eigenvalues are untouched.
    """
    if reference.scores.shape != target.scores.shape:
        raise DomainError("score dimensions do not match")
    u, _, vt = np.linalg.svd(target.scores.T @ reference.scores)
    rot = u @ vt
    return PcaSummary(target.eigenvalues, target.scores @ rot, target.loadings @ rot)


def ppc_quantile_qq(observed: CountMatrix, replicates, grid) -> PpcReport:
    """Paired type-7 quantiles of pooled entries, observed vs each replicate.

    No jitter here; jitter is applied only at export time by the report
    module.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0) or np.any(grid >= 1):
        raise DomainError("quantile grid must lie strictly inside (0, 1)")
    obs_q = np.quantile(observed.counts.ravel(), grid, method="linear")
    rep_q = np.stack(
        [np.quantile(r.counts.ravel(), grid, method="linear") for r in replicates]
    ) if replicates else np.empty((0, grid.size))
    labels = tuple(f"q{100 * p:g}" for p in grid)
    return PpcReport("quantile_qq", obs_q, rep_q, features=labels)


def species_discrepancy(observed: CountMatrix, replicates, transform: str = "asinh") -> pd.DataFrame:
    """Mean |asinh observed - asinh replicate| per feature over times and
    replicates, ranked descending (ties by feature id)."""
    if transform != "asinh":
        raise ConfigError(f"unknown transform {transform!r}")
    cols = np.arange(observed.n_features, dtype=np.int64)
    times, obs_series = _slot_series(observed, cols)
    obs_t = asinh_transform(obs_series)
    total = np.zeros(observed.n_features)
    count = 0
    for r in replicates:
        r_times, r_series = _slot_series(r, cols)
        if not np.array_equal(r_times, times):
            raise DomainError("replicate timepoints do not match observed")
        total += np.abs(obs_t - asinh_transform(r_series)).mean(axis=0)
        count += 1
    scores = total / max(count, 1)
    table = pd.DataFrame({"feature": observed.feature_ids, "score": scores})
    return table.sort_values(["score", "feature"], ascending=[False, True], ignore_index=True)


def default_battery(observed: CountMatrix, replicates, pca_rank: int = 2, pca_top_m: int | None = None) -> list[PpcReport]:
    """The standard report set: per-feature means and variances, pooled count
    histogram, quantile qq, plus time-keyed statistics when times exist."""
    rep_counts = [r.counts for r in replicates]
    reports = [
        ppc_scalar_stats(observed.counts, rep_counts, {"kind": "mean"}, features=observed.feature_ids),
        ppc_scalar_stats(observed.counts, rep_counts, {"kind": "variance"}, features=observed.feature_ids),
        ppc_scalar_stats(
            observed.counts,
            rep_counts,
            {"kind": "histogram", "edges": [0, 1, 2, 5, 10, 100, np.inf]},
        ),
        ppc_quantile_qq(observed, replicates, np.linspace(0.05, 0.95, 19)),
    ]
    d_n = observed.n_samples
    top_m = pca_top_m or min(observed.n_features, 50)
    rank = min(pca_rank, d_n, top_m)
    obs_pca, rep_pca = ppc_pca(observed, replicates, rank, top_m)
    reports.append(pca_eigenvalue_report(obs_pca, rep_pca))
    if observed.times is not None:
        reports.append(ppc_timeseries(observed, replicates, observed.feature_ids))
    return reports
