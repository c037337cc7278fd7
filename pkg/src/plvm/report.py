"""Topic summaries and tidy plot-data exports.

Representativeness of feature v for topic k is
``r_kv = beta_kv - sum_{k' != k} beta_k'v``: large when the feature is
abundant under topic k and rare under the others. Exports are plain CSVs with
one row per plotted element; interval kinds carry the 2.5/25/50/75/97.5%
posterior quantiles. Transforms (g for probability intervals, asinh for
predictive overlays) are applied to draws before quantiles are taken.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from .corpus import Taxonomy
from .exceptions import BoundsError, ConfigError, DomainError
from .inference import PosteriorSamples
from .numeric import Rng, g_transform
from .ppc import PpcReport

QUANTILE_PROBS = (0.025, 0.25, 0.5, 0.75, 0.975)
QUANTILE_COLS = ("q025", "q25", "q50", "q75", "q975")


def _check_topic_matrix(beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 2:
        raise DomainError("topic matrix must be V x K")
    if not np.all(np.isfinite(beta)) or np.any(beta < 0):
        raise DomainError("topic matrix entries must be finite and nonnegative")
    return beta


def representativeness_scores(beta) -> np.ndarray:
    """V x K matrix of r_kv = 2 beta_kv - rowsum(beta)."""
    beta = _check_topic_matrix(beta)
    return 2.0 * beta - beta.sum(axis=1, keepdims=True)


def representativeness_table(beta, feature_ids=None) -> pd.DataFrame:
    """Full table over all features and topics; ranks 1..V within a topic by
    nonincreasing score, ties by feature id."""
    scores = representativeness_scores(beta)
    v_n, k_n = scores.shape
    if feature_ids is None:
        feature_ids = tuple(f"f{j:04d}" for j in range(v_n))
    if len(feature_ids) != v_n:
        raise DomainError("feature_ids length does not match topic matrix")
    parts = []
    for k in range(k_n):
        part = pd.DataFrame(
            {"feature": list(feature_ids), "topic": k + 1, "score": scores[:, k]}
        ).sort_values(["score", "feature"], ascending=[False, True], ignore_index=True)
        part["rank"] = np.arange(1, v_n + 1)
        parts.append(part)
    return pd.concat(parts, ignore_index=True)


def topic_representativeness(beta, k: int, top_m: int, feature_ids=None) -> pd.DataFrame:
    """Top-m features for topic k (1-based), ranked by descending r_kv."""
    beta = _check_topic_matrix(beta)
    v_n, k_n = beta.shape
    if not 1 <= k <= k_n:
        raise BoundsError(f"topic {k} out of range for K={k_n}")
    if not 1 <= top_m <= v_n:
        raise BoundsError(f"top_m={top_m} out of range for V={v_n}")
    table = representativeness_table(beta, feature_ids)
    slice_k = table[table["topic"] == k].head(top_m).reset_index(drop=True)
    return slice_k


def family_representativeness(beta, taxonomy: Taxonomy, feature_ids=None) -> pd.DataFrame:
    """Mean r_kv per (family, topic) with the family size attached.

    Features with a blank family label are grouped under "unknown".
    """
    scores = representativeness_scores(beta)
    v_n, k_n = scores.shape
    if taxonomy is None:
        raise DomainError("taxonomy required for family aggregation")
    if len(taxonomy.family) != v_n:
        raise DomainError("taxonomy length does not match topic matrix")
    families = np.array(
        [fam if str(fam).strip() else "unknown" for fam in taxonomy.family], dtype=object
    )
    long = pd.DataFrame(
        {
            "family": np.repeat(families, k_n),
            "topic": np.tile(np.arange(1, k_n + 1), v_n),
            "score": scores.ravel(),
        }
    )
    grouped = (
        long.groupby(["family", "topic"], as_index=False)
        .agg(mean_score=("score", "mean"), family_size=("score", "size"))
        .sort_values(["family", "topic"], ignore_index=True)
    )
    return grouped


# -- plot-data exports ---------------------------------------------------------


def _five_quantiles(draws: np.ndarray) -> dict[str, np.ndarray]:
    """Quantiles over axis 0; values keyed by column name."""
    q = np.quantile(draws, QUANTILE_PROBS, axis=0, method="linear")
    return {col: q[i].ravel() for i, col in enumerate(QUANTILE_COLS)}


def _centered_log(mu: np.ndarray) -> np.ndarray:
    """g of the softmax rows collapses to row-centering of mu."""
    return mu - mu.mean(axis=-1, keepdims=True)


def export_plot_data(kind: str, path, **inputs) -> pd.DataFrame:
    """Write one tidy CSV for a figure kind and return the table.

    kinds and their required inputs:

    * ``theta_boxes``: samples (with "theta"), sample_ids, optional times ->
      ``sample_id,time,topic,q025,q25,q50,q75,q975`` (raw probability scale).
    * ``beta_intervals``: samples (with "beta"), feature_ids -> per
      (feature, topic) quantiles of g-transformed topic columns.
    * ``mu_intervals``: samples (with "mu"), feature_ids, times -> per
      (time, feature) quantiles of row-centered mu (the g scale of the
      implied probabilities).
    * ``ppc_overlay``: report (a PpcReport) -> the report's long table, with
      optional uniform [0, 0.2) jitter added to values when ``jitter_rng`` is
      given; a ``jittered`` column flags it either way.
    * ``representativeness``: beta, optional feature_ids, optional top_m.
    """
    builders = {
        "theta_boxes": _export_theta_boxes,
        "beta_intervals": _export_beta_intervals,
        "mu_intervals": _export_mu_intervals,
        "ppc_overlay": _export_ppc_overlay,
        "representativeness": _export_representativeness,
    }
    if kind not in builders:
        raise ConfigError(f"unknown export kind {kind!r}")
    table = builders[kind](**inputs)
    table.to_csv(Path(path), index=False, lineterminator="\n")
    return table


def _export_theta_boxes(samples: PosteriorSamples, sample_ids, times=None) -> pd.DataFrame:
    draws = samples.pooled("theta")
    _, d_n, k_n = draws.shape
    if len(sample_ids) != d_n:
        raise DomainError("sample_ids length does not match theta draws")
    if times is None:
        time_col = np.full(d_n, "", dtype=object)
    else:
        times = np.asarray(times)
        if times.shape != (d_n,):
            raise DomainError("times length does not match theta draws")
        time_col = times.astype(object)
    table = pd.DataFrame(
        {
            "sample_id": np.repeat(np.asarray(sample_ids, dtype=object), k_n),
            "time": np.repeat(time_col, k_n),
            "topic": np.tile(np.arange(1, k_n + 1), d_n),
        }
    )
    for col, vals in _five_quantiles(draws).items():
        table[col] = vals
    return table


def _export_beta_intervals(samples: PosteriorSamples, feature_ids) -> pd.DataFrame:
    draws = samples.pooled("beta")
    n, v_n, k_n = draws.shape
    if len(feature_ids) != v_n:
        raise DomainError("feature_ids length does not match beta draws")
    transformed = np.empty_like(draws)
    for k in range(k_n):
        transformed[:, :, k] = g_transform(draws[:, :, k])
    table = pd.DataFrame(
        {
            "feature": np.repeat(np.asarray(feature_ids, dtype=object), k_n),
            "topic": np.tile(np.arange(1, k_n + 1), v_n),
        }
    )
    for col, vals in _five_quantiles(transformed).items():
        table[col] = vals
    return table


def _export_mu_intervals(samples: PosteriorSamples, feature_ids, times) -> pd.DataFrame:
    draws = samples.pooled("mu")
    n, t_n, v_n = draws.shape
    if times is None:
        raise DomainError("mu_intervals needs the slot times")
    times = np.asarray(times)
    if times.shape != (t_n,):
        raise DomainError("times length does not match mu draws")
    if len(feature_ids) != v_n:
        raise DomainError("feature_ids length does not match mu draws")
    transformed = _centered_log(draws)
    table = pd.DataFrame(
        {
            "time": np.repeat(times.astype(object), v_n),
            "feature": np.tile(np.asarray(feature_ids, dtype=object), t_n),
        }
    )
    for col, vals in _five_quantiles(transformed).items():
        table[col] = vals
    return table


def _export_ppc_overlay(report: PpcReport, jitter_rng: Rng | None = None) -> pd.DataFrame:
    table = report.to_frame()
    if jitter_rng is not None:
        table["value"] = table["value"].to_numpy() + jitter_rng.uniform(size=len(table)) * 0.2
        table["jittered"] = True
    else:
        table["jittered"] = False
    return table


def _export_representativeness(beta, feature_ids=None, top_m: int | None = None) -> pd.DataFrame:
    table = representativeness_table(beta, feature_ids)
    if top_m is not None:
        v_n = np.asarray(beta).shape[0]
        if not 1 <= top_m <= v_n:
            raise BoundsError(f"top_m={top_m} out of range for V={v_n}")
        table = table[table["rank"] <= top_m].reset_index(drop=True)
    return table
