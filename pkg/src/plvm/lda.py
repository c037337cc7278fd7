"""Latent Dirichlet allocation and its single-membership special case.

Simulation, marginal log likelihood, collapsed Gibbs sampling, and conjugate
mean-field coordinate ascent. Token-level Gibbs state is stored as per-(d, v)
topic count vectors rather than per-read label arrays, so memory scales with
the number of nonzero cells, not the number of reads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import digamma, gammaln

from .corpus import CountMatrix
from .exceptions import ConfigError, DomainError, NumericalError
from .inference import CaviOptions, McmcOptions, PosteriorSamples
from .numeric import PROB_TOL, Rng, assert_prob_vector, softmax


def _as_concentration(value, length: int, name: str) -> np.ndarray:
    vec = np.asarray(value, dtype=float)
    if vec.ndim == 0:
        vec = np.full(length, float(vec))
    if vec.shape != (length,) or np.any(vec <= 0) or not np.all(np.isfinite(vec)):
        raise DomainError(f"{name} must be a positive scalar or length-{length} vector")
    return vec


def _check_simplex_rows(arr: np.ndarray, name: str) -> None:
    if np.any(arr < 0) or np.any(np.abs(arr.sum(axis=-1) - 1.0) > PROB_TOL):
        raise DomainError(f"{name} rows must lie on the probability simplex")


def _sample_ids(d: int) -> list[str]:
    return [f"s{i:04d}" for i in range(d)]


def _feature_ids(v: int) -> list[str]:
    return [f"f{j:04d}" for j in range(v)]


@dataclass(frozen=True)
class LdaParams:
    """Mixed-membership parameters: theta rows and beta columns are simplexes."""

    theta: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    k: int

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "beta", beta)
        if self.k < 1 or theta.shape[1] != self.k or beta.shape[1] != self.k:
            raise DomainError("theta and beta must have K columns with K >= 1")
        _check_simplex_rows(theta, "theta")
        _check_simplex_rows(beta.T, "beta columns")
        object.__setattr__(self, "alpha", _as_concentration(self.alpha, self.k, "alpha"))
        object.__setattr__(self, "gamma", _as_concentration(self.gamma, beta.shape[0], "gamma"))


@dataclass(frozen=True)
class DmmParams:
    """Single-membership parameters: one topic label per sample."""

    z: np.ndarray
    theta: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.int64)
        theta = np.asarray(self.theta, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "beta", beta)
        k = theta.size
        if beta.shape[1] != k:
            raise DomainError("beta must have one column per mixture component")
        if z.size and (z.min() < 0 or z.max() >= k):
            raise DomainError("labels must lie in {0..K-1}")
        _check_simplex_rows(theta[None, :], "theta")
        _check_simplex_rows(beta.T, "beta columns")
        object.__setattr__(self, "gamma", _as_concentration(self.gamma, beta.shape[0], "gamma"))


def _per_sample_totals(n, d: int) -> np.ndarray:
    totals = np.asarray(n)
    if totals.ndim == 0:
        totals = np.full(d, int(totals))
    totals = totals.astype(np.int64)
    if totals.shape != (d,) or np.any(totals < 0):
        raise DomainError("per-sample totals must be nonnegative, one per sample")
    return totals


def simulate_lda(d: int, v: int, k: int, n, alpha, gamma, rng: Rng) -> tuple[CountMatrix, LdaParams]:
    """Draw topics, memberships, and counts: x_d ~ Mult(N_d, B theta_d)."""
    if d < 1 or v < 1 or k < 1:
        raise DomainError("D, V, K must all be at least 1")
    alpha = _as_concentration(alpha, k, "alpha")
    gamma = _as_concentration(gamma, v, "gamma")
    totals = _per_sample_totals(n, d)
    beta = rng.dirichlet_matrix(gamma, k).T  # V x K, columns on the simplex
    theta = rng.dirichlet_matrix(alpha, d)  # D x K rows
    probs = theta @ beta.T
    counts = rng.multinomial_rows(totals, probs)
    x = CountMatrix(counts, _sample_ids(d), _feature_ids(v))
    return x, LdaParams(theta, beta, alpha, gamma, k)


def simulate_dmm(d: int, v: int, k: int, n, theta, gamma, rng: Rng) -> tuple[CountMatrix, DmmParams]:
    """Single-membership counterpart: z_d ~ Cat(theta), x_d ~ Mult(N_d, beta_{z_d})."""
    if d < 1 or v < 1 or k < 1:
        raise DomainError("D, V, K must all be at least 1")
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (k,):
        raise DomainError("theta must have one weight per mixture component")
    assert_prob_vector(theta)
    gamma = _as_concentration(gamma, v, "gamma")
    totals = _per_sample_totals(n, d)
    beta = rng.dirichlet_matrix(gamma, k).T
    z = rng.categorical(theta, d)
    counts = rng.multinomial_rows(totals, beta.T[z])
    x = CountMatrix(counts, _sample_ids(d), _feature_ids(v))
    return x, DmmParams(z, theta, beta, gamma)


def lda_log_likelihood(x: CountMatrix, params: LdaParams) -> float:
    """Marginal log likelihood sum_d log Mult(x_d | N_d, B theta_d).

    Includes the multinomial coefficient. Any positive count at a zero
    predicted probability yields -inf rather than an error.
    """
    counts = x.counts
    if counts.shape != (params.theta.shape[0], params.beta.shape[0]):
        raise DomainError("count matrix shape does not match parameters")
    probs = params.theta @ params.beta.T
    if np.any((counts > 0) & (probs == 0.0)):
        return -np.inf
    totals = counts.sum(axis=1)
    coeff = gammaln(totals + 1).sum() - gammaln(counts + 1).sum()
    with np.errstate(divide="ignore"):
        logp = np.where(counts > 0, np.log(np.where(probs > 0, probs, 1.0)), 0.0)
    return float(coeff + (counts * logp).sum())


# -- collapsed Gibbs ---------------------------------------------------------


@njit(cache=True)
def _lda_sweep(token_d, token_v, token_cell, z, n_cell, n_dk, n_vk, n_k, alpha, gamma, gamma_sum, u):
    """One systematic scan over all tokens, consuming one uniform per token.

    Tokens are visited in a fixed order; visiting order must not depend on
    the current labels or the scan stops targeting the posterior.
    """
    n_tokens = z.size
    k_topics = n_k.size
    probs = np.empty(k_topics)
    for t in range(n_tokens):
        d = token_d[t]
        v = token_v[t]
        c = token_cell[t]
        k_old = z[t]
        n_cell[c, k_old] -= 1
        n_dk[d, k_old] -= 1
        n_vk[v, k_old] -= 1
        n_k[k_old] -= 1
        total = 0.0
        for k in range(k_topics):
            p = (
                (alpha[k] + n_dk[d, k])
                * (gamma[v] + n_vk[v, k])
                / (gamma_sum + n_k[k])
            )
            probs[k] = p
            total += p
        r = u[t] * total
        k_new = k_topics - 1
        acc = 0.0
        for k in range(k_topics - 1):
            acc += probs[k]
            if r < acc:
                k_new = k
                break
        z[t] = k_new
        n_cell[c, k_new] += 1
        n_dk[d, k_new] += 1
        n_vk[v, k_new] += 1
        n_k[k_new] += 1


def _lda_chain(counts, k, alpha, gamma, opts: McmcOptions, rng: Rng, record_labels: bool):
    d_n, v_n = counts.shape
    cell_d, cell_v = np.nonzero(counts)
    cell_d = cell_d.astype(np.int64)
    cell_v = cell_v.astype(np.int64)
    cell_x = counts[cell_d, cell_v].astype(np.int64)
    total_tokens = int(cell_x.sum())
    # uniform random initial labels, grouped into per-cell count vectors
    init_probs = np.full((cell_x.size, k), 1.0 / k)
    n_cell = rng.multinomial_rows(cell_x, init_probs)
    n_dk = np.zeros((d_n, k), dtype=np.int64)
    n_vk = np.zeros((v_n, k), dtype=np.int64)
    np.add.at(n_dk, cell_d, n_cell)
    np.add.at(n_vk, cell_v, n_cell)
    n_k = n_cell.sum(axis=0)
    gamma_sum = float(gamma.sum())
    # explicit per-token state, cell-major order matching the initial counts
    token_d = np.repeat(cell_d, cell_x)
    token_v = np.repeat(cell_v, cell_x)
    token_cell = np.repeat(np.arange(cell_x.size, dtype=np.int64), cell_x)
    z = np.repeat(np.tile(np.arange(k, dtype=np.int64), cell_x.size), n_cell.ravel())

    theta_draws = np.empty((opts.n_retained, d_n, k))
    beta_draws = np.empty((opts.n_retained, v_n, k))
    cell_draws = np.empty((opts.n_retained, cell_x.size, k)) if record_labels else None
    kept = 0
    for sweep in range(1, opts.iters + 1):
        u = rng.uniform(size=total_tokens)
        _lda_sweep(token_d, token_v, token_cell, z, n_cell, n_dk, n_vk, n_k, alpha, gamma, gamma_sum, u)
        if sweep > opts.warmup and (sweep - opts.warmup) % opts.thin == 0:
            theta_draws[kept] = rng.dirichlet_rows(alpha[None, :] + n_dk)
            beta_draws[kept] = rng.dirichlet_rows(gamma[None, :] + n_vk.T).T
            if record_labels:
                cell_draws[kept] = n_cell
            kept += 1
    return theta_draws, beta_draws, cell_draws, (cell_d, cell_v)


def fit_lda_gibbs(
    x: CountMatrix,
    k: int,
    alpha,
    gamma,
    opts: McmcOptions | None = None,
    record_labels: bool = False,
) -> PosteriorSamples:
    """Collapsed Gibbs over token labels with theta and B integrated out.

    Retained sweeps emit (theta, B) draws from their conditional Dirichlets
    given the current label counts. Chains run on split Rng streams, so a
    rerun with the same options is bit-identical. With ``record_labels`` the
    per-cell topic count vectors of each retained sweep are stored under
    ``cell_counts`` (metadata lists the (sample, feature) cell coordinates);
    meant for small corpora where the label posterior itself is of interest.
    """
    opts = opts or McmcOptions()
    counts = x.counts
    alpha = _as_concentration(alpha, k, "alpha")
    gamma = _as_concentration(gamma, x.n_features, "gamma")
    if k < 1:
        raise ConfigError("K must be at least 1")
    if k > counts.sum():
        raise ConfigError("K exceeds the total token count")
    chain_rngs = Rng(opts.seed).split(opts.chains)
    theta_all, beta_all, cell_all = [], [], []
    cells = None
    for rng in chain_rngs:
        theta_c, beta_c, cell_c, cells = _lda_chain(counts, k, alpha, gamma, opts, rng, record_labels)
        theta_all.append(theta_c)
        beta_all.append(beta_c)
        cell_all.append(cell_c)
    params = {"theta": np.stack(theta_all), "beta": np.stack(beta_all)}
    if record_labels:
        params["cell_counts"] = np.stack(cell_all).astype(float)
    return PosteriorSamples(
        params,
        {
            "model": "lda",
            "method": "gibbs",
            "seed": opts.seed,
            "warmup": opts.warmup,
            "iters": opts.iters,
            "thin": opts.thin,
            "cells": [[int(d), int(v)] for d, v in zip(*cells)] if record_labels else None,
            "warnings": [],
        },
    )


# -- conjugate mean-field CAVI ------------------------------------------------


@dataclass
class LdaVariationalFit:
    """Mean-field factors: Dirichlet rows for theta, Dirichlet columns for B,
    and per-nonzero-cell topic responsibilities."""

    gamma_tilde: np.ndarray  # D x K Dirichlet parameters for each theta_d
    lam: np.ndarray  # V x K Dirichlet parameters, column k for beta_k
    phi: np.ndarray  # nnz x K responsibilities
    cell_d: np.ndarray
    cell_v: np.ndarray
    elbo_trace: np.ndarray
    converged: bool
    alpha: np.ndarray
    gamma: np.ndarray

    @property
    def elbo(self) -> float:
        return float(self.elbo_trace[-1])

    def point_params(self) -> dict[str, np.ndarray]:
        return {
            "theta": self.gamma_tilde / self.gamma_tilde.sum(axis=1, keepdims=True),
            "beta": self.lam / self.lam.sum(axis=0, keepdims=True),
        }

    def sample_params(self, rng: Rng, n: int) -> dict[str, np.ndarray]:
        d_n, k = self.gamma_tilde.shape
        v_n = self.lam.shape[0]
        theta = np.empty((n, d_n, k))
        beta = np.empty((n, v_n, k))
        for i in range(n):
            theta[i] = rng.dirichlet_rows(self.gamma_tilde)
            beta[i] = rng.dirichlet_rows(self.lam.T).T
        return {"theta": theta, "beta": beta}

    def to_posterior_samples(self, rng: Rng, n: int) -> PosteriorSamples:
        draws = self.sample_params(rng, n)
        return PosteriorSamples(
            {name: arr[np.newaxis] for name, arr in draws.items()},
            {"model": "lda", "method": "cavi", "elbo": self.elbo, "converged": self.converged},
        )


def _lda_elbo(cell_d, cell_v, cell_x, phi, gamma_tilde, lam, alpha, gamma, coeff):
    e_log_theta = digamma(gamma_tilde) - digamma(gamma_tilde.sum(axis=1, keepdims=True))
    e_log_beta = digamma(lam) - digamma(lam.sum(axis=0, keepdims=True))
    log_phi = np.where(phi > 0, np.log(np.where(phi > 0, phi, 1.0)), 0.0)
    cell_term = (
        cell_x[:, None] * phi * (e_log_theta[cell_d] + e_log_beta[cell_v] - log_phi)
    ).sum()
    # Dirichlet prior and entropy terms, summed over documents and topics
    prior_theta = gamma_tilde.shape[0] * (gammaln(alpha.sum()) - gammaln(alpha).sum()) + (
        (alpha[None, :] - 1.0) * e_log_theta
    ).sum()
    ent_theta = -(
        gammaln(gamma_tilde.sum(axis=1)).sum()
        - gammaln(gamma_tilde).sum()
        + ((gamma_tilde - 1.0) * e_log_theta).sum()
    )
    prior_beta = lam.shape[1] * (gammaln(gamma.sum()) - gammaln(gamma).sum()) + (
        (gamma[:, None] - 1.0) * e_log_beta
    ).sum()
    ent_beta = -(
        gammaln(lam.sum(axis=0)).sum()
        - gammaln(lam).sum()
        + ((lam - 1.0) * e_log_beta).sum()
    )
    return cell_term + prior_theta + ent_theta + prior_beta + ent_beta + coeff


def fit_lda_cavi(x: CountMatrix, k: int, alpha, gamma, opts: CaviOptions | None = None) -> LdaVariationalFit:
    """Coordinate-ascent mean-field approximation to the token-form posterior.

    The ELBO is nondecreasing along iterations; optimization stops when the
    relative change drops below ``opts.tol``. The best of ``opts.restarts``
    randomly initialized runs (by final ELBO) is returned.
    """
    opts = opts or CaviOptions()
    counts = x.counts
    alpha = _as_concentration(alpha, k, "alpha")
    gamma = _as_concentration(gamma, x.n_features, "gamma")
    if k < 1:
        raise ConfigError("K must be at least 1")
    cell_d, cell_v = np.nonzero(counts)
    cell_x = counts[cell_d, cell_v].astype(float)
    totals = counts.sum(axis=1)
    coeff = float(gammaln(totals + 1).sum() - gammaln(counts + 1).sum())
    restart_rngs = Rng(opts.seed).split(opts.restarts)

    best: LdaVariationalFit | None = None
    for rng in restart_rngs:
        fit = _lda_cavi_once(counts, cell_d, cell_v, cell_x, k, alpha, gamma, coeff, opts, rng)
        if best is None or fit.elbo > best.elbo:
            best = fit
    return best


def _lda_cavi_once(counts, cell_d, cell_v, cell_x, k, alpha, gamma, coeff, opts, rng):
    d_n, v_n = counts.shape
    # unit-scale noise; near-uniform init stalls at the label-symmetric saddle
    phi = softmax(rng.normal(0.0, 1.0, size=(cell_x.size, k)))
    gamma_tilde = np.empty((d_n, k))
    lam = np.empty((v_n, k))
    trace = []
    converged = False
    for it in range(opts.max_iters):
        weighted = cell_x[:, None] * phi
        gamma_tilde = alpha[None, :] + _scatter_rows(weighted, cell_d, d_n)
        lam = gamma[:, None] + _scatter_rows(weighted, cell_v, v_n)
        e_log_theta = digamma(gamma_tilde) - digamma(gamma_tilde.sum(axis=1, keepdims=True))
        e_log_beta = digamma(lam) - digamma(lam.sum(axis=0, keepdims=True))
        phi = softmax(e_log_theta[cell_d] + e_log_beta[cell_v])
        elbo = _lda_elbo(cell_d, cell_v, cell_x, phi, gamma_tilde, lam, alpha, gamma, coeff)
        if not np.isfinite(elbo):
            raise NumericalError(f"non-finite ELBO at iteration {it}")
        trace.append(elbo)
        if it > 0:
            prev = trace[-2]
            if abs(elbo - prev) <= opts.tol * (1.0 + abs(prev)):
                converged = True
                break
    return LdaVariationalFit(
        gamma_tilde, lam, phi, cell_d, cell_v, np.asarray(trace), converged, alpha, gamma
    )


def _scatter_rows(values: np.ndarray, index: np.ndarray, n_rows: int) -> np.ndarray:
    out = np.zeros((n_rows, values.shape[1]))
    np.add.at(out, index, values)
    return out


# -- Dirichlet-multinomial mixture (one label per sample) ---------------------


def fit_dmm_gibbs(x: CountMatrix, k: int, gamma, opts: McmcOptions | None = None) -> PosteriorSamples:
    """Collapsed Gibbs for the single-membership mixture.

    Labels are sampled with theta (Dir(1) prior) and B integrated out; each
    retained sweep emits z, theta, B, and the per-sample conditional
    membership probabilities (their average is the Rao-Blackwellized
    posterior membership estimate).
    """
    opts = opts or McmcOptions()
    counts = x.counts
    gamma = _as_concentration(gamma, x.n_features, "gamma")
    if k < 1:
        raise ConfigError("K must be at least 1")
    if k > counts.sum():
        raise ConfigError("K exceeds the total token count")
    chain_rngs = Rng(opts.seed).split(opts.chains)
    out = {name: [] for name in ("z", "theta", "beta", "membership")}
    for rng in chain_rngs:
        draws = _dmm_chain(counts, k, gamma, opts, rng)
        for name, arr in draws.items():
            out[name].append(arr)
    return PosteriorSamples(
        {name: np.stack(arrs) for name, arrs in out.items()},
        {
            "model": "dmm",
            "method": "gibbs",
            "seed": opts.seed,
            "warmup": opts.warmup,
            "iters": opts.iters,
            "thin": opts.thin,
            "warnings": [],
        },
    )


def _dmm_chain(counts, k, gamma, opts, rng: Rng):
    d_n, v_n = counts.shape
    z = rng.integers(0, k, size=d_n).astype(np.int64)
    cluster_counts = np.zeros((k, v_n))
    cluster_sizes = np.zeros(k, dtype=np.int64)
    for d in range(d_n):
        cluster_counts[z[d]] += counts[d]
        cluster_sizes[z[d]] += 1
    gamma_sum = gamma.sum()
    totals = counts.sum(axis=1)
    nz_cols = [np.nonzero(counts[d])[0] for d in range(d_n)]

    n_keep = opts.n_retained
    z_draws = np.empty((n_keep, d_n), dtype=np.int64)
    theta_draws = np.empty((n_keep, k))
    beta_draws = np.empty((n_keep, v_n, k))
    member_draws = np.empty((n_keep, d_n, k))
    probs_sweep = np.empty((d_n, k))
    kept = 0
    for sweep in range(1, opts.iters + 1):
        u = rng.uniform(size=d_n)
        for d in range(d_n):
            k_old = z[d]
            cluster_counts[k_old] -= counts[d]
            cluster_sizes[k_old] -= 1
            cols = nz_cols[d]
            xd = counts[d, cols]
            logp = np.log(cluster_sizes + 1.0)  # Dir(1) weight prior, theta integrated
            base = gamma_sum + cluster_counts.sum(axis=1)
            logp += gammaln(base) - gammaln(base + totals[d])
            logp += (
                gammaln(gamma[cols][None, :] + cluster_counts[:, cols] + xd[None, :])
                - gammaln(gamma[cols][None, :] + cluster_counts[:, cols])
            ).sum(axis=1)
            p = np.exp(logp - logp.max())
            p /= p.sum()
            probs_sweep[d] = p
            k_new = int(np.searchsorted(np.cumsum(p), u[d], side="right"))
            k_new = min(k_new, k - 1)
            z[d] = k_new
            cluster_counts[k_new] += counts[d]
            cluster_sizes[k_new] += 1
        if sweep > opts.warmup and (sweep - opts.warmup) % opts.thin == 0:
            z_draws[kept] = z
            theta_draws[kept] = rng.dirichlet(1.0 + cluster_sizes)
            beta_draws[kept] = rng.dirichlet_rows(gamma[None, :] + cluster_counts).T
            member_draws[kept] = probs_sweep
            kept += 1
    return {"z": z_draws, "theta": theta_draws, "beta": beta_draws, "membership": member_draws}
