"""Gamma-Poisson factorization with an optional zero-inflation layer.

X ~ Poi(Theta B^T) entrywise, with gamma priors on both factors (shape-rate
convention throughout). The zero-inflated variant corrupts each entry to zero
independently with a KNOWN probability p0; inference treats p0 as given and
augments with per-zero-entry structural indicators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from .corpus import CountMatrix
from .exceptions import ConfigError, DomainError, NumericalError
from .inference import CaviOptions, McmcOptions, PosteriorSamples
from .numeric import Rng, softmax


def _check_hyp(hyp) -> tuple[float, float, float, float]:
    a0, b0, c0, d0 = (float(h) for h in hyp)
    if min(a0, b0, c0, d0) <= 0:
        raise DomainError("gamma hyperparameters must be positive")
    return a0, b0, c0, d0


@dataclass(frozen=True)
class GapParams:
    """Nonnegative factor matrices plus their gamma hyperparameters."""

    theta: np.ndarray
    beta: np.ndarray
    a0: float
    b0: float
    c0: float
    d0: float
    p0: float = 0.0

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "beta", beta)
        if theta.ndim != 2 or beta.ndim != 2 or theta.shape[1] != beta.shape[1]:
            raise DomainError("theta and beta must share a topic axis")
        if np.any(theta < 0) or np.any(beta < 0):
            raise DomainError("factor entries must be nonnegative")
        _check_hyp((self.a0, self.b0, self.c0, self.d0))
        if not 0.0 <= self.p0 < 1.0:
            raise DomainError("p0 must lie in [0, 1)")

    @property
    def k(self) -> int:
        return self.theta.shape[1]

    def rate(self) -> np.ndarray:
        return self.theta @ self.beta.T


@dataclass(frozen=True)
class ZeroMask:
    """Indicator of entries that were structurally zeroed during simulation."""

    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "mask", mask)
        if mask.ndim != 2:
            raise DomainError("zero mask must be a D x V matrix")

    def check_consistent(self, x: CountMatrix) -> None:
        if self.mask.shape != x.counts.shape:
            raise DomainError("mask shape does not match counts")
        if np.any(x.counts[self.mask] != 0):
            raise DomainError("masked entries must be zero")

    @property
    def fraction(self) -> float:
        return float(self.mask.mean())


def hyperparams_for_expected_total(target_en: float, k: int, v: int) -> tuple[float, float, float, float]:
    """Hyperparameters making E[N_d] = V*K*(a0/b0)*(c0/d0) hit a target.

    Returns a0 = c0 = 1, d0 = 1, b0 = V*K/target, so the identity holds
    exactly under the shape-rate convention.
    """
    if target_en <= 0:
        raise DomainError("target expected total must be positive")
    return 1.0, v * k / float(target_en), 1.0, 1.0


def simulate_gap(d: int, v: int, k: int, hyp, p0: float, rng: Rng) -> tuple[CountMatrix, GapParams, ZeroMask]:
    """Entrywise gamma factors, Poisson counts, then independent zeroing."""
    if d < 1 or v < 1 or k < 1:
        raise DomainError("D, V, K must all be at least 1")
    a0, b0, c0, d0 = _check_hyp(hyp)
    if not 0.0 <= p0 < 1.0:
        raise DomainError("p0 must lie in [0, 1)")
    theta = rng.gamma(a0, b0, size=(d, k))
    beta = rng.gamma(c0, d0, size=(v, k))
    counts = rng.poisson(theta @ beta.T)
    mask = rng.bernoulli(p0, size=(d, v)) if p0 > 0 else np.zeros((d, v), dtype=bool)
    counts = np.where(mask, 0, counts)
    x = CountMatrix(counts, [f"s{i:04d}" for i in range(d)], [f"f{j:04d}" for j in range(v)])
    return x, GapParams(theta, beta, a0, b0, c0, d0, p0), ZeroMask(mask)


def gap_log_likelihood(x: CountMatrix, params: GapParams, mask_mode: str = "none") -> float:
    """Poisson log likelihood, optionally marginalizing known zero-inflation.

    ``none``: sum of log Poi(x; lambda), requires params.p0 == 0.
    ``known_p0``: zeros contribute log(p0 + (1-p0)exp(-lambda)); positive
    entries contribute log(1-p0) plus the Poisson term.
    Positive count at lambda = 0 yields -inf.
    """
    if mask_mode not in ("none", "known_p0"):
        raise ConfigError(f"unknown mask_mode {mask_mode!r}")
    counts = x.counts
    lam = params.rate()
    if counts.shape != lam.shape:
        raise DomainError("count matrix shape does not match parameters")
    if np.any((counts > 0) & (lam == 0.0)):
        return -np.inf
    if mask_mode == "none":
        if params.p0 > 0:
            raise ConfigError("params carry p0 > 0; use mask_mode='known_p0'")
        with np.errstate(divide="ignore"):
            loglam = np.where(counts > 0, np.log(np.where(lam > 0, lam, 1.0)), 0.0)
        return float((counts * loglam - lam - gammaln(counts + 1)).sum())
    p0 = params.p0
    pos = counts > 0
    with np.errstate(divide="ignore"):
        loglam = np.where(pos, np.log(np.where(lam > 0, lam, 1.0)), 0.0)
    pos_term = np.where(
        pos, np.log1p(-p0) + counts * loglam - lam - gammaln(counts + 1), 0.0
    ).sum()
    zero_term = np.where(~pos, np.log(p0 + (1.0 - p0) * np.exp(-lam)), 0.0).sum()
    return float(pos_term + zero_term)


# -- augmented Gibbs ----------------------------------------------------------


def fit_gap_gibbs(x: CountMatrix, k: int, hyp, p0_assumed: float, opts: McmcOptions | None = None) -> PosteriorSamples:
    """Gibbs sampler on (Theta, B, latent topic counts, structural zeros).

    Latent counts split each positive entry across topics (multinomial with
    odds theta_dk * beta_vk); factor conditionals are gammas. With
    p0_assumed > 0 each observed zero carries a Bernoulli indicator for being
    a structural zero, and structural entries drop out of the gamma rates.
    """
    opts = opts or McmcOptions()
    a0, b0, c0, d0 = _check_hyp(hyp)
    if k < 1:
        raise ConfigError("K must be at least 1")
    if not 0.0 <= p0_assumed < 1.0:
        raise ConfigError("p0 must lie in [0, 1)")
    counts = x.counts
    chain_rngs = Rng(opts.seed).split(opts.chains)
    theta_all, beta_all = [], []
    for rng in chain_rngs:
        theta_c, beta_c = _gap_chain(counts, k, (a0, b0, c0, d0), p0_assumed, opts, rng)
        theta_all.append(theta_c)
        beta_all.append(beta_c)
    return PosteriorSamples(
        {"theta": np.stack(theta_all), "beta": np.stack(beta_all)},
        {
            "model": "zgap" if p0_assumed > 0 else "gap",
            "method": "gibbs",
            "seed": opts.seed,
            "warmup": opts.warmup,
            "iters": opts.iters,
            "thin": opts.thin,
            "p0": p0_assumed,
            "warnings": [],
        },
    )


def _gap_chain(counts, k, hyp, p0, opts, rng: Rng):
    a0, b0, c0, d0 = hyp
    d_n, v_n = counts.shape
    cell_d, cell_v = np.nonzero(counts)
    cell_x = counts[cell_d, cell_v].astype(np.int64)
    zero_d, zero_v = np.nonzero(counts == 0)

    theta = rng.gamma(a0, b0, size=(d_n, k))
    beta = rng.gamma(c0, d0, size=(v_n, k))
    theta_draws = np.empty((opts.n_retained, d_n, k))
    beta_draws = np.empty((opts.n_retained, v_n, k))
    kept = 0
    for sweep in range(1, opts.iters + 1):
        # split positive counts over topics
        odds = theta[cell_d] * beta[cell_v]
        probs = odds / odds.sum(axis=1, keepdims=True)
        s_cell = rng.multinomial_rows(cell_x, probs)
        s_dk = np.zeros((d_n, k))
        s_vk = np.zeros((v_n, k))
        np.add.at(s_dk, cell_d, s_cell)
        np.add.at(s_vk, cell_v, s_cell)
        # structural-zero indicators; exact conditional given (theta, beta)
        if p0 > 0 and zero_d.size:
            lam0 = (theta[zero_d] * beta[zero_v]).sum(axis=1)
            p_struct = p0 / (p0 + (1.0 - p0) * np.exp(-lam0))
            struct = rng.uniform(size=zero_d.size) < p_struct
            active = np.ones((d_n, v_n))
            active[zero_d[struct], zero_v[struct]] = 0.0
            theta = rng.gamma(a0 + s_dk, b0 + active @ beta)
            beta = rng.gamma(c0 + s_vk, d0 + active.T @ theta)
        else:
            theta = rng.gamma(a0 + s_dk, b0 + beta.sum(axis=0)[None, :])
            beta = rng.gamma(c0 + s_vk, d0 + theta.sum(axis=0)[None, :])
        if sweep > opts.warmup and (sweep - opts.warmup) % opts.thin == 0:
            theta_draws[kept] = theta
            beta_draws[kept] = beta
            kept += 1
    return theta_draws, beta_draws


# -- conjugate mean-field CAVI ------------------------------------------------


@dataclass
class GapVariationalFit:
    """Gamma factors for Theta and B, multinomial splits for positive cells,
    Bernoulli structural-zero factors for observed zeros."""

    a_theta: np.ndarray
    b_theta: np.ndarray
    a_beta: np.ndarray
    b_beta: np.ndarray
    phi: np.ndarray
    tau: np.ndarray
    elbo_trace: np.ndarray
    converged: bool
    hyp: tuple[float, float, float, float]
    p0: float

    @property
    def elbo(self) -> float:
        return float(self.elbo_trace[-1])

    def point_params(self) -> dict[str, np.ndarray]:
        return {"theta": self.a_theta / self.b_theta, "beta": self.a_beta / self.b_beta}

    def sample_params(self, rng: Rng, n: int) -> dict[str, np.ndarray]:
        theta = rng.gamma(
            np.broadcast_to(self.a_theta, (n,) + self.a_theta.shape),
            np.broadcast_to(self.b_theta, (n,) + self.b_theta.shape),
        )
        beta = rng.gamma(
            np.broadcast_to(self.a_beta, (n,) + self.a_beta.shape),
            np.broadcast_to(self.b_beta, (n,) + self.b_beta.shape),
        )
        return {"theta": theta, "beta": beta}

    def to_posterior_samples(self, rng: Rng, n: int) -> PosteriorSamples:
        draws = self.sample_params(rng, n)
        return PosteriorSamples(
            {name: arr[np.newaxis] for name, arr in draws.items()},
            {
                "model": "zgap" if self.p0 > 0 else "gap",
                "method": "cavi",
                "elbo": self.elbo,
                "p0": self.p0,
                "converged": self.converged,
            },
        )


def _gamma_prior_minus_entropy(a, b, a0, b0):
    """E_q[log p(x)] - E_q[log q(x)] for q = Gamma(a, b), p = Gamma(a0, b0)."""
    e_x = a / b
    e_log_x = digamma(a) - np.log(b)
    log_p = a0 * np.log(b0) - gammaln(a0) + (a0 - 1.0) * e_log_x - b0 * e_x
    log_q = a * np.log(b) - gammaln(a) + (a - 1.0) * e_log_x - a
    return (log_p - log_q).sum()


def fit_gap_cavi(x: CountMatrix, k: int, hyp, p0_assumed: float, opts: CaviOptions | None = None) -> GapVariationalFit:
    """Mean-field coordinate ascent mirroring the Gibbs conditionals.

    All updates are conjugate, so the ELBO is nondecreasing; the best of
    ``opts.restarts`` random initializations by final ELBO is returned.
    """
    opts = opts or CaviOptions()
    a0, b0, c0, d0 = _check_hyp(hyp)
    if k < 1:
        raise ConfigError("K must be at least 1")
    if not 0.0 <= p0_assumed < 1.0:
        raise ConfigError("p0 must lie in [0, 1)")
    counts = x.counts
    restart_rngs = Rng(opts.seed).split(opts.restarts)
    best: GapVariationalFit | None = None
    for rng in restart_rngs:
        fit = _gap_cavi_once(counts, k, (a0, b0, c0, d0), p0_assumed, opts, rng)
        if best is None or fit.elbo > best.elbo:
            best = fit
    return best


def _gap_cavi_once(counts, k, hyp, p0, opts, rng: Rng):
    a0, b0, c0, d0 = hyp
    d_n, v_n = counts.shape
    cell_d, cell_v = np.nonzero(counts)
    cell_x = counts[cell_d, cell_v].astype(float)
    zero = counts == 0
    n_pos = cell_x.size

    a_theta = a0 + rng.uniform(size=(d_n, k))
    b_theta = np.full((d_n, k), b0)
    a_beta = c0 + rng.uniform(size=(v_n, k))
    b_beta = np.full((v_n, k), d0)
    phi = np.full((n_pos, k), 1.0 / k)
    tau = np.zeros((d_n, v_n))
    trace = []
    converged = False
    for it in range(opts.max_iters):
        e_theta = a_theta / b_theta
        e_beta = a_beta / b_beta
        e_log_theta = digamma(a_theta) - np.log(b_theta)
        e_log_beta = digamma(a_beta) - np.log(b_beta)
        if n_pos:
            phi = softmax(e_log_theta[cell_d] + e_log_beta[cell_v])
        if p0 > 0:
            lam0 = e_theta @ e_beta.T
            tau = np.where(zero, p0 / (p0 + (1.0 - p0) * np.exp(-lam0)), 0.0)
        weight = np.where(zero, 1.0 - tau, 1.0)
        weighted = cell_x[:, None] * phi
        s_dk = np.zeros((d_n, k))
        s_vk = np.zeros((v_n, k))
        np.add.at(s_dk, cell_d, weighted)
        np.add.at(s_vk, cell_v, weighted)
        a_theta = a0 + s_dk
        b_theta = b0 + weight @ e_beta
        e_theta = a_theta / b_theta
        a_beta = c0 + s_vk
        b_beta = d0 + weight.T @ e_theta

        elbo = _gap_elbo(
            counts, cell_d, cell_v, cell_x, phi, tau, weight,
            a_theta, b_theta, a_beta, b_beta, hyp, p0,
        )
        if not np.isfinite(elbo):
            raise NumericalError(f"non-finite ELBO at iteration {it}")
        trace.append(elbo)
        if it > 0 and abs(elbo - trace[-2]) <= opts.tol * (1.0 + abs(trace[-2])):
            converged = True
            break
    return GapVariationalFit(
        a_theta, b_theta, a_beta, b_beta, phi, tau,
        np.asarray(trace), converged, hyp, p0,
    )


def _gap_elbo(counts, cell_d, cell_v, cell_x, phi, tau, weight, a_theta, b_theta, a_beta, b_beta, hyp, p0):
    a0, b0, c0, d0 = hyp
    e_theta = a_theta / b_theta
    e_beta = a_beta / b_beta
    e_log_theta = digamma(a_theta) - np.log(b_theta)
    e_log_beta = digamma(a_beta) - np.log(b_beta)
    # positive cells: multinomial split term, with E log s! cancelling against q(s)
    log_phi = np.where(phi > 0, np.log(np.where(phi > 0, phi, 1.0)), 0.0)
    cell_term = (
        cell_x[:, None] * phi * (e_log_theta[cell_d] + e_log_beta[cell_v] - log_phi)
    ).sum() - gammaln(cell_x + 1).sum()
    # -E[lambda] over active exposure (positives and non-structural zeros)
    cross = (e_theta * (weight @ e_beta)).sum()
    value = cell_term - cross
    value += _gamma_prior_minus_entropy(a_theta, b_theta, a0, b0)
    value += _gamma_prior_minus_entropy(a_beta, b_beta, c0, d0)
    if p0 > 0:
        zero = counts == 0
        t = tau[zero]
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = t * np.where(t > 0, np.log(np.where(t > 0, t, 1.0)), 0.0)
            ent += (1 - t) * np.where(t < 1, np.log(np.where(t < 1, 1 - t, 1.0)), 0.0)
        value += (t * np.log(p0) + (1 - t) * np.log1p(-p0) - ent).sum()
        value += cell_x.size * np.log1p(-p0)
    return value
