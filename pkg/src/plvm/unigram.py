"""Dynamic unigram model: a Gaussian random walk on shared multinomial logits.

The logit trajectory mu has one row per distinct observed timepoint; row 0
carries the N(0, sigma2 I) initial-state prior and consecutive rows differ by
N(0, sigma2 I) increments, with one shared sigma2 for both (InvGamma(1, 1)
prior). Counts are Mult(N_d, softmax(mu[t(d)])). Inference runs on
(mu, log sigma2) so positivity needs no constraint handling; the log
transform's Jacobian is part of the target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .corpus import CountMatrix
from .exceptions import ConfigError, DomainError, NumericalError
from .inference import PosteriorSamples
from .numeric import Rng, log_softmax, softmax

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class UnigramState:
    """Logit trajectory, shared walk variance, and sample-to-slot map."""

    mu: np.ndarray
    sigma2: float
    time_index: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        idx = np.asarray(self.time_index, dtype=np.int64)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "time_index", idx)
        if mu.ndim != 2 or mu.shape[0] < 1:
            raise DomainError("mu must be a T x V matrix with T >= 1")
        if self.sigma2 <= 0 or not np.isfinite(self.sigma2):
            raise DomainError("sigma2 must be positive and finite")
        if idx.size and (idx.min() < 0 or idx.max() >= mu.shape[0]):
            raise DomainError("every sample must map to a valid time slot")

    @property
    def n_times(self) -> int:
        return self.mu.shape[0]


def time_slots(x: CountMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Distinct sorted times and each sample's slot index within them."""
    if x.times is None:
        raise DomainError("count matrix has no sample times")
    uniq, index = np.unique(x.times, return_inverse=True)
    return uniq, index.astype(np.int64)


def _validate_time_index(time_index, t: int) -> np.ndarray:
    idx = np.asarray(time_index, dtype=np.int64)
    if idx.ndim != 1 or idx.size < 1:
        raise DomainError("time_index must be a nonempty integer vector")
    if idx.min() < 0 or idx.max() >= t:
        raise DomainError("time_index entries must lie in {0..T-1}")
    return idx


def simulate_unigram(t: int, v: int, time_index, n, sigma0_sq: float, rng: Rng) -> tuple[CountMatrix, UnigramState]:
    """Random-walk logits and multinomial counts at mapped timepoints."""
    if t < 1 or v < 1:
        raise DomainError("T and V must be at least 1")
    if sigma0_sq <= 0:
        raise DomainError("sigma0_sq must be positive")
    idx = _validate_time_index(time_index, t)
    d = idx.size
    totals = np.asarray(n)
    if totals.ndim == 0:
        totals = np.full(d, int(totals))
    totals = totals.astype(np.int64)
    if totals.shape != (d,) or np.any(totals < 0):
        raise DomainError("per-sample totals must be nonnegative, one per sample")
    steps = rng.normal(0.0, sigma0_sq, size=(t, v))
    mu = np.cumsum(steps, axis=0)
    counts = rng.multinomial_rows(totals, softmax(mu[idx]))
    x = CountMatrix(
        counts,
        [f"s{i:04d}" for i in range(d)],
        [f"f{j:04d}" for j in range(v)],
        times=idx.astype(float),
    )
    return x, UnigramState(mu, float(sigma0_sq), idx)


def _slot_sufficient_stats(x: CountMatrix, time_index, t: int | None = None):
    """Aggregate counts and totals per time slot."""
    if time_index is None:
        _, idx = time_slots(x)
    else:
        idx = np.asarray(time_index, dtype=np.int64)
    t = int(idx.max()) + 1 if t is None else t
    idx = _validate_time_index(idx, t)
    agg = np.zeros((t, x.n_features))
    np.add.at(agg, idx, x.counts.astype(float))
    return idx, agg


def unigram_log_posterior(mu, sigma2: float, x: CountMatrix, prior=(1.0, 1.0), time_index=None) -> float:
    """Multinomial likelihood plus walk prior plus InvGamma(a, b) on sigma2.

    Multinomial coefficients are included, so only data-independent additive
    constants are dropped (none are).
    """
    mu = np.asarray(mu, dtype=float)
    if sigma2 <= 0:
        raise DomainError("sigma2 must be positive")
    a, b = (float(p) for p in prior)
    idx, agg = _slot_sufficient_stats(x, time_index, mu.shape[0])
    counts = x.counts
    totals = counts.sum(axis=1)
    coeff = float(gammaln(totals + 1).sum() - gammaln(counts + 1).sum())
    lik = coeff + float((agg * log_softmax(mu)).sum())
    diffs = np.diff(mu, axis=0, prepend=np.zeros((1, mu.shape[1])))
    ss = float((diffs**2).sum())
    t_slots, v = mu.shape
    walk = -0.5 * t_slots * v * (LOG_2PI + np.log(sigma2)) - 0.5 * ss / sigma2
    ig = a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(sigma2) - b / sigma2
    return lik + walk + float(ig)


def unigram_grad(mu, log_sigma2: float, x: CountMatrix, prior=(1.0, 1.0), time_index=None):
    """Gradient of the log posterior in (mu, log sigma2) coordinates.

    The log-sigma2 block includes the +1 from the Jacobian of the log
    transform, matching the HMC/ADVI target exactly.
    """
    mu = np.asarray(mu, dtype=float)
    a, b = (float(p) for p in prior)
    sigma2 = float(np.exp(log_sigma2))
    idx, agg = _slot_sufficient_stats(x, time_index, mu.shape[0])
    slot_totals = agg.sum(axis=1)
    grad_lik = agg - slot_totals[:, None] * softmax(mu)
    diffs = np.diff(mu, axis=0, prepend=np.zeros((1, mu.shape[1])))
    grad_walk = -diffs / sigma2
    grad_walk[:-1] += diffs[1:] / sigma2
    t_slots, v = mu.shape
    ss = float((diffs**2).sum())
    grad_ls = -0.5 * t_slots * v - (a + 1.0) + (0.5 * ss + b) / sigma2 + 1.0
    return grad_lik + grad_walk, float(grad_ls)


@dataclass(frozen=True)
class HmcOptions:
    warmup: int = 1000
    draws: int = 1000
    chains: int = 4
    seed: int = 0
    target_accept: float = 0.8
    leapfrog_steps: int = 32
    divergence_threshold: float = 1000.0
    max_divergence_frac: float = 0.05

    def __post_init__(self):
        if self.warmup < 1 or self.draws < 1 or self.chains < 1:
            raise DomainError("invalid HMC run lengths")
        if not 0 < self.target_accept < 1 or self.leapfrog_steps < 1:
            raise DomainError("invalid HMC tuning options")


@dataclass(frozen=True)
class AdviOptions:
    iters: int = 10_000
    mc_samples: int = 8
    lr: float = 0.05
    seed: int = 0
    draws: int = 1000
    chains: int = 1

    def __post_init__(self):
        if self.iters < 1 or self.mc_samples < 1 or self.lr <= 0 or self.draws < 1:
            raise DomainError("invalid ADVI options")


def fit_unigram(x: CountMatrix, time_index=None, method: str = "hmc", opts=None) -> PosteriorSamples:
    """Posterior over (mu, sigma2) by HMC or mean-field Gaussian ADVI.

    hmc: fixed-length leapfrog trajectories with dual-averaging step-size
    adaptation during warmup. advi: factorized Gaussian over (mu, log
    sigma2), reparameterized stochastic gradients, draws sampled from the
    fitted factors.
    """
    if time_index is None:
        _, idx = time_slots(x)
    else:
        idx = np.asarray(time_index, dtype=np.int64)
    t = int(idx.max()) + 1
    idx = _validate_time_index(idx, t)
    if method == "hmc":
        return _fit_unigram_hmc(x, idx, t, opts or HmcOptions())
    if method == "advi":
        return _fit_unigram_advi(x, idx, t, opts or AdviOptions())
    raise ConfigError(f"unknown method {method!r}; expected 'hmc' or 'advi'")


def _make_target(x: CountMatrix, idx: np.ndarray, t: int, prior=(1.0, 1.0)):
    """Log density of (mu, log sigma2) including the Jacobian, and its gradient."""
    a, b = prior
    v = x.n_features
    agg = np.zeros((t, v))
    np.add.at(agg, idx, x.counts.astype(float))
    slot_totals = agg.sum(axis=1)
    counts = x.counts
    coeff = float(gammaln(counts.sum(axis=1) + 1).sum() - gammaln(counts + 1).sum())
    dim = t * v + 1

    def logp(q: np.ndarray) -> float:
        if not np.all(np.isfinite(q)):
            return -np.inf
        mu = q[:-1].reshape(t, v)
        ls = q[-1]
        with np.errstate(over="ignore", divide="ignore"):
            sigma2 = np.exp(ls)
            lik = coeff + float((agg * log_softmax(mu)).sum())
            diffs = np.diff(mu, axis=0, prepend=np.zeros((1, v)))
            ss = float((diffs**2).sum())
            walk = -0.5 * t * v * (LOG_2PI + ls) - 0.5 * ss / sigma2
            ig = a * np.log(b) - gammaln(a) - (a + 1.0) * ls - b / sigma2
        value = lik + walk + float(ig) + ls  # + ls is the log-transform Jacobian
        return value if np.isfinite(value) else -np.inf

    def grad(q: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(q)):
            # unreachable region; a zero gradient lets the trajectory diverge
            return np.zeros(dim)
        mu = q[:-1].reshape(t, v)
        ls = q[-1]
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            sigma2 = np.exp(ls)
            g_mu = agg - slot_totals[:, None] * softmax(mu)
            diffs = np.diff(mu, axis=0, prepend=np.zeros((1, v)))
            g_mu -= diffs / sigma2
            g_mu[:-1] += diffs[1:] / sigma2
            ss = float((diffs**2).sum())
            g_ls = -0.5 * t * v - (a + 1.0) + (0.5 * ss + b) / sigma2 + 1.0
        out = np.empty(dim)
        out[:-1] = g_mu.ravel()
        out[-1] = g_ls
        return out

    return logp, grad, dim


class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, initial_step: float, target: float):
        self.mu = np.log(10.0 * initial_step)
        self.target = target
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.count = 0
        self.gamma = 0.05
        self.t0 = 10.0
        self.kappa = 0.75

    def update(self, accept_prob: float) -> float:
        self.count += 1
        frac = 1.0 / (self.count + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_prob)
        log_eps = self.mu - np.sqrt(self.count) / self.gamma * self.h_bar
        eta = self.count ** (-self.kappa)
        self.log_eps_bar = eta * log_eps + (1.0 - eta) * self.log_eps_bar
        return float(np.exp(log_eps))

    @property
    def adapted_step(self) -> float:
        return float(np.exp(self.log_eps_bar))


def _leapfrog(q, p, step, n_steps, grad):
    q = q.copy()
    p = p + 0.5 * step * grad(q)
    for _ in range(n_steps - 1):
        q += step * p
        p += step * grad(q)
    q += step * p
    p += 0.5 * step * grad(q)
    return q, p


def _find_initial_step(q, logp, grad, rng: Rng) -> float:
    """Double or halve until a single leapfrog step crosses 50% acceptance."""
    step = 0.1
    p = rng.normal(size=q.size)
    h0 = logp(q) - 0.5 * p @ p
    q1, p1 = _leapfrog(q, p, step, 1, grad)
    h1 = logp(q1) - 0.5 * p1 @ p1
    delta = h1 - h0 if np.isfinite(h1) else -np.inf
    direction = 1.0 if delta > np.log(0.5) else -1.0
    for _ in range(50):
        step *= 2.0**direction
        q1, p1 = _leapfrog(q, p, step, 1, grad)
        h1 = logp(q1) - 0.5 * p1 @ p1
        delta = h1 - h0 if np.isfinite(h1) else -np.inf
        if direction * delta <= direction * np.log(0.5):
            break
    return step


def _hmc_chain(logp, grad, dim, opts: HmcOptions, rng: Rng):
    q = 0.1 * rng.normal(size=dim)
    step = _find_initial_step(q, logp, grad, rng)
    da = _DualAveraging(step, opts.target_accept)
    draws = np.empty((opts.draws, dim))
    n_divergent = 0
    n_accept = 0.0
    current_logp = logp(q)
    total = opts.warmup + opts.draws
    for i in range(total):
        p = rng.normal(size=dim)
        h0 = current_logp - 0.5 * p @ p
        q_new, p_new = _leapfrog(q, p, step, opts.leapfrog_steps, grad)
        logp_new = logp(q_new)
        h1 = logp_new - 0.5 * p_new @ p_new if np.isfinite(logp_new) else -np.inf
        delta = h1 - h0
        divergent = not np.isfinite(delta) or -delta > opts.divergence_threshold
        accept_prob = 0.0 if divergent else min(1.0, float(np.exp(min(delta, 0.0))))
        if not divergent and np.log(rng.uniform()) < delta:
            q, current_logp = q_new, logp_new
        if i < opts.warmup:
            step = da.update(accept_prob)
            if i == opts.warmup - 1:
                step = da.adapted_step
        else:
            draws[i - opts.warmup] = q
            n_divergent += int(divergent)
            n_accept += accept_prob
    return draws, step, n_divergent, n_accept / opts.draws


def _fit_unigram_hmc(x, idx, t, opts: HmcOptions) -> PosteriorSamples:
    logp, grad, dim = _make_target(x, idx, t)
    v = x.n_features
    chain_rngs = Rng(opts.seed).split(opts.chains)
    mu_draws = np.empty((opts.chains, opts.draws, t, v))
    s2_draws = np.empty((opts.chains, opts.draws))
    warnings = []
    accept_rates, steps = [], []
    for c, rng in enumerate(chain_rngs):
        draws, step, n_div, acc = _hmc_chain(logp, grad, dim, opts, rng)
        mu_draws[c] = draws[:, :-1].reshape(opts.draws, t, v)
        s2_draws[c] = np.exp(draws[:, -1])
        accept_rates.append(acc)
        steps.append(step)
        frac = n_div / opts.draws
        if frac > opts.max_divergence_frac:
            warnings.append(f"chain {c}: divergent fraction {frac:.3f} exceeds {opts.max_divergence_frac}")
    return PosteriorSamples(
        {"mu": mu_draws, "sigma2": s2_draws},
        {
            "model": "unigram",
            "method": "hmc",
            "seed": opts.seed,
            "warmup": opts.warmup,
            "iters": opts.warmup + opts.draws,
            "accept_rates": accept_rates,
            "step_sizes": steps,
            "warnings": warnings,
        },
    )


def _fit_unigram_advi(x, idx, t, opts: AdviOptions) -> PosteriorSamples:
    logp, grad, dim = _make_target(x, idx, t)
    v = x.n_features
    rng_opt, rng_draw = Rng(opts.seed).split(2)
    m = np.zeros(dim)
    log_s = np.full(dim, np.log(0.1))
    grad_sq = np.zeros(2 * dim)
    elbo_trace = []
    for i in range(opts.iters):
        eta = rng_opt.normal(size=(opts.mc_samples, dim))
        s = np.exp(log_s)
        g_m = np.zeros(dim)
        g_ls = np.zeros(dim)
        elbo = 0.0
        for r in range(opts.mc_samples):
            z = m + s * eta[r]
            g = grad(z)
            g_m += g
            g_ls += g * s * eta[r]
            elbo += logp(z)
        g_m /= opts.mc_samples
        g_ls = g_ls / opts.mc_samples + 1.0  # +1 from the Gaussian entropy
        elbo = elbo / opts.mc_samples + float(log_s.sum()) + 0.5 * dim * (1.0 + LOG_2PI)
        if not np.isfinite(elbo):
            raise NumericalError(f"non-finite ELBO at iteration {i}")
        if i % 50 == 0 or i == opts.iters - 1:
            elbo_trace.append(elbo)
        g_all = np.concatenate([g_m, g_ls])
        grad_sq = 0.9 * grad_sq + 0.1 * g_all**2
        lr_i = opts.lr * (i + 1.0) ** -0.55
        update = lr_i * g_all / (np.sqrt(grad_sq) + 1e-8)
        m += update[:dim]
        log_s += update[dim:]
    s = np.exp(log_s)
    z = m[None, :] + s[None, :] * rng_draw.normal(size=(opts.draws, dim))
    return PosteriorSamples(
        {
            "mu": z[:, :-1].reshape(1, opts.draws, t, v),
            "sigma2": np.exp(z[:, -1])[None, :],
        },
        {
            "model": "unigram",
            "method": "advi",
            "seed": opts.seed,
            "iters": opts.iters,
            "elbo_trace": elbo_trace,
            "elbo": elbo_trace[-1],
            "warnings": [],
        },
    )
