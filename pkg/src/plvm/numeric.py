"""Deterministic transforms and seeded random primitives shared by every model.

Conventions fixed here and relied on everywhere else:

* gamma distributions use the SHAPE-RATE parameterization (mean = shape/rate);
* probability vectors are plain 1-D float arrays that are nonnegative and sum
  to one within ``PROB_TOL`` relative tolerance;
* randomness flows through :class:`Rng`, a counter-based stream keyed by
  (seed, stream). Equal keys give bit-identical draw sequences, and
  :meth:`Rng.split` derives child streams so parallel work stays reproducible.
"""

from __future__ import annotations

import numpy as np

from .exceptions import DomainError

PROB_TOL = 1e-12

_GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = 0xFFFFFFFFFFFFFFFF


def _mix64(x: int) -> int:
    # splitmix64 finalizer; bijective on 64-bit ints
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


class Rng:
    """Counter-based random stream keyed by a 64-bit (seed, stream) pair.

    Streams with the same key replay the same draws; distinct stream ids give
    statistically independent sequences (Philox counter-based generator).
    An Rng is single-threaded: parallel work must :meth:`split` children
    before dispatch.
    """

    def __init__(self, seed: int, stream: int = 0):
        if not 0 <= int(seed) <= _MASK64 or not 0 <= int(stream) <= _MASK64:
            raise DomainError("seed and stream must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream = int(stream)
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))
        self._n_splits = 0

    def __repr__(self) -> str:  # pragma: no cover
        return f"Rng(seed={self.seed}, stream={self.stream})"

    def split(self, n: int) -> list["Rng"]:
        """Derive ``n`` child streams; repeated calls keep producing fresh ones."""
        children = []
        for i in range(n):
            child_stream = _mix64(self.stream ^ _mix64((self._n_splits + i + 1) * _GOLDEN))
            children.append(Rng(self.seed, child_stream))
        self._n_splits += n
        return children

    # -- primitive draws ----------------------------------------------------

    def uniform(self, size=None) -> np.ndarray | float:
        return self._gen.random(size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def normal(self, mean=0.0, var=1.0, size=None):
        """Gaussian draw parameterized by VARIANCE, not standard deviation."""
        var = np.asarray(var, dtype=float)
        if np.any(var <= 0) or not np.all(np.isfinite(var)):
            raise DomainError("normal variance must be positive and finite")
        return self._gen.normal(mean, np.sqrt(var), size=size)

    def gamma(self, shape, rate, size=None):
        """Gamma draw with mean shape/rate (shape-rate convention)."""
        shape = np.asarray(shape, dtype=float)
        rate = np.asarray(rate, dtype=float)
        if np.any(shape <= 0) or np.any(rate <= 0):
            raise DomainError("gamma shape and rate must be positive")
        return self._gen.standard_gamma(shape, size=size) / rate

    def inv_gamma(self, shape, scale, size=None):
        """Inverse-gamma draw: 1/X with X ~ Gamma(shape, rate=scale)."""
        return 1.0 / self.gamma(shape, scale, size=size)

    def poisson(self, lam):
        lam = np.asarray(lam, dtype=float)
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise DomainError("poisson rate must be nonnegative and finite")
        return self._gen.poisson(lam)

    def binomial(self, n, p):
        return self._gen.binomial(n, p)

    def bernoulli(self, p, size=None):
        return self._gen.random(size) < p

    def dirichlet(self, alpha) -> np.ndarray:
        """Dirichlet draw via normalized gamma variates."""
        alpha = np.asarray(alpha, dtype=float)
        if alpha.ndim != 1 or alpha.size < 1 or np.any(alpha <= 0):
            raise DomainError("dirichlet concentration must be a positive vector")
        g = self._gen.standard_gamma(alpha)
        total = g.sum()
        if total == 0.0:  # only reachable for extreme concentrations
            g = np.full(alpha.size, 1.0 / alpha.size)
            total = 1.0
        return g / total

    def dirichlet_matrix(self, alpha, n: int) -> np.ndarray:
        """``n`` iid Dirichlet rows sharing one concentration vector."""
        alpha = np.asarray(alpha, dtype=float)
        if alpha.ndim != 1 or np.any(alpha <= 0):
            raise DomainError("dirichlet concentration must be a positive vector")
        g = self._gen.standard_gamma(np.broadcast_to(alpha, (n, alpha.size)))
        totals = g.sum(axis=1, keepdims=True)
        totals[totals == 0.0] = 1.0
        return g / totals

    def categorical(self, p, size: int) -> np.ndarray:
        """``size`` iid category labels with P(label = k) = p[k]."""
        p = np.asarray(p, dtype=float)
        assert_prob_vector(p)
        edges = np.cumsum(p)
        labels = np.searchsorted(edges, self._gen.random(size), side="right")
        return np.minimum(labels, p.size - 1).astype(np.int64)

    def dirichlet_rows(self, alphas) -> np.ndarray:
        """One Dirichlet draw per row of a concentration matrix."""
        alphas = np.asarray(alphas, dtype=float)
        if alphas.ndim != 2 or np.any(alphas <= 0):
            raise DomainError("dirichlet concentrations must be a positive matrix")
        g = self._gen.standard_gamma(alphas)
        totals = g.sum(axis=1, keepdims=True)
        totals[totals == 0.0] = 1.0
        return g / totals

    def multinomial(self, n: int, p) -> np.ndarray:
        """Multinomial draw by sequential binomial conditioning."""
        p = np.asarray(p, dtype=float)
        if n < 0 or int(n) != n:
            raise DomainError("multinomial total must be a nonnegative integer")
        assert_prob_vector(p)
        return self.multinomial_rows(np.array([int(n)]), p[None, :])[0]

    def multinomial_rows(self, totals, probs) -> np.ndarray:
        """Row-wise multinomial draws: row i ~ Mult(totals[i], probs[i]).

        Rows of ``probs`` are nonnegative weights and are normalized
        internally, so unnormalized rates are fine. Stable for large totals:
        category v is drawn as a binomial with the conditional success
        probability p_v / (p_v + ... + p_V).
        """
        totals = np.asarray(totals)
        probs = np.asarray(probs, dtype=float)
        if np.any(totals < 0):
            raise DomainError("multinomial totals must be nonnegative")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise DomainError("multinomial weights must be finite and nonnegative")
        if np.any((np.asarray(totals) > 0) & (probs.sum(axis=1) <= 0)):
            raise DomainError("a row with positive total has zero total weight")
        rows, ncat = probs.shape
        # exact suffix sums keep conditional probabilities in [0, 1]
        suffix = np.cumsum(probs[:, ::-1], axis=1)[:, ::-1]
        out = np.zeros((rows, ncat), dtype=np.int64)
        remaining = totals.astype(np.int64).copy()
        for v in range(ncat - 1):
            with np.errstate(divide="ignore", invalid="ignore"):
                cond = np.where(suffix[:, v] > 0, probs[:, v] / suffix[:, v], 0.0)
            cond = np.clip(cond, 0.0, 1.0)
            draw = self._gen.binomial(remaining, cond)
            out[:, v] = draw
            remaining -= draw
        out[:, -1] = remaining
        return out


# -- deterministic transforms ----------------------------------------------


def is_prob_vector(p, tol: float = PROB_TOL) -> bool:
    p = np.asarray(p, dtype=float)
    return (
        p.ndim == 1
        and np.all(np.isfinite(p))
        and np.all(p >= 0)
        and abs(p.sum() - 1.0) <= tol * max(1.0, abs(p.sum()))
    )


def assert_prob_vector(p, tol: float = PROB_TOL) -> None:
    if not is_prob_vector(p, tol):
        raise DomainError("expected a probability vector (nonnegative, summing to 1)")


def softmax(mu) -> np.ndarray:
    """Multilogit link exp(mu_v) / sum_v' exp(mu_v'), max-subtracted for stability."""
    mu = np.asarray(mu, dtype=float)
    if not np.all(np.isfinite(mu)):
        raise DomainError("softmax input must be finite")
    shifted = mu - mu.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(mu) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if not np.all(np.isfinite(mu)):
        raise DomainError("log_softmax input must be finite")
    shifted = mu - mu.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def log_sum_exp(x, axis=None):
    x = np.asarray(x, dtype=float)
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return out if axis is None else np.squeeze(out, axis=axis)


def g_transform(p) -> np.ndarray:
    """Centered log transform g(p)_i = log p_i - mean_j log p_j.

    The display scale for probabilities: similar to log odds but centered at
    the average log probability. Requires strictly positive entries; callers
    must add a pseudocount to empirical proportions with zeros first.
    """
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0) or not np.all(np.isfinite(p)):
        raise DomainError("g_transform requires strictly positive entries")
    logp = np.log(p)
    return logp - logp.mean(axis=-1, keepdims=True)


def asinh_transform(x) -> np.ndarray:
    """Variance-stabilizing count transform log(x + sqrt(1 + x^2)); asinh(0) = 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("asinh_transform expects nonnegative counts")
    return np.arcsinh(x)
