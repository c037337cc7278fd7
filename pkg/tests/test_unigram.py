"""Random-walk logit model: target density, gradients, HMC, and ADVI.

The log posterior is checked against 50-digit mpmath sums, the analytic
gradient against central finite differences, and the HMC sampler against the
prior itself: with all-zero counts the posterior equals the prior, where
P(sigma2 < 1) = exp(-1) under InvGamma(1, 1) and P(mu_0v < 0) = 1/2.
"""

import mpmath
import numpy as np
import pytest

from plvm.corpus import CountMatrix
from plvm.exceptions import ConfigError, DomainError
from plvm.inference import ess
from plvm.numeric import Rng, log_softmax
from plvm.unigram import (
    AdviOptions,
    HmcOptions,
    UnigramState,
    fit_unigram,
    simulate_unigram,
    time_slots,
    unigram_grad,
    unigram_log_posterior,
)


def make_counts(arr, times):
    arr = np.asarray(arr)
    d, v = arr.shape
    return CountMatrix(
        arr, [f"s{i}" for i in range(d)], [f"f{j}" for j in range(v)], times=np.asarray(times, dtype=float)
    )


def packed_logp(q, t, v, x, prior, time_index):
    mu = q[:-1].reshape(t, v)
    return unigram_log_posterior(mu, float(np.exp(q[-1])), x, prior, time_index) + q[-1]


def packed_grad(q, t, v, x, prior, time_index):
    g_mu, g_ls = unigram_grad(q[:-1].reshape(t, v), float(q[-1]), x, prior, time_index)
    return np.concatenate([g_mu.ravel(), [g_ls]])


class TestSimulate:
    def test_shapes_totals_and_times(self):
        idx = np.array([0, 0, 1, 2, 2])
        x, state = simulate_unigram(3, 4, idx, 50, 1.0, Rng(0))
        assert x.counts.shape == (5, 4)
        np.testing.assert_array_equal(x.counts.sum(axis=1), 50)
        np.testing.assert_array_equal(x.times, idx.astype(float))
        assert state.mu.shape == (3, 4)
        assert state.n_times == 3

    def test_deterministic(self):
        idx = [0, 1]
        a, sa = simulate_unigram(2, 3, idx, 20, 0.5, Rng(7))
        b, sb = simulate_unigram(2, 3, idx, 20, 0.5, Rng(7))
        np.testing.assert_array_equal(a.counts, b.counts)
        np.testing.assert_array_equal(sa.mu, sb.mu)

    def test_walk_increment_variance(self):
        _, state = simulate_unigram(2, 4000, [0, 1], 1, 0.7, Rng(8))
        first = state.mu[0]
        inc = state.mu[1] - state.mu[0]
        for sample in (first, inc):
            assert abs(sample.var() - 0.7) < 4 * 0.7 * np.sqrt(2.0 / 4000)

    def test_validation(self):
        with pytest.raises(DomainError):
            simulate_unigram(0, 3, [0], 5, 1.0, Rng(0))
        with pytest.raises(DomainError):
            simulate_unigram(2, 3, [0, 2], 5, 1.0, Rng(0))
        with pytest.raises(DomainError):
            simulate_unigram(2, 3, [0, 1], 5, 0.0, Rng(0))


class TestTimeSlots:
    def test_distinct_sorted_and_inverse(self):
        x = make_counts([[1, 0], [0, 2], [3, 0]], [2.5, 0.5, 2.5])
        uniq, idx = time_slots(x)
        np.testing.assert_array_equal(uniq, [0.5, 2.5])
        np.testing.assert_array_equal(idx, [1, 0, 1])

    def test_requires_times(self):
        x = CountMatrix(np.array([[1]]), ["s0"], ["f0"])
        with pytest.raises(DomainError):
            time_slots(x)


class TestLogPosterior:
    def test_matches_mpmath(self):
        rng = Rng(1)
        idx = np.array([0, 1, 1])
        x, state = simulate_unigram(2, 3, idx, 12, 1.0, rng)
        mu = state.mu
        sigma2 = 0.8
        a, b = 1.3, 0.9
        got = unigram_log_posterior(mu, sigma2, x, (a, b), idx)
        with mpmath.workdps(50):
            s2 = mpmath.mpf(sigma2)
            total = mpmath.mpf(0)
            # multinomial coefficients and log probabilities
            logp_rows = log_softmax(mu)
            for d in range(3):
                total += mpmath.loggamma(int(x.counts[d].sum()) + 1)
                for v in range(3):
                    c = int(x.counts[d, v])
                    total -= mpmath.loggamma(c + 1)
                    total += c * mpmath.mpf(logp_rows[idx[d], v])
            # random walk: row 0 from the origin, then increments
            prev = [mpmath.mpf(0)] * 3
            for t in range(2):
                for v in range(3):
                    diff = mpmath.mpf(mu[t, v]) - prev[v]
                    total += -mpmath.log(2 * mpmath.pi * s2) / 2 - diff**2 / (2 * s2)
                prev = [mpmath.mpf(mu[t, v]) for v in range(3)]
            total += a * mpmath.log(b) - mpmath.loggamma(a) - (a + 1) * mpmath.log(s2) - b / s2
            expected = float(total)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_validation(self):
        x = make_counts([[1, 2]], [0.0])
        with pytest.raises(DomainError):
            unigram_log_posterior(np.zeros((1, 2)), -1.0, x)
        with pytest.raises(DomainError):
            unigram_log_posterior(np.zeros((1, 2)), 1.0, x, time_index=[3])


class TestGradient:
    def test_matches_central_differences(self):
        for seed in range(6):
            rng = Rng(300 + seed)
            t = int(rng.integers(1, 5))
            v = int(rng.integers(2, 8))
            d = int(rng.integers(1, 6))
            idx = np.asarray(rng.integers(0, t, size=d))
            idx[0] = t - 1  # every slot index must stay in range; pin the max
            x, _ = simulate_unigram(t, v, idx, 30, 1.0, rng)
            q = np.concatenate([rng.normal(0.0, 1.0, size=t * v), [0.3]])
            prior = (1.2, 0.8)
            got = packed_grad(q, t, v, x, prior, idx)
            h = 1e-5
            fd = np.empty_like(q)
            for i in range(q.size):
                qp, qm = q.copy(), q.copy()
                qp[i] += h
                qm[i] -= h
                fd[i] = (
                    packed_logp(qp, t, v, x, prior, idx) - packed_logp(qm, t, v, x, prior, idx)
                ) / (2 * h)
            rel = np.linalg.norm(got - fd) / max(np.linalg.norm(got), 1.0)
            assert rel < 1e-5

    def test_zero_gradient_at_stationary_point_of_flat_case(self):
        # one slot, symmetric counts: mu = 0 maximizes likelihood + walk terms
        x = make_counts([[5, 5]], [0.0])
        g_mu, _ = unigram_grad(np.zeros((1, 2)), 0.0, x, (1.0, 1.0), [0])
        np.testing.assert_allclose(g_mu, 0.0, atol=1e-12)


class TestHmc:
    def test_prior_recovery_on_empty_counts(self):
        x = make_counts(np.zeros((2, 2), dtype=int), [0.0, 1.0])
        s = fit_unigram(x, method="hmc", opts=HmcOptions(warmup=500, draws=800, chains=2, seed=3))
        sigma2 = s.pooled("sigma2")
        ind = (sigma2 < 1.0).astype(float)
        freq = ind.mean()
        n_eff = ess(ind.reshape(2, -1))
        se = np.sqrt(np.exp(-1) * (1 - np.exp(-1)) / n_eff)
        assert abs(freq - np.exp(-1)) < max(4 * se, 0.02)
        mu0 = s.pooled("mu")[:, 0, 0]
        assert abs((mu0 < 0).mean() - 0.5) < 0.08

    def test_posterior_concentrates_on_frequencies(self):
        idx = np.array([0, 0, 1, 1])
        x, state = simulate_unigram(2, 3, idx, 4000, 1.0, Rng(4))
        s = fit_unigram(x, method="hmc", opts=HmcOptions(warmup=400, draws=400, chains=2, seed=5))
        from plvm.numeric import softmax

        agg = np.zeros((2, 3))
        np.add.at(agg, idx, x.counts.astype(float))
        freq = agg / agg.sum(axis=1, keepdims=True)
        p_est = softmax(s.pooled("mu").mean(axis=0))
        assert np.abs(p_est - freq).max() < 0.02

    def test_metadata_and_shapes(self):
        x, _ = simulate_unigram(3, 4, [0, 1, 2], 40, 1.0, Rng(6))
        s = fit_unigram(x, time_index=[0, 1, 2], method="hmc", opts=HmcOptions(warmup=50, draws=60, chains=2, seed=0))
        assert s.params["mu"].shape == (2, 60, 3, 4)
        assert s.params["sigma2"].shape == (2, 60)
        assert s.metadata["model"] == "unigram"
        assert len(s.metadata["accept_rates"]) == 2
        assert all(0.0 <= a <= 1.0 for a in s.metadata["accept_rates"])

    def test_deterministic(self):
        x, _ = simulate_unigram(2, 3, [0, 1], 25, 1.0, Rng(9))
        opts = HmcOptions(warmup=40, draws=30, chains=1, seed=2)
        a = fit_unigram(x, method="hmc", opts=opts)
        b = fit_unigram(x, method="hmc", opts=opts)
        np.testing.assert_array_equal(a.params["mu"], b.params["mu"])


class TestAdvi:
    def test_recovers_frequencies_and_is_deterministic(self):
        idx = np.array([0, 1])
        x, _ = simulate_unigram(2, 3, idx, 5000, 1.0, Rng(10))
        opts = AdviOptions(iters=1500, mc_samples=4, seed=1, draws=200)
        s = fit_unigram(x, method="advi", opts=opts)
        from plvm.numeric import softmax

        freq = x.counts / x.counts.sum(axis=1, keepdims=True)
        p_est = softmax(s.pooled("mu").mean(axis=0))
        assert np.abs(p_est - freq).max() < 0.05
        assert np.isfinite(s.metadata["elbo"])
        s2 = fit_unigram(x, method="advi", opts=opts)
        np.testing.assert_array_equal(s.params["mu"], s2.params["mu"])

    def test_elbo_trend_improves(self):
        x, _ = simulate_unigram(2, 4, [0, 1], 300, 1.0, Rng(11))
        s = fit_unigram(x, method="advi", opts=AdviOptions(iters=1200, mc_samples=4, seed=0, draws=50))
        trace = s.metadata["elbo_trace"]
        assert trace[-1] > trace[0]


class TestFitDispatch:
    def test_unknown_method(self):
        x, _ = simulate_unigram(2, 3, [0, 1], 10, 1.0, Rng(12))
        with pytest.raises(ConfigError):
            fit_unigram(x, method="gibbs")

    def test_times_required_without_index(self):
        x = CountMatrix(np.array([[1, 2]]), ["s0"], ["f0", "f1"])
        with pytest.raises(DomainError):
            fit_unigram(x, method="hmc")


class TestUnigramState:
    def test_validation(self):
        with pytest.raises(DomainError):
            UnigramState(np.zeros(3), 1.0, np.array([0]))
        with pytest.raises(DomainError):
            UnigramState(np.zeros((2, 3)), 0.0, np.array([0]))
        with pytest.raises(DomainError):
            UnigramState(np.zeros((2, 3)), 1.0, np.array([5]))
