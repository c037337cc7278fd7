"""Brute-force reference distributions used by several test modules.

Everything here is deliberately naive: direct enumeration over label
configurations with the collapsed masses computed term by term. These
routines are only feasible for tiny instances and exist to check the
samplers, not to be fast.
"""

import itertools
import math

import numpy as np
from scipy.special import gammaln


def sqrt_corr(a, b):
    """Pearson correlation of sqrt-transformed vectors; -inf if degenerate."""
    sa, sb = np.sqrt(a), np.sqrt(b)
    sa = sa - sa.mean()
    sb = sb - sb.mean()
    denom = np.linalg.norm(sa) * np.linalg.norm(sb)
    return float(sa @ sb / denom) if denom > 0 else -np.inf


def exhaustive_best_perm(reference, estimate):
    """Assignment oracle: try all K! pairings, maximize summed sqrt_corr."""
    k = reference.shape[1]
    best, best_score = None, -np.inf
    for perm in itertools.permutations(range(k)):
        score = sum(sqrt_corr(reference[:, i], estimate[:, perm[i]]) for i in range(k))
        if score > best_score:
            best, best_score = perm, score
    return np.array(best)


def compositions(total, k):
    """All length-k nonnegative integer vectors summing to total."""
    if k == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in compositions(total - first, k - 1):
            yield (first, *rest)


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(key, 0.0) - q.get(key, 0.0)) for key in keys)


def lda_exact_config_posterior(counts, k, alpha, gamma):
    """Exact posterior over per-cell topic count configurations.

    Token labels inside one (sample, feature) cell are exchangeable, so the
    collapsed label posterior factorizes through the per-cell count vectors
    m_c (sum_k m_ck = x_c). Each configuration covers prod_c multinomial(x_c;
    m_c) equally likely label vectors; the collapsed mass of one label vector
    depends only on the aggregated counts n_dk and n_vk.

    Returns a dict mapping flattened config tuples to probabilities, keyed in
    the row-major nonzero-cell order of ``counts``.
    """
    counts = np.asarray(counts)
    alpha = np.asarray(alpha, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    d_n, v_n = counts.shape
    cell_d, cell_v = np.nonzero(counts)
    cell_x = counts[cell_d, cell_v]
    log_masses = {}
    for config in itertools.product(*(compositions(int(x), k) for x in cell_x)):
        m = np.array(config)
        n_dk = np.zeros((d_n, k))
        n_vk = np.zeros((v_n, k))
        np.add.at(n_dk, cell_d, m)
        np.add.at(n_vk, cell_v, m)
        n_k = m.sum(axis=0)
        log_mult = sum(
            math.lgamma(int(x) + 1) - sum(math.lgamma(c + 1) for c in row)
            for x, row in zip(cell_x, config)
        )
        log_mass = (
            log_mult
            + gammaln(alpha[None, :] + n_dk).sum()
            - gammaln(alpha.sum() + n_dk.sum(axis=1)).sum()
            + gammaln(gamma[:, None] + n_vk).sum()
            - gammaln(gamma.sum() + n_k).sum()
        )
        log_masses[tuple(int(c) for c in m.reshape(-1))] = log_mass
    keys = list(log_masses)
    logs = np.array([log_masses[key] for key in keys])
    probs = np.exp(logs - logs.max())
    probs /= probs.sum()
    return dict(zip(keys, probs))


def empirical_config_distribution(cell_count_draws) -> dict:
    """Frequency of flattened per-cell count configurations in sampler output."""
    draws = np.asarray(cell_count_draws)
    flat = draws.reshape(-1, draws.shape[-2] * draws.shape[-1])
    freq: dict = {}
    for row in flat:
        key = tuple(int(round(c)) for c in row)
        freq[key] = freq.get(key, 0) + 1
    total = sum(freq.values())
    return {key: count / total for key, count in freq.items()}


def dmm_exact_assignment_posterior(counts, k, gamma):
    """Exact posterior over the K^D labeled cluster assignments.

    Weights use a flat Dirichlet prior on the mixture proportions and a
    Dirichlet(gamma) prior on each cluster's composition; the multinomial
    coefficients are assignment-independent and cancel.
    """
    counts = np.asarray(counts)
    gamma = np.asarray(gamma, dtype=float)
    d_n = counts.shape[0]
    assigns = list(itertools.product(range(k), repeat=d_n))
    logs = np.empty(len(assigns))
    for i, z in enumerate(assigns):
        sizes = np.bincount(z, minlength=k)
        # flat prior over proportions, integrated out
        lp = gammaln(float(k)) - gammaln(float(k + d_n)) + gammaln(1.0 + sizes).sum()
        for c in range(k):
            cluster = counts[[d for d in range(d_n) if z[d] == c]].sum(axis=0)
            lp += (
                gammaln(gamma.sum())
                - gammaln(gamma.sum() + cluster.sum())
                + gammaln(gamma + cluster).sum()
                - gammaln(gamma).sum()
            )
        logs[i] = lp
    probs = np.exp(logs - logs.max())
    probs /= probs.sum()
    return {z: p for z, p in zip(assigns, probs)}
