"""Resolve mixture label switching and factorization scale non-identifiability.

Topic matching is greedy on Pearson correlations of sqrt-transformed columns,
the scale all downstream error summaries use. Matching is deterministic: ties
break by the smallest (reference index, estimate index) pair.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import DomainError


@dataclass(frozen=True)
class TopicPermutation:
    """Bijection from reference topic positions to estimated columns.

    ``perm[i] = j`` means estimated column j plays the role of reference
    topic i; ``match_scores[i]`` is the correlation at selection time.
    """

    perm: np.ndarray
    match_scores: np.ndarray
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64)
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "match_scores", np.asarray(self.match_scores, dtype=float))
        if sorted(perm.tolist()) != list(range(perm.size)):
            raise DomainError("perm must be a permutation of 0..K-1")

    @property
    def k(self) -> int:
        return self.perm.size

    def inverse(self) -> "TopicPermutation":
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.k)
        return TopicPermutation(inv, self.match_scores[inv], self.flags)

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.perm, np.arange(self.k)))

    def to_json(self) -> str:
        return json.dumps({"perm": [int(j) for j in self.perm], "flags": list(self.flags)})


def _sqrt_corr_matrix(reference_b: np.ndarray, estimated_b: np.ndarray) -> tuple[np.ndarray, list[str]]:
    ref = np.sqrt(np.asarray(reference_b, dtype=float))
    est = np.sqrt(np.asarray(estimated_b, dtype=float))
    k = ref.shape[1]
    corr = np.full((k, k), -np.inf)
    flags: list[str] = []
    ref_c = ref - ref.mean(axis=0)
    est_c = est - est.mean(axis=0)
    ref_n = np.linalg.norm(ref_c, axis=0)
    est_n = np.linalg.norm(est_c, axis=0)
    for i in range(k):
        if ref_n[i] == 0:
            flags.append(f"reference column {i} is constant; matched last")
            continue
        for j in range(k):
            if est_n[j] == 0:
                continue
            corr[i, j] = float(ref_c[:, i] @ est_c[:, j] / (ref_n[i] * est_n[j]))
    for j in range(k):
        if est_n[j] == 0:
            flags.append(f"estimated column {j} is constant; matched last")
    return corr, flags


def align_topics(reference_b: np.ndarray, estimated_b: np.ndarray) -> TopicPermutation:
    """Greedy correlation matching of estimated topic columns to a reference.

    Repeatedly picks the unmatched (reference, estimate) pair with the highest
    Pearson correlation of sqrt-transformed columns. Constant columns have
    undefined correlations; they are treated as -inf, matched last, and
    flagged on the returned permutation.
    """
    reference_b = np.asarray(reference_b, dtype=float)
    estimated_b = np.asarray(estimated_b, dtype=float)
    if reference_b.shape != estimated_b.shape or reference_b.ndim != 2:
        raise DomainError("reference and estimate must share a V x K shape")
    k = reference_b.shape[1]
    corr, flags = _sqrt_corr_matrix(reference_b, estimated_b)
    perm = np.full(k, -1, dtype=np.int64)
    scores = np.full(k, -np.inf)
    free_ref = set(range(k))
    free_est = set(range(k))
    while free_ref:
        best = (-np.inf, k, k)
        for i in sorted(free_ref):
            for j in sorted(free_est):
                c = corr[i, j]
                if c > best[0]:
                    best = (c, i, j)
        if not np.isfinite(best[0]):
            # only constant columns remain; pair smallest indices deterministically
            i, j = min(free_ref), min(free_est)
            perm[i], scores[i] = j, -np.inf
            free_ref.remove(i)
            free_est.remove(j)
            continue
        _, i, j = best
        perm[i], scores[i] = j, corr[i, j]
        free_ref.remove(i)
        free_est.remove(j)
    return TopicPermutation(perm, scores, tuple(flags))


def apply_alignment(obj, perm: TopicPermutation):
    """Reorder topic-indexed axes of a sample store, param dict, or array.

    Arrays named ``theta`` or ``beta`` have their LAST axis reordered; integer
    label arrays named ``z`` are relabeled through the inverse permutation so
    labels keep pointing at the same topics. Applying a permutation and then
    its inverse is an exact involution.
    """
    from .inference import PosteriorSamples  # local import to avoid a cycle

    p = perm.perm
    if isinstance(obj, PosteriorSamples):
        return PosteriorSamples(
            {name: _align_param(name, arr, p) for name, arr in obj.params.items()},
            dict(obj.metadata),
        )
    if isinstance(obj, dict):
        return {name: _align_param(name, np.asarray(arr), p) for name, arr in obj.items()}
    if isinstance(obj, np.ndarray):
        if obj.shape[-1] != p.size:
            raise DomainError("topic axis length does not match permutation")
        return obj[..., p]
    raise DomainError(f"cannot align object of type {type(obj).__name__}")


def _align_param(name: str, arr: np.ndarray, p: np.ndarray) -> np.ndarray:
    if name == "z":
        inv = np.empty_like(p)
        inv[p] = np.arange(p.size)
        return inv[arr]
    if name in ("theta", "beta"):
        if arr.shape[-1] != p.size:
            raise DomainError(f"parameter {name!r} last axis does not match permutation size")
        return arr[..., p]
    return arr


def normalize_gap_scale(params):
    """Rescale factorization columns so each topic column of B sums to one.

    The inverse scale moves into the matching column of theta, leaving the
    reconstruction theta @ B.T unchanged up to floating round-off. Zero
    columns cannot be normalized; they are left unscaled with a warning.
    Idempotent.
    """
    beta = np.asarray(params.beta, dtype=float).copy()
    theta = np.asarray(params.theta, dtype=float).copy()
    col_sums = beta.sum(axis=0)
    for k, s in enumerate(col_sums):
        if s == 0:
            warnings.warn(f"topic column {k} of B sums to zero; left unscaled", RuntimeWarning)
            continue
        beta[:, k] /= s
        theta[:, k] *= s
    return replace(params, theta=theta, beta=beta)


def normalize_scale_arrays(theta: np.ndarray, beta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Array version of :func:`normalize_gap_scale` for posterior draws.

    Works on any trailing (.., V, K) beta with a matching (.., D, K) theta;
    zero columns pass through unscaled.
    """
    beta = np.asarray(beta, dtype=float).copy()
    theta = np.asarray(theta, dtype=float).copy()
    col_sums = beta.sum(axis=-2, keepdims=True)
    safe = np.where(col_sums == 0, 1.0, col_sums)
    beta /= safe
    theta *= safe
    return theta, beta
