"""Posterior sample store, summaries, convergence diagnostics, bootstrap.

All samplers in this package emit a :class:`PosteriorSamples`: a mapping from
parameter name to an array with leading (chain, draw) axes, plus run metadata.
The store serializes to a long-format CSV with a JSON sidecar.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .align import align_topics, apply_alignment
from .exceptions import DomainError, NumericalError

DEFAULT_PROBS = (0.025, 0.25, 0.75, 0.975)


@dataclass(frozen=True)
class McmcOptions:
    """Shared MCMC run lengths. ``iters`` is the TOTAL sweep count including
    warmup; sweeps after the first ``warmup`` are retained every ``thin``."""

    iters: int = 2000
    warmup: int = 1000
    thin: int = 1
    chains: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.warmup < 0 or self.thin < 1 or self.chains < 1:
            raise DomainError("invalid MCMC run lengths")
        if self.iters <= self.warmup:
            raise DomainError("iters must exceed warmup")
        if (self.iters - self.warmup) // self.thin < 1:
            raise DomainError("thinning leaves no retained draws")

    @property
    def n_retained(self) -> int:
        # sweep s (1-based) is kept when s > warmup and (s - warmup) % thin == 0
        return (self.iters - self.warmup) // self.thin


@dataclass(frozen=True)
class CaviOptions:
    max_iters: int = 500
    tol: float = 1e-6
    seed: int = 0
    restarts: int = 3

    def __post_init__(self):
        if self.max_iters < 1 or self.tol < 0 or self.restarts < 1:
            raise DomainError("invalid coordinate-ascent options")


@dataclass
class PosteriorSamples:
    """Draws keyed by parameter name, arrays shaped (chain, draw, index...)."""

    params: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = None
        for name, arr in self.params.items():
            arr = np.asarray(arr)
            self.params[name] = arr
            if arr.ndim < 2:
                raise DomainError(f"parameter {name!r} needs (chain, draw) leading axes")
            if shape is None:
                shape = arr.shape[:2]
            elif arr.shape[:2] != shape:
                raise DomainError(f"parameter {name!r} disagrees on (chain, draw) shape")
            if np.isnan(arr).any():
                raise DomainError(f"parameter {name!r} contains NaN draws")

    @property
    def n_chains(self) -> int:
        return next(iter(self.params.values())).shape[0] if self.params else 0

    @property
    def n_draws(self) -> int:
        return next(iter(self.params.values())).shape[1] if self.params else 0

    def pooled(self, name: str) -> np.ndarray:
        """All chains concatenated: shape (chain*draw, index...)."""
        arr = self.params[name]
        return arr.reshape((-1,) + arr.shape[2:])

    def point_estimate(self, name: str) -> np.ndarray:
        return self.pooled(name).mean(axis=0)

    def save(self, csv_path) -> None:
        """Write long-format CSV plus a same-stem .json metadata sidecar."""
        csv_path = Path(csv_path)
        frames = []
        for name in sorted(self.params):
            arr = self.params[name]
            tail = arr.shape[2:]
            if len(tail) > 2:
                raise DomainError(f"parameter {name!r} has more than two index axes")
            c, d = arr.shape[:2]
            n_idx = int(np.prod(tail)) if tail else 1
            if len(tail) == 0:
                i1 = np.full(n_idx, "", dtype=object)
                i2 = np.full(n_idx, "", dtype=object)
            elif len(tail) == 1:
                i1 = np.arange(tail[0]).astype(str).astype(object)
                i2 = np.full(n_idx, "", dtype=object)
            else:
                g1, g2 = np.divmod(np.arange(n_idx), tail[1])
                i1 = g1.astype(str).astype(object)
                i2 = g2.astype(str).astype(object)
            frames.append(
                pd.DataFrame(
                    {
                        "param": name,
                        "idx1": np.tile(i1, c * d),
                        "idx2": np.tile(i2, c * d),
                        "chain": np.repeat(np.arange(c), d * n_idx),
                        "draw": np.tile(np.repeat(np.arange(d), n_idx), c),
                        "value": arr.reshape(-1),
                    }
                )
            )
        table = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
            columns=["param", "idx1", "idx2", "chain", "draw", "value"]
        )
        table.to_csv(csv_path, index=False, lineterminator="\n")
        sidecar = {
            "metadata": _jsonable(self.metadata),
            "n_chains": self.n_chains,
            "n_draws": self.n_draws,
            "shapes": {k: list(v.shape[2:]) for k, v in self.params.items()},
        }
        csv_path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, csv_path) -> "PosteriorSamples":
        csv_path = Path(csv_path)
        sidecar = json.loads(csv_path.with_suffix(".json").read_text())
        table = pd.read_csv(
            csv_path,
            dtype={"param": str},
            keep_default_na=False,
            na_values=[],
            float_precision="round_trip",
        )
        params: dict[str, np.ndarray] = {}
        c, d = sidecar["n_chains"], sidecar["n_draws"]
        for name, tail in sidecar["shapes"].items():
            sub = table[table["param"] == name]
            arr = np.empty((c, d, *tail), dtype=float)
            flat = arr.reshape(c, d, -1)
            n_idx = flat.shape[2]
            if len(sub) != c * d * n_idx:
                raise DomainError(f"row count for parameter {name!r} does not match sidecar shape")
            idx = np.zeros(len(sub), dtype=np.int64)
            if len(tail) >= 1:
                idx = sub["idx1"].to_numpy(dtype=np.int64)
            if len(tail) == 2:
                idx = idx * tail[1] + sub["idx2"].to_numpy(dtype=np.int64)
            flat[
                sub["chain"].to_numpy(dtype=np.int64),
                sub["draw"].to_numpy(dtype=np.int64),
                idx,
            ] = sub["value"].to_numpy(dtype=float)
            params[name] = arr
        return cls(params, sidecar.get("metadata", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def posterior_quantiles(draws: np.ndarray, probs) -> np.ndarray:
    """Linear-interpolation (type-7) quantiles of pooled draws."""
    return np.quantile(np.asarray(draws, dtype=float), probs, method="linear")


def summarize_posterior(s: PosteriorSamples, probs=DEFAULT_PROBS) -> pd.DataFrame:
    """Per-scalar medians, requested quantiles, and SDs, pooled over chains."""
    if not s.params:
        raise DomainError("empty posterior store")
    if s.n_chains * s.n_draws < 2:
        raise DomainError("need at least 2 retained draws to summarize")
    probs = tuple(float(p) for p in probs)
    rows = []
    for name in sorted(s.params):
        flat = s.pooled(name).reshape(s.n_chains * s.n_draws, -1)
        tail = s.params[name].shape[2:]
        med = np.median(flat, axis=0)
        qs = np.quantile(flat, probs, axis=0, method="linear")
        sd = flat.std(axis=0, ddof=1)
        for j in range(flat.shape[1]):
            i1, i2 = _unflatten_index(j, tail)
            row = {"param": name, "idx1": i1, "idx2": i2, "median": med[j]}
            for p, q in zip(probs, qs[:, j]):
                row[f"q{100 * p:g}"] = q
            row["sd"] = sd[j]
            rows.append(row)
    return pd.DataFrame(rows)


def _unflatten_index(j: int, tail: tuple) -> tuple:
    if len(tail) == 0:
        return "", ""
    if len(tail) == 1:
        return j, ""
    return j // tail[1], j % tail[1]


def split_rhat(draws: np.ndarray) -> float:
    """Split-R-hat of a (chain, draw) array.

    Each chain is cut in half; R-hat compares between- and within-half
    variances. Disjoint constant chains give inf; a globally constant
    parameter gives 1.
    """
    x = np.asarray(draws, dtype=float)
    if x.ndim != 2 or x.shape[1] < 4:
        raise DomainError("split_rhat needs a (chain, draw) array with at least 4 draws")
    half = x.shape[1] // 2
    z = np.vstack([x[:, :half], x[:, half:2 * half]])
    w = z.var(axis=1, ddof=1).mean()
    b = half * z.mean(axis=1).var(ddof=1)
    if w == 0.0:
        return 1.0 if b == 0.0 else np.inf
    var_plus = (half - 1) / half * w + b / half
    return float(np.sqrt(var_plus / w))


def _autocovariance(y: np.ndarray) -> np.ndarray:
    n = y.size
    y = y - y.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(y, nfft)
    return np.fft.irfft(f * np.conj(f), nfft)[:n] / n


def ess(draws: np.ndarray) -> float:
    """Effective sample size of a (chain, draw) array.

    Autocorrelations are combined across chains and the sum truncated at the
    first nonpositive Geyer pair sum.
    """
    x = np.asarray(draws, dtype=float)
    if x.ndim != 2 or x.shape[1] < 4:
        raise DomainError("ess needs a (chain, draw) array with at least 4 draws")
    m, n = x.shape
    if np.all(x == x.flat[0]):
        return float(m * n)
    acov = np.stack([_autocovariance(x[c]) for c in range(m)])
    w = (acov[:, 0] * n / (n - 1)).mean()
    var_plus = w * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus == 0.0:
        return float(m * n)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    tau = 0.0
    k = 0
    while 2 * k + 1 < n:
        pair = rho[2 * k] + rho[2 * k + 1]
        if k > 0 and pair <= 0.0:
            break
        tau += pair
        k += 1
    tau = max(2.0 * tau - 1.0, 1.0 / (m * n))
    return float(m * n / tau)


def diagnostics(s: PosteriorSamples) -> pd.DataFrame:
    """Per-scalar split-R-hat and ESS. Needs >= 2 chains of >= 4 draws."""
    if not s.params:
        raise DomainError("empty posterior store")
    if s.n_chains < 2 or s.n_draws < 4:
        raise DomainError("diagnostics need at least 2 chains with 4 draws each")
    rows = []
    for name in sorted(s.params):
        arr = s.params[name]
        tail = arr.shape[2:]
        flat = arr.reshape(s.n_chains, s.n_draws, -1)
        for j in range(flat.shape[2]):
            i1, i2 = _unflatten_index(j, tail)
            scalar = flat[:, :, j]
            flag = ""
            if np.all(scalar == scalar.flat[0]):
                rhat = 1.0
                flag = "constant"
            else:
                rhat = split_rhat(scalar)
            rows.append(
                {
                    "param": name,
                    "idx1": i1,
                    "idx2": i2,
                    "rhat": rhat,
                    "ess": ess(scalar),
                    "flag": flag,
                }
            )
    return pd.DataFrame(rows)


def parametric_bootstrap(fit, simulate_fn, refit_fn, B: int, rng) -> PosteriorSamples:
    """Parametric bootstrap around a variational fit.

    Simulates B datasets from the fit's point parameters, refits each, aligns
    every refit back to the original fit's topics, and stores one pseudo-draw
    per surviving replicate. Failed refits are skipped and counted; more than
    20% failures aborts.
    """
    if B < 1:
        raise DomainError("need at least one bootstrap replicate")
    ref_params = fit.point_params()
    if "beta" not in ref_params:
        raise DomainError("bootstrap reference fit must expose a beta matrix")
    streams = rng.split(B)
    draws: list[dict[str, np.ndarray]] = []
    failures: list[str] = []
    for b in range(B):
        sim_rng, fit_rng = streams[b].split(2)
        try:
            data = simulate_fn(ref_params, sim_rng)
            refit = refit_fn(data, fit_rng)
            est = refit.point_params()
            perm = align_topics(ref_params["beta"], est["beta"])
            draws.append(apply_alignment(est, perm))
        except Exception as exc:  # noqa: BLE001 - replicate failures are data
            failures.append(f"replicate {b}: {exc}")
    if len(failures) > 0.2 * B:
        raise NumericalError(
            f"parametric bootstrap lost {len(failures)}/{B} replicates; first: {failures[0]}"
        )
    params = {
        name: np.stack([d[name] for d in draws])[np.newaxis]
        for name in draws[0]
    }
    meta = {
        "method": "bootstrap",
        "bootstrap_requested": B,
        "bootstrap_failures": len(failures),
        "warnings": failures,
    }
    return PosteriorSamples(params, meta)
