"""Simulation-study harness: grids of (model, D, V, N, p0) cells, multiple
inference methods per cell, truth-aligned error and uncertainty summaries.

For every cell and seed the harness simulates ground truth once, fits each
requested method, aligns the fitted topics back to the truth (after scale
normalization for factorization models), and records two per-feature numbers:
the RMSE of sqrt-transformed posterior medians and the posterior SD of
sqrt-transformed draws along the first topic. Failed jobs are recorded with a
reason and the study continues.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .align import align_topics, apply_alignment, normalize_gap_scale, normalize_scale_arrays
from .corpus import CountMatrix
from .exceptions import ConfigError, DomainError
from .gap import fit_gap_cavi, fit_gap_gibbs, hyperparams_for_expected_total, simulate_gap
from .inference import (
    CaviOptions,
    McmcOptions,
    PosteriorSamples,
    diagnostics,
    parametric_bootstrap,
)
from .lda import fit_lda_cavi, fit_lda_gibbs, simulate_lda
from .numeric import Rng
from .unigram import AdviOptions, HmcOptions, fit_unigram, simulate_unigram

SUMMARY_COLUMNS = (
    "model",
    "method",
    "D",
    "V",
    "N",
    "p0",
    "seed",
    "param",
    "feature",
    "rmse",
    "sd",
    "runtime_s",
    "flags",
)

_MODELS = ("lda", "gap", "zgap", "unigram")
_METHODS = ("gibbs", "hmc", "vb", "bootstrap")


@dataclass(frozen=True)
class ExperimentGrid:
    """Cross product of data sizes for one model, plus method and fit knobs.

    ``n_list`` holds exact per-sample totals for multinomial models and the
    expected total for the factorization models. ``fit`` carries optional
    overrides for the per-method fitting options (see ``_FIT_DEFAULTS``).
    """

    model: str
    d_list: tuple[int, ...] = (20, 100)
    v_list: tuple[int, ...] = (50, 325)
    n_list: tuple[int, ...] = (1625, 6500)
    k: int = 2
    alpha: float = 1.0
    gamma: float = 1.0
    sigma0_sq: float = 1.0
    p0_list: tuple[float, ...] = (0.0,)
    methods: tuple[str, ...] = ("gibbs", "vb")
    seeds: int = 5
    base_seed: int = 0
    bootstrap_b: int = 50
    fit: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("d_list", "v_list", "n_list", "p0_list", "methods"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "fit", dict(self.fit))
        problems = self._problems()
        if problems:
            raise ConfigError("; ".join(problems))

    def _problems(self) -> list[str]:
        problems = []
        if self.model not in _MODELS:
            problems.append(f"model must be one of {_MODELS}, got {self.model!r}")
        for name in ("d_list", "v_list", "n_list"):
            values = getattr(self, name)
            if not values:
                problems.append(f"{name} must be nonempty")
            elif any(int(x) < 1 for x in values):
                problems.append(f"{name} entries must be positive")
        if not self.p0_list:
            problems.append("p0_list must be nonempty")
        elif any(not 0 <= p < 1 for p in self.p0_list):
            problems.append("p0 values must lie in [0, 1)")
        elif self.model == "zgap" and any(p <= 0 for p in self.p0_list):
            problems.append("zgap cells need p0 > 0")
        elif self.model != "zgap" and any(p != 0 for p in self.p0_list):
            problems.append(f"p0 must be 0 for model {self.model!r}")
        if self.k < 1:
            problems.append("k must be >= 1")
        if self.alpha <= 0 or self.gamma <= 0:
            problems.append("alpha and gamma must be positive")
        if self.sigma0_sq <= 0:
            problems.append("sigma0_sq must be positive")
        if not self.methods:
            problems.append("methods must be nonempty")
        else:
            bad = [m for m in self.methods if m not in _METHODS]
            if bad:
                problems.append(f"unknown methods {bad}; choose from {_METHODS}")
            if self.model == "unigram" and "gibbs" in self.methods:
                problems.append("unigram has no collapsed sampler; use hmc")
            if self.model != "unigram" and "hmc" in self.methods:
                problems.append(f"hmc applies to unigram only, not {self.model!r}")
        if self.seeds < 1:
            problems.append("seeds must be >= 1")
        if self.bootstrap_b < 1:
            problems.append("bootstrap_b must be >= 1")
        return problems

    def cells(self) -> list[tuple[int, int, int, float]]:
        return [
            (d, v, n, p0)
            for d in self.d_list
            for v in self.v_list
            for n in self.n_list
            for p0 in self.p0_list
        ]


def default_desk_grid(model: str, methods=None) -> ExperimentGrid:
    """Shrunk default grid that runs in minutes per cell on one machine."""
    if model == "unigram":
        methods = tuple(methods) if methods else ("hmc", "vb")
    else:
        methods = tuple(methods) if methods else ("gibbs", "vb")
    p0_list = (0.2,) if model == "zgap" else (0.0,)
    return ExperimentGrid(model=model, methods=methods, p0_list=p0_list)


def grid_from_dict(raw: dict) -> ExperimentGrid:
    """Build a grid from parsed JSON, reporting every problem at once."""
    if not isinstance(raw, dict):
        raise ConfigError("grid config must be a JSON object")
    known = {f.name for f in dataclasses.fields(ExperimentGrid)}
    problems = [f"unknown grid key {key!r}" for key in raw if key not in known]
    if "model" not in raw:
        problems.append("grid config needs a model")
    if problems:
        raise ConfigError("; ".join(problems))
    return ExperimentGrid(**raw)


@dataclass(frozen=True)
class CellResult:
    """Per-feature error and uncertainty summaries for one fitted job."""

    model: str
    method: str
    d: int
    v: int
    n: int
    p0: float
    seed: int
    rmse: dict[str, np.ndarray]
    sd: dict[str, np.ndarray]
    labels: dict[str, tuple[str, ...]]
    runtime_s: float
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        for store in (self.rmse, self.sd):
            for name, values in store.items():
                values = np.asarray(values, dtype=float)
                if np.any(values < 0) or not np.all(np.isfinite(values)):
                    raise DomainError(f"summary for {name!r} must be finite and >= 0")
                store[name] = values


@dataclass(frozen=True)
class CellFailure:
    model: str
    method: str
    d: int
    v: int
    n: int
    p0: float
    seed: int
    reason: str


@dataclass(frozen=True)
class StudyResult:
    results: tuple[CellResult, ...]
    failures: tuple[CellFailure, ...]
    summary: pd.DataFrame


# -- summary statistics --------------------------------------------------------


def rmse_sqrt_medians(true_b: np.ndarray, aligned_draws: np.ndarray) -> np.ndarray:
    """Per-row RMSE across columns of sqrt(posterior median) vs sqrt(truth)."""
    true_b = np.asarray(true_b, dtype=float)
    aligned_draws = np.asarray(aligned_draws, dtype=float)
    if aligned_draws.ndim != 3 or aligned_draws.shape[1:] != true_b.shape:
        raise DomainError("draws must be (n, V, K) matching the truth shape")
    medians = np.median(aligned_draws, axis=0)
    err = np.sqrt(medians) - np.sqrt(true_b)
    return np.sqrt((err**2).mean(axis=1))


def sd_along_first_topic(aligned_draws: np.ndarray) -> np.ndarray:
    """Sample SD (n-1) of sqrt-transformed draws in the first column."""
    aligned_draws = np.asarray(aligned_draws, dtype=float)
    if aligned_draws.ndim != 3:
        raise DomainError("draws must be (n, V, K)")
    if aligned_draws.shape[0] < 2:
        raise DomainError("need at least 2 draws for a sample SD")
    return np.sqrt(aligned_draws[:, :, 0]).std(axis=0, ddof=1)


def _rmse_medians_raw(true_m: np.ndarray, draws: np.ndarray) -> np.ndarray:
    """Per-column RMSE across rows on the raw scale (real-valued params)."""
    medians = np.median(draws, axis=0)
    return np.sqrt(((medians - true_m) ** 2).mean(axis=0))


# -- study driver ----------------------------------------------------------------


_FIT_DEFAULTS = {
    "mcmc_iters": 800,
    "mcmc_warmup": 400,
    "mcmc_chains": 2,
    "cavi_max_iters": 300,
    "cavi_tol": 1e-6,
    "cavi_restarts": 2,
    "vb_draws": 400,
    "hmc_warmup": 500,
    "hmc_draws": 500,
    "hmc_chains": 2,
    "advi_iters": 3000,
    "advi_draws": 400,
    "boot_cavi_iters": 200,
}


def _cell_rng(base_seed: int, *key_parts) -> Rng:
    key = "/".join(str(p) for p in key_parts).encode()
    stream = int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")
    return Rng(base_seed, stream=stream)


def _derive_seed(rng: Rng) -> int:
    return int(rng.integers(0, 2**31 - 1))


def _simulate_cell(grid: ExperimentGrid, d, v, n, p0, sim_rng):
    """Returns (x, truth dict of per-param arrays, extras)."""
    if grid.model == "lda":
        x, params = simulate_lda(d, v, grid.k, n, grid.alpha, grid.gamma, sim_rng)
        return x, {"beta": params.beta, "theta": params.theta}, {}
    if grid.model == "unigram":
        time_index = np.arange(d)
        x, state = simulate_unigram(d, v, time_index, n, grid.sigma0_sq, sim_rng)
        return x, {"mu": state.mu}, {}
    hyp = hyperparams_for_expected_total(n, v, grid.k)
    x, params, _ = simulate_gap(d, v, grid.k, hyp, p0, sim_rng)
    normalized = normalize_gap_scale(params)
    return x, {"beta": normalized.beta, "theta": normalized.theta}, {"hyp": hyp}


def _fit_job(grid, x, method, p0_assumed, extras, job_rng):
    """Dispatch one (method, assumed-p0) fit; returns (samples, flags)."""
    opts = {**_FIT_DEFAULTS, **grid.fit}
    fit_rng, draw_rng, boot_rng = job_rng.split(3)
    fit_seed = _derive_seed(fit_rng)
    flags: list[str] = []
    if grid.model == "unigram":
        if method == "hmc":
            hmc = HmcOptions(
                warmup=opts["hmc_warmup"],
                draws=opts["hmc_draws"],
                chains=opts["hmc_chains"],
                seed=fit_seed,
            )
            samples = fit_unigram(x, method="hmc", opts=hmc)
            flags.extend(samples.metadata.get("warnings", ()))
            return samples, flags
        if method == "vb":
            advi = AdviOptions(iters=opts["advi_iters"], draws=opts["advi_draws"], seed=fit_seed)
            return fit_unigram(x, method="advi", opts=advi), flags
        raise ConfigError(f"method {method!r} unsupported for unigram")

    mcmc = McmcOptions(
        iters=opts["mcmc_iters"],
        warmup=opts["mcmc_warmup"],
        chains=opts["mcmc_chains"],
        seed=fit_seed,
    )
    cavi = CaviOptions(
        max_iters=opts["cavi_max_iters"],
        tol=opts["cavi_tol"],
        restarts=opts["cavi_restarts"],
        seed=fit_seed,
    )
    if grid.model == "lda":
        if method == "gibbs":
            return fit_lda_gibbs(x, grid.k, grid.alpha, grid.gamma, mcmc), flags
        base = fit_lda_cavi(x, grid.k, grid.alpha, grid.gamma, cavi)
        if not base.converged:
            flags.append("vb_not_converged")
        if method == "vb":
            return base.to_posterior_samples(draw_rng, opts["vb_draws"]), flags
        return _bootstrap_lda(grid, x, base, opts, boot_rng), flags

    hyp = extras["hyp"]
    if method == "gibbs":
        return fit_gap_gibbs(x, grid.k, hyp, p0_assumed, mcmc), flags
    base = fit_gap_cavi(x, grid.k, hyp, p0_assumed, cavi)
    if not base.converged:
        flags.append("vb_not_converged")
    if method == "vb":
        return base.to_posterior_samples(draw_rng, opts["vb_draws"]), flags
    return _bootstrap_gap(grid, x, base, hyp, p0_assumed, opts, boot_rng), flags


def _bootstrap_lda(grid, x, base, opts, boot_rng):
    totals = x.counts.sum(axis=1)
    refit_opts = dict(max_iters=opts["boot_cavi_iters"], tol=opts["cavi_tol"], restarts=1)

    def simulate_fn(params, rng):
        probs = params["theta"] @ params["beta"].T
        counts = rng.multinomial_rows(totals, probs)
        return CountMatrix(counts, x.sample_ids, x.feature_ids, times=x.times)

    def refit_fn(data, rng):
        cavi = CaviOptions(seed=_derive_seed(rng), **refit_opts)
        return fit_lda_cavi(data, grid.k, grid.alpha, grid.gamma, cavi)

    return parametric_bootstrap(base, simulate_fn, refit_fn, grid.bootstrap_b, boot_rng)


def _bootstrap_gap(grid, x, base, hyp, p0_assumed, opts, boot_rng):
    refit_opts = dict(max_iters=opts["boot_cavi_iters"], tol=opts["cavi_tol"], restarts=1)

    def simulate_fn(params, rng):
        lam = params["theta"] @ params["beta"].T
        counts = rng.poisson(lam)
        if p0_assumed > 0:
            mask = rng.bernoulli(p0_assumed, size=counts.shape)
            counts = np.where(mask, 0, counts)
        return CountMatrix(counts, x.sample_ids, x.feature_ids, times=x.times)

    def refit_fn(data, rng):
        cavi = CaviOptions(seed=_derive_seed(rng), **refit_opts)
        return fit_gap_cavi(data, grid.k, hyp, p0_assumed, cavi)

    return parametric_bootstrap(base, simulate_fn, refit_fn, grid.bootstrap_b, boot_rng)


def _mcmc_flags(samples: PosteriorSamples) -> list[str]:
    if samples.n_chains < 2 or samples.n_draws < 4:
        return []
    table = diagnostics(samples)
    worst = table["rhat"].replace([np.inf], np.nan).max()
    flags = []
    if np.isfinite(worst) and worst > 1.05:
        flags.append(f"max_rhat={worst:.3f}")
    elif not np.isfinite(worst):
        flags.append("rhat_undefined")
    return flags


def _summarize_job(grid, x, truth, samples: PosteriorSamples, model_label):
    """Align draws to the truth and compute per-feature summaries."""
    rmse: dict[str, np.ndarray] = {}
    sd: dict[str, np.ndarray] = {}
    labels: dict[str, tuple[str, ...]] = {}
    if grid.model == "unigram":
        # softmax is shift-invariant per row, so compare on the identified
        # row-centered scale rather than raw mu
        mu = samples.pooled("mu")
        mu = mu - mu.mean(axis=-1, keepdims=True)
        true_mu = truth["mu"] - truth["mu"].mean(axis=-1, keepdims=True)
        rmse["mu"] = _rmse_medians_raw(true_mu, mu)
        sd["mu"] = mu[:, 0, :].std(axis=0, ddof=1)
        labels["mu"] = x.feature_ids
        return rmse, sd, labels
    theta = samples.pooled("theta")
    beta = samples.pooled("beta")
    if model_label in ("gap", "zgap"):
        theta, beta = normalize_scale_arrays(theta, beta)
    perm = align_topics(truth["beta"], beta.mean(axis=0))
    aligned = apply_alignment({"theta": theta, "beta": beta}, perm)
    rmse["beta"] = rmse_sqrt_medians(truth["beta"], aligned["beta"])
    sd["beta"] = sd_along_first_topic(aligned["beta"])
    labels["beta"] = x.feature_ids
    rmse["theta"] = rmse_sqrt_medians(truth["theta"], aligned["theta"])
    sd["theta"] = sd_along_first_topic(aligned["theta"])
    labels["theta"] = x.sample_ids
    return rmse, sd, labels


def _job_arms(grid, p0):
    if grid.model == "zgap":
        return [("gap", 0.0), ("zgap", p0)]
    return [(grid.model, p0)]


def _run_one_job(grid, job):
    d, v, n, p0, seed, method, model_label, p0_assumed, x, truth, extras, job_rng = job
    start = time.perf_counter()
    samples, flags = _fit_job(grid, x, method, p0_assumed, extras, job_rng)
    runtime = time.perf_counter() - start
    flags = list(flags) + _mcmc_flags(samples)
    boot_failures = samples.metadata.get("bootstrap_failures", 0)
    if boot_failures:
        flags.append(f"boot_failures={boot_failures}")
    rmse, sd, labels = _summarize_job(grid, x, truth, samples, model_label)
    result = CellResult(
        model=model_label,
        method=method,
        d=d,
        v=v,
        n=n,
        p0=p0,
        seed=seed,
        rmse=rmse,
        sd=sd,
        labels=labels,
        runtime_s=runtime,
        flags=tuple(flags),
    )
    return result, samples


def run_study(
    grid: ExperimentGrid,
    out_dir=None,
    workers: int = 1,
    persist_draws: bool = False,
) -> StudyResult:
    """Run every (cell, seed, method) job; write summary and failure tables.

    Jobs failing with any exception become failure records and the study
    continues. Reruns with the same grid are bit-identical regardless of
    ``workers`` because every job owns a stream keyed by its coordinates.
    """
    jobs = []
    for d, v, n, p0 in grid.cells():
        for seed in range(grid.seeds):
            cell_rng = _cell_rng(grid.base_seed, grid.model, d, v, n, p0, seed)
            sim_rng, method_rng = cell_rng.split(2)
            x, truth, extras = _simulate_cell(grid, d, v, n, p0, sim_rng)
            arms = _job_arms(grid, p0)
            job_rngs = method_rng.split(len(grid.methods) * len(arms))
            for mi, method in enumerate(grid.methods):
                for ai, (model_label, p0_assumed) in enumerate(arms):
                    job_rng = job_rngs[mi * len(arms) + ai]
                    jobs.append(
                        (d, v, n, p0, seed, method, model_label, p0_assumed, x, truth, extras, job_rng)
                    )

    results: list[CellResult | None] = [None] * len(jobs)
    failures: list[CellFailure] = []
    stores: list[PosteriorSamples | None] = [None] * len(jobs)

    def execute(idx_job):
        idx, job = idx_job
        try:
            results[idx], stores[idx] = _run_one_job(grid, job)
        except Exception as exc:  # noqa: BLE001 - job failures are data
            d, v, n, p0, seed, method, model_label = job[0], job[1], job[2], job[3], job[4], job[5], job[6]
            failures.append(
                CellFailure(model_label, method, d, v, n, p0, seed, f"{type(exc).__name__}: {exc}")
            )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(execute, enumerate(jobs)))
    else:
        for idx_job in enumerate(jobs):
            execute(idx_job)

    kept = tuple(r for r in results if r is not None)
    failures_t = tuple(sorted(failures, key=lambda f: (f.model, f.method, f.d, f.v, f.n, f.p0, f.seed)))
    summary = summary_frame(kept)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        summary.to_csv(out / "summary.csv", index=False, lineterminator="\n")
        pd.DataFrame(
            [dataclasses.asdict(f) for f in failures_t],
            columns=["model", "method", "d", "v", "n", "p0", "seed", "reason"],
        ).to_csv(out / "failures.csv", index=False, lineterminator="\n")
        with open(out / "grid.json", "w", encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(grid), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if persist_draws:
            draw_dir = out / "draws"
            draw_dir.mkdir(exist_ok=True)
            for (job, store) in zip(jobs, stores):
                if store is None:
                    continue
                d, v, n, p0, seed, method, model_label = job[0], job[1], job[2], job[3], job[4], job[5], job[6]
                name = f"{model_label}_{method}_d{d}_v{v}_n{n}_p{p0:g}_s{seed}.csv"
                store.save(draw_dir / name)
    return StudyResult(kept, failures_t, summary)


def summary_frame(results) -> pd.DataFrame:
    """Long summary: one row per (job, parameter, feature)."""
    rows = []
    for r in results:
        flags = ";".join(r.flags)
        for param in sorted(r.rmse):
            rmse_v = r.rmse[param]
            sd_v = r.sd[param]
            names = r.labels[param]
            for j in range(len(rmse_v)):
                rows.append(
                    (
                        r.model,
                        r.method,
                        r.d,
                        r.v,
                        r.n,
                        r.p0,
                        r.seed,
                        param,
                        names[j],
                        rmse_v[j],
                        sd_v[j],
                        r.runtime_s,
                        flags,
                    )
                )
    return pd.DataFrame(rows, columns=list(SUMMARY_COLUMNS))
