"""Command-line surface: simulate, fit, align, ppc, study, report.

Every subcommand writes files into a run directory (stdout carries logs
only), so pipelines compose by pointing one command at the directory another
produced. A ``fit`` directory is self-contained: it holds the posterior
draws, a copy of the input counts, and ``run.json`` with the resolved
configuration, seed, and library versions needed to reproduce the run.

Exit codes: 0 success, 1 validation or configuration error, 2 numerical
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .align import align_topics, apply_alignment
from .corpus import CountMatrix, read_counts, write_counts
from .exceptions import ConfigError, NumericalError, PlvmError
from .gap import fit_gap_cavi, fit_gap_gibbs, simulate_gap
from .inference import CaviOptions, McmcOptions, PosteriorSamples
from .lda import fit_dmm_gibbs, fit_lda_cavi, fit_lda_gibbs, simulate_dmm, simulate_lda
from .numeric import Rng
from .ppc import default_battery, draw_posterior_predictive, species_discrepancy, write_ppc_reports
from .report import export_plot_data
from .simstudy import grid_from_dict, run_study
from .unigram import AdviOptions, HmcOptions, fit_unigram, simulate_unigram

_MODELS = ("lda", "dmm", "unigram", "gap", "zgap")
_REPORT_KINDS = ("theta_boxes", "beta_intervals", "mu_intervals", "representativeness")


@dataclass(frozen=True)
class RunConfig:
    """Resolved run settings shared by ``simulate`` and ``fit``."""

    model: str
    seed: int
    k: int = 4
    alpha: float = 1.0
    gamma: float = 1.0
    a0: float = 1.0
    b0: float = 1.0
    c0: float = 1.0
    d0: float = 1.0
    p0: float = 0.0
    sigma_a: float = 1.0
    sigma_b: float = 1.0
    sigma0_sq: float = 1.0
    method: str = "vb"
    iters: int = 2000
    warmup: int = 1000
    thin: int = 1
    chains: int = 4
    max_iters: int = 500
    tol: float = 1e-6
    restarts: int = 3
    draws: int = 400
    d: int = 20
    v: int = 50
    n: int = 1000
    t: int = 10

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_CONFIG_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}
_INT_FIELDS = {
    "seed", "k", "iters", "warmup", "thin", "chains", "max_iters",
    "restarts", "draws", "d", "v", "n", "t",
}


def _env_seed() -> int | None:
    raw = os.environ.get("PLVM_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"PLVM_SEED must be an integer, got {raw!r}") from None


def parse_config(path=None, overrides=None) -> tuple[RunConfig, list[str]]:
    """Merge a JSON config file with flag overrides; flags win.

    Returns the resolved config plus a list of logged conflicts. Every
    problem (unknown key, bad type, missing requirement) is reported in one
    ConfigError so a bad config needs only one round trip to fix.
    """
    merged: dict = {}
    problems: list[str] = []
    conflicts: list[str] = []
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        merged.update(raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in merged and merged[key] != value:
            conflicts.append(f"flag --{key.replace('_', '-')} overrides config {key}={merged[key]!r}")
        merged[key] = value

    unknown = sorted(set(merged) - set(_CONFIG_FIELDS))
    problems.extend(f"unknown config key {key!r}" for key in unknown)
    for key in unknown:
        merged.pop(key)

    if merged.get("seed") is None:
        env = _env_seed()
        if env is not None:
            merged["seed"] = env
    if "model" not in merged:
        problems.append("missing required key 'model'")
    if "seed" not in merged:
        problems.append("missing required key 'seed' (flag, config file, or PLVM_SEED)")

    for key in list(merged):
        if key in _INT_FIELDS:
            try:
                merged[key] = int(merged[key])
            except (TypeError, ValueError):
                problems.append(f"{key} must be an integer, got {merged[key]!r}")

    cfg = None
    if not problems:
        try:
            cfg = RunConfig(**merged)
        except TypeError as exc:
            problems.append(str(exc))
    if cfg is not None:
        problems.extend(_validate_config(cfg))
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg, conflicts


def _validate_config(cfg: RunConfig) -> list[str]:
    problems = []
    if cfg.model not in _MODELS:
        problems.append(f"model must be one of {_MODELS}, got {cfg.model!r}")
    if cfg.k < 1:
        problems.append("k must be >= 1")
    for name in ("alpha", "gamma", "a0", "b0", "c0", "d0", "sigma_a", "sigma_b", "sigma0_sq", "tol"):
        if getattr(cfg, name) <= 0:
            problems.append(f"{name} must be positive")
    if not 0 <= cfg.p0 < 1:
        problems.append("p0 must lie in [0, 1)")
    if cfg.model == "zgap" and cfg.p0 == 0:
        problems.append("zgap needs p0 > 0")
    method_table = {
        "lda": ("gibbs", "vb"),
        "dmm": ("gibbs",),
        "gap": ("gibbs", "vb"),
        "zgap": ("gibbs", "vb"),
        "unigram": ("hmc", "vb", "advi"),
    }
    if cfg.model in method_table and cfg.method not in method_table[cfg.model]:
        problems.append(f"method {cfg.method!r} unsupported for {cfg.model}; choose from {method_table[cfg.model]}")
    for name in ("iters", "warmup", "thin", "chains", "max_iters", "restarts", "draws", "d", "v", "n", "t"):
        if getattr(cfg, name) < 1:
            problems.append(f"{name} must be >= 1")
    if cfg.iters <= cfg.warmup:
        problems.append("iters must exceed warmup")
    return problems


# -- run-directory helpers -------------------------------------------------------


def _write_run_json(out: Path, command: str, payload: dict) -> None:
    doc = {
        "command": command,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "versions": {"plvm": __version__, "numpy": np.__version__, "pandas": pd.__version__},
        **payload,
    }
    with open(out / "run.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _read_run_json(fit_dir: Path) -> dict:
    path = fit_dir / "run.json"
    if not path.exists():
        raise ConfigError(f"{fit_dir} is not a run directory (no run.json)")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_long_params(params: dict[str, np.ndarray], path: Path) -> None:
    rows = []
    for name in sorted(params):
        arr = np.asarray(params[name], dtype=float)
        flat = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(-1, 1)
        for i in range(flat.shape[0]):
            for j in range(flat.shape[1]):
                rows.append((name, i, j if arr.ndim > 1 else "", flat[i, j]))
    pd.DataFrame(rows, columns=["param", "idx1", "idx2", "value"]).to_csv(
        path, index=False, lineterminator="\n"
    )


def _load_fit_dir(fit_dir: Path) -> tuple[PosteriorSamples, CountMatrix, dict]:
    meta = _read_run_json(fit_dir)
    samples = PosteriorSamples.load(fit_dir / "draws.csv")
    sample_meta = fit_dir / "sample_meta.csv"
    x = read_counts(
        fit_dir / "counts.csv",
        sample_meta_path=sample_meta if sample_meta.exists() else None,
    )
    return samples, x, meta


# -- subcommands -----------------------------------------------------------------


def _cmd_simulate(args) -> int:
    cfg, conflicts = parse_config(args.config, _flag_overrides(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = Rng(cfg.seed)
    truth: dict[str, np.ndarray]
    if cfg.model == "lda":
        x, params = simulate_lda(cfg.d, cfg.v, cfg.k, cfg.n, cfg.alpha, cfg.gamma, rng)
        truth = {"theta": params.theta, "beta": params.beta}
    elif cfg.model == "dmm":
        theta = np.full(cfg.k, 1.0 / cfg.k)
        x, params = simulate_dmm(cfg.d, cfg.v, cfg.k, cfg.n, theta, cfg.gamma, rng)
        truth = {"z": params.z.astype(float), "theta": params.theta, "beta": params.beta}
    elif cfg.model == "unigram":
        time_index = np.arange(cfg.d) % cfg.t
        x, state = simulate_unigram(cfg.t, cfg.v, time_index, cfg.n, cfg.sigma0_sq, rng)
        truth = {"mu": state.mu}
    else:
        hyp = (cfg.a0, cfg.b0, cfg.c0, cfg.d0)
        p0 = cfg.p0 if cfg.model == "zgap" else 0.0
        x, params, _mask = simulate_gap(cfg.d, cfg.v, cfg.k, hyp, p0, rng)
        truth = {"theta": params.theta, "beta": params.beta}
    write_counts(
        x,
        out / "counts.csv",
        sample_meta_path=out / "sample_meta.csv" if x.times is not None else None,
    )
    _write_long_params(truth, out / "truth.csv")
    _write_run_json(out, "simulate", {"config": cfg.to_dict(), "conflicts": conflicts})
    print(f"simulated {cfg.model}: D={x.n_samples} V={x.n_features} -> {out}")
    return 0


def _fit_samples(cfg: RunConfig, x: CountMatrix) -> PosteriorSamples:
    draw_rng = Rng(cfg.seed, stream=1)
    if cfg.model in ("lda", "dmm", "gap", "zgap") and cfg.method == "gibbs":
        opts = McmcOptions(iters=cfg.iters, warmup=cfg.warmup, thin=cfg.thin, chains=cfg.chains, seed=cfg.seed)
        if cfg.model == "lda":
            return fit_lda_gibbs(x, cfg.k, cfg.alpha, cfg.gamma, opts)
        if cfg.model == "dmm":
            return fit_dmm_gibbs(x, cfg.k, cfg.gamma, opts)
        p0 = cfg.p0 if cfg.model == "zgap" else 0.0
        return fit_gap_gibbs(x, cfg.k, (cfg.a0, cfg.b0, cfg.c0, cfg.d0), p0, opts)
    if cfg.model in ("lda", "gap", "zgap"):
        opts = CaviOptions(max_iters=cfg.max_iters, tol=cfg.tol, restarts=cfg.restarts, seed=cfg.seed)
        if cfg.model == "lda":
            fit = fit_lda_cavi(x, cfg.k, cfg.alpha, cfg.gamma, opts)
        else:
            p0 = cfg.p0 if cfg.model == "zgap" else 0.0
            fit = fit_gap_cavi(x, cfg.k, (cfg.a0, cfg.b0, cfg.c0, cfg.d0), p0, opts)
        return fit.to_posterior_samples(draw_rng, cfg.draws)
    if cfg.method == "hmc":
        opts = HmcOptions(warmup=cfg.warmup, draws=cfg.draws, chains=cfg.chains, seed=cfg.seed)
        return fit_unigram(x, method="hmc", opts=opts)
    opts = AdviOptions(iters=cfg.iters, draws=cfg.draws, seed=cfg.seed)
    return fit_unigram(x, method="advi", opts=opts)


def _cmd_fit(args) -> int:
    cfg, conflicts = parse_config(args.config, _flag_overrides(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    x = read_counts(args.counts, sample_meta_path=args.sample_meta, taxonomy_path=args.taxonomy)
    samples = _fit_samples(cfg, x)
    samples.save(out / "draws.csv")
    write_counts(
        x,
        out / "counts.csv",
        sample_meta_path=out / "sample_meta.csv" if x.times is not None else None,
        taxonomy_path=out / "taxonomy.csv" if x.taxonomy is not None else None,
    )
    _write_long_params(
        {name: samples.point_estimate(name) for name in samples.params}, out / "point.csv"
    )
    _write_run_json(out, "fit", {"config": cfg.to_dict(), "conflicts": conflicts, "metadata": samples.metadata})
    print(f"fit {cfg.model}/{cfg.method}: {samples.n_chains} chains x {samples.n_draws} draws -> {out}")
    return 0


def _cmd_align(args) -> int:
    ref_samples = PosteriorSamples.load(Path(args.ref) / "draws.csv")
    est_samples = PosteriorSamples.load(Path(args.est) / "draws.csv")
    perm = align_topics(ref_samples.point_estimate("beta"), est_samples.point_estimate("beta"))
    aligned = apply_alignment(est_samples, perm)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    aligned.save(out / "draws.csv")
    with open(out / "permutation.json", "w", encoding="utf-8") as fh:
        fh.write(perm.to_json())
        fh.write("\n")
    _write_run_json(out, "align", {"ref": str(args.ref), "est": str(args.est), "perm": list(map(int, perm.perm))})
    print(f"aligned topics with permutation {list(map(int, perm.perm))} -> {out}")
    return 0


def _cmd_ppc(args) -> int:
    fit_dir = Path(args.fit)
    samples, x, meta = _load_fit_dir(fit_dir)
    model = samples.metadata.get("model") or meta.get("config", {}).get("model")
    if model is None:
        raise ConfigError("fit directory does not record the model")
    seed = args.seed if args.seed is not None else _env_seed()
    if seed is None:
        raise ConfigError("ppc needs a seed (--seed or PLVM_SEED)")
    if args.replicates < 1:
        raise ConfigError("--replicates must be >= 1")
    out = Path(args.out) if args.out else fit_dir / "ppc"
    out.mkdir(parents=True, exist_ok=True)
    replicates = draw_posterior_predictive(model, samples, args.replicates, Rng(seed), x)
    reports = default_battery(x, replicates)
    write_ppc_reports(reports, out / "ppc.csv")
    if x.times is not None:
        species_discrepancy(x, replicates).to_csv(out / "discrepancy.csv", index=False, lineterminator="\n")
    _write_run_json(out, "ppc", {"fit": str(fit_dir), "replicates": args.replicates, "seed": seed, "model": model})
    print(f"ppc: {len(reports)} statistics x {args.replicates} replicates -> {out}")
    return 0


def _cmd_study(args) -> int:
    with open(args.grid, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"grid file {args.grid} is not valid JSON: {exc}") from None
    if args.seed is not None:
        raw["base_seed"] = args.seed
    elif "base_seed" not in raw and _env_seed() is not None:
        raw["base_seed"] = _env_seed()
    grid = grid_from_dict(raw)
    out = Path(args.out)
    result = run_study(grid, out_dir=out, workers=args.threads, persist_draws=args.persist_draws)
    _write_run_json(out, "study", {"grid": dataclasses.asdict(grid), "n_results": len(result.results), "n_failures": len(result.failures)})
    print(
        f"study: {len(result.results)} jobs ok, {len(result.failures)} failed -> {out / 'summary.csv'}"
    )
    return 0


def _cmd_report(args) -> int:
    fit_dir = Path(args.fit)
    samples, x, meta = _load_fit_dir(fit_dir)
    out = Path(args.out) if args.out else fit_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    kind = args.kind
    path = out / f"{kind}.csv"
    if kind == "theta_boxes":
        export_plot_data(kind, path, samples=samples, sample_ids=x.sample_ids, times=x.times)
    elif kind == "beta_intervals":
        export_plot_data(kind, path, samples=samples, feature_ids=x.feature_ids)
    elif kind == "mu_intervals":
        if x.times is None:
            raise ConfigError("mu_intervals needs sample times in the fit directory")
        export_plot_data(kind, path, samples=samples, feature_ids=x.feature_ids, times=np.unique(x.times))
    elif kind == "representativeness":
        export_plot_data(kind, path, beta=samples.point_estimate("beta"), feature_ids=x.feature_ids, top_m=args.top_m)
    else:
        raise ConfigError(f"unknown report kind {kind!r}")
    _write_run_json(out, "report", {"fit": str(fit_dir), "kind": kind})
    print(f"report {kind} -> {path}")
    return 0


# -- argument parsing ------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so errors map to exit 1."""

    def error(self, message):
        raise ConfigError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--model", default=None, choices=_MODELS)
    p.add_argument("--method", default=None)
    p.add_argument("--seed", type=int, default=None)
    for name in ("k", "iters", "warmup", "thin", "chains", "max-iters", "restarts", "draws", "d", "v", "n", "t"):
        p.add_argument(f"--{name}", type=int, default=None, dest=name.replace("-", "_"))
    for name in ("alpha", "gamma", "a0", "b0", "c0", "d0", "p0", "sigma-a", "sigma-b", "sigma0-sq", "tol"):
        p.add_argument(f"--{name}", type=float, default=None, dest=name.replace("-", "_"))


def _flag_overrides(args) -> dict:
    return {
        name: getattr(args, name)
        for name in _CONFIG_FIELDS
        if getattr(args, name, None) is not None
    }


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="plvm", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate counts from a model", parents=[], add_help=True)
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="fit a model to a counts CSV")
    _add_config_flags(p)
    p.add_argument("--counts", required=True)
    p.add_argument("--sample-meta", default=None)
    p.add_argument("--taxonomy", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("align", help="align one fit's topics to a reference fit")
    p.add_argument("--ref", required=True)
    p.add_argument("--est", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_align)

    p = sub.add_parser("ppc", help="posterior predictive checks for a fit directory")
    p.add_argument("--fit", required=True)
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_ppc)

    p = sub.add_parser("study", help="run a simulation-study grid")
    p.add_argument("--grid", required=True, help="JSON grid file")
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--persist-draws", action="store_true")
    p.set_defaults(func=_cmd_study)

    p = sub.add_parser("report", help="export plot-ready CSVs from a fit directory")
    p.add_argument("--fit", required=True)
    p.add_argument("--kind", required=True, choices=_REPORT_KINDS)
    p.add_argument("--top-m", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (PlvmError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
