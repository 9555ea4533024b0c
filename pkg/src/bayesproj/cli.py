"""Command-line interface: fit, project, models, loss-curve, predict, simulate.

Runs are configured by an INI file (sections ``data``, ``prior``,
``sampler``, ``projection``, ``output`` and ``simulation``); command-line
flags override individual keys. Failures print a one-line JSON error record
to stderr and exit with status 2.
"""
from __future__ import annotations

import argparse
import configparser
import io as _stdio
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import io as art
from .datasets import (IngestionError, apply_scaling, birthweight_path, read_table,
                       scaling, to_dataset)
from .experiments import (SimConfig, run_consistency_check, run_heredity_sim, run_large_p_sim,
                          run_preconditioning_contrast)
from .glm import Dataset
from .model_space import model_frequencies, predictive_mixture
from .posterior import (PosteriorSample, PriorSpec, SamplerError, SingularDesignError,
                        sample_bayesian_lasso, sample_gaussian_noninformative,
                        sample_logistic_normal)
from .projection import (CalibrationError, ConstraintSpec, ProjectionError, UndefinedLossError,
                         calibrate_lambda, project_sample)
from .solvers import HeredityGraph

log = logging.getLogger("bayesproj")

BUILTIN_DATA = {"birthweight": birthweight_path}
DEFAULTS = {
    "data": {"sep": ",", "family": "binomial", "intercept": "true", "standardize": "true"},
    "prior": {"kind": "logistic_normal", "variance": "3.0", "lambda": "10.0",
              "ig_shape": "0.01", "ig_rate": "0.01"},
    "sampler": {"burn_in": "1000", "draws": "10000", "seed": "1", "thinning": "1", "chains": "1"},
    "projection": {"kind": "adaptive_lasso", "ridge": "0", "grid_size": "100", "thin": "1",
                   "heredity": "none", "pooling": "at_lambda", "top_k": "5"},
    "output": {"dir": "out"},
}


class ConfigError(ValueError):
    pass


def _list(value: Optional[str]) -> List[str]:
    if not value:
        return []
    return [v.strip() for v in value.replace(";", ",").split(",") if v.strip()]


def _opt_float(sec, key) -> Optional[float]:
    v = sec.get(key, "").strip()
    return float(v) if v else None


@dataclass
class RunConfig:
    """Validated view of an INI configuration."""

    parser: configparser.ConfigParser
    data_path: Optional[Path]
    response: Optional[str]
    covariates: List[str]
    binary: Optional[List[str]]
    family: str
    intercept: bool
    weights: Optional[str]
    standardize: bool
    sep: str
    prior: PriorSpec
    burn_in: int
    draws: int
    seed: int
    thinning: int
    chains: int
    kind: str
    ridge: float
    heredity: Optional[HeredityGraph]
    grid: Optional[np.ndarray]
    grid_size: int
    grid_max: Optional[float]
    thin: int
    lam: Optional[float]
    loss_bound: Optional[float]
    target_size: Optional[float]
    pooling: str
    top_k: int
    out_dir: Path
    hash: str = ""
    base: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_parser(cls, cp: configparser.ConfigParser, base: Path = Path(".")) -> "RunConfig":
        for sec, vals in DEFAULTS.items():
            if not cp.has_section(sec):
                cp.add_section(sec)
            for k, v in vals.items():
                if not cp.has_option(sec, k):
                    cp.set(sec, k, v)
        d, pr, sm, pj = cp["data"], cp["prior"], cp["sampler"], cp["projection"]
        try:
            raw = d.get("path", "").strip()
            data_path = None
            if raw:
                data_path = BUILTIN_DATA[raw]() if raw in BUILTIN_DATA else (base / raw)
            covariates = _list(d.get("covariates"))
            binary = _list(d.get("binary")) if d.get("binary", "").strip() else None
            family = d.get("family").strip()
            kind_p = pr.get("kind").strip()
            if kind_p == "logistic_normal":
                prior = PriorSpec.logistic(pr.getfloat("variance"))
            elif kind_p == "bayesian_lasso":
                prior = PriorSpec.bayesian_lasso(pr.getfloat("lambda"), pr.getfloat("ig_shape"),
                                                 pr.getfloat("ig_rate"))
            else:
                prior = PriorSpec(kind_p)
            grid = None
            if pj.get("lambdas", "").strip():
                grid = np.array([float(v) for v in _list(pj.get("lambdas"))])
            picks = {k: _opt_float(pj, k) for k in ("lambda", "loss_bound", "target_size")}
            if sum(v is not None for v in picks.values()) > 1:
                raise ConfigError("set at most one of projection.lambda, projection.loss_bound "
                                  "and projection.target_size")
            mode = pj.get("heredity").strip()
            heredity = None
            if mode != "none":
                heredity = _parse_heredity(pj.get("parents", ""), mode, covariates)
            cfg = cls(cp, data_path, d.get("response", "").strip() or None, covariates, binary,
                      family, d.getboolean("intercept"), d.get("weights", "").strip() or None,
                      d.getboolean("standardize"), d.get("sep"), prior,
                      sm.getint("burn_in"), sm.getint("draws"), sm.getint("seed"),
                      sm.getint("thinning"), sm.getint("chains"),
                      pj.get("kind").strip(), pj.getfloat("ridge"), heredity, grid,
                      pj.getint("grid_size"), _opt_float(pj, "grid_max"), pj.getint("thin"),
                      picks["lambda"], picks["loss_bound"], picks["target_size"],
                      pj.get("pooling").strip(), pj.getint("top_k"),
                      base / cp["output"].get("dir").strip(), base=base)
        except (ValueError, KeyError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid configuration: {exc}")
        if cfg.chains < 1 or cfg.thin < 1 or cfg.grid_size < 2:
            raise ConfigError("chains and thin must be >= 1 and grid_size >= 2")
        if cfg.pooling not in ("at_lambda", "along_path"):
            raise ConfigError("projection.pooling must be at_lambda or along_path")
        buf = _stdio.StringIO()
        canon = configparser.ConfigParser()
        for sec in sorted(cp.sections()):
            if sec == "output":
                continue
            canon.add_section(sec)
            for k in sorted(cp[sec]):
                canon.set(sec, k, cp[sec][k])
        canon.write(buf)
        cfg.hash = art.config_hash(buf.getvalue())
        return cfg

    def spec(self) -> ConstraintSpec:
        return ConstraintSpec(self.kind, heredity=self.heredity, ridge=self.ridge)

    def frame(self):
        if self.data_path is None or self.response is None or not self.covariates:
            raise ConfigError("data.path, data.response and data.covariates are required")
        return read_table(self.data_path, self.sep)

    def dataset(self) -> Tuple[Dataset, Dict[str, Tuple[float, float]]]:
        """Training data with non-binary covariates standardized, plus the scaling used."""
        df = self.frame()
        params = scaling(df, self.covariates, self.binary) if self.standardize else {}
        df = apply_scaling(df, params)
        return to_dataset(df, self.response, self.covariates, self.family, self.intercept,
                          self.weights, self.standardize), params


def _parse_heredity(text: str, mode: str, covariates: Sequence[str]) -> HeredityGraph:
    """``child: parent parent, child: parent`` using covariate names."""
    index = {c: j for j, c in enumerate(covariates)}
    parents = {}
    for item in _list(text):
        child, _, ps = item.partition(":")
        try:
            parents[index[child.strip()]] = tuple(index[p] for p in ps.split())
        except KeyError as exc:
            raise ConfigError(f"unknown covariate in heredity parents: {exc}")
    return HeredityGraph(parents, mode, len(covariates))


def load_config(path: Optional[str], overrides: Sequence[str] = ()) -> RunConfig:
    cp = configparser.ConfigParser()
    base = Path(".")
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        cp.read(p, encoding="utf-8")
        base = p.parent
    for item in overrides:
        key, eq, value = item.partition("=")
        sec, dot, opt = key.strip().partition(".")
        if not (eq and dot):
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, opt, value)
    return RunConfig.from_parser(cp, base)


def _heredity_free_spec(cfg: RunConfig, ds: Dataset) -> ConstraintSpec:
    spec = cfg.spec()
    if spec.heredity is not None and ds.intercept.any():
        # parents were given over covariates; shift past the intercept column
        shift = {i + 1: tuple(j + 1 for j in ps) for i, ps in spec.heredity.parents.items()}
        spec = ConstraintSpec(spec.kind, HeredityGraph(shift, spec.heredity.mode, ds.p), spec.ridge)
    return spec


def run_sampler(cfg: RunConfig, ds: Dataset) -> PosteriorSample:
    parts = []
    for c in range(cfg.chains):
        seed = cfg.seed if c == 0 else int(np.random.SeedSequence(cfg.seed, spawn_key=(c,))
                                            .generate_state(1)[0])
        if cfg.prior.kind == "logistic_normal":
            parts.append(sample_logistic_normal(ds, cfg.prior, cfg.burn_in, cfg.draws, seed,
                                                cfg.thinning))
        elif cfg.prior.kind == "bayesian_lasso":
            parts.append(sample_bayesian_lasso(ds, cfg.prior, cfg.burn_in, cfg.draws, seed,
                                               cfg.thinning))
        else:
            parts.append(sample_gaussian_noninformative(ds, cfg.draws, seed))
    if len(parts) == 1:
        return parts[0]
    diag = dict(parts[0].diagnostics)
    diag["seed"] = cfg.seed
    diag["chains"] = [p.diagnostics for p in parts]
    phi = None if parts[0].phi_draws is None else np.concatenate([p.phi_draws for p in parts])
    return PosteriorSample(np.vstack([p.draws for p in parts]), phi, diag, parts[0].names)


def _select_level(cfg: RunConfig, ens, args) -> float:
    lam = getattr(args, "lam", None)
    bound = getattr(args, "loss_bound", None)
    size = getattr(args, "target_size", None)
    if sum(v is not None for v in (lam, bound, size)) > 1:
        raise ConfigError("give at most one of --lambda, --loss-bound and --target-size")
    if lam is None and bound is None and size is None:
        lam, bound, size = cfg.lam, cfg.loss_bound, cfg.target_size
    if bound is not None:
        return calibrate_lambda(ens, loss_bound=bound)
    if size is not None:
        return calibrate_lambda(ens, target_size=size)
    if lam is None:
        raise ConfigError("no constraint level: set projection.lambda, loss_bound or target_size")
    return float(ens.lambdas[int(np.argmin(np.abs(ens.lambdas - lam)))])


# commands ---------------------------------------------------------------------

def cmd_fit(cfg: RunConfig, args) -> List[Path]:
    ds, _ = cfg.dataset()
    sample = run_sampler(cfg, ds)
    return [art.save_sample(sample, cfg.out_dir / "draws.csv", cfg.hash)]


def cmd_project(cfg: RunConfig, args) -> List[Path]:
    ds, _ = cfg.dataset()
    sample = art.load_sample(args.sample)
    if cfg.thin > 1:
        sample = sample.subset(np.arange(0, sample.n_draws, cfg.thin))
    spec = _heredity_free_spec(cfg, ds)
    grid = cfg.grid
    if grid is None and cfg.grid_max is not None:
        grid = np.linspace(0.0, cfg.grid_max, cfg.grid_size)
    if grid is None:
        from .projection import default_grid
        grid = default_grid(ds, sample, spec, cfg.grid_size)
    ens = project_sample(ds, sample, spec, grid)
    seed = sample.diagnostics.get("seed")
    out = [art.save_ensemble(ens, cfg.out_dir / "ensemble.csv", seed, cfg.hash)]
    cols, rows = art.ensemble_summary_rows(ens)
    meta = {"kind": ens.kind, "draws": ens.n_draws, "excluded": [list(e) for e in ens.excluded]}
    out.append(art.write_table(cfg.out_dir / "summary.csv", "projection_summary", cols, rows, meta,
                               seed, cfg.hash))
    if args.patterns:
        cols, rows = art.pattern_rows(ens)
        out.append(art.write_table(cfg.out_dir / "patterns.csv", "sparsity_patterns", cols, rows,
                                   {"lambdas": ens.lambdas}, seed, cfg.hash))
    return out


def cmd_models(cfg: RunConfig, args) -> List[Path]:
    ens = art.load_ensemble(args.ensemble)
    pooling = args.pooling or cfg.pooling
    lam = _select_level(cfg, ens, args) if pooling == "at_lambda" else None
    table = model_frequencies(ens, pooling, lam)
    k = args.top_k if args.top_k is not None else cfg.top_k
    return [art.save_model_table(table.top(k), cfg.out_dir / "models.csv", art.artifact_seed(args.ensemble),
                                 cfg.hash)]


def cmd_loss_curve(cfg: RunConfig, args) -> List[Path]:
    methods = args.methods or []
    rows = []
    for j, path in enumerate(args.ensembles):
        ens = art.load_ensemble(path)
        name = methods[j] if j < len(methods) else ens.kind
        size, loss = ens.expected_sizes(), ens.losses()
        rows.extend([name, ens.lambdas[k], size[k], loss[k]] for k in range(ens.lambdas.size))
    return [art.write_table(cfg.out_dir / "loss_curve.csv", "loss_curve",
                            ["method", "lambda", "expected_size", "loss"], rows,
                            {"ensembles": [str(p) for p in args.ensembles]},
                            art.artifact_seed(args.ensembles[0]), cfg.hash)]


def cmd_predict(cfg: RunConfig, args) -> List[Path]:
    ens = art.load_ensemble(args.ensemble)
    lam = _select_level(cfg, ens, args)
    _, params = cfg.dataset()
    new = apply_scaling(read_table(args.new_data, cfg.sep), params)
    missing = [c for c in cfg.covariates if c not in new]
    if missing:
        raise IngestionError(f"new data lacks columns: {', '.join(missing)}")
    X = new[cfg.covariates].to_numpy(dtype=float)
    if cfg.intercept:
        X = np.column_stack([np.ones(X.shape[0]), X])
    mix = predictive_mixture(ens, lam, X)
    rows = [[i, m, v] for i, (m, v) in enumerate(zip(mix.mean, mix.variance))]
    return [art.write_table(cfg.out_dir / "predictions.csv", "predictions",
                            ["row", "mean", "variance"], rows, {"lambda": lam},
                            art.artifact_seed(args.ensemble), cfg.hash)]


def sim_config(cfg: RunConfig, args) -> SimConfig:
    cp = cfg.parser
    sec = cp["simulation"] if cp.has_section("simulation") else {}
    scenario = args.scenario or sec.get("scenario", "").strip()
    if not scenario:
        raise ConfigError("simulation.scenario is required")
    kw = {}
    reps = args.replicates if args.replicates is not None else sec.get("replicates")
    if reps:
        kw["replicates"] = int(reps)
    seed = args.seed if args.seed is not None else sec.get("seed")
    if seed:
        kw["seed"] = int(seed)
    for key, conv in (("draws", int), ("burn_in", int), ("grid_size", int)):
        if sec.get(key):
            kw[key] = conv(sec[key])
    if scenario == "heredity_7_2":
        return SimConfig.heredity(float(sec.get("rho", "0")), **kw)
    if scenario.startswith("large_p_7_3_ex"):
        return SimConfig.large_p(int(scenario[-1]), **kw)
    if scenario == "consistency_thm1":
        if sec.get("ladder"):
            kw["ladder"] = tuple(int(v) for v in _list(sec["ladder"]))
        g = sec.get("gamma_exponent", "0.25").strip()
        return SimConfig.consistency(gamma_exponent=None if g.lower() == "none" else float(g), **kw)
    raise ConfigError(f"unknown scenario {scenario!r}")


def cmd_simulate(cfg: RunConfig, args) -> List[Path]:
    sc = sim_config(cfg, args)
    if sc.scenario == "heredity_7_2":
        metrics = list(run_heredity_sim(sc))
    elif sc.scenario == "consistency_thm1":
        metrics = [run_consistency_check(sc)]
    elif args.contrast:
        metrics = list(run_preconditioning_contrast(sc))
    else:
        metrics = [run_large_p_sim(sc)]
    return [art.save_metrics(m, cfg.out_dir / f"{sc.scenario}_{m.label}.csv", sc.seed, cfg.hash)
            for m in metrics]


COMMANDS = {"fit": cmd_fit, "project": cmd_project, "models": cmd_models,
            "loss-curve": cmd_loss_curve, "predict": cmd_predict, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bayesproj",
                                 description="Posterior projections for variable selection.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one configuration key")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="master seed")
        return p

    def level(p):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--lambda", dest="lam", type=float, help="constraint level")
        g.add_argument("--loss-bound", type=float, help="largest tolerated explanatory loss")
        g.add_argument("--target-size", type=float, help="target expected model size")
        return p

    common(sub.add_parser("fit", help="sample the encompassing-model posterior"))
    p = common(sub.add_parser("project", help="project every draw on a grid of levels"))
    p.add_argument("--sample", required=True)
    p.add_argument("--grid-size", type=int)
    p.add_argument("--patterns", action="store_true", help="also write per-draw sparsity patterns")
    p = level(common(sub.add_parser("models", help="tabulate projected models")))
    p.add_argument("--ensemble", required=True)
    p.add_argument("--pooling", choices=("at_lambda", "along_path"))
    p.add_argument("--top-k", type=int)
    p = common(sub.add_parser("loss-curve", help="loss versus expected size for several ensembles"))
    p.add_argument("ensembles", nargs="+")
    p.add_argument("--methods", nargs="*")
    p = level(common(sub.add_parser("predict", help="predictive mixture at new covariate rows")))
    p.add_argument("--ensemble", required=True)
    p.add_argument("--new-data", required=True)
    p = common(sub.add_parser("simulate", help="run a simulation study"))
    p.add_argument("--scenario")
    p.add_argument("--replicates", type=int)
    p.add_argument("--contrast", action="store_true",
                   help="large-p scenarios: plug-in versus ensemble preconditioning")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.set)
        if args.out:
            overrides.append(f"output.dir={args.out}")
        if args.seed is not None:
            overrides.append(f"sampler.seed={args.seed}")
        if getattr(args, "grid_size", None):
            overrides.append(f"projection.grid_size={args.grid_size}")
        cfg = load_config(args.config, overrides)
        if args.out:
            cfg.out_dir = Path(args.out)
        written = COMMANDS[args.command](cfg, args)
    except (ConfigError, IngestionError, SamplerError, SingularDesignError, ProjectionError,
            UndefinedLossError, CalibrationError, art.ArtifactError, ValueError, KeyError) as exc:
        record = {"status": "error", "command": args.command, "error": type(exc).__name__,
                  "message": str(exc)}
        diag = getattr(exc, "diagnostics", None)
        if diag:
            record["diagnostics"] = diag
        print(json.dumps(record, default=str), file=sys.stderr)
        return 2
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
