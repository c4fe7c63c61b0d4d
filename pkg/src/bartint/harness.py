"""Experiment orchestration: configs, repetitions, result records, reports."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .design import DesignStreams, run_sequential
from .exceptions import ConfigError
from .gpbq import GpConfig, bq_posterior
from .integrands import GENZ_FAMILIES, GenzFunction, Portfolio, ingest_pool, step_function
from .measures import measure_from_dict
from .prior import BartPriorConfig
from .quadrature import mape, posterior_summary
from .sampler import ChainConfig, run_chain

logger = logging.getLogger(__name__)

EXPERIMENTS = ("genz", "step", "portfolio", "survey", "runtime")
METHODS = ("bart_int", "gp_bq", "mc")
OUTPUT_ENV = "BARTINT_OUTPUT"
SHIPPED_CONFIGS = ("genz_d1", "genz_d10", "step_uniform", "step_truncgauss", "portfolio_d5",
                   "portfolio_d10", "portfolio_d20", "survey", "runtime")

# Survey covariates: name -> levels (None marks the ordinal column kept numeric).
SURVEY_SCHEMA = {
    "education": None,
    "age_group": ["16-24", "25-34", "35-44", "45-54", "55-64", "65-74", "75-84", "85+"],
    "sex": ["female", "male"],
    "own_child": ["no", "yes"],
    "health_insurance": ["no", "yes"],
    "marital_status": ["divorced", "married", "never_married", "separated", "widowed"],
    "employment": ["employed", "not_employed"],
    "disability": ["no", "yes"],
}
SURVEY_RESPONSE = "income"


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "bartint_results"))


# ---------------------------------------------------------------- configs


@dataclass
class ExperimentConfig:
    """One integrand, one method, ``reps`` repetitions.

    ``n_seq`` set means a sequential design run of ``n_ini + n_seq`` points;
    otherwise ``n`` i.i.d. points are used. ``mc`` always uses the same
    total budget and the same initial points as the design methods.
    """

    name: str
    experiment: str
    method: str
    d: int
    reps: int
    seeds: list
    integrand: dict = field(default_factory=dict)
    n_ini: int | None = None
    n_seq: int | None = None
    n: int | None = None
    prior: dict = field(default_factory=dict)
    chain: dict = field(default_factory=dict)
    gp: dict = field(default_factory=dict)
    design: dict = field(default_factory=dict)
    measure: dict = field(default_factory=dict)
    pool: dict = field(default_factory=dict)
    grid: list = field(default_factory=list)
    scale: str = "desk"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.experiment != "runtime" and self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if len(self.seeds) < self.reps:
            raise ConfigError("need at least one seed per repetition")
        if self.d < 1:
            raise ConfigError("dimension must be at least 1")
        if self.experiment == "genz" and self.integrand.get("family") not in GENZ_FAMILIES:
            raise ConfigError(f"genz family must be one of {GENZ_FAMILIES}")
        if self.experiment == "runtime":
            if not self.grid:
                raise ConfigError("runtime benchmark needs a grid of n values")
        elif self.n_seq is not None:
            if not self.n_ini or self.n_ini < 1 or self.n_seq < 1:
                raise ConfigError("sequential runs need n_ini >= 1 and n_seq >= 1")
        elif not self.n or self.n < 2:
            raise ConfigError("non-sequential runs need n >= 2")
        try:
            BartPriorConfig(**self.prior)
            ChainConfig(**_chain_kwargs(self.chain))
            GpConfig(**self.gp)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def sequential(self) -> bool:
        return self.n_seq is not None

    @property
    def n_total(self) -> int:
        return self.n_ini + self.n_seq if self.sequential else self.n

    @property
    def tag(self) -> str:
        fam = self.integrand.get("family")
        return f"{self.experiment}_{fam}_d{self.d}" if fam else f"{self.experiment}_d{self.d}"

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _chain_kwargs(chain: dict) -> dict:
    out = dict(chain)
    if "move_probs" in out:
        out["move_probs"] = tuple(out["move_probs"])
    return out


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def make_seeds(seed: int, reps: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(int(seed)).generate_state(reps)]


def shipped_config(name: str) -> Path:
    """Path of a config file bundled with the package."""
    if name not in SHIPPED_CONFIGS:
        raise ConfigError(f"no shipped config {name!r}; choose from {SHIPPED_CONFIGS}")
    return Path(str(resources.files("bartint") / "configs" / f"{name}.yaml"))


def read_config(path) -> dict:
    p = Path(path)
    if not p.exists() and str(path) in SHIPPED_CONFIGS:
        p = shipped_config(str(path))
    try:
        with open(p, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    return raw


def expand_config(raw: dict, seed: int | None = None, reps: int | None = None,
                  paper_scale: bool = False, methods=None, families=None) -> list[ExperimentConfig]:
    """Turn one config mapping into per-integrand, per-method experiment configs."""
    raw = dict(raw)
    overrides = raw.pop("paper_scale", {}) or {}
    if paper_scale:
        raw = _deep_merge(raw, overrides)
    known = {"name", "experiment", "d", "families", "methods", "reps", "seed", "seeds", "n_ini",
             "n_seq", "n", "prior", "chain", "gp", "design", "measure", "pool", "grid"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("name", "experiment", "d"):
        if key not in raw:
            raise ConfigError(f"config is missing {key!r}")
    reps = int(reps if reps is not None else raw.get("reps", 1))
    if seed is not None:
        seeds = make_seeds(seed, reps)
    elif raw.get("seeds"):
        seeds = [int(s) for s in raw["seeds"]]
    else:
        seeds = make_seeds(int(raw.get("seed", 0)), reps)
    exp = raw["experiment"]
    method_list = list(methods or raw.get("methods") or (["bart_int", "gp_bq"] if exp == "runtime" else METHODS))
    fams = list(families or raw.get("families") or []) if exp == "genz" else [None]
    if exp == "genz" and not fams:
        raise ConfigError("genz config needs a list of families")
    if exp == "runtime":
        method_list = ["+".join(method_list)]
    out = []
    for fam in fams:
        for method in method_list:
            out.append(ExperimentConfig(
                name=str(raw["name"]), experiment=exp, method=method, d=int(raw["d"]),
                reps=reps, seeds=seeds[:reps], integrand={"family": fam} if fam else {},
                n_ini=raw.get("n_ini"), n_seq=raw.get("n_seq"), n=raw.get("n"),
                prior=dict(raw.get("prior") or {}), chain=dict(raw.get("chain") or {}),
                gp=dict(raw.get("gp") or {}), design=dict(raw.get("design") or {}),
                measure=dict(raw.get("measure") or {}), pool=dict(raw.get("pool") or {}),
                grid=list(raw.get("grid") or []), scale="paper" if paper_scale else "desk"))
    return out


def load_suite(path, **kwargs) -> list[ExperimentConfig]:
    return expand_config(read_config(path), **kwargs)


# ---------------------------------------------------------------- problems


@dataclass
class Problem:
    f: object
    target: object
    truth: float
    pool: object = None
    candidates: np.ndarray | None = None


def _measure(cfg: ExperimentConfig):
    spec = cfg.measure or {"kind": "uniform"}
    return measure_from_dict(spec, cfg.d)


def build_problem(cfg: ExperimentConfig, workdir: Path | None = None) -> Problem:
    if cfg.experiment == "genz":
        f = GenzFunction(cfg.integrand["family"], cfg.d)
        return Problem(f, _measure(cfg), f.true_integral())
    if cfg.experiment in ("step", "runtime"):
        measure = _measure(cfg)
        truth = 1.0 - float(measure.marginals[0].cdf(0.5))
        return Problem(step_function, measure, truth)
    if cfg.experiment == "portfolio":
        spec = Portfolio(cfg.d, **cfg.integrand)
        measure = measure_from_dict(cfg.measure or {"kind": "exponential", "rate": 1.0}, cfg.d)
        return Problem(spec, measure, spec.true_probability())
    pool = load_survey_pool(cfg.pool, workdir)
    if pool.d != cfg.d:
        raise ConfigError(f"survey pool encodes to d={pool.d}, config says d={cfg.d}")
    n_cand = int(cfg.pool.get("n_candidates", 10_000))
    rng = np.random.default_rng(int(cfg.pool.get("candidate_seed", 0)))
    cand = np.sort(rng.choice(pool.n_pool, size=min(n_cand, pool.n_pool), replace=False))
    return Problem(None, pool, pool.truth(), pool=pool, candidates=cand)


def load_survey_pool(spec: dict, workdir: Path | None = None):
    """Read the pool CSV named in ``spec``, synthesising it first if absent."""
    path = spec.get("path")
    if path is None:
        root = Path(workdir) if workdir is not None else output_root()
        path = root / f"survey_pool_{spec.get('n_pool', 20000)}_{spec.get('schema_seed', 0)}.csv"
    path = Path(path)
    if not path.exists():
        synth_survey_pool(int(spec.get("n_pool", 20000)), int(spec.get("schema_seed", 0)), path)
    return ingest_pool(path, SURVEY_RESPONSE, threshold=float(spec.get("threshold", 10.0)),
                       ordinal=["education"],
                       categorical=[k for k, v in SURVEY_SCHEMA.items() if v is not None])


def synth_survey_pool(n_pool: int, schema_seed: int = 0, path=None):
    """Synthetic survey population with eight covariates and an income column.

    Education is ordinal (1 to 16); the other seven covariates are
    categorical, so one-hot encoding gives ``1 + 8 + 2 + 2 + 2 + 5 + 2 + 2 = 24``
    features. Log-income depends on the covariates through a fixed linear
    predictor with interactions plus Gaussian noise. Returns the frame, and
    writes it as CSV when ``path`` is given.
    """
    import pandas as pd

    if n_pool < 1:
        raise ConfigError("n_pool must be positive")
    rng = np.random.default_rng(schema_seed)
    edu = rng.choice(np.arange(1, 17), size=n_pool,
                     p=np.array([1, 1, 1, 2, 2, 3, 4, 6, 12, 14, 12, 10, 12, 9, 7, 4]) / 100)
    age = rng.choice(8, size=n_pool, p=[0.14, 0.17, 0.16, 0.16, 0.15, 0.12, 0.07, 0.03])
    sex = rng.integers(0, 2, n_pool)
    child = (rng.random(n_pool) < np.where((age >= 1) & (age <= 3), 0.45, 0.1)).astype(int)
    insured = (rng.random(n_pool) < 0.55 + 0.025 * edu).astype(int)
    marital = rng.choice(5, size=n_pool, p=[0.11, 0.48, 0.33, 0.02, 0.06])
    p_emp = np.clip(0.35 + 0.03 * edu - 0.12 * (age >= 5) - 0.3 * (age >= 6), 0.05, 0.97)
    employed = (rng.random(n_pool) < p_emp).astype(int)
    disabled = (rng.random(n_pool) < 0.06 + 0.03 * age).astype(int)

    age_effect = np.array([-1.2, -0.2, 0.2, 0.35, 0.3, -0.1, -0.35, -0.5])[age]
    log_income = (8.1 + 0.11 * edu + age_effect + 0.3 * sex + 0.15 * insured
                  + 0.2 * (marital == 1) + 1.1 * employed - 0.4 * disabled
                  + 0.05 * edu * employed + 0.2 * child * sex
                  + rng.normal(0.0, 0.7, n_pool))
    income = np.round(np.exp(log_income), 2)
    frame = pd.DataFrame({
        "education": edu,
        "age_group": np.asarray(SURVEY_SCHEMA["age_group"])[age],
        "sex": np.asarray(SURVEY_SCHEMA["sex"])[sex],
        "own_child": np.asarray(SURVEY_SCHEMA["own_child"])[child],
        "health_insurance": np.asarray(SURVEY_SCHEMA["health_insurance"])[insured],
        "marital_status": np.asarray(SURVEY_SCHEMA["marital_status"])[marital],
        "employment": np.asarray(["not_employed", "employed"])[employed],
        "disability": np.asarray(SURVEY_SCHEMA["disability"])[disabled],
        SURVEY_RESPONSE: income,
    })
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.2f", lineterminator="\n")
    return frame


# ---------------------------------------------------------------- repetitions


def _configs(cfg: ExperimentConfig):
    return (BartPriorConfig(**cfg.prior), ChainConfig(**_chain_kwargs(cfg.chain)), GpConfig(**cfg.gp))


def _initial_points(problem: Problem, streams: DesignStreams, n: int):
    return problem.target.sample(n, streams.init).points


def _survey_initial(problem: Problem, cfg: ExperimentConfig, streams: DesignStreams):
    outside = np.setdiff1d(np.arange(problem.pool.n_pool), problem.candidates)
    return streams.init.choice(outside, size=cfg.n_ini, replace=False)


def run_repetition(cfg: ExperimentConfig, problem: Problem, seed: int) -> dict:
    """One repetition; returns estimate, posterior spread and trajectory."""
    prior, chain, gp = _configs(cfg)
    streams = DesignStreams.from_seed(seed)
    out = {"seed": int(seed), "variance": None, "interval": None, "trajectory": None}
    t0 = time.perf_counter()
    survey = cfg.experiment == "survey"

    if cfg.method == "mc":
        if survey:
            init = _survey_initial(problem, cfg, streams)
            extra = streams.candidates.choice(problem.candidates, size=cfg.n_seq, replace=False)
            est = float(np.mean(problem.pool.lookup(np.concatenate([init, extra]))))
        else:
            if cfg.sequential:
                X = np.vstack([_initial_points(problem, streams, cfg.n_ini),
                               problem.target.sample(cfg.n_seq, streams.candidates).points])
            else:
                X = _initial_points(problem, streams, cfg.n)
            vals = np.asarray(problem.f(X), dtype=float)
            est = float(vals.mean())
            out["variance"] = float(vals.var(ddof=1) / vals.size)
        out["estimate"] = est
    elif cfg.sequential:
        S = cfg.design.get("S")
        kwargs = dict(S=S, prior=prior, chain=chain, gp=gp, seed=seed,
                      noise_sd=float(cfg.design.get("noise_sd", 0.0)))
        if survey:
            state = run_sequential(None, problem.pool, cfg.method, cfg.n_ini, cfg.n_total,
                                   candidates=problem.candidates,
                                   initial=_survey_initial(problem, cfg, streams), **kwargs)
        else:
            state = run_sequential(problem.f, problem.target, cfg.method, cfg.n_ini,
                                   cfg.n_total, **kwargs)
        post = state.final
        out.update(estimate=float(post.mean), variance=_finite_or_none(post.variance),
                   interval=list(post.interval(0.95)), trajectory=state.trajectory())
        if state.stopped_early:
            out["stopped_early"] = True
    else:
        X = _initial_points(problem, streams, cfg.n)
        y = np.asarray(problem.f(X), dtype=float)
        if cfg.method == "bart_int":
            draws = run_chain(X, y, prior, chain, seed=streams.fit_rng(cfg.n))
            post = posterior_summary(draws, problem.target)
        else:
            post = bq_posterior(X, y, gp, problem.target, seed=streams.kernel_rng())
        out.update(estimate=float(post.mean), variance=_finite_or_none(post.variance),
                   interval=list(post.interval(0.95)))
    out["seconds"] = time.perf_counter() - t0
    return out


def _finite_or_none(v):
    return float(v) if v is not None and math.isfinite(v) else None


def _rep_worker(args):
    cfg, seed, workdir = args
    try:
        return run_repetition(cfg, build_problem(cfg, workdir), seed)
    except Exception as exc:  # reported in the record, never silently dropped
        logger.exception("repetition with seed %s failed", seed)
        return {"seed": int(seed), "error": f"{type(exc).__name__}: {exc}"}


# ---------------------------------------------------------------- records


@dataclass
class ResultRecord:
    config_hash: str
    name: str
    experiment: str
    method: str
    tag: str
    d: int
    n: int
    truth: float
    seeds: list
    estimates: list
    variances: list
    intervals: list
    abs_errors: list
    mape: float | None
    se: float | None
    trajectories: list
    timings: list
    failures: list
    config: dict
    meta: dict = field(default_factory=dict)

    def recompute_mape(self) -> float | None:
        ok = [e for e in self.estimates if e is not None]
        if not ok or self.truth == 0:
            return None
        return mape(ok, self.truth)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> ResultRecord:
        return cls(**data)

    @property
    def filename(self) -> str:
        return f"{self.tag}__{self.method}__{self.config_hash}.json"

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        validate_result(self.to_dict())
        path = directory / self.filename
        path.write_text(self.to_json(), encoding="utf-8")
        return path


def _aggregate(cfg: ExperimentConfig, truth: float, reps: list[dict]) -> ResultRecord:
    reps = sorted(reps, key=lambda r: cfg.seeds.index(r["seed"]))
    good = [r for r in reps if "error" not in r]
    est = [r["estimate"] if "error" not in r else None for r in reps]
    errs = [abs(truth - e) if e is not None else None for e in est]
    mape_val = se = None
    if good and truth != 0:
        ape = np.array([abs(truth - r["estimate"]) / abs(truth) for r in good])
        mape_val = mape([r["estimate"] for r in good], truth)
        se = float(ape.std(ddof=1) / math.sqrt(ape.size)) if ape.size > 1 else None
    return ResultRecord(
        config_hash=cfg.config_hash(), name=cfg.name, experiment=cfg.experiment,
        method=cfg.method, tag=cfg.tag, d=cfg.d, n=cfg.n_total, truth=float(truth),
        seeds=[r["seed"] for r in reps], estimates=est,
        variances=[r.get("variance") for r in reps],
        intervals=[r.get("interval") for r in reps], abs_errors=errs,
        mape=mape_val, se=se, trajectories=[r.get("trajectory") for r in reps],
        timings=[r.get("seconds") for r in reps],
        failures=[{"seed": r["seed"], "error": r["error"]} for r in reps if "error" in r],
        config=cfg.to_dict(),
        meta={"gp_prior_mean": cfg.gp.get("prior_mean", 0.0), "scale": cfg.scale,
              "n_ok": len(good), "stopped_early": sum(bool(r.get("stopped_early")) for r in reps)})


def run_experiment(cfg: ExperimentConfig, output_dir=None, workers: int = 1) -> ResultRecord:
    """Run every repetition of ``cfg``, aggregate, and persist the record.

    Failed repetitions are logged and listed in ``failures``; the record is
    still written with the successful ones.
    """
    if cfg.experiment == "runtime":
        raise ConfigError("use runtime_benchmark for the runtime experiment")
    workdir = Path(output_dir) if output_dir is not None else output_root()
    problem = build_problem(cfg, workdir)
    seeds = cfg.seeds[:cfg.reps]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(_rep_worker, [(cfg, s, workdir) for s in seeds]))
    else:
        reps = []
        for s in seeds:
            try:
                reps.append(run_repetition(cfg, problem, s))
            except Exception as exc:  # reported in the record, never silently dropped
                logger.exception("repetition with seed %s failed", s)
                reps.append({"seed": int(s), "error": f"{type(exc).__name__}: {exc}"})
    record = _aggregate(cfg, problem.truth, reps)
    record.save(workdir)
    return record


def runtime_benchmark(cfg: ExperimentConfig, output_dir=None) -> dict:
    """Wall-clock of one BART-Int and one GP-BQ fit plus integral per ``n``.

    Purely descriptive: nothing about scaling is asserted.
    """
    prior, chain, gp = _configs(cfg)
    problem = build_problem(cfg)
    methods = cfg.method.split("+")
    rows = []
    for n in cfg.grid:
        streams = DesignStreams.from_seed(cfg.seeds[0])
        X = problem.target.sample(int(n), streams.init).points
        y = np.asarray(problem.f(X), dtype=float)
        for method in methods:
            t0 = time.perf_counter()
            if method == "bart_int":
                posterior_summary(run_chain(X, y, prior, chain, seed=streams.fit_rng(n)), problem.target)
            elif method == "gp_bq":
                bq_posterior(X, y, gp, problem.target, seed=streams.kernel_rng())
            else:
                raise ConfigError(f"cannot time method {method!r}")
            rows.append({"method": method, "n": int(n), "seconds": time.perf_counter() - t0})
            logger.info("%s n=%d: %.2fs", method, n, rows[-1]["seconds"])
    record = {"config_hash": cfg.config_hash(), "name": cfg.name, "experiment": "runtime",
              "method": cfg.method, "tag": cfg.tag, "rows": rows, "config": cfg.to_dict()}
    validate_result(record)
    directory = Path(output_dir) if output_dir is not None else output_root()
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"runtime__{cfg.config_hash()}.json").write_text(
        json.dumps(record, indent=1, sort_keys=True), encoding="utf-8")
    return record


# ---------------------------------------------------------------- schema and reports


def result_schema() -> dict:
    text = (resources.files("bartint") / "schema" / "result.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate_result(data: dict) -> None:
    import jsonschema

    jsonschema.validate(data, result_schema())


def load_records(directory) -> list:
    """Result records (and runtime tables) stored as JSON in ``directory``."""
    out = []
    for path in sorted(Path(directory).glob("*.json")):
        data = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(data, dict) or "experiment" not in data:
            continue
        validate_result(data)
        out.append(data if data["experiment"] == "runtime" else ResultRecord.from_dict(data))
    return out


def _fmt(v):
    return "" if v is None else f"{v:.6e}"


def emit_report(records, out_dir) -> dict:
    """Write ``summary.csv`` (one row per record), ``runtime.csv`` and
    per-record convergence SVGs for sequential runs. Returns the paths."""
    import csv

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = [r for r in records if isinstance(r, ResultRecord)]
    timing = [r for r in records if isinstance(r, dict) and r.get("experiment") == "runtime"]
    if not results and not timing:
        raise ValueError("no records to report")
    paths = {"csv": [], "svg": []}

    if results:
        path = out_dir / "summary.csv"
        rows = sorted(results, key=lambda r: (r.experiment, r.tag, r.d, r.method, r.config_hash))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["experiment", "integrand", "d", "n", "method", "reps", "truth", "mape", "se",
                        "failures", "config_hash"])
            for r in rows:
                w.writerow([r.experiment, r.tag, r.d, r.n, r.method, len(r.seeds), _fmt(r.truth),
                            _fmt(r.mape), _fmt(r.se), len(r.failures), r.config_hash])
        paths["csv"].append(path)

    if timing:
        path = out_dir / "runtime.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "n", "seconds", "config_hash"])
            for rec in sorted(timing, key=lambda r: r["config_hash"]):
                for row in rec["rows"]:
                    w.writerow([row["method"], row["n"], f"{row['seconds']:.4f}", rec["config_hash"]])
        paths["csv"].append(path)

    with matplotlib.rc_context({"svg.hashsalt": "bartint", "svg.fonttype": "none"}):
        for r in results:
            traj = next((t for t in r.trajectories if t), None)
            if not traj:
                continue
            steps = traj[1:]
            ns = np.array([p["n"] for p in steps], dtype=float)
            means = np.array([p["mean"] for p in steps], dtype=float)
            sds = np.array([math.sqrt(p["variance"]) if p["variance"] is not None else 0.0
                            for p in steps])
            fig, ax = plt.subplots(figsize=(5, 3.2))
            ax.fill_between(ns, means - 1.96 * sds, means + 1.96 * sds, alpha=0.25, color="tab:blue")
            (line,) = ax.plot(ns, means, "o", ms=3, color="tab:red", label="posterior mean")
            line.set_gid("trajectory")
            ax.axhline(r.truth, color="k", lw=0.8, ls="--", label="truth")
            ax.set_xlabel("n")
            ax.set_ylabel("integral")
            ax.set_title(f"{r.tag} {r.method} (seed {r.seeds[0]})", fontsize=9)
            ax.legend(fontsize=7)
            fig.tight_layout()
            path = out_dir / f"{r.tag}__{r.method}__{r.config_hash}_convergence.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            paths["svg"].append(path)
    return paths
