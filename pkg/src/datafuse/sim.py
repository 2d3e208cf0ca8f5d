"""Monte Carlo harness: scenario generators, replication loop, tables.

Scenario I: covariate-dependent treatment assignment with a quadratic
treatment effect; the external source reports a joint least-squares fit of
the outcome on (1, X, T). Scenario II: two correlated regressors whose
marginal slopes are reported externally, optionally with the second
regressor measured with error (attenuating its slope, i.e. a biased
summary).

Replications draw from one substream per replication (spawned from a root
seed), so results are identical for any thread count and any method
subset.
"""

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.special import expit

from .debias import DebiasConfig, estimate_dbs, estimate_orc
from .errors import (
    DataFuseError,
    ExcessiveFailures,
    IoError,
    MalformedInput,
)
from .model import (
    FLOAT_FMT,
    FunctionalDescriptor,
    FunctionalKind,
    InternalDataset,
    Method,
    SummaryStatistic,
    validate_dataset,
    validate_summary,
)
from .fusion import (
    estimate_crude,
    estimate_eff,
    estimate_int,
    estimate_knw,
    prepare_inputs,
)

__all__ = [
    "ScenarioConfig",
    "MetricsRow",
    "SimulationResult",
    "gen_scenario1",
    "gen_scenario2",
    "scenario1_beta_true",
    "run_replications",
    "export_tables",
    "format_table",
]

SCENARIOS = ("I", "II_biased", "II_unbiased")
FAILURE_ABORT_RATE = 0.01


# ---------------------------------------------------------------------------
# generators


def _scenario1_draw(size: int, rng: np.random.Generator):
    x = rng.standard_normal(size)
    t = (rng.random(size) < expit(1.0 - x)).astype(float)
    eps1 = 2.0 * rng.standard_normal(size)
    eps0 = rng.standard_normal(size)
    y = 1.0 + x + t * x * x + t * eps1 + (1.0 - t) * eps0
    return x, t, y


@lru_cache(maxsize=1)
def scenario1_beta_true() -> tuple:
    """Population least-squares coefficients of Y on (1, X, T) in Scenario I.

    Needs the moments t_k = E[X^k expit(1 - X)], k = 0..3, which have no
    closed form; they are evaluated by adaptive quadrature (t_0 is about
    0.7226, the marginal treatment probability).
    """
    def moment(k):
        val, _ = quad(
            lambda u: u**k * expit(1.0 - u) * math.exp(-u * u / 2.0) / math.sqrt(2.0 * math.pi),
            -np.inf,
            np.inf,
        )
        return val

    t0, t1, t2, t3 = (moment(k) for k in range(4))
    design_mom = np.array([[1.0, 0.0, t0], [0.0, 1.0, t1], [t0, t1, t0]])
    response_mom = np.array([1.0 + t2, 1.0 + t3, t0 + t1 + t2])
    return tuple(np.linalg.solve(design_mom, response_mom))


def _sandwich(design: np.ndarray, resid: np.ndarray) -> np.ndarray:
    """Covariance of the sqrt(m)-scaled least-squares estimator."""
    m = design.shape[0]
    bread = design.T @ design / m
    meat = (design * resid[:, None]).T @ (design * resid[:, None]) / m
    inv_bread = np.linalg.inv(bread)
    return inv_bread @ meat @ inv_bread


def gen_scenario1(n: int, m: int, rng: np.random.Generator):
    """Internal dataset, external joint-OLS summary, and the truth record.

    The internal sample is drawn before the external one, so with a fixed
    substream the internal data do not depend on m.
    """
    x, t, y = _scenario1_draw(n, rng)
    internal = validate_dataset(
        {"X": x, "X2": x * x, "T": t, "Y": y},
        outcome="Y",
        treatment="T",
        covariates=("X", "X2"),
    )
    xe, te, ye = _scenario1_draw(m, rng)
    design = np.column_stack([np.ones(m), xe, te])
    coef = np.linalg.solve(design.T @ design, design.T @ ye)
    sigma1 = _sandwich(design, ye - design @ coef)
    binding = (
        FunctionalDescriptor(
            FunctionalKind.JOINT_OLS,
            {"outcome": "Y", "regressors": ["X", "T"], "intercept": True},
        ),
    )
    summary = validate_summary(coef, sigma1, m, binding, source_id="scenario1-external-ols")
    truth = {
        "tau": np.array([1.0]),
        "beta": np.array(scenario1_beta_true()),
        "unbiased": (0, 1, 2),
    }
    return internal, summary, truth


def gen_scenario2(
    n: int,
    m: int,
    biased: bool,
    rng: np.random.Generator,
    tau=(1.0, 1.0),
):
    """Marginal-slope summaries from a shared external sample.

    With biased=True the external copy of the second regressor carries
    additive N(0,1) measurement error, attenuating its marginal slope by
    1/2; the first summary coordinate stays unbiased.
    """
    tau1, tau2 = float(tau[0]), float(tau[1])
    chol = np.array([[1.0, 0.0], [0.6, 0.8]])

    def draw(size):
        xs = rng.standard_normal((size, 2)) @ chol.T
        ys = xs[:, 0] * tau1 + xs[:, 1] * tau2 + 2.0 * rng.standard_normal(size)
        return xs, ys

    x_int, y_int = draw(n)
    internal = validate_dataset(
        {"X1": x_int[:, 0], "X2": x_int[:, 1], "Y": y_int},
        outcome="Y",
        covariates=("X1", "X2"),
    )
    x_ext, y_ext = draw(m)
    x2_obs = x_ext[:, 1] + rng.standard_normal(m) if biased else x_ext[:, 1]
    regressors = np.column_stack([x_ext[:, 0], x2_obs])
    second = np.mean(regressors * regressors, axis=0)
    coef = np.mean(regressors * y_ext[:, None], axis=0) / second
    scores = regressors * (y_ext[:, None] - regressors * coef)
    meat = scores.T @ scores / m
    sigma1 = meat / np.outer(second, second)
    binding = (
        FunctionalDescriptor(FunctionalKind.MARGINAL_OLS, {"outcome": "Y", "regressor": "X1"}),
        FunctionalDescriptor(FunctionalKind.MARGINAL_OLS, {"outcome": "Y", "regressor": "X2"}),
    )
    summary = validate_summary(
        coef, sigma1, m, binding, source_id="scenario2-external-marginals"
    )
    beta_true = np.array([tau1 + 0.6 * tau2, tau2 + 0.6 * tau1])
    truth = {
        "tau": np.array([tau1, tau2]),
        "beta": beta_true,
        "unbiased": (0,) if biased else (0, 1),
        "b_star": np.array([0.0, -beta_true[1] / 2.0 if biased else 0.0]),
    }
    return internal, summary, truth


# ---------------------------------------------------------------------------
# configuration


_METHOD_NAMES = tuple(m.value for m in Method)
_DEFAULT_METHODS = {
    "I": ("INT", "CRD", "EFF", "KNW"),
    "II_biased": ("INT", "ORC", "DBS", "EFF"),
    "II_unbiased": ("INT", "ORC", "DBS", "EFF"),
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Replication-run settings; defaults mirror the reference tables."""

    scenario: str
    n: int = 1000
    m: int = 1000
    reps: int = 1000
    seed: int = 0
    methods: tuple = ()
    level: float = 0.95
    tau: tuple = (1.0, 1.0)
    debias: DebiasConfig = field(default_factory=DebiasConfig)
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise MalformedInput(
                f"scenario must be one of {SCENARIOS}, got {self.scenario!r}"
            )
        for name, value in (("n", self.n), ("m", self.m), ("reps", self.reps)):
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value <= 0:
                raise MalformedInput(f"{name} must be a positive integer, got {value!r}")
        methods = tuple(self.methods) or _DEFAULT_METHODS[self.scenario]
        seen = []
        for name in methods:
            if name == "IVW":
                raise MalformedInput(
                    "IVW applies only when the summary reports the target functional "
                    "itself; neither built-in scenario does"
                )
            if name not in _METHOD_NAMES:
                raise MalformedInput(f"unknown method {name!r}")
            if name not in seen:
                seen.append(name)
        object.__setattr__(self, "methods", tuple(seen))
        if not 0.0 < self.level < 1.0:
            raise MalformedInput(f"level must be in (0, 1), got {self.level}")
        tau = tuple(float(v) for v in self.tau)
        if len(tau) != 2:
            raise MalformedInput("tau must have two components")
        object.__setattr__(self, "tau", tau)

    @classmethod
    def from_dict(cls, obj) -> "ScenarioConfig":
        if not isinstance(obj, dict):
            raise MalformedInput("config must be a table/object")
        known = {
            "scenario", "n", "m", "reps", "seed", "methods", "level", "tau",
            "debias", "out_dir",
        }
        extra = set(obj) - known
        if extra:
            raise MalformedInput(f"unknown config keys {sorted(extra)}")
        kwargs = dict(obj)
        if "methods" in kwargs:
            kwargs["methods"] = tuple(kwargs["methods"])
        if "debias" in kwargs:
            kwargs["debias"] = DebiasConfig.from_dict(kwargs["debias"])
        return cls(**kwargs)


@dataclass(frozen=True)
class MetricsRow:
    """Aggregated metrics for one (method, parameter) cell, scaled by 100."""

    scenario: str
    method: str
    m: int
    param: int
    bias: float
    rmse: float
    ase: float
    cp: float
    mc_se_bias: float
    mc_se_rmse: float
    mc_se_ase: float
    mc_se_cp: float
    reps: int


@dataclass(frozen=True)
class SimulationResult:
    config: ScenarioConfig
    rows: tuple
    records: tuple
    failures: int


# ---------------------------------------------------------------------------
# replication loop


def _tau_descriptor(scenario: str) -> FunctionalDescriptor:
    if scenario == "I":
        return FunctionalDescriptor(
            FunctionalKind.AIPW_ATE,
            {"outcome": "Y", "treatment": "T", "covariates": ["X", "X2"]},
        )
    return FunctionalDescriptor(
        FunctionalKind.JOINT_OLS,
        {"outcome": "Y", "regressors": ["X1", "X2"], "intercept": False},
    )


def _replicate(config: ScenarioConfig, rep_seed: np.random.SeedSequence):
    data_seed, cv_seed = rep_seed.spawn(2)
    rng = np.random.default_rng(data_seed)
    if config.scenario == "I":
        internal, summary, truth = gen_scenario1(config.n, config.m, rng)
    else:
        internal, summary, truth = gen_scenario2(
            config.n, config.m, config.scenario == "II_biased", rng, config.tau
        )
    inputs = prepare_inputs(internal, _tau_descriptor(config.scenario), [summary])
    out = {}
    for name in config.methods:
        selected = None
        if name == "INT":
            result = estimate_int(inputs, config.level)
        elif name == "CRD":
            result = estimate_crude(inputs, config.level)
        elif name == "EFF":
            result = estimate_eff(inputs, config.level)
        elif name == "KNW":
            result = estimate_knw(inputs, truth["beta"], config.level)
        elif name == "ORC":
            result = estimate_orc(inputs, truth["unbiased"], config.level)
        else:
            result, selection = estimate_dbs(
                inputs, replace(config.debias, seed=cv_seed), config.level
            )
            selected = selection.selected
        covered = (result.ci[:, 0] <= truth["tau"]) & (truth["tau"] <= result.ci[:, 1])
        out[name] = (result.estimate, result.se, covered, selected)
    return truth["tau"], out


def run_replications(config: ScenarioConfig, threads: int = 1) -> SimulationResult:
    """Run the configured replications and aggregate the reference metrics.

    A replication on which any method raises a package error is dropped
    from every method (paired comparisons stay paired) with a warning;
    if 1% or more of the replications fail, the whole run aborts.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(config.reps)

    def worker(args):
        rep, seed = args
        try:
            return rep, _replicate(config, seed), None
        except DataFuseError as exc:
            return rep, None, exc

    jobs = list(enumerate(seeds))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(worker, jobs))
    else:
        outcomes = [worker(job) for job in jobs]

    failures = [(rep, exc) for rep, _, exc in outcomes if exc is not None]
    if len(failures) >= FAILURE_ABORT_RATE * config.reps:
        raise ExcessiveFailures(
            f"{len(failures)}/{config.reps} replications failed; first: {failures[0][1]}"
        )
    if failures:
        warnings.warn(
            f"excluded {len(failures)} failed replication(s) from all methods: "
            f"first failure (rep {failures[0][0]}): {failures[0][1]}"
        )
    kept = [(rep, payload) for rep, payload, exc in outcomes if exc is None]
    if not kept:
        raise ExcessiveFailures("no replication succeeded")

    tau_true = kept[0][1][0]
    p = tau_true.shape[0]
    rows = []
    records = []
    for name in config.methods:
        estimates = np.array([payload[1][name][0] for _, payload in kept])
        ses = np.array([payload[1][name][1] for _, payload in kept])
        covered = np.array([payload[1][name][2] for _, payload in kept])
        reps_used = estimates.shape[0]
        for j in range(p):
            err = estimates[:, j] - tau_true[j]
            sq = err * err
            rmse = math.sqrt(float(np.mean(sq)))
            bias = float(np.mean(err))
            mc_bias = float(np.std(err, ddof=1)) / math.sqrt(reps_used)
            mc_rmse = (
                float(np.std(sq, ddof=1)) / math.sqrt(reps_used) / (2.0 * rmse)
                if rmse > 0.0
                else 0.0
            )
            cov_rate = float(np.mean(covered[:, j]))
            rows.append(
                MetricsRow(
                    scenario=config.scenario,
                    method=name,
                    m=config.m,
                    param=j,
                    bias=100.0 * bias,
                    rmse=100.0 * rmse,
                    ase=100.0 * float(np.mean(ses[:, j])),
                    cp=100.0 * cov_rate,
                    mc_se_bias=100.0 * mc_bias,
                    mc_se_rmse=100.0 * mc_rmse,
                    mc_se_ase=100.0 * float(np.std(ses[:, j], ddof=1)) / math.sqrt(reps_used),
                    mc_se_cp=100.0 * math.sqrt(cov_rate * (1.0 - cov_rate) / reps_used),
                    reps=reps_used,
                )
            )
        for rep, payload in kept:
            est, se, cov, selected = payload[1][name]
            for j in range(p):
                records.append(
                    {
                        "scenario": config.scenario,
                        "method": name,
                        "m": config.m,
                        "rep": rep,
                        "param": j,
                        "estimate": float(est[j]),
                        "se": float(se[j]),
                        "covered": int(cov[j]),
                        "selected": (
                            ";".join(str(s) for s in selected) if selected is not None else ""
                        ),
                    }
                )
    return SimulationResult(
        config=config, rows=tuple(rows), records=tuple(records), failures=len(failures)
    )


# ---------------------------------------------------------------------------
# output


_SUMMARY_COLUMNS = (
    "scenario", "method", "m", "param", "bias", "rmse", "ase", "cp",
    "mc_se_bias", "mc_se_rmse", "mc_se_ase", "mc_se_cp", "reps",
)
_LONG_COLUMNS = (
    "scenario", "method", "m", "rep", "param", "estimate", "se", "covered", "selected",
)


def _fmt(value) -> str:
    if isinstance(value, float):
        return FLOAT_FMT % value
    return str(value)


def export_tables(result: SimulationResult, path) -> tuple:
    """Write the aggregated metrics CSV at `path` plus a companion
    long-format CSV of per-replication estimates (suffix _per_rep.csv).
    Returns both paths."""
    if not result.rows:
        raise MalformedInput("no metrics rows to export")
    path = Path(path)
    long_path = path.with_name(path.stem + "_per_rep" + (path.suffix or ".csv"))
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(_SUMMARY_COLUMNS)
            for row in result.rows:
                writer.writerow([_fmt(getattr(row, col)) for col in _SUMMARY_COLUMNS])
        with open(long_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(_LONG_COLUMNS)
            for rec in result.records:
                writer.writerow([_fmt(rec[col]) for col in _LONG_COLUMNS])
    except OSError as exc:
        raise IoError(f"cannot write tables: {exc}") from exc
    return path, long_path


def format_table(rows) -> str:
    """Human-readable metrics table (values already scaled by 100)."""
    header = f"{'method':<8}{'m':>8}{'param':>7}{'bias':>10}{'rmse':>10}{'ase':>10}{'cp':>8}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row.method:<8}{row.m:>8}{row.param:>7}"
            f"{row.bias:>10.2f}{row.rmse:>10.2f}{row.ase:>10.2f}{row.cp:>8.1f}"
        )
    return "\n".join(lines)
