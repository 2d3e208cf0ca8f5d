"""Core data types: datasets, summary statistics, fits, and results.

Conventions used throughout the package:
  * all empirical second moments divide by n (never n-1), so moment
    algebra composes exactly across modules;
  * the covariance attached to an external summary is the covariance of
    the sqrt(m)-scaled estimator, i.e. it does not shrink with m;
  * machine-format output (CSV) prints floats with 17 significant digits;
    JSON uses Python's shortest round-trip representation.
Indices in machine formats are 0-based.
"""

import csv
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np

from ._linalg import max_asymmetry, min_eigenvalue
from .errors import (
    AsymmetricCovariance,
    DimensionMismatch,
    IoError,
    MalformedInput,
    MissingColumn,
    NonBinaryTreatment,
    NonFiniteValue,
    NotPSD,
    RaggedColumns,
)

SYMMETRY_TOL = 1e-10
PSD_TOL = -1e-10
MEAN_ZERO_TOL = 1e-8
AVAR_TOL = 1e-8
FLOAT_FMT = "%.17g"


def _readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class InternalDataset:
    """Validated named-column table of internal individual-level data."""

    columns: Mapping[str, np.ndarray]
    n: int
    outcome: Optional[str] = None
    treatment: Optional[str] = None
    covariates: tuple = ()

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise MissingColumn(f"column {name!r} not in dataset") from None

    @property
    def names(self) -> tuple:
        return tuple(self.columns)

    def subset(self, idx) -> "InternalDataset":
        """Row subset (used by cross-validation folds); roles carry over."""
        idx = np.asarray(idx)
        cols = {name: _readonly(arr[idx]) for name, arr in self.columns.items()}
        return InternalDataset(
            columns=cols,
            n=int(idx.size),
            outcome=self.outcome,
            treatment=self.treatment,
            covariates=self.covariates,
        )


def validate_dataset(
    raw: Mapping[str, Sequence[float]],
    outcome: Optional[str] = None,
    treatment: Optional[str] = None,
    covariates: Sequence[str] = (),
) -> InternalDataset:
    """Build an InternalDataset from raw columns, enforcing the contract.

    Columns must share a common length n >= 2, contain only finite numbers,
    and a declared treatment column must take values in {0, 1}.
    """
    if not raw:
        raise RaggedColumns("dataset has no columns")
    cols = {}
    n = None
    for name, values in raw.items():
        arr = np.asarray(values, dtype=float)
        if arr.ndim != 1:
            raise RaggedColumns(f"column {name!r} is not one-dimensional")
        if n is None:
            n = arr.shape[0]
        elif arr.shape[0] != n:
            raise RaggedColumns(
                f"column {name!r} has length {arr.shape[0]}, expected {n}"
            )
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue(f"column {name!r} contains non-finite values")
        cols[name] = _readonly(arr)
    if n is None or n < 2:
        raise RaggedColumns(f"dataset needs at least 2 rows, got {n}")
    for role_name in filter(None, [outcome, treatment, *covariates]):
        if role_name not in cols:
            raise MissingColumn(f"role refers to missing column {role_name!r}")
    if treatment is not None:
        t = cols[treatment]
        if not np.all((t == 0.0) | (t == 1.0)):
            raise NonBinaryTreatment(
                f"treatment column {treatment!r} has values outside {{0, 1}}"
            )
    return InternalDataset(
        columns=cols,
        n=int(n),
        outcome=outcome,
        treatment=treatment,
        covariates=tuple(covariates),
    )


# ---------------------------------------------------------------------------
# functional descriptors


class FunctionalKind(str, Enum):
    MEAN = "mean"
    JOINT_OLS = "joint_ols"
    MARGINAL_OLS = "marginal_ols"
    AIPW_ATE = "aipw_ate"
    GLM_MARGINAL = "glm_marginal"


_SCALAR_KINDS = {
    FunctionalKind.MEAN,
    FunctionalKind.MARGINAL_OLS,
    FunctionalKind.AIPW_ATE,
    FunctionalKind.GLM_MARGINAL,
}


@dataclass(frozen=True, eq=True)
class FunctionalDescriptor:
    """Names a functional kind plus the column arguments it acts on.

    `component` optionally restricts a multi-coefficient fit (joint OLS) to a
    single 0-based coefficient, so a summary can report part of a fit.
    """

    kind: FunctionalKind
    args: Mapping[str, object] = field(default_factory=dict)
    component: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", FunctionalKind(self.kind))
        object.__setattr__(self, "args", dict(self.args))
        _validate_args(self.kind, self.args)
        if self.component is not None:
            width = self._base_width()
            if not isinstance(self.component, int) or not 0 <= self.component < width:
                raise MalformedInput(
                    f"component {self.component!r} out of range for width {width}"
                )

    def _base_width(self) -> int:
        if self.kind is FunctionalKind.JOINT_OLS:
            intercept = bool(self.args.get("intercept", True))
            return len(self.args["regressors"]) + int(intercept)
        return 1

    def width(self) -> int:
        """Number of summary coordinates this descriptor contributes."""
        return 1 if self.component is not None else self._base_width()

    def group_key(self) -> str:
        """Canonical key identifying the underlying fit (ignores component)."""
        return json.dumps(
            {"functional": self.kind.value, "args": self.args}, sort_keys=True
        )

    def with_component(self, component: int) -> "FunctionalDescriptor":
        return replace(self, component=component)

    def to_json(self) -> dict:
        out = {"functional": self.kind.value, "args": dict(self.args)}
        if self.component is not None:
            out["component"] = self.component
        return out

    @classmethod
    def from_json(cls, obj) -> "FunctionalDescriptor":
        if not isinstance(obj, Mapping) or "functional" not in obj:
            raise MalformedInput(f"descriptor must be an object with 'functional': {obj!r}")
        try:
            kind = FunctionalKind(obj["functional"])
        except ValueError:
            raise MalformedInput(f"unknown functional kind {obj['functional']!r}") from None
        args = obj.get("args", {})
        if isinstance(args, (list, tuple)):
            args = _args_from_list(kind, list(args))
        elif not isinstance(args, Mapping):
            raise MalformedInput("descriptor 'args' must be an object or a list")
        component = obj.get("component")
        return cls(kind=kind, args=args, component=component)


def _validate_args(kind: FunctionalKind, args: dict):
    def need_str(key):
        if not isinstance(args.get(key), str):
            raise MalformedInput(f"{kind.value} requires string arg {key!r}")

    def need_str_list(key):
        val = args.get(key)
        if (
            not isinstance(val, (list, tuple))
            or not val
            or not all(isinstance(v, str) for v in val)
        ):
            raise MalformedInput(f"{kind.value} requires non-empty name list {key!r}")
        args[key] = list(val)

    allowed = {
        FunctionalKind.MEAN: {"column", "where"},
        FunctionalKind.JOINT_OLS: {"outcome", "regressors", "intercept"},
        FunctionalKind.MARGINAL_OLS: {"outcome", "regressor"},
        FunctionalKind.AIPW_ATE: {"outcome", "treatment", "covariates"},
        FunctionalKind.GLM_MARGINAL: {"outcome", "regressor", "link"},
    }[kind]
    extra = set(args) - allowed
    if extra:
        raise MalformedInput(f"{kind.value} got unexpected args {sorted(extra)}")

    if kind is FunctionalKind.MEAN:
        need_str("column")
        where = args.get("where")
        if where is not None:
            if (
                not isinstance(where, Mapping)
                or set(where) != {"column", "equals"}
                or not isinstance(where["column"], str)
                or not isinstance(where["equals"], (int, float))
                or isinstance(where["equals"], bool)
            ):
                raise MalformedInput(
                    "mean 'where' must be {'column': name, 'equals': number}"
                )
            args["where"] = {"column": where["column"], "equals": float(where["equals"])}
    elif kind is FunctionalKind.JOINT_OLS:
        need_str("outcome")
        need_str_list("regressors")
        if "intercept" in args and not isinstance(args["intercept"], bool):
            raise MalformedInput("joint_ols 'intercept' must be a boolean")
    elif kind is FunctionalKind.MARGINAL_OLS:
        need_str("outcome")
        need_str("regressor")
    elif kind is FunctionalKind.AIPW_ATE:
        need_str("outcome")
        need_str("treatment")
        need_str_list("covariates")
    elif kind is FunctionalKind.GLM_MARGINAL:
        need_str("outcome")
        need_str("regressor")
        if "link" in args and not isinstance(args["link"], str):
            raise MalformedInput("glm_marginal 'link' must be a string")


def _args_from_list(kind: FunctionalKind, args: list) -> dict:
    """Positional args accepted on parse; canonical form is the keyed object."""
    try:
        if kind is FunctionalKind.MEAN:
            out = {"column": args[0]}
            if len(args) > 1:
                out["where"] = args[1]
            return out
        if kind is FunctionalKind.JOINT_OLS:
            out = {"outcome": args[0], "regressors": args[1]}
            if len(args) > 2:
                out["intercept"] = args[2]
            return out
        if kind is FunctionalKind.MARGINAL_OLS:
            return {"outcome": args[0], "regressor": args[1]}
        if kind is FunctionalKind.AIPW_ATE:
            return {"outcome": args[0], "treatment": args[1], "covariates": args[2]}
        if kind is FunctionalKind.GLM_MARGINAL:
            out = {"outcome": args[0], "regressor": args[1]}
            if len(args) > 2:
                out["link"] = args[2]
            return out
    except IndexError:
        pass
    raise MalformedInput(f"positional args {args!r} do not fit {kind.value}")


def binding_width(binding: Sequence[FunctionalDescriptor]) -> int:
    return sum(d.width() for d in binding)


def expand_binding(binding: Sequence[FunctionalDescriptor]):
    """One (descriptor, coefficient index) pair per summary coordinate."""
    out = []
    for desc in binding:
        if desc.component is not None:
            out.append((desc, desc.component))
        else:
            out.extend((desc, j) for j in range(desc._base_width()))
    return out


# ---------------------------------------------------------------------------
# summary statistics


@dataclass(frozen=True)
class SummaryStatistic:
    """External summary: estimate, sqrt(m)-scaled covariance, and binding."""

    beta: np.ndarray
    sigma1: np.ndarray
    m: int
    binding: tuple
    source_id: str = ""

    @property
    def q(self) -> int:
        return int(self.beta.shape[0])


def validate_summary(
    beta,
    sigma1,
    m: int,
    binding: Sequence[FunctionalDescriptor],
    source_id: str = "",
) -> SummaryStatistic:
    """Build a SummaryStatistic, enforcing symmetry/PSD/shape contracts."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    sigma1 = np.asarray(sigma1, dtype=float)
    if sigma1.ndim == 0:
        sigma1 = sigma1.reshape(1, 1)
    if beta.ndim != 1:
        raise DimensionMismatch("beta must be a vector")
    q = beta.shape[0]
    if sigma1.shape != (q, q):
        raise DimensionMismatch(
            f"sigma1 shape {sigma1.shape} does not match beta length {q}"
        )
    if not np.all(np.isfinite(beta)) or not np.all(np.isfinite(sigma1)):
        raise NonFiniteValue("summary contains non-finite values")
    if max_asymmetry(sigma1) > SYMMETRY_TOL:
        raise AsymmetricCovariance(
            f"sigma1 asymmetry {max_asymmetry(sigma1):.3e} exceeds {SYMMETRY_TOL}"
        )
    if min_eigenvalue(sigma1) < PSD_TOL:
        raise NotPSD(f"sigma1 has eigenvalue {min_eigenvalue(sigma1):.3e} < {PSD_TOL}")
    if not isinstance(m, (int, np.integer)) or isinstance(m, bool) or m <= 0:
        raise DimensionMismatch(f"m must be a positive integer, got {m!r}")
    binding = tuple(binding)
    for desc in binding:
        if not isinstance(desc, FunctionalDescriptor):
            raise MalformedInput(f"binding entry {desc!r} is not a descriptor")
    if binding_width(binding) != q:
        raise DimensionMismatch(
            f"binding covers {binding_width(binding)} coordinates, beta has {q}"
        )
    return SummaryStatistic(
        beta=_readonly(beta),
        sigma1=_readonly(sigma1),
        m=int(m),
        binding=binding,
        source_id=str(source_id),
    )


# ---------------------------------------------------------------------------
# fits and results


@dataclass(frozen=True)
class FunctionalFit:
    """Point estimate plus per-observation influence columns.

    Influence columns must be (numerically) centered: the estimating
    equations of every fitter zero them out exactly, so a violation here
    means the fit itself is wrong.
    """

    estimate: np.ndarray
    influence: np.ndarray
    label: str = ""

    def __post_init__(self):
        estimate = np.atleast_1d(np.asarray(self.estimate, dtype=float))
        influence = np.asarray(self.influence, dtype=float)
        if influence.ndim != 2 or influence.shape[1] != estimate.shape[0]:
            raise DimensionMismatch(
                f"influence shape {influence.shape} does not match "
                f"estimate length {estimate.shape[0]}"
            )
        if not np.all(np.isfinite(estimate)) or not np.all(np.isfinite(influence)):
            raise NonFiniteValue(f"fit {self.label!r} contains non-finite values")
        means = influence.mean(axis=0)
        stds = influence.std(axis=0)
        bad = np.abs(means) > MEAN_ZERO_TOL * (stds + 1.0)
        if np.any(bad):
            raise DimensionMismatch(
                f"influence columns {np.flatnonzero(bad).tolist()} of "
                f"{self.label!r} are not mean-zero"
            )
        object.__setattr__(self, "estimate", _readonly(estimate))
        object.__setattr__(self, "influence", _readonly(influence))

    @property
    def n(self) -> int:
        return int(self.influence.shape[0])

    @property
    def p(self) -> int:
        return int(self.estimate.shape[0])


class Method(str, Enum):
    INT = "INT"
    CRD = "CRD"
    EFF = "EFF"
    KNW = "KNW"
    DBS = "DBS"
    ORC = "ORC"


@dataclass(frozen=True)
class FusionResult:
    """Estimate with asymptotic variance and the calibration pieces."""

    method: Method
    estimate: np.ndarray
    avar: np.ndarray
    se: np.ndarray
    gain: np.ndarray
    cross: np.ndarray
    gram: np.ndarray
    rho: float
    ci: np.ndarray
    level: float
    p_one_sided: np.ndarray
    warnings: tuple = ()
    working_covariance: bool = False

    def __post_init__(self):
        avar = np.asarray(self.avar, dtype=float)
        scale = AVAR_TOL * (1.0 + (np.max(np.abs(avar)) if avar.size else 0.0))
        if max_asymmetry(avar) > scale:
            raise DimensionMismatch("avar is not symmetric")
        if min_eigenvalue(avar) < -scale:
            raise DimensionMismatch("avar is not positive semidefinite")

    def to_json_dict(self) -> dict:
        return {
            "method": self.method.value,
            "estimate": self.estimate.tolist(),
            "se": self.se.tolist(),
            "ci": self.ci.tolist(),
            "p_one_sided": [_none_if_nan(p) for p in self.p_one_sided.tolist()],
            "avar": self.avar.tolist(),
            "gain": self.gain.tolist(),
            "warnings": list(self.warnings),
            "working_covariance": self.working_covariance,
        }


@dataclass(frozen=True)
class SelectionResult:
    """Adaptive-lasso output: bias estimates and the selected (zero) set."""

    b_hat: np.ndarray
    selected: tuple
    lam: float
    alpha: float
    cv_trace: tuple = ()

    def __post_init__(self):
        b = np.asarray(self.b_hat, dtype=float)
        zeros = tuple(int(j) for j in np.flatnonzero(b == 0.0))
        if tuple(self.selected) != zeros:
            raise DimensionMismatch(
                f"selected {self.selected} does not equal exact zeros {zeros}"
            )

    def to_json_dict(self) -> dict:
        return {
            "b_hat": np.asarray(self.b_hat, dtype=float).tolist(),
            "selected": list(self.selected),
            "lambda": self.lam,
            "alpha": self.alpha,
            "cv_trace": [[c, e] for c, e in self.cv_trace],
        }


def _none_if_nan(x):
    return None if (isinstance(x, float) and math.isnan(x)) else x


# ---------------------------------------------------------------------------
# serialization


def write_internal_csv(dataset: InternalDataset, path):
    """UTF-8 CSV with a header row; floats keep 17 significant digits."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(dataset.names)
            arrays = [dataset.columns[name] for name in dataset.names]
            for row in zip(*arrays):
                writer.writerow([FLOAT_FMT % v for v in row])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_internal_csv(
    path,
    outcome: Optional[str] = None,
    treatment: Optional[str] = None,
    covariates: Sequence[str] = (),
) -> InternalDataset:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise MalformedInput(f"{path}: empty file")
    header = rows[0]
    if len(set(header)) != len(header):
        raise MalformedInput(f"{path}: duplicate column names")
    width = len(header)
    data = {name: [] for name in header}
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise RaggedColumns(f"{path}: row {i} has {len(row)} fields, expected {width}")
        for name, cell in zip(header, row):
            try:
                data[name].append(float(cell))
            except ValueError:
                raise MalformedInput(
                    f"{path}: row {i}, column {name!r}: not a number: {cell!r}"
                ) from None
    return validate_dataset(data, outcome=outcome, treatment=treatment, covariates=covariates)


def summary_to_dict(summary: SummaryStatistic) -> dict:
    return {
        "beta": summary.beta.tolist(),
        "sigma1": summary.sigma1.tolist(),
        "m": summary.m,
        "binding": [d.to_json() for d in summary.binding],
        "source_id": summary.source_id,
    }


def summary_from_dict(obj) -> SummaryStatistic:
    if not isinstance(obj, Mapping):
        raise MalformedInput("summary JSON must be an object")
    missing = {"beta", "sigma1", "m", "binding"} - set(obj)
    if missing:
        raise MalformedInput(f"summary JSON missing keys {sorted(missing)}")
    binding = obj["binding"]
    if not isinstance(binding, Sequence) or isinstance(binding, (str, bytes)):
        raise MalformedInput("summary 'binding' must be a list of descriptors")
    descs = [FunctionalDescriptor.from_json(entry) for entry in binding]
    return validate_summary(
        obj["beta"], obj["sigma1"], obj["m"], descs, obj.get("source_id", "")
    )


def write_summary_json(summary: SummaryStatistic, path):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(summary_to_dict(summary), fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_summary_json(path) -> SummaryStatistic:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedInput(f"{path}: invalid JSON: {exc}") from exc
    return summary_from_dict(obj)
