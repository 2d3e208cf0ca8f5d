"""Fusion of an internal functional fit with external summary statistics.

The fused estimator shifts the internal estimate by a calibration term,

    tau_fused = tau_int - gain @ (beta_int - beta_tilde),

where the gain solves (sigma_ext + gram) gain' = cross' built from the
empirical influence moments cross = E(phi eta') and gram = E(eta eta') and
the scaled external covariance sigma_ext. Its asymptotic variance is the
plug-in efficiency bound E(phi phi') - cross (sigma_ext + gram)^{-1} cross'.
Several sources stack block-diagonally; each block s is scaled by
n / m_s, so everything is expressed per internal observation.
"""

from dataclasses import dataclass, replace as _replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from ._linalg import spd_solve, sym
from .errors import (
    DimensionMismatch,
    NonPositiveVariance,
    SingularCalibration,
    SingularGram,
    SingularJointCovariance,
    ZeroStandardError,
)
from .model import (
    FunctionalDescriptor,
    FunctionalFit,
    FusionResult,
    InternalDataset,
    Method,
    SummaryStatistic,
)

__all__ = [
    "FusionInputs",
    "prepare_inputs",
    "empirical_moments",
    "estimate_int",
    "estimate_eff",
    "estimate_multi_source",
    "estimate_crude",
    "estimate_knw",
    "efficiency_bound",
    "ivw_reduce",
    "cd_minimize_check",
    "wald_inference",
    "restrict_inputs",
    "normal_cdf",
    "normal_quantile",
]


def normal_cdf(x):
    """Standard normal CDF via the erf-based Cephes routine (abs error
    below 1e-15 and identical across platforms, so p-values are stable)."""
    return ndtr(x)


def normal_quantile(p):
    return ndtri(p)


@dataclass(frozen=True)
class FusionInputs:
    """Everything the fusion estimators need, on a common sample.

    `data` and `tau` keep references to the originating dataset and
    functional so cross-validation can refit on row subsets; they are not
    used by the plain estimators.
    """

    tau_fit: FunctionalFit
    beta_fit: FunctionalFit
    summaries: tuple
    omega_override: Optional[np.ndarray] = None
    data: Optional[InternalDataset] = None
    tau: Optional[FunctionalDescriptor] = None

    def __post_init__(self):
        if self.tau_fit.n != self.beta_fit.n:
            raise DimensionMismatch(
                f"tau influence has {self.tau_fit.n} rows, beta has {self.beta_fit.n}"
            )
        object.__setattr__(self, "summaries", tuple(self.summaries))
        q = sum(s.q for s in self.summaries)
        if q != self.beta_fit.p:
            raise DimensionMismatch(
                f"summaries cover {q} coordinates, beta fit has {self.beta_fit.p}"
            )
        if self.omega_override is not None:
            omega = np.asarray(self.omega_override, dtype=float)
            if omega.shape != (q, q):
                raise DimensionMismatch(
                    f"omega_override shape {omega.shape}, expected {(q, q)}"
                )
            object.__setattr__(self, "omega_override", omega)

    @property
    def n(self) -> int:
        return self.tau_fit.n

    @property
    def p(self) -> int:
        return self.tau_fit.p

    @property
    def q(self) -> int:
        return self.beta_fit.p

    @property
    def rho(self) -> float:
        """Aggregate external-to-internal sample ratio."""
        return sum(s.m for s in self.summaries) / self.n if self.summaries else 0.0


def prepare_inputs(
    data: InternalDataset,
    tau: FunctionalDescriptor,
    summaries: Sequence[SummaryStatistic],
    omega_override=None,
) -> FusionInputs:
    """Fit the target functional and all summary bindings on one dataset."""
    from .functionals import evaluate_binding, fit_functional

    summaries = tuple(summaries)
    tau_fit = fit_functional(data, tau)
    binding = [desc for s in summaries for desc in s.binding]
    if binding:
        beta_int, eta = evaluate_binding(data, binding)
    else:
        beta_int, eta = np.zeros(0), np.zeros((data.n, 0))
    beta_fit = FunctionalFit(beta_int, eta, label="binding")
    return FusionInputs(
        tau_fit=tau_fit,
        beta_fit=beta_fit,
        summaries=summaries,
        omega_override=omega_override,
        data=data,
        tau=tau,
    )


def empirical_moments(tau_fit: FunctionalFit, beta_fit: FunctionalFit):
    """cross = E(phi eta') (p x q) and gram = E(eta eta') (q x q)."""
    if tau_fit.n != beta_fit.n:
        raise DimensionMismatch("influence matrices have different row counts")
    n = tau_fit.n
    cross = tau_fit.influence.T @ beta_fit.influence / n
    gram = sym(beta_fit.influence.T @ beta_fit.influence / n)
    return cross, gram


def assemble_external(inputs: FusionInputs):
    """Concatenated external estimates and their per-internal-observation
    scaled covariance: block s of sigma_ext is sigma1_s * n / m_s."""
    n = inputs.n
    beta_tilde = (
        np.concatenate([s.beta for s in inputs.summaries])
        if inputs.summaries
        else np.zeros(0)
    )
    rho_coord = np.concatenate(
        [np.full(s.q, s.m / n) for s in inputs.summaries]
    ) if inputs.summaries else np.zeros(0)
    if inputs.omega_override is not None:
        base = inputs.omega_override
    else:
        q = beta_tilde.shape[0]
        base = np.zeros((q, q))
        at = 0
        for s in inputs.summaries:
            base[at : at + s.q, at : at + s.q] = s.sigma1
            at += s.q
    scale = np.sqrt(np.outer(rho_coord, rho_coord)) if rho_coord.size else rho_coord
    sigma_ext = base / scale if rho_coord.size else base.reshape(0, 0)
    return beta_tilde, sym(sigma_ext)


def _phi_var(tau_fit: FunctionalFit) -> np.ndarray:
    return sym(tau_fit.influence.T @ tau_fit.influence / tau_fit.n)


def _build_result(
    method: Method,
    estimate: np.ndarray,
    avar: np.ndarray,
    inputs: FusionInputs,
    gain: np.ndarray,
    cross: np.ndarray,
    gram: np.ndarray,
    level: float,
    warn: list,
) -> FusionResult:
    n = inputs.n
    avar = sym(avar)
    # negative round-off on the diagonal is clipped here; anything beyond
    # tolerance is rejected by the FusionResult constructor below
    se = np.sqrt(np.maximum(np.diag(avar), 0.0) / n)
    zcrit = float(normal_quantile(0.5 + level / 2.0))
    ci = np.column_stack([estimate - zcrit * se, estimate + zcrit * se])
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0.0, estimate / se, np.nan)
    p_one = np.where(np.isnan(z), np.nan, normal_cdf(-z))
    if np.any(se == 0.0):
        warn = warn + ["zero standard error: one-sided p set to NaN"]
    return FusionResult(
        method=method,
        estimate=estimate,
        avar=avar,
        se=se,
        gain=gain,
        cross=cross,
        gram=gram,
        rho=inputs.rho,
        ci=ci,
        level=level,
        p_one_sided=p_one,
        warnings=tuple(warn),
        working_covariance=inputs.omega_override is not None,
    )


def estimate_int(inputs: FusionInputs, level: float = 0.95) -> FusionResult:
    """Internal-only estimate: no calibration, avar = E(phi phi')."""
    p = inputs.p
    return _build_result(
        Method.INT,
        inputs.tau_fit.estimate.copy(),
        _phi_var(inputs.tau_fit),
        inputs,
        gain=np.zeros((p, 0)),
        cross=np.zeros((p, 0)),
        gram=np.zeros((0, 0)),
        level=level,
        warn=[],
    )


def estimate_eff(inputs: FusionInputs, level: float = 0.95) -> FusionResult:
    """Data-fused estimator attaining the efficiency bound.

    Shifts the internal estimate along the calibration residual
    beta_int - beta_tilde and reports the plug-in bound as avar.
    """
    if not inputs.summaries:
        raise DimensionMismatch("estimate_eff needs at least one summary")
    warn: list = []
    cross, gram = empirical_moments(inputs.tau_fit, inputs.beta_fit)
    beta_tilde, sigma_ext = assemble_external(inputs)
    calib = sigma_ext + gram
    gain = spd_solve(calib, cross.T, SingularCalibration, sink=warn, context="calibration").T
    estimate = inputs.tau_fit.estimate - gain @ (inputs.beta_fit.estimate - beta_tilde)
    avar = _phi_var(inputs.tau_fit) - gain @ cross.T
    return _build_result(Method.EFF, estimate, avar, inputs, gain, cross, gram, level, warn)


def estimate_multi_source(inputs: FusionInputs, level: float = 0.95) -> FusionResult:
    """Fused estimator with any number of independent sources; identical to
    estimate_eff, which already stacks summaries block-diagonally."""
    return estimate_eff(inputs, level=level)


def estimate_crude(inputs: FusionInputs, level: float = 0.95) -> FusionResult:
    """Crude calibration using gain = cross gram^{-1}.

    Consistent, but its variance E(phi phi') + A (sigma_ext - gram) A' can
    exceed the internal-only variance when the external sample is small.
    """
    if not inputs.summaries:
        raise DimensionMismatch("estimate_crude needs at least one summary")
    warn: list = []
    cross, gram = empirical_moments(inputs.tau_fit, inputs.beta_fit)
    beta_tilde, sigma_ext = assemble_external(inputs)
    coef = spd_solve(gram, cross.T, SingularGram, sink=warn, context="gram").T
    estimate = inputs.tau_fit.estimate - coef @ (inputs.beta_fit.estimate - beta_tilde)
    avar = _phi_var(inputs.tau_fit) + coef @ (sigma_ext - gram) @ coef.T
    return _build_result(Method.CRD, estimate, avar, inputs, coef, cross, gram, level, warn)


def estimate_knw(inputs: FusionInputs, beta_true, level: float = 0.95) -> FusionResult:
    """Calibration against the known true beta (simulation benchmark)."""
    beta_true = np.atleast_1d(np.asarray(beta_true, dtype=float))
    if beta_true.shape[0] != inputs.q:
        raise DimensionMismatch(
            f"beta_true has length {beta_true.shape[0]}, expected {inputs.q}"
        )
    warn: list = []
    cross, gram = empirical_moments(inputs.tau_fit, inputs.beta_fit)
    coef = spd_solve(gram, cross.T, SingularGram, sink=warn, context="gram").T
    estimate = inputs.tau_fit.estimate - coef @ (inputs.beta_fit.estimate - beta_true)
    avar = _phi_var(inputs.tau_fit) - coef @ cross.T
    return _build_result(Method.KNW, estimate, avar, inputs, coef, cross, gram, level, warn)


def efficiency_bound(phi_var, cross, gram, sigma1, rho: float) -> np.ndarray:
    """Semiparametric bound E(phi phi') - cross (sigma1/rho + gram)^{-1} cross'.

    Single-source form; `rho` is m/n. The first argument carries E(phi phi'),
    which the bound needs alongside the calibration pieces.
    """
    phi_var = np.atleast_2d(np.asarray(phi_var, dtype=float))
    cross = np.atleast_2d(np.asarray(cross, dtype=float))
    gram = np.atleast_2d(np.asarray(gram, dtype=float))
    sigma1 = np.atleast_2d(np.asarray(sigma1, dtype=float))
    if rho <= 0.0:
        raise DimensionMismatch(f"rho must be positive, got {rho}")
    calib = sigma1 / rho + gram
    gain = spd_solve(calib, cross.T, SingularCalibration, context="bound").T
    return sym(phi_var - gain @ cross.T)


def ivw_reduce(tau_int: float, var_int: float, beta_tilde: float, var_ext: float) -> float:
    """Inverse-variance weighted average of two estimates of the same scalar."""
    if not (var_int > 0.0) or not (var_ext > 0.0):
        raise NonPositiveVariance(
            f"variances must be positive, got {var_int!r}, {var_ext!r}"
        )
    w_int, w_ext = 1.0 / var_int, 1.0 / var_ext
    return (tau_int * w_int + beta_tilde * w_ext) / (w_int + w_ext)


def cd_minimize_check(inputs: FusionInputs):
    """Minimizer of the stacked calibration quadratic.

    Solves for (tau, beta) minimizing
        (v - theta)' Sigma^{-1} (v - theta)
          + (beta_tilde - beta)' sigma_ext^{-1} (beta_tilde - beta)
    with v = (tau_int, beta_int) and Sigma the joint influence covariance.
    The tau component reproduces the fused estimator; exposed as an
    independent numerical check of that identity.
    """
    p, q = inputs.p, inputs.q
    cross, gram = empirical_moments(inputs.tau_fit, inputs.beta_fit)
    beta_tilde, sigma_ext = assemble_external(inputs)
    joint = np.block([[_phi_var(inputs.tau_fit), cross], [cross.T, gram]])
    w_joint = spd_solve(
        joint, np.eye(p + q), SingularJointCovariance, context="joint covariance"
    )
    w_ext = spd_solve(
        sigma_ext, np.eye(q), SingularJointCovariance, context="external covariance"
    )
    v = np.concatenate([inputs.tau_fit.estimate, inputs.beta_fit.estimate])
    lhs = w_joint.copy()
    lhs[p:, p:] += w_ext
    rhs = w_joint @ v
    rhs[p:] += w_ext @ beta_tilde
    theta = np.linalg.solve(sym(lhs), rhs)
    return theta[:p], theta[p:]


def wald_inference(result: FusionResult, null=0.0, side: str = "upper", level=None):
    """z statistics, p-values, and the confidence interval for a result.

    side: 'upper' tests against tau > null, 'lower' against tau < null,
    'two_sided' doubles the smaller tail.
    """
    if side not in ("upper", "lower", "two_sided"):
        raise DimensionMismatch(f"side must be upper/lower/two_sided, got {side!r}")
    level = result.level if level is None else float(level)
    null = np.broadcast_to(np.asarray(null, dtype=float), result.estimate.shape)
    if np.any(result.se <= 0.0):
        raise ZeroStandardError("standard error is zero; z statistic undefined")
    z = (result.estimate - null) / result.se
    if side == "upper":
        p = normal_cdf(-z)
    elif side == "lower":
        p = normal_cdf(z)
    else:
        p = 2.0 * normal_cdf(-np.abs(z))
    zcrit = float(normal_quantile(0.5 + level / 2.0))
    ci = np.column_stack(
        [result.estimate - zcrit * result.se, result.estimate + zcrit * result.se]
    )
    return z, p, ci


def restrict_inputs(inputs: FusionInputs, keep) -> FusionInputs:
    """Restriction to a subset of summary coordinates (global 0-based).

    Summaries are re-sliced coordinate-wise (bindings become per-component
    descriptors); sources losing all coordinates are dropped.
    """
    from .model import expand_binding, validate_summary

    keep = sorted(int(j) for j in keep)
    if len(set(keep)) != len(keep) or any(j < 0 or j >= inputs.q for j in keep):
        raise DimensionMismatch(f"invalid coordinate subset {keep} for q={inputs.q}")
    new_summaries = []
    at = 0
    for s in inputs.summaries:
        local = [j - at for j in keep if at <= j < at + s.q]
        if local:
            expanded = expand_binding(s.binding)
            new_binding = [expanded[j][0].with_component(expanded[j][1]) for j in local]
            new_summaries.append(
                validate_summary(
                    s.beta[local],
                    s.sigma1[np.ix_(local, local)],
                    s.m,
                    new_binding,
                    s.source_id,
                )
            )
        at += s.q
    omega = inputs.omega_override
    if omega is not None:
        omega = omega[np.ix_(keep, keep)]
    beta_fit = FunctionalFit(
        inputs.beta_fit.estimate[keep],
        inputs.beta_fit.influence[:, keep],
        label=inputs.beta_fit.label,
    )
    return FusionInputs(
        tau_fit=inputs.tau_fit,
        beta_fit=beta_fit,
        summaries=tuple(new_summaries),
        omega_override=omega,
        data=inputs.data,
        tau=inputs.tau,
    )


def with_method(result: FusionResult, method: Method) -> FusionResult:
    """Same numbers, different method tag (DBS/ORC reuse the fused fit)."""
    return _replace(result, method=method)
