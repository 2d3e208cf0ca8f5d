"""Shared dense linear algebra helpers.

Every solve of a symmetric positive (semi)definite system in this package
goes through spd_solve so the ridge fallback policy lives in one place:
when the condition number exceeds 1e12 the diagonal is inflated by
1e-10 * trace/dim and a warning is recorded before solving.
"""

import warnings

import numpy as np
import scipy.linalg

from .errors import NumericalError

COND_LIMIT = 1e12
RIDGE_SCALE = 1e-10


def sym(a):
    """Symmetrize, killing round-off asymmetry from products."""
    return (a + a.T) / 2.0


def max_asymmetry(a) -> float:
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - a.T)))


def min_eigenvalue(a) -> float:
    if a.shape[0] == 0:
        return 0.0
    return float(np.linalg.eigvalsh(sym(a))[0])


def spd_solve(a, b, error: type = NumericalError, sink: list | None = None, context: str = ""):
    """Solve a @ x = b for symmetric positive definite a.

    Falls back to a ridge-inflated diagonal when the condition number
    exceeds COND_LIMIT, warning through `warnings` and appending the message
    to `sink` when given. Raises `error` if the system is still unsolvable.
    """
    a = sym(np.asarray(a, dtype=float))
    dim = a.shape[0]
    if dim == 0:
        return np.zeros_like(np.asarray(b, dtype=float))
    eigs = np.linalg.eigvalsh(a)
    lo, hi = float(eigs[0]), float(eigs[-1])
    if lo <= 0.0 or hi / lo > COND_LIMIT:
        trace = float(np.trace(a))
        if trace <= 0.0:
            raise error(f"matrix is not positive definite{_ctx(context)}")
        ridge = RIDGE_SCALE * trace / dim
        a = a + ridge * np.eye(dim)
        msg = f"ill-conditioned system{_ctx(context)}: added ridge {ridge:.3e} to diagonal"
        warnings.warn(msg)
        if sink is not None:
            sink.append(msg)
    try:
        cho = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
        return scipy.linalg.cho_solve(cho, np.asarray(b, dtype=float), check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise error(f"singular system{_ctx(context)}") from exc


def inv_sqrt_spd(a, floor: float = 1e-12, error: type = NumericalError, context: str = ""):
    """Symmetric inverse square root via eigendecomposition.

    Eigenvalues below -1e-10 are rejected; small ones are floored at `floor`
    rather than projected away so the result is always well defined.
    """
    a = sym(np.asarray(a, dtype=float))
    vals, vecs = np.linalg.eigh(a)
    if vals.size and vals[0] < -1e-10:
        raise error(f"matrix is not positive semidefinite{_ctx(context)}")
    vals = np.maximum(vals, floor)
    return (vecs / np.sqrt(vals)) @ vecs.T


def check_full_rank(design, error: type, context: str = ""):
    """Raise `error` unless the design matrix has full column rank."""
    s = np.linalg.svd(np.asarray(design, dtype=float), compute_uv=False)
    if s.size == 0 or s[-1] <= 1e-10 * s[0]:
        raise error(f"design matrix is rank deficient{_ctx(context)}")


def _ctx(context: str) -> str:
    return f" ({context})" if context else ""
