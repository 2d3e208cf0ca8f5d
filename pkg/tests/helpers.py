"""Shared builders for synthetic fusion instances used across test modules."""

import numpy as np

from datafuse import (
    FunctionalDescriptor,
    FunctionalFit,
    FunctionalKind,
    FusionInputs,
    validate_summary,
)


def centered(rng, n, k):
    """Random n x k matrix with exactly mean-zero columns."""
    a = rng.standard_normal((n, k))
    return a - a.mean(axis=0)


def random_spd(rng, q, jitter=0.5):
    w = rng.standard_normal((q, q))
    return w @ w.T + jitter * np.eye(q)


def mean_binding(q, prefix="c"):
    return tuple(
        FunctionalDescriptor(FunctionalKind.MEAN, {"column": f"{prefix}{j}"})
        for j in range(q)
    )


def synth_inputs(rng, n, p, q, splits=None, m_range=(50, 400)):
    """Synthetic FusionInputs with random influence columns and summaries.

    splits optionally partitions the q summary coordinates into several
    sources (a list of block widths summing to q).
    """
    tau_fit = FunctionalFit(rng.standard_normal(p), centered(rng, n, p), label="tau")
    beta_fit = FunctionalFit(rng.standard_normal(q), centered(rng, n, q), label="beta")
    splits = [q] if splits is None else list(splits)
    assert sum(splits) == q
    summaries = []
    at = 0
    for idx, qb in enumerate(splits):
        summaries.append(
            validate_summary(
                rng.standard_normal(qb),
                random_spd(rng, qb),
                int(rng.integers(*m_range)),
                mean_binding(qb, prefix=f"s{idx}_"),
                source_id=f"synthetic-{idx}",
            )
        )
        at += qb
    return FusionInputs(tau_fit=tau_fit, beta_fit=beta_fit, summaries=tuple(summaries))
