"""Imputation accuracy (IPM), bias panels, rejection-rate panels, and
correlation-distance reports."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .tabular import Dataset, correlation_matrix, matrix_distance

CORR_METHODS = ("spearman", "kendall", "pearson")
DISTANCES = ("frobenius", "mae", "rmse")


def ipm(truth: Dataset, imputed: Dataset, mask: np.ndarray) -> float:
    """Normalized per-cell distance between truth and imputation, averaged
    over amputed cells.

    Numeric cells contribute |t - i| / (combined column max - min); categorical
    cells contribute 1 when the levels differ. 0 means perfect imputation.
    """
    if truth.names != imputed.names:
        raise ValueError("truth/imputed schemas differ")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (truth.n_rows, truth.n_cols):
        raise ValueError("mask shape does not match the datasets")
    n_mis = int(mask.sum())
    if n_mis == 0:
        raise ValueError("IPM is undefined without amputed cells")
    total = 0.0
    for c, (name, ct) in enumerate(truth.columns):
        cells = mask[:, c]
        if not cells.any():
            continue
        tv = truth.values[c]
        iv = imputed.values[c]
        if ct.is_categorical:
            total += float(np.sum(tv[cells] != iv[cells]))
        else:
            lo = min(tv.min(), iv.min())
            hi = max(tv.max(), iv.max())
            rng = hi - lo
            diff = np.abs(tv[cells] - iv[cells])
            if rng <= 0.0:
                if np.any(diff > 0):
                    warnings.warn(f"zero range with nonzero error in {name!r}; "
                                  "cells contribute 1")
                    total += float(np.sum(diff > 0))
            else:
                total += float(np.sum(diff / rng))
    return total / n_mis


def ipm_multiple(truth: Dataset, completions, mask: np.ndarray) -> float:
    """Mean IPM over m completions of one multiple imputation."""
    return float(np.mean([ipm(truth, comp, mask) for comp in completions]))


@dataclass
class PanelStats:
    mean: float
    median: float
    sd: float


@dataclass
class PanelReport:
    """Panel summaries plus the per-coefficient values they aggregate."""

    panels: dict[str, PanelStats]
    per_term: np.ndarray
    terms: list[str]


PANEL_NAMES = ("overall", "true_zero", "non_true_zero", "metric", "binary")


def _summaries(values: np.ndarray, membership: dict[str, np.ndarray],
               terms: list[str]) -> PanelReport:
    panels = {}
    for panel, sel in membership.items():
        vals = values[sel]
        if vals.size == 0:
            panels[panel] = PanelStats(float("nan"), float("nan"), float("nan"))
            continue
        sd = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
        panels[panel] = PanelStats(float(np.mean(vals)), float(np.median(vals)), sd)
    return PanelReport(panels=panels, per_term=values, terms=list(terms))


def check_membership(membership: dict[str, np.ndarray]) -> None:
    a = membership["overall"]
    b = membership["true_zero"]
    c = membership["non_true_zero"]
    if not (np.array_equal(a, b | c) and not (b & c).any()):
        raise ValueError("true_zero and non_true_zero must partition overall")


def bias_panels(estimates: np.ndarray, truth: np.ndarray,
                membership: dict[str, np.ndarray], terms: list[str],
                kind: str = "abs_mean_error") -> PanelReport:
    """Aggregate per-coefficient bias over replications into panel statistics.

    ``abs_mean_error`` (default) takes |mean over replications of the error|
    per coefficient; ``mean_abs_error`` averages absolute errors instead.
    """
    estimates = np.atleast_2d(np.asarray(estimates, dtype=np.float64))
    truth = np.asarray(truth, dtype=np.float64)
    if estimates.shape[1] != truth.shape[0] or truth.shape[0] != len(terms):
        raise ValueError("estimates/truth/terms are not aligned")
    check_membership(membership)
    err = estimates - truth
    if kind == "abs_mean_error":
        per_term = np.abs(err.mean(axis=0))
    elif kind == "mean_abs_error":
        per_term = np.abs(err).mean(axis=0)
    else:
        raise ValueError(f"unknown bias kind {kind!r}")
    return _summaries(per_term, membership, terms)


def rejection_panels(decisions: np.ndarray, membership: dict[str, np.ndarray],
                     terms: list[str]) -> PanelReport:
    """Per-coefficient rejection rates over replications, panel-aggregated.

    The true_zero panel is the Type I error panel; non_true_zero is power.
    """
    decisions = np.atleast_2d(np.asarray(decisions))
    if decisions.shape[1] != len(terms):
        raise ValueError("decisions/terms are not aligned")
    check_membership(membership)
    rates = decisions.astype(np.float64).mean(axis=0)
    return _summaries(rates, membership, terms)


def correlation_report(sim: Dataset, reference, columns=None) -> dict:
    """All nine (correlation method x distance) values between two datasets.

    ``reference`` is a Dataset or a precomputed {method: matrix} mapping.
    """
    table = {}
    for method in CORR_METHODS:
        a = correlation_matrix(sim, method, columns=columns)
        if isinstance(reference, Dataset):
            b = correlation_matrix(reference, method, columns=columns)
        else:
            b = np.asarray(reference[method])
        if a.shape != b.shape:
            raise ValueError("correlation matrices have different shapes")
        for dist in DISTANCES:
            table[(method, dist)] = matrix_distance(a, b, dist)
    return table
