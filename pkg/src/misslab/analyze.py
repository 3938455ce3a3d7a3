"""OLS estimation, Rubin's-rules pooling, and listwise-deletion baseline."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .tabular import Dataset, DesignMatrix, dummy_encode

RANK_TOL = 1e-10


class RankDeficientError(ValueError):
    """Design matrix is rank deficient; carries the offending columns."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"rank-deficient design; dependent columns: {self.columns}")


@dataclass
class FitResult:
    """One OLS fit: estimates, standard errors, residual df, term labels."""

    beta: np.ndarray
    se: np.ndarray
    df: int
    terms: list[str]

    @property
    def t_stats(self) -> np.ndarray:
        return self.beta / self.se

    def p_values(self) -> np.ndarray:
        return 2.0 * stats.t.sf(np.abs(self.t_stats), self.df)

    def reject(self, alpha: float = 0.05) -> np.ndarray:
        return self.p_values() < alpha


def ols_fit(y: np.ndarray, X: DesignMatrix | np.ndarray,
            terms: list[str] | None = None) -> FitResult:
    """Least squares via QR with sigma^2 (X'X)^-1 standard errors."""
    if isinstance(X, DesignMatrix):
        terms = X.column_labels
        X = X.values
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, k = X.shape
    if terms is None:
        terms = [f"b{j}" for j in range(k)]
    if n <= k:
        raise ValueError(f"need more rows ({n}) than columns ({k})")
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    scale = diag.max() if diag.size else 0.0
    dependent = diag <= RANK_TOL * scale
    if scale == 0.0 or dependent.any():
        raise RankDeficientError([terms[j] for j in np.nonzero(dependent)[0]])
    beta = np.linalg.solve(R, Q.T @ y)
    resid = y - X @ beta
    df = n - k
    sigma2 = float(resid @ resid) / df
    Rinv = np.linalg.solve(R, np.eye(k))
    se = np.sqrt(sigma2 * np.sum(Rinv * Rinv, axis=1))
    return FitResult(beta=beta, se=se, df=df, terms=list(terms))


@dataclass
class PooledResult:
    """Rubin-pooled estimates over m imputations plus per-term test decisions."""

    qbar: np.ndarray
    w: np.ndarray        # within-imputation variance
    b: np.ndarray        # between-imputation variance
    t_var: np.ndarray    # total variance w + (1 + 1/m) b
    df_rubin: np.ndarray
    p: np.ndarray
    reject: np.ndarray
    terms: list[str]
    m: int
    alpha: float


def rubin_pool(fits: list[FitResult], alpha: float = 0.05) -> PooledResult:
    """Pool m >= 2 fits: qbar, W, B, T = W + (1+1/m)B, df = (m-1)(1 + W/((1+1/m)B))^2."""
    if len(fits) < 2:
        raise ValueError("pooling needs m >= 2 fits")
    terms = fits[0].terms
    for f in fits[1:]:
        if f.terms != terms:
            raise ValueError("term labels differ across fits")
    m = len(fits)
    betas = np.stack([f.beta for f in fits])
    ses = np.stack([f.se for f in fits])
    qbar = betas.mean(axis=0)
    w = (ses ** 2).mean(axis=0)
    b = betas.var(axis=0, ddof=1)
    t_var = w + (1.0 + 1.0 / m) * b
    with np.errstate(divide="ignore"):
        df = np.where(b > 0.0,
                      (m - 1) * (1.0 + w / ((1.0 + 1.0 / m) * np.where(b > 0, b, 1.0))) ** 2,
                      np.inf)
    t_stat = qbar / np.sqrt(t_var)
    p = np.where(np.isinf(df),
                 2.0 * stats.norm.sf(np.abs(t_stat)),
                 2.0 * stats.t.sf(np.abs(t_stat), np.where(np.isinf(df), 1.0, df)))
    return PooledResult(qbar=qbar, w=w, b=b, t_var=t_var, df_rubin=df, p=p,
                        reject=p < alpha, terms=list(terms), m=m, alpha=alpha)


@dataclass
class ListwiseFit:
    """Complete-case OLS, or a skip marker when too few complete rows remain."""

    result: FitResult | None
    n_complete: int
    skipped: bool
    reason: str = ""


def complete_rows(ds: Dataset, columns: list[str] | None = None) -> np.ndarray:
    names = columns if columns is not None else ds.names
    idx = [ds.col_index(n) for n in names]
    return ~ds.mask[:, idx].any(axis=1)


def listwise_fit(ds: Dataset, outcome: str, refs: dict[str, str],
                 predictors: list[str] | None = None,
                 min_rows: int | None = None, alpha: float = 0.05) -> ListwiseFit:
    """Drop rows with any missing model variable, then OLS if enough remain.

    ``min_rows`` defaults to 10x the design column count.
    """
    predictors = predictors if predictors is not None else [
        n for n in ds.names if n != outcome]
    keep = complete_rows(ds, [outcome] + predictors)
    n_complete = int(keep.sum())
    sub = _subset_rows(ds, keep)
    if n_complete == 0:
        return ListwiseFit(None, 0, True, "no complete cases")
    try:
        X = dummy_encode(sub, refs=refs, intercept=True, columns=predictors)
    except Exception as e:  # a level can vanish entirely from complete cases
        return ListwiseFit(None, n_complete, True, f"encoding failed: {e}")
    limit = min_rows if min_rows is not None else 10 * X.n_cols
    if n_complete < limit:
        return ListwiseFit(None, n_complete, True,
                           f"insufficient complete cases ({n_complete} < {limit})")
    try:
        fit = ols_fit(sub.col(outcome), X)
    except RankDeficientError as e:
        return ListwiseFit(None, n_complete, True, str(e))
    return ListwiseFit(fit, n_complete, False)


def _subset_rows(ds: Dataset, keep: np.ndarray) -> Dataset:
    return Dataset(
        columns=list(ds.columns),
        values=[v[keep] for v in ds.values],
        mask=ds.mask[keep],
        ids=None if ds.ids is None else ds.ids[keep],
        waves=None if ds.waves is None else ds.waves[keep],
    )
