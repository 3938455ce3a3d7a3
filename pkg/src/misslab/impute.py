"""Five multiple-imputation engines over mixed-type data.

All engines share the same skeleton: fill missing cells with random draws
from the observed values, then revisit incomplete variables in ascending
missing-count order, refitting a conditional model per variable. They differ
in the model (linear, forest, boosted trees), in whether they chain over
several sweeps, and in how predictions become imputed values (donor matching,
leaf sampling, or raw predictions). Every engine is a pure function of
(dataset, spec, seed); observed cells are never rewritten.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg as sla

from .tabular import Dataset, NOMINAL, dummy_encode
from .trees import (CLASSIFICATION, REGRESSION, FeatureSet, ForestConfig,
                    GbmConfig, fit_forest, fit_gbm, predict_forest,
                    predict_gbm, predict_gbm_margin)

MICE_PMM = "mice_pmm"
MICE_RF = "mice_rf"
MISS_RANGER = "miss_ranger"
MISS_RANGER_PMM = "miss_ranger_pmm"
MIXGB = "mixgb"
METHODS = (MICE_PMM, MICE_RF, MISS_RANGER, MISS_RANGER_PMM, MIXGB)

# engine-level learner defaults, sized after the cited tools' spirit and the
# desk-scale compute budget; override through ImputerSpec
MICE_RF_FOREST = ForestConfig(num_trees=10)
RANGER_FOREST = ForestConfig(num_trees=20)
MIXGB_GBM = GbmConfig(n_rounds=25, max_depth=3, eta=0.3, lam=1.0,
                      subsample=0.7)

_DEFAULT_ITERS = {MICE_PMM: 5, MICE_RF: 5, MISS_RANGER: 10,
                  MISS_RANGER_PMM: 10, MIXGB: 1}


class UnimputableError(ValueError):
    """A column has no observed values to draw from."""


@dataclass(frozen=True)
class ImputerSpec:
    method: str
    m: int = 10
    iters: int | None = None      # per-method default when None
    k: int = 5                    # PMM donor-pool size
    forest: ForestConfig | None = None
    gbm: GbmConfig | None = None
    ridge: float = 1e-8

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.m < 1 or self.k < 1 or (self.iters is not None and self.iters < 1):
            raise ValueError("m, k, and iters must be >= 1")

    @property
    def resolved_iters(self) -> int:
        return self.iters if self.iters is not None else _DEFAULT_ITERS[self.method]


@dataclass
class MultipleImputation:
    completions: list[Dataset]
    method: str
    spec: ImputerSpec
    seed: int
    trace: list[tuple[int, int, str]]   # (imputation, sweep, variable)
    seconds: float
    notes: list[str] = field(default_factory=list)


# --- shared machinery ---------------------------------------------------------


def visit_order(ds: Dataset) -> list[int]:
    """Incomplete columns sorted ascending by missing count (ties by position)."""
    counts = ds.mask.sum(axis=0)
    incomplete = [c for c in range(ds.n_cols) if counts[c] > 0]
    return sorted(incomplete, key=lambda c: (counts[c], c))


def initialize(ds: Dataset, rng: np.random.Generator) -> list[np.ndarray]:
    """Working copies with every missing cell drawn from its column's
    observed values."""
    work = []
    for c, (name, ct) in enumerate(ds.columns):
        vals = ds.values[c].copy()
        miss = ds.mask[:, c]
        if miss.any():
            obs = vals[~miss]
            if obs.size == 0:
                raise UnimputableError(f"column {name!r} has no observed cells")
            vals[miss] = rng.choice(obs, size=int(miss.sum()), replace=True)
        work.append(vals)
    return work


def pmm_match(pred_mis: np.ndarray, pred_obs: np.ndarray, obs_values: np.ndarray,
              k: int, rng: np.random.Generator) -> np.ndarray:
    """Draw, per missing prediction, one of the k observed values whose
    predictions lie closest; ties at the pool boundary break by seeded shuffle."""
    n_obs = pred_obs.shape[0]
    if n_obs == 0:
        raise ValueError("donor matching needs at least one observed prediction")
    kk = min(k, n_obs)
    if kk < k:
        warnings.warn(f"donor pool reduced to {kk} (only {n_obs} observed)")
    perm = rng.permutation(n_obs)
    dist = np.abs(pred_obs[perm][None, :] - pred_mis[:, None])
    if kk < n_obs:
        pool = np.argpartition(dist, kk - 1, axis=1)[:, :kk]
    else:
        pool = np.tile(np.arange(n_obs), (pred_mis.shape[0], 1))
    choice = rng.integers(0, kk, size=pred_mis.shape[0])
    donors = perm[pool[np.arange(pred_mis.shape[0]), choice]]
    return obs_values[donors]


def _work_dataset(ds: Dataset, work: list[np.ndarray]) -> Dataset:
    return Dataset(ds.columns, work, np.zeros_like(ds.mask), ids=ds.ids,
                   waves=ds.waves)


def _completion(ds: Dataset, work: list[np.ndarray]) -> Dataset:
    return Dataset(list(ds.columns), [w.copy() for w in work],
                   np.zeros_like(ds.mask),
                   ids=None if ds.ids is None else ds.ids.copy(),
                   waves=None if ds.waves is None else ds.waves.copy())


def _feature_sets(ds: Dataset) -> dict[int, tuple[list[int], FeatureSet]]:
    """Per target column: the other columns' indices plus their FeatureSet."""
    out = {}
    for j in range(ds.n_cols):
        others = [c for c in range(ds.n_cols) if c != j]
        names = [ds.columns[c][0] for c in others]
        levels = np.array([ds.columns[c][1].n_levels for c in others],
                          dtype=np.int64)
        nominal = tuple(ds.columns[c][0] for c in others
                        if ds.columns[c][1].kind == NOMINAL)
        out[j] = (others, FeatureSet.build(names, levels, nominal=nominal))
    return out


def _predictor_matrix(work: list[np.ndarray], others: list[int]) -> np.ndarray:
    return np.column_stack([work[c].astype(np.float64) for c in others])


def _rng_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2 ** 32))


# --- MICE with predictive mean matching ----------------------------------------


def _draw_linear(X: np.ndarray, y: np.ndarray, ridge: float,
                 rng: np.random.Generator, notes: list[str]):
    """beta-hat plus one draw from N(beta-hat, sigma^2 (X'X)^-1)."""
    n, p = X.shape
    if n <= p:
        raise ValueError(f"imputation model needs more rows ({n}) than columns ({p})")
    XtX = X.T @ X
    Xty = X.T @ y
    try:
        cho = sla.cho_factor(XtX)
    except np.linalg.LinAlgError:
        lam = ridge * float(np.mean(np.diag(XtX)))
        XtX = XtX + lam * np.eye(p)
        cho = sla.cho_factor(XtX)
        notes.append(f"singular design; ridge fallback lam={lam:.3e}")
        warnings.warn("singular imputation design; ridge fallback applied")
    beta = sla.cho_solve(cho, Xty)
    resid = y - X @ beta
    sigma2 = float(resid @ resid) / (n - p)
    cov = sigma2 * sla.cho_solve(cho, np.eye(p))
    cov = 0.5 * (cov + cov.T) + 1e-12 * max(sigma2, 1e-12) * np.eye(p)
    L = np.linalg.cholesky(cov)
    beta_star = beta + L @ rng.standard_normal(p)
    return beta, beta_star


def impute_mice_pmm(ds: Dataset, spec: ImputerSpec, seed: int) -> MultipleImputation:
    """Chained linear models with parameter draws and donor matching.

    Per variable: regress its observed values on the dummy-encoded remaining
    columns, draw perturbed coefficients, predict observed rows with the fit
    and missing rows with the draw, then match donors. Categorical targets are
    matched on their integer codes and receive the donor's actual level.
    """
    t0 = time.perf_counter()
    trace: list[tuple[int, int, str]] = []
    notes: list[str] = []
    visit = visit_order(ds)
    comps = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(spec.m)):
        rng = np.random.default_rng(child)
        work = initialize(ds, rng)
        for t in range(spec.resolved_iters):
            for j in visit:
                name, ct = ds.columns[j]
                trace.append((i, t, name))
                obs = ~ds.mask[:, j]
                wds = _work_dataset(ds, work)
                dm = dummy_encode(wds, intercept=True,
                                  columns=[n for n in ds.names if n != name])
                y_obs = ds.values[j][obs].astype(np.float64)
                beta, beta_star = _draw_linear(dm.values[obs], y_obs,
                                               spec.ridge, rng, notes)
                pred_obs = dm.values[obs] @ beta
                pred_mis = dm.values[~obs] @ beta_star
                matched = pmm_match(pred_mis, pred_obs, ds.values[j][obs],
                                    spec.k, rng)
                work[j][~obs] = matched
        comps.append(_completion(ds, work))
    return MultipleImputation(comps, MICE_PMM, spec, seed, trace,
                              time.perf_counter() - t0, notes)


# --- MICE with random-forest leaf donors ---------------------------------------


def _leaf_donor_draw(forest, X_mis: np.ndarray, y_obs: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
    """Per missing row: pick a random tree, route to its leaf, draw one
    training member, and return that member's observed target value."""
    n_mis = X_mis.shape[0]
    out = np.empty(n_mis, dtype=y_obs.dtype)
    tree_pick = rng.integers(0, len(forest.trees), size=n_mis)
    for t in np.unique(tree_pick):
        rows = np.nonzero(tree_pick == t)[0]
        tree = forest.trees[t]
        leaves = tree.route(X_mis[rows])
        offsets = rng.integers(0, tree.node_count[leaves])
        members = tree.row_perm[tree.node_start[leaves] + offsets]
        out[rows] = y_obs[forest.boot_index[t][members]]
    return out


def impute_mice_rf(ds: Dataset, spec: ImputerSpec, seed: int) -> MultipleImputation:
    """Chained forests; imputed values are sampled from the leaves of
    randomly chosen trees (no donor matching on predictions)."""
    t0 = time.perf_counter()
    trace: list[tuple[int, int, str]] = []
    visit = visit_order(ds)
    fsets = _feature_sets(ds)
    base_forest = spec.forest or MICE_RF_FOREST
    comps = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(spec.m)):
        rng = np.random.default_rng(child)
        work = initialize(ds, rng)
        for t in range(spec.resolved_iters):
            for j in visit:
                name, ct = ds.columns[j]
                trace.append((i, t, name))
                obs = ~ds.mask[:, j]
                others, fs = fsets[j]
                X = _predictor_matrix(work, others)
                y_obs = ds.values[j][obs]
                task = CLASSIFICATION if ct.is_categorical else REGRESSION
                forest = fit_forest(X[obs], y_obs, task, fs,
                                    replace(base_forest, seed=_rng_seed(rng)),
                                    n_classes=ct.n_levels)
                work[j][~obs] = _leaf_donor_draw(forest, X[~obs], y_obs, rng)
        comps.append(_completion(ds, work))
    return MultipleImputation(comps, MICE_RF, spec, seed, trace,
                              time.perf_counter() - t0)


# --- chained random forests (with or without donor matching) -------------------


def _normalized_oob(forest, y_obs: np.ndarray, task: str) -> float:
    err = forest.oob_error
    if np.isnan(err):
        return 0.0
    if task == REGRESSION:
        var = float(np.var(y_obs))
        return err / var if var > 0 else 0.0
    return err


def impute_missranger(ds: Dataset, spec: ImputerSpec, seed: int,
                      use_pmm: bool | None = None) -> MultipleImputation:
    """Iterative forests sweeping until the mean OOB error stops improving.

    Each of the m runs is an independent imputation with its own seed. When
    the error worsens, the previous sweep's values are kept (so the returned
    data always comes from the best sweep). With ``use_pmm`` the forest
    predictions are donor-matched back to observed values; without it raw
    forest predictions are imputed directly.
    """
    if use_pmm is None:
        use_pmm = spec.method == MISS_RANGER_PMM
    method = MISS_RANGER_PMM if use_pmm else MISS_RANGER
    t0 = time.perf_counter()
    trace: list[tuple[int, int, str]] = []
    visit = visit_order(ds)
    fsets = _feature_sets(ds)
    base_forest = spec.forest or RANGER_FOREST
    max_sweeps = spec.resolved_iters
    comps = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(spec.m)):
        rng = np.random.default_rng(child)
        work = initialize(ds, rng)
        snapshot = [w.copy() for w in work]
        prev_err = np.inf
        for t in range(max_sweeps):
            errs = []
            for j in visit:
                name, ct = ds.columns[j]
                trace.append((i, t, name))
                obs = ~ds.mask[:, j]
                others, fs = fsets[j]
                X = _predictor_matrix(work, others)
                y_obs = ds.values[j][obs]
                task = CLASSIFICATION if ct.is_categorical else REGRESSION
                forest = fit_forest(X[obs], y_obs, task, fs,
                                    replace(base_forest, seed=_rng_seed(rng)),
                                    n_classes=ct.n_levels)
                pred_mis = predict_forest(forest, X[~obs])
                if use_pmm:
                    pred_obs = predict_forest(forest, X[obs])
                    imputed = pmm_match(pred_mis.astype(np.float64),
                                        pred_obs.astype(np.float64),
                                        y_obs, spec.k, rng)
                else:
                    imputed = pred_mis
                work[j][~obs] = imputed
                errs.append(_normalized_oob(forest, y_obs, task))
            mean_err = float(np.mean(errs)) if errs else 0.0
            if mean_err >= prev_err:
                work = snapshot  # error stopped improving: keep the best sweep
                break
            prev_err = mean_err
            snapshot = [w.copy() for w in work]
        comps.append(_completion(ds, work))
    return MultipleImputation(comps, method, spec, seed, trace,
                              time.perf_counter() - t0)


# --- boosted-tree imputation ----------------------------------------------------


def _class_bootstrap(obs_idx: np.ndarray, y_obs: np.ndarray, is_cat: bool,
                     n_levels: int, rng: np.random.Generator) -> np.ndarray:
    """Bootstrap of observed rows; for categorical targets redraw (then fall
    back to the full observed set) until every observed class is present."""
    observed_classes = np.unique(y_obs) if is_cat else None
    for _ in range(10):
        boot = rng.integers(0, obs_idx.shape[0], size=obs_idx.shape[0])
        if not is_cat:
            return boot
        if np.isin(observed_classes, y_obs[boot]).all():
            return boot
    return np.arange(obs_idx.shape[0])


def impute_mixgb(ds: Dataset, spec: ImputerSpec, seed: int) -> MultipleImputation:
    """Boosted-tree imputation: one pass per variable by default, fitting on a
    bootstrap of the observed rows; numeric targets are donor-matched on the
    bootstrap model's predictions, categorical targets take the predicted
    class directly."""
    t0 = time.perf_counter()
    trace: list[tuple[int, int, str]] = []
    visit = visit_order(ds)
    fsets = _feature_sets(ds)
    base_gbm = spec.gbm or MIXGB_GBM
    comps = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(spec.m)):
        rng = np.random.default_rng(child)
        work = initialize(ds, rng)
        for t in range(spec.resolved_iters):
            for j in visit:
                name, ct = ds.columns[j]
                trace.append((i, t, name))
                obs = ~ds.mask[:, j]
                others, fs = fsets[j]
                X = _predictor_matrix(work, others)
                obs_idx = np.nonzero(obs)[0]
                y_obs = ds.values[j][obs]
                boot = _class_bootstrap(obs_idx, y_obs, ct.is_categorical,
                                        ct.n_levels, rng)
                task = CLASSIFICATION if ct.is_categorical else REGRESSION
                gbm = fit_gbm(X[obs_idx[boot]], y_obs[boot], task, fs,
                              replace(base_gbm, seed=_rng_seed(rng)),
                              n_classes=ct.n_levels)
                if ct.is_categorical:
                    work[j][~obs] = predict_gbm(gbm, X[~obs])
                else:
                    pred_mis = predict_gbm_margin(gbm, X[~obs])
                    pred_obs = predict_gbm_margin(gbm, X[obs])
                    work[j][~obs] = pmm_match(pred_mis, pred_obs, y_obs,
                                              spec.k, rng)
        comps.append(_completion(ds, work))
    return MultipleImputation(comps, MIXGB, spec, seed, trace,
                              time.perf_counter() - t0)


_ENGINES = {
    MICE_PMM: impute_mice_pmm,
    MICE_RF: impute_mice_rf,
    MISS_RANGER: impute_missranger,
    MISS_RANGER_PMM: impute_missranger,
    MIXGB: impute_mixgb,
}


def impute(ds: Dataset, spec: ImputerSpec, seed: int) -> MultipleImputation:
    """Dispatch to the engine named by ``spec.method``."""
    return _ENGINES[spec.method](ds, spec, seed)
