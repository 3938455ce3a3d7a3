"""Synthetic longitudinal panel generator.

Builds a long-format panel (one row per individual and wave) from four rule
families: constant independent draws, time-varying independent processes,
endogenous variables predicted by shipped tree/forest models with stochastic
leaf draws, and a fixed linear outcome equation with Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sstats

from .tabular import ColumnType, Dataset, dummy_encode, ordinal
from .trees import ForestModel, TreeModel, forest_class_probs

WAVE_COLUMN = "wave"


@dataclass(frozen=True)
class PanelConfig:
    n_individuals: int
    n_waves: int = 5
    first_wave: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n_individuals < 1:
            raise ValueError("n_individuals must be >= 1")
        if self.n_waves < 2:
            raise ValueError("n_waves must be >= 2")


# --- marginal rule families -------------------------------------------------


@dataclass(frozen=True)
class CategoricalDraw:
    """Constant categorical variable sampled with replacement."""

    probs: tuple[float, ...]


@dataclass(frozen=True)
class DiscreteMetricDraw:
    """Constant metric variable over a finite support."""

    values: tuple[float, ...]
    probs: tuple[float, ...]


@dataclass(frozen=True)
class TruncNormalAge:
    """Wave-1 truncated normal (rounded to years), +1 per subsequent wave."""

    mean: float
    sd: float
    low: float
    high: float


@dataclass(frozen=True)
class ExponentialPerWave:
    """Per-wave exponential draws, shifted, rounded, and clamped."""

    means: tuple[float, ...]
    shift: float = 1.0
    clamp: tuple[float, float] = (1.0, 200.0)


@dataclass(frozen=True)
class BernoulliPerWave:
    probs: tuple[float, ...]


@dataclass(frozen=True)
class ForwardChain:
    """Ordered-state chain: each wave, move one state forward with step_prob."""

    initial: tuple[float, ...]
    step_prob: float = 0.05


@dataclass(frozen=True)
class ExitChain:
    """Binary state with per-wave exit probability from level 1 to level 0."""

    initial_yes: float
    exit_prob: float = 0.30


@dataclass
class MarginalSpec:
    """Output schema plus one generation rule per independent variable."""

    columns: list[tuple[str, ColumnType]]
    rules: dict[str, object]

    def validate(self) -> None:
        names = {n for n, _ in self.columns}
        for var, rule in self.rules.items():
            if var not in names:
                raise ValueError(f"rule for unknown column {var!r}")
            ct = dict(self.columns)[var]
            if isinstance(rule, (CategoricalDraw, ForwardChain)):
                probs = np.asarray(rule.initial if isinstance(rule, ForwardChain)
                                   else rule.probs)
                if len(probs) != ct.n_levels:
                    raise ValueError(f"{var!r}: {len(probs)} probs for "
                                     f"{ct.n_levels} levels")
                if abs(probs.sum() - 1.0) > 1e-9 or (probs < 0).any():
                    raise ValueError(f"{var!r}: probabilities must form a simplex")
            if isinstance(rule, DiscreteMetricDraw):
                probs = np.asarray(rule.probs)
                if abs(probs.sum() - 1.0) > 1e-9 or (probs < 0).any():
                    raise ValueError(f"{var!r}: probabilities must form a simplex")
            if isinstance(rule, TruncNormalAge) and not rule.low < rule.high:
                raise ValueError(f"{var!r}: truncation bounds must satisfy low < high")
            if isinstance(rule, ExponentialPerWave) and any(m <= 0 for m in rule.means):
                raise ValueError(f"{var!r}: exponential means must be positive")


# --- endogenous rules --------------------------------------------------------


@dataclass
class EndogenousRule:
    """A shipped model plus the post-processing that turns draws into a column.

    kinds: constant_class (stochastic class draw, repeated over waves),
    constant_metric (leaf mean + leaf-sd Gaussian, repeated), metric_increment
    (wave-1 draw plus Uniform(low, high) per wave), count_ageout (wave-1 count
    draw, then per-wave Bernoulli decrement).
    """

    model: TreeModel | ForestModel
    predictors: list[str]
    kind: str
    clamp: tuple[float, float] | None = None
    increment: tuple[float, float] = (0.0, 1.0)
    ageout_prob: float = 0.20


@dataclass
class EndogenousModelSpec:
    rules: dict[str, EndogenousRule]

    def validate(self, available_before: dict[str, list[str]]) -> None:
        for var, rule in self.rules.items():
            missing = [p for p in rule.predictors
                       if p not in available_before.get(var, [])]
            if missing:
                raise ValueError(f"{var!r} depends on not-yet-generated {missing}")


@dataclass
class OutcomeModel:
    """Fixed linear outcome: named dummy-term coefficients plus Gaussian noise."""

    name: str
    variables: list[str]
    refs: dict[str, str]
    coefficients: dict[str, float]
    noise_mean: float = 0.0
    noise_sd: float = float(np.sqrt(0.5))

    def __post_init__(self):
        if self.noise_sd <= 0.0:
            raise ValueError("noise_sd must be positive")


def outcome_design(ds: Dataset, model: OutcomeModel):
    """Design restricted to the outcome equation's own terms (plus intercept)."""
    full = dummy_encode(ds, refs=model.refs, intercept=True,
                        columns=model.variables)
    unresolved = [t for t in model.coefficients if t not in full.column_labels]
    if unresolved:
        raise ValueError(f"outcome terms not in the design: {unresolved}")
    keep = [j for j, lbl in enumerate(full.column_labels)
            if lbl in model.coefficients]
    full.values = full.values[:, keep]
    full.column_labels = [full.column_labels[j] for j in keep]
    return full


def gen_outcome(ds: Dataset, model: OutcomeModel, rng: np.random.Generator) -> np.ndarray:
    """Evaluate the outcome equation rowwise and add Gaussian noise."""
    dm = outcome_design(ds, model)
    beta = np.array([model.coefficients[lbl] for lbl in dm.column_labels])
    noise = rng.normal(model.noise_mean, model.noise_sd, size=ds.n_rows)
    return dm.values @ beta + noise


# --- generation ---------------------------------------------------------------


def _rule_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(index,)))


def _draw_codes(rng, probs: np.ndarray, n: int) -> np.ndarray:
    u = rng.random(n)
    cum = np.cumsum(probs)
    return np.searchsorted(cum, u, side="right").astype(np.int64).clip(0, len(probs) - 1)


def _rows_matrix(cols: dict[str, np.ndarray], predictors, rows=slice(None)) -> np.ndarray:
    return np.column_stack([np.asarray(cols[p][rows], dtype=np.float64)
                            for p in predictors])


def _class_probs(model, X: np.ndarray) -> np.ndarray:
    if isinstance(model, ForestModel):
        return forest_class_probs(model, X)
    counts = model.leaf_counts[model.route(X)]
    return counts / counts.sum(axis=1, keepdims=True)


def _leaf_gauss(model: TreeModel, X: np.ndarray, rng) -> np.ndarray:
    leaves = model.route(X)
    return model.value[leaves] + model.leaf_sd[leaves] * rng.standard_normal(len(X))


def generate_panel(cfg: PanelConfig, marg: MarginalSpec,
                   endo: EndogenousModelSpec, out: OutcomeModel) -> Dataset:
    """Generate the long-format panel dataset.

    Row order is individual-major: all waves of individual 0, then 1, ...
    Constant variables repeat across an individual's waves; wave-1 endogenous
    draws use wave-1 values of their predictors.
    """
    marg.validate()
    n, W = cfg.n_individuals, cfg.n_waves
    rows = n * W
    ids = np.repeat(np.arange(n, dtype=np.int64), W)
    wave_codes = np.tile(np.arange(W, dtype=np.int64), n)
    waves = wave_codes + cfg.first_wave

    cols: dict[str, np.ndarray] = {
        WAVE_COLUMN: wave_codes,
    }
    order: list[str] = [WAVE_COLUMN]
    coltypes: dict[str, ColumnType] = {
        WAVE_COLUMN: ordinal([str(cfg.first_wave + w) for w in range(W)]),
    }
    for name, ct in marg.columns:
        coltypes[name] = ct

    stream = 0
    wave1 = wave_codes == 0

    for name, rule in marg.rules.items():
        rng = _rule_rng(cfg.seed, stream)
        stream += 1
        ct = coltypes[name]
        if isinstance(rule, CategoricalDraw):
            vals = np.repeat(_draw_codes(rng, np.asarray(rule.probs), n), W)
        elif isinstance(rule, DiscreteMetricDraw):
            support = np.asarray(rule.values, dtype=np.float64)
            vals = np.repeat(support[_draw_codes(rng, np.asarray(rule.probs), n)], W)
        elif isinstance(rule, TruncNormalAge):
            a = (rule.low - rule.mean) / rule.sd
            b = (rule.high - rule.mean) / rule.sd
            base = sstats.truncnorm.rvs(a, b, loc=rule.mean, scale=rule.sd,
                                        size=n, random_state=rng)
            vals = (np.round(np.repeat(base, W)) + wave_codes).astype(np.float64)
        elif isinstance(rule, ExponentialPerWave):
            draws = np.empty((n, W))
            for w in range(W):
                draws[:, w] = rng.exponential(rule.means[min(w, len(rule.means) - 1)],
                                              size=n)
            vals = np.round(draws + rule.shift).clip(*rule.clamp).reshape(-1)
        elif isinstance(rule, BernoulliPerWave):
            draws = np.empty((n, W), dtype=np.int64)
            for w in range(W):
                p = rule.probs[min(w, len(rule.probs) - 1)]
                draws[:, w] = rng.random(n) < p
            vals = draws.reshape(-1)
        elif isinstance(rule, ForwardChain):
            state = _draw_codes(rng, np.asarray(rule.initial), n)
            K = len(rule.initial)
            traj = np.empty((n, W), dtype=np.int64)
            traj[:, 0] = state
            for w in range(1, W):
                advance = (rng.random(n) < rule.step_prob) & (state < K - 1)
                state = state + advance
                traj[:, w] = state
            vals = traj.reshape(-1)
        elif isinstance(rule, ExitChain):
            state = (rng.random(n) < rule.initial_yes).astype(np.int64)
            traj = np.empty((n, W), dtype=np.int64)
            traj[:, 0] = state
            for w in range(1, W):
                exits = (rng.random(n) < rule.exit_prob) & (state == 1)
                state = state - exits
                traj[:, w] = state
            vals = traj.reshape(-1)
        else:
            raise TypeError(f"unknown rule type for {name!r}: {type(rule).__name__}")
        cols[name] = (vals.astype(np.int64) if ct.is_categorical
                      else vals.astype(np.float64))
        order.append(name)

    avail = {var: list(order) for var in endo.rules}  # order snapshot per variable
    seen: list[str] = list(order)
    for var in endo.rules:
        avail[var] = list(seen)
        seen.append(var)
    endo.validate(avail)

    for name, rule in endo.rules.items():
        rng = _rule_rng(cfg.seed, stream)
        stream += 1
        ct = coltypes[name]
        X1 = _rows_matrix(cols, rule.predictors, wave1)
        if rule.kind == "constant_class":
            probs = _class_probs(rule.model, X1)
            codes = (rng.random(n)[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
            vals = np.repeat(codes.astype(np.int64).clip(0, ct.n_levels - 1), W)
        elif rule.kind == "constant_metric":
            draw = _leaf_gauss(rule.model, X1, rng)
            if rule.clamp:
                draw = draw.clip(*rule.clamp)
            vals = np.repeat(draw, W)
        elif rule.kind == "metric_increment":
            base = _leaf_gauss(rule.model, X1, rng)
            if rule.clamp:
                base = base.clip(*rule.clamp)
            traj = np.empty((n, W))
            traj[:, 0] = base
            lo, hi = rule.increment
            for w in range(1, W):
                traj[:, w] = traj[:, w - 1] + rng.uniform(lo, hi, size=n)
            vals = traj.reshape(-1)
        elif rule.kind == "count_ageout":
            probs = _class_probs(rule.model, X1)
            count = (rng.random(n)[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
            count = count.astype(np.float64)
            traj = np.empty((n, W))
            traj[:, 0] = count
            for w in range(1, W):
                dec = (rng.random(n) < rule.ageout_prob) & (count > 0)
                count = count - dec
                traj[:, w] = count
            vals = traj.reshape(-1)
        else:
            raise ValueError(f"unknown endogenous kind {rule.kind!r}")
        cols[name] = (vals.astype(np.int64) if ct.is_categorical
                      else vals.astype(np.float64))
        order.append(name)

    columns = [(name, coltypes[name]) for name in order]
    values = [cols[name] for name in order]
    mask = np.zeros((rows, len(columns)), dtype=bool)
    ds = Dataset(columns, values, mask, ids=ids, waves=waves)

    rng = _rule_rng(cfg.seed, stream)
    y = gen_outcome(ds, out, rng)
    ds.columns.append((out.name, ColumnType("metric")))
    ds.values.append(y)
    ds.mask = np.zeros((rows, len(ds.columns)), dtype=bool)
    return Dataset(ds.columns, ds.values, ds.mask, ids=ids, waves=waves)


# --- marginal validation -------------------------------------------------------


@dataclass(frozen=True)
class CategoricalTarget:
    freqs: dict[str, float]
    tol_pp: float = 3.0


@dataclass(frozen=True)
class MetricTarget:
    mean: float
    sd: float
    rtol: float = 0.10


@dataclass
class MarginalCheck:
    variable: str
    statistic: str
    target: float
    achieved: float
    ok: bool


@dataclass
class MarginalReport:
    checks: list[MarginalCheck] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def failures(self) -> list[MarginalCheck]:
        return [c for c in self.checks if not c.ok]


def validate_marginals(ds: Dataset, targets: dict) -> MarginalReport:
    """Compare achieved marginals to targets: category frequencies within
    tol_pp percentage points, metric mean/sd within rtol relative error."""
    report = MarginalReport()
    for var, target in targets.items():
        c = ds.col_index(var)
        vals = ds.values[c][~ds.mask[:, c]]
        if isinstance(target, CategoricalTarget):
            ct = ds.columns[c][1]
            for level, share in target.freqs.items():
                code = ct.levels.index(level)
                achieved = float(np.mean(vals == code))
                ok = abs(achieved - share) <= target.tol_pp / 100.0
                report.checks.append(MarginalCheck(var, f"freq[{level}]",
                                                   share, achieved, ok))
        elif isinstance(target, MetricTarget):
            mean = float(np.mean(vals))
            sd = float(np.std(vals))
            ok_mean = abs(mean - target.mean) <= target.rtol * abs(target.mean)
            ok_sd = abs(sd - target.sd) <= target.rtol * abs(target.sd)
            report.checks.append(MarginalCheck(var, "mean", target.mean, mean, ok_mean))
            report.checks.append(MarginalCheck(var, "sd", target.sd, sd, ok_sd))
        else:
            raise TypeError(f"unknown target type for {var!r}")
    return report
