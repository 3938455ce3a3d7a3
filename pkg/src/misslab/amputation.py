"""MCAR and MAR amputation of complete datasets.

The MAR mechanism follows a two-stage scheme: one anchor column is amputed
completely at random, then every other targeted column receives missingness
whose probability depends only on the observed anchor value. Group weights
pair the sorted-descending unique anchor values with sorted-ascending iid
Uniform(0,1) draws, so higher anchor values always carry lower missingness
probabilities.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .tabular import Dataset


@dataclass(frozen=True)
class AmputeConfig:
    nu: float
    anchor: str = "education"
    columns: tuple[str, ...] | None = None  # None = every column
    seed: int = 0
    count_budget: bool = True  # False: per-group rate reading of nu*pi


@dataclass
class GroupRecord:
    """One anchor-value group of one amputed column."""

    eta: float       # anchor value
    zeta: int        # group size among observed-anchor rows
    tau: float       # assigned sorted-uniform weight
    pi: float        # normalized selection probability
    selected: int    # rows actually amputed in this group


@dataclass
class AmputeReport:
    nu: float
    anchor: str | None
    mechanism: str                      # "mcar" or "mar"
    column_rates: dict[str, float]
    overall_rate: float
    groups: dict[str, list[GroupRecord]] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)


def _check_targets(ds: Dataset, columns) -> list[str]:
    names = list(columns) if columns is not None else list(ds.names)
    for name in names:
        c = ds.col_index(name)
        if ds.mask[:, c].any():
            raise ValueError(f"column {name!r} already contains missing cells")
    return names


def ampute_mcar(ds: Dataset, nu: float, columns=None, seed: int = 0):
    """Set exactly round(nu * n_rows) uniformly chosen cells missing per column."""
    if not (0.0 <= nu < 1.0):
        raise ValueError("nu must be in [0, 1)")
    names = _check_targets(ds, columns)
    out = ds.copy()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = ds.n_rows
    k = int(round(nu * n))
    notes = []
    if nu > 0.0 and k < 1:
        warnings.warn("nu * n_rows < 1; no cells amputed")
        notes.append("nu * n_rows < 1; no cells amputed")
    rates = {}
    for name in names:
        c = out.col_index(name)
        rows = rng.permutation(n)[:k]
        out.set_missing(rows, c)
        rates[name] = k / n
    overall = out.mask.sum() / (n * out.n_cols)
    return out, AmputeReport(nu=nu, anchor=None, mechanism="mcar",
                             column_rates=rates, overall_rate=float(overall),
                             notes=notes)


def _waterfill_counts(pi: np.ndarray, sizes: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation close to total*pi, capped by group sizes, exact sum.

    Continuous waterfilling first (cap saturated groups, redistribute their
    overflow proportionally to the remaining groups), then largest-remainder
    integerization within spare capacity. The sum equals min(total, sum(sizes)).
    """
    m = len(pi)
    sizes = sizes.astype(np.int64)
    target = int(min(total, int(sizes.sum())))
    cont = np.zeros(m)
    active = np.ones(m, dtype=bool)
    rem = float(target)
    while rem > 1e-12 and active.any():
        w = pi[active].sum()
        if w <= 0.0:
            break
        add = np.zeros(m)
        add[active] = rem * pi[active] / w
        cand = cont + add
        over = active & (cand > sizes + 1e-12)
        if not over.any():
            cont = cand
            rem = 0.0
            break
        rem = float(np.sum(cand[over] - sizes[over]))
        cont = np.where(over, sizes.astype(float), cand)
        active &= ~over
    base = np.minimum(np.floor(cont + 1e-9).astype(np.int64), sizes)
    short = target - int(base.sum())
    if short > 0:
        frac = cont - base
        for g in np.lexsort((-pi, -frac)):
            if short == 0:
                break
            take = min(sizes[g] - base[g], short)
            if take > 0:
                base[g] += take
                short -= take
    elif short < 0:
        frac = cont - np.floor(cont + 1e-9)
        for g in np.lexsort((pi, frac)):
            if short == 0:
                break
            if base[g] > 0:
                base[g] -= 1
                short += 1
    return base


def expected_group_rates(tau: np.ndarray, zeta: np.ndarray, total: int) -> np.ndarray:
    """Capacity-capped law rate_l = min(1, c * tau_l) with c solved for the budget."""
    pi = tau * zeta
    pi = pi / pi.sum()
    cont = np.zeros(len(pi))
    active = np.ones(len(pi), dtype=bool)
    rem = float(min(total, int(zeta.sum())))
    while rem > 1e-12 and active.any():
        w = pi[active].sum()
        if w <= 0.0:
            break
        add = np.zeros(len(pi))
        add[active] = rem * pi[active] / w
        cand = cont + add
        over = active & (cand > zeta + 1e-12)
        if not over.any():
            cont = cand
            break
        rem = float(np.sum(cand[over] - zeta[over]))
        cont = np.where(over, zeta.astype(float), cand)
        active &= ~over
    return cont / zeta


def ampute_mar(ds: Dataset, cfg: AmputeConfig):
    """Anchor MCAR at rate nu, then anchor-dependent missingness everywhere else."""
    if not (0.0 < cfg.nu < 1.0):
        raise ValueError("nu must be in (0, 1)")
    names = _check_targets(ds, cfg.columns)
    if cfg.anchor not in names:
        raise ValueError(f"anchor {cfg.anchor!r} is not among the amputed columns")
    out = ds.copy()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    n = ds.n_rows
    total = int(round(cfg.nu * n))
    notes: list[str] = []

    anchor_idx = out.col_index(cfg.anchor)
    anchor_vals = ds.col(cfg.anchor).astype(np.float64)
    mcar_rows = rng.permutation(n)[:total]
    out.set_missing(mcar_rows, anchor_idx)
    rates = {cfg.anchor: total / n}

    observed = ~out.mask[:, anchor_idx]
    obs_vals = anchor_vals[observed]
    obs_rows = np.nonzero(observed)[0]
    uniq = np.unique(obs_vals)
    if uniq.size <= 1:
        warnings.warn("anchor has a single unique value; degenerating to MCAR")
        notes.append("anchor degenerate; remaining columns amputed MCAR")
        for name in names:
            if name == cfg.anchor:
                continue
            c = out.col_index(name)
            out.set_missing(rng.permutation(n)[:total], c)
            rates[name] = total / n
        overall = out.mask.sum() / (n * out.n_cols)
        return out, AmputeReport(nu=cfg.nu, anchor=cfg.anchor, mechanism="mar",
                                 column_rates=rates, overall_rate=float(overall),
                                 notes=notes)

    eta = np.sort(uniq)[::-1]                       # descending anchor values
    zeta = np.array([(obs_vals == e).sum() for e in eta], dtype=np.int64)
    group_rows = [obs_rows[obs_vals == e] for e in eta]
    capacity = int(zeta.sum())
    if total > capacity:
        warnings.warn(f"budget {total} exceeds observed-anchor capacity {capacity}")
        notes.append(f"budget capped at anchor-observed capacity {capacity}")

    groups: dict[str, list[GroupRecord]] = {}
    for name in names:
        if name == cfg.anchor:
            continue
        c = out.col_index(name)
        tau = np.sort(rng.uniform(size=eta.size))    # ascending; pairs with eta desc
        pi = tau * zeta
        pi = pi / pi.sum()
        assert abs(pi.sum() - 1.0) < 1e-9
        if cfg.count_budget:
            counts = _waterfill_counts(pi, zeta, total)
        else:
            counts = np.minimum(np.round(np.clip(cfg.nu * pi, 0, 1) * zeta), zeta)
            counts = counts.astype(np.int64)
        recs = []
        for g in range(eta.size):
            take = int(counts[g])
            if take > 0:
                chosen = rng.choice(group_rows[g], size=take, replace=False)
                out.set_missing(chosen, c)
            recs.append(GroupRecord(eta=float(eta[g]), zeta=int(zeta[g]),
                                    tau=float(tau[g]), pi=float(pi[g]),
                                    selected=take))
        groups[name] = recs
        rates[name] = float(counts.sum()) / n
    overall = out.mask.sum() / (n * out.n_cols)
    return out, AmputeReport(nu=cfg.nu, anchor=cfg.anchor, mechanism="mar",
                             column_rates=rates, overall_rate=float(overall),
                             groups=groups, notes=notes)


@dataclass
class ColumnDiagnostic:
    column: str
    empirical: np.ndarray      # per-group missing rates, eta descending
    expected: np.ndarray       # capacity-capped waterfilling law
    max_deviation: float
    monotone_ok: bool          # non-increasing in eta, up to 1-cell slack


@dataclass
class MarDiagnostic:
    applicable: bool
    columns: dict[str, ColumnDiagnostic] = field(default_factory=dict)
    independence_p: dict[str, float] = field(default_factory=dict)

    @property
    def max_deviation(self) -> float:
        if not self.columns:
            return 0.0
        return max(d.max_deviation for d in self.columns.values())

    @property
    def monotone_ok(self) -> bool:
        return all(d.monotone_ok for d in self.columns.values())


def mar_diagnostic(ds_amputed: Dataset, report: AmputeReport) -> MarDiagnostic:
    """Check per-group missing rates against the tau-proportional law.

    For MCAR reports the monotonicity check is not applicable; instead a
    chi-square independence p-value of missingness against anchor groups is
    reported per column (or against value quartiles when no anchor exists).
    """
    if report.mechanism == "mcar" or not report.groups:
        diag = MarDiagnostic(applicable=False)
        for name, rate in report.column_rates.items():
            c = ds_amputed.col_index(name)
            miss = ds_amputed.mask[:, c]
            vals = ds_amputed.col(name)
            # independence of missingness from the column's own observed values
            # is untestable; use row position quartiles as an MCAR smoke check
            q = np.minimum(np.arange(ds_amputed.n_rows) * 4 // ds_amputed.n_rows, 3)
            table = np.zeros((4, 2))
            for b in range(4):
                sel = q == b
                table[b, 0] = np.sum(miss[sel])
                table[b, 1] = np.sum(~miss[sel])
            if (table.sum(axis=1) > 0).all() and miss.any() and (~miss).any():
                diag.independence_p[name] = float(
                    stats.chi2_contingency(table)[1])
        return diag

    anchor_idx = ds_amputed.col_index(report.anchor)
    anchor_obs = ~ds_amputed.mask[:, anchor_idx]
    anchor_vals = ds_amputed.col(report.anchor).astype(np.float64)
    diag = MarDiagnostic(applicable=True)
    total = None
    for name, recs in report.groups.items():
        c = ds_amputed.col_index(name)
        eta = np.array([r.eta for r in recs])
        zeta = np.array([r.zeta for r in recs], dtype=np.int64)
        tau = np.array([r.tau for r in recs])
        total = sum(r.selected for r in recs)
        emp = np.empty(eta.size)
        for g, e in enumerate(eta):
            members = anchor_obs & (anchor_vals == e)
            emp[g] = ds_amputed.mask[members, c].mean()
        exp = expected_group_rates(tau, zeta, total)
        dev = float(np.max(np.abs(emp - exp)))
        # eta is stored descending, so rates must be non-decreasing along
        # the record order (equivalently non-increasing in eta)
        slack = 1.0 / zeta[:-1] + 1.0 / zeta[1:]
        monotone = bool(np.all(np.diff(emp) >= -slack))
        diag.columns[name] = ColumnDiagnostic(column=name, empirical=emp,
                                              expected=exp, max_deviation=dev,
                                              monotone_ok=monotone)
    return diag
