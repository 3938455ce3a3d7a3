"""Monte Carlo study orchestration: replication pipeline, seed management,
failure-and-resample protocol, aggregation, and report files."""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .amputation import AmputeConfig, ampute_mar
from .analyze import ListwiseFit, RankDeficientError, listwise_fit, ols_fit, rubin_pool
from .impute import METHODS, ImputerSpec, impute
from .metrics import PanelReport, PanelStats, bias_panels, ipm_multiple, rejection_panels
from .presets import (OUTCOME, STUDY_PREDICTORS, STUDY_REFS,
                      default_endogenous, default_marginals, default_outcome,
                      study_design, study_terms)
from .synthgen import PanelConfig, generate_panel

DESK_SEEDS = (271828, 577215, 141421)

_GEN, _AMP, _IMP = 0, 1, 2


@dataclass(frozen=True)
class SimPlan:
    n_individuals: int = 300
    n_waves: int = 5
    replications: int = 150
    r_max: int = 180
    rates: tuple[float, ...] = (0.10, 0.30, 0.50)
    methods: tuple[str, ...] = METHODS
    m: int = 5
    k: int = 5
    alpha: float = 0.05
    base_seed: int = DESK_SEEDS[0]
    anchor: str = "education"
    ampute_exclude: tuple[str, ...] = ("wave",)
    rare_floor: float = 0.02
    bias_kind: str = "abs_mean_error"

    def validate(self) -> None:
        if self.replications > self.r_max:
            raise ValueError("replications must be <= r_max")
        if not self.methods:
            raise ValueError("methods must be non-empty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}")
        if any(not (0.0 < r < 1.0) for r in self.rates):
            raise ValueError("rates must lie in (0, 1)")
        if self.n_individuals < 1 or self.m < 1:
            raise ValueError("n_individuals and m must be >= 1")


def desk_plan(base_seed: int = DESK_SEEDS[0], **overrides) -> SimPlan:
    """Desk-scale default plan (sized for the acceptance suite)."""
    return SimPlan(base_seed=base_seed, **overrides)


def paper_plan(base_seed: int = DESK_SEEDS[0], **overrides) -> SimPlan:
    """Full-scale plan preset."""
    kw = dict(n_individuals=2482, replications=1000, r_max=1200, m=10)
    kw.update(overrides)
    return SimPlan(base_seed=base_seed, **kw)


def _stage_seed(plan: SimPlan, index: int, *tag: int) -> int:
    ss = np.random.SeedSequence(entropy=plan.base_seed, spawn_key=(index, *tag))
    return int(ss.generate_state(1)[0])


@dataclass
class CellResult:
    status: str = "ok"
    reason: str = ""
    qbar: np.ndarray | None = None
    reject: np.ndarray | None = None
    p: np.ndarray | None = None
    ipm: float | None = None
    seconds: float | None = None


@dataclass
class ReplicationRecord:
    index: int
    status: str = "ok"
    reason: str = ""
    complete_beta: np.ndarray | None = None
    complete_reject: np.ndarray | None = None
    listwise: dict = field(default_factory=dict)   # rate -> ListwiseFit summary
    cells: dict = field(default_factory=dict)      # (rate, method) -> CellResult

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _coverage_failure(ds) -> str | None:
    for c, (name, ct) in enumerate(ds.columns):
        if not ct.is_categorical:
            continue
        present = np.unique(ds.values[c][~ds.mask[:, c]])
        for code in range(ct.n_levels):
            if code not in present:
                return f"missing level: {name}={ct.levels[code]}"
    return None


def run_replication(plan: SimPlan, index: int) -> ReplicationRecord:
    """One replication: generate, validate coverage, fit complete data, then
    per rate ampute / listwise / impute / pool / score. Engine errors mark
    their (rate, method) cell failed without aborting the replication."""
    rec = ReplicationRecord(index=index)
    cfg = PanelConfig(n_individuals=plan.n_individuals, n_waves=plan.n_waves,
                      seed=_stage_seed(plan, index, _GEN))
    ds = generate_panel(cfg, default_marginals(plan.rare_floor),
                        default_endogenous(), default_outcome())
    failure = _coverage_failure(ds)
    if failure:
        rec.status, rec.reason = "failed", failure
        return rec
    try:
        complete_fit = ols_fit(ds.col(OUTCOME), study_design(ds))
    except (RankDeficientError, ValueError) as e:
        rec.status, rec.reason = "failed", f"complete fit: {e}"
        return rec
    rec.complete_beta = complete_fit.beta
    rec.complete_reject = complete_fit.reject(plan.alpha)

    columns = tuple(n for n in ds.names if n not in plan.ampute_exclude)
    for ri, rate in enumerate(plan.rates):
        amp_cfg = AmputeConfig(nu=rate, anchor=plan.anchor, columns=columns,
                               seed=_stage_seed(plan, index, _AMP, ri))
        amputed, _ = ampute_mar(ds, amp_cfg)
        lw = listwise_fit(amputed, OUTCOME, refs=STUDY_REFS,
                          predictors=STUDY_PREDICTORS, alpha=plan.alpha)
        rec.listwise[rate] = {
            "skipped": lw.skipped,
            "n_complete": lw.n_complete,
            "reason": lw.reason,
            "beta": None if lw.result is None else lw.result.beta,
            "reject": None if lw.result is None else lw.result.reject(plan.alpha),
        }
        for mi, method in enumerate(plan.methods):
            cell = CellResult()
            spec = ImputerSpec(method=method, m=plan.m, k=plan.k)
            try:
                result = impute(amputed, spec,
                                seed=_stage_seed(plan, index, _IMP, ri, mi))
                fits = [ols_fit(comp.col(OUTCOME), study_design(comp))
                        for comp in result.completions]
                pooled = rubin_pool(fits, alpha=plan.alpha)
                cell.qbar = pooled.qbar
                cell.reject = pooled.reject
                cell.p = pooled.p
                cell.ipm = ipm_multiple(ds, result.completions, amputed.mask)
                cell.seconds = result.seconds
            except Exception as e:  # noqa: BLE001 - cell-level failure contract
                cell.status, cell.reason = "failed", f"{type(e).__name__}: {e}"
                rec.status = "failed"
                rec.reason = f"{method}@{rate}: {cell.reason}"
            rec.cells[(rate, method)] = cell
    return rec


# --- aggregation ----------------------------------------------------------------


def _panel_dict(report: PanelReport) -> dict:
    return {name: {"mean": st.mean, "median": st.median, "sd": st.sd}
            for name, st in report.panels.items()}


@dataclass
class StudyReport:
    plan: SimPlan
    terms: list[str]
    truth: np.ndarray
    selected: list[int]
    n_failed: int
    failures: list[tuple[int, str]]
    incomplete: bool
    baselines: dict
    cells: dict
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "plan": asdict(self.plan),
            "terms": self.terms,
            "truth": self.truth.tolist(),
            "selected": self.selected,
            "n_failed": self.n_failed,
            "failures": [[i, r] for i, r in self.failures],
            "incomplete": self.incomplete,
            "baselines": self.baselines,
            "cells": {f"{method}@{rate}": payload
                      for (rate, method), payload in self.cells.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "StudyReport":
        plan_kw = dict(doc["plan"])
        for key in ("rates", "methods", "ampute_exclude"):
            plan_kw[key] = tuple(plan_kw[key])
        cells = {}
        for key, payload in doc["cells"].items():
            method, rate = key.rsplit("@", 1)
            cells[(float(rate), method)] = payload
        return cls(plan=SimPlan(**plan_kw), terms=list(doc["terms"]),
                   truth=np.asarray(doc["truth"]), selected=list(doc["selected"]),
                   n_failed=int(doc["n_failed"]),
                   failures=[(int(i), r) for i, r in doc["failures"]],
                   incomplete=bool(doc["incomplete"]),
                   baselines=doc["baselines"], cells=cells,
                   version=doc.get("version", ""))


def _aggregate(plan: SimPlan, records: list[ReplicationRecord],
               incomplete: bool, failures: list[tuple[int, str]]) -> StudyReport:
    labels, truth, membership = study_terms(plan.n_waves)
    selected = [r.index for r in records]

    def panels(estimates, decisions):
        b = bias_panels(np.stack(estimates), truth, membership, labels,
                        kind=plan.bias_kind)
        d = rejection_panels(np.stack(decisions), membership, labels)
        return {
            "bias": _panel_dict(b),
            "rejection": _panel_dict(d),
            "bias_per_term": b.per_term.tolist(),
            "rejection_per_term": d.per_term.tolist(),
        }

    baselines = {"complete": panels([r.complete_beta for r in records],
                                    [r.complete_reject for r in records])}
    listwise = {}
    for rate in plan.rates:
        used = [r for r in records
                if rate in r.listwise and not r.listwise[rate]["skipped"]]
        entry = {"n_used": len(used),
                 "n_skipped": len(records) - len(used)}
        if used:
            entry.update(panels([r.listwise[rate]["beta"] for r in used],
                                [r.listwise[rate]["reject"] for r in used]))
        listwise[str(rate)] = entry
    baselines["listwise"] = listwise

    cells = {}
    for rate in plan.rates:
        for method in plan.methods:
            cr = [r.cells[(rate, method)] for r in records]
            payload = panels([c.qbar for c in cr], [c.reject for c in cr])
            ipms = np.array([c.ipm for c in cr])
            secs = np.array([c.seconds for c in cr])
            payload["ipm_mean"] = float(ipms.mean())
            payload["ipm_median"] = float(np.median(ipms))
            payload["seconds_mean"] = float(secs.mean())
            payload["seconds_median"] = float(np.median(secs))
            payload["seconds_total"] = float(secs.sum())
            cells[(rate, method)] = payload
    return StudyReport(plan=plan, terms=labels, truth=truth, selected=selected,
                       n_failed=len(failures), failures=failures,
                       incomplete=incomplete, baselines=baselines, cells=cells)


def run_plan(plan: SimPlan, workers: int = 1, progress=None) -> StudyReport:
    """Run replications 1..r_max, keep the first `replications` that worked
    (by replication index, independent of completion order), and aggregate."""
    plan.validate()
    needed = plan.replications
    records: list[ReplicationRecord] = []
    failures: list[tuple[int, str]] = []

    def consume(rec: ReplicationRecord) -> bool:
        if rec.ok:
            records.append(rec)
        else:
            failures.append((rec.index, rec.reason))
        if progress:
            progress(rec)
        return len(records) >= needed

    if workers <= 1:
        for index in range(1, plan.r_max + 1):
            if consume(run_replication(plan, index)):
                break
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {i: pool.submit(run_replication, plan, i)
                       for i in range(1, plan.r_max + 1)}
            done = False
            for i in range(1, plan.r_max + 1):
                if done:
                    futures[i].cancel()
                    continue
                done = consume(futures[i].result())

    incomplete = len(records) < needed
    return _aggregate(plan, records[:needed], incomplete, failures)


# --- report files -----------------------------------------------------------------


def emit_report(study: StudyReport, outdir) -> dict[str, Path]:
    """Write panel CSVs, per-coefficient CSVs, the IPM/timing CSV, the machine
    readable study JSON, and the run manifest."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}

    def rows_for(kind):
        rows = []
        comp = study.baselines["complete"]
        for panel, st in comp[kind].items():
            for stat, val in st.items():
                rows.append(("complete", "", panel, stat, val))
        for rate_str, entry in study.baselines["listwise"].items():
            if kind in entry:
                for panel, st in entry[kind].items():
                    for stat, val in st.items():
                        rows.append(("listwise", rate_str, panel, stat, val))
        for (rate, method), payload in study.cells.items():
            for panel, st in payload[kind].items():
                for stat, val in st.items():
                    rows.append((method, str(rate), panel, stat, val))
        return rows

    for kind, fname in (("bias", "bias_panels.csv"),
                        ("rejection", "rejection_panels.csv")):
        path = outdir / fname
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "rate", "panel", "statistic", "value"])
            w.writerows(rows_for(kind))
        paths[fname] = path

    path = outdir / "coefficients.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["term", "true_coefficient", "method", "rate",
                    "bias", "rejection_rate"])
        comp = study.baselines["complete"]
        for j, term in enumerate(study.terms):
            w.writerow([term, study.truth[j], "complete", "",
                        comp["bias_per_term"][j], comp["rejection_per_term"][j]])
        for (rate, method), payload in study.cells.items():
            for j, term in enumerate(study.terms):
                w.writerow([term, study.truth[j], method, rate,
                            payload["bias_per_term"][j],
                            payload["rejection_per_term"][j]])
    paths["coefficients.csv"] = path

    path = outdir / "ipm_timing.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "rate", "ipm_mean", "ipm_median",
                    "seconds_mean", "seconds_median", "seconds_total"])
        for (rate, method), payload in study.cells.items():
            w.writerow([method, rate, payload["ipm_mean"], payload["ipm_median"],
                        payload["seconds_mean"], payload["seconds_median"],
                        payload["seconds_total"]])
    paths["ipm_timing.csv"] = path

    path = outdir / "study.json"
    path.write_text(json.dumps(study.to_dict(), indent=1))
    paths["study.json"] = path

    manifest = {
        "version": study.version,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "plan": asdict(study.plan),
        "selected_replications": study.selected,
        "n_failed": study.n_failed,
        "incomplete": study.incomplete,
    }
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    paths["manifest.json"] = path
    return paths
