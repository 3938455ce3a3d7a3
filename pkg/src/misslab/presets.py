"""Shipped default configuration: variable schema, marginal rules, endogenous
models, the outcome equation, the study regression, and reference targets.

The defaults describe a German adult-panel-style survey: five waves in long
format, 21 mixed-type predictors, and a log-income outcome driven by a fixed
linear equation. Categories reported at or below 1% get a 2% floor so that
small generated samples still observe every level; the floor stays within the
marginal-validation tolerance.
"""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .tabular import ColumnType, Dataset, DesignMatrix, binary, dummy_encode, metric, nominal, ordinal, term_label
from .trees import FeatureSet, ForestModel, TreeModel
from .synthgen import (BernoulliPerWave, CategoricalDraw, DiscreteMetricDraw,
                       EndogenousModelSpec, EndogenousRule, ExitChain,
                       ExponentialPerWave, ForwardChain, MarginalSpec,
                       CategoricalTarget, MetricTarget, OutcomeModel,
                       TruncNormalAge, WAVE_COLUMN)

OUTCOME = "ln_real_inc"

FEDERAL_STATES = (
    "Nordrhein-Westfalen", "Bayern", "Baden-Wuerttemberg", "Niedersachsen",
    "Hessen", "Rheinland-Pfalz", "Sachsen", "Berlin", "Sachsen-Anhalt",
    "Thueringen", "Brandenburg", "Schleswig-Holstein", "Hamburg",
    "Mecklenburg-Vorpommern", "Saarland", "Bremen",
)
_STATE_SHARES = (0.215, 0.161, 0.118, 0.110, 0.088, 0.055, 0.044, 0.036,
                 0.033, 0.031, 0.031, 0.030, 0.015, 0.014, 0.012, 0.007)

EDUCATION_LEVELS = ("Lower Secondary", "Secondary", "Abitur", "University")
KLDB_LEVELS = ("Low", "Skilled", "Complex", "Highly Complex")
MARITAL_LEVELS = ("single", "married", "divorced", "widowed")

COLUMNS: list[tuple[str, ColumnType]] = [
    ("woman", binary()),
    ("birthcountry", binary(("Abroad", "Germany"))),
    ("education", ordinal(EDUCATION_LEVELS)),
    ("parentsEd", ordinal(("0", "1", "2", "3"))),
    ("federalstate", nominal(FEDERAL_STATES)),
    ("maritalstatus", nominal(MARITAL_LEVELS)),
    ("comp_size", ordinal(("1", "2", "3", "4"))),
    ("sector", nominal(("1", "2", "3", "4"))),
    ("leftright_2013", metric()),
    ("siblings", metric()),
    ("volunteering", ordinal(("0", "1", "2"))),
    ("music_classic", binary()),
    ("age", metric()),
    ("contactattempts", metric()),
    ("wb", binary()),
    ("ilearn", binary()),
    ("fixedterm", binary()),
    ("kldb", ordinal(KLDB_LEVELS)),
    ("workinghrs", metric()),
    ("work_experience", metric()),
    ("childhh1_number", metric()),
]

METRIC_VARS = ("age", "contactattempts", "workinghrs", "siblings",
               "leftright_2013", "childhh1_number", "work_experience")
BINARY_VARS = ("woman", "birthcountry", "music_classic", "wb", "ilearn",
               "fixedterm")


def _floored(shares, floor: float) -> tuple[float, ...]:
    p = np.maximum(np.asarray(shares, dtype=float), floor)
    return tuple(p / p.sum())


def _discretized_normal(values, mean: float, sd: float) -> tuple[float, ...]:
    v = np.asarray(values, dtype=float)
    p = np.exp(-0.5 * ((v - mean) / sd) ** 2)
    return tuple(p / p.sum())


def default_marginals(rare_floor: float = 0.02) -> MarginalSpec:
    """Generation rules for the independent variables."""
    rules = {
        "woman": CategoricalDraw((0.52, 0.48)),
        "birthcountry": CategoricalDraw((0.05, 0.95)),
        "education": CategoricalDraw((0.14, 0.36, 0.17, 0.33)),
        "parentsEd": CategoricalDraw(_floored((0.01, 0.56, 0.20, 0.22), rare_floor)),
        "federalstate": CategoricalDraw(_floored(_STATE_SHARES, rare_floor)),
        # initial shares sit above the reference table so the 5%-per-wave
        # forward drift pools back to it across the five waves
        "maritalstatus": ForwardChain(
            initial=_floored((0.195, 0.785, 0.005, 0.015), 0.0), step_prob=0.05),
        "comp_size": CategoricalDraw((0.13, 0.11, 0.38, 0.38)),
        "sector": CategoricalDraw(_floored((0.30, 0.30, 0.39, 0.01), rare_floor)),
        "leftright_2013": DiscreteMetricDraw(
            tuple(float(v) for v in range(11)),
            _discretized_normal(range(11), 5.51, 1.75)),
        "siblings": DiscreteMetricDraw(
            tuple(float(v) for v in range(8)),
            (0.22, 0.30, 0.22, 0.12, 0.07, 0.04, 0.02, 0.01)),
        "volunteering": CategoricalDraw((0.48, 0.13, 0.39)),
        "music_classic": CategoricalDraw((0.46, 0.54)),
        "age": TruncNormalAge(mean=45.3, sd=9.2, low=23.0, high=63.0),
        "contactattempts": ExponentialPerWave((1.0, 2.0, 4.0, 9.0, 16.15)),
        "wb": BernoulliPerWave((0.32, 0.35, 0.37, 0.39, 0.42)),
        "ilearn": BernoulliPerWave((0.70, 0.72, 0.74, 0.76, 0.78)),
        "fixedterm": ExitChain(initial_yes=0.072, exit_prob=0.30),
    }
    return MarginalSpec(columns=list(COLUMNS), rules=rules)


def _load_model(filename: str):
    doc = json.loads(resources.files("misslab.data").joinpath(filename).read_text())
    fs = FeatureSet.build(doc["features"],
                          np.asarray(doc["levels"], dtype=np.int64),
                          nominal=tuple(doc.get("nominal", ())))
    task = doc["task"]
    K = int(doc.get("n_classes", 0))
    if "trees" in doc:
        trees = [TreeModel.from_nested(t, fs, task, n_classes=K)
                 for t in doc["trees"]]
        model = ForestModel.from_dict({"task": task, "n_classes": K,
                                       "trees": [t.to_dict() for t in trees]})
        return model, list(doc["features"])
    return TreeModel.from_nested(doc["tree"], fs, task, n_classes=K), list(doc["features"])


def default_endogenous() -> EndogenousModelSpec:
    """Shipped tree/forest models for the endogenous variables."""
    kldb, kldb_feats = _load_model("kldb_tree.json")
    wh, wh_feats = _load_model("workinghrs_tree.json")
    wexp, wexp_feats = _load_model("workexp_tree.json")
    child, child_feats = _load_model("childhh_forest.json")
    return EndogenousModelSpec(rules={
        "kldb": EndogenousRule(model=kldb, predictors=kldb_feats,
                               kind="constant_class"),
        "workinghrs": EndogenousRule(model=wh, predictors=wh_feats,
                                     kind="constant_metric", clamp=(0.0, 90.0)),
        "work_experience": EndogenousRule(model=wexp, predictors=wexp_feats,
                                          kind="metric_increment",
                                          clamp=(0.17, 45.0),
                                          increment=(0.0, 1.0)),
        "childhh1_number": EndogenousRule(model=child, predictors=child_feats,
                                          kind="count_ageout", ageout_prob=0.20),
    })


EQ1_VARIABLES = [WAVE_COLUMN, "contactattempts", "workinghrs", "kldb",
                 "fixedterm", "maritalstatus", "education", "woman", "age",
                 "federalstate", "wb", "comp_size", "sector", "parentsEd",
                 "ilearn", "siblings"]

STUDY_REFS = {
    WAVE_COLUMN: "2",
    "education": "Secondary",
    "parentsEd": "1",
    "federalstate": "Nordrhein-Westfalen",
    "maritalstatus": "married",
    "comp_size": "3",
    "sector": "3",
    "kldb": "Skilled",
    "volunteering": "0",
    "woman": "no",
    "birthcountry": "Abroad",
    "music_classic": "no",
    "wb": "no",
    "ilearn": "no",
    "fixedterm": "no",
}

OUTCOME_COEFFICIENTS = {
    "intercept": 7.1481521,
    "wave_3": 0.015, "wave_4": 0.028, "wave_5": 0.037, "wave_6": 0.048,
    "contactattempts": 0.001,
    "workinghrs": 0.031,
    "kldb_Low": -0.266, "kldb_Complex": 0.155, "kldb_Highly Complex": 0.237,
    "fixedterm_yes": -0.166,
    "maritalstatus_single": -0.058,
    "education_Lower Secondary": -0.067, "education_Abitur": 0.067,
    "education_University": 0.204,
    "woman_yes": -0.172,
    "age": -0.006,
    "federalstate_Hamburg": -0.058, "federalstate_Bayern": -0.033,
    "federalstate_Berlin": -0.107, "federalstate_Brandenburg": -0.237,
    "federalstate_Mecklenburg-Vorpommern": 0.301,
    "federalstate_Sachsen": -0.276, "federalstate_Sachsen-Anhalt": -0.200,
    "federalstate_Thueringen": -0.268,
    "wb_yes": 0.050,
    "comp_size_1": -0.185, "comp_size_2": -0.077, "comp_size_4": 0.168,
    "sector_1": 0.060, "sector_4": -0.169,
    "parentsEd_3": 0.059,
    "ilearn_yes": 0.057,
    "siblings": -0.014,
}


def default_outcome(noise_mean: float = 0.0,
                    noise_sd: float = float(np.sqrt(0.5))) -> OutcomeModel:
    return OutcomeModel(name=OUTCOME, variables=list(EQ1_VARIABLES),
                        refs=dict(STUDY_REFS),
                        coefficients=dict(OUTCOME_COEFFICIENTS),
                        noise_mean=noise_mean, noise_sd=noise_sd)


# --- study regression ---------------------------------------------------------

STUDY_PREDICTORS = [WAVE_COLUMN] + [name for name, _ in COLUMNS]


def study_terms(n_waves: int = 5, first_wave: int = 2):
    """Labels, true coefficients, and panel membership of the study design.

    The design is the dummy expansion of every predictor (plus intercept);
    terms carrying a coefficient in the outcome equation are non-true-zero,
    everything else is true-zero.
    """
    types = dict(COLUMNS)
    types[WAVE_COLUMN] = ordinal([str(first_wave + w) for w in range(n_waves)])
    labels = ["intercept"]
    variables = [None]
    for var in STUDY_PREDICTORS:
        ct = types[var]
        if not ct.is_categorical:
            labels.append(var)
            variables.append(var)
            continue
        ref = STUDY_REFS.get(var, ct.levels[0])
        for level in ct.levels:
            if level != ref:
                labels.append(term_label(var, level))
                variables.append(var)
    truth = np.array([OUTCOME_COEFFICIENTS.get(lbl, 0.0) for lbl in labels])
    slopes = np.array([lbl != "intercept" for lbl in labels])
    membership = {
        "overall": slopes,
        "true_zero": slopes & (truth == 0.0),
        "non_true_zero": slopes & (truth != 0.0),
        "metric": np.array([v in METRIC_VARS for v in variables]),
        "binary": np.array([v in BINARY_VARS for v in variables]),
    }
    return labels, truth, membership


def study_design(ds: Dataset) -> DesignMatrix:
    """Dummy design of the full predictor set, aligned with study_terms()."""
    dm = dummy_encode(ds, refs=STUDY_REFS, intercept=True,
                      columns=STUDY_PREDICTORS)
    return dm


# --- reference targets for marginal validation ---------------------------------


def default_targets() -> dict:
    """Reference marginals; the outcome is excluded (it is equation-driven)."""
    return {
        "woman": CategoricalTarget({"yes": 0.48}),
        "music_classic": CategoricalTarget({"yes": 0.54}),
        "birthcountry": CategoricalTarget({"Germany": 0.95}),
        "wb": CategoricalTarget({"yes": 0.37}),
        "ilearn": CategoricalTarget({"yes": 0.74}),
        "fixedterm": CategoricalTarget({"yes": 0.04}),
        "comp_size": CategoricalTarget({"1": 0.13, "2": 0.11, "3": 0.38, "4": 0.38}),
        "education": CategoricalTarget({"Lower Secondary": 0.14, "Secondary": 0.36,
                                        "Abitur": 0.17, "University": 0.33}),
        "parentsEd": CategoricalTarget({"0": 0.01, "1": 0.56, "2": 0.20, "3": 0.22}),
        "volunteering": CategoricalTarget({"0": 0.48, "1": 0.13, "2": 0.39}),
        "kldb": CategoricalTarget({"Low": 0.05, "Skilled": 0.48,
                                   "Complex": 0.16, "Highly Complex": 0.31}),
        "maritalstatus": CategoricalTarget({"single": 0.19, "married": 0.73,
                                            "divorced": 0.06, "widowed": 0.01}),
        "sector": CategoricalTarget({"1": 0.30, "2": 0.30, "3": 0.39, "4": 0.01}),
        "federalstate": CategoricalTarget(dict(zip(FEDERAL_STATES, _STATE_SHARES))),
        "age": MetricTarget(46.97, 8.36),
        "contactattempts": MetricTarget(7.43, 10.84),
        "leftright_2013": MetricTarget(5.51, 1.75),
        "siblings": MetricTarget(1.81, 1.54),
        "workinghrs": MetricTarget(37.06, 11.56),
        "work_experience": MetricTarget(24.01, 8.99),
        "childhh1_number": MetricTarget(0.12, 0.39),
    }
