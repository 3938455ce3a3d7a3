import numpy as np
import pytest

from misslab.metrics import (bias_panels, correlation_report, ipm,
                             ipm_multiple, rejection_panels)
from misslab.tabular import make_dataset, metric, nominal


def two_col_ds(metric_vals, cat_vals):
    return make_dataset([("m", metric()), ("c", nominal("abc"))],
                        [metric_vals, cat_vals])


class TestIpm:
    def test_perfect_imputation_is_zero(self):
        truth = two_col_ds([0.0, 5.0, 10.0], [0, 1, 2])
        mask = np.zeros((3, 2), dtype=bool)
        mask[1, 0] = mask[2, 1] = True
        assert ipm(truth, truth, mask) == 0.0

    def test_single_wrong_categorical_cell(self):
        truth = two_col_ds([0.0, 5.0, 10.0], [0, 1, 2])
        imp = two_col_ds([0.0, 5.0, 10.0], [0, 2, 2])
        mask = np.zeros((3, 2), dtype=bool)
        mask[1, 1] = True
        assert ipm(truth, imp, mask) == 1.0

    def test_hand_case_point_six(self):
        # numeric column range 10, error 2 (delta 0.2); categorical wrong (1)
        truth = two_col_ds([0.0, 5.0, 10.0], [0, 1, 2])
        imp = two_col_ds([0.0, 7.0, 10.0], [0, 0, 2])
        mask = np.zeros((3, 2), dtype=bool)
        mask[1, 0] = mask[1, 1] = True
        assert ipm(truth, imp, mask) == pytest.approx(0.6)

    def test_categorical_only_equals_misclassification_rate(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(10, 60))
            tv = rng.integers(0, 3, size=n)
            iv = rng.integers(0, 3, size=n)
            truth = make_dataset([("c", nominal("abc"))], [tv])
            imp = make_dataset([("c", nominal("abc"))], [iv])
            mask = rng.random((n, 1)) < 0.5
            if not mask.any():
                mask[0, 0] = True
            expected = np.mean(tv[mask[:, 0]] != iv[mask[:, 0]])
            assert ipm(truth, imp, mask) == pytest.approx(expected)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        tv = rng.normal(size=20)
        iv = tv + rng.normal(scale=0.5, size=20)
        truth = make_dataset([("m", metric())], [tv])
        imp = make_dataset([("m", metric())], [iv])
        mask = rng.random((20, 1)) < 0.4
        mask[0, 0] = True
        base = ipm(truth, imp, mask)
        perm = rng.permutation(20)
        truth_p = make_dataset([("m", metric())], [tv[perm]])
        imp_p = make_dataset([("m", metric())], [iv[perm]])
        assert ipm(truth_p, imp_p, mask[perm]) == pytest.approx(base)

    def test_no_amputed_cells_is_error(self):
        truth = two_col_ds([0.0, 1.0, 2.0], [0, 1, 2])
        with pytest.raises(ValueError, match="undefined|amputed"):
            ipm(truth, truth, np.zeros((3, 2), dtype=bool))

    def test_zero_range_contributes_one_with_warning(self):
        truth = make_dataset([("m", metric())], [[2.0, 2.0, 2.0]])
        imp = make_dataset([("m", metric())], [[2.0, 2.0, 2.0]])
        imp.values[0][1] = 2.0  # same value: no discrepancy, no warning
        mask = np.zeros((3, 1), dtype=bool)
        mask[1, 0] = True
        assert ipm(truth, imp, mask) == 0.0

    def test_mean_over_completions(self):
        truth = make_dataset([("m", metric())], [[0.0, 10.0]])
        a = make_dataset([("m", metric())], [[0.0, 10.0]])
        b = make_dataset([("m", metric())], [[0.0, 5.0]])
        mask = np.array([[False], [True]])
        assert ipm_multiple(truth, [a, b], mask) == pytest.approx(0.25)


def simple_membership(k, zero_idx, metric_idx=(), binary_idx=()):
    overall = np.ones(k, dtype=bool)
    tz = np.zeros(k, dtype=bool)
    tz[list(zero_idx)] = True
    mem = {
        "overall": overall,
        "true_zero": tz,
        "non_true_zero": overall & ~tz,
        "metric": np.zeros(k, dtype=bool),
        "binary": np.zeros(k, dtype=bool),
    }
    mem["metric"][list(metric_idx)] = True
    mem["binary"][list(binary_idx)] = True
    return mem


class TestBiasPanels:
    def test_exact_estimates_give_zero_panels(self):
        truth = np.array([1.0, 0.0, -2.0])
        est = np.tile(truth, (5, 1))
        rep = bias_panels(est, truth, simple_membership(3, [1]), ["a", "b", "c"])
        for stats in rep.panels.values():
            assert stats.mean == 0.0 or np.isnan(stats.mean)

    def test_hand_arithmetic(self):
        # two coefficients with bias 0.01 and 0.03
        truth = np.zeros(2)
        est = np.array([[0.01, 0.03]])
        rep = bias_panels(est, truth, simple_membership(2, [0, 1]), ["a", "b"])
        panel = rep.panels["true_zero"]
        assert panel.mean == pytest.approx(0.02)
        assert panel.median == pytest.approx(0.02)
        assert panel.sd == pytest.approx(0.014142, abs=1e-6)

    def test_abs_mean_vs_mean_abs(self):
        truth = np.zeros(1)
        est = np.array([[0.5], [-0.5]])
        a = bias_panels(est, truth, simple_membership(1, [0]), ["a"])
        b = bias_panels(est, truth, simple_membership(1, [0]), ["a"],
                        kind="mean_abs_error")
        assert a.per_term[0] == pytest.approx(0.0)
        assert b.per_term[0] == pytest.approx(0.5)

    def test_partition_enforced(self):
        mem = simple_membership(2, [0])
        mem["non_true_zero"] = np.zeros(2, dtype=bool)
        with pytest.raises(ValueError, match="partition"):
            bias_panels(np.zeros((1, 2)), np.zeros(2), mem, ["a", "b"])

    def test_panel_a_consistent_with_b_union_c(self):
        rng = np.random.default_rng(3)
        truth = np.array([0.0, 0.5, 0.0, -1.0])
        est = truth + rng.normal(scale=0.1, size=(50, 4))
        mem = simple_membership(4, [0, 2])
        rep = bias_panels(est, truth, mem, list("abcd"))
        vals = rep.per_term
        pooled = np.concatenate([vals[mem["true_zero"]], vals[mem["non_true_zero"]]])
        assert rep.panels["overall"].mean == pytest.approx(pooled.mean())


class TestRejectionPanels:
    def test_all_rejected(self):
        dec = np.ones((10, 3), dtype=bool)
        rep = rejection_panels(dec, simple_membership(3, [0]), list("abc"))
        assert rep.panels["overall"].mean == 1.0

    def test_counting(self):
        dec = np.zeros((200, 1), dtype=bool)
        dec[:7, 0] = True
        rep = rejection_panels(dec, simple_membership(1, [0]), ["a"])
        assert rep.per_term[0] == pytest.approx(0.035)

    def test_sd_zero_iff_constant(self):
        dec = np.zeros((10, 2), dtype=bool)
        dec[:5, :] = True
        rep = rejection_panels(dec, simple_membership(2, [0, 1]), ["a", "b"])
        assert rep.panels["true_zero"].sd == 0.0


class TestCorrelationReport:
    def make_ds(self, seed):
        rng = np.random.default_rng(seed)
        n = 300
        x = rng.normal(size=n)
        return make_dataset(
            [("x", metric()), ("y", metric()), ("g", nominal("abc"))],
            [x, x + rng.normal(scale=0.8, size=n), rng.integers(0, 3, size=n)])

    def test_identical_datasets_give_zero(self):
        ds = self.make_ds(0)
        table = correlation_report(ds, ds)
        assert all(v == 0.0 for v in table.values())
        assert len(table) == 9

    def test_symmetry_in_arguments(self):
        a, b = self.make_ds(1), self.make_ds(2)
        t1 = correlation_report(a, b)
        t2 = correlation_report(b, a)
        for key in t1:
            assert t1[key] == pytest.approx(t2[key])

    def test_same_law_gives_small_positive_distance(self):
        a, b = self.make_ds(3), self.make_ds(4)
        table = correlation_report(a, b)
        d = table[("spearman", "frobenius")]
        assert 0.0 < d < 1.0
