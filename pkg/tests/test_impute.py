import numpy as np
import pytest

from misslab.impute import (METHODS, ImputerSpec, MultipleImputation,
                            UnimputableError, impute, impute_mice_pmm,
                            impute_mice_rf, impute_missranger, impute_mixgb,
                            initialize, pmm_match, visit_order)
from misslab.tabular import binary, make_dataset, metric, nominal, ordinal
from misslab.trees import ForestConfig, GbmConfig

FAST_FOREST = ForestConfig(num_trees=5)
FAST_GBM = GbmConfig(n_rounds=5, max_depth=2, subsample=1.0)


def spec_for(method, m=2, **kw):
    kw.setdefault("forest", FAST_FOREST)
    kw.setdefault("gbm", FAST_GBM)
    return ImputerSpec(method=method, m=m, **kw)


def mixed_ds(n=150, seed=0, miss=0.2):
    """Mixed-type dataset with MCAR-style missingness in every column."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    g = rng.integers(0, 3, size=n)
    b = (x + rng.normal(scale=0.8, size=n) > 0).astype(int)
    y = 2.0 * x + g + rng.normal(scale=0.5, size=n)
    ds = make_dataset(
        [("x", metric()), ("g", nominal("abc")), ("b", binary()), ("y", metric())],
        [x, g, b, y])
    for c in range(4):
        rows = rng.choice(n, size=int(miss * n), replace=False)
        ds.set_missing(rows, c)
    return ds


class TestInitialize:
    def test_single_donor_column(self):
        ds = make_dataset([("x", metric())], [[2.0, 2.0, 2.0, 2.0]])
        ds.set_missing(np.array([1, 3]), 0)
        work = initialize(ds, np.random.default_rng(0))
        np.testing.assert_allclose(work[0], 2.0)

    def test_no_missing_cells_after_init(self):
        ds = mixed_ds()
        work = initialize(ds, np.random.default_rng(1))
        for c, (name, ct) in enumerate(ds.columns):
            if ct.is_categorical:
                assert np.all(work[c] >= 0)
            else:
                assert not np.isnan(work[c]).any()

    def test_categorical_fills_stay_in_observed_support(self):
        rng = np.random.default_rng(3)
        for seed in range(100):
            ds = make_dataset([("g", nominal("abcd"))],
                              [np.array([0, 0, 1, 1, 1, 0, 1, 0, 1, 0])])
            ds.set_missing(np.array([2, 5, 8]), 0)
            work = initialize(ds, np.random.default_rng(seed))
            assert set(np.unique(work[0])) <= {0, 1}

    def test_fully_missing_column_raises(self):
        ds = make_dataset([("x", metric())], [[1.0, 2.0]])
        ds.set_missing(np.array([0, 1]), 0)
        with pytest.raises(UnimputableError, match="'x'"):
            initialize(ds, np.random.default_rng(0))

    def test_visit_order_ascending_missingness(self):
        ds = mixed_ds()
        ds.set_missing(np.arange(100), 3)  # make y heavily missing
        order = visit_order(ds)
        counts = ds.mask.sum(axis=0)
        assert order[-1] == 3
        assert sorted(order, key=lambda c: (counts[c], c)) == order


class TestPmmMatch:
    def test_nearest_donor_k1(self):
        out = pmm_match(np.array([4.9]), np.array([1.0, 5.0, 9.0]),
                        np.array([10.0, 50.0, 90.0]), 1,
                        np.random.default_rng(0))
        assert out[0] == 50.0

    def test_uniform_over_pool(self):
        # k equals the donor count: each donor near 1/3 frequency
        rng = np.random.default_rng(42)
        hits = {10.0: 0, 50.0: 0, 90.0: 0}
        for _ in range(10000):
            v = pmm_match(np.array([5.0]), np.array([1.0, 5.0, 9.0]),
                          np.array([10.0, 50.0, 90.0]), 3, rng)[0]
            hits[v] += 1
        for v, c in hits.items():
            assert abs(c / 10000 - 1 / 3) < 0.02

    def test_support_inclusion(self):
        rng = np.random.default_rng(5)
        obs = rng.normal(size=40)
        out = pmm_match(rng.normal(size=25), rng.normal(size=40), obs, 5, rng)
        assert np.isin(out, obs).all()

    def test_pool_shrinks_with_warning(self):
        with pytest.warns(UserWarning, match="donor pool"):
            out = pmm_match(np.array([0.0]), np.array([1.0, 2.0]),
                            np.array([5.0, 6.0]), 10, np.random.default_rng(0))
        assert out[0] in (5.0, 6.0)


class TestMicePmm:
    def test_zero_missing_gives_identical_copies(self):
        ds = mixed_ds(miss=0.0)
        result = impute_mice_pmm(ds, spec_for("mice_pmm"), seed=4)
        assert len(result.completions) == 2
        for comp in result.completions:
            for a, b in zip(comp.values, ds.values):
                np.testing.assert_array_equal(a, b)

    def test_exact_linear_nearest_donor(self):
        # y = 2x exactly, one missing y, k=1: imputed y must belong to the
        # observed row whose x is nearest the missing row's x
        x = np.array([0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 2.2])
        y = 2.0 * x
        ds = make_dataset([("x", metric()), ("y", metric())], [x, y])
        ds.set_missing(np.array([6]), 1)
        spec = ImputerSpec(method="mice_pmm", m=1, iters=1, k=1)
        result = impute_mice_pmm(ds, spec, seed=0)
        assert result.completions[0].col("y")[6] == pytest.approx(4.0)

    def test_support_inclusion_all_columns(self):
        ds = mixed_ds(seed=2)
        result = impute_mice_pmm(ds, spec_for("mice_pmm"), seed=9)
        for comp in result.completions:
            for c in range(ds.n_cols):
                obs_support = np.unique(ds.values[c][~ds.mask[:, c]])
                assert np.isin(comp.values[c], obs_support).all()


class TestMiceRf:
    def test_singleton_leaf_returns_exact_donor(self):
        rng = np.random.default_rng(0)
        x = np.arange(20.0)
        y = 3.0 * x + rng.normal(scale=0.01, size=20)
        ds = make_dataset([("x", metric()), ("y", metric())], [x, y])
        ds.set_missing(np.array([10]), 1)
        spec = ImputerSpec(method="mice_rf", m=1, iters=1,
                           forest=ForestConfig(num_trees=1, min_leaf=1,
                                               sample_fraction=1.0, replace=False,
                                               mtry=1))
        result = impute_mice_rf(ds, spec, seed=1)
        assert result.completions[0].col("y")[10] in y[np.arange(20) != 10]

    def test_categorical_values_subset_of_levels(self):
        ds = mixed_ds(seed=5)
        result = impute_mice_rf(ds, spec_for("mice_rf", iters=2), seed=3)
        g = ds.col_index("g")
        for comp in result.completions:
            assert set(np.unique(comp.values[g])) <= {0, 1, 2}

    def test_step_relation_lands_on_correct_side(self):
        hits = 0
        total = 0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            x = rng.uniform(-1, 1, size=80)
            y = np.where(x < 0, 0.0, 10.0) + rng.normal(scale=0.1, size=80)
            ds = make_dataset([("x", metric()), ("y", metric())], [x, y])
            rows = rng.choice(80, size=8, replace=False)
            ds.set_missing(rows, 1)
            spec = ImputerSpec(method="mice_rf", m=1, iters=1,
                               forest=ForestConfig(num_trees=5, mtry=1))
            result = impute_mice_rf(ds, spec, seed=seed)
            imp = result.completions[0].col("y")[rows]
            correct = np.where(x[rows] < 0, imp < 5.0, imp >= 5.0)
            hits += correct.sum()
            total += len(rows)
        assert hits / total >= 0.95


class TestMissRanger:
    def test_pmm_support_inclusion(self):
        ds = mixed_ds(seed=7)
        result = impute_missranger(ds, spec_for("miss_ranger_pmm"), seed=2)
        assert result.method == "miss_ranger_pmm"
        for comp in result.completions:
            for c in range(ds.n_cols):
                obs_support = np.unique(ds.values[c][~ds.mask[:, c]])
                assert np.isin(comp.values[c], obs_support).all()

    def test_raw_predictions_escape_support(self):
        # regression means are generally unobserved values
        escaped = False
        for seed in range(20):
            ds = mixed_ds(seed=seed)
            result = impute_missranger(ds, spec_for("miss_ranger", m=1), seed=seed)
            comp = result.completions[0]
            for c, (name, ct) in enumerate(ds.columns):
                if ct.is_categorical:
                    continue
                obs_support = np.unique(ds.values[c][~ds.mask[:, c]])
                mis = ds.mask[:, c]
                if not np.isin(comp.values[c][mis], obs_support).all():
                    escaped = True
                    break
            if escaped:
                break
        assert escaped

    def test_zero_missing_early_exit(self):
        ds = mixed_ds(miss=0.0)
        result = impute_missranger(ds, spec_for("miss_ranger_pmm", m=3), seed=0)
        assert len(result.completions) == 3
        assert result.trace == []
        for comp in result.completions:
            for a, b in zip(comp.values, ds.values):
                np.testing.assert_array_equal(a, b)

    def test_early_stop_bounded_by_max_sweeps(self):
        ds = mixed_ds(seed=3)
        result = impute_missranger(ds, spec_for("miss_ranger_pmm", m=1), seed=5)
        sweeps = {t for (_, t, _) in result.trace}
        assert max(sweeps) <= 9


class TestMixgb:
    def test_support_and_class_contracts(self):
        ds = mixed_ds(seed=11)
        result = impute_mixgb(ds, spec_for("mixgb"), seed=6)
        for comp in result.completions:
            for c, (name, ct) in enumerate(ds.columns):
                obs_support = np.unique(ds.values[c][~ds.mask[:, c]])
                if ct.is_categorical:
                    assert set(np.unique(comp.values[c])) <= set(range(ct.n_levels))
                else:
                    assert np.isin(comp.values[c], obs_support).all()

    def test_single_pass_touches_each_variable_once(self):
        ds = mixed_ds(seed=13)
        result = impute_mixgb(ds, spec_for("mixgb", m=1), seed=8)
        incomplete = [ds.columns[c][0] for c in range(ds.n_cols)
                      if ds.mask[:, c].any()]
        visited = [var for (_, _, var) in result.trace]
        assert sorted(visited) == sorted(incomplete)

    def test_different_seeds_differ(self):
        ds = mixed_ds(seed=17)
        hits = 0
        for seed in range(20):
            a = impute_mixgb(ds, spec_for("mixgb", m=1), seed=seed)
            b = impute_mixgb(ds, spec_for("mixgb", m=1), seed=seed + 1000)
            diff = any(
                not np.array_equal(x, y)
                for x, y in zip(a.completions[0].values, b.completions[0].values))
            hits += diff
        assert hits == 20


@pytest.mark.parametrize("method", METHODS)
class TestEngineContracts:
    def test_contracts(self, method):
        for seed in range(4):
            ds = mixed_ds(seed=seed)
            result = impute(ds, spec_for(method), seed=seed)
            assert isinstance(result, MultipleImputation)
            assert len(result.completions) == 2
            assert result.seconds >= 0.0
            all_equal = True
            for comp in result.completions:
                # completeness: no mask, no sentinel values
                assert comp.mask.sum() == 0
                for c, (name, ct) in enumerate(ds.columns):
                    obs = ~ds.mask[:, c]
                    # observed-cell immutability
                    np.testing.assert_array_equal(comp.values[c][obs],
                                                  ds.values[c][obs])
                    if ct.is_categorical:
                        assert np.all(comp.values[c] >= 0)
                    else:
                        assert not np.isnan(comp.values[c]).any()
                for c in range(ds.n_cols):
                    if not np.array_equal(comp.values[c],
                                          result.completions[0].values[c]):
                        all_equal = False
            # between-imputation stochasticity: the m completions differ
            assert not all_equal

    def test_determinism(self, method):
        ds = mixed_ds(seed=21)
        a = impute(ds, spec_for(method), seed=77)
        b = impute(ds, spec_for(method), seed=77)
        for ca, cb in zip(a.completions, b.completions):
            for x, y in zip(ca.values, cb.values):
                np.testing.assert_array_equal(x, y)
