import numpy as np
import pytest

from misslab.tabular import (BINARY, EncodingError, SchemaError, binary,
                             correlation_matrix, dummy_encode, io_read,
                             io_write, make_dataset, matrix_distance, metric,
                             nominal, ordinal, ColumnType)


def small_ds():
    cols = [
        ("x", metric()),
        ("yn", binary(("no", "yes"))),
        ("grp", nominal(("a", "b", "c", "d"))),
    ]
    return make_dataset(cols, [
        [1.5, 2.0, 3.25],
        [0, 1, 1],
        [0, 2, 3],
    ], ids=[1, 2, 3], waves=[2, 3, 4])


class TestColumnType:
    def test_binary_needs_two_levels(self):
        with pytest.raises(SchemaError):
            ColumnType(BINARY, ("only",))

    def test_duplicate_levels_rejected(self):
        with pytest.raises(SchemaError):
            nominal(("a", "a", "b"))

    def test_metric_has_no_levels(self):
        with pytest.raises(SchemaError):
            ColumnType("metric", ("x",))


class TestDummyEncode:
    def test_binary_indicator(self):
        ds = make_dataset([("b", binary(("no", "yes")))], [[0, 1, 1]])
        dm = dummy_encode(ds, refs={"b": "no"}, intercept=False)
        assert dm.column_labels == ["b_yes"]
        np.testing.assert_array_equal(dm.values[:, 0], [0.0, 1.0, 1.0])

    def test_nominal_one_hot_minus_reference(self):
        rng = np.random.default_rng(7)
        codes = rng.integers(0, 4, size=10)
        ds = make_dataset([("g", nominal("wxyz"))], [codes])
        dm = dummy_encode(ds, intercept=False)
        assert dm.values.shape == (10, 3)
        assert np.all(dm.values.sum(axis=1) <= 1.0)
        # reference rows are all zero
        np.testing.assert_array_equal(dm.values.sum(axis=1) == 0, codes == 0)

    def test_metric_passthrough_and_intercept(self):
        ds = small_ds()
        dm = dummy_encode(ds, intercept=True)
        assert dm.column_labels[0] == "intercept"
        np.testing.assert_array_equal(dm.values[:, 0], 1.0)
        np.testing.assert_array_equal(dm.values[:, 1], ds.col("x"))

    def test_missing_cell_rejected(self):
        ds = small_ds()
        ds.set_missing(np.array([1]), 0)
        with pytest.raises(EncodingError, match="row 1.*'x'|'x'.*row 1"):
            dummy_encode(ds)

    def test_unknown_reference_level(self):
        ds = small_ds()
        with pytest.raises(SchemaError, match="reference level"):
            dummy_encode(ds, refs={"grp": "nope"})

    def test_full_rank_when_all_levels_observed(self):
        rng = np.random.default_rng(3)
        cols = [("m", metric()), ("g", nominal("abc")), ("b", binary())]
        ds = make_dataset(cols, [
            rng.normal(size=60),
            np.repeat([0, 1, 2], 20),
            rng.integers(0, 2, size=60),
        ])
        dm = dummy_encode(ds)
        assert np.linalg.matrix_rank(dm.values) == dm.n_cols


class TestCorrelation:
    def test_self_correlation_is_one(self):
        ds = small_ds()
        for method in ("pearson", "spearman", "kendall"):
            R = correlation_matrix(ds, method)
            np.testing.assert_allclose(np.diag(R), 1.0)
            np.testing.assert_allclose(R, R.T)

    def test_spearman_perfect_reversal(self):
        ds = make_dataset([("x", metric()), ("y", metric())],
                          [[1, 2, 3], [3, 2, 1]])
        R = correlation_matrix(ds, "spearman")
        assert R[0, 1] == pytest.approx(-1.0)

    def test_kendall_hand_case(self):
        # brute-force pair enumeration on x=[1,2,3,4], y=[1,3,2,4]:
        # concordant 5, discordant 1 -> tau = (5-1)/6 = 2/3
        x = [1, 2, 3, 4]
        y = [1, 3, 2, 4]
        conc = disc = 0
        for i in range(4):
            for j in range(i + 1, 4):
                s = (x[j] - x[i]) * (y[j] - y[i])
                conc += s > 0
                disc += s < 0
        assert (conc, disc) == (5, 1)
        ds = make_dataset([("x", metric()), ("y", metric())], [x, y])
        R = correlation_matrix(ds, "kendall")
        assert R[0, 1] == pytest.approx((conc - disc) / 6.0)

    def test_zero_variance_column_flagged(self):
        ds = make_dataset([("c", metric()), ("x", metric())],
                          [[5, 5, 5], [1, 2, 3]])
        with pytest.warns(UserWarning, match="zero-variance"):
            R = correlation_matrix(ds, "pearson")
        assert R[0, 1] == 0.0 and R[0, 0] == 1.0

    def test_rank_methods_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=40)
        y = rng.normal(size=40) + 0.5 * x
        for method in ("spearman", "kendall"):
            a = correlation_matrix(
                make_dataset([("x", metric()), ("y", metric())], [x, y]), method)
            b = correlation_matrix(
                make_dataset([("x", metric()), ("y", metric())],
                             [np.exp(x), y]), method)
            np.testing.assert_allclose(a, b, atol=1e-12)


class TestMatrixDistance:
    def test_identical_matrices_are_zero(self):
        A = np.eye(3)
        for m in ("frobenius", "mae", "rmse"):
            assert matrix_distance(A, A, m) == 0.0

    def test_hand_values(self):
        A = np.zeros((2, 2))
        B = np.ones((2, 2))
        assert matrix_distance(A, B, "frobenius") == pytest.approx(2.0)
        assert matrix_distance(A, B, "mae") == pytest.approx(1.0)
        assert matrix_distance(A, B, "rmse") == pytest.approx(1.0)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        A, B = rng.normal(size=(2, 4, 4))
        for m in ("frobenius", "mae", "rmse"):
            assert matrix_distance(A, B, m) == pytest.approx(matrix_distance(B, A, m))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            matrix_distance(np.zeros((2, 2)), np.zeros((3, 3)), "mae")


class TestIO:
    def test_missing_cell_round_trip(self, tmp_path):
        ds = small_ds()
        ds.set_missing(np.array([1]), 0)
        path = tmp_path / "d.csv"
        io_write(ds, path)
        back = io_read(path)
        assert back.mask.sum() == 1
        assert back.mask[1, 0]
        assert np.isnan(back.col("x")[1])

    def test_write_read_write_is_byte_identical(self, tmp_path):
        ds = small_ds()
        ds.set_missing(np.array([0]), 2)
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        io_write(ds, p1)
        io_write(io_read(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_read_back_equals_dataset(self, tmp_path):
        ds = small_ds()
        path = tmp_path / "d.csv"
        io_write(ds, path)
        back = io_read(path)
        assert back.names == ds.names
        for a, b in zip(back.values, ds.values):
            np.testing.assert_allclose(a, b)
        np.testing.assert_array_equal(back.ids, ds.ids)
        np.testing.assert_array_equal(back.waves, ds.waves)

    def test_unknown_level_is_typed_error(self, tmp_path):
        ds = small_ds()
        path = tmp_path / "d.csv"
        io_write(ds, path)
        text = path.read_text().replace("yes", "maybe")
        path.write_text(text)
        with pytest.raises(EncodingError, match="row .*'yn'|'yn'.*row"):
            io_read(path)

    def test_undeclared_column_is_schema_error(self, tmp_path):
        ds = small_ds()
        path = tmp_path / "d.csv"
        io_write(ds, path)
        lines = path.read_text().splitlines()
        lines[0] = lines[0] + ",extra"
        lines[1] = lines[1] + ",1"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(SchemaError, match="extra"):
            io_read(path)

    def test_mask_popcount_matches_sentinels(self, tmp_path):
        rng = np.random.default_rng(5)
        ds = make_dataset(
            [("x", metric()), ("g", ordinal("0123"))],
            [rng.normal(size=30), rng.integers(0, 4, size=30)])
        for col in (0, 1):
            rows = rng.choice(30, size=6, replace=False)
            ds.set_missing(rows, col)
        path = tmp_path / "d.csv"
        io_write(ds, path)
        blank_cells = sum(line.count(",,") + line.endswith(",")
                          for line in path.read_text().splitlines()[1:])
        back = io_read(path)
        assert int(back.mask.sum()) == int(ds.mask.sum())
