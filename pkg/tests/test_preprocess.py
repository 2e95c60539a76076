import numpy as np
import pytest

from sista import (
    BundleFormatError,
    CharacteristicsTable,
    DimensionMismatchError,
    InvalidProblemError,
    build_basis_cross,
    build_basis_diag,
    center_basis,
    independence_condition,
    load_characteristics,
    load_plan,
)


class TestCenterBasis:
    def test_constant_matrix_is_absorbed_by_row_offsets(self):
        # a constant matrix centers to zero (and is flagged as degenerate)
        basis = center_basis(np.full((1, 3, 3), 5.0), check_independence=False)
        np.testing.assert_allclose(basis.centered[0], 0.0, atol=1e-14)
        np.testing.assert_allclose(basis.row_offsets[0], 5.0)
        np.testing.assert_allclose(basis.col_offsets[0], 0.0, atol=1e-14)

    def test_idempotent(self, rng):
        raw = rng.standard_normal((2, 6, 6)) * 3.0 + 1.0
        once = center_basis(raw, check_independence=False)
        twice = center_basis(once.centered, check_independence=False)
        np.testing.assert_allclose(twice.centered, once.centered, atol=1e-12)
        np.testing.assert_allclose(twice.row_offsets, 0.0, atol=1e-12)
        np.testing.assert_allclose(twice.col_offsets, 0.0, atol=1e-12)

    def test_zero_row_and_column_sums(self, rng):
        raw = rng.standard_normal((3, 4, 4)) * 10.0
        basis = center_basis(raw, check_independence=False)
        np.testing.assert_allclose(basis.centered.sum(axis=2), 0.0, atol=1e-12)
        np.testing.assert_allclose(basis.centered.sum(axis=1), 0.0, atol=1e-12)

    def test_reconstruction(self, rng):
        raw = rng.standard_normal((3, 5, 5)) * 2.0 - 4.0
        b = center_basis(raw, check_independence=False)
        rebuilt = b.centered + b.row_offsets[:, :, None] + b.col_offsets[:, None, :]
        np.testing.assert_allclose(rebuilt, raw, atol=1e-12)

    def test_dependent_matrices_warn(self, rng):
        d = rng.standard_normal((1, 4, 4))
        raw = np.concatenate([d, 2.0 * d])  # exactly dependent
        with pytest.warns(UserWarning, match="linearly dependent"):
            center_basis(raw)

    def test_independent_matrices_do_not_warn(self, rng):
        raw = rng.standard_normal((3, 5, 5))
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("error")
            center_basis(raw)

    def test_independence_condition_zero_for_duplicates(self, rng):
        d = rng.standard_normal((1, 4, 4))
        basis = center_basis(np.concatenate([d, d]), check_independence=False)
        assert independence_condition(basis.centered) < 1e-12

    def test_rejects_bad_shapes(self):
        with pytest.raises(DimensionMismatchError):
            center_basis(np.ones((2, 3, 4)))
        with pytest.raises(DimensionMismatchError):
            center_basis(np.ones((3, 3)))


class TestBasisBuilders:
    def test_diag_zero_on_matched_pairs(self, rng):
        x = rng.standard_normal((4, 2))
        mats = build_basis_diag(x, x)
        for k in range(2):
            np.testing.assert_allclose(np.diag(mats[k]), 0.0)

    def test_diag_hand_case(self):
        x = np.array([[0.0], [1.0]])
        mats = build_basis_diag(x, x)
        np.testing.assert_allclose(mats[0], [[0.0, 1.0], [1.0, 0.0]])

    def test_diag_matches_scalar_loop(self, rng):
        x = rng.standard_normal((5, 3))
        y = rng.standard_normal((5, 3))
        mats = build_basis_diag(x, y)
        assert mats.shape == (3, 5, 5)
        for k in range(3):
            for i in range(5):
                for j in range(5):
                    assert mats[k, i, j] == pytest.approx((x[i, k] - y[j, k]) ** 2)

    def test_diag_outputs_nonnegative_and_symmetric_when_shared(self, rng):
        x = rng.standard_normal((6, 2))
        mats = build_basis_diag(x, x)
        assert (mats >= 0).all()
        for k in range(2):
            np.testing.assert_allclose(mats[k], mats[k].T)

    def test_cross_reduces_to_diag_for_single_characteristic(self, rng):
        x = rng.standard_normal((4, 1))
        y = rng.standard_normal((4, 1))
        np.testing.assert_array_equal(
            build_basis_cross(x, y), build_basis_diag(x, y)
        )

    def test_cross_diagonal_pairs_match_diag_builder(self, rng):
        x = rng.standard_normal((4, 3))
        y = rng.standard_normal((4, 3))
        cross = build_basis_cross(x, y)
        diag = build_basis_diag(x, y)
        p = 3
        for r in range(p):
            np.testing.assert_array_equal(cross[r * p + r], diag[r])

    def test_cross_matches_scalar_loop(self, rng):
        x = rng.standard_normal((3, 2))
        y = rng.standard_normal((3, 2))
        cross = build_basis_cross(x, y)
        assert cross.shape == (4, 3, 3)
        for r in range(2):
            for s in range(2):
                for i in range(3):
                    for j in range(3):
                        assert cross[r * 2 + s, i, j] == pytest.approx(
                            (x[i, r] - y[j, s]) ** 2
                        )

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(DimensionMismatchError):
            build_basis_diag(rng.standard_normal((4, 2)), rng.standard_normal((4, 3)))

    def test_table_wrapper(self, rng):
        x = rng.standard_normal((4, 2))
        y = rng.standard_normal((4, 2))
        table = CharacteristicsTable(x, y)
        np.testing.assert_array_equal(table.diag_basis(), build_basis_diag(x, y))
        np.testing.assert_array_equal(table.cross_basis(), build_basis_cross(x, y))
        with pytest.raises(DimensionMismatchError):
            CharacteristicsTable(x, rng.standard_normal((5, 2)))


class TestLoadPlan:
    def test_uniform_two_by_two(self, tmp_path):
        f = tmp_path / "plan.txt"
        f.write_text("0.25,0.25\n0.25,0.25\n")
        p = load_plan(f)
        np.testing.assert_allclose(p.p, [0.5, 0.5])
        np.testing.assert_allclose(p.q, [0.5, 0.5])
        assert p.support.all()

    def test_zero_diagonal_excluded_from_support(self, tmp_path):
        f = tmp_path / "plan.txt"
        f.write_text("0,0.3\n0.7,0\n")
        p = load_plan(f)
        assert not p.support[0, 0] and not p.support[1, 1]
        assert p.support[0, 1] and p.support[1, 0]

    def test_mass_normalized(self, tmp_path):
        f = tmp_path / "plan.txt"
        f.write_text("1.0,0.5\n0.25,0.25\n")  # mass 2.0
        p = load_plan(f)
        assert p.entries.sum() == pytest.approx(1.0, abs=1e-12)

    def test_parse_error(self, tmp_path):
        f = tmp_path / "plan.txt"
        f.write_text("0.25,oops\n0.25,0.25\n")
        with pytest.raises(BundleFormatError, match="invalid numeric"):
            load_plan(f)

    def test_ragged_rows_rejected(self, tmp_path):
        f = tmp_path / "plan.txt"
        f.write_text("0.25,0.25\n0.25\n")
        with pytest.raises(BundleFormatError, match="columns"):
            load_plan(f)

    def test_negative_entry_rejected(self, tmp_path):
        f = tmp_path / "plan.txt"
        f.write_text("0.5,-0.1\n0.3,0.3\n")
        with pytest.raises(InvalidProblemError, match="negative"):
            load_plan(f)

    def test_zero_margin_rejected(self, tmp_path):
        f = tmp_path / "plan.txt"
        f.write_text("0,0\n0.5,0.5\n")
        with pytest.raises(InvalidProblemError, match="margin"):
            load_plan(f)


class TestLoadCharacteristics:
    def test_reads_ids_and_values(self, tmp_path):
        f = tmp_path / "chars.txt"
        f.write_text("alpha,1.0,2.0\nbeta,3.5,-1.25\n")
        ids, vals = load_characteristics(f)
        assert ids == ["alpha", "beta"]
        np.testing.assert_allclose(vals, [[1.0, 2.0], [3.5, -1.25]])

    def test_requires_components(self, tmp_path):
        f = tmp_path / "chars.txt"
        f.write_text("alpha\n")
        with pytest.raises(BundleFormatError):
            load_characteristics(f)

    def test_inconsistent_width_rejected(self, tmp_path):
        f = tmp_path / "chars.txt"
        f.write_text("a,1.0,2.0\nb,3.0\n")
        with pytest.raises(BundleFormatError, match="components"):
            load_characteristics(f)
