import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from essm import (
    ContinuousFull,
    DiagonalSystem,
    InvalidShapeError,
    InvalidStepError,
    NotDiagonalizableError,
    SingularMatrixError,
    diagonalize,
    discretize_full,
    discretize_gbt,
    discretize_zoh,
    recurrent_scan_diagonal,
    recurrent_scan_full,
)
from essm.ssm_core import DiscreteDiagonal, DiscreteFull, apply_feedthrough, cexpm1

# mpmath, 30 digits
EXP_M01 = 0.904837418035959568141392384217
ZOH_B = 0.0951625819640404318586076157831
SQRT3_2 = 0.866025403784438646763723170753
EXP_M0005 = 0.995012479192682313352564246232
TOY_EIGS = (-2.57979589711327123927891362988, -0.620204102886728760721086370118)
TOY_A = np.array([[-0.2, 1.0], [-1.0, -3.0]])


def _stable_full(rng, n, h, m):
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    lam = -rng.uniform(0.2, 2.0, n)
    a = q @ np.diag(lam) @ q.T + 0.3 * rng.normal(size=(n, n)) / np.sqrt(n)
    a -= (max(np.linalg.eigvals(a).real) + 0.1) * np.eye(n) * (max(np.linalg.eigvals(a).real) > -0.1)
    return ContinuousFull(a=a, b=rng.normal(size=(n, h)), c=rng.normal(size=(m, n)), d=rng.normal(size=(m, h)))


class TestZOH:
    def test_scalar_oracle(self):
        disc = discretize_zoh([-1.0], [[1.0]], [0.1])
        assert disc.lambda_bar[0] == pytest.approx(EXP_M01, rel=1e-15)
        assert disc.b_bar[0, 0] == pytest.approx(ZOH_B, rel=1e-14)
        assert disc.method == "zoh"

    def test_series_limit(self):
        disc = discretize_zoh([-1e-15], [[2.0]], [0.5])
        assert disc.b_bar[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_exact_zero_eigenvalue(self):
        disc = discretize_zoh([0.0], [[3.0]], [0.25])
        assert disc.b_bar[0, 0] == 0.75 and disc.lambda_bar[0] == 1.0

    def test_complex_modulus(self):
        disc = discretize_zoh([-0.5 + SQRT3_2 * 1j], [[1.0]], [0.01])
        assert abs(disc.lambda_bar[0]) == pytest.approx(EXP_M0005, rel=1e-15)

    @pytest.mark.parametrize("delta", [0.0, -0.1, np.nan])
    def test_rejects_non_positive_step(self, delta):
        with pytest.raises(InvalidStepError):
            discretize_zoh([-1.0], [[1.0]], [delta])

    def test_small_eigenvalues_stay_accurate(self):
        lam = np.array([-1e-9 + 1e-9j, -1e-6, 2e-8j])
        disc = discretize_zoh(lam, np.ones((3, 1)), 0.1)
        z = lam * 0.1
        series = 0.1 * (1 + z / 2 + z**2 / 6)
        np.testing.assert_allclose(disc.b_bar[:, 0], series, rtol=1e-12)

    def test_cexpm1_matches_expm1_on_real_axis(self):
        x = np.array([-1e-10, 1e-7, -0.3, 2.0])
        np.testing.assert_allclose(cexpm1(x).real, np.expm1(x), rtol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(
        re=st.floats(-50, -1e-6),
        im=st.floats(-100, 100),
        delta=st.floats(1e-4, 1.0),
    )
    def test_stable_modes_contract(self, re, im, delta):
        disc = discretize_zoh([re + 1j * im], [[1.0]], [delta])
        assert abs(disc.lambda_bar[0]) < 1.0

    def test_matches_block_exponential(self):
        rng = np.random.default_rng(3)
        sys = _stable_full(rng, 4, 2, 3)
        diag = diagonalize(sys)
        disc = discretize_zoh(diag.lam, diag.b_prime, 0.07)
        full = discretize_full(sys, 0.07)
        np.testing.assert_allclose(diag.t @ np.diag(disc.lambda_bar) @ np.linalg.inv(diag.t), full.a_bar, atol=1e-12)
        np.testing.assert_allclose(diag.t @ disc.b_bar, full.b_bar, atol=1e-12)


class TestGBT:
    def test_forward_euler(self):
        a_bar, b_bar = discretize_gbt([[-1.0]], [[1.0]], 0.1, 0.0)
        assert a_bar[0, 0] == pytest.approx(0.9, abs=1e-15)
        assert b_bar[0, 0] == pytest.approx(0.1, abs=1e-15)

    def test_bilinear(self):
        a_bar, b_bar = discretize_gbt([[-1.0]], [[1.0]], 0.1, 0.5)
        assert a_bar[0, 0] == pytest.approx(0.904761904761904761904761904762, rel=1e-15)
        assert b_bar[0, 0] == pytest.approx(0.0952380952380952380952380952381, rel=1e-15)

    def test_backward_euler(self):
        a_bar, _ = discretize_gbt([[-1.0]], [[1.0]], 0.1, 1.0)
        assert a_bar[0, 0] == pytest.approx(0.909090909090909090909090909091, rel=1e-15)

    def test_singular(self):
        with pytest.raises(SingularMatrixError):
            discretize_gbt([[2.0]], [[1.0]], 0.5, 1.0)

    @pytest.mark.parametrize("alpha", [-0.1, 1.5])
    def test_alpha_range(self, alpha):
        with pytest.raises(ValueError):
            discretize_gbt([[-1.0]], [[1.0]], 0.1, alpha)

    def test_third_order_agreement_with_zoh(self):
        gaps = []
        for delta in (0.2, 0.1, 0.05):
            zoh = discretize_zoh([-1.0], [[1.0]], [delta]).lambda_bar[0].real
            bil, _ = discretize_gbt([[-1.0]], [[1.0]], delta, 0.5)
            gaps.append(abs(zoh - bil[0, 0]))
        ratios = [gaps[0] / gaps[1], gaps[1] / gaps[2]]
        assert all(7.0 < r < 9.0 for r in ratios), ratios

    def test_full_path_gbt(self):
        sys = ContinuousFull(a=TOY_A, b=np.eye(2), c=np.eye(2), d=np.zeros((2, 2)))
        disc = discretize_full(sys, 0.01, method="gbt", alpha=0.5)
        a_bar, b_bar = discretize_gbt(TOY_A, np.eye(2), 0.01, 0.5)
        np.testing.assert_array_equal(disc.a_bar, a_bar)
        np.testing.assert_array_equal(disc.b_bar, b_bar)
        with pytest.raises(ValueError):
            discretize_full(sys, 0.01, method="rk4")


class TestFullSystem:
    def test_shape_checks(self):
        with pytest.raises(InvalidShapeError):
            ContinuousFull(a=np.zeros((2, 3)), b=np.zeros((2, 1)), c=np.zeros((1, 2)), d=np.zeros((1, 1)))
        with pytest.raises(InvalidShapeError):
            ContinuousFull(a=np.zeros((2, 2)), b=np.zeros((3, 1)), c=np.zeros((1, 2)), d=np.zeros((1, 1)))
        with pytest.raises(InvalidShapeError):
            ContinuousFull(a=np.zeros((2, 2)), b=np.zeros((2, 1)), c=np.zeros((1, 2)), d=np.zeros((2, 1)))

    def test_zoh_of_singular_matrix(self):
        sys = ContinuousFull(a=np.zeros((2, 2)), b=np.eye(2), c=np.eye(2), d=np.zeros((2, 2)))
        disc = discretize_full(sys, 0.3)
        np.testing.assert_allclose(disc.a_bar, np.eye(2), atol=1e-15)
        np.testing.assert_allclose(disc.b_bar, 0.3 * np.eye(2), atol=1e-15)

    def test_fixed_point(self):
        v = np.array([1.0, -2.0, 0.5])
        disc = DiscreteFull(a_bar=np.eye(3), b_bar=np.zeros((3, 2)), c=np.eye(3), d=np.zeros((3, 2)))
        traj = recurrent_scan_full(disc, np.ones((6, 2)), x0=v)
        np.testing.assert_array_equal(traj.states, np.tile(v, (6, 1)))

    def test_memoryless(self):
        disc = DiscreteFull(a_bar=np.zeros((2, 2)), b_bar=np.eye(2), c=np.eye(2), d=np.zeros((2, 2)))
        u = np.tile([1.0, 0.0], (5, 1))
        np.testing.assert_array_equal(recurrent_scan_full(disc, u).states, u)

    def test_scan_shape_errors(self):
        disc = DiscreteFull(a_bar=np.eye(2), b_bar=np.eye(2), c=np.eye(2), d=np.zeros((2, 2)))
        with pytest.raises(InvalidShapeError):
            recurrent_scan_full(disc, np.ones((4, 3)))
        with pytest.raises(InvalidShapeError):
            recurrent_scan_full(disc, np.ones((4, 2)), x0=np.zeros(3))


class TestDiagonal:
    def test_geometric_series(self):
        disc = DiscreteDiagonal(lambda_bar=np.array([0.5]), b_bar=np.array([[0.5]]))
        traj = recurrent_scan_diagonal(disc, [[1.0]], [0.0], np.ones((10, 1)))
        k = np.arange(1, 11)
        np.testing.assert_allclose(traj.states[:, 0].real, 1 - 0.5**k, rtol=1e-15)

    def test_homogeneous_solution(self):
        lb = np.array([0.9, 0.5 + 0.3j])
        v = np.array([1.0, 2.0 - 1.0j])
        disc = DiscreteDiagonal(lambda_bar=lb, b_bar=np.ones((2, 1)))
        traj = recurrent_scan_diagonal(disc, np.ones((1, 2)), [0.0], np.zeros((7, 1)), x0=v)
        k = np.arange(1, 8)[:, None]
        np.testing.assert_allclose(traj.states, lb**k * v, rtol=1e-14)

    def test_complex_output_map_keeps_imaginary_part(self):
        disc = DiscreteDiagonal(lambda_bar=np.array([0.0]), b_bar=np.array([[1j]]))
        traj = recurrent_scan_diagonal(disc, [[1j]], [0.0], np.ones((2, 1)))
        np.testing.assert_allclose(traj.outputs, -np.ones((2, 1)))

    def test_system_validation(self):
        with pytest.raises(InvalidStepError):
            DiagonalSystem(lam=[-1.0], b=[[1.0]], c=[[1.0]], d=[1.0], delta=[0.0])
        with pytest.raises(InvalidShapeError):
            DiagonalSystem(lam=[-1.0, -2.0], b=[[1.0]], c=[[1.0, 1.0]], d=[1.0], delta=0.1)
        with pytest.raises(InvalidShapeError):
            DiagonalSystem(lam=[-1.0], b=[[1.0, 2.0]], c=[[1.0]], d=[1.0, 1.0], delta=0.1)
        sys = DiagonalSystem(lam=[-1.0, -2.0], b=np.ones((2, 3)), c=np.ones((4, 2)), d=np.ones((4, 3)), delta=0.1)
        assert sys.sizes == (2, 3, 4)
        np.testing.assert_array_equal(sys.delta, [0.1, 0.1])

    def test_feedthrough_forms(self):
        u = np.arange(12.0).reshape(4, 3)
        out = apply_feedthrough(np.array([2.0, 3.0]), u, 2)
        np.testing.assert_array_equal(out, u[:, :2] * [2.0, 3.0])
        out = apply_feedthrough(np.array([1.0, 1.0, 1.0]), u, 5)
        np.testing.assert_array_equal(out[:, :3], u)
        np.testing.assert_array_equal(out[:, 3:], 0.0)
        dense = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(apply_feedthrough(dense, u, 2), u @ dense.T)


class TestDiagonalize:
    def test_toy_eigenvalues(self):
        sys = ContinuousFull(a=TOY_A, b=np.eye(2), c=np.eye(2), d=np.zeros((2, 2)))
        res = diagonalize(sys)
        np.testing.assert_allclose(np.sort(res.lam.real), TOY_EIGS, rtol=1e-14)
        np.testing.assert_allclose(res.lam.imag, 0.0, atol=1e-15)

    def test_already_diagonal(self):
        sys = ContinuousFull(a=np.diag([-1.0, -2.0]), b=[[1.0], [2.0]], c=[[1.0, 1.0]], d=[[0.0]])
        res = diagonalize(sys)
        np.testing.assert_allclose(res.t @ np.diag(res.lam) @ np.linalg.inv(res.t), sys.a, atol=1e-14)
        np.testing.assert_allclose(res.t @ res.b_prime, sys.b, atol=1e-14)
        np.testing.assert_allclose(res.c_prime @ np.linalg.inv(res.t), sys.c, atol=1e-14)

    def test_defective(self):
        sys = ContinuousFull(a=[[-1.0, 1.0], [0.0, -1.0]], b=np.eye(2), c=np.eye(2), d=np.zeros((2, 2)))
        with pytest.raises(NotDiagonalizableError):
            diagonalize(sys)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_reconstruction(self, seed):
        sys = _stable_full(np.random.default_rng(seed), 5, 2, 2)
        res = diagonalize(sys)
        recon = res.t @ np.diag(res.lam) @ np.linalg.inv(res.t)
        assert np.linalg.norm(recon - sys.a) <= 1e-8 * np.linalg.norm(sys.a)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 6), length=st.integers(1, 60))
def test_full_and_diagonal_scans_agree(seed, n, length):
    rng = np.random.default_rng(seed)
    sys = _stable_full(rng, n, 2, 3)
    u = rng.normal(size=(length, 2))
    delta = 0.05
    ref = recurrent_scan_full(discretize_full(sys, delta), u).outputs
    res = diagonalize(sys)
    disc = discretize_zoh(res.lam, res.b_prime, delta)
    out = recurrent_scan_diagonal(disc, res.c_prime, sys.d, u).outputs
    scale = max(np.max(np.abs(ref)), 1e-12)
    assert np.max(np.abs(out - ref)) / scale <= 1e-8


def test_toy_trajectory_equivalence():
    sys = ContinuousFull(a=TOY_A, b=np.eye(2), c=np.eye(2), d=np.zeros((2, 2)))
    t = 0.005 * np.arange(1, 2001)
    u = np.column_stack([np.sin(t), np.cos(2 * t)])
    ref = recurrent_scan_full(discretize_full(sys, 0.005), u).outputs
    res = diagonalize(sys)
    disc = discretize_zoh(res.lam, res.b_prime, 0.005)
    out = recurrent_scan_diagonal(disc, res.c_prime, sys.d, u).outputs
    assert np.max(np.abs(out - ref)) <= 1e-8
