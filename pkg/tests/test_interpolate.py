import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from interplab.errors import ConfigError, ShapeError
from interplab.homonet import HomoNet, error_rate, mean_loss
from interplab.interpolate import (Curve, CurvePoint, InterpSpec, eval_curve, evaluate_point,
                                   interp_params, plateau_length, uniform_grid)
from interplab.mlpnet import mlp_error_rate, mlp_init, mlp_mean_loss


def _homo_pair(rng, k=3, d=5, r=3):
    a = HomoNet(np.abs(rng.normal(0, 0.1, (k, d))), np.zeros(k), r)
    b = HomoNet(rng.normal(0, 1.0, (k, d)), rng.normal(0, 1.0, k), r)
    return a, b


def _mlp_pair(rng, mode="last"):
    a = mlp_init((5, 6, 4, 3), "relu", mode, 0)
    b = mlp_init((5, 6, 4, 3), "relu", mode, 1)
    b = b.replace(biases=tuple(rng.normal(0, 1.0, v.shape) for v in b.biases))
    return a, b


def _curve(errors, k=4, n=100):
    alphas = uniform_grid(len(errors))
    pts = tuple(CurvePoint(float(a), 1.0, e, int(round(e * n)), (n,) + (0,) * (k - 1))
                for a, e in zip(alphas, errors))
    return Curve(pts, "homo", "linear", n, k)


class TestGrid:
    def test_uniform_endpoints(self):
        g = uniform_grid(101)
        assert g[0] == 0.0 and g[-1] == 1.0 and g[50] == 0.5

    @pytest.mark.parametrize("alphas", [(0.0, 0.5), (0.1, 1.0), (0.0, 0.5, 0.5, 1.0), (0.0, 0.7, 0.3, 1.0), (0.0,)])
    def test_invalid_spec(self, alphas):
        with pytest.raises(ConfigError):
            InterpSpec(alphas)

    def test_invalid_mode(self):
        with pytest.raises(ConfigError):
            InterpSpec((0.0, 1.0), "cubic")
        with pytest.raises(ConfigError):
            uniform_grid(1)


class TestInterpParams:
    @pytest.mark.parametrize("mode", ["linear", "homogeneous_bias"])
    def test_endpoints_exact_homo(self, mode, rng):
        a, b = _homo_pair(rng)
        m0, m1 = interp_params(a, b, 0.0, mode), interp_params(a, b, 1.0, mode)
        assert m0.W.tobytes() == a.W.tobytes() and m0.b.tobytes() == a.b.tobytes()
        assert m1.W.tobytes() == b.W.tobytes() and m1.b.tobytes() == b.b.tobytes()

    @pytest.mark.parametrize("mode", ["linear", "homogeneous_bias"])
    def test_endpoints_exact_mlp(self, mode, rng):
        a, b = _mlp_pair(rng, "all")
        for alpha, ref in ((0.0, a), (1.0, b)):
            m = interp_params(a, b, alpha, mode)
            assert all(x.tobytes() == y.tobytes() for x, y in zip(m.layers + m.biases, ref.layers + ref.biases))

    def test_linear_scalar(self):
        a = HomoNet(np.array([[2.0]]), np.array([2.0]), 3)
        b = HomoNet(np.array([[6.0]]), np.array([6.0]), 3)
        m = interp_params(a, b, 0.25)
        assert m.W[0, 0] == 3.0 and m.b[0] == 3.0

    def test_homogeneous_depth_two(self):
        a = mlp_init((2, 2, 1), "identity", "all", 0)
        b = a.replace(biases=(np.zeros(2), np.array([4.0])))
        m = interp_params(a, b, 0.5, "homogeneous_bias")
        assert m.biases[1][0] == 1.0

    @given(alpha=st.floats(0, 1), r=st.integers(3, 7))
    def test_homo_bias_degree_law(self, alpha, r):
        W = np.ones((2, 3))
        bT = np.array([0.75, -1.5])
        m = interp_params(HomoNet(W, np.zeros(2), r), HomoNet(W, bT, r), alpha, "homogeneous_bias")
        np.testing.assert_array_equal(m.b, alpha ** r * bT)

    @given(alpha=st.floats(0, 1))
    def test_mlp_last_bias_degree_law(self, alpha):
        a = mlp_init((3, 4, 4, 2), "relu", "last", 0)
        bT = np.array([0.3, -2.0])
        b = a.replace(biases=a.biases[:-1] + (bT,))
        m = interp_params(a, b, alpha, "homogeneous_bias")
        np.testing.assert_array_equal(m.biases[-1], alpha ** 3 * bT)

    def test_weights_linear_in_both_modes(self, rng):
        a, b = _homo_pair(rng)
        for alpha in (0.1, 0.37, 0.9):
            lin = interp_params(a, b, alpha, "linear")
            hom = interp_params(a, b, alpha, "homogeneous_bias")
            assert lin.W.tobytes() == hom.W.tobytes()

    def test_architecture_mismatch(self, rng):
        a, _ = _homo_pair(rng)
        with pytest.raises(ShapeError):
            interp_params(a, HomoNet(np.ones((3, 5)), np.zeros(3), 4), 0.5)
        with pytest.raises(ShapeError):
            interp_params(a, mlp_init((5, 3), "relu"), 0.5)
        with pytest.raises(ShapeError):
            interp_params(mlp_init((5, 3), "relu"), mlp_init((5, 4, 3), "relu"), 0.5)
        with pytest.raises(ConfigError):
            interp_params(a, a, 0.5, "cubic")


class TestEvalCurve:
    @pytest.mark.parametrize("mode", ["linear", "homogeneous_bias"])
    def test_endpoints_match_direct_homo(self, mode, small_ds, rng):
        a, b = _homo_pair(rng)
        c = eval_curve(a, b, small_ds, InterpSpec.uniform(11, mode))
        assert c.points[0].mean_loss == pytest.approx(mean_loss(a, small_ds), rel=1e-12)
        assert c.points[-1].mean_loss == pytest.approx(mean_loss(b, small_ds), rel=1e-12)
        assert c.points[0].error == error_rate(a, small_ds)
        assert c.points[-1].error == error_rate(b, small_ds)

    def test_endpoints_match_direct_mlp(self, small_ds, rng):
        a, b = _mlp_pair(rng)
        c = eval_curve(a, b, small_ds, InterpSpec.uniform(5))
        assert c.model_kind == "mlp"
        assert c.points[0].mean_loss == pytest.approx(mlp_mean_loss(a, small_ds), rel=1e-12)
        assert c.points[-1].mean_loss == pytest.approx(mlp_mean_loss(b, small_ds), rel=1e-12)
        assert c.points[-1].error == mlp_error_rate(b, small_ds)

    def test_modes_agree_at_endpoints(self, small_ds, rng):
        a, b = _homo_pair(rng)
        lin = eval_curve(a, b, small_ds, InterpSpec.uniform(5, "linear"))
        hom = eval_curve(a, b, small_ds, InterpSpec.uniform(5, "homogeneous_bias"))
        for j in (0, -1):
            assert lin.points[j] == hom.points[j]

    def test_constant_when_endpoints_equal(self, small_ds, rng):
        a, _ = _homo_pair(rng)
        c = eval_curve(a, a, small_ds, InterpSpec.uniform(21))
        assert len(set(c.losses)) == 1 and len(set(c.errors)) == 1

    def test_grid_refinement_consistent(self, small_ds, rng):
        a, b = _homo_pair(rng)
        coarse = eval_curve(a, b, small_ds, InterpSpec.uniform(50))
        fine = eval_curve(a, b, small_ds, InterpSpec.uniform(491))
        # j/49 on the coarse grid is 10j/490 on the fine grid
        for j, p in enumerate(coarse.points):
            q = fine.points[10 * j]
            assert q == p

    def test_invariants(self, small_ds, rng):
        a, b = _homo_pair(rng)
        c = eval_curve(a, b, small_ds, InterpSpec.uniform(31))
        assert len(c.points) == 31
        assert np.all(c.losses >= 0)
        for p in c.points:
            assert p.error == p.n_wrong / small_ds.n and sum(p.pred_counts) == small_ds.n

    def test_deterministic(self, small_ds, rng):
        a, b = _homo_pair(rng)
        spec = InterpSpec.uniform(11, "homogeneous_bias")
        assert eval_curve(a, b, small_ds, spec).to_csv() == eval_curve(a, b, small_ds, spec).to_csv()

    def test_wrong_dimension(self, small_ds):
        a = HomoNet(np.ones((3, 4)), np.zeros(3), 3)
        with pytest.raises(ShapeError):
            eval_curve(a, a, small_ds, InterpSpec.uniform(3))


class TestCurveCsv:
    def test_round_trip(self, small_ds, rng):
        a, b = _homo_pair(rng)
        c = eval_curve(a, b, small_ds, InterpSpec.uniform(17, "homogeneous_bias"))
        text = c.to_csv()
        back = Curve.from_csv(text)
        assert back == c and back.to_csv() == text
        assert back.dataset_digest == small_ds.digest

    def test_header(self, small_ds, rng):
        a, b = _homo_pair(rng)
        lines = eval_curve(a, b, small_ds, InterpSpec.uniform(3)).to_csv().splitlines()
        assert "# model_kind homo" in lines and "# mode linear" in lines and "# grid_size 3" in lines
        assert lines[6] == "alpha,mean_loss,error,n_wrong,pred_c1,pred_c2,pred_c3"

    def test_save_load(self, tmp_path, small_ds, rng):
        a, b = _homo_pair(rng)
        c = eval_curve(a, b, small_ds, InterpSpec.uniform(5))
        assert Curve.load_csv(c.save_csv(tmp_path / "c.csv")) == c


class TestPlateau:
    def test_constant_floor(self):
        assert plateau_length(_curve([0.75] * 51)) == 1.0

    def test_immediate_drop(self):
        assert plateau_length(_curve([0.75] + [0.0] * 50)) == 0.0

    def test_step_at_point_six(self):
        alphas = uniform_grid(51)
        errs = [0.75 if a < 0.6 - 1e-12 else 0.0 for a in alphas]
        assert plateau_length(_curve(errs)) == pytest.approx(0.58, abs=1e-15)

    def test_value_at_zero_ignored(self):
        assert plateau_length(_curve([0.0] + [0.75] * 50)) == 1.0

    def test_tolerance(self):
        errs = [0.75, 0.75, 0.745, 0.0, 0.0]
        assert plateau_length(_curve(errs), 0.01) == 0.5
        assert plateau_length(_curve(errs), 0.001) == 0.25

    def test_stops_at_first_drop(self):
        assert plateau_length(_curve([0.75, 0.75, 0.1, 0.75, 0.75])) == 0.25

    def test_empty(self):
        with pytest.raises(ConfigError):
            plateau_length(Curve((), "homo", "linear", 4, 2))

    def test_evaluate_point_counts(self, clean_ds):
        W = np.zeros((3, 4))
        W[:, :3] = 2 * np.eye(3)
        p = evaluate_point(HomoNet(W, np.zeros(3), 3), clean_ds, 0.5)
        assert p.n_wrong == 0 and p.pred_counts == (2, 2, 2) and p.alpha == 0.5
        assert p.mean_loss == pytest.approx(math.log(1 + 2 * math.exp(-8)), rel=1e-12)
