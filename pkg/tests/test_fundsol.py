"""Tests for shifted-lattice fundamental solutions and the constant-
coefficient solver."""

import numpy as np
import pytest

from gensolv.errors import NoViableShift
from gensolv.fundsol import choose_shift, fundamental_solution, solve_constcoef
from gensolv.grids import GridField, NetField, TorusGrid
from gensolv.nets import EpsGrid, GenNumber
from gensolv.symbols import ConstSymbol

GRID = EpsGrid.default()
T1 = TorusGrid(dim=1, n_points=256, period=8 * np.pi)
T2 = TorusGrid(dim=2, n_points=64, period=8 * np.pi)


def sym(dim, entries):
    return ConstSymbol.from_expressions(dim, entries, GRID)


def dense_circulant_solve(P, grid, eps_index, theta):
    """Dense oracle: materialize the matrix of P_eps(D_theta) column by
    column and solve A e = delta with a direct linear solve."""
    n = grid.n_points
    freqs = grid.axis_freqs() + theta[0]
    symbol_vals = P.eval_many(freqs.reshape(-1, 1))[eps_index]
    A = np.empty((n, n), dtype=complex)
    for c in range(n):
        e = np.zeros(n, dtype=complex)
        e[c] = 1.0
        A[:, c] = grid.inverse_shifted(symbol_vals * grid.forward_shifted(e, theta), theta)
    rhs = grid.delta()
    return np.linalg.solve(A, rhs)


class TestChooseShift:
    def test_no_real_zeros_zero_shift_viable(self):
        P = sym(1, [((2,), 1.0), ((0,), 1.0)])  # xi^2 + 1: no real zeros
        fs = fundamental_solution(P, T1, theta=np.zeros(1))
        assert np.all(fs.residuals <= 1e-12)
        # the argmax rule returns some viable shift within the cell
        theta = choose_shift(P, T1)
        assert np.all(np.abs(theta) <= T1.freq_step)

    def test_zero_at_origin_forces_shift(self):
        P = sym(1, [((1,), 1.0)])  # xi: zero at lattice point 0
        theta = choose_shift(P, T1)
        assert np.linalg.norm(theta) > 0.0
        assert abs(theta[0]) <= T1.freq_step

    def test_hyperbolic_shift_viable(self):
        P = sym(2, [((2, 0), 1.0), ((0, 2), "-1/eps")])
        theta = choose_shift(P, T2)
        fs = fundamental_solution(P, T2, theta)
        # shifted min tracked per eps, net strictly nonzero
        from gensolv.nets import classify

        assert classify(fs.min_symbol).strictly_nonzero

    def test_zero_symbol_not_viable(self):
        P = ConstSymbol(1, {(0,): GenNumber.constant(0.0, GRID)})
        with pytest.raises(NoViableShift):
            choose_shift(P, T1)


class TestFundamentalSolution:
    def test_identity_operator(self):
        P = sym(1, [((0,), 1.0)])
        fs = fundamental_solution(P, T1)
        delta = T1.delta()
        expect = np.broadcast_to(delta, fs.E.values.shape)
        np.testing.assert_allclose(fs.E.values, expect, atol=1e-12)

    def test_helmholtz_residual_and_dense_oracle(self):
        P = sym(1, [((2,), 1.0), ((0,), 1.0)])
        fs = fundamental_solution(P, T1)
        assert np.all(fs.residuals <= 1e-10)
        for i in (0, 12, 24):
            dense = dense_circulant_solve(P, T1, i, fs.theta)
            scale = np.max(np.abs(dense))
            np.testing.assert_allclose(
                fs.E.values[i], dense, atol=1e-10 * scale, rtol=1e-8
            )

    def test_hyperbolic_2d_residuals(self):
        P = sym(2, [((2, 0), 1.0), ((0, 2), "-1/eps")])
        fs = fundamental_solution(P, T2)
        assert np.all(fs.residuals <= 1e-8)

    def test_uniform_weight_constant_finite(self):
        P = sym(1, [((2,), 1.0), ((0,), 1.0)])
        fs = fundamental_solution(P, T1)
        F0, consts = fs.truncated(delta0=T1.period / 16.0)
        assert np.all(np.isfinite(consts))
        assert np.all(consts > 0)


class TestSolveConstCoef:
    def _rhs(self, tg, fn):
        f = GridField.from_function(tg, fn)
        return NetField.constant_in_eps(f, GRID)

    def test_right_inverse(self):
        # v = P(D_theta) w for known w -> recovers w
        P = sym(1, [((2,), 1.0), ((0,), 1.0)])
        fs = fundamental_solution(P, T1)
        w = self._rhs(T1, lambda x: np.exp(-((x / 2.0) ** 2)))
        v_vals = T1.inverse_shifted(
            fs.symbol_lattice * T1.forward_shifted(w.values, fs.theta), fs.theta
        )
        v = NetField(T1, GRID, v_vals)
        u, rep = solve_constcoef(P, v, fs=fs)
        err = T1.l2_norm(u.values - w.values) / T1.l2_norm(w.values)
        assert np.all(err <= 1e-10)
        assert np.all(rep["residuals"] <= 1e-10)

    def test_delta_gives_fundamental_solution(self):
        P = sym(1, [((2,), 1.0), ((0,), 1.0)])
        fs = fundamental_solution(P, T1)
        v = NetField.constant_in_eps(GridField(T1, T1.delta()), GRID)
        u, _ = solve_constcoef(P, v, fs=fs)
        np.testing.assert_allclose(u.values, fs.E.values, atol=1e-12)

    def test_moderateness_transfer(self):
        # ||v_eps|| = eps^-2 with symbol lower bound ~ eps^N:
        # solution norm exponent >= -2 - N
        P = sym(1, [((2,), "eps"), ((0,), "eps")])  # Pw lower bound ~ eps
        fs = fundamental_solution(P, T1)
        base = GridField.from_function(T1, lambda x: np.exp(-((x / 2.0) ** 2)))
        vals = np.stack([(e**-2.0) * base.values for e in GRID.values])
        v = NetField(T1, GRID, vals)
        u, rep = solve_constcoef(P, v, fs=fs)
        assert rep["solution_class"].is_moderate
        assert rep["solution_class"].fitted_exponent >= -3.0 - 0.1

    def test_linearity(self):
        P = sym(1, [((2,), 1.0), ((0,), 1.0)])
        fs = fundamental_solution(P, T1)
        v1 = self._rhs(T1, lambda x: np.exp(-(x**2)))
        v2 = self._rhs(T1, lambda x: np.cos(0.25 * x) * np.exp(-((x / 3.0) ** 2)))
        a, b = 2.0, -1.5j
        u1, _ = solve_constcoef(P, v1, fs=fs)
        u2, _ = solve_constcoef(P, v2, fs=fs)
        mixed = NetField(T1, GRID, a * v1.values + b * v2.values)
        u, _ = solve_constcoef(P, mixed, fs=fs)
        np.testing.assert_allclose(
            u.values, a * u1.values + b * u2.values, atol=1e-12
        )
