"""Discrete fundamental solutions of constant-coefficient operators.

The continuum construction is replaced by exact lattice division with a
zero-avoiding shift: a frequency offset theta (at most a frequency step,
shared across eps so the operator P(D_theta) is net-consistent) is chosen
so |P_eps(xi_k + theta)| stays above floor for every eps, and

    E_hat_eps(xi_k + theta) = 1 / P_eps(xi_k + theta)

so P_eps(D_theta) E_eps = delta holds to machine precision per eps.  The
uniform bound on the truncated solution, sup_k Pw_eps(xi_k) |F(chi E)_k|,
is measured and reported rather than assumed; the contraction solver
consumes exactly this constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bpk, nets
from .errors import NoViableShift
from .grids import NetField
from .nets import GenNumber

#: relative residual demanded from the exact division
RESIDUAL_TOL = 1e-10


def _candidate_shifts(grid):
    """theta candidates: 0, half-spacing per axis and diagonals, and 8
    low-discrepancy offsets inside the frequency cell."""
    half = grid.freq_step / 2.0
    cands = [np.zeros(grid.dim)]
    for i in range(grid.dim):
        v = np.zeros(grid.dim)
        v[i] = half
        cands.append(v)
    if grid.dim > 1:
        cands.append(np.full(grid.dim, half))
    # golden-ratio offsets, scaled into (0, freq_step)
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    for j in range(1, 9):
        frac = np.array([(j * phi * (i + 1)) % 1.0 for i in range(grid.dim)])
        cands.append(frac * grid.freq_step)
    return cands


def _symbol_on_lattice(P, grid, theta):
    """P_eps(xi_k + theta) -> array [n_eps] + grid.shape."""
    pts = grid.freq_points(theta)
    return P.eval_many(pts).reshape((len(P.grid),) + grid.shape)


def choose_shift(P, grid):
    """Pick theta maximizing min over lattice and eps of |P|/Pw.

    Ties break toward the smallest |theta|; raises NoViableShift when every
    candidate leaves |P_eps| below the eps^64 floor somewhere."""
    pts0 = grid.freq_points()
    eps = P.grid.values
    tail = P.grid.tail
    # the eps^64 floor is asymptotic: certify it on the small-eps tail
    # (it underflows to 0 for deep eps, where any nonzero passes), and
    # require plain nonzeroness elsewhere
    floor = np.zeros_like(eps)
    floor[tail] = eps[tail] ** 64.0
    best = None
    for theta in _candidate_shifts(grid):
        vals = np.abs(P.eval_many(pts0 + theta[None, :]))  # [n_eps, K]
        if np.any(vals.min(axis=1) <= floor):
            continue
        w = P.weight_many(pts0 + theta[None, :])
        score = float(np.min(vals / np.maximum(w, 1e-300)))
        key = (score, -float(np.linalg.norm(theta)))
        if best is None or key > best[0]:
            best = (key, theta)
    if best is None:
        raise NoViableShift(
            "every candidate shift leaves |P_eps| at the zero floor on the lattice"
        )
    return best[1]


@dataclass
class FundamentalSolution:
    """Per-eps exact fundamental solution on the shifted lattice."""

    grid: object  # TorusGrid
    symbol: object  # ConstSymbol
    theta: np.ndarray
    E: NetField
    min_symbol: GenNumber
    residuals: np.ndarray  # per-eps ||P(D_theta)E - delta||_2 / ||delta||_2
    energy_class: nets.ModeratenessReport
    symbol_lattice: np.ndarray  # P_eps(xi + theta), [n_eps] + grid.shape
    _weight_lattice: np.ndarray = field(default=None, repr=False)

    def weight_lattice(self):
        """Pw_eps(xi_k + theta) on the lattice, [n_eps] + grid.shape."""
        if self._weight_lattice is None:
            pts = self.grid.freq_points(self.theta)
            self._weight_lattice = self.symbol.weight_many(pts).reshape(
                (len(self.symbol.grid),) + self.grid.shape
            )
        return self._weight_lattice

    def uniform_weight_constant(self, F0=None):
        """sup_k Pw_eps(xi_k + theta) |F0_hat(xi_k + theta)| per eps (the
        (inf, Pw) norm in the no-prefactor sup convention)."""
        vals = (self.E if F0 is None else F0).values
        spec = self.grid.forward_shifted(vals, self.theta)
        axes = tuple(range(1, 1 + self.grid.dim))
        return np.max(np.abs(spec) * self.weight_lattice(), axis=axes)

    def truncated(self, delta0):
        """F0 = chi E with chi = 1 on |x| <= 2 delta0 (support 4 delta0),
        plus the measured uniform weight constants per eps."""
        chi = bpk.cutoff(self.grid, np.zeros(self.grid.dim), 2.0 * delta0)
        F0 = NetField(self.grid, self.E.eps, self.E.values * chi.values[None, ...])
        return F0, self.uniform_weight_constant(F0)


def fundamental_solution(P, grid, theta=None):
    """Exact lattice fundamental solution of P(D_theta); verifies the
    residual against the discrete delta per eps."""
    if theta is None:
        theta = choose_shift(P, grid)
    theta = np.asarray(theta, dtype=float)
    sym = _symbol_on_lattice(P, grid, theta)
    if np.any(np.abs(sym) == 0.0):
        raise NoViableShift("shift leaves exact zeros on the lattice")
    E_vals = grid.inverse_shifted(1.0 / sym, theta)
    E = NetField(grid, P.grid, E_vals)
    delta = grid.delta()
    applied = grid.inverse_shifted(sym * grid.forward_shifted(E_vals, theta), theta)
    res = grid.l2_norm(applied - delta[None, ...]) / grid.l2_norm(delta)
    axes = tuple(range(1, 1 + grid.dim))
    min_sym = GenNumber(P.grid, np.min(np.abs(sym), axis=axes).astype(complex))
    energy = nets.classify(GenNumber(P.grid, grid.l2_norm(E_vals).astype(complex)))
    return FundamentalSolution(
        grid=grid,
        symbol=P,
        theta=theta,
        E=E,
        min_symbol=min_sym,
        residuals=res,
        energy_class=energy,
        symbol_lattice=sym,
    )


def solve_constcoef(P, v, grid=None, fs=None):
    """Solve P(D_theta) u = v by exact lattice division.

    v: NetField on the same torus grid.  Returns (u: NetField, report dict
    with per-eps residuals and the moderateness of the solution norms)."""
    if fs is None:
        fs = fundamental_solution(P, grid or v.grid)
    grid = fs.grid
    theta = fs.theta
    v_spec = grid.forward_shifted(v.values, theta)
    u_vals = grid.inverse_shifted(v_spec / fs.symbol_lattice, theta)
    u = NetField(grid, v.eps, u_vals)
    applied = grid.inverse_shifted(
        fs.symbol_lattice * grid.forward_shifted(u_vals, theta), theta
    )
    v_norms = grid.l2_norm(v.values)
    res = grid.l2_norm(applied - v.values) / np.maximum(v_norms, 1e-300)
    u_norms = grid.l2_norm(u_vals)
    report = {
        "residuals": res,
        "solution_norms": u_norms,
        "solution_class": nets.classify(GenNumber(v.eps, u_norms.astype(complex))),
        "rhs_class": nets.classify(GenNumber(v.eps, v_norms.astype(complex))),
        "theta": theta.tolist(),
    }
    return u, report
