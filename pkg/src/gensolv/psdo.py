"""Grid quantization, Sobolev mapping bounds, and the projection solver.

The quantization (A u)(x_j) = L^-n sum_k a(x_j, xi_k) u_hat(xi_k)
e^{i x_j xi_k} is dense; it is applied matrix-free (per-row contractions)
so n = 2 stays affordable.  The lower bound

    ||phi||_s <= lambda_eps ||A*_eps phi||_{L2(ball)}

is certified on a finite battery of bump-modulated test fields only (a
necessary-condition check: the continuum statement quantifies over all
smooth functions supported in the ball), and the projection solver
realizes the dual construction on a finite test space V: solve the Gram
system <A* v_i, t> = <v_i, F> in span{A* v_i}, reporting dim V and the
condition number so the approximation quality is visible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bpk, nets, symbols
from .errors import AdjointDegenerate, IllConditioned, ProfileFails
from .grids import NetField
from .nets import GenNumber


class LatticeSymbol:
    """a(x, xi, eps) sampled on (grid nodes x frequency lattice) per eps.

    Wraps either a DiffVarSymbol (evaluated exactly) or a callable
    a(eps_value, x_mesh..., xi_point) -> field; carries the order m used by
    Sobolev bookkeeping."""

    def __init__(self, grid, eps, values, order, label="symbol"):
        # values: [n_eps, n_lat, n_x] with n_x = prod(grid.shape)
        self.grid = grid
        self.eps = eps
        self.values = values
        self.order = order
        self.label = label

    @classmethod
    def from_var_symbol(cls, P, grid, eps):
        pts = grid.freq_points()
        vals = P.eval_bank(grid, eps, pts)  # [n_eps, n_lat, *shape]
        return cls(
            grid, eps, vals.reshape(vals.shape[:2] + (-1,)), P.order,
            label="differential",
        )

    @classmethod
    def from_multiplier(cls, fn, grid, eps, order):
        pts = grid.freq_points()
        mult = np.asarray(fn(pts), dtype=complex)  # [n_lat]
        n_x = int(np.prod(grid.shape))
        vals = np.broadcast_to(
            mult[None, :, None], (len(eps), pts.shape[0], n_x)
        ).copy()
        return cls(grid, eps, vals, order, label="multiplier")

    @classmethod
    def from_callable(cls, fn, grid, eps, order, label="sampled"):
        pts = grid.freq_points()
        mesh = grid.node_mesh()
        rows = []
        for e in eps.values:
            per_k = [np.asarray(fn(e, mesh, xi), dtype=complex).ravel() for xi in pts]
            rows.append(np.stack(per_k))
        return cls(grid, eps, np.stack(rows), order, label=label)


class DenseOp:
    """Per-eps quantized operator with matrix-free apply and exact adjoint
    (conjugate-transpose action in the quadrature inner product)."""

    def __init__(self, symbol):
        self.symbol = symbol
        grid = symbol.grid
        pts = grid.freq_points()
        mesh = grid.node_mesh()
        phase = np.tensordot(pts, np.stack([m.ravel() for m in mesh]), axes=(1, 0))
        self._waves = np.exp(1j * phase)  # [n_lat, n_x]
        # A_e[k, x] = a(x, xi_k) e^{i x xi_k}
        self._A = symbol.values * self._waves[None, ...]

    @property
    def grid(self):
        return self.symbol.grid

    @property
    def eps(self):
        return self.symbol.eps

    def apply(self, fields):
        """fields: [n_eps] + grid.shape -> same shape."""
        grid = self.grid
        n_eps = len(self.eps)
        spec = grid.forward(fields).reshape(n_eps, -1)
        out = np.stack([self._A[e].T @ spec[e] for e in range(n_eps)])
        return out.reshape((n_eps,) + grid.shape) / grid.period**grid.dim

    def apply_adjoint(self, fields):
        grid = self.grid
        n_eps = len(self.eps)
        flat = fields.reshape(n_eps, -1)
        s = np.stack([np.conj(self._A[e]) @ flat[e] for e in range(n_eps)])
        return grid.inverse(s.reshape((n_eps,) + grid.shape)) * grid.cell_volume

    def apply_one(self, e, field):
        grid = self.grid
        spec = grid.forward(field).ravel()
        return (self._A[e].T @ spec).reshape(grid.shape) / grid.period**grid.dim

    def apply_adjoint_one(self, e, field):
        grid = self.grid
        s = np.conj(self._A[e]) @ field.ravel()
        return grid.inverse(s.reshape(grid.shape)) * grid.cell_volume


def quantize(a, grid=None, eps=None):
    """Quantize a symbol: accepts a LatticeSymbol, or a DiffVarSymbol with
    (grid, eps).  Reduces exactly to a Fourier multiplier when the symbol
    is x-independent."""
    if isinstance(a, LatticeSymbol):
        return DenseOp(a)
    return DenseOp(LatticeSymbol.from_var_symbol(a, grid, eps))


def sobolev_bound(op, s, m, n_fields=12, seed=0, decay=3.0):
    """Measured sup over a random smooth-field battery of
    ||A u||_{s-m} / ||u||_s per eps, with the moderateness class of the
    constant net (the measured surrogate for the composed-symbol
    seminorm)."""
    from .grids import random_smooth_field

    grid = op.grid
    eps = op.eps
    rng = np.random.default_rng(seed)
    best = np.zeros(len(eps))
    for _ in range(n_fields):
        u = random_smooth_field(grid, rng, decay=decay)
        fields = np.broadcast_to(u.values, (len(eps),) + grid.shape).copy()
        Au = op.apply(fields)
        den = bpk.sobolev_norm(u, s)
        for e in range(len(eps)):
            from .grids import GridField

            num = bpk.sobolev_norm(GridField(grid, Au[e]), s - m)
            best[e] = max(best[e], num / max(den, 1e-300))
    report = nets.classify(GenNumber(eps, best.astype(complex)))
    return best, report


def test_battery(grid, delta, x0=None, count=32, max_mode=None):
    """Bump-modulated lattice-mode battery supported in |x - x0| < delta.

    The battery size is capped at the number of grid nodes inside the bump
    support: more modes than nodes cannot be independent after
    restriction, and the Gram system would be exactly singular."""
    x0 = np.zeros(grid.dim) if x0 is None else np.asarray(x0, dtype=float)
    bump = bpk.cutoff(grid, x0, delta / 2.0).values.real  # support within delta
    resolvable = int(np.sum(bump > 1e-14))
    count = max(1, min(count, resolvable))
    pts = grid.freq_points()
    mags = np.linalg.norm(pts, axis=1)
    cap = grid.nyquist / 2.0 if max_mode is None else max_mode
    order = np.argsort(mags)
    mesh = grid.node_mesh()
    fields = []
    for k in order:
        if mags[k] > cap or len(fields) >= count:
            break
        phase = sum(pts[k][d] * mesh[d] for d in range(grid.dim))
        fields.append(bump * np.exp(1j * phase))
    out = np.stack(fields)
    # restricted exponentials are prolate-like and go numerically dependent
    # fast; keep the pivoted-QR independent subset
    import scipy.linalg as sla

    B = out.reshape(len(fields), -1).T
    _, R, piv = sla.qr(B, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    keep = piv[diag >= 1e-4 * diag[0]]
    return out[np.sort(keep)]


@dataclass
class InvSobReport:
    lambda_net: GenNumber
    verdict: bool
    lambda_class: nets.ModeratenessReport
    worst_index: int
    battery_size: int
    certified_on_battery: bool = True  # necessary-condition check only
    small_support_ok: bool = True


def check_inv_sob(op, delta, s, battery=None, x0=None):
    """lambda_eps = max over the battery of ||phi||_s / ||A*_eps phi||_0
    (restricted to the delta-ball); verdict = lambda net Moderate.

    Also asserts the small-support inequality ||phi||_m <= 2 delta
    ||phi||_{m+1} for every battery element.  Raises AdjointDegenerate when
    A* annihilates a test function."""
    from .grids import GridField

    grid = op.grid
    eps = op.eps
    x0 = np.zeros(grid.dim) if x0 is None else np.asarray(x0, dtype=float)
    if battery is None:
        battery = test_battery(grid, delta, x0)
    mask = grid.ball_mask(x0, delta)
    lam = np.zeros(len(eps))
    worst = 0
    small_ok = True
    for i, phi_vals in enumerate(battery):
        phi = GridField(grid, phi_vals)
        num = bpk.sobolev_norm(phi, s)
        for mm in (0.0, 1.0):
            if bpk.sobolev_norm(phi, mm) > 2.0 * delta * bpk.sobolev_norm(phi, mm + 1.0) * (
                1 + 1e-12
            ):
                small_ok = False
        fields = np.broadcast_to(phi_vals, (len(eps),) + grid.shape).copy()
        Astar = op.apply_adjoint(fields)
        Astar = np.where(mask[None, ...], Astar, 0.0)
        dens = grid.l2_norm(Astar)
        if np.any(dens <= 1e-14 * max(np.max(np.abs(phi_vals)), 1e-300)):
            raise AdjointDegenerate(
                f"adjoint annihilates battery element {i}; lambda infinite"
            )
        ratios = num / dens
        if np.max(ratios) > np.max(lam):
            worst = i
        lam = np.maximum(lam, ratios)
    rep = nets.classify(GenNumber(eps, lam.astype(complex)))
    return InvSobReport(
        lambda_net=GenNumber(eps, lam.astype(complex)),
        verdict=rep.is_moderate,
        lambda_class=rep,
        worst_index=worst,
        battery_size=len(battery),
        small_support_ok=small_ok,
    )


@dataclass
class RealPartProfile:
    b: float
    c0: float
    order: float
    residual_order_ok: bool
    residual_exponent: float


def real_part_profile(a, grid, eps, xi_bank=None):
    """Fit Re a_eps(x, xi) = c0 eps^b <xi>^m + lower order.

    The constant is fitted on large-|xi| samples; the residual must have
    fitted xi-order <= m - 1 with eps exponent >= b."""
    from . import varsym

    bank = varsym.fit_bank(a.dim) if xi_bank is None else xi_bank
    mags = np.linalg.norm(np.atleast_2d(bank), axis=1)
    far = mags >= np.percentile(mags, 60)
    vals = a.eval_bank(grid, eps, np.atleast_2d(bank)[far])
    w = (1.0 + mags[far] ** 2) ** (a.order / 2.0)
    axes = tuple(range(2, 2 + grid.dim))
    # x-averaged large-xi constant per eps
    ratio = np.real(vals) / w[None, :].reshape((1, -1) + (1,) * grid.dim)
    c_eps = np.mean(ratio, axis=(1,) + axes)
    if np.any(c_eps <= 0.0):
        raise ProfileFails("real part is not positive at large xi", condition="re")
    rep = nets.classify(GenNumber(eps, c_eps.astype(complex)))
    b = rep.fitted_exponent
    c0 = float(np.exp(np.mean(np.log(c_eps / eps.values**b))))
    # residual order check: Re a - c0 eps^b <xi>^m must be one order lower
    scale = (eps.values**b).reshape((-1, 1) + (1,) * grid.dim)
    lead = c0 * scale * ((1.0 + mags**2) ** (a.order / 2.0))[None, :].reshape(
        (1, -1) + (1,) * grid.dim
    )
    resid = np.real(a.eval_bank(grid, eps, np.atleast_2d(bank))) - lead
    sup_r = np.max(
        np.abs(resid)
        / ((1.0 + mags**2) ** ((a.order - 1) / 2.0))[None, :].reshape(
            (1, -1) + (1,) * grid.dim
        ),
        axis=(1,) + axes,
    )
    rel = sup_r / np.maximum(c0 * eps.values**b, 1e-300)
    if np.all(rel <= 1e-10):
        # leading term cancels to roundoff: nothing left to classify
        ok, r_exp = True, np.inf
    else:
        r_exp = nets.classify(
            GenNumber(eps, np.maximum(sup_r, 1e-300).astype(complex))
        ).fitted_exponent
        ok = r_exp >= b - 0.25
    return RealPartProfile(
        b=float(b), c0=c0, order=float(a.order),
        residual_order_ok=bool(ok), residual_exponent=float(r_exp),
    )


@dataclass
class WeakSolveReport:
    solution: NetField
    weak_residual: np.ndarray  # per-eps relative weak-identity residual
    strong_residual: np.ndarray  # per-eps strong residual on the ball
    condition_numbers: np.ndarray
    dim_V: int
    solution_norms: GenNumber
    solution_class: nets.ModeratenessReport
    bound_ok: bool  # ||t||_2 <= 2 lambda ||F||_{-s} + floor


def weak_solve(op, F, delta, s, x0=None, battery=None, ridge=1e-12,
               cond_cap=1e12, inv_sob=None):
    """Projection solver: find t_eps in span{A* v_i} with
    <A* v_i, t>_{ball} = <v_i, F> for all test fields v_i.

    Normal equations with a ridge floor; raises IllConditioned when the
    Gram condition number exceeds the cap (reported with the inv_Sob
    margin)."""
    from .grids import GridField

    grid = op.grid
    eps = op.eps
    x0 = np.zeros(grid.dim) if x0 is None else np.asarray(x0, dtype=float)
    if battery is None:
        battery = test_battery(grid, delta, x0)
    mask = grid.ball_mask(x0, delta)
    n_eps = len(eps)
    n_v = len(battery)
    # A* v_i restricted to the ball, per eps
    Astar = np.zeros((n_eps, n_v) + grid.shape, dtype=complex)
    for i, phi in enumerate(battery):
        fields = np.broadcast_to(phi, (n_eps,) + grid.shape).copy()
        out = op.apply_adjoint(fields)
        Astar[:, i] = np.where(mask[None, ...], out, 0.0)
    h = grid.cell_volume
    flatA = Astar.reshape(n_eps, n_v, -1)
    G = h * flatA @ np.conj(np.swapaxes(flatA, 1, 2))  # [n_eps, n_v, n_v]
    rhs = h * np.einsum(
        "vx,ex->ev", np.conj(np.stack([b.ravel() for b in battery])),
        F.values.reshape(n_eps, -1),
    )
    t_vals = np.zeros((n_eps,) + grid.shape, dtype=complex)
    cond = np.zeros(n_eps)
    weak_res = np.zeros(n_eps)
    margin = None if inv_sob is None else np.abs(inv_sob.lambda_net.samples)
    for e in range(n_eps):
        Ge = G[e]
        evals = np.linalg.eigvalsh(Ge)
        lo = max(evals[0], 1e-300)
        cond[e] = float(evals[-1] / lo)
        if cond[e] > cond_cap:
            raise IllConditioned(
                f"Gram condition number {cond[e]:.3e} exceeds {cond_cap:g} "
                f"at eps index {e}",
                condition_number=cond[e],
                margin=None if margin is None else float(margin[e]),
            )
        reg = Ge + np.eye(n_v) * (ridge * np.trace(Ge).real / n_v)
        # t = sum_i conj(c_i) A* v_i with G^T conj(c) = rhs; solve directly
        coef = np.linalg.solve(reg, rhs[e])
        t_vals[e] = np.tensordot(np.conj(coef), Astar[e], axes=(0, 0))
        check = h * flatA[e] @ np.conj(t_vals[e].ravel())
        scale = max(float(np.max(np.abs(rhs[e]))), 1e-300)
        weak_res[e] = float(np.max(np.abs(check - rhs[e]))) / scale
    # strong residual on the ball (diagnostic; weak identity is the contract)
    At = op.apply(t_vals)
    diff = np.where(mask[None, ...], At - F.values, 0.0)
    strong = grid.l2_norm(diff) / np.maximum(grid.l2_norm(F.values), 1e-300)
    t_norms = grid.l2_norm(t_vals)
    t_class = nets.classify(GenNumber(eps, t_norms.astype(complex)))
    bound_ok = True
    if inv_sob is not None:
        f_neg = np.array(
            [bpk.sobolev_norm(GridField(grid, F.values[e]), -s) for e in range(n_eps)]
        )
        bound_ok = bool(
            np.all(
                t_norms
                <= 2.0 * np.abs(inv_sob.lambda_net.samples) * f_neg + 1e-9
            )
        )
    return WeakSolveReport(
        solution=NetField(grid, eps, t_vals),
        weak_residual=weak_res,
        strong_residual=strong,
        condition_numbers=cond,
        dim_V=n_v,
        solution_norms=GenNumber(eps, t_norms.astype(complex)),
        solution_class=t_class,
        bound_ok=bound_ok,
    )
