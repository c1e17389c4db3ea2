"""Polynomial symbols with net-valued coefficients and their weight functions.

A symbol P(xi) = sum_{|alpha| <= m} c_alpha xi^alpha with c_alpha GenNumbers
on a shared eps grid.  The weight function

    Pw^2(xi) = sum_{|alpha| <= m} |d^alpha P(xi)|^2      (alpha = 0 included)

is the strength measure all order comparisons are built on; Pw(xi, t) is its
t-scaled version sum_alpha |d^alpha P|^2 t^{2|alpha|}.

Sup-type quantities (the translation constant, the characterization of
Pw(xi, t) by local sups of |P|) are measured over finite sample sets and are
therefore lower bounds of the true sups; reports carry the samples used.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import expressions, nets
from .errors import BadT, DegenerateSymbol, DimensionMismatch
from .nets import EpsGrid, GenNumber

#: floor below which a weight value counts as vanished
WEIGHT_FLOOR = 1e-280


def multi_indices_upto(dim, order):
    """All multi-indices alpha with |alpha| <= order, graded lexicographic."""
    out = []
    for total in range(order + 1):
        for alpha in itertools.product(range(total + 1), repeat=dim):
            if sum(alpha) == total:
                out.append(alpha)
    return out


def factorial(alpha):
    return math.prod(math.factorial(a) for a in alpha)


def _falling(n, k):
    """n * (n-1) * ... * (n-k+1)."""
    out = 1
    for i in range(k):
        out *= n - i
    return out


class ConstSymbol:
    """Multivariate polynomial in xi with GenNumber coefficients."""

    def __init__(self, dim, coeffs, grid=None):
        self.dim = int(dim)
        clean = {}
        for alpha, c in coeffs.items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.dim or any(a < 0 for a in alpha):
                raise DimensionMismatch(f"bad multi-index {alpha} for dim {self.dim}")
            if grid is None:
                grid = c.grid
            elif c.grid != grid:
                raise DimensionMismatch("coefficients live on different eps grids")
            clean[alpha] = c
        if grid is None:
            grid = EpsGrid.default()
        self.grid = grid
        self.coeffs = clean
        self.order = max((sum(a) for a in clean), default=0)
        # cached dense layout for evaluation
        self._alphas = np.array(sorted(clean), dtype=int).reshape(len(clean), self.dim)
        self._cmat = np.array(
            [clean[tuple(a)].samples for a in self._alphas], dtype=complex
        ).T if clean else np.zeros((len(grid), 0), dtype=complex)
        self._weight_bundle = None

    # -- construction helpers -------------------------------------------------
    @classmethod
    def from_expressions(cls, dim, entries, grid=None):
        """entries: iterable of (multi_index, eps-expression or number)."""
        grid = grid or EpsGrid.default()
        coeffs = {}
        for alpha, spec in entries:
            if isinstance(spec, GenNumber):
                c = spec
            elif isinstance(spec, str):
                c = GenNumber.from_expression(spec, grid)
            else:
                c = GenNumber.constant(spec, grid)
            key = tuple(int(a) for a in alpha)
            coeffs[key] = coeffs[key] + c if key in coeffs else c
        return cls(dim, coeffs, grid)

    @classmethod
    def monomial(cls, alpha, grid=None, coefficient=1.0):
        grid = grid or EpsGrid.default()
        return cls(len(alpha), {tuple(alpha): GenNumber.constant(coefficient, grid)}, grid)

    @property
    def is_zero(self):
        return not self.coeffs or not np.any(self._cmat)

    def effective_order(self):
        """Largest |alpha| carrying a coefficient with any nonzero sample."""
        orders = [sum(a) for a, c in self.coeffs.items() if np.any(c.samples != 0)]
        return max(orders, default=0)

    # -- algebra ---------------------------------------------------------------
    def __add__(self, other):
        if not isinstance(other, ConstSymbol):
            return NotImplemented
        if other.dim != self.dim or other.grid != self.grid:
            raise DimensionMismatch("symbols not compatible for addition")
        coeffs = dict(self.coeffs)
        for a, c in other.coeffs.items():
            coeffs[a] = coeffs[a] + c if a in coeffs else c
        return ConstSymbol(self.dim, coeffs, self.grid)

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, factor):
        """Multiply every coefficient by a constant or GenNumber."""
        if not isinstance(factor, GenNumber):
            factor = GenNumber.constant(factor, self.grid)
        return ConstSymbol(
            self.dim, {a: c * factor for a, c in self.coeffs.items()}, self.grid
        )

    def __mul__(self, other):
        if not isinstance(other, ConstSymbol):
            return NotImplemented
        if other.dim != self.dim or other.grid != self.grid:
            raise DimensionMismatch("symbols not compatible for product")
        coeffs = {}
        for a, ca in self.coeffs.items():
            for b, cb in other.coeffs.items():
                key = tuple(x + y for x, y in zip(a, b))
                prod = ca * cb
                coeffs[key] = coeffs[key] + prod if key in coeffs else prod
        return ConstSymbol(self.dim, coeffs, self.grid)

    def principal_part(self):
        m = self.order
        return ConstSymbol(
            self.dim, {a: c for a, c in self.coeffs.items() if sum(a) == m}, self.grid
        )

    # -- differentiation and evaluation ----------------------------------------
    def derive(self, alpha):
        """Exact d^alpha in xi; zero symbol when |alpha| exceeds the order."""
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != self.dim:
            raise DimensionMismatch(f"multi-index {alpha} has wrong length")
        coeffs = {}
        for beta, c in self.coeffs.items():
            if any(b < a for a, b in zip(alpha, beta)):
                continue
            factor = math.prod(_falling(b, a) for a, b in zip(alpha, beta))
            key = tuple(b - a for a, b in zip(alpha, beta))
            term = c * float(factor)
            coeffs[key] = coeffs[key] + term if key in coeffs else term
        return ConstSymbol(self.dim, coeffs, self.grid)

    def eval_many(self, xi):
        """Evaluate P_eps at points xi [m, dim] -> complex array [n_eps, m].

        Nested Horner over the variables (exact polynomial evaluation).
        """
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        if xi.shape[1] != self.dim:
            raise DimensionMismatch(f"points have dim {xi.shape[1]}, expected {self.dim}")
        n_eps = len(self.grid)
        if not self.coeffs:
            return np.zeros((n_eps, xi.shape[0]), dtype=complex)
        degs = self._alphas.max(axis=0)
        dense = np.zeros((n_eps,) + tuple(degs + 1), dtype=complex)
        for i, a in enumerate(self._alphas):
            dense[(slice(None),) + tuple(a)] = self._cmat[:, i]
        # fold one variable at a time: after folding axis d the array keeps a
        # trailing point axis
        m = xi.shape[0]
        acc = dense[..., -1]
        acc = np.broadcast_to(acc[..., None], acc.shape + (m,)).copy()
        x_last = xi[:, self.dim - 1]
        for d in range(degs[self.dim - 1] - 1, -1, -1):
            acc = acc * x_last + dense[..., d][..., None]
        for axis in range(self.dim - 2, -1, -1):
            x = xi[:, axis]
            new = acc[..., -1, :]
            for d in range(degs[axis] - 1, -1, -1):
                new = new * x + acc[..., d, :]
            acc = new
        return acc

    def eval(self, xi, eps_index=None):
        """Evaluate at a single point; per-eps vector or one complex value."""
        vals = self.eval_many(np.asarray(xi, dtype=float).reshape(1, -1))[:, 0]
        if eps_index is None:
            return vals
        return complex(vals[eps_index])

    # -- weight functions --------------------------------------------------
    def _bundle(self):
        """All derived symbols indexed by alpha with |alpha| <= order."""
        if self._weight_bundle is None:
            self._weight_bundle = [
                (alpha, self.derive(alpha))
                for alpha in multi_indices_upto(self.dim, self.order)
            ]
        return self._weight_bundle

    def weight_sq_many(self, xi):
        """Pw_eps^2 at points xi [m, dim] -> real array [n_eps, m]."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        out = np.zeros((len(self.grid), xi.shape[0]))
        for _, d in self._bundle():
            if d.is_zero:
                continue
            out += np.abs(d.eval_many(xi)) ** 2
        return out

    def weight_many(self, xi):
        return np.sqrt(self.weight_sq_many(xi))

    def weight_sq(self, xi):
        """Pw^2 at one point as a (real, >= 0) GenNumber."""
        return GenNumber(self.grid, self.weight_sq_many(np.reshape(xi, (1, -1)))[:, 0])

    def weight(self, xi):
        return GenNumber(self.grid, np.sqrt(np.real(self.weight_sq(xi).samples)))

    def weight_t_many(self, xi, t):
        """t-scaled weight Pw_eps(xi, t) at points xi; requires t >= 1."""
        if t < 1.0:
            raise BadT(f"t must be >= 1, got {t}")
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        out = np.zeros((len(self.grid), xi.shape[0]))
        for alpha, d in self._bundle():
            if d.is_zero:
                continue
            out += np.abs(d.eval_many(xi)) ** 2 * float(t) ** (2 * sum(alpha))
        return np.sqrt(out)

    def weight_t(self, xi, t):
        return GenNumber(self.grid, self.weight_t_many(np.reshape(xi, (1, -1)), t)[:, 0])

    def __repr__(self):
        terms = ",".join("".join(map(str, a)) for a in sorted(self.coeffs))
        return f"ConstSymbol(dim={self.dim}, order={self.order}, alphas=[{terms}])"


# -- sample sets ---------------------------------------------------------------

DEFAULT_RADII = tuple(10.0**j for j in range(-1, 5))


def sphere_directions(dim, n=64):
    """Deterministic unit directions: coordinate axes plus a low-discrepancy
    fill (golden angle in 2d, Fibonacci lattice in 3d)."""
    axes = []
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        axes.append(e.copy())
        axes.append(-e)
    if dim == 1:
        return np.array(axes)
    if dim == 2:
        golden = np.pi * (3.0 - np.sqrt(5.0))
        ang = golden * np.arange(n)
        pts = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    elif dim == 3:
        i = np.arange(n) + 0.5
        phi = np.arccos(1 - 2 * i / n)
        theta = np.pi * (1 + 5**0.5) * i
        pts = np.stack(
            [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)],
            axis=1,
        )
    else:
        raise DimensionMismatch("sample directions support dim <= 3")
    return np.concatenate([np.array(axes), pts], axis=0)


def xi_samples(dim, radii=DEFAULT_RADII, n_dirs=64):
    """Log-spaced radii times sphere directions; includes the origin."""
    dirs = sphere_directions(dim, n_dirs)
    pts = [np.zeros((1, dim))]
    for r in radii:
        pts.append(r * dirs)
    return np.concatenate(pts, axis=0)


# -- measured inequality constants ----------------------------------------------


def hoermander_constant(P, samples=None):
    """Smallest C with Pw_eps(xi + eta) <= (1 + C|xi|)^m Pw_eps(eta) over the
    sample pairs and the whole eps grid.  Raises DegenerateSymbol when the
    weight vanishes for some eps."""
    m = max(P.order, 1)
    if samples is None:
        dirs = sphere_directions(P.dim, 16)
        radii = (0.5, 1.0, 4.0, 16.0, 64.0)
        base = np.concatenate([r * dirs for r in radii], axis=0)
        samples = (base, base)
    xis, etas = samples
    xis = np.atleast_2d(xis)
    etas = np.atleast_2d(etas)
    w_eta = P.weight_many(etas)  # [n_eps, n_eta]
    if np.any(w_eta.max(axis=1) <= WEIGHT_FLOOR):
        raise DegenerateSymbol("weight function vanishes identically for some eps")
    best = 0.0
    norms = np.linalg.norm(xis, axis=1)
    for i, xi in enumerate(xis):
        if norms[i] == 0.0:
            continue
        w_sum = P.weight_many(xi[None, :] + etas)  # [n_eps, n_eta]
        ok = w_eta > WEIGHT_FLOOR
        ratio = np.ones_like(w_sum)
        ratio[ok] = w_sum[ok] / w_eta[ok]
        need = (np.max(ratio) ** (1.0 / m) - 1.0) / norms[i]
        best = max(best, float(need))
    return max(best, 0.0)


@dataclass
class WeightInvertibility:
    """Invertibility certificate for the weight at a point, plus a spot check
    of the transported lower bound Pw(xi) >= Pw(xi0) (1 + C|xi0 - xi|)^-m."""

    classification: nets.ModeratenessReport
    strictly_nonzero: bool
    lower_exponent: float
    constant: float
    transport_ok: bool
    worst_margin: float


def weight_invertible_at(P, xi0, check_points=None):
    """Classify the net Pw_eps(xi0); strictly nonzero certifies invertibility."""
    xi0 = np.asarray(xi0, dtype=float).reshape(-1)
    w0 = P.weight(xi0)
    rep = nets.classify(w0)
    transport_ok = True
    margin = np.inf
    const = 0.0
    if rep.strictly_nonzero:
        const = hoermander_constant(P)
        if check_points is None:
            check_points = xi_samples(P.dim, radii=(0.5, 2.0, 8.0, 32.0), n_dirs=16)
        w = P.weight_many(check_points)  # [n_eps, m]
        dist = np.linalg.norm(check_points - xi0[None, :], axis=1)
        bound = w0.samples.real[:, None] * (1.0 + const * dist[None, :]) ** (-P.order)
        # P.weight of a zero symbol is 0 <= bound fails; guard zero
        margin = float(np.min(w - bound * (1.0 - 1e-9)))
        transport_ok = bool(margin >= -1e-12 * max(1.0, np.max(bound)))
    return WeightInvertibility(
        classification=rep,
        strictly_nonzero=rep.strictly_nonzero,
        lower_exponent=rep.lower_exponent,
        constant=const,
        transport_ok=transport_ok,
        worst_margin=margin,
    )


def local_sup_abs(P, xi, t, n_dirs=128, n_radii=16):
    """Discretized sup_{|eta| < t} |P_eps(xi + eta)| (a lower bound of the
    true sup) -> array [n_eps]."""
    dirs = sphere_directions(P.dim, n_dirs)
    radii = t * (np.arange(n_radii) + 0.5) / n_radii
    pts = np.concatenate(
        [np.reshape(xi, (1, -1))] + [np.reshape(xi, (1, -1)) + r * dirs for r in radii],
        axis=0,
    )
    return np.max(np.abs(P.eval_many(pts)), axis=1)
