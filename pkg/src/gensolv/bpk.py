"""Weighted spectral norms, tempered weights, and the cutoff toolbox.

Norm convention (fixed; the exactness tests pin it):

    ||u||_{p,k} = (2 pi)^{-n} ( sum_k |k(xi) F(u)(xi)|^p (2 pi / L)^n )^{1/p}
    ||u||_{inf,k} = sup_k |k(xi) F(u)(xi)|

The p = infinity norm carries no (2 pi)^{-n} prefactor: with this pairing
the convolution bound ||u*v||_{p,k1 k2} <= ||u||_{p,k1} ||v||_{inf,k2} and
the multiplication bound ||phi u||_{p,k} <= ||phi||_{1,M_k} ||u||_{p,k}
hold with constant exactly 1 on the lattice, so inequalities transfer with
their printed constants.  Sobolev norms rescale the (2,k) norm so that
s = 0 is the plain L2 norm.
"""

from __future__ import annotations

import numpy as np

from .errors import DeltaTooLarge
from .grids import GridField

#: window cutoff for the smoothed-weight lattice sup: e^{-nu |eta|} below
#: ~4e-18 is irrelevant at double precision
K_NU_WINDOW = 40.0


class WeightFn:
    """A tempered weight k > 0 on frequency space.

    Power weights <xi>^s carry their exponent so closed forms (M_k, duals)
    stay exact; generic weights fall back to lattice maximization.
    """

    def __init__(self, fn, kind="generic", power=None, label=None):
        self._fn = fn
        self.kind = kind
        self.power = power
        self.label = label or kind

    @classmethod
    def bracket_power(cls, s):
        """k(xi) = <xi>^s = (1 + |xi|^2)^{s/2}."""
        s = float(s)

        def fn(pts):
            pts = np.atleast_2d(pts)
            return (1.0 + np.sum(pts**2, axis=-1)) ** (s / 2.0)

        return cls(fn, kind="power", power=s, label=f"<xi>^{s:g}")

    @classmethod
    def one(cls):
        return cls.bracket_power(0.0)

    @classmethod
    def from_callable(cls, fn, label="custom"):
        return cls(fn, kind="generic", label=label)

    def __call__(self, pts):
        """Evaluate on points [m, dim] (or a bare [dim] point)."""
        return self._fn(np.atleast_2d(np.asarray(pts, dtype=float)))

    def on_grid(self, grid, shift=None):
        """Values on the full frequency lattice, grid-shaped."""
        pts = grid.freq_points(shift)
        return self(pts).reshape(grid.shape)

    def __mul__(self, other):
        if isinstance(other, WeightFn):
            if self.kind == "power" and other.kind == "power":
                return WeightFn.bracket_power(self.power + other.power)
            return WeightFn(
                lambda pts: self(pts) * other(pts),
                label=f"({self.label})*({other.label})",
            )
        return NotImplemented

    def certificate(self, samples_xi, samples_eta):
        """Measure (C, N) with k(xi+eta) <= (1+C|xi|)^N k(eta) on samples.

        N is |power| for power weights, else fitted; returns (C, N)."""
        xis = np.atleast_2d(samples_xi)
        etas = np.atleast_2d(samples_eta)
        if self.kind == "power":
            N = abs(self.power)
        else:
            # crude growth order: slope of log k along rays
            r = np.linspace(1.0, 100.0, 8)
            probe = r[:, None] * (xis[0] / max(np.linalg.norm(xis[0]), 1e-9))
            N = max(float(np.polyfit(np.log(r), np.log(self(probe)), 1)[0]), 0.0)
        if N == 0:
            return 0.0, 0.0
        best = 0.0
        k_eta = self(etas)
        for xi in xis:
            nx = np.linalg.norm(xi)
            if nx == 0:
                continue
            ratio = self(xi[None, :] + etas) / k_eta
            need = (np.max(ratio) ** (1.0 / N) - 1.0) / nx
            best = max(best, float(need))
        return max(best, 0.0), N


def bpk_norm(u, p, k, shift=None):
    """Weighted spectral norm of a GridField (see module docstring)."""
    grid = u.grid
    spec = u.spectrum(shift)
    kv = k.on_grid(grid, shift)
    weighted = np.abs(kv * spec)
    n = grid.dim
    if np.isinf(p):
        return float(np.max(weighted))
    w_xi = (2.0 * np.pi / grid.period) ** n
    return float(
        (2.0 * np.pi) ** (-n) * (np.sum(weighted**p) * w_xi) ** (1.0 / p)
    )


def sobolev_norm(u, s, shift=None):
    """H^s norm: the (2, <xi>^s) norm rescaled so s = 0 is the L2 norm."""
    n = u.grid.dim
    return (2.0 * np.pi) ** (n / 2.0) * bpk_norm(u, 2, WeightFn.bracket_power(s), shift)


def k_nu(k, nu, grid):
    """Smoothed weight k_nu(xi) = sup_eta e^{-nu |eta|} k(xi - eta), maximized
    over lattice offsets within |eta| <= 40/nu."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    if k.kind == "power" and k.power == 0:
        return k  # constant weight: the sup is attained at eta = 0
    step = grid.freq_step
    reach = min(K_NU_WINDOW / nu, grid.nyquist * grid.dim)
    half = int(np.ceil(reach / step))
    axes = [np.arange(-half, half + 1) * step] * grid.dim
    mesh = np.meshgrid(*axes, indexing="ij")
    etas = np.stack([m.ravel() for m in mesh], axis=-1)
    keep = np.linalg.norm(etas, axis=1) <= reach
    etas = etas[keep]
    damp = np.exp(-nu * np.linalg.norm(etas, axis=1))

    def fn(pts):
        pts = np.atleast_2d(pts)
        out = np.empty(pts.shape[0])
        chunk = max(1, int(2e6 / max(etas.shape[0], 1)))
        for i in range(0, pts.shape[0], chunk):
            block = pts[i : i + chunk]  # [b, dim]
            shifted = block[:, None, :] - etas[None, :, :]
            vals = k(shifted.reshape(-1, pts.shape[1])).reshape(
                block.shape[0], etas.shape[0]
            )
            out[i : i + chunk] = np.max(vals * damp[None, :], axis=1)
        return out

    return WeightFn(fn, kind="smoothed", label=f"({k.label})_nu={nu:g}")


def m_k(k, grid=None):
    """M_k(xi) = sup_eta k(xi + eta)/k(eta).

    Power weights use the closed form <xi>^{|s|} (exact up to the Peetre
    factor 2^{|s|/2}, see tests); generic weights maximize over the grid's
    frequency lattice."""
    if k.kind == "power":
        return WeightFn.bracket_power(abs(k.power))
    if grid is None:
        raise ValueError("lattice maximization needs a grid")
    etas = grid.freq_points()
    k_eta = k(etas)

    def fn(pts):
        pts = np.atleast_2d(pts)
        out = np.empty(pts.shape[0])
        for i, xi in enumerate(pts):
            out[i] = np.max(k(xi[None, :] + etas) / k_eta)
        return out

    return WeightFn(fn, kind="sup-ratio", label=f"M_({k.label})")


def m_k_lattice_sup(k, grid, pts):
    """Brute-force lattice sup of k(xi+eta)/k(eta): the oracle for m_k."""
    etas = grid.freq_points()
    k_eta = k(etas)
    pts = np.atleast_2d(pts)
    return np.array([np.max(k(xi[None, :] + etas) / k_eta) for xi in pts])


def _smoothstep(t):
    """C^inf step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        g0 = np.where(t > 0.0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
        g1 = np.where(t < 1.0, np.exp(-1.0 / np.maximum(1.0 - t, 1e-300)), 0.0)
    return g0 / (g0 + g1)


def bump_profile(r):
    """psi(r): exactly 1 for r <= 1, exactly 0 for r >= 2, smooth between."""
    return _smoothstep(2.0 - np.asarray(r, dtype=float))


def cutoff(grid, x0, delta):
    """Smooth bump: 1 on |x - x0| <= delta, 0 beyond 2 delta (torus metric).

    Raises DeltaTooLarge when the support does not fit in a half period."""
    if 2.0 * delta >= grid.period / 2.0:
        raise DeltaTooLarge(
            f"cutoff support 2*delta = {2 * delta:g} exceeds half period "
            f"{grid.period / 2:g}"
        )
    r = grid.torus_distance(x0) / delta
    return GridField(grid, bump_profile(r).astype(complex))


def excision(grid_or_pts, radius, shift=None):
    """Frequency-side excision: 0 for |xi| <= R, 1 for |xi| >= 2R.

    Accepts a TorusGrid (returns lattice-shaped values) or a point array."""
    if hasattr(grid_or_pts, "freq_magnitude"):
        mag = grid_or_pts.freq_magnitude(shift)
    else:
        mag = np.linalg.norm(np.atleast_2d(grid_or_pts), axis=-1)
    if radius <= 0:
        return np.ones_like(mag)
    return _smoothstep(mag / radius - 1.0)
