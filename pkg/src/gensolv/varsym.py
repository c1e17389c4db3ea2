"""Variable-coefficient polynomial symbols a(x, xi, eps) and their seminorms.

A differential symbol is a finite sum of coefficient fields times monomials
in xi.  Seminorms

    |a_eps|^(m)_{alpha,beta} = sup_{x,xi} <xi>^{-m+|alpha|} |d^alpha_xi d^beta_x a|

are measured over the grid nodes and a dedicated xi sample bank that
reaches well beyond the torus Nyquist radius (asymptotic decay in xi is
invisible on the lattice alone).  xi-derivatives are exact polynomial
operations; x-derivatives are exact for expression-backed coefficients and
spectral for sampled ones.
"""

from __future__ import annotations

import math

import numpy as np

from . import symbols
from .bptype import CoeffField
from .errors import DimensionMismatch

#: radii of the default seminorm sample bank
FIT_RADII = (1.0, 4.0, 16.0, 64.0, 256.0, 1024.0, 4096.0)


def fit_bank(dim, radii=FIT_RADII, n_dirs=8):
    """xi sample points for seminorm fits: radii x directions (axes always
    included), plus the origin-adjacent shell."""
    dirs = symbols.sphere_directions(dim, n_dirs)
    pts = [0.5 * dirs]
    for r in radii:
        pts.append(r * dirs)
    return np.concatenate(pts, axis=0)


def _falling(n, k):
    out = 1
    for i in range(k):
        out *= n - i
    return out


class DiffVarSymbol:
    """sum_alpha c_alpha(x, eps) xi^alpha with CoeffField coefficients."""

    def __init__(self, dim, coeffs, order=None):
        self.dim = int(dim)
        self.coeffs = {}
        for alpha, cf in coeffs.items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.dim:
                raise DimensionMismatch(f"bad multi-index {alpha}")
            self.coeffs[alpha] = cf
        self.order = order if order is not None else max(
            (sum(a) for a in self.coeffs), default=0
        )

    @classmethod
    def from_expressions(cls, dim, entries):
        """entries: iterable of (multi_index, expression in x/y/eps)."""
        return cls(
            dim,
            {tuple(a): CoeffField.from_expression(text, dim) for a, text in entries},
        )

    def derive_xi(self, gamma):
        """Exact d^gamma_xi; drops annihilated monomials."""
        gamma = tuple(int(g) for g in gamma)
        out = {}
        for alpha, cf in self.coeffs.items():
            if any(a < g for a, g in zip(alpha, gamma)):
                continue
            factor = math.prod(_falling(a, g) for a, g in zip(alpha, gamma))
            key = tuple(a - g for a, g in zip(alpha, gamma))
            out[key] = cf.scaled(float(factor))
        return DiffVarSymbol(self.dim, out, order=max(self.order - sum(gamma), 0))

    def coefficient_values(self, grid, eps, beta=None):
        """{alpha: values [n_eps] + grid.shape}, optionally x-differentiated."""
        out = {}
        for alpha, cf in self.coeffs.items():
            if beta is None or sum(beta) == 0:
                out[alpha] = cf.values_on(grid, eps)
            else:
                out[alpha] = cf.derivative_values(grid, eps, beta)
        return out

    def eval_bank(self, grid, eps, xi_pts, eps_sel=None, beta=None):
        """Values on (eps x xi-bank x grid nodes).

        Returns [n_sel, n_xi] + grid.shape; eps_sel picks a subset of the
        eps grid (used when streaming per eps to bound memory).  The sum
        over monomials is a single tensor contraction."""
        xi_pts = np.atleast_2d(xi_pts)
        cvals = self.coefficient_values(grid, eps, beta)
        sel = slice(None) if eps_sel is None else eps_sel
        n_sel = len(eps.values[sel])
        n_k = xi_pts.shape[0]
        if not cvals:
            return np.zeros((n_sel, n_k) + grid.shape, dtype=complex)
        alphas = list(cvals)
        CV = np.stack([cvals[a][sel].reshape(n_sel, -1) for a in alphas])
        M = np.stack(
            [np.prod(xi_pts ** np.asarray(a)[None, :], axis=1) for a in alphas]
        ).astype(complex)
        # [n_sel, n_x, n_a] @ [n_a, n_k] -> BLAS does the monomial sum
        out = CV.transpose(1, 2, 0) @ M
        return out.transpose(0, 2, 1).reshape((n_sel, n_k) + grid.shape)

    def seminorm(self, grid, eps, xi_pts, alpha, beta, m=None):
        """|a_eps|^(m)_{alpha,beta} measured on the bank -> [n_eps]."""
        m = self.order if m is None else m
        d = self.derive_xi(alpha)
        vals = d.eval_bank(grid, eps, xi_pts, beta=beta)
        mag = np.linalg.norm(np.atleast_2d(xi_pts), axis=1)
        w = (1.0 + mag**2) ** ((-m + sum(alpha)) / 2.0)
        axes = tuple(range(2, 2 + grid.dim))
        return np.max(np.max(np.abs(vals), axis=axes) * w[None, :], axis=1)

    def seminorm_table(self, grid, eps, xi_pts, m=None, max_dxi=2, max_dx=2):
        out = {}
        for alpha in symbols.multi_indices_upto(self.dim, max_dxi):
            for beta in symbols.multi_indices_upto(self.dim, max_dx):
                out[(alpha, beta)] = self.seminorm(grid, eps, xi_pts, alpha, beta, m)
        return out

    def principal_part(self):
        m = self.order
        return DiffVarSymbol(
            self.dim, {a: c for a, c in self.coeffs.items() if sum(a) == m}, order=m
        )

    def _coeff_broadcast(self, cf, grid, eps, sel, values_ndim):
        """Coefficient values shaped to broadcast against fields
        [n_sel, (batch axes...), *grid.shape]."""
        c = cf.values_on(grid, eps)[sel]
        n_batch = values_ndim - 1 - grid.dim
        return c.reshape((c.shape[0],) + (1,) * n_batch + grid.shape)

    def apply(self, grid, eps, values, eps_sel=None):
        """The differential operator on fields [n_sel, ..., *grid.shape]
        (exact spectral monomial derivatives; middle axes batch)."""
        sel = slice(None) if eps_sel is None else eps_sel
        spec = grid.forward(values)
        mesh = grid.freq_mesh()
        out = np.zeros_like(values)
        for alpha, cf in self.coeffs.items():
            mult = np.ones(grid.shape, dtype=complex)
            for mcomp, a in zip(mesh, alpha):
                if a:
                    mult = mult * mcomp**a
            dv = grid.inverse(spec * mult)
            out = out + self._coeff_broadcast(cf, grid, eps, sel, values.ndim) * dv
        return out

    def apply_adjoint(self, grid, eps, values, eps_sel=None):
        """Adjoint in the quadrature inner product:
        (sum c_alpha D^alpha)^* v = sum D^alpha (conj(c_alpha) v)."""
        sel = slice(None) if eps_sel is None else eps_sel
        mesh = grid.freq_mesh()
        out = np.zeros_like(values)
        for alpha, cf in self.coeffs.items():
            w = np.conj(self._coeff_broadcast(cf, grid, eps, sel, values.ndim)) * values
            mult = np.ones(grid.shape, dtype=complex)
            for mcomp, a in zip(mesh, alpha):
                if a:
                    mult = mult * mcomp**a
            out = out + grid.inverse(grid.forward(w) * mult)
        return out
