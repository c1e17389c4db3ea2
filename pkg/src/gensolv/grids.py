"""Periodic grids, grid fields, and exact discrete Fourier calculus.

Conventions (fixed once, asserted by the Parseval test):

- nodes per axis: x_j = -L/2 + j L/N, j = 0..N-1 (a node sits at 0);
- frequencies per axis: xi_k = (2 pi / L) m, m = -N/2..N/2-1, FFT order;
- forward transform (trapezoid approximation of the continuum transform,
  exact for lattice-resolved trigonometric polynomials):
      F(u)(xi_k) = (L/N)^n sum_j u(x_j) exp(-i x_j xi_k)
- Parseval: ||u||_2^2 = (L/N)^n sum_j |u_j|^2 = L^-n sum_k |F(u)_k|^2.

A real frequency shift theta (|theta| at most half a frequency step per
axis) twists the calculus: the theta-transform of u is the plain transform
of u * exp(-i theta x), and multiplier operators act as multiplication by
symbol(xi_k + theta).  Plain pointwise products and periodic convolutions
are compatible with the twisted calculus, which is what makes the shifted
fundamental-solution division exact.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.fft as _sfft

from .errors import GridMismatch
from .nets import EpsGrid

_WORKERS = max(os.cpu_count() or 1, 1)


def _fftn(values, axes):
    return _sfft.fftn(values, axes=axes, workers=_WORKERS)


def _ifftn(values, axes):
    return _sfft.ifftn(values, axes=axes, workers=_WORKERS)


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on [-L/2, L/2)^dim with N (power of two) nodes
    per axis."""

    dim: int
    n_points: int
    period: float

    def __post_init__(self):
        if self.n_points < 2 or self.n_points & (self.n_points - 1):
            raise ValueError("n_points must be a power of two")
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2, or 3")
        if self.period <= 0:
            raise ValueError("period must be positive")

    @property
    def spacing(self):
        return self.period / self.n_points

    @property
    def shape(self):
        return (self.n_points,) * self.dim

    @property
    def cell_volume(self):
        return self.spacing**self.dim

    @property
    def freq_step(self):
        return 2.0 * np.pi / self.period

    @property
    def nyquist(self):
        return self.freq_step * self.n_points / 2.0

    def axis_nodes(self):
        j = np.arange(self.n_points)
        return -self.period / 2.0 + j * self.spacing

    def axis_freqs(self):
        """Angular frequencies in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.spacing)

    def node_mesh(self):
        """Coordinate arrays, each of grid shape."""
        axes = [self.axis_nodes()] * self.dim
        return np.meshgrid(*axes, indexing="ij")

    def freq_mesh(self, shift=None):
        fr = [self.axis_freqs()] * self.dim
        mesh = np.meshgrid(*fr, indexing="ij")
        if shift is not None:
            shift = np.broadcast_to(np.asarray(shift, dtype=float), (self.dim,))
            mesh = [m + s for m, s in zip(mesh, shift)]
        return mesh

    def freq_points(self, shift=None):
        """Frequency lattice as an array [N^dim, dim]."""
        mesh = self.freq_mesh(shift)
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def freq_magnitude(self, shift=None):
        mesh = self.freq_mesh(shift)
        return np.sqrt(sum(m**2 for m in mesh))

    def _phase_sign(self):
        # exp(-i x_j xi_k) = exp(-2 pi i j m / N) * (-1)^m for our node offset
        m = np.rint(np.fft.fftfreq(self.n_points) * self.n_points).astype(int)
        sign = (-1.0) ** m
        out = sign
        for _ in range(self.dim - 1):
            out = np.multiply.outer(out, sign)
        return out

    # -- transforms ----------------------------------------------------------
    def forward(self, values):
        """Physical-normalization forward transform; trailing `dim` axes are
        the grid axes (leading axes batch, e.g. over eps)."""
        axes = tuple(range(values.ndim - self.dim, values.ndim))
        spec = _fftn(values, axes)
        return self.cell_volume * self._phase_sign() * spec

    def inverse(self, spectrum):
        axes = tuple(range(spectrum.ndim - self.dim, spectrum.ndim))
        vals = _ifftn(self._phase_sign() * spectrum, axes)
        return vals / self.cell_volume

    def _twist(self, shift):
        mesh = self.node_mesh()
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (self.dim,))
        phase = sum(s * m for s, m in zip(shift, mesh))
        return np.exp(-1j * phase)

    def forward_shifted(self, values, shift=None):
        if shift is None:
            return self.forward(values)
        return self.forward(values * self._twist(shift))

    def inverse_shifted(self, spectrum, shift=None):
        if shift is None:
            return self.inverse(spectrum)
        return self.inverse(spectrum) / self._twist(shift)

    def multiplier(self, values, symbol, shift=None):
        """Apply a Fourier multiplier; `symbol` is a callable on the
        frequency mesh or a precomputed spectrum-shaped array."""
        spec = self.forward_shifted(values, shift)
        if callable(symbol):
            symbol = symbol(*self.freq_mesh(shift))
        return self.inverse_shifted(spec * symbol, shift)

    def convolve(self, u, v, shift=None):
        """Periodic quadrature convolution (u * v)(x) = h^n sum u(y) v(x-y)."""
        su = self.forward_shifted(u, shift)
        sv = self.forward_shifted(v, shift)
        return self.inverse_shifted(su * sv, shift)

    # -- geometry -------------------------------------------------------------
    def torus_distance(self, center):
        """Min-image distance from each node to `center`, shape = grid."""
        center = np.broadcast_to(np.asarray(center, dtype=float), (self.dim,))
        mesh = self.node_mesh()
        d2 = np.zeros(self.shape)
        for c, m in zip(center, mesh):
            d = np.abs(m - c)
            d = np.minimum(d, self.period - d)
            d2 += d**2
        return np.sqrt(d2)

    def ball_mask(self, center, radius):
        return self.torus_distance(center) < radius

    # -- norms ------------------------------------------------------------
    def l2_norm(self, values):
        axes = tuple(range(values.ndim - self.dim, values.ndim))
        return np.sqrt(self.cell_volume * np.sum(np.abs(values) ** 2, axis=axes))

    def inner(self, u, v):
        """L2 quadrature inner product <u, v> = h^n sum u conj(v)."""
        axes = tuple(range(u.ndim - self.dim, u.ndim))
        return self.cell_volume * np.sum(u * np.conj(v), axis=axes)

    def delta(self):
        """Unit-mass grid delta at the origin node (x = 0 is node N/2)."""
        out = np.zeros(self.shape, dtype=complex)
        out[(self.n_points // 2,) * self.dim] = 1.0 / self.cell_volume
        return out


class GridField:
    """Complex field sampled on a torus grid.  Immutable by convention."""

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=complex)
        if values.shape != grid.shape:
            raise GridMismatch(f"values shape {values.shape} != grid {grid.shape}")
        self.grid = grid
        self.values = values
        self.values.setflags(write=False)

    def spectrum(self, shift=None):
        return self.grid.forward_shifted(self.values, shift)

    def l2(self):
        return float(self.grid.l2_norm(self.values))

    def __add__(self, other):
        self._compatible(other)
        return GridField(self.grid, self.values + other.values)

    def __sub__(self, other):
        self._compatible(other)
        return GridField(self.grid, self.values - other.values)

    def __mul__(self, other):
        if isinstance(other, GridField):
            self._compatible(other)
            return GridField(self.grid, self.values * other.values)
        return GridField(self.grid, self.values * other)

    __rmul__ = __mul__

    def _compatible(self, other):
        if other.grid != self.grid:
            raise GridMismatch("fields live on different grids")

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, np.asarray(fn(*grid.node_mesh()), dtype=complex))


class NetField:
    """An eps-indexed family of grid fields on a shared torus grid."""

    __slots__ = ("grid", "eps", "values")

    def __init__(self, grid, eps_grid, values):
        values = np.asarray(values, dtype=complex)
        if values.shape != (len(eps_grid),) + grid.shape:
            raise GridMismatch(
                f"values shape {values.shape} != (n_eps,) + grid {grid.shape}"
            )
        self.grid = grid
        self.eps = eps_grid
        self.values = values
        self.values.setflags(write=False)

    def __len__(self):
        return len(self.eps)

    def field(self, i):
        return GridField(self.grid, self.values[i])

    def l2_norms(self):
        return self.grid.l2_norm(self.values)

    @classmethod
    def from_function(cls, grid, eps_grid, fn):
        """fn(eps_value, *node_mesh) -> array per eps."""
        mesh = grid.node_mesh()
        vals = np.stack([np.asarray(fn(e, *mesh), dtype=complex) for e in eps_grid.values])
        return cls(grid, eps_grid, vals)

    @classmethod
    def constant_in_eps(cls, field, eps_grid):
        vals = np.broadcast_to(field.values, (len(eps_grid),) + field.grid.shape).copy()
        return cls(field.grid, eps_grid, vals)


def fourier_multiplier(field, symbol, shift=None):
    """Apply a multiplier to a GridField or NetField; exact on the lattice."""
    if isinstance(field, GridField):
        return GridField(field.grid, field.grid.multiplier(field.values, symbol, shift))
    return NetField(
        field.grid, field.eps, field.grid.multiplier(field.values, symbol, shift)
    )


def write_field_csv(path, grid, values, eps_values=None):
    """Dump fields as CSV: eps (if given), node coordinates, re, im.

    values: grid-shaped array, or [n_slices] + grid.shape with eps_values
    of matching length."""
    import csv

    values = np.asarray(values, dtype=complex)
    if values.shape == grid.shape:
        values = values[None, ...]
        eps_values = [None]
    coords = [m.ravel() for m in grid.node_mesh()]
    names = ["x", "y", "z"][: grid.dim]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        head = (["eps"] if eps_values[0] is not None else []) + names + ["re", "im"]
        w.writerow(head)
        for sl, ev in zip(values, eps_values):
            flat = sl.ravel()
            for i in range(flat.size):
                row = [] if ev is None else [repr(float(ev))]
                row += [repr(float(c[i])) for c in coords]
                row += [repr(float(flat[i].real)), repr(float(flat[i].imag))]
                w.writerow(row)


def write_spectrum_csv(path, grid, values, eps_values=None, shift=None):
    """Dump spectra as CSV: eps (if given), frequency coordinates, re, im."""
    import csv

    values = np.asarray(values, dtype=complex)
    if values.shape == grid.shape:
        values = values[None, ...]
        eps_values = [None]
    spec = grid.forward_shifted(values, shift)
    pts = grid.freq_points(shift)
    names = ["xi1", "xi2", "xi3"][: grid.dim]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        head = (["eps"] if eps_values[0] is not None else []) + names + ["re", "im"]
        w.writerow(head)
        for sl, ev in zip(spec, eps_values):
            flat = sl.ravel()
            for i in range(flat.size):
                row = [] if ev is None else [repr(float(ev))]
                row += [repr(float(pts[i, d])) for d in range(grid.dim)]
                row += [repr(float(flat[i].real)), repr(float(flat[i].imag))]
                w.writerow(row)


def random_smooth_field(grid, rng, decay=2.0, seed_spectrum=None):
    """Random band-concentrated field: Gaussian spectrum with random phases."""
    mesh = grid.freq_mesh()
    mag = np.sqrt(sum(m**2 for m in mesh))
    envelope = np.exp(-((mag / (grid.nyquist / decay / 2.0)) ** 2))
    phases = rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
    spec = envelope * phases
    vals = grid.inverse(spec)
    return GridField(grid, vals / max(grid.l2_norm(vals), 1e-300))
