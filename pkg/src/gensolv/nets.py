"""Epsilon-parameterized nets of complex numbers and their classification.

A net is a finite sample of a function of eps on a strictly decreasing grid
in (0, 1].  All asymptotic verdicts (moderate, negligible, slow scale,
strictly nonzero) are finite-sampling surrogates: they are decided by
log-log regression over the small-eps tail of the grid and carry the fitted
exponent, the fit residual, and the tested orders so callers can tighten
them.  Nets act as representatives; equality in the quotient is only ever
approximated by classifying the difference (see `is_negligible_difference`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, NotInvertible
from . import expressions

#: ceiling on |fitted exponent| for a Moderate verdict
DEFAULT_N_MAX = 64.0
#: finite surrogate order for negligibility (slope must exceed it)
NEGLIGIBLE_ORDER = 16
#: powers tested for the slow-scale property
SLOW_SCALE_ORDERS = range(1, 9)
#: strictly-nonzero floor exponent
R_MAX = 64.0
#: log10 residual tolerance for accepting a power-law fit
FIT_RESIDUAL_TOL = 0.15


@dataclass(frozen=True)
class EpsGrid:
    """Strictly decreasing finite sequence of eps samples in (0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("eps grid must be a nonempty 1-d sequence")
        if np.any(vals <= 0.0) or np.any(vals > 1.0):
            raise ValueError("eps samples must lie in (0, 1]")
        if np.any(np.diff(vals) >= 0.0):
            raise ValueError("eps samples must be strictly decreasing")
        object.__setattr__(self, "values", vals)
        self.values.setflags(write=False)

    @staticmethod
    def default(k_max=24):
        """Dyadic grid eps_k = 2^-k, k = 0..k_max."""
        return EpsGrid(2.0 ** -np.arange(k_max + 1, dtype=float))

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        return isinstance(other, EpsGrid) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())

    @property
    def tail(self):
        """Index slice of the small-eps half used for asymptotic fits."""
        return slice(len(self) // 2, len(self))


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatch("nets live on different eps grids")


class GenNumber:
    """A complex-valued net sampled on a shared eps grid.  Immutable."""

    __slots__ = ("grid", "samples")

    def __init__(self, grid, samples):
        samples = np.asarray(samples, dtype=complex)
        if samples.shape != (len(grid),):
            raise GridMismatch(
                f"expected {len(grid)} samples, got shape {samples.shape}"
            )
        if not np.all(np.isfinite(samples)):
            raise ValueError("net samples must be finite")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "samples", samples)
        self.samples.setflags(write=False)

    def __setattr__(self, name, value):
        raise AttributeError("GenNumber is immutable")

    @classmethod
    def constant(cls, value, grid):
        return cls(grid, np.full(len(grid), value, dtype=complex))

    @classmethod
    def from_expression(cls, text, grid):
        """Build a net from an expression in eps (grammar in `expressions`)."""
        return cls(grid, expressions.eval_eps_expression(text, grid.values))

    @classmethod
    def from_samples(cls, samples, grid):
        return cls(grid, samples)

    # ring operations (pointwise in eps); moderateness is preserved by + - *
    def _coerce(self, other):
        if isinstance(other, GenNumber):
            _check_same_grid(self, other)
            return other
        return GenNumber.constant(other, self.grid)

    def __add__(self, other):
        other = self._coerce(other)
        return GenNumber(self.grid, self.samples + other.samples)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        return GenNumber(self.grid, self.samples - other.samples)

    def __rsub__(self, other):
        other = self._coerce(other)
        return GenNumber(self.grid, other.samples - self.samples)

    def __mul__(self, other):
        other = self._coerce(other)
        return GenNumber(self.grid, self.samples * other.samples)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        return self * invert(other)

    def __neg__(self):
        return GenNumber(self.grid, -self.samples)

    def __abs__(self):
        return GenNumber(self.grid, np.abs(self.samples))

    def conj(self):
        return GenNumber(self.grid, np.conj(self.samples))

    def __eq__(self, other):
        return (
            isinstance(other, GenNumber)
            and self.grid == other.grid
            and np.array_equal(self.samples, other.samples)
        )

    def __hash__(self):
        return hash((self.grid, self.samples.tobytes()))

    def __repr__(self):
        head = ", ".join(f"{s:.4g}" for s in self.samples[:3])
        return f"GenNumber([{head}, ...] on {len(self.grid)} eps samples)"


@dataclass(frozen=True)
class ModeratenessReport:
    """Asymptotic classification of a net.

    `fitted_exponent` is the least-squares slope b in |u_eps| ~ C eps^b over
    the tail half of the grid; `fit_residual` is the RMS misfit in log10
    units.  `negligible_order` records the finite surrogate order tested.
    """

    verdict: str  # "Negligible" | "Moderate" | "SlowScale" | "NotModerate"
    fitted_exponent: float
    fit_residual: float
    strictly_nonzero: bool
    lower_exponent: float
    negligible_order: int = NEGLIGIBLE_ORDER
    slow_scale_orders: tuple = field(default=tuple(SLOW_SCALE_ORDERS))

    @property
    def is_moderate(self):
        """Negligible and SlowScale imply Moderate; the report keeps the
        strongest verdict."""
        return self.verdict in ("Negligible", "Moderate", "SlowScale")


def _tail_fit(eps, mags):
    """Slope/residual of log10|u| against log10 eps; ignores zero samples."""
    keep = mags > 0.0
    if keep.sum() < 3:
        return None, None
    x = np.log10(eps[keep])
    y = np.log10(mags[keep])
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return float(slope), resid


def classify(u, n_max=DEFAULT_N_MAX, residual_tol=FIT_RESIDUAL_TOL):
    """Classify a net as Negligible / Moderate / SlowScale / NotModerate.

    Decision rules (finite surrogates, see module docstring):

    - all samples on the tail vanish -> Negligible with +inf exponent;
    - slope > NEGLIGIBLE_ORDER and not strictly nonzero -> Negligible
      (a certified strictly-nonzero net is never reported Negligible);
    - growing slower than every tested power, i.e. slope < 0 with
      q * slope >= -1 for q = 1..8 -> SlowScale;
    - slope >= -n_max with residual below tolerance -> Moderate;
    - otherwise NotModerate.
    """
    eps = u.grid.values
    mags = np.abs(u.samples)
    tail = u.grid.tail
    eps_t, mags_t = eps[tail], mags[tail]

    # strictly nonzero: |u_eps| >= eps^r on the tail for some r <= R_MAX
    strictly_nonzero = False
    lower_exponent = np.inf
    if np.all(mags_t > 0.0):
        with np.errstate(divide="ignore"):
            ratios = np.log(mags_t) / np.log(eps_t)
        r_needed = float(max(np.max(ratios), 0.0))
        if r_needed <= R_MAX:
            strictly_nonzero = True
            lower_exponent = r_needed

    if not np.any(mags_t > 0.0):
        return ModeratenessReport(
            verdict="Negligible",
            fitted_exponent=np.inf,
            fit_residual=0.0,
            strictly_nonzero=False,
            lower_exponent=np.inf,
        )

    slope, resid = _tail_fit(eps_t, mags_t)
    if slope is None:
        # fewer than 3 nonzero tail samples: too sparse to fit, but the
        # survivors are bounded; report NotModerate with a sentinel fit
        return ModeratenessReport(
            verdict="NotModerate",
            fitted_exponent=np.nan,
            fit_residual=np.inf,
            strictly_nonzero=strictly_nonzero,
            lower_exponent=lower_exponent,
        )

    negligible = slope > NEGLIGIBLE_ORDER and not strictly_nonzero
    fit_ok = resid <= residual_tol
    slow = (
        not negligible
        and fit_ok
        and slope < -5e-3
        and all(q * slope >= -1.0 - 0.1 for q in SLOW_SCALE_ORDERS)
    )
    if negligible:
        verdict = "Negligible"
    elif slow:
        verdict = "SlowScale"
    elif slope >= -n_max and fit_ok:
        verdict = "Moderate"
    else:
        verdict = "NotModerate"
    return ModeratenessReport(
        verdict=verdict,
        fitted_exponent=slope,
        fit_residual=resid,
        strictly_nonzero=strictly_nonzero,
        lower_exponent=lower_exponent,
    )


def valuation(u):
    """sup{b : |u_eps| = O(eps^b)}, estimated by the tail slope.

    Zero nets return +inf (the ultra-pseudo-norm is then 0).
    """
    return classify(u).fitted_exponent


def ultra_norm(u):
    """Ultra-pseudo-norm e^{-valuation}."""
    v = valuation(u)
    if np.isinf(v) and v > 0:
        return 0.0
    return float(np.exp(-v))


def invert(u):
    """Pointwise reciprocal of a strictly nonzero net.

    Requires every sample nonzero and the tail certified above the
    eps^R_MAX floor; raises NotInvertible otherwise.
    """
    if np.any(u.samples == 0.0):
        raise NotInvertible("net has zero samples")
    rep = classify(u)
    if not rep.strictly_nonzero:
        raise NotInvertible(
            f"net is below the strictly-nonzero floor eps^{R_MAX:g} on the tail"
        )
    return GenNumber(u.grid, 1.0 / u.samples)


def net_arith(a, b, op):
    """Ring arithmetic on nets; op is one of '+', '-', '*', '/'."""
    try:
        return {"+": a.__add__, "-": a.__sub__, "*": a.__mul__, "/": a.__truediv__}[op](b)
    except KeyError:
        raise ValueError(f"unknown op {op!r}") from None


def is_negligible_difference(a, b):
    """Surrogate for equality in the quotient: classify(a - b) Negligible."""
    return classify(a - b).verdict == "Negligible"


def zero_like(u):
    return GenNumber(u.grid, np.zeros(len(u.grid), dtype=complex))
