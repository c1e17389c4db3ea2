"""Order relations between constant-coefficient operators, with certificates.

"P stronger than Q" means Qw_eps(xi) <= lambda_eps Pw_eps(xi) with a moderate
net lambda; "P dominates Q" strengthens this to Qw_eps(xi,t) <=
lambda_eps C(t) Pw_eps(xi,t) with C(t) -> 0 at a quantified rate.  The sups
over xi are replaced by maxima over a finite sample set, so every verdict is
a measured certificate: reports carry the witnesses and a radius-growth
check that flags ratios which keep growing with |xi| (the sound way a finite
sample set can say "false").
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nets, symbols
from .errors import WeightVanishes
from .nets import GenNumber
from .symbols import ConstSymbol, DEFAULT_RADII, sphere_directions

#: fitted log-log slope in |xi| above which the sup is deemed divergent
RADIUS_GROWTH_TOL = 0.1
#: margin (in fitted exponent) around the Moderate boundary -> Indeterminate
BOUNDARY_MARGIN = 2.0

#: radii for the order-relation sample sets: deep enough that eps-dependent
#: turnover scales (e.g. |xi| ~ eps^{-1/2} on a 2^-24 grid) sit well inside
COMPARE_RADII = tuple(10.0**j for j in range(-1, 7))

T_LADDER = tuple(2.0**j for j in range(13))


@dataclass
class ComparisonReport:
    """Certificate for 'P stronger than Q' measured on a sample set."""

    lambda_net: GenNumber
    verdict: bool
    lambda_class: nets.ModeratenessReport
    diverging: bool
    indeterminate: bool
    witnesses: list = field(default_factory=list)
    radius_slope: float = 0.0


@dataclass
class DominationReport:
    lambda_net: GenNumber
    C_of_t: list  # (t, C(t)) pairs, normalized to C(1) = 1
    decay_ok: bool
    verdict: bool
    gamma: float
    quantifier_checks: list  # (a, b or None)
    lambda_class: nets.ModeratenessReport = None


@dataclass
class EllipticityReport:
    c: float
    a: float
    verdict: bool
    inf_net: GenNumber
    gradient: bool = False


def _ratio_table(Q, P, pts_by_radius, weight_fn):
    """Per-radius sup of Qw/Pw -> (sup_per_eps_radius [n_eps, n_r], witnesses)."""
    sups = []
    wits = []
    for pts in pts_by_radius:
        qw = weight_fn(Q, pts)
        pw = weight_fn(P, pts)
        if np.any(pw <= symbols.WEIGHT_FLOOR):
            bad = np.argwhere(pw <= symbols.WEIGHT_FLOOR)
            e, j = bad[0]
            raise WeightVanishes(
                f"reference weight below floor at xi={pts[j]} (eps index {e})"
            )
        ratio = qw / pw
        sups.append(ratio.max(axis=1))
        j = np.unravel_index(np.argmax(ratio), ratio.shape)
        wits.append((pts[j[1]], int(j[0]), float(ratio[j])))
    return np.stack(sups, axis=1), wits


def _sample_banks(dim, radii=DEFAULT_RADII, n_dirs=64):
    dirs = sphere_directions(dim, n_dirs)
    return [r * dirs for r in radii], np.asarray(radii, dtype=float)


def is_stronger(Q, P, radii=COMPARE_RADII, n_dirs=64):
    """Measure lambda_eps = max over xi samples of Qw_eps / Pw_eps.

    verdict is True when lambda is a Moderate net and the per-radius sups
    stabilize.  A genuinely divergent ratio keeps a constant positive
    growth slope out to the largest radii; a ratio that peaks at some
    eps-dependent scale and then decays is finite.  The divergence flag
    therefore requires the last-interval slope to be positive and not
    smaller than the previous one.
    """
    if Q.dim != P.dim or Q.grid != P.grid:
        raise WeightVanishes("symbols not comparable: different dim or eps grid")
    banks, rad = _sample_banks(P.dim, radii, n_dirs)
    sups, wits = _ratio_table(Q, P, banks, lambda S, pts: S.weight_many(pts))
    lam = GenNumber(P.grid, sups.max(axis=1).astype(complex))
    # interval growth slopes of the sup across the top radii
    with np.errstate(divide="ignore"):
        y = np.log10(np.maximum(sups, 1e-300))
    dx = np.diff(np.log10(rad))
    slopes = np.diff(y, axis=1) / dx[None, :]  # [n_eps, n_r - 1]
    last, prev = slopes[:, -1], slopes[:, -2]
    radius_slope = float(np.max(last))
    diverging = bool(np.any((last > RADIUS_GROWTH_TOL) & (last > prev - 0.1)))
    lam_class = nets.classify(lam)
    near_boundary = (
        lam_class.verdict == "NotModerate"
        and np.isfinite(lam_class.fitted_exponent)
        and abs(lam_class.fitted_exponent + nets.DEFAULT_N_MAX) < BOUNDARY_MARGIN
    )
    verdict = (not diverging) and lam_class.is_moderate and not near_boundary
    worst = sorted(wits, key=lambda w: -w[2])[:3]
    return ComparisonReport(
        lambda_net=lam,
        verdict=verdict,
        lambda_class=lam_class,
        diverging=diverging,
        indeterminate=near_boundary,
        witnesses=[{"xi": w[0].tolist(), "eps_index": w[1], "ratio": w[2]} for w in worst],
        radius_slope=radius_slope,
    )


def dominates(Q, P, radii=COMPARE_RADII, n_dirs=32, t_ladder=T_LADDER):
    """Measure the factorization Qw(xi,t) <= lambda_eps C(t) Pw(xi,t).

    For each t on a dyadic ladder the sup ratio over the sample set is
    factored as lambda_eps * C(t) by normalizing at t = 1.  decay_ok fits
    C(t) ~ t^-gamma and requires gamma > 0; the quantifier condition
    (for each a find b with C(t) <= eps^a for t >= eps^b) is checked on the
    ladder against the eps grid.
    """
    banks, rad = _sample_banks(P.dim, radii, n_dirs)
    sup_t = []  # [n_t][n_eps]
    for t in t_ladder:
        sups, _ = _ratio_table(
            Q, P, banks, lambda S, pts, t=t: S.weight_t_many(pts, t)
        )
        sup_t.append(sups.max(axis=1))
    sup_t = np.stack(sup_t, axis=0)  # [n_t, n_eps]
    lam = GenNumber(P.grid, sup_t[0].astype(complex))  # t = 1 slice
    with np.errstate(invalid="ignore", divide="ignore"):
        c_of_t = np.max(np.where(sup_t[0] > 0, sup_t / sup_t[0], 0.0), axis=1)
    pairs = [(float(t), float(c)) for t, c in zip(t_ladder, c_of_t)]
    # fitted decay rate C(t) ~ t^-gamma
    x = np.log10(np.asarray(t_ladder))
    y = np.log10(np.maximum(c_of_t, 1e-300))
    gamma = -float(np.polyfit(x, y, 1)[0])
    decay_ok = gamma > 0.05 and c_of_t[-1] < 0.5 * c_of_t[0]
    # quantifier check on the ladder against the eps grid
    eps = P.grid.values
    t_arr = np.asarray(t_ladder)
    quant = []
    for a in (0.1, 0.25, 0.5):
        found = None
        for b in np.linspace(0.0, -2.0, 21):
            thresholds = eps**b  # t >= eps^b
            ok = True
            checked = 0
            for e_idx, thr in enumerate(thresholds):
                sel = t_arr >= thr
                if not np.any(sel):
                    continue  # nothing on the ladder to check: vacuous
                checked += 1
                if np.any(c_of_t[sel] > eps[e_idx] ** a * (1.0 + 1e-9)):
                    ok = False
                    break
            if ok and checked > 0:
                found = float(b)
                break
        quant.append((float(a), found))
    decay_ok = decay_ok and all(b is not None for _, b in quant)
    lam_class = nets.classify(lam)
    verdict = decay_ok and lam_class.is_moderate
    return DominationReport(
        lambda_net=lam,
        C_of_t=pairs,
        decay_ok=decay_ok,
        verdict=verdict,
        gamma=gamma,
        quantifier_checks=quant,
        lambda_class=lam_class,
    )


def _sphere_inf_fit(values):
    """Fit inf_eps >= c eps^a for a positive net of sphere infima."""
    grid_eps = values.grid.values
    mags = np.abs(values.samples)
    if np.any(mags <= 0.0):
        return 0.0, float("nan"), False
    rep = nets.classify(values)
    a = rep.fitted_exponent
    if not np.isfinite(a) or abs(a) > nets.DEFAULT_N_MAX:
        return 0.0, a, False
    c = float(np.min(mags / grid_eps**a))
    return c, float(a), rep.strictly_nonzero or rep.is_moderate


def _refined_sphere_inf(eval_fn, dim, n_dirs, n_eps, rng_seed=3, rounds=4,
                        collapse=100.0):
    """Per-eps sphere infimum with local refinement around the argmin.

    A positive smooth minimum stabilizes under refinement; a zero cone that
    slipped between sample directions keeps collapsing, which is flagged as
    degenerate (a false 'elliptic' from coarse sampling is worse than a
    conservative miss)."""
    dirs = sphere_directions(dim, n_dirs)
    vals = eval_fn(dirs)  # [n_eps, n_dirs]
    base_inf = vals.min(axis=1)
    inf = base_inf.copy()
    if dim == 1:
        return base_inf, inf, False
    rng = np.random.default_rng(rng_seed)
    spacing = 2.0 / np.sqrt(n_dirs)
    arg = dirs[np.argmin(vals, axis=1)]  # [n_eps, dim]
    radius = spacing
    n_pert = 40
    for _ in range(rounds):
        pert = rng.normal(size=(n_eps, n_pert, dim))
        cand = arg[:, None, :] + radius * pert
        cand = cand / np.linalg.norm(cand, axis=2, keepdims=True)
        flat = cand.reshape(-1, dim)
        vv = eval_fn(flat)  # [n_eps, n_eps * n_pert]
        block = np.stack(
            [vv[e, e * n_pert : (e + 1) * n_pert] for e in range(n_eps)]
        )
        better = block.min(axis=1)
        take = better < inf
        inf = np.where(take, better, inf)
        new_arg = cand[np.arange(n_eps), np.argmin(block, axis=1)]
        arg = np.where(take[:, None], new_arg, arg)
        radius /= 6.0
    degenerate = bool(
        np.any(base_inf > collapse * np.maximum(inf, 1e-300))
        or np.any(inf <= 0.0)
    )
    return base_inf, inf, degenerate


def is_g_elliptic(P, n_dirs=64):
    """Check |P_m,eps(xi)| >= c eps^a on the unit sphere (homogeneity makes
    the sphere sufficient); returns the fitted (c, a) and the infimum net."""
    Pm = P.principal_part()

    def fn(pts):
        return np.abs(Pm.eval_many(pts))

    _, inf, degenerate = _refined_sphere_inf(fn, P.dim, n_dirs, len(P.grid))
    inf_net = GenNumber(P.grid, inf.astype(complex))
    c, a, ok = _sphere_inf_fit(inf_net)
    return EllipticityReport(
        c=c, a=a, verdict=ok and c > 0.0 and not degenerate, inf_net=inf_net
    )


def is_principal_type(P, n_dirs=64):
    """Same fit applied to |grad_xi P_m,eps| on the unit sphere."""
    Pm = P.principal_part()
    grads = []
    for i in range(P.dim):
        e = tuple(1 if j == i else 0 for j in range(P.dim))
        grads.append(Pm.derive(e))

    def fn(pts):
        g = np.zeros((len(P.grid), np.atleast_2d(pts).shape[0]))
        for d in grads:
            g += np.abs(d.eval_many(pts)) ** 2
        return np.sqrt(g)

    _, inf, degenerate = _refined_sphere_inf(fn, P.dim, n_dirs, len(P.grid))
    inf_net = GenNumber(P.grid, inf.astype(complex))
    c, a, ok = _sphere_inf_fit(inf_net)
    return EllipticityReport(
        c=c, a=a, verdict=ok and c > 0.0 and not degenerate, inf_net=inf_net,
        gradient=True,
    )


def property_suite(P, Qs=None, combo_scalars=((1.0, 1.0), (2.0, -3.0))):
    """Measured closure checks for the order relations around P.

    - linear combinations of operators weaker than P stay weaker, with
      lambda bounded by the combination of the certificates;
    - a G-elliptic P is stronger than every monomial D^alpha, |alpha| <= m;
    - P + aQ is equally strong as P whenever Q is dominated by P.
    Returns a dict of named check results.
    """
    out = {}
    ell = is_g_elliptic(P)
    out["g_elliptic"] = ell
    if Qs is None:
        Qs = [
            ConstSymbol.monomial(alpha, grid=P.grid)
            for alpha in symbols.multi_indices_upto(P.dim, P.order)
        ]
    monomials = {}
    for Q in Qs:
        key = ",".join(
            "".join(map(str, a)) for a in sorted(Q.coeffs)
        )
        monomials[key] = is_stronger(Q, P)
    out["stronger_than"] = monomials
    if ell.verdict:
        out["elliptic_dominates_all_monomials"] = all(
            r.verdict for r in monomials.values()
        )
    # linear combination closure on the first two weaker operators
    weaker = [Q for Q in Qs if is_stronger(Q, P).verdict]
    if len(weaker) >= 2:
        combos = []
        for a1, a2 in combo_scalars:
            R = weaker[0].scale(a1) + weaker[1].scale(a2)
            r = is_stronger(R, P)
            l1 = np.abs(is_stronger(weaker[0], P).lambda_net.samples)
            l2 = np.abs(is_stronger(weaker[1], P).lambda_net.samples)
            bound = abs(a1) * l1 + abs(a2) * l2
            combos.append(
                {
                    "scalars": (a1, a2),
                    "verdict": r.verdict,
                    "within_bound": bool(
                        np.all(np.abs(r.lambda_net.samples) <= bound * (1 + 1e-9))
                    ),
                }
            )
        out["linear_combinations"] = combos
    # equally strong family: P + aQ for dominated Q
    for alpha, d in P._bundle():
        if sum(alpha) == 0 or d.is_zero:
            continue
        dom = dominates(d, P)
        if dom.verdict:
            R = P + d
            fwd = is_stronger(R, P)
            bwd = is_stronger(P, R)
            out["equally_strong_with_derivative"] = {
                "alpha": alpha,
                "forward": fwd.verdict,
                "backward": bwd.verdict,
            }
            break
    return out
