"""Radial-rank-one example fields and their scalar reductions.

For fields A(x) = I + g(|x|) theta theta^T every diagnostic in this package
collapses to the scalar flow d(phi)/dt = ((n-1)/n) gtil(t) phi with
gtil(t) = g(e^-t), which makes the family the laboratory for sharpness
questions: closed-form solutions provide integrator oracles, and plateau
constructions separate uniform stability from asymptotic constancy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from . import dynsys
from .coeff import CoefficientField, FAMILY_GILBARG_SERRIN
from .sphmean import SphericalGrid, default_grid, mean_matrix_R

KIND_CONVERGENT_IMPROPER = "convergent-improper"
KIND_MINUS_INFINITY = "minus-infinity"


@dataclass(frozen=True)
class ScalarGenerator:
    """Scalar log-time generator gtil(t) with optional exact integral.

    ``breakpoints`` are the discontinuity times (plateau edges); adaptive
    integration must restart there.  ``cumulative`` is the exact
    antiderivative int_0^t gtil when available; ``envelope`` is an optional
    (C, a) pair certifying |gtil(t)| <= C * max(t, 1)^-a.
    """

    name: str
    gtil: Callable[[np.ndarray], np.ndarray]
    breakpoints: tuple = ()
    cumulative: Optional[Callable[[np.ndarray], np.ndarray]] = None
    envelope: Optional[tuple] = None

    def __call__(self, t):
        return self.gtil(np.asarray(t, float))


def _vec(f):
    return lambda t, f=f: np.asarray(f(np.asarray(t, float)), float)


WHITELIST: dict = {}


def _register(name, gtil, cumulative, envelope=None):
    WHITELIST[name] = ScalarGenerator(name, _vec(gtil), (), _vec(cumulative),
                                      envelope)


_register("zero", lambda t: np.zeros_like(t), lambda t: np.zeros_like(t))
_register("exp-decay", lambda t: np.exp(-t), lambda t: 1.0 - np.exp(-t), (1.0, 10.0))
_register("neg-exp-decay", lambda t: -np.exp(-t), lambda t: np.exp(-t) - 1.0, (1.0, 10.0))
_register("one-over-1pt", lambda t: 1.0 / (1.0 + t), lambda t: np.log1p(t), (1.0, 1.0))
_register("neg-one-over-1pt", lambda t: -1.0 / (1.0 + t), lambda t: -np.log1p(t), (1.0, 1.0))
_register("one-over-1pt-sq", lambda t: (1.0 + t) ** -2.0,
          lambda t: 1.0 - 1.0 / (1.0 + t), (1.0, 2.0))


def scalar_reduction(field: CoefficientField,
                     grid: Optional[SphericalGrid] = None,
                     cross_check_radii: Sequence[float] = (0.5, 0.25, 0.1, 0.02),
                     cross_check_tol: float = 1e-10) -> ScalarGenerator:
    """Reduce a rank-one radial field to its scalar generator gtil(t) = g(e^-t).

    Cross-checks that the quadrature mean matrix at r = e^-t equals
    ((1-n)/n) gtil(t) I before returning.
    """
    if field.family_tag != FAMILY_GILBARG_SERRIN or field.gs_profile is None:
        raise ValueError("scalar reduction requires a GilbargSerrin field")
    n = field.dim
    g = field.gs_profile
    if grid is None:
        grid = default_grid(n)
    for r in cross_check_radii:
        R = mean_matrix_R(field, r, grid)
        expected = (1.0 - n) / n * float(np.asarray(g(np.array([r])))[0]) * np.eye(n)
        if np.max(np.abs(R - expected)) > cross_check_tol:
            raise AssertionError(
                f"quadrature mean matrix deviates from the rank-one closed form "
                f"at r = {r:g} by {np.max(np.abs(R - expected)):.3e}")

    def gtil(t, g=g):
        t = np.asarray(t, float)
        return np.asarray(g(np.exp(-t)), float)

    return ScalarGenerator(name=f"gs-reduction", gtil=gtil)


def closed_form_phi(gen: ScalarGenerator, n: int, t, phi0: float = 1.0):
    """phi(t) = phi0 * exp(((n-1)/n) int_0^t gtil); requires the exact integral."""
    if gen.cumulative is None:
        raise ValueError(f"generator {gen.name!r} carries no closed-form integral")
    t = np.asarray(t, float)
    return phi0 * np.exp((n - 1.0) / n * gen.cumulative(t))


def scalar_rfun(gen: ScalarGenerator, n: int) -> Callable:
    """Matrix generator for the scalar flow: R(t) = -((n-1)/n) gtil(t)."""
    nu = (n - 1.0) / n
    return lambda t: np.array([[-nu * float(gen.gtil(np.asarray(t, float)))]])


# ---------------------------------------------------------------------------
# plateau counterexamples: asymptotic constancy without uniform stability
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockData:
    """Verification data emitted with a plateau generator.

    ``block_integrals[j]`` = (+b_j, -(b_j + c_j)) for block pair j;
    ``boundary_values`` are the running integral at plateau edges, so every
    construction postcondition is assertable from this table without
    re-deriving the schedule.
    """

    kind: str
    block_integrals: np.ndarray   # (J, 2)
    plateau_times: np.ndarray     # (2J + 1,) edges t_0 < ... < t_2J
    plateau_heights: np.ndarray   # (2J,)
    boundary_values: np.ndarray   # (2J + 1,) running integral at the edges
    window_sup: float
    final_integral: float
    sq_partials: np.ndarray       # running int gtil^2 dt at block-pair ends


@dataclass(frozen=True)
class PlateauGenerator(ScalarGenerator):
    blocks: Optional[BlockData] = None
    horizon: float = 0.0


def build_cesari_counterexample(kind: str, decay_exponent: float = 2.0 / 3.0,
                                horizon: float = 1e4, *,
                                envelope_amplitude: float = 1.5,
                                block_gain: float = 0.55,
                                cancel_extra: float = 1.2,
                                target_window_sup: float = 5.0,
                                t_start: float = 1.0,
                                tail_fraction: float = 0.2) -> PlateauGenerator:
    """Plateau generator separating uniform stability from asymptotic constancy.

    Block pair j rises by b_j = block_gain * j and falls by b_j + c_j, with
    c_j = cancel_extra / j^2 (kind convergent-improper: the running integral
    converges) or c_j = cancel_extra (kind minus-infinity: it sinks without
    bound).  Plateau heights sit on the envelope C * t^-a at each plateau's
    right edge, so |gtil| <= C t^-a everywhere and gtil is square-integrable
    for a > 1/2; widths follow.  Blocks stop before (1 - tail_fraction) *
    horizon so the tail is exactly quiet, and the construction is rejected
    (naming the binding constraint) when the envelope cannot deliver a
    window sup of target_window_sup within the horizon.
    """
    if kind not in (KIND_CONVERGENT_IMPROPER, KIND_MINUS_INFINITY):
        raise ValueError(f"unknown kind {kind!r}")
    a = float(decay_exponent)
    if not (0.5 < a < 1.0):
        raise ValueError("decay_exponent must lie in (1/2, 1) for the "
                         "square-integrable/non-integrable regime")
    C = float(envelope_amplitude)
    t_stop = (1.0 - tail_fraction) * horizon

    edges = [t_start]
    heights = []
    block_integrals = []
    T = t_start
    j = 0
    while True:
        j += 1
        b = block_gain * j
        c = cancel_extra / j ** 2 if kind == KIND_CONVERGENT_IMPROPER else cancel_extra
        trial_edges, trial_heights = [], []
        T_try = T
        for mass, sgn in ((b, +1.0), (b + c, -1.0)):
            fw = lambda w: C * w * (T_try + w) ** (-a) - mass
            hi = 8.0
            while fw(hi) < 0 and hi < 1e12:
                hi *= 2
            w = brentq(fw, 1e-12, hi, xtol=1e-12, rtol=8.9e-16)
            trial_heights.append(sgn * C * (T_try + w) ** (-a))
            T_try += w
            trial_edges.append(T_try)
        if T_try > t_stop:
            j -= 1
            break
        edges.extend(trial_edges)
        heights.extend(trial_heights)
        block_integrals.append((b, -(b + c)))
        T = T_try

    J = len(block_integrals)
    bi = np.asarray(block_integrals, float)
    if J == 0 or bi[-1, 0] < target_window_sup:
        achieved = bi[-1, 0] if J else 0.0
        raise ValueError(
            f"infeasible schedule: envelope {C:g}*t^-{a:g} delivers a max "
            f"block rise of {achieved:g} < target window sup "
            f"{target_window_sup:g} within horizon {horizon:g} "
            f"(binding constraint: blocks must end by t = {t_stop:g})")

    edges = np.asarray(edges)
    heights = np.asarray(heights)
    widths = np.diff(edges)
    boundary_values = np.concatenate([[0.0], np.cumsum(heights * widths)])
    run_min = np.minimum.accumulate(boundary_values)
    window_sup = float(np.max(boundary_values - run_min))
    sq = np.cumsum((heights ** 2 * widths).reshape(-1, 2).sum(axis=1))
    blocks = BlockData(kind, bi, edges, heights, boundary_values,
                       window_sup, float(boundary_values[-1]), sq)

    def gtil(t, edges=edges, heights=heights):
        t = np.asarray(t, float)
        k = np.searchsorted(edges, t, side="right") - 1
        inside = (k >= 0) & (k < len(heights))
        out = np.zeros_like(t)
        out[inside] = heights[np.clip(k[inside], 0, len(heights) - 1)]
        return out

    def cumulative(t, edges=edges, heights=heights, bv=boundary_values):
        t = np.asarray(t, float)
        k = np.clip(np.searchsorted(edges, t, side="right") - 1, -1, len(heights))
        out = np.empty_like(t)
        before = k < 0
        after = k >= len(heights)
        mid = ~(before | after)
        out[before] = 0.0
        out[after] = bv[-1]
        km = k[mid]
        out[mid] = bv[km] + heights[km] * (t[mid] - edges[km])
        return out

    return PlateauGenerator(
        name=f"cesari-{kind}", gtil=gtil,
        breakpoints=tuple(edges.tolist()),
        cumulative=cumulative, envelope=(C, a),
        blocks=blocks, horizon=float(horizon))


@dataclass(frozen=True)
class IndependenceReport:
    asym_constant: dynsys.AsymptoticReport
    uniformly_stable: dynsys.StabilityReport
    square_integrable_verdict: str
    square_partials: np.ndarray
    running_integral_final: float
    window_sup: float


def verify_independence(gen: ScalarGenerator, n: int = 2,
                        tol: float = 1e-4,
                        horizon: Optional[float] = None) -> IndependenceReport:
    """Run the stability machinery on a scalar generator and report the triple.

    For a convergent-improper plateau generator the expected outcome is
    asymptotically constant (quiet tail), uniform-stability evidence
    negative (window constants keep growing), and square-integrability
    positive; that triple is what makes the two asymptotic notions
    independent of each other.
    """
    from .dyadic import analyze_scalar_sequence

    if horizon is None:
        horizon = getattr(gen, "horizon", 0.0) or 100.0
    rfun = scalar_rfun(gen, n)
    traj = dynsys.integrate_system(rfun, 0.0, horizon, [1.0], tol=1e-9,
                                   breakpoints=gen.breakpoints)
    grid = _window_grid(0.0, horizon, gen.breakpoints)
    track = dynsys.fundamental_matrix(rfun, grid, tol=1e-9,
                                      breakpoints=gen.breakpoints)
    stab = dynsys.stability_constant(track)
    asym = dynsys.asymptotic_limit(traj, window_fraction=0.1, tol=tol)

    blocks = getattr(gen, "blocks", None)
    if blocks is not None:
        sq_partials = blocks.sq_partials
        final = blocks.final_integral
        wsup = blocks.window_sup
    else:
        ts = np.linspace(0, horizon, 4097)
        g2 = np.asarray(gen.gtil(ts), float) ** 2
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (g2[1:] + g2[:-1]) * np.diff(ts))])
        ends = horizon * 2.0 ** np.arange(-12, 1, 1.0)
        sq_partials = np.interp(ends, ts, cum)
        if gen.cumulative is not None:
            final = float(gen.cumulative(np.asarray([horizon]))[0])
        else:
            gv = np.asarray(gen.gtil(ts), float)
            final = float(np.sum(0.5 * (gv[1:] + gv[:-1]) * np.diff(ts)))
        wsup = float("nan")
    sq_verdict = analyze_scalar_sequence(
        np.arange(1, len(sq_partials) + 1), sq_partials, tol=1e-6).verdict

    return IndependenceReport(asym, stab, sq_verdict, np.asarray(sq_partials),
                              final, wsup)


def _window_grid(t0: float, t1: float, breakpoints: Sequence[float],
                 per_segment: int = 12, n_uniform: int = 257) -> np.ndarray:
    """Sample grid containing all plateau edges (flow extrema sit there)."""
    pts = [np.linspace(t0, t1, n_uniform)]
    bps = [b for b in breakpoints if t0 < b < t1]
    bounds = np.concatenate([[t0], np.sort(bps), [t1]]) if bps else np.array([t0, t1])
    for a, b in zip(bounds[:-1], bounds[1:]):
        pts.append(np.linspace(a, b, per_segment))
    return np.unique(np.concatenate(pts))


# ---------------------------------------------------------------------------
# the radial mode ODE
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModeSolution:
    r: np.ndarray
    v: np.ndarray
    rv_prime: np.ndarray
    flux: np.ndarray          # scaled flux r^-n * F, the second reduction variable
    truncated_at: Optional[float] = None


def gs_mode_ode_solution(g: Callable, n: int, r_grid,
                         tol: float = 1e-11) -> ModeSolution:
    """Finite-energy first-moment mode profile v(r) for the rank-one field.

    The mode u = v(|x|) x_k solves the divergence-form equation iff

        -[ r^n a(r) (r v' + v) ]' + r^(n-1) [ a(r) r v' + c(r) v ] = 0,

    a = (1+g)/n, c = 1 + g/n.  In log-time with the scaled flux
    Ftil = r^-n * (flux) the system is regular:

        dv/dt   = v - Ftil / a,
        dFtil/dt = (n-1) (Ftil - v / n).

    Solutions split into a slowly varying branch and a strongly singular
    r^-n branch; only the former has locally finite energy, and any inward
    shooting from data at r = 1 excites the singular branch and is swamped
    by it.  The profile is therefore integrated outward from the deepest
    requested radius, seeded on the frozen-coefficient regular eigenvector
    there (the seeding error rides the branch that decays outward, so the
    result is insensitive to it), and normalized to v(1) = 1.
    """
    gv = np.vectorize(g, otypes=[float]) if np.asarray(g(0.5)).shape else g
    r_grid = np.sort(np.asarray(r_grid, float))[::-1]
    if r_grid[0] > 1.0:
        raise ValueError("the profile is normalized at r = 1; grid must be inside")
    t_req = -np.log(r_grid)
    t_top = float(t_req[-1])
    # margin below the deepest radius purges the seeding error further
    t_seed = t_top + max(2.0, 0.15 * t_top)
    if t_seed > 300.0:
        raise ValueError("requested radii underflow the log-time range")

    def rhs(t, y, n=n):
        v, F = y
        av = (1.0 + float(gv(math.exp(-t)))) / n
        return [v - F / av, (n - 1.0) * (F - v / n)]

    # frozen-coefficient regular root of lambda^2 + n lambda + n - c/a = 0
    g_seed = float(gv(math.exp(-t_seed)))
    c_over_a = (n + g_seed) / (1.0 + g_seed)
    lam_plus = 0.5 * (-n + math.sqrt(n * n - 4.0 * (n - c_over_a)))
    a_seed = (1.0 + g_seed) / n
    y0 = [1.0, a_seed * (1.0 + lam_plus)]   # Ftil = a (v - v_t), v_t = -lam v

    sol = solve_ivp(rhs, (t_seed, 0.0), y0, method="RK45", rtol=tol,
                    atol=tol * 1e-2, dense_output=True)
    if not sol.success:
        raise dynsys.IntegrationError(f"mode integration failed: {sol.message}")
    v1 = sol.sol(0.0)[0]
    if abs(v1) < 1e-280:
        raise dynsys.IntegrationError("mode vanished at r = 1; cannot normalize")
    ys = sol.sol(t_req) / v1
    v, F = ys[0], ys[1]
    rr = np.exp(-t_req)
    av = (1.0 + np.asarray(gv(rr), float)) / n
    rvp = -(v - F / av)     # r v' = -dv/dt
    return ModeSolution(r=rr, v=v, rv_prime=rvp, flux=F, truncated_at=None)
