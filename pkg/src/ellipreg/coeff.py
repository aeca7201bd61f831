"""Coefficient fields A(x) with attached modulus-of-continuity envelopes.

A field is an evaluator ``x -> A(x)`` (symmetric, uniformly elliptic, with
A(0) = I for normalized fields) together with a nondecreasing envelope
``omega`` bounding the entrywise oscillation on spheres:
``sup_{|x|=r} |a_ij(x) - delta_ij| <= omega(r)``.

Fields are represented as evaluators plus metadata, never as sampled arrays,
so quadrature resolution is always chosen by the consumer.  All objects here
are immutable and all operations pure.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

FAMILY_CONSTANT = "Constant"
FAMILY_RADIAL = "Radial"
FAMILY_GILBARG_SERRIN = "GilbargSerrin"
FAMILY_PERTURBED_RADIAL = "PerturbedRadial"
FAMILY_CUSTOM = "Custom"


class FieldError(ValueError):
    """Rejected field construction (ellipticity, symmetry, envelope, ...)."""


# ---------------------------------------------------------------------------
# modulus of continuity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Modulus:
    """Oscillation envelope omega(r) on (0, 1], nondecreasing, omega(0+) = 0.

    ``kappa`` is the exponent for which omega(r) * r**(kappa - 1) is
    nonincreasing near 0 (0.5 unless the caller knows better); it admits
    every built-in profile.  ``analytic_tag`` names the closed form when
    there is one, e.g. "1/log(e/r)" or "r^0.5".
    """

    omega: Callable[[np.ndarray], np.ndarray]
    kappa: float = 0.5
    analytic_tag: Optional[str] = None
    omega_log: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.asarray(self.omega(r), dtype=float)
        return out

    def log_form(self, s):
        """omega(e^-s); exact for built-ins even where e^-s underflows."""
        s = np.asarray(s, dtype=float)
        if self.omega_log is not None:
            return np.asarray(self.omega_log(s), dtype=float)
        return self(np.exp(-s))

    def check_on_grid(self, k_max: int = 30, tol: float = 1e-10) -> None:
        """Verify monotonicity, decay, and the r**(kappa-1) condition on dyadics."""
        r = 2.0 ** -np.arange(0, k_max + 1)
        w = self(r)
        if np.any(w < -tol):
            raise FieldError("modulus takes negative values on the dyadic grid")
        # nondecreasing in r means nonincreasing along r = 2^-k
        if np.any(np.diff(w) > tol * max(1.0, w[0])):
            raise FieldError("modulus is not nondecreasing on the dyadic grid")
        tail = self(np.array([2.0 ** -40]))[0]
        if tail > max(tol, 1e-2 * max(w[0], tol)) and w[0] > 0:
            # decay check is scale-aware: the tail must drop well below omega(1)
            if tail > 0.25 * w[0]:
                raise FieldError("modulus does not decay: omega(2^-40) = %.3e" % tail)
        # omega(r) r^(kappa-1) nonincreasing in r is only required near 0:
        # check the tail of the dyadic grid, where it reads nondecreasing
        # along r_k = 2^-k
        q = (w * r ** (self.kappa - 1.0))[8:]
        if np.any(np.diff(q) < -tol * max(1.0, np.max(np.abs(q)))):
            raise FieldError(
                "omega(r) * r^(kappa-1) is not nonincreasing near 0 (kappa=%g)"
                % self.kappa
            )


def zero_modulus() -> Modulus:
    return Modulus(lambda r: np.zeros_like(np.asarray(r, float)), analytic_tag="0",
                   omega_log=lambda s: np.zeros_like(np.asarray(s, float)))


def power_modulus(a: float, c: float = 1.0) -> Modulus:
    """omega(r) = c * r**a with a > 0."""
    if a <= 0 or c < 0:
        raise FieldError("power modulus requires a > 0 and c >= 0")
    kappa = min(0.5, a)
    return Modulus(lambda r, a=a, c=c: c * np.asarray(r, float) ** a,
                   kappa=kappa, analytic_tag=f"{c:g}*r^{a:g}",
                   omega_log=lambda s, a=a, c=c: c * np.exp(-a * np.asarray(s, float)))


def inv_log_modulus(c: float = 1.0, power: float = 1.0, shift: float = 1.0) -> Modulus:
    """omega(r) = c / (shift - ln r)**power, i.e. c / log(e^shift / r)**power."""
    if c < 0 or power <= 0 or shift < 1.0:
        raise FieldError("inv-log modulus requires c >= 0, power > 0, shift >= 1")

    def om(r, c=c, p=power, s=shift):
        r = np.asarray(r, float)
        with np.errstate(divide="ignore"):
            val = c / (s - np.log(np.maximum(r, 1e-320))) ** p
        return np.where(r > 0, val, 0.0)

    tag = f"{c:g}/log(e^{shift:g}/r)^{power:g}"

    def om_log(s, c=c, p=power, sh=shift):
        s = np.asarray(s, float)
        return c / (sh + s) ** p

    return Modulus(om, kappa=0.5, analytic_tag=tag, omega_log=om_log)


def constant_modulus(c: float) -> Modulus:
    """Constant envelope; only valid for non-normalized constant fields."""
    return Modulus(lambda r, c=c: np.full_like(np.asarray(r, float), c),
                   analytic_tag=f"{c:g}",
                   omega_log=lambda s, c=c: np.full_like(np.asarray(s, float), c))


def piecewise_log_modulus(values: Sequence[float]) -> Modulus:
    """Envelope constant on dyadic shells: values[k] on (2^-(k+1), 2^-k].

    Beyond the table the last value is held; the table must be nonincreasing
    so that omega is nondecreasing in r.
    """
    vals = np.asarray(values, float)
    if np.any(np.diff(vals) > 0):
        raise FieldError("piecewise-in-log table must be nonincreasing with depth")

    def om(r, vals=vals):
        r = np.asarray(r, float)
        k = np.clip(np.floor(-np.log2(np.maximum(r, 1e-320))), 0, len(vals) - 1)
        return np.where(r > 0, vals[k.astype(int)], 0.0)

    def om_log(s, vals=vals):
        s = np.asarray(s, float)
        k = np.clip(np.floor(s / np.log(2.0)), 0, len(vals) - 1)
        return np.where(s >= 0, vals[k.astype(int)], vals[0])

    return Modulus(om, analytic_tag="piecewise-log", omega_log=om_log)


def sum_modulus(*mods: Modulus) -> Modulus:
    def om(r, mods=mods):
        return sum(m(r) for m in mods)

    def om_log(s, mods=mods):
        return sum(m.log_form(s) for m in mods)

    kappa = min(m.kappa for m in mods)
    tag = "+".join(m.analytic_tag or "?" for m in mods)
    return Modulus(om, kappa=kappa, analytic_tag=tag, omega_log=om_log)


# ---------------------------------------------------------------------------
# whitelisted closed-form radial profiles
# ---------------------------------------------------------------------------

_TERM_RE = re.compile(
    r"""^\s*(?P<coef>[+-]?\d*\.?\d+(?:[eE][+-]?\d+)?)?\s*\*?\s*
        (?:
          (?P<pow>r\^(?P<a>[+-]?\d*\.?\d+))
        | (?P<log>1?/\(?log\(e(?:\^(?P<shift>\d*\.?\d+))?/r\)\)?(?:\^(?P<lp>\d*\.?\d+))?)
        )?\s*$""",
    re.VERBOSE,
)


def _parse_terms(expr: str):
    text = expr.replace(" ", "")
    if not text:
        raise FieldError("empty radial expression")
    # split at signs, except signs of scientific-notation exponents
    pieces = [p for p in re.split(r"(?<![eE])(?=[+-])", text) if p]
    terms = []
    for piece in pieces:
        m = _TERM_RE.match(piece)
        if not m:
            raise FieldError(f"radial expression term not in whitelist: {piece!r}")
        coef = float(m.group("coef")) if m.group("coef") else 1.0
        if piece.startswith("-") and not m.group("coef"):
            coef = -1.0
        if m.group("pow"):
            terms.append(("pow", coef, float(m.group("a"))))
        elif m.group("log"):
            shift = float(m.group("shift")) if m.group("shift") else 1.0
            lp = float(m.group("lp")) if m.group("lp") else 1.0
            terms.append(("log", coef, (shift, lp)))
        else:
            terms.append(("const", coef, None))
    return tuple(terms)


def parse_radial_expr(expr: str) -> Callable[[np.ndarray], np.ndarray]:
    """Parse a whitelisted radial closed form into a vectorized callable.

    Grammar: sum of terms joined by '+' or '-', each term one of
    ``c``, ``c*r^a``, ``r^a``, ``c/log(e/r)``, ``c/(log(e^K/r))^a``.
    Anything else is rejected: configs may not inject arbitrary code.
    """
    terms = _parse_terms(expr)

    def f(r, terms=terms):
        r = np.asarray(r, float)
        out = np.zeros_like(r)
        safe = np.maximum(r, 1e-320)
        for kind, coef, p in terms:
            if kind == "const":
                out = out + coef
            elif kind == "pow":
                out = out + coef * safe ** p
            else:
                shift, lp = p
                out = out + coef / (shift - np.log(safe)) ** lp
        return out

    return f


def parse_modulus_expr(expr: str, kappa: float = 0.5) -> Modulus:
    """Whitelisted envelope expression as a Modulus with an exact log channel."""
    terms = _parse_terms(expr)
    f = parse_radial_expr(expr)

    def om_log(s, terms=terms):
        s = np.asarray(s, float)
        out = np.zeros_like(s)
        for kind, coef, p in terms:
            if kind == "const":
                out = out + coef
            elif kind == "pow":
                out = out + coef * np.exp(-p * s)
            else:
                shift, lp = p
                out = out + coef / (shift + s) ** lp
        return out

    return Modulus(f, kappa=kappa, analytic_tag=expr.replace(" ", ""),
                   omega_log=om_log)


# ---------------------------------------------------------------------------
# coefficient fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientField:
    """Symmetric elliptic coefficient evaluator with metadata.

    ``eval_batch`` maps an (m, n) array of points to an (m, n, n) array of
    symmetric matrices; ``eval`` is the single-point convenience wrapper.
    ``normalized`` records whether eval(0) = I; the classification pipeline
    only accepts normalized fields, while the moment quadratures accept any.
    """

    dim: int
    eval_batch: Callable[[np.ndarray], np.ndarray]
    ellipticity: tuple
    modulus: Modulus
    family_tag: str = FAMILY_CUSTOM
    normalized: bool = True
    gs_profile: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def eval(self, x) -> np.ndarray:
        x = np.asarray(x, float).reshape(1, self.dim)
        return self.eval_batch(x)[0]

    def __call__(self, x) -> np.ndarray:
        return self.eval(x)


def _as_batch(fn_single):
    def batch(pts):
        pts = np.atleast_2d(np.asarray(pts, float))
        return np.stack([fn_single(p) for p in pts])
    return batch


def _check_spd(A0: np.ndarray, what: str = "matrix") -> tuple:
    A0 = np.asarray(A0, float)
    if A0.ndim != 2 or A0.shape[0] != A0.shape[1]:
        raise FieldError(f"{what} must be square, got shape {A0.shape}")
    asym = np.max(np.abs(A0 - A0.T))
    if asym > 1e-14 * max(1.0, np.max(np.abs(A0))):
        raise FieldError(f"{what} is not symmetric (max asymmetry {asym:.2e})")
    w = np.linalg.eigvalsh(A0)
    if w[0] <= 0:
        raise FieldError(f"{what} is not positive definite (eigenvalue {w[0]:.6g})")
    return float(w[0]), float(w[-1])


def make_constant(n: int, A0: np.ndarray) -> CoefficientField:
    """Constant field A(x) = A0.  Normalized only when A0 = I.

    Non-normalized constant fields are accepted for the moment-quadrature
    sanity tests (their mean matrix R vanishes identically) but are rejected
    by the classification pipeline.
    """
    lam_min, lam_max = _check_spd(A0, "A0")
    A0 = 0.5 * (np.asarray(A0, float) + np.asarray(A0, float).T)
    if A0.shape[0] != n:
        raise FieldError(f"A0 has dimension {A0.shape[0]}, expected {n}")
    is_identity = np.allclose(A0, np.eye(n), atol=1e-15)

    def batch(pts, A0=A0):
        pts = np.atleast_2d(np.asarray(pts, float))
        return np.broadcast_to(A0, (len(pts), n, n)).copy()

    off = float(np.max(np.abs(A0 - np.eye(n))))
    mod = zero_modulus() if is_identity else constant_modulus(off)
    return CoefficientField(
        dim=n, eval_batch=batch, ellipticity=(lam_min, lam_max),
        modulus=mod, family_tag=FAMILY_CONSTANT, normalized=is_identity,
    )


def make_gilbarg_serrin(n: int, g: Callable, omega_bound: Modulus,
                        check_radii: Optional[np.ndarray] = None) -> CoefficientField:
    """Field A(x) = I + g(|x|) theta theta^T with theta = x/|x|, g(0+) = 0.

    The radial profile must stay inside the declared envelope,
    |g(r)| <= omega_bound(r), and keep the field elliptic, 1 + g(r) > 0.
    """
    gv = np.vectorize(g, otypes=[float]) if not _is_vectorized(g) else g
    if check_radii is None:
        check_radii = 2.0 ** -np.arange(0, 31, dtype=float)
    rr = np.asarray(check_radii, float)
    gr = np.asarray(gv(rr), float)
    wr = omega_bound(rr)
    bad = np.abs(gr) > wr * (1 + 1e-12) + 1e-15
    if np.any(bad):
        r_bad = rr[bad][0]
        raise FieldError(
            f"|g| exceeds the declared modulus at r = {r_bad:.6g} "
            f"(|g| = {abs(gr[bad][0]):.6g} > omega = {wr[bad][0]:.6g})")
    if np.any(1.0 + gr <= 0):
        r_bad = rr[1.0 + gr <= 0][0]
        raise FieldError(f"ellipticity lost: 1 + g(r) <= 0 at r = {r_bad:.6g}")

    def batch(pts, gv=gv, n=n):
        pts = np.atleast_2d(np.asarray(pts, float))
        m = len(pts)
        out = np.broadcast_to(np.eye(n), (m, n, n)).copy()
        r = np.linalg.norm(pts, axis=1)
        mask = r > 0
        if np.any(mask):
            th = pts[mask] / r[mask, None]
            gval = np.asarray(gv(r[mask]), float)
            out[mask] += gval[:, None, None] * th[:, :, None] * th[:, None, :]
        return out

    lam_min = float(min(1.0, 1.0 + np.min(gr)))
    lam_max = float(max(1.0, 1.0 + np.max(gr)))
    return CoefficientField(
        dim=n, eval_batch=batch, ellipticity=(lam_min, lam_max),
        modulus=omega_bound, family_tag=FAMILY_GILBARG_SERRIN,
        normalized=True, gs_profile=gv,
    )


def make_perturbed_radial(n: int, a0: Callable, a1=None,
                          modulus: Optional[Modulus] = None) -> CoefficientField:
    """Field a0(|x|) + a1(x) - a1(0), with a0(0) = I.

    ``a0`` maps a radius to an n x n symmetric matrix; ``a1`` is another
    CoefficientField, a batch evaluator, or None.  The correction by a1(0)
    keeps the combined field normalized.  The mean matrix R of the result is
    determined by a1 alone (radial parts integrate to zero).
    """
    A00 = np.asarray(a0(0.0), float)
    if not np.allclose(A00, np.eye(n), atol=1e-12):
        raise FieldError("a0(0) must equal the identity")

    if a1 is None:
        a1_batch = None
        a1_zero = np.zeros((n, n))
    elif isinstance(a1, CoefficientField):
        a1_batch = a1.eval_batch
        a1_zero = a1.eval(np.zeros(n))
    else:
        a1_batch = a1
        a1_zero = np.asarray(a1(np.zeros((1, n))), float)[0]

    def batch(pts):
        pts = np.atleast_2d(np.asarray(pts, float))
        r = np.linalg.norm(pts, axis=1)
        out = np.stack([np.asarray(a0(ri), float) for ri in r])
        if a1_batch is not None:
            out = out + a1_batch(pts) - a1_zero
        # points at the origin evaluate to I by fiat
        out[r == 0] = np.eye(n)
        return out

    # sampled ellipticity estimate on a coarse probe set
    rng = np.random.default_rng(7)
    probe = rng.normal(size=(256, n))
    probe *= (rng.uniform(1e-4, 0.99, size=256) / np.linalg.norm(probe, axis=1))[:, None]
    Ap = batch(probe)
    _assert_symmetric(Ap)
    w = np.linalg.eigvalsh(Ap)
    lam_min, lam_max = float(w[:, 0].min()), float(w[:, -1].max())
    if lam_min <= 0:
        raise FieldError(f"combined field loses ellipticity (eigenvalue {lam_min:.6g})")

    if modulus is None:
        # envelope estimated from samples on dyadic spheres, then held fixed
        radii = 2.0 ** -np.arange(0, 26, dtype=float)
        vals = []
        for r in radii:
            th = _unit_probe(n, 64)
            vals.append(np.max(np.abs(batch(r * th) - np.eye(n))))
        vals = np.maximum.accumulate(np.asarray(vals)[::-1])[::-1]  # enforce monotone
        modulus = piecewise_log_modulus(np.maximum(vals, 1e-300))

    tag = FAMILY_RADIAL if a1_batch is None else FAMILY_PERTURBED_RADIAL
    return CoefficientField(
        dim=n, eval_batch=batch, ellipticity=(lam_min, lam_max),
        modulus=modulus, family_tag=tag, normalized=True,
    )


def make_custom(n: int, eval_batch: Callable, modulus: Modulus,
                ellipticity: Optional[tuple] = None,
                normalized: bool = True) -> CoefficientField:
    """Wrap an arbitrary batch evaluator; a probe sweep estimates ellipticity."""
    if ellipticity is None:
        rng = np.random.default_rng(11)
        probe = rng.normal(size=(256, n))
        probe *= (rng.uniform(1e-4, 0.99, size=256) / np.linalg.norm(probe, axis=1))[:, None]
        Ap = np.asarray(eval_batch(probe), float)
        _assert_symmetric(Ap)
        w = np.linalg.eigvalsh(Ap)
        ellipticity = (float(w[:, 0].min()), float(w[:, -1].max()))
        if ellipticity[0] <= 0:
            raise FieldError(f"custom field loses ellipticity (eigenvalue {ellipticity[0]:.6g})")
    return CoefficientField(dim=n, eval_batch=eval_batch, ellipticity=ellipticity,
                            modulus=modulus, family_tag=FAMILY_CUSTOM,
                            normalized=normalized)


def _is_vectorized(g) -> bool:
    try:
        out = g(np.array([0.25, 0.5]))
        return np.asarray(out).shape == (2,)
    except Exception:
        return False


def _unit_probe(n: int, m: int) -> np.ndarray:
    if n == 2:
        th = 2 * np.pi * np.arange(m) / m
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    rng = np.random.default_rng(3)
    v = rng.normal(size=(m, n))
    return v / np.linalg.norm(v, axis=1)[:, None]


def _assert_symmetric(A: np.ndarray) -> None:
    scale = max(1.0, float(np.max(np.abs(A))))
    asym = float(np.max(np.abs(A - np.swapaxes(A, -1, -2))))
    if asym > 1e-14 * scale:
        raise FieldError(f"evaluator returned non-symmetric matrices (max {asym:.2e})")


# ---------------------------------------------------------------------------
# envelope measurement
# ---------------------------------------------------------------------------

def modulus_estimate(field: CoefficientField, r: float, grid) -> float:
    """Max-entry norm of A(r theta) - I over the nodes of a spherical grid.

    The entrywise norm matches the envelope convention; the spectral norm is
    reserved for the stability estimates downstream.
    """
    if not (0 < r):
        raise FieldError("radius must be positive")
    pts = r * grid.nodes
    A = field.eval_batch(pts)
    return float(np.max(np.abs(A - np.eye(field.dim))))


def validate_field(field: CoefficientField, k_max: int = 20,
                   grid=None, slack: float = 1e-10) -> None:
    """Spot-check the field invariants on dyadic spheres.

    Raises FieldError on symmetry, ellipticity, normalization, or envelope
    violations.  Quadrature slack covers the finitely-sampled sup.
    """
    from . import sphmean  # local import to avoid a cycle at module load

    n = field.dim
    if grid is None:
        grid = sphmean.sphere_grid(n, 64 if n == 2 else 24)
    if field.normalized and not np.allclose(field.eval(np.zeros(n)), np.eye(n),
                                            atol=1e-14):
        raise FieldError("normalized field does not satisfy eval(0) = I")
    lam_lo, lam_hi = field.ellipticity
    for k in range(0, k_max + 1):
        r = 2.0 ** -k
        A = field.eval_batch(r * grid.nodes)
        _assert_symmetric(A)
        w = np.linalg.eigvalsh(A)
        if w[:, 0].min() < lam_lo - 1e-12 or w[:, -1].max() > lam_hi + 1e-12:
            raise FieldError(
                f"ellipticity bounds violated at r = {r:g}: "
                f"[{w[:, 0].min():.6g}, {w[:, -1].max():.6g}] outside "
                f"[{lam_lo:.6g}, {lam_hi:.6g}]")
        if field.normalized:
            est = float(np.max(np.abs(A - np.eye(n))))
            bound = float(field.modulus(np.array([r]))[0])
            if est > bound * (1 + slack) + 1e-15:
                raise FieldError(
                    f"oscillation exceeds modulus at r = {r:g} "
                    f"({est:.6g} > {bound:.6g})")
