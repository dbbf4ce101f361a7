"""Rise functions: closed-form families, conductance-based transform, shape classifier.

A rise function ``U`` maps the phase of a free oscillator to its potential.
It is strictly increasing with ``U(0) = 0`` and ``U(1) = 1``.  All callables
below accept floats or numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "RiseFunction", "ShapeReport", "ClassificationConflict",
    "identity", "make_Ub", "make_LIF", "make_QIF", "to_conductance_based",
    "make_LIF_CB", "make_QIF_CB", "table_conditions", "classify",
    "dH_dphi", "dDeltaH_dphi_grid", "nonlocal_margin_grid", "inverse_slope_curvature",
]


class ClassificationConflict(RuntimeError):
    """Closed-form and numeric shape classification disagree."""


@dataclass(frozen=True, eq=False)
class RiseFunction:
    """Rise function with inverse and first three derivatives.

    ``interaction`` optionally overrides ``inverse(evaluate(phi) + eps)`` with
    an algebraically equivalent closed form that stays finite outside
    ``[0, 1]`` (used by the fixed-point solvers).
    """

    evaluate: Callable
    inverse: Callable
    d1: Callable
    d2: Callable
    d3: Callable
    family: str = "custom"
    params: dict = field(default_factory=dict)
    interaction: Callable | None = None

    def __call__(self, phi):
        return self.evaluate(phi)

    def interact(self, phi, eps):
        """``U^-1(U(phi) + eps)`` without domain checks (``eps`` may be negative)."""
        if self.interaction is not None:
            return self.interaction(phi, eps)
        return self.inverse(self.evaluate(phi) + eps)

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"RiseFunction({self.family}; {args})"


@dataclass(frozen=True)
class ShapeReport:
    convex: bool
    concave: bool
    sigmoidal: bool
    icpd: bool
    dcpd: bool
    method: str
    table: dict | None = None
    scan_min: float = 0.0
    scan_max: float = 0.0


# --------------------------------------------------------------------------
# families
# --------------------------------------------------------------------------

def identity() -> RiseFunction:
    """``U(phi) = phi``; pulses act as pure phase shifts."""
    one = lambda x: np.ones_like(np.asarray(x, dtype=float))[()]
    zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))[()]
    return RiseFunction(
        evaluate=lambda x: x * 1.0,
        inverse=lambda u: u * 1.0,
        d1=one, d2=zero, d3=zero,
        family="identity",
        interaction=lambda x, eps: x + eps,
    )


def make_Ub(b: float) -> RiseFunction:
    """``U_b(phi) = ln(1 + (e^b - 1) phi) / b``.

    Pulses shift ``U_b`` phase differences by the constant factor ``e^{b eps}``,
    independent of the phase.  Convex for ``b < 0`` and concave for ``b > 0``.
    """
    b = float(b)
    if b == 0.0:
        raise ValueError("b must be non-zero (use identity() for the linear rise function)")
    k = np.expm1(b)

    def evaluate(x):
        return np.log1p(k * x) / b

    def inverse(u):
        return np.expm1(b * u) / k

    def d1(x):
        return k / (b * (1.0 + k * x))

    def d2(x):
        return -k * k / (b * (1.0 + k * x) ** 2)

    def d3(x):
        return 2.0 * k ** 3 / (b * (1.0 + k * x) ** 3)

    def interaction(x, eps):
        g = np.exp(b * eps)
        return x * g + np.expm1(b * eps) / k

    return RiseFunction(evaluate, inverse, d1, d2, d3, family="Ub",
                        params={"b": b}, interaction=interaction)


def make_LIF(E_eq: float, g_l: float = 1.0) -> RiseFunction:
    """Leaky integrate-and-fire rise ``E_eq (1 - exp(-g_l T phi))``.

    ``T = -ln(1 - 1/E_eq) / g_l`` is the free period before rescaling, which
    makes the shape independent of ``g_l``.
    """
    E_eq, g_l = float(E_eq), float(g_l)
    if not E_eq > 1.0:
        raise ValueError(f"E_eq must exceed the threshold 1, got {E_eq}")
    if not g_l > 0.0:
        raise ValueError(f"g_l must be positive, got {g_l}")
    T = -np.log1p(-1.0 / E_eq) / g_l
    lam = g_l * T

    def evaluate(x):
        return -E_eq * np.expm1(-lam * x)

    def inverse(u):
        return -np.log1p(-u / E_eq) / lam

    return RiseFunction(
        evaluate, inverse,
        d1=lambda x: E_eq * lam * np.exp(-lam * x),
        d2=lambda x: -E_eq * lam ** 2 * np.exp(-lam * x),
        d3=lambda x: E_eq * lam ** 3 * np.exp(-lam * x),
        family="LIF",
        params={"E_eq": E_eq, "g_l": g_l, "T_LIF": T},
    )


def make_QIF(alpha: float, beta: float) -> RiseFunction:
    """Quadratic integrate-and-fire rise function.

    ``U(phi) = [alpha - tan(atan(alpha) - phi (atan(alpha) - atan(beta)))] / (alpha - beta)``
    with ``alpha >= 0 >= beta`` and ``alpha > beta``.
    """
    alpha, beta = float(alpha), float(beta)
    if not (alpha >= 0.0 and beta <= 0.0 and alpha > beta):
        raise ValueError(f"QIF needs alpha >= 0 >= beta, alpha > beta; got {alpha}, {beta}")
    A = np.arctan(alpha)
    D = A - np.arctan(beta)
    w = alpha - beta

    def t(x):
        return np.tan(A - D * x)

    def evaluate(x):
        return (alpha - t(x)) / w

    def inverse(u):
        return (A - np.arctan(alpha - w * u)) / D

    def d1(x):
        tt = t(x)
        return D * (1.0 + tt * tt) / w

    def d2(x):
        tt = t(x)
        return -2.0 * D * D * tt * (1.0 + tt * tt) / w

    def d3(x):
        tt = t(x)
        return 2.0 * D ** 3 * (1.0 + 3.0 * tt * tt) * (1.0 + tt * tt) / w

    return RiseFunction(evaluate, inverse, d1, d2, d3, family="QIF",
                        params={"alpha": alpha, "beta": beta})


def to_conductance_based(U: RiseFunction, E_syn: float) -> RiseFunction:
    """Rise function seen by conductance-based pulses with reversal ``E_syn``.

    ``U_CB(phi) = ln(1 - U(phi)/E_syn) / ln(1 - 1/E_syn)``.
    """
    E_syn = float(E_syn)
    if not E_syn > 1.0:
        raise ValueError(f"E_syn must exceed the threshold 1, got {E_syn}")
    kappa = 1.0 / np.log1p(-1.0 / E_syn)
    base = np.log1p(-1.0 / E_syn)

    def evaluate(x):
        return kappa * np.log1p(-U.evaluate(x) / E_syn)

    def inverse(v):
        return U.inverse(-E_syn * np.expm1(v * base))

    def _q(x):
        w = E_syn * (1.0 - U.evaluate(x) / E_syn)
        return U.d1(x) / w, U.d2(x) / w, U.d3(x) / w

    def d1(x):
        q1, _, _ = _q(x)
        return -kappa * q1

    def d2(x):
        q1, q2, _ = _q(x)
        return -kappa * (q2 + q1 * q1)

    def d3(x):
        q1, q2, q3 = _q(x)
        return -kappa * (q3 + 3.0 * q1 * q2 + 2.0 * q1 ** 3)

    family = {"LIF": "LIF-CB", "QIF": "QIF-CB"}.get(U.family, "custom")
    return RiseFunction(evaluate, inverse, d1, d2, d3, family=family,
                        params={**U.params, "E_syn": E_syn})


def make_LIF_CB(E_eq: float, E_syn: float, g_l: float = 1.0) -> RiseFunction:
    return to_conductance_based(make_LIF(E_eq, g_l), E_syn)


def make_QIF_CB(alpha: float, beta: float, E_syn: float) -> RiseFunction:
    return to_conductance_based(make_QIF(alpha, beta), E_syn)


# --------------------------------------------------------------------------
# classification
# --------------------------------------------------------------------------

def table_conditions(U: RiseFunction) -> dict | None:
    """Closed-form shape/icpd/dcpd verdicts for the known families.

    Returns ``None`` for custom rise functions.
    """
    p = U.params
    f = U.family
    if f == "identity":
        return dict(convex=True, concave=True, sigmoidal=False, icpd=True, dcpd=True)
    if f == "Ub":
        b = p["b"]
        return dict(convex=b < 0, concave=b > 0, sigmoidal=False, icpd=True, dcpd=True)
    if f == "LIF":
        return dict(convex=False, concave=True, sigmoidal=False, icpd=True, dcpd=False)
    if f == "LIF-CB":
        es, eq = p["E_syn"], p["E_eq"]
        return dict(convex=es <= eq, concave=es >= eq, sigmoidal=False,
                    icpd=es >= eq, dcpd=es <= eq)
    if f == "QIF":
        a, b = p["alpha"], p["beta"]
        return dict(convex=a == 0.0, concave=b == 0.0, sigmoidal=b < 0.0 < a,
                    icpd=False, dcpd=(a <= 1.0 and b >= -1.0))
    if f == "QIF-CB":
        a, b, es = p["alpha"], p["beta"], p["E_syn"]
        eta = es * (a - b)
        shape = 1.0 + a * (a - 2.0 * eta)
        with np.errstate(divide="ignore", invalid="ignore"):
            c1 = True if a == 0.0 else bool(a * a <= eta / (eta - a - 1.0 / a))
            c2 = True if b == 0.0 else bool(b * b <= (eta - a + b) / (eta - a - 1.0 / b))
        return dict(convex=shape >= 0.0, concave=False, sigmoidal=shape < 0.0,
                    icpd=False, dcpd=c1 and c2)
    return None


def dH_dphi(U: RiseFunction, phi, eps):
    """Slope of the interaction map, ``U'(phi) / U'(H(phi, eps))``."""
    return U.d1(phi) / U.d1(U.inverse(U.evaluate(phi) + eps))


def dDeltaH_dphi_grid(U: RiseFunction, n_phi: int = 50, n_dphi: int = 50,
                      n_eps: int = 20, eps_max: float = 0.5) -> np.ndarray:
    """Sample ``d/dphi [H(phi + dphi, eps) - H(phi, eps)]`` over the admissible domain.

    The domain is ``0 < eps <= eps_max``, ``0 <= phi``,
    ``0 <= dphi <= U^-1(1 - eps) - phi``.
    """
    eps = np.linspace(eps_max / n_eps, eps_max, n_eps)
    top = U.inverse(1.0 - eps)
    s = np.linspace(0.0, 1.0, n_phi)
    r = np.linspace(0.0, 1.0, n_dphi)
    E = eps[:, None, None]
    T = top[:, None, None]
    P = s[None, :, None] * T
    Q = r[None, None, :] * (T - P)
    E, P, Q = np.broadcast_arrays(E, P, Q)
    return dH_dphi(U, P + Q, E) - dH_dphi(U, P, E)


def nonlocal_margin_grid(U: RiseFunction, n: int = 200) -> np.ndarray:
    """``3U''(p)^2/U'(p) - U''(q)U''(p)U'(p)/U'(q)^2 - U'''(p)`` for ``0 <= q <= p <= 1``.

    Non-negative everywhere is sufficient for icpd, non-positive for dcpd.
    Entries with ``q > p`` are returned as NaN.
    """
    x = np.linspace(0.0, 1.0, n)
    p = x[:, None]
    q = x[None, :]
    d1p, d2p, d3p = U.d1(p), U.d2(p), U.d3(p)
    d1q, d2q = U.d1(q), U.d2(q)
    m = 3.0 * d2p ** 2 / d1p - d2q * d2p * d1p / d1q ** 2 - d3p
    m = np.broadcast_to(m, (n, n)).copy()
    m[q.repeat(n, 0) > p.repeat(n, 1)] = np.nan
    return m


def inverse_slope_curvature(U: RiseFunction, n: int = 4001) -> tuple[np.ndarray, np.ndarray]:
    """Second derivative of ``1 / U'`` on ``n`` points of ``[0, 1]``, with its scale.

    For weak pulses and small phase differences ``d/dphi DeltaH`` behaves
    like ``eps * dphi * (1/U')''``, so an icpd function needs this to be
    non-negative everywhere and a dcpd function non-positive.  The second
    array holds the magnitude of the two terms that are subtracted, for
    judging rounding.
    """
    x = np.linspace(0.0, 1.0, n)
    d1 = np.asarray(U.d1(x), dtype=float) * np.ones_like(x)
    d2 = np.asarray(U.d2(x), dtype=float) * np.ones_like(x)
    d3 = np.asarray(U.d3(x), dtype=float) * np.ones_like(x)
    a = 2.0 * d2 * d2 / d1 ** 3
    b = d3 / d1 ** 2
    return a - b, np.abs(a) + np.abs(b)


def _curvature(U: RiseFunction, n: int = 1001) -> tuple[bool, bool, bool]:
    x = np.linspace(0.0, 1.0, n)
    d2 = np.asarray(U.d2(x), dtype=float) * np.ones_like(x)
    tol = 1e-9 * max(1.0, float(np.max(np.abs(U.d1(x)))))
    convex = bool(np.all(d2 >= -tol))
    concave = bool(np.all(d2 <= tol))
    sign = np.sign(np.where(np.abs(d2) <= tol, 0.0, d2))
    nz = sign[sign != 0]
    sigmoidal = (not convex and not concave and nz[0] < 0 and nz[-1] > 0
                 and np.count_nonzero(np.diff(nz)) == 1)
    return convex, concave, bool(sigmoidal)


def classify(U: RiseFunction, scan_tol: float = 1e-7, grid: tuple = (50, 50, 20),
             eps_max: float = 0.5, nonlocal_n: int = 200) -> ShapeReport:
    """Curvature and icpd/dcpd classification of a rise function.

    Curvature comes from the sign of ``U''`` on a grid.  icpd/dcpd come from a
    scan of ``d/dphi DeltaH`` over the admissible domain (violations within
    ``scan_tol`` count as zero) combined with the sign of ``(1/U')''``, which
    governs weak pulses on close pairs.  The result is cross-checked against the closed-form table
    for the known families and against the sufficient third-derivative
    criterion.  For QIF-CB the scan decides, since the table conditions there
    are not reliable.

    Raises
    ------
    ClassificationConflict
        If the scan and the closed-form conditions disagree.
    """
    convex, concave, sigmoidal = _curvature(U)
    g = dDeltaH_dphi_grid(U, *grid, eps_max=eps_max)
    g = g[np.isfinite(g)]
    gmin, gmax = float(g.min()), float(g.max())
    icpd = gmin >= -scan_tol
    dcpd = gmax <= scan_tol
    # the coarse scan cannot resolve weak pulses on close pairs; the
    # inverse-slope curvature decides that corner exactly
    w, mag = inverse_slope_curvature(U)
    slack = 1e-9 * max(float(mag.max()), 1e-300)
    icpd = icpd and bool(w.min() >= -slack)
    dcpd = dcpd and bool(w.max() <= slack)

    m = nonlocal_margin_grid(U, nonlocal_n)
    scale = 1e-9 * max(1.0, float(np.nanmax(np.abs(m))))
    icpd_suff = bool(np.nanmin(m) >= -scale)
    dcpd_suff = bool(np.nanmax(m) <= scale)
    if (icpd_suff and not icpd) or (dcpd_suff and not dcpd):
        raise ClassificationConflict(
            f"{U!r}: third-derivative criterion certifies a property the scan rejects")

    table = table_conditions(U)
    method = "numeric-scan"
    if table is not None and U.family != "QIF-CB":
        method = "closed-form-table"
        found = dict(convex=convex, concave=concave, sigmoidal=sigmoidal,
                     icpd=icpd, dcpd=dcpd)
        bad = {k: (table[k], found[k]) for k in found if table[k] != found[k]}
        if bad:
            raise ClassificationConflict(f"{U!r}: table vs numeric disagree on {bad}")
    return ShapeReport(convex, concave, sigmoidal, icpd, dcpd, method,
                       table=table, scan_min=gmin, scan_max=gmax)
