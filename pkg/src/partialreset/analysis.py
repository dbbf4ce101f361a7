"""Existence and stability of periodic states, cluster bounds, bifurcation points.

Meta-oscillator networks are described by a :class:`~partialreset.core.CouplingMatrix`
built with :meth:`CouplingMatrix.meta`.  Unit ``r`` of such a network fires
``r``-th in the asynchronous order, sends ``eps_r = a_r * eps`` to every other
unit and ``(a_r - 1) * eps`` to itself.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize

from .core import (THRESHOLD, CouplingMatrix, DomainError, H, H_inverse, PartialReset,
                   compose_chain, linear_reset)
from .engine import NetworkState, return_map
from .rise_functions import RiseFunction, classify


class NonConvergenceError(RuntimeError):
    """An iterative solver ran out of iterations without meeting its tolerance."""


# --------------------------------------------------------------------------
# asynchronous (splay) states
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SplaySolution:
    sigma_star: np.ndarray
    phases: NetworkState
    residual: float
    iterations: int = 0


def _sender_strengths(coupling: CouplingMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Per-sender pulse strength and self-coupling of a meta-form matrix."""
    E = coupling.entries
    n = coupling.n
    diag = np.diag(E).copy()
    if n == 1:
        return np.zeros(1), diag
    off = E + np.diag(np.full(n, np.nan))
    col_min = np.nanmin(off, axis=0)
    col_max = np.nanmax(off, axis=0)
    if np.any(col_max - col_min > 1e-15 * max(1.0, col_max.max())):
        raise ValueError("splay analysis needs meta-form coupling: each sender must "
                         "deliver the same strength to every other unit")
    return col_max, diag


def _after_own_firing(U: RiseFunction, R: PartialReset, self_eps: float) -> float:
    r = float(R.evaluate(self_eps))
    if r >= THRESHOLD:
        raise DomainError("partial reset lands at or above threshold")
    return float(U.inverse(r))


def _cycle(U, start, sigma, eps, i):
    """Phase of unit ``i`` along one cycle; returns visited points and end phase.

    ``xs[k]`` is the phase just before the ``k``-th received pulse (``k`` counts
    the other units in firing order after ``i``).
    """
    n = len(sigma)
    x = start + sigma[i]
    xs = np.empty(n - 1)
    for k in range(1, n):
        s = (i + k) % n
        xs[k - 1] = x
        x = U.interact(x, eps[s]) + sigma[s]
    return xs, x


def splay_residual(sigma: Sequence[float], coupling: CouplingMatrix, R: PartialReset,
                   U: RiseFunction) -> np.ndarray:
    """``L(sigma, 1) - 1`` componentwise (the asynchronous-state equations)."""
    sig = np.asarray(sigma, dtype=float)
    eps, self_eps = _sender_strengths(coupling)
    out = np.empty(len(sig))
    for i in range(len(sig)):
        _, end = _cycle(U, _after_own_firing(U, R, self_eps[i]), sig, eps, i)
        out[i] = end - THRESHOLD
    return out


def _residual_and_jacobian(sig, eps, self_eps, R, U):
    n = len(sig)
    F = np.empty(n)
    Jm = np.zeros((n, n))
    for i in range(n):
        xs, end = _cycle(U, _after_own_firing(U, R, self_eps[i]), sig, eps, i)
        F[i] = end - THRESHOLD
        senders = [(i + k) % n for k in range(1, n)]
        slopes = U.d1(xs) / U.d1(U.interact(xs, eps[senders]))
        # d end / d sigma_{i}: every later slope; d end / d sigma_{s_k}: slopes after k
        tail = np.ones(n)
        tail[:-1] = np.cumprod(slopes[::-1])[::-1]
        Jm[i, i] = tail[0]
        for k, s in enumerate(senders):
            Jm[i, s] += tail[k + 1]
    return F, Jm


def _solve_homogeneous(n, eps, U, tol):
    def L(sigma):
        x = sigma
        for _ in range(n - 1):
            if x >= THRESHOLD:
                return np.inf
            u = U.evaluate(x) + eps
            if u >= THRESHOLD:
                return np.inf
            x = U.inverse(u) + sigma
        return x

    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if L(mid) < THRESHOLD:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return hi if abs(L(hi) - 1) <= abs(L(lo) - 1) else lo


def solve_splay(coupling: CouplingMatrix, R: PartialReset, U: RiseFunction,
                tol: float = 1e-13, max_iter: int = 200) -> SplaySolution | None:
    """Solve the asynchronous-state equations of a meta-form network.

    Returns ``None`` only when the equations have a solution with some
    non-positive shift (the periodic asynchronous state then provably does
    not exist).  Raises :class:`NonConvergenceError` if no root is found.

    The homogeneous case is a scalar monotone problem and is bisected.  The
    general case uses Newton's method with the analytic Jacobian (products of
    interaction slopes) and step halving.
    """
    n = coupling.n
    eps, self_eps = _sender_strengths(coupling)
    if n == 1:
        sig = np.array([THRESHOLD - _after_own_firing(U, R, self_eps[0])])
        return _package(sig, coupling, R, U, 0)

    homogeneous = np.allclose(eps, eps[0], rtol=0, atol=0) and np.all(self_eps == 0)
    if homogeneous:
        s = _solve_homogeneous(n, eps[0], U, 1e-17)
        sig = np.full(n, s)
        if np.max(np.abs(splay_residual(sig, coupling, R, U))) > 1e-12:
            raise NonConvergenceError("bisection for the homogeneous splay shift failed")
        return _package(sig, coupling, R, U, 0)

    # seed: equal shifts for the mean pulse strength, ignoring self-coupling
    sig = np.full(n, _solve_homogeneous(n, float(eps.mean()), U, 1e-15))
    with np.errstate(all="ignore"):
        return _newton(sig, coupling, eps, self_eps, R, U, tol, max_iter)


def _newton(sig, coupling, eps, self_eps, R, U, tol, max_iter):
    F, Jm = _residual_and_jacobian(sig, eps, self_eps, R, U)
    norm = np.max(np.abs(F))
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(Jm, -F)
        except np.linalg.LinAlgError:
            raise NonConvergenceError("singular Jacobian in splay solver") from None
        lam = 1.0
        while lam > 1e-10:
            trial = sig + lam * step
            Ft, Jt = _residual_and_jacobian(trial, eps, self_eps, R, U)
            nt = np.max(np.abs(Ft))
            if np.all(np.isfinite(Ft)) and np.all(np.isfinite(Jt)) and nt < norm:
                break
            lam *= 0.5
        else:
            break
        sig, F, Jm, norm = trial, Ft, Jt, nt
        if norm <= tol:
            if np.any(sig <= 0):
                return None
            return _package(sig, coupling, R, U, it)
    raise NonConvergenceError(f"splay solver stalled at residual {norm:.3g}")


def _package(sig, coupling, R, U, iterations) -> SplaySolution:
    eps, _ = _sender_strengths(coupling)
    n = len(sig)
    # phases before the first firing: pull 1 back through the shifts and pulses
    phases = np.empty(n)
    phases[0] = THRESHOLD
    for i in range(1, n):
        x = THRESHOLD
        for r in range(i - 1, -1, -1):
            x = U.inverse(U.evaluate(x - sig[r]) - eps[r])
        phases[i] = x
    res = float(np.max(np.abs(splay_residual(sig, coupling, R, U))))
    state = NetworkState(phases, np.arange(n))
    return SplaySolution(np.asarray(sig, dtype=float), state, res, iterations)


# --------------------------------------------------------------------------
# linear stability
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StabilityReport:
    jacobians: list
    entries: np.ndarray
    ek_bound: float
    spectral_radius: float
    stable: bool
    step_radii: np.ndarray
    product: np.ndarray


def firing_jacobian(slopes: Sequence[float]) -> np.ndarray:
    """Jacobian of one asynchronous firing map given the slopes ``a_2..a_N``.

    First column ``-a_2``, superdiagonal ``a_3 .. a_N``, zero elsewhere.
    """
    a = np.asarray(slopes, dtype=float)
    m = len(a)
    A = np.zeros((m, m))
    A[:, 0] = -a[0]
    A[np.arange(m - 1), np.arange(1, m)] = a[1:]
    return A


def firing_charpoly(slopes: Sequence[float]) -> np.ndarray:
    """Characteristic polynomial of :func:`firing_jacobian`, lowest degree first.

    ``det(z I - A) = z^m + a_2 z^(m-1) + a_2 a_3 z^(m-2) + ... + a_2 ... a_N``,
    so all coefficients are positive and :func:`ek_root_bound` gives
    ``max a_i``.
    """
    a = np.asarray(slopes, dtype=float)
    return np.concatenate([[1.0], np.cumprod(a)])[::-1]


def jacobian_at(state, coupling: CouplingMatrix, R: PartialReset, U: RiseFunction,
                fixed_tol: float = 1e-9) -> StabilityReport:
    """Linearize the return map at an asynchronous periodic state.

    ``state`` is a :class:`SplaySolution` or a section :class:`NetworkState`
    whose ``perm`` lists the units in firing order.
    """
    if isinstance(state, SplaySolution):
        state = state.phases
    n = state.n
    if n < 2:
        raise ValueError("need at least two units")
    back, seq = return_map(state, int(state.perm[0]), coupling, R, U)
    if len(seq) != n or any(len(m) != 1 for m, _ in seq) or \
            np.max(np.abs(back.phases - state.phases)) > fixed_tol:
        raise ValueError("state is not an asynchronous fixed point of the return map")

    E = coupling.entries
    phases = state.phases.copy()
    order = state.perm.copy()
    mats, entries = [], []
    for _ in range(n):
        sender = order[0]
        recv = order[1:]
        x = phases[1:]
        eps_in = E[recv, sender]
        hx = U.interact(x, eps_in)
        a = U.d1(x) / U.d1(hx)
        entries.append(a)
        mats.append(firing_jacobian(a))
        sigma = THRESHOLD - hx[0]
        own = U.inverse(R.evaluate(E[sender, sender]))
        phases = np.concatenate([hx + sigma, [own + sigma]])
        phases[0] = THRESHOLD
        order = np.concatenate([recv, [sender]])
    P = np.eye(n - 1)
    for A in mats:
        P = A @ P
    rho = float(np.max(np.abs(np.linalg.eigvals(P))))
    step_radii = np.array([np.max(np.abs(np.linalg.eigvals(A))) for A in mats])
    entries = np.array(entries)
    return StabilityReport(mats, entries, float(entries.max()), rho, rho < 1.0,
                           step_radii, P)


def charpoly_radius(matrix: np.ndarray) -> float:
    """Spectral radius from the roots of the characteristic polynomial.

    Independent of :func:`numpy.linalg.eigvals` on the matrix itself; only
    sensible for small matrices.
    """
    coeffs = np.poly(np.asarray(matrix, dtype=float))
    return float(np.max(np.abs(np.roots(coeffs)))) if len(coeffs) > 1 else 0.0


def ek_root_bound(coeffs: Sequence[float]) -> float:
    """Root bound ``max c_i / c_{i+1}`` for ``sum c_j z^j`` with positive ``c_j``.

    ``coeffs[j]`` multiplies ``z**j``.
    """
    c = np.asarray(coeffs, dtype=float)
    if c.ndim != 1 or len(c) < 2:
        raise ValueError("need at least two coefficients")
    if np.any(c <= 0):
        raise ValueError("all coefficients must be strictly positive")
    return float(np.max(c[:-1] / c[1:]))


# --------------------------------------------------------------------------
# cluster invariance bounds
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusterBound:
    a1: int
    sufficient_ok: bool
    necessary_ok: bool
    instability_ok: bool
    kind: str


def _bound_margins(a1, N, eps, R, U, a):
    """Margins (rhs - lhs) of the two comparison inequalities for offsets ``a``."""
    a = np.asarray(a, dtype=float)
    inv = U.inverse
    top = (a1 - 1) * eps
    r_top = R.evaluate(top)
    r_low = R.evaluate(np.maximum(top - a * eps, 0.0))
    rest = (N - a1) * eps
    early = (inv(1 - rest) - inv(1 - rest - a * eps)) - (inv(r_top) - inv(r_low))
    late = (1 - inv(1 - a * eps)) - (inv(r_top + rest) - inv(r_low + rest))
    return early, late


def cluster_instability(a1: int, N: int, eps: float, R: PartialReset, U: RiseFunction,
                        num: int = 200) -> bool:
    """Sufficient test that an ``a1``-cluster breaks up under repeated return.

    Requires ``R'(z) > U'(U^-1(R(z))) / U'(U^-1(1 - (N-1) eps + z))`` on the
    whole interval ``[(a1 - 2) eps, (a1 - 1) eps]`` (sampled).
    """
    if a1 < 2:
        return False
    z = np.linspace((a1 - 2) * eps, (a1 - 1) * eps, num)
    lhs = np.asarray(R.derivative(z), dtype=float)
    rhs = U.d1(U.inverse(R.evaluate(z))) / U.d1(U.inverse(1 - (N - 1) * eps + z))
    return bool(np.all(lhs > rhs))


def cluster_bounds(a1: int, N: int, eps: float, R: PartialReset, U: RiseFunction,
                   kind: str | None = None, tol: float = 1e-12) -> ClusterBound:
    """Check the invariance conditions for an avalanche of size ``a1``.

    ``kind`` is ``"icpd"`` or ``"dcpd"``; by default it comes from
    :func:`~partialreset.rise_functions.classify`.  A function that is both
    (such as ``U_b``) is treated as icpd, and then both conditions coincide
    with the exact criterion.
    """
    if not 1 <= a1 <= N:
        raise ValueError(f"need 1 <= a1 <= N, got a1={a1}, N={N}")
    if not (N - 1) * eps < 1:
        raise ValueError("(N-1)*eps must be below 1")
    if kind is None:
        rep = classify(U)
        if rep.icpd:
            kind = "icpd"
        elif rep.dcpd:
            kind = "dcpd"
        else:
            raise ValueError("rise function is neither icpd nor dcpd; the bounds do not "
                             "apply (use simulation)")
    if kind not in ("icpd", "dcpd"):
        raise ValueError(f"kind must be 'icpd' or 'dcpd', got {kind!r}")
    offsets = np.arange(1, a1)
    if len(offsets):
        early, late = _bound_margins(a1, N, eps, R, U, offsets)
        early_ok = bool(np.all(early >= -tol))
        late_ok = bool(np.all(late >= -tol))
    else:
        early_ok = late_ok = True
    suff, nec = (early_ok, late_ok) if kind == "icpd" else (late_ok, early_ok)
    inst = cluster_instability(a1, N, eps, R, U) if kind == "dcpd" or a1 >= 2 else False
    return ClusterBound(a1, suff, nec, inst, kind)


def reset_strength_bounds(a1: int, N: int, eps: float, U: RiseFunction,
                          kind: str = "icpd", xtol: float = 1e-12):
    """Critical linear-reset strengths from the two bounds at offset ``a = 1``.

    Returns ``(c_stable, c_unstable)``: below ``c_stable`` an ``a1``-cluster is
    certified invariant, above ``c_unstable`` it is certified not to be (for
    the given ``kind``).  An entry is ``None`` when its margin does not change
    sign on ``[0, 1]``.
    """
    def margin(c, which):
        early, late = _bound_margins(a1, N, eps, linear_reset(c), U, [1])
        return float((early if which == "early" else late)[0])

    out = []
    order = ("early", "late") if kind == "icpd" else ("late", "early")
    for which in order:
        m0, m1 = margin(0.0, which), margin(1.0, which)
        if m0 * m1 > 0:
            out.append(None)
        else:
            out.append(optimize.bisect(margin, 0.0, 1.0, args=(which,), xtol=xtol))
    return tuple(out)


def commutation_bracket(phi: float, psi: float, chain: Sequence[tuple[float, float]],
                        U: RiseFunction) -> tuple[float, float, float]:
    """Phase-difference bracket for a chain of shifts and sub-threshold pulses.

    Returns ``(pulse_first, chain, shift_first)``: the difference ``phi - psi``
    after one pulse of the total chain strength applied before any shift, after
    the chain itself, and after the pulse applied once the smallest shift that
    keeps ``phi`` ahead of its chain image has elapsed.  For an icpd rise
    function the three values are non-decreasing; for a dcpd one they are
    non-increasing.
    """
    if psi > phi:
        raise ValueError("need psi <= phi")
    total = float(sum(e for _, e in chain))
    end = compose_chain(phi, chain, U)
    lower = H(phi, total, U) - H(psi, total, U)
    middle = end - compose_chain(psi, chain, U)
    shift = max(float(H_inverse(end, total, U)) - phi, 0.0)
    upper = H(phi + shift, total, U) - H(psi + shift, total, U)
    return float(lower), float(middle), float(upper)


# --------------------------------------------------------------------------
# exactly solvable rise function U_b
# --------------------------------------------------------------------------

def _ccr_residual(c, a, N, eps, b):
    lhs = np.exp(b * (1 - ((N - a) + c * (a - 1)) * eps))
    rhs = np.expm1(-b * c * eps) / np.expm1(-b * eps)
    return lhs - rhs


def c_critical_closed_form(N: int, eps: float, b: float) -> float:
    """Critical reset strength for two-unit clusters in closed form."""
    return float(np.log1p(np.exp(b - b * (N - 2) * eps) * -np.expm1(-b * eps)) / (b * eps))


def c_critical(a: int, N: int, eps: float, b: float, xtol: float = 1e-13) -> float:
    """Reset strength above which ``a``-avalanches of ``U_b`` split (bisection)."""
    if b >= 0:
        raise ValueError("critical reset strengths need b < 0 (convex U_b)")
    if not (N - 1) * eps < 1 or eps <= 0:
        raise ValueError("need 0 < eps and (N-1)*eps < 1")
    if not 2 <= a <= N:
        raise ValueError(f"need 2 <= a <= N, got a={a}, N={N}")
    f0 = _ccr_residual(0.0, a, N, eps, b)
    f1 = _ccr_residual(1.0, a, N, eps, b)
    if not (f0 > 0 > f1):
        raise DomainError(f"no sign change on (0, 1) for a={a} (f(0)={f0:.3g}, "
                          f"f(1)={f1:.3g})")
    return float(optimize.bisect(_ccr_residual, 0.0, 1.0, args=(a, N, eps, b),
                                 xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200))


@dataclass(frozen=True)
class BifurcationCurve:
    N: int
    eps: float
    b: float
    c_cr: dict
    method: dict
    residual: dict

    def is_strictly_decreasing(self) -> bool:
        vals = [self.c_cr[a] for a in sorted(self.c_cr)]
        return all(x > y for x, y in zip(vals, vals[1:]))

    def largest_stable_size(self, c: float) -> int:
        """Largest cluster size that stays invariant at reset strength ``c``.

        Sizes ``a`` with ``c > c_cr(a)`` are unstable; the result is one below
        the smallest such ``a`` (``N`` when none is unstable).
        """
        bad = [a for a in sorted(self.c_cr) if c > self.c_cr[a]]
        return bad[0] - 1 if bad else self.N

    def to_table(self) -> str:
        buf = io.StringIO()
        buf.write("a,c_cr,method,residual\n")
        for a in sorted(self.c_cr):
            buf.write(f"{a},{self.c_cr[a]:.17g},{self.method[a]},{self.residual[a]:.3e}\n")
        return buf.getvalue()


def bifurcation_curve(N: int, eps: float, b: float) -> BifurcationCurve:
    """All ``N - 1`` critical reset strengths for ``U_b``."""
    c, method, res = {}, {}, {}
    for a in range(2, N + 1):
        c[a] = c_critical(a, N, eps, b)
        method[a] = "bisection"
        res[a] = float(abs(_ccr_residual(c[a], a, N, eps, b)))
    if N >= 2:
        c[2] = c_critical_closed_form(N, eps, b)
        method[2] = "closed-form"
        res[2] = float(abs(_ccr_residual(c[2], 2, N, eps, b)))
    return BifurcationCurve(N, eps, b, c, method, res)


def delta_return_map_Ub(delta_phi, a1: int, N: int, eps: float, c: float, b: float):
    """Return map of the lag behind the leader of an ``a1``-avalanche for ``U_b``.

    Exact for every firing sequence of the other units; the lag must lie in
    ``[0, 1 - U_b^-1(1 - eps)]`` so that one pulse pulls the followers along.
    """
    d = np.asarray(delta_phi, dtype=float)
    eb = np.exp(b)
    upper = 1 - np.expm1(b * (1 - eps)) / np.expm1(b)
    if np.any(d < -1e-15) or np.any(d > upper + 1e-15):
        raise DomainError(f"lag must lie in [0, {upper:.6g}]")
    d = np.clip(d, 0.0, upper)
    pref = np.exp(b * eps * (N - a1 + c * (a1 - 1))) / (1 - eb)
    out = pref * (np.exp(-b * c) * (eb + (1 - eb) * d) ** c - 1)
    return out[()] if out.ndim == 0 else out
