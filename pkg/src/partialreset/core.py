"""Elementary quantities and maps of the phase representation.

Potentials are normalized so that the reset value is 0, the threshold is 1
and the free period is 1.  A phase ``phi`` maps to the potential ``U(phi)``
through a rise function (see :mod:`partialreset.rise_functions`).

The three elementary maps are

* ``H(phi, eps)``: sub-threshold reception of a pulse of strength ``eps``,
* ``J(phi, eps)``: supra-threshold reception followed by a partial reset,
* ``S(phi, sigma)``: free evolution by ``sigma``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

RESET = 0.0
THRESHOLD = 1.0
PERIOD = 1.0

#: Default absolute tolerance for fixed-point and round-trip comparisons.
ATOL = 1e-9


class DomainError(ValueError):
    """An argument lies outside the domain of an elementary map."""


class ChainDomainError(DomainError):
    """A map in a composed chain left its domain.

    Attributes
    ----------
    index : int
        Position of the failing ``(sigma, eps)`` pair in the chain.
    """

    def __init__(self, index: int, msg: str):
        super().__init__(f"chain element {index}: {msg}")
        self.index = index


# --------------------------------------------------------------------------
# partial reset
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PartialReset:
    """Partial reset function ``R`` acting on the supra-threshold charge."""

    evaluate: Callable
    derivative: Callable
    kind: str = "custom"
    c: float | None = None

    def __call__(self, zeta):
        return self.evaluate(zeta)

    def is_neuronal(self, zeta_max: float = 1.0, num: int = 1001) -> bool:
        """Check ``0 <= R(zeta) <= zeta`` on a grid over ``[0, zeta_max]``."""
        z = np.linspace(0.0, zeta_max, num)
        r = np.asarray(self.evaluate(z), dtype=float)
        return bool(np.all(r >= -1e-15) and np.all(r <= z + 1e-15))

    def is_valid(self, zeta_max: float = 1.0, num: int = 1001) -> bool:
        """``R(0) = 0`` and monotone non-decreasing on a sampled grid."""
        z = np.linspace(0.0, zeta_max, num)
        r = np.asarray(self.evaluate(z), dtype=float)
        return bool(abs(r[0]) < 1e-15 and np.all(np.diff(r) >= -1e-15))


def linear_reset(c: float) -> PartialReset:
    """``R_c(zeta) = c * zeta``; ``c = 0`` is absorption, ``c = 1`` conserves charge."""
    if c < 0:
        raise ValueError(f"reset strength must be non-negative, got {c}")
    c = float(c)
    return PartialReset(
        evaluate=lambda z: c * z,
        derivative=lambda z: np.full(np.shape(z), c)[()],
        kind="linear-c",
        c=c,
    )


def custom_reset(evaluate: Callable, derivative: Callable, check: bool = True) -> PartialReset:
    """Wrap a user supplied reset function, validating ``R(0) = 0`` and monotonicity."""
    R = PartialReset(evaluate=evaluate, derivative=derivative, kind="custom")
    if check and not R.is_valid():
        raise ValueError("partial reset must satisfy R(0) = 0 and be non-decreasing")
    return R


def table_reset(zeta: Sequence[float], values: Sequence[float]) -> PartialReset:
    """Piecewise-linear reset through tabulated ``(zeta, R(zeta))`` points.

    The table must start at ``(0, 0)``; beyond the last point the final slope
    is continued.
    """
    z = np.asarray(zeta, dtype=float)
    r = np.asarray(values, dtype=float)
    if z.ndim != 1 or z.shape != r.shape or len(z) < 2:
        raise ValueError("reset table needs two equally long 1-d sequences (>= 2 points)")
    if z[0] != 0.0 or r[0] != 0.0:
        raise ValueError("reset table must start at (0, 0)")
    if np.any(np.diff(z) <= 0):
        raise ValueError("reset table zeta values must be strictly increasing")
    slopes = np.diff(r) / np.diff(z)

    def evaluate(x):
        x_arr = np.asarray(x, dtype=float)
        out = np.interp(x_arr, z, r)
        out = np.where(x_arr > z[-1], r[-1] + slopes[-1] * (x_arr - z[-1]), out)
        return out if np.ndim(x) else float(out)

    def derivative(x):
        x_arr = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(z, x_arr, side="right") - 1, 0, len(slopes) - 1)
        out = slopes[idx]
        return out if np.ndim(x) else float(out)

    return custom_reset(evaluate, derivative)


# --------------------------------------------------------------------------
# coupling
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    """Pulse strengths ``entries[i, j]``: the jump of unit ``i`` when ``j`` fires.

    ``eps`` is set for homogeneous all-to-all networks and enables the fast
    path in the simulator.  ``sizes`` is set for meta-oscillator networks.
    """

    entries: np.ndarray
    eps: float | None = None
    sizes: tuple[int, ...] | None = field(default=None)

    def __post_init__(self):
        e = np.array(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError(f"coupling must be a square matrix, got shape {e.shape}")
        if np.any(e < 0):
            raise ValueError("coupling strengths must be non-negative")
        if e.shape[0] > 0 and e.sum(axis=1).max() >= THRESHOLD - RESET:
            raise ValueError(
                f"total input {e.sum(axis=1).max():.6g} per unit must stay below "
                "threshold - reset = 1 (infinite avalanches otherwise)"
            )
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def homogeneous(cls, n: int, eps: float) -> "CouplingMatrix":
        """All-to-all coupling ``eps`` without self-interaction."""
        e = np.full((n, n), float(eps))
        np.fill_diagonal(e, 0.0)
        return cls(e, eps=float(eps))

    @classmethod
    def meta(cls, sizes: Sequence[int], eps: float) -> "CouplingMatrix":
        """Reduced network of clusters of the given sizes.

        Meta-oscillator ``j`` of size ``a_j`` sends ``a_j * eps`` to every other
        meta-oscillator and feeds ``(a_j - 1) * eps`` back to itself.
        """
        a = np.asarray(sizes, dtype=int)
        if a.ndim != 1 or len(a) == 0 or np.any(a < 1):
            raise ValueError("meta sizes must be a non-empty list of positive integers")
        e = np.tile(a * float(eps), (len(a), 1))
        np.fill_diagonal(e, (a - 1) * float(eps))
        return cls(e, sizes=tuple(int(x) for x in a))

    @classmethod
    def random_uniform(cls, n: int, eps_min: float, eps_max: float,
                       rng: np.random.Generator) -> "CouplingMatrix":
        """Independent uniform strengths on ``[eps_min, eps_max]``, zero diagonal."""
        if not 0 <= eps_min <= eps_max:
            raise ValueError("need 0 <= eps_min <= eps_max")
        e = rng.uniform(eps_min, eps_max, size=(n, n))
        np.fill_diagonal(e, 0.0)
        return cls(e)


# --------------------------------------------------------------------------
# elementary maps
# --------------------------------------------------------------------------

def H(phi, eps, U):
    """Sub-threshold interaction ``U^-1(U(phi) + eps)``.

    Raises :class:`DomainError` if the input would be supra-threshold or
    ``eps`` is negative.
    """
    if np.any(np.asarray(eps) < 0):
        raise DomainError("pulse strength must be non-negative (use H_inverse)")
    if np.any(np.asarray(phi) > THRESHOLD + 1e-12) or np.any(np.asarray(phi) < RESET - 1e-12):
        raise DomainError("phase outside [0, 1]")
    u = U.evaluate(phi) + eps
    if np.any(u > THRESHOLD + 1e-15):
        raise DomainError("supra-threshold input, J applies")
    return U.inverse(np.minimum(u, THRESHOLD))


def H_inverse(phi, eps, U):
    """Inverse interaction ``H_{-eps}(phi) = U^-1(U(phi) - eps)``."""
    if np.any(np.asarray(eps) < 0):
        raise DomainError("pulse strength must be non-negative")
    if np.any(np.asarray(phi) > THRESHOLD + 1e-12) or np.any(np.asarray(phi) < RESET - 1e-12):
        raise DomainError("phase outside [0, 1]")
    u = U.evaluate(phi) - eps
    if np.any(u < RESET - 1e-15):
        raise DomainError("inverse interaction below reset")
    return U.inverse(np.maximum(u, RESET))


def J(phi, eps, R, U):
    """Supra-threshold interaction ``U^-1(R(U(phi) + eps - 1))``.

    A reset landing at or above threshold is rejected.
    """
    zeta = U.evaluate(phi) + eps - THRESHOLD
    if np.any(zeta < -1e-15):
        raise DomainError("sub-threshold input, H applies")
    r = R.evaluate(np.maximum(zeta, 0.0))
    if np.any(np.asarray(r) >= THRESHOLD):
        raise DomainError("partial reset lands at or above threshold")
    return U.inverse(RESET + r)


def S(phi, sigma):
    """Free evolution by ``sigma`` (no wrapping)."""
    return phi + sigma


def compose_chain(phi, chain: Sequence[tuple[float, float]], U):
    """Apply ``S_sigma o H_eps`` for each ``(sigma, eps)`` pair in order."""
    x = phi
    for k, (sigma, eps) in enumerate(chain):
        try:
            x = S(H(x, eps, U), sigma)
        except DomainError as exc:
            raise ChainDomainError(k, str(exc)) from None
    return x
