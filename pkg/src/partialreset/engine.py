"""Exact event-driven simulation of pulse-coupled oscillators with partial reset.

Between avalanches all phases advance at unit speed, so the next event time
is known in closed form: the simulator jumps from one firing to the next
without any time discretization.

Oscillators are labelled ``0 .. N-1``.  Internally the simulator works with a
phase vector indexed by oscillator; :class:`NetworkState` is the sorted
Poincare-section view with the permutation kept alongside.
"""
from __future__ import annotations

import io
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import THRESHOLD, RESET, DomainError, CouplingMatrix, PartialReset
from . import _fastpath
from .rise_functions import RiseFunction

#: Oscillators with phase >= 1 - TRIGGER_TOL belong to the triggering set.
TRIGGER_TOL = 1e-12
#: Tolerance for the section recurrence test in :func:`detect_clusters`.
PERIODIC_TOL = 1e-7


class AvalancheError(RuntimeError):
    """The avalanche did not terminate within ``N`` generations."""


class LivelockError(RuntimeError):
    """The reference oscillator did not fire again within the firing budget."""


@dataclass(frozen=True, eq=False)
class NetworkState:
    """Sorted phases ``1 = phases[0] >= phases[1] >= ...`` and the labels.

    ``perm[k]`` is the oscillator holding the ``k``-th largest phase.
    """

    phases: np.ndarray
    perm: np.ndarray

    @classmethod
    def from_phases(cls, phases_by_id: Sequence[float]) -> "NetworkState":
        """Sort a per-oscillator phase vector (ties keep label order)."""
        p = np.asarray(phases_by_id, dtype=float)
        order = np.argsort(-p, kind="stable")
        return cls(p[order].copy(), order)

    @property
    def n(self) -> int:
        return len(self.phases)

    def by_id(self) -> np.ndarray:
        out = np.empty_like(self.phases)
        out[self.perm] = self.phases
        return out

    def is_section(self, tol: float = TRIGGER_TOL) -> bool:
        p = self.phases
        return bool(abs(p[0] - 1.0) <= tol and np.all(np.diff(p) <= 0)
                    and p[-1] >= -tol
                    and np.array_equal(np.sort(self.perm), np.arange(len(p))))


@dataclass(frozen=True)
class AvalancheResult:
    members: frozenset
    steps: list
    potentials: np.ndarray


@dataclass
class FiringSequence:
    """Ordered ``(avalanche set, shift)`` pairs of one return."""

    events: list = field(default_factory=list)

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def sizes(self) -> list[int]:
        return [len(m) for m, _ in self.events]


@dataclass(frozen=True)
class ClusterPartition:
    sizes: tuple
    periodic: bool
    period: float | None = None
    period_spikes: int | None = None

    @property
    def max_size(self) -> int:
        return max(self.sizes) if self.sizes else 0


@dataclass
class EventLog:
    """Firing times and avalanche members, plus optional section snapshots.

    ``snapshots`` holds ``(time, sorted phases)`` just before every firing of
    the reference oscillator ``ref``.
    """

    n: int
    ref: int = 0
    times: list = field(default_factory=list)
    members: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    def __len__(self):
        return len(self.times)

    def write(self, fh: io.TextIOBase, snapshot_every: int = 0) -> None:
        """One JSON record per line: ``{"t": ..., "members": [...]}``.

        With ``snapshot_every = k > 0`` every ``k``-th snapshot is written as a
        ``{"t": ..., "section": [...]}`` record.
        """
        snaps = iter(self.snapshots[::snapshot_every] if snapshot_every else ())
        nxt = next(snaps, None)
        for t, m in zip(self.times, self.members):
            while nxt is not None and nxt[0] <= t:
                fh.write(json.dumps({"t": _fmt(nxt[0]),
                                     "section": [_fmt(x) for x in nxt[1]]}) + "\n")
                nxt = next(snaps, None)
            fh.write(json.dumps({"t": _fmt(t), "members": sorted(int(i) for i in m)}) + "\n")

    @classmethod
    def read(cls, fh: Iterable[str], n: int, ref: int = 0) -> "EventLog":
        log = cls(n=n, ref=ref)
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            t = float(rec["t"])
            if "members" in rec:
                log.times.append(t)
                log.members.append(tuple(rec["members"]))
            else:
                log.snapshots.append((t, np.array([float(x) for x in rec["section"]])))
        return log


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# --------------------------------------------------------------------------
# avalanche and firing map
# --------------------------------------------------------------------------

def _avalanche(u: np.ndarray, trigger: np.ndarray, coupling: CouplingMatrix,
               tol: float, steps: list | None = None):
    """Grow the avalanche from ``trigger`` (bool mask) on potentials ``u``.

    Returns the member mask and the total input every unit received.
    """
    n = len(u)
    members = trigger.copy()
    eps = coupling.eps
    if eps is not None:
        k = int(members.sum())
        new = members
        for _ in range(n + 1):
            if steps is not None:
                steps.append(frozenset(np.flatnonzero(new).tolist()))
            new = ~members & (u + k * eps >= THRESHOLD - tol)
            if not new.any():
                inp = eps * (k - members)
                return members, inp
            members = members | new
            k += int(new.sum())
    else:
        E = coupling.entries
        inp = E[:, members].sum(axis=1)
        new = members
        for _ in range(n + 1):
            if steps is not None:
                steps.append(frozenset(np.flatnonzero(new).tolist()))
            new = ~members & (u + inp >= THRESHOLD - tol)
            if not new.any():
                return members, inp
            members = members | new
            inp = inp + E[:, new].sum(axis=1)
    raise AvalancheError("avalanche exceeded N generations; check the coupling bound")


def _post_potentials(u, members, inp, R: PartialReset):
    out = u + inp
    if members.any():
        zeta = np.maximum(out[members] - THRESHOLD, 0.0)
        r = np.asarray(R.evaluate(zeta), dtype=float)
        if np.any(r >= THRESHOLD):
            raise DomainError("partial reset lands at or above threshold")
        out[members] = RESET + r
    return out


def resolve_avalanche(potentials: Sequence[float], trigger: Iterable[int],
                      coupling: CouplingMatrix, R: PartialReset,
                      tol: float = TRIGGER_TOL) -> AvalancheResult:
    """Resolve the avalanche started by ``trigger`` on per-oscillator potentials.

    Pulses accumulate generation by generation; resets are applied once at
    the end, to ``R(u + input - 1)`` for members, while everyone else keeps
    ``u + input``.
    """
    u = np.array(potentials, dtype=float)
    trig = np.zeros(len(u), dtype=bool)
    trig[list(trigger)] = True
    u[trig] = THRESHOLD
    steps: list = []
    members, inp = _avalanche(u, trig, coupling, tol, steps)
    post = _post_potentials(u, members, inp, R)
    return AvalancheResult(frozenset(np.flatnonzero(members).tolist()), steps, post)


def _fire(p: np.ndarray, coupling: CouplingMatrix, R: PartialReset, U: RiseFunction,
          tol: float = TRIGGER_TOL):
    """One avalanche on the per-oscillator phase vector ``p`` (max phase = 1).

    Returns the phases right after the avalanche (unshifted) and the member mask.
    """
    trig = p >= THRESHOLD - tol
    u = U.evaluate(p)
    u[trig] = THRESHOLD
    members, inp = _avalanche(u, trig, coupling, tol)
    post = _post_potentials(u, members, inp, R)
    return U.inverse(post), members


def _shift_to_section(p: np.ndarray, tol: float = TRIGGER_TOL):
    sigma = THRESHOLD - p.max()
    p = p + sigma
    p[p >= THRESHOLD - tol] = THRESHOLD
    return p, sigma


def firing_map(state: NetworkState, coupling: CouplingMatrix, R: PartialReset,
               U: RiseFunction):
    """Map a section state to the section state just before the next avalanche.

    Returns ``(next_state, members, sigma)`` where ``members`` is the avalanche
    set and ``sigma`` the free evolution time until the next firing.
    """
    p = state.by_id()
    post, members = _fire(p, coupling, R, U)
    nxt, sigma = _shift_to_section(post)
    return (NetworkState.from_phases(nxt), frozenset(np.flatnonzero(members).tolist()),
            float(sigma))


def return_map(state: NetworkState, ref: int, coupling: CouplingMatrix, R: PartialReset,
               U: RiseFunction, max_firings: int | None = None):
    """Iterate firing maps until ``ref`` fires a second time.

    The returned state is the section just before that second avalanche; the
    firing sequence lists the avalanches from the first firing of ``ref`` up
    to (excluding) the second.
    """
    n = state.n
    budget = n * n if max_firings is None else max_firings
    seq = FiringSequence()
    cur = state
    for k in range(budget + 1):
        nxt, members, sigma = firing_map(cur, coupling, R, U)
        if k == 0 and ref not in members:
            raise ValueError(f"oscillator {ref} does not fire in the first avalanche")
        if k > 0 and ref in members:
            return cur, seq
        seq.events.append((members, sigma))
        cur = nxt
    raise LivelockError(f"oscillator {ref} did not fire again within {budget} firings")


# --------------------------------------------------------------------------
# simulation loop
# --------------------------------------------------------------------------

def simulate(initial, coupling: CouplingMatrix, R: PartialReset, U: RiseFunction,
             n_events: int | None = None, duration: float | None = None, ref: int = 0,
             record_events: bool = True, max_snapshots: int | None = None,
             max_silent: int | None = None, stop_when_periodic: bool = False,
             min_ref_spikes: int = 5, fast: bool | None = None) -> EventLog:
    """Event-driven run from ``initial`` (phase vector by oscillator or a state).

    Stops after ``n_events`` avalanches or when the next firing time exceeds
    ``duration``, whichever comes first.  ``max_snapshots`` caps the number of
    retained section snapshots (oldest dropped).  ``max_silent`` (default
    ``N*N``) is the livelock guard: the run aborts if ``ref`` stays silent for
    that many consecutive avalanches.

    With ``stop_when_periodic`` the run ends early once the reference section
    has recurred twice with the same period (see :func:`find_period`), after at
    least ``min_ref_spikes`` reference firings.

    ``fast`` selects the compiled loop (closed-form rise families, linear
    reset and a spike budget only); ``None`` uses it whenever possible.
    Both loops perform the same arithmetic.
    """
    if n_events is None and duration is None:
        raise ValueError("give n_events and/or duration")
    if isinstance(initial, NetworkState):
        p = initial.by_id()
    else:
        p = np.array(initial, dtype=float)
    n = len(p)
    if coupling.n != n:
        raise ValueError(f"coupling is {coupling.n}x{coupling.n}, state has {n} oscillators")
    if np.any(p < 0) or np.any(p > THRESHOLD + TRIGGER_TOL):
        raise ValueError("initial phases must lie in [0, 1]")
    silent_limit = n * n if max_silent is None else max_silent

    enc = _fastpath.encode(U, R) if n_events is not None and fast is not False else None
    if fast and enc is None:
        raise ValueError("the compiled loop needs a closed-form rise family, a linear "
                         "reset and n_events")
    if enc is not None:
        return _simulate_fast(p, coupling, R, enc, n_events, duration, ref, record_events,
                              max_snapshots, silent_limit, stop_when_periodic,
                              min_ref_spikes)

    log = EventLog(n=n, ref=ref)
    snaps = deque(maxlen=max_snapshots)
    t = THRESHOLD - p.max()
    p, _ = _shift_to_section(p)
    fired = 0
    silent = 0
    limit = np.inf if n_events is None else n_events
    while fired < limit and (duration is None or t <= duration):
        post, members = _fire(p, coupling, R, U)
        if members[ref]:
            snaps.append((t, np.sort(p)[::-1]))
            silent = 0
            if stop_when_periodic and len(snaps) > min_ref_spikes and _recurred(snaps):
                if record_events:
                    log.times.append(t)
                    log.members.append(tuple(np.flatnonzero(members).tolist()))
                break
        else:
            silent += 1
            if silent > silent_limit:
                raise LivelockError(f"oscillator {ref} silent for {silent} avalanches")
        if record_events:
            log.times.append(t)
            log.members.append(tuple(np.flatnonzero(members).tolist()))
        p, sigma = _shift_to_section(post)
        t += sigma
        fired += 1
    log.snapshots = list(snaps)
    return log


def _simulate_fast(p, coupling, R, enc, n_events, duration, ref, record, max_snapshots,
                   silent_limit, stop_when_periodic, min_ref_spikes):
    code, prm = enc
    n = len(p)
    cap = max_snapshots if max_snapshots is not None else n_events + 1
    eps_h = -1.0 if coupling.eps is None else coupling.eps
    out = _fastpath.run(p.copy(), np.ascontiguousarray(coupling.entries), eps_h, R.c, code,
                        prm, ref, n_events, np.inf if duration is None else duration,
                        TRIGGER_TOL, stop_when_periodic, min_ref_spikes, max(cap, 1),
                        PERIODIC_TOL, silent_limit, record)
    fired, t, times, offsets, flat, ring, ring_t, head, count, status = out
    if status == _fastpath.STATUS_LIVELOCK:
        raise LivelockError(f"oscillator {ref} silent for more than {silent_limit} avalanches")
    if status == _fastpath.STATUS_RESET_ABOVE:
        raise DomainError("partial reset lands at or above threshold")
    if status == _fastpath.STATUS_AVALANCHE:
        raise AvalancheError("avalanche exceeded N generations; check the coupling bound")
    log = EventLog(n=n, ref=ref)
    if record:
        log.times = times[:fired].tolist()
        log.members = [tuple(flat[offsets[k]:offsets[k + 1]].tolist()) for k in range(fired)]
    cap = ring.shape[0]
    idx = [(head - count + j) % cap for j in range(count)]
    log.snapshots = [(float(ring_t[i]), ring[i].copy()) for i in idx]
    return log


# --------------------------------------------------------------------------
# cluster detection
# --------------------------------------------------------------------------

def _components(n: int, groups: Iterable[Sequence[int]]) -> list[int]:
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    seen = np.zeros(n, dtype=bool)
    for g in groups:
        g = list(g)
        seen[g] = True
        r0 = find(g[0])
        for j in g[1:]:
            rj = find(j)
            if rj != r0:
                parent[rj] = r0
    counts: dict[int, int] = {}
    for i in range(n):
        if seen[i]:
            r = find(i)
            counts[r] = counts.get(r, 0) + 1
    return sorted(counts.values(), reverse=True)


def _recurred(snaps, tol: float = PERIODIC_TOL) -> bool:
    last = snaps[-1][1]
    for k in range(1, (len(snaps) - 1) // 2 + 1):
        if (np.max(np.abs(snaps[-1 - k][1] - last)) <= tol
                and np.max(np.abs(snaps[-1 - 2 * k][1] - snaps[-1 - k][1])) <= tol):
            return True
    return False


def find_period(log: EventLog, tol: float = PERIODIC_TOL,
                max_period: int | None = None) -> int | None:
    """Smallest ``k`` such that the last section snapshot repeats ``k`` snapshots back."""
    snaps = log.snapshots
    kmax = min(len(snaps) - 1, 10 * log.n if max_period is None else max_period)
    if kmax < 1:
        return None
    last = snaps[-1][1]
    for k in range(1, kmax + 1):
        if np.max(np.abs(snaps[-1 - k][1] - last)) <= tol:
            return k
    return None


def detect_clusters(log: EventLog, window: int | None = None, tol: float = PERIODIC_TOL,
                    max_period: int | None = None) -> ClusterPartition:
    """Cluster sizes in the trailing part of a log.

    Clusters are groups of oscillators linked by firing in the same avalanche
    (pulse synchrony), not by phase proximity.  If the section snapshots of
    the reference oscillator recur within ``tol``, the state is periodic and
    the clusters are read from exactly one period.  Otherwise the trailing
    events back to the point where every oscillator has fired once (or the
    last ``window`` events) are used and ``periodic`` is False.
    """
    if not log.times:
        return ClusterPartition((), False)
    k = find_period(log, tol, max_period)
    if k is not None:
        t0, t1 = log.snapshots[-1 - k][0], log.snapshots[-1][0]
        lo = int(np.searchsorted(log.times, t0, side="left"))
        hi = int(np.searchsorted(log.times, t1, side="left"))
        groups = log.members[lo:hi]
        return ClusterPartition(tuple(_components(log.n, groups)), True,
                                period=float(t1 - t0), period_spikes=k)
    events = log.members if window is None else log.members[-window:]
    seen = np.zeros(log.n, dtype=bool)
    groups = []
    for m in reversed(events):
        groups.append(m)
        seen[list(m)] = True
        if window is None and seen.all():
            break
    return ClusterPartition(tuple(_components(log.n, groups)), False)
