"""Exact event-driven flow for hard spheres in a box.

Between events every sphere moves ballistically.  A pair event exchanges
the normal momentum component along the line of centers; a wall event
flips the normal component.  Trajectories that come within tolerance of a
grazing contact or of two coinciding events are refused with
DegeneracyError: such orbits form a null set and callers reject and
re-sample them, counting the rejections.

Backward evolution and one-sided limits: evolving by a negative time is
realized as momentum reversal, forward evolution, reversal again.  When
the requested end time lands on an event within tolerance, the FROM_PAST
limit keeps the pre-event momenta and FROM_FUTURE applies the event law.
A configuration that starts with a touching pair is legitimate input; the
pair collides immediately when it is approaching in the direction of
integration and simply separates otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from hardsphere.geometry import (
    EPS_CONTACT_REL,
    EPS_GRAZE_REL,
    Configuration,
    PhasePoint,
    Vec3,
)

# Two candidate events closer than EPS_EVENT_REL * a / speed-scale in time
# are treated as simultaneous (degenerate).
EPS_EVENT_REL = 1e-9

_MAX_EVENTS_DEFAULT = 1_000_000


class Limit(Enum):
    FROM_FUTURE = "from_future"
    FROM_PAST = "from_past"


class Direction(Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


class EventKind(Enum):
    PAIR = "pair"
    WALL = "wall"


class DegeneracyKind(Enum):
    GRAZING_CONTACT = "grazing_contact"
    SIMULTANEOUS_EVENTS = "simultaneous_events"
    CORNER_CONTACT = "corner_contact"


class DegeneracyError(Exception):
    """A trajectory hit a grazing or coinciding event within tolerance."""

    def __init__(self, kind: DegeneracyKind, detail: str = ""):
        self.kind = kind
        super().__init__(f"{kind.value}: {detail}" if detail else kind.value)


@dataclass(frozen=True, slots=True)
class Event:
    """Next contact along the current ballistic segment.

    For PAIR events ``i < j`` and ``omega`` is the contact unit vector
    from center i to center j.  For WALL events ``axis``/``side`` name the
    face and ``normal`` is the outward unit normal.
    """

    kind: EventKind
    time_to_event: float
    i: int
    j: int = -1
    axis: int = -1
    side: int = 0
    omega: Vec3 | None = None
    normal: Vec3 | None = None


@dataclass(slots=True)
class LogEntry:
    time: float
    event: Event
    positions: tuple
    momenta_before: tuple
    momenta_after: tuple


@dataclass(slots=True)
class TrajectoryLog:
    """Per-event record of one evolve() call.

    ``entries`` is populated only when requested; the event counters are
    always maintained.  Times are elapsed durations from the start of the
    integration (also for backward runs, where momenta are reported as
    they appear on the actual trajectory).
    """

    direction: Direction = Direction.FORWARD
    n_pair: int = 0
    n_wall: int = 0
    entries: list[LogEntry] = field(default_factory=list)

    @property
    def n_events(self) -> int:
        return self.n_pair + self.n_wall

    def to_csv_lines(self) -> list[str]:
        """Trajectory dump, one CSV row per event (debugging aid)."""
        rows = ["time,kind,i,j,axis,side,p_before,p_after"]
        for e in self.entries:
            ev = e.event
            pb = ";".join(f"{c:.17g}" for pp in e.momenta_before for c in pp)
            pa = ";".join(f"{c:.17g}" for pp in e.momenta_after for c in pp)
            rows.append(
                f"{e.time:.17g},{ev.kind.value},{ev.i},{ev.j},{ev.axis},{ev.side},{pb},{pa}"
            )
        return rows


def pair_collide(p_i: Vec3, p_j: Vec3, omega: Vec3) -> tuple[Vec3, Vec3]:
    """Elastic hard-sphere momentum exchange along the contact normal.

    ``omega`` must be the unit vector from center i to center j.  The
    normal component of the relative momentum is exchanged; total momentum
    and kinetic energy are conserved up to roundoff, and applying the map
    twice restores the inputs.
    """
    c = omega.dot(p_i - p_j)
    d = omega.scale(c)
    return (p_i - d, p_j + d)


def wall_reflect(p: Vec3, normal: Vec3) -> Vec3:
    """Specular reflection: flip the momentum component along ``normal``."""
    return p - normal.scale(2.0 * normal.dot(p))


_AXIS_NORMALS = {
    (0, 1): Vec3(1.0, 0.0, 0.0),
    (0, -1): Vec3(-1.0, 0.0, 0.0),
    (1, 1): Vec3(0.0, 1.0, 0.0),
    (1, -1): Vec3(0.0, -1.0, 0.0),
    (2, 1): Vec3(0.0, 0.0, 1.0),
    (2, -1): Vec3(0.0, 0.0, -1.0),
}


class _Engine:
    """Mutable integration state on plain float lists (hot path)."""

    __slots__ = ("q", "p", "n", "a", "a2", "lo", "hi", "eps_len", "eps_t",
                 "graze_rel", "log", "collect", "elapsed", "max_events")

    def __init__(self, config: Configuration, collect_log: bool, max_events: int):
        dom = config.domain
        self.q = [list(pt.q.as_tuple()) for pt in config.particles]
        self.p = [list(pt.p.as_tuple()) for pt in config.particles]
        self.n = len(self.q)
        self.a = dom.a
        self.a2 = dom.a * dom.a
        self.lo = list(dom.inset_lower)
        self.hi = list(dom.inset_upper)
        self.eps_len = EPS_CONTACT_REL * dom.a
        v2 = sum(c * c for row in self.p for c in row)
        vscale = math.sqrt(v2)
        self.eps_t = EPS_EVENT_REL * dom.a / vscale if vscale > 0.0 else math.inf
        self.graze_rel = EPS_GRAZE_REL
        self.log = TrajectoryLog()
        self.collect = collect_log
        self.elapsed = 0.0
        self.max_events = max_events

    # -- state snapshots -------------------------------------------------

    def snapshot_q(self):
        return tuple(tuple(row) for row in self.q)

    def snapshot_p(self):
        return tuple(tuple(row) for row in self.p)

    # -- elementary updates ----------------------------------------------

    def advance(self, dt: float) -> None:
        for i in range(self.n):
            qi, pi = self.q[i], self.p[i]
            qi[0] += dt * pi[0]
            qi[1] += dt * pi[1]
            qi[2] += dt * pi[2]

    def _record(self, event: Event, p_before, p_after) -> None:
        if event.kind is EventKind.PAIR:
            self.log.n_pair += 1
        else:
            self.log.n_wall += 1
        if self.collect:
            self.log.entries.append(
                LogEntry(self.elapsed, event, self.snapshot_q(), p_before, p_after)
            )
        if self.log.n_events > self.max_events:
            raise RuntimeError(f"event count exceeded {self.max_events}")

    def apply_pair(self, i: int, j: int) -> Event:
        qi, qj, pi, pj = self.q[i], self.q[j], self.p[i], self.p[j]
        rx, ry, rz = qj[0] - qi[0], qj[1] - qi[1], qj[2] - qi[2]
        dist = math.sqrt(rx * rx + ry * ry + rz * rz)
        ox, oy, oz = rx / dist, ry / dist, rz / dist
        c = ox * (pi[0] - pj[0]) + oy * (pi[1] - pj[1]) + oz * (pi[2] - pj[2])
        p_before = self.snapshot_p() if self.collect else ()
        pi[0] -= c * ox
        pi[1] -= c * oy
        pi[2] -= c * oz
        pj[0] += c * ox
        pj[1] += c * oy
        pj[2] += c * oz
        ev = Event(EventKind.PAIR, 0.0, i, j=j, omega=Vec3(ox, oy, oz))
        self._record(ev, p_before, self.snapshot_p() if self.collect else ())
        return ev

    def apply_wall(self, i: int, axis: int, side: int) -> Event:
        p_before = self.snapshot_p() if self.collect else ()
        self.p[i][axis] = -self.p[i][axis]
        ev = Event(EventKind.WALL, 0.0, i, axis=axis, side=side,
                   normal=_AXIS_NORMALS[(axis, side)])
        self._record(ev, p_before, self.snapshot_p() if self.collect else ())
        return ev

    # -- contact handling at the start of a segment -----------------------

    def settle_contacts(self) -> None:
        """Collide any touching, approaching pair and reflect any particle
        sitting on a wall margin while moving outward.

        Needed for configurations built by at-contact particle insertion:
        this is where the one-sided limit convention at insertion points
        is realized.
        """
        eps = self.eps_len
        for i in range(self.n):
            for j in range(i + 1, self.n):
                qi, qj = self.q[i], self.q[j]
                rx, ry, rz = qj[0] - qi[0], qj[1] - qi[1], qj[2] - qi[2]
                d2 = rx * rx + ry * ry + rz * rz
                dist = math.sqrt(d2)
                if dist < self.a - eps:
                    raise ValueError(f"overlapping spheres {i},{j}: dist={dist}")
                if dist > self.a + eps:
                    continue
                pi, pj = self.p[i], self.p[j]
                wx, wy, wz = pj[0] - pi[0], pj[1] - pi[1], pj[2] - pi[2]
                radial = rx * wx + ry * wy + rz * wz
                wnorm = math.sqrt(wx * wx + wy * wy + wz * wz)
                # approaching through the grazing band collides; tangential
                # or separating contact just flies on
                if radial < -self.graze_rel * wnorm * dist:
                    self.apply_pair(i, j)
        for i in range(self.n):
            qi, pi = self.q[i], self.p[i]
            for ax in range(3):
                if qi[ax] <= self.lo[ax] + eps and pi[ax] < 0.0:
                    self.apply_wall(i, ax, -1)
                elif qi[ax] >= self.hi[ax] - eps and pi[ax] > 0.0:
                    self.apply_wall(i, ax, 1)

    # -- event search ------------------------------------------------------

    def find_next(self):
        """Minimal positive event time with a runner-up for the degeneracy
        test.  Returns None when nothing can happen (all momenta zero or
        no approaching roots, impossible in a box with motion)."""
        best_t = math.inf
        best = None        # ('pair', i, j, nspeed_sq) or ('wall', i, ax, side)
        second_t = math.inf
        second = None
        n = self.n
        q, p = self.q, self.p
        for i in range(n):
            qi, pi = q[i], p[i]
            for j in range(i + 1, n):
                qj, pj = q[j], p[j]
                rx, ry, rz = qi[0] - qj[0], qi[1] - qj[1], qi[2] - qj[2]
                wx, wy, wz = pi[0] - pj[0], pi[1] - pj[1], pi[2] - pj[2]
                b = rx * wx + ry * wy + rz * wz
                if b >= 0.0:
                    continue  # separating
                c = rx * rx + ry * ry + rz * rz - self.a2
                w2 = wx * wx + wy * wy + wz * wz
                disc = b * b - w2 * c
                if disc <= 0.0:
                    continue  # misses
                if c <= 0.0:
                    # touching within roundoff and still approaching: only
                    # possible straight after settle_contacts for grazing
                    # bands, treat as immediate
                    tau = 0.0
                else:
                    tau = c / (-b + math.sqrt(disc))
                if tau < second_t:
                    if tau < best_t:
                        second_t, second = best_t, best
                        best_t, best = tau, ("pair", i, j, disc)
                    else:
                        second_t, second = tau, ("pair", i, j, disc)
            for ax in range(3):
                v = pi[ax]
                if v > 0.0:
                    tau = (self.hi[ax] - qi[ax]) / v
                    side = 1
                elif v < 0.0:
                    tau = (self.lo[ax] - qi[ax]) / v
                    side = -1
                else:
                    continue
                if tau < second_t:
                    if tau < best_t:
                        second_t, second = best_t, best
                        best_t, best = tau, ("wall", i, ax, side)
                    else:
                        second_t, second = tau, ("wall", i, ax, side)
        if best is None:
            return None
        if second_t - best_t <= self.eps_t:
            if (best[0] == "wall" and second is not None and second[0] == "wall"
                    and best[1] == second[1]):
                raise DegeneracyError(
                    DegeneracyKind.CORNER_CONTACT,
                    f"particle {best[1]} meets two walls within eps_event",
                )
            raise DegeneracyError(
                DegeneracyKind.SIMULTANEOUS_EVENTS,
                f"events at t={best_t!r} and t={second_t!r}",
            )
        if best[0] == "pair":
            # normal relative speed at contact is sqrt(disc)/a; grazing
            # when it falls below graze_rel of the relative speed
            kind, i, j, disc = best
            w2 = sum((self.p[i][k] - self.p[j][k]) ** 2 for k in range(3))
            if disc <= (self.graze_rel * self.a) ** 2 * w2:
                raise DegeneracyError(
                    DegeneracyKind.GRAZING_CONTACT,
                    f"pair ({i},{j}) grazes at t={best_t!r}",
                )
        return best_t, best

    def apply(self, found) -> None:
        if found[0] == "pair":
            self.apply_pair(found[1], found[2])
        else:
            self.apply_wall(found[1], found[2], found[3])

    # -- main loop ---------------------------------------------------------

    def run(self, duration: float, limit: Limit) -> None:
        self.settle_contacts()
        remaining = duration
        while True:
            nxt = self.find_next()
            if nxt is None:
                self.advance(remaining)
                self.elapsed += remaining
                return
            tau, found = nxt
            if tau > remaining + self.eps_t:
                self.advance(remaining)
                self.elapsed += remaining
                return
            if tau >= remaining - self.eps_t:
                # lands on the event within tolerance: one-sided limit
                self.advance(tau)
                self.elapsed += tau
                if limit is Limit.FROM_FUTURE:
                    self.apply(found)
                return
            self.advance(tau)
            self.elapsed += tau
            remaining -= tau
            self.apply(found)


def _to_config(engine: _Engine, domain) -> Configuration:
    pts = tuple(
        PhasePoint(Vec3(*engine.q[i]), Vec3(*engine.p[i]))
        for i in range(engine.n)
    )
    return Configuration(pts, domain)


def reverse_momenta(config: Configuration) -> Configuration:
    """The velocity-reversal involution V."""
    return config.replace_particles(
        PhasePoint(pt.q, -pt.p) for pt in config.particles
    )


_reverse_momenta = reverse_momenta


def next_event(config: Configuration, direction: Direction = Direction.FORWARD) -> Event | None:
    """First event reached from ``config`` in the given time direction.

    A touching pair that is approaching in that direction is reported as a
    PAIR event with time_to_event 0.  Raises DegeneracyError when the two
    soonest candidates coincide within tolerance.
    """
    work = config if direction is Direction.FORWARD else _reverse_momenta(config)
    eng = _Engine(work, collect_log=False, max_events=_MAX_EVENTS_DEFAULT)
    # touching approaching pair: immediate event
    eps = eng.eps_len
    for i in range(eng.n):
        for j in range(i + 1, eng.n):
            qi, qj, pi, pj = eng.q[i], eng.q[j], eng.p[i], eng.p[j]
            rx, ry, rz = qj[0] - qi[0], qj[1] - qi[1], qj[2] - qi[2]
            dist = math.sqrt(rx * rx + ry * ry + rz * rz)
            if abs(dist - eng.a) <= eps:
                radial = (rx * (pj[0] - pi[0]) + ry * (pj[1] - pi[1])
                          + rz * (pj[2] - pi[2]))
                if radial < 0.0:
                    return Event(EventKind.PAIR, 0.0, i, j=j,
                                 omega=Vec3(rx / dist, ry / dist, rz / dist))
    for i in range(eng.n):
        for ax in range(3):
            qv, pv = eng.q[i][ax], eng.p[i][ax]
            if (qv <= eng.lo[ax] + eps and pv < 0.0) or (qv >= eng.hi[ax] - eps and pv > 0.0):
                side = -1 if pv < 0.0 else 1
                return Event(EventKind.WALL, 0.0, i, axis=ax, side=side,
                             normal=_AXIS_NORMALS[(ax, side)])
    nxt = eng.find_next()
    if nxt is None:
        return None
    tau, found = nxt
    if found[0] == "pair":
        _, i, j, _ = found
        qi, qj, pi, pj = eng.q[i], eng.q[j], eng.p[i], eng.p[j]
        ox = (qi[0] + tau * pi[0]) - (qj[0] + tau * pj[0])
        oy = (qi[1] + tau * pi[1]) - (qj[1] + tau * pj[1])
        oz = (qi[2] + tau * pi[2]) - (qj[2] + tau * pj[2])
        # omega points from i to j
        nrm = math.sqrt(ox * ox + oy * oy + oz * oz)
        return Event(EventKind.PAIR, tau, i, j=j, omega=Vec3(-ox / nrm, -oy / nrm, -oz / nrm))
    _, i, ax, side = found
    return Event(EventKind.WALL, tau, i, axis=ax, side=side, normal=_AXIS_NORMALS[(ax, side)])


def evolve(config: Configuration, t: float, limit: Limit = Limit.FROM_FUTURE,
           collect_log: bool = False,
           max_events: int = _MAX_EVENTS_DEFAULT) -> tuple[Configuration, TrajectoryLog]:
    """Flow the configuration by a signed time t.

    Negative t runs the time-reversed dynamics (reverse momenta, evolve
    forward, reverse again); the one-sided limit is mapped accordingly, so
    limit always refers to the trajectory's own time axis.  Raises
    DegeneracyError for near-degenerate trajectories, which callers count
    and re-sample.
    """
    if t == 0.0:
        return config, TrajectoryLog()
    if t < 0.0:
        inner = Limit.FROM_PAST if limit is Limit.FROM_FUTURE else Limit.FROM_FUTURE
        rev, log = evolve(_reverse_momenta(config), -t, inner,
                          collect_log=collect_log, max_events=max_events)
        log.direction = Direction.BACKWARD
        for e in log.entries:
            e.momenta_before, e.momenta_after = (
                tuple(tuple(-c for c in row) for row in e.momenta_before),
                tuple(tuple(-c for c in row) for row in e.momenta_after),
            )
        return _reverse_momenta(rev), log

    eng = _Engine(config, collect_log=collect_log, max_events=max_events)
    eng.run(t, limit)
    return _to_config(eng, config.domain), eng.log
