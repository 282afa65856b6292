"""Collision-history construction and signed Monte Carlo series evaluation.

The time-evolved n-particle correlation function integrated over a phase
box equals an integral over collision histories: alternating backward
flows and at-contact particle insertions, each insertion carrying the
signed flux weight a^2 omega . (p_hat - p_j).  This module builds
histories, evaluates the series by stratified importance sampling, and
estimates the same quantity empirically by forward simulation so the two
routes can be compared.

Sampling measure for a history with m insertions: ordered times are
sorted uniforms on [0,t]^m (simplex weight t^m/m!), the k-th label is
uniform over its n+k-1 choices, insertion momenta come from a proposal
Maxwellian at beta0 (reweighted), directions are uniform on the sphere
(weight 4 pi each).  Directions falling outside the admissible set
contribute zero; backward legs that hit a degenerate trajectory are
counted and contribute zero as well (they sample a null set).  The
forward-simulation estimator instead re-samples degenerate trajectories,
keeping its denominator at the requested sample count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from hardsphere.dynamics import DegeneracyError, Limit, evolve
from hardsphere.geometry import Configuration, PhasePoint, Vec3, omega_admissible
from hardsphere.measures import (
    INNER_SAMPLES,
    CorrelationVector,
    GrandCanonicalEq,
    InitialMeasure,
    Maxwellian,
    config_from_arrays,
)
from hardsphere.stats import (
    RejectionCounter,
    RunningStats,
    SignedEstimate,
    binomial_estimate,
    falling_factorial,
)

# Each physical contact appears twice in the ordered-pair flux
# parametrization (i hits j and j hits i), while a collision is one event.
UNORDERED_PAIR_FACTOR = 0.5


# ---------------------------------------------------------------------------
# phase-space boxes (the Borel sets the identities are integrated over)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseBox:
    """Product of per-particle position and momentum intervals in the
    n-particle phase space.  Membership additionally requires hard-core
    admissibility, applied by the estimators, not here."""

    q_lo: tuple
    q_hi: tuple
    p_lo: tuple
    p_hi: tuple

    @staticmethod
    def of(q_lo, q_hi, p_lo, p_hi) -> "PhaseBox":
        as_t = lambda x: tuple(tuple(float(c) for c in row) for row in np.atleast_2d(x))
        box = PhaseBox(as_t(q_lo), as_t(q_hi), as_t(p_lo), as_t(p_hi))
        if not (len(box.q_lo) == len(box.q_hi) == len(box.p_lo) == len(box.p_hi)):
            raise ValueError("per-particle interval lists must have equal length")
        return box

    @property
    def n(self) -> int:
        return len(self.q_lo)

    @property
    def volume(self) -> float:
        v = 1.0
        for lo, hi in ((self.q_lo, self.q_hi), (self.p_lo, self.p_hi)):
            for row_lo, row_hi in zip(lo, hi):
                for a, b in zip(row_lo, row_hi):
                    v *= b - a
        return v

    def contains(self, q: np.ndarray, p: np.ndarray) -> bool:
        ql, qh = np.asarray(self.q_lo), np.asarray(self.q_hi)
        pl, ph = np.asarray(self.p_lo), np.asarray(self.p_hi)
        return bool(((q >= ql) & (q <= qh)).all() and ((p >= pl) & (p <= ph)).all())

    def contains_batch(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        """Vectorized membership for arrays of shape (B, n, 3)."""
        ql, qh = np.asarray(self.q_lo), np.asarray(self.q_hi)
        pl, ph = np.asarray(self.p_lo), np.asarray(self.p_hi)
        ok_q = ((q >= ql) & (q <= qh)).all(axis=(1, 2))
        ok_p = ((p >= pl) & (p <= ph)).all(axis=(1, 2))
        return ok_q & ok_p

    def sample(self, rng: np.random.Generator, count: int) -> tuple[np.ndarray, np.ndarray]:
        ql, qh = np.asarray(self.q_lo), np.asarray(self.q_hi)
        pl, ph = np.asarray(self.p_lo), np.asarray(self.p_hi)
        q = ql + rng.random((count, *ql.shape)) * (qh - ql)
        p = pl + rng.random((count, *pl.shape)) * (ph - pl)
        return q, p

    def maxwell_prob(self, beta: float) -> float:
        """Product Maxwellian mass of the momentum part (exact)."""
        mw = Maxwellian(beta)
        out = 1.0
        for lo, hi in zip(self.p_lo, self.p_hi):
            out *= mw.box_prob(lo, hi)
        return out

    def to_dict(self) -> dict:
        return {"q_lo": self.q_lo, "q_hi": self.q_hi, "p_lo": self.p_lo, "p_hi": self.p_hi}

    @staticmethod
    def from_dict(d: dict) -> "PhaseBox":
        return PhaseBox.of(d["q_lo"], d["q_hi"], d["p_lo"], d["p_hi"])


# ---------------------------------------------------------------------------
# collision histories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CollisionHistory:
    """One history: insertion times (descending, within [0, t]), 0-based
    receiver labels (the k-th insertion may attach to any of the n+k-1
    particles present), insertion momenta, and contact directions."""

    times: tuple[float, ...]
    labels: tuple[int, ...]
    momenta: tuple[Vec3, ...]
    directions: tuple[Vec3, ...]

    @property
    def m(self) -> int:
        return len(self.times)

    def validate(self, n: int, t: float) -> None:
        m = self.m
        if not (len(self.labels) == len(self.momenta) == len(self.directions) == m):
            raise ValueError("history component lengths differ")
        prev = t
        for k in range(m):
            if not 0.0 <= self.times[k] <= prev:
                raise ValueError(f"times must satisfy 0 <= t_m <= ... <= t_1 <= t, got {self.times}")
            prev = self.times[k]
            if not 0 <= self.labels[k] < n + k:
                raise ValueError(f"label {self.labels[k]} out of range at step {k + 1}")


class HistoryStatus(Enum):
    VALID = "valid"
    BLOCKED = "blocked"          # an insertion direction was inadmissible
    DEGENERATE = "degenerate"    # a backward leg hit a degenerate trajectory


@dataclass(slots=True)
class HistoryOutcome:
    terminal: Configuration | None
    weight: float
    status: HistoryStatus

    @property
    def valid(self) -> bool:
        return self.status is HistoryStatus.VALID


def build_history(config: Configuration, t: float, delta: CollisionHistory) -> HistoryOutcome:
    """Run one collision history backward from time t down to 0.

    Alternates backward evolution (future-sided limits throughout) with
    at-contact insertion at q_j + a*omega carrying the prescribed
    momentum; an inserted pair that approaches in backward time collides
    immediately, which the dynamics handles as an at-contact start.  The
    weight is the product of signed flux factors, taken against the
    receiver momentum at the moment of insertion.  The outcome is marked
    BLOCKED for an inadmissible insertion and DEGENERATE when any leg
    refuses a near-degenerate trajectory; both carry zero weight.
    """
    delta.validate(config.n, t)
    a = config.domain.a
    a2 = a * a
    cur = config
    weight = 1.0
    prev_time = t
    for k in range(delta.m):
        t_k = delta.times[k]
        try:
            cur, _ = evolve(cur, -(prev_time - t_k), Limit.FROM_FUTURE)
        except DegeneracyError:
            return HistoryOutcome(None, 0.0, HistoryStatus.DEGENERATE)
        j_k = delta.labels[k]
        omega = delta.directions[k]
        p_hat = delta.momenta[k]
        if not omega_admissible(cur, j_k, p_hat, omega):
            return HistoryOutcome(None, 0.0, HistoryStatus.BLOCKED)
        weight *= a2 * omega.dot(p_hat - cur.particles[j_k].p)
        q_new = cur.particles[j_k].q + omega.scale(a)
        cur = cur.replace_particles((*cur.particles, PhasePoint(q_new, p_hat)))
        prev_time = t_k
    try:
        cur, _ = evolve(cur, -prev_time, Limit.FROM_FUTURE)
    except DegeneracyError:
        return HistoryOutcome(None, 0.0, HistoryStatus.DEGENERATE)
    return HistoryOutcome(cur, weight, HistoryStatus.VALID)


# ---------------------------------------------------------------------------
# collision operator
# ---------------------------------------------------------------------------

def _uniform_sphere(rng: np.random.Generator) -> Vec3:
    while True:
        v = rng.normal(size=3)
        r = math.sqrt(float(v @ v))
        if r > 1e-12:
            return Vec3(v[0] / r, v[1] / r, v[2] / r)


def collision_operator(rho: CorrelationVector, config: Configuration, j: int,
                       samples: int, rng: np.random.Generator,
                       beta0: float | None = None,
                       inner_samples: int | None = None) -> SignedEstimate:
    """Signed MC estimate of the boundary flux coupling level n to n+1.

    Draws the added momentum from a proposal Maxwellian at beta0 (default:
    the measure's own beta) and the contact direction uniformly on the
    sphere, keeping the signed integrand over the whole admissible sphere;
    inadmissible directions contribute zero and are counted as samples.
    """
    ms = rho.measure
    a2 = config.domain.a ** 2
    prop = Maxwellian(beta0 if beta0 is not None else ms.beta)
    p_j = config.particles[j].p
    q_j = config.particles[j].q
    base_q = np.array([pt.q.as_tuple() for pt in config.particles])
    base_p = np.array([pt.p.as_tuple() for pt in config.particles])
    stats = RunningStats()
    for _ in range(samples):
        p_new = Vec3(*prop.sample(rng, 3))
        omega = _uniform_sphere(rng)
        if not omega_admissible(config, j, p_new, omega):
            stats.add(0.0)
            continue
        q_new = q_j + omega.scale(config.domain.a)
        q_aug = np.vstack([base_q, [q_new.as_tuple()]])
        p_aug = np.vstack([base_p, [p_new.as_tuple()]])
        val, _ = rho.eval_arrays(q_aug, p_aug, rng, inner_samples)
        flux = omega.dot(p_new - p_j)
        stats.add(4.0 * math.pi * a2 * flux * val / prop.pdf_vec(p_new))
    return SignedEstimate.from_stats(stats)


def collision_operator_quadrature(rho_fn, config: Configuration, j: int,
                                  beta0: float, n_radial: int = 16,
                                  n_theta: int = 24, n_phi: int = 48) -> float:
    """Deterministic oracle for the collision operator on an evaluatable
    rho_fn(q_aug, p_aug) -> float.

    Tensor Gauss-Hermite quadrature in the added momentum (rho_fn must
    decay at least like the beta0 Maxwellian for the node compensation to
    stay bounded) and a product cos(theta)/phi grid on the sphere with the
    admissible-set indicator applied at each direction node.  A test
    oracle at modest grid sizes, not a production estimator.
    """
    dom = config.domain
    a = dom.a
    p_j = np.array(config.particles[j].p.as_tuple())
    q_j = np.array(config.particles[j].q.as_tuple())
    base_q = np.array([pt.q.as_tuple() for pt in config.particles])
    base_p = np.array([pt.p.as_tuple() for pt in config.particles])

    nodes, weights = np.polynomial.hermite.hermgauss(n_radial)
    comp = weights * np.exp(nodes * nodes)  # compensated weights for int F dp
    scale = math.sqrt(2.0 / beta0)          # p = scale * x maps exp(-x^2) to h envelope

    x_theta, w_theta = np.polynomial.legendre.leggauss(n_theta)
    phis = (np.arange(n_phi) + 0.5) * (2.0 * math.pi / n_phi)
    w_phi = 2.0 * math.pi / n_phi

    lo, hi = dom.inset_lower, dom.inset_upper
    total = 0.0
    for ct, wt in zip(x_theta, w_theta):
        st = math.sqrt(max(0.0, 1.0 - ct * ct))
        for phi in phis:
            omega = np.array([st * math.cos(phi), st * math.sin(phi), ct])
            q_new = q_j + a * omega
            ok_geom = all(lo[ax] - 1e-12 <= q_new[ax] <= hi[ax] + 1e-12 for ax in range(3))
            if ok_geom:
                for i, pt in enumerate(config.particles):
                    if i != j and np.linalg.norm(q_new - np.array(pt.q.as_tuple())) < a - 1e-12:
                        ok_geom = False
                        break
            if not ok_geom:
                continue
            q_aug = np.vstack([base_q, q_new])
            for ix, wx in zip(nodes, comp):
                for iy, wy in zip(nodes, comp):
                    for iz, wz in zip(nodes, comp):
                        p_new = scale * np.array([ix, iy, iz])
                        flux = float(omega @ (p_new - p_j))
                        val = rho_fn(q_aug, np.vstack([base_p, p_new]))
                        total += wt * w_phi * wx * wy * wz * scale ** 3 * flux * val
    return a * a * total


# ---------------------------------------------------------------------------
# series evaluation (stratified over the number of insertions)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeriesParams:
    n_samples: int = 100_000
    m_max: int | None = None
    allocation: tuple = (0.5, 0.3, 0.2)   # sample split over m = 0, 1, >= 2
    beta0: float | None = None
    inner_samples: int = INNER_SAMPLES
    # average every history over all direction sign flips: pairs each
    # hemisphere against its mirror and cuts the sign-cancellation noise
    antithetic: bool = True
    # independent direction tuples averaged per sample; raise this in
    # micro-domains where most contact directions are geometrically
    # blocked and admissible draws are rare
    direction_draws: int = 1

    def stratum_counts(self, m_max: int) -> list[int]:
        if m_max == 0:
            return [self.n_samples]
        raw = []
        for m in range(m_max + 1):
            if m <= 1:
                raw.append(self.allocation[m])
            else:
                raw.append(self.allocation[2] / (m_max - 1))
        total = sum(raw)
        counts = [max(1, int(round(self.n_samples * r / total))) for r in raw]
        return counts


@dataclass(slots=True)
class SeriesResult:
    total: SignedEstimate
    strata: dict
    counter: RejectionCounter
    norm_rel_err: float = 0.0

    @property
    def total_with_norm_err(self) -> SignedEstimate:
        return self.total.with_extra_stderr(abs(self.total.value) * self.norm_rel_err)


def _series_stratum_stats(rho0: CorrelationVector, n: int, t: float, box: PhaseBox,
                          m: int, count: int, beta0: float, inner_samples: int,
                          antithetic: bool, rng,
                          direction_draws: int = 1) -> tuple[RunningStats, RejectionCounter]:
    ms = rho0.measure
    dom = ms.domain
    prop = Maxwellian(beta0)
    vol = box.volume
    label_factor = falling_factorial(n + m - 1, m) if m else 1.0
    time_factor = t ** m / math.factorial(m)
    sphere_factor = (4.0 * math.pi) ** m
    sign_combos = list(_sign_combos(m)) if (antithetic and m) else [(1.0,) * m]
    draws = max(1, direction_draws) if m else 1
    stats = RunningStats()
    counter = RejectionCounter()
    qs, ps = box.sample(rng, count)
    for i in range(count):
        q, p = qs[i], ps[i]
        if not ms.admissible(q):
            stats.add(0.0)   # box minus the admissible set carries no mass
            counter.accepted += 1
            continue
        if m:
            times = tuple(float(x) for x in np.sort(rng.random(m))[::-1] * t)
            labels = tuple(int(rng.integers(0, n + k)) for k in range(m))
            momenta = tuple(Vec3(*prop.sample(rng, 3)) for _ in range(m))
        else:
            times = labels = momenta = ()
        prop_w = 1.0
        for pv in momenta:
            prop_w *= prop.pdf_vec(pv)
        scale = vol * time_factor * label_factor * sphere_factor / prop_w
        start = config_from_arrays(q, p, dom)
        combo_vals = []
        degenerate = False
        for _ in range(draws):
            dirs = tuple(_uniform_sphere(rng) for _ in range(m))
            for signs in sign_combos:
                flipped = tuple(d if s > 0 else -d for d, s in zip(dirs, signs))
                delta = CollisionHistory(times, labels, momenta, flipped)
                outcome = build_history(start, t, delta)
                if outcome.status is HistoryStatus.DEGENERATE:
                    degenerate = True
                    break
                if outcome.status is HistoryStatus.BLOCKED:
                    counter.blocked += 1
                    combo_vals.append(0.0)
                    continue
                rho_val, _ = rho0.eval_arrays(*_config_arrays(outcome.terminal),
                                              rng, inner_samples)
                combo_vals.append(scale * outcome.weight * rho_val)
            if degenerate:
                break
        if degenerate:
            counter.degenerate += 1
            stats.add(0.0)
            continue
        counter.accepted += 1
        stats.add(sum(combo_vals) / len(combo_vals))
    return stats, counter


def _sign_combos(m: int):
    from itertools import product

    return product((1.0, -1.0), repeat=m)


# chunk-level entry point used by the parallel harness
series_stratum_chunk = _series_stratum_stats


def _config_arrays(config: Configuration) -> tuple[np.ndarray, np.ndarray]:
    q = np.array([pt.q.as_tuple() for pt in config.particles], dtype=float).reshape(-1, 3)
    p = np.array([pt.p.as_tuple() for pt in config.particles], dtype=float).reshape(-1, 3)
    return q, p


def series_eval(rho0: CorrelationVector, n: int, t: float, box: PhaseBox,
                params: SeriesParams, rng: np.random.Generator) -> SeriesResult:
    """Estimate the integral of the time-t correlation function over the
    box from time-0 correlations alone, by summing the stratified
    collision-history series.

    The result does not depend on the version of the correlation
    functions chosen on null sets: the samplers draw terminal points with
    an absolutely continuous law, so a redefinition of rho0 on a
    measure-zero set (a shell, say) is hit with probability zero.  This
    holds by construction and is documented rather than tested.
    """
    if t <= 0.0:
        raise ValueError("series evaluation needs t > 0")
    if box.n != n:
        raise ValueError(f"box is {box.n}-particle, expected {n}")
    m_cap = rho0.n_max - n
    m_max = m_cap if params.m_max is None else min(params.m_max, m_cap)
    beta0 = params.beta0 if params.beta0 is not None else rho0.measure.beta
    counts = params.stratum_counts(m_max)
    strata = {}
    counter = RejectionCounter()
    total: SignedEstimate | None = None
    for m, count in enumerate(counts):
        stats, ctr = _series_stratum_stats(rho0, n, t, box, m, count, beta0,
                                           params.inner_samples, params.antithetic,
                                           rng, params.direction_draws)
        est = SignedEstimate.from_stats(stats)
        strata[m] = est
        counter.merge(ctr)
        total = est if total is None else total.plus(est)
    return SeriesResult(total, strata, counter, norm_rel_err=rho0.z_rel_err)


# ---------------------------------------------------------------------------
# empirical estimate by forward simulation
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class EmpiricalResult:
    estimate: SignedEstimate
    counter: RejectionCounter


def empirical_chunk_fixed(measure: InitialMeasure, n: int, t: float, box: PhaseBox,
                          limit: Limit, count: int, rng: np.random.Generator,
                          max_resample: int = 200) -> tuple[int, RejectionCounter]:
    """Hit count for one chunk of forward trajectories of a fixed-N
    measure; degenerate trajectories are re-sampled and counted."""
    counter = RejectionCounter()
    hits = 0
    done = 0
    batch = 4096
    while done < count:
        want = min(batch, count - done)
        qs, ps = measure.sample_batch(rng, want)
        for i in range(want):
            while True:
                config = config_from_arrays(qs[i], ps[i], measure.domain)
                try:
                    final, _ = evolve(config, t, limit)
                    break
                except DegeneracyError:
                    counter.degenerate += 1
                    if counter.degenerate > max_resample + count:
                        raise RuntimeError("excessive degenerate-trajectory rate")
                    q1, p1 = measure.sample_batch(rng, 1)
                    qs[i], ps[i] = q1[0], p1[0]
            qf, pf = _config_arrays(final)
            if box.contains(qf[:n], pf[:n]):
                hits += 1
            counter.accepted += 1
        done += want
    return hits, counter


def empirical_chunk_grand(measure: InitialMeasure, n: int, t: float, box: PhaseBox,
                          limit: Limit, count: int, rng: np.random.Generator,
                          max_resample: int = 200) -> tuple[RunningStats, RejectionCounter]:
    """Ordered-tuple counts for one chunk of grand-canonical trajectories."""
    counter = RejectionCounter()
    stats = RunningStats()
    done = 0
    while done < count:
        config = measure.sample(rng)
        value, ok = _evolved_tuple_count(config, n, t, box, limit)
        if not ok:
            counter.degenerate += 1
            if counter.degenerate > max_resample + count:
                raise RuntimeError("excessive degenerate-trajectory rate")
            continue
        stats.add(value)
        counter.accepted += 1
        done += 1
    return stats, counter


def empirical_rho(measure: InitialMeasure, n: int, t: float, box: PhaseBox,
                  limit: Limit, samples: int, rng: np.random.Generator,
                  max_resample: int = 200) -> EmpiricalResult:
    """Forward-simulation estimate of the box mass of the time-t
    correlation function.

    Fixed-N measures use the falling-factorial times the fraction of
    trajectories whose first n particles land in the box (binomial
    error).  Grand-canonical measures count ordered n-tuples of distinct
    particles instead.  Degenerate trajectories are re-sampled and
    counted.
    """
    if box.n != n:
        raise ValueError(f"box is {box.n}-particle, expected {n}")
    if isinstance(measure.spec, GrandCanonicalEq):
        stats, counter = empirical_chunk_grand(measure, n, t, box, limit,
                                               samples, rng, max_resample)
        return EmpiricalResult(SignedEstimate.from_stats(stats), counter)
    big_n = measure.spec.n_particles
    if n > big_n:
        raise ValueError(f"n={n} exceeds particle number {big_n}")
    hits, counter = empirical_chunk_fixed(measure, n, t, box, limit,
                                          samples, rng, max_resample)
    return EmpiricalResult(binomial_estimate(hits, samples, falling_factorial(big_n, n)),
                           counter)


def _evolved_tuple_count(config: Configuration, n: int, t: float, box: PhaseBox,
                         limit: Limit) -> tuple[float, bool]:
    from itertools import permutations

    if config.n < n:
        return 0.0, True
    try:
        final, _ = evolve(config, t, limit)
    except DegeneracyError:
        return 0.0, False
    qf, pf = _config_arrays(final)
    count = 0
    for perm in permutations(range(config.n), n):
        idx = list(perm)
        if box.contains(qf[idx], pf[idx]):
            count += 1
    return float(count), True


# ---------------------------------------------------------------------------
# equilibrium pair-collision rate (flux integral oracle)
# ---------------------------------------------------------------------------

def pair_collision_rate(measure: InitialMeasure, samples: int,
                        rng: np.random.Generator) -> tuple[float, float]:
    """Expected pair collisions per unit time in equilibrium, as the flux
    integral of the two-particle correlation function over the contact
    manifold.

    The momentum integral of the positive normal flux against two
    Maxwellians is exactly 1/sqrt(pi beta); the remaining position and
    direction integral is estimated by MC.  Each physical contact is one
    event, hence the ordered-pair parametrization carries a factor 1/2.
    Returns (rate, stderr); the cached-normalization uncertainty is folded
    in.
    """
    spec = measure.spec
    if isinstance(spec, GrandCanonicalEq):
        raise TypeError("pair collision rate is implemented for fixed-N measures")
    big_n = spec.n_particles
    if big_n < 2:
        return (0.0, 0.0)
    dom = measure.domain
    a = dom.a
    momentum_flux = 1.0 / math.sqrt(math.pi * measure.beta)

    lo = np.array(dom.inset_lower)
    hi = np.array(dom.inset_upper)
    vol = measure.domain.inset_volume

    vals = np.empty(samples)
    done = 0
    batch = 200_000
    while done < samples:
        b = min(batch, samples - done)
        u = rng.normal(size=(b, 3))
        u /= np.linalg.norm(u, axis=1)[:, None]
        q1 = lo + rng.random((b, 3)) * (hi - lo)
        q2 = q1 + a * u
        rest = lo + rng.random((b, big_n - 2, 3)) * (hi - lo)
        pos = np.concatenate([q1[:, None, :], q2[:, None, :], rest], axis=1)
        ok = ((pos >= lo - 1e-12) & (pos <= hi + 1e-12)).all(axis=(1, 2))
        a2 = a * a * (1.0 - 1e-12)
        for i in range(big_n):
            for j in range(i + 1, big_n):
                if i == 0 and j == 1:
                    continue  # the contact pair itself sits exactly at a
                d = pos[:, i, :] - pos[:, j, :]
                ok &= np.einsum("ij,ij->i", d, d) >= a2
        w = np.prod(measure.g(pos), axis=1) * ok
        vals[done:done + b] = w
        done += b
    geom_mean = float(vals.mean())
    geom_se = float(vals.std(ddof=1) / math.sqrt(samples))
    z_n, z_err = measure.position_partition(big_n)
    prefac = (UNORDERED_PAIR_FACTOR * a * a * momentum_flux
              * falling_factorial(big_n, 2) / z_n
              * 4.0 * math.pi * vol ** (big_n - 1))
    rate = prefac * geom_mean
    rel = math.sqrt((geom_se / geom_mean) ** 2 + (z_err / z_n) ** 2) if geom_mean > 0 else 0.0
    return (rate, abs(rate) * rel)
