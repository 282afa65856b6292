"""Initial measures on hard-sphere phase space and their correlation maps.

All supported measures factor into a position weight (hard-core indicator
times an optional smooth spatial modulation) and independent Maxwellian
momenta.  Momentum integrals are then exact and only position-space
exclusion integrals need Monte Carlo: the partition constants are
estimated once per measure with at least NORM_PROPOSALS proposals and
cached together with their standard error, which downstream checks fold
into their error budgets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from hardsphere.geometry import Configuration, Domain, PhasePoint, Vec3

NORM_PROPOSALS = 1_000_000
INNER_SAMPLES = 192
GC_OCCUPANCY_CAP = 4
_NORM_BATCH = 250_000


@dataclass(frozen=True, slots=True)
class Maxwellian:
    """Normalized Gaussian momentum density at inverse temperature beta."""

    beta: float

    def __post_init__(self):
        if not self.beta > 0.0:
            raise ValueError(f"beta must be positive, got {self.beta}")

    @property
    def sigma(self) -> float:
        return 1.0 / math.sqrt(self.beta)

    def pdf(self, p: np.ndarray) -> np.ndarray:
        """Density at momenta with shape (..., 3)."""
        p = np.asarray(p, dtype=float)
        norm = (self.beta / (2.0 * math.pi)) ** 1.5
        return norm * np.exp(-0.5 * self.beta * np.sum(p * p, axis=-1))

    def pdf_vec(self, p: Vec3) -> float:
        return float(self.pdf(np.array(p.as_tuple())))

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.normal(0.0, self.sigma, size=size)

    def box_prob(self, lo, hi) -> float:
        """Exact probability of an axis-aligned momentum box."""
        s = math.sqrt(self.beta / 2.0)
        out = 1.0
        for a, b in zip(lo, hi):
            out *= 0.5 * (math.erf(s * b) - math.erf(s * a))
        return out


# ---------------------------------------------------------------------------
# density specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class CanonicalEq:
    """Hard-core exclusion with uniform positions and Maxwellian momenta."""

    n_particles: int
    beta: float


@dataclass(frozen=True, slots=True)
class GrandCanonicalEq:
    """Fugacity-weighted mixture over particle numbers, Eq-of-state free."""

    z: float
    beta: float
    n_cap: int = GC_OCCUPANCY_CAP


@dataclass(frozen=True, slots=True)
class ModulatedProduct:
    """Spatially modulated product measure: positions weighted by a strictly
    positive closed-form g, momenta Maxwellian at a common beta.

    Because momenta enter only through the product of Maxwellians, which
    both collision laws preserve, the density is automatically continuous
    along trajectories.
    """

    n_particles: int
    beta: float
    g_choice: str = "cos_x"
    g_amplitude: float = 0.5

    def __post_init__(self):
        if self.g_choice not in ("uniform", "cos_x"):
            raise ValueError(f"unknown g_choice {self.g_choice!r}")
        if not 0.0 <= self.g_amplitude < 1.0:
            raise ValueError("g_amplitude must be in [0, 1) to keep g positive")


DensitySpec = CanonicalEq | GrandCanonicalEq | ModulatedProduct


def _g_factory(spec, domain: Domain):
    """Position weight as a vectorized function of (..., 3) arrays."""
    choice = getattr(spec, "g_choice", "uniform")
    amp = getattr(spec, "g_amplitude", 0.0)
    if choice == "uniform" or amp == 0.0:
        return (lambda q: np.ones(np.asarray(q).shape[:-1])), 1.0
    lo_x = domain.lower.x
    length_x = domain.upper.x - domain.lower.x

    def g(q):
        q = np.asarray(q, dtype=float)
        return 1.0 + amp * np.cos(math.pi * (q[..., 0] - lo_x) / length_x)

    return g, 1.0 + amp


def _pairwise_ok(q: np.ndarray, a: float) -> np.ndarray:
    """All-pairs exclusion test for a batch of position sets (B, n, 3)."""
    n = q.shape[1]
    ok = np.ones(q.shape[0], dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            d = q[:, i, :] - q[:, j, :]
            ok &= np.einsum("ij,ij->i", d, d) >= a * a
    return ok


class InitialMeasure:
    """A density specification bound to a domain, with cached normalization.

    Immutable after construction; samplers take an explicit RNG so that
    parallel workers just use independently seeded streams.
    """

    def __init__(self, spec: DensitySpec, domain: Domain, norm_seed: int = 2_0250_101,
                 norm_proposals: int = NORM_PROPOSALS):
        self.spec = spec
        self.domain = domain
        self.beta = spec.beta
        self.maxwellian = Maxwellian(spec.beta)
        self.g, self.g_max = _g_factory(spec, domain)
        self._ins_lo = np.array(domain.inset_lower)
        self._ins_hi = np.array(domain.inset_upper)
        self._ins_vol = domain.inset_volume
        rng = np.random.default_rng(np.random.SeedSequence((norm_seed, norm_proposals)))
        if isinstance(spec, GrandCanonicalEq):
            self.n_max = self._probe_occupancy(spec.n_cap, rng)
            self._z_pos = {0: (1.0, 0.0)}
            for n in range(1, self.n_max + 1):
                self._z_pos[n] = self._position_integral(n, norm_proposals, rng)
            weights = [spec.z ** n * self._z_pos[n][0] / math.factorial(n)
                       for n in range(self.n_max + 1)]
            errs = [spec.z ** n * self._z_pos[n][1] / math.factorial(n)
                    for n in range(self.n_max + 1)]
            total = sum(weights)
            self.grand_partition = total
            self.occupancy = np.array(weights) / total
            self.z_rel_err = math.sqrt(sum(e * e for e in errs)) / total
        else:
            n = spec.n_particles
            self.n_max = n
            self._z_pos = {n: self._position_integral(n, norm_proposals, rng)}
            z, ze = self._z_pos[n]
            if z <= 0.0:
                raise ValueError(f"box cannot fit {n} spheres of diameter {domain.a}")
            self.z_rel_err = ze / z

    # -- normalization machinery -------------------------------------------

    def uniform_positions(self, rng, count: int, n: int) -> np.ndarray:
        """Uniform center proposals in the inset box, shape (count, n, 3)."""
        u = rng.random((count, n, 3))
        return self._ins_lo + u * (self._ins_hi - self._ins_lo)

    def _position_integral(self, n: int, proposals: int, rng) -> tuple[float, float]:
        """MC estimate of the n-particle position integral of prod g with
        hard-core exclusion, with its standard error."""
        if n == 0:
            return (1.0, 0.0)
        total = 0.0
        total_sq = 0.0
        done = 0
        while done < proposals:
            b = min(_NORM_BATCH, proposals - done)
            q = self.uniform_positions(rng, b, n)
            w = np.prod(self.g(q), axis=1) * _pairwise_ok(q, self.domain.a)
            total += float(w.sum())
            total_sq += float((w * w).sum())
            done += b
        mean = total / done
        var = max(total_sq / done - mean * mean, 0.0)
        vol = self._ins_vol ** n
        return (vol * mean, vol * math.sqrt(var / done))

    def _probe_occupancy(self, cap: int, rng) -> int:
        """Largest particle number the box geometrically admits (MC probe,
        capped for desk scale)."""
        n = 0
        for k in range(1, cap + 1):
            q = self.uniform_positions(rng, 200_000, k)
            if not _pairwise_ok(q, self.domain.a).any():
                break
            n = k
        return n

    def position_partition(self, n: int) -> tuple[float, float]:
        return self._z_pos.get(n, (0.0, 0.0))

    @property
    def bound_constant(self) -> float:
        """c such that every density level is bounded by c * prod h_beta."""
        if isinstance(self.spec, GrandCanonicalEq):
            return max(self.spec.z ** n for n in range(self.n_max + 1)) / self.grand_partition
        return self.g_max ** self.spec.n_particles / self._z_pos[self.spec.n_particles][0]

    # -- admissibility on arrays --------------------------------------------

    def admissible(self, q: np.ndarray, tol: float | None = None) -> bool:
        """Hard-core and wall-margin test for one position set (n, 3);
        contact counts as admissible."""
        if tol is None:
            tol = 1e-9 * self.domain.a
        q = np.asarray(q, dtype=float)
        if q.size == 0:
            return True
        if (q < self._ins_lo - tol).any() or (q > self._ins_hi + tol).any():
            return False
        n = q.shape[0]
        a2 = (self.domain.a - tol) ** 2
        for i in range(n):
            for j in range(i + 1, n):
                d = q[i] - q[j]
                if float(d @ d) < a2:
                    return False
        return True

    # -- the spec operations --------------------------------------------------

    def density(self, config: Configuration) -> float:
        """f at a configuration, hard-core indicator included."""
        q = np.array([pt.q.as_tuple() for pt in config.particles])
        p = np.array([pt.p.as_tuple() for pt in config.particles])
        return self.density_arrays(q, p)

    def density_arrays(self, q: np.ndarray, p: np.ndarray) -> float:
        n = len(q)
        if isinstance(self.spec, GrandCanonicalEq):
            if n > self.n_max or not self.admissible(q):
                return 0.0
            base = self.spec.z ** n / self.grand_partition
        else:
            if n != self.spec.n_particles or not self.admissible(q):
                return 0.0
            base = 1.0 / self._z_pos[n][0]
        gw = float(np.prod(self.g(q))) if n else 1.0
        hw = float(np.prod(self.maxwellian.pdf(p))) if n else 1.0
        return base * gw * hw

    def sample_batch(self, rng: np.random.Generator, count: int,
                     max_attempts: int = 1000) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``count`` configurations for a fixed particle number
        (canonical variants): returns positions and momenta arrays
        (count, N, 3).  Rejection against the spatial weight and the hard
        core; raises after max_attempts rounds without progress."""
        if isinstance(self.spec, GrandCanonicalEq):
            raise TypeError("sample_batch needs a fixed particle number")
        n = self.spec.n_particles
        out = []
        got = 0
        attempts = 0
        while got < count:
            b = max(2 * (count - got), 64)
            q = self.uniform_positions(rng, b, n)
            accept = _pairwise_ok(q, self.domain.a)
            if self.g_max > 1.0:
                gprod = np.prod(self.g(q), axis=1) / self.g_max ** n
                accept &= rng.random(b) < gprod
            sel = q[accept]
            if len(sel):
                out.append(sel[: count - got])
                got += len(out[-1])
                attempts = 0
            else:
                attempts += 1
                if attempts >= max_attempts:
                    raise RuntimeError(
                        f"no admissible {n}-sphere placement in {max_attempts} rounds"
                    )
        qs = np.concatenate(out) if len(out) > 1 else out[0]
        ps = self.maxwellian.sample(rng, (count, n, 3))
        return qs, ps

    def sample(self, rng: np.random.Generator, max_attempts: int = 1000) -> Configuration:
        """One configuration distributed per the measure.  Grand-canonical
        variants first draw the particle number from the induced
        occupancy distribution."""
        if isinstance(self.spec, GrandCanonicalEq):
            n = int(rng.choice(self.n_max + 1, p=self.occupancy))
            if n == 0:
                return Configuration((), self.domain)
            attempts = 0
            while True:
                q = self.uniform_positions(rng, 1, n)[0]
                if self.admissible(q):
                    break
                attempts += 1
                if attempts >= max_attempts * 100:
                    raise RuntimeError("grand-canonical placement failed")
            p = self.maxwellian.sample(rng, (n, 3))
            return config_from_arrays(q, p, self.domain)
        q, p = self.sample_batch(rng, 1, max_attempts)
        return config_from_arrays(q[0], p[0], self.domain)

    # -- exclusion integrals for correlation evaluation -----------------------

    def exclusion_integral(self, q_base: np.ndarray, m: int, rng,
                           samples: int = INNER_SAMPLES) -> tuple[float, float]:
        """MC estimate with standard error of the integral over m extra
        positions of prod g, restricted to placements compatible with the
        fixed centers q_base and with each other."""
        if m == 0:
            return (1.0, 0.0)
        q = self.uniform_positions(rng, samples, m)
        w = np.prod(self.g(q), axis=1)
        ok = _pairwise_ok(q, self.domain.a)
        a2 = self.domain.a ** 2
        for base in np.asarray(q_base, dtype=float).reshape(-1, 3):
            d = q - base
            ok &= (np.einsum("ijk,ijk->ij", d, d) >= a2).all(axis=1)
        vals = w * ok
        vol = self._ins_vol ** m
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
        return (vol * mean, vol * se)


def config_from_arrays(q: np.ndarray, p: np.ndarray, domain: Domain) -> Configuration:
    pts = tuple(
        PhasePoint(Vec3(float(q[i, 0]), float(q[i, 1]), float(q[i, 2])),
                   Vec3(float(p[i, 0]), float(p[i, 1]), float(p[i, 2])))
        for i in range(len(q))
    )
    return Configuration(pts, domain)


def config_to_arrays(config: Configuration) -> tuple[np.ndarray, np.ndarray]:
    q = np.array([pt.q.as_tuple() for pt in config.particles], dtype=float).reshape(-1, 3)
    p = np.array([pt.p.as_tuple() for pt in config.particles], dtype=float).reshape(-1, 3)
    return q, p


# ---------------------------------------------------------------------------
# correlation-function vector and its inverse
# ---------------------------------------------------------------------------

class CorrelationVector:
    """Pointwise-evaluatable correlation functions of an initial measure.

    Level n is the falling-factorial-weighted n-particle marginal for
    fixed-N measures, or the fugacity series over added particles in the
    grand-canonical case.  Every evaluation returns (value, stderr); the
    shared normalization uncertainty is exposed separately as z_rel_err
    because it is correlated across evaluations.
    """

    def __init__(self, measure: InitialMeasure, inner_samples: int = INNER_SAMPLES):
        self.measure = measure
        self.inner_samples = inner_samples
        self.n_max = measure.n_max
        self.z_rel_err = measure.z_rel_err

    def eval_arrays(self, q: np.ndarray, p: np.ndarray, rng,
                    inner_samples: int | None = None) -> tuple[float, float]:
        ms = self.measure
        k = inner_samples if inner_samples is not None else self.inner_samples
        n = len(q)
        if n > self.n_max or not ms.admissible(q):
            return (0.0, 0.0)
        gw = float(np.prod(ms.g(q))) if n else 1.0
        hw = float(np.prod(ms.maxwellian.pdf(p))) if n else 1.0
        spec = ms.spec
        if isinstance(spec, GrandCanonicalEq):
            val = 0.0
            var = 0.0
            for m in range(0, self.n_max - n + 1):
                em, se = ms.exclusion_integral(q, m, rng, k)
                c = spec.z ** (n + m) / math.factorial(m)
                val += c * em
                var += (c * se) ** 2
            scale = gw * hw / ms.grand_partition
            return (scale * val, scale * math.sqrt(var))
        big_n = spec.n_particles
        ff = 1.0
        for i in range(n):
            ff *= big_n - i
        em, se = ms.exclusion_integral(q, big_n - n, rng, k)
        scale = ff * gw * hw / ms.position_partition(big_n)[0]
        return (scale * em, scale * se)

    def eval_config(self, config: Configuration, rng,
                    inner_samples: int | None = None) -> tuple[float, float]:
        q, p = config_to_arrays(config)
        return self.eval_arrays(q, p, rng, inner_samples)


def correlation_map(measure: InitialMeasure,
                    inner_samples: int = INNER_SAMPLES) -> CorrelationVector:
    """The map from a density to its correlation-function vector."""
    return CorrelationVector(measure, inner_samples)


class InverseDensity:
    """Alternating-series inverse of a correlation vector.

    Evaluates the density level n as the signed sum over integrals of
    higher correlation levels; integrals are MC with uniform positions and
    Maxwellian proposal momenta at beta0.
    """

    def __init__(self, rho: CorrelationVector, beta0: float | None = None,
                 outer_samples: int = 256):
        self.rho = rho
        self.measure = rho.measure
        self.beta0 = beta0 if beta0 is not None else rho.measure.beta
        self.outer_samples = outer_samples
        self.n_max = rho.n_max

    def eval_arrays(self, q: np.ndarray, p: np.ndarray, rng) -> tuple[float, float]:
        ms = self.measure
        n = len(q)
        prop = Maxwellian(self.beta0)
        total = 0.0
        var = 0.0
        for m in range(0, self.n_max - n + 1):
            if m == 0:
                v, se = self.rho.eval_arrays(q, p, rng)
                total += v
                var += se * se
                continue
            ko = self.outer_samples
            qx = ms.uniform_positions(rng, ko, m)
            px = prop.sample(rng, (ko, m, 3))
            weights = np.prod(prop.pdf(px), axis=1)
            vals = np.empty(ko)
            for i in range(ko):
                vq = np.concatenate([q.reshape(-1, 3), qx[i]])
                vp = np.concatenate([p.reshape(-1, 3), px[i]])
                ri, _ = self.rho.eval_arrays(vq, vp, rng)
                vals[i] = ri / weights[i]
            vol = ms.domain.inset_volume ** m
            sign = (-1.0) ** m / math.factorial(m)
            total += sign * vol * float(vals.mean())
            var += (vol / math.factorial(m)) ** 2 * float(vals.var(ddof=1)) / ko
        return (total, math.sqrt(var))


def inverse_correlation_map(rho: CorrelationVector, beta0: float | None = None,
                            outer_samples: int = 256) -> InverseDensity:
    return InverseDensity(rho, beta0, outer_samples)


# ---------------------------------------------------------------------------
# plain-text serialization of density blocks (versioned schema)
# ---------------------------------------------------------------------------

def spec_to_block(spec: DensitySpec, domain: Domain, seed: int | None = None) -> dict:
    block = {
        "box": [*domain.lower.as_tuple(), *domain.upper.as_tuple()],
        "a": domain.a,
        "beta": spec.beta,
    }
    if isinstance(spec, CanonicalEq):
        block["variant"] = "canonical"
        block["n"] = spec.n_particles
    elif isinstance(spec, GrandCanonicalEq):
        block["variant"] = "grand_canonical"
        block["z"] = spec.z
    else:
        block["variant"] = "modulated"
        block["n"] = spec.n_particles
        block["g_choice"] = spec.g_choice
        block["g_amplitude"] = spec.g_amplitude
    if seed is not None:
        block["seed"] = seed
    return block


def spec_from_block(block: dict) -> tuple[DensitySpec, Domain]:
    box = [float(v) for v in block["box"]]
    domain = Domain(Vec3(*box[:3]), Vec3(*box[3:]), float(block["a"]))
    beta = float(block["beta"])
    variant = block["variant"]
    if variant == "canonical":
        spec: DensitySpec = CanonicalEq(int(block["n"]), beta)
    elif variant == "grand_canonical":
        spec = GrandCanonicalEq(float(block["z"]), beta,
                                int(block.get("n_cap", GC_OCCUPANCY_CAP)))
    elif variant == "modulated":
        spec = ModulatedProduct(int(block["n"]), beta,
                                str(block.get("g_choice", "cos_x")),
                                float(block.get("g_amplitude", 0.5)))
    else:
        raise ValueError(f"unknown density variant {variant!r}")
    return spec, domain


@lru_cache(maxsize=64)
def get_measure(spec: DensitySpec, domain: Domain, norm_seed: int = 2_0250_101,
                norm_proposals: int = NORM_PROPOSALS) -> InitialMeasure:
    """Cached measure factory: normalization constants are computed once
    per (spec, domain) in each process, from a fixed normalization
    stream, so parallel workers agree bit for bit."""
    return InitialMeasure(spec, domain, norm_seed, norm_proposals)


def density_eval(measure: InitialMeasure, config: Configuration) -> float:
    """Free-function form of InitialMeasure.density."""
    return measure.density(config)


def sample(measure: InitialMeasure, rng: np.random.Generator) -> Configuration:
    """Free-function form of InitialMeasure.sample."""
    return measure.sample(rng)
