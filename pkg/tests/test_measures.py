import math

import numpy as np
import pytest

from hardsphere.dynamics import pair_collide
from hardsphere.geometry import Domain, Vec3
from hardsphere.measures import (
    CanonicalEq,
    GrandCanonicalEq,
    InitialMeasure,
    Maxwellian,
    ModulatedProduct,
    config_from_arrays,
    correlation_map,
    inverse_correlation_map,
    spec_from_block,
    spec_to_block,
)

A = 1.0
BOX = Domain(Vec3(0, 0, 0), Vec3(5, 5, 5), A)
MICRO1 = Domain(Vec3(0, 0, 0), Vec3(1.5, 1.5, 1.5), A)   # fits one sphere
PROPOSALS = 200_000


@pytest.fixture(scope="module")
def canonical2():
    return InitialMeasure(CanonicalEq(2, 1.0), BOX, norm_proposals=PROPOSALS)


@pytest.fixture(scope="module")
def modulated2():
    return InitialMeasure(ModulatedProduct(2, 1.0), BOX, norm_proposals=PROPOSALS)


@pytest.fixture(scope="module")
def gc_micro():
    return InitialMeasure(GrandCanonicalEq(2.0, 1.0), MICRO1,
                          norm_proposals=PROPOSALS)


def test_maxwellian_normalizes():
    mw = Maxwellian(1.3)
    # exact per-axis box mass over a wide box
    assert mw.box_prob([-40, -40, -40], [40, 40, 40]) == pytest.approx(1.0, abs=1e-12)
    # product Gauss-Hermite quadrature of the density
    nodes, weights = np.polynomial.hermite.hermgauss(48)
    scale = math.sqrt(2.0 / mw.beta)
    px, py, pz = np.meshgrid(nodes, nodes, nodes, indexing="ij")
    p = scale * np.stack([px, py, pz], axis=-1)
    comp = weights * np.exp(nodes ** 2)
    w3 = comp[:, None, None] * comp[None, :, None] * comp[None, None, :]
    total = float((mw.pdf(p) * w3).sum()) * scale ** 3
    assert total == pytest.approx(1.0, abs=1e-10)


def test_maxwellian_moments_via_sampler():
    rng = np.random.default_rng(1)
    beta = 2.0
    p = Maxwellian(beta).sample(rng, (200_000, 3))
    m2 = (p ** 2).sum(axis=1)
    se = m2.std(ddof=1) / math.sqrt(len(m2))
    assert abs(m2.mean() - 3.0 / beta) < 3 * se


def test_single_particle_position_uniform():
    ms = InitialMeasure(CanonicalEq(1, 1.0), BOX, norm_proposals=50_000)
    rng = np.random.default_rng(2)
    q, p = ms.sample_batch(rng, 30_000)
    assert q.min() >= 0.5 and q.max() <= 4.5
    se = q[:, 0, 0].std(ddof=1) / math.sqrt(len(q))
    assert abs(q[:, 0, 0].mean() - 2.5) < 3 * se
    m2 = (p ** 2).sum(axis=(1, 2))
    assert abs(m2.mean() - 3.0) < 3 * m2.std(ddof=1) / math.sqrt(len(m2))


def test_barely_fitting_pair_respects_exclusion():
    tight = Domain(Vec3(0, 0, 0), Vec3(2.2, 2.2, 2.2), A)
    ms = InitialMeasure(CanonicalEq(2, 1.0), tight, norm_proposals=50_000)
    rng = np.random.default_rng(3)
    q, _ = ms.sample_batch(rng, 2000)
    d = np.linalg.norm(q[:, 0, :] - q[:, 1, :], axis=1)
    assert d.min() >= A


def test_density_eval_forms(canonical2, modulated2):
    h = Maxwellian(1.0)
    p1, p2 = np.array([0.3, -0.1, 0.2]), np.array([-0.4, 0.0, 1.0])
    q = np.array([[1.0, 2.0, 2.0], [3.0, 2.0, 2.0]])
    cfg = config_from_arrays(q, np.stack([p1, p2]), BOX)
    z = canonical2.position_partition(2)[0]
    want = float(h.pdf(p1) * h.pdf(p2)) / z
    assert canonical2.density(cfg) == pytest.approx(want, rel=1e-12)
    # overlap or wall violation gives zero
    q_bad = np.array([[1.0, 2.0, 2.0], [1.5, 2.0, 2.0]])
    assert canonical2.density(config_from_arrays(q_bad, np.stack([p1, p2]), BOX)) == 0.0
    q_wall = np.array([[0.2, 2.0, 2.0], [3.0, 2.0, 2.0]])
    assert canonical2.density(config_from_arrays(q_wall, np.stack([p1, p2]), BOX)) == 0.0


def test_uniform_modulation_matches_canonical(canonical2):
    flat = InitialMeasure(ModulatedProduct(2, 1.0, g_choice="uniform"), BOX,
                          norm_proposals=PROPOSALS)
    rng = np.random.default_rng(4)
    q, p = canonical2.sample_batch(rng, 5)
    for i in range(5):
        cfg = config_from_arrays(q[i], p[i], BOX)
        assert flat.density(cfg) == pytest.approx(canonical2.density(cfg), rel=1e-12)


def test_density_bounded_by_equilibrium_envelope(modulated2):
    rng = np.random.default_rng(5)
    c = modulated2.bound_constant
    h = modulated2.maxwellian
    q, p = modulated2.sample_batch(rng, 500)
    for i in range(500):
        val = modulated2.density_arrays(q[i], p[i])
        envelope = c * float(np.prod(h.pdf(p[i])))
        assert val <= envelope * (1.0 + 1e-12)


def test_modulated_density_continuous_through_collision(modulated2):
    # the density depends on momenta only through the Maxwellian product,
    # which the collision law preserves exactly
    rng = np.random.default_rng(6)
    for _ in range(20):
        q1 = np.array([2.0, 2.0, 2.0])
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        q2 = q1 + A * v
        p1, p2 = rng.normal(size=3), rng.normal(size=3)
        before = modulated2.density_arrays(np.stack([q1, q2]), np.stack([p1, p2]))
        p1v, p2v = pair_collide(Vec3.of(p1), Vec3.of(p2), Vec3.of(v))
        after = modulated2.density_arrays(
            np.stack([q1, q2]),
            np.stack([p1v.as_tuple(), p2v.as_tuple()]))
        assert after == pytest.approx(before, rel=1e-12)


def test_grand_canonical_occupancy_ratio(gc_micro):
    # one-sphere box: P(1)/P(0) = z * free volume
    assert gc_micro.n_max == 1
    want = 2.0 * MICRO1.inset_volume
    got = gc_micro.occupancy[1] / gc_micro.occupancy[0]
    assert got == pytest.approx(want, rel=1e-3)
    rng = np.random.default_rng(7)
    ns = np.array([gc_micro.sample(rng).n for _ in range(4000)])
    frac = (ns == 1).mean()
    se = math.sqrt(frac * (1 - frac) / len(ns))
    assert abs(frac - gc_micro.occupancy[1]) < 3 * se


def test_correlation_rho0_is_total_mass(gc_micro):
    rho = correlation_map(gc_micro)
    rng = np.random.default_rng(8)
    val, err = rho.eval_arrays(np.zeros((0, 3)), np.zeros((0, 3)), rng, 2000)
    assert val == pytest.approx(1.0, abs=1e-9)


def test_correlation_level1_equals_density_on_one_sphere_box(gc_micro):
    rho = correlation_map(gc_micro)
    rng = np.random.default_rng(9)
    q = np.array([[0.7, 0.7, 0.7]])
    p = np.array([[0.2, -0.5, 0.1]])
    val, _ = rho.eval_arrays(q, p, rng)
    assert val == pytest.approx(gc_micro.density_arrays(q, p), rel=1e-12)


def test_canonical_rho1_matches_direct_marginal(canonical2):
    # rho_1(x) = 2 * integral over the second particle of f_2(x, y)
    rho = correlation_map(canonical2)
    rng = np.random.default_rng(10)
    q = np.array([[1.5, 2.5, 2.5]])
    p = np.array([[0.0, 0.0, 0.0]])
    val, err = rho.eval_arrays(q, p, rng, 40_000)
    # direct: 2 h(0) I(q) / Z with I the exclusion volume around q
    k = 200_000
    qs = 0.5 + rng.random((k, 3)) * 4.0
    ind = (np.linalg.norm(qs - q[0], axis=1) >= A)
    i_q = 4.0 ** 3 * ind.mean()
    want = 2.0 * float(Maxwellian(1.0).pdf(p[0])) * i_q / canonical2.position_partition(2)[0]
    assert abs(val - want) < 3 * math.hypot(err, want * 0.004)


def test_canonical_rho_vanishes_on_excluded(canonical2):
    rho = correlation_map(canonical2)
    rng = np.random.default_rng(11)
    q = np.array([[1.0, 2.0, 2.0], [1.4, 2.0, 2.0]])
    p = np.zeros((2, 3))
    assert rho.eval_arrays(q, p, rng) == (0.0, 0.0)


def test_inverse_map_level_forms_one_sphere_box(gc_micro):
    # with at most one sphere: f_1 = rho_1 and f_0 = rho_0 - int rho_1
    rho = correlation_map(gc_micro)
    inv = inverse_correlation_map(rho, outer_samples=4000)
    rng = np.random.default_rng(12)
    q = np.array([[0.6, 0.8, 0.7]])
    p = np.array([[0.4, 0.1, -0.2]])
    f1, err1 = inv.eval_arrays(q, p, rng)
    assert f1 == pytest.approx(gc_micro.density_arrays(q, p), rel=1e-9)
    f0, err0 = inv.eval_arrays(np.zeros((0, 3)), np.zeros((0, 3)), rng)
    want = gc_micro.density_arrays(np.zeros((0, 3)), np.zeros((0, 3)))
    assert abs(f0 - want) < 3 * max(err0, 1e-12)


def test_inverse_of_zero_is_zero(gc_micro):
    class ZeroRho:
        measure = gc_micro
        n_max = gc_micro.n_max

        def eval_arrays(self, q, p, rng, inner_samples=None):
            return (0.0, 0.0)

    inv = inverse_correlation_map(ZeroRho(), outer_samples=64)
    rng = np.random.default_rng(13)
    val, err = inv.eval_arrays(np.zeros((0, 3)), np.zeros((0, 3)), rng)
    assert val == 0.0 and err == 0.0


def test_roundtrip_recovers_density(gc_micro):
    rho = correlation_map(gc_micro, inner_samples=2000)
    inv = inverse_correlation_map(rho, outer_samples=2000)
    rng = np.random.default_rng(14)
    q = np.array([[0.9, 0.6, 0.6]])
    p = np.array([[-0.3, 0.2, 0.8]])
    approx, err = inv.eval_arrays(q, p, rng)
    exact = gc_micro.density_arrays(q, p)
    err = math.hypot(err, exact * gc_micro.z_rel_err)
    assert abs(approx - exact) <= 3 * max(err, 1e-12)


def test_spec_block_roundtrip():
    for spec in (CanonicalEq(3, 1.5), GrandCanonicalEq(4.0, 0.8),
                 ModulatedProduct(2, 1.0, "cos_x", 0.25)):
        block = spec_to_block(spec, BOX, seed=9)
        back, dom = spec_from_block(block)
        assert back == spec and dom == BOX


def test_sampler_infeasible_geometry_raises():
    tight = Domain(Vec3(0, 0, 0), Vec3(1.4, 1.4, 1.4), A)
    with pytest.raises(ValueError):
        InitialMeasure(CanonicalEq(3, 1.0), tight, norm_proposals=20_000)
