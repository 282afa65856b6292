import numpy as np
import pytest

from hardsphere.geometry import (
    AdmissibilityClass,
    Configuration,
    Domain,
    PhasePoint,
    SignClass,
    Vec3,
    classify,
    omega_admissible,
    omega_sign_class,
)

A = 1.0
BIG = Domain(Vec3(-50, -50, -50), Vec3(50, 50, 50), A)


def make(positions, momenta=None, domain=BIG):
    momenta = momenta or [(0.0, 0.0, 0.0)] * len(positions)
    pts = tuple(PhasePoint(Vec3.of(q), Vec3.of(p)) for q, p in zip(positions, momenta))
    return Configuration(pts, domain)


def test_vec3_rejects_non_finite():
    with pytest.raises(ValueError):
        Vec3(float("nan"), 0.0, 0.0)
    with pytest.raises(ValueError):
        Vec3(0.0, float("inf"), 0.0)


def test_vec3_algebra():
    v = Vec3(1.0, 2.0, 3.0)
    w = Vec3(-1.0, 0.5, 2.0)
    assert (v + w).as_tuple() == (0.0, 2.5, 5.0)
    assert (v - w).as_tuple() == (2.0, 1.5, 1.0)
    assert v.dot(w) == 6.0
    assert v.scale(2.0).as_tuple() == (2.0, 4.0, 6.0)
    assert (-v).norm() == v.norm()


def test_domain_needs_room_for_one_center():
    with pytest.raises(ValueError):
        Domain(Vec3(0, 0, 0), Vec3(1.0, 5.0, 5.0), 1.0)
    # micro-domains between a and 2a per side are legitimate
    d = Domain(Vec3(0, 0, 0), Vec3(1.5, 1.5, 1.5), 1.0)
    assert d.inset_volume == pytest.approx(0.125)


def test_classify_pair_distances():
    assert classify(make([(0, 0, 0), (2 * A, 0, 0)])) is AdmissibilityClass.INTERIOR
    assert classify(make([(0, 0, 0), (A, 0, 0)])) is AdmissibilityClass.CONTACT
    assert classify(make([(0, 0, 0), (0.5 * A, 0, 0)])) is AdmissibilityClass.EXCLUDED


def test_classify_wall_margin():
    # center a/4 from a wall violates the a/2 margin
    cfg = make([(-50 + 0.25 * A, 0, 0)])
    assert classify(cfg) is AdmissibilityClass.EXCLUDED
    cfg = make([(-50 + 0.5 * A, 0, 0)])
    assert classify(cfg) is AdmissibilityClass.CONTACT


def test_classify_permutation_invariant():
    rng = np.random.default_rng(5)
    for _ in range(50):
        pos = rng.uniform(-40, 40, size=(4, 3))
        base = classify(make([tuple(q) for q in pos]))
        perm = rng.permutation(4)
        assert classify(make([tuple(pos[i]) for i in perm])) is base


def test_omega_admissible_free_center():
    cfg = make([(0, 0, 0)])
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        assert omega_admissible(cfg, 0, Vec3(1, 0, 0), Vec3.of(v))


def test_omega_admissible_blocked_by_neighbor():
    # contact point would sit 0.5a from the second center: overlap
    cfg = make([(0, 0, 0), (1.5 * A, 0, 0)])
    assert not omega_admissible(cfg, 0, Vec3(0, 0, 0), Vec3(1, 0, 0))
    assert omega_admissible(cfg, 0, Vec3(0, 0, 0), Vec3(-1, 0, 0))


def test_omega_admissible_wall_margin():
    # center at 2a from the wall: contact point along -x sits exactly at
    # the margin (admissible); anything closer violates it
    d = Domain(Vec3(0, 0, 0), Vec3(10, 10, 10), A)
    cfg = make([(1.5 * A, 5, 5)], domain=d)
    assert omega_admissible(cfg, 0, Vec3(0, 0, 0), Vec3(-1, 0, 0))
    cfg = make([(1.25 * A, 5, 5)], domain=d)
    assert not omega_admissible(cfg, 0, Vec3(0, 0, 0), Vec3(-1, 0, 0))


def test_omega_admissible_input_checks():
    cfg = make([(0, 0, 0)])
    with pytest.raises(IndexError):
        omega_admissible(cfg, 3, Vec3(0, 0, 0), Vec3(1, 0, 0))
    with pytest.raises(ValueError):
        omega_admissible(cfg, 0, Vec3(0, 0, 0), Vec3(1.0, 1.0, 0.0))


def test_omega_admissible_builds_contact_configuration():
    rng = np.random.default_rng(42)
    cfg = make([(0, 0, 0), (3 * A, 0, 0)])
    hits = 0
    for _ in range(100):
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        omega = Vec3.of(v)
        if not omega_admissible(cfg, 0, Vec3(0, 0, 0), omega):
            continue
        hits += 1
        q_new = cfg.particles[0].q + omega.scale(A)
        grown = Configuration(
            (*cfg.particles, PhasePoint(q_new, Vec3(0, 0, 0))), cfg.domain)
        # the new pair touches at distance exactly a, so the enlarged
        # configuration classifies as contact, never excluded
        assert classify(grown) is AdmissibilityClass.CONTACT
    assert hits > 50


def test_omega_sign_class_examples():
    z = Vec3(0, 0, 0)
    assert omega_sign_class(z, Vec3(1, 0, 0), Vec3(1, 0, 0)) is SignClass.PLUS
    assert omega_sign_class(z, Vec3(-1, 0, 0), Vec3(1, 0, 0)) is SignClass.MINUS
    assert omega_sign_class(z, Vec3(0, 1, 0), Vec3(1, 0, 0)) is SignClass.GRAZING


def test_omega_sign_class_partitions_sphere():
    rng = np.random.default_rng(7)
    p_j = Vec3(0.3, -0.2, 1.0)
    p_new = Vec3(-0.5, 0.8, 0.1)
    counts = {SignClass.PLUS: 0, SignClass.MINUS: 0, SignClass.GRAZING: 0}
    for _ in range(500):
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        counts[omega_sign_class(p_j, p_new, Vec3.of(v))] += 1
    # the grazing band has relative width ~1e-9: random draws never hit it
    assert counts[SignClass.GRAZING] == 0
    assert counts[SignClass.PLUS] + counts[SignClass.MINUS] == 500
    assert counts[SignClass.PLUS] > 150 and counts[SignClass.MINUS] > 150
