import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from winterbottom.coarse import MesoPartition
from winterbottom.geometry import (
    ConvexPolytope,
    GeometryError,
    SupportFunction,
    UnboundedFamily,
    circle_normals,
    facet_covering,
    fibonacci_normals,
    fits,
    functional_energy,
    m_bar,
    polyhedral_approx,
    positively_spanning,
    random_hull,
    rasterize,
    read_shape_json,
    scale_to_volume,
    unit_box,
    v_of_m,
    volume_via_support,
    winterbottom_truncate,
    wulff_shape,
    write_shape_json,
)


def axis_normals(d):
    return np.vstack([np.eye(d), -np.eye(d)])


def cube(d=3, s=1.0):
    return ConvexPolytope.box([-s] * d, [s] * d)


def brute_vertices(P):
    """Vertices by solving every d-subset of constraints (independent of qhull)."""
    pts = []
    for idx in itertools.combinations(range(len(P.A)), P.d):
        M = P.A[list(idx)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, P.b[list(idx)])
        if np.all(P.A @ x <= P.b + 1e-9):
            if all(np.linalg.norm(x - y) > 1e-9 for y in pts):
                pts.append(x)
    return np.array(pts)


def same_points(U, V):
    return len(U) == len(V) and all(np.min(np.linalg.norm(V - u, axis=1)) < 1e-8 for u in U)


def test_wulff_isotropic_axis_family_is_cube():
    for d in (2, 3):
        K = wulff_shape(SupportFunction.isotropic(d), axis_normals(d))
        assert K.volume == pytest.approx(2.0**d)
        assert same_points(K.vertices, np.array(list(itertools.product((-1, 1), repeat=d)), float))


def test_wulff_of_polytope_support_recovers_it():
    rng = np.random.default_rng(3)
    for d in (2, 3):
        P = random_hull(rng, d, 10)
        K = wulff_shape(SupportFunction.from_polytope(P))
        assert same_points(K.vertices, P.vertices)
        assert K.volume == pytest.approx(P.volume, abs=1e-9)


def test_dense_family_approaches_disc():
    errs = [abs(wulff_shape(SupportFunction.isotropic(2), circle_normals(m)).volume - math.pi) for m in (8, 32, 128)]
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-3
    errs = [abs(wulff_shape(SupportFunction.isotropic(3), fibonacci_normals(m)).volume - 4 * math.pi / 3)
            for m in (50, 400)]
    assert errs[1] < errs[0] < 0.6


def test_unbounded_and_near_parallel_families_rejected():
    with pytest.raises(UnboundedFamily):
        wulff_shape(SupportFunction.isotropic(2), np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]))
    assert not positively_spanning(np.array([[1.0, 0.0], [0.0, 1.0]]))
    n = np.vstack([axis_normals(2), [[1.0, 1e-12]]])
    with pytest.raises(GeometryError):
        wulff_shape(SupportFunction.isotropic(2), n)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3]))
def test_vertices_match_brute_force(seed, d):
    P = random_hull(np.random.default_rng(seed), d, 8)
    assert same_points(P.vertices, brute_vertices(P))
    assert np.all(P.vertices @ P.A.T <= P.b + 1e-9)
    assert all(f.area >= 0 for f in P.facets)


def test_truncation_regimes():
    K = cube()
    W = winterbottom_truncate(K, 1.0, 1.0)
    assert W.regime == "complete-drying" and W.polytope is K
    W = winterbottom_truncate(K, -1.0, 1.0)
    assert W.regime == "complete-wetting" and W.volume == 0.0
    W = winterbottom_truncate(K, 0.0, 1.0)
    assert W.regime == "partial" and W.volume == pytest.approx(4.0)
    with pytest.raises(GeometryError):
        winterbottom_truncate(K, 1.5, 1.0)
    with pytest.raises(GeometryError):
        scale_to_volume(winterbottom_truncate(K, -1.0, 1.0), 1.0)


def test_regime_boundary_continuity():
    K = wulff_shape(SupportFunction.isotropic(3), fibonacci_normals(60))
    t = K.support(np.array([0, 0, -1.0]))
    vols = [winterbottom_truncate(K, D, t).volume for D in np.linspace(0.5 * t, t - 1e-9, 6)]
    assert np.all(np.diff(vols) > 0)
    assert vols[-1] == pytest.approx(K.volume, rel=1e-6)


def test_scale_to_volume_examples():
    W = winterbottom_truncate(cube(), 0.0, 1.0)
    P = scale_to_volume(W, 4.0)
    assert P.volume == pytest.approx(4.0) and P.bounds()[0][-1] == pytest.approx(0.0, abs=1e-12)
    Q = scale_to_volume(W, 0.5)
    assert Q.volume == pytest.approx(0.5)
    assert np.allclose(Q.bounds()[1] - Q.bounds()[0], [1.0, 1.0, 0.5])
    W = winterbottom_truncate(cube(), 0.3, 1.0)
    assert scale_to_volume(W, 1.0).bounds()[0][-1] == pytest.approx(0.0, abs=1e-12)


def test_functional_energy_examples():
    unit = ConvexPolytope.box([0, 0, 0], [1, 1, 1])
    tau = SupportFunction.isotropic(3)
    assert functional_energy(unit, tau, 0.0) == pytest.approx(5.0)
    assert functional_energy(unit, tau, 1.0) == pytest.approx(6.0)
    floating = unit.translate([0, 0, 0.5])
    assert functional_energy(floating, tau, -0.7) == pytest.approx(6.0)
    with pytest.raises(GeometryError):
        functional_energy(unit.translate([0, 0, -0.5]), tau, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.2, 5.0), st.floats(-0.9, 0.9))
def test_energy_homogeneity(seed, s, delta):
    rng = np.random.default_rng(seed)
    for d in (2, 3):
        P = random_hull(rng, d, 9)
        lo, _ = P.bounds()
        P = P.translate(-lo[-1] * np.eye(d)[-1])
        tau = SupportFunction.from_values(axis_normals(d), rng.uniform(0.5, 2, 2 * d))
        e1 = functional_energy(P, tau, delta)
        e2 = functional_energy(P.scale(s), tau, delta)
        assert e2 == pytest.approx(s ** (d - 1) * e1, abs=1e-9 * max(1, e2))


def test_volume_via_support_examples():
    assert volume_via_support(cube()) == pytest.approx(8.0, abs=1e-12)
    simplex = ConvexPolytope.from_points(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]]))
    assert volume_via_support(simplex) == pytest.approx(1 / 6, abs=1e-12)
    P = random_hull(np.random.default_rng(0), 3)
    assert volume_via_support(P.scale(2.0)) == pytest.approx(8 * volume_via_support(P), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3]))
def test_volume_identity_random_hulls(seed, d):
    P = random_hull(np.random.default_rng(seed), d)
    assert abs(volume_via_support(P) - P.volume) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3]))
def test_duality(seed, d):
    rng = np.random.default_rng(seed)
    F = circle_normals(10, rng.uniform(0, 1)) if d == 2 else fibonacci_normals(30)
    vals = rng.uniform(1.0, 1.5, len(F))
    tau = SupportFunction.from_values(F, vals)
    K = wulff_shape(tau, F)
    h = K.support(F)
    assert np.all(h <= vals + 1e-9)
    facet_normals = np.array([f.normal for f in K.facets])
    for n in facet_normals:
        k = int(np.argmin(np.linalg.norm(F - n, axis=1)))
        assert abs(h[k] - vals[k]) < 1e-9


def test_symmetry_and_positivity_checks():
    tau = SupportFunction.from_values(circle_normals(8), [1.0, 1.2] * 4)
    assert tau.check_symmetric() and tau.check_positive()
    skew = SupportFunction(2, lambda n: 1.0 + 0.5 * n[:, 0])
    assert not skew.check_symmetric()


def test_v_of_m_and_m_bar():
    assert v_of_m(0.8, 0.8) == 0
    assert v_of_m(-0.8, 0.8) == 1
    with pytest.raises(GeometryError):
        v_of_m(0.9, 0.8)
    # square half-shape of volume 2; width 2s with s = sqrt(v/2) fits Q iff v <= 1/2, i.e. m >= 0
    W = winterbottom_truncate(cube(2), 0.0, 1.0)
    assert m_bar(W, 0.9, unit_box(2)) == pytest.approx(0.0, abs=1e-9)
    assert fits(scale_to_volume(W, 0.5), unit_box(2))
    assert not fits(scale_to_volume(W, 0.51), unit_box(2))


def test_polyhedral_approx_certificates():
    cube_tau = SupportFunction.from_polytope(cube(3))
    K, _, cert = polyhedral_approx(cube_tau, 0.1)
    assert same_points(K.vertices, cube(3).vertices) and cert.support_gap == 0
    gaps = []
    for delta in (0.2, 0.1, 0.05):
        K, tau_d, cert = polyhedral_approx(SupportFunction.isotropic(2), delta)
        assert cert.support_gap <= delta and cert.energy_gap <= delta
        dirs = circle_normals(997, 0.123)
        assert np.max(np.abs(tau_d(dirs) - 1.0)) <= delta
        gaps.append((cert.support_gap, cert.energy_gap))
    assert gaps[0][0] > gaps[1][0] > gaps[2][0]
    assert gaps[0][1] > gaps[1][1] > gaps[2][1]


def test_facet_covering_square_facets():
    unit = ConvexPolytope.box([0, 0, 0], [1, 1, 1])
    cov = facet_covering(unit, 0.5, 0.01)
    assert len(cov.bases) == 24 and cov.uncovered == pytest.approx(0.0, abs=1e-12)
    assert all(b.height == pytest.approx(0.005) for b in cov.bases)


def test_facet_covering_triangles_refine():
    simplex = ConvexPolytope.from_points(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]]))
    cov = facet_covering(simplex, 0.5, 0.05)
    assert cov.uncovered <= 0.05 and cov.h < 0.5
    with pytest.raises(GeometryError):
        facet_covering(ConvexPolytope.box([0, 0, 0], [1, 1, 1]), 0.5, -1.0)


def test_facet_covering_energy_half_cube():
    W = winterbottom_truncate(cube(3), 0.25, 1.0)
    P = scale_to_volume(W, W.volume)
    tau = SupportFunction.isotropic(3)
    cov = facet_covering(P, 0.25, 0.01, tau, wall_delta=0.25)
    assert cov.uncovered <= 0.01
    assert cov.energy == pytest.approx(functional_energy(P, tau, 0.25), abs=0.01 * 1.0)
    wall_bases = [b for b in cov.bases if b.wall]
    assert sum(b.measure for b in wall_bases) == pytest.approx(4.0)


def test_rasterize_examples():
    p = MesoPartition(8, 1)
    lo, hi = p.domain
    assert np.all(rasterize(ConvexPolytope.box(lo, hi), p) == 1)
    empty = ConvexPolytope.box(lo, hi).intersect(np.array([0.0, -1.0]), -5.0)
    assert empty.is_empty and np.all(rasterize(empty, p) == -1)
    # half-square [-1/2, 1/2] x [0, 1/2] at K/N = 1/8: centres at odd multiples of 1/16
    q = MesoPartition(8, 1)
    half = ConvexPolytope.box([-0.5, 0.0], [0.5, 0.5])
    r = rasterize(half, q)
    c = q.centers()
    expect = (np.abs(c[..., 0]) <= 0.5) & (c[..., 1] <= 0.5)
    assert np.array_equal(r > 0, expect)
    assert int((r > 0).sum()) == 8 * 4


def test_shape_json_round_trip(tmp_path):
    P = random_hull(np.random.default_rng(1), 3)
    write_shape_json(tmp_path / "s.json", P, {"regime": "partial"})
    Q = read_shape_json(tmp_path / "s.json")
    assert same_points(P.vertices, Q.vertices)
