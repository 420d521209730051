"""Wulff and Winterbottom shapes, the wall surface-energy functional, and polytope tools.

Polytopes are held in H-representation ``A x <= b`` with unit-norm rows.
Vertices come from a half-space intersection around a Chebyshev centre,
facets are the vertex sets lying on each constraint plane.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, cKDTree, HalfspaceIntersection, QhullError

TOL = 1e-9


class GeometryError(ValueError):
    pass


class UnboundedFamily(GeometryError):
    pass


class NonConvergence(RuntimeError):
    pass


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def circle_normals(m: int, phase: float = 0.0) -> np.ndarray:
    t = phase + 2 * np.pi * np.arange(m) / m
    return np.stack([np.cos(t), np.sin(t)], axis=1)


def fibonacci_normals(m: int) -> np.ndarray:
    """Roughly uniform unit vectors in 3D, closed under negation, including the axes."""
    k = np.arange(m) + 0.5
    z = 1 - 2 * k / m
    phi = np.pi * (1 + 5**0.5) * k
    r = np.sqrt(1 - z**2)
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    pts = np.concatenate([pts, -pts, np.eye(3), -np.eye(3)])
    return _dedupe_directions(pts)


def _cluster_labels(V: np.ndarray, tol: float) -> np.ndarray:
    # each point maps to the first earlier kept point within tol, or to itself
    V = np.asarray(V, dtype=float)
    label = np.arange(len(V))
    if len(V) == 0:
        return label
    pairs = cKDTree(V).query_pairs(tol, output_type="ndarray")
    if len(pairs):
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
        later = [[] for _ in range(len(V))]
        for i, j in pairs:
            later[i].append(j)
        kept = np.ones(len(V), dtype=bool)
        for i in range(len(V)):
            if kept[i]:
                for j in later[i]:
                    if kept[j] and label[j] == j:
                        kept[j] = False
                        label[j] = i
    return label


def _first_of_clusters(V: np.ndarray, tol: float) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    label = _cluster_labels(V, tol)
    return V[label == np.arange(len(V))]


def _dedupe_directions(n: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    return _first_of_clusters(_unit(n), tol)


def sphere_directions(d: int, m: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Probe directions: regular in 2D, Fibonacci in 3D, Gaussian otherwise."""
    if d == 2:
        return circle_normals(m, phase=0.5 / m)
    if d == 3:
        return fibonacci_normals(m)
    rng = np.random.default_rng(0) if rng is None else rng
    return _unit(rng.normal(size=(m, d)))


class SupportFunction:
    """A positive, even function on unit vectors.

    ``family``/``values`` hold an optional finite normal family; when the
    function is built from a polytope, evaluation is exact everywhere.
    """

    def __init__(
        self,
        d: int,
        fn: Callable[[np.ndarray], np.ndarray],
        family: np.ndarray | None = None,
        values: np.ndarray | None = None,
        name: str = "custom",
        exact_polytope: "ConvexPolytope | None" = None,
    ):
        self.d = d
        self._fn = fn
        self.family = None if family is None else _unit(family)
        self.values = None if values is None else np.asarray(values, dtype=float)
        self.name = name
        self.exact_polytope = exact_polytope

    def __call__(self, n: np.ndarray) -> np.ndarray | float:
        n = np.asarray(n, dtype=float)
        single = n.ndim == 1
        v = np.atleast_2d(_unit(n))
        out = np.asarray(self._fn(v), dtype=float).reshape(len(v))
        return float(out[0]) if single else out

    @classmethod
    def isotropic(cls, d: int, value: float = 1.0) -> "SupportFunction":
        if value <= 0:
            raise GeometryError("surface tension must be positive")
        return cls(d, lambda n: np.full(len(n), value), name=f"isotropic({value})")

    @classmethod
    def from_polytope(cls, P: "ConvexPolytope") -> "SupportFunction":
        """Support function ``h_P``; the Wulff shape over the facet normals of ``P`` recovers ``P``."""
        fam = np.array([f.normal for f in P.facets])
        return cls(P.d, P.support, family=fam, values=P.support(fam), name="polytope", exact_polytope=P)

    @classmethod
    def from_values(cls, normals: np.ndarray, values: np.ndarray) -> "SupportFunction":
        """Finite family; off the family the support function of its Wulff polytope is used."""
        normals = _unit(normals)
        values = np.asarray(values, dtype=float)
        if np.any(values <= 0):
            raise GeometryError("surface tension values must be positive")
        P = ConvexPolytope(normals, values)
        return cls(normals.shape[1], P.support, family=normals, values=values, name="values", exact_polytope=P)

    def check_symmetric(self, directions: np.ndarray | None = None, tol: float = 1e-9) -> bool:
        dirs = sphere_directions(self.d, 64) if directions is None else directions
        return bool(np.allclose(self(dirs), self(-dirs), atol=tol, rtol=0))

    def check_positive(self, directions: np.ndarray | None = None) -> bool:
        dirs = sphere_directions(self.d, 64) if directions is None else directions
        return bool(np.all(self(dirs) > 0))


@dataclass
class Facet:
    normal: np.ndarray
    offset: float
    vertices: np.ndarray  # ordered cycle in 3D, endpoints in 2D
    area: float


class ConvexPolytope:
    """Bounded polytope ``{x : A x <= b}``; rows of ``A`` are normalised."""

    def __init__(self, A: np.ndarray, b: np.ndarray, check_bounded: bool = True):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise GeometryError("A and b have different lengths")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms == 0):
            raise GeometryError("zero normal")
        A, b = A / norms[:, None], b / norms
        self.A, self.b = _merge_parallel(A, b)
        self.d = A.shape[1]
        if self.d < 2:
            raise GeometryError("dimension must be >= 2")
        if check_bounded and not positively_spanning(self.A):
            raise UnboundedFamily("normals do not positively span R^d; the intersection is unbounded")

    # representation

    @cached_property
    def _chebyshev(self) -> tuple[np.ndarray, float]:
        d = self.d
        c = np.zeros(d + 1)
        c[-1] = -1.0
        A_ub = np.hstack([self.A, np.ones((len(self.A), 1))])
        res = linprog(c, A_ub=A_ub, b_ub=self.b, bounds=[(None, None)] * d + [(None, None)], method="highs")
        if res.status == 2:
            return np.zeros(d), -np.inf
        if res.status != 0:
            raise GeometryError(f"Chebyshev centre LP failed: {res.message}")
        return res.x[:d], float(res.x[-1])

    @property
    def is_empty(self) -> bool:
        return self._chebyshev[1] < -TOL

    @property
    def is_degenerate(self) -> bool:
        """Empty or of zero volume."""
        return self._chebyshev[1] <= 1e-12

    @cached_property
    def vertices(self) -> np.ndarray:
        if self.is_empty:
            return np.zeros((0, self.d))
        centre, radius = self._chebyshev
        if radius <= 1e-12:
            return self._degenerate_vertices()
        hs = np.hstack([self.A, -self.b[:, None]])
        try:
            V = HalfspaceIntersection(hs, centre).intersections
        except QhullError as e:
            raise GeometryError(f"vertex enumeration failed: {e}") from e
        return _unique_points(V)

    def _degenerate_vertices(self) -> np.ndarray:
        # flat polytope: brute-force d-subsets of tight constraints
        from itertools import combinations

        pts = []
        for idx in combinations(range(len(self.A)), self.d):
            M = self.A[list(idx)]
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            x = np.linalg.solve(M, self.b[list(idx)])
            if np.all(self.A @ x <= self.b + 1e-9):
                pts.append(x)
        return _unique_points(np.array(pts)) if pts else np.zeros((0, self.d))

    @cached_property
    def facets(self) -> list[Facet]:
        if self.is_degenerate:
            return []
        V = self.vertices
        out = []
        for a, b in zip(self.A, self.b):
            on = V[np.abs(V @ a - b) <= 1e-9 * max(1.0, abs(b))]
            if len(on) < self.d:
                continue
            if self.d == 2:
                t = on @ np.array([-a[1], a[0]])
                p, q = on[np.argmin(t)], on[np.argmax(t)]
                area = float(np.linalg.norm(q - p))
                cyc = np.array([p, q])
            elif self.d == 3:
                cyc = _order_polygon(on, a)
                area = _polygon_area(cyc, a)
            else:
                raise GeometryError("facet areas are implemented for d <= 3")
            if area > 1e-14:
                out.append(Facet(a.copy(), float(b), cyc, area))
        return out

    # measures

    @cached_property
    def volume(self) -> float:
        """Direct volume from the convex hull of the vertices."""
        if self.is_degenerate or len(self.vertices) <= self.d:
            return 0.0
        return float(ConvexHull(self.vertices).volume)

    def support(self, n: np.ndarray) -> np.ndarray:
        V = self.vertices
        n = np.asarray(n, dtype=float)
        if len(V) == 0:
            return np.full(n.shape[:-1], -np.inf)
        return np.max(n @ V.T, axis=-1) if n.ndim > 1 else float(np.max(V @ n))

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        V = self.vertices
        if len(V) == 0:
            raise GeometryError("empty polytope has no bounds")
        return V.min(0), V.max(0)

    def contains(self, x: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all(x @ self.A.T <= self.b + tol, axis=-1)

    # transforms

    def translate(self, x: Sequence[float]) -> "ConvexPolytope":
        return ConvexPolytope(self.A, self.b + self.A @ np.asarray(x, dtype=float), check_bounded=False)

    def scale(self, s: float) -> "ConvexPolytope":
        if s <= 0:
            raise GeometryError("scale factor must be positive")
        return ConvexPolytope(self.A, s * self.b, check_bounded=False)

    def intersect(self, A: np.ndarray, b: np.ndarray) -> "ConvexPolytope":
        return ConvexPolytope(np.vstack([self.A, np.atleast_2d(A)]), np.concatenate([self.b, np.atleast_1d(b)]), False)

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "vertices": self.vertices.tolist(),
            "facets": [
                {"normal": f.normal.tolist(), "offset": f.offset, "area": f.area, "vertices": f.vertices.tolist()}
                for f in self.facets
            ],
            "volume": self.volume,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConvexPolytope":
        return cls(np.array(data["A"]), np.array(data["b"]), check_bounded=False)

    @classmethod
    def from_points(cls, pts: np.ndarray) -> "ConvexPolytope":
        hull = ConvexHull(np.asarray(pts, dtype=float))
        return cls(hull.equations[:, :-1], -hull.equations[:, -1])

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float]) -> "ConvexPolytope":
        d = len(lo)
        I = np.eye(d)
        return cls(np.vstack([I, -I]), np.concatenate([np.asarray(hi, float), -np.asarray(lo, float)]))


def _merge_parallel(A: np.ndarray, b: np.ndarray, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    label = _cluster_labels(A, tol)
    keep = np.flatnonzero(label == np.arange(len(A)))
    bb = np.full(len(A), np.inf)
    np.minimum.at(bb, label, b)
    return A[keep], bb[keep]


def _unique_points(V: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    return _first_of_clusters(V, tol)


def _plane_frame(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = np.eye(3)[np.argmin(np.abs(n))]
    u = np.cross(n, t)
    u /= np.linalg.norm(u)
    return u, np.cross(n, u)


def _order_polygon(pts: np.ndarray, n: np.ndarray) -> np.ndarray:
    u, w = _plane_frame(n)
    c = pts.mean(0)
    ang = np.arctan2((pts - c) @ w, (pts - c) @ u)
    return pts[np.argsort(ang)]


def _polygon_area(cyc: np.ndarray, n: np.ndarray) -> float:
    s = np.zeros(3)
    for k in range(len(cyc)):
        s += np.cross(cyc[k], cyc[(k + 1) % len(cyc)])
    return float(abs(s @ n) / 2)


def positively_spanning(normals: np.ndarray) -> bool:
    """Whether the cone generated by ``normals`` is all of R^d (the Wulff body is then bounded)."""
    normals = np.asarray(normals, dtype=float)
    d = normals.shape[1]
    if np.linalg.matrix_rank(normals) < d:
        return False
    # 0 must be a strictly positive combination: sum l_i n_i = 0, l_i >= 1
    res = linprog(
        np.zeros(len(normals)), A_eq=normals.T, b_eq=np.zeros(d), bounds=[(1, None)] * len(normals), method="highs"
    )
    return res.status == 0


def wulff_shape(tau: SupportFunction, normals: np.ndarray | None = None) -> ConvexPolytope:
    """``{x : (x, n) <= tau(n), n in normals}``."""
    if normals is None:
        if tau.family is None:
            raise GeometryError("a normal family is required for a non-polyhedral surface tension")
        normals = tau.family
    normals = _unit(normals)
    pairs = cKDTree(normals).query_pairs(1e-7, output_type="ndarray")
    if any(np.linalg.norm(normals[i] - normals[j]) > 0 for i, j in pairs):
        raise GeometryError("normal family contains near-parallel but distinct directions")
    values = tau(normals)
    if np.any(values <= 0):
        raise GeometryError("surface tension must be positive on the family")
    return ConvexPolytope(normals, values)


REGIMES = ("complete-drying", "partial", "complete-wetting")


@dataclass
class WinterbottomShape:
    polytope: ConvexPolytope
    wulff: ConvexPolytope
    delta: float
    tau_ed: float
    regime: str
    volume: float

    def bounds(self):
        return self.polytope.bounds()


def winterbottom_truncate(K: ConvexPolytope, delta: float, tau_ed: float, tol: float = 1e-12) -> WinterbottomShape:
    """``K`` intersected with ``{x_d >= -delta}``, tagged by wetting regime."""
    if tau_ed <= 0:
        raise GeometryError("tau(e_d) must be positive")
    if abs(delta) > tau_ed + tol:
        raise GeometryError(f"|delta|={abs(delta)} exceeds tau(e_d)={tau_ed}")
    d = K.d
    if delta >= tau_ed - tol:
        return WinterbottomShape(K, K, float(delta), float(tau_ed), "complete-drying", K.volume)
    ed = np.zeros(d)
    ed[-1] = 1.0
    P = K.intersect(-ed, delta)
    if delta <= -tau_ed + tol:
        return WinterbottomShape(P, K, float(delta), float(tau_ed), "complete-wetting", 0.0)
    return WinterbottomShape(P, K, float(delta), float(tau_ed), "partial", P.volume)


def scale_to_volume(shape: WinterbottomShape, v: float) -> ConvexPolytope:
    """``(v / lambda)^(1/d) (delta e_d + K_trunc)``, resting on the wall in the partial regime."""
    if shape.regime == "complete-wetting" or shape.volume <= 0:
        raise GeometryError("complete-wetting shape has zero volume and cannot be rescaled")
    if v <= 0:
        raise GeometryError("target volume must be positive")
    d = shape.polytope.d
    ed = np.zeros(d)
    ed[-1] = shape.delta
    s = (v / shape.volume) ** (1.0 / d)
    return shape.polytope.translate(ed).scale(s)


def wall_facets(P: ConvexPolytope, tol: float = 1e-9) -> list[bool]:
    """Which facets lie in the wall plane ``{x_d = 0}`` with outward normal ``-e_d``."""
    d = P.d
    ed = np.zeros(d)
    ed[-1] = -1.0
    return [bool(np.linalg.norm(f.normal - ed) < tol and abs(f.offset) < tol) for f in P.facets]


def functional_energy(P: ConvexPolytope, tau: SupportFunction, delta: float, tol: float = 1e-9, mode: str = "W") -> float:
    """Surface energy of a polytope above the wall: ``tau`` on free facets, ``delta`` on the wall facet.

    ``mode="W_hat"`` weights every facet, including the wall one, by the
    support function of ``tau`` intersected with ``{x_d >= -delta}``; the
    caller passes that support function as ``tau`` and ``delta`` is unused
    for weighting.
    """
    if P.is_degenerate:
        return 0.0
    lo, _ = P.bounds()
    if lo[-1] < -tol:
        raise GeometryError(f"polytope dips below the wall (min x_d = {lo[-1]:.3g})")
    e = 0.0
    for f, on_wall in zip(P.facets, wall_facets(P, tol)):
        if on_wall and mode == "W":
            e += delta * f.area
        else:
            e += tau(f.normal) * f.area
    return float(e)


def volume_via_support(P: ConvexPolytope) -> float:
    """``(1/d) sum_i h_P(n_i) |F_i|`` over facets."""
    if P.is_degenerate:
        return 0.0
    return float(sum(P.support(f.normal) * f.area for f in P.facets) / P.d)


def v_of_m(m: float, m_star: float) -> float:
    if m_star <= 0:
        raise GeometryError("m* must be positive")
    if not -m_star - 1e-12 <= m <= m_star + 1e-12:
        raise GeometryError(f"m={m} outside [-m*, m*]")
    return (m_star - m) / (2 * m_star)


UNIT_BOX_2D = (np.array([-0.5, 0.0]), np.array([0.5, 1.0]))


def unit_box(d: int) -> tuple[np.ndarray, np.ndarray]:
    return np.array([-0.5] * (d - 1) + [0.0]), np.array([0.5] * (d - 1) + [1.0])


def fits(P: ConvexPolytope, domain: tuple[np.ndarray, np.ndarray], tol: float = 1e-12) -> bool:
    """Whether some translate of ``P`` lies in the box ``domain`` (box widths dominate the extents)."""
    lo, hi = P.bounds()
    return bool(np.all(hi - lo <= (domain[1] - domain[0]) + tol))


def m_bar(
    shape: WinterbottomShape,
    m_star: float,
    domain: tuple[np.ndarray, np.ndarray] | None = None,
    volume_scale: float | None = None,
    iters: int = 80,
) -> float:
    """Smallest ``m`` in ``[-m*, m*]`` whose droplet fits in ``domain`` (by bisection).

    The droplet at ``m`` has volume ``v(m) * volume_scale``; the scale
    defaults to the domain volume.
    """
    d = shape.polytope.d
    domain = unit_box(d) if domain is None else domain
    vs = float(np.prod(domain[1] - domain[0])) if volume_scale is None else volume_scale

    def ok(m):
        v = v_of_m(m, m_star) * vs
        return True if v <= 0 else fits(scale_to_volume(shape, v), domain)

    if ok(-m_star):
        return -m_star
    lo, hi = -m_star, m_star
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def wulff_energy(P: ConvexPolytope, tau: SupportFunction) -> float:
    return float(sum(tau(f.normal) * f.area for f in P.facets))


@dataclass
class Certificates:
    support_gap: float
    energy_gap: float
    n_normals: int
    reference_normals: int
    history: list = field(default_factory=list)


def _family(d: int, m: int) -> np.ndarray:
    if d == 2:
        return circle_normals(m)
    if d == 3:
        return fibonacci_normals(m)
    raise GeometryError("polyhedral approximation is implemented for d = 2, 3")


def polyhedral_approx(
    tau: SupportFunction,
    delta: float,
    n_start: int | None = None,
    max_normals: int = 20000,
    n_directions: int = 10_000,
) -> tuple[ConvexPolytope, SupportFunction, Certificates]:
    """Polyhedral Wulff body whose support function is within ``delta`` of ``tau``.

    The normal family is refined by a factor 1.5 until (a) the maximal gap
    between the support function of the body and ``tau`` over probe
    directions, and (b) the gap between its Wulff energy and that of a body
    built on four times as many normals, are both at most ``delta``.
    """
    if delta <= 0:
        raise GeometryError("delta must be positive")
    d = tau.d
    if tau.exact_polytope is not None and tau.family is not None:
        K = wulff_shape(tau)
        return K, SupportFunction.from_polytope(K), Certificates(0.0, 0.0, len(tau.family), len(tau.family))
    probes = sphere_directions(d, n_directions)
    tp = tau(probes)
    m = n_start or (8 if d == 2 else 26)
    history = []
    while True:
        fam = _family(d, m)
        K = wulff_shape(tau, fam)
        sgap = float(np.max(np.abs(K.support(probes) - tp)))
        ref = wulff_shape(tau, _family(d, 4 * len(fam) if d == 2 else 4 * m))
        egap = abs(wulff_energy(K, tau) - wulff_energy(ref, tau))
        history.append((len(fam), sgap, egap))
        if sgap <= delta and egap <= delta:
            return K, SupportFunction.from_polytope(K), Certificates(sgap, egap, len(fam), len(ref.A), history)
        m = int(math.ceil(1.5 * m))
        if d == 2:
            m += m % 2
        if m > max_normals:
            raise NonConvergence(f"no certified approximation within {max_normals} normals (last gaps {sgap}, {egap})")


@dataclass
class CoveringBase:
    facet: int
    corner: np.ndarray
    axes: np.ndarray  # (d-1, d) in-facet orthonormal directions
    side: float
    height: float
    wall: bool

    @property
    def measure(self) -> float:
        return self.side ** (len(self.corner) - 1)


@dataclass
class Covering:
    bases: list[CoveringBase]
    h: float
    uncovered: float
    energy: float


def _facet_squares(f: Facet, h: float, d: int):
    if d == 2:
        p, q = f.vertices
        L = np.linalg.norm(q - p)
        u = (q - p) / L
        k = int(math.floor(L / h + 1e-12))
        return [(p + j * h * u, u[None, :]) for j in range(k)]
    cyc = f.vertices
    u = cyc[1] - cyc[0]
    u /= np.linalg.norm(u)
    w = np.cross(f.normal, u)
    loc = (cyc - cyc[0]) @ np.stack([u, w]).T
    lo, hi = loc.min(0), loc.max(0)
    # polygon edges as half-planes in local coordinates
    n_e = len(loc)
    edges = []
    sgn = np.sign(np.sum([loc[k, 0] * loc[(k + 1) % n_e, 1] - loc[(k + 1) % n_e, 0] * loc[k, 1] for k in range(n_e)]))
    for k in range(n_e):
        a, b = loc[k], loc[(k + 1) % n_e]
        e = b - a
        nrm = sgn * np.array([e[1], -e[0]])
        edges.append((nrm, nrm @ a))
    out = []
    ni = int(math.floor((hi[0] - lo[0]) / h + 1e-12))
    nj = int(math.floor((hi[1] - lo[1]) / h + 1e-12))
    for i in range(ni):
        for j in range(nj):
            c0 = lo + np.array([i * h, j * h])
            corners = c0 + np.array([[0, 0], [h, 0], [0, h], [h, h]])
            if all(np.all(corners @ nrm <= off + 1e-12) for nrm, off in edges):
                out.append((cyc[0] + c0[0] * u + c0[1] * w, np.stack([u, w])))
    return out


def facet_covering(
    P: ConvexPolytope, h: float, delta: float, tau: SupportFunction | None = None, wall_delta: float = 0.0,
    min_h: float = 1e-4,
) -> Covering:
    """Cover each facet by squares of side ``h`` (segments in 2D) until the uncovered area is at most ``delta``.

    Each base carries a box of height ``delta * h`` along the inner normal;
    bases on the wall facet only keep the half inside the domain. The
    covering energy weights free bases by ``tau`` and wall bases by
    ``wall_delta``.
    """
    if delta <= 0 or h <= 0:
        raise GeometryError("h and delta must be positive")
    facets = P.facets
    if not facets:
        raise GeometryError("polytope has no facets")
    d = P.d
    wall = wall_facets(P)
    first = True
    while True:
        bases = []
        for k, f in enumerate(facets):
            for corner, axes in _facet_squares(f, h, d):
                bases.append(CoveringBase(k, corner, axes, h, delta * h, wall[k]))
        if first and not bases:
            raise GeometryError(f"h={h} is too large for every facet")
        first = False
        covered = sum(b.measure for b in bases)
        total = sum(f.area for f in facets)
        uncovered = total - covered
        if uncovered <= delta + 1e-12:
            break
        h /= 2
        if h < min_h:
            raise NonConvergence("covering did not reach the requested accuracy")
    energy = 0.0
    if tau is not None:
        for b in bases:
            energy += (wall_delta if b.wall else tau(facets[b.facet].normal)) * b.measure
    return Covering(bases, h, max(uncovered, 0.0), energy)


def rasterize(P: ConvexPolytope, partition, tol: float = 1e-12) -> np.ndarray:
    """``+1`` on blocks whose centre lies in ``P`` (ties inside), ``-1`` elsewhere."""
    centers = partition.centers()
    if P.is_empty:
        return -np.ones(partition.shape, dtype=np.int8)
    inside = P.contains(centers.reshape(-1, P.d), tol).reshape(partition.shape)
    return np.where(inside, 1, -1).astype(np.int8)


def random_hull(rng: np.random.Generator, d: int, n_points: int = 12, scale: float = 1.0) -> ConvexPolytope:
    """Convex hull of Gaussian points (a random polytope for identity checks)."""
    while True:
        pts = rng.normal(size=(n_points, d)) * scale
        try:
            return ConvexPolytope.from_points(pts)
        except (QhullError, GeometryError):
            continue


def write_shape_json(path: str | Path, P: ConvexPolytope, extra: dict | None = None) -> None:
    data = P.to_dict()
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, sort_keys=True, indent=1))


def read_shape_json(path: str | Path) -> ConvexPolytope:
    return ConvexPolytope.from_dict(json.loads(Path(path).read_text()))
