"""Estimators of m*, the wall free energy and the surface tension, plus the droplet rate.

Exact estimates enumerate all spin (or bond) configurations of tiny systems;
Monte Carlo estimates use Swendsen-Wang chains and batch-means errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import geometry as geo
from .fk import SWChain, fk_event_probabilities
from .lattice import (
    BondGraph,
    CouplingSet,
    HalfSpaceBox,
    build_bond_graph,
    full_box_coords,
    graph_from_sites,
    whole_space,
)
from .spins import MINUS, PLUS, BoundaryCondition, external_field

ENUM_MAX_SPINS = 22


class EnumerationCap(ValueError):
    pass


class RareEvent(RuntimeError):
    """Monte Carlo indicator estimate is zero; the quantity is beyond reach at this size."""


class EmptyEvent(ValueError):
    pass


@dataclass
class Estimate:
    value: float
    stderr: float
    method: str
    size: dict
    samples: int = 0
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("standard error must be >= 0")
        if self.method == "exact-enum" and self.stderr != 0:
            raise ValueError("exact estimates carry zero error")


# exact enumeration

@njit(cache=True)
def _energies_kernel(n, ei, ej, eJ, hext, start, count):
    out = np.empty(count)
    s = np.empty(n)
    for k in range(count):
        st = start + k
        for i in range(n):
            s[i] = 1.0 if (st >> i) & 1 else -1.0
        e = 0.0
        for q in range(ei.shape[0]):
            e -= eJ[q] * s[ei[q]] * s[ej[q]]
        for i in range(n):
            e -= hext[i] * s[i]
        out[k] = e
    return out


def state_energies(graph: BondGraph, bc: BoundaryCondition) -> np.ndarray:
    """Energies of all ``2^n`` states, in the state order of :func:`winterbottom.spins.all_states`."""
    n = graph.n_sites
    if n > ENUM_MAX_SPINS:
        raise EnumerationCap(f"{n} spins exceed the enumeration cap of {ENUM_MAX_SPINS}")
    hext = external_field(graph, bc)
    return _energies_kernel(n, graph.edge_i, graph.edge_j, graph.edge_J, hext, 0, 1 << n)


def _logsumexp_sorted(x: np.ndarray) -> float:
    # sorting makes the result a function of the multiset of values only
    x = np.sort(x)[::-1]
    top = x[0]
    return float(top + np.log(np.sum(np.exp(x - top))))


def log_partition(graph: BondGraph, bc: BoundaryCondition, beta: float) -> float:
    return _logsumexp_sorted(-beta * state_energies(graph, bc))


def gibbs_law(graph: BondGraph, bc: BoundaryCondition, beta: float) -> np.ndarray:
    lw = -beta * state_energies(graph, bc)
    lw -= lw.max()
    w = np.exp(lw)
    return w / math.fsum(w)


def _bits(n: int) -> np.ndarray:
    k = np.arange(1 << n)[:, None]
    return ((k >> np.arange(n)) & 1).astype(np.int8)


def spin_expectation(graph: BondGraph, bc: BoundaryCondition, beta: float, site: int) -> float:
    p = gibbs_law(graph, bc, beta)
    s = 2.0 * ((np.arange(len(p)) >> site) & 1) - 1.0
    return float(np.dot(p, s))


def bulk_box_graph(J: CouplingSet, N: int) -> tuple[BondGraph, int]:
    """Graph of ``{|i_k| <= N}`` in ``Z^d`` and the index of the origin."""
    coords = full_box_coords(N, J.d)
    g = graph_from_sites(coords, J, whole_space, (), layer0=10**9)
    origin = int(np.flatnonzero(np.all(coords == 0, axis=1))[0])
    return g, origin


def _batch_stats(x: np.ndarray, n_batches: int = 20) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    m = len(x) // n_batches
    if m == 0:
        return float(np.mean(x)), float(np.std(x) / max(len(x), 1) ** 0.5)
    b = x[: m * n_batches].reshape(n_batches, m).mean(1)
    return float(np.mean(x)), float(np.std(b, ddof=1) / n_batches**0.5)


def estimate_m_star(
    beta: float,
    J: CouplingSet,
    N: int,
    method: str = "exact",
    route: str = "spin",
    sweeps: int = 2000,
    therm: int = 200,
    seed: int = 0,
    core: int | None = None,
) -> Estimate:
    """Magnetization at the centre of ``{|i| <= N}`` under plus (wired) boundary conditions.

    ``route="spin"`` uses the spin average, ``route="fk"`` the probability
    that the origin is connected to the wired boundary. In MC mode both are
    averaged over the central box of half-side ``core`` (default ``N // 4``).
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    g, origin = bulk_box_graph(J, N)
    size = {"d": J.d, "N": N}
    if method == "exact":
        if route == "spin":
            if g.n_sites > ENUM_MAX_SPINS:
                raise EnumerationCap(f"{g.n_sites} spins exceed the enumeration cap")
            v = spin_expectation(g, PLUS, beta, origin)
        elif route == "fk":
            v, _ = fk_event_probabilities(g, PLUS, beta, site=origin, node="plus")
        else:
            raise ValueError(f"unknown route {route!r}")
        return Estimate(float(v), 0.0, "exact-enum", size, extra={"route": route})
    if method != "mc":
        raise ValueError(f"unknown method {method!r}")
    rng = np.random.default_rng(seed)
    chain = SWChain(g, PLUS, beta, np.ones(g.n_sites, dtype=np.int8), rng)
    c = N // 4 if core is None else core
    mask = np.all(np.abs(g.coords) <= c, axis=1)
    for _ in range(therm):
        chain.sweep()
    obs = np.empty(sweeps)
    for t in range(sweeps):
        chain.sweep()
        if route == "spin":
            obs[t] = chain.sigma[mask].mean()
        else:
            obs[t] = chain.connected_to(0)[mask].mean()
    v, se = _batch_stats(obs)
    return Estimate(v, se, "mc-indicator" if route == "fk" else "mc-spin", size, sweeps, seed, {"route": route, "core": c})


def _delta_norm(box: HalfSpaceBox) -> float:
    return float((2 * box.N) ** (box.d - 1))


def estimate_delta(
    beta: float,
    eta,
    N: int,
    method: str = "exact",
    J: CouplingSet | None = None,
    d: int = 2,
    relax_eps: float = 0.25,
    route: str = "spin",
    sweeps: int = 10_000,
    therm: int = 500,
    seed: int = 0,
    boundary: str = "wired",
) -> Estimate:
    """Wall free energy of the box ``Lambda_N``.

    Exact: ``(2N)^-(d-1) log(Z^+ / Z^-)`` by spin enumeration, or through
    the probability that the ghost is disconnected from the outside
    (``route="fk"``). MC: ``-(2N)^-(d-1) log P(ghost not<-> layer [eps N])``
    under the FK measure with field ``|eta|`` and wired or free boundary; the
    sign of ``eta`` is applied afterwards.
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    J = CouplingSet.nearest_neighbor(d) if J is None else J
    box = HalfSpaceBox(N, J.d, len(eta))
    if np.any(eta > 0) and np.any(eta < 0):
        raise ValueError("field components must share one sign")
    sign = -1.0 if np.any(eta < 0) else 1.0
    size = {"d": J.d, "N": N, "r": len(eta)}
    norm = _delta_norm(box)
    if method == "exact":
        if route == "spin":
            g = build_bond_graph(box, J, eta)
            v = (log_partition(g, PLUS, beta) - log_partition(g, MINUS, beta)) / norm
        elif route == "fk":
            g = build_bond_graph(box, J, np.abs(eta))
            _, (pj,) = fk_event_probabilities(g, PLUS, beta, pairs=(("ghost", "plus"),))
            v = -sign * math.log(pj) / norm
        else:
            raise ValueError(f"unknown route {route!r}")
        return Estimate(float(v), 0.0, "exact-enum", size, extra={"route": route})
    if method != "mc":
        raise ValueError(f"unknown method {method!r}")
    g = build_bond_graph(box, J, np.abs(eta))
    bc = PLUS if boundary == "wired" else BoundaryCondition("free")
    layer = max(1, int(math.floor(relax_eps * N)))
    in_layer = g.coords[:, -1] == layer
    rng = np.random.default_rng(seed)
    chain = SWChain(g, bc, beta, np.ones(g.n_sites, dtype=np.int8), rng, ghost_sign=1)
    for _ in range(therm):
        chain.sweep()
    hits = np.empty(sweeps)
    for t in range(sweeps):
        chain.sweep()
        hits[t] = 0.0 if np.any(chain.connected_to(2)[in_layer]) else 1.0
    p, se = _batch_stats(hits)
    if p <= 0:
        raise RareEvent(f"ghost-layer disconnection never observed in {sweeps} sweeps (rare-event regime)")
    v = -sign * math.log(p) / norm
    return Estimate(
        v, se / p / norm, "mc-indicator", size, sweeps, seed, {"layer": layer, "boundary": boundary, "p": p}
    )


def parallelepiped_coords(n_vec, L: float, M: float) -> np.ndarray:
    """Lattice points with ``|x_k| <= L/2`` (k < d) and ``|(n, x)| <= M/2``."""
    n = np.asarray(n_vec, dtype=float)
    n = n / np.linalg.norm(n)
    d = len(n)
    if n[-1] <= 0:
        raise ValueError("normal must have a positive last component")
    half = int(math.floor(L / 2 + 1e-12))
    lat = np.indices((2 * half + 1,) * (d - 1)).reshape(d - 1, -1).T - half
    pts = []
    for x in lat:
        s = float(n[:-1] @ x)
        lo = math.ceil((-M / 2 - s) / n[-1] - 1e-12)
        hi = math.floor((M / 2 - s) / n[-1] + 1e-12)
        for z in range(lo, hi + 1):
            pts.append(list(x) + [z])
    return np.array(pts, dtype=np.int64)


def tension_graph(J: CouplingSet, n_vec, L: float, M: float) -> BondGraph:
    return graph_from_sites(parallelepiped_coords(n_vec, L, M), J, whole_space, (), layer0=10**9)


def estimate_surface_tension(
    beta: float,
    n_vec,
    L: float,
    M: float,
    method: str = "exact",
    J: CouplingSet | None = None,
    relax_eps: float = 0.25,
    route: str = "spin",
    sweeps: int = 10_000,
    therm: int = 500,
    seed: int = 0,
    boundary: str = "wired",
) -> Estimate:
    """Finite-size surface tension ``-((n, e_d) / L^(d-1)) log(Z^pm / Z^+)``.

    MC mode samples the FK measure on the ``L x L`` parallelepiped and
    estimates the probability that the two faces of the central slab of
    height ``eps L`` are not joined by open paths inside the slab.
    """
    n = np.asarray(n_vec, dtype=float)
    n = n / np.linalg.norm(n)
    d = len(n)
    J = CouplingSet.nearest_neighbor(d) if J is None else J
    if n[-1] < 1 / math.sqrt(d) - 1e-12:
        raise ValueError("normal must satisfy (n, e_d) >= 1/sqrt(d)")
    size = {"d": d, "L": L, "M": M, "n": n.tolist()}
    pref = n[-1] / L ** (d - 1)
    bc_pm = BoundaryCondition("plusminus", tuple(n))
    if method == "exact":
        g = tension_graph(J, n, L, M)
        if route == "spin":
            v = -pref * (log_partition(g, bc_pm, beta) - log_partition(g, PLUS, beta))
        elif route == "fk":
            # Z^pm / Z^+ is the wired probability that the two outside halves stay apart
            _, (pd,) = fk_event_probabilities(g, bc_pm, beta, pairs=(("plus", "minus"),), recolor=(1, 1, 1))
            v = -pref * math.log(pd)
        else:
            raise ValueError(f"unknown route {route!r}")
        return Estimate(float(v), 0.0, "exact-enum", size, extra={"route": route, "sites": g.n_sites})
    if method != "mc":
        raise ValueError(f"unknown method {method!r}")
    g = tension_graph(J, n, L, L)
    bc = PLUS if boundary == "wired" else BoundaryCondition("free")
    proj = g.coords @ n
    h = relax_eps * L / 2
    slab = np.abs(proj) <= h
    # faces: sites just outside the slab with a neighbour inside it
    indptr, nbr, _, eid = g.adjacency
    near = np.zeros(g.n_sites, dtype=bool)
    for i in np.flatnonzero(slab):
        near[nbr[indptr[i] : indptr[i + 1]]] = True
    top = near & ~slab & (proj > 0)
    bot = near & ~slab & (proj < 0)
    region = slab | top | bot
    keep = region[g.edge_i] & region[g.edge_j]
    rng = np.random.default_rng(seed)
    chain = SWChain(g, bc, beta, np.ones(g.n_sites, dtype=np.int8), rng)
    from .fk import _uf_labels

    ea, eb = g.edge_i[keep], g.edge_j[keep]
    for _ in range(therm):
        chain.sweep()
    hits = np.empty(sweeps)
    for t in range(sweeps):
        chain.sweep()
        om = chain.omega[: g.n_interior][keep].astype(np.bool_)
        rep = _uf_labels(g.n_sites, ea, eb, om)
        hits[t] = 0.0 if np.intersect1d(rep[top], rep[bot]).size else 1.0
    p, se = _batch_stats(hits)
    if p <= 0:
        raise RareEvent("slab disconnection never observed (rare-event regime)")
    return Estimate(-pref * math.log(p), pref * se / p, "mc-indicator", size, sweeps, seed, {"boundary": boundary, "p": p})


def predict_rate(
    m: float,
    m_star: float,
    tau: geo.SupportFunction,
    delta: float,
    normals: np.ndarray | None = None,
    volume_scale: float = 1.0,
) -> float:
    """``W(K(v(m)))``: surface energy of the Winterbottom droplet of volume ``v(m) * volume_scale``."""
    d = tau.d
    ed = np.zeros(d)
    ed[-1] = 1.0
    t_ed = tau(ed)
    if delta <= -t_ed + 1e-12:
        raise geo.GeometryError("complete wetting: the rate functional is not defined by a droplet")
    K = geo.wulff_shape(tau, normals)
    W = geo.winterbottom_truncate(K, delta, t_ed)
    v = geo.v_of_m(m, m_star) * volume_scale
    if v <= 0:
        return 0.0
    P = geo.scale_to_volume(W, v)
    return geo.functional_energy(P, tau, delta)


def rate_probe(graph: BondGraph, beta: float, m: float, bc: BoundaryCondition = PLUS, N: int | None = None) -> Estimate:
    """``N^-(d-1) log mu(M <= m)`` by enumeration (``N`` defaults to the linear size of the graph)."""
    if m < -1:
        raise EmptyEvent(f"M <= {m} is empty")
    n = graph.n_sites
    e = state_energies(graph, bc)
    mags = 2.0 * _bits(n).sum(1) - n
    lw = -beta * e
    logZ = _logsumexp_sorted(lw)
    sel = mags <= m * n + 1e-9
    if not np.any(sel):
        raise EmptyEvent(f"M <= {m} is empty")
    logp = _logsumexp_sorted(lw[sel]) - logZ
    d = graph.d
    if N is None:
        N = int(round(n ** (1.0 / d)))
    return Estimate(logp / N ** (d - 1), 0.0, "exact-enum", {"sites": n, "N": N}, extra={"log_prob": logp})


def onsager_m_star(beta: float) -> float:
    """Spontaneous magnetization of the 2D nearest-neighbour model (reference only)."""
    s = math.sinh(2 * beta)
    return (1 - s**-4) ** 0.125 if s > 1 else 0.0


def onsager_tau_axis(beta: float) -> float:
    """Dimensionless surface tension of the 2D nearest-neighbour model along an axis (reference only)."""
    return max(0.0, 2 * beta + math.log(math.tanh(beta)))
