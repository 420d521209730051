"""FK random-cluster configurations and the Edwards-Sokal coupling.

Union-find runs over ``n + 3`` nodes: the ``n`` sites, then three root nodes
``PLUS = n``, ``MINUS = n + 1`` and ``GHOST = n + 2``. A boundary edge is
attached to the root carrying the colour of its outside spin, a ghost edge to
the ghost root. Roots have frozen colours (the ghost root takes the sign of
the layer field), so a cluster containing two roots of different colours has
zero weight. With plus outside spins and a negative field this is exactly the
non-negative-field measure conditioned on the ghost not being connected to
the outside, with the ghost cluster painted ``-1``.

Edges are kept in the graph's storage order (interior, boundary, ghost); a
bond configuration is a ``uint8`` vector over that order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numba import njit

from .lattice import BondGraph
from .spins import BoundaryCondition, _check

ENUM_MAX_EDGES = 26
ENUM_MAX_SPINS = 22


class RejectionOverflow(RuntimeError):
    """Bond resampling exceeded its cap while conditioning on the ghost event."""


class ColoringError(ValueError):
    """A cluster joins roots of different colours."""


def bond_probability(value: float, beta: float) -> float:
    """``1 - exp(-2 beta |value|)`` for a coupling or a layer-field value."""
    return float(-np.expm1(-2.0 * beta * abs(value)))


@dataclass(frozen=True)
class EdgeArrays:
    """Flat node-pair representation of a graph under a boundary condition."""

    a: np.ndarray
    b: np.ndarray
    p: np.ndarray
    root_color: np.ndarray  # colours of PLUS, MINUS, GHOST
    n_sites: int


def edge_arrays(graph: BondGraph, bc: BoundaryCondition, beta: float, ghost_sign: int | None = None) -> EdgeArrays:
    n = graph.n_sites
    gs = graph.ghost_sign if ghost_sign is None else (1 if ghost_sign >= 0 else -1)
    a = np.concatenate([graph.edge_i, graph.bnd_site, graph.ghost_site]).astype(np.int64)
    sbar = bc.outside_spins(graph.bnd_outside)
    b_bnd = np.where(sbar > 0, n, n + 1)
    b = np.concatenate([graph.edge_j, b_bnd, np.full(graph.n_ghost, n + 2)]).astype(np.int64)
    vals = np.concatenate([graph.edge_J, graph.bnd_J, np.abs(graph.ghost_field)])
    p = -np.expm1(-2.0 * beta * vals)
    if bc.kind == "free":
        p[graph.n_interior : graph.n_interior + graph.n_boundary] = 0.0
    return EdgeArrays(a, b, p, np.array([1, -1, gs], dtype=np.int64), n)


@njit(cache=True)
def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@njit(cache=True)
def _union(parent, size, x, y):
    rx = _find(parent, x)
    ry = _find(parent, y)
    if rx == ry:
        return rx
    if size[rx] < size[ry]:
        rx, ry = ry, rx
    parent[ry] = rx
    size[rx] += size[ry]
    return rx


@njit(cache=True)
def _uf_labels(n_nodes, a, b, open_):
    parent = np.arange(n_nodes)
    size = np.ones(n_nodes, dtype=np.int64)
    for e in range(a.shape[0]):
        if open_[e]:
            _union(parent, size, a[e], b[e])
    rep = np.empty(n_nodes, dtype=np.int64)
    for x in range(n_nodes):
        rep[x] = _find(parent, x)
    return rep


@njit(cache=True)
def _sample_bonds_kernel(s, a, b, p, root_color, n, u):
    out = np.zeros(a.shape[0], dtype=np.uint8)
    for e in range(a.shape[0]):
        sa = s[a[e]]
        bb = b[e]
        sb = s[bb] if bb < n else root_color[bb - n]
        if sa == sb and u[e] < p[e]:
            out[e] = 1
    return out


def sample_bonds_given_spins(
    sigma: np.ndarray,
    graph: BondGraph,
    bc: BoundaryCondition,
    beta: float,
    rng: np.random.Generator,
    ghost_sign: int | None = None,
) -> np.ndarray:
    """Open each edge with its FK probability iff its endpoint spins agree."""
    s = _check(sigma, graph).astype(np.int64)
    ea = edge_arrays(graph, bc, beta, ghost_sign)
    return _sample_bonds_kernel(s, ea.a, ea.b, ea.p, ea.root_color, ea.n_sites, rng.random(len(ea.a)))


@dataclass
class ClusterLabeling:
    """Open clusters of a bond configuration.

    ``labels`` numbers the clusters that contain at least one site. Root
    colour is ``+1``/``-1`` for clusters containing a root, ``0`` otherwise.
    """

    labels: np.ndarray
    sizes: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    touches_outside: np.ndarray
    contains_ghost: np.ndarray
    root_color: np.ndarray
    conflict: np.ndarray
    ghost_outside: bool
    ghost_color: int

    @property
    def n_clusters(self) -> int:
        return len(self.sizes)

    @property
    def n_free(self) -> int:
        return int(np.sum(self.root_color == 0))

    def diameters(self) -> np.ndarray:
        """L1 diameter of each cluster's bounding box."""
        return np.sum(self.bbox_max - self.bbox_min, axis=1)


def _labeling_from_rep(rep: np.ndarray, graph: BondGraph, root_color: np.ndarray, plus_used: bool, minus_used: bool):
    n = graph.n_sites
    site_rep = rep[:n]
    uniq, labels = np.unique(site_rep, return_inverse=True)
    c = len(uniq)
    sizes = np.bincount(labels, minlength=c)
    d = graph.coords.shape[1]
    bmin = np.full((c, d), np.iinfo(np.int64).max, dtype=np.int64)
    bmax = np.full((c, d), np.iinfo(np.int64).min, dtype=np.int64)
    for k in range(d):
        np.minimum.at(bmin[:, k], labels, graph.coords[:, k])
        np.maximum.at(bmax[:, k], labels, graph.coords[:, k])
    rp, rm, rg = rep[n], rep[n + 1], rep[n + 2]
    has_plus = np.isin(uniq, [rp]) & plus_used
    has_minus = np.isin(uniq, [rm]) & minus_used
    has_ghost = uniq == rg
    g = int(root_color[2])
    colour = np.zeros(c, dtype=np.int8)
    colour[has_ghost] = g
    colour[has_plus] = 1
    colour[has_minus] = -1
    conflict = (has_plus & has_minus) | (has_ghost & has_plus & (g < 0)) | (has_ghost & has_minus & (g > 0))
    colour[conflict] = 1
    outside = has_plus | has_minus
    ghost_outside = bool((rg == rp and plus_used) or (rg == rm and minus_used))
    return ClusterLabeling(
        labels=labels.astype(np.int64),
        sizes=sizes,
        bbox_min=bmin,
        bbox_max=bmax,
        touches_outside=outside,
        contains_ghost=has_ghost,
        root_color=colour,
        conflict=conflict,
        ghost_outside=ghost_outside,
        ghost_color=int(root_color[2]),
    )


def find_clusters(
    omega: np.ndarray, graph: BondGraph, bc: BoundaryCondition, ghost_sign: int | None = None
) -> ClusterLabeling:
    """Union-find over open edges; boundary edges join the wired roots, ghost edges the ghost root."""
    omega = np.asarray(omega, dtype=np.uint8)
    if omega.shape != (graph.n_edges,):
        raise ValueError(f"bond vector must have {graph.n_edges} entries")
    ea = edge_arrays(graph, bc, 0.0, ghost_sign)
    open_ = omega.astype(np.bool_)
    if bc.kind == "free":
        open_[graph.n_interior : graph.n_interior + graph.n_boundary] = False
    rep = _uf_labels(graph.n_sites + 3, ea.a, ea.b, open_)
    bnd = ea.b[graph.n_interior : graph.n_interior + graph.n_boundary]
    plus_used = bc.kind != "free" and bool(np.any(bnd == graph.n_sites))
    minus_used = bc.kind != "free" and bool(np.any(bnd == graph.n_sites + 1))
    return _labeling_from_rep(rep, graph, ea.root_color, plus_used, minus_used)


def indicator_J_N(labels: ClusterLabeling) -> bool:
    """True iff the ghost root and the outside are in distinct clusters."""
    return not labels.ghost_outside


def color_clusters(labels: ClusterLabeling, eta_sign: int, rng: np.random.Generator) -> np.ndarray:
    """Paint rooted clusters with their root colour, the rest with fair coins.

    The ghost cluster is painted ``+1`` for ``eta_sign >= 0`` and ``-1`` otherwise.
    """
    g = 1 if eta_sign >= 0 else -1
    colour = labels.root_color.astype(np.int8).copy()
    ghost_only = labels.contains_ghost & ~labels.touches_outside
    colour[ghost_only] = g
    bad = labels.conflict.copy()
    if g != labels.ghost_color:
        # the labeling was built with the other ghost colour; recheck
        bad |= labels.contains_ghost & labels.touches_outside & (labels.root_color != g)
    if np.any(bad):
        raise ColoringError("a cluster connects roots of different colours")
    free = colour == 0
    coins = np.where(rng.random(int(free.sum())) < 0.5, 1, -1).astype(np.int8)
    colour[free] = coins
    return colour[labels.labels]


def sw_sweep(
    sigma: np.ndarray,
    graph: BondGraph,
    bc: BoundaryCondition,
    beta: float,
    eta_sign: int,
    rng: np.random.Generator,
    max_rejections: int = 10_000,
) -> np.ndarray:
    """One Swendsen-Wang update.

    For a negative field with wired plus outside spins the bonds are
    resampled until the ghost is disconnected from the outside, then
    coloured with the ghost cluster at ``-1``.
    """
    g = 1 if eta_sign >= 0 else -1
    conditioned = g < 0 and bc.kind == "plus"
    s = _check(sigma, graph).astype(np.int64)
    ea = edge_arrays(graph, bc, beta, g)
    used = _root_usage(ea)
    n = graph.n_sites
    for _ in range(max_rejections + 1):
        omega = _sample_bonds_kernel(s, ea.a, ea.b, ea.p, ea.root_color, n, rng.random(len(ea.a)))
        rep = _uf_labels(n + 3, ea.a, ea.b, omega.astype(np.bool_))
        if conditioned and used[2] and used[0] and rep[n + 2] == rep[n]:
            continue
        if _has_conflict(rep, n, ea.root_color, used):
            raise ColoringError("a cluster connects roots of different colours")
        node_col = np.where(rng.random(n + 3) < 0.5, 1, -1).astype(np.int8)
        for k in range(3):
            if used[k]:
                node_col[rep[n + k]] = ea.root_color[k]
        return node_col[rep[:n]]
    raise RejectionOverflow(f"no bond configuration in the ghost event after {max_rejections} resamples")


@njit(cache=True)
def _count_free(rep, n):
    # clusters with at least one site and no root
    roots = (rep[n], rep[n + 1], rep[n + 2])
    seen = np.zeros(rep.shape[0], dtype=np.bool_)
    c = 0
    for x in range(n):
        r = rep[x]
        if r == roots[0] or r == roots[1] or r == roots[2]:
            continue
        if not seen[r]:
            seen[r] = True
            c += 1
    return c


@njit(cache=True)
def _has_conflict(rep, n, root_color, used):
    for x in range(3):
        for y in range(x + 1, 3):
            if used[x] and used[y] and rep[n + x] == rep[n + y] and root_color[x] != root_color[y]:
                return True
    return False


def _root_usage(ea: EdgeArrays) -> np.ndarray:
    n = ea.n_sites
    live = ea.p > 0
    return np.array([np.any((ea.b == n + k) & live) for k in range(3)], dtype=np.bool_)


def fk_weight(
    omega: np.ndarray,
    graph: BondGraph,
    beta: float,
    bc: BoundaryCondition,
    ghost_sign: int | None = None,
    log: bool = False,
) -> float:
    """Unnormalized FK weight: edge factors times 2 per cluster containing no root."""
    omega = np.asarray(omega, dtype=np.uint8)
    ea = edge_arrays(graph, bc, beta, ghost_sign)
    n = ea.n_sites
    if np.any((ea.p == 0) & (omega == 1)):
        return -np.inf if log else 0.0
    rep = _uf_labels(n + 3, ea.a, ea.b, omega.astype(np.bool_))
    if _has_conflict(rep, n, ea.root_color, _root_usage(ea)):
        return -np.inf if log else 0.0
    c = _count_free(rep, n)
    with np.errstate(divide="ignore"):
        lw = np.sum(np.where(omega == 1, np.log(ea.p), np.log1p(-ea.p))) + c * np.log(2.0)
    return float(lw) if log else float(np.exp(lw))


# exact enumeration

@njit(cache=True)
def _es_marginal_kernel(n, a, b, p, root_color, used, out):
    # Kahan-compensated accumulation: up to 2^26 terms
    m = a.shape[0]
    comp = np.zeros(out.shape[0])
    zc = 0.0
    n_nodes = n + 3
    comp_mask = np.zeros(n_nodes, dtype=np.int64)
    free_masks = np.zeros(n, dtype=np.int64)
    z = 0.0
    open_ = np.zeros(m, dtype=np.bool_)
    for mask in range(1 << m):
        w = 1.0
        for e in range(m):
            if (mask >> e) & 1:
                open_[e] = True
                w *= p[e]
            else:
                open_[e] = False
                w *= 1.0 - p[e]
        if w == 0.0:
            continue
        rep = _uf_labels(n_nodes, a, b, open_)
        if _has_conflict(rep, n, root_color, used):
            continue
        comp_mask[:] = 0
        for x in range(n):
            comp_mask[rep[x]] |= 1 << x
        fixed = 0
        for k in range(3):
            if root_color[k] > 0:
                fixed |= comp_mask[rep[n + k]]
        # free components: site representatives not shared with a root
        nf = 0
        for r in range(n):
            if rep[r] == r and r != rep[n] and r != rep[n + 1] and r != rep[n + 2]:
                free_masks[nf] = comp_mask[r]
                nf += 1
        for c in range(1 << nf):
            state = fixed
            for k in range(nf):
                if (c >> k) & 1:
                    state |= free_masks[k]
            y = w - comp[state]
            t = out[state] + y
            comp[state] = (t - out[state]) - y
            out[state] = t
        y = w * (1 << nf) - zc
        t = z + y
        zc = (t - z) - y
        z = t
    return z


def es_spin_marginal(
    graph: BondGraph, bc: BoundaryCondition, beta: float, ghost_sign: int | None = None
) -> np.ndarray:
    """Exact spin law obtained by summing the FK measure against the colouring law.

    Returns a probability vector over ``2^n`` states indexed as in
    :func:`winterbottom.spins.all_states`.
    """
    if graph.n_sites > 12 or graph.n_edges > ENUM_MAX_EDGES:
        raise ValueError(f"graph too large for FK enumeration ({graph.n_sites} sites, {graph.n_edges} edges)")
    ea = edge_arrays(graph, bc, beta, ghost_sign)
    out = np.zeros(1 << graph.n_sites)
    z = _es_marginal_kernel(graph.n_sites, ea.a, ea.b, ea.p, ea.root_color, _root_usage(ea), out)
    return out / z


def fk_partition_function(graph: BondGraph, bc: BoundaryCondition, beta: float, ghost_sign: int | None = None) -> float:
    """Sum of :func:`fk_weight` over all bond configurations."""
    if graph.n_edges > ENUM_MAX_EDGES:
        raise ValueError("too many edges for enumeration")
    ea = edge_arrays(graph, bc, beta, ghost_sign)
    out = np.zeros(1 << graph.n_sites) if graph.n_sites <= 12 else np.zeros(1)
    if graph.n_sites > 12:
        raise ValueError("too many sites for enumeration")
    return float(_es_marginal_kernel(graph.n_sites, ea.a, ea.b, ea.p, ea.root_color, _root_usage(ea), out))


def enumerate_bond_configs(graph: BondGraph, beta: float, bc: BoundaryCondition, ghost_sign: int | None = None):
    """Yield ``(omega, weight, labeling)`` for every bond configuration (tiny graphs only)."""
    m = graph.n_edges
    if m > ENUM_MAX_EDGES:
        raise ValueError("too many edges for enumeration")
    for mask in range(1 << m):
        omega = ((mask >> np.arange(m)) & 1).astype(np.uint8)
        w = fk_weight(omega, graph, beta, bc, ghost_sign)
        yield omega, w, find_clusters(omega, graph, bc, ghost_sign)


@njit(cache=True)
def _sw_matrix_kernel(n, a, b, p, root_color, used, T):
    m = a.shape[0]
    n_nodes = n + 3
    comp_mask = np.zeros(n_nodes, dtype=np.int64)
    free_masks = np.zeros(n, dtype=np.int64)
    agree = np.zeros(m, dtype=np.int64)
    open_ = np.zeros(m, dtype=np.bool_)
    s = np.zeros(n_nodes, dtype=np.int64)
    for st in range(1 << n):
        for x in range(n):
            s[x] = 1 if (st >> x) & 1 else -1
        for k in range(3):
            s[n + k] = root_color[k]
        na = 0
        for e in range(m):
            if p[e] > 0.0 and s[a[e]] == s[b[e]]:
                agree[na] = e
                na += 1
        for sub in range(1 << na):
            w = 1.0
            for e in range(m):
                open_[e] = False
            for k in range(na):
                e = agree[k]
                if (sub >> k) & 1:
                    open_[e] = True
                    w *= p[e]
                else:
                    w *= 1.0 - p[e]
            if w == 0.0:
                continue
            rep = _uf_labels(n_nodes, a, b, open_)
            comp_mask[:] = 0
            for x in range(n):
                comp_mask[rep[x]] |= 1 << x
            fixed = 0
            for k in range(3):
                if root_color[k] > 0:
                    fixed |= comp_mask[rep[n + k]]
            nf = 0
            for r in range(n):
                if rep[r] == r and r != rep[n] and r != rep[n + 1] and r != rep[n + 2]:
                    free_masks[nf] = comp_mask[r]
                    nf += 1
            share = w / (1 << nf)
            for c in range(1 << nf):
                state = fixed
                for k in range(nf):
                    if (c >> k) & 1:
                        state |= free_masks[k]
                T[st, state] += share


def sw_transition_matrix(
    graph: BondGraph, bc: BoundaryCondition, beta: float, ghost_sign: int | None = None
) -> np.ndarray:
    """Exact one-step Swendsen-Wang kernel ``T[s, s']`` on ``2^n`` states."""
    if graph.n_sites > 10:
        raise ValueError("too many sites for the exact transition matrix")
    ea = edge_arrays(graph, bc, beta, ghost_sign)
    T = np.zeros((1 << graph.n_sites, 1 << graph.n_sites))
    _sw_matrix_kernel(graph.n_sites, ea.a, ea.b, ea.p, ea.root_color, _root_usage(ea), T)
    return T


# bond snapshots

def write_bonds(path: str | Path, omega: np.ndarray, graph: BondGraph, header: str) -> None:
    """Header line then ``kind a b flag`` per edge (``b`` is a comma-joined coordinate for boundary edges)."""
    lines = [header]
    for (kind, a, b, _), f in zip(graph.edge_list(), np.asarray(omega)):
        bs = ",".join(str(c) for c in b) if kind == "B" else str(b)
        lines.append(f"{kind} {a} {bs} {int(f)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_bonds(path: str | Path, graph: BondGraph) -> tuple[str, np.ndarray]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    header, body = lines[0], lines[1:]
    if len(body) != graph.n_edges:
        raise ValueError(f"{path}: expected {graph.n_edges} edges, found {len(body)}")
    omega = np.zeros(graph.n_edges, dtype=np.uint8)
    for e, (ln, (kind, a, _, _)) in enumerate(zip(body, graph.edge_list())):
        parts = ln.split()
        if parts[0] != kind or int(parts[1]) != a:
            raise ValueError(f"{path}: edge {e} does not match the graph")
        omega[e] = int(parts[3])
    return header, omega


@njit(cache=True)
def _fk_events_kernel(n, a, b, p, root_color, used, site, node, pairs):
    """FK partition function together with the weight of two connection events.

    Returns ``(Z, Z[site <-> node], Z[pair_k[0] not<-> pair_k[1]] for each k)``.
    """
    m = a.shape[0]
    n_nodes = n + 3
    open_ = np.zeros(m, dtype=np.bool_)
    z = 0.0
    zc = 0.0
    zd = np.zeros(pairs.shape[0])
    for mask in range(1 << m):
        w = 1.0
        for e in range(m):
            if (mask >> e) & 1:
                open_[e] = True
                w *= p[e]
            else:
                open_[e] = False
                w *= 1.0 - p[e]
        if w == 0.0:
            continue
        rep = _uf_labels(n_nodes, a, b, open_)
        if _has_conflict(rep, n, root_color, used):
            continue
        w *= 2.0 ** _count_free(rep, n)
        z += w
        if site >= 0 and rep[site] == rep[node]:
            zc += w
        for k in range(pairs.shape[0]):
            if rep[pairs[k, 0]] != rep[pairs[k, 1]]:
                zd[k] += w
    return z, zc, zd


def fk_event_probabilities(
    graph: BondGraph,
    bc: BoundaryCondition,
    beta: float,
    site: int = -1,
    node: str = "plus",
    pairs: tuple[tuple[str, str], ...] = (),
    ghost_sign: int | None = None,
    recolor: tuple[int, int, int] | None = None,
) -> tuple[float, np.ndarray]:
    """Exact FK probabilities of ``site <-> node`` and of each root pair being disconnected.

    Nodes are named ``plus``, ``minus`` or ``ghost``. ``recolor`` overrides the
    root colours while keeping the edge attachments, so e.g. ``(1, 1, 1)`` under
    a plus/minus boundary gives the wired measure with the outside split in two.
    """
    if graph.n_edges > ENUM_MAX_EDGES:
        raise ValueError(f"too many edges for enumeration ({graph.n_edges} > {ENUM_MAX_EDGES})")
    ea = edge_arrays(graph, bc, beta, ghost_sign)
    if recolor is not None:
        ea = replace(ea, root_color=np.asarray(recolor, dtype=ea.root_color.dtype))
    n = graph.n_sites
    idx = {"plus": n, "minus": n + 1, "ghost": n + 2}
    pr = np.array([[idx[x], idx[y]] for x, y in pairs], dtype=np.int64).reshape(-1, 2)
    z, zc, zd = _fk_events_kernel(n, ea.a, ea.b, ea.p, ea.root_color, _root_usage(ea), site, idx[node], pr)
    return zc / z, zd / z


class SWChain:
    """Swendsen-Wang chain with cached edge arrays; ``sweep`` returns the node representatives."""

    def __init__(self, graph: BondGraph, bc: BoundaryCondition, beta: float, sigma, rng: np.random.Generator,
                 ghost_sign: int | None = None):
        self.graph = graph
        self.bc = bc
        self.ea = edge_arrays(graph, bc, beta, ghost_sign)
        self.used = _root_usage(self.ea)
        self.sigma = _check(sigma, graph).astype(np.int64).copy()
        self.rng = rng
        self.omega = np.zeros(len(self.ea.a), dtype=np.uint8)
        self.rep = np.arange(graph.n_sites + 3)

    def sweep(self) -> np.ndarray:
        ea, n = self.ea, self.graph.n_sites
        self.omega = _sample_bonds_kernel(self.sigma, ea.a, ea.b, ea.p, ea.root_color, n, self.rng.random(len(ea.a)))
        self.rep = _uf_labels(n + 3, ea.a, ea.b, self.omega.astype(np.bool_))
        node_col = np.where(self.rng.random(n + 3) < 0.5, 1, -1)
        for k in range(3):
            if self.used[k]:
                node_col[self.rep[n + k]] = ea.root_color[k]
        self.sigma = node_col[self.rep[:n]]
        return self.rep

    def connected_to(self, node: int) -> np.ndarray:
        """Sites whose cluster contains root ``node`` (0 plus, 1 minus, 2 ghost) in the last sweep."""
        n = self.graph.n_sites
        if not self.used[node]:
            return np.zeros(n, dtype=bool)
        return self.rep[:n] == self.rep[n + node]
