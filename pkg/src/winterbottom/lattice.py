"""Lattice geometry: coupling tables, half-space boxes and bond graphs.

Sites of a box are stored in row-major order over ``(i_1, ..., i_d)`` with the
vertical coordinate ``i_d`` running fastest, so a spin vector reshapes to an
array of shape ``(2N, ..., 2N, N)``.

Every graph carries three kinds of edges, always in this order:

* interior edges between two sites of the region,
* boundary edges from a region site to a site outside the region (the outside
  site is not stored as a vertex, only its coordinates are kept so that the
  boundary spin can be resolved once a boundary condition is chosen),
* ghost edges from a site in the first ``r`` layers to the ghost vertex, which
  carries the layer field ``eta_k``.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

Offset = tuple[int, ...]


class LatticeError(ValueError):
    """Invalid lattice, coupling or box parameters."""


@dataclass(frozen=True)
class CouplingSet:
    """Translation-invariant ferromagnetic pair coupling ``J_k``.

    ``table`` maps lattice offsets to coupling values and must contain both
    ``k`` and ``-k`` with equal values. Offsets absent from the table have
    zero coupling.
    """

    d: int
    table: Mapping[Offset, float]

    def __post_init__(self):
        if self.d < 2:
            raise LatticeError(f"dimension must be >= 2, got {self.d}")
        clean: dict[Offset, float] = {}
        for k, v in self.table.items():
            k = tuple(int(x) for x in k)
            if len(k) != self.d:
                raise LatticeError(f"offset {k} has wrong dimension (d={self.d})")
            if not np.isfinite(v) or v < 0:
                raise LatticeError(f"coupling J{k} = {v} must be finite and >= 0")
            if all(x == 0 for x in k):
                if v != 0:
                    raise LatticeError("self-coupling J_0 is not allowed")
                continue
            if v > 0:
                clean[k] = float(v)
        for k, v in clean.items():
            mk = tuple(-x for x in k)
            if clean.get(mk) != v:
                raise LatticeError(f"coupling is not symmetric: J{k}={v}, J{mk}={clean.get(mk, 0.0)}")
        if not clean:
            raise LatticeError("coupling table has no positive entry")
        object.__setattr__(self, "table", clean)

    @classmethod
    def nearest_neighbor(cls, d: int, J: float = 1.0) -> "CouplingSet":
        table = {}
        for axis in range(d):
            for s in (1, -1):
                k = [0] * d
                k[axis] = s
                table[tuple(k)] = J
        return cls(d, table)

    @classmethod
    def from_offsets(cls, d: int, entries: Mapping[Offset, float], symmetrize: bool = True) -> "CouplingSet":
        """Build from entries, adding the mirrored offset ``-k`` when it is missing."""
        table = dict(entries)
        if symmetrize:
            for k, v in list(entries.items()):
                mk = tuple(-x for x in k)
                if mk not in entries:
                    table[mk] = v
        return cls(d, table)

    @classmethod
    def from_file(cls, path: str | Path, symmetrize: bool = True) -> "CouplingSet":
        """Read lines ``k_1 ... k_d value``; ``#`` starts a comment."""
        entries: dict[Offset, float] = {}
        d = None
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if d is None:
                d = len(parts) - 1
            if len(parts) != d + 1:
                raise LatticeError(f"{path}:{lineno}: expected {d} offsets and a value")
            k = tuple(int(p) for p in parts[:-1])
            if k in entries:
                raise LatticeError(f"{path}:{lineno}: duplicate offset {k}")
            entries[k] = float(parts[-1])
        if d is None:
            raise LatticeError(f"{path}: empty coupling file")
        return cls.from_offsets(d, entries, symmetrize=symmetrize)

    def to_file(self, path: str | Path) -> None:
        lines = [" ".join(str(x) for x in k) + f" {v!r}" for k, v in sorted(self.table.items())]
        Path(path).write_text("\n".join(lines) + "\n")

    @property
    def range(self) -> int:
        """Smallest R with ``J_k = 0`` whenever ``|k|_inf > R``."""
        return max(max(abs(x) for x in k) for k in self.table)

    def __call__(self, k: Sequence[int]) -> float:
        return self.table.get(tuple(int(x) for x in k), 0.0)

    def half_offsets(self) -> list[tuple[Offset, float]]:
        """One representative ``k`` per pair ``{k, -k}`` (the lexicographically positive one)."""
        return sorted((k, v) for k, v in self.table.items() if k > tuple(0 for _ in k))


def check_connected(J: CouplingSet, radius: int | None = None) -> bool:
    """Whether the offsets with ``J_k > 0`` generate ``Z^d``.

    Runs a breadth-first search from the origin on the patch
    ``|x|_inf <= radius`` (default ``2 d R``) and succeeds iff every unit
    vector is reached; the unit vectors generate ``Z^d``.
    """
    d, R = J.d, J.range
    radius = 2 * d * R if radius is None else radius
    steps = [np.array(k) for k in J.table]
    origin = (0,) * d
    seen = {origin}
    queue = deque([origin])
    targets = set()
    for axis in range(d):
        e = [0] * d
        e[axis] = 1
        targets.add(tuple(e))
    while queue and not targets <= seen:
        x = queue.popleft()
        for s in steps:
            y = tuple(int(a + b) for a, b in zip(x, s))
            if y in seen or max(abs(c) for c in y) > radius:
                continue
            seen.add(y)
            queue.append(y)
    return targets <= seen


@dataclass(frozen=True)
class HalfSpaceBox:
    """The box ``{-N < i_k <= N (k < d), 0 < i_d <= N}`` with field depth ``r``."""

    N: int
    d: int = 2
    r: int = 1

    def __post_init__(self):
        if self.N <= 0:
            raise LatticeError(f"N must be positive, got {self.N}")
        if self.r <= 0:
            raise LatticeError(f"field depth r must be positive, got {self.r}")
        if self.d < 2:
            raise LatticeError(f"dimension must be >= 2, got {self.d}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (2 * self.N,) * (self.d - 1) + (self.N,)

    @property
    def n_sites(self) -> int:
        return (2 * self.N) ** (self.d - 1) * self.N

    @property
    def lower(self) -> np.ndarray:
        """Coordinates of the site stored at array index ``(0, ..., 0)``."""
        return np.array([-self.N + 1] * (self.d - 1) + [1])

    def coords(self) -> np.ndarray:
        grids = np.indices(self.shape).reshape(self.d, -1).T
        return grids + self.lower

    def index_of(self, site: Sequence[int]) -> int:
        a = np.asarray(site) - self.lower
        return int(np.ravel_multi_index(tuple(a), self.shape))

    @property
    def is_power_of_two(self) -> bool:
        return self.N & (self.N - 1) == 0


def half_space(x: np.ndarray) -> np.ndarray:
    """Membership in the lattice half-space ``{i_d >= 1}``."""
    return x[..., -1] >= 1


def whole_space(x: np.ndarray) -> np.ndarray:
    return np.ones(x.shape[:-1], dtype=bool)


@dataclass(frozen=True, eq=False)
class BondGraph:
    """Edge set of a finite region together with its boundary and ghost bonds.

    ``ghost_field`` holds the signed layer field of each ghost edge; bond
    probabilities use its absolute value, the sign selects the ghost colour.
    """

    coupling: CouplingSet
    coords: np.ndarray
    edge_i: np.ndarray
    edge_j: np.ndarray
    edge_J: np.ndarray
    bnd_site: np.ndarray
    bnd_outside: np.ndarray
    bnd_J: np.ndarray
    ghost_site: np.ndarray
    ghost_field: np.ndarray
    shape: tuple[int, ...] | None = None
    box: HalfSpaceBox | None = None
    face_width: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.coupling.d

    @property
    def n_sites(self) -> int:
        return len(self.coords)

    @property
    def n_interior(self) -> int:
        return len(self.edge_i)

    @property
    def n_boundary(self) -> int:
        return len(self.bnd_site)

    @property
    def n_ghost(self) -> int:
        return len(self.ghost_site)

    @property
    def n_edges(self) -> int:
        return self.n_interior + self.n_boundary + self.n_ghost

    @property
    def ghost_sign(self) -> int:
        """Common sign of the layer fields (+1 when all vanish)."""
        f = self.ghost_field
        if np.all(f >= 0):
            return 1
        if np.all(f <= 0):
            return -1
        raise LatticeError("boundary field components must all have the same sign")

    @cached_property
    def adjacency(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """CSR neighbour lists over interior edges: ``(indptr, nbr, weight, edge_id)``."""
        n = self.n_sites
        m = self.n_interior
        src = np.concatenate([self.edge_i, self.edge_j])
        dst = np.concatenate([self.edge_j, self.edge_i])
        w = np.concatenate([self.edge_J, self.edge_J])
        eid = np.concatenate([np.arange(m), np.arange(m)])
        order = np.lexsort((dst, src))
        src, dst, w, eid = src[order], dst[order], w[order], eid[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        indptr = np.cumsum(indptr)
        return indptr, dst.astype(np.int64), w.astype(np.float64), eid.astype(np.int64)

    def site_field(self) -> np.ndarray:
        """Signed ghost field felt by each site (zero outside the first r layers)."""
        h = np.zeros(self.n_sites)
        np.add.at(h, self.ghost_site, self.ghost_field)
        return h

    def edge_list(self) -> list[tuple[str, int, int | tuple[int, ...], float]]:
        """All edges in storage order as ``(kind, site, other, value)`` tuples."""
        out = []
        for a, b, v in zip(self.edge_i, self.edge_j, self.edge_J):
            out.append(("I", int(a), int(b), float(v)))
        for a, x, v in zip(self.bnd_site, self.bnd_outside, self.bnd_J):
            out.append(("B", int(a), tuple(int(c) for c in x), float(v)))
        for a, v in zip(self.ghost_site, self.ghost_field):
            out.append(("G", int(a), -1, float(v)))
        return out

    def with_field(self, eta: Sequence[float]) -> "BondGraph":
        """Same graph with the layer field replaced (ghost edges keep their sites)."""
        eta = np.asarray(eta, dtype=float)
        layers = self.coords[self.ghost_site, -1] - self.meta.get("layer0", 1)
        if eta.shape != (self.meta.get("r", len(eta)),):
            raise LatticeError(f"field vector must have length {self.meta.get('r')}")
        return _replace(self, ghost_field=eta[layers])


def _replace(g: BondGraph, **kw) -> BondGraph:
    from dataclasses import replace

    return replace(g, **kw)


def graph_from_sites(
    coords: np.ndarray,
    J: CouplingSet,
    ambient: Callable[[np.ndarray], np.ndarray] = half_space,
    eta: Sequence[float] = (),
    layer0: int = 1,
    shape: tuple[int, ...] | None = None,
    box: HalfSpaceBox | None = None,
    face_width: int | None = None,
) -> BondGraph:
    """Bond graph of an arbitrary finite site set.

    ``ambient`` decides which outside sites exist (the half-space by default),
    so that boundary edges only go to sites of the ambient lattice. Ghost
    edges attach the sites with ``layer0 <= i_d < layer0 + len(eta)``, the
    site in layer ``layer0 + k`` receiving ``eta[k]``.
    """
    coords = np.asarray(coords, dtype=np.int64)
    if coords.ndim != 2 or coords.shape[1] != J.d:
        raise LatticeError(f"coords must have shape (n, {J.d})")
    index = {tuple(c): i for i, c in enumerate(coords.tolist())}
    if len(index) != len(coords):
        raise LatticeError("duplicate sites")
    if not np.all(ambient(coords)):
        raise LatticeError("region contains sites outside the ambient lattice")

    ei, ej, eJ = [], [], []
    bs, bx, bJ = [], [], []
    for i, c in enumerate(coords.tolist()):
        for k, v in J.table.items():
            y = tuple(a + b for a, b in zip(c, k))
            j = index.get(y)
            if j is not None:
                if i < j:
                    ei.append(i)
                    ej.append(j)
                    eJ.append(v)
            elif ambient(np.array(y))[()]:
                bs.append(i)
                bx.append(y)
                bJ.append(v)
    order = np.lexsort((ej, ei)) if ei else np.array([], dtype=int)
    ei = np.asarray(ei, dtype=np.int64)[order]
    ej = np.asarray(ej, dtype=np.int64)[order]
    eJ = np.asarray(eJ, dtype=np.float64)[order]

    eta = np.asarray(eta, dtype=float)
    layer = coords[:, -1] - layer0
    gs = np.nonzero((layer >= 0) & (layer < len(eta)))[0].astype(np.int64)
    gf = eta[layer[gs]] if len(eta) else np.zeros(0)

    return BondGraph(
        coupling=J,
        coords=coords,
        edge_i=ei,
        edge_j=ej,
        edge_J=eJ,
        bnd_site=np.asarray(bs, dtype=np.int64),
        bnd_outside=np.asarray(bx, dtype=np.int64).reshape(-1, J.d),
        bnd_J=np.asarray(bJ, dtype=np.float64),
        ghost_site=gs,
        ghost_field=np.asarray(gf, dtype=np.float64),
        shape=shape,
        box=box,
        face_width=J.range if face_width is None else face_width,
        meta={"r": len(eta), "layer0": layer0},
    )


def build_bond_graph(
    box: HalfSpaceBox, J: CouplingSet, eta: Sequence[float] | None = None, face_width: int | None = None
) -> BondGraph:
    """Edge set of the half-space box: interior, boundary (into the half-space) and ghost bonds.

    ``eta`` must have length ``box.r``; it defaults to zero fields.
    """
    if J.d != box.d:
        raise LatticeError(f"coupling dimension {J.d} does not match box dimension {box.d}")
    eta = np.zeros(box.r) if eta is None else np.asarray(eta, dtype=float)
    if eta.shape != (box.r,):
        raise LatticeError(f"eta must have length r={box.r}, got shape {eta.shape}")
    return graph_from_sites(box.coords(), J, half_space, eta, 1, box.shape, box, face_width)


def patch_coords(shape: Sequence[int], lower: Sequence[int] | None = None) -> np.ndarray:
    """Coordinates of a rectangular patch in storage order (last axis fastest).

    By default the patch sits in the half-space with its bottom layer at ``i_d = 1``.
    """
    shape = tuple(int(s) for s in shape)
    if lower is None:
        lower = [0] * (len(shape) - 1) + [1]
    return np.indices(shape).reshape(len(shape), -1).T + np.asarray(lower)


def full_box_coords(N: int, d: int) -> np.ndarray:
    """Sites of ``{|i_k| <= N}``, the bulk box with the origin at its centre."""
    return patch_coords((2 * N + 1,) * d, [-N] * d)


def brute_force_edge_counts(coords: np.ndarray, J: CouplingSet, ambient=half_space, r: int = 0) -> tuple[int, int, int]:
    """Independent double loop over site pairs; used to cross-check ``graph_from_sites``."""
    coords = [tuple(c) for c in np.asarray(coords).tolist()]
    sites = set(coords)
    R = J.range
    interior = 0
    for a, b in itertools.combinations(coords, 2):
        if J(np.subtract(b, a)) > 0:
            interior += 1
    boundary = 0
    for a in coords:
        for k in itertools.product(range(-R, R + 1), repeat=J.d):
            y = tuple(np.add(a, k))
            if y not in sites and J(k) > 0 and ambient(np.array(y))[()]:
                boundary += 1
    ghost = sum(1 for a in coords if 1 <= a[-1] <= r)
    return interior, boundary, ghost
