"""Mesoscopic coarse graining of half-space spin and bond configurations.

The box ``{-N < i_k <= N, 0 < i_d <= N}`` is scaled by ``1/N`` onto the
continuum domain ``D = [-1, 1]^{d-1} x [0, 1]``: site ``i`` owns the cell
``(i - 1, i] / N``. A block of side ``K`` becomes a cell of side ``K / N`` and
the blocks tile ``D``. L1 norms on ``D`` are normalised by ``|D|``, so
integrals are block averages.

Good blocks are decided on the ``2K`` window centred on each block (clipped
to the box) using only bonds with both endpoints in the window.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numba import njit
from scipy import ndimage

from .lattice import BondGraph, LatticeError

DEFAULT_ALPHA = 0.5
DEFAULT_ZETA = 0.1


def default_nu(d: int) -> float:
    return 1.0 / (2 * d)


class PartitionMismatch(ValueError):
    pass


class InconsistentLabels(RuntimeError):
    """A crossing cluster carries both spin values."""


def _is_pow2(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


@dataclass(frozen=True)
class MesoPartition:
    N: int
    K: int
    d: int = 2

    def __post_init__(self):
        if not _is_pow2(self.N) or not _is_pow2(self.K):
            raise LatticeError(f"N={self.N} and K={self.K} must be powers of two")
        if self.K > self.N:
            raise LatticeError(f"block side K={self.K} exceeds N={self.N}")

    @property
    def box_shape(self) -> tuple[int, ...]:
        return (2 * self.N,) * (self.d - 1) + (self.N,)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(s // self.K for s in self.box_shape)

    @property
    def n_blocks(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell(self) -> float:
        """Side of a rescaled block, ``K / N``."""
        return self.K / self.N

    @property
    def domain(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([-1.0] * (self.d - 1) + [0.0])
        hi = np.ones(self.d)
        return lo, hi

    @property
    def domain_volume(self) -> float:
        return float(2 ** (self.d - 1))

    def centers(self) -> np.ndarray:
        """Continuum block centres, array of shape ``shape + (d,)``."""
        lo, _ = self.domain
        idx = np.indices(self.shape).transpose(*range(1, self.d + 1), 0)
        return lo + (idx + 0.5) * self.cell

    def block_slices(self, b: Sequence[int]) -> tuple[slice, ...]:
        return tuple(slice(k * self.K, (k + 1) * self.K) for k in b)

    def window(self, b: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Array-index range ``[lo, hi)`` of the ``2K`` window of block ``b``, clipped to the box."""
        b = np.asarray(b)
        lo = np.maximum(b * self.K - self.K // 2, 0)
        hi = np.minimum((b + 1) * self.K + self.K // 2, np.asarray(self.box_shape))
        return lo, hi

    def check_scale(self, nu: float | None = None) -> None:
        """Require ``K <= N^nu``."""
        nu = default_nu(self.d) if nu is None else nu
        if self.K > self.N**nu + 1e-12:
            raise LatticeError(f"K={self.K} exceeds N^nu={self.N ** nu:.3g}")


@dataclass
class BlockLabelField:
    partition: MesoPartition
    profile: np.ndarray
    fk: np.ndarray | None = None
    u: np.ndarray | None = None
    crossing_density: np.ndarray | None = None
    alpha: float = DEFAULT_ALPHA
    zeta: float = DEFAULT_ZETA
    m_star: float | None = None
    meta: dict = field(default_factory=dict)


def local_profile(sigma: np.ndarray, partition: MesoPartition) -> np.ndarray:
    """Block means of ``sigma`` over the partition; shape ``partition.shape``."""
    s = np.asarray(sigma, dtype=float)
    if s.size != int(np.prod(partition.box_shape)):
        raise PartitionMismatch(f"spin field of size {s.size} does not match box {partition.box_shape}")
    s = s.reshape(partition.box_shape)
    K = partition.K
    split = []
    for n in partition.shape:
        split += [n, K]
    return s.reshape(split).mean(axis=tuple(range(1, 2 * partition.d, 2)))


@njit(cache=True)
def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@njit(cache=True)
def _window_kernel(
    win_sites, win_face, win_core, start, indptr, nbr, eid, omega, sigma, acoords, loc, full_mask
):
    """Per-window cluster analysis.

    Returns, per window: number of crossing clusters, core count of the
    crossing cluster, largest L1 diameter among the other clusters, crossing
    cluster colour (0 if mixed or absent).
    """
    nw = start.shape[0] - 1
    d = acoords.shape[1]
    n_cross = np.zeros(nw, dtype=np.int64)
    core_cnt = np.zeros(nw, dtype=np.int64)
    other_diam = np.zeros(nw, dtype=np.int64)
    colour = np.zeros(nw, dtype=np.int64)
    for w in range(nw):
        a0 = start[w]
        m = start[w + 1] - a0
        for t in range(m):
            loc[win_sites[a0 + t]] = t
        parent = np.arange(m)
        size = np.ones(m, dtype=np.int64)
        for t in range(m):
            i = win_sites[a0 + t]
            for q in range(indptr[i], indptr[i + 1]):
                j = nbr[q]
                if j > i and loc[j] >= 0 and omega[eid[q]]:
                    rx = _find(parent, t)
                    ry = _find(parent, loc[j])
                    if rx != ry:
                        if size[rx] < size[ry]:
                            rx, ry = ry, rx
                        parent[ry] = rx
                        size[rx] += size[ry]
        faces = np.zeros(m, dtype=np.int64)
        cores = np.zeros(m, dtype=np.int64)
        bmin = np.full((m, d), 1 << 30, dtype=np.int64)
        bmax = np.full((m, d), -(1 << 30), dtype=np.int64)
        plus = np.zeros(m, dtype=np.int64)
        minus = np.zeros(m, dtype=np.int64)
        for t in range(m):
            r = _find(parent, t)
            i = win_sites[a0 + t]
            faces[r] |= win_face[a0 + t]
            if win_core[a0 + t]:
                cores[r] += 1
            for k in range(d):
                c = acoords[i, k]
                if c < bmin[r, k]:
                    bmin[r, k] = c
                if c > bmax[r, k]:
                    bmax[r, k] = c
            if sigma[i] > 0:
                plus[r] += 1
            else:
                minus[r] += 1
        cross = -1
        for t in range(m):
            if parent[t] == t and faces[t] == full_mask:
                n_cross[w] += 1
                cross = t
        dm = 0
        for t in range(m):
            if parent[t] == t and t != cross:
                dd = 0
                for k in range(d):
                    dd += bmax[t, k] - bmin[t, k]
                if dd > dm:
                    dm = dd
        other_diam[w] = dm
        if n_cross[w] == 1:
            core_cnt[w] = cores[cross]
            if minus[cross] == 0:
                colour[w] = 1
            elif plus[cross] == 0:
                colour[w] = -1
        for t in range(m):
            loc[win_sites[a0 + t]] = -1
    return n_cross, core_cnt, other_diam, colour


@dataclass(frozen=True)
class WindowData:
    sites: np.ndarray
    face: np.ndarray
    core: np.ndarray
    start: np.ndarray
    full_mask: int


def window_data(partition: MesoPartition, face_width: int) -> WindowData:
    """Flattened window site lists with face bitmasks and block-core flags."""
    shape = partition.box_shape
    d = partition.d
    sites, faces, cores, start = [], [], [], [0]
    for b in itertools.product(*(range(n) for n in partition.shape)):
        lo, hi = partition.window(b)
        grids = np.indices(tuple(hi - lo)).reshape(d, -1).T + lo
        idx = np.ravel_multi_index(tuple(grids.T), shape)
        mask = np.zeros(len(grids), dtype=np.int64)
        for k in range(d):
            mask |= (grids[:, k] < lo[k] + face_width).astype(np.int64) << (2 * k)
            mask |= (grids[:, k] >= hi[k] - face_width).astype(np.int64) << (2 * k + 1)
        blo = np.asarray(b) * partition.K
        core = np.all((grids >= blo) & (grids < blo + partition.K), axis=1)
        sites.append(idx)
        faces.append(mask)
        cores.append(core)
        start.append(start[-1] + len(idx))
    return WindowData(
        np.concatenate(sites).astype(np.int64),
        np.concatenate(faces),
        np.concatenate(cores),
        np.asarray(start, dtype=np.int64),
        (1 << (2 * d)) - 1,
    )


def _array_coords(graph: BondGraph) -> np.ndarray:
    if graph.box is None:
        raise PartitionMismatch("phase labels need a graph built on a half-space box")
    return (graph.coords - graph.box.lower).astype(np.int64)


def fk_block_data(omega: np.ndarray, sigma: np.ndarray, graph: BondGraph, partition: MesoPartition, face_width=None):
    """Raw per-window statistics: crossing count, core count, other-diameter, crossing colour."""
    if graph.box is None or graph.box.shape != partition.box_shape:
        raise PartitionMismatch("graph box does not match the partition")
    fw = graph.face_width if face_width is None else face_width
    wd = window_data(partition, fw)
    indptr, nbr, _, eid = graph.adjacency
    loc = -np.ones(graph.n_sites, dtype=np.int64)
    om = np.asarray(omega, dtype=np.uint8)[: graph.n_interior]
    out = _window_kernel(
        wd.sites, wd.face, wd.core, wd.start, indptr, nbr, eid, om,
        np.asarray(sigma, dtype=np.int64).reshape(-1), _array_coords(graph), loc, wd.full_mask,
    )
    return tuple(x.reshape(partition.shape) for x in out)


def good_block_test(
    n_cross: int, core_count: int, other_diam: int, K: int, alpha: float, zeta: float, m_star: float, d: int,
    window_scale: int | None = None,
) -> bool:
    """The three good-block conditions on precomputed window statistics.

    The window is the ``2K`` box, so the diameter bound is ``(2K)^alpha`` and
    the density is measured in the central ``K`` block.
    """
    L = 2 * K if window_scale is None else window_scale
    if n_cross != 1:
        return False
    if other_diam > L**alpha:
        return False
    dens = core_count / K**d
    return m_star - zeta <= dens <= m_star + zeta


def good_block_from_labels(
    labels: np.ndarray,
    coords: np.ndarray,
    window_lo: Sequence[int],
    window_hi: Sequence[int],
    core_lo: Sequence[int],
    core_hi: Sequence[int],
    alpha: float,
    zeta: float,
    m_star: float,
    face_width: int = 1,
) -> bool:
    """Reference good-block test on an explicit cluster labeling of a window.

    ``labels`` are cluster ids of the window sites computed with bonds inside
    the window only; ``coords`` their lattice coordinates; ranges are
    half-open. Used as an independent check of the batched kernel.
    """
    coords = np.asarray(coords)
    lo, hi = np.asarray(window_lo), np.asarray(window_hi)
    clo, chi = np.asarray(core_lo), np.asarray(core_hi)
    d = coords.shape[1]
    L = int(np.max(hi - lo))
    K = int(np.max(chi - clo))
    crossing = []
    for c in np.unique(labels):
        pts = coords[labels == c]
        hits = all(
            np.any(pts[:, k] < lo[k] + face_width) and np.any(pts[:, k] >= hi[k] - face_width) for k in range(d)
        )
        if hits:
            crossing.append(c)
    if len(crossing) != 1:
        return False
    cstar = crossing[0]
    for c in np.unique(labels):
        if c == cstar:
            continue
        pts = coords[labels == c]
        if np.sum(pts.max(0) - pts.min(0)) > L**alpha:
            return False
    in_core = np.all((coords >= clo) & (coords < chi), axis=1)
    dens = np.sum(in_core & (labels == cstar)) / K**d
    return m_star - zeta <= dens <= m_star + zeta


def phase_labels(
    sigma: np.ndarray,
    omega: np.ndarray,
    graph: BondGraph,
    partition: MesoPartition,
    m_star: float,
    alpha: float = DEFAULT_ALPHA,
    zeta: float = DEFAULT_ZETA,
    face_width: int | None = None,
) -> BlockLabelField:
    """FK labels and phase labels of every block."""
    n_cross, core, diam, colour = fk_block_data(omega, sigma, graph, partition, face_width)
    K, d = partition.K, partition.d
    dens = core / K**d
    fk = (n_cross == 1) & (diam <= (2 * K) ** alpha) & (dens >= m_star - zeta) & (dens <= m_star + zeta)
    if np.any(fk & (colour == 0)):
        raise InconsistentLabels("crossing cluster is not monochromatic; bonds and spins are not ES-compatible")
    prof = local_profile(sigma, partition)
    u = np.where(fk & (np.abs(prof - colour * m_star) < 2 * zeta), colour, 0).astype(np.int8)
    return BlockLabelField(partition, prof, fk.astype(np.int8), u, np.where(n_cross == 1, dens, np.nan), alpha, zeta, m_star)


def labels_from_spins(
    sigma: np.ndarray,
    graph: BondGraph,
    bc,
    beta: float,
    partition: MesoPartition,
    m_star: float,
    rng: np.random.Generator,
    alpha: float = DEFAULT_ALPHA,
    zeta: float = DEFAULT_ZETA,
) -> BlockLabelField:
    """Phase labels after drawing bonds from their conditional law given the spins."""
    from .fk import sample_bonds_given_spins

    omega = sample_bonds_given_spins(sigma, graph, bc, beta, rng)
    return phase_labels(sigma, omega, graph, partition, m_star, alpha, zeta)


def l1_distance(f: np.ndarray, g: np.ndarray, partition: MesoPartition | None = None) -> float:
    """L1 distance of two block fields on ``D`` normalised to unit mass (the block mean of ``|f - g|``)."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape or (partition is not None and f.shape != partition.shape):
        raise PartitionMismatch(f"fields of shape {f.shape} and {g.shape} do not share a partition")
    return float(np.mean(np.abs(f - g)))


def zero_block_fraction(u: np.ndarray) -> float:
    return float(np.mean(np.asarray(u) == 0))


def contour_components(u: np.ndarray) -> list[np.ndarray]:
    """*-connected components of zero labels, each an array of block indices."""
    u = np.asarray(u)
    structure = np.ones((3,) * u.ndim, dtype=bool)
    lab, n = ndimage.label(u == 0, structure=structure)
    return [np.argwhere(lab == k) for k in range(1, n + 1)]


def separation_violations(u: np.ndarray) -> int:
    """Number of *-adjacent block pairs carrying labels +1 and -1."""
    u = np.asarray(u)
    count = 0
    for off in itertools.product((-1, 0, 1), repeat=u.ndim):
        if off <= (0,) * u.ndim:
            continue
        a = [slice(None)] * u.ndim
        b = [slice(None)] * u.ndim
        for k, o in enumerate(off):
            if o == 1:
                a[k], b[k] = slice(0, -1), slice(1, None)
            elif o == -1:
                a[k], b[k] = slice(1, None), slice(0, -1)
        count += int(np.sum(u[tuple(a)] * u[tuple(b)] == -1))
    return count


def coarse_graining_bound_holds(field: BlockLabelField, tol: float = 1e-12) -> bool:
    """``||M - m* u||_1 <= 2 zeta + 2 (zero-block fraction)``."""
    lhs = l1_distance(field.profile, field.m_star * field.u)
    return lhs <= 2 * field.zeta + 2 * zero_block_fraction(field.u) + tol


def shift_grid(partition: MesoPartition, lateral: bool = True, vertical: bool = False, extent: float = 2.0):
    """Shifts on the ``K / N`` grid; lateral components span ``[-extent, extent]``."""
    h = partition.cell
    n = int(round(extent / h))
    lat = [k * h for k in range(-n, n + 1)] if lateral else [0.0]
    ver = [k * h for k in range(0, int(round(1 / h)) + 1)] if vertical else [0.0]
    axes = [lat] * (partition.d - 1) + [ver]
    return [np.array(s) for s in itertools.product(*axes)]


def best_shift_l1(
    profile: np.ndarray,
    shape,
    partition: MesoPartition,
    m_star: float,
    shifts: Iterable[np.ndarray] | None = None,
    vertical: bool = False,
    phase: int = -1,
    tol: float = 1e-9,
) -> tuple[float, np.ndarray]:
    """Minimise the L1 distance of ``profile`` to ``m* (outside) / phase m* (inside shape + x)``.

    Admissible shifts keep the shifted shape inside ``D``. Ties go to the
    lexicographically smallest shift.
    """
    from .geometry import rasterize

    lo, hi = partition.domain
    if shifts is None:
        shifts = shift_grid(partition, lateral=True, vertical=vertical)
    vmin, vmax = shape.bounds()
    best, arg = np.inf, None
    for x in sorted((np.asarray(s, dtype=float) for s in shifts), key=tuple):
        if np.any(vmin + x < lo - tol) or np.any(vmax + x > hi + tol):
            continue
        ind = rasterize(shape.translate(x), partition)
        target = np.where(ind > 0, phase * m_star, m_star)
        dist = l1_distance(profile, target, partition)
        if dist < best - 1e-12:
            best, arg = dist, x
    if arg is None:
        raise ValueError("no admissible shift keeps the shape inside the domain")
    return best, arg


# export

def write_jsonl(path: str | Path, field: BlockLabelField, header: dict | None = None) -> None:
    centers = field.partition.centers()
    with open(path, "w") as f:
        if header is not None:
            f.write(json.dumps({"config": header}, sort_keys=True) + "\n")
        for b in itertools.product(*(range(n) for n in field.partition.shape)):
            rec = {
                "block": list(b),
                "center": [round(float(c), 12) for c in centers[b]],
                "u_fk": None if field.fk is None else int(field.fk[b]),
                "u": None if field.u is None else int(field.u[b]),
                "profile": float(field.profile[b]),
            }
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path: str | Path, partition: MesoPartition) -> BlockLabelField:
    prof = np.zeros(partition.shape)
    fk = np.zeros(partition.shape, dtype=np.int8)
    u = np.zeros(partition.shape, dtype=np.int8)
    for line in Path(path).read_text().splitlines():
        rec = json.loads(line)
        if "config" in rec:
            continue
        b = tuple(rec["block"])
        prof[b] = rec["profile"]
        fk[b] = rec["u_fk"] if rec["u_fk"] is not None else 0
        u[b] = rec["u"] if rec["u"] is not None else 0
    return BlockLabelField(partition, prof, fk, u)


def write_grid_csv(path: str | Path, grid: np.ndarray, partition: MesoPartition, header_lines: Sequence[str] = ()) -> None:
    """Long-format CSV: block centre coordinates then the value."""
    centers = partition.centers()
    names = [f"x{k + 1}" for k in range(partition.d)] + ["value"]
    with open(path, "w", newline="") as f:
        for h in header_lines:
            f.write(f"# {h}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(names)
        for b in itertools.product(*(range(n) for n in partition.shape)):
            w.writerow([f"{c:.12g}" for c in centers[b]] + [f"{float(grid[b]):.12g}"])


def read_grid_csv(path: str | Path, partition: MesoPartition) -> np.ndarray:
    rows = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    vals = np.array([float(r.split(",")[-1]) for r in rows[1:]])
    return vals.reshape(partition.shape)
