"""Spin configurations, the boundary Hamiltonian and local Markov dynamics.

All dynamics work on the static decomposition of the local field

    h_i = sum_j J_ij s_j + hext_i,

where the sum runs over interior neighbours and ``hext`` collects boundary
couplings to the frozen outside spins and the layer field. Kernels take
pre-generated random numbers so that a seeded ``numpy.random.Generator``
fully determines a trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from .lattice import BondGraph, LatticeError

DEBUG_RECOMPUTE_EVERY = 4096


@dataclass(frozen=True)
class BoundaryCondition:
    """Frozen spins outside the region.

    ``kind`` is one of ``plus``, ``minus``, ``plusminus`` or ``free``. For
    ``plusminus`` the outside spin at ``j`` is ``sign((n, j))`` with
    ``sign(0) = 1``.
    """

    kind: str = "plus"
    normal: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("plus", "minus", "plusminus", "free"):
            raise ValueError(f"unknown boundary condition {self.kind!r}")
        if self.kind == "plusminus":
            if self.normal is None:
                raise ValueError("plusminus boundary condition needs a normal")
            object.__setattr__(self, "normal", tuple(float(x) for x in self.normal))

    def outside_spins(self, x: np.ndarray) -> np.ndarray:
        """Spin values (+1, -1, or 0 for free) at outside coordinates ``x``."""
        x = np.asarray(x)
        n = x.shape[0]
        if self.kind == "plus":
            return np.ones(n, dtype=np.int8)
        if self.kind == "minus":
            return -np.ones(n, dtype=np.int8)
        if self.kind == "free":
            return np.zeros(n, dtype=np.int8)
        proj = x @ np.asarray(self.normal)
        return np.where(proj >= 0, 1, -1).astype(np.int8)

    def flipped(self) -> "BoundaryCondition":
        swap = {"plus": "minus", "minus": "plus"}
        if self.kind in swap:
            return BoundaryCondition(swap[self.kind])
        if self.kind == "plusminus":
            # -sign((n,x)) differs from sign((-n,x)) on the plane (n,x)=0
            raise ValueError("plusminus boundary condition has no exact spin-flip partner")
        return self


PLUS = BoundaryCondition("plus")
MINUS = BoundaryCondition("minus")
FREE = BoundaryCondition("free")


def _check(sigma: np.ndarray, graph: BondGraph) -> np.ndarray:
    sigma = np.asarray(sigma)
    if sigma.shape != (graph.n_sites,):
        if sigma.size == graph.n_sites and graph.shape is not None and sigma.shape == graph.shape:
            sigma = sigma.reshape(-1)
        else:
            raise LatticeError(f"spin vector of shape {sigma.shape} does not match {graph.n_sites} sites")
    return sigma


def external_field(graph: BondGraph, bc: BoundaryCondition) -> np.ndarray:
    """Static part of the local field: boundary couplings plus the layer field."""
    h = graph.site_field()
    if graph.n_boundary:
        sbar = bc.outside_spins(graph.bnd_outside).astype(float)
        np.add.at(h, graph.bnd_site, graph.bnd_J * sbar)
    return h


def local_field(sigma: np.ndarray, graph: BondGraph, bc: BoundaryCondition) -> np.ndarray:
    sigma = _check(sigma, graph).astype(float)
    h = external_field(graph, bc)
    np.add.at(h, graph.edge_i, graph.edge_J * sigma[graph.edge_j])
    np.add.at(h, graph.edge_j, graph.edge_J * sigma[graph.edge_i])
    return h


def energy(sigma: np.ndarray, graph: BondGraph, bc: BoundaryCondition) -> float:
    """Boundary Hamiltonian: pair, boundary and layer-field terms (each pair counted once)."""
    s = _check(sigma, graph).astype(float)
    e = -np.sum(graph.edge_J * s[graph.edge_i] * s[graph.edge_j])
    if graph.n_boundary:
        sbar = bc.outside_spins(graph.bnd_outside).astype(float)
        e -= np.sum(graph.bnd_J * s[graph.bnd_site] * sbar)
    e -= np.sum(graph.ghost_field * s[graph.ghost_site])
    return float(e)


def magnetization(sigma: np.ndarray) -> float:
    return float(np.mean(sigma))


def random_spins(n: int, rng: np.random.Generator, m: float | None = None) -> np.ndarray:
    """Uniform spins, or a uniformly random arrangement with ``sum = round(m n)`` (parity-adjusted)."""
    if m is None:
        return np.where(rng.random(n) < 0.5, 1, -1).astype(np.int8)
    n_plus = fixed_plus_count(n, m)
    s = -np.ones(n, dtype=np.int8)
    s[rng.permutation(n)[:n_plus]] = 1
    return s


def fixed_plus_count(n: int, m: float) -> int:
    if not -1 <= m <= 1:
        raise ValueError(f"magnetization {m} outside [-1, 1]")
    return int(round(n * (1 + m) / 2))


@njit(cache=True)
def _heat_bath_kernel(s, h, indptr, nbr, w, beta, u):
    n = s.shape[0]
    for i in range(n):
        p_plus = 1.0 / (1.0 + np.exp(-2.0 * beta * h[i]))
        new = 1 if u[i] < p_plus else -1
        if new != s[i]:
            ds = 2.0 * new
            s[i] = new
            for q in range(indptr[i], indptr[i + 1]):
                h[nbr[q]] += w[q] * ds


@njit(cache=True)
def _pair_coupling(i, j, indptr, nbr, w):
    for q in range(indptr[i], indptr[i + 1]):
        if nbr[q] == j:
            return w[q]
    return 0.0


@njit(cache=True)
def _flip(s, h, i, indptr, nbr, w):
    ds = -2.0 * s[i]
    s[i] = -s[i]
    for q in range(indptr[i], indptr[i + 1]):
        h[nbr[q]] += w[q] * ds


@njit(cache=True)
def _kawasaki_local_kernel(s, h, indptr, nbr, w, ei, ej, eJ, beta, picks, u):
    acc = 0
    for t in range(picks.shape[0]):
        e = picks[t]
        i = ei[e]
        j = ej[e]
        if s[i] == s[j]:
            continue
        dE = 2.0 * s[i] * h[i] + 2.0 * s[j] * h[j] + 4.0 * eJ[e]
        if dE <= 0.0 or u[t] < np.exp(-beta * dE):
            _flip(s, h, i, indptr, nbr, w)
            _flip(s, h, j, indptr, nbr, w)
            acc += 1
    return acc


@njit(cache=True)
def _kawasaki_nonlocal_kernel(s, h, indptr, nbr, w, plus, minus, pos, beta, a, b, u):
    acc = 0
    np_ = plus.shape[0]
    nm = minus.shape[0]
    if np_ == 0 or nm == 0:
        return 0
    for t in range(a.shape[0]):
        pa = a[t] % np_
        mb = b[t] % nm
        i = plus[pa]
        j = minus[mb]
        Jij = _pair_coupling(i, j, indptr, nbr, w)
        dE = 2.0 * h[i] - 2.0 * h[j] + 4.0 * Jij
        if dE <= 0.0 or u[t] < np.exp(-beta * dE):
            _flip(s, h, i, indptr, nbr, w)
            _flip(s, h, j, indptr, nbr, w)
            plus[pa] = j
            minus[mb] = i
            pos[i] = mb
            pos[j] = pa
            acc += 1
    return acc


def heat_bath_sweep(
    sigma: np.ndarray, graph: BondGraph, bc: BoundaryCondition, beta: float, rng: np.random.Generator
) -> np.ndarray:
    """One lexicographic heat-bath pass; returns a new spin vector."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    s = _check(sigma, graph).astype(np.int8).copy()
    h = local_field(s, graph, bc)
    indptr, nbr, w, _ = graph.adjacency
    _heat_bath_kernel(s, h, indptr, nbr, w, float(beta), rng.random(graph.n_sites))
    return s


def kawasaki_sweep(
    sigma: np.ndarray,
    graph: BondGraph,
    bc: BoundaryCondition,
    beta: float,
    rng: np.random.Generator,
    moves: str = "local",
) -> np.ndarray:
    """One Metropolis spin-exchange sweep (``n_sites`` attempts); conserves the magnetization.

    ``moves="local"`` proposes a uniformly random interior edge and exchanges
    its endpoints if they differ. ``moves="nonlocal"`` exchanges a uniformly
    random plus site with a uniformly random minus site.
    """
    chain = SpinChain(graph, bc, beta, sigma, rng)
    chain.kawasaki(1, moves=moves)
    return chain.sigma.copy()


class SpinChain:
    """A single Markov chain with an incrementally maintained local field."""

    def __init__(
        self,
        graph: BondGraph,
        bc: BoundaryCondition,
        beta: float,
        sigma: np.ndarray,
        rng: np.random.Generator,
        debug: bool = False,
    ):
        if beta < 0:
            raise ValueError("beta must be >= 0")
        self.graph = graph
        self.bc = bc
        self.beta = float(beta)
        self.sigma = _check(sigma, graph).astype(np.int8).copy()
        self.rng = rng
        self.debug = debug
        self.sweeps = 0
        self.accepted = 0
        self.hext = external_field(graph, bc)
        self.h = local_field(self.sigma, graph, bc)
        self._lists = None

    def _tick(self, n: int) -> None:
        before = self.sweeps // DEBUG_RECOMPUTE_EVERY
        self.sweeps += n
        if self.debug and self.sweeps // DEBUG_RECOMPUTE_EVERY != before:
            self.check_field()

    def check_field(self) -> None:
        ref = local_field(self.sigma, self.graph, self.bc)
        if not np.allclose(ref, self.h, atol=1e-9):
            raise AssertionError(f"local field drift {np.max(np.abs(ref - self.h)):.3e}")
        self.h = ref

    def heat_bath(self, n_sweeps: int = 1) -> None:
        indptr, nbr, w, _ = self.graph.adjacency
        for _ in range(n_sweeps):
            _heat_bath_kernel(self.sigma, self.h, indptr, nbr, w, self.beta, self.rng.random(self.graph.n_sites))
            self._tick(1)
        self._lists = None

    def _site_lists(self):
        if self._lists is None:
            plus = np.flatnonzero(self.sigma > 0).astype(np.int64)
            minus = np.flatnonzero(self.sigma < 0).astype(np.int64)
            pos = np.zeros(self.graph.n_sites, dtype=np.int64)
            pos[plus] = np.arange(len(plus))
            pos[minus] = np.arange(len(minus))
            self._lists = (plus, minus, pos)
        return self._lists

    def kawasaki(self, n_sweeps: int = 1, moves: str = "local") -> None:
        g = self.graph
        indptr, nbr, w, _ = g.adjacency
        n = g.n_sites
        for _ in range(n_sweeps):
            if moves == "local":
                if g.n_interior == 0:
                    self._tick(1)
                    continue
                picks = self.rng.integers(0, g.n_interior, size=n)
                self.accepted += _kawasaki_local_kernel(
                    self.sigma, self.h, indptr, nbr, w, g.edge_i, g.edge_j, g.edge_J, self.beta, picks, self.rng.random(n)
                )
                self._lists = None
            elif moves == "nonlocal":
                plus, minus, pos = self._site_lists()
                a = self.rng.integers(0, max(len(plus), 1), size=n)
                b = self.rng.integers(0, max(len(minus), 1), size=n)
                self.accepted += _kawasaki_nonlocal_kernel(
                    self.sigma, self.h, indptr, nbr, w, plus, minus, pos, self.beta, a, b, self.rng.random(n)
                )
            else:
                raise ValueError(f"unknown Kawasaki move set {moves!r}")
            self._tick(1)

    def swendsen_wang(self, n_sweeps: int = 1, max_rejections: int = 10_000) -> None:
        from .fk import sw_sweep

        for _ in range(n_sweeps):
            self.sigma = sw_sweep(
                self.sigma, self.graph, self.bc, self.beta, self.graph.ghost_sign, self.rng, max_rejections
            )
            self._tick(1)
        self.h = local_field(self.sigma, self.graph, self.bc)
        self._lists = None

    @property
    def magnetization(self) -> float:
        return magnetization(self.sigma)

    @property
    def energy(self) -> float:
        return energy(self.sigma, self.graph, self.bc)


# snapshot I/O

def write_snapshot(
    path: str | Path,
    sigma: np.ndarray,
    d: int,
    N: int,
    r: int,
    seed: int,
    sweep: int,
    binary: bool = False,
    comments: Iterable[str] = (),
) -> None:
    """Header ``d N r seed sweep`` then one spin per site (text) or packed bits."""
    sigma = np.asarray(sigma).reshape(-1)
    head = "".join(f"# {c}\n" for c in comments) + f"{d} {N} {r} {seed} {sweep}\n"
    if binary:
        with open(path, "wb") as f:
            f.write(head.encode())
            f.write(np.packbits(sigma > 0).tobytes())
    else:
        body = "\n".join("1" if v > 0 else "-1" for v in sigma)
        Path(path).write_text(head + body + "\n")


@dataclass
class Snapshot:
    sigma: np.ndarray
    d: int
    N: int
    r: int
    seed: int
    sweep: int
    comments: list[str]

    @property
    def n_sites(self) -> int:
        return (2 * self.N) ** (self.d - 1) * self.N


def read_snapshot(path: str | Path, binary: bool = False) -> Snapshot:
    raw = Path(path).read_bytes()
    comments = []
    pos = 0
    while True:
        end = raw.index(b"\n", pos)
        line = raw[pos:end].decode()
        pos = end + 1
        if line.startswith("#"):
            comments.append(line[1:].strip())
            continue
        d, N, r, seed, sweep = (int(x) for x in line.split())
        break
    n = (2 * N) ** (d - 1) * N
    if binary:
        bits = np.unpackbits(np.frombuffer(raw[pos:], dtype=np.uint8), count=n)
        sigma = np.where(bits > 0, 1, -1).astype(np.int8)
    else:
        sigma = np.array(raw[pos:].split(), dtype=np.int8)
    if sigma.size != n or not np.all(np.abs(sigma) == 1):
        raise ValueError(f"{path}: expected {n} spins in {{-1, +1}}")
    return Snapshot(sigma, d, N, r, seed, sweep, comments)


def gibbs_weights(graph: BondGraph, bc: BoundaryCondition, beta: float, states: np.ndarray) -> np.ndarray:
    """Unnormalized Boltzmann weights of the rows of ``states`` (enumeration helper)."""
    states = np.asarray(states)
    e = np.array([energy(s, graph, bc) for s in states])
    return np.exp(-beta * (e - e.min()))


def all_states(n: int) -> np.ndarray:
    """All ``2^n`` spin vectors; row ``k`` has spin ``+1`` at site ``i`` iff bit ``i`` of ``k`` is set."""
    k = np.arange(2**n)[:, None]
    bits = (k >> np.arange(n)) & 1
    return np.where(bits > 0, 1, -1).astype(np.int8)


def state_index(sigma: Sequence[int]) -> int:
    return int(sum(1 << i for i, v in enumerate(sigma) if v > 0))
