import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from winterbottom.lattice import (
    CouplingSet,
    HalfSpaceBox,
    LatticeError,
    brute_force_edge_counts,
    build_bond_graph,
    check_connected,
    patch_coords,
    whole_space,
)


def _patch_connected(J, radius=4):
    """Connectivity of the origin's component on a finite patch, via scipy csgraph."""
    coords = patch_coords((2 * radius + 1,) * J.d, (-radius,) * J.d)
    index = {tuple(c): n for n, c in enumerate(coords)}
    rows, cols = [], []
    for n, c in enumerate(coords):
        for k in J.table:
            m = index.get(tuple(c + np.array(k)))
            if m is not None:
                rows.append(n)
                cols.append(m)
    A = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(coords),) * 2)
    _, lab = connected_components(A, directed=False)
    o = index[(0,) * J.d]
    return all(lab[index[tuple(e)]] == lab[o] for e in np.eye(J.d, dtype=int))


def test_nearest_neighbor_table():
    J = CouplingSet.nearest_neighbor(3)
    assert len(J.table) == 6
    assert J.range == 1
    assert J((0, 0, 1)) == 1.0 and J((1, 1, 0)) == 0.0


def test_coupling_rejects_asymmetric_and_negative():
    with pytest.raises(LatticeError):
        CouplingSet(2, {(1, 0): 1.0})
    with pytest.raises(LatticeError):
        CouplingSet(2, {(1, 0): -1.0, (-1, 0): -1.0})
    with pytest.raises(LatticeError):
        CouplingSet(1, {(1,): 1.0, (-1,): 1.0})


def test_coupling_file_round_trip(tmp_path):
    J = CouplingSet.from_offsets(2, {(1, 0): 1.0, (0, 1): 0.5, (1, 1): 0.25})
    p = tmp_path / "J.txt"
    J.to_file(p)
    assert CouplingSet.from_file(p).table == J.table
    p.write_text("# comment\n1 0 1.0\n0 1 2.0\n")
    K = CouplingSet.from_file(p)
    assert K((-1, 0)) == 1.0 and K((0, -1)) == 2.0


def test_check_connected_examples():
    assert check_connected(CouplingSet.nearest_neighbor(2))
    assert check_connected(CouplingSet.nearest_neighbor(3))
    assert not check_connected(CouplingSet.from_offsets(3, {(2, 0, 0): 1.0}))
    J = CouplingSet.from_offsets(2, {(1, 0): 1.0, (0, 2): 1.0})
    assert not check_connected(J)
    assert not _patch_connected(J)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(-2, 2), st.integers(-2, 2)), min_size=1, max_size=3))
def test_check_connected_matches_csgraph(offsets):
    offsets = [k for k in offsets if k != (0, 0)]
    if not offsets:
        return
    J = CouplingSet.from_offsets(2, {k: 1.0 for k in offsets})
    assert check_connected(J) == _patch_connected(J, radius=8)


def test_box_geometry():
    box = HalfSpaceBox(2, 3, 1)
    assert box.shape == (4, 4, 2)
    assert box.n_sites == 32
    c = box.coords()
    assert c.min(0).tolist() == [-1, -1, 1] and c.max(0).tolist() == [2, 2, 2]
    # i_d runs fastest
    assert c[1].tolist() == [-1, -1, 2]
    for n in (0, 7, 31):
        assert box.index_of(c[n]) == n
    with pytest.raises(LatticeError):
        HalfSpaceBox(0)
    with pytest.raises(LatticeError):
        HalfSpaceBox(2, 2, 0)


def test_small_graph_example():
    g = build_bond_graph(HalfSpaceBox(1, 2, 1), CouplingSet.nearest_neighbor(2), [0.5])
    assert g.coords.tolist() == [[0, 1], [1, 1]]
    assert (g.n_interior, g.n_boundary, g.n_ghost) == (1, 4, 2)
    assert sorted(tuple(x) for x in g.bnd_outside) == [(-1, 1), (0, 2), (1, 2), (2, 1)]
    assert np.all(g.ghost_field == 0.5)


def test_ghost_edges_exactly_first_layers():
    g = build_bond_graph(HalfSpaceBox(2, 2, 2), CouplingSet.nearest_neighbor(2), [0.3, 0.1])
    layers = g.coords[g.ghost_site, -1]
    assert sorted(np.unique(layers)) == [1, 2]
    assert g.n_ghost == np.sum(g.coords[:, -1] <= 2)
    assert np.allclose(g.ghost_field[layers == 1], 0.3)
    assert np.allclose(g.ghost_field[layers == 2], 0.1)


def test_zero_field_keeps_ghost_edges():
    g = build_bond_graph(HalfSpaceBox(1, 2, 1), CouplingSet.nearest_neighbor(2), [0.0])
    assert g.n_ghost == 2


def test_mixed_sign_field_has_no_ghost_sign():
    g = build_bond_graph(HalfSpaceBox(2, 2, 2), CouplingSet.nearest_neighbor(2), [0.3, -0.1])
    with pytest.raises(LatticeError):
        g.ghost_sign


@pytest.mark.parametrize("N", [1, 2, 3, 4])
@pytest.mark.parametrize("d", [2, 3])
def test_edge_counts_match_brute_force(N, d):
    if d == 3 and N > 2:
        pytest.skip("double loop too slow")
    J = CouplingSet.from_offsets(d, {tuple([1] + [0] * (d - 1)): 1.0, tuple([1, 1] + [0] * (d - 2)): 0.5})
    box = HalfSpaceBox(N, d, 2)
    g = build_bond_graph(box, J, [0.2, 0.1])
    assert (g.n_interior, g.n_boundary, g.n_ghost) == brute_force_edge_counts(box.coords(), J, r=2)


def test_edge_counts_whole_space():
    J = CouplingSet.nearest_neighbor(2)
    from winterbottom.estimators import bulk_box_graph

    g, origin = bulk_box_graph(J, 2)
    assert g.coords[origin].tolist() == [0, 0]
    assert (g.n_interior, g.n_boundary, g.n_ghost) == brute_force_edge_counts(g.coords, J, whole_space)


@settings(max_examples=30, deadline=None)
@given(
    st.dictionaries(st.tuples(st.integers(-2, 2), st.integers(-2, 2)), st.floats(0.1, 2.0), min_size=1, max_size=4),
    st.integers(1, 3),
)
def test_edges_symmetric_and_positive(entries, N):
    entries = {k: v for k, v in entries.items() if k > (0, 0)}
    if not entries:
        return
    J = CouplingSet.from_offsets(2, entries)
    g = build_bond_graph(HalfSpaceBox(N, 2, 1), J, [0.1])
    for i, j, v in zip(g.edge_i, g.edge_j, g.edge_J):
        assert v > 0
        assert J(g.coords[i] - g.coords[j]) == v == J(g.coords[j] - g.coords[i])
    for s, x, v in zip(g.bnd_site, g.bnd_outside, g.bnd_J):
        assert v > 0 and J(x - g.coords[s]) == v
    assert np.all(g.edge_i != g.edge_j)
    pairs = {tuple(sorted(p)) for p in zip(g.edge_i.tolist(), g.edge_j.tolist())}
    assert len(pairs) == g.n_interior


def test_adjacency_csr_consistent():
    g = build_bond_graph(HalfSpaceBox(2, 2, 1), CouplingSet.nearest_neighbor(2), [0.1])
    indptr, nbr, w, eid = g.adjacency
    for s in range(g.n_sites):
        for k in range(indptr[s], indptr[s + 1]):
            e = eid[k]
            assert {g.edge_i[e], g.edge_j[e]} == {s, nbr[k]}
            assert w[k] == g.edge_J[e]
