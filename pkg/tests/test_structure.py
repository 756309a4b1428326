"""Vine structure, validation, and union-find tests."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vinebc.errors import DataError
from vinebc.structure import (
    DisjointSetUnion,
    Edge,
    VineStructure,
    edge_support,
    load_structure,
    save_structure,
    validate,
)


def dvine123():
    return VineStructure(
        (1, 2, 3),
        ((Edge((1, 2)), Edge((2, 3))), (Edge((1, 3), (2,)),)),
    )


def test_edge_support_examples():
    assert edge_support(Edge((1, 2))) == {1, 2}
    assert edge_support(Edge((1, 3), (2,))) == {1, 2, 3}
    assert edge_support(Edge((2, 5), (4,))) == {2, 4, 5}


def test_edge_normalizes_order():
    e = Edge((5, 2), (4, 3))
    assert e.conditioned == (2, 5)
    assert e.conditioning == (3, 4)
    assert e.level == 3


def test_edge_rejects_overlap():
    with pytest.raises(DataError):
        Edge((1, 1))
    with pytest.raises(DataError):
        Edge((1, 2), (1,))


def test_validate_accepts_dvine():
    assert validate(dvine123()) == []


def test_validate_flags_wrong_conditioning_size():
    bad = VineStructure((1, 2, 3), ((Edge((1, 2)), Edge((2, 3))), (Edge((1, 3)),)))
    violations = validate(bad)
    assert any("conditioning size" in v for v in violations)


def test_validate_flags_duplicate_edge():
    bad = VineStructure((1, 2, 3), ((Edge((1, 2)), Edge((1, 2))),))
    violations = validate(bad)
    assert violations  # duplicated edge is not a spanning tree


def test_validate_flags_proximity():
    # level-2 edge whose endpoints are not previous-level edges
    bad = VineStructure(
        (1, 2, 3, 4),
        (
            (Edge((1, 2)), Edge((2, 3)), Edge((3, 4))),
            (Edge((1, 3), (2,)), Edge((1, 4), (2,))),
        ),
    )
    violations = validate(bad)
    assert any("proximity" in v for v in violations)


def test_validate_flags_disconnected_level():
    bad = VineStructure((1, 2, 3, 4), ((Edge((1, 2)), Edge((3, 4))),))
    violations = validate(bad)
    assert any("expected" in v or "connected" in v for v in violations)


# --- DSU ---------------------------------------------------------------------


def test_dsu_fresh_find():
    dsu = DisjointSetUnion([1, 2, 3])
    assert dsu.find(2) == 2


def test_dsu_union_links():
    dsu = DisjointSetUnion([1, 2, 3])
    assert dsu.union(1, 2)
    assert dsu.find(1) == dsu.find(2)


def test_dsu_cycle_detection():
    dsu = DisjointSetUnion([1, 2, 3])
    assert dsu.union(1, 2)
    assert dsu.union(2, 3)
    assert not dsu.union(1, 3)


def test_dsu_unknown_node():
    dsu = DisjointSetUnion([1])
    with pytest.raises(DataError):
        dsu.find(99)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 14), st.integers(0, 14)), max_size=40))
def test_dsu_component_count_invariant(pairs):
    dsu = DisjointSetUnion(range(15))
    merges = sum(1 for a, b in pairs if dsu.union(a, b))
    assert dsu.n_components == 15 - merges


# --- file round trip ----------------------------------------------------------


def test_structure_file_round_trip(tmp_path):
    s = dvine123()
    path = tmp_path / "s.csv"
    save_structure(s, path, bridge_edges=[Edge((2, 3))])
    back, bridges = load_structure(path)
    assert back == s
    assert bridges == {Edge((2, 3))}


def test_structure_file_rejects_gaps(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1,1,2,\n3,1,4,2;3\n")
    with pytest.raises(DataError):
        load_structure(path)
