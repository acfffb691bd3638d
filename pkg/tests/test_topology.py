import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmctree.topology import (
    StructuralEditError,
    TreeTopology,
    grow,
    leaf_paths,
    path_info,
    prunable_count,
    prunable_nodes,
    prune,
)

# the four-split example tree: preorder ids
#   0 = root, 1 = left internal, 2 = its left internal, 3/4 = leaves under 2,
#   5 = leaf right of 1, 6 = right internal, 7/8 = its leaves
FIG1 = (((None, None), None), (None, None))


@pytest.fixture
def fig1():
    return TreeTopology.from_nested(FIG1)


def test_root_only_shape():
    t = TreeTopology.root_only()
    assert t.n_internal == 0 and t.n_leaves == 1
    assert t.depth(t.root) == 0
    assert prunable_count(t) == 0


def test_grow_root():
    t = grow(TreeTopology.root_only(), 0)
    assert (t.n_internal, t.n_leaves) == (1, 2)
    assert prunable_count(t) == 1


def test_grow_fig1_leaf(fig1):
    t = grow(fig1, 3)
    assert (t.n_internal, t.n_leaves) == (5, 6)
    # untouched nodes keep their records
    for nid in fig1:
        if nid != 3:
            assert t[nid] == fig1[nid]


def test_grow_internal_rejected(fig1):
    with pytest.raises(StructuralEditError):
        grow(fig1, 0)


def test_prune_to_root_only():
    t = prune(grow(TreeTopology.root_only(), 0), 0)
    assert t.n_internal == 0 and t.n_leaves == 1


def test_prune_with_internal_child_rejected(fig1):
    with pytest.raises(StructuralEditError):
        prune(fig1, 1)
    with pytest.raises(StructuralEditError):
        prune(fig1, 3)


def test_prunable_fig1(fig1):
    assert prunable_count(fig1) == 2
    assert set(prunable_nodes(fig1)) == {2, 6}


def test_path_info_examples(fig1):
    assert len(path_info(fig1, 0)) == 0
    p = path_info(fig1, 4)
    assert p.ancestors == (0, 1, 2) and p.directions == (0, 0, 1)
    p = path_info(fig1, 8)
    assert p.ancestors == (0, 6) and p.directions == (1, 1)


def test_path_info_unknown(fig1):
    with pytest.raises(StructuralEditError):
        path_info(fig1, 99)


def test_fresh_ids_are_stable(fig1):
    t = grow(fig1, 5)
    assert set(fig1.nodes) < set(t.nodes)
    assert t[5].left == fig1.next_id and t[5].right == fig1.next_id + 1


def test_nested_round_trip(fig1):
    assert fig1.to_nested() == FIG1
    again = TreeTopology.from_record(fig1.to_record(), next_id=fig1.next_id)
    assert again == fig1


# --- random edit sequences -------------------------------------------------
edit_ops = st.lists(st.tuples(st.booleans(), st.integers(0, 10_000)), max_size=25)


def _apply(ops):
    t = TreeTopology.root_only()
    for do_grow, pick in ops:
        if do_grow or prunable_count(t) == 0:
            t = grow(t, t.leaf_ids[pick % t.n_leaves])
        else:
            cands = prunable_nodes(t)
            t = prune(t, cands[pick % len(cands)])
    return t


@settings(max_examples=200, deadline=None)
@given(edit_ops)
def test_counts_invariant(ops):
    t = _apply(ops)
    assert t.n_leaves == t.n_internal + 1
    assert set(t.internal_ids).isdisjoint(t.leaf_ids)
    if t.n_internal:
        assert prunable_count(t) >= 1


@settings(max_examples=200, deadline=None)
@given(edit_ops, st.integers(0, 10_000))
def test_grow_then_prune_is_identity(ops, pick):
    t = _apply(ops)
    leaf = t.leaf_ids[pick % t.n_leaves]
    back = prune(grow(t, leaf), leaf)
    assert back.isomorphic(t)


@settings(max_examples=200, deadline=None)
@given(edit_ops)
def test_paths_reach_their_leaves(ops):
    t = _apply(ops)
    for leaf, p in zip(t.leaf_ids, leaf_paths(t)):
        node = t.root
        for anc, d in zip(p.ancestors, p.directions):
            assert anc == node
            node = t[node].right if d else t[node].left
        assert node == leaf
        assert len(p) == t.depth(leaf)
