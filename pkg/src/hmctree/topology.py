"""Binary tree topologies and the grow/prune edits that change their size.

Node ids are integers that stay attached to a node for its whole life: growing
allocates fresh ids from a monotone counter and pruning retires ids without
renumbering the survivors, so parameter dictionaries keyed by node id survive
topology edits untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Any, Callable, Iterator, Mapping, Sequence

__all__ = [
    "StructuralEditError",
    "NodeRecord",
    "PathInfo",
    "TreeTopology",
    "grow",
    "prune",
    "prunable_count",
    "prunable_nodes",
    "path_info",
]


class StructuralEditError(ValueError):
    """Raised when a grow/prune edit or a node lookup is invalid."""


@dataclass(frozen=True)
class NodeRecord:
    id: int
    parent: int | None
    left: int | None
    right: int | None
    depth: int

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass(frozen=True)
class PathInfo:
    """Root-to-node route: the internal ancestors and the branch taken at each.

    ``directions[i]`` is 1 when the route steps to the right child of
    ``ancestors[i]`` and 0 when it steps left.
    """

    ancestors: tuple[int, ...]
    directions: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ancestors)


class TreeTopology:
    """Immutable binary tree structure.

    Use :meth:`root_only` or :meth:`from_nested` to build one and the module
    level :func:`grow` / :func:`prune` to derive edited copies.
    """

    __slots__ = ("_nodes", "_root", "_next_id", "_internal", "_leaves", "_paths")

    def __init__(self, nodes: Mapping[int, NodeRecord], root: int, next_id: int | None = None):
        self._nodes = MappingProxyType(dict(nodes))
        self._root = root
        self._next_id = max(self._nodes) + 1 if next_id is None else next_id
        self._validate()
        internal: list[int] = []
        leaves: list[int] = []
        for nid in self._preorder():
            (leaves if self._nodes[nid].is_leaf else internal).append(nid)
        self._internal = tuple(internal)
        self._leaves = tuple(leaves)
        self._paths: dict[int, PathInfo] = {}

    # -- construction -----------------------------------------------------
    @classmethod
    def root_only(cls) -> "TreeTopology":
        return cls({0: NodeRecord(0, None, None, None, 0)}, 0)

    @classmethod
    def from_nested(cls, spec: Any) -> "TreeTopology":
        """Build from nested pairs: ``None`` is a leaf, ``(left, right)`` a split.

        Ids are handed out in preorder, so ``((None, None), None)`` gives the
        root id 0, its left child 1, that child's leaves 2 and 3, and the
        root's right leaf 4.
        """
        nodes: dict[int, NodeRecord] = {}
        counter = [0]

        def build(sub: Any, parent: int | None, depth: int) -> int:
            nid = counter[0]
            counter[0] += 1
            if sub is None:
                nodes[nid] = NodeRecord(nid, parent, None, None, depth)
                return nid
            if len(sub) != 2:
                raise StructuralEditError("internal nodes need exactly two children")
            nodes[nid] = NodeRecord(nid, parent, -1, -1, depth)  # patched below
            left = build(sub[0], nid, depth + 1)
            right = build(sub[1], nid, depth + 1)
            nodes[nid] = NodeRecord(nid, parent, left, right, depth)
            return nid

        root = build(spec, None, 0)
        return cls(nodes, root)

    def to_nested(self) -> Any:
        def rec(nid: int) -> Any:
            node = self._nodes[nid]
            if node.is_leaf:
                return None
            return (rec(node.left), rec(node.right))

        return rec(self._root)

    def to_record(self, annotate: Callable[[int], Mapping[str, Any]] | None = None) -> dict:
        """Nested JSON-ready record; ``annotate(node_id)`` may add per-node fields."""

        def rec(nid: int) -> dict:
            node = self._nodes[nid]
            out: dict[str, Any] = {"id": nid}
            if annotate is not None:
                out.update(annotate(nid))
            if not node.is_leaf:
                out["children"] = [rec(node.left), rec(node.right)]
            return out

        return rec(self._root)

    @classmethod
    def from_record(cls, record: Mapping[str, Any], next_id: int | None = None) -> "TreeTopology":
        nodes: dict[int, NodeRecord] = {}

        def rec(r: Mapping[str, Any], parent: int | None, depth: int) -> int:
            nid = int(r["id"])
            if nid in nodes:
                raise StructuralEditError(f"duplicate node id {nid}")
            children = r.get("children")
            if children is None:
                nodes[nid] = NodeRecord(nid, parent, None, None, depth)
            else:
                left = rec(children[0], nid, depth + 1)
                right = rec(children[1], nid, depth + 1)
                nodes[nid] = NodeRecord(nid, parent, left, right, depth)
            return nid

        root = rec(record, None, 0)
        return cls(nodes, root, next_id)

    # -- queries ----------------------------------------------------------
    @property
    def root(self) -> int:
        return self._root

    @property
    def next_id(self) -> int:
        return self._next_id

    @property
    def nodes(self) -> Mapping[int, NodeRecord]:
        return self._nodes

    @property
    def internal_ids(self) -> tuple[int, ...]:
        """Internal node ids in preorder (left subtree first)."""
        return self._internal

    @property
    def leaf_ids(self) -> tuple[int, ...]:
        """Leaf ids in preorder, i.e. left to right."""
        return self._leaves

    @property
    def n_internal(self) -> int:
        return len(self._internal)

    @property
    def n_leaves(self) -> int:
        return len(self._leaves)

    def __getitem__(self, nid: int) -> NodeRecord:
        try:
            return self._nodes[nid]
        except KeyError:
            raise StructuralEditError(f"unknown node id {nid}") from None

    def __contains__(self, nid: object) -> bool:
        return nid in self._nodes

    def __iter__(self) -> Iterator[int]:
        return iter(self._preorder())

    def __len__(self) -> int:
        return len(self._nodes)

    def is_leaf(self, nid: int) -> bool:
        return self[nid].is_leaf

    def depth(self, nid: int) -> int:
        return self[nid].depth

    def max_depth(self) -> int:
        return max(node.depth for node in self._nodes.values())

    def isomorphic(self, other: "TreeTopology") -> bool:
        """Same shape, ignoring node ids."""
        return self.to_nested() == other.to_nested()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TreeTopology):
            return NotImplemented
        return self._root == other._root and dict(self._nodes) == dict(other._nodes)

    def __hash__(self) -> int:
        return hash((self._root, tuple(sorted(self._nodes.items()))))

    def __reduce__(self):
        return (TreeTopology, (dict(self._nodes), self._root, self._next_id))

    def __repr__(self) -> str:
        return f"TreeTopology(n_internal={self.n_internal}, n_leaves={self.n_leaves}, nested={self.to_nested()!r})"

    # -- internals --------------------------------------------------------
    def _preorder(self) -> list[int]:
        out: list[int] = []
        stack = [self._root]
        while stack:
            nid = stack.pop()
            out.append(nid)
            node = self._nodes[nid]
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)
        return out

    def _validate(self) -> None:
        nodes = self._nodes
        if self._root not in nodes or nodes[self._root].parent is not None:
            raise StructuralEditError("root must exist and have no parent")
        if nodes[self._root].depth != 0:
            raise StructuralEditError("root depth must be 0")
        seen = 0
        stack = [self._root]
        visited: set[int] = set()
        while stack:
            nid = stack.pop()
            if nid in visited:
                raise StructuralEditError("cycle or shared child detected")
            visited.add(nid)
            seen += 1
            node = nodes[nid]
            if (node.left is None) != (node.right is None):
                raise StructuralEditError(f"node {nid} has exactly one child")
            if node.left is not None:
                for child in (node.left, node.right):
                    if child not in nodes:
                        raise StructuralEditError(f"node {nid} references missing child {child}")
                    c = nodes[child]
                    if c.parent != nid or c.depth != node.depth + 1:
                        raise StructuralEditError(f"inconsistent parent/depth at node {child}")
                    stack.append(child)
        if seen != len(nodes):
            raise StructuralEditError("unreachable nodes present")
        if self._next_id <= max(nodes):
            raise StructuralEditError("next_id must exceed every live node id")


def grow(topo: TreeTopology, leaf: int) -> TreeTopology:
    """Split ``leaf`` into an internal node with two fresh leaf children."""
    node = topo[leaf]
    if not node.is_leaf:
        raise StructuralEditError(f"cannot grow node {leaf}: it is not a leaf")
    left, right = topo.next_id, topo.next_id + 1
    nodes = dict(topo.nodes)
    nodes[leaf] = NodeRecord(leaf, node.parent, left, right, node.depth)
    nodes[left] = NodeRecord(left, leaf, None, None, node.depth + 1)
    nodes[right] = NodeRecord(right, leaf, None, None, node.depth + 1)
    return TreeTopology(nodes, topo.root, topo.next_id + 2)


def prune(topo: TreeTopology, internal: int) -> TreeTopology:
    """Collapse ``internal`` (whose children must both be leaves) into a leaf."""
    node = topo[internal]
    if node.is_leaf:
        raise StructuralEditError(f"cannot prune node {internal}: it is a leaf")
    if not (topo.is_leaf(node.left) and topo.is_leaf(node.right)):
        raise StructuralEditError(f"cannot prune node {internal}: a child is internal")
    nodes = dict(topo.nodes)
    del nodes[node.left], nodes[node.right]
    nodes[internal] = NodeRecord(internal, node.parent, None, None, node.depth)
    return TreeTopology(nodes, topo.root, topo.next_id)


def prunable_nodes(topo: TreeTopology) -> tuple[int, ...]:
    """Internal nodes whose two children are leaves, in preorder."""
    return tuple(
        nid
        for nid in topo.internal_ids
        if topo.is_leaf(topo[nid].left) and topo.is_leaf(topo[nid].right)
    )


def prunable_count(topo: TreeTopology) -> int:
    return len(prunable_nodes(topo))


def path_info(topo: TreeTopology, node: int) -> PathInfo:
    cached = topo._paths.get(node)
    if cached is not None:
        return cached
    rec = topo[node]
    ancestors: list[int] = []
    directions: list[int] = []
    child = rec
    while child.parent is not None:
        parent = topo.nodes[child.parent]
        ancestors.append(parent.id)
        directions.append(1 if parent.right == child.id else 0)
        child = parent
    info = PathInfo(tuple(reversed(ancestors)), tuple(reversed(directions)))
    topo._paths[node] = info
    return info


def leaf_paths(topo: TreeTopology) -> Sequence[PathInfo]:
    return [path_info(topo, leaf) for leaf in topo.leaf_ids]
