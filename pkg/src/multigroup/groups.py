"""Group predicates and hierarchies over categorical attributes.

A Group is a conjunction of (attribute, category) equality tests; the empty
conjunction is the whole input space. A GroupTree arranges groups so that
every child refines its parent by exactly one conjunct, which makes routing
an example to its deepest containing node a root-to-leaf descent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import CATEGORICAL, AttributeSchema, Dataset, SchemaError

ROOT_ID = "ALL"


def conjuncts_to_id(conjuncts: Sequence[tuple[str, str]]) -> str:
    if not conjuncts:
        return ROOT_ID
    return "&".join(f"{attr}={cat}" for attr, cat in conjuncts)


@dataclass(frozen=True)
class Group:
    """Conjunction of attribute=category tests; empty conjunction = everything."""

    id: str
    conjuncts: tuple[tuple[str, str], ...] = ()

    @staticmethod
    def from_conjuncts(conjuncts: Sequence[tuple[str, str]]) -> "Group":
        conj = tuple((str(a), str(c)) for a, c in conjuncts)
        return Group(conjuncts_to_id(conj), conj)

    @property
    def is_root(self) -> bool:
        return not self.conjuncts

    def contains_row(self, row: Mapping[str, object]) -> bool:
        return all(row.get(attr) == cat for attr, cat in self.conjuncts)


@dataclass(frozen=True)
class IndexGroup:
    """Escape hatch: membership given by explicit row indices (tests only)."""

    id: str
    rows: frozenset[int]


def membership_vector(g, ds: Dataset) -> np.ndarray:
    """Boolean mask of length ds.n; mask[i] is True iff row i is in g."""
    if isinstance(g, IndexGroup):
        mask = np.zeros(ds.n, dtype=bool)
        if g.rows:
            idx = np.fromiter(g.rows, dtype=np.int64)
            if idx.min() < 0 or idx.max() >= ds.n:
                raise ValueError(f"row index out of range in group {g.id!r}")
            mask[idx] = True
        return mask
    mask = np.ones(ds.n, dtype=bool)
    for attr, cat in g.conjuncts:
        col = ds.schema.column(attr)
        if col.kind != CATEGORICAL:
            raise SchemaError(f"group {g.id!r} tests non-categorical attribute {attr!r}")
        cats = ds.schema.categories.get(attr, ())
        if cat not in cats:
            raise SchemaError(f"group {g.id!r} tests unknown category {cat!r} of {attr!r}")
        mask &= ds.codes(attr) == cats.index(cat)
    return mask


@dataclass(frozen=True)
class GroupStats:
    counts: Mapping[str, int]
    total: int

    def mass(self, group_id: str) -> float:
        return self.counts[group_id] / self.total if self.total else 0.0


def group_stats(groups: Iterable, ds: Dataset) -> GroupStats:
    counts = {g.id: int(membership_vector(g, ds).sum()) for g in groups}
    return GroupStats(counts=counts, total=ds.n)


class GroupTree:
    """Rooted tree of groups; each child extends its parent by one conjunct.

    Construction wires parent links and a deterministic breadth-first order
    (siblings sorted by id). It does not check same-depth disjointness; use
    validate_hierarchical for that.
    """

    def __init__(self, nodes: Iterable[Group]):
        node_list = list(nodes)
        ids = [g.id for g in node_list]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate group ids: {dup}")
        roots = [g for g in node_list if g.is_root]
        if not roots:
            node_list.insert(0, Group(ROOT_ID, ()))
        by_set = {frozenset(g.conjuncts): g for g in node_list}
        if len(by_set) != len(node_list):
            raise ValueError("two groups share the same conjunct set")

        self._parent: dict[str, str] = {}
        children: dict[str, list[str]] = {g.id: [] for g in node_list}
        for g in node_list:
            if g.is_root:
                continue
            conj = frozenset(g.conjuncts)
            candidates = []
            for drop in conj:
                parent = by_set.get(conj - {drop})
                if parent is not None:
                    candidates.append(parent)
            if not candidates:
                raise ValueError(
                    f"group {g.id!r} has no parent extending it by one conjunct"
                )
            if len(candidates) > 1:
                names = sorted(p.id for p in candidates)
                raise ValueError(f"group {g.id!r} has ambiguous parents {names}")
            self._parent[g.id] = candidates[0].id
            children[candidates[0].id].append(g.id)

        by_id = {g.id: g for g in node_list}
        self._children = {pid: tuple(sorted(kids)) for pid, kids in children.items()}
        root = next(g for g in node_list if g.is_root)

        order: list[Group] = []
        depth: dict[str, int] = {root.id: 0}
        queue = [root.id]
        while queue:
            current = queue.pop(0)
            order.append(by_id[current])
            for kid in self._children[current]:
                depth[kid] = depth[current] + 1
                queue.append(kid)
        if len(order) != len(node_list):
            stranded = sorted(set(ids) - {g.id for g in order})
            raise ValueError(f"groups not reachable from the root: {stranded}")

        self.root = root
        self.nodes: tuple[Group, ...] = tuple(order)  # breadth-first order
        self._by_id = by_id
        self._depth = depth
        self._index = {g.id: i for i, g in enumerate(order)}

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, group_id: str) -> Group:
        return self._by_id[group_id]

    def parent(self, group_id: str) -> Group | None:
        pid = self._parent.get(group_id)
        return self._by_id[pid] if pid is not None else None

    def children(self, group_id: str) -> tuple[Group, ...]:
        return tuple(self._by_id[k] for k in self._children[group_id])

    def depth(self, group_id: str) -> int:
        return self._depth[group_id]

    def index(self, group_id: str) -> int:
        return self._index[group_id]

    def leaves(self) -> tuple[Group, ...]:
        return tuple(g for g in self.nodes if not self._children[g.id])

    def ancestors(self, group_id: str) -> list[Group]:
        """Path from the node's parent up to the root."""
        out = []
        current = self._parent.get(group_id)
        while current is not None:
            out.append(self._by_id[current])
            current = self._parent.get(current)
        return out

    def masks(self, ds: Dataset) -> np.ndarray:
        """Stacked membership masks, one row per node in breadth-first order."""
        out = np.empty((len(self.nodes), ds.n), dtype=bool)
        for i, g in enumerate(self.nodes):
            out[i] = membership_vector(g, ds)
        return out

    def route(self, ds: Dataset) -> np.ndarray:
        """Index (into bfs order) of the deepest containing node per row."""
        assign = np.zeros(ds.n, dtype=np.int64)
        for i, g in enumerate(self.nodes):
            if g.is_root:
                continue
            assign[membership_vector(g, ds)] = i
        return assign


def build_hierarchy(schema: AttributeSchema, attribute_order: Sequence[str]) -> GroupTree:
    """Full product hierarchy: depth-k nodes are all conjunctions of the
    first k attributes' categories, in the given order."""
    if not attribute_order:
        raise ValueError("attribute_order must name at least one attribute")
    for attr in attribute_order:
        col = schema.column(attr)  # raises SchemaError if unknown
        if col.kind != CATEGORICAL:
            raise SchemaError(f"attribute {attr!r} is not categorical")
        if not schema.categories.get(attr):
            raise SchemaError(f"attribute {attr!r} has no categories")
    nodes = [Group(ROOT_ID, ())]
    frontier: list[tuple[tuple[str, str], ...]] = [()]
    for attr in attribute_order:
        next_frontier = []
        for prefix in frontier:
            for cat in schema.categories[attr]:
                conj = prefix + ((attr, cat),)
                nodes.append(Group.from_conjuncts(conj))
                next_frontier.append(conj)
        frontier = next_frontier
    return GroupTree(nodes)


@dataclass(frozen=True)
class HierarchyVerdict:
    valid: bool
    violations: tuple[tuple[str, str, str], ...] = ()

    def describe(self) -> str:
        if self.valid:
            return "VALID"
        lines = ["INVALID"]
        for a, b, reason in self.violations:
            lines.append(f"  ({a}, {b}): {reason}")
        return "\n".join(lines)


def _structural_relation(a: Group, b: Group) -> str:
    """Relation over the full category product space."""
    sa, sb = dict(a.conjuncts), dict(b.conjuncts)
    for attr in set(sa) & set(sb):
        if sa[attr] != sb[attr]:
            return "disjoint"
    if sa == sb:
        return "identical"
    if set(sa.items()) > set(sb.items()):
        return "contained"  # a strictly inside b
    if set(sb.items()) > set(sa.items()):
        return "contains"
    return "overlap"


def validate_hierarchical(groups: Iterable, ds: Dataset | None = None) -> HierarchyVerdict:
    """Check that every pair of groups is disjoint or nested.

    Conjunction predicates are compared symbolically over the category
    product space; when a dataset is supplied, an empirical mask check runs
    as well (and is the only check available for index groups).
    """
    group_list = list(groups)
    if not group_list:
        raise ValueError("no groups to validate")
    violations: list[tuple[str, str, str]] = []
    masks = {}
    if ds is not None and ds.n > 0:
        masks = {g.id: membership_vector(g, ds) for g in group_list}
    for i, a in enumerate(group_list):
        for b in group_list[i + 1:]:
            both_conj = isinstance(a, Group) and isinstance(b, Group)
            if both_conj:
                rel = _structural_relation(a, b)
                if rel == "identical":
                    violations.append((a.id, b.id, "identical predicates"))
                    continue
                if rel == "overlap":
                    violations.append((a.id, b.id, "overlap without containment"))
                    continue
            if masks:
                ma, mb = masks[a.id], masks[b.id]
                inter = ma & mb
                if inter.any() and not (ma <= mb).all() and not (mb <= ma).all():
                    violations.append(
                        (a.id, b.id, "rows witness overlap without containment")
                    )
            elif not both_conj:
                # index groups without data cannot be checked; skip
                continue
    return HierarchyVerdict(valid=not violations, violations=tuple(violations))


def deepest_containing(tree: GroupTree, row: Mapping[str, object]) -> Group:
    """Descend from the root, moving to a child whenever it contains the row."""
    current = tree.root
    while True:
        advanced = False
        for child in tree.children(current.id):
            if child.contains_row(row):
                current = child
                advanced = True
                break
        if not advanced:
            return current


def hierarchy_to_json(tree: GroupTree) -> dict:
    return {"nodes": [[list(c) for c in g.conjuncts] for g in tree.nodes]}


def hierarchy_from_json(doc: Mapping, schema: AttributeSchema | None = None) -> GroupTree:
    """Accept either {"attribute_order": [...]} or {"nodes": [[[attr, cat], ...], ...]}."""
    if "attribute_order" in doc:
        if schema is None:
            raise ValueError("attribute_order form needs a schema")
        return build_hierarchy(schema, doc["attribute_order"])
    if "nodes" in doc:
        nodes = [Group.from_conjuncts([(a, c) for a, c in conj]) for conj in doc["nodes"]]
        return GroupTree(nodes)
    raise ValueError("hierarchy document needs 'attribute_order' or 'nodes'")
