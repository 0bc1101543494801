"""Per-leaf independent fits routed by leaf membership.

Each observed leaf of the hierarchy gets its own restricted fit; empty
leaves fall back to the global fit. Works as intended when the leaves
partition the input space; examples landing outside every leaf are handled
by the configured fallback.
"""

from __future__ import annotations

import numpy as np

from ..data import Dataset
from ..groups import GroupTree, membership_vector, validate_hierarchical
from ..learners import LearnerSpec, PredictorCache


class RoutingError(ValueError):
    """An example matched no leaf and the fallback is 'error'."""


class PartitionPredictor:
    def __init__(self, leaves, per_leaf: dict, fallback, learner_spec: LearnerSpec):
        self.leaves = list(leaves)
        self.per_leaf = per_leaf  # leaf id -> predictor
        self.fallback = fallback  # predictor or None (meaning: raise on uncovered rows)
        self.learner_spec = learner_spec

    def _compose(self, ds: Dataset, values_for) -> np.ndarray:
        out = np.empty(ds.n, dtype=np.float64)
        covered = np.zeros(ds.n, dtype=bool)
        cache: dict[int, np.ndarray] = {}

        def values(pred):
            key = id(pred)
            if key not in cache:
                cache[key] = values_for(pred)
            return cache[key]

        for leaf in self.leaves:
            mask = membership_vector(leaf, ds)
            if mask.any():
                out[mask] = values(self.per_leaf[leaf.id])[mask]
                covered |= mask
        if not covered.all():
            uncovered = np.flatnonzero(~covered)
            if self.fallback is None:
                i = int(uncovered[0])
                attrs = {a: ds.value(a, i) for a in ds.schema.group_attributes}
                raise RoutingError(f"example outside every leaf: {attrs}")
            out[uncovered] = values(self.fallback)[uncovered]
        return out

    def scores(self, ds: Dataset) -> np.ndarray:
        return self._compose(ds, lambda p: p.scores(ds))

    def predict(self, ds: Dataset) -> np.ndarray:
        return self._compose(ds, lambda p: p.predict(ds).astype(np.float64)).astype(np.int64)


def decoupled(
    train: Dataset,
    tree: GroupTree,
    spec: LearnerSpec,
    fallback: str = "root",
    cache: PredictorCache | None = None,
) -> PartitionPredictor:
    """Fit one predictor per observed leaf; empty leaves use the global fit.

    fallback: "root" routes examples outside every leaf to the global fit;
    "error" raises at evaluation time instead.
    """
    if fallback not in ("root", "error"):
        raise ValueError(f"unknown fallback {fallback!r}")
    leaves = tree.leaves()
    verdict = validate_hierarchical(leaves, None)
    if not verdict.valid:
        raise ValueError(f"leaves are not pairwise disjoint: {verdict.violations[0]}")
    if cache is None:
        cache = PredictorCache(train)
    root_pred = cache.erm(spec)
    per_leaf = {}
    for leaf in leaves:
        if membership_vector(leaf, train).any():
            per_leaf[leaf.id] = cache.group_erm(spec, leaf)
        else:
            per_leaf[leaf.id] = root_pred
    return PartitionPredictor(
        leaves, per_leaf, root_pred if fallback == "root" else None, spec
    )
