"""Decision-list learner that repeatedly prepends a violating pair.

Each round scans (group, candidate) pairs for the largest value of
list_risk(g) - candidate_risk(g) - margin(g); while that value stays
nonnegative the pair is prepended, so the front of the list holds the most
recently added rule. Candidates are the group-restricted fits of the
supplied groups plus the global fit; the full benchmark class is implicit
in the learners, so the scan cannot enumerate it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..bounds import EpsilonSpec, epsilon
from ..data import Dataset
from ..groups import Group, GroupTree, membership_vector
from ..learners import LearnerSpec, PredictorCache
from ..risk import Loss


@dataclass(frozen=True)
class DecisionListEntry:
    group: Group
    predictor: object
    source_id: str  # group whose restricted fit the predictor is ("ALL" for the global fit)


class DecisionList:
    """Front-to-back first-match evaluation with a default at the end."""

    def __init__(self, entries: list[DecisionListEntry], default, learner_spec: LearnerSpec,
                 eps_spec: EpsilonSpec, loss: Loss):
        self.entries = entries
        self.default = default
        self.learner_spec = learner_spec
        self.eps_spec = eps_spec
        self.loss = loss

    def __len__(self) -> int:
        return len(self.entries)

    def _compose(self, ds: Dataset, values_for) -> np.ndarray:
        out = values_for(self.default).astype(np.float64).copy()
        # applying entries back-to-front makes the front entry win
        for entry in reversed(self.entries):
            mask = membership_vector(entry.group, ds)
            if mask.any():
                out[mask] = values_for(entry.predictor)[mask]
        return out

    def scores(self, ds: Dataset) -> np.ndarray:
        return self._compose(ds, lambda p: p.scores(ds))

    def predict(self, ds: Dataset) -> np.ndarray:
        return self._compose(ds, lambda p: p.predict(ds).astype(np.float64)).astype(np.int64)


class PrependCapExceeded(RuntimeError):
    """The round cap was hit while violations remained; carries the partial list."""

    def __init__(self, cap: int, partial: DecisionList):
        super().__init__(f"prepend did not terminate within cap={cap}")
        self.partial = partial


def _normalize_groups(groups) -> list[Group]:
    if isinstance(groups, GroupTree):
        return list(groups.nodes)
    return list(groups)


def prepend(
    train: Dataset,
    groups,
    spec: LearnerSpec,
    eps: EpsilonSpec,
    loss: Loss,
    cap: int | None = None,
    cache: PredictorCache | None = None,
) -> DecisionList:
    """Build the decision list on the training set.

    ``groups`` may be a GroupTree or any iterable of groups; unobserved
    groups are skipped. The default cap is 4x the number of groups.
    """
    group_list = _normalize_groups(groups)
    if not group_list:
        raise ValueError("prepend needs at least one group")
    if cap is None:
        cap = 4 * len(group_list)
    if cap < 1:
        raise ValueError("cap must be >= 1")
    eps = eps.with_context(group_count=len(group_list), n_total=train.n)
    if cache is None:
        cache = PredictorCache(train)

    masks = {g.id: membership_vector(g, train) for g in group_list}
    observed = [g for g in group_list if masks[g.id].any()]
    counts = {g.id: int(masks[g.id].sum()) for g in observed}
    margins = {g.id: epsilon(eps, counts[g.id]) for g in observed}

    default = cache.erm(spec)
    candidates: list[tuple[str, object]] = [("ALL", default)]
    for g in sorted(observed, key=lambda g: g.id):
        if not g.is_root:
            candidates.append((g.id, cache.group_erm(spec, g)))

    # candidate risks never change across rounds; precompute them
    cand_losses = [loss.per_example(p, train) for _, p in candidates]
    cand_risk = np.empty((len(observed), len(candidates)))
    for gi, g in enumerate(observed):
        mask = masks[g.id]
        for ci in range(len(candidates)):
            cand_risk[gi, ci] = cand_losses[ci][mask].sum() / counts[g.id]

    entries: list[DecisionListEntry] = []
    current = DecisionList(entries, default, spec, eps, loss)
    row_loss = loss.per_example(default, train).copy()

    for _ in range(cap):
        best = None  # (value, group index, candidate index)
        for gi, g in enumerate(observed):
            list_risk = row_loss[masks[g.id]].sum() / counts[g.id]
            for ci in range(len(candidates)):
                value = list_risk - cand_risk[gi, ci] - margins[g.id]
                if best is None or value > best[0]:
                    best = (value, gi, ci)
        if best is None or best[0] < 0:
            return current
        _, gi, ci = best
        g = observed[gi]
        source_id, predictor = candidates[ci]
        entries.insert(0, DecisionListEntry(g, predictor, source_id))
        row_loss[masks[g.id]] = cand_losses[ci][masks[g.id]]

    # cap reached; check whether a violation is still outstanding
    for gi, g in enumerate(observed):
        list_risk = row_loss[masks[g.id]].sum() / counts[g.id]
        if any(list_risk - cand_risk[gi, ci] - margins[g.id] >= 0 for ci in range(len(candidates))):
            raise PrependCapExceeded(cap, current)
    return current


def termination_scan(
    dlist: DecisionList,
    train: Dataset,
    groups,
    cache: PredictorCache | None = None,
) -> list[tuple[str, str, float]]:
    """Post-hoc check of the stopping condition.

    Re-scans every (observed group, candidate) pair against the returned
    list and reports those whose violation value is still >= 0; an empty
    result certifies termination.
    """
    group_list = _normalize_groups(groups)
    eps = dlist.eps_spec.with_context(group_count=len(group_list), n_total=train.n)
    if cache is None:
        cache = PredictorCache(train)
    loss = dlist.loss
    row_loss = loss.per_example(dlist, train)

    violations = []
    observed = [(g, membership_vector(g, train)) for g in group_list]
    observed = [(g, m) for g, m in observed if m.any()]
    candidates: list[tuple[str, object]] = [("ALL", cache.erm(dlist.learner_spec))]
    for g, _ in sorted(observed, key=lambda gm: gm[0].id):
        if not g.is_root:
            candidates.append((g.id, cache.group_erm(dlist.learner_spec, g)))
    for g, mask in observed:
        n_g = int(mask.sum())
        list_risk = row_loss[mask].sum() / n_g
        margin = epsilon(eps, n_g)
        for source_id, candidate in candidates:
            cand = loss.per_example(candidate, train)[mask].sum() / n_g
            value = list_risk - cand - margin
            if value >= 0:
                violations.append((g.id, source_id, float(value)))
    return violations
