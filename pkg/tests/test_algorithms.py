import dataclasses
import math

import numpy as np
import pytest

from multigroup.algorithms import (
    DecisionList,
    DecisionListEntry,
    PrependCapExceeded,
    RoutingError,
    decoupled,
    excess_risk_report,
    mgl_tree,
    monotonicity_audit,
    prepend,
    termination_scan,
)
from multigroup.bounds import EpsilonSpec
from multigroup.data import make_synthetic
from multigroup.groups import Group, GroupTree, build_hierarchy, membership_vector
from multigroup.learners import LearnerSpec, PredictorCache, erm
from multigroup.risk import ZERO_ONE, group_risk

from synthcases import (
    FixedPredictor,
    inverted_leaf_spec,
    opposite_separators_spec,
    random_hierarchical_spec,
    two_leaf_constants,
)

CONSTANT = LearnerSpec("constant")


def const_eps(value):
    return EpsilonSpec("constant", value=value)


def two_leaf_setup():
    ds = two_leaf_constants()
    tree = build_hierarchy(ds.schema, ["grp"])
    return ds, tree


def test_mgl_tree_hand_simulation_eps_zero():
    ds, tree = two_leaf_setup()
    predictor = mgl_tree(ds, tree, CONSTANT, const_eps(0.0), ZERO_ONE)
    decisions = {t.group_id: t.decision for t in predictor.trace}
    assert decisions == {"grp=a": "updated", "grp=b": "updated"}
    mask_a = membership_vector(Group.from_conjuncts([("grp", "a")]), ds)
    preds = predictor.predict(ds)
    assert preds[mask_a].tolist() == [1, 1, 1]
    assert preds[~mask_a].tolist() == [0]
    assert group_risk(predictor, ds, Group("ALL", ()), ZERO_ONE).value == 0.0
    # recorded arithmetic for leaf b: parent risk 1, own fit risk 0
    step_b = next(t for t in predictor.trace if t.group_id == "grp=b")
    assert (step_b.parent_risk, step_b.candidate_risk, step_b.err) == (1.0, 0.0, 1.0)


def test_mgl_tree_hand_simulation_eps_two():
    ds, tree = two_leaf_setup()
    predictor = mgl_tree(ds, tree, CONSTANT, const_eps(2.0), ZERO_ONE)
    decisions = {t.group_id: t.decision for t in predictor.trace}
    assert decisions == {"grp=a": "inherited", "grp=b": "inherited"}
    assert predictor.predict(ds).tolist() == [1, 1, 1, 1]
    g_b = Group.from_conjuncts([("grp", "b")])
    cache = PredictorCache(ds)
    own = cache.group_erm(CONSTANT, g_b)
    assert group_risk(predictor, ds, g_b, ZERO_ONE).value == 1.0
    assert group_risk(predictor, ds, g_b, ZERO_ONE).value <= \
        group_risk(own, ds, g_b, ZERO_ONE).value + 2.0


def test_mgl_tree_infinite_margin_equals_global_fit():
    spec = inverted_leaf_spec(n_per_leaf=125, noise=0.1)
    ds = make_synthetic(spec, seed=3)
    tree = build_hierarchy(ds.schema, list(spec.attributes))
    predictor = mgl_tree(ds, tree, CONSTANT, const_eps(math.inf), ZERO_ONE)
    assert all(t.decision.startswith("inherited") for t in predictor.trace)
    probes = make_synthetic(dataclasses.replace(spec, leaves=tuple(
        dataclasses.replace(leaf, count=max(1, 1000 // len(spec.leaves)))
        for leaf in spec.leaves)), seed=99)
    global_fit = erm(CONSTANT, ds)
    assert np.array_equal(predictor.predict(probes), global_fit.predict(probes))


def test_mgl_tree_zero_margin_equals_decoupled_on_train():
    spec = inverted_leaf_spec(n_per_leaf=40, noise=0.2)
    ds = make_synthetic(spec, seed=5)
    tree = build_hierarchy(ds.schema, list(spec.attributes))
    cache = PredictorCache(ds)
    tree_fit = mgl_tree(ds, tree, CONSTANT, const_eps(0.0), ZERO_ONE, cache=cache)
    part_fit = decoupled(ds, tree, CONSTANT, cache=cache)
    assert np.array_equal(tree_fit.predict(ds), part_fit.predict(ds))


def test_mgl_tree_margin_guarantee_random_smoke():
    rng = np.random.default_rng(77)
    for _ in range(5):
        spec = random_hierarchical_spec(rng)
        ds = make_synthetic(spec, seed=int(rng.integers(1 << 30)))
        tree = build_hierarchy(ds.schema, list(spec.attributes))
        cache = PredictorCache(ds)
        for eps in (const_eps(0.0), const_eps(0.1), const_eps(math.inf)):
            predictor = mgl_tree(ds, tree, CONSTANT, eps, ZERO_ONE, cache=cache)
            _, violations = excess_risk_report(predictor, ds, cache=cache)
            assert violations == []


def test_mgl_tree_trace_records_every_nonroot_node():
    ds, tree = two_leaf_setup()
    predictor = mgl_tree(ds, tree, CONSTANT, const_eps(0.5), ZERO_ONE)
    assert [t.group_id for t in predictor.trace] == [g.id for g in tree.nodes if not g.is_root]


def test_mgl_tree_empty_nodes_inherit_silently():
    spec = inverted_leaf_spec(n_per_leaf=10, noise=0.0)
    empty_leaf = dataclasses.replace(spec.leaves[0], count=0)
    ds = make_synthetic(dataclasses.replace(
        spec, leaves=(empty_leaf,) + spec.leaves[1:]), seed=1)
    tree = build_hierarchy(ds.schema, list(spec.attributes))
    predictor = mgl_tree(ds, tree, CONSTANT, const_eps(0.0), ZERO_ONE)
    empties = [t for t in predictor.trace if t.decision == "inherited_empty"]
    assert len(empties) == 1 and empties[0].n_g == 0
    _, violations = excess_risk_report(predictor, ds)
    assert violations == []


def test_mgl_tree_rejects_bad_inputs():
    ds, tree = two_leaf_setup()
    with pytest.raises(ValueError, match="empty training"):
        mgl_tree(ds.take([]), tree, CONSTANT, const_eps(0.0), ZERO_ONE)
    spec = inverted_leaf_spec(n_per_leaf=4, noise=0.0)
    rich = make_synthetic(spec, seed=0)
    crossing = GroupTree([
        Group("ALL", ()),
        Group.from_conjuncts([("a1", "p")]),
        Group.from_conjuncts([("a2", "u")]),
    ])
    with pytest.raises(ValueError, match="invalid hierarchy"):
        mgl_tree(rich, crossing, CONSTANT, const_eps(0.0), ZERO_ONE)


def test_mgl_tree_determinism():
    spec = inverted_leaf_spec(n_per_leaf=60, noise=0.15)
    ds = make_synthetic(spec, seed=8)
    tree = build_hierarchy(ds.schema, list(spec.attributes))
    learner = LearnerSpec("tree", max_depth=2)
    eps = EpsilonSpec("scaled", scale=1.0)
    a = mgl_tree(ds, tree, learner, eps, ZERO_ONE)
    b = mgl_tree(ds, tree, learner, eps, ZERO_ONE)
    assert [t.to_json() for t in a.trace] == [t.to_json() for t in b.trace]
    assert np.array_equal(a.predict(ds), b.predict(ds))


# ---------------------------------------------------------------------------
# prepend
# ---------------------------------------------------------------------------

def test_prepend_hand_simulation():
    ds, tree = two_leaf_setup()
    cache = PredictorCache(ds)
    g_b = Group.from_conjuncts([("grp", "b")])
    global_fit = cache.erm(CONSTANT)
    own_b = cache.group_erm(CONSTANT, g_b)
    violation = group_risk(global_fit, ds, g_b, ZERO_ONE).value \
        - group_risk(own_b, ds, g_b, ZERO_ONE).value - 0.25
    assert violation == 0.75

    dlist = prepend(ds, tree, CONSTANT, const_eps(0.25), ZERO_ONE, cache=cache)
    assert [(e.group.id, e.source_id) for e in dlist.entries] == [("grp=b", "grp=b")]
    assert dlist.predict(ds).tolist() == [1, 1, 1, 0]
    assert termination_scan(dlist, ds, tree, cache=cache) == []


def test_prepend_infinite_margin_returns_bare_default():
    ds, tree = two_leaf_setup()
    dlist = prepend(ds, tree, CONSTANT, const_eps(math.inf), ZERO_ONE)
    assert len(dlist) == 0
    assert np.array_equal(dlist.predict(ds), erm(CONSTANT, ds).predict(ds))


def test_prepend_zero_margin_hits_cap_with_partial_payload():
    ds, tree = two_leaf_setup()
    with pytest.raises(PrependCapExceeded, match="cap=3") as excinfo:
        prepend(ds, tree, CONSTANT, const_eps(0.0), ZERO_ONE, cap=3)
    assert isinstance(excinfo.value.partial, DecisionList)
    assert len(excinfo.value.partial) == 3


def test_prepend_termination_scan_random_fixtures():
    rng = np.random.default_rng(10)
    for _ in range(5):
        spec = random_hierarchical_spec(rng)
        ds = make_synthetic(spec, seed=int(rng.integers(1 << 30)))
        tree = build_hierarchy(ds.schema, list(spec.attributes))
        cache = PredictorCache(ds)
        eps = EpsilonSpec("scaled", scale=3.0)
        dlist = prepend(ds, tree, CONSTANT, eps, ZERO_ONE, cache=cache)
        assert termination_scan(dlist, ds, tree, cache=cache) == []


def test_decision_list_scan_semantics_brute_force():
    rng = np.random.default_rng(14)
    spec = inverted_leaf_spec(n_per_leaf=125, noise=0.3)
    ds = make_synthetic(spec, seed=2)
    assert ds.n == 1000
    groups = [
        Group.from_conjuncts([("a1", "q")]),
        Group.from_conjuncts([("a2", "u"), ("a1", "p")]),
        Group.from_conjuncts([("a3", "t")]),
    ]
    entries = [
        DecisionListEntry(g, FixedPredictor(rng.integers(0, 2, size=ds.n)), g.id)
        for g in groups
    ]
    default = FixedPredictor(rng.integers(0, 2, size=ds.n))
    dlist = DecisionList(entries, default, CONSTANT, const_eps(0.0), ZERO_ONE)
    got = dlist.predict(ds)
    for i in range(ds.n):
        row = ds.row(i)
        expected = None
        for e in entries:
            if e.group.contains_row(row):
                expected = e.predictor.predict(ds)[i]
                break
        if expected is None:
            expected = default.predict(ds)[i]
        assert got[i] == expected


def test_prepend_determinism():
    spec = inverted_leaf_spec(n_per_leaf=50, noise=0.1)
    ds = make_synthetic(spec, seed=6)
    tree = build_hierarchy(ds.schema, list(spec.attributes))
    eps = EpsilonSpec("scaled", scale=2.0)
    a = prepend(ds, tree, CONSTANT, eps, ZERO_ONE)
    b = prepend(ds, tree, CONSTANT, eps, ZERO_ONE)
    assert [(e.group.id, e.source_id) for e in a.entries] == \
        [(e.group.id, e.source_id) for e in b.entries]
    assert np.array_equal(a.predict(ds), b.predict(ds))


# ---------------------------------------------------------------------------
# decoupled
# ---------------------------------------------------------------------------

def test_decoupled_full_product_never_needs_fallback():
    spec = inverted_leaf_spec(n_per_leaf=20, noise=0.0)
    ds = make_synthetic(spec, seed=4)
    tree = build_hierarchy(ds.schema, list(spec.attributes))
    predictor = decoupled(ds, tree, CONSTANT, fallback="error")
    assert len(predictor.predict(ds)) == ds.n  # no RoutingError raised


def test_decoupled_single_leaf_equals_erm():
    ds, _ = two_leaf_setup()
    tree = GroupTree([Group("ALL", ())])
    predictor = decoupled(ds, tree, CONSTANT)
    assert np.array_equal(predictor.predict(ds), erm(CONSTANT, ds).predict(ds))


def test_decoupled_uncovered_rows_fallback_and_error():
    ds, full = two_leaf_setup()
    pruned = GroupTree([g for g in full.nodes if g.id != "grp=b"])
    routed = decoupled(ds, pruned, CONSTANT, fallback="root")
    assert np.array_equal(
        routed.predict(ds)[membership_vector(Group.from_conjuncts([("grp", "b")]), ds)],
        erm(CONSTANT, ds).predict(ds)[3:],
    )
    strict = decoupled(ds, pruned, CONSTANT, fallback="error")
    with pytest.raises(RoutingError, match="grp"):
        strict.predict(ds)


def test_decoupled_improves_each_leaf_on_planted_data():
    ds = make_synthetic(opposite_separators_spec(2000, noise=0.0), seed=31)
    tree = build_hierarchy(ds.schema, ["grp"])
    spec = LearnerSpec("logistic", iterations=500)
    cache = PredictorCache(ds)
    part = decoupled(ds, tree, spec, cache=cache)
    global_fit = cache.erm(spec)
    for cat in ("a", "b"):
        mask = membership_vector(Group.from_conjuncts([("grp", cat)]), ds)
        y = ds.labels()[mask]
        assert float((part.predict(ds)[mask] != y).mean()) < \
            float((global_fit.predict(ds)[mask] != y).mean())


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------

def test_audit_clean_on_fresh_runs():
    rng = np.random.default_rng(20)
    for _ in range(3):
        spec = random_hierarchical_spec(rng)
        ds = make_synthetic(spec, seed=int(rng.integers(1 << 30)))
        tree = build_hierarchy(ds.schema, list(spec.attributes))
        cache = PredictorCache(ds)
        for eps in (const_eps(0.0), EpsilonSpec("scaled", scale=2.0)):
            predictor = mgl_tree(ds, tree, CONSTANT, eps, ZERO_ONE, cache=cache)
            verdict = monotonicity_audit(
                predictor.trace, ds, tree, CONSTANT, eps, ZERO_ONE, cache=cache)
            assert verdict.ok, verdict.describe()


def test_audit_flags_tampered_trace():
    spec = inverted_leaf_spec(n_per_leaf=50, noise=0.1)
    ds = make_synthetic(spec, seed=12)
    tree = build_hierarchy(ds.schema, list(spec.attributes))
    predictor = mgl_tree(ds, tree, CONSTANT, const_eps(0.3), ZERO_ONE)
    trace = list(predictor.trace)
    flip_at = next(i for i, t in enumerate(trace) if t.decision == "inherited")
    trace[flip_at] = dataclasses.replace(trace[flip_at], decision="updated")
    verdict = monotonicity_audit(trace, ds, tree, CONSTANT, const_eps(0.3), ZERO_ONE)
    assert not verdict.ok
    assert any(kind == "rule" and group == trace[flip_at].group_id
               for _, group, kind, _ in verdict.violations)


def test_audit_rejects_mismatched_trace():
    ds, tree = two_leaf_setup()
    predictor = mgl_tree(ds, tree, CONSTANT, const_eps(0.0), ZERO_ONE)
    with pytest.raises(ValueError, match="breadth-first"):
        monotonicity_audit(predictor.trace[:1], ds, tree, CONSTANT, const_eps(0.0), ZERO_ONE)


def test_working_predictors_share_identity_when_inherited():
    ds, tree = two_leaf_setup()
    predictor = mgl_tree(ds, tree, CONSTANT, const_eps(math.inf), ZERO_ONE)
    root_pred = predictor.working["ALL"]
    assert predictor.working["grp=a"] is root_pred
    assert predictor.working["grp=b"] is root_pred
    assert predictor.source() == {"ALL": "ALL", "grp=a": "ALL", "grp=b": "ALL"}


def test_excess_report_carries_uc_width_for_closed_form_margins():
    ds, tree = two_leaf_setup()
    eps = EpsilonSpec("finite_h", delta=0.05, h_size=4)
    predictor = mgl_tree(ds, tree, CONSTANT, eps, ZERO_ONE)
    rows, _ = excess_risk_report(predictor, ds)
    for row in rows:
        assert row["uc_width"] is not None
        assert row["epsilon"] == 2.0 * row["uc_width"]
    rows_const, _ = excess_risk_report(
        mgl_tree(ds, tree, CONSTANT, const_eps(0.1), ZERO_ONE), ds)
    assert all(r["uc_width"] is None for r in rows_const)


def test_mgl_tree_with_clipped_logistic_training_loss():
    from multigroup.risk import CLIPPED_LOGISTIC

    spec = inverted_leaf_spec(n_per_leaf=60, noise=0.1)
    ds = make_synthetic(spec, seed=23)
    tree = build_hierarchy(ds.schema, list(spec.attributes))
    cache = PredictorCache(ds)
    learner = LearnerSpec("logistic", iterations=200)
    predictor = mgl_tree(ds, tree, learner, EpsilonSpec("scaled", scale=1.0),
                         CLIPPED_LOGISTIC, cache=cache)
    assert predictor.loss is CLIPPED_LOGISTIC
    _, violations = excess_risk_report(predictor, ds, cache=cache)
    assert violations == []
    verdict = monotonicity_audit(predictor.trace, ds, tree, learner,
                                 EpsilonSpec("scaled", scale=1.0),
                                 CLIPPED_LOGISTIC, cache=cache)
    assert verdict.ok, verdict.describe()


def test_mgl_tree_with_bagged_trees_learner():
    spec = inverted_leaf_spec(n_per_leaf=40, noise=0.1)
    ds = make_synthetic(spec, seed=29)
    tree = build_hierarchy(ds.schema, list(spec.attributes))
    learner = LearnerSpec("bagged_trees", n_trees=5, max_depth=2)
    predictor = mgl_tree(ds, tree, learner, EpsilonSpec("scaled", scale=2.0), ZERO_ONE)
    _, violations = excess_risk_report(predictor, ds)
    assert violations == []
    again = mgl_tree(ds, tree, learner, EpsilonSpec("scaled", scale=2.0), ZERO_ONE)
    assert np.array_equal(predictor.predict(ds), again.predict(ds))
