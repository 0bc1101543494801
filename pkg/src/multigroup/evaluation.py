"""Experiment harness: repeated trials, per-group test error, aggregation.

Each trial draws a fresh train/test split, fits every configured method on
the train side, and measures misclassification restricted to every group of
the hierarchy on the test side. Test-side risks always use zero-one loss;
the configured loss only drives the training-time update decisions. Groups
with no test examples in a trial contribute nothing for that trial.
"""

from __future__ import annotations

import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .algorithms import decoupled, excess_risk_report, mgl_tree, prepend
from .bounds import EpsilonSpec
from .data import Dataset, SplitSpec, load_csv, split
from .groups import GroupTree, build_hierarchy, hierarchy_from_json
from .learners import FeatureEncoder, LearnerSpec, PredictorCache
from .risk import loss_from_name

METHODS = ("erm", "group_erm", "prepend", "mgl_tree", "decoupled")


@dataclass(frozen=True)
class ExperimentConfig:
    schema: object
    attribute_order: tuple[str, ...]
    learners: tuple[LearnerSpec, ...]
    epsilon: EpsilonSpec
    loss: str = "zero_one"
    trials: int = 10
    test_fraction: float = 0.2
    seed: int = 0
    methods: tuple[str, ...] = METHODS
    include_group_attributes: bool = True
    prepend_cap: int | None = None
    dataset_path: str | None = None
    hierarchy_nodes: tuple | None = None  # explicit conjunct lists; overrides attribute_order

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        loss_from_name(self.loss)  # validate early

    def echo(self) -> dict:
        return {
            "attribute_order": list(self.attribute_order),
            "learners": [ls.to_json() for ls in self.learners],
            "epsilon": self.epsilon.to_json(),
            "loss": self.loss,
            "trials": self.trials,
            "test_fraction": self.test_fraction,
            "seed": self.seed,
            "methods": list(self.methods),
            "include_group_attributes": self.include_group_attributes,
            "prepend_cap": self.prepend_cap,
            "dataset_path": self.dataset_path,
            "hierarchy_nodes": [list(map(list, c)) for c in self.hierarchy_nodes]
            if self.hierarchy_nodes is not None else None,
            "prepend_candidates": "group_restricted_fits_plus_global",
        }


def _trial_errors(cfg: ExperimentConfig, ds: Dataset, tree: GroupTree, trial: int):
    """Fit every (learner, method) on one split; returns per-group test errors."""
    train, test = split(ds, SplitSpec(cfg.test_fraction, cfg.seed, trial))
    encoder = FeatureEncoder(ds.schema, cfg.include_group_attributes)
    cache = PredictorCache(train, encoder)
    train_loss = loss_from_name(cfg.loss)

    test_masks = tree.masks(test)
    train_masks = tree.masks(train)
    n_test = {g.id: int(test_masks[i].sum()) for i, g in enumerate(tree.nodes)}

    errors: dict[tuple[str, str], dict[str, float | None]] = {}
    summaries: dict[tuple[str, str], dict] = {}

    def per_group(predictor) -> dict[str, float | None]:
        losses = (predictor.predict(test) != test.labels()).astype(np.float64)
        out = {}
        for i, g in enumerate(tree.nodes):
            mask = test_masks[i]
            out[g.id] = float(losses[mask].mean()) if mask.any() else None
        return out

    for ls in cfg.learners:
        label = ls.label()
        for method in cfg.methods:
            try:
                if method == "erm":
                    errors[(method, label)] = per_group(cache.erm(ls))
                elif method == "decoupled":
                    errors[(method, label)] = per_group(decoupled(train, tree, ls, cache=cache))
                elif method == "mgl_tree":
                    predictor = mgl_tree(train, tree, ls, cfg.epsilon, train_loss, cache=cache)
                    errors[(method, label)] = per_group(predictor)
                    decisions = [t.decision for t in predictor.trace]
                    _, violations = excess_risk_report(predictor, train, cache=cache)
                    summaries[(method, label)] = {
                        "updated": decisions.count("updated"),
                        "inherited": decisions.count("inherited"),
                        "empty": decisions.count("inherited_empty"),
                        "train_margin_violations": len(violations),
                    }
                elif method == "prepend":
                    dlist = prepend(train, tree, ls, cfg.epsilon, train_loss,
                                    cap=cfg.prepend_cap, cache=cache)
                    errors[(method, label)] = per_group(dlist)
                    summaries[(method, label)] = {"list_length": len(dlist)}
                elif method == "group_erm":
                    out: dict[str, float | None] = {}
                    for i, g in enumerate(tree.nodes):
                        if n_test[g.id] == 0 or not train_masks[i].any():
                            out[g.id] = None
                            continue
                        predictor = cache.group_erm(ls, g)
                        rows = np.flatnonzero(test_masks[i])
                        sub = test.take(rows)
                        out[g.id] = float((predictor.predict(sub) != sub.labels()).mean())
                    errors[(method, label)] = out
            except Exception as exc:
                raise RuntimeError(
                    f"method {method!r} (learner {label}) failed in trial {trial}: {exc}"
                ) from exc
    return trial, n_test, errors, summaries


@dataclass
class EvalReport:
    config: dict
    group_ids: list[str]
    group_depths: dict[str, int]
    methods: list[str]
    learners: list[str]
    trials: int
    raw: dict  # (method, learner) -> group_id -> [error or None per trial]
    n_test: dict  # group_id -> [count per trial]
    trace_summaries: dict = field(default_factory=dict)

    def aggregate_rows(self) -> list[dict]:
        rows = []
        for method in self.methods:
            for learner in self.learners:
                series = self.raw[(method, learner)]
                for gid in self.group_ids:
                    values = [v for v in series[gid] if v is not None]
                    k = len(values)
                    mean = float(np.mean(values)) if k else None
                    if k >= 2:
                        stderr = float(np.std(values, ddof=1) / np.sqrt(k))
                    else:
                        stderr = 0.0 if k == 1 else None
                    rows.append({
                        "method": method,
                        "learner": learner,
                        "group_id": gid,
                        "depth": self.group_depths[gid],
                        "mean_error": mean,
                        "stderr": stderr,
                        "mean_n_g": float(np.mean(self.n_test[gid])),
                        "trials_present": k,
                    })
        return rows

    def to_csv_text(self) -> str:
        out = io.StringIO()
        cols = ["method", "learner", "group_id", "depth", "mean_error", "stderr",
                "mean_n_g", "trials_present"]
        out.write(",".join(cols) + "\n")
        for row in self.aggregate_rows():
            cells = []
            for c in cols:
                v = row[c]
                cells.append("" if v is None else (repr(v) if isinstance(v, float) else str(v)))
            out.write(",".join(cells) + "\n")
        return out.getvalue()

    def to_json_text(self) -> str:
        doc = {
            "config": self.config,
            "groups": [
                {"id": gid, "depth": self.group_depths[gid], "n_test": self.n_test[gid]}
                for gid in self.group_ids
            ],
            "raw": [
                {
                    "method": method,
                    "learner": learner,
                    "errors": {gid: self.raw[(method, learner)][gid] for gid in self.group_ids},
                }
                for method in self.methods
                for learner in self.learners
            ],
            "trace_summaries": [
                {"method": m, "learner": l, "trial": t, **summary}
                for (m, l, t), summary in sorted(self.trace_summaries.items())
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def mean_error(self, method: str, learner: str, group_id: str) -> float | None:
        values = [v for v in self.raw[(method, learner)][group_id] if v is not None]
        return float(np.mean(values)) if values else None

    def compare(self, method_a: str, method_b: str, learner: str | None = None) -> list[dict]:
        """Per-group deltas (a minus b), sorted by delta ascending."""
        for m in (method_a, method_b):
            if m not in self.methods:
                raise ValueError(f"method {m!r} not in report")
        learner = learner if learner is not None else self.learners[0]
        rows = []
        for gid in self.group_ids:
            series_a = self.raw[(method_a, learner)][gid]
            series_b = self.raw[(method_b, learner)][gid]
            paired = [(a, b) for a, b in zip(series_a, series_b)
                      if a is not None and b is not None]
            if paired:
                deltas = [a - b for a, b in paired]
                delta = float(np.mean(deltas))
                k = len(deltas)
                stderr = float(np.std(deltas, ddof=1) / np.sqrt(k)) if k >= 2 else 0.0
                error_a = float(np.mean([a for a, _ in paired]))
                error_b = float(np.mean([b for _, b in paired]))
            else:
                delta = stderr = error_a = error_b = None
            rows.append({
                "group_id": gid,
                "depth": self.group_depths[gid],
                "error_a": error_a,
                "error_b": error_b,
                "delta": delta,
                "delta_stderr": stderr,
            })
        rows.sort(key=lambda r: (r["delta"] is None, r["delta"], r["group_id"]))
        return rows

    def worst_group_errors(self) -> dict[tuple[str, str], float | None]:
        out = {}
        for method in self.methods:
            for learner in self.learners:
                means = [self.mean_error(method, learner, gid) for gid in self.group_ids]
                means = [m for m in means if m is not None]
                out[(method, learner)] = max(means) if means else None
        return out


def run_experiment(cfg: ExperimentConfig, dataset: Dataset | None = None,
                   jobs: int = 1) -> EvalReport:
    if dataset is None:
        if cfg.dataset_path is None:
            raise ValueError("config has no dataset path and no dataset was supplied")
        dataset = load_csv(cfg.dataset_path, cfg.schema)
    if cfg.hierarchy_nodes is not None:
        tree = hierarchy_from_json({"nodes": cfg.hierarchy_nodes}, dataset.schema)
    else:
        tree = build_hierarchy(dataset.schema, cfg.attribute_order)

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(
                _trial_errors,
                [cfg] * cfg.trials, [dataset] * cfg.trials, [tree] * cfg.trials,
                range(cfg.trials),
            ))
    else:
        outcomes = [_trial_errors(cfg, dataset, tree, t) for t in range(cfg.trials)]
    outcomes.sort(key=lambda item: item[0])

    learner_labels = [ls.label() for ls in cfg.learners]
    raw = {
        (method, label): {g.id: [None] * cfg.trials for g in tree.nodes}
        for method in cfg.methods
        for label in learner_labels
    }
    n_test = {g.id: [0] * cfg.trials for g in tree.nodes}
    trace_summaries = {}
    for trial, counts, errors, summaries in outcomes:
        for gid, c in counts.items():
            n_test[gid][trial] = c
        for key, per_group in errors.items():
            for gid, err in per_group.items():
                raw[key][gid][trial] = err
        for (method, label), summary in summaries.items():
            trace_summaries[(method, label, trial)] = summary

    return EvalReport(
        config=cfg.echo(),
        group_ids=[g.id for g in tree.nodes],
        group_depths={g.id: tree.depth(g.id) for g in tree.nodes},
        methods=list(cfg.methods),
        learners=learner_labels,
        trials=cfg.trials,
        raw=raw,
        n_test=n_test,
        trace_summaries=trace_summaries,
    )
