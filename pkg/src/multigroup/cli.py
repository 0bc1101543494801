"""Command-line front-end.

Subcommands: validate-hierarchy, train, evaluate, audit, synth. Every
command is driven by a JSON run-config (``--config``) with optional
``--set dotted.key=value`` overrides, and is deterministic under a fixed
config. Exit codes: 0 success, 1 domain failure, 2 usage or I/O failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


from .algorithms import (
    PrependCapExceeded,
    decoupled,
    excess_risk_report,
    mgl_tree,
    monotonicity_audit,
    prepend,
    termination_scan,
)
from .config import ConfigError, RunConfig, load_run_config
from .data import DataError, SchemaError, load_csv, make_synthetic, schema_to_json, \
    synthetic_spec_from_json, write_csv
from .evaluation import run_experiment
from .groups import build_hierarchy, hierarchy_from_json, validate_hierarchical
from .learners import EmptyGroupError, FeatureEncoder, PredictorCache
from .modelio import (
    dataset_fingerprint,
    rebuild_decision_list,
    rebuild_tree_predictor,
    save_list_model,
    save_partition_model,
    save_plain_model,
    save_tree_model,
)
from .risk import loss_from_name


def _build_tree(cfg: RunConfig, schema):
    if cfg.hierarchy_nodes is not None:
        return hierarchy_from_json({"nodes": cfg.hierarchy_nodes}, schema)
    return build_hierarchy(schema, cfg.attribute_order)


def cmd_validate_hierarchy(args) -> int:
    try:
        cfg = load_run_config(args.config, args.set)
        ds = None
        if cfg.dataset:
            ds = load_csv(cfg.dataset, cfg.schema)
        schema = ds.schema if ds is not None else cfg.schema
        tree = _build_tree(cfg, schema)
    except (ConfigError, SchemaError, DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    verdict = validate_hierarchical(tree.nodes, ds)
    print(verdict.describe())
    return 0 if verdict.valid else 1


def _print_train_table(tree, risks_by_method, counts):
    methods = sorted(risks_by_method)
    header = f"{'group':<40}{'n_g':>8}" + "".join(f"{m:>14}" for m in methods)
    print(header)
    for g in tree.nodes:
        cells = ""
        for m in methods:
            value = risks_by_method[m].get(g.id)
            cells += f"{'-':>14}" if value is None else f"{value:>14.4f}"
        print(f"{g.id:<40}{counts[g.id]:>8}" + cells)


def cmd_train(args) -> int:
    try:
        cfg = load_run_config(args.config, args.set)
        if not cfg.dataset:
            raise ConfigError("train needs a dataset path in the config")
        out_dir = args.out or cfg.output_dir
        if not out_dir:
            raise ConfigError("train needs an output directory (--out or output_dir)")
        train = load_csv(cfg.dataset, cfg.schema)
    except (ConfigError, SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    os.makedirs(out_dir, exist_ok=True)
    try:
        tree = _build_tree(cfg, train.schema)
        loss = loss_from_name(cfg.loss)
        encoder = FeatureEncoder(train.schema, cfg.include_group_attributes)
        cache = PredictorCache(train, encoder)
        masks = tree.masks(train)
        counts = {g.id: int(masks[i].sum()) for i, g in enumerate(tree.nodes)}

        for ls in cfg.learners:
            label = ls.label()
            risks_by_method = {}

            def group_risks(predictor):
                losses = loss.per_example(predictor, train)
                return {
                    g.id: float(losses[masks[i]].mean()) if counts[g.id] else None
                    for i, g in enumerate(tree.nodes)
                }

            for method in cfg.methods:
                if method == "erm":
                    predictor = cache.erm(ls)
                    save_plain_model(os.path.join(out_dir, f"erm.{label}.model.json"),
                                     predictor, train, ls, cfg.include_group_attributes)
                    risks_by_method["erm"] = group_risks(predictor)
                elif method == "mgl_tree":
                    predictor = mgl_tree(train, tree, ls, cfg.epsilon, loss, cache=cache)
                    save_tree_model(os.path.join(out_dir, f"mgl_tree.{label}.model.json"),
                                    predictor, train, cfg.include_group_attributes)
                    trace_path = os.path.join(out_dir, f"mgl_tree.{label}.trace.jsonl")
                    with open(trace_path, "w", encoding="utf-8") as fh:
                        for step in predictor.trace:
                            fh.write(json.dumps(step.to_json(), sort_keys=True) + "\n")
                    risks_by_method["mgl_tree"] = group_risks(predictor)
                elif method == "prepend":
                    dlist = prepend(train, tree, ls, cfg.epsilon, loss,
                                    cap=cfg.prepend_cap, cache=cache)
                    save_list_model(os.path.join(out_dir, f"prepend.{label}.model.json"),
                                    dlist, train, cfg.include_group_attributes, tree=tree)
                    risks_by_method["prepend"] = group_risks(dlist)
                elif method == "decoupled":
                    predictor = decoupled(train, tree, ls, cache=cache)
                    save_partition_model(
                        os.path.join(out_dir, f"decoupled.{label}.model.json"),
                        predictor, train, cfg.include_group_attributes)
                    risks_by_method["decoupled"] = group_risks(predictor)
                elif method == "group_erm":
                    per_group = {}
                    for i, g in enumerate(tree.nodes):
                        if counts[g.id]:
                            predictor = cache.group_erm(ls, g)
                            losses = loss.per_example(predictor, train)
                            per_group[g.id] = float(losses[masks[i]].mean())
                    risks_by_method["group_erm"] = per_group

            print(f"== learner {label}: per-group training risk ({cfg.loss})")
            _print_train_table(tree, risks_by_method, counts)
    except PrependCapExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (EmptyGroupError, DataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def cmd_evaluate(args) -> int:
    try:
        cfg = load_run_config(args.config, args.set)
        if not cfg.dataset:
            raise ConfigError("evaluate needs a dataset path in the config")
        out_dir = args.out or cfg.output_dir
        if not out_dir:
            raise ConfigError("evaluate needs an output directory (--out or output_dir)")
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        report = run_experiment(cfg.experiment(), jobs=args.jobs)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, SchemaError, EmptyGroupError, PrependCapExceeded, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_csv_text())
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json_text())
    print("worst-group mean test error:")
    for (method, learner), value in sorted(report.worst_group_errors().items()):
        shown = "-" if value is None else f"{value:.4f}"
        print(f"  {method:<12}{learner:<20}{shown}")
    return 0


def cmd_audit(args) -> int:
    try:
        with open(args.model, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    kind = doc.get("model")
    if kind not in ("mgl_tree", "prepend"):
        print(f"error: model kind {kind!r} is not auditable", file=sys.stderr)
        return 2
    try:
        if kind == "mgl_tree":
            predictor, fingerprint, n_train = rebuild_tree_predictor(doc)
        else:
            predictor, fingerprint, n_train = rebuild_decision_list(doc)
        train = load_csv(args.data, _schema_of(doc))
    except (SchemaError, DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if train.n != n_train or dataset_fingerprint(train) != fingerprint:
        print("error: dataset does not match the model's training data", file=sys.stderr)
        return 2

    cache = PredictorCache(train, FeatureEncoder(
        train.schema, doc.get("include_group_attributes", True)))
    problems = 0
    if kind == "mgl_tree":
        tree = predictor.tree
        fresh = mgl_tree(train, tree, predictor.learner_spec, predictor.eps_spec,
                         predictor.loss, cache=cache)
        for stored, replayed in zip(predictor.trace, fresh.trace):
            if stored.decision != replayed.decision:
                print(f"decision mismatch at {stored.group_id}: "
                      f"stored {stored.decision}, replay {replayed.decision}")
                problems += 1
        mismatches = int((predictor.predict(train) != fresh.predict(train)).sum())
        if mismatches:
            print(f"stored predictor disagrees with replay on {mismatches} training rows")
            problems += 1
        verdict = monotonicity_audit(predictor.trace, train, tree,
                                     predictor.learner_spec, predictor.eps_spec,
                                     predictor.loss, cache=cache)
        if not verdict.ok:
            print(verdict.describe())
            problems += len(verdict.violations)
        _, violations = excess_risk_report(predictor, train, cache=cache)
        for row in violations:
            print(f"margin violation on {row['group_id']}: excess {row['excess']}")
            problems += 1
    else:
        if "hierarchy" not in doc:
            print("error: decision list model lacks its group collection", file=sys.stderr)
            return 2
        tree = hierarchy_from_json(doc["hierarchy"], _schema_of(doc))
        for gid, source, value in termination_scan(predictor, train, tree, cache=cache):
            print(f"stopping-test violation: group {gid} candidate {source} value {value}")
            problems += 1

    if problems:
        print(f"AUDIT FAILED: {problems} problem(s)")
        return 1
    print("AUDIT CLEAN")
    return 0


def _schema_of(doc):
    from .data import schema_from_json

    return schema_from_json(doc["schema"])


def cmd_synth(args) -> int:
    try:
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = synthetic_spec_from_json(json.load(fh))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    ds = make_synthetic(spec, args.seed)
    write_csv(ds, args.out)
    schema_path = args.schema_out or args.out + ".schema.json"
    with open(schema_path, "w", encoding="utf-8") as fh:
        json.dump(schema_to_json(ds.schema), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {ds.n} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multigroup",
        description="Train and evaluate group-aware predictors over hierarchical groups.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-hierarchy", help="check the configured hierarchy")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_validate_hierarchy)

    p = sub.add_parser("train", help="fit all configured methods on the full dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run the trial protocol and write reports")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("audit", help="re-check a trained model against its data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("synth", help="emit a synthetic fixture CSV")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--schema-out", default=None)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
