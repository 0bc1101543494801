"""Model files: JSON serialization of trained predictors for audit and reuse.

Every model file embeds the schema, the hierarchy, the learner and margin
specs, and a fingerprint of the training data, so a model can be re-checked
later against the exact dataset that produced it.
"""

from __future__ import annotations

import hashlib
import json

from .algorithms import (
    DecisionList,
    DecisionListEntry,
    GroupTreePredictor,
    PartitionPredictor,
    TraceStep,
)
from .bounds import EpsilonSpec
from .data import Dataset, schema_from_json, schema_to_json
from .groups import Group, GroupTree, hierarchy_from_json, hierarchy_to_json
from .learners import FeatureEncoder, LearnerSpec, predictor_from_json, predictor_to_json
from .risk import loss_from_name


def dataset_fingerprint(ds: Dataset) -> str:
    digest = hashlib.sha256()
    digest.update(str(ds.n).encode())
    for name in ds.schema.column_names():
        digest.update(name.encode())
        arr = ds.columns[name]
        digest.update(str(arr.dtype).encode())
        digest.update(arr.tobytes())
    return digest.hexdigest()


def _dump(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _common_header(model_kind: str, train: Dataset, spec: LearnerSpec,
                   include_group_attributes: bool) -> dict:
    return {
        "model": model_kind,
        "learner": spec.to_json(),
        "schema": schema_to_json(train.schema),
        "include_group_attributes": include_group_attributes,
        "n_train": train.n,
        "dataset_fingerprint": dataset_fingerprint(train),
    }


def _eps_json(eps: EpsilonSpec) -> dict:
    doc = eps.to_json()
    if doc.get("value") == float("inf"):
        doc["value"] = "inf"
    return doc


def save_tree_model(path, predictor: GroupTreePredictor, train: Dataset,
                    include_group_attributes: bool = True) -> None:
    tree = predictor.tree
    source = predictor.source()
    trace_by_id = {t.group_id: t for t in predictor.trace}
    nodes = []
    for g in tree.nodes:
        entry = {
            "id": g.id,
            "depth": tree.depth(g.id),
            "decision": predictor.decision[g.id],
            "source": source[g.id],
        }
        step = trace_by_id.get(g.id)
        if step is not None:
            # json.dump/load round-trips inf as the Infinity literal
            entry.update({
                "n_g": step.n_g,
                "parent_risk": step.parent_risk,
                "candidate_risk": step.candidate_risk,
                "epsilon": step.epsilon,
                "err": step.err,
            })
        if source[g.id] == g.id:  # only nodes that own a fit carry parameters
            entry["predictor"] = predictor_to_json(predictor.working[g.id])
        nodes.append(entry)
    doc = _common_header("mgl_tree", train, predictor.learner_spec, include_group_attributes)
    doc.update({
        "hierarchy": hierarchy_to_json(tree),
        "epsilon": _eps_json(predictor.eps_spec),
        "loss": predictor.loss.kind,
        "nodes": nodes,
        "trace": [t.to_json() for t in predictor.trace],
    })
    _dump(doc, path)


def load_tree_model(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("model") != "mgl_tree":
        raise ValueError(f"not a tree model file: {path}")
    return doc


def rebuild_tree_predictor(doc: dict) -> tuple[GroupTreePredictor, str, int]:
    """Reconstruct the predictor stored in a tree model file.

    Returns (predictor, dataset fingerprint, n_train) so callers can verify
    the data before trusting the model.
    """
    schema = schema_from_json(doc["schema"])
    tree = hierarchy_from_json(doc["hierarchy"], schema)
    encoder = FeatureEncoder(schema, doc.get("include_group_attributes", True))
    spec = LearnerSpec.from_json(doc["learner"])
    eps = EpsilonSpec.from_json(doc["epsilon"])
    loss = loss_from_name(doc["loss"])

    owned: dict[str, object] = {}
    source: dict[str, str] = {}
    decision: dict[str, str] = {}
    for entry in doc["nodes"]:
        source[entry["id"]] = entry["source"]
        decision[entry["id"]] = entry["decision"]
        if "predictor" in entry:
            owned[entry["id"]] = predictor_from_json(entry["predictor"], encoder)
    working = {}
    for g in tree.nodes:
        src = source[g.id]
        if src not in owned:
            raise ValueError(f"model file lacks the predictor for source {src!r}")
        working[g.id] = owned[src]
    trace = [TraceStep.from_json(t) for t in doc["trace"]]
    predictor = GroupTreePredictor(tree, working, decision, trace, spec, eps, loss)
    return predictor, doc["dataset_fingerprint"], doc["n_train"]


def save_list_model(path, dlist: DecisionList, train: Dataset,
                    include_group_attributes: bool = True,
                    tree: GroupTree | None = None) -> None:
    doc = _common_header("prepend", train, dlist.learner_spec, include_group_attributes)
    if tree is not None:
        doc["hierarchy"] = hierarchy_to_json(tree)
    doc.update({
        "epsilon": _eps_json(dlist.eps_spec),
        "loss": dlist.loss.kind,
        "default": predictor_to_json(dlist.default),
        "entries": [
            {
                "group": {"id": e.group.id, "conjuncts": [list(c) for c in e.group.conjuncts]},
                "source": e.source_id,
                "predictor": predictor_to_json(e.predictor),
            }
            for e in dlist.entries
        ],
    })
    _dump(doc, path)


def load_list_model(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("model") != "prepend":
        raise ValueError(f"not a decision list model file: {path}")
    return doc


def rebuild_decision_list(doc: dict) -> tuple[DecisionList, str, int]:
    schema = schema_from_json(doc["schema"])
    encoder = FeatureEncoder(schema, doc.get("include_group_attributes", True))
    spec = LearnerSpec.from_json(doc["learner"])
    eps = EpsilonSpec.from_json(doc["epsilon"])
    loss = loss_from_name(doc["loss"])
    entries = [
        DecisionListEntry(
            group=Group(e["group"]["id"], tuple(tuple(c) for c in e["group"]["conjuncts"])),
            predictor=predictor_from_json(e["predictor"], encoder),
            source_id=e["source"],
        )
        for e in doc["entries"]
    ]
    default = predictor_from_json(doc["default"], encoder)
    dlist = DecisionList(entries, default, spec, eps, loss)
    return dlist, doc["dataset_fingerprint"], doc["n_train"]


def save_partition_model(path, predictor: PartitionPredictor, train: Dataset,
                         include_group_attributes: bool = True) -> None:
    doc = _common_header("decoupled", train, predictor.learner_spec, include_group_attributes)
    doc.update({
        "fallback": "root" if predictor.fallback is not None else "error",
        "leaves": [
            {
                "id": leaf.id,
                "conjuncts": [list(c) for c in leaf.conjuncts],
                "predictor": predictor_to_json(predictor.per_leaf[leaf.id]),
            }
            for leaf in predictor.leaves
        ],
        "root_predictor": predictor_to_json(predictor.fallback)
        if predictor.fallback is not None else None,
    })
    _dump(doc, path)


def save_plain_model(path, predictor, train: Dataset, spec: LearnerSpec,
                     include_group_attributes: bool = True) -> None:
    doc = _common_header("erm", train, spec, include_group_attributes)
    doc["predictor"] = predictor_to_json(predictor)
    _dump(doc, path)
