"""Run-config files: one JSON document that pins a whole reproducible run."""

from __future__ import annotations

import json
from dataclasses import dataclass

from .bounds import EpsilonSpec
from .data import AttributeSchema, schema_from_json
from .evaluation import METHODS, ExperimentConfig
from .learners import LearnerSpec
from .risk import loss_from_name


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


_TOP_KEYS = {
    "dataset", "schema", "attribute_order", "hierarchy_nodes", "learners",
    "epsilon", "loss", "split", "methods", "include_group_attributes",
    "prepend_cap", "output_dir",
}
_SPLIT_KEYS = {"test_fraction", "seed", "trials"}


@dataclass
class RunConfig:
    schema: AttributeSchema
    attribute_order: tuple[str, ...]
    hierarchy_nodes: list | None
    learners: tuple[LearnerSpec, ...]
    epsilon: EpsilonSpec
    loss: str
    test_fraction: float
    seed: int
    trials: int
    methods: tuple[str, ...]
    include_group_attributes: bool
    prepend_cap: int | None
    dataset: str | None
    output_dir: str | None

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig(
            schema=self.schema,
            attribute_order=self.attribute_order,
            learners=self.learners,
            epsilon=self.epsilon,
            loss=self.loss,
            trials=self.trials,
            test_fraction=self.test_fraction,
            seed=self.seed,
            methods=self.methods,
            include_group_attributes=self.include_group_attributes,
            prepend_cap=self.prepend_cap,
            dataset_path=self.dataset,
            hierarchy_nodes=tuple(
                tuple(tuple(c) for c in conj) for conj in self.hierarchy_nodes
            ) if self.hierarchy_nodes is not None else None,
        )


def _parse_override_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``--set dotted.path=value`` pairs onto the raw config dict."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        path, raw = item.split("=", 1)
        keys = path.split(".")
        target = doc
        for key in keys[:-1]:
            target = target.setdefault(key, {})
            if not isinstance(target, dict):
                raise ConfigError(f"cannot override through non-object key {key!r}")
        target[keys[-1]] = _parse_override_value(raw)
    return doc


def parse_run_config(doc: dict) -> RunConfig:
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for required in ("schema", "learners", "epsilon"):
        if required not in doc:
            raise ConfigError(f"config missing required key {required!r}")
    if "attribute_order" not in doc and "hierarchy_nodes" not in doc:
        raise ConfigError("config needs attribute_order or hierarchy_nodes")

    try:
        schema = schema_from_json(doc["schema"])
        learners = tuple(LearnerSpec.from_json(entry) for entry in doc["learners"])
        eps = EpsilonSpec.from_json(doc["epsilon"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    if not learners:
        raise ConfigError("config needs at least one learner")

    split_doc = doc.get("split", {})
    unknown = set(split_doc) - _SPLIT_KEYS
    if unknown:
        raise ConfigError(f"unknown split keys: {sorted(unknown)}")

    loss = doc.get("loss", "zero_one")
    try:
        loss_from_name(loss)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    methods = tuple(doc.get("methods", list(METHODS)))
    bad = set(methods) - set(METHODS)
    if bad:
        raise ConfigError(f"unknown methods: {sorted(bad)}")

    trials = int(split_doc.get("trials", 10))
    if trials < 1:
        raise ConfigError("split.trials must be >= 1")

    return RunConfig(
        schema=schema,
        attribute_order=tuple(doc.get("attribute_order", ())),
        hierarchy_nodes=doc.get("hierarchy_nodes"),
        learners=learners,
        epsilon=eps,
        loss=loss,
        test_fraction=float(split_doc.get("test_fraction", 0.2)),
        seed=int(split_doc.get("seed", 0)),
        trials=trials,
        methods=methods,
        include_group_attributes=bool(doc.get("include_group_attributes", True)),
        prepend_cap=doc.get("prepend_cap"),
        dataset=doc.get("dataset"),
        output_dir=doc.get("output_dir"),
    )


def load_run_config(path, overrides: list[str] | None = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config root must be an object: {path}")
    if overrides:
        doc = apply_overrides(doc, overrides)
    return parse_run_config(doc)
