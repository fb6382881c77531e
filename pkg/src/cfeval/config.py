"""Run configuration: one JSON document, nested keys, flag overrides."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .errors import UsageError
from .eventlog import InterventionSpec, LogSchema
from .simulate import SIM_SCHEMA, intervention_spec
from .train import FitOptions, SearchSpace


def load_config(path: str | Path, overrides: list[str] | None = None) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise UsageError("config must be a JSON object")
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not of the form key.path=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise UsageError(f"override {dotted!r} crosses a non-object key")
        node[parts[-1]] = value
    if "master_seed" not in config:
        raise UsageError("config requires a master_seed")
    return config


def config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def get(config: dict, dotted: str, default=None, required: bool = False):
    node = config
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            if required:
                raise UsageError(f"config is missing required key {dotted!r}")
            return default
        node = node[part]
    return node


def schema_from_config(config: dict) -> LogSchema:
    doc = get(config, "data.schema")
    return SIM_SCHEMA if doc is None else LogSchema.from_dict(doc)


def intervention_from_config(config: dict) -> InterventionSpec:
    doc = get(config, "intervention", required=True)
    if isinstance(doc, str):
        return intervention_spec(doc)
    if "builtin" in doc:
        return intervention_spec(doc["builtin"])
    return InterventionSpec.from_dict(doc)


def fit_options_from_config(config: dict) -> FitOptions:
    block = get(config, "train", default={})
    search = block.get("search", {})
    space = SearchSpace(
        hidden_dims=tuple(search.get("hidden_dims", (32, 64, 128))),
        learning_rates=tuple(search.get("learning_rates", (1e-2, 1e-3, 1e-4))),
        batch_sizes=tuple(search.get("batch_sizes", (64, 128, 256))),
        budget=search.get("budget", 20),
    )
    return FitOptions(
        max_epochs=block.get("max_epochs", 100),
        patience=block.get("patience", 10),
        search=space,
        val_fraction=block.get("val_fraction", 0.2),
        ensemble_mode=get(config, "learner.ensemble_mode", default="average"),
    )


def head_template_from_config(config: dict) -> dict:
    doc = get(config, "head", default={"kind": "mixed_flow", "atoms": [0.0],
                                       "components": 8})
    template = {"kind": doc["kind"]}
    if "atoms" in doc:
        template["atoms"] = tuple(doc["atoms"])
    if "components" in doc:
        template["components"] = doc["components"]
    if "n_classes" in doc:
        template["n_classes"] = doc["n_classes"]
    return template
