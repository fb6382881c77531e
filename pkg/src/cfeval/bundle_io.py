"""Versioned evaluator-bundle files.

A bundle file is one JSON document with canonical key ordering. All floats
travel as C99 hex strings (float.hex), so save -> load -> save is
byte-identical and parameter arrays round-trip bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .encode import EncoderState
from .errors import BundleFormatError
from .eventlog import InterventionSpec
from .heads import HeadSpec
from .learners import Ensemble, EvaluatorBundle, OutcomeModel, TreatmentModel

FORMAT_TAG = "cfeval-bundle"
VERSION = "v1"


def _array_to_doc(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape),
            "data": [float(x).hex() for x in arr.ravel(order="C")]}


def _array_from_doc(doc: dict) -> np.ndarray:
    values = np.array([float.fromhex(x) for x in doc["data"]], dtype=np.float64)
    return values.reshape(doc["shape"], order="C")


def _head_to_doc(head: HeadSpec) -> dict:
    return {"kind": head.kind, "n_classes": head.n_classes,
            "atoms": [float(a).hex() for a in head.atoms],
            "components": head.components,
            "y_mean": float(head.y_mean).hex(), "y_std": float(head.y_std).hex()}


def _head_from_doc(doc: dict) -> HeadSpec:
    return HeadSpec(doc["kind"], n_classes=doc["n_classes"],
                    atoms=tuple(float.fromhex(a) for a in doc["atoms"]),
                    components=doc["components"],
                    y_mean=float.fromhex(doc["y_mean"]),
                    y_std=float.fromhex(doc["y_std"]))


def _outcome_to_doc(model: OutcomeModel) -> dict:
    return {"kind": model.kind, "base": model.base,
            "head": _head_to_doc(model.head), "levels": list(model.levels),
            "hidden": model.hidden, "input_dim": model.input_dim,
            "case_dim": model.case_dim,
            "arrays": {k: _array_to_doc(v) for k, v in sorted(model.params.items())}}


def _outcome_from_doc(doc: dict) -> OutcomeModel:
    return OutcomeModel(doc["kind"], doc["base"], _head_from_doc(doc["head"]),
                        tuple(doc["levels"]), doc["hidden"], doc["input_dim"],
                        doc["case_dim"],
                        {k: _array_from_doc(v) for k, v in doc["arrays"].items()})


def _treatment_to_doc(model: TreatmentModel) -> dict:
    return {"base": model.base, "head": _head_to_doc(model.head),
            "levels": list(model.levels), "hidden": model.hidden,
            "input_dim": model.input_dim, "case_dim": model.case_dim,
            "marginal": [float(x).hex() for x in model.marginal],
            "arrays": {k: _array_to_doc(v) for k, v in sorted(model.params.items())}}


def _treatment_from_doc(doc: dict) -> TreatmentModel:
    return TreatmentModel(doc["base"], _head_from_doc(doc["head"]),
                          tuple(doc["levels"]), doc["hidden"], doc["input_dim"],
                          doc["case_dim"],
                          np.array([float.fromhex(x) for x in doc["marginal"]]),
                          {k: _array_from_doc(v) for k, v in doc["arrays"].items()})


def bundle_to_text(bundle: EvaluatorBundle) -> str:
    if isinstance(bundle.outcome, Ensemble):
        outcome_doc = {"kind": "ensemble", "mode": bundle.outcome.mode,
                       "members": {k: _outcome_to_doc(m)
                                   for k, m in sorted(bundle.outcome.members.items())}}
    else:
        outcome_doc = {"kind": "single", "model": _outcome_to_doc(bundle.outcome)}
    doc = {
        "format": FORMAT_TAG,
        "version": VERSION,
        "intervention": bundle.intervention.to_dict(),
        "encoder": bundle.encoder.to_dict(),
        "outcome": outcome_doc,
        "treatment": _treatment_to_doc(bundle.treatment),
        "metadata": {k: str(v) for k, v in sorted(bundle.metadata.items())},
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def bundle_from_text(text: str) -> EvaluatorBundle:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BundleFormatError(
            f"corrupt bundle file: {exc.msg} at byte {exc.pos}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_TAG:
        raise BundleFormatError("not a bundle file (missing format tag)")
    version = doc.get("version")
    if version != VERSION:
        raise BundleFormatError(
            f"bundle version mismatch: found {version!r}, expected {VERSION!r}")
    try:
        outcome_doc = doc["outcome"]
        if outcome_doc["kind"] == "ensemble":
            outcome = Ensemble({k: _outcome_from_doc(m)
                                for k, m in outcome_doc["members"].items()},
                               outcome_doc["mode"])
        else:
            outcome = _outcome_from_doc(outcome_doc["model"])
        return EvaluatorBundle(
            outcome=outcome,
            treatment=_treatment_from_doc(doc["treatment"]),
            encoder=EncoderState.from_dict(doc["encoder"]),
            intervention=InterventionSpec.from_dict(doc["intervention"]),
            metadata=dict(doc["metadata"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleFormatError(f"malformed bundle content: {exc}") from exc


def save_bundle(bundle: EvaluatorBundle, path: str | Path) -> None:
    Path(path).write_text(bundle_to_text(bundle), encoding="utf-8")


def load_bundle(path: str | Path) -> EvaluatorBundle:
    return bundle_from_text(Path(path).read_text(encoding="utf-8"))
