"""Reading and writing models, tables, parameter vectors and hyperparameters.

Models and vectors are JSON; contingency tables are CSV with one column
per variable plus a ``count`` column.  Every vector file carries the hash
of the model it was computed for, and reading it against another model
fails.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .graphs import UndirectedGraph
from .model import ContingencyTable, Model, ModelError, VariableSpace
from .param import FreeProbVector, FullProbTable, ThetaVector
from .prior import Hyperparameters


class FormatError(ModelError):
    """Raised for files that parse but do not describe what was expected."""


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dumps(payload) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path, payload):
    Path(path).write_text(dumps(payload), encoding="utf-8")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None


# -- models ----------------------------------------------------------------

def model_from_json(doc: dict) -> Model:
    """Build a model from ``variables`` plus one of ``graph``, ``generators``
    or ``interactions``; with none of them the model is saturated."""
    try:
        names = [v["name"] for v in doc["variables"]]
        levels = [int(v.get("levels", 2)) for v in doc["variables"]]
    except (KeyError, TypeError):
        raise FormatError("model needs a 'variables' list of {name, levels}") from None
    space = VariableSpace(tuple(names), tuple(levels))
    keys = [k for k in ("graph", "generators", "interactions") if k in doc]
    if len(keys) > 1:
        raise FormatError(f"model gives more than one of {keys}")
    if not keys:
        return Model.saturated(space)
    if keys[0] == "graph":
        edges = doc["graph"].get("edges", []) if isinstance(doc["graph"], dict) else doc["graph"]
        if any(len(e) != 2 for e in edges):
            raise FormatError("graph edges must be pairs")
        return Model.graphical(space, UndirectedGraph.from_edges(names, [tuple(e) for e in edges]))
    family = doc[keys[0]]
    if not family:
        raise FormatError("an empty family describes no model")
    return Model.from_family(space, [tuple(g) for g in family])


def read_model(path) -> Model:
    return model_from_json(read_json(path))


# -- contingency tables ----------------------------------------------------

def read_table(path, space: VariableSpace) -> ContingencyTable:
    """CSV with a header naming every variable and a ``count`` column.

    Cells that do not appear are zero; repeated cells add up.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [v for v in space.variables if v not in header]
        if missing or "count" not in header:
            raise FormatError(f"{path}: header must name {list(space.variables)} and 'count'")
        counts = np.zeros(space.shape)
        for row in reader:
            try:
                cell = tuple(int(row[v]) for v in space.variables)
                n = float(row["count"])
            except (TypeError, ValueError):
                raise FormatError(f"{path}: bad row {row}") from None
            if any(not 0 <= c < k for c, k in zip(cell, space.levels)):
                raise FormatError(f"{path}: cell {cell} is out of range")
            counts[cell] += n
    return ContingencyTable(space, counts)


def table_to_csv(table: ContingencyTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(table.space.variables) + ["count"])
    for cell in np.ndindex(*table.space.shape):
        w.writerow(list(cell) + [repr(float(table.counts[cell]))])
    return buf.getvalue()


# -- labelled vectors ------------------------------------------------------

def _entries(model: Model, values) -> list:
    return [{"set": list(d), "cell": list(c), "value": float(v)} for (d, c), v in zip(model.index, values)]


def _vector(model: Model, entries, what: str) -> np.ndarray:
    out = np.full(model.dim, np.nan)
    for e in entries:
        try:
            label = (model.space.canonical(e["set"]), tuple(int(c) for c in e["cell"]))
            k = model.position[label]
        except KeyError:
            raise FormatError(f"{what}: {e.get('set')}{e.get('cell')} is not a parameter of the model") from None
        out[k] = float(e["value"])
    if np.isnan(out).any():
        gaps = [model.label(k) for k in np.flatnonzero(np.isnan(out))]
        raise FormatError(f"{what}: missing entries for {gaps}")
    return out


def _check_hash(doc: dict, model: Model, what: str):
    h = doc.get("model_hash")
    if h is not None and h != model.hash:
        raise FormatError(f"{what} was written for a different model (hash {h[:12]}...)")


def theta_to_json(theta: ThetaVector) -> dict:
    return {"model_hash": theta.model.hash, "theta": _entries(theta.model, theta.values)}


def theta_from_json(doc: dict, model: Model) -> ThetaVector:
    _check_hash(doc, model, "theta file")
    return ThetaVector(model, _vector(model, doc.get("theta", []), "theta file"))


def free_to_json(free: FreeProbVector) -> dict:
    return {"model_hash": free.model.hash, "p_empty": free.p_empty, "p": _entries(free.model, free.values)}


def free_from_json(doc: dict, model: Model) -> FreeProbVector:
    _check_hash(doc, model, "free probability file")
    return FreeProbVector(model, float(doc["p_empty"]), _vector(model, doc.get("p", []), "free probability file"))


def probs_to_json(table: FullProbTable, model: Model) -> dict:
    cells = [{"cell": list(c), "prob": float(table.probs[c])} for c in np.ndindex(*table.space.shape)]
    return {"model_hash": model.hash, "variables": list(table.space.variables), "cells": cells}


def probs_from_json(doc: dict, model: Model) -> np.ndarray:
    """A full probability table (not yet validated as lying in the simplex)."""
    _check_hash(doc, model, "probability file")
    space = model.space
    out = np.full(space.shape, np.nan)
    for e in doc.get("cells", []):
        out[tuple(int(c) for c in e["cell"])] = float(e["prob"])
    if np.isnan(out).any():
        raise FormatError("probability file must list every cell")
    return out


def hyper_to_json(hyper: Hyperparameters) -> dict:
    return {"model_hash": hyper.model.hash, "alpha": hyper.alpha, "s": _entries(hyper.model, hyper.s)}


def hyper_from_json(doc: dict, model: Model) -> Hyperparameters:
    _check_hash(doc, model, "hyperparameter file")
    if "alpha" not in doc:
        raise FormatError("hyperparameter file needs 'alpha'")
    return Hyperparameters(model, _vector(model, doc.get("s", []), "hyperparameter file"), float(doc["alpha"]))
