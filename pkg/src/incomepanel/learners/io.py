"""Plain-text model files.

Layout (UTF-8, ``\\n`` line ends)::

    incomepanel-model 1
    kind <majority|forest|svm|mlp>
    meta <JSON object>
    array <name> <dtype> <dim0>x<dim1>...
    <all values of that array, row-major, space separated>
    ...
    end

``dtype`` is ``f8``, ``i8`` or ``b1``. Floats are written with ``repr`` so
a save/load cycle reproduces every value bit for bit. Array names are
namespaced with dots (``tree.3.threshold``, ``machine.0.coef``,
``plan.impute``). Empty arrays have a blank value line.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..features import ColumnDescriptor
from .base import MajorityModel, MissingPlan
from .forest import DecisionTree, ForestModel
from .mlp import MlpModel, MlpParams
from .svm import BinarySvm, Kernel, MultiSvm

MAGIC = "incomepanel-model"
VERSION = 1
_DTYPES = {"f8": np.float64, "i8": np.int64, "b1": np.bool_}
_TREE_FIELDS = ("feature", "threshold", "left", "right", "missing_left", "counts", "cover")


def _code(a: np.ndarray) -> str:
    if a.dtype == np.bool_:
        return "b1"
    if np.issubdtype(a.dtype, np.integer):
        return "i8"
    return "f8"


def _fmt(a: np.ndarray) -> str:
    code = _code(a)
    flat = a.ravel()
    if code == "f8":
        return " ".join(repr(float(v)) for v in flat)
    return " ".join(str(int(v)) for v in flat)


def _columns_meta(columns):
    return [[c.source, c.encoding, c.level] for c in columns]


def _columns_from(meta):
    return tuple(ColumnDescriptor(s, e, lvl) for s, e, lvl in meta)


def _plan_state(plan: MissingPlan, arrays: dict) -> dict:
    arrays["plan.impute"] = plan.impute
    if plan.lo is not None:
        arrays["plan.lo"] = plan.lo
        arrays["plan.span"] = plan.span
    return {"indicator_blocks": [list(b) for b in plan.indicator_blocks]}


def _plan_from(meta: dict, arrays: dict) -> MissingPlan:
    return MissingPlan(
        arrays["plan.impute"],
        tuple(tuple(b) for b in meta["indicator_blocks"]),
        arrays.get("plan.lo"),
        arrays.get("plan.span"),
    )


def _to_state(model) -> tuple[str, dict, dict]:
    arrays: dict[str, np.ndarray] = {}
    meta: dict = {"columns": _columns_meta(model.columns), "n_classes": model.n_classes}
    if isinstance(model, MajorityModel):
        arrays["priors"] = model.priors
        meta["majority"] = model.majority
        return "majority", meta, arrays
    if isinstance(model, ForestModel):
        meta.update(
            trees=len(model.trees), mtry=model.mtry, seed=model.seed, bootstrap=model.bootstrap,
            min_leaf=model.min_leaf, max_depth=model.max_depth,
        )
        for t, tree in enumerate(model.trees):
            for name in _TREE_FIELDS:
                arrays[f"tree.{t}.{name}"] = getattr(tree, name)
        return "forest", meta, arrays
    if isinstance(model, MultiSvm):
        meta["plan"] = _plan_state(model.plan, arrays)
        meta["machines"] = []
        for k, m in enumerate(model.machines):
            meta["machines"].append(
                {"bias": m.bias, "kernel": m.kernel.kind, "gamma": m.kernel.gamma, "C": m.C,
                 "pair": list(m.pair), "iterations": m.iterations}
            )
            arrays[f"machine.{k}.support"] = m.support
            arrays[f"machine.{k}.coef"] = m.coef
            arrays[f"machine.{k}.alpha"] = m.alpha
        return "svm", meta, arrays
    if isinstance(model, MlpModel):
        meta["plan"] = _plan_state(model.plan, arrays)
        meta.update(rate=model.rate, momentum=model.momentum, epochs=model.epochs, seed=model.seed)
        for name in ("W1", "b1", "W2", "b2"):
            arrays[f"mlp.{name}"] = getattr(model.params, name)
        arrays["mlp.losses"] = np.asarray(model.losses, dtype=float)
        return "mlp", meta, arrays
    raise TypeError(f"cannot serialise {type(model).__name__}")


def save_model(model, path: str | Path) -> None:
    kind, meta, arrays = _to_state(model)
    lines = [f"{MAGIC} {VERSION}", f"kind {kind}", "meta " + json.dumps(meta, sort_keys=True)]
    for name, a in arrays.items():
        a = np.asarray(a)
        shape = "x".join(str(d) for d in a.shape) if a.ndim else "scalar"
        lines.append(f"array {name} {_code(a)} {shape}")
        lines.append(_fmt(a))
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: str | Path):
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    head = lines[0].split()
    if len(head) != 2 or head[0] != MAGIC:
        raise ValueError(f"{path}: not a model file")
    if int(head[1]) != VERSION:
        raise ValueError(f"{path}: unsupported model file version {head[1]}")
    kind = lines[1].split(" ", 1)[1]
    meta = json.loads(lines[2].split(" ", 1)[1])
    arrays = {}
    k = 3
    while lines[k] != "end":
        _, name, code, shape = lines[k].split(" ")
        dims = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
        tokens = lines[k + 1].split()
        if code == "f8":
            values = np.array([float(t) for t in tokens], dtype=np.float64)
        else:
            values = np.array([int(t) for t in tokens], dtype=np.int64).astype(_DTYPES[code])
        arrays[name] = values.reshape(dims)
        k += 2
    columns = _columns_from(meta["columns"])
    n_classes = meta["n_classes"]
    if kind == "majority":
        return MajorityModel(meta["majority"], arrays["priors"], columns, n_classes)
    if kind == "forest":
        trees = tuple(
            DecisionTree(*(arrays[f"tree.{t}.{name}"] for name in _TREE_FIELDS)) for t in range(meta["trees"])
        )
        return ForestModel(
            trees, meta["mtry"], meta["seed"], columns, n_classes, meta["bootstrap"], meta["min_leaf"], meta["max_depth"]
        )
    if kind == "svm":
        machines = tuple(
            BinarySvm(
                arrays[f"machine.{i}.support"], arrays[f"machine.{i}.coef"], arrays[f"machine.{i}.alpha"],
                m["bias"], Kernel(m["kernel"], m["gamma"]), m["C"], tuple(m["pair"]), m["iterations"],
            )
            for i, m in enumerate(meta["machines"])
        )
        return MultiSvm(machines, _plan_from(meta["plan"], arrays), columns, n_classes)
    if kind == "mlp":
        params = MlpParams(*(arrays[f"mlp.{n}"] for n in ("W1", "b1", "W2", "b2")))
        return MlpModel(
            params, _plan_from(meta["plan"], arrays), columns, n_classes, meta["rate"], meta["momentum"],
            meta["epochs"], meta["seed"], tuple(arrays["mlp.losses"].tolist()),
        )
    raise ValueError(f"{path}: unknown model kind {kind!r}")
