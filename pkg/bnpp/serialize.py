"""File formats: graph, PDAG, beliefs, network and prior JSON, dataset CSV, trace JSONL.

Node names only exist here; everything past this module works on indices into
a name tuple (the dataset header, or the order of ``"nodes"`` in a graph file).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd

from .beliefs import (
    BeliefDistribution,
    BeliefSet,
    PathVariable,
    Statement,
    statement_distribution,
    valid_codes,
)
from .counting import UEstimate, UPart
from .errors import DimensionError, InputFormatError
from .graph import Dag, Pdag
from .joint import JointPart, JointPrior
from .network import CategoricalBn
from .score import Dataset
from .search import TraceStep


def _read_json(path: Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputFormatError(f"{path}: {exc}") from exc


def _write_json(path: Path, obj: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _index(names: Sequence[str], name: Any, where: str) -> int:
    try:
        return names.index(name)
    except ValueError:
        raise DimensionError(f"{where}: unknown variable {name!r}") from None


def _finite(x: float) -> float | None:
    return x if math.isfinite(x) else None


# -- graphs --------------------------------------------------------------------


def graph_to_json(dag: Dag, names: Sequence[str]) -> dict[str, Any]:
    return {"nodes": list(names), "edges": [[names[u], names[v]] for u, v in dag.edges()]}


def pdag_to_json(pdag: Pdag, names: Sequence[str]) -> dict[str, Any]:
    return {
        "nodes": list(names),
        "edges": [[names[u], names[v]] for u, v in sorted(pdag.directed)],
        "undirected": [[names[u], names[v]] for u, v in sorted(pdag.undirected)],
    }


def write_graph(path: Path, dag: Dag, names: Sequence[str]) -> None:
    _write_json(path, graph_to_json(dag, names))


def write_pdag(path: Path, pdag: Pdag, names: Sequence[str]) -> None:
    _write_json(path, pdag_to_json(pdag, names))


def read_graph(path: Path, names: Sequence[str] | None = None) -> tuple[Dag, tuple[str, ...]]:
    """Read a graph; with ``names`` the nodes are reordered to match them."""
    raw = _read_json(path)
    try:
        nodes = [str(x) for x in raw["nodes"]]
        edges = [(str(a), str(b)) for a, b in raw.get("edges", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputFormatError(f"{path}: not a graph file ({exc})") from exc
    if len(set(nodes)) != len(nodes):
        raise InputFormatError(f"{path}: duplicate node names")
    if names is None:
        names = nodes
    elif sorted(names) != sorted(nodes):
        raise DimensionError(f"{path}: nodes {sorted(nodes)} do not match {sorted(names)}")
    names = list(names)
    return Dag(len(names), [(_index(names, a, str(path)), _index(names, b, str(path))) for a, b in edges]), tuple(names)


# -- datasets ------------------------------------------------------------------


def read_dataset(path: Path, arities_path: Path | None = None) -> Dataset:
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise InputFormatError(f"{path}: {exc}") from exc
    names = tuple(str(c) for c in df.columns)
    if df.size and not all(pd.api.types.is_integer_dtype(t) for t in df.dtypes):
        raise InputFormatError(f"{path}: every cell must be a non-negative integer state index")
    rows = df.to_numpy(dtype=np.int64) if df.size else np.zeros((0, len(names)), dtype=np.int64)
    if rows.size and rows.min() < 0:
        raise InputFormatError(f"{path}: negative state index")
    if arities_path is not None:
        declared = _read_json(arities_path)
        try:
            arities = tuple(int(declared[name]) for name in names)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputFormatError(f"{arities_path}: missing or bad arity ({exc})") from exc
    else:
        seen = rows.max(axis=0) + 1 if len(rows) else np.zeros(len(names), dtype=np.int64)
        arities = tuple(max(2, int(a)) for a in seen)
    return Dataset(names, arities, rows)


def write_dataset(path: Path, data: Dataset) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(data.rows, columns=list(data.names)).to_csv(path, index=False)


def write_arities(path: Path, data: Dataset) -> None:
    _write_json(path, dict(zip(data.names, data.arities)))


# -- beliefs -------------------------------------------------------------------


@dataclass(frozen=True)
class BeliefsFile:
    """Beliefs as read; statement entries need U's marginals to become distributions."""

    variables: tuple[PathVariable, ...]
    entries: tuple[BeliefDistribution | Statement, ...]

    @property
    def R(self) -> BeliefSet:
        return BeliefSet.of_variables(self.variables)

    def resolve(self, U: UEstimate) -> BeliefSet:
        dists = []
        for k, entry in enumerate(self.entries):
            if isinstance(entry, Statement):
                dists.append(statement_distribution(entry.kind, entry.p, U.marginal(k)))
            else:
                dists.append(entry)
        return BeliefSet(self.variables, tuple(dists))


_DIST_KEYS = ("forward", "backward", "confounded", "none")


def read_beliefs(path: Path, names: Sequence[str]) -> BeliefsFile:
    raw = _read_json(path)
    names = list(names)
    variables, entries = [], []
    try:
        for item in raw["beliefs"]:
            x = _index(names, item["from"], str(path))
            y = _index(names, item["to"], str(path))
            variables.append(PathVariable(x, y))
            if "dist" in item:
                entries.append(BeliefDistribution(*(float(item["dist"].get(k, 0.0)) for k in _DIST_KEYS)))
            else:
                entries.append(Statement(x, y, item["statement"], float(item["p"])))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputFormatError(f"{path}: bad belief entry ({exc})") from exc
    if len({v.pair for v in variables}) != len(variables):
        raise InputFormatError(f"{path}: more than one belief for the same pair of nodes")
    return BeliefsFile(tuple(variables), tuple(entries))


def read_beliefs_names(path: Path) -> tuple[str, ...]:
    """Node names in order of first mention."""
    raw = _read_json(path)
    names: dict[str, None] = {}
    try:
        for item in raw["beliefs"]:
            names.setdefault(str(item["from"]))
            names.setdefault(str(item["to"]))
    except (KeyError, TypeError) as exc:
        raise InputFormatError(f"{path}: bad belief entry ({exc})") from exc
    return tuple(names)


def beliefs_to_json(K: BeliefSet, names: Sequence[str]) -> dict[str, Any]:
    return {
        "beliefs": [
            {"from": names[v.source], "to": names[v.target], "dist": asdict(d)}
            for v, d in zip(K.variables, K.dists)
        ]
    }


def write_beliefs(path: Path, K: BeliefSet, names: Sequence[str]) -> None:
    _write_json(path, beliefs_to_json(K, names))


# -- networks ------------------------------------------------------------------


def network_to_json(bn: CategoricalBn) -> dict[str, Any]:
    return {
        "variables": [
            {
                "name": bn.names[v],
                "states": [f"s{i}" for i in range(bn.arities[v])],
                "parents": [bn.names[p] for p in sorted(bn.dag.parents(v))],
                "cpt": bn.cpts[v].tolist(),
            }
            for v in range(bn.n)
        ]
    }


def write_network(path: Path, bn: CategoricalBn) -> None:
    _write_json(path, network_to_json(bn))


def read_network(path: Path) -> CategoricalBn:
    raw = _read_json(path)
    try:
        items = raw["variables"]
        names = [str(item["name"]) for item in items]
        arities = tuple(len(item["states"]) for item in items)
        edges = [
            (_index(names, p, str(path)), v) for v, item in enumerate(items) for p in item.get("parents", [])
        ]
        cpts = tuple(np.asarray(item["cpt"], dtype=float).reshape(-1, a) for item, a in zip(items, arities))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputFormatError(f"{path}: not a network file ({exc})") from exc
    return CategoricalBn(Dag(len(names), edges), tuple(names), arities, cpts)


# -- U and J -------------------------------------------------------------------


def u_to_json(U: UEstimate, variables: Sequence[PathVariable]) -> dict[str, Any]:
    parts = []
    for part in U.parts:
        c = len(part.codes)
        unseen = U.laplace / (U.samples + c * U.laplace) if U.method != "EXACT" and U.samples + c * U.laplace > 0 else 0.0
        seen = np.flatnonzero(part.counts)
        parts.append(
            {
                "variables": list(part.variables),
                "unseen": unseen,
                "counts": {str(int(part.codes[i]) + 1): int(part.counts[i]) for i in seen},
                "probs": {str(int(part.codes[i]) + 1): float(part.probs[i]) for i in seen},
            }
        )
    return {
        "method": U.method,
        "n": U.n_nodes,
        "S": U.samples,
        "l": U.laplace,
        "seed": U.seed,
        "denominator": U.denominator,
        "pairs": [[v.source, v.target] for v in variables],
        "parts": parts,
    }


def u_from_json(raw: dict[str, Any]) -> UEstimate:
    try:
        R = BeliefSet.of_pairs((int(a), int(b)) for a, b in raw["pairs"])
        parts = []
        for item in raw["parts"]:
            ks = tuple(int(k) for k in item["variables"])
            codes = valid_codes(R.subset(ks))
            probs = np.full(len(codes), float(item["unseen"]))
            counts = np.zeros(len(codes), dtype=np.int64)
            for idx, p in item["probs"].items():
                pos = int(np.searchsorted(codes, int(idx) - 1))
                probs[pos] = float(p)
                counts[pos] = int(item["counts"][idx])
            parts.append(UPart(ks, codes, probs, counts))
        return UEstimate(
            tuple(parts), len(R), int(raw["n"]), raw["method"], int(raw["S"]), float(raw["l"]),
            raw.get("seed"), raw.get("denominator", "valid"),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise InputFormatError(f"not a U estimate ({exc})") from exc


def prior_to_json(J: JointPrior, names: Sequence[str]) -> dict[str, Any]:
    parts = []
    for part in J.parts:
        finite = np.flatnonzero(np.isfinite(part.log_table))
        parts.append(
            {
                "variables": list(part.variables),
                "coherent": part.coherent,
                "iterations": part.iterations,
                "residual": part.residual,
                "i_aggregate": _finite(part.i_aggregate),
                "adjusted": part.adjusted.tolist(),
                "log_probs": {str(int(part.codes[i]) + 1): float(part.log_table[i]) for i in finite},
            }
        )
    return {
        **beliefs_to_json(J.beliefs, names),
        "nodes": list(names),
        "coherent": J.coherent,
        "parts": parts,
        "u": u_to_json(J.u, J.beliefs.variables),
    }


def write_prior(path: Path, J: JointPrior, names: Sequence[str]) -> None:
    _write_json(path, prior_to_json(J, names))


def read_prior(path: Path) -> tuple[JointPrior, tuple[str, ...]]:
    raw = _read_json(path)
    names = tuple(raw.get("nodes", []))
    try:
        variables, dists = [], []
        for item in raw["beliefs"]:
            variables.append(PathVariable(names.index(item["from"]), names.index(item["to"])))
            dists.append(BeliefDistribution(*(float(item["dist"][k]) for k in _DIST_KEYS)))
        K = BeliefSet(tuple(variables), tuple(dists))
        U = u_from_json(raw["u"])
        parts = []
        for item, upart in zip(raw["parts"], (p for p in U.parts if p.variables)):
            log_table = np.full(len(upart.codes), -np.inf)
            for idx, lp in item["log_probs"].items():
                log_table[int(np.searchsorted(upart.codes, int(idx) - 1))] = float(lp)
            agg = item.get("i_aggregate")
            parts.append(
                JointPart(
                    upart.variables, upart.codes, log_table, np.asarray(item["adjusted"], dtype=float),
                    bool(item["coherent"]), int(item["iterations"]), float(item["residual"]),
                    math.inf if agg is None else float(agg),
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputFormatError(f"{path}: not a prior file ({exc})") from exc
    return JointPrior(K, tuple(parts), U), names


# -- traces and provenance ------------------------------------------------------


def trace_lines(trace: Iterable[TraceStep]) -> list[str]:
    return [
        json.dumps(
            {
                "step": s.step,
                "operator": s.operator,
                "data_score": s.data_score,
                "prior_score": _finite(s.prior_score),
                "config_index": s.config_index,
            }
        )
        for s in trace
    ]


def write_trace(path: Path, trace: Iterable[TraceStep]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(line + "\n" for line in trace_lines(trace)), encoding="utf-8")


def write_provenance(path: Path, **fields: Any) -> None:
    _write_json(path, fields)
