"""Greedy hill-climbing over DAGs with an optional swap to better equivalent DAGs.

The search keeps the transitive closure of the current DAG and the family
scores of its nodes, so a neighbour is scored from the changed families plus
the prior of its configuration, read off the updated closure.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterator, Literal

import numpy as np

from .beliefs import Configuration, codes_of, config_digits
from .errors import DimensionError, TooLargeError
from .graph import (
    Dag,
    Edge,
    closure_after_delete,
    closure_after_insert,
    covered_edges,
    enumerate_dags,
    transitive_closure,
)
from .joint import FORBIDDEN, JointPrior, prior_log_score_digits
from .score import Dataset, ScoreCache, ScoreConfig

log = logging.getLogger(__name__)

IMPROVEMENT = 1e-9
TIE_TOL = 1e-12
DEFAULT_SWAP_LIMIT = 2000
MAX_EXHAUSTIVE_NODES = 5

OperatorKind = Literal["insert", "delete", "reverse"]
KIND_ORDER = {"insert": 0, "delete": 1, "reverse": 2}


@dataclass(frozen=True)
class EdgeOperator:
    kind: OperatorKind
    edge: Edge

    @property
    def sort_key(self) -> tuple[int, int, int]:
        return (KIND_ORDER[self.kind], *self.edge)

    def __str__(self) -> str:
        u, v = self.edge
        return f"{self.kind} {u}->{v}"


@dataclass
class SearchState:
    dag: Dag
    closure: np.ndarray
    digits: np.ndarray
    family: list[float]
    prior_score: float

    @property
    def data_score(self) -> float:
        return math.fsum(self.family)

    @property
    def total(self) -> float:
        return self.data_score + self.prior_score

    @property
    def configuration(self) -> Configuration:
        return Configuration.from_digits(self.digits)

    @property
    def config_index(self) -> int | None:
        if not len(self.digits):
            return None
        return int(codes_of(self.digits)) + 1


class Scorer:
    """Bundles what a search scores against: data, prior and their settings."""

    def __init__(self, data: Dataset, J: JointPrior | None, cfg: ScoreConfig, cache: ScoreCache | None = None):
        if cache is None:
            cache = ScoreCache(data, cfg.ess)
        elif cache.data is not data or cache.ess != cfg.ess:
            raise ValueError("score cache belongs to a different dataset or ESS")
        self.data = data
        self.J = J
        self.cfg = cfg
        self.cache = cache
        self.informative = cfg.prior == "informative" and J is not None and len(J.beliefs) > 0
        if J is not None and len(J.beliefs):
            top = J.beliefs.nodes()[-1]
            if top >= data.n_vars:
                raise DimensionError(f"beliefs mention node {top} but the data has {data.n_vars} variables")
            self._sources, self._targets = J.beliefs.sources, J.beliefs.targets
        else:
            self._sources = self._targets = np.zeros(0, dtype=np.intp)

    @property
    def n(self) -> int:
        return self.data.n_vars

    def family(self, child: int, parents: set[int] | frozenset[int]) -> float:
        return self.cache.family(child, parents)

    def digits(self, closure: np.ndarray) -> np.ndarray:
        return config_digits(closure, self._sources, self._targets)

    def prior(self, closure: np.ndarray) -> float:
        if not self.informative:
            return 0.0
        return prior_log_score_digits(
            self.J,
            self.digits(closure),
            self.cfg.count_source,
            drop_count_factor=self.cfg.drop_count_factor,
        )

    def state(self, dag: Dag) -> SearchState:
        if dag.n != self.n:
            raise DimensionError(f"graph has {dag.n} nodes, data has {self.n} variables")
        closure = transitive_closure(dag)
        return SearchState(
            dag,
            closure,
            self.digits(closure),
            [self.family(v, dag.parents(v)) for v in range(dag.n)],
            self.prior(closure),
        )

    def total(self, dag: Dag) -> float:
        return self.state(dag).total


def _prior_delta(new: float, old: float) -> float:
    if new == FORBIDDEN:
        return FORBIDDEN
    if old == FORBIDDEN:
        return math.inf
    return new - old


def _candidate(state: SearchState, scorer: Scorer, op: EdgeOperator) -> tuple[np.ndarray, dict[int, float]]:
    """Closure after ``op`` and the new scores of the families it changes."""
    dag, (u, v) = state.dag, op.edge
    if op.kind == "insert":
        closure = closure_after_insert(state.closure, (u, v))
        return closure, {v: scorer.family(v, dag.parents(v) | {u})}
    closure = closure_after_delete(state.closure, dag, (u, v))
    families = {v: scorer.family(v, dag.parents(v) - {u})}
    if op.kind == "reverse":
        closure = closure_after_insert(closure, (v, u))
        families[u] = scorer.family(u, dag.parents(u) | {v})
    return closure, families


def operators(state: SearchState) -> Iterator[EdgeOperator]:
    """Applicable operators in ``(kind, u, v)`` order."""
    dag, closure = state.dag, state.closure
    n = dag.n
    for u in range(n):
        for v in range(n):
            if u != v and not dag.has_edge(u, v) and not closure[v, u]:
                yield EdgeOperator("insert", (u, v))
    edges = dag.edges()
    for e in edges:
        yield EdgeOperator("delete", e)
    for u, v in edges:
        # reversible iff the edge is the only directed path u => v
        if not any(closure[c, v] for c in dag.children(u) if c != v):
            yield EdgeOperator("reverse", (u, v))


def neighbors(state: SearchState, scorer: Scorer) -> Iterator[tuple[EdgeOperator, float]]:
    for op in operators(state):
        closure, families = _candidate(state, scorer, op)
        data_delta = sum(s - state.family[x] for x, s in families.items())
        if scorer.informative:
            yield op, data_delta + _prior_delta(scorer.prior(closure), state.prior_score)
        else:
            yield op, data_delta


def apply_operator(state: SearchState, scorer: Scorer, op: EdgeOperator) -> SearchState:
    closure, families = _candidate(state, scorer, op)
    dag = state.dag.copy()
    u, v = op.edge
    if op.kind == "insert":
        dag.add_edge(u, v, check_acyclic=False)
    elif op.kind == "delete":
        dag.remove_edge(u, v)
    else:
        dag.reverse_edge(u, v, check_acyclic=False)
    family = list(state.family)
    for x, s in families.items():
        family[x] = s
    return SearchState(dag, closure, scorer.digits(closure), family, scorer.prior(closure))


def verify_state(state: SearchState, scorer: Scorer, tol: float = IMPROVEMENT) -> None:
    """Raise ``AssertionError`` if the incremental state drifted from a recomputation."""
    fresh = scorer.state(state.dag)
    assert np.array_equal(fresh.closure, state.closure), "closure drifted"
    assert np.array_equal(fresh.digits, state.digits), "configuration drifted"
    assert abs(fresh.data_score - state.data_score) <= tol, "data score drifted"
    assert fresh.prior_score == state.prior_score or abs(fresh.prior_score - state.prior_score) <= tol


def swap_equivalent(state: SearchState, scorer: Scorer, limit: int = DEFAULT_SWAP_LIMIT) -> SearchState:
    """Move to the Markov-equivalent DAG with the best prior score.

    Explores the equivalence class breadth-first through covered-edge
    reversals, visiting at most ``limit`` DAGs. Only a strictly better prior
    score moves the state, so an uninformative prior is always the identity.
    """
    if not scorer.informative:
        return state
    start = state.dag
    seen = {start.key()}
    queue = deque([start])
    best_score, best_dag = state.prior_score, None
    while queue and len(seen) < limit:
        dag = queue.popleft()
        for u, v in covered_edges(dag):
            nxt = dag.copy()
            nxt.reverse_edge(u, v, check_acyclic=False)
            key = nxt.key()
            if key in seen:
                continue
            seen.add(key)
            queue.append(nxt)
            score = scorer.prior(transitive_closure(nxt))
            if score > best_score + IMPROVEMENT or (best_score == FORBIDDEN and score > FORBIDDEN):
                best_score, best_dag = score, nxt
            if len(seen) >= limit:
                break
    if best_dag is None:
        return state
    log.debug("swap: prior %.4f -> %.4f after visiting %d DAGs", state.prior_score, best_score, len(seen))
    return scorer.state(best_dag)


@dataclass(frozen=True)
class TraceStep:
    step: int
    operator: str
    data_score: float
    prior_score: float
    config_index: int | None

    @classmethod
    def of(cls, step: int, operator: str, state: SearchState) -> TraceStep:
        return cls(step, operator, state.data_score, state.prior_score, state.config_index)


@dataclass(frozen=True)
class SearchResult:
    dag: Dag
    trace: tuple[TraceStep, ...]
    state: SearchState

    @property
    def score(self) -> float:
        return self.state.total


def greedy_search(
    data: Dataset,
    J: JointPrior | None,
    cfg: ScoreConfig,
    *,
    swap: bool = False,
    swap_limit: int = DEFAULT_SWAP_LIMIT,
    start: Dag | None = None,
    cache: ScoreCache | None = None,
    max_steps: int | None = None,
    debug: bool = False,
) -> SearchResult:
    scorer = Scorer(data, J, cfg, cache)
    state = scorer.state(start if start is not None else Dag(data.n_vars))
    trace = [TraceStep.of(0, "start", state)]
    while max_steps is None or len(trace) <= max_steps:
        best: tuple[EdgeOperator, float] | None = None
        for op, delta in neighbors(state, scorer):
            if not delta > IMPROVEMENT:
                continue
            if best is None or delta > best[1] + TIE_TOL:
                best = (op, delta)
        if best is None:
            break
        op, delta = best
        state = apply_operator(state, scorer, op)
        trace.append(TraceStep.of(len(trace), str(op), state))
        log.debug("step %d: %s (%+.4f)", len(trace) - 1, op, delta)
        if debug:
            verify_state(state, scorer)
        if swap:
            swapped = swap_equivalent(state, scorer, swap_limit)
            if swapped is not state:
                state = swapped
                trace.append(TraceStep.of(len(trace), "swap", state))
    log.info("search finished after %d steps, score %.4f", len(trace) - 1, state.total)
    return SearchResult(state.dag, tuple(trace), state)


def exhaustive_search(
    data: Dataset,
    J: JointPrior | None,
    cfg: ScoreConfig,
    cache: ScoreCache | None = None,
) -> SearchResult:
    """Best of every DAG on the data's variables; first in enumeration order on ties."""
    if data.n_vars > MAX_EXHAUSTIVE_NODES:
        raise TooLargeError(f"exhaustive search is limited to {MAX_EXHAUSTIVE_NODES} variables")
    scorer = Scorer(data, J, cfg, cache)
    best: SearchState | None = None
    for dag in enumerate_dags(data.n_vars):
        state = scorer.state(dag)
        if best is None or state.total > best.total + TIE_TOL:
            best = state
    assert best is not None
    return SearchResult(best.dag, (TraceStep.of(0, "exhaustive", best),), best)
