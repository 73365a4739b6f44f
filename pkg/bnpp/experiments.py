"""Replicated experiments: three-node recovery, U approximation and large networks.

Each replication gets its own ``RngSeed(seed, rep)`` stream, so results do not
depend on the worker count. Per-replication values are stored as records and
the report is aggregated back from those records.
"""

from __future__ import annotations

import logging
import sqlite3
import uuid
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache, partial
from pathlib import Path
from typing import Any, Callable, Iterable, Literal, Sequence

import numpy as np
import pandas as pd

from .beliefs import (
    BeliefDistribution,
    BeliefSet,
    PathValue,
    Statement,
    beliefs_from_statements,
    config_digits,
)
from .counting import (
    DEFAULT_LAPLACE,
    RngSeed,
    UEstimate,
    estimate_u_exact,
    estimate_u_fact,
    estimate_u_full,
    kl_divergence,
    sample_closures,
)
from .db import Aggregate, aggregate, connect, insert_records
from .errors import CoherenceTargetError
from .graph import Dag, enumerate_dags, shd, to_pdag, transitive_closure
from .joint import constraints_from_matrix, fit_joint, is_coherent
from .network import CategoricalBn, forward_sample, random_cpts
from .score import ScoreCache, ScoreConfig, data_log_score, prior_score
from .search import TIE_TOL, greedy_search

log = logging.getLogger(__name__)

Row = tuple[dict[str, Any], str, float]
Coherence = Literal["coherent", "incoherent"]

BELIEF_SETS: dict[str, tuple[tuple[int, int], ...]] = {
    "R1": ((0, 1), (2, 3)),
    "R2": ((0, 1), (1, 2), (3, 4), (4, 5)),
    "R3": ((0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 7)),
}
LARGE_SAMPLE_SIZES = (100, 200, 500, 1000, 2000, 5000, 10000)


@dataclass(frozen=True)
class ExperimentReport:
    experiment: str
    run_id: str
    params: dict[str, Any]
    seed: int
    rows: tuple[Aggregate, ...]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame.from_records(
            [
                {"experiment": self.experiment, **a.cell, "metric": a.metric, "mean": a.mean, "std": a.std, "n": a.n}
                for a in self.rows
            ]
        )

    def write_csv(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)

    def mean(self, metric: str, **cell: Any) -> float:
        for a in self.rows:
            if a.metric == metric and all(a.cell.get(k) == v for k, v in cell.items()):
                return a.mean
        raise KeyError(f"no {metric} row for {cell}")


def rep_seed(seed: int, rep: int) -> int:
    """Integer seed of an independent stream for replication ``rep``."""
    return int(np.random.SeedSequence(seed, spawn_key=(rep,)).generate_state(1, dtype=np.uint64)[0] >> 1)


def _replicate(task: Callable[[int], list[Row]], reps: Iterable[int], workers: int) -> list[tuple[int, list[Row]]]:
    reps = list(reps)
    if workers > 1 and len(reps) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, reps))
    else:
        results = [task(r) for r in reps]
    return list(zip(reps, results))


def _finish(
    name: str,
    params: dict[str, Any],
    seed: int,
    results: list[tuple[int, list[Row]]],
    con: sqlite3.Connection | None,
) -> ExperimentReport:
    own = con is None
    if own:
        con = connect(Path(":memory:"))
    try:
        run_id = uuid.uuid4().hex[:12]
        insert_records(con, name, run_id, ((rep, cell, metric, value) for rep, rows in results for cell, metric, value in rows))
        report = ExperimentReport(name, run_id, params, seed, tuple(aggregate(con, run_id)))
    finally:
        if own:
            con.close()
    log.info("%s: %d replications, run %s", name, len(results), report.run_id)
    return report


# -- three-node recovery ---------------------------------------------------------


@dataclass(frozen=True)
class _ThreeNode:
    true_dag: Dag
    dags: tuple[Dag, ...]
    arm_priors: dict[str, tuple[float, ...]]
    sizes: tuple[int, ...]
    ess: float


def _best(scores: Sequence[float]) -> int:
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best] + TIE_TOL:
            best = i
    return best


def _three_node_rep(ctx: _ThreeNode, seed: int, rep: int) -> list[Row]:
    rng = RngSeed(seed, rep).generator()
    arities = tuple(int(a) for a in rng.choice([3, 4], size=3))
    bn = random_cpts(ctx.true_dag, arities, 0.5, 1.0, rng, ("X", "Y", "Z"))
    data = forward_sample(bn, max(ctx.sizes), rng)
    true_pdag = to_pdag(ctx.true_dag)
    cfg = ScoreConfig(ess=ctx.ess, prior="uniform")
    rows: list[Row] = []
    for size in ctx.sizes:
        head = data.head(size)
        cache = ScoreCache(head, ctx.ess)
        data_scores = [data_log_score(dag, head, cfg, cache) for dag in ctx.dags]
        for arm, priors in ctx.arm_priors.items():
            best = ctx.dags[_best([d + p for d, p in zip(data_scores, priors)])]
            cell = {"arm": arm, "rows": size}
            rows.append((cell, "found", float(to_pdag(best) == true_pdag)))
            rows.append((cell, "exact", float(best == ctx.true_dag)))
    return rows


def _three_node_experiment(
    name: str,
    true_dag: Dag,
    statements: dict[str, Statement | None],
    *,
    reps: int,
    seed: int,
    max_rows: int,
    step: int,
    ess: float,
    workers: int,
    con: sqlite3.Connection | None,
) -> ExperimentReport:
    R = BeliefSet.of_pairs([(0, 2)])
    U = estimate_u_exact(R, 3)
    dags = tuple(enumerate_dags(3))
    closures = [transitive_closure(d) for d in dags]
    informative = ScoreConfig(ess=ess)
    arm_priors = {}
    for arm, statement in statements.items():
        if statement is None:
            arm_priors[arm] = (0.0,) * len(dags)
            continue
        J = fit_joint(beliefs_from_statements([statement], [U.marginal(0)]), U)
        arm_priors[arm] = tuple(prior_score(J, c, informative) for c in closures)
    ctx = _ThreeNode(true_dag, dags, arm_priors, tuple(range(step, max_rows + 1, step)), ess)
    results = _replicate(partial(_three_node_rep, ctx, seed), range(reps), workers)
    params = {"reps": reps, "max_rows": max_rows, "step": step, "ess": ess, "arms": list(statements)}
    return _finish(name, params, seed, results, con)


def chain_experiment(
    reps: int = 1000,
    seed: int = 0,
    *,
    p: float = 0.9,
    max_rows: int = 200,
    step: int = 10,
    ess: float = 1.0,
    workers: int = 1,
    con: sqlite3.Connection | None = None,
) -> ExperimentReport:
    """X -> Y -> Z with a belief that X causes Z, against the uniform prior."""
    return _three_node_experiment(
        "chain",
        Dag(3, [(0, 1), (1, 2)]),
        {"informative": Statement(0, 2, "causes", p), "uniform": None},
        reps=reps, seed=seed, max_rows=max_rows, step=step, ess=ess, workers=workers, con=con,
    )


def collider_experiment(
    reps: int = 1000,
    seed: int = 0,
    *,
    p: float = 0.9,
    max_rows: int = 200,
    step: int = 10,
    ess: float = 1.0,
    workers: int = 1,
    con: sqlite3.Connection | None = None,
) -> ExperimentReport:
    """X -> Y <- Z; the correct belief is that X and Z are not associated."""
    return _three_node_experiment(
        "collider",
        Dag(3, [(0, 1), (2, 1)]),
        {
            "correct": Statement(0, 2, "not-associated", p),
            "uniform": None,
            "incorrect": Statement(0, 2, "associated", p),
        },
        reps=reps, seed=seed, max_rows=max_rows, step=step, ess=ess, workers=workers, con=con,
    )


# -- U approximation -------------------------------------------------------------


def _fact_vs_full_task(S: int, laplace: float, seed: int, n: int) -> list[Row]:
    pool = sample_closures(n, S, rep_seed(seed, n))
    rows: list[Row] = []
    for name, pairs in BELIEF_SETS.items():
        R = BeliefSet.of_pairs(pairs)
        full = estimate_u_full(R, n, S, laplace, closures=pool)
        fact = estimate_u_fact(R, n, S, laplace, closures=pool)
        codes = full.parts[0].codes
        rows.append(({"R": name, "n": n}, "kl", kl_divergence(full.parts[0].probs, fact.probs_for_codes(codes))))
    return rows


def fact_vs_full_experiment(
    n_values: Sequence[int] = tuple(range(10, 36)),
    S: int = 100_000,
    laplace: float = 0.0,
    seed: int = 0,
    *,
    workers: int = 1,
    con: sqlite3.Connection | None = None,
) -> ExperimentReport:
    """KL(FULL || FACT) on one shared sample per node count, for each reference belief set."""
    results = _replicate(partial(_fact_vs_full_task, S, laplace, seed), n_values, workers)
    params = {"n_values": list(n_values), "S": S, "laplace": laplace, "sets": {k: list(map(list, v)) for k, v in BELIEF_SETS.items()}}
    return _finish("fact-vs-full", params, seed, results, con)


def _small_n_task(n_values: Sequence[int], S_values: Sequence[int], laplace: float, seed: int, rep: int) -> list[Row]:
    R = BeliefSet.of_pairs(BELIEF_SETS["R1"])
    rows: list[Row] = []
    for n in n_values:
        exact = estimate_u_exact(R, n).parts[0].probs
        pool = sample_closures(n, max(S_values), rep_seed(seed, rep * 100 + n))
        for S in S_values:
            full = estimate_u_full(R, n, S, laplace, closures=pool)
            fact = estimate_u_fact(R, n, S, laplace, closures=pool)
            codes = full.parts[0].codes
            rows.append(({"n": n, "S": S, "estimator": "FULL"}, "kl", kl_divergence(exact, full.parts[0].probs)))
            rows.append(({"n": n, "S": S, "estimator": "FACT"}, "kl", kl_divergence(exact, fact.probs_for_codes(codes))))
    return rows


def small_n_approx_experiment(
    n_values: Sequence[int] = (4, 5, 6),
    S_values: Sequence[int] = tuple(range(100, 10_001, 100)),
    laplace: float = 1.0,
    reps: int = 1000,
    seed: int = 0,
    *,
    workers: int = 1,
    con: sqlite3.Connection | None = None,
) -> ExperimentReport:
    """KL from the exact U to FULL and FACT estimates from few samples."""
    results = _replicate(partial(_small_n_task, tuple(n_values), tuple(S_values), laplace, seed), range(reps), workers)
    params = {"n_values": list(n_values), "S_values": [min(S_values), max(S_values)], "laplace": laplace, "reps": reps}
    return _finish("small-n-approx", params, seed, results, con)


# -- large networks --------------------------------------------------------------


@dataclass(frozen=True)
class BeliefGenSpec:
    nc: int
    cs: int
    coherence: Coherence = "incoherent"
    p_range: tuple[float, float] = (0.5, 0.99)
    max_retries: int = 200

    def __post_init__(self) -> None:
        if self.nc < 1 or self.cs < 2:
            raise ValueError("need at least one component of at least two nodes")
        lo, hi = self.p_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"bad probability range {self.p_range}")


def choose_components(spec: BeliefGenSpec, n: int, rng: np.random.Generator) -> BeliefSet:
    """Path variables over every pair inside ``nc`` disjoint random node sets of size ``cs``."""
    if spec.nc * spec.cs > n:
        raise ValueError(f"{spec.nc} components of {spec.cs} nodes do not fit in {n} nodes")
    picked = rng.choice(n, size=(spec.nc, spec.cs), replace=False)
    pairs = []
    for component in picked:
        nodes = sorted(int(x) for x in component)
        pairs.extend((a, b) for i, a in enumerate(nodes) for b in nodes[i + 1 :])
    return BeliefSet.of_pairs(pairs)


def true_value_distribution(value: PathValue, p: float, u_marginal: BeliefDistribution) -> BeliefDistribution:
    """``p`` on ``value``, the rest split over the other values in proportion to U."""
    u = u_marginal.as_array()
    rest = np.where(np.arange(4) == value, 0.0, u)
    rest = rest / rest.sum() if rest.sum() > 0 else (np.arange(4) != value) / 3.0
    out = (1.0 - p) * rest
    out[value] = p
    return BeliefDistribution.from_array(out)


def generate_beliefs(
    spec: BeliefGenSpec,
    true_closure: np.ndarray,
    R: BeliefSet,
    U: UEstimate,
    rng: np.random.Generator,
    *,
    tol: float = 1e-8,
) -> BeliefSet:
    """Beliefs favouring the true relations, redrawn per part until the coherence target holds."""
    truth = config_digits(true_closure, R.sources, R.targets)
    dists: list[BeliefDistribution | None] = [None] * len(R)
    want = spec.coherence == "coherent"
    for part in U.parts:
        for attempt in range(1, spec.max_retries + 1):
            drawn = {
                k: true_value_distribution(PathValue(int(truth[k])), float(rng.uniform(*spec.p_range)), U.marginal(k))
                for k in part.variables
            }
            targets = np.vstack([drawn[k].as_array() for k in part.variables])
            if is_coherent(part, constraints_from_matrix(targets), tol) == want:
                dists_part = drawn
                break
            log.debug("part %s: draw %d is not %s", part.variables, attempt, spec.coherence)
        else:
            raise CoherenceTargetError(
                f"no {spec.coherence} beliefs for variables {list(part.variables)} after {spec.max_retries} draws"
            )
        for k, d in dists_part.items():
            dists[k] = d
    return BeliefSet(R.variables, tuple(d for d in dists if d is not None))


@dataclass(frozen=True)
class _Large:
    bn: CategoricalBn
    spec: BeliefGenSpec
    sample_sizes: tuple[int, ...]
    S: int
    laplace: float
    ess: float
    swap_limit: int
    tol: float
    max_sweeps: int
    max_outer: int


@lru_cache(maxsize=2)
def _shared_pool(n: int, S: int, seed: int) -> np.ndarray:
    """One DAG sample per experiment, rebuilt identically in each worker process."""
    return sample_closures(n, S, seed)


def _large_rep(ctx: _Large, seed: int, rep: int) -> list[Row]:
    rng = RngSeed(seed, rep).generator()
    true_dag = ctx.bn.dag
    R = choose_components(ctx.spec, true_dag.n, rng)
    U = estimate_u_fact(R, true_dag.n, ctx.S, ctx.laplace, closures=_shared_pool(true_dag.n, ctx.S, seed))
    K = generate_beliefs(ctx.spec, transitive_closure(true_dag), R, U, rng, tol=ctx.tol)
    J = fit_joint(K, U, tol=ctx.tol, max_sweeps=ctx.max_sweeps, max_outer=ctx.max_outer)
    data = forward_sample(ctx.bn, max(ctx.sample_sizes), rng)
    true_pdag = to_pdag(true_dag)
    rows: list[Row] = []
    for size in ctx.sample_sizes:
        head = data.head(size)
        arms = {
            "uniform": (ScoreConfig(ess=ctx.ess, prior="uniform"), None, False),
            "informative": (ScoreConfig(ess=ctx.ess), J, False),
            "informative+swap": (ScoreConfig(ess=ctx.ess), J, True),
        }
        cache = ScoreCache(head, ctx.ess)
        for arm, (cfg, prior, swap) in arms.items():
            result = greedy_search(head, prior, cfg, swap=swap, swap_limit=ctx.swap_limit, cache=cache)
            rows.append(({"arm": arm, "rows": size}, "shd", float(shd(to_pdag(result.dag), true_pdag))))
    return rows


def large_experiment(
    bn: CategoricalBn,
    spec: BeliefGenSpec,
    sample_sizes: Sequence[int] = LARGE_SAMPLE_SIZES,
    reps: int = 50,
    seed: int = 0,
    *,
    S: int = 100_000,
    laplace: float = DEFAULT_LAPLACE,
    ess: float = 1.0,
    swap_limit: int = 2000,
    tol: float = 1e-8,
    max_sweeps: int = 10_000,
    max_outer: int = 10_000,
    workers: int = 1,
    con: sqlite3.Connection | None = None,
) -> ExperimentReport:
    """SHD to the true PDAG for uniform, informative and informative+swap searches."""
    ctx = _Large(bn, spec, tuple(sample_sizes), S, laplace, ess, swap_limit, tol, max_sweeps, max_outer)
    results = _replicate(partial(_large_rep, ctx, seed), range(reps), workers)
    params = {
        "nodes": bn.n, "nc": spec.nc, "cs": spec.cs, "coherence": spec.coherence,
        "sample_sizes": list(sample_sizes), "reps": reps, "S": S, "laplace": laplace, "ess": ess,
    }
    return _finish("large", params, seed, results, con)
