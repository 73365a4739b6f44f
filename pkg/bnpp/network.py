"""Categorical Bayesian networks: random parameters and ancestral sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArityError, InvalidProbabilityError, SizeMismatchError
from .graph import Dag
from .score import Dataset, parent_config_index

CPT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class CategoricalBn:
    """``cpts[v]`` has one row per parent configuration (mixed radix, lowest
    parent fastest) and one column per state of ``v``."""

    dag: Dag
    names: tuple[str, ...]
    arities: tuple[int, ...]
    cpts: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        n = self.dag.n
        if not len(self.names) == len(self.arities) == len(self.cpts) == n:
            raise SizeMismatchError(f"network over {n} nodes needs {n} names, arities and CPTs")
        if any(a < 2 for a in self.arities):
            raise ArityError(f"every variable needs at least 2 states, got {list(self.arities)}")
        for v, cpt in enumerate(self.cpts):
            q = int(np.prod([self.arities[p] for p in self.dag.parents(v)], dtype=np.int64))
            if cpt.shape != (q, self.arities[v]):
                raise SizeMismatchError(
                    f"CPT of {self.names[v]} has shape {cpt.shape}, expected {(q, self.arities[v])}"
                )
            if np.any(cpt < 0) or np.any(np.abs(cpt.sum(axis=1) - 1.0) > CPT_TOL):
                raise InvalidProbabilityError(f"CPT of {self.names[v]} has a column not summing to 1")

    @property
    def n(self) -> int:
        return self.dag.n


def gamma_sample(shape: float, scale: float, rng: np.random.Generator, size: int | tuple[int, ...] | None = None):
    if shape <= 0 or scale <= 0:
        raise ValueError("gamma shape and scale must be positive")
    return rng.gamma(shape, scale, size)


def random_cpts(
    dag: Dag,
    arities: tuple[int, ...],
    shape: float,
    scale: float,
    rng: np.random.Generator,
    names: tuple[str, ...] | None = None,
) -> CategoricalBn:
    """Every CPT column is a vector of Gamma draws normalized to sum 1."""
    cpts = []
    for v in range(dag.n):
        q = int(np.prod([arities[p] for p in dag.parents(v)], dtype=np.int64))
        draws = gamma_sample(shape, scale, rng, (q, arities[v]))
        totals = draws.sum(axis=1, keepdims=True)
        # tiny shapes can underflow a whole column to zero
        cpts.append(np.divide(draws, totals, out=np.full_like(draws, 1.0 / arities[v]), where=totals > 0))
    if names is None:
        names = tuple(f"V{v}" for v in range(dag.n))
    return CategoricalBn(dag, names, tuple(arities), tuple(cpts))


def forward_sample(bn: CategoricalBn, rows: int, rng: np.random.Generator) -> Dataset:
    if rows < 0:
        raise ValueError("row count must be non-negative")
    out = np.zeros((rows, bn.n), dtype=np.int64)
    partial = Dataset(bn.names, bn.arities, out)
    for v in bn.dag.topological_order():
        j = parent_config_index(partial, bn.dag.parents(v))
        cum = np.cumsum(bn.cpts[v][j], axis=1)
        u = rng.random(rows)
        out[:, v] = np.minimum((u[:, None] >= cum).sum(axis=1), bn.arities[v] - 1)
    return Dataset(bn.names, bn.arities, out)


def random_dag(n: int, max_parents: int, rng: np.random.Generator) -> Dag:
    """Random order, then up to ``max_parents`` parents drawn from earlier nodes."""
    order = rng.permutation(n)
    edges = []
    for k in range(1, n):
        size = int(rng.integers(0, min(max_parents, k) + 1))
        for p in rng.choice(k, size=size, replace=False):
            edges.append((int(order[p]), int(order[k])))
    return Dag(n, edges)


def synthetic_network(
    n: int = 20,
    max_parents: int = 3,
    rng: np.random.Generator | None = None,
    *,
    shape: float = 0.5,
    scale: float = 1.0,
) -> CategoricalBn:
    """Random network with 3 or 4 states per variable and Gamma CPTs."""
    rng = rng if rng is not None else np.random.default_rng()
    dag = random_dag(n, max_parents, rng)
    arities = tuple(int(a) for a in rng.choice([3, 4], size=n))
    return random_cpts(dag, arities, shape, scale, rng)


def with_random_arities(bn: CategoricalBn, rng: np.random.Generator, *, shape: float = 0.5, scale: float = 1.0) -> CategoricalBn:
    """Same structure, fresh 3-or-4 state counts and Gamma CPTs."""
    arities = tuple(int(a) for a in rng.choice([3, 4], size=bn.n))
    return random_cpts(bn.dag, arities, shape, scale, rng, bn.names)
