"""BDeu data score, its family cache, and the total score data + prior."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Iterable, Literal

import numpy as np
from scipy.special import gammaln

from .beliefs import config_digits
from .counting import UEstimate
from .errors import ArityError, SizeMismatchError
from .graph import Dag, transitive_closure
from .joint import JointPrior, prior_log_score_digits

log = logging.getLogger(__name__)

PriorMode = Literal["informative", "uniform"]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Complete categorical data; ``rows[i, j]`` is the state of variable ``j``."""

    names: tuple[str, ...]
    arities: tuple[int, ...]
    rows: np.ndarray

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.int64).reshape(-1, len(self.names))
        object.__setattr__(self, "rows", rows)
        if len(self.arities) != len(self.names):
            raise ArityError(f"{len(self.names)} variables but {len(self.arities)} arities")
        if any(a < 2 for a in self.arities):
            raise ArityError(f"every variable needs at least 2 states, got {list(self.arities)}")
        if rows.size:
            bad = (rows < 0) | (rows >= np.array(self.arities))
            if bad.any():
                i, j = np.argwhere(bad)[0]
                raise ArityError(
                    f"row {i}: {self.names[j]} = {rows[i, j]} outside 0..{self.arities[j] - 1}"
                )

    @property
    def n_vars(self) -> int:
        return len(self.names)

    @property
    def num_rows(self) -> int:
        return len(self.rows)

    def head(self, k: int) -> Dataset:
        return Dataset(self.names, self.arities, self.rows[:k])


def parent_config_index(data: Dataset, parents: Iterable[int]) -> np.ndarray:
    """Mixed-radix parent configuration per row, lowest-indexed parent fastest."""
    idx = np.zeros(data.num_rows, dtype=np.int64)
    stride = 1
    for p in sorted(parents):
        idx += data.rows[:, p] * stride
        stride *= data.arities[p]
    return idx


def bdeu_family_score(data: Dataset, child: int, parents: Iterable[int], ess: float) -> float:
    parents = sorted(parents)
    if child in parents:
        raise ValueError(f"node {child} cannot be its own parent")
    if ess <= 0:
        raise ValueError("ess must be positive")
    r = data.arities[child]
    q = 1
    for p in parents:
        q *= data.arities[p]
    if not data.num_rows:
        return 0.0
    # parent configurations with no rows contribute zero, so only observed ones are counted
    _, inverse = np.unique(parent_config_index(data, parents), return_inverse=True)
    counts = np.zeros((inverse.max() + 1, r))
    np.add.at(counts, (inverse, data.rows[:, child]), 1)
    a_ij = ess / q
    a_ijk = ess / (q * r)
    n_ij = counts.sum(axis=1)
    return float(
        np.sum(gammaln(a_ij) - gammaln(a_ij + n_ij))
        + np.sum(gammaln(a_ijk + counts) - gammaln(a_ijk))
    )


class ScoreCache:
    """Local scores keyed by ``(child, sorted parents)`` for one dataset and ESS."""

    def __init__(self, data: Dataset, ess: float = 1.0):
        self.data = data
        self.ess = ess
        self._scores: dict[tuple[int, tuple[int, ...]], float] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def family(self, child: int, parents: Iterable[int]) -> float:
        key = (child, tuple(sorted(parents)))
        with self._lock:
            cached = self._scores.get(key)
            if cached is not None:
                self.hits += 1
                return cached
        value = bdeu_family_score(self.data, child, key[1], self.ess)
        with self._lock:
            self.misses += 1
            return self._scores.setdefault(key, value)

    def __len__(self) -> int:
        return len(self._scores)


@dataclass(frozen=True)
class ScoreConfig:
    ess: float = 1.0
    prior: PriorMode = "informative"
    drop_count_factor: bool = False
    count_source: UEstimate | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.ess <= 0:
            raise ValueError("ess must be positive")


def _checked_cache(data: Dataset, cfg: ScoreConfig, cache: ScoreCache | None) -> ScoreCache:
    if cache is None:
        return ScoreCache(data, cfg.ess)
    if cache.data is not data or cache.ess != cfg.ess:
        raise ValueError("score cache belongs to a different dataset or ESS")
    return cache


def data_log_score(dag: Dag, data: Dataset, cfg: ScoreConfig, cache: ScoreCache | None = None) -> float:
    if dag.n != data.n_vars:
        raise SizeMismatchError(f"graph has {dag.n} nodes, data has {data.n_vars} variables")
    cache = _checked_cache(data, cfg, cache)
    return sum(cache.family(v, dag.parents(v)) for v in range(dag.n))


def prior_score(J: JointPrior | None, closure: np.ndarray, cfg: ScoreConfig) -> float:
    if cfg.prior == "uniform" or J is None or not len(J.beliefs):
        return 0.0
    digits = config_digits(closure, J.beliefs.sources, J.beliefs.targets)
    return prior_log_score_digits(J, digits, cfg.count_source, drop_count_factor=cfg.drop_count_factor)


def total_score(
    dag: Dag,
    data: Dataset,
    J: JointPrior | None,
    cfg: ScoreConfig,
    cache: ScoreCache | None = None,
    closure: np.ndarray | None = None,
) -> float:
    """``Sc(D|G) + Sc(G|J)``; the prior term is dropped in uniform mode."""
    if closure is None:
        closure = transitive_closure(dag)
    elif closure.shape != (dag.n, dag.n):
        raise SizeMismatchError(f"closure shape {closure.shape} does not match {dag.n} nodes")
    return data_log_score(dag, data, cfg, cache) + prior_score(J, closure, cfg)
