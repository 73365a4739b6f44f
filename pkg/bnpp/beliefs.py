"""Path variables, belief sets and configurations.

A path variable ``r(X, Y)`` takes one of four values describing the ancestral
relation of ``X`` and ``Y`` in a DAG. A configuration assigns a value to
every variable of a belief set; its code is the base-4 number of its digits
with the first variable as the most significant digit, and its index is
``code + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache
from typing import Iterable, Literal, Sequence

import networkx as nx
import numpy as np

from .errors import InvalidProbabilityError, SizeMismatchError, TooManyVariablesError
from .graph import Dag

MAX_PART_VARIABLES = 12
PROB_TOL = 1e-9


class PathValue(IntEnum):
    FORWARD = 0
    BACKWARD = 1
    CONFOUNDED = 2
    NONE = 3

    @property
    def symbol(self) -> str:
        return ("=>", "<=", "<=>", "-/-")[self]


@dataclass(frozen=True)
class PathVariable:
    source: int
    target: int

    def __post_init__(self) -> None:
        if self.source == self.target:
            raise ValueError(f"path variable needs two distinct nodes, got {self.source} twice")

    @property
    def pair(self) -> frozenset[int]:
        return frozenset((self.source, self.target))


@dataclass(frozen=True)
class BeliefDistribution:
    forward: float
    backward: float
    confounded: float
    none: float

    def __post_init__(self) -> None:
        values = self.as_array()
        if np.any(values < -PROB_TOL) or np.any(values > 1 + PROB_TOL):
            raise InvalidProbabilityError(f"probabilities outside [0, 1]: {values.tolist()}")
        if abs(values.sum() - 1.0) > PROB_TOL:
            raise InvalidProbabilityError(f"probabilities sum to {values.sum():.12g}, not 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.forward, self.backward, self.confounded, self.none], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> BeliefDistribution:
        return cls(*(float(v) for v in values))

    @classmethod
    def uniform(cls) -> BeliefDistribution:
        return cls(0.25, 0.25, 0.25, 0.25)


@dataclass(frozen=True)
class BeliefSet:
    variables: tuple[PathVariable, ...]
    dists: tuple[BeliefDistribution, ...]

    def __post_init__(self) -> None:
        if len(self.variables) != len(self.dists):
            raise SizeMismatchError(
                f"{len(self.variables)} path variables but {len(self.dists)} distributions"
            )
        pairs = [v.pair for v in self.variables]
        if len(set(pairs)) != len(pairs):
            raise ValueError("at most one path variable per unordered node pair")

    @classmethod
    def of_variables(cls, variables: Iterable[PathVariable]) -> BeliefSet:
        """Variables only (R without Pi); distributions default to uniform."""
        variables = tuple(variables)
        return cls(variables, tuple(BeliefDistribution.uniform() for _ in variables))

    @classmethod
    def of_pairs(cls, pairs: Iterable[tuple[int, int]]) -> BeliefSet:
        return cls.of_variables(PathVariable(x, y) for x, y in pairs)

    def __len__(self) -> int:
        return len(self.variables)

    @property
    def sources(self) -> np.ndarray:
        return np.array([v.source for v in self.variables], dtype=np.intp)

    @property
    def targets(self) -> np.ndarray:
        return np.array([v.target for v in self.variables], dtype=np.intp)

    def nodes(self) -> list[int]:
        return sorted({x for v in self.variables for x in (v.source, v.target)})

    def subset(self, indices: Sequence[int]) -> BeliefSet:
        return BeliefSet(
            tuple(self.variables[k] for k in indices), tuple(self.dists[k] for k in indices)
        )

    def targets_matrix(self) -> np.ndarray:
        """``(m, 4)`` array of the belief distributions."""
        if not self.dists:
            return np.zeros((0, 4))
        return np.vstack([d.as_array() for d in self.dists])


@dataclass(frozen=True)
class Configuration:
    values: tuple[PathValue, ...]

    @property
    def code(self) -> int:
        code = 0
        for v in self.values:
            code = code * 4 + int(v)
        return code

    @property
    def index(self) -> int:
        return self.code + 1

    @property
    def digits(self) -> np.ndarray:
        return np.array([int(v) for v in self.values], dtype=np.uint8)

    @classmethod
    def from_digits(cls, digits: Iterable[int]) -> Configuration:
        return cls(tuple(PathValue(int(d)) for d in digits))

    @classmethod
    def from_index(cls, index: int, m: int) -> Configuration:
        return cls.from_digits(digits_of(np.array([index - 1]), m)[0])

    def restrict(self, indices: Sequence[int]) -> Configuration:
        return Configuration(tuple(self.values[k] for k in indices))

    def __str__(self) -> str:
        return "(" + ", ".join(v.symbol for v in self.values) + ")"


@dataclass(frozen=True)
class IndependentPartition:
    parts: tuple[tuple[int, ...], ...] = field(default=())

    def __len__(self) -> int:
        return len(self.parts)


def place_values(m: int) -> np.ndarray:
    return 4 ** np.arange(m - 1, -1, -1, dtype=np.int64)


def digits_of(codes: np.ndarray, m: int) -> np.ndarray:
    """``(len(codes), m)`` digit matrix, first variable most significant."""
    codes = np.asarray(codes, dtype=np.int64)
    return ((codes[:, None] // place_values(m)[None, :]) % 4).astype(np.uint8)


def codes_of(digits: np.ndarray) -> np.ndarray:
    digits = np.asarray(digits, dtype=np.int64)
    return digits @ place_values(digits.shape[-1])


# -- constraint graph ------------------------------------------------------


def constraint_graph(R: BeliefSet) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(R.nodes())
    for k, v in enumerate(R.variables):
        g.add_edge(v.source, v.target, variable=k)
    return g


def independent_partition(R: BeliefSet) -> IndependentPartition:
    g = constraint_graph(R)
    parts = []
    for component in nx.connected_components(g):
        ks = sorted(
            k for k, v in enumerate(R.variables) if v.source in component
        )
        parts.append(tuple(ks))
    parts.sort(key=lambda p: p[0])
    return IndependentPartition(tuple(parts))


# -- configurations of DAGs ------------------------------------------------


def config_digits(closure: np.ndarray, sources: np.ndarray, targets: np.ndarray) -> np.ndarray:
    fwd = closure[sources, targets]
    bwd = closure[targets, sources]
    conf = (closure[:, sources] & closure[:, targets]).any(axis=0)
    return np.where(fwd, 0, np.where(bwd, 1, np.where(conf, 2, 3))).astype(np.uint8)


def batch_config_codes(
    closures: np.ndarray, sources: np.ndarray, targets: np.ndarray
) -> np.ndarray:
    """Configuration codes for a stack of closures shaped ``(S, n, n)``."""
    fwd = closures[:, sources, targets]
    bwd = closures[:, targets, sources]
    conf = (closures[:, :, sources] & closures[:, :, targets]).any(axis=1)
    digits = np.where(fwd, 0, np.where(bwd, 1, np.where(conf, 2, 3)))
    return codes_of(digits)


def configuration_of(dag: Dag, closure: np.ndarray, R: BeliefSet) -> Configuration:
    if closure.shape != (dag.n, dag.n):
        raise SizeMismatchError(f"closure shape {closure.shape} does not match {dag.n} nodes")
    if not len(R):
        return Configuration(())
    return Configuration.from_digits(config_digits(closure, R.sources, R.targets))


# -- validity ----------------------------------------------------------------


def _canonical_pairs(variables: Sequence[PathVariable]) -> tuple[tuple[int, int], ...]:
    local: dict[int, int] = {}
    out = []
    for v in variables:
        for x in (v.source, v.target):
            local.setdefault(x, len(local))
        out.append((local[v.source], local[v.target]))
    return tuple(out)


def _witness_consistent(pairs: Sequence[tuple[int, int]], digits: Sequence[int]) -> bool:
    """Build the witness graph of a (partial) configuration and re-derive it.

    Forward/backward values become edges, each confounded value gets a fresh
    latent parent of both endpoints. The configuration is consistent iff the
    witness is acyclic and every variable reads back its declared value.
    """
    nodes = 1 + max((max(p) for p in pairs), default=-1)
    latent = nodes + sum(1 for d in digits if d == PathValue.CONFOUNDED)
    children = [0] * latent
    h = nodes
    for (x, y), d in zip(pairs, digits):
        if d == PathValue.FORWARD:
            children[x] |= 1 << y
        elif d == PathValue.BACKWARD:
            children[y] |= 1 << x
        elif d == PathValue.CONFOUNDED:
            children[h] |= (1 << x) | (1 << y)
            h += 1

    reach = [0] * latent
    for u in range(latent):
        seen = children[u]
        frontier = seen
        while frontier:
            low = frontier & -frontier
            frontier ^= low
            w = low.bit_length() - 1
            new = children[w] & ~seen
            seen |= new
            frontier |= new
        if seen >> u & 1:
            return False
        reach[u] = seen

    for (x, y), d in zip(pairs, digits):
        if reach[x] >> y & 1:
            implied = PathValue.FORWARD
        elif reach[y] >> x & 1:
            implied = PathValue.BACKWARD
        elif any(r >> x & 1 and r >> y & 1 for r in reach):
            implied = PathValue.CONFOUNDED
        else:
            implied = PathValue.NONE
        if implied != d:
            return False
    return True


def is_valid(C: Configuration, R: BeliefSet) -> bool:
    if len(C.values) != len(R):
        raise SizeMismatchError(f"configuration has {len(C.values)} values for {len(R)} variables")
    return _witness_consistent(_canonical_pairs(R.variables), [int(v) for v in C.values])


@lru_cache(maxsize=256)
def _valid_codes_cached(pairs: tuple[tuple[int, int], ...]) -> np.ndarray:
    m = len(pairs)
    found: list[int] = []
    digits: list[int] = []

    def extend(k: int) -> None:
        if k == m:
            code = 0
            for d in digits:
                code = code * 4 + d
            found.append(code)
            return
        for d in range(4):
            digits.append(d)
            if _witness_consistent(pairs[: k + 1], digits):
                extend(k + 1)
            digits.pop()

    extend(0)
    codes = np.array(found, dtype=np.int64)
    codes.setflags(write=False)
    return codes


def valid_codes(R: BeliefSet) -> np.ndarray:
    """Sorted codes of the valid configurations of ``R``.

    Every restriction of a valid configuration is valid, so the enumeration
    prunes a prefix as soon as its witness is inconsistent.
    """
    if len(R) > MAX_PART_VARIABLES:
        raise TooManyVariablesError(
            f"{len(R)} path variables in one part; the limit is {MAX_PART_VARIABLES}"
        )
    return _valid_codes_cached(_canonical_pairs(R.variables))


def enumerate_valid_configurations(R: BeliefSet) -> list[Configuration]:
    m = len(R)
    return [Configuration.from_digits(row) for row in digits_of(valid_codes(R), m)]


# -- statements ----------------------------------------------------------------

StatementKind = Literal["causes", "not-causes", "associated", "not-associated"]

_STATEMENT_VALUES: dict[str, tuple[PathValue, ...]] = {
    "causes": (PathValue.FORWARD,),
    "not-causes": (PathValue.BACKWARD, PathValue.CONFOUNDED, PathValue.NONE),
    "associated": (PathValue.FORWARD, PathValue.BACKWARD, PathValue.CONFOUNDED),
    "not-associated": (PathValue.NONE,),
}


@dataclass(frozen=True)
class Statement:
    source: int
    target: int
    kind: StatementKind
    p: float


def statement_distribution(kind: str, p: float, u_marginal: BeliefDistribution) -> BeliefDistribution:
    if kind not in _STATEMENT_VALUES:
        raise InvalidProbabilityError(f"unknown statement kind {kind!r}")
    if not 0.0 <= p <= 1.0:
        raise InvalidProbabilityError(f"statement probability {p} outside [0, 1]")
    stated = np.zeros(4, dtype=bool)
    stated[list(_STATEMENT_VALUES[kind])] = True
    u = u_marginal.as_array()
    out = np.zeros(4)
    for side, mass in ((stated, p), (~stated, 1.0 - p)):
        weights = np.where(side, u, 0.0)
        if weights.sum() <= 0:
            weights = side.astype(float)
        out += mass * weights / weights.sum()
    return BeliefDistribution.from_array(out / out.sum())


def beliefs_from_statements(
    statements: Sequence[Statement], u_marginals: Sequence[BeliefDistribution]
) -> BeliefSet:
    if len(statements) != len(u_marginals):
        raise SizeMismatchError("one uninformative marginal is needed per statement")
    variables = tuple(PathVariable(s.source, s.target) for s in statements)
    dists = tuple(
        statement_distribution(s.kind, s.p, u) for s, u in zip(statements, u_marginals)
    )
    return BeliefSet(variables, dists)
