"""Uniform DAG sampling and the uninformative configuration distribution U.

U_C is the fraction of labeled DAGs on ``n`` nodes whose configuration is C.
It is computed exactly by enumeration for small ``n`` (EXACT), or estimated
from uniformly sampled DAGs either as one joint table (FULL) or as a product
of tables over the independent partition of the path variables (FACT).
"""

from __future__ import annotations

import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Sequence

import numpy as np

from .beliefs import (
    BeliefDistribution,
    BeliefSet,
    Configuration,
    batch_config_codes,
    codes_of,
    digits_of,
    independent_partition,
    valid_codes,
    _canonical_pairs,
)
from .errors import InvalidConfigurationError, SupportMismatchError, TooLargeError
from .graph import MAX_ENUMERATION_NODES, Dag, count_dags, enumerate_parent_masks

log = logging.getLogger(__name__)

Method = Literal["FULL", "FACT", "EXACT"]

DEFAULT_LAPLACE = sys.float_info.epsilon
DEFAULT_SAMPLES = 1_000_000
STREAM_CHUNK = 5_000
MAX_EXACT_COUNT_NODES = 64
# a(n) ~ n! 2^(n(n-1)/2) / (M p^n)
ROBINSON_M = 0.574198038
ROBINSON_P = 1.488078545599710


@dataclass(frozen=True)
class RngSeed:
    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(self.stream,)))


# -- uniform sampling ----------------------------------------------------------


@lru_cache(maxsize=None)
def count_with_outpoints(n: int, k: int) -> int:
    """Labeled DAGs on ``n`` nodes with exactly ``k`` outpoints (no incoming edges)."""
    if k == n:
        return 1
    return math.comb(n, k) * sum(
        (2**k - 1) ** s * 2 ** (k * (n - k - s)) * count_with_outpoints(n - k, s)
        for s in range(1, n - k + 1)
    )


@lru_cache(maxsize=None)
def _next_layer_weights(k: int, r: int) -> tuple[int, ...]:
    return tuple(
        (2**k - 1) ** s * 2 ** (k * (r - s)) * count_with_outpoints(r, s) for s in range(1, r + 1)
    )


def _randbelow(total: int, rng: np.random.Generator) -> int:
    bits = total.bit_length()
    words = (bits + 63) // 64
    while True:
        raw = rng.integers(0, 2**64, size=words, dtype=np.uint64)
        value = int.from_bytes(raw.tobytes(), "little") >> (words * 64 - bits)
        if value < total:
            return value


def _choose(weights: Sequence[int], rng: np.random.Generator) -> int:
    """Index drawn with probability proportional to exact integer weights."""
    r = _randbelow(sum(weights), rng)
    for i, w in enumerate(weights):
        if r < w:
            return i
        r -= w
    raise AssertionError("unreachable")


def _layer_sizes(n: int, rng: np.random.Generator) -> list[int]:
    k = 1 + _choose([count_with_outpoints(n, j) for j in range(1, n + 1)], rng)
    sizes = [k]
    remaining = n - k
    while remaining:
        k = 1 + _choose(_next_layer_weights(k, remaining), rng)
        sizes.append(k)
        remaining -= k
    return sizes


def _sample_positional(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Adjacency over positions (topologically ordered by layer) and a label permutation."""
    sizes = _layer_sizes(n, rng)
    starts = np.concatenate([[0], np.cumsum(sizes)])
    adj = np.zeros((n, n), dtype=bool)
    for j in range(1, len(sizes)):
        lo, hi = starts[j], starts[j + 1]
        prev_lo = starts[j - 1]
        rows = hi - lo
        if prev_lo:
            adj[:prev_lo, lo:hi] = rng.random((prev_lo, rows)) < 0.5
        block = rng.random((sizes[j - 1], rows)) < 0.5
        empty = ~block.any(axis=0)
        while empty.any():
            block[:, empty] = rng.random((sizes[j - 1], int(empty.sum()))) < 0.5
            empty = ~block.any(axis=0)
        adj[prev_lo:lo, lo:hi] = block
    return adj, rng.permutation(n)


def sample_uniform_dag(n: int, rng: np.random.Generator) -> Dag:
    """One labeled DAG drawn uniformly, by exact outpoint counts (no MCMC)."""
    if n < 1:
        raise ValueError("need at least one node")
    adj, perm = _sample_positional(n, rng)
    labeled = np.zeros_like(adj)
    labeled[np.ix_(perm, perm)] = adj
    return Dag.from_adjacency(labeled)


def _positional_closure(adj: np.ndarray) -> np.ndarray:
    n = adj.shape[0]
    reach = np.zeros_like(adj)
    for u in range(n - 1, -1, -1):
        for c in np.flatnonzero(adj[u]):
            reach[u, c] = True
            reach[u] |= reach[c]
    return reach


def _sample_stream(n: int, count: int, seed: RngSeed) -> np.ndarray:
    rng = seed.generator()
    out = np.zeros((count, n, n), dtype=bool)
    for i in range(count):
        adj, perm = _sample_positional(n, rng)
        out[i][np.ix_(perm, perm)] = _positional_closure(adj)
    return out


def sample_closures(n: int, S: int, seed: int = 0, *, workers: int = 1) -> np.ndarray:
    """Closures of ``S`` uniform DAGs, shape ``(S, n, n)``.

    Samples come in fixed-size streams ``(seed, 0), (seed, 1), ...`` so the
    result does not depend on the number of workers.
    """
    jobs = [
        (n, min(STREAM_CHUNK, S - start), RngSeed(seed, i))
        for i, start in enumerate(range(0, S, STREAM_CHUNK))
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_sample_stream, *zip(*jobs)))
    else:
        chunks = [_sample_stream(*job) for job in jobs]
    log.debug("sampled %d DAGs on %d nodes in %d streams", S, n, len(jobs))
    return np.concatenate(chunks) if chunks else np.zeros((0, n, n), dtype=bool)


# -- U tables ------------------------------------------------------------------


@dataclass(frozen=True)
class UPart:
    variables: tuple[int, ...]
    codes: np.ndarray
    probs: np.ndarray
    counts: np.ndarray

    def positions(self, codes: np.ndarray) -> np.ndarray:
        """Row of each code in the table, ``-1`` when the code is not valid."""
        codes = np.asarray(codes, dtype=np.int64)
        pos = np.searchsorted(self.codes, codes)
        pos = np.minimum(pos, len(self.codes) - 1)
        return np.where(self.codes[pos] == codes, pos, -1)


@dataclass(frozen=True)
class UEstimate:
    parts: tuple[UPart, ...]
    num_variables: int
    n_nodes: int
    method: Method
    samples: int
    laplace: float
    seed: int | None = None
    denominator: str = "valid"

    def part_of(self, k: int) -> tuple[UPart, int]:
        for part in self.parts:
            if k in part.variables:
                return part, part.variables.index(k)
        raise KeyError(f"variable {k} is not covered by U")

    def log_prob_digits(self, digits: np.ndarray) -> float:
        total = 0.0
        for part in self.parts:
            code = int(codes_of(digits[list(part.variables)]))
            pos = int(part.positions(np.array([code]))[0])
            if pos < 0 or part.probs[pos] <= 0:
                return -math.inf
            total += math.log(part.probs[pos])
        return total

    def log_prob(self, config: Configuration) -> float:
        return self.log_prob_digits(config.digits)

    def probs_for_codes(self, codes: np.ndarray) -> np.ndarray:
        """Probabilities of full configurations given by code (product over parts)."""
        digits = digits_of(codes, self.num_variables)
        out = np.ones(len(digits))
        for part in self.parts:
            pos = part.positions(codes_of(digits[:, list(part.variables)]))
            out *= np.where(pos >= 0, part.probs[np.maximum(pos, 0)], 0.0)
        return out

    def marginal(self, k: int) -> BeliefDistribution:
        part, col = self.part_of(k)
        values = digits_of(part.codes, len(part.variables))[:, col]
        m = np.bincount(values, weights=part.probs, minlength=4)
        return BeliefDistribution.from_array(m / m.sum())

    @property
    def log_num_dags(self) -> float:
        return log_count_dags(self.n_nodes)

    @property
    def exact_count(self) -> bool:
        return self.n_nodes <= MAX_EXACT_COUNT_NODES


def _laplace_part(variables: tuple[int, ...], codes: np.ndarray, sample_codes: np.ndarray, l: float) -> UPart:
    S = len(sample_codes)
    pos = np.minimum(np.searchsorted(codes, sample_codes), len(codes) - 1)
    if not np.array_equal(codes[pos], sample_codes):
        raise AssertionError("a sampled DAG produced a configuration outside the valid set")
    counts = np.bincount(pos, minlength=len(codes)).astype(np.int64)
    denom = S + len(codes) * l
    probs = (counts + l) / denom if denom > 0 else np.full(len(codes), 1.0 / len(codes))
    return UPart(variables, codes, probs, counts)


def _resolve_closures(n: int, S: int, seed: int, closures: np.ndarray | None, workers: int) -> np.ndarray:
    if closures is None:
        return sample_closures(n, S, seed, workers=workers)
    if closures.shape[1:] != (n, n) or len(closures) < S:
        raise ValueError(f"need at least {S} closures over {n} nodes, got {closures.shape}")
    return closures[:S]


def estimate_u_full(
    R: BeliefSet,
    n: int,
    S: int,
    l: float = DEFAULT_LAPLACE,
    seed: int = 0,
    *,
    closures: np.ndarray | None = None,
    workers: int = 1,
) -> UEstimate:
    if S < 1 or l < 0:
        raise ValueError("need S >= 1 and l >= 0")
    codes = valid_codes(R)
    pool = _resolve_closures(n, S, seed, closures, workers)
    part = _laplace_part(tuple(range(len(R))), codes, batch_config_codes(pool, R.sources, R.targets), l)
    log.info("FULL estimate: %d valid configurations from %d DAGs on %d nodes", len(codes), S, n)
    return UEstimate((part,), len(R), n, "FULL", S, l, seed)


def estimate_u_fact(
    R: BeliefSet,
    n: int,
    S: int,
    l: float = DEFAULT_LAPLACE,
    seed: int = 0,
    *,
    closures: np.ndarray | None = None,
    workers: int = 1,
) -> UEstimate:
    if S < 1 or l < 0:
        raise ValueError("need S >= 1 and l >= 0")
    partition = independent_partition(R)
    tables = [(ks, valid_codes(R.subset(ks))) for ks in partition.parts]
    pool = _resolve_closures(n, S, seed, closures, workers)
    parts = []
    for ks, codes in tables:
        sub = R.subset(ks)
        parts.append(_laplace_part(ks, codes, batch_config_codes(pool, sub.sources, sub.targets), l))
    log.info("FACT estimate: %d parts from %d DAGs on %d nodes", len(parts), S, n)
    return UEstimate(tuple(parts), len(R), n, "FACT", S, l, seed)


@lru_cache(maxsize=8)
def _exact_ancestors(n: int) -> np.ndarray:
    """Strict-ancestor bitmasks of every node, one row per labeled DAG."""
    if n == 0:
        return np.zeros((1, 0), dtype=np.int64)
    rows = []
    for masks in enumerate_parent_masks(n):
        anc = [-1] * n

        def of(v: int) -> int:
            if anc[v] < 0:
                acc = 0
                m = masks[v]
                while m:
                    low = m & -m
                    p = low.bit_length() - 1
                    acc |= low | of(p)
                    m ^= low
                anc[v] = acc
            return anc[v]

        rows.append([of(v) for v in range(n)])
    return np.array(rows, dtype=np.int64).reshape(-1, n)


@lru_cache(maxsize=256)
def _exact_codes(pairs: tuple[tuple[int, int], ...], n: int) -> np.ndarray:
    """Configuration code of every labeled DAG for canonically labelled pairs."""
    anc = _exact_ancestors(n)
    digits = np.empty((len(anc), len(pairs)), dtype=np.int64)
    for k, (x, y) in enumerate(pairs):
        ax, ay = anc[:, x], anc[:, y]
        fwd = (ay >> x) & 1 == 1
        bwd = (ax >> y) & 1 == 1
        conf = (ax & ay) != 0
        digits[:, k] = np.where(fwd, 0, np.where(bwd, 1, np.where(conf, 2, 3)))
    return codes_of(digits)


def estimate_u_exact(R: BeliefSet, n: int) -> UEstimate:
    """Exact U by enumerating every labeled DAG; an oracle for small ``n``."""
    if n > MAX_ENUMERATION_NODES:
        raise TooLargeError(f"exact U needs full enumeration; {n} nodes exceeds {MAX_ENUMERATION_NODES}")
    nodes = R.nodes()
    if nodes and nodes[-1] >= n:
        raise ValueError(f"path variables mention node {nodes[-1]} but the graph has {n} nodes")
    codes = valid_codes(R)
    # U is invariant under relabelling, so the canonical labelling gives the same table
    dag_codes = _exact_codes(_canonical_pairs(R.variables), n)
    total = count_dags(n)
    pos = np.searchsorted(codes, dag_codes)
    counts = np.bincount(pos, minlength=len(codes)).astype(np.int64)
    part = UPart(tuple(range(len(R))), codes, counts / total, counts)
    return UEstimate((part,), len(R), n, "EXACT", total, 0.0)


@dataclass(frozen=True)
class LogCount:
    """``log N_C``, or ``log U_C`` plus a graph-independent constant.

    ``constant`` is the ``log N`` that was added (0.0 when dropped) and
    ``exact`` says whether it is the exact DAG count.
    """

    value: float
    constant: float
    exact: bool


def log_count_dags(n: int) -> float:
    """``log`` of the number of labeled DAGs; asymptotic above ``MAX_EXACT_COUNT_NODES``."""
    if n <= MAX_EXACT_COUNT_NODES:
        return math.log(count_dags(n))
    return math.lgamma(n + 1) + n * (n - 1) / 2 * math.log(2) - math.log(ROBINSON_M) - n * math.log(ROBINSON_P)


def log_count_for(config: Configuration, U: UEstimate, *, drop_constant: bool = False) -> LogCount:
    lp = U.log_prob(config)
    if lp == -math.inf:
        raise InvalidConfigurationError(f"U assigns zero probability to configuration {config}")
    if drop_constant:
        return LogCount(lp, 0.0, False)
    constant = U.log_num_dags
    return LogCount(lp + constant, constant, U.exact_count)


def kl_divergence(p: Sequence[float] | np.ndarray, q: Sequence[float] | np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise SupportMismatchError(f"distributions have shapes {p.shape} and {q.shape}")
    mass = p > 0
    if np.any(q[mass] <= 0):
        raise SupportMismatchError("q is zero where p has mass")
    return float(np.sum(p[mass] * np.log(p[mass] / q[mass])))
