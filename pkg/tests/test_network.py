from __future__ import annotations

import numpy as np
import pytest

from bnpp.errors import InvalidProbabilityError, SizeMismatchError
from bnpp.graph import Dag
from bnpp.network import (
    CategoricalBn,
    forward_sample,
    gamma_sample,
    random_cpts,
    random_dag,
    synthetic_network,
    with_random_arities,
)


def test_gamma_columns_have_dirichlet_moments() -> None:
    rng = np.random.default_rng(0)
    draws = gamma_sample(0.5, 1.0, rng, (100_000, 2))
    p = draws[:, 0] / draws.sum(axis=1)
    assert abs(p.mean() - 0.5) < 0.01
    assert abs(p.var() - 0.125) < 0.01
    with pytest.raises(ValueError):
        gamma_sample(0.0, 1.0, rng)


def test_random_cpts_shapes() -> None:
    dag = Dag(3, [(0, 2), (1, 2)])
    bn = random_cpts(dag, (2, 3, 4), 0.5, 1.0, np.random.default_rng(1))
    assert [c.shape for c in bn.cpts] == [(1, 2), (1, 3), (6, 4)]
    for cpt in bn.cpts:
        np.testing.assert_allclose(cpt.sum(axis=1), 1.0)
    assert bn.names == ("V0", "V1", "V2")


def test_forward_sample_follows_deterministic_cpts() -> None:
    dag = Dag(3, [(0, 1), (1, 2)])
    cpts = (
        np.array([[0.0, 1.0]]),
        np.array([[1.0, 0.0], [0.0, 1.0]]),
        np.array([[0.0, 1.0], [1.0, 0.0]]),
    )
    bn = CategoricalBn(dag, ("A", "B", "C"), (2, 2, 2), cpts)
    data = forward_sample(bn, 50, np.random.default_rng(2))
    assert data.rows[:, 0].tolist() == [1] * 50
    assert np.array_equal(data.rows[:, 1], data.rows[:, 0])
    assert np.array_equal(data.rows[:, 2], 1 - data.rows[:, 1])

    empty = forward_sample(bn, 0, np.random.default_rng(2))
    assert empty.rows.shape == (0, 3)


def test_forward_sample_frequencies() -> None:
    dag = Dag(2, [(0, 1)])
    cpts = (np.array([[0.3, 0.7]]), np.array([[0.9, 0.1], [0.2, 0.8]]))
    bn = CategoricalBn(dag, ("A", "B"), (2, 2), cpts)
    rows = forward_sample(bn, 40_000, np.random.default_rng(3)).rows
    assert abs(rows[:, 0].mean() - 0.7) < 0.01
    assert abs(rows[rows[:, 0] == 1, 1].mean() - 0.8) < 0.01


def test_network_validation() -> None:
    dag = Dag(2, [(0, 1)])
    with pytest.raises(InvalidProbabilityError):
        CategoricalBn(dag, ("A", "B"), (2, 2), (np.array([[0.5, 0.6]]), np.full((2, 2), 0.5)))
    with pytest.raises(SizeMismatchError):
        CategoricalBn(dag, ("A", "B"), (2, 2), (np.array([[0.5, 0.5]]), np.full((1, 2), 0.5)))


def test_random_dag_respects_parent_limit() -> None:
    rng = np.random.default_rng(4)
    for _ in range(20):
        dag = random_dag(12, 3, rng)
        assert all(len(dag.parents(v)) <= 3 for v in range(12))
        assert len(dag.topological_order()) == 12


def test_synthetic_network() -> None:
    bn = synthetic_network(20, 3, np.random.default_rng(5))
    assert bn.n == 20
    assert set(bn.arities) <= {3, 4}
    other = with_random_arities(bn, np.random.default_rng(6))
    assert other.dag == bn.dag
    assert other.names == bn.names
