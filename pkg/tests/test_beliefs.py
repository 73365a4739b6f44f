from __future__ import annotations

import numpy as np
import pytest

from bnpp.beliefs import (
    BeliefDistribution,
    BeliefSet,
    Configuration,
    PathValue,
    Statement,
    beliefs_from_statements,
    configuration_of,
    constraint_graph,
    enumerate_valid_configurations,
    independent_partition,
    is_valid,
    valid_codes,
)
from bnpp.errors import CycleError, InvalidProbabilityError, SizeMismatchError, TooManyVariablesError
from bnpp.graph import Dag, enumerate_dags, transitive_closure

F, B, C, N = PathValue.FORWARD, PathValue.BACKWARD, PathValue.CONFOUNDED, PathValue.NONE

# r(X, Y), r(Y, Z), r(X, Z)
TRIANGLE = BeliefSet.of_pairs([(0, 1), (1, 2), (0, 2)])


def test_configuration_codes_and_indices() -> None:
    c = Configuration((N, F, F))
    assert c.code == 48
    assert c.index == 49
    assert Configuration.from_index(49, 3) == c
    assert Configuration.from_index(1, 3).values == (F, F, F)
    assert Configuration.from_index(64, 3).values == (N, N, N)
    assert str(c) == "(-/-, =>, =>)"


@pytest.mark.parametrize(
    "values, valid",
    [
        ((F, F, F), True),
        ((F, F, B), False),
        ((F, F, C), False),
        ((N, F, F), True),
        ((N, N, N), True),
        ((C, C, C), True),
        ((F, F, N), False),
        ((C, F, N), False),
        ((B, B, B), True),
    ],
)
def test_triangle_validity(values, valid) -> None:
    assert is_valid(Configuration(values), TRIANGLE) is valid


def test_is_valid_checks_length() -> None:
    with pytest.raises(SizeMismatchError):
        is_valid(Configuration((F,)), TRIANGLE)


@pytest.mark.parametrize(
    "pairs, count",
    [
        ([(0, 1)], 4),
        ([(0, 1), (2, 3)], 16),
        ([(0, 1), (1, 2), (3, 4), (4, 5)], 256),
        ([(0, 1), (1, 2), (0, 2)], 41),
        ([(0, 1), (1, 2), (2, 3)], 64),
        ([(0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 7)], 4096),
    ],
)
def test_valid_configuration_counts(pairs, count) -> None:
    R = BeliefSet.of_pairs(pairs)
    assert len(valid_codes(R)) == count
    configs = enumerate_valid_configurations(R)
    assert [c.code for c in configs] == sorted(c.code for c in configs)


def _witness_dag(R: BeliefSet, config: Configuration) -> Dag | None:
    # forward and backward values become edges, each confounded pair gets its own latent parent
    n = max(R.nodes()) + 1
    latents = sum(1 for v in config.values if v == C)
    dag = Dag(n + latents)
    extra = n
    try:
        for x, y, v in zip(R.sources, R.targets, config.values):
            if v == F:
                dag.add_edge(int(x), int(y))
            elif v == B:
                dag.add_edge(int(y), int(x))
            elif v == C:
                dag.add_edge(extra, int(x))
                dag.add_edge(extra, int(y))
                extra += 1
    except CycleError:
        return None
    return dag


def _realized_codes(R: BeliefSet) -> set[int]:
    found = set()
    for code in range(4 ** len(R)):
        config = Configuration.from_index(code + 1, len(R))
        dag = _witness_dag(R, config)
        if dag is not None and configuration_of(dag, transitive_closure(dag), R) == config:
            found.add(code)
    return found


@pytest.mark.parametrize(
    "pairs",
    [[(0, 1), (1, 2), (0, 2)], [(0, 1), (1, 2), (2, 3)], [(0, 1), (2, 3)]],
)
def test_valid_codes_are_the_configurations_some_dag_realizes(pairs) -> None:
    R = BeliefSet.of_pairs(pairs)
    assert _realized_codes(R) == set(valid_codes(R).tolist())


def test_every_chain_configuration_has_a_dag() -> None:
    R = BeliefSet.of_pairs([(0, 1), (1, 2), (2, 3)])
    # X <-> Y, Y and Z unrelated, Z <-> W needs two latent parents
    config = Configuration((C, N, C))
    dag = _witness_dag(R, config)
    assert dag is not None and dag.n == 6
    assert configuration_of(dag, transitive_closure(dag), R) == config
    assert is_valid(config, R)


def test_valid_codes_refuse_oversized_parts() -> None:
    R = BeliefSet.of_pairs([(i, i + 1) for i in range(13)])
    with pytest.raises(TooManyVariablesError):
        valid_codes(R)


def test_configurations_of_dags_are_valid() -> None:
    R = BeliefSet.of_pairs([(0, 1), (1, 2), (0, 2), (2, 3)])
    valid = set(valid_codes(R).tolist())
    for dag in enumerate_dags(4):
        config = configuration_of(dag, transitive_closure(dag), R)
        assert config.code in valid


def test_configuration_of_examples() -> None:
    chain = Dag(3, [(0, 1), (1, 2)])
    assert configuration_of(chain, transitive_closure(chain), TRIANGLE).index == 1

    empty = Dag(3)
    assert configuration_of(empty, transitive_closure(empty), TRIANGLE).values == (N, N, N)

    fork = Dag(3, [(2, 0), (2, 1)])
    R = BeliefSet.of_pairs([(0, 1)])
    assert configuration_of(fork, transitive_closure(fork), R).values == (C,)

    assert configuration_of(chain, transitive_closure(chain), BeliefSet.of_pairs([])).values == ()


def test_independent_partition() -> None:
    R2 = BeliefSet.of_pairs([(0, 1), (1, 2), (3, 4), (4, 5)])
    assert independent_partition(R2).parts == ((0, 1), (2, 3))

    R3 = BeliefSet.of_pairs([(0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 7)])
    assert independent_partition(R3).parts == ((0, 1, 2), (3, 4, 5))

    assert len(independent_partition(TRIANGLE)) == 1
    assert len(independent_partition(BeliefSet.of_pairs([]))) == 0


def test_belief_distribution_validation() -> None:
    with pytest.raises(InvalidProbabilityError):
        BeliefDistribution(0.5, 0.5, 0.5, 0.0)
    with pytest.raises(InvalidProbabilityError):
        BeliefDistribution(1.2, -0.2, 0.0, 0.0)
    with pytest.raises(ValueError):
        BeliefSet.of_pairs([(0, 1), (1, 0)])


def test_statements_split_remainder_by_u() -> None:
    uniform = BeliefDistribution.uniform()
    K = beliefs_from_statements(
        [
            Statement(0, 2, "causes", 0.9),
            Statement(0, 1, "associated", 1.0),
            Statement(1, 2, "not-associated", 1.0),
        ],
        [uniform, uniform, uniform],
    )
    np.testing.assert_allclose(K.dists[0].as_array(), [0.9, 0.1 / 3, 0.1 / 3, 0.1 / 3])
    np.testing.assert_allclose(K.dists[1].as_array(), [1 / 3, 1 / 3, 1 / 3, 0.0])
    np.testing.assert_allclose(K.dists[2].as_array(), [0.0, 0.0, 0.0, 1.0])

    skewed = BeliefDistribution(0.4, 0.4, 0.0, 0.2)
    [d] = beliefs_from_statements([Statement(0, 1, "not-causes", 0.6)], [skewed]).dists
    np.testing.assert_allclose(d.as_array(), [0.4, 0.4, 0.0, 0.2])


def test_statement_errors() -> None:
    u = BeliefDistribution.uniform()
    with pytest.raises(InvalidProbabilityError):
        beliefs_from_statements([Statement(0, 1, "causes", 1.5)], [u])
    with pytest.raises(InvalidProbabilityError):
        beliefs_from_statements([Statement(0, 1, "implies", 0.5)], [u])  # type: ignore[arg-type]


def test_constraint_graph_labels_edges_with_variables() -> None:
    R = BeliefSet.of_pairs([(0, 1), (3, 4), (1, 2)])
    g = constraint_graph(R)
    assert sorted(g.nodes) == [0, 1, 2, 3, 4]
    assert g.number_of_edges() == 3
    assert g.edges[3, 4]["variable"] == 1
