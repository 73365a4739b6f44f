from __future__ import annotations

import math

import numpy as np
import pytest

from bnpp.beliefs import BeliefDistribution, BeliefSet, Configuration, PathVariable, digits_of
from bnpp.counting import estimate_u_exact, estimate_u_fact, sample_closures
from bnpp.errors import ConvergenceError, DimensionError, FitError, ZeroSupportError
from bnpp.joint import (
    FORBIDDEN,
    FitResult,
    JointPart,
    JointPrior,
    constraints_from_matrix,
    fit_joint,
    gema,
    ipfp,
    is_coherent,
    prior_log_score,
)

TABLE_TOP = np.array(
    [
        [0.8, 0.132, 0.028, 0.04],
        [0.9, 0.066, 0.014, 0.02],
        [0.6, 0.264, 0.056, 0.08],
    ]
)
TABLE_BOTTOM = np.array(
    [
        [0.764, 0.159, 0.032, 0.045],
        [0.879, 0.082, 0.016, 0.023],
        [0.646, 0.231, 0.051, 0.073],
    ]
)
TRIANGLE_PAIRS = [(0, 1), (1, 2), (0, 2)]


def _beliefs(pairs, targets) -> BeliefSet:
    return BeliefSet(
        tuple(PathVariable(x, y) for x, y in pairs),
        tuple(BeliefDistribution.from_array(row) for row in targets),
    )


@pytest.fixture(scope="module")
def triangle_u():
    return estimate_u_exact(BeliefSet.of_pairs(TRIANGLE_PAIRS), 5)


def _marginals(part, table: np.ndarray) -> np.ndarray:
    digits = digits_of(part.codes, len(part.variables))
    return np.vstack([np.bincount(digits[:, k], weights=table, minlength=4) for k in range(digits.shape[1])])


def test_uninformative_targets_return_u(triangle_u) -> None:
    part = triangle_u.parts[0]
    targets = _marginals(part, part.probs)
    fit = ipfp(part, constraints_from_matrix(targets))
    assert fit.converged
    assert fit.sweeps <= 1
    np.testing.assert_allclose(fit.table, part.probs, atol=1e-12)


def _coherent_targets(part, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    table = np.where(part.probs > 0, rng.dirichlet(np.ones(len(part.codes))), 0.0)
    return _marginals(part, table / table.sum())


def test_ipfp_matches_coherent_targets(triangle_u) -> None:
    part = triangle_u.parts[0]
    targets = _coherent_targets(part, 1)
    fit = ipfp(part, constraints_from_matrix(targets), tol=1e-10)
    assert fit.converged
    assert fit.residual <= 1e-10
    np.testing.assert_allclose(_marginals(part, fit.table), targets, atol=1e-9)
    assert math.isclose(fit.table.sum(), 1.0, abs_tol=1e-8)
    # zeros of U stay zeros
    assert np.all(fit.table[part.probs == 0] == 0)


def test_table_top_is_incoherent(triangle_u) -> None:
    part = triangle_u.parts[0]
    assert not is_coherent(part, constraints_from_matrix(TABLE_TOP))
    assert is_coherent(part, constraints_from_matrix(TABLE_TOP[:1]))


def test_gema_repairs_table_top(triangle_u) -> None:
    part = triangle_u.parts[0]
    result = gema(part, constraints_from_matrix(TABLE_TOP))
    adjusted = result.adjusted
    assert is_coherent(part, constraints_from_matrix(adjusted))
    np.testing.assert_allclose(adjusted.sum(axis=1), 1.0)
    # a coherent joint needs P(X => Z) >= P(X => Y) + P(Y => Z) - 1
    assert adjusted[2, 0] >= adjusted[0, 0] + adjusted[1, 0] - 1 - 1e-9
    assert result.i_aggregate > 0
    np.testing.assert_allclose(adjusted, TABLE_BOTTOM, atol=0.02)
    assert math.isclose(result.table.sum(), 1.0, abs_tol=1e-8)


def _joint_at(part, table: np.ndarray, code: int) -> float:
    return float(table[part.positions(np.array([code]))[0]])


def test_gema_keeps_slack_configurations_alive(triangle_u) -> None:
    part = triangle_u.parts[0]
    table = gema(part, constraints_from_matrix(TABLE_TOP)).table
    # C_1 = all forward, C_49 = (N, F, F), C_64 = all none
    assert abs(_joint_at(part, table, 0) - 0.6443) < 0.02
    assert 1e-4 <= _joint_at(part, table, 48) <= 2e-3
    assert 5e-6 <= _joint_at(part, table, 63) <= 1.5e-4
    assert np.all(table[part.probs > 0] > 0)


def test_gema_raises_when_adjusted_marginals_cannot_be_fitted(triangle_u, monkeypatch) -> None:
    part = triangle_u.parts[0]

    def stuck(U, constraints, tol=1e-8, max_sweeps=10):
        return FitResult(U.probs / U.probs.sum(), False, 0.5, max_sweeps)

    monkeypatch.setattr("bnpp.joint.ipfp", stuck)
    with pytest.raises(ConvergenceError):
        gema(part, constraints_from_matrix(TABLE_TOP), max_outer=5)
    with pytest.raises(FitError) as info:
        fit_joint(_beliefs(TRIANGLE_PAIRS, TABLE_TOP), triangle_u, max_outer=5)
    assert isinstance(info.value.__cause__, ConvergenceError)
    assert info.value.exit_code == 4


def test_gema_relaxation_variant_is_coherent(triangle_u) -> None:
    part = triangle_u.parts[0]
    result = gema(part, constraints_from_matrix(TABLE_TOP), method="relaxation")
    assert is_coherent(part, constraints_from_matrix(result.adjusted))
    np.testing.assert_allclose(result.adjusted.sum(axis=1), 1.0)
    assert result.i_aggregate > 0


def test_gema_on_coherent_beliefs_matches_ipfp(triangle_u) -> None:
    part = triangle_u.parts[0]
    constraints = constraints_from_matrix(_coherent_targets(part, 2))
    fit = ipfp(part, constraints)
    result = gema(part, constraints)
    np.testing.assert_allclose(result.table, fit.table, atol=1e-12)
    assert result.i_aggregate == 0.0
    assert result.iterations == 0


def test_zero_support_is_reported() -> None:
    U = estimate_u_exact(BeliefSet.of_pairs([(0, 1)]), 2)
    targets = np.array([[0.25, 0.25, 0.25, 0.25]])
    with pytest.raises(ZeroSupportError):
        ipfp(U.parts[0], constraints_from_matrix(targets))
    with pytest.raises(FitError) as info:
        fit_joint(_beliefs([(0, 1)], targets), U)
    assert info.value.part == 0
    assert info.value.exit_code == 4


def test_invalid_configurations_keep_zero_probability() -> None:
    U = estimate_u_exact(BeliefSet.of_pairs([(0, 1)]), 2)
    J = fit_joint(_beliefs([(0, 1)], [[0.5, 0.25, 0.0, 0.25]]), U)
    assert J.coherent
    np.testing.assert_allclose(J.parts[0].table, [0.5, 0.25, 0.0, 0.25])
    assert J.parts[0].log_table[2] == FORBIDDEN


def test_table_one_prior_scores(triangle_u) -> None:
    part = triangle_u.parts[0]
    K = _beliefs(TRIANGLE_PAIRS, TABLE_TOP)
    log_table = np.full(len(part.codes), FORBIDDEN)
    log_table[part.positions(np.array([0]))[0]] = math.log(0.6443)
    log_table[part.positions(np.array([48]))[0]] = math.log(4.55e-4)
    J = JointPrior(K, (JointPart(part.variables, part.codes, log_table, TABLE_BOTTOM, False, 0, 0.0),), triangle_u)

    s1 = prior_log_score(J, Configuration.from_index(1, 3))
    s49 = prior_log_score(J, Configuration.from_index(49, 3))
    assert abs(s1 - -8.3769) < 5e-4
    assert abs(s49 - -14.6471) < 5e-4
    assert s1 > s49
    assert prior_log_score(J, Configuration.from_index(2, 3)) == FORBIDDEN
    assert math.isclose(
        prior_log_score(J, Configuration.from_index(1, 3), drop_count_factor=True), math.log(0.6443)
    )


def test_fitted_table_one_prior_scores(triangle_u) -> None:
    J = fit_joint(_beliefs(TRIANGLE_PAIRS, TABLE_TOP), triangle_u)
    assert not J.coherent
    s1 = prior_log_score(J, Configuration.from_index(1, 3))
    s49 = prior_log_score(J, Configuration.from_index(49, 3))
    assert abs(s1 - -8.3769) < 0.15
    assert abs(s49 - -14.6471) < 1.5
    assert s1 > s49
    np.testing.assert_allclose(J.adjusted_marginals(), TABLE_BOTTOM, atol=0.02)


def test_uninformative_prior_is_flat() -> None:
    R = BeliefSet.of_pairs(TRIANGLE_PAIRS)
    U = estimate_u_exact(R, 4)
    targets = np.vstack([U.marginal(k).as_array() for k in range(3)])
    J = fit_joint(_beliefs(TRIANGLE_PAIRS, targets), U)
    part = U.parts[0]
    for code in part.codes[part.counts > 0]:
        config = Configuration.from_index(int(code) + 1, 3)
        assert math.isclose(prior_log_score(J, config), -math.log(543), abs_tol=1e-9)


def test_empty_beliefs_score_zero() -> None:
    R = BeliefSet.of_pairs([])
    U = estimate_u_exact(R, 3)
    J = fit_joint(R, U)
    assert J.parts == ()
    assert J.coherent
    assert prior_log_score(J, Configuration(())) == 0.0


def test_fit_joint_checks_sizes(triangle_u) -> None:
    with pytest.raises(DimensionError):
        fit_joint(_beliefs([(0, 1)], [[0.25] * 4]), triangle_u)


def test_factorized_fit_keeps_coherent_part_untouched() -> None:
    pairs = TRIANGLE_PAIRS + [(3, 4)]
    targets = np.vstack([TABLE_TOP, [[0.5, 0.2, 0.1, 0.2]]])
    K = _beliefs(pairs, targets)
    closures = sample_closures(5, 4000, seed=6)
    U = estimate_u_fact(K, 5, 4000, l=1.0, closures=closures)
    J = fit_joint(K, U)

    assert [p.variables for p in J.parts] == [(0, 1, 2), (3,)]
    assert not J.parts[0].coherent
    assert J.parts[1].coherent
    assert not J.coherent
    alone = ipfp(U.parts[1], constraints_from_matrix(targets[3:]))
    np.testing.assert_allclose(J.parts[1].table, alone.table, atol=1e-12)
    np.testing.assert_allclose(J.adjusted_marginals()[3], targets[3])

    digits = np.array([0, 0, 0, 1], dtype=np.uint8)
    expected = J.parts[0].log_prob(0) + math.log(0.2)
    assert math.isclose(J.log_prob_digits(digits), expected, rel_tol=1e-9)


@pytest.mark.slow
@pytest.mark.parametrize("n", [6, 10, 15])
def test_misleading_belief_is_pulled_up(n: int) -> None:
    # X = 0, Y = 1, V_i = 2..5; the remaining nodes carry no beliefs
    pairs = [(0, 1)] + [(0, v) for v in range(2, 6)] + [(v, 1) for v in range(2, 6)]
    R = BeliefSet.of_pairs(pairs)
    U = estimate_u_fact(R, n, 50_000, l=1.0, seed=1)
    u = [U.marginal(k).as_array() for k in range(len(pairs))]

    def belief(k: int, p: float) -> np.ndarray:
        rest = u[k][1:] / u[k][1:].sum()
        return np.concatenate([[p], (1 - p) * rest])

    targets = np.vstack([belief(0, 0.1)] + [belief(k, 0.9) for k in range(1, len(pairs))])
    J = fit_joint(_beliefs(pairs, targets), U)
    adjusted = J.adjusted_marginals()
    assert not J.coherent
    assert abs(adjusted[0, 0] - 0.632) < 0.05
    np.testing.assert_allclose(adjusted[1:, 0], 0.814, atol=0.05)
    # X => V_i and V_i => Y together force X => Y
    assert np.all(adjusted[0, 0] >= adjusted[1:5, 0] + adjusted[5:, 0] - 1 - 1e-9)
