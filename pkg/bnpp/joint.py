"""Joint distribution J over configurations fitted to marginal path beliefs.

Coherent beliefs are matched exactly by iterative proportional fitting started
from U, which gives the KL-closest joint to U (the I-projection). Incoherent
beliefs are first moved to the nearest coherent marginals with GEMA, then J is
the I-projection of U onto those adjusted marginals.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .beliefs import BeliefSet, Configuration, PathValue, codes_of, digits_of
from .counting import UEstimate, UPart
from .errors import BnppError, ConvergenceError, DimensionError, FitError, ZeroSupportError

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_SWEEPS = 10_000
DEFAULT_MAX_OUTER = 10_000
STALL_TOL = 1e-13
# averaging stops once a step lowers the I-aggregate by less than this fraction
GEMA_REL_TOL = 2.5e-3

FORBIDDEN = -math.inf

GemaMethod = Literal["average", "relaxation"]


@dataclass(frozen=True)
class MarginalConstraint:
    variable: int
    value: PathValue
    target: float


@dataclass(frozen=True)
class FitResult:
    table: np.ndarray
    converged: bool
    residual: float
    sweeps: int


@dataclass(frozen=True)
class GemaResult:
    table: np.ndarray
    adjusted: np.ndarray
    i_aggregate: float
    iterations: int
    residual: float


def constraints_from_matrix(targets: np.ndarray) -> list[MarginalConstraint]:
    return [
        MarginalConstraint(k, PathValue(j), float(targets[k, j]))
        for k in range(targets.shape[0])
        for j in range(4)
    ]


def _targets(constraints: Sequence[MarginalConstraint], m: int) -> np.ndarray:
    out = np.full((m, 4), np.nan)
    for c in constraints:
        out[c.variable, int(c.value)] = c.target
    return out


def _marginals(digits: np.ndarray, table: np.ndarray) -> np.ndarray:
    m = digits.shape[1]
    out = np.empty((m, 4))
    for k in range(m):
        out[k] = np.bincount(digits[:, k], weights=table, minlength=4)
    return out


def _residual(marg: np.ndarray, targets: np.ndarray) -> float:
    diff = np.abs(marg - targets)
    return float(np.nanmax(diff)) if np.isfinite(diff).any() else 0.0


def _check_support(digits: np.ndarray, probs: np.ndarray, targets: np.ndarray) -> None:
    support = _marginals(digits, (probs > 0).astype(float))
    bad = np.argwhere((targets > 0) & (support == 0))
    if len(bad):
        k, j = bad[0]
        raise ZeroSupportError(
            f"target P(r{k} = {PathValue(j).symbol}) = {targets[k, j]:g} "
            "but U gives no mass to any configuration with that value"
        )


def _scale_to(table: np.ndarray, digits: np.ndarray, k: int, target: np.ndarray) -> np.ndarray:
    marg = np.bincount(digits[:, k], weights=table, minlength=4)
    want = np.where(np.isnan(target), marg, target)
    ratio = np.divide(want, marg, out=np.ones(4), where=marg > 0)
    return table * ratio[digits[:, k]]


def _constrained(targets: np.ndarray) -> list[int]:
    return [k for k in range(targets.shape[0]) if not np.isnan(targets[k]).all()]


def ipfp(
    U: UPart,
    constraints: Sequence[MarginalConstraint],
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
) -> FitResult:
    m = len(U.variables)
    digits = digits_of(U.codes, m)
    targets = _targets(constraints, m)
    _check_support(digits, U.probs, targets)
    table = U.probs / U.probs.sum()
    ks = _constrained(targets)
    residual = _residual(_marginals(digits, table), targets)
    if residual <= tol:
        return FitResult(table, True, residual, 0)
    for sweep in range(1, max_sweeps + 1):
        prev = table
        for k in ks:
            table = _scale_to(table, digits, k, targets[k])
        residual = _residual(_marginals(digits, table), targets)
        if residual <= tol:
            return FitResult(table, True, residual, sweep)
        if np.abs(table - prev).max() < STALL_TOL:
            log.debug("IPFP stalled after %d sweeps at residual %.3g", sweep, residual)
            return FitResult(table, False, residual, sweep)
    return FitResult(table, False, residual, max_sweeps)


def is_coherent(U: UPart, constraints: Sequence[MarginalConstraint], tol: float = DEFAULT_TOL) -> bool:
    return ipfp(U, constraints, tol).converged


def _i_aggregate(targets: np.ndarray, adjusted: np.ndarray) -> float:
    total = 0.0
    for k in _constrained(targets):
        p, q = targets[k], adjusted[k]
        mass = p > 0
        if np.any(q[mass] <= 0):
            return math.inf
        total += float(np.sum(p[mass] * np.log(p[mass] / q[mass])))
    return total


def _gema_average(
    table: np.ndarray,
    digits: np.ndarray,
    targets: np.ndarray,
    tol: float,
    max_outer: int,
    rel_tol: float = GEMA_REL_TOL,
) -> tuple[np.ndarray, int]:
    # each step averages the single-marginal scalings of the current joint,
    # which decreases sum_k KL(target_k || marginal_k). The limit of these
    # steps lies on the boundary of the coherent region where some valid
    # configurations have no mass, so the loop stops on a relative gain.
    ks = _constrained(targets)
    marg = _marginals(digits, table)
    agg = _i_aggregate(targets, marg)
    for it in range(1, max_outer + 1):
        acc = np.zeros_like(table)
        for k in ks:
            acc += _scale_to(table, digits, k, targets[k])
        table = acc / acc.sum()
        new_marg = _marginals(digits, table)
        new_agg = _i_aggregate(targets, new_marg)
        change = float(np.abs(new_marg - marg).max())
        marg = new_marg
        if change < tol or (math.isfinite(agg) and agg - new_agg <= rel_tol * new_agg):
            return table, it
        agg = new_agg
    return table, max_outer


def _gema_relaxation(table: np.ndarray, digits: np.ndarray, targets: np.ndarray, tol: float, max_outer: int) -> tuple[np.ndarray, int]:
    """Pull the targets towards the marginals IPFP reaches until both agree.

    This lands on a coherent point near the targets, but not at the minimum
    I-aggregate, so its adjusted marginals differ from the averaged method's.
    Use ``method="average"`` when the adjusted table itself matters.
    """
    ks = _constrained(targets)
    current = targets.copy()
    lam = 0.5
    last_change = math.inf
    for it in range(1, max_outer + 1):
        prev = table
        for k in ks:
            table = _scale_to(table, digits, k, current[k])
        marg = _marginals(digits, table)
        mixed = (1 - lam) * current + lam * marg
        current = np.where(np.isnan(targets), np.nan, mixed / np.nansum(mixed, axis=1, keepdims=True))
        change = float(np.abs(table - prev).max())
        if change > last_change:
            lam /= 2
        last_change = change
        if change < tol:
            return table, it
    return table, max_outer


def gema(
    U: UPart,
    constraints: Sequence[MarginalConstraint],
    tol: float = DEFAULT_TOL,
    max_outer: int = DEFAULT_MAX_OUTER,
    *,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    method: GemaMethod = "average",
) -> GemaResult:
    """Coherent joint for possibly incoherent beliefs.

    Returns the joint, the adjusted (coherent) marginals it induces and the
    I-aggregate ``sum_k KL(target_k || adjusted_k)``. Coherent beliefs come
    back unchanged with an I-aggregate of zero. Raises ``ConvergenceError``
    when IPFP cannot match the adjusted marginals.
    """
    m = len(U.variables)
    digits = digits_of(U.codes, m)
    targets = _targets(constraints, m)
    _check_support(digits, U.probs, targets)
    direct = ipfp(U, constraints, tol, max_sweeps)
    if direct.converged:
        return GemaResult(direct.table, _marginals(digits, direct.table), 0.0, 0, direct.residual)
    start = U.probs / U.probs.sum()
    step = _gema_average if method == "average" else _gema_relaxation
    repaired, iterations = step(start, digits, targets, tol, max_outer)
    adjusted = _marginals(digits, repaired)
    fit = ipfp(U, constraints_from_matrix(adjusted), tol, max_sweeps)
    if not fit.converged:
        raise ConvergenceError(
            f"IPFP on the adjusted marginals stopped at residual {fit.residual:.3g} after {fit.sweeps} sweeps"
        )
    return GemaResult(fit.table, adjusted, _i_aggregate(targets, adjusted), iterations, fit.residual)


@dataclass(frozen=True)
class JointPart:
    variables: tuple[int, ...]
    codes: np.ndarray
    log_table: np.ndarray
    adjusted: np.ndarray
    coherent: bool
    iterations: int
    residual: float
    i_aggregate: float = 0.0

    def log_prob(self, code: int) -> float:
        pos = int(np.searchsorted(self.codes, code))
        if pos >= len(self.codes) or self.codes[pos] != code:
            return FORBIDDEN
        return float(self.log_table[pos])

    @property
    def table(self) -> np.ndarray:
        return np.exp(self.log_table)


@dataclass(frozen=True)
class JointPrior:
    beliefs: BeliefSet
    parts: tuple[JointPart, ...]
    u: UEstimate

    @property
    def coherent(self) -> bool:
        return all(p.coherent for p in self.parts)

    def adjusted_marginals(self) -> np.ndarray:
        out = self.beliefs.targets_matrix().copy()
        for part in self.parts:
            out[list(part.variables)] = part.adjusted
        return out

    def log_prob_digits(self, digits: np.ndarray) -> float:
        total = 0.0
        for part in self.parts:
            total += part.log_prob(int(codes_of(digits[list(part.variables)])))
            if total == FORBIDDEN:
                return FORBIDDEN
        return total

    def log_prob(self, config: Configuration) -> float:
        return self.log_prob_digits(config.digits)


def fit_joint(
    K: BeliefSet,
    U: UEstimate,
    *,
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    max_outer: int = DEFAULT_MAX_OUTER,
    method: GemaMethod = "average",
) -> JointPrior:
    if U.num_variables != len(K):
        raise DimensionError(f"U covers {U.num_variables} path variables, beliefs have {len(K)}")
    targets = K.targets_matrix()
    parts = []
    for i, upart in enumerate(U.parts):
        if not upart.variables:
            continue
        sub = targets[list(upart.variables)]
        constraints = constraints_from_matrix(sub)
        try:
            fit = ipfp(upart, constraints, tol, max_sweeps)
            if fit.converged:
                table, adjusted, iters, residual, agg = fit.table, sub, fit.sweeps, fit.residual, 0.0
                log.info("part %d: coherent, IPFP converged in %d sweeps", i, fit.sweeps)
            else:
                g = gema(upart, constraints, tol, max_outer, max_sweeps=max_sweeps, method=method)
                table, adjusted, iters, residual, agg = g.table, g.adjusted, g.iterations, g.residual, g.i_aggregate
                log.warning("part %d: incoherent beliefs repaired (I-aggregate %.4g)", i, agg)
        except BnppError as exc:
            raise FitError(i, upart.variables, exc) from exc
        with np.errstate(divide="ignore"):
            log_table = np.log(table)
        parts.append(
            JointPart(upart.variables, upart.codes, log_table, adjusted, fit.converged, iters, residual, agg)
        )
    return JointPrior(K, tuple(parts), U)


def prior_log_score_digits(
    J: JointPrior,
    digits: np.ndarray,
    count_source: UEstimate | None = None,
    *,
    drop_count_factor: bool = False,
) -> float:
    if not len(J.beliefs):
        return 0.0
    lj = J.log_prob_digits(digits)
    if lj == FORBIDDEN or drop_count_factor:
        return lj
    source = count_source or J.u
    lu = source.log_prob_digits(digits)
    if lu == FORBIDDEN:
        return FORBIDDEN
    return lj - (lu + source.log_num_dags)


def prior_log_score(
    J: JointPrior,
    config: Configuration,
    count_source: UEstimate | None = None,
    *,
    drop_count_factor: bool = False,
) -> float:
    """``log(J_C / N_C)``; ``FORBIDDEN`` when J or the counts give C no mass."""
    return prior_log_score_digits(J, config.digits, count_source, drop_count_factor=drop_count_factor)
