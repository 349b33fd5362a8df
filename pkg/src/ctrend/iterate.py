"""The outer smoothness-targeting loop.

Each pass solves the weighted system, measures the average adjacent-estimate
correlations, and either stops (both measured correlations close enough to
their reference values on the log(1 - r^2) scale) or rescales the smoothing
weights by the measured-to-reference variance-deficit ratios and solves
again.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .design import DesignSystem
from .solve import SingularSystemError, Solution, adjacent_correlations, solve

__all__ = [
    "IterationConfig",
    "TraceRecord",
    "StopCheck",
    "IterationResult",
    "check_stop",
    "weight_ratio",
    "run",
]

RATIO_FLOOR = 1e-8
RATIO_CEIL = 1e8
OSCILLATION_TOL = 0.01  # relative period-2 cycle detection


@dataclass
class IterationConfig:
    """References and controls for the smoothness-targeting loop.

    ``trend_target`` and ``level_target`` are the reference average
    correlations (both in (0, 1)); the accuracies bound the absolute gap on
    the log(1 - r^2) scale.  ``damping`` exponentiates the multiplicative
    weight update (1.0 reproduces the plain update; the loop halves it
    automatically when a period-2 weight cycle is detected).
    """

    trend_target: float
    level_target: float
    trend_accuracy: float = 0.05
    level_accuracy: float = 0.05
    trend_weight_init: float = 1.0
    level_weight_init: float = 1.0
    max_iter: int = 100
    damping: float = 1.0
    literal_level_denominator: bool = False

    def __post_init__(self):
        for name in ("trend_target", "level_target"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        for name in ("trend_accuracy", "level_accuracy"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("trend_weight_init", "level_weight_init"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError(f"damping must be in (0, 1], got {self.damping}")


@dataclass
class StopCheck:
    stop: bool
    trend_gap: float
    level_gap: float
    trend_ok: bool
    level_ok: bool
    degenerate: bool = False


def _log_gap(measured: float, target: float) -> float:
    return abs(math.log((1.0 - measured * measured) / (1.0 - target * target)))


def check_stop(trend_smoothness: float, level_smoothness: float, config: IterationConfig) -> StopCheck:
    """Evaluate the two-sided stopping condition.

    Both gaps must pass (AND semantics).  A measured correlation at or
    beyond 1 in magnitude, or non-finite, marks the check degenerate and
    fails it.
    """
    degenerate = not (
        math.isfinite(trend_smoothness)
        and math.isfinite(level_smoothness)
        and abs(trend_smoothness) < 1.0
        and abs(level_smoothness) < 1.0
    )
    if degenerate:
        return StopCheck(False, math.inf, math.inf, False, False, True)
    trend_gap = _log_gap(trend_smoothness, config.trend_target)
    level_gap = _log_gap(level_smoothness, config.level_target)
    trend_ok = trend_gap <= config.trend_accuracy
    level_ok = level_gap <= config.level_accuracy
    return StopCheck(trend_ok and level_ok, trend_gap, level_gap, trend_ok, level_ok)


def weight_ratio(measured: float, target: float) -> float:
    """Multiplicative weight update factor (1 - measured^2) / (1 - target^2).

    A rougher-than-target estimate gives a ratio above one, increasing the
    weight.  Clipped away from zero so the weights stay strictly positive
    even for degenerate correlation measurements.
    """
    deficit = 1.0 - float(measured) * float(measured)
    if not math.isfinite(deficit) or deficit <= 0.0:
        deficit = RATIO_FLOOR
    ratio = deficit / (1.0 - target * target)
    return float(min(max(ratio, RATIO_FLOOR), RATIO_CEIL))


@dataclass
class TraceRecord:
    iteration: int
    trend_weight: float
    level_weight: float
    trend_smoothness: float
    level_smoothness: float
    data_misfit: float
    trend_curvature: float
    level_curvature: float
    r2: float | None
    converged: bool
    note: str = ""


@dataclass
class IterationResult:
    solution: Solution
    trace: list
    converged: bool
    reason: str
    trend_weight: float
    level_weight: float
    best_iteration: int

    @property
    def iterations(self) -> int:
        return len(self.trace)


def run(system: DesignSystem, config: IterationConfig) -> IterationResult:
    """Run the loop to convergence, iteration budget, or degeneracy.

    Never a silent success: on a budget stop the best solution seen (the one
    with the smallest worst gap relative to its accuracy) is returned with
    ``converged=False``.  Deterministic: the trace is a pure function of the
    system and configuration.
    """
    w1 = config.trend_weight_init
    w2 = config.level_weight_init
    damping = config.damping
    trace: list[TraceRecord] = []
    weights_seen: list[tuple[float, float]] = []

    best_score = math.inf
    best: Solution | None = None
    best_iter = 0
    converged = False
    reason = "max_iter"

    for it in range(1, config.max_iter + 1):
        try:
            solution = solve(system, w1, w2)
        except SingularSystemError:
            if best is None:
                raise
            # an unreachable target can drive a weight to extremes; stop
            # with the best solution seen rather than failing silently
            reason = f"singular system at iteration {it} (weights {w1:.3g}, {w2:.3g})"
            break
        corr = adjacent_correlations(
            solution, literal_level_denominator=config.literal_level_denominator
        )
        checked = check_stop(corr.trend_smoothness, corr.level_smoothness, config)
        note = ""

        score = (
            math.inf
            if checked.degenerate
            else max(
                checked.trend_gap / config.trend_accuracy,
                checked.level_gap / config.level_accuracy,
            )
        )
        if score < best_score:
            best_score, best, best_iter = score, solution, it

        weights_seen.append((w1, w2))
        if checked.stop:
            converged = True
            reason = "converged"
            trace.append(
                TraceRecord(
                    it, w1, w2, corr.trend_smoothness, corr.level_smoothness,
                    solution.data_misfit, solution.trend_curvature,
                    solution.level_curvature, solution.r2, True, "converged",
                )
            )
            best = solution
            best_iter = it
            break

        ratio1 = weight_ratio(corr.trend_smoothness, config.trend_target)
        ratio2 = weight_ratio(corr.level_smoothness, config.level_target)
        next_w1 = w1 * ratio1**damping
        next_w2 = w2 * ratio2**damping
        if len(weights_seen) >= 2:
            prev_w1, prev_w2 = weights_seen[-2]
            cycling = (
                abs(next_w1 / prev_w1 - 1.0) < OSCILLATION_TOL
                and abs(next_w2 / prev_w2 - 1.0) < OSCILLATION_TOL
                and (abs(next_w1 / w1 - 1.0) >= OSCILLATION_TOL
                     or abs(next_w2 / w2 - 1.0) >= OSCILLATION_TOL)
            )
            if cycling:
                damping *= 0.5
                next_w1 = w1 * ratio1**damping
                next_w2 = w2 * ratio2**damping
                note = f"oscillation detected, damping halved to {damping:g}"
        if checked.degenerate and not note:
            note = "degenerate correlation measurement"

        trace.append(
            TraceRecord(
                it, w1, w2, corr.trend_smoothness, corr.level_smoothness,
                solution.data_misfit, solution.trend_curvature,
                solution.level_curvature, solution.r2, False, note,
            )
        )
        w1, w2 = next_w1, next_w2

    if not converged and trace:
        trace[-1].note = (trace[-1].note + "; " if trace[-1].note else "") + (
            f"stopped: {reason}, best iteration {best_iter}"
        )
    assert best is not None
    return IterationResult(
        solution=best,
        trace=trace,
        converged=converged,
        reason=reason,
        trend_weight=best.trend_weight,
        level_weight=best.level_weight,
        best_iteration=best_iter,
    )
