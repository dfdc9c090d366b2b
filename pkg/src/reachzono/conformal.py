"""Split conformal calibration of predicted zonotopes.

The nonconformity score of a realized output y against a predicted zonotope
is the smallest axis-aligned inflation radius r such that
``y in Yhat (+) <0, r I>`` -- evaluated as a small LP.  Per-step quantiles use
the ceil((n+1)(1-delta)) order statistic; the trajectory-level quantile takes
the same order statistic of the per-trajectory score maxima.  Inflating by the
quantile restores a distribution-free >= 1-delta coverage guarantee whenever
calibration and test trajectories are exchangeable, which is why the same
filtering criterion must be applied to both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .linsolve import solve_min_inflation
from .setalg import Zonotope, minkowski_sum

__all__ = [
    "ScoreMatrix",
    "QuantileTable",
    "InsufficientCalibrationError",
    "score",
    "quantile",
    "calibrate",
    "inflate",
    "coverage_eval",
    "filter_indices",
    "CoverageReport",
]

MEMBERSHIP_TOL = 1e-9


class InsufficientCalibrationError(ValueError):
    """Calibration set too small for the requested miscoverage level."""


@dataclass(frozen=True)
class ScoreMatrix:
    """Scores indexed [trial, step]; trajectory maxima along axis 1."""

    steps: tuple
    scores: np.ndarray  # (n_trials, n_steps)

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        if s.ndim != 2 or s.shape[1] != len(self.steps):
            raise ValueError(f"score matrix {s.shape} vs {len(self.steps)} steps")
        if np.any(s < 0):
            raise ValueError("nonconformity scores must be nonnegative")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "steps", tuple(int(k) for k in self.steps))

    @property
    def trajectory_maxima(self) -> np.ndarray:
        return self.scores.max(axis=1)

    def to_csv(self) -> str:
        lines = ["trial,step,score"]
        for i in range(self.scores.shape[0]):
            for j, k in enumerate(self.steps):
                lines.append(f"{i},{k},{self.scores[i, j]!r}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class QuantileTable:
    """Per-step quantiles and the joint (trajectory-level) quantile."""

    delta: float
    n_cal: int
    per_step: Mapping[int, float]
    joint: float

    def __post_init__(self):
        object.__setattr__(self, "per_step", dict(self.per_step))

    def to_json_dict(self) -> dict:
        return {
            "delta": self.delta,
            "n_cal": self.n_cal,
            "per_step": {str(k): v for k, v in sorted(self.per_step.items())},
            "joint": self.joint,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "QuantileTable":
        return cls(
            delta=float(obj["delta"]),
            n_cal=int(obj["n_cal"]),
            per_step={int(k): float(v) for k, v in obj["per_step"].items()},
            joint=float(obj["joint"]),
        )


def score(Yhat: Zonotope, y: np.ndarray) -> float:
    """Minimal l_inf inflation radius making y a member of Yhat."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != Yhat.dim:
        raise ValueError(f"output of dimension {y.shape[0]} vs set of dimension {Yhat.dim}")
    t, _ = solve_min_inflation(y - Yhat.center, Yhat.generators)
    return t


def quantile(scores: Sequence[float], delta: float, n_cal: int | None = None) -> float:
    """The ceil((n_cal + 1)(1 - delta))-th smallest score; +inf if that index exceeds n_cal."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("cannot take a quantile of an empty score list")
    if n_cal is None:
        n_cal = scores.size
    elif n_cal != scores.size:
        raise ValueError(f"n_cal={n_cal} but {scores.size} scores given")
    # nudge absorbs float error in (n+1)(1-delta) when the product is an exact integer
    m = math.ceil((n_cal + 1) * (1.0 - delta) - 1e-9)
    if m > n_cal:
        return math.inf
    return float(np.sort(scores)[m - 1])


def _score_row(predictions, realized_row, steps):
    return [score(predictions[j], realized_row[j]) for j in range(len(steps))]


def calibrate(
    predictions: Mapping[int, Zonotope] | Mapping[int, Sequence[Zonotope]],
    realized: Mapping[int, np.ndarray],
    delta: float,
    mode: str = "both",
) -> tuple[QuantileTable, ScoreMatrix]:
    """Assemble the score matrix and its quantiles.

    ``predictions[k]`` is either one zonotope shared by all trials (the usual
    shared-context rollout) or a per-trial sequence; ``realized[k]`` is an
    (n_trials, n_y) array of observed outputs.  ``mode`` is recorded for the
    caller ('per_step' | 'joint' | 'both'); the table always carries both
    quantile kinds since they come from the same scores.
    """
    if mode not in ("per_step", "joint", "both"):
        raise ValueError(f"unknown calibration mode {mode!r}")
    steps = sorted(predictions.keys())
    if sorted(realized.keys()) != steps:
        raise ValueError("prediction and realization steps differ")
    n_trials = np.asarray(realized[steps[0]]).shape[0]
    scores = np.empty((n_trials, len(steps)))
    for j, k in enumerate(steps):
        ys = np.asarray(realized[k], dtype=float)
        if ys.shape[0] != n_trials:
            raise ValueError(f"trial count mismatch at step {k}")
        pred = predictions[k]
        for i in range(n_trials):
            Z = pred if isinstance(pred, Zonotope) else pred[i]
            scores[i, j] = score(Z, ys[i])
    sm = ScoreMatrix(steps=tuple(steps), scores=scores)
    per_step = {k: quantile(scores[:, j], delta) for j, k in enumerate(steps)}
    joint = quantile(sm.trajectory_maxima, delta)
    return QuantileTable(delta=delta, n_cal=n_trials, per_step=per_step, joint=joint), sm


def inflate(Yhat: Zonotope, q: float) -> Zonotope:
    """Minkowski sum with the axis-aligned box of radius q; q = 0 is the identity."""
    if math.isinf(q) or math.isnan(q):
        raise InsufficientCalibrationError(
            "quantile is not finite; add calibration trajectories or raise delta"
        )
    if q < 0:
        raise ValueError(f"inflation radius must be nonnegative, got {q}")
    if q == 0.0:
        return Yhat
    return minkowski_sum(Yhat, Zonotope(np.zeros(Yhat.dim), q * np.eye(Yhat.dim)))


@dataclass(frozen=True)
class CoverageReport:
    n_trials: int
    per_step: Mapping[int, float]
    joint: float

    def to_json_dict(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "per_step": {str(k): v for k, v in sorted(self.per_step.items())},
            "joint": self.joint,
        }


def coverage_eval(
    predictions: Mapping[int, Zonotope] | Mapping[int, Sequence[Zonotope]],
    realized: Mapping[int, np.ndarray],
    table: QuantileTable,
    mode: str = "both",
    tol: float = MEMBERSHIP_TOL,
) -> CoverageReport:
    """Empirical per-step and joint coverage of the calibrated sets.

    Containment of y in the inflated set is equivalent to
    ``score(raw set, y) <= q``, so the raw predictions are scored once and
    compared against both quantile kinds.
    """
    if mode not in ("per_step", "joint", "both"):
        raise ValueError(f"unknown coverage mode {mode!r}")
    sm = _scores_only(predictions, realized)
    per_step = {}
    if mode in ("per_step", "both"):
        for j, k in enumerate(sm.steps):
            q = table.per_step[k]
            per_step[k] = float(np.mean(sm.scores[:, j] <= q + tol))
    joint = math.nan
    if mode in ("joint", "both"):
        joint = float(np.mean(np.all(sm.scores <= table.joint + tol, axis=1)))
    return CoverageReport(n_trials=sm.scores.shape[0], per_step=per_step, joint=joint)


def _scores_only(predictions, realized) -> ScoreMatrix:
    steps = sorted(predictions.keys())
    n_trials = np.asarray(realized[steps[0]]).shape[0]
    scores = np.empty((n_trials, len(steps)))
    for j, k in enumerate(steps):
        ys = np.asarray(realized[k], dtype=float)
        pred = predictions[k]
        for i in range(n_trials):
            Z = pred if isinstance(pred, Zonotope) else pred[i]
            scores[i, j] = score(Z, ys[i])
    return ScoreMatrix(steps=tuple(steps), scores=scores)


def filter_indices(
    trajs,
    context_sets: Sequence[Zonotope],
    tol: float = MEMBERSHIP_TOL,
) -> list[int]:
    """Indices of trajectories whose first len(context_sets) outputs are members.

    This is the exchangeability-preserving filter: apply it identically to
    calibration and test trajectories.
    """
    kept = []
    for i, t in enumerate(trajs):
        ok = len(t) >= len(context_sets)
        for j, Z in enumerate(context_sets):
            if not ok:
                break
            ok = score(Z, t.outputs[j]) <= tol
        if ok:
            kept.append(i)
    return kept
