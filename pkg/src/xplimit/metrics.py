"""Error metrics, non-degeneracy audit and plug-in information measures."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ArgumentError
from .model import Distribution, TargetFunction, output_separation


@dataclass(frozen=True)
class ErrorReport:
    worst_case: float
    expected: float
    eval_count: int
    metric: str
    grid_density: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def pointwise_error(f: TargetFunction, g, eval_points) -> np.ndarray:
    X = f.domain.check(eval_points)
    return f.outputs.distance(f.evaluate_many(X), g.evaluate_many(X))


def error(f: TargetFunction, g, dist: Distribution | None = None, eval_points=None,
          grid_density: int | None = None) -> ErrorReport:
    """Worst-case and expected distance between f and g over an evaluation set."""
    if dist is None:
        dist = Distribution.uniform()
    if eval_points is None:
        if dist.kind == "empirical":
            eval_points = dist.points
        else:
            eval_points = f.domain.grid(grid_density)
    eval_points = np.asarray(eval_points, dtype=float)
    if eval_points.size == 0:
        raise ArgumentError("evaluation set is empty")
    e = pointwise_error(f, g, eval_points)
    w = dist.weights_on(eval_points)
    worst = float(e.max())
    expected = float(np.dot(w, e))
    # floating-point summation can exceed the max by an ulp when all errors are equal
    expected = min(expected, worst)
    return ErrorReport(worst, expected, len(e), f.outputs.metric, grid_density)


def merge_reports(parts: list[tuple[ErrorReport, float]]) -> ErrorReport:
    """Combine shard reports (report, shard probability mass) by max and weighted sum."""
    if not parts:
        raise ArgumentError("nothing to merge")
    worst = max(r.worst_case for r, _ in parts)
    expected = math.fsum(r.expected * m for r, m in parts)
    return ErrorReport(worst, min(expected, worst), sum(r.eval_count for r, _ in parts),
                       parts[0][0].metric, parts[0][0].grid_density)


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0]
    return float(-np.sum(p * np.log2(p)))


def _joint(xs, ys, w):
    xk = [repr(x) for x in xs]
    yk = [repr(y) for y in ys]
    xu = {k: i for i, k in enumerate(dict.fromkeys(xk))}
    yu = {k: i for i, k in enumerate(dict.fromkeys(yk))}
    table = np.zeros((len(xu), len(yu)))
    for a, b, wi in zip(xk, yk, w):
        table[xu[a], yu[b]] += wi
    return table


def entropy_mi(x_values, y_values, weights=None) -> tuple[float, float]:
    """Plug-in H(Y) and I(X; Y) in bits over the weighted joint table."""
    xs = [tuple(np.atleast_1d(x).tolist()) for x in x_values]
    ys = [tuple(np.atleast_1d(y).tolist()) for y in y_values]
    if len(xs) != len(ys) or not xs:
        raise ArgumentError("x and y must be non-empty and of equal length")
    w = np.full(len(xs), 1.0 / len(xs)) if weights is None else np.asarray(weights, float)
    if len(w) != len(xs) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ArgumentError("weights must be a distribution over the samples")
    joint = _joint(xs, ys, w)
    hx = _entropy(joint.sum(axis=1))
    hy = _entropy(joint.sum(axis=0))
    hxy = _entropy(joint.ravel())
    mi = max(0.0, hx + hy - hxy)
    return hy, min(mi, hx, hy)


def entropy_x(x_values, weights=None) -> float:
    xs = [tuple(np.atleast_1d(x).tolist()) for x in x_values]
    w = np.full(len(xs), 1.0 / len(xs)) if weights is None else np.asarray(weights, float)
    return _entropy(_joint(xs, [0] * len(xs), w).sum(axis=1))


@dataclass(frozen=True)
class DegeneracyVerdict:
    sigma: float
    delta: float
    non_degenerate: bool

    def certifies(self, n_disagreements: int) -> bool:
        """True when any disagreement is guaranteed to cost worst-case error > delta."""
        return self.non_degenerate and n_disagreements > 0


def nondegeneracy_audit(f: TargetFunction, delta: float, eval_points=None) -> DegeneracyVerdict:
    if delta <= 0:
        raise ArgumentError("delta must be > 0")
    if eval_points is None:
        eval_points = f.domain.grid()
    sigma, ok = output_separation(f, eval_points, delta)
    return DegeneracyVerdict(sigma, float(delta), ok)
