"""Box-counting dimension of point clouds."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .frontier import linear_fit
from .io import csv_text, fmt


@dataclass
class BoxCountCurve:
    eps: list[float]
    counts: list[int]
    d_hat: float
    r2: float
    fit_range: tuple[float, float]
    monotone: bool
    note: str = "grid anchored at the origin; counts can shift with the anchor"

    def to_csv(self) -> str:
        return csv_text(["eps", "count"], list(zip(self.eps, self.counts)))

    def summary(self) -> dict:
        return {"d_hat": fmt(self.d_hat), "r2": fmt(self.r2),
                "fit_eps_range": [fmt(self.fit_range[0]), fmt(self.fit_range[1])],
                "monotone": self.monotone, "note": self.note}


def box_counts(points, eps_list) -> list[int]:
    """Occupied cells of side eps on an origin-anchored grid, per eps."""
    P = np.asarray(points, dtype=float)
    out = []
    for e in eps_list:
        cells = np.floor(P / e).astype(np.int64)
        out.append(int(len(np.unique(cells, axis=0))))
    return out


def box_dimension(points, eps_list, trim: int = 1, min_points: int = 100) -> BoxCountCurve:
    """Slope of log N(eps) against log(1/eps).

    ``trim`` values are dropped from each end of the sorted eps list before
    fitting (one at each end by default, two in total).
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if len(P) < min_points:
        raise ArgumentError(f"need at least {min_points} points, got {len(P)}")
    eps = sorted((float(e) for e in eps_list), reverse=True)
    if len(eps) < 4 or any(e <= 0 for e in eps):
        raise ArgumentError("need at least 4 positive eps values")
    counts = box_counts(P, eps)
    # counts are listed with eps descending, so they must not decrease
    monotone = all(a <= b for a, b in zip(counts, counts[1:]))
    if len(np.unique(P, axis=0)) == 1:
        return BoxCountCurve(eps, counts, 0.0, 1.0, (eps[-1], eps[0]), monotone,
                             "all points identical: dimension 0")
    lo, hi = trim, len(eps) - trim
    if hi - lo < 2:
        lo, hi = 0, len(eps)
    sel_e = eps[lo:hi]
    sel_n = counts[lo:hi]
    slope, _, r2 = linear_fit([math.log(1 / e) for e in sel_e], [math.log(n) for n in sel_n])
    return BoxCountCurve(eps, counts, slope, r2, (sel_e[-1], sel_e[0]), monotone)


def cantor_points(level: int) -> np.ndarray:
    """Centres of the 2^level intervals of the middle-thirds construction."""
    lefts = np.zeros(1)
    width = 1.0
    for _ in range(level):
        width /= 3.0
        lefts = np.concatenate([lefts, lefts + 2 * width])
    return np.sort(lefts + width / 2)[:, None]


def segment_points(count: int, seed: int = 0, a=(0.1, 0.2), b=(0.9, 0.7)) -> np.ndarray:
    t = np.random.default_rng(seed).random(count)
    a, b = np.asarray(a), np.asarray(b)
    return a + t[:, None] * (b - a)


def square_points(count: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).random((count, 2))


def helix_points(count: int, seed: int = 0, turns: float = 1.5) -> np.ndarray:
    """Points on a smooth helix inside [0,1]^3."""
    t = np.random.default_rng(seed).random(count)
    ang = 2 * math.pi * turns * t
    return np.stack([0.5 + 0.35 * np.cos(ang), 0.5 + 0.35 * np.sin(ang), 0.1 + 0.8 * t], axis=1)
