"""Constructive explanation builders.

Every builder that promises an error bound checks it on a dense evaluation set
before returning and raises :class:`PropertyViolation` if the bound fails.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (ArgumentError, ConfigurationError, DomainError, PropertyViolation,
                     ResourceError, SingularityError)
from .mdl import Quantizer
from .model import (Explanation, TargetFunction, make_constant, make_linear, range_bound)

CELL_CAP = 10 ** 7


@dataclass
class FitRequest:
    """Budget for a fit: exactly one of ``k`` (bits) or ``delta`` (error) is set."""

    target: TargetFunction
    family: str
    k: int | None = None
    delta: float | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.k is None) == (self.delta is None):
            raise ArgumentError("set exactly one of k and delta")
        if self.delta is not None and self.delta <= 0:
            raise ArgumentError("delta must be > 0")


def _lipschitz(f: TargetFunction, L) -> float:
    L = f.lipschitz if L is None else L
    if L is None:
        raise ArgumentError("a certified Lipschitz constant is required")
    if L < 0:
        raise ArgumentError("Lipschitz constant must be >= 0")
    return float(L)


def value_precision(M: float, delta: float) -> int:
    """Bits so that the quantization error M/(2^p - 1) stays within delta/2."""
    return max(1, math.ceil(math.log2(2 * M / (delta / 2)) - 1e-12))


def cell_centers(m: int, d: int) -> np.ndarray:
    axis = (np.arange(m) + 0.5) / m
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def grid_explanation(f: TargetFunction, m: int, p: int, M: float,
                     provenance: str = "grid") -> Explanation:
    """Piecewise-constant grid with f(cell centre) quantized to p bits on [-M, M]."""
    d = f.domain.dim
    if m ** d > CELL_CAP:
        raise ResourceError(f"{m}^{d} cells exceed the cap of {CELL_CAP}")
    vals = f.evaluate_many(cell_centers(m, d))
    q = Quantizer.symmetric(M, p)
    codes = np.asarray(q.encode(np.clip(vals, -M, M)), dtype=np.int64)
    return Explanation("grid", {"m": int(m), "values": codes.tolist()}, d, f.outputs,
                       value_q=q, provenance=provenance)


def sup_error(f: TargetFunction, g: Explanation, X) -> float:
    return float(np.max(f.outputs.distance(f.evaluate_many(X), g.evaluate_many(X))))


def fit_grid_piecewise(f: TargetFunction, delta: float, L: float | None = None,
                       M: float | None = None, density: int | None = None,
                       cell_cap: int = CELL_CAP) -> Explanation:
    """Uniform m^d grid; half of delta for resolution, half for value precision."""
    if delta <= 0:
        raise ArgumentError("delta must be > 0")
    if f.outputs.discrete or f.domain.kind != "hypercube":
        raise ArgumentError("grid fit needs real outputs on the unit hypercube")
    L = _lipschitz(f, L)
    d = f.domain.dim
    m = max(1, math.ceil(L * math.sqrt(d) / delta - 1e-12))
    if m ** d > cell_cap:
        raise ResourceError(f"grid needs {m}^{d} cells, above the cap of {cell_cap}")
    dense = f.domain.grid(density)
    if M is None:
        M = range_bound(f.evaluate_many(dense))
    p = value_precision(M, delta)
    g = grid_explanation(f, m, p, M, provenance="fit_grid_piecewise")
    err = sup_error(f, g, dense)
    if err > delta:
        raise PropertyViolation(f"grid fit sup error {err} exceeds delta {delta} (m={m}, p={p})")
    return g


# ---------------------------------------------------------------------------
# Greedy trees
# ---------------------------------------------------------------------------

def _leaf_value_cost(y, discrete: bool, q: Quantizer | None, n_labels: int):
    if discrete:
        counts = np.bincount(y, minlength=n_labels)
        lab = int(np.argmax(counts))  # argmax picks the smaller label on ties
        return lab, float(len(y) - counts[lab])
    mean = float(np.mean(y))
    code = int(q.encode(min(max(mean, q.lo), q.hi)))
    v = q.decode(code)
    return code, float(np.sum((y - v) ** 2))


def _threshold_between(a: float, b: float, tq: Quantizer | None):
    """A representable split point t with a <= t < b, or None."""
    if tq is None:
        return (0, 0.5) if a <= 0.5 < b else None
    mid = 0.5 * (a + b)
    base = int(round(mid * tq.levels))
    for code in (base, base - 1, base + 1):
        if 0 <= code <= tq.levels:
            t = tq.decode(code)
            if a <= t < b:
                return code, t
    return None


def _best_split(X, y, idx, discrete, q, tq, n_labels, parent_cost):
    """Lowest-cost split of the samples in idx; ties: lowest feature, then threshold."""
    best = None
    Xs, ys = X[idx], y[idx]
    n = len(idx)
    for feat in range(X.shape[1]):
        order = np.argsort(Xs[:, feat], kind="stable")
        xv = Xs[order, feat]
        yv = ys[order]
        cut = np.nonzero(xv[1:] > xv[:-1])[0]  # split after position i
        if cut.size == 0:
            continue
        nl = cut + 1
        nr = n - nl
        if discrete:
            onehot = np.eye(n_labels)[yv]
            cl = np.cumsum(onehot, axis=0)[cut]
            cr = onehot.sum(axis=0) - cl
            cost = (nl - cl.max(axis=1)) + (nr - cr.max(axis=1))
        else:
            cs = np.cumsum(yv)
            cs2 = np.cumsum(yv ** 2)
            sl, sl2 = cs[cut], cs2[cut]
            sr, sr2 = cs[-1] - sl, cs2[-1] - sl2
            ml = q.decode(q.encode(np.clip(sl / nl, q.lo, q.hi)))
            mr = q.decode(q.encode(np.clip(sr / nr, q.lo, q.hi)))
            cost = (sl2 - 2 * ml * sl + nl * ml ** 2) + (sr2 - 2 * mr * sr + nr * mr ** 2)
            cost = np.maximum(cost, 0.0)
        for j in np.argsort(cost, kind="stable"):
            c = float(cost[j])
            if best is not None and c > best[0]:
                break
            thr = _threshold_between(xv[cut[j]], xv[cut[j] + 1], tq)
            if thr is None:
                continue
            if best is None or c < best[0]:
                best = (c, feat, thr)
            break
    if best is None:
        return None
    gain = parent_cost - best[0]
    tol = 1e-12 * max(1.0, abs(parent_cost))
    if gain <= tol:
        return None
    c, feat, (code, t) = best
    mask = X[idx, feat] <= t
    return gain, feat, code, t, idx[mask], idx[~mask]


def fit_tree_greedy(f: TargetFunction, samples, node_budget: int, p: int = 16,
                    M: float | None = None, threshold_bits: int | None = None,
                    return_path: bool = False):
    """Best-first CART tree with at most ``node_budget`` nodes.

    Real outputs use squared error with (quantized) mean leaves; discrete
    outputs use misclassification count with majority leaves.  A split is
    taken only if it strictly lowers the training cost, so the cost is
    non-increasing in the budget.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if X.size == 0:
        raise ArgumentError("empty sample set")
    if node_budget < 1:
        raise ArgumentError("node budget must be >= 1")
    X = f.domain.check(X)
    y = f.evaluate_many(X)
    discrete = f.outputs.discrete
    n_labels = len(f.outputs.labels)
    q = None
    if not discrete:
        q = Quantizer.symmetric(range_bound(y) if M is None else M, p)
    if f.domain.kind == "bitvector" and threshold_bits is None:
        tq = None
    else:
        tq = Quantizer(0.0, 1.0, p if threshold_bits is None else threshold_bits)

    order = itertools.count()
    root_idx = np.arange(len(X))
    val, cost = _leaf_value_cost(y[root_idx], discrete, q, n_labels)
    root = next(order)
    grown = GrownTree(X.shape[1], f.outputs, q, tq, {root: val}, {}, [], [cost])
    heap: list = []
    costs = {root: cost}

    def push(node_id, idx):
        sp = _best_split(X, y, idx, discrete, q, tq, n_labels, costs[node_id])
        if sp is not None:
            heapq.heappush(heap, (-sp[0], node_id, sp))

    push(root, root_idx)
    size = 1
    total = cost
    while heap and size + 2 <= node_budget:
        _, node_id, (gain, feat, code, t, li, ri) = heapq.heappop(heap)
        lv, lc = _leaf_value_cost(y[li], discrete, q, n_labels)
        rv, rc = _leaf_value_cost(y[ri], discrete, q, n_labels)
        lid, rid = next(order), next(order)
        grown.splits[node_id] = (feat, code, lid, rid)
        grown.leaf_values[lid], grown.leaf_values[rid] = lv, rv
        grown.expansions.append(node_id)
        costs[lid], costs[rid] = lc, rc
        new_total = total - costs[node_id] + lc + rc
        if new_total > total + 1e-9 * max(1.0, total):
            raise PropertyViolation("greedy split increased the training cost")
        total = new_total
        grown.costs.append(total)
        size += 2
        push(lid, li)
        push(rid, ri)

    g = grown.explanation()
    return (g, grown) if return_path else g


@dataclass
class GrownTree:
    """Record of one best-first growth; any prefix of it is itself a greedy tree."""

    d: int
    output: object
    value_q: Quantizer | None
    threshold_q: Quantizer | None
    leaf_values: dict
    splits: dict
    expansions: list
    costs: list

    def explanation(self, n_expansions: int | None = None) -> Explanation:
        n = len(self.expansions) if n_expansions is None else n_expansions
        active = set(self.expansions[:n])
        nodes: list[tuple] = []

        def preorder(i):
            if i in active:
                feat, code, lid, rid = self.splits[i]
                nodes.append(("s", int(feat), int(code)))
                preorder(lid)
                preorder(rid)
            else:
                nodes.append(("l", int(self.leaf_values[i])))

        preorder(0)
        return Explanation("tree", {"nodes": nodes}, self.d, self.output, value_q=self.value_q,
                           threshold_q=self.threshold_q, provenance="fit_tree_greedy")


def truncations(grown: GrownTree) -> list[Explanation]:
    """Greedy trees of sizes 1, 3, 5, ... taken from one growth order."""
    return [grown.explanation(n) for n in range(len(grown.expansions) + 1)]


# ---------------------------------------------------------------------------
# Linear least squares
# ---------------------------------------------------------------------------

def fit_linear_lsq(f: TargetFunction, samples, p: int = 16, M: float | None = None) -> Explanation:
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    X = f.domain.check(X)
    n, d = X.shape
    if n < d + 1:
        raise SingularityError(f"need at least {d + 1} samples, got {n}")
    A = np.hstack([X, np.ones((n, 1))])
    if np.linalg.matrix_rank(A) < d + 1:
        raise SingularityError("design matrix is rank deficient")
    y = f.evaluate_many(X).astype(float)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return make_linear(coef[:d], coef[d], f.outputs, p=p, M=M, provenance="fit_linear_lsq")


# ---------------------------------------------------------------------------
# Local explanations
# ---------------------------------------------------------------------------

def ball_points(x0, r: float, density: int = 64) -> np.ndarray:
    """Lattice points of the closed Euclidean ball, always including x0."""
    x0 = np.asarray(x0, dtype=float)
    d = len(x0)
    axis = np.linspace(-r, r, density)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    off = np.stack([g.ravel() for g in mesh], axis=1)
    keep = np.sum(off ** 2, axis=1) <= r * r * (1 + 1e-12)
    pts = np.clip(x0 + off[keep], 0.0, 1.0)
    return np.vstack([x0[None, :], pts])


def local_depth(r_hat: float, d: int, delta: float, L: float) -> int:
    """Bisection rounds until the cell half-diagonal is at most delta/(2L)."""
    if L == 0:
        return 0
    target = delta / (2 * L)
    t = 0
    while (r_hat / 2 ** t) * math.sqrt(d) > target:
        t += 1
    return t


def fit_local(f: TargetFunction, x0, r: float, delta: float, L: float | None = None,
              p: int = 16, density: int | None = None) -> Explanation:
    """Oracle-relative local explanation on the ball B_r(x0).

    The code stores x0, r and the bisection schedule of the ball's bounding
    box; the explanation answers with f at the centre of the query's cell.
    When delta >= L*r no subdivision is needed and g is the constant f(x0).
    """
    if delta <= 0 or r <= 0:
        raise ArgumentError("delta and r must be > 0")
    L = _lipschitz(f, L)
    x0 = np.asarray(x0, dtype=float).ravel()
    d = f.domain.dim
    if len(x0) != d:
        raise DomainError(f"centre has dimension {len(x0)}, domain has {d}")
    if f.domain.kind != "hypercube" or np.any(x0 - r < 0) or np.any(x0 + r > 1):
        raise DomainError("ball leaves the domain")
    q = Quantizer(0.0, 1.0, p)
    c_codes = np.asarray(q.encode(x0), dtype=np.int64).reshape(-1)
    c_hat = np.asarray(q.decode(c_codes), dtype=float).reshape(-1)
    offset = float(np.max(np.abs(c_hat - x0)))
    r_code = q.encode_up(r + offset)
    r_hat = float(q.decode(r_code))
    if delta >= L * (r + offset * math.sqrt(d)):
        t = 0
    else:
        t = local_depth(r_hat, d, delta, L)
    params = {"p": p, "center": c_codes.tolist(), "radius": int(r_code),
              "levels": [tuple([1] * d) for _ in range(t)]}
    g = Explanation("local_oracle", params, d, f.outputs, provenance="fit_local", oracle=f)
    if density is None:
        density = {1: 257, 2: 129}.get(d, 33)
    pts = ball_points(x0, r, density)
    err = sup_error(f, g, pts)
    if err > delta:
        raise PropertyViolation(f"local fit sup error {err} exceeds delta {delta}")
    return g


# ---------------------------------------------------------------------------
# Support covers
# ---------------------------------------------------------------------------

def occupied_cells(points, m: int) -> np.ndarray:
    cells = np.clip(np.floor(np.asarray(points) * m).astype(np.int64), 0, m - 1)
    return np.unique(cells, axis=0)


def fit_support_cover(f: TargetFunction, support_samples, delta: float,
                      L: float | None = None) -> Explanation:
    """Constant boxes of side <= delta/(L*sqrt(d)) on the occupied cells only."""
    if delta <= 0:
        raise ArgumentError("delta must be > 0")
    S = np.atleast_2d(np.asarray(support_samples, dtype=float))
    if S.size == 0:
        raise ArgumentError("support sample set is empty")
    S = f.domain.check(S)
    if f.outputs.discrete:
        raise ArgumentError("support cover needs real outputs")
    L = _lipschitz(f, L)
    d = S.shape[1]
    eps = delta / (L * math.sqrt(d)) if L > 0 else 1.0
    m = max(1, math.ceil(1.0 / eps - 1e-12))
    cells = occupied_cells(S, m)
    if len(cells) > CELL_CAP:
        raise ResourceError("occupied cell count exceeds the cap")
    centers = (cells + 0.5) / m
    vals = f.evaluate_many(centers)
    M = range_bound(np.concatenate([vals, f.evaluate_many(S)]))
    pv = value_precision(M, delta)
    q = Quantizer.symmetric(M, pv)
    params = {"d": d, "m": int(m), "cells": [tuple(int(v) for v in c) for c in cells],
              "values": [int(v) for v in np.atleast_1d(q.encode(vals))]}
    g = Explanation("cover", params, d, f.outputs, value_q=q, provenance="fit_support_cover")
    err = sup_error(f, g, S)
    if err > delta:
        raise PropertyViolation(f"cover fit error {err} exceeds delta {delta} on the support")
    return g


def fit(req: FitRequest, samples=None) -> Explanation:
    """Dispatch a FitRequest to the matching builder."""
    f, o = req.target, req.options
    if req.family == "grid":
        if req.delta is None:
            raise ArgumentError("grid fits are driven by delta")
        return fit_grid_piecewise(f, req.delta, o.get("L"))
    if req.family == "tree":
        budget = req.k if req.k is not None else o.get("node_budget", 255)
        return fit_tree_greedy(f, samples, o.get("node_budget", budget))
    if req.family == "linear":
        return fit_linear_lsq(f, samples)
    if req.family == "local":
        return fit_local(f, o["x0"], o["r"], req.delta, o.get("L"))
    if req.family == "cover":
        return fit_support_cover(f, samples if samples is not None else o["support"], req.delta,
                                 o.get("L"))
    if req.family == "constant":
        y = f.evaluate_many(samples)
        if f.outputs.discrete:
            return make_constant(int(np.argmax(np.bincount(y))), f.outputs, f.domain.dim)
        M = range_bound(y)
        return make_constant(float(np.mean(y)), f.outputs, f.domain.dim,
                             Quantizer.symmetric(M, o.get("p", 16)))
    raise ConfigurationError(f"unknown family {req.family!r}")
