"""Empirical error/complexity staircases and their checks.

A :class:`Frontier` stores the Pareto staircase of achieved (bits, error)
pairs.  ``error_at(k)`` and ``bits_for(delta)`` read the staircase directly,
so a frontier whose points are not a valid staircase shows up as a duality or
monotonicity violation instead of being silently repaired.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import approximators as ap
from .errors import ArgumentError, ConfigurationError, FitError
from .io import fmt
from .mdl import Quantizer
from .model import (Distribution, Explanation, TargetFunction, make_constant, make_knn,
                    range_bound, tree_to_rulelist)

DEFAULT_M = tuple(range(1, 65))
DEFAULT_TREE_SIZES = tuple(range(1, 256, 2))
DEFAULT_P = (2, 4, 8, 16)
FAMILIES = ("grid", "tree", "rulelist", "linear", "constant", "knn", "mlp", "boolean")


@dataclass(frozen=True, order=True)
class Point:
    bits: int
    error: float
    cls: str = ""
    params: str = ""


@dataclass(frozen=True)
class Frontier:
    points: tuple[Point, ...]
    target: str = ""
    family: str = ""
    metric: str = "worst_case"
    eval_spec: str = ""
    exact: bool = False
    k_grid: tuple[int, ...] = ()
    delta_grid: tuple[float, ...] = ()

    # -- construction -------------------------------------------------------

    @classmethod
    def from_candidates(cls, candidates: Iterable[Point], **meta) -> "Frontier":
        return cls(pareto(candidates), **meta)

    def insert(self, pt: Point) -> "Frontier":
        return Frontier(pareto(self.points + (pt,)), self.target, self.family, self.metric,
                        self.eval_spec, self.exact, self.k_grid, self.delta_grid)

    def union(self, other: "Frontier") -> "Frontier":
        return Frontier(pareto(self.points + other.points), self.target,
                        "+".join(sorted(set(self.family.split("+") + other.family.split("+")))),
                        self.metric, self.eval_spec, self.exact and other.exact,
                        self.k_grid, self.delta_grid)

    # -- staircase reads ----------------------------------------------------

    def error_at(self, k: float) -> float:
        """Error of the last staircase point with bits <= k (inf if none)."""
        e = math.inf
        for pt in self.points:
            if pt.bits > k:
                break
            e = pt.error
        return e

    def bits_for(self, delta: float) -> int | None:
        """Bits of the first staircase point with error <= delta (None if unattained)."""
        for pt in self.points:
            if pt.error <= delta:
                return pt.bits
        return None

    def point_for(self, delta: float) -> Point | None:
        for pt in self.points:
            if pt.error <= delta:
                return pt
        return None

    @property
    def min_error(self) -> float:
        return self.points[-1].error if self.points else math.inf

    @property
    def max_bits(self) -> int:
        return self.points[-1].bits if self.points else 0

    def is_pareto(self) -> bool:
        return all(a.bits < b.bits and a.error > b.error
                   for a, b in zip(self.points, self.points[1:]))

    # -- tables -------------------------------------------------------------

    def epsilon_table(self, k_grid=None) -> list[tuple[int, float]]:
        ks = self.k_grid if k_grid is None else k_grid
        return [(int(k), self.error_at(k)) for k in ks]

    def kappa_table(self, delta_grid=None) -> list[tuple[float, int | None]]:
        ds = self.delta_grid if delta_grid is None else delta_grid
        return [(float(d), self.bits_for(d)) for d in ds]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k_bits", "error", "class", "params"])
        for pt in self.points:
            w.writerow([pt.bits, fmt(pt.error), pt.cls, pt.params])
        return buf.getvalue()

    def kappa_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["delta", "kappa_hat_bits", "error", "class", "params"])
        for d in self.delta_grid:
            pt = self.point_for(d)
            if pt is None:
                w.writerow([fmt(d), "unattained", "", "", ""])
            else:
                w.writerow([fmt(d), pt.bits, fmt(pt.error), pt.cls, pt.params])
        return buf.getvalue()

    def plot_data(self) -> dict:
        return {
            "target": self.target, "family": self.family, "metric": self.metric,
            "eval_spec": self.eval_spec, "exact": self.exact,
            "label": "exact" if self.exact else "empirical upper envelope (eps_hat / kappa_hat)",
            "staircase": [[pt.bits, fmt(pt.error)] for pt in self.points],
            "epsilon_hat": [[k, fmt(e)] for k, e in self.epsilon_table()],
            "kappa_hat": [[fmt(d), b] for d, b in self.kappa_table()],
        }


def pareto(points: Iterable[Point]) -> tuple[Point, ...]:
    """Non-dominated staircase: ascending bits, strictly decreasing error."""
    out: list[Point] = []
    best = math.inf
    for pt in sorted(points, key=lambda p: (p.bits, p.error, p.cls, p.params)):
        if pt.error < best:
            out.append(pt)
            best = pt.error
    return tuple(out)


# ---------------------------------------------------------------------------
# Candidate generation
# ---------------------------------------------------------------------------

@dataclass
class SweepOptions:
    m_range: Sequence[int] = DEFAULT_M
    tree_sizes: Sequence[int] = DEFAULT_TREE_SIZES
    p_set: Sequence[int] = DEFAULT_P
    metric: str | None = None
    grid_density: int | None = None
    eval_points: np.ndarray | None = None
    dist: Distribution | None = None
    workers: int = 1
    k_cap: int | None = None
    mlp_specs: Sequence[Explanation] = ()
    knn_sizes: Sequence[int] = (1, 2, 4, 8, 16, 32, 64)

    @classmethod
    def from_dict(cls, d: dict | None) -> "SweepOptions":
        d = dict(d or {})
        known = {k: d[k] for k in list(d) if k in cls.__dataclass_fields__}
        return cls(**known)


class _Evaluator:
    """Scores explanations against f on a fixed evaluation set."""

    def __init__(self, f: TargetFunction, opts: SweepOptions):
        self.f = f
        if opts.eval_points is not None:
            self.X = f.domain.check(opts.eval_points)
        elif opts.dist is not None and opts.dist.kind == "empirical":
            self.X = f.domain.check(opts.dist.points)
        else:
            self.X = f.domain.grid(opts.grid_density)
        dist = opts.dist or Distribution.uniform()
        self.w = dist.weights_on(self.X)
        self.metric = opts.metric or ("expected" if f.domain.kind == "bitvector" else "worst_case")
        if self.metric not in ("worst_case", "expected"):
            raise ConfigurationError(f"unknown metric {self.metric!r}")
        self.y = f.evaluate_many(self.X)
        if f.domain.kind == "hypercube":
            self.spec = f"grid:{opts.grid_density or len(np.unique(self.X[:, 0]))}/axis"
        else:
            self.spec = f"points:{len(self.X)}"

    def score(self, g: Explanation) -> float:
        e = self.f.outputs.distance(self.y, g.evaluate_many(self.X))
        if self.metric == "worst_case":
            return float(e.max())
        return min(float(np.dot(self.w, e)), float(e.max()))


def _grid_cands(ev: _Evaluator, o: SweepOptions):
    f = ev.f
    if f.outputs.discrete or f.domain.kind != "hypercube":
        return []
    M = range_bound(ev.y)
    d = f.domain.dim
    out = []
    for m in o.m_range:
        if m ** d > ap.CELL_CAP:
            continue
        for p in o.p_set:
            out.append(lambda m=m, p=p: ("grid", f"m={m},p={p}",
                                         ap.grid_explanation(f, m, p, M)))
    return out


def _tree_sequence(ev: _Evaluator, p: int, max_nodes: int) -> list[Explanation]:
    _, grown = ap.fit_tree_greedy(ev.f, ev.X, max_nodes, p=p, return_path=True)
    return ap.truncations(grown)


def _tree_cands(ev: _Evaluator, o: SweepOptions, as_rules: bool = False):
    sizes = sorted(set(int(s) for s in o.tree_sizes))
    if not sizes:
        return []
    out = []
    p_list = o.p_set if not ev.f.outputs.discrete or ev.f.domain.kind != "bitvector" else (1,)
    for p in p_list:
        def run(p=p):
            seq = _tree_sequence(ev, p, max(sizes))
            res = []
            for g in seq:
                size = len(g.params["nodes"])
                if size not in sizes:
                    continue
                h = tree_to_rulelist(g) if as_rules else g
                res.append(("rulelist" if as_rules else "tree", f"nodes={size},p={p}", h))
            return res
        out.append(run)
    return out


def _linear_cands(ev: _Evaluator, o: SweepOptions):
    if ev.f.domain.kind == "finite":
        return []
    return [lambda p=p: ("linear", f"p={p}", ap.fit_linear_lsq(ev.f, ev.X, p=p)) for p in o.p_set]


def _constant_cands(ev: _Evaluator, o: SweepOptions):
    f = ev.f
    d = f.domain.dim
    if f.outputs.discrete:
        return [lambda lab=lab: ("constant", f"label={lab}", make_constant(lab, f.outputs, d))
                for lab in range(len(f.outputs.labels))]
    M = range_bound(ev.y)
    mid = 0.5 * (float(ev.y.max()) + float(ev.y.min()))
    mean = float(np.dot(ev.w, ev.y))
    out = []
    for p in sorted(set((1,) + tuple(o.p_set))):
        q = Quantizer.symmetric(M, p)
        out.append(lambda q=q, p=p: ("constant", f"midrange,p={p}",
                                     make_constant(mid, f.outputs, d, q)))
        out.append(lambda q=q, p=p: ("constant", f"mean,p={p}",
                                     make_constant(mean, f.outputs, d, q)))
    return out


def _knn_cands(ev: _Evaluator, o: SweepOptions):
    f = ev.f
    if f.domain.kind != "hypercube":
        return []
    M = range_bound(ev.y)
    out = []
    for m in o.knn_sizes:
        if m > len(ev.X):
            continue
        idx = np.unique(np.linspace(0, len(ev.X) - 1, m).round().astype(np.int64))
        for p in o.p_set:
            def run(idx=idx, p=p):
                q = None if f.outputs.discrete else Quantizer.symmetric(M, p)
                g = make_knn(ev.X[idx], ev.y[idx], f.outputs, p, q, provenance="knn_sweep")
                return ("knn", f"m={len(idx)},p={p}", g)
            out.append(run)
    return out


def _mlp_cands(ev: _Evaluator, o: SweepOptions):
    return [lambda g=g, i=i: ("mlp", f"spec={i}", g) for i, g in enumerate(o.mlp_specs)]


def _score_batch(ev: _Evaluator, task) -> list[Point]:
    res = task()
    if isinstance(res, tuple):
        res = [res]
    pts = []
    for cls, params, g in res:
        pts.append(Point(int(g.bits), ev.score(g), cls, params))
    return pts


_BUILDERS: dict[str, Callable] = {
    "grid": _grid_cands,
    "tree": _tree_cands,
    "rulelist": lambda ev, o: _tree_cands(ev, o, as_rules=True),
    "linear": _linear_cands,
    "constant": _constant_cands,
    "knn": _knn_cands,
    "mlp": _mlp_cands,
}


def parse_families(family) -> list[str]:
    fams = family.split(",") if isinstance(family, str) else list(family)
    fams = [x.strip() for x in fams if x.strip()]
    if not fams:
        raise ConfigurationError("empty class family")
    for fam in fams:
        if fam not in FAMILIES:
            raise ConfigurationError(f"unknown class family {fam!r}")
    return fams


def sweep(f: TargetFunction, family, options: SweepOptions | dict | None = None) -> Frontier:
    """Pareto staircase over every candidate the families generate."""
    o = options if isinstance(options, SweepOptions) else SweepOptions.from_dict(options)
    fams = parse_families(family)
    if fams == ["boolean"] or "boolean" in fams:
        from .boolean_lab import language_frontier
        if fams != ["boolean"]:
            raise ConfigurationError("the boolean language is swept on its own")
        return language_frontier(f, o.k_cap if o.k_cap is not None else 24)
    ev = _Evaluator(f, o)
    tasks = []
    for fam in fams:
        tasks.extend(_BUILDERS[fam](ev, o))
    if not tasks:
        raise ConfigurationError(f"family {family!r} has no members for this target")
    if o.workers and o.workers > 1:
        with ThreadPoolExecutor(max_workers=o.workers) as ex:
            batches = list(ex.map(lambda t: _score_batch(ev, t), tasks))
    else:
        batches = [_score_batch(ev, t) for t in tasks]
    pts = [pt for b in batches for pt in b]
    if o.k_cap is not None:
        pts = [pt for pt in pts if pt.bits <= o.k_cap]
    return Frontier(pareto(pts), target=f.name, family="+".join(fams), metric=ev.metric,
                    eval_spec=ev.spec)


def epsilon_of_k(f: TargetFunction, family, k_grid, options=None) -> Frontier:
    ks = tuple(int(k) for k in k_grid)
    if list(ks) != sorted(ks):
        raise ArgumentError("k_grid must be ascending")
    o = options if isinstance(options, SweepOptions) else SweepOptions.from_dict(options)
    if ks:
        o.k_cap = max(ks) if o.k_cap is None else min(o.k_cap, max(ks))
    fr = sweep(f, family, o)
    return _with_queries(fr, k_grid=ks)


def kappa_of_delta(f: TargetFunction, family, delta_grid, options=None) -> Frontier:
    ds = tuple(float(x) for x in delta_grid)
    if list(ds) != sorted(ds, reverse=True):
        raise ArgumentError("delta_grid must be descending")
    if any(x < 0 for x in ds):
        raise ArgumentError("delta values must be >= 0")
    fr = sweep(f, family, options)
    return _with_queries(fr, delta_grid=ds)


def _with_queries(fr: Frontier, k_grid=None, delta_grid=None) -> Frontier:
    return Frontier(fr.points, fr.target, fr.family, fr.metric, fr.eval_spec, fr.exact,
                    tuple(k_grid) if k_grid is not None else fr.k_grid,
                    tuple(delta_grid) if delta_grid is not None else fr.delta_grid)


def with_queries(fr: Frontier, k_grid=None, delta_grid=None) -> Frontier:
    return _with_queries(fr, k_grid, delta_grid)


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------

@dataclass
class CheckReport:
    ok: bool
    duality_pairs: int
    violations: list[str] = field(default_factory=list)
    monotone_epsilon: bool = True
    monotone_kappa: bool = True
    smoothness_log2_constant: float | None = None

    def to_dict(self) -> dict:
        return {
            "ok": self.ok, "duality_pairs": self.duality_pairs,
            "violations": self.violations, "monotone_epsilon": self.monotone_epsilon,
            "monotone_kappa": self.monotone_kappa,
            "smoothness_log2_constant": (None if self.smoothness_log2_constant is None
                                         else fmt(self.smoothness_log2_constant)),
        }


def check_grid(fr: Frontier) -> tuple[list[int], list[float]]:
    ks = {0}
    for pt in fr.points:
        ks.update((pt.bits - 1, pt.bits, pt.bits + 1))
    ks.update(fr.k_grid)
    ds = {0.0}
    for pt in fr.points:
        ds.add(pt.error)
    ds.update(fr.delta_grid)
    errs = sorted(e for e in ds if math.isfinite(e))
    mids = [(a + b) / 2 for a, b in zip(errs, errs[1:])]
    if errs:
        mids.append(errs[-1] * 2 + 1)
    return sorted(k for k in ks if k >= 0), sorted(ds.union(mids))


def check_duality_monotone(fr: Frontier, L: float | None = None, d: int | None = None,
                           max_violations: int = 20) -> CheckReport:
    """Staircase duality eps(k) <= delta <=> k >= kappa(delta), plus monotonicity."""
    ks, ds = check_grid(fr)
    eps = [fr.error_at(k) for k in ks]
    kap = [fr.bits_for(x) for x in ds]
    viol: list[str] = []
    pairs = 0
    for k, e in zip(ks, eps):
        for x, kb in zip(ds, kap):
            pairs += 1
            lhs = e <= x
            rhs = kb is not None and k >= kb
            if lhs != rhs and len(viol) < max_violations:
                viol.append(f"duality fails at (k={k}, delta={fmt(x)}): eps_hat={fmt(e)}, "
                            f"kappa_hat={kb}")
    mono_e = all(a >= b for a, b in zip(eps, eps[1:]))
    if not mono_e:
        i = next(i for i, (a, b) in enumerate(zip(eps, eps[1:])) if a < b)
        viol.append(f"eps_hat increases between k={ks[i]} and k={ks[i + 1]}")
    kinf = [math.inf if b is None else b for b in kap]
    mono_k = all(a >= b for a, b in zip(kinf, kinf[1:]))
    if not mono_k:
        i = next(i for i, (a, b) in enumerate(zip(kinf, kinf[1:])) if a < b)
        viol.append(f"kappa_hat increases between delta={fmt(ds[i])} and delta={fmt(ds[i + 1])}")
    smooth = smoothness_constant(fr, L, d) if L and d else None
    return CheckReport(not viol, pairs, viol, mono_e, mono_k, smooth)


def smoothness_constant(fr: Frontier, L: float, d: int) -> float | None:
    """log2 of the smallest C with eps(k) - eps(k+1) <= C * L * 2^(-(k+1)/d) at every step."""
    best = None
    for a, b in zip(fr.points, fr.points[1:]):
        drop = a.error - b.error
        if drop <= 0 or not math.isfinite(drop):
            continue
        k = b.bits - 1  # the drop happens between k = b.bits - 1 and b.bits
        val = math.log2(drop) - math.log2(L) + (k + 1) / d
        best = val if best is None else max(best, val)
    return best


# ---------------------------------------------------------------------------
# Scaling fits
# ---------------------------------------------------------------------------

def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares slope, intercept and r^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or np.ptp(x) == 0:
        raise FitError("degenerate spread in the regressor")
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + icpt)
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if sst == 0 else 1.0 - float(np.sum(resid ** 2)) / sst
    return float(slope), float(icpt), r2


def fit_scaling_exponent(fr: Frontier, mode: str = "kappa_vs_invdelta") -> tuple[float, float]:
    """Exponent and r^2 of a frontier's growth law."""
    if mode == "kappa_vs_invdelta":
        rows = [(d, b) for d, b in fr.kappa_table() if b is not None and d > 0]
        if len(rows) < 4:
            raise FitError(f"need >= 4 attained deltas, have {len(rows)}")
        x = [math.log(1 / d) for d, _ in rows]
        y = [math.log(b) for _, b in rows]
    elif mode == "local_log":
        rows = [(d, b) for d, b in fr.kappa_table() if b is not None and d > 0]
        if len(rows) < 4:
            raise FitError(f"need >= 4 attained deltas, have {len(rows)}")
        x = [math.log(1 / d) for d, _ in rows]
        y = [float(b) for _, b in rows]
    elif mode == "compressibility":
        rows = [(pt.bits, pt.error) for pt in fr.points if pt.error > 0]
        if len(rows) < 4:
            raise FitError(f"need >= 4 staircase points with positive error, have {len(rows)}")
        x = [math.log(1 / e) for _, e in rows]
        y = [math.log(b) for b, _ in rows]
    else:
        raise ConfigurationError(f"unknown scaling mode {mode!r}")
    slope, _, r2 = linear_fit(x, y)
    return slope, r2


def frontier_from_fits(fits: Sequence[tuple[float, Explanation, float]], target: str,
                       family: str, metric: str = "worst_case") -> Frontier:
    """Frontier over (delta, explanation, measured error) triples, queried at those deltas."""
    pts = [Point(int(g.bits), float(err), family, f"delta={fmt(dl)}") for dl, g, err in fits]
    deltas = tuple(sorted({float(dl) for dl, _, _ in fits}, reverse=True))
    return Frontier(pareto(pts), target, family, metric, "per-fit", False, (), deltas)
