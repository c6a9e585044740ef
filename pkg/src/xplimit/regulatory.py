"""Feasibility regions, tiered policies and purpose-specific requirements.

Verdicts are read off computed staircases only.  A demand below the lowest
error an empirical frontier reached is reported as unknown, never as
feasible or infeasible by extrapolation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import AlignmentError, PurposeError
from .frontier import Frontier, Point, SweepOptions, pareto, sweep
from .io import fmt
from .model import TargetFunction


@dataclass(frozen=True)
class Verdict:
    status: str  # feasible | infeasible | unknown
    k: float
    delta: float
    kappa: int | None
    witness: Point | None = None
    reason: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"

    def to_dict(self) -> dict:
        w = None
        if self.witness is not None:
            w = {"bits": self.witness.bits, "error": fmt(self.witness.error),
                 "class": self.witness.cls, "params": self.witness.params}
        return {"status": self.status, "k": self.k, "delta": fmt(self.delta),
                "kappa_hat": self.kappa, "witness": w, "reason": self.reason}


@dataclass(frozen=True)
class FeasibilityRegion:
    frontier: Frontier
    name: str = ""

    def kappa(self, delta: float) -> int | None:
        return self.frontier.bits_for(delta)

    def contains(self, k: float, delta: float) -> bool:
        kb = self.kappa(delta)
        return kb is not None and k >= kb

    def verdict(self, k: float, delta: float) -> Verdict:
        fr = self.frontier
        pt = fr.point_for(delta)
        if pt is None:
            if fr.exact:
                return Verdict("infeasible", k, delta, None, None,
                               "no explanation in the enumerated language reaches this error")
            return Verdict("unknown", k, delta, None, None,
                           f"unknown beyond computed frontier: lowest error reached is "
                           f"{fmt(fr.min_error)}")
        if k >= pt.bits:
            return Verdict("feasible", k, delta, pt.bits, pt,
                           f"an explanation with {pt.bits} bits reaches error {fmt(pt.error)}")
        return Verdict("infeasible", k, delta, pt.bits, pt,
                       f"k < kappa_hat(delta) = {pt.bits}; best error within k bits is "
                       f"{fmt(fr.error_at(k))}")

    def grid_table(self, k_grid, delta_grid) -> list[tuple[int, float, bool]]:
        return [(int(k), float(d), self.contains(k, d)) for k in k_grid for d in delta_grid]

    def is_empty_on(self, k_grid, delta_grid) -> bool:
        return not any(c for _, _, c in self.grid_table(k_grid, delta_grid))


def feasibility_contains(region: FeasibilityRegion, k: float, delta: float) -> Verdict:
    return region.verdict(k, delta)


def intersect_regions(regions: Sequence[FeasibilityRegion]) -> FeasibilityRegion:
    """Region of demands every input region meets: the pointwise max of kappa_hat."""
    if not regions:
        raise AlignmentError("need at least one region")
    metrics = {r.frontier.metric for r in regions}
    if len(metrics) != 1:
        raise AlignmentError(f"regions use different error metrics: {sorted(metrics)}")
    levels = sorted({pt.error for r in regions for pt in r.frontier.points})
    pts = []
    for e in levels:
        ks = [r.kappa(e) for r in regions]
        if any(k is None for k in ks):
            continue
        pts.append(Point(max(ks), e, "intersection", ""))
    base = regions[0].frontier
    fr = Frontier(pareto(pts), "+".join(r.frontier.target for r in regions), "intersection",
                  base.metric, base.eval_spec, all(r.frontier.exact for r in regions),
                  base.k_grid, base.delta_grid)
    return FeasibilityRegion(fr, "intersection(" + ",".join(r.name for r in regions) + ")")


# ---------------------------------------------------------------------------
# Tiered policy
# ---------------------------------------------------------------------------

@dataclass
class TierPolicy:
    tiers: list[dict]

    @property
    def deltas(self) -> list[float | None]:
        return [t["delta"] for t in self.tiers]

    def strictly_decreasing(self) -> bool:
        ds = [d for d in self.deltas]
        if any(d is None for d in ds):
            return False
        return all(a > b for a, b in zip(ds, ds[1:]))

    def to_dict(self) -> dict:
        return {"tiers": [{**t, "delta": fmt(t["delta"]) if t["delta"] is not None else None}
                          for t in self.tiers],
                "strictly_decreasing": self.strictly_decreasing()}


def tiered_policy(frontier: Frontier, tiers, delta_grid=None) -> TierPolicy:
    """Per tier, the smallest grid delta with kappa_hat(delta) <= k_max.

    ``tiers`` is a list of (label, k_max) ordered by ascending risk.  The
    default delta grid is the set of errors on the staircase.
    """
    if delta_grid is None:
        grid = sorted({pt.error for pt in frontier.points})
    else:
        grid = sorted(float(d) for d in delta_grid)
    out = []
    for label, k_max in tiers:
        chosen = None
        for d in grid:
            kb = frontier.bits_for(d)
            if kb is not None and kb <= k_max:
                chosen = d
                break
        pt = frontier.point_for(chosen) if chosen is not None else None
        out.append({"label": str(label), "k_max": int(k_max), "delta": chosen,
                    "attainable": chosen is not None,
                    "witness_bits": pt.bits if pt else None,
                    "witness_class": pt.cls if pt else None})
    return TierPolicy(out)


# ---------------------------------------------------------------------------
# Purpose-specific requirements
# ---------------------------------------------------------------------------

@dataclass
class PurposeSpec:
    name: str
    subspace: Callable[[np.ndarray], np.ndarray] | dict
    delta: float
    family: str | Sequence[str] = "grid"
    k_max: int | None = None

    def mask(self, X: np.ndarray) -> np.ndarray:
        if callable(self.subspace):
            return np.asarray(self.subspace(X), dtype=bool)
        lo = np.asarray(self.subspace.get("lo", 0.0), dtype=float)
        hi = np.asarray(self.subspace.get("hi", 1.0), dtype=float)
        return np.all((X >= lo) & (X <= hi), axis=1)


def _families(fam) -> list[str]:
    return [x.strip() for x in fam.split(",")] if isinstance(fam, str) else list(fam)


def purpose_efficiency(f: TargetFunction, purposes: Sequence[PurposeSpec],
                       options: SweepOptions | dict | None = None) -> dict:
    """Compare per-purpose kappa_hat against one uniform standard at the tightest delta."""
    o = options if isinstance(options, SweepOptions) else SweepOptions.from_dict(options)
    if not purposes:
        raise PurposeError("no purposes given")
    X = f.domain.grid(o.grid_density) if o.eval_points is None else np.asarray(o.eval_points)
    rows = []
    for ps in purposes:
        sub = X[ps.mask(X)]
        if len(sub) == 0:
            raise PurposeError(f"purpose {ps.name!r} selects no evaluation points")
        po = SweepOptions(**{**o.__dict__, "eval_points": sub})
        fr = sweep(f, ps.family, po)
        kb = fr.bits_for(ps.delta)
        rows.append({"purpose": ps.name, "delta": ps.delta, "family": "+".join(_families(ps.family)),
                     "points": int(len(sub)), "kappa_hat": kb,
                     "within_k_max": None if ps.k_max is None or kb is None else kb <= ps.k_max})
    d_min = min(ps.delta for ps in purposes)
    fams = sorted({x for ps in purposes for x in _families(ps.family)})
    uo = SweepOptions(**{**o.__dict__, "eval_points": X})
    uniform = sweep(f, fams, uo).bits_for(d_min)
    specific = [r["kappa_hat"] for r in rows]
    if uniform is None or any(k is None for k in specific):
        verdict = None
        worst = None
    else:
        worst = max(specific)
        verdict = worst < uniform
    return {"purposes": [{**r, "delta": fmt(r["delta"])} for r in rows],
            "max_purpose_kappa_hat": worst, "uniform_delta": fmt(d_min),
            "uniform_family": "+".join(fams), "uniform_kappa_hat": uniform,
            "purpose_specific_more_efficient": verdict}


def contradiction_analysis(frontier: Frontier, k_human: int | None = None,
                           demanded_delta: float | None = None,
                           other_classes: dict[str, Frontier] | None = None) -> dict:
    """Informational flags for demands that cannot be met together."""
    flags = []
    k0 = frontier.bits_for(0.0)
    flags.append({"flag": "zero_error_demand",
                  "kappa_hat_0": k0,
                  "message": ("perfect explanation needs " + (f"{k0} bits" if k0 is not None else
                              "more than any computed explanation offers"))})
    if k_human is not None:
        eps = frontier.error_at(k_human)
        msg = f"within {k_human} bits the best error is {fmt(eps)}"
        if demanded_delta is not None:
            kb = frontier.bits_for(demanded_delta)
            conflict = kb is None or kb > k_human
            msg += f"; demand delta={fmt(demanded_delta)} needs {kb} bits"
            flags.append({"flag": "k_human_cap", "conflict": conflict, "message": msg})
        else:
            flags.append({"flag": "k_human_cap", "conflict": None, "message": msg})
    if other_classes and demanded_delta is not None:
        need = {name: fr.bits_for(demanded_delta) for name, fr in sorted(other_classes.items())}
        flags.append({"flag": "uniform_standard_across_classes", "kappa_hat_by_class": need,
                      "message": "one delta demands very different budgets across classes"})
    return {"flags": flags, "informational": True}
