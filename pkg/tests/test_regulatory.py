
import numpy as np
import pytest

from xplimit import regulatory as rg
from xplimit.errors import AlignmentError, PurposeError
from xplimit.frontier import Frontier, Point, SweepOptions, sweep
from xplimit.model import TargetFunction, synth_target


def _fr(pts, exact=False, metric="worst_case"):
    return Frontier.from_candidates([Point(b, e) for b, e in pts], exact=exact, metric=metric)


def test_verdicts():
    region = rg.FeasibilityRegion(_fr([(4, 0.5), (10, 0.1)]))
    assert region.verdict(10, 0.1).status == "feasible"
    v = region.verdict(9, 0.1)
    assert v.status == "infeasible" and v.kappa == 10
    assert region.verdict(100, 0.01).status == "unknown"
    exact = rg.FeasibilityRegion(_fr([(4, 0.5), (10, 0.1)], exact=True))
    assert exact.verdict(100, 0.01).status == "infeasible"
    assert rg.feasibility_contains(region, 4, 0.7).feasible
    assert region.verdict(4, 0.7).to_dict()["witness"]["bits"] == 4


def test_verdicts_agree_with_duality_on_xor():
    fr = sweep(TargetFunction.from_table([0, 1, 1, 0]), "boolean")
    region = rg.FeasibilityRegion(fr, "xor")
    for k in range(0, 12):
        for d in (0.0, 0.1, 0.25, 0.5, 1.0):
            v = region.verdict(k, d)
            assert v.feasible == (fr.error_at(k) <= d)
    assert region.verdict(2, 0.1).status == "infeasible"


def test_grid_table_and_emptiness():
    region = rg.FeasibilityRegion(_fr([(4, 0.5), (10, 0.1)]))
    assert region.grid_table([3, 4], [0.5]) == [(3, 0.5, False), (4, 0.5, True)]
    assert region.is_empty_on([1, 2, 3], [0.5, 0.1])


def test_intersection_is_pointwise_max():
    a = rg.FeasibilityRegion(_fr([(2, 0.5), (8, 0.2), (20, 0.05)]), "a")
    b = rg.FeasibilityRegion(_fr([(4, 0.4), (6, 0.2), (30, 0.1)]), "b")
    both = rg.intersect_regions([a, b])
    for d in np.linspace(0, 0.6, 61):
        ka, kb = a.kappa(d), b.kappa(d)
        want = None if ka is None or kb is None else max(ka, kb)
        assert both.kappa(d) == want
    with pytest.raises(AlignmentError):
        rg.intersect_regions([a, rg.FeasibilityRegion(_fr([(1, 0.5)], metric="expected"))])
    with pytest.raises(AlignmentError):
        rg.intersect_regions([])


def test_tiered_policy_monotone():
    fr = _fr([(10, 0.5), (60, 0.2), (150, 0.1), (900, 0.01)])
    pol = rg.tiered_policy(fr, [("low", 50), ("mid", 200), ("high", 1000)])
    assert pol.deltas == [0.5, 0.1, 0.01]
    assert pol.strictly_decreasing()
    flat = rg.tiered_policy(fr, [("a", 70), ("b", 100)])
    assert flat.deltas == [0.2, 0.2] and not flat.strictly_decreasing()
    none = rg.tiered_policy(fr, [("tiny", 5)])
    assert none.tiers[0]["attainable"] is False and not none.strictly_decreasing()
    grid = rg.tiered_policy(fr, [("low", 50)], delta_grid=[0.6, 0.55])
    assert grid.deltas == [0.55]


def test_purpose_efficiency():
    f = synth_target("lipschitz", 1, 1.0, 0)
    o = SweepOptions(m_range=range(1, 33))
    purposes = [rg.PurposeSpec("left", {"lo": 0.0, "hi": 0.25}, 0.05),
                rg.PurposeSpec("coarse", lambda X: X[:, 0] >= 0.5, 0.2)]
    rep = rg.purpose_efficiency(f, purposes, o)
    assert rep["uniform_kappa_hat"] is not None
    assert rep["max_purpose_kappa_hat"] <= rep["uniform_kappa_hat"]
    with pytest.raises(PurposeError):
        rg.purpose_efficiency(f, [], o)
    with pytest.raises(PurposeError):
        rg.purpose_efficiency(f, [rg.PurposeSpec("none", lambda X: X[:, 0] > 2, 0.1)], o)


def test_contradiction_analysis():
    fr = _fr([(4, 0.5), (10, 0.0)])
    rep = rg.contradiction_analysis(fr, k_human=6, demanded_delta=0.0,
                                    other_classes={"other": _fr([(3, 0.0)])})
    flags = {f["flag"]: f for f in rep["flags"]}
    assert flags["zero_error_demand"]["kappa_hat_0"] == 10
    assert flags["k_human_cap"]["conflict"] is True
    assert flags["uniform_standard_across_classes"]["kappa_hat_by_class"] == {"other": 3}
    assert rep["informational"]
