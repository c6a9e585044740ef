"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""
import filecmp
import json
import math
import time
from functools import lru_cache
from pathlib import Path

import numpy as np

from xplimit import approximators as ap
from xplimit import boolean_lab as bl
from xplimit import cli
from xplimit import dimension as dm
from xplimit import regulatory as rg
from xplimit.frontier import (Frontier, Point, check_duality_monotone, epsilon_of_k,
                              fit_scaling_exponent, kappa_of_delta, linear_fit, sweep)
from xplimit.mdl import Quantizer
from xplimit.metrics import error
from xplimit.model import (Distribution, TargetFunction, bit_rows, make_grid, make_truthtable,
                           synth_target)

from acceptance_log import record

GOLDEN = Path(__file__).parent / "golden"
K_GRID = list(range(25))
DELTAS = [0.2, 0.1, 0.05, 0.025]
LOCAL_DELTAS = [0.1, 0.05, 0.025, 0.0125]


@lru_cache(maxsize=None)
def boolean_runs():
    t0 = time.perf_counter()
    out = {}
    for name, table in bl.named_tables().items():
        f = TargetFunction.from_table(table, name)
        fr = epsilon_of_k(f, "boolean", K_GRID)
        out[name] = (table, fr, bl.exact_frontier(table, K_GRID))
    return out, time.perf_counter() - t0


@lru_cache(maxsize=None)
def lipschitz_runs():
    t0 = time.perf_counter()
    out = {}
    for d in (1, 2):
        f = synth_target("lipschitz", d, 1.0, 0)
        out[d] = kappa_of_delta(f, "grid", DELTAS)
    return out, time.perf_counter() - t0


def test_01_oracle_equivalence():
    runs, secs = boolean_runs()
    bad = []
    for name, (table, fr, ex) in runs.items():
        if [e for _, e in fr.epsilon_table()] != ex.epsilon:
            bad.append(name)
        gold = json.loads((GOLDEN / f"boolean_{name}.json").read_text())
        if gold["epsilon"] != ex.golden():
            bad.append(name + "(golden)")
    ok = not bad and secs < 60
    record(1, ok, f"eps_hat == eps_exact on {len(runs)} fixtures, k<=24, "
                  f"{secs:.1f}s; mismatches={bad}")
    assert ok


def test_02_min_complexity_for_perfect_explanation():
    runs, _ = boolean_runs()
    rows = {}
    for name, (table, fr, ex) in runs.items():
        rows[name] = (ex.kappa[ex.delta_grid.index(0.0)], ex.min_mdl, fr.bits_for(0.0))
    ok = all(a == b == c for a, b, c in rows.values())
    record(2, ok, "kappa_exact(0) == min_mdl: " +
           ", ".join(f"{n}={v[1]}" for n, v in rows.items()))
    assert ok


def test_03_complexity_gap():
    runs, _ = boolean_runs()
    bad = [(name, k) for name, (_, _, ex) in runs.items()
           for k, e in zip(ex.k_grid, ex.epsilon) if k < ex.min_mdl and not e > 0]
    ok = not bad
    record(3, ok, f"eps_exact(k) > 0 for every k < min_mdl; violations={bad}")
    assert ok


def _random_achievable_frontier(rng) -> Frontier:
    f = synth_target("lipschitz", 1, float(rng.uniform(0.2, 3)), int(rng.integers(0, 10 ** 6)))
    X = f.domain.grid(64)
    y = f(X)
    pts = []
    for _ in range(int(rng.integers(1, 25))):
        m = int(rng.integers(1, 16))
        p = int(rng.integers(1, 9))
        q = Quantizer.symmetric(float(np.max(np.abs(y))) * 1.25 + 1e-9, p)
        vals = np.clip(rng.normal(0, 1, m), q.lo, q.hi)
        g = make_grid(vals, m, 1, f.outputs, q)
        pts.append(Point(g.bits, float(np.max(np.abs(y - g(X))))))
    return Frontier.from_candidates(pts)


def test_04_duality_and_monotonicity():
    runs, _ = boolean_runs()
    lip, _ = lipschitz_runs()
    emitted = [fr for _, fr, _ in runs.values()] + list(lip.values())
    fails = [i for i, fr in enumerate(emitted) if not check_duality_monotone(fr).ok]
    rng = np.random.default_rng(20240)
    rand_fails = 0
    for _ in range(500):
        if not check_duality_monotone(_random_achievable_frontier(rng)).ok:
            rand_fails += 1
    ok = not fails and rand_fails == 0
    record(4, ok, f"duality+monotonicity on {len(emitted)} emitted frontiers "
                  f"and 500 random frontiers; failures={len(fails) + rand_fails}")
    assert ok


def test_05_error_metric_dominance():
    rng = np.random.default_rng(5)
    worst_gap = -math.inf
    bad = 0
    for i in range(1000):
        if i % 2:
            n = int(rng.integers(1, 5))
            f = TargetFunction.from_table(rng.integers(0, 2, 2 ** n))
            g = make_truthtable(rng.integers(0, 2, 2 ** n))
            X = bit_rows(n)
        else:
            d = int(rng.integers(1, 3))
            f = synth_target("lipschitz", d, float(rng.uniform(0.1, 4)), int(rng.integers(0, 999)))
            m = int(rng.integers(1, 6))
            q = Quantizer.symmetric(2.0, int(rng.integers(1, 8)))
            g = make_grid(rng.uniform(-2, 2, m ** d), m, d, f.outputs, q)
            X = np.unique(rng.random((int(rng.integers(1, 60)), d)), axis=0)
        w = rng.random(len(X)) + 1e-3
        r = error(f, g, dist=Distribution.empirical(X, w / w.sum()), eval_points=X)
        worst_gap = max(worst_gap, r.expected - r.worst_case)
        bad += r.expected > r.worst_case
    ok = bad == 0
    record(5, ok, f"expected <= worst_case on 1000 triples; max(expected-worst)={worst_gap:.3g}")
    assert ok


def test_06_lipschitz_scaling():
    lip, secs = lipschitz_runs()
    parts, ok = [], secs < 120
    for d, fr in lip.items():
        a, r2 = fit_scaling_exponent(fr, "kappa_vs_invdelta")
        good = 0.75 * d <= a <= 1.4 * d and r2 >= 0.9
        ok &= good
        parts.append(f"d={d}: alpha={a:.3f} in [{0.75 * d:.2f},{1.4 * d:.2f}], r2={r2:.4f}, "
                     f"kappa={[b for _, b in fr.kappa_table()]}")
    record(6, ok, "; ".join(parts) + f"; {secs:.1f}s")
    assert ok


def test_07_grid_guarantee():
    fits = viol = 0
    worst = 0.0
    for d in (1, 2):
        X = synth_target("lipschitz", d, 1.0, 0).domain.grid(256 if d == 1 else 128)
        for seed in range(5):
            for L in (0.5, 1.0, 2.0):
                f = synth_target("lipschitz", d, L, seed)
                for delta in DELTAS:
                    g = ap.fit_grid_piecewise(f, delta)
                    e = ap.sup_error(f, g, X)
                    fits += 1
                    viol += e > delta
                    worst = max(worst, e / delta)
    ok = viol == 0
    record(7, ok, f"{fits} grid fits, violations={viol}, max err/delta={worst:.3f}")
    assert ok


def test_08_local_vs_global():
    f = synth_target("lipschitz", 2, 1.0, 0)
    fits, global_bits = [], {}
    for delta in LOCAL_DELTAS:
        g = ap.fit_local(f, [0.5, 0.5], 0.1, delta)
        fits.append((delta, g, ap.sup_error(f, g, ap.ball_points([0.5, 0.5], 0.1))))
        global_bits[delta] = ap.fit_grid_piecewise(f, delta).bits
    # bits of the construction at each delta, against ln(1/delta)
    slope, _, r2 = linear_fit([math.log(1 / d) for d, _, _ in fits], [g.bits for _, g, _ in fits])
    ratio = global_bits[0.0125] / fits[-1][1].bits
    ok = r2 >= 0.9 and ratio >= 10
    record(8, ok, f"local bits={[g.bits for _, g, _ in fits]}, {slope:.2f} bits per ln(1/delta), "
                  f"r2={r2:.4f}; global/local at 0.0125 = {ratio:.0f}")
    assert ok


def test_09_distribution_aware():
    f = synth_target("lipschitz", 3, 1.0, 0)
    S = dm.helix_points(5000, 0)
    fits = []
    for delta in DELTAS:
        g = ap.fit_support_cover(f, S, delta)
        fits.append((delta, g, ap.sup_error(f, g, S)))
    alpha, _, r2 = linear_fit([math.log(1 / d) for d, _, _ in fits],
                              [math.log(g.bits) for _, g, _ in fits])
    curve = dm.box_dimension(dm.helix_points(20000, 0), [2.0 ** -j for j in range(1, 7)])
    ok = 0.7 <= alpha <= 1.5 and abs(curve.d_hat - 1) <= 0.15
    record(9, ok, f"cover bits={[g.bits for _, g, _ in fits]}, exponent={alpha:.3f} in [0.7,1.5]; "
                  f"d_B={curve.d_hat:.3f}")
    assert ok


def test_10_box_counting_fixtures():
    eps2 = [2.0 ** -j for j in range(1, 7)]
    seg = dm.box_dimension(dm.segment_points(10000, 0), eps2).d_hat
    sq = dm.box_dimension(dm.square_points(10000, 0), eps2).d_hat
    can = dm.box_dimension(dm.cantor_points(8), [3.0 ** -j for j in range(1, 8)]).d_hat
    ok = abs(seg - 1) <= 0.15 and abs(sq - 2) <= 0.15 and abs(can - 0.631) <= 0.05
    record(10, ok, f"segment={seg:.3f}, square={sq:.3f}, cantor={can:.4f}")
    assert ok


def test_11_random_function_unexplainability():
    ex = bl.random_function_experiment(3, 12, 500, seed=11, margin=0.25, mode="exhaustive")
    mc = bl.random_function_experiment(10, 24, 200, seed=11, margin=0.05, mode="montecarlo",
                                       workers=8)
    ok_ex = ex.tail_fraction <= 3 * ex.union_bound
    ok_mc = mc.mean <= 0.55
    ok = ok_ex and ok_mc
    record(11, ok, f"n=3,k=12: tail fraction {ex.tail_fraction:.3f} <= 3*{ex.union_bound:.1f} "
                   f"(bound vacuous); n=10,k=24 MC mean agreement {mc.mean:.4f} <= 0.55")
    assert ok


def test_12_trilemma_audit():
    t0 = time.perf_counter()
    name, table = next((n, t) for n, t in bl.named_tables().items()
                       if n.startswith("random4") and bl.min_mdl(t) >= 18)
    rep = bl.trilemma_audit(table, 8, 0.05)
    w = rep.witnesses
    case1 = w["R1_R2"]["within_k_human"] and w["R1_R2"]["expected_error"] > 0.05
    case2 = w["R1_R3"]["expected_error"] == 0.0 and w["R1_R3"]["bits"] > 8
    case3 = (w["R2_R3"]["restricted_class_size"] > 0 and w["R2_R3"]["example"]["bits"] <= 8
             and not w["R2_R3"]["f_in_class"])
    triple = (rep.triple["verdict"] == "infeasible" and rep.triple["programs_checked"] > 0
              and rep.triple["min_error_within_k_human"] > 0.05)
    _, g, er = bl.degenerate_counterexample(4, 0.05, 0)
    degen = g.bits <= 8 and math.isclose(er.worst_case, 0.05 / 8) and er.worst_case <= 0.05
    secs = time.perf_counter() - t0
    ok = case1 and case2 and case3 and triple and degen and secs < 30
    record(12, ok, f"{name} (min_mdl={rep.triple['f_min_mdl']}): witnesses "
                   f"{case1}/{case2}/{case3}, triple {rep.triple['verdict']} after "
                   f"{rep.triple['programs_checked']} programs; degenerate error "
                   f"{er.worst_case:.5f} with {g.bits} bits; {secs:.2f}s")
    assert ok


def test_13_tiered_policy():
    f = synth_target("lipschitz", 1, 1.0, 0)
    fr = sweep(f, "grid,tree,rulelist,linear,constant,knn")
    pol = rg.tiered_policy(fr, [("low", 50), ("mid", 200), ("high", 1000)])
    ok = pol.strictly_decreasing()
    record(13, ok, "tier deltas " + ", ".join(f"{t['k_max']}b->{t['delta']:.5f}"
                                              for t in pol.tiers))
    assert ok


RUNS = [
    ["frontier", "--target", "synth:lipschitz,d=2,L=1", "--class", "grid,tree,knn",
     "--deltas", "0.2,0.1,0.05,0.025"],
    ["boolean", "--n", "4", "--seed", "1", "--trials", "50", "--k", "12"],
    ["boolean", "--n", "10", "--seed", "3", "--trials", "40", "--k", "24"],
    ["local", "--target", "synth:lipschitz,d=2,L=1", "--deltas", "0.1,0.05,0.025,0.0125"],
    ["cover", "--target", "synth:lipschitz,d=3,L=1", "--deltas", "0.2,0.1,0.05,0.025"],
    ["tiered", "--target", "synth:lipschitz,d=1,L=1", "--tiers", "low:50,mid:200,high:1000"],
    ["audit", "--n", "4", "--seed", "1"],
    ["boxdim", "--fixture", "helix"],
]


def test_14_determinism(tmp_path):
    mismatched = []
    files = 0
    for i, argv in enumerate(RUNS):
        dirs = []
        for workers in (1, 8):
            out = tmp_path / f"run{i}_w{workers}"
            assert cli.main(argv + ["--workers", str(workers), "--out", str(out)]) == 0
            dirs.append(out)
        names = sorted(p.name for p in dirs[0].iterdir())
        assert names == sorted(p.name for p in dirs[1].iterdir())
        files += len(names)
        _, diff, errs = filecmp.cmpfiles(dirs[0], dirs[1], names, shallow=False)
        mismatched += [f"{argv[0]}/{n}" for n in diff + errs]
    ok = not mismatched
    record(14, ok, f"{len(RUNS)} runs x workers 1 vs 8, {files} files byte-identical; "
                   f"mismatches={mismatched}")
    assert ok
