import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xplimit.errors import ArgumentError
from xplimit.mdl import Quantizer
from xplimit.metrics import entropy_mi, entropy_x, error, merge_reports, nondegeneracy_audit
from xplimit.model import (Distribution, InputDomain, OutputSpace, TargetFunction, bit_rows,
                           make_constant, make_grid, make_truthtable, synth_target)


def test_boolean_errors_by_hand():
    f = TargetFunction.from_table([0, 1, 1, 0])
    g = make_truthtable([0, 1, 1, 1])
    r = error(f, g)
    assert r.worst_case == 1.0 and r.expected == 0.25 and r.eval_count == 4
    assert r.metric == "zero_one"
    w = Distribution.empirical(bit_rows(2), [0.1, 0.2, 0.3, 0.4])
    assert error(f, g, dist=w).expected == pytest.approx(0.4)


def test_real_errors_by_hand():
    f = synth_target("ramp", 1, 1.0)
    g = make_constant(0.5, f.outputs, 1, Quantizer(0.0, 0.5, 1))
    X = np.array([[0.0], [0.5], [1.0]])
    r = error(f, g, eval_points=X)
    assert r.worst_case == pytest.approx(0.5)
    assert r.expected == pytest.approx(1 / 3)


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_expected_never_exceeds_worst_case(seed):
    rng = np.random.default_rng(seed)
    if rng.random() < 0.5:
        n = int(rng.integers(1, 5))
        f = TargetFunction.from_table(rng.integers(0, 2, 2 ** n))
        g = make_truthtable(rng.integers(0, 2, 2 ** n))
        X = bit_rows(n)
    else:
        d = int(rng.integers(1, 3))
        f = synth_target("lipschitz", d, float(rng.uniform(0.1, 5)), int(rng.integers(0, 1000)))
        m = int(rng.integers(1, 5))
        q = Quantizer.symmetric(3.0, 4)
        g = make_grid(rng.uniform(-3, 3, m ** d), m, d, f.outputs, q)
        X = rng.random((int(rng.integers(1, 50)), d))
    w = rng.random(len(X))
    dist = Distribution.empirical(X, w / w.sum()) if len(np.unique(X, axis=0)) == len(X) \
        else Distribution.uniform()
    r = error(f, g, dist=dist, eval_points=X)
    assert r.expected <= r.worst_case


def test_merge_reports():
    f = TargetFunction.from_table([0, 1])
    a = error(f, make_truthtable([0, 0]))
    b = error(f, make_truthtable([0, 1]))
    m = merge_reports([(a, 0.5), (b, 0.5)])
    assert m.worst_case == 1.0 and m.expected == pytest.approx(0.25)


def _entropy_oracle(ys, w):
    tot = {}
    for y, wi in zip(ys, w):
        tot[y] = tot.get(y, 0.0) + wi
    return -sum(p * math.log2(p) for p in tot.values() if p > 0)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 2)), min_size=1, max_size=40))
def test_entropy_and_mutual_information(pairs):
    xs = [a for a, _ in pairs]
    ys = [b for _, b in pairs]
    w = [1.0 / len(pairs)] * len(pairs)
    H, I = entropy_mi(xs, ys)
    assert H == pytest.approx(_entropy_oracle(ys, w), abs=1e-12)
    hx = _entropy_oracle(xs, w)
    hxy = _entropy_oracle(list(zip(xs, ys)), w)
    assert I == pytest.approx(hx + H - hxy, abs=1e-12)
    assert -1e-12 <= I <= min(H, hx) + 1e-12
    assert entropy_x(xs) == pytest.approx(hx, abs=1e-12)


def test_nondegeneracy_audit():
    f = TargetFunction.from_table([0, 1, 1, 0])
    v = nondegeneracy_audit(f, 0.1)
    assert v.non_degenerate and v.sigma == 1.0 and v.certifies(1)
    levels = OutputSpace.real(0, 0.01, levels=(0.0, 0.01))
    h = TargetFunction.from_callable(lambda X: 0.01 * X[:, 0], InputDomain.bitvector(1), levels)
    v = nondegeneracy_audit(h, 0.1)
    assert not v.non_degenerate and not v.certifies(1)
    with pytest.raises(ArgumentError):
        nondegeneracy_audit(f, 0.0)


def test_xor_against_constant_zero():
    f = TargetFunction.from_table([0, 1, 1, 0])
    g = make_constant(0, f.outputs, 2)
    r = error(f, g)
    assert (r.expected, r.worst_case) == (0.5, 1.0)


def test_xor_entropy_and_information():
    X = bit_rows(2)
    y = TargetFunction.from_table([0, 1, 1, 0])(X)
    H, I = entropy_mi([tuple(x) for x in X], y.tolist())
    assert (H, I) == (1.0, 1.0)
