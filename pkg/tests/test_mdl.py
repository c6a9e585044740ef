import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xplimit import mdl
from xplimit.errors import RangeError
from xplimit.mdl import (BitReader, BitWriter, Quantizer, ceil_log2, gamma_decode, gamma_encode,
                         gamma_len, is_prefix_free, kraft_sum, quantize_roundtrip, to_bytes)

from refs import reference_explanations

GOLDEN = Path(__file__).parent / "golden" / "mdl_reference.json"


def test_gamma_known_codes():
    assert gamma_encode(1) == "1"
    assert gamma_encode(2) == "010"
    assert gamma_encode(5) == "00101"
    assert gamma_encode(17) == "000010001"


@given(st.integers(1, 10 ** 12))
def test_gamma_length_and_roundtrip(n):
    code = gamma_encode(n)
    assert len(code) == gamma_len(n) == 2 * math.floor(math.log2(n)) + 1
    assert gamma_decode(code + "1101") == (n, len(code))


def test_gamma_rejects_zero():
    with pytest.raises(RangeError):
        gamma_encode(0)
    with pytest.raises(ValueError):
        gamma_decode("0001")


def test_gamma_codes_prefix_free_and_kraft():
    codes = [gamma_encode(n) for n in range(1, 2000)]
    assert is_prefix_free(codes)
    assert kraft_sum(len(c) for c in codes) <= 1.0


def test_ceil_log2():
    assert [ceil_log2(n) for n in (1, 2, 3, 4, 5, 8, 9)] == [0, 1, 2, 2, 3, 3, 4]


def test_prefix_check_detects_prefix():
    assert not is_prefix_free(["01", "010", "11"])
    assert is_prefix_free(["00", "01", "1"])


def test_bit_writer_reader():
    w = BitWriter()
    w.gamma(9)
    w.bits(5, 3)
    w.bits(0, 0)
    s = w.getvalue()
    r = BitReader(s)
    assert r.gamma() == 9 and r.bits(3) == 5 and r.done()
    with pytest.raises(RangeError):
        BitWriter().bits(8, 3)


def test_to_bytes_pads_msb_first():
    assert to_bytes("1") == b"\x80"
    assert to_bytes("000000001") == b"\x00\x80"


# -- quantizer ---------------------------------------------------------------

def test_quantizer_endpoints_exact():
    q = Quantizer.symmetric(2.0, 3)
    assert q.decode(0) == -2.0 and q.decode(7) == 2.0
    assert q.encode(-2.0) == 0 and q.encode(2.0) == 7


def test_quantize_example_rounds_to_nearest():
    code, rec = quantize_roundtrip(0.3, 1.0, 4)
    # levels are -1 + 2k/15; 0.3 sits nearest k = 10 (0.3333)
    assert code == 10
    assert rec == pytest.approx(1 / 3)


def test_quantizer_out_of_range():
    with pytest.raises(RangeError):
        Quantizer.symmetric(1.0, 4).encode(1.5)
    with pytest.raises(RangeError):
        quantize_roundtrip(-3, 2, 4)
    with pytest.raises(RangeError):
        Quantizer(0, 1, 0)


@given(st.floats(-5, 5), st.floats(0.1, 10), st.integers(1, 30))
def test_quantizer_error_half_step(v, M, p):
    if abs(v) > M:
        return
    q = Quantizer.symmetric(M, p)
    rec = q.decode(q.encode(v))
    # decode rounds on the scale of M, not of the step
    assert abs(rec - v) <= q.step / 2 + 8 * M * np.finfo(float).eps


@given(st.floats(0, 1), st.integers(1, 20))
def test_encode_up_never_below(v, p):
    q = Quantizer(0.0, 1.0, p)
    assert q.decode(q.encode_up(v)) >= v - 1e-12


# -- codes -------------------------------------------------------------------

def test_reference_lengths_hand_counted():
    # header gammas + payload, counted by hand
    hand = {
        "constant": 5 + 4,
        "linear": 3 + 7 + 3 * 8,
        "tree": 5 + 10 + 2 * (1 + 3) + 3 * 4,
        "rulelist": 3 + (3 + 2 * (1 + 1 + 3) + 4) + (1 + 4),
        "knn": 3 + 3 + 5 + 3 * 2 * 4 + 3 * 4,
        "grid": 3 + 5 + 4 * 4,
        "truthtable": 3 + 8,
        "mlp": 3 + (3 + 3 + 1) + 5 + 9 * 6,
        "local_oracle": 3 + 7 + 3 * 8 + 5 + 3 * 2,
        "cover": 3 + 5 + 5 + 3 + 3 * (2 * 2 + 4),
    }
    refs = reference_explanations()
    assert set(refs) == set(mdl.KINDS)
    for name, g in refs.items():
        assert g.bits == hand[name], name
        assert len(g.encode()) == g.bits


def test_reference_golden_bytes():
    golden = json.loads(GOLDEN.read_text())
    for name, g in reference_explanations().items():
        bits = g.encode()
        assert len(bits) == golden[name]["bits"], name
        assert to_bytes(bits).hex() == golden[name]["hex"], name


def test_reference_roundtrip_and_prefix_free():
    for name, g in reference_explanations().items():
        bits = g.encode()
        back = mdl.decode(g.kind, bits, **g.code_context())
        assert mdl.encode(g.kind, back, **g.code_context()) == bits, name
        # no proper prefix of a code decodes
        for cut in range(len(bits)):
            try:
                mdl.decode(g.kind, bits[:cut], **g.code_context())
            except (ValueError, RangeError):
                continue
            pytest.fail(f"{name}: prefix of length {cut} decodes")


def test_decode_rejects_trailing_bits():
    g = reference_explanations()["grid"]
    with pytest.raises(ValueError):
        mdl.decode("grid", g.encode() + "0", **g.code_context())


@pytest.mark.parametrize("shape", ["1010", "0", "1100", "111000"])
def test_bad_tree_shapes_rejected(shape):
    size = len(shape) // 2 or 1
    with pytest.raises(ValueError):
        mdl.decode("tree", gamma_encode(size) + shape + "0" * 16, d=2, value_bits=1,
                   threshold_bits=0)


@st.composite
def trees(draw, d=3, vb=4, tb=3, depth=4):
    def build(level):
        if level == 0 or draw(st.booleans()):
            return [("l", draw(st.integers(0, (1 << vb) - 1)))]
        return ([("s", draw(st.integers(0, d - 1)), draw(st.integers(0, (1 << tb) - 1)))]
                + build(level - 1) + build(level - 1))
    return {"nodes": build(depth)}


@settings(max_examples=200)
@given(trees())
def test_tree_length_formula_matches_encoder(params):
    ctx = dict(d=3, value_bits=4, threshold_bits=3)
    bits = mdl.encode("tree", params, **ctx)
    assert len(bits) == mdl.code_length("tree", params, **ctx)
    assert mdl.decode("tree", bits, **ctx) == params


@settings(max_examples=200)
@given(st.lists(st.tuples(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 1),
                                             st.integers(0, 7)), max_size=4),
                          st.integers(0, 15)), min_size=1, max_size=6))
def test_rulelist_length_formula_matches_encoder(raw):
    rules = [(tuple(c), v) for c, v in raw]
    rules[-1] = ((), rules[-1][1])
    ctx = dict(d=5, value_bits=4, threshold_bits=3)
    bits = mdl.encode("rulelist", {"rules": rules}, **ctx)
    assert len(bits) == mdl.code_length("rulelist", {"rules": rules}, **ctx)
    assert mdl.decode("rulelist", bits, **ctx)["rules"] == rules


@settings(max_examples=100)
@given(st.integers(1, 5), st.integers(1, 3), st.integers(1, 12), st.data())
def test_grid_and_knn_formula(m, d, p, data):
    vals = data.draw(st.lists(st.integers(0, (1 << p) - 1), min_size=m ** d, max_size=m ** d))
    ctx = dict(d=d, value_bits=p, threshold_bits=0)
    bits = mdl.encode("grid", {"m": m, "values": vals}, **ctx)
    assert len(bits) == mdl.code_length("grid", {"m": m, "values": vals}, **ctx)
    pts = data.draw(st.lists(st.lists(st.integers(0, (1 << p) - 1), min_size=d, max_size=d),
                             min_size=1, max_size=5))
    kv = [0] * len(pts)
    knn = {"p": p, "points": pts, "values": kv}
    bits = mdl.encode("knn", knn, **ctx)
    assert len(bits) == mdl.code_length("knn", knn, **ctx)
    assert mdl.decode("knn", bits, **ctx) == knn


def test_linear_and_truthtable_formulas():
    assert mdl.code_length("linear", {"p": 16, "weights": [0, 0, 0], "bias": 0}) == \
        gamma_len(3) + gamma_len(16) + 4 * 16
    assert mdl.code_length("truthtable", {"n": 4, "table": [0] * 16}) == 5 + 16


def test_distinct_explanations_distinct_codes():
    rng = np.random.default_rng(0)
    codes = set()
    for _ in range(300):
        m = int(rng.integers(1, 4))
        vals = rng.integers(0, 8, m * m).tolist()
        codes.add((m, tuple(vals), mdl.encode("grid", {"m": m, "values": vals}, d=2,
                                              value_bits=3, threshold_bits=0)))
    assert len({c[2] for c in codes}) == len({c[:2] for c in codes})
    assert is_prefix_free({c[2] for c in codes})


def test_worked_lengths():
    assert mdl.code_length("linear", {"p": 8, "weights": [0, 0, 0], "bias": 0}) == 42
    assert mdl.code_length("truthtable", {"n": 2, "table": [0, 1, 1, 0]}) == 7
    assert mdl.code_length("constant", {"value": 1}, value_bits=1) == 2
    assert mdl.code_length("grid", {"m": 2, "values": [0, 0]}, d=1, value_bits=4) == 16


@given(st.integers(1, 40), st.integers(1, 6), st.integers(1, 3), st.integers(1, 20))
def test_lengths_monotone_in_size_and_precision(n, m, d, p):
    lin = lambda n, p: mdl.code_length("linear", {"p": p, "weights": [0] * n, "bias": 0})
    grid = lambda m, p: mdl.code_length("grid", {"m": m, "values": []}, d=d, value_bits=p)
    tree = lambda size, p: mdl.code_length("tree", {"nodes": [("s",)] * (size // 2)
                                                     + [("l",)] * (size // 2 + 1)},
                                            d=d, value_bits=p, threshold_bits=p)
    assert lin(n + 1, p) >= lin(n, p) and lin(n, p + 1) >= lin(n, p)
    assert grid(m + 1, p) >= grid(m, p) and grid(m, p + 1) >= grid(m, p)
    size = 2 * m - 1
    assert tree(size + 2, p) >= tree(size, p) and tree(size, p + 1) >= tree(size, p)


def test_asymptotic_shares():
    p = 16
    ratios = [mdl.code_length("linear", {"p": p, "weights": [0] * n, "bias": 0}) / (n * math.log2(n))
              for n in (2 ** j for j in range(2, 12))]
    assert max(ratios) <= p and all(a >= b for a, b in zip(ratios, ratios[1:]))
    shares = [mdl.code_length("grid", {"m": m, "values": []}, d=2, value_bits=8) / (m * m * 8)
              for m in (2, 8, 32, 128, 512)]
    assert all(a >= b for a, b in zip(shares, shares[1:])) and shares[-1] < 1.0001
