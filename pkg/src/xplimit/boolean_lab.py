"""Exact oracle over a fixed prefix-free language of Boolean explanations.

Language ``boollang-1`` over {0,1}^n.  A program is a gamma-coded selector
followed by a payload:

* selector 1: constant, one value bit (the mdl constant code with p = 1);
* selector n: raw truth table, 2^n bits (the mdl truth-table code; absent for n = 1);
* selector s_lit: literal, one polarity bit then ceil(log2 n) index bits;
* selector s_tree: decision tree of depth <= 2 in the mdl tree code
  (features ceil(log2 n) bits, 1-bit leaves, split point fixed at 0.5).

s_lit is the smallest integer >= 2 other than n, s_tree the next one after it.
Functions are integer bitmasks: bit i holds f at the input whose binary
expansion is i, with x1 as the most significant bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import mdl
from .errors import ArgumentError, ConfigurationError, ResourceError
from .frontier import Frontier, Point, pareto
from .io import fmt
from .mdl import BitReader, BitWriter, ceil_log2, gamma_len
from .model import (Explanation, OutputSpace, TargetFunction, bit_rows, make_constant,
                    make_truthtable)

LANGUAGE_VERSION = "boollang-1"
CODE_CAP = 1 << 20
MAX_DEPTH = 2


@dataclass(frozen=True)
class Program:
    code: str
    table: int
    kind: str

    @property
    def bits(self) -> int:
        return len(self.code)


def selectors(n: int) -> dict[str, int]:
    if n < 1:
        raise ArgumentError("n must be >= 1")
    free = [s for s in range(2, n + 4) if s != n]
    out = {"constant": 1, "literal": free[0], "tree": free[1]}
    if n > 1:
        out["truthtable"] = n
    return out


# ---------------------------------------------------------------------------
# Semantics
# ---------------------------------------------------------------------------

def full_mask(n: int) -> int:
    return (1 << (1 << n)) - 1


@lru_cache(maxsize=None)
def var_mask(n: int, i: int) -> int:
    """Bitmask of inputs where x_{i+1} = 1."""
    rows = bit_rows(n)
    return table_to_mask(rows[:, i].astype(int))


def table_to_mask(table) -> int:
    m = 0
    for i, v in enumerate(table):
        if int(v):
            m |= 1 << i
    return m


def mask_to_table(mask: int, n: int) -> list[int]:
    return [(mask >> i) & 1 for i in range(1 << n)]


def tree_mask(nodes, n: int) -> int:
    """Function of a preorder tree of ('s', feature, 0) / ('l', value) nodes."""
    pos = 0

    def walk() -> int:
        nonlocal pos
        nd = nodes[pos]
        pos += 1
        if nd[0] == "l":
            return full_mask(n) if nd[1] else 0
        v = var_mask(n, nd[1])
        left = walk()   # x_f <= 0.5, i.e. x_f = 0
        right = walk()
        return (left & ~v & full_mask(n)) | (right & v)

    return walk()


def tree_depth(nodes) -> int:
    pos = 0

    def walk() -> int:
        nonlocal pos
        nd = nodes[pos]
        pos += 1
        if nd[0] == "l":
            return 0
        return 1 + max(walk(), walk())

    return walk()


def decode_program(n: int, code: str) -> int:
    """Function table (bitmask) of a complete program; ValueError if not a program."""
    r = BitReader(code)
    sel = r.gamma()
    s = selectors(n)
    if sel == s["constant"]:
        out = full_mask(n) if r.bits(1) else 0
    elif sel == s.get("truthtable"):
        out = table_to_mask([r.bits(1) for _ in range(1 << n)])
    elif sel == s["literal"]:
        neg = r.bits(1)
        idx = r.bits(ceil_log2(n))
        if idx >= n:
            raise ValueError("literal index out of range")
        out = var_mask(n, idx) ^ (full_mask(n) if neg else 0)
    elif sel == s["tree"]:
        params = mdl.decode("tree", code[r.pos:], d=n, value_bits=1, threshold_bits=0)
        if tree_depth(params["nodes"]) > MAX_DEPTH:
            raise ValueError("tree deeper than the language allows")
        return tree_mask(params["nodes"], n)
    else:
        raise ValueError(f"unknown selector {sel}")
    if not r.done():
        raise ValueError("trailing bits")
    return out


# ---------------------------------------------------------------------------
# Enumeration
# ---------------------------------------------------------------------------

def _tree_shapes(depth: int):
    """Preorder kind strings of full binary trees up to the given depth."""
    if depth == 0:
        return ["l"]
    out = ["l"]
    for a in _tree_shapes(depth - 1):
        for b in _tree_shapes(depth - 1):
            out.append("s" + a + b)
    return out


def tree_code_bits(size: int, n_internal: int, n: int) -> int:
    return (gamma_len(selectors(n)["tree"])
            + mdl.code_length("tree", {"nodes": [("s",)] * n_internal + [("l",)] * (size - n_internal)},
                              d=n, value_bits=1, threshold_bits=0))


def enumerate_explanations(n: int, k_max: int, cap: int = CODE_CAP) -> list[Program]:
    """Every program of at most k_max bits, sorted by (bits, code)."""
    if n < 1:
        raise ArgumentError("n must be >= 1")
    if k_max > 64:
        raise ArgumentError("k_max must be <= 64")
    sel = selectors(n)
    out: list[Program] = []

    def add(code: str, mask: int, kind: str):
        out.append(Program(code, mask, kind))
        if len(out) > cap:
            raise ResourceError(f"more than {cap} programs at k_max={k_max}")

    # constants
    head = mdl.gamma_encode(sel["constant"])
    if len(head) + 1 <= k_max:
        for v in (0, 1):
            add(head + str(v), full_mask(n) if v else 0, "constant")
    # literals
    head = mdl.gamma_encode(sel["literal"])
    ib = ceil_log2(n)
    if len(head) + 1 + ib <= k_max:
        for neg in (0, 1):
            for i in range(n):
                w = BitWriter()
                w.raw(head)
                w.bits(neg, 1)
                w.bits(i, ib)
                add(w.getvalue(), var_mask(n, i) ^ (full_mask(n) if neg else 0), "literal")
    # trees
    head = mdl.gamma_encode(sel["tree"])
    for shape in _tree_shapes(MAX_DEPTH):
        n_int = shape.count("s")
        cost = tree_code_bits(len(shape), n_int, n)
        if cost > k_max:
            continue
        n_leaf = len(shape) - n_int
        count = (n ** n_int) * (2 ** n_leaf)
        if len(out) + count > cap:
            raise ResourceError(f"more than {cap} programs at k_max={k_max}")
        for feats in np.ndindex(*([n] * n_int)) if n_int else [()]:
            for leaves in np.ndindex(*([2] * n_leaf)):
                fi = iter(feats)
                li = iter(leaves)
                nodes = [("s", int(next(fi)), 0) if c == "s" else ("l", int(next(li)))
                         for c in shape]
                code = head + mdl.encode("tree", {"nodes": nodes}, d=n, value_bits=1,
                                         threshold_bits=0)
                add(code, tree_mask(nodes, n), "tree")
    # raw truth tables
    if "truthtable" in sel:
        head = mdl.gamma_encode(sel["truthtable"])
        size = 1 << n
        if len(head) + size <= k_max:
            if len(out) + (1 << size) > cap:
                raise ResourceError(f"more than {cap} programs at k_max={k_max}")
            for mask in range(1 << size):
                table = mask_to_table(mask, n)
                add(head + "".join(str(b) for b in table), mask, "truthtable")
    out.sort(key=lambda p: (p.bits, p.code))
    return out


@lru_cache(maxsize=32)
def _language_arrays(n: int, k_max: int):
    progs = enumerate_explanations(n, k_max)
    bits = np.array([p.bits for p in progs], dtype=np.int64)
    tables = np.array([p.table for p in progs], dtype=np.uint64)
    return progs, bits, tables


def language_arrays(n: int, k_max: int):
    return _language_arrays(int(n), int(k_max))


def truth_table_cost(n: int) -> int:
    return gamma_len(n) + (1 << n) if n > 1 else 4


# ---------------------------------------------------------------------------
# Exact frontiers
# ---------------------------------------------------------------------------

def _as_mask(f_table) -> tuple[int, int]:
    if isinstance(f_table, TargetFunction):
        if f_table.kind != "truthtable" or f_table.outputs.kind != "binary":
            raise ConfigurationError("the Boolean language needs a binary truth table")
        t = f_table.table
    else:
        t = np.asarray(f_table, dtype=np.int64)
    n = int(round(math.log2(len(t))))
    if 1 << n != len(t) or n < 1 or np.any((t != 0) & (t != 1)):
        raise ConfigurationError("truth table must hold 2^n zero/one entries with n >= 1")
    return table_to_mask(t), n


def _errors(tables: np.ndarray, mask: int, n: int, weights=None) -> np.ndarray:
    diff = np.bitwise_xor(tables, np.uint64(mask))
    if weights is None:
        return np.bitwise_count(diff).astype(np.float64) / (1 << n)
    w = np.asarray(weights, dtype=float)
    bits = ((diff[:, None] >> np.arange(1 << n, dtype=np.uint64)[None, :]) & np.uint64(1))
    return bits.astype(float) @ w


@dataclass
class ExactFrontier:
    n: int
    k_grid: list[int]
    epsilon: list[float]
    delta_grid: list[float]
    kappa: list[int | None]
    min_mdl: int
    version: str = LANGUAGE_VERSION

    def golden(self) -> list:
        return [[k, None if math.isinf(e) else e] for k, e in zip(self.k_grid, self.epsilon)]


def exact_frontier(f_table, k_grid=None, dist=None, delta_grid=None) -> ExactFrontier:
    """Minimum error per budget by brute force over every program."""
    mask, n = _as_mask(f_table)
    if n > 4:
        raise ArgumentError("exact frontiers are limited to n <= 4")
    k_grid = list(range(0, 25)) if k_grid is None else [int(k) for k in k_grid]
    k_enum = max(max(k_grid, default=0), truth_table_cost(n))
    progs, bits, tables = language_arrays(n, k_enum)
    w = None
    if dist is not None and dist.kind == "empirical":
        w = dist.weights_on(bit_rows(n))
    err = _errors(tables, mask, n, w)
    eps = []
    for k in k_grid:
        sel = err[bits <= k]
        eps.append(float(sel.min()) if sel.size else math.inf)
    exact = bits[err == 0]
    min_mdl = int(exact.min())
    if delta_grid is None:
        delta_grid = sorted({float(e) for e in err}, reverse=True)
    kappa = []
    for dl in delta_grid:
        ok = bits[err <= dl]
        kappa.append(int(ok.min()) if ok.size else None)
    return ExactFrontier(n, k_grid, eps, list(delta_grid), kappa, min_mdl)


def language_frontier(f, k_cap: int = 24, dist=None) -> Frontier:
    """Pareto staircase of the whole language up to k_cap (generic frontier machinery)."""
    mask, n = _as_mask(f)
    progs, bits, tables = language_arrays(n, max(k_cap, 2))
    w = None
    if dist is not None and dist.kind == "empirical":
        w = dist.weights_on(bit_rows(n))
    err = _errors(tables, mask, n, w)
    pts = [Point(int(b), float(e), p.kind, p.code)
           for p, b, e in zip(progs, bits, err) if b <= k_cap]
    name = f.name if isinstance(f, TargetFunction) else "table"
    return Frontier(pareto(pts), target=name, family="boolean", metric="expected",
                    eval_spec=f"all {1 << n} inputs, {LANGUAGE_VERSION}", exact=True)


def min_mdl(f_table) -> int:
    return exact_frontier(f_table, [0]).min_mdl


def program_explanation(n: int, prog: Program) -> Explanation:
    """The mdl Explanation matching a program (used for witnesses)."""
    if prog.kind == "constant":
        return make_constant(prog.table & 1, OutputSpace.binary(), n, provenance=LANGUAGE_VERSION)
    return make_truthtable(mask_to_table(prog.table, n), provenance=LANGUAGE_VERSION)


# ---------------------------------------------------------------------------
# Random functions
# ---------------------------------------------------------------------------

@dataclass
class RandomFunctionReport:
    n: int
    k: int
    trials: int
    seed: int
    mode: str
    margin: float
    agreements: list[float]
    mean: float
    max: float
    tail_count: int
    tail_fraction: float
    union_bound: float
    language_size: int
    language_bound: float

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.pop("agreements")
        return d


def _mc_champion(table: np.ndarray, n: int, k: int) -> float:
    """Best agreement among constants, literals and greedy trees of language cost <= k."""
    from .approximators import fit_tree_greedy
    from .metrics import pointwise_error

    size = 1 << n
    sel = selectors(n)
    best = 0.0
    if gamma_len(sel["constant"]) + 1 <= k:
        ones = int(table.sum())
        best = max(ones, size - ones) / size
    rows = bit_rows(n)
    if gamma_len(sel["literal"]) + 1 + ceil_log2(n) <= k:
        for i in range(n):
            a = float(np.mean(rows[:, i] == table))
            best = max(best, a, 1 - a)
    sel_bits = gamma_len(sel["tree"])
    budget = 1
    while True:
        nxt = budget + 2
        cost = sel_bits + tree_code_bits(nxt, (nxt - 1) // 2, n)
        if cost > k:
            break
        budget = nxt
    if budget >= 3:
        f = TargetFunction.from_table(table)
        g = fit_tree_greedy(f, rows, budget)
        best = max(best, 1.0 - float(np.mean(pointwise_error(f, g, rows))))
    return best


def random_function_experiment(n: int, k: int, trials: int, seed: int, margin: float = 0.25,
                               mode: str | None = None, workers: int = 1) -> RandomFunctionReport:
    if mode is None:
        mode = "exhaustive" if n <= 4 else "montecarlo"
    if mode == "exhaustive" and n > 4:
        raise ArgumentError("exhaustive mode needs n <= 4")
    if n > 12:
        raise ArgumentError("n must be <= 12")
    rng = np.random.default_rng(seed)
    tables = [rng.integers(0, 2, 1 << n) for _ in range(trials)]
    size = 1 << n
    if mode == "exhaustive":
        progs, bits, lang = language_arrays(n, k)
        n_codes = len(progs)

        def one(t):
            if n_codes == 0:
                return 0.0
            return 1.0 - float(_errors(lang, table_to_mask(t), n).min())
    else:
        n_codes = -1

        def one(t):
            return _mc_champion(t, n, k)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as ex:
            agree = list(ex.map(one, tables))
    else:
        agree = [one(t) for t in tables]
    tail = sum(1 for a in agree if a >= 0.5 + margin)
    union = 2.0 ** (k + 1) * math.exp(-2 * margin ** 2 * size)
    lang_bound = (n_codes * math.exp(-2 * margin ** 2 * size)) if n_codes >= 0 else math.nan
    return RandomFunctionReport(n, k, trials, seed, mode, margin, agree,
                                float(np.mean(agree)), float(np.max(agree)), tail,
                                tail / trials, union, n_codes, lang_bound)


# ---------------------------------------------------------------------------
# Trilemma audit
# ---------------------------------------------------------------------------

@dataclass
class AuditReport:
    n: int
    k_human: int
    delta_neg: float
    metric: str
    non_degenerate: bool
    sigma: float
    witnesses: dict = field(default_factory=dict)
    triple: dict = field(default_factory=dict)
    version: str = LANGUAGE_VERSION
    note: str = ("expected error under the uniform distribution is used because worst-case "
                 "0-1 error only takes the values 0 and 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def trilemma_audit(f, k_human: int, delta_neg: float) -> AuditReport:
    """Pairwise witnesses and an exhaustive verdict on the triple."""
    from .metrics import error as error_report
    from .model import output_separation

    if not 0 < delta_neg < 1:
        raise ArgumentError("delta_neg must lie in (0, 1)")
    if not isinstance(f, TargetFunction):
        f = TargetFunction.from_table(f)
    n = f.domain.dim
    if n > 4:
        raise ArgumentError("the audit enumerates programs and needs n <= 4")
    rows = bit_rows(n)
    sigma, nondeg = output_separation(f, rows, delta_neg)
    rep = AuditReport(n, int(k_human), float(delta_neg), "expected_uniform", nondeg, sigma)
    if not nondeg:
        rep.triple = {"verdict": "refused",
                      "reason": f"f is degenerate at delta_neg (sigma={fmt(sigma)} <= "
                                f"{fmt(delta_neg)}); impossibility needs non-degeneracy"}
        return rep

    mask, _ = _as_mask(f)
    fe = exact_frontier(f, [0])
    k_enum = max(int(k_human), truth_table_cost(n))
    progs, bits, tables = language_arrays(n, k_enum)
    err = _errors(tables, mask, n)

    # R1 and R2: the best constant
    const_idx = [i for i, p in enumerate(progs) if p.kind == "constant"]
    ci = min(const_idx, key=lambda i: (err[i], bits[i]))
    gc = program_explanation(n, progs[ci])
    rc = error_report(f, gc, eval_points=rows)
    rep.witnesses["R1_R2"] = {"explanation": "constant", "code": progs[ci].code,
                              "bits": int(bits[ci]), "expected_error": rc.expected,
                              "within_k_human": bool(bits[ci] <= k_human)}
    # R1 and R3: the function itself as a raw table
    gt = make_truthtable(f.table.tolist(), provenance=LANGUAGE_VERSION)
    rt = error_report(f, gt, eval_points=rows)
    rep.witnesses["R1_R3"] = {"explanation": "truth table of f", "bits": gt.bits,
                              "expected_error": rt.expected}
    # R2 and R3: restrict the system class to functions simple enough for k_human
    simple = np.unique(tables[bits <= k_human])
    example = None
    if simple.size:
        j = int(np.nonzero(bits <= k_human)[0][0])
        example = {"code": progs[j].code, "table": mask_to_table(progs[j].table, n),
                   "bits": int(bits[j])}
    rep.witnesses["R2_R3"] = {"restricted_class_size": int(simple.size),
                              "total_functions": 2 ** (1 << n),
                              "rule": f"systems with min_mdl <= {k_human} are explained exactly",
                              "example": example, "f_min_mdl": fe.min_mdl,
                              "f_in_class": fe.min_mdl <= k_human}
    # triple: everything at once, by exhaustion
    within = bits <= k_human
    checked = int(within.sum())
    if checked:
        i = int(np.argmin(np.where(within, err, np.inf)))
        best = float(err[i])
        arg = progs[i].code
    else:
        best, arg = math.inf, None
    feasible = best <= delta_neg
    rep.triple = {"verdict": "feasible" if feasible else "infeasible",
                  "programs_checked": checked, "min_error_within_k_human": best,
                  "argmin_code": arg, "f_min_mdl": fe.min_mdl,
                  "proof": "exhaustive enumeration of every program with bits <= k_human"}
    return rep


def degenerate_counterexample(n: int, delta_neg: float, seed: int = 0, h=None):
    """f = (delta/4) h with g the constant delta/8: all three demands met at once."""
    from .mdl import Quantizer
    from .metrics import error as error_report

    if delta_neg <= 0:
        raise ArgumentError("delta_neg must be > 0")
    if h is None:
        h = np.random.default_rng(seed).integers(0, 2, 1 << n)
    h = np.asarray(h, dtype=np.int64)
    scale = delta_neg / 4
    out = OutputSpace.real(0.0, scale, levels=(0.0, scale))
    from .model import InputDomain
    f = TargetFunction.from_callable(
        lambda X, h=h: scale * h[np.asarray(X, dtype=np.int64) @ (1 << np.arange(n - 1, -1, -1))],
        InputDomain.bitvector(n), out, name="degenerate")
    g = make_constant(delta_neg / 8, out, n, Quantizer.symmetric(delta_neg / 8, 1),
                      provenance="degenerate_counterexample")
    return f, g, error_report(f, g, eval_points=bit_rows(n))


# ---------------------------------------------------------------------------
# Named fixtures
# ---------------------------------------------------------------------------

def named_tables() -> dict[str, list[int]]:
    out = {
        "const0": [0, 0, 0, 0],
        "dictator": [0, 0, 1, 1],
        "and": [0, 0, 0, 1],
        "xor": [0, 1, 1, 0],
        "majority3": [0, 0, 0, 1, 0, 1, 1, 1],
    }
    for s in range(1, 6):
        out[f"random4_seed{s}"] = np.random.default_rng(s).integers(0, 2, 16).tolist()
    return out
