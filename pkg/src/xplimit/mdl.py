"""Prefix-free description language for explanations.

Every explanation kind has a bit-exact encoder, a decoder, and a closed-form
length formula.  Structural integers use Elias-gamma codes; real parameters go
through a uniform quantizer with ``2**p`` levels.  The formulas in
:func:`code_length` are written independently of the encoder so the two can
be cross-checked.

Context that is not carried in the code itself (input dimension ``d``, value
precision of tree and rule-list payloads, threshold precision) must be given to
both :func:`encode` and :func:`decode`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, RangeError

KINDS = (
    "constant",
    "linear",
    "tree",
    "rulelist",
    "knn",
    "grid",
    "truthtable",
    "mlp",
    "local_oracle",
    "cover",
)


# ---------------------------------------------------------------------------
# Elias-gamma
# ---------------------------------------------------------------------------

def gamma_len(n: int) -> int:
    if n < 1:
        raise RangeError(f"Elias-gamma needs n >= 1, got {n}")
    return 2 * (int(n).bit_length() - 1) + 1


def gamma_encode(n: int) -> str:
    if n < 1:
        raise RangeError(f"Elias-gamma needs n >= 1, got {n}")
    b = format(int(n), "b")
    return "0" * (len(b) - 1) + b


def gamma_decode(bits: str, pos: int = 0) -> tuple[int, int]:
    """Read one gamma code starting at ``pos``; return ``(value, new_pos)``."""
    zeros = 0
    while pos + zeros < len(bits) and bits[pos + zeros] == "0":
        zeros += 1
    end = pos + 2 * zeros + 1
    if end > len(bits):
        raise ValueError("truncated Elias-gamma code")
    return int(bits[pos + zeros:end], 2), end


def ceil_log2(n: int) -> int:
    """Bits needed to index ``n`` alternatives (0 when n == 1)."""
    if n < 1:
        raise RangeError(f"cannot index {n} alternatives")
    return (int(n) - 1).bit_length()


class BitWriter:
    def __init__(self) -> None:
        self._chunks: list[str] = []

    def bits(self, value: int, width: int) -> None:
        if width == 0:
            if value != 0:
                raise RangeError("non-zero value in a zero-width field")
            return
        if value < 0 or value >= (1 << width):
            raise RangeError(f"value {value} does not fit in {width} bits")
        self._chunks.append(format(int(value), f"0{width}b"))

    def gamma(self, n: int) -> None:
        self._chunks.append(gamma_encode(n))

    def raw(self, s: str) -> None:
        self._chunks.append(s)

    def getvalue(self) -> str:
        return "".join(self._chunks)


class BitReader:
    def __init__(self, bits: str) -> None:
        self.s = bits
        self.pos = 0

    def bits(self, width: int) -> int:
        if width == 0:
            return 0
        end = self.pos + width
        if end > len(self.s):
            raise ValueError("truncated code")
        v = int(self.s[self.pos:end], 2)
        self.pos = end
        return v

    def gamma(self) -> int:
        v, self.pos = gamma_decode(self.s, self.pos)
        return v

    def done(self) -> bool:
        return self.pos == len(self.s)


def to_bytes(bits: str) -> bytes:
    """Pack a bit string MSB-first, zero padded to a whole byte."""
    pad = (-len(bits)) % 8
    s = bits + "0" * pad
    return bytes(int(s[i:i + 8], 2) for i in range(0, len(s), 8))


def is_prefix_free(codes: Iterable[str]) -> bool:
    ordered = sorted(codes)
    return all(not b.startswith(a) for a, b in zip(ordered, ordered[1:]))


def kraft_sum(lengths: Iterable[int]) -> float:
    return math.fsum(2.0 ** -int(n) for n in lengths)


# ---------------------------------------------------------------------------
# Quantizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Quantizer:
    """Uniform quantizer on ``[lo, hi]`` with ``2**p`` levels (endpoints included)."""

    lo: float
    hi: float
    p: int

    def __post_init__(self) -> None:
        if not 1 <= self.p <= 53:
            raise RangeError(f"precision must be in [1, 53], got {self.p}")
        if not self.hi > self.lo:
            raise RangeError(f"empty quantizer range [{self.lo}, {self.hi}]")

    @classmethod
    def symmetric(cls, M: float, p: int) -> "Quantizer":
        return cls(-float(M), float(M), int(p))

    @property
    def levels(self) -> int:
        return (1 << self.p) - 1

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / self.levels

    def encode(self, v) -> np.ndarray | int:
        arr = np.asarray(v, dtype=float)
        if np.any(arr < self.lo) or np.any(arr > self.hi) or np.any(~np.isfinite(arr)):
            raise RangeError(f"value outside quantizer range [{self.lo}, {self.hi}]")
        codes = np.rint((arr - self.lo) / (self.hi - self.lo) * self.levels).astype(np.int64)
        codes = np.clip(codes, 0, self.levels)
        return int(codes) if codes.ndim == 0 else codes

    def encode_up(self, v: float) -> int:
        """Smallest level that is >= v (clamped into range)."""
        c = math.ceil((float(v) - self.lo) / (self.hi - self.lo) * self.levels - 1e-12)
        return min(max(c, 0), self.levels)

    def decode(self, code):
        arr = np.asarray(code, dtype=np.int64)
        if np.any(arr < 0) or np.any(arr > self.levels):
            raise RangeError(f"code outside [0, {self.levels}]")
        out = self.lo + (self.hi - self.lo) * arr.astype(float) / self.levels
        return float(out) if out.ndim == 0 else out


def quantize_roundtrip(v: float, M: float, p: int) -> tuple[int, float]:
    """Quantize ``v`` on ``[-M, M]`` with ``p`` bits; return ``(code, reconstruction)``."""
    if abs(v) > M:
        raise RangeError(f"|{v}| exceeds range bound {M}")
    q = Quantizer.symmetric(M, p)
    code = q.encode(v)
    return code, q.decode(code)


# ---------------------------------------------------------------------------
# Closed-form lengths
# ---------------------------------------------------------------------------

def code_length(kind: str, params: dict, *, d: int | None = None,
                value_bits: int | None = None, threshold_bits: int | None = None) -> int:
    """Length in bits of the code for ``params``, computed from the formulas.

    This deliberately does not call the encoder.
    """
    g = gamma_len
    if kind == "constant":
        return g(value_bits) + value_bits
    if kind == "linear":
        n = len(params["weights"])
        p = params["p"]
        return g(n) + g(p) + (n + 1) * p
    if kind == "tree":
        nodes = params["nodes"]
        n_int = sum(1 for nd in nodes if nd[0] == "s")
        n_leaf = len(nodes) - n_int
        return (g(len(nodes)) + 2 * len(nodes)
                + n_int * (ceil_log2(d) + threshold_bits) + n_leaf * value_bits)
    if kind == "rulelist":
        total = g(len(params["rules"]))
        for conds, _ in params["rules"]:
            total += g(len(conds) + 1) + len(conds) * (ceil_log2(d) + 1 + threshold_bits)
            total += value_bits
        return total
    if kind == "knn":
        m, dd = np.shape(params["points"])
        p = params["p"]
        return g(m) + g(dd) + g(p) + m * dd * p + m * value_bits
    if kind == "grid":
        m = params["m"]
        return g(m) + g(value_bits) + m ** d * value_bits
    if kind == "truthtable":
        n = params["n"]
        return g(n) + 2 ** n
    if kind == "mlp":
        sizes = params["sizes"]
        n_w = sum(a * b for a, b in zip(sizes, sizes[1:]))
        n_b = sum(sizes[1:])
        p = params["p"]
        return g(len(sizes)) + sum(g(s) for s in sizes) + g(p) + (n_w + n_b) * p
    if kind == "local_oracle":
        dd = len(params["center"])
        p = params["p"]
        t = len(params["levels"])
        return g(dd) + g(p) + (dd + 1) * p + g(t + 1) + t * dd
    if kind == "cover":
        dd = params["d"]
        m = params["m"]
        N = len(params["cells"])
        return g(dd) + g(m) + g(value_bits) + g(N) + N * (dd * ceil_log2(m) + value_bits)
    raise ConfigurationError(f"unknown explanation kind {kind!r}")


# ---------------------------------------------------------------------------
# Encoder / decoder
# ---------------------------------------------------------------------------

def _tree_shape(nodes: Sequence[tuple]) -> str:
    """Balanced-parenthesis string of a preorder full binary tree."""
    out: list[str] = []
    pos = 0

    def walk() -> None:
        nonlocal pos
        if pos >= len(nodes):
            raise ConfigurationError("tree preorder ended early")
        nd = nodes[pos]
        pos += 1
        out.append("1")
        if nd[0] == "s":
            walk()
            walk()
        out.append("0")

    walk()
    if pos != len(nodes):
        raise ConfigurationError("trailing nodes after tree root")
    return "".join(out)


def _shape_to_kinds(shape: str) -> list[str]:
    """Preorder node kinds ('s' or 'l') from a parenthesis string."""
    kinds: list[str] = []
    stack: list[list[int]] = []  # [index, child_count]
    for ch in shape:
        if ch == "1":
            if stack:
                stack[-1][1] += 1
            elif kinds:
                raise ValueError("more than one tree root")
            kinds.append("?")
            stack.append([len(kinds) - 1, 0])
        else:
            if not stack:
                raise ValueError("unbalanced tree structure")
            idx, nchild = stack.pop()
            if nchild not in (0, 2):
                raise ValueError("tree is not full binary")
            kinds[idx] = "s" if nchild == 2 else "l"
    if stack:
        raise ValueError("unbalanced tree structure")
    return kinds


def encode(kind: str, params: dict, *, d: int | None = None,
           value_bits: int | None = None, threshold_bits: int | None = None) -> str:
    w = BitWriter()
    if kind == "constant":
        w.gamma(value_bits)
        w.bits(params["value"], value_bits)
    elif kind == "linear":
        p = params["p"]
        w.gamma(len(params["weights"]))
        w.gamma(p)
        for c in params["weights"]:
            w.bits(int(c), p)
        w.bits(int(params["bias"]), p)
    elif kind == "tree":
        nodes = params["nodes"]
        fb = ceil_log2(d)
        w.gamma(len(nodes))
        w.raw(_tree_shape(nodes))
        for nd in nodes:
            if nd[0] == "s":
                if not 0 <= nd[1] < d:
                    raise RangeError(f"feature {nd[1]} outside [0, {d})")
                w.bits(nd[1], fb)
                w.bits(nd[2], threshold_bits)
            else:
                w.bits(nd[1], value_bits)
    elif kind == "rulelist":
        fb = ceil_log2(d)
        w.gamma(len(params["rules"]))
        for conds, value in params["rules"]:
            w.gamma(len(conds) + 1)
            for feat, direction, thr in conds:
                if not 0 <= feat < d:
                    raise RangeError(f"feature {feat} outside [0, {d})")
                w.bits(feat, fb)
                w.bits(direction, 1)
                w.bits(thr, threshold_bits)
            w.bits(value, value_bits)
    elif kind == "knn":
        pts = np.asarray(params["points"], dtype=np.int64)
        m, dd = pts.shape
        p = params["p"]
        w.gamma(m)
        w.gamma(dd)
        w.gamma(p)
        for c in pts.ravel():
            w.bits(int(c), p)
        for c in params["values"]:
            w.bits(int(c), value_bits)
    elif kind == "grid":
        m = params["m"]
        vals = np.asarray(params["values"], dtype=np.int64).ravel()
        if vals.size != m ** d:
            raise ConfigurationError(f"grid needs {m ** d} cell values, got {vals.size}")
        w.gamma(m)
        w.gamma(value_bits)
        for c in vals:
            w.bits(int(c), value_bits)
    elif kind == "truthtable":
        n = params["n"]
        table = list(params["table"])
        if len(table) != 2 ** n:
            raise ConfigurationError(f"truth table length must be {2 ** n}")
        w.gamma(n)
        for b in table:
            w.bits(int(b), 1)
    elif kind == "mlp":
        sizes = params["sizes"]
        p = params["p"]
        w.gamma(len(sizes))
        for s in sizes:
            w.gamma(s)
        w.gamma(p)
        for c in list(params["weights"]) + list(params["biases"]):
            w.bits(int(c), p)
    elif kind == "local_oracle":
        center = params["center"]
        p = params["p"]
        dd = len(center)
        w.gamma(dd)
        w.gamma(p)
        for c in center:
            w.bits(int(c), p)
        w.bits(int(params["radius"]), p)
        w.gamma(len(params["levels"]) + 1)
        for flags in params["levels"]:
            if len(flags) != dd:
                raise ConfigurationError("subdivision flags must have one bit per axis")
            for f in flags:
                w.bits(int(f), 1)
    elif kind == "cover":
        dd = params["d"]
        m = params["m"]
        cb = ceil_log2(m)
        w.gamma(dd)
        w.gamma(m)
        w.gamma(value_bits)
        w.gamma(len(params["cells"]))
        for cell, val in zip(params["cells"], params["values"]):
            for c in cell:
                if not 0 <= c < m:
                    raise RangeError(f"cell coordinate {c} outside [0, {m})")
                w.bits(int(c), cb)
            w.bits(int(val), value_bits)
    else:
        raise ConfigurationError(f"unknown explanation kind {kind!r}")
    return w.getvalue()


def decode(kind: str, bits: str, *, d: int | None = None,
           value_bits: int | None = None, threshold_bits: int | None = None) -> dict:
    """Inverse of :func:`encode`; the whole string must be consumed."""
    r = BitReader(bits)
    if kind == "constant":
        pv = r.gamma()
        out: dict = {"value": r.bits(pv)}
    elif kind == "linear":
        n = r.gamma()
        p = r.gamma()
        out = {"p": p, "weights": [r.bits(p) for _ in range(n)], "bias": r.bits(p)}
    elif kind == "tree":
        size = r.gamma()
        shape = r.s[r.pos:r.pos + 2 * size]
        if len(shape) < 2 * size:
            raise ValueError("truncated tree structure")
        r.pos += 2 * size
        kinds = _shape_to_kinds(shape)
        fb = ceil_log2(d)
        nodes = []
        for k in kinds:
            if k == "s":
                nodes.append(("s", r.bits(fb), r.bits(threshold_bits)))
            else:
                nodes.append(("l", r.bits(value_bits)))
        out = {"nodes": nodes}
    elif kind == "rulelist":
        fb = ceil_log2(d)
        rules = []
        for _ in range(r.gamma()):
            n_cond = r.gamma() - 1
            conds = tuple((r.bits(fb), r.bits(1), r.bits(threshold_bits)) for _ in range(n_cond))
            rules.append((conds, r.bits(value_bits)))
        out = {"rules": rules}
    elif kind == "knn":
        m = r.gamma()
        dd = r.gamma()
        p = r.gamma()
        pts = [[r.bits(p) for _ in range(dd)] for _ in range(m)]
        out = {"p": p, "points": pts, "values": [r.bits(value_bits) for _ in range(m)]}
    elif kind == "grid":
        m = r.gamma()
        pv = r.gamma()
        out = {"m": m, "values": [r.bits(pv) for _ in range(m ** d)]}
    elif kind == "truthtable":
        n = r.gamma()
        out = {"n": n, "table": [r.bits(1) for _ in range(2 ** n)]}
    elif kind == "mlp":
        n_layers = r.gamma()
        sizes = [r.gamma() for _ in range(n_layers)]
        p = r.gamma()
        n_w = sum(a * b for a, b in zip(sizes, sizes[1:]))
        n_b = sum(sizes[1:])
        out = {"sizes": sizes, "p": p,
               "weights": [r.bits(p) for _ in range(n_w)],
               "biases": [r.bits(p) for _ in range(n_b)]}
    elif kind == "local_oracle":
        dd = r.gamma()
        p = r.gamma()
        center = [r.bits(p) for _ in range(dd)]
        radius = r.bits(p)
        t = r.gamma() - 1
        levels = [tuple(r.bits(1) for _ in range(dd)) for _ in range(t)]
        out = {"p": p, "center": center, "radius": radius, "levels": levels}
    elif kind == "cover":
        dd = r.gamma()
        m = r.gamma()
        pv = r.gamma()
        n_cells = r.gamma()
        cb = ceil_log2(m)
        cells, values = [], []
        for _ in range(n_cells):
            cells.append(tuple(r.bits(cb) for _ in range(dd)))
            values.append(r.bits(pv))
        out = {"d": dd, "m": m, "cells": cells, "values": values}
    else:
        raise ConfigurationError(f"unknown explanation kind {kind!r}")
    if not r.done():
        raise ValueError(f"{len(bits) - r.pos} trailing bits after {kind} code")
    return out


def description_length(g) -> int:
    """Exact bit length of an explanation's code under its declared context."""
    return code_length(g.kind, g.params, **g.code_context())


def emit(g) -> str:
    """The bit string an explanation encodes to."""
    return encode(g.kind, g.params, **g.code_context())
