"""Domains, output spaces, target functions, distributions and explanations."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.spatial import cKDTree

from . import mdl
from .errors import ConfigurationError, DistributionError, DomainError, RangeError
from .mdl import Quantizer, ceil_log2


# ---------------------------------------------------------------------------
# Input domains
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InputDomain:
    kind: str
    dim: int
    points: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("hypercube", "bitvector", "finite"):
            raise ConfigurationError(f"unknown domain kind {self.kind!r}")
        if self.dim < 1:
            raise ConfigurationError("domain dimension must be >= 1")
        if self.kind == "finite":
            pts = np.atleast_2d(np.asarray(self.points, dtype=float))
            if len(pts) == 0:
                raise ConfigurationError("finite domain needs at least one point")
            if len(np.unique(pts, axis=0)) != len(pts):
                raise ConfigurationError("finite domain points must be distinct")
            object.__setattr__(self, "points", pts)
            object.__setattr__(self, "_index", {tuple(p): i for i, p in enumerate(pts)})

    @classmethod
    def hypercube(cls, d: int) -> "InputDomain":
        return cls("hypercube", int(d))

    @classmethod
    def bitvector(cls, n: int) -> "InputDomain":
        return cls("bitvector", int(n))

    @classmethod
    def finite(cls, points) -> "InputDomain":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls("finite", pts.shape[1], pts)

    def check(self, X) -> np.ndarray:
        """Return ``X`` as an (N, dim) array, raising DomainError if any row is outside."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1) if X.size == self.dim else X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DomainError(f"expected points of dimension {self.dim}, got shape {X.shape}")
        if self.kind == "hypercube":
            if not np.all((X >= 0.0) & (X <= 1.0)):
                raise DomainError("point outside the unit hypercube")
        elif self.kind == "bitvector":
            if not np.all((X == 0.0) | (X == 1.0)):
                raise DomainError("bitvector inputs must be 0/1")
        else:
            for row in X:
                if tuple(row) not in self._index:
                    raise DomainError(f"point {row.tolist()} not in finite domain")
        return X

    def contains(self, x) -> bool:
        try:
            self.check(x)
        except DomainError:
            return False
        return True

    def all_points(self) -> np.ndarray:
        if self.kind == "bitvector":
            return bit_rows(self.dim)
        if self.kind == "finite":
            return self.points.copy()
        raise DomainError("hypercube has no finite enumeration; use grid()")

    def grid(self, density: int | None = None) -> np.ndarray:
        """Dense evaluation set: endpoint-inclusive lattice for cubes, everything otherwise."""
        if self.kind != "hypercube":
            return self.all_points()
        if density is None:
            density = default_density(self.dim)
        axis = np.linspace(0.0, 1.0, int(density))
        mesh = np.meshgrid(*([axis] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def spec(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim}
        if self.kind == "finite":
            out["points"] = self.points.tolist()
        return out


def default_density(d: int) -> int:
    return {1: 256, 2: 128}.get(d, 64)


def bit_rows(n: int) -> np.ndarray:
    """All 2**n bit vectors in truth-table order (x1 is the most significant bit)."""
    idx = np.arange(2 ** n)
    shifts = np.arange(n - 1, -1, -1)
    return ((idx[:, None] >> shifts) & 1).astype(float)


def bits_to_index(X) -> np.ndarray:
    X = np.asarray(X)
    n = X.shape[1]
    weights = 1 << np.arange(n - 1, -1, -1)
    return (X.astype(np.int64) * weights).sum(axis=1)


# ---------------------------------------------------------------------------
# Output spaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OutputSpace:
    kind: str
    labels: tuple = ()
    lo: float = -math.inf
    hi: float = math.inf
    levels: tuple | None = None
    step: float | None = None

    def __post_init__(self):
        if self.kind not in ("binary", "categorical", "real"):
            raise ConfigurationError(f"unknown output kind {self.kind!r}")
        if self.kind == "binary":
            object.__setattr__(self, "labels", (0, 1))
        if self.kind == "categorical" and len(self.labels) < 1:
            raise ConfigurationError("categorical outputs need labels")
        if self.kind == "real" and not self.lo < self.hi:
            raise ConfigurationError(f"real interval needs lo < hi, got [{self.lo}, {self.hi}]")
        if self.levels is not None:
            object.__setattr__(self, "levels", tuple(sorted(set(float(v) for v in self.levels))))

    @classmethod
    def binary(cls) -> "OutputSpace":
        return cls("binary")

    @classmethod
    def categorical(cls, labels: Sequence) -> "OutputSpace":
        return cls("categorical", labels=tuple(labels))

    @classmethod
    def real(cls, lo=-math.inf, hi=math.inf, levels=None, step=None) -> "OutputSpace":
        return cls("real", lo=float(lo), hi=float(hi), levels=levels, step=step)

    @property
    def discrete(self) -> bool:
        return self.kind != "real"

    @property
    def metric(self) -> str:
        return "zero_one" if self.discrete else "absolute"

    @property
    def label_bits(self) -> int:
        return max(1, ceil_log2(len(self.labels)))

    def distance(self, a, b) -> np.ndarray:
        a = np.asarray(a)
        b = np.asarray(b)
        if self.discrete:
            return (a != b).astype(float)
        return np.abs(a.astype(float) - b.astype(float))

    def separation(self, y) -> np.ndarray:
        """Distance from each output to the nearest other representable value."""
        y = np.asarray(y, dtype=float)
        if self.discrete:
            return np.full(y.shape, 1.0 if len(self.labels) > 1 else math.inf)
        if self.levels is not None:
            lv = np.asarray(self.levels)
            d = np.abs(y[..., None] - lv[None, :])
            d[d == 0.0] = math.inf
            return d.min(axis=-1)
        if self.step is not None:
            return np.full(y.shape, float(self.step))
        return np.zeros(y.shape)

    def spec(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind == "categorical":
            out["labels"] = list(self.labels)
        if self.kind == "real":
            out["lo"], out["hi"] = self.lo, self.hi
            if self.levels is not None:
                out["levels"] = list(self.levels)
            if self.step is not None:
                out["step"] = self.step
        return out


# ---------------------------------------------------------------------------
# Targets
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TargetFunction:
    domain: InputDomain
    outputs: OutputSpace
    kind: str
    fn: Callable[[np.ndarray], np.ndarray] | None = None
    table: np.ndarray | None = None
    sample_x: np.ndarray | None = None
    sample_y: np.ndarray | None = None
    lipschitz: float | None = None
    name: str = "f"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lipschitz is not None and self.lipschitz < 0:
            raise ConfigurationError("Lipschitz constant must be >= 0")
        if self.kind == "truthtable":
            t = np.asarray(self.table, dtype=np.int64)
            if self.domain.kind != "bitvector" or len(t) != 2 ** self.domain.dim:
                raise ConfigurationError("truth table length must be 2**n over a bitvector domain")
            if self.outputs.discrete and np.any((t < 0) | (t >= len(self.outputs.labels))):
                raise ConfigurationError("truth table entries must be label indices")
            object.__setattr__(self, "table", t)
        elif self.kind == "samples":
            X = np.atleast_2d(np.asarray(self.sample_x, dtype=float))
            y = np.asarray(self.sample_y)
            if len(X) == 0 or len(X) != len(y):
                raise ConfigurationError("sample table needs matching non-empty X and y")
            self.domain.check(X)
            object.__setattr__(self, "sample_x", X)
            object.__setattr__(self, "sample_y", y)
            object.__setattr__(self, "_tree", cKDTree(X))
        elif self.kind in ("synthetic", "callable"):
            if self.fn is None:
                raise ConfigurationError("synthetic targets need an evaluator")
        else:
            raise ConfigurationError(f"unknown target kind {self.kind!r}")

    def __call__(self, X) -> np.ndarray:
        return self.evaluate_many(X)

    def evaluate_many(self, X) -> np.ndarray:
        X = self.domain.check(X)
        if self.kind == "truthtable":
            return self.table[bits_to_index(X)]
        if self.kind == "samples":
            _, idx = self._tree.query(X)
            return self.sample_y[idx]
        out = np.asarray(self.fn(X))
        return out.astype(np.int64) if self.outputs.discrete else out.astype(float)

    @classmethod
    def from_table(cls, table, name: str = "f") -> "TargetFunction":
        t = np.asarray(table, dtype=np.int64)
        n = int(round(math.log2(len(t)))) if len(t) else 0
        if len(t) == 0 or 2 ** n != len(t):
            raise ConfigurationError("truth table length must be a power of two")
        return cls(InputDomain.bitvector(max(n, 1)) if n else InputDomain.bitvector(1),
                   OutputSpace.binary(), "truthtable", table=t if n else np.repeat(t, 2), name=name)

    @classmethod
    def from_samples(cls, X, y, outputs: OutputSpace | None = None, lipschitz=None,
                     name: str = "samples") -> "TargetFunction":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        if outputs is None:
            lo, hi = float(y.min()), float(y.max())
            outputs = OutputSpace.real(lo, hi if hi > lo else lo + 1.0)
        return cls(InputDomain.hypercube(X.shape[1]), outputs, "samples",
                   sample_x=X, sample_y=y, lipschitz=lipschitz, name=name)

    @classmethod
    def from_callable(cls, fn, domain: InputDomain, outputs: OutputSpace, lipschitz=None,
                      name: str = "f") -> "TargetFunction":
        return cls(domain, outputs, "callable", fn=fn, lipschitz=lipschitz, name=name)

    def spec(self) -> dict:
        if self.kind == "truthtable":
            return {"kind": "truthtable", "n": self.domain.dim, "table": self.table.tolist()}
        if self.kind == "synthetic":
            return {"kind": "synthetic", **self.meta}
        if self.kind == "samples":
            h = hashlib.sha256(self.sample_x.tobytes() + np.asarray(self.sample_y, float).tobytes())
            return {"kind": "samples", "sha256": h.hexdigest(), "name": self.name}
        return {"kind": "callable", "name": self.name, **self.meta}

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.spec(), sort_keys=True).encode()).hexdigest()


def load_truth_table(path) -> TargetFunction:
    data = json.loads(Path(path).read_text())
    try:
        n, table = int(data["n"]), data["table"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"{path}: truth table JSON needs 'n' and 'table'") from exc
    if len(table) != 2 ** n:
        raise ConfigurationError(f"{path}: table length {len(table)} != 2**{n}")
    return TargetFunction(InputDomain.bitvector(n), OutputSpace.binary(), "truthtable",
                          table=np.asarray(table, dtype=np.int64), name=Path(path).stem)


def load_sample_csv(path, lipschitz=None) -> TargetFunction:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ConfigurationError(f"{path}: need a header row and at least one sample")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigurationError(f"{path}: non-numeric sample value") from exc
    if data.shape[1] < 2:
        raise ConfigurationError(f"{path}: need feature columns plus one target column")
    try:
        return TargetFunction.from_samples(data[:, :-1], data[:, -1], lipschitz=lipschitz,
                                           name=Path(path).stem)
    except DomainError as exc:
        raise ConfigurationError(f"{path}: features must lie in [0, 1]") from exc


# ---------------------------------------------------------------------------
# Synthetic families
# ---------------------------------------------------------------------------

def _poly_sup_abs(coef, lo=0.0, hi=1.0) -> float:
    """sup |p(x)| on [lo, hi] for a polynomial with ascending coefficients."""
    coef = np.trim_zeros(np.asarray(coef, dtype=float), "b")
    if coef.size == 0:
        return 0.0
    cand = [lo, hi]
    if coef.size > 2:
        for r in P.polyroots(P.polyder(coef)):
            if abs(r.imag) < 1e-12 and lo <= r.real <= hi:
                cand.append(r.real)
    return float(np.max(np.abs(P.polyval(np.array(cand), coef))))


def _poly_range(coef) -> tuple[float, float]:
    coef = np.asarray(coef, dtype=float)
    cand = [0.0, 1.0]
    if np.trim_zeros(coef, "b").size > 2:
        for r in P.polyroots(P.polyder(coef)):
            if abs(r.imag) < 1e-12 and 0 <= r.real <= 1:
                cand.append(r.real)
    v = P.polyval(np.array(cand), coef)
    return float(v.min()), float(v.max())


def _real_space(lo: float, hi: float) -> OutputSpace:
    if not hi > lo:
        lo, hi = lo - 0.5, hi + 0.5
    return OutputSpace.real(lo, hi)


def synth_target(family: str, d: int, L: float | None = None, seed: int = 0,
                 params: dict | None = None) -> TargetFunction:
    """Seeded synthetic target with a Lipschitz constant certified by construction."""
    params = dict(params or {})
    if d < 1:
        raise ConfigurationError("dimension must be >= 1")
    if L is not None and L <= 0:
        raise ConfigurationError("Lipschitz bound must be > 0")
    meta = {"family": family, "d": d, "L": L, "seed": seed, "params": params}
    dom = InputDomain.hypercube(d)

    if family == "ramp":
        L = 1.0 if L is None else float(L)
        fn = lambda X, L=L: L * X[:, 0]
        return TargetFunction(dom, _real_space(0.0, L), "synthetic", fn=fn, lipschitz=L,
                              name=f"ramp_d{d}", meta=meta)

    if family == "polynomial":
        if "coefficients" in params:
            coef = np.asarray(params["coefficients"], dtype=float)
        else:
            rng = np.random.default_rng(seed)
            coef = rng.uniform(-1.0, 1.0, int(params.get("degree", 3)) + 1)
            slope = _poly_sup_abs(P.polyder(coef))
            if L is None:
                L = 1.0
            if slope > 0:
                coef = coef * (L / (math.sqrt(d) * slope))
        cert = math.sqrt(d) * _poly_sup_abs(P.polyder(coef)) if coef.size > 1 else 0.0
        if L is not None and cert > L * (1 + 1e-12):
            raise ConfigurationError(f"polynomial slope bound {cert} exceeds requested L={L}")
        lo, hi = _poly_range(coef)
        fn = lambda X, c=coef: P.polyval(X, c).sum(axis=1)
        return TargetFunction(dom, _real_space(d * lo, d * hi), "synthetic", fn=fn,
                              lipschitz=cert, name=f"poly_d{d}", meta=meta)

    if family in ("lipschitz_field", "lipschitz"):
        L = 1.0 if L is None else float(L)
        rng = np.random.default_rng(seed)
        segments = int(params.get("segments", 8))
        cap = L / math.sqrt(d)
        knots, values = [], []
        for _ in range(d):
            inner = np.sort(rng.random(segments - 1))
            xs = np.concatenate(([0.0], inner, [1.0]))
            slopes = rng.uniform(-1.0, 1.0, segments)
            # the steepest segment is pinned to the per-axis cap
            slopes *= cap / np.max(np.abs(slopes))
            ys = np.concatenate(([0.0], np.cumsum(slopes * np.diff(xs))))
            ys -= 0.5 * (ys.max() + ys.min())
            knots.append(xs)
            values.append(ys)
        lo = float(sum(v.min() for v in values))
        hi = float(sum(v.max() for v in values))

        def fn(X, knots=knots, values=values):
            return np.sum([np.interp(X[:, i], knots[i], values[i]) for i in range(len(knots))], axis=0)

        meta["family"] = "lipschitz_field"
        return TargetFunction(dom, _real_space(lo, hi), "synthetic", fn=fn, lipschitz=L,
                              name=f"lipschitz_d{d}_s{seed}", meta=meta)

    raise ConfigurationError(f"unknown synthetic family {family!r}")


def parse_target(text: str, lipschitz: float | None = None) -> TargetFunction:
    """Resolve ``synth:<family>,k=v,...`` or a .json/.csv path."""
    if text.startswith("synth:"):
        body = text[len("synth:"):]
        parts = [p for p in body.split(",") if p]
        if not parts:
            raise ConfigurationError("empty synthetic target spec")
        family, kv = parts[0], {}
        for p in parts[1:]:
            if "=" not in p:
                raise ConfigurationError(f"bad target option {p!r}")
            k, v = p.split("=", 1)
            kv[k.strip()] = v.strip()
        try:
            d = int(kv.pop("d", 1))
            L = float(kv.pop("L")) if "L" in kv else None
            seed = int(kv.pop("seed", 0))
        except ValueError as exc:
            raise ConfigurationError(f"bad numeric option in {text!r}") from exc
        params: dict = {}
        if "coefficients" in kv:
            params["coefficients"] = [float(c) for c in kv.pop("coefficients").split(";")]
        for k, v in kv.items():
            params[k] = int(v) if v.lstrip("-").isdigit() else v
        return synth_target(family, d, L, seed, params)
    path = Path(text)
    if not path.exists():
        raise ConfigurationError(f"target file {text!r} not found")
    if path.suffix == ".csv":
        return load_sample_csv(path, lipschitz)
    data = json.loads(path.read_text())
    if "table" in data:
        return load_truth_table(path)
    if "family" in data:
        return synth_target(data["family"], int(data.get("d", 1)), data.get("L"),
                            int(data.get("seed", 0)), data.get("params"))
    raise ConfigurationError(f"{text}: unrecognised target JSON")


def range_bound(values, scale: float = 1.25) -> float:
    """Quantizer range M = scale * max|f|, or 1 for an identically zero target."""
    m = float(np.max(np.abs(np.asarray(values, dtype=float)))) if np.size(values) else 0.0
    return scale * m if m > 0 else 1.0


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Distribution:
    kind: str
    points: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "uniform":
            return
        if self.kind != "empirical":
            raise ConfigurationError(f"unknown distribution kind {self.kind!r}")
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.size == 0:
            raise DistributionError("empirical distribution has empty support")
        w = np.full(len(pts), 1.0 / len(pts)) if self.weights is None else np.asarray(self.weights, float)
        if len(w) != len(pts) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise DistributionError("weights must be non-negative, one per point, summing to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls) -> "Distribution":
        return cls("uniform")

    @classmethod
    def empirical(cls, points, weights=None) -> "Distribution":
        return cls("empirical", points, weights)

    def weights_on(self, eval_points) -> np.ndarray:
        """Weights attached to an evaluation set (equal for uniform)."""
        n = len(eval_points)
        if n == 0:
            raise DistributionError("empty evaluation set")
        if self.kind == "uniform":
            return np.full(n, 1.0 / n)
        lookup: dict = {}
        for p, w in zip(self.points, self.weights):
            lookup[tuple(p)] = lookup.get(tuple(p), 0.0) + w
        try:
            w = np.array([lookup[tuple(p)] for p in np.atleast_2d(eval_points)])
        except KeyError as exc:
            raise DistributionError("evaluation point outside the empirical support") from exc
        # repeated evaluation points share their mass
        _, inv, counts = np.unique(np.atleast_2d(eval_points), axis=0, return_inverse=True,
                                   return_counts=True)
        return w / counts[inv.ravel()]


def sample_inputs(domain: InputDomain, dist: Distribution, count: int, seed: int) -> np.ndarray:
    if count < 1:
        raise DistributionError("count must be >= 1")
    rng = np.random.default_rng(seed)
    if dist.kind == "empirical":
        domain.check(dist.points)
        idx = rng.choice(len(dist.points), size=count, p=dist.weights)
        return dist.points[idx].copy()
    if domain.kind == "hypercube":
        return rng.random((count, domain.dim))
    if domain.kind == "bitvector":
        return rng.integers(0, 2, (count, domain.dim)).astype(float)
    return domain.points[rng.integers(0, len(domain.points), count)].copy()


def output_separation(f: TargetFunction, eval_points, delta: float) -> tuple[float, bool]:
    if delta <= 0:
        raise RangeError("delta must be > 0")
    y = f.evaluate_many(eval_points)
    sigma = float(np.min(f.outputs.separation(y)))
    return sigma, sigma > delta


# ---------------------------------------------------------------------------
# Explanations
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Explanation:
    """A concrete interpretable model stored as integer parameter codes.

    ``value_q`` decodes real-valued payloads; when it is ``None`` payloads are
    label indices of a discrete output space.  ``threshold_q`` decodes split
    thresholds and stored locations on [0, 1].
    """

    kind: str
    params: dict
    d: int
    output: OutputSpace
    value_q: Quantizer | None = None
    # None means a fixed 0.5 split point costing no bits (bit-vector inputs)
    threshold_q: Quantizer | None = None
    provenance: str = "manual"
    oracle: TargetFunction | None = None
    bits: int = field(init=False)

    def __post_init__(self):
        if self.kind not in mdl.KINDS:
            raise ConfigurationError(f"unknown explanation kind {self.kind!r}")
        if self.kind == "local_oracle" and self.oracle is None:
            raise ConfigurationError("local explanation needs oracle access to f")
        self._validate_codes()
        object.__setattr__(self, "bits", mdl.description_length(self))
        object.__setattr__(self, "_cache", {})

    # -- code context -------------------------------------------------------

    @property
    def value_bits(self) -> int:
        if self.value_q is not None:
            return self.value_q.p
        return self.output.label_bits if self.output.discrete else 0

    def code_context(self) -> dict:
        ctx: dict = {"d": self.d, "value_bits": self.value_bits}
        ctx["threshold_bits"] = self.threshold_q.p if self.threshold_q is not None else 0
        return ctx

    def encode(self) -> str:
        return mdl.emit(self)

    def _validate_codes(self) -> None:
        vmax = (1 << self.value_bits) - 1
        if self.value_q is None:
            vmax = len(self.output.labels) - 1

        def vcheck(codes):
            arr = np.asarray(codes, dtype=np.int64)
            if arr.size and (arr.min() < 0 or arr.max() > vmax):
                raise RangeError(f"value code outside [0, {vmax}]")

        k, p = self.kind, self.params
        if k == "constant":
            vcheck([p["value"]])
        elif k == "grid":
            vcheck(p["values"])
        elif k == "tree":
            vcheck([nd[1] for nd in p["nodes"] if nd[0] == "l"])
            if self.threshold_q is None and any(nd[2] for nd in p["nodes"] if nd[0] == "s"):
                raise RangeError("fixed-threshold trees carry no threshold payload")
        elif k == "rulelist":
            vcheck([v for _, v in p["rules"]])
            if not p["rules"] or p["rules"][-1][0]:
                raise ConfigurationError("rule list must end with an unconditional default rule")
        elif k in ("knn", "cover"):
            vcheck(p["values"])
        elif k == "truthtable":
            if 2 ** p["n"] != len(p["table"]) or p["n"] != self.d:
                raise ConfigurationError("truth table size does not match the input dimension")

    # -- decoding helpers ---------------------------------------------------

    def _value(self, codes) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.int64)
        if self.value_q is None:
            return codes
        return np.asarray(self.value_q.decode(codes), dtype=float)

    def _threshold(self, code) -> float:
        return 0.5 if self.threshold_q is None else float(self.threshold_q.decode(code))

    def _finish(self, raw: np.ndarray) -> np.ndarray:
        """Map a real-valued model output into the output space."""
        if self.output.kind == "binary":
            return (raw >= 0.5).astype(np.int64)
        if self.output.kind == "categorical":
            return np.clip(np.rint(raw), 0, len(self.output.labels) - 1).astype(np.int64)
        return raw.astype(float)

    def _memo(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    # -- evaluation ---------------------------------------------------------

    def evaluate_many(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1) if X.size == self.d else X.reshape(-1, 1)
        if X.shape[1] != self.d:
            raise DomainError(f"explanation expects dimension {self.d}, got {X.shape[1]}")
        N = len(X)
        k, p = self.kind, self.params
        if k == "constant":
            return np.full(N, self._value(p["value"]))
        if k == "truthtable":
            return np.asarray(p["table"], dtype=np.int64)[bits_to_index(X)]
        if k == "linear":
            q = Quantizer.symmetric(self.value_q.hi, p["p"]) if self.value_q else None
            w, b = self._memo("lin", lambda: (np.asarray(q.decode(p["weights"]), float),
                                              float(q.decode(p["bias"]))))
            return self._finish(X @ w + b)
        if k == "grid":
            m = p["m"]
            vals = self._memo("grid", lambda: self._value(p["values"]))
            cell = np.clip(np.floor(X * m).astype(np.int64), 0, m - 1)
            flat = np.ravel_multi_index(tuple(cell.T), (m,) * self.d)
            return vals[flat]
        if k == "tree":
            return self._eval_tree(X)
        if k == "rulelist":
            return self._eval_rules(X)
        if k == "knn":
            locs, vals = self._memo("knn", lambda: (
                np.asarray(Quantizer(0.0, 1.0, p["p"]).decode(np.asarray(p["points"])), float),
                self._value(p["values"])))
            tree = self._memo("knn_tree", lambda: cKDTree(locs))
            # brute force keeps the lowest-index tie rule exact
            if len(locs) <= 256:
                d2 = ((X[:, None, :] - locs[None, :, :]) ** 2).sum(axis=2)
                return vals[np.argmin(d2, axis=1)]
            _, idx = tree.query(X)
            return vals[idx]
        if k == "mlp":
            return self._eval_mlp(X)
        if k == "local_oracle":
            return self._eval_local(X)
        if k == "cover":
            return self._eval_cover(X)
        raise ConfigurationError(f"cannot evaluate kind {k!r}")

    def __call__(self, X) -> np.ndarray:
        return self.evaluate_many(X)

    def _tree_arrays(self):
        nodes = self.params["nodes"]
        feat = np.full(len(nodes), -1, dtype=np.int64)
        thr = np.zeros(len(nodes))
        left = np.full(len(nodes), -1, dtype=np.int64)
        right = np.full(len(nodes), -1, dtype=np.int64)
        leafval = np.zeros(len(nodes))
        pos = 0

        def walk() -> int:
            nonlocal pos
            i = pos
            nd = nodes[pos]
            pos += 1
            if nd[0] == "s":
                feat[i] = nd[1]
                thr[i] = self._threshold(nd[2])
                left[i] = walk()
                right[i] = walk()
            else:
                leafval[i] = self._value(nd[1])
            return i

        walk()
        return feat, thr, left, right, leafval

    def _eval_tree(self, X):
        feat, thr, left, right, leafval = self._memo("tree", self._tree_arrays)
        node = np.zeros(len(X), dtype=np.int64)
        active = feat[node] >= 0
        while np.any(active):
            idx = np.nonzero(active)[0]
            n = node[idx]
            go_left = X[idx, feat[n]] <= thr[n]
            node[idx] = np.where(go_left, left[n], right[n])
            active = feat[node] >= 0
        out = leafval[node]
        return out.astype(np.int64) if self.value_q is None else out

    def _eval_rules(self, X):
        rules = self.params["rules"]
        out = np.zeros(len(X), dtype=np.int64 if self.value_q is None else float)
        done = np.zeros(len(X), dtype=bool)
        for conds, val in rules:
            hit = ~done
            for feat, direction, thr in conds:
                t = self._threshold(thr)
                hit &= (X[:, feat] > t) if direction else (X[:, feat] <= t)
            out[hit] = self._value(val)
            done |= hit
        return out

    def _eval_mlp(self, X):
        p = self.params
        sizes = p["sizes"]
        q = Quantizer.symmetric(self.value_q.hi if self.value_q else 1.0, p["p"])
        W = np.asarray(q.decode(np.asarray(p["weights"])), float)
        B = np.asarray(q.decode(np.asarray(p["biases"])), float)
        h = X
        wpos = bpos = 0
        for li, (a, b) in enumerate(zip(sizes, sizes[1:])):
            Wl = W[wpos:wpos + a * b].reshape(a, b)
            h = h @ Wl + B[bpos:bpos + b]
            wpos += a * b
            bpos += b
            if li < len(sizes) - 2:
                h = np.maximum(h, 0.0)
        return self._finish(h[:, 0] if h.shape[1] == 1 else h.argmax(axis=1).astype(float))

    def local_box(self):
        p = self.params
        q = Quantizer(0.0, 1.0, p["p"])
        c = np.asarray(q.decode(np.asarray(p["center"])), float)
        r = float(q.decode(p["radius"]))
        splits = np.sum(np.asarray(p["levels"], dtype=np.int64).reshape(-1, self.d), axis=0)
        return c, r, splits

    def _eval_local(self, X):
        c, r, splits = self._memo("local", self.local_box)
        lo = c - r
        parts = 2 ** splits
        width = (2 * r) / parts
        Xc = np.clip(X, lo, c + r)
        cell = np.clip(np.floor((Xc - lo) / width).astype(np.int64), 0, parts - 1)
        centers = np.clip(lo + (cell + 0.5) * width, 0.0, 1.0)
        return self.oracle.evaluate_many(centers)

    def _cover_index(self):
        p = self.params
        m = p["m"]
        cells = np.asarray(p["cells"], dtype=np.int64).reshape(-1, self.d)
        lookup = {tuple(c): i for i, c in enumerate(cells)}
        centers = (cells + 0.5) / m
        return lookup, cKDTree(centers), self._value(p["values"])

    def _eval_cover(self, X):
        m = self.params["m"]
        lookup, tree, vals = self._memo("cover", self._cover_index)
        cell = np.clip(np.floor(X * m).astype(np.int64), 0, m - 1)
        idx = np.array([lookup.get(tuple(c), -1) for c in cell], dtype=np.int64)
        miss = idx < 0
        if np.any(miss):
            _, near = tree.query((cell[miss] + 0.5) / m)
            idx[miss] = near
        return vals[idx]

    def summary(self) -> dict:
        return {"kind": self.kind, "bits": self.bits, "provenance": self.provenance}


def evaluate(obj, x):
    """Value of a target or explanation at a single point."""
    if isinstance(obj, TargetFunction):
        x = obj.domain.check(x)
        if len(x) != 1:
            raise DomainError("evaluate takes a single point; use evaluate_many")
    return obj.evaluate_many(x)[0].item()


def evaluate_many(obj, X) -> np.ndarray:
    return obj.evaluate_many(X)


# ---------------------------------------------------------------------------
# Builders from real-valued parameters
# ---------------------------------------------------------------------------

def _value_codes(values, output: OutputSpace, q: Quantizer | None):
    arr = np.asarray(values)
    if q is None:
        if not output.discrete:
            raise ConfigurationError("real-valued payloads need a value quantizer")
        return arr.astype(np.int64)
    return np.asarray(q.encode(arr.astype(float)), dtype=np.int64)


def make_constant(value, output: OutputSpace, d: int, q: Quantizer | None = None,
                  provenance="manual") -> Explanation:
    code = int(_value_codes([value], output, q)[0])
    return Explanation("constant", {"value": code}, d, output, value_q=q, provenance=provenance)


def make_linear(weights, bias, output: OutputSpace, p: int = 16, M: float | None = None,
                provenance="manual") -> Explanation:
    w = np.asarray(weights, dtype=float).ravel()
    if M is None:
        M = range_bound(np.append(w, bias))
    q = Quantizer.symmetric(M, p)
    params = {"p": p, "weights": [int(c) for c in q.encode(w)], "bias": int(q.encode(float(bias)))}
    return Explanation("linear", params, len(w), output, value_q=q, provenance=provenance)


def make_grid(values, m: int, d: int, output: OutputSpace, q: Quantizer | None,
              provenance="manual") -> Explanation:
    codes = _value_codes(np.asarray(values).ravel(), output, q)
    return Explanation("grid", {"m": int(m), "values": [int(c) for c in codes]}, d, output,
                       value_q=q, provenance=provenance)


def make_truthtable(table, provenance="manual") -> Explanation:
    t = [int(v) for v in table]
    n = int(round(math.log2(len(t))))
    return Explanation("truthtable", {"n": n, "table": t}, n, OutputSpace.binary(),
                       provenance=provenance)


def make_knn(points, values, output: OutputSpace, p: int, q: Quantizer | None,
             provenance="manual") -> Explanation:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    loc = Quantizer(0.0, 1.0, p)
    params = {"p": p, "points": np.asarray(loc.encode(pts)).tolist(),
              "values": [int(c) for c in _value_codes(values, output, q)]}
    return Explanation("knn", params, pts.shape[1], output, value_q=q, provenance=provenance)


def make_tree(spec, d: int, output: OutputSpace, q: Quantizer | None,
              threshold_q: Quantizer | None, provenance="manual") -> Explanation:
    """Build from a preorder list of ('s', feature, threshold) / ('l', value) tuples."""
    nodes = []
    for nd in spec:
        if nd[0] == "s":
            code = 0 if threshold_q is None else int(threshold_q.encode(float(nd[2])))
            nodes.append(("s", int(nd[1]), code))
        else:
            nodes.append(("l", int(_value_codes([nd[1]], output, q)[0])))
    return Explanation("tree", {"nodes": nodes}, d, output, value_q=q, threshold_q=threshold_q,
                       provenance=provenance)


def make_rulelist(rules, d: int, output: OutputSpace, q: Quantizer | None,
                  threshold_q: Quantizer | None, provenance="manual") -> Explanation:
    """``rules``: list of (conditions, value); condition = (feature, '<=' or '>', threshold)."""
    coded = []
    for conds, val in rules:
        cc = tuple((int(f), 1 if op == ">" else 0,
                    0 if threshold_q is None else int(threshold_q.encode(float(t))))
                   for f, op, t in conds)
        coded.append((cc, int(_value_codes([val], output, q)[0])))
    return Explanation("rulelist", {"rules": coded}, d, output, value_q=q,
                       threshold_q=threshold_q, provenance=provenance)


def make_mlp(sizes, weights, biases, output: OutputSpace, p: int = 8, M: float | None = None,
             provenance="manual") -> Explanation:
    """Weights are given per layer as (in, out) matrices; biases per layer."""
    flat_w = np.concatenate([np.asarray(w, float).ravel() for w in weights]) if weights else np.zeros(0)
    flat_b = np.concatenate([np.asarray(b, float).ravel() for b in biases]) if biases else np.zeros(0)
    if M is None:
        M = range_bound(np.concatenate([flat_w, flat_b]))
    q = Quantizer.symmetric(M, p)
    params = {"sizes": [int(s) for s in sizes], "p": p,
              "weights": [int(c) for c in np.atleast_1d(q.encode(flat_w))],
              "biases": [int(c) for c in np.atleast_1d(q.encode(flat_b))]}
    n_w = sum(a * b for a, b in zip(sizes, sizes[1:]))
    if len(params["weights"]) != n_w or len(params["biases"]) != sum(sizes[1:]):
        raise ConfigurationError("MLP parameter counts do not match the layer sizes")
    return Explanation("mlp", params, int(sizes[0]), output, value_q=q, provenance=provenance)


def tree_to_rulelist(g: Explanation) -> Explanation:
    """Rewrite a tree as an ordered rule list (one rule per leaf, last leaf as default)."""
    rules = []
    nodes = g.params["nodes"]
    pos = 0

    def walk(path):
        nonlocal pos
        nd = nodes[pos]
        pos += 1
        if nd[0] == "l":
            rules.append((tuple(path), nd[1]))
            return
        walk(path + [(nd[1], 0, nd[2])])
        walk(path + [(nd[1], 1, nd[2])])

    walk([])
    rules[-1] = ((), rules[-1][1])
    return Explanation("rulelist", {"rules": rules}, g.d, g.output, value_q=g.value_q,
                       threshold_q=g.threshold_q, provenance=g.provenance + "+rules")
