"""Command-line entry point.

Exit status: 0 on success, 1 when a property check fails, 2 on a
configuration error.  Every run writes ``config.json`` (the resolved
configuration, loadable again with ``--config``) and a JSON report into
``--out``.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import approximators as ap
from . import boolean_lab as bl
from . import dimension as dm
from . import regulatory as rg
from .cache import memo_frontier
from .errors import ConfigurationError, PropertyViolation, XplimitError
from .frontier import (SweepOptions, check_duality_monotone, fit_scaling_exponent,
                       linear_fit, sweep, with_queries)
from .io import csv_text, dumps, fmt
from .model import TargetFunction, load_truth_table, parse_target

# execution-only settings; they never change results and are left out of stored configs
EXEC_KEYS = ("out", "workers")

COMMANDS = ("frontier", "boolean", "boxdim", "local", "cover", "feasibility", "tiered", "audit")

# keys that make up a run configuration, with their defaults
DEFAULTS = {
    "command": None, "target": None, "class": "grid", "kmax": None, "kgrid": None,
    "deltas": None, "seed": 0, "grid_density": None, "workers": 1, "out": "xplimit-out",
    "n": None, "table": None, "golden": None, "trials": 0, "k": None, "margin": 0.25,
    "points": None, "fixture": None, "eps": None, "x0": None, "r": None, "L": None,
    "support": None, "samples": 5000, "tiers": None, "k_human": 8, "delta_neg": 0.05,
}


def _floats(text) -> list[float] | None:
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse number list {text!r}") from exc


def _ints(text) -> list[int] | None:
    vals = _floats(text)
    return None if vals is None else [int(v) for v in vals]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xplimit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"xplimit {__version__}")
    sub = p.add_subparsers(dest="command")
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run configuration; flags override it")
        s.add_argument("--target", help="synth:<family>,d=..,L=..,seed=.. or a .json/.csv path")
        s.add_argument("--class", dest="class_", help="comma-separated explanation families")
        s.add_argument("--kmax", type=int)
        s.add_argument("--kgrid", help="comma-separated complexity budgets")
        s.add_argument("--deltas", help="comma-separated error thresholds")
        s.add_argument("--seed", type=int)
        s.add_argument("--grid-density", dest="grid_density", type=int)
        s.add_argument("--workers", type=int)
        s.add_argument("--out")
        s.add_argument("--L", type=float, help="Lipschitz constant for sample-table targets")
        if name in ("boolean", "audit"):
            s.add_argument("--n", type=int)
            s.add_argument("--table")
        if name == "boolean":
            s.add_argument("--golden")
            s.add_argument("--trials", type=int)
            s.add_argument("--k", type=int)
            s.add_argument("--margin", type=float)
        if name == "boxdim":
            s.add_argument("--points")
            s.add_argument("--fixture", choices=("segment", "square", "cantor", "helix"))
            s.add_argument("--eps")
        if name == "local":
            s.add_argument("--x0")
            s.add_argument("--r", type=float)
        if name == "cover":
            s.add_argument("--support", help="CSV of support points or 'helix'")
            s.add_argument("--samples", type=int)
        if name == "tiered":
            s.add_argument("--tiers", help="label:k_max,... in ascending risk")
        if name == "audit":
            s.add_argument("--k-human", dest="k_human", type=int)
            s.add_argument("--delta-neg", dest="delta_neg", type=float)
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigurationError("config file must hold a JSON object")
        unknown = set(loaded) - set(DEFAULTS) - {"language_version"}
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        cfg.update({k: v for k, v in loaded.items() if k in DEFAULTS})
    for k, v in vars(args).items():
        key = "class" if k == "class_" else k
        if key in DEFAULTS and v is not None:
            cfg[key] = v
    cfg["command"] = args.command
    return cfg


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _target(cfg) -> TargetFunction:
    if not cfg.get("target"):
        raise ConfigurationError("--target is required")
    return parse_target(cfg["target"], cfg.get("L"))


def _deltas(cfg, required=True) -> list[float] | None:
    ds = _floats(cfg.get("deltas"))
    if not ds:
        if required:
            raise ConfigurationError("missing delta grid (--deltas)")
        return None
    if any(d < 0 for d in ds):
        raise ConfigurationError("deltas must be >= 0")
    return sorted(ds, reverse=True)


def _options(cfg) -> SweepOptions:
    return SweepOptions(grid_density=cfg.get("grid_density"), workers=int(cfg.get("workers") or 1),
                        k_cap=cfg.get("kmax"))


def _frontier(cfg, f: TargetFunction):
    o = _options(cfg)
    payload = {"target": f.spec(), "class": cfg["class"], "grid_density": o.grid_density,
               "k_cap": o.k_cap, "language": bl.LANGUAGE_VERSION}
    return memo_frontier(payload, lambda: sweep(f, cfg["class"], o))


def cmd_frontier(cfg, out: Path) -> tuple[dict, bool]:
    f = _target(cfg)
    ds = _deltas(cfg, required=cfg.get("kgrid") is None)
    ks = _ints(cfg.get("kgrid")) or []
    fr = with_queries(_frontier(cfg, f), k_grid=sorted(ks), delta_grid=ds or ())
    chk = check_duality_monotone(fr, f.lipschitz, f.domain.dim if f.lipschitz else None)
    (out / "frontier.csv").write_text(fr.to_csv())
    if ds:
        (out / "kappa.csv").write_text(fr.kappa_csv())
    if ks:
        (out / "epsilon.csv").write_text(csv_text(["k_bits", "epsilon_hat"], fr.epsilon_table()))
    (out / "plot.json").write_text(dumps(fr.plot_data()))
    rep = {"frontier_points": len(fr.points), "duality": chk.to_dict()}
    if ds and len([1 for _, b in fr.kappa_table() if b is not None]) >= 4:
        a, r2 = fit_scaling_exponent(fr, "kappa_vs_invdelta")
        rep["scaling"] = {"alpha_hat": fmt(a), "r2": fmt(r2)}
    return rep, chk.ok


def _bool_table(cfg) -> tuple[str, list[int]]:
    if cfg.get("table"):
        f = load_truth_table(cfg["table"])
        return f.name, f.table.tolist()
    if cfg.get("target"):
        f = parse_target(cfg["target"])
        if f.kind != "truthtable":
            raise ConfigurationError("the boolean command needs a truth-table target")
        return f.name, f.table.tolist()
    if cfg.get("n"):
        n = int(cfg["n"])
        return f"random{n}_seed{cfg['seed']}", np.random.default_rng(cfg["seed"]).integers(
            0, 2, 1 << n).tolist()
    raise ConfigurationError("give --table, --target or --n")


def _exact_checks(table, name, kmax, golden_path) -> tuple[dict, list[str], str]:
    ks = list(range(0, kmax + 1))
    ex = bl.exact_frontier(table, ks)
    fr = with_queries(sweep(TargetFunction.from_table(table, name), "boolean",
                            SweepOptions(k_cap=kmax)), k_grid=ks)
    golden = ex.golden()
    failures = []
    if [e for _, e in fr.epsilon_table()] != ex.epsilon:
        failures.append("frontier sweep differs from the exact enumeration")
    if ex.kappa[ex.delta_grid.index(0.0)] != ex.min_mdl:
        failures.append("kappa_exact(0) != min_mdl")
    if any(not e > 0 for k, e in zip(ks, ex.epsilon) if k < ex.min_mdl):
        failures.append("zero error below min_mdl")
    failures.extend(check_duality_monotone(fr).violations)
    rep = {"table": table, "min_mdl": ex.min_mdl, "epsilon_exact": golden,
           "kappa_exact": [[fmt(d), k] for d, k in zip(ex.delta_grid, ex.kappa)]}
    if golden_path:
        try:
            ref = json.loads(Path(golden_path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"cannot read golden file: {exc}") from exc
        ok = ref == json.loads(dumps(golden))
        rep["golden_match"] = ok
        if not ok:
            failures.append("exact frontier does not match the golden file")
    return rep, failures, dumps(golden)


def cmd_boolean(cfg, out: Path) -> tuple[dict, bool]:
    name, table = _bool_table(cfg)
    n = int(round(math.log2(len(table))))
    if cfg.get("n") and int(cfg["n"]) != n:
        raise ConfigurationError(f"--n {cfg['n']} does not match a table of length {len(table)}")
    kmax = int(cfg.get("kmax") or 24)
    rep: dict = {"n": n}
    failures: list[str] = []
    if n <= 4:
        part, failures, golden = _exact_checks(table, name, kmax, cfg.get("golden"))
        rep.update(part)
        (out / "exact.json").write_text(golden)
    elif not cfg.get("trials"):
        raise ConfigurationError("exact frontiers need n <= 4; for larger n give --trials")
    elif cfg.get("golden"):
        raise ConfigurationError("golden checks need n <= 4")
    if cfg.get("trials"):
        k = int(cfg.get("k") or kmax)
        rr = bl.random_function_experiment(n, k, int(cfg["trials"]), int(cfg["seed"]),
                                           float(cfg["margin"]), workers=int(cfg["workers"] or 1))
        rep["random_functions"] = rr.to_dict()
        (out / "random_functions.csv").write_text(
            csv_text(["trial", "best_agreement"], list(enumerate(rr.agreements))))
    rep["failures"] = failures
    return rep, not failures


def cmd_boxdim(cfg, out: Path) -> tuple[dict, bool]:
    if cfg.get("points"):
        try:
            pts = np.loadtxt(cfg["points"], delimiter=",", skiprows=1, ndmin=2)
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"cannot read points: {exc}") from exc
    else:
        fx = cfg.get("fixture") or "segment"
        pts = {"segment": lambda: dm.segment_points(10000, cfg["seed"]),
               "square": lambda: dm.square_points(10000, cfg["seed"]),
               "cantor": lambda: dm.cantor_points(8),
               "helix": lambda: dm.helix_points(20000, cfg["seed"])}[fx]()
    eps = _floats(cfg.get("eps"))
    if not eps:
        eps = ([3.0 ** -j for j in range(1, 8)] if cfg.get("fixture") == "cantor"
               else [2.0 ** -j for j in range(1, 7)])
    curve = dm.box_dimension(pts, eps)
    (out / "curve.csv").write_text(curve.to_csv())
    return curve.summary(), curve.monotone


def _local_center(cfg, d) -> list[float]:
    x0 = _floats(cfg.get("x0"))
    return [0.5] * d if not x0 else x0


def cmd_local(cfg, out: Path) -> tuple[dict, bool]:
    f = _target(cfg)
    ds = _deltas(cfg)
    x0 = _local_center(cfg, f.domain.dim)
    r = float(cfg.get("r") or 0.1)
    rows = []
    for d in ds:
        g = ap.fit_local(f, x0, r, d)
        err = ap.sup_error(f, g, ap.ball_points(np.asarray(x0), r))
        gg = ap.fit_grid_piecewise(f, d)
        rows.append((d, g.bits, gg.bits, gg.bits / g.bits, err))
    (out / "local.csv").write_text(csv_text(
        ["delta", "local_bits", "global_bits", "ratio", "local_sup_error"], rows))
    rep = {"x0": x0, "r": r}
    if len(ds) >= 4:
        a, _, r2 = linear_fit([math.log(1 / d) for d in ds], [row[1] for row in rows])
        rep["bits_per_log_inv_delta"] = fmt(a)
        rep["r2"] = fmt(r2)
    return rep, True


def _support(cfg, f: TargetFunction) -> np.ndarray:
    src = cfg.get("support") or "helix"
    if src == "helix":
        if f.domain.dim != 3:
            raise ConfigurationError("the helix support lives in [0,1]^3; use d=3")
        return dm.helix_points(int(cfg.get("samples") or 5000), cfg["seed"])
    try:
        return np.loadtxt(src, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read support points: {exc}") from exc


def cmd_cover(cfg, out: Path) -> tuple[dict, bool]:
    f = _target(cfg)
    ds = _deltas(cfg)
    S = _support(cfg, f)
    rows = []
    for d in ds:
        g = ap.fit_support_cover(f, S, d)
        err = ap.sup_error(f, g, S)
        rows.append((d, g.params["m"], len(g.params["cells"]), g.bits, err))
    (out / "cover.csv").write_text(csv_text(
        ["delta", "m", "occupied_boxes", "bits", "sup_error_on_support"], rows))
    rep: dict = {"support_points": int(len(S))}
    if len(ds) >= 4:
        a, _, r2 = linear_fit([math.log(1 / d) for d in ds], [math.log(row[3]) for row in rows])
        rep["bits_exponent"] = fmt(a)
        rep["r2"] = fmt(r2)
    curve = dm.box_dimension(S, [2.0 ** -j for j in range(1, 8)])
    rep["box_dimension"] = curve.summary()
    return rep, True


def cmd_feasibility(cfg, out: Path) -> tuple[dict, bool]:
    f = _target(cfg) if cfg.get("target") else None
    if f is None:
        raise ConfigurationError("--target is required")
    ds = _deltas(cfg)
    ks = _ints(cfg.get("kgrid"))
    if not ks:
        raise ConfigurationError("missing complexity grid (--kgrid)")
    fam = "boolean" if f.kind == "truthtable" else cfg["class"]
    cfg = {**cfg, "class": fam}
    fr = with_queries(_frontier(cfg, f), k_grid=ks, delta_grid=ds)
    region = rg.FeasibilityRegion(fr, f.name)
    rows = []
    for k in ks:
        for d in ds:
            v = region.verdict(k, d)
            rows.append((k, d, v.status, v.kappa if v.kappa is not None else ""))
    (out / "region.csv").write_text(csv_text(["k_bits", "delta", "verdict", "kappa_hat"], rows))
    chk = check_duality_monotone(fr)
    agree = all((row[2] == "feasible") == (fr.error_at(row[0]) <= row[1])
                for row in rows if row[2] != "unknown")
    return {"verdicts": len(rows), "duality": chk.to_dict(), "agrees_with_duality": agree}, \
        chk.ok and agree


def _tiers(text) -> list[tuple[str, int]]:
    if not text:
        raise ConfigurationError("missing --tiers")
    out = []
    for i, part in enumerate(str(text).split(",")):
        label, _, k = part.rpartition(":")
        try:
            out.append((label or f"tier{i + 1}", int(k)))
        except ValueError as exc:
            raise ConfigurationError(f"bad tier {part!r}") from exc
    return out


def cmd_tiered(cfg, out: Path) -> tuple[dict, bool]:
    f = _target(cfg)
    tiers = _tiers(cfg.get("tiers"))
    fr = _frontier(cfg, f)
    pol = rg.tiered_policy(fr, tiers, _deltas(cfg, required=False))
    rep = pol.to_dict()
    ks = [k for _, k in tiers]
    ascending = all(a < b for a, b in zip(ks, ks[1:]))
    attainable = all(t["attainable"] for t in pol.tiers)
    ok = not (ascending and attainable) or pol.strictly_decreasing()
    rep["contradictions"] = rg.contradiction_analysis(fr, k_human=ks[0])
    (out / "policy.csv").write_text(csv_text(
        ["label", "k_max", "delta", "attainable"],
        [(t["label"], t["k_max"], t["delta"] if t["delta"] is not None else "", t["attainable"])
         for t in pol.tiers]))
    return rep, ok


def cmd_audit(cfg, out: Path) -> tuple[dict, bool]:
    name, table = _bool_table(cfg)
    rep = bl.trilemma_audit(table, int(cfg["k_human"]), float(cfg["delta_neg"]))
    d = rep.to_dict()
    _, g, er = bl.degenerate_counterexample(rep.n, float(cfg["delta_neg"]), int(cfg["seed"]))
    d["degenerate_counterexample"] = {"constant_bits": g.bits, "worst_case": fmt(er.worst_case),
                                      "expected": fmt(er.expected)}
    d["target"] = name
    return d, True


HANDLERS = {"frontier": cmd_frontier, "boolean": cmd_boolean, "boxdim": cmd_boxdim,
            "local": cmd_local, "cover": cmd_cover, "feasibility": cmd_feasibility,
            "tiered": cmd_tiered, "audit": cmd_audit}


def run(command: str, cfg: dict) -> int:
    out = Path(cfg.get("out") or "xplimit-out")
    try:
        out.mkdir(parents=True, exist_ok=True)
        stored = {k: v for k, v in cfg.items() if k not in EXEC_KEYS}
        stored["language_version"] = bl.LANGUAGE_VERSION
        (out / "config.json").write_text(dumps(stored))
        report, ok = HANDLERS[command](cfg, out)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PropertyViolation as exc:
        print(f"property check failed: {exc}", file=sys.stderr)
        return 1
    except XplimitError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    full = {"command": command, "config": stored, "language_version": bl.LANGUAGE_VERSION,
            "ok": ok, "report": report}
    (out / "report.json").write_text(dumps(full))
    if not ok:
        print(f"property check failed; see {out / 'report.json'}", file=sys.stderr)
        return 1
    print(f"{command}: ok ({out})")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 2
    try:
        cfg = resolve_config(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return run(args.command, cfg)


if __name__ == "__main__":
    sys.exit(main())
