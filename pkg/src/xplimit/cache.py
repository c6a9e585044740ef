"""On-disk memo of frontier sweeps, enabled by the XPLIMIT_CACHE directory variable."""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from .frontier import Frontier, Point

ENV = "XPLIMIT_CACHE"


def cache_dir() -> Path | None:
    root = os.environ.get(ENV)
    if not root:
        return None
    p = Path(root)
    p.mkdir(parents=True, exist_ok=True)
    return p


def key(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


def _dump(fr: Frontier) -> dict:
    return {
        "points": [[p.bits, repr(p.error), p.cls, p.params] for p in fr.points],
        "target": fr.target, "family": fr.family, "metric": fr.metric,
        "eval_spec": fr.eval_spec, "exact": fr.exact,
    }


def _load(d: dict) -> Frontier:
    pts = tuple(Point(int(b), float(e), c, p) for b, e, c, p in d["points"])
    return Frontier(pts, d["target"], d["family"], d["metric"], d["eval_spec"], d["exact"])


def memo_frontier(payload: dict, compute) -> Frontier:
    """Return the cached frontier for ``payload`` or compute and store it."""
    root = cache_dir()
    if root is None:
        return compute()
    path = root / f"frontier-{key(payload)}.json"
    if path.exists():
        try:
            return _load(json.loads(path.read_text()))
        except (ValueError, KeyError):
            path.unlink()
    fr = compute()
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(_dump(fr)))
    tmp.replace(path)
    return fr
