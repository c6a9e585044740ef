"""Collects one pass/fail line per acceptance criterion."""

_RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {n:2d}: {detail}"
    _RESULTS[n] = line
    print(line)


def lines() -> list[str]:
    return [_RESULTS[k] for k in sorted(_RESULTS)]
