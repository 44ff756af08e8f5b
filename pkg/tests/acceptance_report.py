"""Collects one PASS/FAIL line per acceptance criterion."""

_RESULTS: list[tuple[str, bool, str]] = []


def record(name: str, ok: bool, detail: str) -> None:
    _RESULTS.append((name, ok, detail))
    print(lines()[-1], flush=True)


def lines() -> list[str]:
    return [f"{'PASS' if ok else 'FAIL'}  {name}: {detail}" for name, ok, detail in _RESULTS]
