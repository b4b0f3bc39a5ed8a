"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

from contextlib import contextmanager

RESULTS: dict[int, str] = {}


@contextmanager
def criterion(number: int, title: str):
    notes: list[str] = []
    try:
        yield notes
    except BaseException as exc:
        detail = "; ".join(notes + [str(exc).splitlines()[0] if str(exc) else type(exc).__name__])
        RESULTS[number] = f"criterion {number:2d} FAIL  {title} ({detail})"
        print(RESULTS[number])
        raise
    RESULTS[number] = f"criterion {number:2d} PASS  {title}" + (f" ({'; '.join(notes)})" if notes else "")
    print(RESULTS[number])
