"""Collects one verdict per acceptance criterion for the end-of-run summary."""

RESULTS = {}


def record(number, title, passed, detail=""):
    RESULTS[number] = (title, bool(passed), detail)
    line = f"{'PASS' if passed else 'FAIL'} [{number}] {title}: {detail}"
    print(line)
    return passed


def summary_lines():
    return [
        f"{'PASS' if ok else 'FAIL'} [{n}] {title}: {detail}"
        for n, (title, ok, detail) in sorted(RESULTS.items())
    ]
