"""Collects one verdict line per acceptance criterion for the terminal summary."""
RESULTS = []


def report(number, name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}  {name}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok
