"""Verdict lines of the acceptance suite, printed in pytest's terminal summary."""
LINES = []


def record(criterion, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
    LINES.append(line)
    print(line)
    return passed
