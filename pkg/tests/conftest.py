import re


def pytest_runtest_logreport(report):
    """One pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    match = re.search(r"criterion_(\d+)", report.nodeid)
    if not match:
        return
    outcome = "PASS" if report.passed else "FAIL"
    print(f"\n[acceptance] criterion {match.group(1)}: {outcome}  ({report.nodeid.split('::')[-1]})")
