import os

# Single-threaded BLAS so 64-bit reruns are bit-identical.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import sys  # noqa: E402

import numpy as np  # noqa: E402
import pytest  # noqa: E402

N_CRITERIA = 10


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    lines = list(mod.LINES)
    ran = {int(name[5:7]) for name in _acceptance_tests(terminalreporter)}
    seen = {int(line.split(":")[0].split()[1]) for line in lines}
    for n in sorted(ran - seen):
        lines.append(f"criterion {n:>2}: FAIL  raised before reaching its check (see traceback)")
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
        terminalreporter.write_line(line)


def _acceptance_tests(reporter):
    names = []
    for key in ("passed", "failed", "error"):
        for rep in reporter.stats.get(key, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_" in nodeid and rep.when == "call":
                names.append(nodeid.split("::")[1])
    return names
