import sys

import numpy as np


def central_diff(fn, q, h=1e-6):
    """Independent finite-difference oracle: dense Jacobian of ``fn`` at ``q``."""
    q = np.asarray(q, dtype=float)
    f0 = np.atleast_1d(np.asarray(fn(q), dtype=float))
    J = np.empty((f0.size, q.size))
    for i in range(q.size):
        step = h * max(1.0, abs(q[i]))
        qp, qm = q.copy(), q.copy()
        qp[i] += step
        qm[i] -= step
        J[:, i] = (np.atleast_1d(fn(qp)) - np.atleast_1d(fn(qm))) / (2 * step)
    return J


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.max(np.abs(a - b), initial=0.0) / max(1.0, np.max(np.abs(b), initial=0.0))


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(module.RESULTS):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number} ({title}): {detail}")
