import numpy as np
import pytest
import torch

from neural_homotopy.field import init_standard


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_net():
    return init_standard([4, 16, 16], omega0=3.0, seed=7)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-12)


def central_difference(fn, x, h):
    """Gradient and Hessian of scalar fn at x by central differences."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    grad = np.zeros(n)
    hess = np.zeros((n, n))
    f0 = fn(x)
    eye = np.eye(n) * h
    for i in range(n):
        grad[i] = (fn(x + eye[i]) - fn(x - eye[i])) / (2 * h)
        hess[i, i] = (fn(x + eye[i]) - 2 * f0 + fn(x - eye[i])) / h**2
        for k in range(i + 1, n):
            hess[i, k] = hess[k, i] = (
                fn(x + eye[i] + eye[k]) - fn(x + eye[i] - eye[k]) - fn(x - eye[i] + eye[k]) + fn(x - eye[i] - eye[k])
            ) / (4 * h * h)
    return grad, hess


torch.set_default_dtype(torch.float64)


def pytest_configure(config):
    config.acceptance_lines = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.acceptance_lines
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])


@pytest.fixture
def verdict(request):
    """Record a one-line PASS/FAIL for an acceptance criterion and assert it."""

    def report(criterion, ok, detail):
        line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.acceptance_lines[(criterion, request.node.name)] = line
        print(line)
        assert ok, line

    return report
