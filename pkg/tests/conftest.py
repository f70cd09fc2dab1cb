import numpy as np
import pytest

from hoif.gram import factorize
from hoif.ustat import KernelInputs


def random_kin(rng, n, k, *, scalar=True, sigma=None):
    """Random kernel inputs with a well-conditioned Gram."""
    z = rng.standard_normal((n, k))
    s = rng.uniform(0.5, 1.5, n)
    if sigma is None:
        a = rng.standard_normal((k, k))
        sigma = a @ a.T / k + np.eye(k)
    gram = factorize(sigma)
    if scalar:
        return KernelInputs.from_scalars(rng.standard_normal(n), rng.standard_normal(n), s, z, gram)
    return KernelInputs.from_rows(rng.standard_normal((n, k)), rng.standard_normal((n, k)), s, z, gram)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
