"""Fast internal consistency checks run by ``hoif selftest``."""

from __future__ import annotations

import numpy as np

from .bootstrap import boot_var_if22, exact_moment_var_if22, multinomial_moment
from .dataio import Dataset
from .functional import Units
from .gram import factorize
from .pipeline import RunConfig, check_report, dumps_report, run_falsify
from .ustat import KernelInputs, brute_force_ifjj, if_jj


def _random_inputs(rng, n, k):
    z = rng.standard_normal((n, k))
    s = rng.uniform(0.5, 1.5, n)
    gram = factorize(z.T @ (s[:, None] * z) / n + 0.1 * np.eye(k))
    return KernelInputs.from_scalars(rng.standard_normal(n), rng.standard_normal(n), s, z, gram)


def _check_orders(rng) -> bool:
    for _ in range(5):
        kin = _random_inputs(rng, 9, 3)
        for j in (2, 3, 4, 5):
            fast = if_jj(j, kin).value
            ref = brute_force_ifjj(j, kin)
            if abs(fast - ref) > 1e-9 * max(1.0, abs(ref)):
                return False
    return True


def _check_moments(rng) -> bool:
    n, draws = 25, 20_000
    W = rng.multinomial(n, np.full(n, 1.0 / n), size=draws).astype(float)
    for sample, exps in ((W[:, 0] * W[:, 1], (1, 1)), (W[:, 0] ** 2, (2,)),
                         (W[:, 0] ** 2 * W[:, 1] ** 2, (2, 2))):
        se = sample.std(ddof=1) / np.sqrt(draws)
        if abs(sample.mean() - multinomial_moment(n, exps)) > 4 * se:
            return False
    return True


def _check_bootstrap(rng) -> bool:
    kin = _random_inputs(rng, 10, 2)
    exact = exact_moment_var_if22(kin)
    boot = boot_var_if22(kin, 2000, 7)
    return abs(boot.raw - exact) <= 4 * boot.mc_se


def _check_report(rng) -> bool:
    def units(n):
        x = rng.uniform(size=(n, 2))
        a = (rng.uniform(size=n) < 0.5).astype(float)
        return Units(x[:, 0] + rng.standard_normal(n), a, x)

    data = Dataset(units(400), units(400))
    cfg = RunConfig(resolutions=(2,), boot_replicates=50, seed=3)
    first = run_falsify(cfg, data)
    second = run_falsify(cfg, data)
    return dumps_report(first) == dumps_report(second) and check_report(first)


CHECKS = (
    ("orders 2-5 match brute force", _check_orders),
    ("multinomial moments", _check_moments),
    ("bootstrap matches exact moments", _check_bootstrap),
    ("report determinism and self-consistency", _check_report),
)


def run_selftest(stream) -> bool:
    ok = True
    for i, (name, check) in enumerate(CHECKS):
        passed = bool(check(np.random.default_rng(1000 + i)))
        ok &= passed
        stream.write(f"{'PASS' if passed else 'FAIL'} {name}\n")
    return ok
