from __future__ import annotations

import os
import sys

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

# First calls into compiled kernels are slow, so per-example deadlines are meaningless.
settings.register_profile("fermitree", deadline=None)
settings.load_profile("fermitree")

from fermitree.estimator import RunConfig, estimate_log_ratio  # noqa: E402
from fermitree.greens import build_dense  # noqa: E402
from fermitree.model import build_hubbard  # noqa: E402
from fermitree.oracle import exact_logZ  # noqa: E402

ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])


class HubbardChain:
    """Three-site open Hubbard chain used by the end-to-end criteria."""

    def __init__(self):
        self.beta = 1.0
        self.h, self.V = build_hubbard((3,), t_hop=1.0, mu=0.0, U=0.2)
        self.provider = build_dense(self.h, self.beta)
        self.exact = exact_logZ(self.h, self.V, self.beta)
        self._runs = {}

    def config(self, **kw) -> RunConfig:
        base = dict(beta=self.beta, S=6, L=200_000, seed=20240611)
        base.update(kw)
        return RunConfig(**base)

    def log_ratio(self, **kw):
        key = tuple(sorted(kw.items()))
        if key not in self._runs:
            self._runs[key] = estimate_log_ratio(self.config(**kw), self.V, self.provider)
        return self._runs[key]


@pytest.fixture(scope="session")
def hubbard3():
    return HubbardChain()
