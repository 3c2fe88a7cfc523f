"""Shared fixtures.

``small`` is a coarse configuration for fast module tests; ``reference`` is the
desk-scale configuration used by the acceptance suite.
"""

from __future__ import annotations

import math

import pytest

from bsguided.checks import make_setup
from bsguided.config import load_config, validate
from bsguided.geometry import make_lattice

SMALL = ["grid.M=1", "grid.n_l=5"]

# criterion number -> list of (label, passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}


@pytest.fixture(scope="session")
def lat():
    return make_lattice(2 * math.pi, 2 * math.pi)


@pytest.fixture(scope="session")
def small():
    """Reference box and x1 resolution with one ring of transverse modes (dimension 2304)."""
    return make_setup(validate(load_config(None, SMALL)))


@pytest.fixture(scope="session")
def reference():
    return make_setup(validate(load_config()))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        rows = ACCEPTANCE[num]
        ok = all(p for _, p, _ in rows)
        tr.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}")
        for label, passed, detail in rows:
            tr.write_line(f"    [{'pass' if passed else 'FAIL'}] {label}: {detail}")
