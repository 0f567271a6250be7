import sys
from pathlib import Path

import numpy as np
import pytest

from vrfusion import kernels

sys.path.insert(0, str(Path(__file__).parent))

DATA = Path(__file__).parent / "data"
KERNEL_NAMES = ("first_occurrence_ids", "segment_reduce", "bilinear_sample", "roi_align", "rect_multiplicity")


@pytest.fixture(params=kernels.BACKENDS)
def backend(request, monkeypatch):
    """Route every kernel call through one backend for the duration of a test."""
    mod = kernels.get_backend(request.param)
    for name in KERNEL_NAMES:
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def kitti_calib_path():
    return DATA / "000000.txt"


# Acceptance results, one line per criterion, filled in by test_acceptance.py.
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d}. {name}: {detail}")
