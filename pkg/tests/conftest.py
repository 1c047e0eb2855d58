import numpy as np
import pytest

from plenoptic.vlo import EMPTY, Mediel, Vlo, internal, leaf

ACCEPTANCE = {}


def random_node(rng, depth, max_depth):
    if depth < max_depth and rng.random() < (0.6 if depth < 2 else 0.12):
        return internal([random_node(rng, depth + 1, max_depth) for _ in range(8)])
    if rng.random() < 0.35:
        return leaf(True, Mediel(blif_id=int(rng.integers(1, 6))))
    return EMPTY


def random_vlo(rng, max_depth=6) -> Vlo:
    return Vlo(random_node(rng, 0, max_depth), max_depth=max_depth)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def record(criterion: int, passed: bool, detail: str):
    ACCEPTANCE[criterion] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
