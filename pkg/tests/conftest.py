import pytest

from roisearch.oracle import canonical_benchmark, make_benchmark
from roisearch.space import Decision, SearchSpace, binary_space

from .acceptance_log import ACCEPTANCE_RESULTS


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid, ok, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {cid:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def mixed_space():
    return SearchSpace(
        (
            Decision("block", "categorical", ("dot", "mlp", "attn")),
            Decision("layers", "categorical", (1, 2, 4)),
            Decision("dropout", "float", bounds=(0.0, 0.5)),
            Decision("norm", "categorical", (True, False)),
        ),
        name="mixed",
        version=3,
    )


@pytest.fixture
def small_bench():
    return make_benchmark(binary_space(8, name="toy8"), seed=3)


@pytest.fixture(scope="session")
def bench7():
    return canonical_benchmark(7)
