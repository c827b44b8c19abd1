import pytest

from helpers import BENCH_DIR

from htpg.netlist import load_bench


def _bench(name):
    path = BENCH_DIR / f"{name}.bench"
    if not path.exists():
        pytest.skip(f"benchmark {name} not present")
    return load_bench(path)


@pytest.fixture(scope="session")
def c17():
    return _bench("c17")


@pytest.fixture(scope="session")
def c432():
    return _bench("c432")


@pytest.fixture(scope="session")
def c499():
    return _bench("c499")


@pytest.fixture(scope="session")
def c880():
    return _bench("c880")
