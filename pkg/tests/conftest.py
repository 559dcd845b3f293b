import numpy as np
import pytest

from daeobs.sysfile import SystemFile


def load(name):
    sf = SystemFile.load(name)
    return sf.system(), sf.gains(), sf.certificate()


@pytest.fixture(scope="session")
def ex1():
    return load("ex1")


@pytest.fixture(scope="session")
def ex2():
    return load("ex2")


@pytest.fixture(scope="session")
def ex3():
    return load("ex3")


@pytest.fixture(scope="session")
def ex3_copy():
    return load("ex3_copy")


@pytest.fixture(scope="session")
def counterexample():
    return load("counterexample")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_lmi_instance(seed):
    """Small random descriptor system with one Lipschitz channel and random
    gains with ``k = 1``."""
    from daeobs.model import DaeSystem, ObserverGains

    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 4))
    r = int(rng.integers(1, n + 1))
    E = np.diag([1.0] * r + [0.0] * (n - r))
    A = rng.standard_normal((n, n)) - 2 * np.eye(n)
    sys_ = DaeSystem(E=E, A=A, C=rng.standard_normal((1, n)), B_L=rng.standard_normal((n, 1)),
                     F=0.3 * rng.standard_normal((1, n)), f_L=["0"])
    gains = ObserverGains(rng.standard_normal((n, 1)), rng.standard_normal((1, 1)))
    return sys_, gains


ACCEPTANCE = []


@pytest.fixture
def criterion(capsys):
    """Record named checks for one acceptance criterion, print its result line
    and fail the test if any check failed."""
    def report(number, title, checks):
        ok = all(c[1] for c in checks)
        bad = [f"{c[0]} ({c[2]})" for c in checks if not c[1]]
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}"
        line += "; failed: " + ", ".join(bad) if bad else ""
        ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
            for name, good, detail in checks:
                print(f"    [{'ok' if good else 'XX'}] {name}: {detail}")
        assert ok, line
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
