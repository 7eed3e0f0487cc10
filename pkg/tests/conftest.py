import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from conjlab import ConjugacyProblem, DichotomySpec, LinearSystemSpec, NonlinearitySpec, get_entry

settings.register_profile(
    "numerics", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("numerics")

SEED = 42


def _sech2(x):
    # stable 1/cosh^2
    e = np.exp(-2.0 * np.abs(x))
    return 4.0 * e / (1.0 + e) ** 2


def saddle_system(nu=0.1, eps=3.0):
    """A = diag(-1, 1), P0 = diag(1, 0), f = nu e^{-eps t} (tanh y2, sin y1)."""
    sys = LinearSystemSpec(2, lambda t: np.diag([-1.0, 1.0]), 1.0)

    def f(t, u):
        c = nu * np.exp(-eps * np.asarray(t, float))[:, None]
        return c * np.stack([np.tanh(u[:, 1]), np.sin(u[:, 0])], axis=-1)

    def df(t, u):
        c = nu * np.exp(-eps * np.asarray(t, float))
        J = np.zeros((len(u), 2, 2))
        J[:, 0, 1] = c * _sech2(u[:, 1])
        J[:, 1, 0] = c * np.cos(u[:, 0])
        return J

    def d2f(t, u):
        c = nu * np.exp(-eps * np.asarray(t, float))
        H = np.zeros((len(u), 2, 2, 2))
        H[:, 0, 1, 1] = -2 * c * np.tanh(u[:, 1]) * _sech2(u[:, 1])
        H[:, 1, 0, 0] = -c * np.sin(u[:, 0])
        return H

    env = lambda s: nu * np.exp(-eps * np.asarray(s, float))  # noqa: E731
    nl = NonlinearitySpec(f, env, env, df, d2f, V_env=lambda s: 2 * env(s))
    spec = DichotomySpec(
        np.diag([1.0, 0.0]),
        lambda s: np.ones_like(np.asarray(s, float)),
        lambda t: np.exp(-np.asarray(t, float)),
        {},
    )
    return sys, nl, spec


def central(fn, x, delta):
    """Independent central-difference Jacobian, derivative index last."""
    x = np.asarray(x, float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = delta
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * delta))
    return np.stack(cols, axis=-1)


def rel_err(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300))


def seeded_points(n=20, seed=SEED, d=1):
    rng = np.random.default_rng(seed)
    taus = rng.uniform(0, 3, n)
    pts = rng.uniform(-2, 2, (n, d)) if d > 1 else rng.uniform(-2, 2, n)[:, None]
    return taus, pts


@pytest.fixture(scope="session")
def saddle_problem():
    sys, nl, spec = saddle_system()
    return ConjugacyProblem(sys, spec, nl)


@pytest.fixture(scope="session")
def s1():
    return get_entry("S1").problem()


@pytest.fixture(scope="session")
def s2():
    return get_entry("S2").problem()


@pytest.fixture(scope="session")
def s3():
    return get_entry("S3").problem()


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
