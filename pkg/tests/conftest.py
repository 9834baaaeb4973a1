import numpy as np
import pytest

from contractsos import informativity as inf
from contractsos import synthesis as syn
from contractsos.contraction import CompactSet
from contractsos.polyalg import coefficients_in_basis, linear_field, monomial_basis
from contractsos.simkit import UAV_B, UAV_X0, UavParams, uav_polyvec


def uav_identified(seed=0, samples=50, epsilon=0.0):
    K = CompactSet(UAV_X0, 1.0)
    b = monomial_basis(4, 2)
    theta = coefficients_in_basis(uav_polyvec(UavParams()), b)
    X = K.sample(samples, np.random.default_rng(seed))
    data, noise = inf.generate_dataset(theta, b, X, epsilon, seed=seed + 1)
    return K, b, inf.identify(data, b, noise)


def uav_problem(seed=0, **kw):
    K, b, bundle = uav_identified(seed)
    return syn.SynthesisProblem(np.eye(4), K, UAV_B, bundle.phi_lse, bundle.N, b, seed=seed, **kw)


def linear_problem(A, center=(1.5, 1.5), radius=1.0, epsilon=0.0, seed=0, **kw):
    """Identified planar linear system with ``B = I``."""
    A = np.asarray(A, float)
    n = A.shape[0]
    K = CompactSet(np.asarray(center, float), radius)
    b = monomial_basis(n, 1, include_constant=False)
    theta = coefficients_in_basis(linear_field(A), b)
    X = K.sample(30, np.random.default_rng(seed))
    data, noise = inf.generate_dataset(theta, b, X, epsilon, seed=seed + 1)
    bundle = inf.identify(data, b, noise)
    return syn.SynthesisProblem(np.eye(n), K, np.eye(n), bundle.phi_lse, bundle.N, b, seed=seed, **kw)


@pytest.fixture(scope="session")
def uav_relaxed():
    problem = uav_problem()
    try:
        result = syn.synthesize_max_contraction(problem)
    except syn.UnverifiedError as e:
        result = e.result
    return problem, result


@pytest.fixture(scope="session")
def double_integrator():
    problem = linear_problem([[0.0, 1.0], [0.0, 0.0]], gamma_target=-0.5)
    return problem, syn.synthesize(problem)


ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion_line():
    """Record the one-line verdict of an acceptance criterion."""
    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
