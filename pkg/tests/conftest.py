import numpy as np
import pytest
from hypothesis import settings

from gradflow_tensor.tensor_core import ComponentModel, GroundTruth, sample_sphere

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_truth(rng, d, r, orthonormal=False):
    if orthonormal:
        Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        U = Q[:r]
    else:
        U = sample_sphere(rng, r, d)
    return GroundTruth(rng.uniform(0.2, 1.5, r), U, orthonormal=orthonormal)


def random_model(rng, d, m, lo=0.05, hi=1.0):
    return ComponentModel(sample_sphere(rng, m, d), rng.uniform(lo, hi, m), d)


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def fd_gradient(spec, W, j, rel_step=1e-3):
    """Five-point central difference of the loss in the raw coordinates of row ``j``."""
    from gradflow_tensor.flow_dynamics import loss

    h = rel_step * np.linalg.norm(W[j])

    def at(k, t):
        X = W.copy()
        X[j, k] += t
        return loss(spec, ComponentModel.from_vectors(X))

    return np.array([(at(k, -2 * h) - 8 * at(k, -h) + 8 * at(k, h) - at(k, 2 * h)) / (12 * h)
                     for k in range(W.shape[1])])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"AC{n:<2} {'PASS' if ok else 'FAIL'}  {detail}")
