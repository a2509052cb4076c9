import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    max_examples=40,
)
settings.load_profile("default")


FIXTURE30 = "tests/fixtures/fixture30"


def numeric_grad(fn, arrays, which, eps=1e-5):
    """Central finite differences of scalar fn w.r.t. arrays[which].

    fn receives the list of (possibly perturbed) arrays and returns a float.
    Independent of the tape: this is the oracle the tape is checked against.
    """
    arrays = [a.astype(np.float64).copy() for a in arrays]
    target = arrays[which]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = fn(arrays)
        flat[i] = orig - eps
        f_minus = fn(arrays)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


def away_from_kinks(rng, shape, low=-1.0, high=1.0, margin=1e-3):
    """Uniform values rejected out of the kink neighborhood around 0."""
    x = rng.uniform(low, high, size=shape)
    while True:
        close = np.abs(x) < margin
        if not close.any():
            return x
        x[close] = rng.uniform(low, high, size=int(close.sum()))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
