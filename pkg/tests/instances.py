"""Random inputs shared by unit and acceptance tests."""

import numpy as np

from multires.transport import EmpiricalMeasure, LinearMap


def random_invertible(rng, d):
    kind = rng.integers(3)
    if kind == 0:
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        return q
    if kind == 1:
        return np.eye(d) + 0.5 * rng.normal(size=(d, d))
    while True:
        m = rng.normal(size=(d, d)) * rng.choice([0.3, 1.0, 3.0])
        if np.linalg.cond(m) < 1e6:
            return m


def truncation_instance(rng, J=3, n=16):
    """Uniform data measure on R^(2^J) plus per-level inverse pairs."""
    d = 2**J
    scales = rng.choice([0.1, 1.0, 5.0], size=d)
    data = EmpiricalMeasure.uniform(rng.normal(size=(n, d)) * scales)
    fwd, bwd = [], []
    for j in range(1, J + 1):
        m = random_invertible(rng, 2**j)
        fwd.append(LinearMap(m))
        bwd.append(LinearMap(np.linalg.inv(m)))
    return data, fwd, bwd
