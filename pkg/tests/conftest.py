import numpy as np
import pytest

from apc import LinearSystem, generate_instance


def gaussian_system(m, s, seed, noise_power=1e-4, complex_data=False):
    """Plain random instance with known ground truth and noise."""
    rng = np.random.default_rng(seed)
    if complex_data:
        a = rng.standard_normal((m, s)) + 1j * rng.standard_normal((m, s))
        x_star = rng.standard_normal(s) + 1j * rng.standard_normal(s)
        w = np.sqrt(noise_power / 2.0) * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
    else:
        a = rng.standard_normal((m, s))
        x_star = rng.standard_normal(s)
        w = np.sqrt(noise_power) * rng.standard_normal(m)
    return LinearSystem(a=a, y=a @ x_star + w, x_star=x_star, w_tilde=w)


def conditioned_system(m, s, kappa, seed, noise_power=1e-4):
    rng = np.random.default_rng(seed)
    return generate_instance(m, s, kappa, noise_power, rng)


@pytest.fixture
def small_noisy_system():
    return gaussian_system(8, 3, seed=42)
