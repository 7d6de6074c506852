"""Coefficient fields and the source term used in the experiments."""
import numpy as np


def kappa_one(x1, x2):
    return np.ones_like(np.asarray(x1, dtype=np.float64))


def kappa_sine(x1, x2):
    return 2.0 + np.sin(np.pi * x1) * np.sin(np.pi * x2)


def kappa_sine_half(x1, x2):
    return 2.0 + np.sin(0.5 * np.pi * x1) * np.sin(0.5 * np.pi * x2)


def source(x1, x2):
    return 5.0 * np.pi ** 2 * np.sin(2.0 * np.pi * x1) * np.sin(np.pi * x2)


KAPPAS = {
    "one": kappa_one,
    "sine": kappa_sine,
    "sine-half": kappa_sine_half,
}


class scaled:
    """alpha * fn, picklable so it can cross process boundaries."""

    def __init__(self, fn, alpha):
        self.fn, self.alpha = fn, float(alpha)

    def __call__(self, x1, x2):
        return self.alpha * self.fn(x1, x2)
