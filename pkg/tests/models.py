"""Model and conformal-factor fixtures shared by the test modules."""
from __future__ import annotations

import numpy as np

from finslerkit import jets, lagrangian
from finslerkit.sampling import SampleSpec

SPHERE_BOX = dict(low=[0.3, -1.0], high=[np.pi - 0.3, 1.0])


def randers3():
    def a(x):
        return [
            [1 + 0.2 * jets.sin(x[0]), 0.1 * x[1], 0.0],
            [0.1 * x[1], 1 + 0.1 * x[0] * x[0], 0.0],
            [0.0, 0.0, 1.5 + 0.1 * jets.cos(x[2])],
        ]

    def b(x):
        return [0.2 * jets.cos(x[1]), 0.1 * x[0], 0.15]

    return lagrangian.randers(3, a, b)


def randers2_const(b1=0.3, b2=0.0):
    return lagrangian.randers(2, lambda x: [[1.0, 0.0], [0.0, 1.0]], lambda x: [b1, b2])


def riemannian3():
    def a(x):
        return [
            [2 + jets.sin(x[0] * x[1]), 0.3 * x[2], 0.0],
            [0.3 * x[2], 1.5 + 0.2 * x[0] * x[0], 0.1 * jets.cos(x[1])],
            [0.0, 0.1 * jets.cos(x[1]), 1 + 0.25 * jets.exp(x[2] * 0.5)],
        ]

    return lagrangian.riemannian(3, a)


def quartic2():
    """A non-Riemannian custom structure ``L^2 = q + 0.1 (y1^4 + y2^4) / q`` with x-dependent q."""

    def L2(x, y):
        q = (1 + 0.2 * jets.sin(x[0])) * y[0] * y[0] + (1 + 0.1 * x[1] * x[1]) * y[1] * y[1]
        return q + 0.1 * (y[0] ** 4 + y[1] ** 4) / q

    return lagrangian.custom(2, L2, "quartic")


def families():
    """``(model, SampleSpec)`` for every shipped family."""
    return {
        "euclidean": (lagrangian.euclidean(3), SampleSpec(count=100, seed=1)),
        "sphere": (lagrangian.sphere(), SampleSpec(count=100, seed=2, **SPHERE_BOX)),
        "riemannian": (riemannian3(), SampleSpec(count=100, seed=3, low=-0.8, high=0.8)),
        "randers": (randers3(), SampleSpec(count=100, seed=4)),
        "custom": (quartic2(), SampleSpec(count=100, seed=5)),
    }


def sigma_linear(dim):
    return lagrangian.linear_sigma([0.3, -0.2, 0.1][:dim], 0.1)


def sigma_bump(dim):
    return lagrangian.gaussian_bump(0.4, [0.2, -0.1, 0.3][:dim], 0.9)
