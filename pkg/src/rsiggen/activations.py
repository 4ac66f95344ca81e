"""Scalar activation functions applied componentwise throughout the library.

The reservoir recursion needs activations that vanish at zero and are
bounded, strictly monotone and non-polynomial; the generator's coefficient
maps have no such restriction. ``Activation.satisfies_assumption1`` reports
which case an activation is valid for.
"""

from __future__ import annotations

import enum

import numpy as np


class Activation(enum.Enum):
    """Componentwise nonlinearity with a closed-form derivative.

    Sigmoid variants are evaluated through tanh (sigmoid(z) is exactly
    (1 + tanh(z/2))/2), which is overflow-free and uses numpy's fast
    vectorized tanh.
    """

    TANH = "tanh"
    SHIFTED_SIGMOID = "shifted_sigmoid"
    SIGMOID = "sigmoid"

    def __call__(self, z: np.ndarray, out: np.ndarray = None) -> np.ndarray:
        if self is Activation.TANH:
            return np.tanh(z, out=out)
        if out is None:
            out = np.empty_like(np.asarray(z, dtype=np.float64))
        np.multiply(z, 0.5, out=out)
        np.tanh(out, out=out)
        out *= 0.5
        if self is Activation.SIGMOID:
            out += 0.5
        return out

    def deriv(self, z: np.ndarray) -> np.ndarray:
        """First derivative evaluated componentwise at ``z``."""
        return self.deriv_from_value(self(z))

    def deriv_from_value(self, y: np.ndarray, out: np.ndarray = None) -> np.ndarray:
        """Derivative expressed through the activation value ``y = sigma(z)``.

        Lets backward passes reuse cached forward activations instead of
        evaluating another transcendental.
        """
        if self is Activation.SIGMOID:
            if out is None:
                out = np.empty_like(y)
            np.subtract(1.0, y, out=out)
            out *= y
            return out
        out = np.multiply(y, y, out=out)
        np.subtract(1.0 if self is Activation.TANH else 0.25, out, out=out)
        return out

    @property
    def satisfies_assumption1(self) -> bool:
        """True when sigma(0)=0 holds (required by the reservoir schemes)."""
        return self is not Activation.SIGMOID

    @property
    def bound(self) -> float:
        """Supremum of |sigma| over the real line."""
        return 0.5 if self is Activation.SHIFTED_SIGMOID else 1.0
