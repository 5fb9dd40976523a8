"""Kick potentials with closed-form derivatives."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Potential"]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Potential:
    """Cosine family ``F(x) = sum_i a_i (1 - cos 2 pi x_i)/2 + c prod_i (1 - cos 2 pi x_i)``.

    The cross term is only used when ``d == 2``.  ``Potential.free(d)``
    builds ``F = 0``, which is not a valid kick (its minimum is not
    unique) but is handy for mass-conservation checks.

    Points are arrays of shape ``(m, d)`` (a single point may be given as
    a length-``d`` vector).
    """

    name: str
    amplitudes: tuple
    cross: float = 0.0
    validated: bool = True

    def __post_init__(self):
        a = tuple(float(v) for v in np.atleast_1d(self.amplitudes))
        object.__setattr__(self, "amplitudes", a)
        if self.d not in (1, 2):
            raise ValueError("only d = 1 or 2 is supported")
        if self.validated:
            if any(v <= 0 for v in a) or self.cross < 0:
                raise ValueError("amplitudes must be > 0 and the cross term >= 0")
            if np.linalg.eigvalsh(self.hess(np.zeros(self.d))[0]).min() <= 0:
                raise ValueError("D^2 F(0) is not positive definite")

    @classmethod
    def cosine(cls, amplitude=1.0, d: int = 1, cross: float = 0.0) -> "Potential":
        a = np.broadcast_to(np.asarray(amplitude, dtype=float), (d,))
        return cls("cosine", tuple(a), cross if d == 2 else 0.0)

    @classmethod
    def with_curvature(cls, M: float, d: int = 1) -> "Potential":
        """Cosine potential with ``D^2 F(0) = M I``."""
        return cls.cosine(M / (2 * np.pi**2), d=d)

    @classmethod
    def free(cls, d: int = 1) -> "Potential":
        return cls("free", (0.0,) * d, 0.0, validated=False)

    @property
    def d(self) -> int:
        return len(self.amplitudes)

    def _prep(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1 and x.shape[0] == self.d:
            x = x[None, :]
        return x.reshape(-1, self.d)

    def value(self, x) -> np.ndarray:
        x = self._prep(x)
        a = np.asarray(self.amplitudes)
        w = 1.0 - np.cos(TWO_PI * x)
        out = 0.5 * (w * a).sum(axis=1)
        if self.d == 2 and self.cross:
            out = out + self.cross * w[:, 0] * w[:, 1]
        return out

    def grad(self, x) -> np.ndarray:
        x = self._prep(x)
        a = np.asarray(self.amplitudes)
        w = 1.0 - np.cos(TWO_PI * x)
        dw = TWO_PI * np.sin(TWO_PI * x)
        g = 0.5 * a * dw
        if self.d == 2 and self.cross:
            g = g + self.cross * np.stack([dw[:, 0] * w[:, 1], w[:, 0] * dw[:, 1]], axis=1)
        return g

    def hess(self, x) -> np.ndarray:
        x = self._prep(x)
        a = np.asarray(self.amplitudes)
        w = 1.0 - np.cos(TWO_PI * x)
        dw = TWO_PI * np.sin(TWO_PI * x)
        ddw = TWO_PI**2 * np.cos(TWO_PI * x)
        H = np.zeros((x.shape[0], self.d, self.d))
        idx = np.arange(self.d)
        H[:, idx, idx] = 0.5 * a * ddw
        if self.d == 2 and self.cross:
            c = self.cross
            H[:, 0, 0] += c * ddw[:, 0] * w[:, 1]
            H[:, 1, 1] += c * w[:, 0] * ddw[:, 1]
            H[:, 0, 1] = H[:, 1, 0] = c * dw[:, 0] * dw[:, 1]
        return H

    def third(self, x) -> np.ndarray:
        """Third derivative tensor, shape (m, d, d, d)."""
        x = self._prep(x)
        a = np.asarray(self.amplitudes)
        w = 1.0 - np.cos(TWO_PI * x)
        dw = TWO_PI * np.sin(TWO_PI * x)
        ddw = TWO_PI**2 * np.cos(TWO_PI * x)
        dddw = -(TWO_PI**3) * np.sin(TWO_PI * x)
        T = np.zeros((x.shape[0], self.d, self.d, self.d))
        idx = np.arange(self.d)
        T[:, idx, idx, idx] = 0.5 * a * dddw
        if self.d == 2 and self.cross:
            c = self.cross
            T[:, 0, 0, 0] += c * dddw[:, 0] * w[:, 1]
            T[:, 1, 1, 1] += c * w[:, 0] * dddw[:, 1]
            t001 = c * ddw[:, 0] * dw[:, 1]
            t011 = c * dw[:, 0] * ddw[:, 1]
            for i, j, k in ((0, 0, 1), (0, 1, 0), (1, 0, 0)):
                T[:, i, j, k] = t001
            for i, j, k in ((0, 1, 1), (1, 0, 1), (1, 1, 0)):
                T[:, i, j, k] = t011
        return T

    def curvature_at_min(self) -> np.ndarray:
        return self.hess(np.zeros(self.d))[0]
