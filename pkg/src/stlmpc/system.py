"""Discrete-time disturbed linear systems x+ = A x + B u + w."""
from __future__ import annotations

import hashlib
import json
from functools import lru_cache

import numpy as np

from .geometry import GeometryError, HPolytope, minkowski_sum_box, scale_box

L_MODES = ("exact", "lipschitz")


class LinearSystem:
    """A, B with state set X, input set U and disturbance set W (all boxes or
    general HPolytopes; W must be a bounded box).

    ``lipschitz_mode`` selects how disturbances are magnified in the robust
    recursion: "lipschitz" uses L^i W with L the operator 2-norm of A (or the
    ``L`` override), "exact" uses the interval hull of A^i W.
    """

    is_linear = True

    def __init__(self, A, B, X: HPolytope, U: HPolytope, W: HPolytope,
                 lipschitz_mode="lipschitz", L=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.asarray(B, dtype=float).reshape(self.A.shape[0], -1)
        n, m = self.B.shape
        if self.A.shape != (n, n):
            raise ValueError("A must be square and match B")
        if X.dim != n or W.dim != n or U.dim != m:
            raise ValueError("set dimensions do not match A, B")
        wb = W.box_bounds()
        if wb is None or not (np.all(np.isfinite(wb[0])) and np.all(np.isfinite(wb[1]))):
            raise ValueError("W must be a bounded axis-aligned box")
        if lipschitz_mode not in L_MODES:
            raise ValueError(f"lipschitz_mode must be one of {L_MODES}")
        self.X, self.U, self.W = X, U, W
        self.lipschitz_mode = lipschitz_mode
        self.L = float(np.linalg.norm(self.A, 2)) if L is None else float(L)
        if self.L <= 0:
            raise ValueError("Lipschitz constant must be positive")
        self._mag = {}

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def step(self, x, u, w=None):
        x2 = self.A @ x + self.B @ u
        return x2 if w is None else x2 + w

    def w_bounds(self):
        return self.W.box_bounds()

    def u_bounds(self):
        bb = self.U.box_bounds()
        return bb if bb is not None else self.U.bounding_box()

    def x_bounds(self):
        bb = self.X.box_bounds()
        return bb if bb is not None else self.X.bounding_box()

    def magnified(self, j: int) -> HPolytope:
        """h(W, s) with k - s = j: the sum of the first j+1 magnified copies of W."""
        if j < 0:
            raise ValueError("magnification index must be >= 0")
        if j not in self._mag:
            acc = self.W
            for i in range(1, j + 1):
                if self.lipschitz_mode == "exact":
                    term = scale_box(self.W, np.linalg.matrix_power(self.A, i))
                else:
                    term = scale_box(self.W, (self.L ** i) * np.eye(self.n))
                acc = minkowski_sum_box(acc, term)
            self._mag[j] = acc
        return self._mag[j]

    def with_zero_disturbance(self):
        z = np.zeros(self.n)
        return LinearSystem(self.A, self.B, self.X, self.U, HPolytope.box(z, z),
                            self.lipschitz_mode, self.L)

    def to_dict(self):
        return {
            "A": self.A.tolist(), "B": self.B.tolist(),
            "X": self.X.to_dict(), "U": self.U.to_dict(), "W": self.W.to_dict(),
            "lipschitz_mode": self.lipschitz_mode, "L": self.L,
        }

    def digest(self):
        txt = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(txt.encode()).hexdigest()[:16]


__all__ = ["LinearSystem", "L_MODES", "GeometryError"]
