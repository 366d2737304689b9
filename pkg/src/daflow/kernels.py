"""Radial bump kernels used to localize the perturbation.

Two closed-form profiles on [-1, 1], zero outside:

* C1: k(r) = (1 - r^2)^2   (Lipschitz derivative, C1 at the support edge)
* C2: k(r) = (1 - r^2)^3   (continuous second derivative at the edge)

Both are even, unimodal, k(0) = 1, k(+-1) = 0. The SRB machinery needs
the C2 variant; everything else defaults to C1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BumpKernel:
    smoothness: str  # "C1" or "C2"

    @property
    def exponent(self) -> int:
        return 2 if self.smoothness == "C1" else 3

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        w = 1.0 - r * r
        inside = np.abs(r) <= 1.0
        out = np.where(inside, w, 0.0) ** self.exponent
        return np.where(inside, out, 0.0)

    def deriv(self, r):
        """Analytic k'(r); Lipschitz on the line, zero outside [-1, 1]."""
        r = np.asarray(r, dtype=float)
        w = 1.0 - r * r
        m = self.exponent
        inside = np.abs(r) <= 1.0
        out = -2.0 * m * r * np.where(inside, w, 0.0) ** (m - 1)
        return np.where(inside, out, 0.0)

    def inverse_on_unit(self, y: float, tol: float = 1e-15) -> float:
        """Solve k(r) = y for r in [0, 1] by bisection (k is decreasing there)."""
        if not 0.0 <= y <= 1.0:
            raise ValueError(f"k(r) = {y} has no root in [0, 1]")
        lo, hi = 0.0, 1.0
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if float(self(mid)) > y:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    # Certified constants used by the stable-field tail machinery. The shear
    # entry of the Jacobian at a site is controlled by r|k'(r)| (conical form)
    # or w|k'(w)| (squared-radius form); the suprema below are exact maxima
    # of those expressions over the support.
    def sup_x_times_abs_deriv(self) -> float:
        # max of x * |k'(x)| = 2m x^2 (1-x^2)^(m-1) over [0, 1]
        m = self.exponent
        x2 = 1.0 / m  # stationary point of x^2 (1 - x^2)^(m-1)
        return 2.0 * m * x2 * (1.0 - x2) ** (m - 1)

    def sup_abs_deriv(self) -> float:
        # max of |k'(x)| = 2m x (1-x^2)^(m-1) over [0, 1]
        m = self.exponent
        x2 = 1.0 / (2 * m - 1)
        return 2.0 * m * np.sqrt(x2) * (1.0 - x2) ** (m - 1)

    def to_dict(self) -> dict:
        return {"smoothness": self.smoothness}


C1_KERNEL = BumpKernel("C1")
C2_KERNEL = BumpKernel("C2")


def kernel_by_name(name: str) -> BumpKernel:
    if name not in ("C1", "C2"):
        raise ValueError(f"unknown kernel {name!r}, expected 'C1' or 'C2'")
    return C1_KERNEL if name == "C1" else C2_KERNEL
