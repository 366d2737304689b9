"""The stable vector field of the perturbed map, summed with certified tails.

The field is ``v^s = e_h - S e_v`` where, in (u, s) components, ``e_h``
is the unit ``+s`` (contracting/flow) direction and ``e_v`` the unit
``+u`` (expanding) direction, so ``v^s = (-S, 1)``. The shear value is
the series

    S(x) = sum_{i>=0}  lam^-i b(f^i x) / prod_{j<=i} a(f^j x),

accumulated along the forward orbit with adaptive stopping: after N
terms the tail is bounded by |P_N| * Q where P_N is the running product
and Q a certified bound on the remaining sum. Q comes either from the
global bound (per-step factor 1/(lam * a_min) < 1) or, once the orbit is
inside a site's certified contraction ball, from the local Lipschitz
bound |b| <= lip_b * r with geometric radius decay.

The solved recursion S(f x) = lam (a(x) S(x) - b(x)) and the exact
contraction d_x f v^s(x) = lam^-1 v^s(f x) are what the tests check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConeCapture, SeriesDivergence
from .perturbation import NonlinearMap
from .surface import Point

CONE_FLOOR = 1e-14  # orbit radius below which the series is declared captured


@dataclass
class StableVector:
    point: Point
    shear: float  # S
    depth: int  # N, number of terms summed
    tail_bound: float

    @property
    def vector(self):
        """(u, s) components; the s component is exactly 1."""
        return (-self.shear, 1.0)

    def norm(self) -> float:
        return math.hypot(self.shear, 1.0)


class StableField:
    """Evaluator bound to one NonlinearMap; caches certified constants."""

    def __init__(self, nl: NonlinearMap, max_terms: int = 4000):
        self.nl = nl
        self.lam = nl.lam
        self.max_terms = max_terms
        b_sup, lip_b, a_min = nl.shear_bounds()
        self.b_sup = b_sup
        self.lip_b = lip_b
        self.a_min = a_min
        self.rho_glob = 1.0 / (self.lam * a_min) if a_min > 0 else math.inf
        self.q_glob = (
            b_sup * self.rho_glob / (1.0 - self.rho_glob)
            if self.rho_glob < 1.0
            else math.inf
        )
        # per-site contraction-ball data (certified by the cover certificate)
        self._balls = []
        if any(s.beta != 0.0 for s in nl.enabled_sites):
            cover = nl.cover
            for site, srep in zip(nl.enabled_sites, cover["sites"]):
                radius = 0.98 * srep["t0"]
                contraction = 1.0 - cover["delta"]
                q_ball_rate = contraction * self.rho_glob
                self._balls.append((site, radius, contraction, q_ball_rate))

    def _q_at(self, p: Point):
        """Certified tail constant for an orbit currently at p (or inf)."""
        for site, radius, contraction, rate in self._balls:
            hit = site.displacement(p)
            if hit is None:
                continue
            r = math.hypot(hit[0], hit[1])
            if r < radius and rate < 1.0:
                return self.lip_b * r * self.rho_glob / (1.0 - rate)
        return self.q_glob

    def shear_sum(self, p: Point, tol: float = 1e-12):
        """(S, N, tail_bound) at p; raises SeriesDivergence / ConeCapture."""
        nl = self.nl
        lam = self.lam
        x = p
        S = 0.0
        P = None
        for i in range(self.max_terms):
            a, b, _ = nl.jacobian(x)
            if a <= 0:
                raise SeriesDivergence(f"a = {a} <= 0 at orbit step {i}")
            P = (1.0 / a) if P is None else P / (lam * a)
            S += P * b
            x_next = nl.eval_f(x)
            if self._near_cone(x_next):
                raise ConeCapture(f"orbit numerically on a cone point at step {i + 1}")
            tail = abs(P) * self._q_at(x_next)
            if tail <= tol:
                return S, i + 1, tail
            x = x_next
        raise SeriesDivergence(
            f"series tail not certified within {self.max_terms} terms "
            "(amplitude outside the validated range?)"
        )

    def _near_cone(self, p: Point) -> bool:
        for st in self.nl.surface.cone_points:
            if (
                p.cell == st.rep.cell
                and abs(p.u - st.rep.u) < CONE_FLOOR
                and abs(p.s - st.rep.s) < CONE_FLOOR
            ):
                return True
        return False

    def eval_vs(self, p: Point, tol: float = 1e-12) -> StableVector:
        S, n, tail = self.shear_sum(p, tol)
        return StableVector(point=p, shear=S, depth=n, tail_bound=tail)

    # ---------------- batch ----------------

    def shear_sum_batch(self, cell, u, s, tol: float = 1e-12):
        """Vectorized shear sums; returns (S, N, tail) arrays.

        The loop runs until every element's tail closes; elements finish
        independently. Ball tails use the site-distance arrays.
        """
        nl = self.nl
        lam = self.lam
        cell = np.asarray(cell, dtype=int).copy()
        u = np.asarray(u, dtype=float).copy()
        s = np.asarray(s, dtype=float).copy()
        n = len(u)
        S = np.zeros(n)
        P = np.ones(n)
        first = True
        depth = np.zeros(n, dtype=int)
        tail = np.full(n, np.inf)
        active = np.ones(n, dtype=bool)
        for i in range(self.max_terms):
            idx = np.flatnonzero(active)
            if len(idx) == 0:
                break
            a, b = nl.jacobian_batch(cell[idx], u[idx], s[idx])
            if np.any(a <= 0):
                raise SeriesDivergence("a <= 0 along a batch orbit")
            if first:
                P[idx] = 1.0 / a
                first = False
            else:
                P[idx] = P[idx] / (lam * a)
            S[idx] += P[idx] * b
            c2, u2, s2 = nl.eval_f_batch(cell[idx], u[idx], s[idx])
            cell[idx], u[idx], s[idx] = c2, u2, s2
            q = self._q_batch(c2, u2, s2)
            t = np.abs(P[idx]) * q
            done = t <= tol
            tail[idx[done]] = t[done]
            depth[idx[done]] = i + 1
            active[idx[done]] = False
        if active.any():
            raise SeriesDivergence(
                f"{int(active.sum())} series tails not certified within "
                f"{self.max_terms} terms"
            )
        return S, depth, tail

    def _q_batch(self, cell, u, s):
        q = np.full(len(u), self.q_glob)
        for site, radius, contraction, rate in self._balls:
            if rate >= 1.0:
                continue
            r = site.distance_batch(cell, u, s)
            m = r < radius
            q[m] = np.minimum(q[m], self.lip_b * r[m] * self.rho_glob / (1.0 - rate))
        return q

    # ---------------- derived checks ----------------

    def contraction_residual(self, p: Point, tol: float = 1e-12) -> float:
        """|| d_p f v^s(p) - lam^-1 v^s(f p) ||, from analytic Jacobians."""
        a, b, _ = self.nl.jacobian(p)
        S_p, _, _ = self.shear_sum(p, tol)
        fp = self.nl.eval_f(p)
        S_fp, _, _ = self.shear_sum(fp, tol)
        # d f (-S, 1) = (-a S + b, 1/lam); lam^-1 v^s(fp) = (-S(fp)/lam, 1/lam)
        return abs((-a * S_p + b) + S_fp / self.lam)

    def recursion_residual(self, p: Point, tol: float = 1e-12) -> float:
        """|S(f p) - lam (a(p) S(p) - b(p))|, the solved series recursion."""
        a, b, _ = self.nl.jacobian(p)
        S_p, _, _ = self.shear_sum(p, tol)
        S_fp, _, _ = self.shear_sum(self.nl.eval_f(p), tol)
        return abs(S_fp - self.lam * (a * S_p - b))

    def slope_bound(self) -> float:
        """Certified sup |S| over points whose orbit stays in the expansion
        region: b_sup * lam a* / (lam a* - 1) with a* = 1 + eta."""
        a_star = 1.0 + self.nl.cover["eta"]
        return self.b_sup * self.lam * a_star / (self.lam * a_star - 1.0)


def continue_in_beta(pa, site_specs, beta_grid, p_set, kernel=None, tol=1e-10):
    """Sup-norm deltas of v^s between consecutive amplitudes on a beta grid.

    Rebuilds the map at each beta (alpha and sites fixed); returns a list
    of dicts with consecutive sup-norm differences and the refinement
    ratio diagnostics.
    """
    from .kernels import C1_KERNEL
    from .perturbation import SiteSpec

    kernel = kernel or C1_KERNEL
    values = []
    for beta in beta_grid:
        specs = [
            SiteSpec(sp.kind, sp.alpha, beta, sp.which, sp.enabled)
            for sp in site_specs
        ]
        nl = NonlinearMap(pa, specs, kernel=kernel)
        field = StableField(nl)
        shears = []
        for p in p_set:
            if beta == 0.0:
                shears.append(0.0)
            else:
                shears.append(field.shear_sum(p, tol)[0])
        values.append(np.array(shears))
    out = []
    for i in range(len(beta_grid) - 1):
        delta = float(np.max(np.abs(values[i + 1] - values[i])))
        out.append(
            {
                "beta_from": float(beta_grid[i]),
                "beta_to": float(beta_grid[i + 1]),
                "sup_delta": delta,
            }
        )
    return out
