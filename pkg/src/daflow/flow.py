"""Flow of the stable field, with gluing transport and capture events.

The field is ``v^s = (-S, 1)`` in (u, s) components, so ``ds/dt = 1``
exactly and only the ``u`` component needs numerical integration. Steps
are sized to end exactly on cell roofs (the base crossings that define
first returns); wall crossings are localized by bisection and resolved
through the wall gluings; trajectories entering the capture radius of a
cone point stop with a capture record.

The integrator advances a whole batch of trajectories in lockstep with
per-trajectory adaptive steps (classic step-doubling RK4); the stable
field is evaluated on the batch, which is where the time goes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import Captured, NoReturnWithinBudget, OutOfAtlas, StepUnderflow
from .stablefield import StableField
from .surface import Point

EPS_SING = 1e-9  # capture radius around cone points, flat units


@dataclass
class Trajectory:
    start: Point
    status: str  # "complete" | "captured" | "returned" | "truncated"
    end: Point
    t_end: float
    capture: tuple = None  # (cone index, time)
    samples: list = field(default_factory=list)  # (t, Point) accepted steps
    stats: dict = field(default_factory=dict)


class FlowIntegrator:
    def __init__(self, nl, vs: StableField = None, series_tol: float = 1e-12):
        self.nl = nl
        self.surface = nl.surface
        self.vs = vs if vs is not None else StableField(nl)
        self.series_tol = series_tol
        surf = self.surface
        # small atlases around cone points for fast capture radii
        self._cone_atlases = [
            surf.disk_atlas(st, min(0.05 * surf.delta_sigma, 0.02))
            for st in surf.cone_points
        ]
        self._beta_zero = all(s.beta == 0.0 for s in nl.enabled_sites)

    # ---------------- field evaluation ----------------

    def _field_batch(self, cell, u, s):
        """-S at a batch of raw planar points (resolving one gluing step)."""
        if self._beta_zero:
            return np.zeros(len(u))
        surf = self.surface
        u = np.asarray(u, dtype=float)
        s = np.asarray(s, dtype=float)
        bad = (u < 0.0) | (u >= surf.total_len)
        if bad.any():
            u = u.copy()
            s = s.copy()
            for j in np.flatnonzero(bad):
                p = self._resolve_far(float(u[j]), float(s[j]))
                u[j], s[j] = p.u, p.s
        cell2, u2, s2 = surf.normalize_batch(u, s)
        S, _, _ = self.vs.shear_sum_batch(cell2, u2, s2, self.series_tol)
        return -S

    def _resolve_far(self, u, s) -> Point:
        surf = self.surface
        for _ in range(8):
            if 0.0 <= u < surf.total_len:
                return surf.normalize(u, s)
            if u >= surf.total_len:
                w = surf.cross_wall(surf.total_len, s, 1)
                u, s = w.u + (u - surf.total_len), w.s
            else:
                w = surf.cross_wall(0.0, s, -1)
                u, s = w.u + u, w.s
        raise OutOfAtlas("point drifted more than 8 wall crossings in one step")

    # ---------------- lockstep batch integration ----------------

    def integrate_batch(
        self,
        points,
        t_targets,
        tol: float = 1e-10,
        stop_on_return: bool = False,
        record: bool = False,
        budget: float = 1e4,
        max_steps: int = 2_000_000,
    ):
        """Advance each trajectory to its signed target time (or event).

        Returns a list of Trajectory. With ``stop_on_return`` the
        trajectories stop at their first crossing of the base (t > 0
        required) and report status "returned" with the crossing point.
        """
        surf = self.surface
        n = len(points)
        cell = np.array([p.cell for p in points], dtype=int)
        uu = np.array([p.u for p in points], dtype=float)
        ss = np.array([p.s for p in points], dtype=float)
        tt = np.zeros(n)
        t_targets = np.asarray(t_targets, dtype=float)
        sgn = np.where(t_targets >= 0, 1.0, -1.0)
        if stop_on_return:
            sgn = np.ones(n)
        h = np.full(n, 0.05 * min(surf.heights))
        status = np.array(["running"] * n, dtype=object)
        capture = [None] * n
        samples = [[(0.0, points[i])] if record else [] for i in range(n)]
        heights = np.asarray(surf.heights)
        n_evals = 0
        for step in range(max_steps):
            active = status == "running"
            if not active.any():
                break
            idx = np.flatnonzero(active)
            # --- apply s-boundary gluings for trajectories sitting on one
            for j in idx:
                hc = heights[cell[j]]
                if sgn[j] > 0 and ss[j] >= hc - 1e-13:
                    # top gluing: this is a base crossing
                    u2 = uu[j] + surf.deltas[cell[j]]
                    p2 = surf.normalize(u2, 0.0)
                    cell[j], uu[j], ss[j] = p2
                    if record:
                        samples[j].append((tt[j], p2))
                    if stop_on_return and tt[j] > 1e-9:
                        status[j] = "returned"
                elif sgn[j] < 0 and ss[j] <= 1e-13:
                    k = surf.bot_index_at(uu[j], 1)
                    a = surf.perm_bot[k]
                    cell[j] = a
                    uu[j] = uu[j] - surf.deltas[a]
                    ss[j] = float(surf.heights[a])
                    if record:
                        samples[j].append((tt[j], Point(int(cell[j]), uu[j], ss[j])))
            active = status == "running"
            idx = np.flatnonzero(active)
            if len(idx) == 0:
                break
            # --- step sizes: end exactly at the s boundary or the target
            hc = heights[cell[idx]]
            t_bound = np.where(sgn[idx] > 0, hc - ss[idx], ss[idx])
            remaining = np.where(
                np.isinf(t_targets[idx]), np.inf, np.abs(t_targets[idx]) - tt[idx]
            )
            if not stop_on_return:
                done = remaining <= 1e-13
                for j in idx[done]:
                    status[j] = "complete"
                idx = idx[~done]
                if len(idx) == 0:
                    continue
                hc = heights[cell[idx]]
                t_bound = np.where(sgn[idx] > 0, hc - ss[idx], ss[idx])
                remaining = np.where(
                    np.isinf(t_targets[idx]), np.inf, np.abs(t_targets[idx]) - tt[idx]
                )
            h_try = np.minimum(np.minimum(h[idx], t_bound), remaining)
            h_try = np.maximum(h_try, 1e-14)
            # --- step-doubling RK4 on u (s advances exactly)
            u0, s0, c0 = uu[idx], ss[idx], cell[idx]
            d = sgn[idx]
            u_full = self._rk4(c0, u0, s0, d, h_try)
            u_half = self._rk4(c0, u0, s0, d, 0.5 * h_try)
            u_half2 = self._rk4(
                c0, u_half, s0 + d * 0.5 * h_try, d, 0.5 * h_try
            )
            n_evals += 3
            err = np.abs(u_half2 - u_full)
            accept = err <= tol * np.maximum(1.0, np.abs(u0))
            grow = 0.9 * np.power(
                np.maximum(tol * np.maximum(1.0, np.abs(u0)) / np.maximum(err, 1e-300), 1e-4),
                0.2,
            )
            h[idx] = np.clip(h_try * np.clip(grow, 0.2, 5.0), 1e-13, 0.5 * min(surf.heights))
            if np.any(h[idx] <= 2e-13):
                bad = idx[h[idx] <= 2e-13]
                raise StepUnderflow(f"step underflow for trajectories {bad.tolist()}")
            acc = idx[accept]
            if len(acc) == 0:
                continue
            ha = h_try[accept]
            new_u = u_half2[accept]
            new_s = s0[accept] + d[accept] * ha
            # --- wall crossing: bisect the crossing time, then glue
            for m, j in enumerate(acc):
                c = cell[j]
                ulo, uhi = surf.xs[c], surf.xs[c + 1]
                nu = new_u[m]
                if ulo <= nu < uhi or (nu == uhi and sgn[j] < 0):
                    uu[j], ss[j] = nu, new_s[m]
                    tt[j] += ha[m]
                else:
                    tcross, ucross = self._bisect_wall(
                        c, uu[j], ss[j], sgn[j], ha[m], ulo, uhi
                    )
                    wall = uhi if ucross >= uhi else ulo
                    dirn = 1 if ucross >= uhi else -1
                    scross = ss[j] + sgn[j] * tcross
                    q = surf.cross_wall(float(wall), float(scross), dirn)
                    cell[j], uu[j], ss[j] = q
                    tt[j] += tcross
                    if record:
                        samples[j].append((tt[j], q))
                    continue
                if record:
                    samples[j].append((tt[j], Point(int(cell[j]), uu[j], ss[j])))
            # --- capture check
            if self._cone_atlases:
                pc, pu, ps = cell[acc], uu[acc], ss[acc]
                for ci, atlas in enumerate(self._cone_atlases):
                    dist = _atlas_distance(atlas, pc, pu, ps)
                    hit = dist < EPS_SING
                    for m in np.flatnonzero(hit):
                        j = acc[m]
                        status[j] = "captured"
                        capture[j] = (ci, tt[j])
            # --- budget
            over = np.abs(tt[idx]) > budget
            for j in idx[over]:
                status[j] = "budget"
        out = []
        for i in range(n):
            st = status[i]
            if st == "running":
                st = "truncated"
            p_end = Point(int(cell[i]), float(uu[i]), float(ss[i]))
            out.append(
                Trajectory(
                    start=points[i],
                    status={"budget": "truncated"}.get(st, st),
                    end=p_end,
                    t_end=float(sgn[i] * tt[i]),
                    capture=capture[i],
                    samples=samples[i],
                    stats={"field_evals": n_evals},
                )
            )
        return out

    def _rk4(self, cell, u0, s0, d, h):
        k1 = d * self._field_batch(cell, u0, s0)
        k2 = d * self._field_batch(cell, u0 + 0.5 * h * k1, s0 + d * 0.5 * h)
        k3 = d * self._field_batch(cell, u0 + 0.5 * h * k2, s0 + d * 0.5 * h)
        k4 = d * self._field_batch(cell, u0 + h * k3, s0 + d * h)
        return u0 + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    def _bisect_wall(self, c, u0, s0, d, hstep, ulo, uhi):
        """Crossing time of the wall within one accepted step, to 1e-13."""
        lo, hi = 0.0, hstep
        cells = np.array([c])
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            um = self._rk4(cells, np.array([u0]), np.array([s0]), d, np.array([mid]))[0]
            if ulo <= um < uhi:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-13:
                break
        t = hi
        ut = self._rk4(cells, np.array([u0]), np.array([s0]), d, np.array([t]))[0]
        return t, ut

    # ---------------- public wrappers ----------------

    def integrate(self, p: Point, t_target: float, tol: float = 1e-10,
                  record: bool = False, budget: float = 1e4) -> Trajectory:
        if t_target == 0.0:
            return Trajectory(start=p, status="complete", end=p, t_end=0.0,
                              samples=[(0.0, p)] if record else [])
        return self.integrate_batch([p], [t_target], tol=tol, record=record,
                                    budget=budget)[0]

    def first_return(self, p: Point, tol: float = 1e-10, budget: float = 1e4):
        """First return of the forward flow to the base segment.

        Returns (return Point on the base, return time). Raises Captured
        when the trajectory falls into a cone point first, or
        NoReturnWithinBudget.
        """
        tr = self.integrate_batch(
            [p], [np.inf], tol=tol, stop_on_return=True, budget=budget
        )[0]
        if tr.status == "captured":
            raise Captured(tr.capture[0], tr.capture[1])
        if tr.status != "returned":
            raise NoReturnWithinBudget(f"no return within t = {budget}")
        return tr.end, tr.t_end

    def first_return_batch(self, points, tol: float = 1e-10, budget: float = 1e4):
        """Batch first returns; returns list of (Point, time) or Captured info."""
        trs = self.integrate_batch(
            points, [np.inf] * len(points), tol=tol, stop_on_return=True, budget=budget
        )
        return trs

    def flow_renormalized(self, p: Point, t: float, tol: float = 1e-10,
                          tau_max: float = 0.5) -> Point:
        """h_t(p) via the commutation h_t = f^-n o h_{t/lam^n} o f^n.

        Keeps the integrated time below tau_max; the backward f-iterates
        contract the expanding direction, so errors introduced by the
        short integration are not amplified.
        """
        lam = self.nl.lam
        n = max(0, int(math.ceil(math.log(abs(t) / tau_max, lam))) if abs(t) > tau_max else 0)
        q = p
        for _ in range(n):
            q = self.nl.eval_f(q)
        tr = self.integrate(q, t / lam ** n, tol=tol)
        if tr.status != "complete":
            raise Captured(*(tr.capture or (-1, tr.t_end)))
        q = tr.end
        for _ in range(n):
            q = self.nl.eval_f_inverse(q)
        return q

    def renormalization_residual(self, p: Point, t: float, tol: float = 1e-10) -> float:
        """Flat distance between f(h_{lam t}(p)) and h_t(f(p))."""
        lam = self.nl.lam
        tr1 = self.integrate(p, lam * t, tol=tol)
        if tr1.status != "complete":
            raise Captured(*(tr1.capture or (-1, tr1.t_end)))
        lhs = self.nl.eval_f(tr1.end)
        fp = self.nl.eval_f(p)
        tr2 = self.integrate(fp, t, tol=tol)
        if tr2.status != "complete":
            raise Captured(*(tr2.capture or (-1, tr2.t_end)))
        rhs = tr2.end
        d, certified = self.surface.flat_distance(lhs, rhs, radius=0.45 * self.surface.delta_sigma)
        return d if certified else math.inf


def _atlas_distance(atlas, cell, u, s):
    out = np.full(len(u), np.inf)
    for k, quarter in enumerate(atlas.star.quarters):
        for piece in atlas.pieces[k]:
            m = cell == piece.cell
            if not m.any():
                continue
            du = u[m] + piece.tau_u - quarter.apex_u
            ds = s[m] + piece.tau_s - quarter.apex_s
            r = np.hypot(du, ds)
            out[m] = np.minimum(out[m], np.where(r < atlas.radius, r, np.inf))
    return out
