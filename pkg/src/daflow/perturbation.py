"""Non-linear perturbation of the linear map at conical or regular fixed points.

The perturbed map is ``f = phi o C`` where ``C`` damps the expanding
displacement component inside each site's support disk:

* conical site (angle 2*pi*n): in any cone-sector frame with flat radius
  ``r = d(p, sigma)``, ``(du, ds) -> (g(r)/lam * du, ds)`` with
  ``g(r) = lam + beta * k(r / alpha)``; support radius ``alpha``;
* regular site: same with ``g(r) = lam + beta * k(r^2 / alpha)``; support
  radius ``sqrt(alpha)``.

Applying ``phi`` afterwards gives exactly the radial normal form
``(du, ds) -> (g * du, ds / lam)``: the expanding component is scaled by
``g`` and the contracting one by ``1/lam``. Factoring through ``phi``
keeps every intermediate point inside the site atlas, whose radius only
needs to cover the support disk. ``lam`` is the dilation of the
stabilized linear map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AtConePoint,
    CoverFailure,
    NoRootInRange,
    RootBracketFailure,
    ToleranceNotMet,
)
from .kernels import BumpKernel, C1_KERNEL
from .linearmap import LinearPA
from .surface import Point, Star, TranslationSurface


@dataclass
class SiteSpec:
    """User-facing site request. ``which`` picks among cone points (kind
    'conical') or marked points (kind 'regular') of the surface."""

    kind: str  # "conical" | "regular"
    alpha: float
    beta: float
    which: int = 0
    enabled: bool = True


@dataclass
class FixedPointRecord:
    site_index: int
    t0: float
    p_points: list  # on the 2n vertical rays, counterclockwise
    q_points: list  # on the horizontal rays at the same radius
    multiplier: float  # expanding multiplier at each p point


class _Site:
    """Bound site: geometry, atlas and flattened piece table."""

    def __init__(self, surface, spec: SiteSpec, lam: float, kernel: BumpKernel):
        self.spec = spec
        self.kind = spec.kind
        self.alpha = float(spec.alpha)
        self.beta = float(spec.beta)
        self.enabled = spec.enabled
        if self.kind == "conical":
            stars = surface.cone_points
            self.support = self.alpha
        elif self.kind == "regular":
            stars = surface.marked_points
            self.support = math.sqrt(self.alpha)
        else:
            raise ValueError(f"unknown site kind {spec.kind!r}")
        if not stars:
            raise ValueError(f"surface has no {spec.kind} points")
        self.star: Star = stars[spec.which]
        self.center: Point = self.star.rep
        atlas_radius = self.support * 1.02
        self.atlas = surface.disk_atlas(self.star, atlas_radius)
        # flattened piece table for batch work
        rows = []
        for k, quarter in enumerate(self.atlas.star.quarters):
            for piece in self.atlas.pieces[k]:
                rows.append(
                    (piece.cell, quarter.apex_u - piece.tau_u, quarter.apex_s - piece.tau_s, k)
                )
        self._cells = np.array([r[0] for r in rows])
        self._apex_u = np.array([r[1] for r in rows])
        self._apex_s = np.array([r[2] for r in rows])
        self._kidx = np.array([r[3] for r in rows])
        self.lam = lam
        self.kernel = kernel

    # radial multiplier g and its use in the damping correction
    def g_of_r(self, r):
        k = self.kernel
        if self.kind == "conical":
            return self.lam + self.beta * k(np.asarray(r) / self.alpha)
        return self.lam + self.beta * k(np.square(r) / self.alpha)

    def jacobian_terms(self, du, ds):
        """Analytic (a, b) of f at displacement (du, ds) inside the disk."""
        r = np.hypot(du, ds)
        k = self.kernel
        if self.kind == "conical":
            rho = r / self.alpha
            g = self.lam + self.beta * k(rho)
            kp = k.deriv(rho)
            with np.errstate(invalid="ignore", divide="ignore"):
                a = g + self.beta * kp * np.square(du) / (self.alpha * r)
                b = self.beta * kp * du * ds / (self.alpha * r)
            a = np.where(r > 0, a, self.lam + self.beta)
            b = np.where(r > 0, b, 0.0)
        else:
            w = np.square(r) / self.alpha
            g = self.lam + self.beta * k(w)
            kp = k.deriv(w)
            a = g + 2.0 * self.beta * kp * np.square(du) / self.alpha
            b = 2.0 * self.beta * kp * du * ds / self.alpha
        return a, b

    def radial_map(self, t):
        """h(t) = g(t) * t, the action on the vertical rays."""
        return self.g_of_r(t) * t

    def radial_multiplier(self, t0: float) -> float:
        """h'(t0) with g(t0) = 1: the expanding multiplier at the p points."""
        k = self.kernel
        if self.kind == "conical":
            return 1.0 + self.beta * t0 * float(k.deriv(t0 / self.alpha)) / self.alpha
        w = t0 * t0 / self.alpha
        return 1.0 + 2.0 * self.beta * t0 * t0 * float(k.deriv(w)) / self.alpha

    # ---- displacement lookup (scalar and batch) ----

    def displacement(self, p: Point):
        hit = self.atlas.locate(p)
        if hit is None:
            return None
        theta, r, (du, ds), k = hit
        if r >= self.support:
            return None
        return du, ds, k

    def displacement_batch(self, cell, u, s):
        n = len(u)
        du = np.full(n, np.nan)
        ds = np.full(n, np.nan)
        kq = np.full(n, -1, dtype=int)
        for i in range(len(self._cells)):
            m = cell == self._cells[i]
            if not m.any():
                continue
            cu = u[m] - self._apex_u[i]
            cs = s[m] - self._apex_s[i]
            r2 = cu * cu + cs * cs
            axis = self._kidx[i] % 4
            inq = _in_quarter_np(cu, cs, axis) & (r2 < self.support * self.support) & (r2 > 0)
            if not inq.any():
                continue
            idx = np.flatnonzero(m)[inq]
            du[idx] = cu[inq]
            ds[idx] = cs[inq]
            kq[idx] = self._kidx[i]
        return kq >= 0, du, ds, kq

    def place_batch(self, kq, du, ds):
        """Surface coordinates of displacements (du, ds) in quarters kq."""
        n = len(du)
        cell = np.full(n, -1, dtype=int)
        uu = np.empty(n)
        ss = np.empty(n)
        surf = self.atlas._surface
        for i in range(len(self._cells)):
            pu = self._apex_u[i] + du
            ps = self._apex_s[i] + ds
            ok = (
                (cell < 0)
                & (kq == self._kidx[i])
                & (surf.xs[self._cells[i]] - surf.SNAP <= pu)
                & (pu < surf.xs[self._cells[i] + 1])
                & (-surf.SNAP <= ps)
                & (ps < surf.heights[self._cells[i]])
            )
            if not ok.any():
                continue
            cell[ok] = self._cells[i]
            uu[ok] = np.maximum(pu[ok], surf.xs[self._cells[i]])
            ss[ok] = np.maximum(ps[ok], 0.0)
        if (cell < 0).any():
            # boundary stragglers: resolve the few scalar cases exactly
            for j in np.flatnonzero(cell < 0):
                p = self.atlas.displace(int(kq[j]), float(du[j]), float(ds[j]))
                cell[j], uu[j], ss[j] = p
        return cell, uu, ss

    def distance_batch(self, cell, u, s):
        """Flat distance to the site center where the atlas sees the point."""
        n = len(u)
        out = np.full(n, np.inf)
        for i in range(len(self._cells)):
            m = cell == self._cells[i]
            if not m.any():
                continue
            cu = u[m] - self._apex_u[i]
            cs = s[m] - self._apex_s[i]
            r = np.hypot(cu, cs)
            r = np.where(r < self.atlas.radius, r, np.inf)
            out[m] = np.minimum(out[m], r)
        return out


class NonlinearMap:
    """The perturbed map f, its inverse, Jacobian entries and certificates."""

    def __init__(self, pa: LinearPA, sites, kernel: BumpKernel = C1_KERNEL):
        self.pa = pa
        self.surface: TranslationSurface = pa.surface
        self.lam = pa.dilation
        self.kernel = kernel
        specs = list(sites)
        self.sites = [
            _Site(self.surface, spec, self.lam, kernel) for spec in specs
        ]
        self._validate()
        self._cover = None

    # ---------------- validation ----------------

    def _validate(self):
        lam = self.lam
        surf = self.surface
        enabled = [s for s in self.sites if s.enabled]
        for s in enabled:
            if not (-lam < s.beta <= 0.0):
                raise ValueError(
                    f"beta = {s.beta} outside the homeomorphism range (-{lam}, 0]"
                )
            if s.support >= 0.5 * surf.delta_sigma:
                raise ValueError(
                    f"support radius {s.support} >= delta_sigma/2 = "
                    f"{0.5 * surf.delta_sigma}"
                )
            if s.kind == "regular" and surf.cone_points:
                dmin = min(
                    surf.flat_distance(s.center, c.rep)[0] for c in surf.cone_points
                )
                if not (s.alpha < dmin and s.support < dmin):
                    raise ValueError(
                        f"regular site too close to a cone point (d = {dmin})"
                    )
        for i in range(len(enabled)):
            for j in range(i + 1, len(enabled)):
                d, certified = surf.flat_distance(enabled[i].center, enabled[j].center)
                if certified and d <= enabled[i].support + enabled[j].support:
                    raise ValueError("support disks of enabled sites overlap")

    @property
    def enabled_sites(self):
        return [s for s in self.sites if s.enabled]

    def validated_beta_range(self):
        """(lo, hi) for the stable-field machinery: (-lam + lam^-2, 1 - lam)."""
        return (-self.lam + self.lam ** -2, 1.0 - self.lam)

    def default_beta(self) -> float:
        lo, hi = self.validated_beta_range()
        return 0.5 * (lo + hi)

    # ---------------- evaluation ----------------

    def _correct(self, p: Point):
        """Apply the radial damping C at p; identity outside all disks."""
        for site in self.enabled_sites:
            if not site.enabled or site.beta == 0.0:
                continue
            hit = site.displacement(p)
            if hit is None:
                continue
            du, ds, k = hit
            r = math.hypot(du, ds)
            gt = float(site.g_of_r(r)) / self.lam
            return site.atlas.displace(k, gt * du, ds)
        return p

    def eval_f(self, p: Point) -> Point:
        return self.pa.eval_phi(self._correct(p))

    def eval_f_batch(self, cell, u, s):
        cell = np.asarray(cell, dtype=int).copy()
        u = np.asarray(u, dtype=float).copy()
        s = np.asarray(s, dtype=float).copy()
        for site in self.enabled_sites:
            if site.beta == 0.0:
                continue
            m, du, ds, kq = site.displacement_batch(cell, u, s)
            if not m.any():
                continue
            r = np.hypot(du[m], ds[m])
            gt = site.g_of_r(r) / self.lam
            c2, u2, s2 = site.place_batch(kq[m], gt * du[m], ds[m])
            cell[m], u[m], s[m] = c2, u2, s2
        return self.pa.eval_phi_batch(cell, u, s)

    def eval_f_inverse(self, q: Point, tol: float = 1e-12) -> Point:
        p0 = self.pa.eval_phi_inverse(q)
        for site in self.enabled_sites:
            if site.beta == 0.0:
                continue
            hit = site.displacement(p0)
            if hit is None:
                continue
            du0, ds0, k = hit
            du = _invert_radial(site, self.lam, du0, ds0, tol)
            return site.atlas.displace(k, du, ds0)
        return p0

    def eval_f_inverse_batch(self, cell, u, s, tol: float = 1e-12):
        cell, u, s = self.pa.eval_phi_inverse_batch(
            np.asarray(cell, dtype=int), np.asarray(u, dtype=float), np.asarray(s, dtype=float)
        )
        cell = cell.copy()
        u = u.copy()
        s = s.copy()
        for site in self.enabled_sites:
            if site.beta == 0.0:
                continue
            m, du0, ds0, kq = site.displacement_batch(cell, u, s)
            if not m.any():
                continue
            du = _invert_radial_batch(site, self.lam, du0[m], ds0[m], tol)
            c2, u2, s2 = site.place_batch(kq[m], du, ds0[m])
            cell[m], u[m], s[m] = c2, u2, s2
        return cell, u, s

    # ---------------- Jacobian ----------------

    def jacobian(self, p: Point):
        """(a, b, 1/lam) of d_p f in the (u, s) frame; exact analytic values."""
        for st in self.surface.cone_points:
            if (
                p.cell == st.rep.cell
                and abs(p.u - st.rep.u) < self.surface.SNAP
                and abs(p.s - st.rep.s) < self.surface.SNAP
            ):
                raise AtConePoint("Jacobian undefined at a cone point")
        for site in self.enabled_sites:
            if site.beta == 0.0:
                continue
            hit = site.displacement(p)
            if hit is not None:
                du, ds, _ = hit
                a, b = site.jacobian_terms(du, ds)
                return float(a), float(b), 1.0 / self.lam
        return self.lam, 0.0, 1.0 / self.lam

    def jacobian_batch(self, cell, u, s):
        n = len(u)
        a = np.full(n, self.lam)
        b = np.zeros(n)
        for site in self.enabled_sites:
            if site.beta == 0.0:
                continue
            m, du, ds, _ = site.displacement_batch(cell, u, s)
            if not m.any():
                continue
            aa, bb = site.jacobian_terms(du[m], ds[m])
            a[m] = aa
            b[m] = bb
        return a, b

    # ---------------- fixed points ----------------

    def fixed_points(self, site_index: int = 0) -> FixedPointRecord:
        site = self.sites[site_index]
        lam = self.lam
        if not (-lam < site.beta < 1.0 - lam):
            raise NoRootInRange(
                f"beta = {site.beta} admits no attracting radius "
                f"(needs beta in (-{lam}, {1.0 - lam}))"
            )
        y = (1.0 - lam) / site.beta
        rho = self.kernel.inverse_on_unit(y, tol=1e-15)
        if site.kind == "conical":
            t0 = rho * site.alpha
        else:
            t0 = math.sqrt(rho * site.alpha)
        # polish by bisection on g(t) - 1 at full double precision
        lo, hi = 0.25 * t0, min(4.0 * t0, site.support * (1 - 1e-12))
        glo, ghi = site.g_of_r(lo) - 1.0, site.g_of_r(hi) - 1.0
        if glo < 0 < ghi:
            for _ in range(100):
                mid = 0.5 * (lo + hi)
                if site.g_of_r(mid) - 1.0 < 0:
                    lo = mid
                else:
                    hi = mid
            t0 = 0.5 * (lo + hi)
        rays = 2 * site.star.n
        p_points = [site.atlas.place(k * math.pi, t0) for k in range(rays)]
        q_points = [site.atlas.place(k * math.pi + 0.5 * math.pi, t0) for k in range(rays)]
        mult = site.radial_multiplier(t0)
        if mult <= 1.0:
            raise NoRootInRange(f"expanding multiplier {mult} <= 1 at t0 = {t0}")
        return FixedPointRecord(
            site_index=site_index, t0=t0, p_points=p_points, q_points=q_points,
            multiplier=mult,
        )

    # ---------------- open-cover certificate ----------------

    def certify_cover(self, samples: int = 200, q_ball_frac: float = 0.2, seed: int = 7):
        """Numerically certify the expansion/contraction cover.

        Returns a dict with eta (a > 1 + eta off the site balls), delta
        (radial contraction factor <= 1 - delta on the shrunken balls and
        q-point balls), the worst sample points, and the gap-annulus
        coverage count. Raises CoverFailure when a certificate fails.
        """
        lam = self.lam
        report = {"eta": None, "delta": None, "worst": {}, "sites": []}
        records = [self.fixed_points(i) for i in range(len(self.sites)) if self.sites[i].enabled]
        # --- contraction on the site balls (displacement arithmetic only)
        delta = math.inf
        worst_ratio_pt = None
        for site, rec in zip(self.enabled_sites, records):
            t0 = rec.t0
            eps_q = q_ball_frac * t0
            thetas = np.linspace(0.0, 2.0 * math.pi, samples, endpoint=False)
            radii = np.linspace(1e-6, 0.98 * t0, samples)
            R, TH = np.meshgrid(radii, thetas)
            du = R * np.cos(TH)
            ds = R * np.sin(TH)
            g = site.g_of_r(R)
            ratio = np.sqrt((g * du) ** 2 + (ds / lam) ** 2) / R
            # q-point balls: displacements near (0, +-t0)
            qrad = np.linspace(1e-6, eps_q, samples)
            QR, QT = np.meshgrid(qrad, thetas)
            for sgn in (1.0, -1.0):
                qdu = QR * np.cos(QT)
                qds = sgn * t0 + QR * np.sin(QT)
                qr = np.hypot(qdu, qds)
                qg = site.g_of_r(qr)
                qratio = np.sqrt((qg * qdu) ** 2 + (qds / lam) ** 2) / qr
                ratio = np.concatenate([np.ravel(ratio), qratio.ravel()])
                du = np.concatenate([np.ravel(du), qdu.ravel()])
                ds = np.concatenate([np.ravel(ds), qds.ravel()])
            worst = float(np.max(ratio))
            if 1.0 - worst < delta:
                delta = 1.0 - worst
                i = int(np.argmax(ratio))
                worst_ratio_pt = (float(du.ravel()[i]), float(ds.ravel()[i]))
            report["sites"].append({"t0": t0, "worst_ratio": worst})
        if delta <= 0:
            raise CoverFailure(
                f"radial contraction certificate failed (worst ratio {1 - delta})",
                witness=worst_ratio_pt,
            )
        # --- expansion off the balls: sample each disk outside B(t0) and
        # outside the q balls; off-disk a == lam exactly
        eta = lam - 1.0
        worst_a_pt = None
        gap_uncovered = 0
        rng = np.random.default_rng(seed)
        for site, rec in zip(self.enabled_sites, records):
            t0 = rec.t0
            eps_q = q_ball_frac * t0
            n = samples * samples
            r = np.sqrt(rng.uniform((t0 / site.support) ** 2, 1.0, n)) * site.support
            th = rng.uniform(0, 2 * math.pi, n)
            du, ds = r * np.cos(th), r * np.sin(th)
            near_q = np.minimum(np.hypot(du, ds - t0), np.hypot(du, ds + t0)) < eps_q
            a, _ = site.jacobian_terms(du[~near_q], ds[~near_q])
            worst = float(np.min(a))
            if worst - 1.0 < eta:
                eta = worst - 1.0
                i = int(np.argmin(a))
                keep = np.flatnonzero(~near_q)
                worst_a_pt = (float(du[keep[i]]), float(ds[keep[i]]))
            # gap annulus [0.98 t0, t0]: covered by either certificate?
            rg = np.sqrt(rng.uniform(0.98 ** 2, 1.0, n)) * t0
            thg = rng.uniform(0, 2 * math.pi, n)
            dug, dsg = rg * np.cos(thg), rg * np.sin(thg)
            near_qg = np.minimum(np.hypot(dug, dsg - t0), np.hypot(dug, dsg + t0)) < eps_q
            ag, _ = site.jacobian_terms(dug, dsg)
            gg = site.g_of_r(rg)
            ratio_g = np.sqrt((gg * dug) ** 2 + (dsg / lam) ** 2) / rg
            covered = near_qg | (ag > 1.0 + 0.5 * max(eta, 0)) | (ratio_g < 1.0 - 0.5 * max(delta, 0))
            gap_uncovered += int((~covered).sum())
        if eta <= 0:
            raise CoverFailure(
                f"expansion certificate failed (min a = {1 + eta})", witness=worst_a_pt
            )
        report["eta"] = eta
        report["delta"] = delta
        report["worst"] = {"a_point": worst_a_pt, "ratio_point": worst_ratio_pt}
        report["gap_uncovered"] = gap_uncovered
        self._cover = report
        return report

    @property
    def cover(self):
        if self._cover is None:
            self.certify_cover()
        return self._cover

    # ---------------- certified constants for the series tails ----------------

    def shear_bounds(self):
        """(b_sup, lip_b, a_min) certified analytic bounds over all sites.

        b_sup bounds |b| everywhere; |b(x)| <= lip_b * d(x, center) near a
        site; a >= a_min > 0 globally (validated amplitudes).
        """
        b_sup, lip_b = 0.0, 0.0
        a_min = self.lam
        for site in self.enabled_sites:
            bb = abs(site.beta)
            if site.kind == "conical":
                b_sup = max(b_sup, 0.5 * bb * site.kernel.sup_x_times_abs_deriv())
                lip_b = max(lip_b, 0.5 * bb * site.kernel.sup_abs_deriv() / site.alpha)
            else:
                b_sup = max(b_sup, bb * site.kernel.sup_x_times_abs_deriv())
                lip_b = max(
                    lip_b, bb * site.kernel.sup_abs_deriv() * site.support / site.alpha
                )
            a_min = min(a_min, self.lam + site.beta)
        return b_sup, lip_b, a_min

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.smoothness,
            "lam": self.lam,
            "sites": [
                {
                    "kind": s.kind,
                    "alpha": s.alpha,
                    "beta": s.beta,
                    "enabled": s.enabled,
                    "support": s.support,
                    "center": list(s.center),
                }
                for s in self.sites
            ],
        }


def _invert_radial(site, lam, du0, ds0, tol):
    """Solve (g(|(du, ds0)|)/lam) * du = du0 for du; monotone bracketed solve."""
    if du0 == 0.0:
        return 0.0
    gmin = (lam + site.beta) / lam
    lo, hi = sorted((du0, du0 / gmin))
    f_lo = float(site.g_of_r(math.hypot(lo, ds0))) / lam * lo - du0
    f_hi = float(site.g_of_r(math.hypot(hi, ds0))) / lam * hi - du0
    if f_lo > 0 or f_hi < 0:
        raise RootBracketFailure(
            f"no bracket for the radial inverse at (du0, ds0) = ({du0}, {ds0})"
        )
    du = 0.5 * (lo + hi)
    for _ in range(200):
        val = float(site.g_of_r(math.hypot(du, ds0))) / lam * du - du0
        if val > 0:
            hi = du
        else:
            lo = du
        a, _ = site.jacobian_terms(du, ds0)
        deriv = float(a) / lam
        step = val / deriv if deriv > 0 else 0.0
        cand = du - step
        du = cand if lo < cand < hi else 0.5 * (lo + hi)
        if abs(val) < tol and hi - lo < 1e-13 * max(1.0, abs(du0)) + tol:
            return du
    if abs(float(site.g_of_r(math.hypot(du, ds0))) / lam * du - du0) > 10 * tol:
        raise ToleranceNotMet("radial inverse did not reach tolerance")
    return du


def _invert_radial_batch(site, lam, du0, ds0, tol):
    gmin = (lam + site.beta) / lam
    lo = np.minimum(du0, du0 / gmin)
    hi = np.maximum(du0, du0 / gmin)
    du = 0.5 * (lo + hi)
    for _ in range(64):
        val = site.g_of_r(np.hypot(du, ds0)) / lam * du - du0
        above = val > 0
        hi = np.where(above, du, hi)
        lo = np.where(above, lo, du)
        a, _ = site.jacobian_terms(du, ds0)
        step = val / np.maximum(a / lam, 1e-12)
        cand = du - step
        inside = (cand > lo) & (cand < hi)
        du = np.where(inside, cand, 0.5 * (lo + hi))
        if np.all(np.abs(val) < tol):
            break
    return du


def _in_quarter_np(du, ds, axis):
    if axis == 0:
        return (du > 0.0) & (ds >= 0.0)
    if axis == 1:
        return (ds > 0.0) & (du <= 0.0)
    if axis == 2:
        return (du < 0.0) & (ds <= 0.0)
    return (ds < 0.0) & (du >= 0.0)
