"""The linear pseudo-Anosov map on a self-similar tower surface.

The map acts as ``diag(lam, 1/lam)`` in flat coordinates. Concretely, the
first return of the base exchange to the shortened base ``[0, L/lam)``
reproduces the tower structure scaled by ``1/lam``; the map sends each
pass of an induced tower through the original towers onto the original
tower system by the diagonal stretch. Each pass is a "recode piece": a
u-strip of a cell mapped affinely. Evaluation is a binary search plus an
affine map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath as mp
import numpy as np

from .errors import OutOfAtlas, PowerSearchExceeded
from .iet import MP_PREC
from .surface import Point, TranslationSurface


@dataclass
class RecodePiece:
    cell: int  # source cell (u-strip of it; the s-range is the full height)
    u_lo: float
    u_hi: float
    shift_u: float  # backward base translation accumulated from the short base
    shift_s: float  # heights accumulated below this pass

    def area(self, surface) -> float:
        return (self.u_hi - self.u_lo) * surface.heights[self.cell]


class LinearPA:
    """Linear pseudo-Anosov map phi with dilation ``lam`` on ``surface``.

    ``power_applied`` is the least power fixing every cone point and every
    outgoing separatrix germ; ``eval_phi`` applies the stabilized map (the
    base map iterated ``power_applied`` times) and ``dilation`` is raised
    accordingly. The raw one-step map stays available as ``eval_phi_base``.
    """

    def __init__(self, surface: TranslationSurface, lam, lam_mp=None):
        self.surface = surface
        self.base_dilation = float(lam)
        self.lam_mp = lam_mp if lam_mp is not None else mp.mpf(float(lam))
        self.pieces = self._build_pieces()
        self._piece_breaks = np.array([p.u_lo for p in self.pieces] + [surface.total_len])
        self._piece_cells = np.array([p.cell for p in self.pieces])
        self._piece_shift_u = np.array([p.shift_u for p in self.pieces])
        self._piece_shift_s = np.array([p.shift_s for p in self.pieces])
        # inverse lookup: passes of each induced tower stacked in s
        self._inv = self._build_inverse_lookup()
        self.power_applied = 1
        self.germ_permutation = {}
        self._stabilize()
        self.dilation = self.base_dilation ** self.power_applied

    # ---------------- construction ----------------

    def _build_pieces(self):
        surf = self.surface
        iet = surf.iet0_mp if surf.iet0_mp is not None else surf.iet0
        with mp.workprec(MP_PREC):
            lam = self.lam_mp
            lengths = [mp.mpf(l) for l in iet.lengths]
            heights = (
                [mp.mpf(h) for h in surf.heights_mp]
                if surf.heights_mp is not None
                else [mp.mpf(h) for h in surf.heights]
            )
            xs = [mp.mpf(0)]
            for a in range(surf.d):
                xs.append(xs[-1] + lengths[a])
            ys = [mp.mpf(0)]
            for a in surf.perm_bot:
                ys.append(ys[-1] + lengths[a])
            pos_b = {a: i for i, a in enumerate(surf.perm_bot)}
            deltas = [ys[pos_b[a]] - xs[a] for a in range(surf.d)]
            total = xs[-1]
            short = total / lam
            tol = total * mp.mpf(2) ** (-80)

            def cell_of(u):
                for c in range(surf.d):
                    if u < xs[c + 1]:
                        return c
                return surf.d - 1

            pieces = []
            for j in range(surf.d):
                lo, hi = xs[j] / lam, xs[j + 1] / lam
                shift = mp.mpf(0)
                acc_h = mp.mpf(0)
                for _ in range(4096):
                    mid = (lo + hi) / 2
                    c = cell_of(mid)
                    if not (xs[c] - tol <= lo and hi <= xs[c + 1] + tol):
                        raise OutOfAtlas(
                            "induced interval straddles a cell; surface is not "
                            "self-similar at this dilation"
                        )
                    pieces.append(
                        RecodePiece(
                            cell=c,
                            u_lo=float(lo),
                            u_hi=float(hi),
                            shift_u=float(shift),
                            shift_s=float(acc_h),
                        )
                    )
                    # climb through the top gluing of cell c
                    lo, hi = lo + deltas[c], hi + deltas[c]
                    shift += deltas[c]
                    acc_h += heights[c]
                    if hi <= short + tol:
                        break
                else:
                    raise OutOfAtlas("return walk did not close; bad eigen data")
            pieces.sort(key=lambda p: p.u_lo)
            # exact tiling of the base in u
            cover = mp.mpf(0)
            for p in pieces:
                cover += mp.mpf(p.u_hi) - mp.mpf(p.u_lo)
            if abs(float(cover) - float(total)) > 1e-9 * float(total):
                raise OutOfAtlas("recode pieces do not tile the surface")
            return pieces

    def _build_inverse_lookup(self):
        """Per induced tower j: s-stacked passes with their piece indices."""
        surf = self.surface
        lam = self.base_dilation
        table = []
        for j in range(surf.d):
            rows = []
            for idx, p in enumerate(self.pieces):
                # piece belongs to induced tower j iff its u-window maps into it
                mid = 0.5 * (p.u_lo + p.u_hi) - p.shift_u
                if surf.xs[j] / lam <= mid < surf.xs[j + 1] / lam:
                    rows.append((p.shift_s / lam, idx))
            rows.sort()
            table.append(
                (
                    np.array([r[0] for r in rows]),
                    np.array([r[1] for r in rows], dtype=int),
                )
            )
        return table

    # ---------------- evaluation ----------------

    def _phi_base(self, p: Point) -> Point:
        surf = self.surface
        i = int(np.searchsorted(self._piece_breaks, p.u, side="right")) - 1
        i = min(max(i, 0), len(self.pieces) - 1)
        pc = self.pieces[i]
        u = self.base_dilation * (p.u - pc.shift_u)
        s = (p.s + pc.shift_s) / self.base_dilation
        return surf.normalize(u, s)

    def _phi_base_inv(self, q: Point) -> Point:
        surf = self.surface
        lam = self.base_dilation
        u1 = q.u / lam
        s1 = q.s * lam
        j = q.cell
        s_breaks, idxs = self._inv[j]
        k = int(np.searchsorted(s_breaks, s1 / lam + 1e-300, side="right")) - 1
        k = min(max(k, 0), len(idxs) - 1)
        pc = self.pieces[idxs[k]]
        return surf.normalize(u1 + pc.shift_u, s1 - pc.shift_s)

    def eval_phi(self, p: Point) -> Point:
        for _ in range(self.power_applied):
            p = self._phi_base(p)
        return p

    def eval_phi_inverse(self, q: Point) -> Point:
        for _ in range(self.power_applied):
            q = self._phi_base_inv(q)
        return q

    def eval_phi_base(self, p: Point) -> Point:
        return self._phi_base(p)

    # batch versions operate on (cell, u, s) arrays of canonical points

    def _phi_base_batch(self, cell, u, s):
        surf = self.surface
        i = np.searchsorted(self._piece_breaks, u, side="right") - 1
        np.clip(i, 0, len(self.pieces) - 1, out=i)
        uu = self.base_dilation * (u - self._piece_shift_u[i])
        ss = (s + self._piece_shift_s[i]) / self.base_dilation
        np.clip(uu, 0.0, np.nextafter(surf.total_len, 0.0), out=uu)
        return surf.normalize_batch(uu, ss)

    def _phi_base_inv_batch(self, cell, u, s):
        surf = self.surface
        lam = self.base_dilation
        u1 = u / lam
        s1 = s * lam
        out_u = np.empty_like(u1)
        out_s = np.empty_like(s1)
        for j in range(surf.d):
            m = cell == j
            if not m.any():
                continue
            s_breaks, idxs = self._inv[j]
            k = np.searchsorted(s_breaks, s1[m] / lam, side="right") - 1
            np.clip(k, 0, len(idxs) - 1, out=k)
            pidx = idxs[k]
            out_u[m] = u1[m] + self._piece_shift_u[pidx]
            out_s[m] = s1[m] - self._piece_shift_s[pidx]
        return surf.normalize_batch(out_u, out_s)

    def eval_phi_batch(self, cell, u, s):
        for _ in range(self.power_applied):
            cell, u, s = self._phi_base_batch(cell, u, s)
        return cell, u, s

    def eval_phi_inverse_batch(self, cell, u, s):
        for _ in range(self.power_applied):
            cell, u, s = self._phi_base_inv_batch(cell, u, s)
        return cell, u, s

    # ---------------- stabilizing power ----------------

    def _vertical_ray_point(self, star, k: int, radius: float) -> Point:
        """Point at ``radius`` on the k-th vertical ray (k in 0..2n-1)."""
        q = star.quarters[(2 * k) % len(star.quarters)]
        ax = (1.0, 0.0) if (2 * k) % 4 == 0 else (-1.0, 0.0)
        return self.surface.normalize(q.apex_u + radius * ax[0], q.apex_s + radius * ax[1])

    def _germ_permutation_of(self, star, mapper) -> list:
        rays = 2 * star.n
        r = 0.25 * self.surface._probe
        perm = []
        for k in range(rays):
            img = mapper(self._vertical_ray_point(star, k, r))
            hit = None
            for m in range(rays):
                tgt = self._vertical_ray_point(star, m, r * self.base_dilation)
                if (
                    img.cell == tgt.cell
                    and math.hypot(img.u - tgt.u, img.s - tgt.s) < 1e-6
                ):
                    hit = m
                    break
            if hit is None:
                raise PowerSearchExceeded("separatrix germ image not on a vertical ray")
            perm.append(hit)
        return perm

    def _stabilize(self):
        surf = self.surface
        stars = list(surf.cone_points)
        try:
            origin = surf.star_at_origin()
            if all(origin is not st for st in stars):
                stars.append(origin)
        except OutOfAtlas:
            pass
        bound = 4 * max((st.n for st in stars), default=1) * max(len(stars), 1)
        n = 1
        perms = {}
        for si, st in enumerate(stars):
            perm = self._germ_permutation_of(st, self._phi_base)
            perms[si] = perm
            order = _permutation_order(perm)
            n = _lcm(n, order)
        if n > bound:
            raise PowerSearchExceeded(
                f"stabilizing power {n} exceeds the diagnostic bound {bound}"
            )
        self.power_applied = n
        self.germ_permutation = perms

    # ---------------- misc ----------------

    def to_dict(self) -> dict:
        return {
            "base_dilation": self.base_dilation,
            "power_applied": self.power_applied,
            "dilation": self.base_dilation ** self.power_applied,
            "pieces": [
                {
                    "cell": p.cell,
                    "u_lo": p.u_lo,
                    "u_hi": p.u_hi,
                    "shift_u": p.shift_u,
                    "shift_s": p.shift_s,
                }
                for p in self.pieces
            ],
        }


def _permutation_order(perm) -> int:
    n = 1
    for start in range(len(perm)):
        length, k = 0, start
        while True:
            k = perm[k]
            length += 1
            if k == start:
                break
        n = _lcm(n, length)
    return n


def _lcm(a: int, b: int) -> int:
    return a * b // math.gcd(a, b)
