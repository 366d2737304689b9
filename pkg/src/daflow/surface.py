"""Translation surfaces presented as towers over an interval exchange.

A surface is a union of axis-aligned rectangles ("cells"), one per letter
of a base IET, sitting side by side over a base segment gamma that runs
along the expanding coordinate ``u`` at ``s = 0``. Cell ``c`` occupies
``[x_c, x_{c+1}) x [0, h_c)`` in global planar coordinates ``(u, s)``:

* ``u`` is the direction expanded by the linear map (leaves of constant
  ``s`` are the *vertical* foliation),
* ``s`` is the contracted direction; flows move in ``+s``.

The top edge of cell ``c`` is glued to the base by the IET translation
``u -> u + delta_c``. Vertical-edge identifications are derived, not
stored: the suspension vector ``tau`` (the unique one with
``heights = -Omega tau`` for the shipped permutation pairs) defines a
polygon model, and the ``fold``/``unfold`` push loops below move planar
points between the tower boxes and the polygon. Every surface point has
exactly one representative in a half-open cell box, so edge points are
never duplicated in outputs.

All transition maps are translations, so planar direction vectors are
globally meaningful and never rotate when crossing an edge.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import OutOfAtlas, TooFarFromCone
from .iet import IET, suspension_tau

QUARTER = 0.5 * math.pi

# planar unit vectors of the quarter-turn directions, angle measured from +u
AXES = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))


class Point(NamedTuple):
    """Canonical surface point: cell index plus global planar coordinates."""

    cell: int
    u: float
    s: float


@dataclass
class Quarter:
    """One quarter-turn wedge of the angular star around a vertex point.

    ``q_index`` counts quarters counterclockwise from the outgoing ``+u``
    ray of the vertex, so the wedge's angle window is
    ``[q_index, q_index + 1) * pi/2`` and its start direction in planar
    coordinates is ``AXES[q_index % 4]``.
    """

    cell: int
    apex_u: float
    apex_s: float
    q_index: int


@dataclass
class Star:
    """Full angular structure around a vertex; 4n quarters, total angle 2*pi*n."""

    rep: Point
    quarters: list
    n: int

    def ray_quarter(self, k: int) -> Quarter:
        """Quarter whose start ray is the k-th quarter-turn ray from +u."""
        return self.quarters[k % len(self.quarters)]


@dataclass
class AtlasPiece:
    cell: int
    tau_u: float
    tau_s: float


class TranslationSurface:
    """Tower presentation of a translation surface; immutable after build."""

    SNAP = 1e-11

    def __init__(self, iet0: IET, heights, meta=None, iet0_mp=None, heights_mp=None):
        if tuple(iet0.top) != tuple(range(iet0.d)):
            raise ValueError("letters must be labelled in top order 0..d-1")
        self.iet0 = iet0
        self.d = iet0.d
        self.heights = [float(h) for h in heights]
        self.lengths = [float(l) for l in iet0.lengths]
        self.xs = np.concatenate([[0.0], np.cumsum(self.lengths)])
        self.total_len = float(self.xs[-1])
        self.perm_bot = tuple(iet0.bot)
        ys = [0.0]
        for a in self.perm_bot:
            ys.append(ys[-1] + self.lengths[a])
        self.ys = np.array(ys)
        pos_b = {a: i for i, a in enumerate(self.perm_bot)}
        self.deltas = [float(self.ys[pos_b[a]] - self.xs[a]) for a in range(self.d)]
        self.tau = [float(t) for t in suspension_tau(iet0.top, iet0.bot, self.heights)]
        self._check_cone_conditions()
        self.T_cum = np.concatenate([[0.0], np.cumsum(self.tau)])
        self.B_cum = np.concatenate(
            [[0.0], np.cumsum([self.tau[a] for a in self.perm_bot])]
        )
        self.meta = dict(meta or {})
        self.iet0_mp = iet0_mp
        self.heights_mp = heights_mp
        self.area = float(sum(l * h for l, h in zip(self.lengths, self.heights)))
        self._probe = 1e-4 * min(min(self.lengths), min(self.heights))
        self.cone_points: list = []
        self.marked_points: list = []
        self._classify_vertices()
        excess = sum(st.n - 1 for st in self.cone_points)
        if excess % 2:
            raise OutOfAtlas("odd cone-angle excess; vertex classification broken")
        self.genus = 1 + excess // 2
        self.delta_sigma = self._embedding_diameter()

    # ---------------- basic geometry ----------------

    def _check_cone_conditions(self):
        st = 0.0
        for a in range(self.d - 1):
            st += self.tau[a]
            if st <= 0:
                raise ValueError("suspension data violates top cone condition")
        sb = 0.0
        for a in self.perm_bot[:-1]:
            sb += self.tau[a]
            if sb >= 0:
                raise ValueError("suspension data violates bottom cone condition")

    def cell_at(self, u: float, side: int = 1) -> int:
        """Cell whose u-range contains ``u``; ``side=-1`` takes the left limit."""
        if side >= 0:
            c = int(np.searchsorted(self.xs, u, side="right")) - 1
        else:
            c = int(np.searchsorted(self.xs, u, side="left")) - 1
        if c < 0 or c >= self.d:
            raise OutOfAtlas(f"u = {u} outside the base [0, {self.total_len})")
        return c

    def bot_index_at(self, u: float, side: int = 1) -> int:
        if side >= 0:
            k = int(np.searchsorted(self.ys, u, side="right")) - 1
        else:
            k = int(np.searchsorted(self.ys, u, side="left")) - 1
        if k < 0 or k >= self.d:
            raise OutOfAtlas(f"u = {u} outside the base [0, {self.total_len})")
        return k

    def _contains(self, cell: int, u: float, s: float) -> bool:
        return self.xs[cell] <= u < self.xs[cell + 1] and 0.0 <= s < self.heights[cell]

    def _interior(self, cell: int, u: float, s: float) -> bool:
        return self.xs[cell] < u < self.xs[cell + 1] and 0.0 < s < self.heights[cell]

    def snap_u(self, u: float) -> float:
        i = int(np.clip(np.searchsorted(self.xs, u), 0, self.d))
        for t in self.xs[max(0, i - 1) : i + 2]:
            if abs(u - t) < self.SNAP:
                return float(t)
        i = int(np.clip(np.searchsorted(self.ys, u), 0, self.d))
        for t in self.ys[max(0, i - 1) : i + 2]:
            if abs(u - t) < self.SNAP:
                return float(t)
        return u

    def _snap_s(self, s: float, cell: int) -> float:
        if abs(s) < self.SNAP:
            return 0.0
        if abs(s - self.heights[cell]) < self.SNAP:
            return float(self.heights[cell])
        return s

    # ---------------- fold / unfold pushes ----------------

    def _s_top(self, u: float, side: int = 1) -> float:
        c = self.cell_at(u, side)
        return float(self.T_cum[c] + (u - self.xs[c]) * self.tau[c] / self.lengths[c])

    def _s_bot(self, u: float, side: int = 1) -> float:
        k = self.bot_index_at(u, side)
        a = self.perm_bot[k]
        return float(self.B_cum[k] + (u - self.ys[k]) * self.tau[a] / self.lengths[a])

    def fold(self, u: float, s: float, side: int = 1) -> Point:
        """Side-consistent tower representative of a planar point.

        Pushes the point down through roofs / up through the base until its
        height fits the cell over ``u``. With ``side=-1`` and ``u`` exactly
        on a breakpoint the returned point may sit on a right cell edge.
        Raises OutOfAtlas when ``u`` leaves the base strip.
        """
        for _ in range(64):
            u = self.snap_u(u)
            c = self.cell_at(u, side)
            s = self._snap_s(s, c)
            if s < 0.0:
                k = self.bot_index_at(u, side)
                a = self.perm_bot[k]
                u, s = u - self.deltas[a], s + self.heights[a]
            elif s >= self.heights[c]:
                u, s = u + self.deltas[c], s - self.heights[c]
            else:
                return Point(c, u, s)
        raise OutOfAtlas("fold did not terminate (corrupt surface data?)")

    def unfold(self, u: float, s: float, side: int = 1):
        """Polygon representative of a planar point (inverse of ``fold``)."""
        for _ in range(64):
            u = self.snap_u(u)
            top, bot = self._s_top(u, side), self._s_bot(u, side)
            if s >= top:
                c = self.cell_at(u, side)
                u, s = u + self.deltas[c], s - self.heights[c]
            elif s < bot:
                k = self.bot_index_at(u, side)
                a = self.perm_bot[k]
                u, s = u - self.deltas[a], s + self.heights[a]
            else:
                return u, s
        raise OutOfAtlas("unfold did not terminate (corrupt surface data?)")

    def cross_wall(self, u: float, s: float, direction: int) -> Point:
        """Continuation across the vertical wall at ``u`` moving in ``direction``.

        ``direction`` = +1 exits rightward, -1 leftward. The wall point is
        first developed into the polygon from its own bank (the cut is only
        transparent below the singular copy sitting on it), then folded
        back on the other bank. The result lies in the closed box of its
        cell on the crossing side.
        """
        U, S = self.unfold(u, s, side=-direction)
        return self.fold(U, S, side=direction)

    def normalize(self, u: float, s: float) -> Point:
        """Canonical (unique half-open box) representative of raw coordinates.

        Accepts coordinates at most one gluing step outside the atlas.
        Idempotent on canonical points. Exact vertex copies (cell corners
        and their identified images) resolve to the vertex's canonical
        representative; fold pushes would orbit such corners forever.
        """
        u = self.snap_u(u)
        if not (0.0 <= u <= self.total_len):
            raise OutOfAtlas(f"u = {u} is more than one gluing step away")
        star = self._vertex_near(u, s)
        if star is not None:
            return star.rep
        if u == self.total_len:
            return self.cross_wall(u, s, direction=1)
        return self.fold(u, s, side=1)

    def _vertex_near(self, u: float, s: float):
        for st in self.cone_points + self.marked_points:
            for q in st.quarters:
                if abs(q.apex_u - u) < self.SNAP and abs(q.apex_s - s) < self.SNAP:
                    return st
        return None

    def normalize_point(self, p: Point) -> Point:
        return self.normalize(p.u, p.s)

    # ---------------- batch variants ----------------

    def normalize_batch(self, u, s):
        """Vectorized normalize for points within one top/bottom gluing step.

        Callers must guarantee u stays inside [0, total_len) (the linear
        map's recode pieces and the site atlases do).
        """
        u = np.asarray(u, dtype=float).copy()
        s = np.asarray(s, dtype=float).copy()
        for _ in range(8):
            cell = np.searchsorted(self.xs, u, side="right") - 1
            np.clip(cell, 0, self.d - 1, out=cell)
            h = np.take(self.heights, cell)
            over = s >= h
            under = s < 0.0
            if not (over.any() or under.any()):
                return cell, u, s
            if over.any():
                d = np.take(self.deltas, cell[over])
                u[over] += d
                s[over] -= h[over]
            if under.any():
                k = np.searchsorted(self.ys, u[under], side="right") - 1
                np.clip(k, 0, self.d - 1, out=k)
                a = np.take(self.perm_bot, k)
                u[under] -= np.take(self.deltas, a)
                s[under] += np.take(self.heights, a)
        raise OutOfAtlas("normalize_batch did not converge in 8 gluing steps")

    # ---------------- straight-line tracing ----------------

    def trace_straight(self, p: Point, direction, length: float):
        """Develop a straight geodesic of ``length`` from ``p``.

        Returns (Point, star_or_None): the endpoint, or the vertex whose
        exact position the segment hit (cone points block continuation).
        """
        du, ds = direction
        norm = math.hypot(du, ds)
        du, ds = du / norm, ds / norm
        cell, u, s = p
        remaining = float(length)
        uside = 1 if du > 0 else (-1 if du < 0 else 1)
        for _ in range(200000):
            t_exit = remaining
            exit_kind = None
            if du > 0:
                t = (self.xs[cell + 1] - u) / du
                if t <= t_exit:
                    t_exit, exit_kind = t, "right"
            elif du < 0:
                t = (self.xs[cell] - u) / du
                if t <= t_exit:
                    t_exit, exit_kind = t, "left"
            if ds > 0:
                t = (self.heights[cell] - s) / ds
                if t < t_exit:
                    t_exit, exit_kind = t, "top"
            elif ds < 0:
                t = (0.0 - s) / ds
                if t < t_exit:
                    t_exit, exit_kind = t, "bottom"
            u, s = u + t_exit * du, s + t_exit * ds
            remaining -= t_exit
            if exit_kind is None:
                return Point(cell, u, s), None
            u = self.snap_u(u)
            s = self._snap_s(s, cell)
            hit = self._vertex_at(cell, u, s)
            if hit is not None:
                return Point(cell, u, s), hit
            if exit_kind == "top":
                u, s = u + self.deltas[cell], 0.0
                cell = self.cell_at(u, uside)
            elif exit_kind == "bottom":
                k = self.bot_index_at(u, uside)
                a = self.perm_bot[k]
                u, s = u - self.deltas[a], float(self.heights[a])
                cell = a
            else:
                q = self.cross_wall(u, s, 1 if exit_kind == "right" else -1)
                cell, u, s = q
        raise OutOfAtlas("trace_straight exceeded its crossing budget")

    def _vertex_at(self, cell: int, u: float, s: float):
        for st in self.cone_points + self.marked_points:
            for q in st.quarters:
                if (
                    q.cell == cell
                    and abs(q.apex_u - u) < self.SNAP
                    and abs(q.apex_s - s) < self.SNAP
                ):
                    return st
        return None

    # ---------------- angular stars ----------------

    def _probe_cross(self, cell, qu, qs):
        """Cross the one cell edge a probe point has stepped over.

        Returns (new_cell, tau_u, tau_s) with the probe (and its apex)
        re-expressed in the neighbour's coordinates via +tau. When the
        pushed probe leaves the base strip (top gluing image ending at the
        outer wall) the outer-wall crossing is composed in.
        """
        if qs < 0.0:
            k = self.bot_index_at(qu, 1)
            a = self.perm_bot[k]
            tu, ts = -self.deltas[a], float(self.heights[a])
        elif qs >= self.heights[cell]:
            tu, ts = self.deltas[cell], -float(self.heights[cell])
        elif qu >= self.xs[cell + 1] or qu < self.xs[cell]:
            if qu >= self.xs[cell + 1]:
                wall, dirn = float(self.xs[cell + 1]), 1
            else:
                wall, dirn = float(self.xs[cell]), -1
            w = self.cross_wall(wall, qs, dirn)
            tu, ts = w.u - wall, w.s - qs
        else:
            raise OutOfAtlas("probe did not cross any edge")
        pu, ps = qu + tu, qs + ts
        if pu >= self.total_len:
            w = self.cross_wall(self.total_len, ps, 1)
            tu, ts = tu + (w.u - self.total_len), ts + (w.s - ps)
            pu, ps = qu + tu, qs + ts
        elif pu < 0.0:
            w = self.cross_wall(0.0, ps, -1)
            tu, ts = tu + w.u, ts + (w.s - ps)
            pu, ps = qu + tu, qs + ts
        return self.cell_at(pu, 1), tu, ts

    def star_walk(self, p: Point) -> Star:
        """Angular decomposition of the neighbourhood of a vertex point.

        Walks counterclockwise in quarter turns, starting along the
        outgoing +u ray of the canonical representative; total angle is
        2*pi*n. Uses midpoint probes at a fixed small radius, so it
        requires vertex spacing well above ``SNAP`` (true for presets).
        """
        rho = self._probe
        quarters = []
        cell, au, as_ = p.cell, p.u, p.s
        key0 = None
        k = 0
        while k < 64:
            for _ in range(16):
                ax0, ax1 = AXES[k % 4], AXES[(k + 1) % 4]
                qu = au + rho * 0.5 * (ax0[0] + ax1[0])
                qs = as_ + rho * 0.5 * (ax0[1] + ax1[1])
                if self._interior(cell, qu, qs):
                    break
                cell, tu, ts = self._probe_cross(cell, qu, qs)
                au, as_ = au + tu, as_ + ts
            else:
                raise OutOfAtlas("star walk failed to enter a quarter")
            key = (cell, round(au / self.SNAP), round(as_ / self.SNAP))
            if k == 0:
                key0 = key
            elif k % 4 == 0 and key == key0:
                return Star(rep=p, quarters=quarters, n=k // 4)
            quarters.append(Quarter(cell, au, as_, k))
            k += 1
        raise OutOfAtlas("star walk did not close up")

    def _classify_vertices(self):
        """Group all cell corners into vertex classes and compute their stars.

        Walks start directly from raw corner contexts (cell, corner); the
        star itself enumerates every identified copy of the vertex, which
        both dedups the classes and yields the canonical representative
        (the in-box apex of a quarter starting along +u).
        """
        contexts = []
        for c in range(self.d):
            for cu in (float(self.xs[c]), float(self.xs[c + 1])):
                for cs in (0.0, float(self.heights[c])):
                    contexts.append(Point(c, cu, cs))
        seen = set()
        for ctx in contexts:
            key = (ctx.cell, round(ctx.u / self.SNAP), round(ctx.s / self.SNAP))
            if key in seen:
                continue
            star = self.star_walk(ctx)
            reps = []
            for q in star.quarters:
                seen.add((q.cell, round(q.apex_u / self.SNAP), round(q.apex_s / self.SNAP)))
                if q.q_index % 4 == 0 and self._contains(q.cell, q.apex_u, q.apex_s):
                    reps.append(Point(q.cell, q.apex_u, q.apex_s))
            if not reps:
                raise OutOfAtlas("vertex star has no in-box representative")
            star.rep = min(reps)
            if star.n >= 2:
                self.cone_points.append(star)
            else:
                self.marked_points.append(star)
        self.cone_points.sort(key=lambda st: (st.rep.cell, st.rep.u, st.rep.s))
        self.marked_points.sort(key=lambda st: (st.rep.cell, st.rep.u, st.rep.s))

    def star_at_origin(self) -> Star:
        """Star of the distinguished point at the start of the base segment."""
        for st in self.cone_points + self.marked_points:
            if st.rep.cell == 0 and abs(st.rep.u) < self.SNAP and abs(st.rep.s) < self.SNAP:
                return st
        raise OutOfAtlas("no vertex at the origin")

    # ---------------- disk development ----------------

    def disk_atlas(self, star: Star, radius: float) -> "DiskAtlas":
        """Developed disk of ``radius`` around a star, one piece list per quarter."""
        pieces = []
        for q in star.quarters:
            plist = [AtlasPiece(q.cell, 0.0, 0.0)]
            frontier = [(q.cell, 0.0, 0.0)]
            guard = 0
            while frontier and guard < 512:
                guard += 1
                item = frontier.pop()
                for nb in self._expand_development(
                    item, lambda uu, ss: _quarter_clip(
                        uu - q.apex_u, ss - q.apex_s, q.q_index % 4, radius, 3 * self._probe
                    )
                ):
                    key = (nb[0], round(nb[1] / self.SNAP), round(nb[2] / self.SNAP))
                    if all(
                        (p.cell, round(p.tau_u / self.SNAP), round(p.tau_s / self.SNAP)) != key
                        for p in plist
                    ):
                        plist.append(AtlasPiece(*nb))
                        frontier.append(nb)
            pieces.append(plist)
        atlas = DiskAtlas(star=star, radius=radius, pieces=pieces)
        atlas._surface = self
        return atlas

    def develop_around(self, p: Point, radius: float):
        """Chart translations developing B(p, radius); list of (cell, tau_u, tau_s)."""
        pieces = [(p.cell, 0.0, 0.0)]
        frontier = [(p.cell, 0.0, 0.0)]
        guard = 0
        while frontier and guard < 1024:
            guard += 1
            item = frontier.pop()
            for nb in self._expand_development(
                item, lambda uu, ss: math.hypot(uu - p.u, ss - p.s) < radius
            ):
                key = (nb[0], round(nb[1] / self.SNAP), round(nb[2] / self.SNAP))
                if all(
                    (c2, round(t2 / self.SNAP), round(s2 / self.SNAP)) != key
                    for c2, t2, s2 in pieces
                ):
                    pieces.append(nb)
                    frontier.append(nb)
        return pieces

    def _expand_development(self, piece, region):
        """Neighbour pieces of a developed piece whose edges meet ``region``.

        ``region(u_dev, s_dev)`` tests membership in the developed target
        region. Edge points are probed at fixed fractions; preset cells are
        large relative to the probe spacing, so no piece is missed.
        """
        cell, tu, ts = piece
        out = []
        x0, x1 = float(self.xs[cell]), float(self.xs[cell + 1])
        h = float(self.heights[cell])
        eps = self._probe
        samples = 31
        for kind in ("top", "bottom", "left", "right"):
            for i in range(1, samples):
                f = i / samples
                if kind == "top":
                    eu, es, pu, ps = x0 + f * (x1 - x0), h, 0.0, eps
                elif kind == "bottom":
                    eu, es, pu, ps = x0 + f * (x1 - x0), 0.0, 0.0, -eps
                elif kind == "left":
                    eu, es, pu, ps = x0, f * h, -eps, 0.0
                else:
                    eu, es, pu, ps = x1, f * h, eps, 0.0
                if not region(eu + pu + tu, es + ps + ts):
                    continue
                try:
                    ncell, dtu, dts = self._probe_cross(cell, eu + pu, es + ps)
                except OutOfAtlas:
                    continue
                out.append((ncell, tu - dtu, ts - dts))
        return out

    # ---------------- distance ----------------

    def flat_distance(self, p: Point, q: Point, radius: float = None):
        """Flat distance between canonical points.

        Returns (value, certified). Exact when ``q`` lies in the developed
        ball of ``radius`` (default delta_sigma/2) around ``p``; otherwise
        a crude upper bound with certified = False.
        """
        radius = radius if radius is not None else 0.5 * self.delta_sigma
        best = None
        for cell, tu, ts in self.develop_around(p, radius):
            if cell != q.cell:
                continue
            dist = math.hypot(q.u + tu - p.u, q.s + ts - p.s)
            if dist < radius and (best is None or dist < best):
                best = dist
        if best is not None:
            return best, True
        return self.total_len + sum(self.heights), False

    def _embedding_diameter(self) -> float:
        """2x the largest disk radius that develops without self-overlap
        around every vertex; lower bound used as the flat length bound
        delta_Sigma (torus value cross-checked exactly in tests)."""
        hi = max(self.total_len, 2 * max(self.heights))
        lo = 0.0
        for _ in range(30):
            mid = 0.5 * (hi + lo) if hi > lo else lo
            if self._embeds(mid):
                lo = mid
            else:
                hi = mid
        return 2.0 * lo

    def _embeds(self, radius: float) -> bool:
        centers = [st.rep for st in self.cone_points + self.marked_points]
        for center in centers:
            by_cell = {}
            for cell, tu, ts in self.develop_around(center, radius):
                by_cell.setdefault(cell, []).append((tu, ts))
            for plist in by_cell.values():
                for i in range(len(plist)):
                    for j in range(i + 1, len(plist)):
                        gap = math.hypot(
                            plist[i][0] - plist[j][0], plist[i][1] - plist[j][1]
                        )
                        if gap < 2.0 * radius:
                            return False
        return True

    # ---------------- serialization ----------------

    def to_dict(self) -> dict:
        return {
            "lengths": list(self.lengths),
            "heights": list(self.heights),
            "perm_bot": list(self.perm_bot),
            "tau": list(self.tau),
            "area": self.area,
            "genus": self.genus,
            "delta_sigma": self.delta_sigma,
            "cone_points": [{"rep": list(st.rep), "n": st.n} for st in self.cone_points],
            "marked_points": [{"rep": list(st.rep), "n": st.n} for st in self.marked_points],
            "meta": _json_safe(self.meta),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


@dataclass
class DiskAtlas:
    """Developed disk around a star's center; locate/place are inverse maps.

    Exactness relies on every transition being a translation; within the
    atlas radius the development is embedded (radius is validated against
    ``delta_sigma`` by the perturbation layer).
    """

    star: Star
    radius: float
    pieces: list  # per quarter: list[AtlasPiece]

    def locate(self, p: Point):
        """(Theta, r, (du, ds), quarter k) of p seen from the center, or None."""
        for k, quarter in enumerate(self.star.quarters):
            for piece in self.pieces[k]:
                if piece.cell != p.cell:
                    continue
                du = p.u + piece.tau_u - quarter.apex_u
                ds = p.s + piece.tau_s - quarter.apex_s
                r = math.hypot(du, ds)
                if r >= self.radius or r == 0.0:
                    continue
                if not _in_quarter(du, ds, k % 4):
                    continue
                theta = k * QUARTER + _angle_in_quarter(du, ds, k % 4)
                return theta, r, (du, ds), k
        return None

    def displace(self, k: int, du: float, ds: float) -> Point:
        """Surface point at displacement (du, ds) within quarter ``k``'s sheet."""
        quarter = self.star.quarters[k]
        surf = self._surface
        for piece in self.pieces[k]:
            pu = quarter.apex_u + du - piece.tau_u
            ps = quarter.apex_s + ds - piece.tau_s
            if (
                surf.xs[piece.cell] - surf.SNAP <= pu <= surf.xs[piece.cell + 1] + surf.SNAP
                and -surf.SNAP <= ps <= surf.heights[piece.cell] + surf.SNAP
            ):
                return surf.normalize(pu, ps)
        raise OutOfAtlas(f"displacement ({du}, {ds}) not in atlas quarter {k}")

    def place(self, theta: float, r: float) -> Point:
        """Surface point at total angle ``theta`` (from the +u ray) and radius r."""
        if r >= self.radius:
            raise TooFarFromCone(f"radius {r} >= atlas radius {self.radius}")
        nq = len(self.star.quarters)
        theta = theta % (nq * QUARTER)
        k = min(int(theta / QUARTER), nq - 1)
        du, ds = _from_quarter_angle(theta - k * QUARTER, r, k % 4)
        return self.displace(k, du, ds)


def _in_quarter(du: float, ds: float, axis: int) -> bool:
    # half-open: start ray included, end ray excluded
    if axis == 0:
        return du > 0.0 and ds >= 0.0
    if axis == 1:
        return ds > 0.0 and du <= 0.0
    if axis == 2:
        return du < 0.0 and ds <= 0.0
    return ds < 0.0 and du >= 0.0


def _quarter_clip(du, ds, axis, radius, eps):
    if math.hypot(du, ds) >= radius:
        return False
    if axis == 0:
        return du > -eps and ds > -eps
    if axis == 1:
        return ds > -eps and du < eps
    if axis == 2:
        return du < eps and ds < eps
    return ds < eps and du > -eps


def _angle_in_quarter(du: float, ds: float, axis: int) -> float:
    if axis == 0:
        return math.atan2(ds, du)
    if axis == 1:
        return math.atan2(-du, ds)
    if axis == 2:
        return math.atan2(-ds, -du)
    return math.atan2(du, -ds)


def _from_quarter_angle(ang: float, r: float, axis: int):
    c, s = r * math.cos(ang), r * math.sin(ang)
    if axis == 0:
        return c, s
    if axis == 1:
        return -s, c
    if axis == 2:
        return -c, -s
    return s, -c


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if hasattr(obj, "_mpf_"):
        return str(obj)
    return obj
