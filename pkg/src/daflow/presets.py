"""Shipped surface presets: the lattice torus and a genus-2 tower surface.

Both presets produce a :class:`TranslationSurface` whose base exchange is
self-similar under a Rauzy loop (scaling factor = the dilation), plus the
matching :class:`LinearPA`. Extended-precision copies of the defining
algebraic data ride along for the Rauzy-path tests.
"""

from __future__ import annotations

import math

import mpmath as mp
import numpy as np

from .errors import NonHyperbolicMatrix
from .iet import IET, MP_PREC, path_matrix, perron_eigen
from .linearmap import LinearPA
from .surface import Point, TranslationSurface

# Primitive loop in the Rauzy diagram of the symmetric 4-letter permutation,
# chosen as the lexicographically first one (length, then 'b' < 't') whose
# matrix is primitive and whose Perron data satisfies the suspension cone
# conditions. Recorded in every genus-2 manifest.
GENUS2_TOP = (0, 1, 2, 3)
GENUS2_BOT = (3, 2, 1, 0)
GENUS2_LOOP = "bbtbttbt"


def build_torus(matrix):
    """Torus preset from a hyperbolic unimodular integer matrix.

    The surface is the standard torus R^2/Z^2 carried into orthonormal-ish
    eigen-coordinates (expanding direction along +u, unit covolume) and cut
    into two cells over the shortest first-return pair of the lattice. The
    distinguished regular fixed point of the matrix action sits at the
    origin, the start of the base segment.

    Matrices with trace < -2 are folded to their square so the dilation is
    positive; ``power_applied`` reflects this.
    """
    m = [[int(matrix[i][j]) for j in range(2)] for i in range(2)]
    det = m[0][0] * m[1][1] - m[0][1] * m[1][0]
    tr = m[0][0] + m[1][1]
    if det != 1:
        raise NonHyperbolicMatrix(f"determinant {det} != 1")
    if abs(tr) <= 2:
        raise NonHyperbolicMatrix(f"|trace| = {abs(tr)} <= 2 is not hyperbolic")
    folded = False
    if tr < -2:
        m = _matmul_int(m, m)
        tr = m[0][0] + m[1][1]
        folded = True

    with mp.workprec(MP_PREC):
        disc = mp.sqrt(mp.mpf(tr) ** 2 - 4)
        lam = (mp.mpf(tr) + disc) / 2
        lam_c = (mp.mpf(tr) - disc) / 2  # = 1/lam
        v_u = _eigvec_mp(m, lam)
        v_s = _eigvec_mp(m, lam_c)
        # orient: expanding vector with positive leading component,
        # right-handed basis, then rescale isotropically to covolume one
        if v_u[0] < 0 or (v_u[0] == 0 and v_u[1] < 0):
            v_u = (-v_u[0], -v_u[1])
        if v_u[0] * v_s[1] - v_u[1] * v_s[0] < 0:
            v_s = (-v_s[0], -v_s[1])
        nu = mp.sqrt(v_u[0] ** 2 + v_u[1] ** 2)
        ns = mp.sqrt(v_s[0] ** 2 + v_s[1] ** 2)
        v_u = (v_u[0] / nu, v_u[1] / nu)
        v_s = (v_s[0] / ns, v_s[1] / ns)
        detB = v_u[0] * v_s[1] - v_u[1] * v_s[0]
        scale = mp.sqrt(detB)
        v_u = (v_u[0] / scale, v_u[1] / scale)
        v_s = (v_s[0] / scale, v_s[1] / scale)
        # eigen-coordinates of w: solve [v_u v_s] c = w (basis has det 1)
        binv = ((v_s[1], -v_s[0]), (-v_u[1], v_u[0]))

        def eig_coords(w0, w1):
            return (
                binv[0][0] * w0 + binv[0][1] * w1,
                binv[1][0] * w0 + binv[1][1] * w1,
            )

        g1 = eig_coords(1, 0)
        g2 = eig_coords(0, 1)
        pair = _reduced_return_pair(g1, g2)
        (A, t1), (Bneg, t2) = pair
        B = -Bneg
        lengths_mp = [A, B]
        heights_mp = [t2, t1]
        area = A * t2 + B * t1
        if abs(float(area) - 1.0) > 1e-9:
            raise NonHyperbolicMatrix("return pair is not unimodular")
        slope_c = v_s[1] / v_s[0] if v_s[0] != 0 else mp.inf
        meta = {
            "preset": "torus",
            "matrix": m,
            "folded_square": folded,
            "lambda": float(lam),
            "lambda_mp": mp.nstr(lam, 34),
            "eigen_basis": [[float(v_u[0]), float(v_s[0])], [float(v_u[1]), float(v_s[1])]],
            "lattice_eig": [[float(g1[0]), float(g1[1])], [float(g2[0]), float(g2[1])]],
            "contracting_slope_frac": float(slope_c - mp.floor(slope_c))
            if slope_c != mp.inf
            else None,
        }
        iet_mp = IET((0, 1), (1, 0), lengths_mp)
        iet = IET((0, 1), (1, 0), [float(x) for x in lengths_mp])
        surface = TranslationSurface(
            iet, [float(h) for h in heights_mp], meta=meta, iet0_mp=iet_mp, heights_mp=heights_mp
        )
        pa = LinearPA(surface, float(lam), lam_mp=lam)
        return surface, pa


def build_genus2_preset():
    """Genus-2 preset: tower surface over the self-similar 4-letter exchange.

    Interval lengths are the right Perron eigenvector of the loop matrix of
    ``GENUS2_LOOP``, heights the left one, jointly normalized to unit area.
    The single cone point (angle 6*pi, n_sigma = 3) sits at the origin.
    """
    M, top_end, bot_end = path_matrix(GENUS2_TOP, GENUS2_BOT, GENUS2_LOOP)
    assert (tuple(top_end), tuple(bot_end)) == (GENUS2_TOP, GENUS2_BOT)
    lam, right, left = perron_eigen(M)
    with mp.workprec(MP_PREC):
        r = [x / sum(right) for x in right]
        l = [x / sum(left) for x in left]
        area = sum(a * b for a, b in zip(r, l))
        s = mp.sqrt(area)
        lengths_mp = [x / s for x in r]
        heights_mp = [x / s for x in l]
        meta = {
            "preset": "genus2",
            "rauzy_loop": GENUS2_LOOP,
            "top": list(GENUS2_TOP),
            "bot": list(GENUS2_BOT),
            "loop_matrix": M,
            "lambda": float(lam),
            "lambda_mp": mp.nstr(lam, 34),
        }
        iet_mp = IET(GENUS2_TOP, GENUS2_BOT, lengths_mp)
        iet = IET(GENUS2_TOP, GENUS2_BOT, [float(x) for x in lengths_mp])
        surface = TranslationSurface(
            iet,
            [float(h) for h in heights_mp],
            meta=meta,
            iet0_mp=iet_mp,
            heights_mp=heights_mp,
        )
        pa = LinearPA(surface, float(lam), lam_mp=lam)
        return surface, pa


def build_preset(name: str, matrix=None):
    if name == "torus":
        return build_torus(matrix if matrix is not None else [[2, 1], [1, 1]])
    if name == "genus2":
        return build_genus2_preset()
    raise ValueError(f"unknown preset {name!r}")


def torus_lattice_reduce(surface: TranslationSurface, u: float, s: float):
    """Reduce eigen-plane coordinates mod the torus lattice into the towers.

    Test oracle for the tower machinery: independent of fold/unfold.
    """
    g = surface.meta["lattice_eig"]
    g1 = np.array(g[0])
    g2 = np.array(g[1])
    G = np.array([g1, g2]).T
    c = np.linalg.solve(G, np.array([u, s]))
    c0 = np.floor(c)
    for d0 in (0.0, -1.0, 1.0, -2.0, 2.0):
        for d1 in (0.0, -1.0, 1.0, -2.0, 2.0):
            w = np.array([u, s]) - G @ (c0 + np.array([d0, d1]))
            for cell in range(surface.d):
                if surface._contains(cell, w[0], w[1]):
                    return Point(cell, float(w[0]), float(w[1]))
    raise ValueError("lattice reduction failed to land in a tower box")


def _matmul_int(a, b):
    return [
        [a[i][0] * b[0][j] + a[i][1] * b[1][j] for j in range(2)]
        for i in range(2)
    ]


def _eigvec_mp(m, ev):
    if m[0][1] != 0:
        v = (mp.mpf(m[0][1]), ev - m[0][0])
    elif m[1][0] != 0:
        v = (ev - m[1][1], mp.mpf(m[1][0]))
    else:
        raise NonHyperbolicMatrix("diagonal integer matrix cannot be hyperbolic")
    return v


def _reduced_return_pair(g1, g2, max_coeff: int = 64):
    """Shortest-base first-return pair of the lattice spanned by g1, g2.

    Returns ((A, t1), (-B, t2)) with A, B, t1, t2 > 0 and A*t2 + B*t1 = 1:
    flowing +s from the base segment [0, A+B) x {0}, the interval [0, A)
    returns after time t2 shifted by +B and [A, A+B) after t1 shifted by -A.
    """
    cands = []
    for mco in range(-max_coeff, max_coeff + 1):
        for n in range(-max_coeff, max_coeff + 1):
            if mco == 0 and n == 0:
                continue
            vu = mco * g1[0] + n * g2[0]
            vs = mco * g1[1] + n * g2[1]
            if vs <= 0:
                continue
            cands.append((vu, vs))
    # canonical choice: the most balanced pair (smallest Euclidean norms);
    # stretched pairs D^k v have exponentially large norms and lose
    def norm2(c):
        return float(c[0] * c[0] + c[1] * c[1])

    pos = sorted([c for c in cands if c[0] > 0], key=norm2)[:200]
    neg = sorted([c for c in cands if c[0] < 0], key=norm2)[:200]
    best = None
    for p in pos:
        for q in neg:
            det = p[0] * q[1] - p[1] * q[0]
            if abs(abs(float(det)) - 1.0) > 1e-9:
                continue
            cost = norm2(p) + norm2(q)
            if best is None or cost < best[0] - 1e-15:
                best = (cost, (p, q))
    if best is None:
        raise NonHyperbolicMatrix("no unimodular return pair found")
    return best[1]
