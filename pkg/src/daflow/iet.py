"""Exact interval exchange transformations and Rauzy-Veech induction.

Lengths may be floats or ``mpmath.mpf`` (the 107-bit extended mode used by
the Rauzy-path tests); the induction code only uses field arithmetic and
comparisons, so both work transparently.

Conventions
-----------
Letters are integers ``0..d-1``. ``top`` and ``bot`` are tuples giving the
order of the letters on the domain and image side. The transformation acts
on ``[0, sum(lengths))``, translating the ``k``-th top interval onto the
matching bottom interval. A Rauzy move compares the last top and bottom
letters; the longer one wins. Move ``"t"`` keeps the top order, move
``"b"`` keeps the bottom order. The visit matrix ``M`` of a path satisfies
``lengths_before = M @ lengths_after``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import mpmath as mp

from .errors import ConnectionDetected, MarginExhausted

# Extended-precision mode: 107-bit significand (double-double equivalent).
MP_PREC = 107


def as_mpf(x):
    with mp.workprec(MP_PREC):
        return mp.mpf(x)


@dataclass
class IET:
    """Interval exchange transformation with exact piecewise translations."""

    top: tuple
    bot: tuple
    lengths: list

    def __post_init__(self):
        self.top = tuple(self.top)
        self.bot = tuple(self.bot)
        if sorted(self.top) != sorted(self.bot) or sorted(self.top) != list(range(len(self.top))):
            raise ValueError("top/bot must be orders of letters 0..d-1")
        if any(l <= 0 for l in self.lengths):
            raise ValueError("lengths must be positive")
        if not is_irreducible(self.top, self.bot):
            raise ValueError("permutation pair is reducible")

    @property
    def d(self) -> int:
        return len(self.top)

    @property
    def total(self):
        return sum(self.lengths)

    def top_breaks(self) -> list:
        """Positions 0 = x_0 < x_1 < ... < x_d = total of the domain pieces."""
        xs = [self.lengths[0] * 0]
        for a in self.top:
            xs.append(xs[-1] + self.lengths[a])
        return xs

    def bot_breaks(self) -> list:
        ys = [self.lengths[0] * 0]
        for a in self.bot:
            ys.append(ys[-1] + self.lengths[a])
        return ys

    def translations(self) -> dict:
        """Per-letter translation delta with T(u) = u + delta on that piece."""
        xs, ys = self.top_breaks(), self.bot_breaks()
        pos_t = {a: i for i, a in enumerate(self.top)}
        pos_b = {a: i for i, a in enumerate(self.bot)}
        return {a: ys[pos_b[a]] - xs[pos_t[a]] for a in self.top}

    def letter_at(self, u) -> int:
        xs = self.top_breaks()
        if not (0 <= u < xs[-1]):
            raise ValueError(f"point {u} outside [0, {xs[-1]})")
        for i, a in enumerate(self.top):
            if u < xs[i + 1]:
                return a
        return self.top[-1]

    def __call__(self, u):
        return u + self.translations()[self.letter_at(u)]

    def inverse(self) -> "IET":
        return IET(self.bot, self.top, list(self.lengths))

    def domain_singularities(self) -> list:
        return self.top_breaks()[1:-1]

    def image_singularities(self) -> list:
        return self.bot_breaks()[1:-1]

    def rescaled(self, factor) -> "IET":
        return IET(self.top, self.bot, [l * factor for l in self.lengths])

    def copy(self) -> "IET":
        return IET(self.top, self.bot, list(self.lengths))

    def to_dict(self) -> dict:
        return {
            "top": list(self.top),
            "bot": list(self.bot),
            "lengths": [float(l) for l in self.lengths],
        }


def is_irreducible(top: Sequence, bot: Sequence) -> bool:
    """No proper prefix of the top order is a set-equal prefix of the bottom."""
    d = len(top)
    seen_t, seen_b = set(), set()
    for k in range(d - 1):
        seen_t.add(top[k])
        seen_b.add(bot[k])
        if seen_t == seen_b:
            return False
    return True


def rauzy_move_combinatorics(top: tuple, bot: tuple, move: str) -> tuple:
    """Apply one move to the permutation pair only; returns (top, bot, winner, loser)."""
    a_t, a_b = top[-1], bot[-1]
    if move == "t":
        winner, loser = a_t, a_b
        new_bot = list(bot[:-1])
        new_bot.insert(new_bot.index(a_t) + 1, a_b)
        return top, tuple(new_bot), winner, loser
    if move == "b":
        winner, loser = a_b, a_t
        new_top = list(top[:-1])
        new_top.insert(new_top.index(a_b) + 1, a_t)
        return tuple(new_top), bot, winner, loser
    raise ValueError(f"move must be 't' or 'b', got {move!r}")


def rauzy_step(iet: IET, margin_floor=None) -> tuple:
    """One Rauzy-Veech induction step. Returns (move, induced IET, margin)."""
    a_t, a_b = iet.top[-1], iet.bot[-1]
    lt, lb = iet.lengths[a_t], iet.lengths[a_b]
    margin = abs(lt - lb)
    if margin_floor is not None and margin < margin_floor:
        raise MarginExhausted(
            f"competing lengths agree to {margin} < {margin_floor}", depth=0
        )
    if lt == lb:
        raise ConnectionDetected(f"equal competing lengths {lt}")
    move = "t" if lt > lb else "b"
    top, bot, winner, loser = rauzy_move_combinatorics(iet.top, iet.bot, move)
    lengths = list(iet.lengths)
    lengths[winner] = lengths[winner] - lengths[loser]
    return move, IET(top, bot, lengths), margin


def rauzy_path(iet: IET, steps: int, margin_floor=None) -> tuple:
    """Run ``steps`` induction steps; returns (path string, induced IET, margins)."""
    path, margins, cur = [], [], iet.copy()
    for k in range(steps):
        try:
            move, cur, margin = rauzy_step(cur, margin_floor)
        except MarginExhausted as exc:
            raise MarginExhausted(str(exc), depth=k) from None
        path.append(move)
        margins.append(margin)
    return "".join(path), cur, margins


def path_matrix(top: tuple, bot: tuple, path: str) -> tuple:
    """Visit matrix of a combinatorial path; returns (matrix, end_top, end_bot).

    ``lengths_before = M @ lengths_after`` for the induction along ``path``.
    Entries are Python ints (exact).
    """
    d = len(top)
    M = [[1 if i == j else 0 for j in range(d)] for i in range(d)]
    for move in path:
        top, bot, winner, loser = rauzy_move_combinatorics(top, bot, move)
        # right-multiply by (I + E[winner, loser])
        for i in range(d):
            M[i][loser] += M[i][winner]
    return M, top, bot


def enumerate_rauzy_loops(top: tuple, bot: tuple, max_len: int):
    """Yield (path, matrix) for every loop at (top, bot) of length <= max_len."""
    start = (tuple(top), tuple(bot))
    stack = [("", start)]
    while stack:
        path, (t, b) = stack.pop()
        if path and (t, b) == start:
            M, _, _ = path_matrix(*start, path)
            yield path, M
        if len(path) < max_len:
            for move in ("b", "t"):
                t2, b2, _, _ = rauzy_move_combinatorics(t, b, move)
                stack.append((path + move, (t2, b2)))


def mat_vec(M, v):
    return [sum(M[i][j] * v[j] for j in range(len(v))) for i in range(len(M))]


def transpose(M):
    return [list(row) for row in zip(*M)]


def is_positive(M) -> bool:
    return all(x > 0 for row in M for x in row)


def perron_eigen(M, iters: int = 400) -> tuple:
    """Perron root and right/left eigenvectors by power iteration at MP_PREC.

    Returns (lam, right, left) with vectors normalized to sum 1. Power
    iteration is intentionally naive; with a primitive integer matrix it
    converges geometrically and serves as the independent oracle.
    """
    d = len(M)
    with mp.workprec(MP_PREC):
        v = [mp.mpf(1) / d] * d
        w = [mp.mpf(1) / d] * d
        Mt = transpose(M)
        lam = mp.mpf(0)
        for _ in range(iters):
            v = mat_vec(M, v)
            s = sum(v)
            lam, v = s / 1, [x / s for x in v]
            w = mat_vec(Mt, w)
            sw = sum(w)
            w = [x / sw for x in w]
        # Rayleigh-style refinement of the root
        Mv = mat_vec(M, v)
        lam = sum(Mv) / sum(v)
        return lam, v, w


def intersection_form(top: tuple, bot: tuple):
    """Antisymmetric form Omega with Omega[a][b] = +1 when a precedes b on
    top and follows it on bottom."""
    d = len(top)
    pos_t = {a: i for i, a in enumerate(top)}
    pos_b = {a: i for i, a in enumerate(bot)}
    O = [[0] * d for _ in range(d)]
    for a in range(d):
        for b in range(d):
            if pos_t[a] < pos_t[b] and pos_b[a] > pos_b[b]:
                O[a][b] = 1
            elif pos_t[a] > pos_t[b] and pos_b[a] < pos_b[b]:
                O[a][b] = -1
    return O


def solve_linear(A, rhs):
    """Gaussian elimination with partial pivoting in the rhs's arithmetic."""
    n = len(A)
    M = [list(map(mp.mpf, row)) + [mp.mpf(rhs[i])] for i, row in enumerate(A)]
    with mp.workprec(MP_PREC):
        for col in range(n):
            piv = max(range(col, n), key=lambda r: abs(M[r][col]))
            if M[piv][col] == 0:
                raise ValueError("singular system")
            M[col], M[piv] = M[piv], M[col]
            for r in range(n):
                if r != col and M[r][col] != 0:
                    fac = M[r][col] / M[col][col]
                    for c in range(col, n + 1):
                        M[r][c] -= fac * M[col][c]
        return [M[i][n] / M[i][i] for i in range(n)]


def suspension_tau(top: tuple, bot: tuple, heights) -> list:
    """Suspension vector tau with heights = -Omega @ tau.

    Requires the intersection form to be invertible, which holds for the
    permutation pairs shipped as presets (torus swap and the symmetric
    4-letter pair). The returned tau satisfies the usual cone conditions
    (positive proper top partial sums, negative bottom ones); this is
    checked by the surface builder, not here.
    """
    O = intersection_form(top, bot)
    negO = [[-x for x in row] for row in O]
    return solve_linear(negO, heights)
