"""Rokhlin towers on sampled actions and the tower-driven embedding pipeline.

A tower system is a list of base sets ``U_0..U_D`` with box side ``n``.  At
sample scale a base is fattened by a margin ``mu`` to stand in for its
closure, and the translates ``g . closure(U_i)`` (``g`` in ``[n]^k``) of one
base must be pairwise disjoint, while the plain translates of all bases
together must cover the sample.

Circle towers come from the first-return (Kac) castle of the snapped
rotation over a short base arc.  The castle's columns have heights between
``q`` and roughly ``2q``, so they cannot be cut into height-``n`` blocks
directly; an integer program chooses block offsets in two towers so that
every level is covered and every cell edge is clean in at least one tower,
after which orbit strings that touch a foreign class within ``2 mu`` are
dropped.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.sparse import coo_matrix

from . import covers as cv
from .embedders import (TAU_EQ, EmbeddingReport, Observable, _values, eps_embed, separation_report,
                        tietze_extend)
from .errors import (GateFailed, HeightMismatch, NotEquivariant, RationalAlpha, ResolutionTooCoarse,
                     SchemaError, SearchCapExceeded)
from .rng import child_seed
from .systems import SampledAction, circle_rotation, dynamical_space, product_action

TOWER_SCHEMA = "meandim-lab/towers/1"
CLOSE_TOL = 1e-12
Q_BOUND = 10 ** 4
RATIONAL_TOL = 1e-12
EXACT_LIMIT = 512


@dataclass(frozen=True, eq=False)
class TowerSystem:
    n: int
    bases: tuple
    margin: float
    n_points: int

    def __init__(self, n: int, bases: Sequence[Sequence[int]], margin: float, n_points: int):
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "bases", tuple(np.unique(np.asarray(b, dtype=np.int64)) for b in bases))
        object.__setattr__(self, "margin", float(margin))
        object.__setattr__(self, "n_points", int(n_points))
        if self.n < 1 or not self.bases:
            raise ValueError("need n >= 1 and at least one base")

    @property
    def D(self) -> int:
        return len(self.bases) - 1

    def to_json(self) -> dict:
        return {"schema": TOWER_SCHEMA, "n": self.n, "D": self.D, "margin": self.margin,
                "n_points": self.n_points, "bases": [b.tolist() for b in self.bases]}

    @classmethod
    def from_json(cls, obj: dict) -> "TowerSystem":
        if obj.get("schema", TOWER_SCHEMA) != TOWER_SCHEMA:
            raise SchemaError(f"unsupported tower schema {obj.get('schema')!r}")
        try:
            return cls(obj["n"], obj["bases"], obj["margin"], obj["n_points"])
        except KeyError as exc:
            raise SchemaError(f"tower file is missing {exc}") from exc


def closure(a: SampledAction, U: np.ndarray, mu: float) -> np.ndarray:
    """Sample points within ``mu`` of ``U``."""
    U = np.asarray(U, dtype=np.int64)
    if U.size == 0:
        return U
    near = np.zeros(a.size, dtype=bool)
    step = max(1, 4_000_000 // max(a.size, 1))
    for lo in range(0, U.size, step):
        near |= (a.space.dist[:, U[lo:lo + step]] <= mu + CLOSE_TOL).any(axis=1)
    return np.flatnonzero(near)


@dataclass(frozen=True)
class TowerVerdict:
    valid: bool
    disjoint: bool
    covering: bool
    witness: dict | None

    def to_json(self) -> dict:
        return {"valid": self.valid, "disjoint": self.disjoint, "covering": self.covering, "witness": self.witness}


def verify_towers(t: TowerSystem, a: SampledAction) -> TowerVerdict:
    """Exhaustive check of disjointness within towers and joint covering."""
    if t.n_points != a.size:
        return TowerVerdict(False, False, False, {"reason": "size", "tower_points": t.n_points, "sample": a.size})
    box = a.box(t.n)
    perms = [a.perm(g) for g in box]
    covered = np.zeros(a.size, dtype=bool)
    witness = None
    for i, U in enumerate(t.bases):
        cl = closure(a, U, t.margin)
        owner = np.full(a.size, -1, dtype=np.int64)
        for gi, p in enumerate(perms):
            covered[p[U]] = True
            img = p[cl]
            clash = owner[img] >= 0
            if witness is None and clash.any():
                pt = int(img[np.argmax(clash)])
                witness = {"reason": "overlap", "tower": i, "g": list(box[int(owner[pt])]), "g_prime": list(box[gi]),
                           "point": pt}
            owner[img] = gi
    disjoint = witness is None
    cover_ok = bool(covered.all())
    if disjoint and not cover_ok:
        witness = {"reason": "uncovered", "point": int(np.argmin(covered))}
    return TowerVerdict(disjoint and cover_ok, disjoint, cover_ok, witness)


# -- circle construction ------------------------------------------------------------


def convergent_denominators(alpha: float, kmax: int = 40) -> list[int]:
    x = float(alpha) % 1.0
    qs = []
    k_prev, k = 0, 1
    frac = x
    if frac < 1e-15:
        return [1]
    # denominators of the convergents of x = [0; a1, a2, ...]
    y = 1.0 / frac
    for _ in range(kmax):
        ai = int(math.floor(y))
        k_prev, k = k, ai * k + k_prev
        qs.append(k)
        rem = y - ai
        if rem < 1e-12:
            break
        y = 1.0 / rem
    return qs


def check_irrational(alpha: float, q_bound: int = Q_BOUND, tol: float = RATIONAL_TOL) -> None:
    x = float(alpha) % 1.0
    if min(x, 1 - x) <= tol:
        raise RationalAlpha(f"alpha = {alpha} is an integer to working precision")
    for q in [1] + convergent_denominators(x):
        if q > q_bound:
            break
        if abs(x * q - round(x * q)) <= tol * q:
            raise RationalAlpha(f"alpha = {alpha} matches {round(x * q)}/{q}")


def kac_castle(N: int, s: int, D: int):
    """First-return castle of ``p -> p + s (mod N)`` over the base ``{0..D-1}``.

    Returns columns ``(start, stop, height)`` (maximal base runs with equal
    return time) and per-point column and level arrays.
    """
    ret = np.zeros(D, dtype=np.int64)
    for p in range(D):
        x, t = (p + s) % N, 1
        while x >= D:
            x, t = (x + s) % N, t + 1
            if t > N:
                raise ResolutionTooCoarse("base misses an orbit of the snapped rotation")
        ret[p] = t
    cols, start = [], 0
    for p in range(1, D + 1):
        if p == D or ret[p] != ret[start]:
            cols.append((start, p, int(ret[start])))
            start = p
    col = np.full(N, -1, dtype=np.int64)
    lev = np.full(N, -1, dtype=np.int64)
    for c, (lo, hi, h) in enumerate(cols):
        x = np.arange(lo, hi)
        for j in range(h):
            col[x], lev[x] = c, j
            x = (x + s) % N
    if (col < 0).any():
        raise ResolutionTooCoarse("castle does not exhaust the sample")
    return cols, col, lev


def _cell_edges(col: np.ndarray, lev: np.ndarray) -> set:
    """Pairs of distinct cells ``((c, j), (c', j'))`` with the second just after the first."""
    nxt = np.roll(np.arange(col.size), -1)
    diff = (col != col[nxt]) | (lev != lev[nxt])
    return {((int(col[p]), int(lev[p])), (int(col[q]), int(lev[q]))) for p, q in zip(np.flatnonzero(diff), nxt[diff])}


def merge_levels(heights: Sequence[int], edges, n: int, towers: int = 2, time_limit: float = 60.0,
                 fixed: dict | None = None):
    """Choose height-``n`` blocks in each column for each tower.

    Constraints: blocks of one tower do not overlap, every level is in some
    block, and each cell edge is clean in some tower whose block contains the
    cell.  A block edge is clean when, level by level, the neighbouring cell
    is either outside the tower or sits at the same offset of a block (so it
    carries the same class).  ``fixed`` maps ``(tower, column, start)`` to 0
    or 1.  Returns ``{(tower, column): [starts]}`` or ``None``.
    """
    idx = {}

    def var(key):
        if key not in idx:
            idx[key] = len(idx)
        return idx[key]

    for t in range(towers):
        for c, h in enumerate(heights):
            for j in range(h - n + 1):
                var(("s", t, c, j))
    rows, cols_, vals, lo, hi = [], [], [], [], []

    def add(coef: dict, l, u):
        r = len(lo)
        for k, v in coef.items():
            rows.append(r)
            cols_.append(k)
            vals.append(v)
        lo.append(l)
        hi.append(u)

    def start(t, c, j0):
        return idx[("s", t, c, j0)] if 0 <= j0 <= heights[c] - n else None

    def holders(t, c, j):
        return [x for g in range(n) if (x := start(t, c, j - g)) is not None]

    for c, h in enumerate(heights):
        for j in range(h):
            for t in range(towers):
                e = holders(t, c, j)
                if len(e) > 1:
                    add({x: 1 for x in e}, 0, 1)
            add({x: 1 for t in range(towers) for x in holders(t, c, j)}, 1, np.inf)
    nbr = {}
    for a_, b_ in edges:
        nbr[(a_, "R")] = b_
        nbr[(b_, "L")] = a_
    for t in range(towers):
        for c, h in enumerate(heights):
            for j0 in range(h - n + 1):
                for e in "LR":
                    u = var(("u", t, c, j0, e))
                    add({u: 1, idx[("s", t, c, j0)]: -1}, -np.inf, 0)
                    for j in range(j0, j0 + n):
                        b_ = nbr.get(((c, j), e))
                        if b_ is None:
                            continue
                        coef = {u: 1}
                        for x in holders(t, *b_):
                            coef[x] = coef.get(x, 0) + 1
                        same = start(t, b_[0], b_[1] - (j - j0))
                        if same is not None:
                            coef[same] = coef.get(same, 0) - 1
                        add(coef, -np.inf, 1)
    for c, h in enumerate(heights):
        for j in range(h):
            for e in "LR":
                if ((c, j), e) in nbr:
                    add({idx[("u", t, c, j0, e)]: 1 for t in range(towers)
                         for j0 in range(max(0, j - n + 1), min(j, h - n) + 1)}, 1, np.inf)
    nv = len(idx)
    lb, ub = np.zeros(nv), np.ones(nv)
    for (t, c, j0), v in (fixed or {}).items():
        lb[idx[("s", t, c, j0)]] = ub[idx[("s", t, c, j0)]] = float(v)
    A = coo_matrix((vals, (rows, cols_)), shape=(len(lo), nv)).tocsr()
    res = milp(np.zeros(nv), constraints=LinearConstraint(A, lo, hi), integrality=np.ones(nv),
               bounds=Bounds(lb, ub), options={"time_limit": time_limit})
    if res.status != 0 or res.x is None:
        return None
    starts = {}
    for key, i in idx.items():
        if key[0] == "s" and res.x[i] > 0.5:
            starts.setdefault((key[1], key[2]), []).append(key[3])
    return starts


def periodic_pins(heights: Sequence[int], n: int, q: int, phase: int, band: int) -> dict:
    """Fix interior block starts to a pattern of period ``q``.

    In a two-column castle the cell right of level ``j`` sits at level
    ``j + q``, so blocks repeating with period ``q`` carry equal classes
    across every interior seam.  Tower 0 tiles ``[0, floor(q/n) n)`` of each
    period and tower 1 takes ``[q - n, q)``.  Starts within ``band`` of a
    column's bottom or top are left free.
    """
    per = (set(range(0, (q // n) * n, n)), {q - n})
    fixed = {}
    for t in range(2):
        for c, h in enumerate(heights):
            for j in range(band, h - n - band + 1):
                fixed[(t, c, j)] = int((j - phase) % q in per[t])
    return fixed


def _realize(N: int, s: int, n: int, col, lev, heights, starts, reach: int, towers: int = 2):
    """Turn block starts into base index sets, dropping strings near a foreign class."""
    bases = []
    pos = np.arange(N)
    for t in range(towers):
        kap = np.full(N, -1, dtype=np.int64)
        for c in range(len(heights)):
            for j in starts.get((t, c), []):
                sel = (col == c) & (lev >= j) & (lev < j + n)
                kap[sel] = lev[sel] - j
        bad = np.zeros(N, dtype=bool)
        for dd in range(1, reach + 1):
            for sg in (1, -1):
                nb = np.roll(kap, -sg * dd)
                bad |= (kap >= 0) & (nb >= 0) & (nb != kap)
        base_of = np.where(kap >= 0, (pos - kap * s) % N, -1)
        poisoned = np.unique(base_of[bad])
        keep = (kap == 0) & ~np.isin(pos, poisoned)
        bases.append(np.flatnonzero(keep))
    return bases


@dataclass(frozen=True)
class CircleTowerInfo:
    alpha: float
    shift: int
    orientation: int
    q: int
    base_length: int
    heights: tuple
    margin_steps: int


def _half_arcs(N: int) -> list[np.ndarray]:
    return [np.arange(0, N // 2), np.arange(N // 2, N)]


def _castle_candidates(alpha: float, s: int, N: int, n: int):
    for q in convergent_denominators(alpha):
        if q > N:
            return
        if q < n:
            continue
        for orient in (1, -1):
            ss = s if orient == 1 else (N - s) % N
            D = (q * ss) % N
            if 0 < D <= N // 2:
                yield q, orient, ss, D


def build_circle_towers(alpha: float, n: int, resolution: int, margin_steps: int = 2,
                        time_budget: float = 50.0, phase_limit: float = 20.0, fallback_limit: float = 20.0):
    """Two towers of height ``n`` for the rotation by ``alpha`` on ``resolution`` grid points.

    Returns ``(TowerSystem, SampledAction, CircleTowerInfo)``; the margin is
    ``margin_steps`` grid steps.  Castles over ``[0, |q alpha|)`` are tried
    for convergent denominators ``q >= n`` in both orientations.  Two-column
    castles are merged with interior blocks pinned to a periodic pattern
    (one small integer program per phase); other castles get one unpinned
    program.  Each merge is realized and then checked by
    :func:`verify_towers`.  Small samples (at most ``EXACT_LIMIT`` points)
    then fall back to :func:`exact_towers`.  :class:`ResolutionTooCoarse` is
    raised when the time budget runs out or no candidate verifies.
    """
    check_irrational(alpha)
    if n < 1:
        raise ValueError("n must be positive")
    N = int(resolution)
    a = circle_rotation(alpha, N, horizon=max(64, n))
    mu = margin_steps / N
    if n == 1:
        t = TowerSystem(1, _half_arcs(N), mu, N)
        return t, a, CircleTowerInfo(float(alpha), int(a.generators[0][0]), 1, 1, N, (1,), margin_steps)
    s = int(a.generators[0][0])
    if s == 0 or math.gcd(s, N) * n > N:
        raise ResolutionTooCoarse(f"snapped rotation {s}/{N} has period below n = {n}")
    clock = time.monotonic()
    for q, orient, ss, D in _castle_candidates(alpha, s, N, n):
        try:
            cols, col, lev = kac_castle(N, ss, D)
        except ResolutionTooCoarse:
            continue
        heights = [h for _, _, h in cols]
        if min(heights) < n:
            continue
        edges = _cell_edges(col, lev) if margin_steps > 0 else set()
        qc = abs(heights[0] - heights[1]) if len(heights) == 2 else 0
        if qc >= n:
            pins = [periodic_pins(heights, n, qc, ph, qc + n + 1) for ph in range(qc)]
            limit = phase_limit
        else:
            pins, limit = [None], fallback_limit
        for fixed in pins:
            left = time_budget - (time.monotonic() - clock)
            if left <= 0:
                break
            starts = merge_levels(heights, edges, n, 2, min(limit, left), fixed)
            if starts is None:
                continue
            bases = _realize(N, ss, n, col, lev, heights, starts, 2 * margin_steps)
            if orient == -1:
                # towers of the inverse rotation: T^(n-1) moves the top level to the bottom
                bases = [(b + (n - 1) * ss) % N for b in bases]
            t = TowerSystem(n, bases, mu, N)
            if verify_towers(t, a).valid:
                return t, a, CircleTowerInfo(float(alpha), s, orient, q, D, tuple(heights), margin_steps)
    left = time_budget - (time.monotonic() - clock)
    if N <= EXACT_LIMIT and left > 0:
        try:
            t = exact_towers(a, n, mu, 2, left)
        except SearchCapExceeded:
            t = None
        if t is not None and verify_towers(t, a).valid:
            return t, a, CircleTowerInfo(float(alpha), s, 1, 0, 0, (), margin_steps)
    raise ResolutionTooCoarse(
        f"no castle merged into valid height-{n} towers at {N} points with a {margin_steps}-step margin")


def exact_towers(a: SampledAction, n: int, margin: float, towers: int = 2, time_limit: float = 60.0) -> TowerSystem:
    """Per-point integer program for ``towers`` bases on any sampled action.

    Variables ``b[t, p]`` (``p`` in ``U_t``) and ``c[t, p]`` (``p`` in the
    margin closure of ``U_t``).  For every point ``y`` at most one translate
    ``g . closure(U_t)`` may contain it, and some ``g . U_t`` must.  Raises
    :class:`ResolutionTooCoarse` when the program is infeasible (a proof that
    no such system exists on this sample) and :class:`SearchCapExceeded` when
    the time limit ends the search first.
    """
    N = a.size
    box = a.box(n)
    inv = []
    for g in box:
        p = a.perm(g)
        q = np.empty_like(p)
        q[p] = np.arange(N)
        inv.append(q)
    near = [np.flatnonzero(row <= margin + CLOSE_TOL) for row in a.space.dist]
    T = towers
    nv = 2 * T * N
    rows, cols_, vals, lo, hi = [], [], [], [], []
    r = 0
    for t in range(T):
        for y in range(N):
            for x in near[y]:
                rows += [r, r]
                cols_ += [T * N + t * N + y, t * N + int(x)]
                vals += [1, -1]
                lo.append(0)
                hi.append(np.inf)
                r += 1
        for y in range(N):
            for q in inv:
                rows.append(r)
                cols_.append(T * N + t * N + int(q[y]))
                vals.append(1)
            lo.append(-np.inf)
            hi.append(1)
            r += 1
    for y in range(N):
        for t in range(T):
            for q in inv:
                rows.append(r)
                cols_.append(t * N + int(q[y]))
                vals.append(1)
        lo.append(1)
        hi.append(np.inf)
        r += 1
    A = coo_matrix((vals, (rows, cols_)), shape=(r, nv)).tocsr()
    res = milp(np.zeros(nv), constraints=LinearConstraint(A, lo, hi), integrality=np.ones(nv),
               bounds=Bounds(0, 1), options={"time_limit": time_limit})
    if res.status == 2:
        raise ResolutionTooCoarse(f"no {T}-tower system of height {n} with margin {margin} exists on this sample")
    if res.x is None or res.status != 0:
        raise SearchCapExceeded(f"tower program stopped after {time_limit}s: {res.message}")
    x = res.x[:T * N].reshape(T, N) > 0.5
    return TowerSystem(n, [np.flatnonzero(row) for row in x], margin, N)


def product_towers(parts: Sequence[TowerSystem], n: int | None = None) -> TowerSystem:
    """The ``2^k`` (generally ``prod (D_i + 1)``) product bases on the product grid."""
    if not parts:
        raise ValueError("need at least one part")
    heights = {p.n for p in parts}
    if len(heights) != 1 or (n is not None and n not in heights):
        raise HeightMismatch(f"parts have heights {sorted(heights)}")
    if len(parts) == 1:
        return parts[0]
    sizes = [p.n_points for p in parts]
    bases = []
    for combo in itertools.product(*[p.bases for p in parts]):
        grids = np.meshgrid(*combo, indexing="ij")
        bases.append(np.ravel_multi_index([g.ravel() for g in grids], sizes))
    return TowerSystem(parts[0].n, bases, min(p.margin for p in parts), int(np.prod(sizes)))


def torus_towers(alphas: Sequence[float], n: int, resolution: int, margin_steps: int = 2, time_budget: float = 50.0):
    """Circle towers per axis and their product on the torus grid."""
    parts, acts = [], []
    for al in alphas:
        t, a, _ = build_circle_towers(al, n, resolution, margin_steps, time_budget)
        parts.append(t)
        acts.append(a)
    return product_towers(parts), product_action(acts, diagonal=False)


# -- factor maps and pullbacks ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FactorMap:
    pi: np.ndarray
    base: SampledAction

    def __init__(self, pi, base: SampledAction):
        object.__setattr__(self, "pi", np.asarray(pi, dtype=np.int64))
        object.__setattr__(self, "base", base)

    def check(self, total: SampledAction) -> None:
        if self.pi.shape != (total.size,):
            raise NotEquivariant("factor map must send every total-space point to the base")
        if total.k != self.base.k:
            raise NotEquivariant("total and base actions have different k")
        if np.unique(self.pi).size != self.base.size:
            raise NotEquivariant("factor map is not onto the base sample")
        for i, (gt, gb) in enumerate(zip(total.generators, self.base.generators)):
            bad = np.flatnonzero(self.pi[gt] != gb[self.pi])
            if bad.size:
                raise NotEquivariant(f"pi(T_{i} x) != S_{i} pi(x) at x = {int(bad[0])}")

    def to_json(self) -> dict:
        return {"schema": "meandim-lab/factor/1", "pi": self.pi.tolist()}


@dataclass(frozen=True, eq=False)
class PullbackCover:
    """``sets[i][v] = pi^{-1}(v U_i)`` and ``closures[i][v] = pi^{-1}(v closure(U_i))``."""

    box: tuple
    sets: tuple
    closures: tuple

    def union(self, i: int) -> np.ndarray:
        return np.unique(np.concatenate(self.closures[i]))


def pullback(t: TowerSystem, pi: FactorMap, a_total: SampledAction) -> PullbackCover:
    pi.check(a_total)
    base = pi.base
    box = tuple(base.box(t.n))
    sets, closures = [], []
    for U in t.bases:
        cl = closure(base, U, t.margin)
        row_s, row_c = [], []
        for g in box:
            p = base.perm(g)
            row_s.append(np.flatnonzero(np.isin(pi.pi, p[U])))
            row_c.append(np.flatnonzero(np.isin(pi.pi, p[cl])))
        sets.append(tuple(row_s))
        closures.append(tuple(row_c))
    covered = np.zeros(a_total.size, dtype=bool)
    for row in sets:
        for V in row:
            covered[V] = True
    if not covered.all():
        raise GateFailed("tower-covering", "pulled-back sets do not cover the total space",
                         {"uncovered": int(np.argmin(covered))})
    return PullbackCover(box, tuple(sets), tuple(closures))


# -- pipeline ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PipelineResult:
    g: Observable
    values: np.ndarray
    report: EmbeddingReport
    window: tuple
    sup_deviation: float
    widim_certificate: dict
    reassembly_checked: int
    reassembly_ok: bool
    chain: dict
    per_tower: tuple
    G: tuple = field(repr=False, default=())


def window_box(k: int, n: int) -> list[tuple[int, ...]]:
    """The symmetric window ``{-(n-1), ..., n-1}^k`` used to test ``I_g``."""
    return list(itertools.product(range(-(n - 1), n), repeat=k))


def theorem2_pipeline(a_total: SampledAction, pi: FactorMap, t: TowerSystem, L: int, f, eps: float,
                      delta: float, eta: float, seed: int, lam: float = 0.0, widim_mode: str = "greedy",
                      radii=None, tau_eq: float = TAU_EQ) -> PipelineResult:
    """Perturb ``f`` (into ``[0,1]^{(D+1)L}``) into ``g`` with ``I_g x pi`` ``eta``-injective.

    Gates, in order: ``eps <= eta``; ``d(x,y) < eps`` forces every
    ``f_i``-gap below ``delta``; a cover of ``(X, d_[n])`` with mesh below
    ``eps`` and order below ``L n^k / 2``.  Each ``F_i = (f_i(v x))_v`` is
    turned into an ``eps``-embedding ``G_i`` for ``d_[n]``; ``g_i`` is
    ``p_v G_i((-v) x)`` on the pulled-back closure of ``v U_i`` and is
    extended elsewhere within ``delta`` of ``f_i``.
    """
    if not eps <= eta:
        raise GateFailed("eps<=eta", f"eps = {eps} exceeds eta = {eta}", {"eps": eps, "eta": eta})
    pi.check(a_total)
    if t.n_points != pi.base.size:
        raise GateFailed("towers", "tower system lives on a different sample", {})
    verdict = verify_towers(t, pi.base)
    if not verdict.valid:
        raise GateFailed("towers", "tower system fails verification", verdict.to_json())
    n, k, D = t.n, a_total.k, t.D
    fv = _values(f, a_total.space)
    if fv.shape[1] != (D + 1) * L:
        raise GateFailed("shape", f"f has {fv.shape[1]} outputs, need (D+1)L = {(D + 1) * L}", {})
    dist = a_total.space.dist
    close = (dist < eps) & ~np.eye(a_total.size, dtype=bool)
    worst = 0.0
    for i in range(D + 1):
        fi = fv[:, i * L:(i + 1) * L]
        for x in range(a_total.size):
            ys = np.flatnonzero(close[x])
            if ys.size:
                worst = max(worst, float(np.abs(fi[ys] - fi[x]).max()))
    if not worst < delta:
        raise GateFailed("continuity", f"points closer than eps have f_i-gaps up to {worst}",
                         {"worst_gap": worst, "delta": delta})
    dyn = dynamical_space(a_total, n)
    budget = L * n ** k / 2
    cover_eps = eps * (1 - 1e-6) - 2 * cv.DIST_TOL
    res = cv.widim(dyn, cover_eps, lam, widim_mode, radii=radii)
    cert = {"order": res.order, "mode": res.mode, "eps": cover_eps, "lam": lam, "budget": budget,
            "mesh": cv.mesh(res.cover, dyn), "n_sets": len(res.cover)}
    if not res.order < budget:
        raise GateFailed("widim", f"cover order {res.order} is not below L n^k / 2 = {budget}", cert)

    box = a_total.box(n)
    perms = {g: a_total.perm(g) for g in box}
    neg = {g: a_total.perm(tuple(-v for v in g)) for g in box}
    pb = pullback(t, pi, a_total)
    g_parts, G_parts, info = [], [], []
    for i in range(D + 1):
        fi = fv[:, i * L:(i + 1) * L]
        Fi = np.hstack([fi[perms[v]] for v in box])
        emb = eps_embed(dyn, Fi, eps, delta, res.cover, child_seed(seed, "pipeline", i), tau_eq)
        Gi = emb.values
        dom, vals = [], []
        for vi, v in enumerate(box):
            xs = pb.closures[i][vi]
            dom.append(xs)
            vals.append(Gi[neg[v][xs], vi * L:(vi + 1) * L])
        dom = np.concatenate(dom)
        vals = np.vstack(vals)
        if np.unique(dom).size != dom.size:
            raise GateFailed("towers", "pulled-back closures overlap", {"tower": i})
        order_ = np.argsort(dom)
        gi = tietze_extend(a_total.space, dom[order_], vals[order_], fi, delta).values(a_total.space)
        g_parts.append(gi)
        G_parts.append(Gi)
        info.append({"tower": i, "attempts": emb.attempts, "eps_margin": emb.report.realized_margin,
                     "sup_deviation_G": emb.sup_deviation, "domain": int(dom.size)})
    g = np.hstack(g_parts)
    dev = float(np.abs(g - fv).max())

    # reassembly identity: g_i((w - v) x) = block w of G_i((-v) x) on closure(V_i^v)
    checked, ok = 0, True
    for i in range(D + 1):
        for vi, v in enumerate(box):
            xs = pb.closures[i][vi]
            src = G_parts[i][neg[v][xs]]
            for wi, w in enumerate(box):
                shift = a_total.perm(tuple(wc - vc for wc, vc in zip(w, v)))
                lhs = g_parts[i][shift[xs]]
                rhs = src[:, wi * L:(wi + 1) * L]
                ok &= bool(np.array_equal(lhs, rhs))
                checked += xs.size

    win = window_box(k, n)
    Ig = np.hstack([g[a_total.perm(w)] for w in win])
    fib_i, fib_j = np.nonzero(np.triu(pi.pi[:, None] == pi.pi[None, :], 1))
    report = separation_report(Ig, dist, pairs=np.stack([fib_i, fib_j], axis=1), eta=eta, margin=tau_eq)

    # claim chain on every same-fibre pair whose window outputs agree within tau_eq
    chain = {"pairs": 0, "holds": True}
    if fib_i.size:
        gaps = np.abs(Ig[fib_i] - Ig[fib_j]).max(axis=1)
        dn = dyn.dist
        for x, y in zip(fib_i[gaps <= tau_eq], fib_j[gaps <= tau_eq]):
            chain["pairs"] += 1
            links = []
            for i in range(D + 1):
                for vi, v in enumerate(box):
                    if x in pb.closures[i][vi]:
                        xv, yv = neg[v][x], neg[v][y]
                        eq = np.abs(G_parts[i][xv] - G_parts[i][yv]).max() <= tau_eq
                        links.append(bool(eq and dn[xv, yv] < eps and dist[x, y] <= dn[xv, yv] and dist[x, y] < eta))
            chain["holds"] &= bool(links) and any(links)
    return PipelineResult(Observable("table", g.shape[1], {"values": g}), g, report, (-(n - 1), n - 1), dev, cert,
                          checked, ok, chain, tuple(info), tuple(G_parts))
