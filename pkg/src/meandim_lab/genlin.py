"""General-position linear algebra.

Rank decisions use singular values against a threshold relative to the
size of the family, so scaling every vector by the same positive constant
never flips a verdict.  Structured "pattern" matrices fill cells with shared
parameters ``t_v``; their genericity is checked both by Monte-Carlo and by
polynomial identity testing of an exact integer determinant.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import CaseBoundViolated, InvalidPattern
from .rng import stream

TOL = 1e-8


def _as_family(vectors) -> np.ndarray:
    v = np.asarray(vectors, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.ndim != 2:
        raise ValueError("a vector family is a matrix with one column per vector")
    return v


def numerical_rank(mat: np.ndarray, scale: float, tol: float = TOL) -> int:
    if mat.size == 0:
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    return int(np.count_nonzero(sv > tol * scale))


def _scale(v: np.ndarray) -> float:
    s = float(np.abs(v).max()) if v.size else 0.0
    return s if s > 0 else 1.0


def linearly_independent(vectors, tol: float = TOL) -> bool:
    v = _as_family(vectors)
    if v.shape[1] == 0:
        return True
    if not np.any(v):
        return False
    return numerical_rank(v, _scale(v) * max(v.shape), tol) == v.shape[1]


def affinely_independent(vectors, tol: float = TOL) -> bool:
    """Columns ``v_1..v_n`` are affinely independent iff ``v_i - v_1`` (i >= 2) are linearly independent."""
    v = _as_family(vectors)
    n = v.shape[1]
    if n <= 1:
        return True
    diff = v[:, 1:] - v[:, :1]
    if not np.any(diff):
        return False
    return numerical_rank(diff, _scale(v) * max(v.shape), tol) == n - 1


def affinely_independent_lifted(vectors, tol: float = TOL) -> bool:
    """Second route: append a row of ones and test linear independence.

    Only the original coordinates are rescaled, so the verdict keeps the
    scale invariance of :func:`affinely_independent`.
    """
    v = _as_family(vectors)
    if v.shape[1] <= 1:
        return True
    lifted = np.vstack([v / _scale(v), np.ones((1, v.shape[1]))])
    return numerical_rank(lifted, max(lifted.shape), tol) == v.shape[1]


def random_extension_independent(base, s: int, trials: int, seed: int, kind: str = "linear",
                                 m: int | None = None, tol: float = TOL) -> float:
    """Fraction of trials in which ``base`` plus ``s`` uniform vectors in ``[0,1]^m`` stay independent.

    ``kind="linear"`` needs ``r + s <= m``; ``kind="affine"`` needs
    ``r + s <= m + 1``.  Outside those bounds independence is impossible, so
    the call refuses instead of reporting a rate of 0.
    """
    base = np.asarray(base, dtype=float)
    if base.size == 0:
        if m is None:
            raise ValueError("an empty base needs the ambient dimension m")
        base = np.zeros((m, 0))
    base = _as_family(base)
    m = base.shape[0] if m is None else m
    if base.shape[0] != m:
        raise ValueError("base vectors must live in R^m")
    r = base.shape[1]
    if not linearly_independent(base, tol):
        raise ValueError("base family must be linearly independent")
    if s < 1 or trials < 1:
        raise ValueError("need s >= 1 and trials >= 1")
    bound = m if kind == "linear" else m + 1 if kind == "affine" else None
    if bound is None:
        raise ValueError(f"unknown independence kind {kind!r}")
    if r + s > bound:
        raise CaseBoundViolated(f"r + s = {r + s} exceeds the {kind} bound {bound}")
    test = linearly_independent if kind == "linear" else affinely_independent
    rng = stream(seed, "random_extension", kind)
    hits = 0
    for _ in range(trials):
        ext = rng.random((m, s))
        hits += test(np.hstack([base, ext]), tol)
    return hits / trials


# -- pattern matrices ---------------------------------------------------------


@dataclass(frozen=True)
class PatternMatrix:
    """A ``(k-1) x l`` grid of parameter labels ``1..r``."""

    grid: tuple

    def __init__(self, grid: Iterable[Iterable[int]]):
        g = tuple(tuple(int(v) for v in row) for row in grid)
        object.__setattr__(self, "grid", g)
        validate_pattern(g)

    @property
    def rows(self) -> int:
        return len(self.grid)

    @property
    def cols(self) -> int:
        return len(self.grid[0])

    @property
    def k(self) -> int:
        return self.rows + 1

    @property
    def r(self) -> int:
        return max(max(row) for row in self.grid)

    def array(self) -> np.ndarray:
        return np.array(self.grid, dtype=int)

    def instantiate(self, t: Sequence[float]) -> np.ndarray:
        return np.asarray(t, dtype=float)[self.array() - 1]

    def to_json(self) -> list:
        return [list(row) for row in self.grid]


def validate_pattern(grid) -> None:
    if not grid or not grid[0] or any(len(row) != len(grid[0]) for row in grid):
        raise InvalidPattern("pattern must be a nonempty rectangular grid")
    rows, cols = len(grid), len(grid[0])
    if rows + 1 < max(cols, 2):
        raise InvalidPattern(f"need k >= max(l, 2), got k={rows + 1}, l={cols}")
    values = [v for row in grid for v in row]
    r = max(values)
    if min(values) < 1 or set(values) != set(range(1, r + 1)):
        raise InvalidPattern("values must be exactly 1..r")
    for row in grid:
        if len(set(row)) != len(row):
            raise InvalidPattern(f"row {row} repeats a value")
    for j in range(cols):
        col = [grid[i][j] for i in range(rows)]
        if len(set(col)) != len(col):
            raise InvalidPattern(f"column {j} repeats a value")
    counts = np.bincount(values)
    if counts.max() > 2:
        raise InvalidPattern(f"value {int(counts.argmax())} appears more than twice")


def canonical(grid) -> tuple:
    """Relabel values by first appearance in row-major order."""
    relabel = {}
    out = []
    for row in grid:
        new = []
        for v in row:
            if v not in relabel:
                relabel[v] = len(relabel) + 1
            new.append(relabel[v])
        out.append(tuple(new))
    return tuple(out)


def enumerate_patterns(k: int, l: int, r_max: int | None = None) -> list[PatternMatrix]:
    """All valid ``(k-1) x l`` patterns up to relabeling, in canonical form.

    Cells are filled in row-major order; a cell either reuses a value seen
    exactly once (outside its row and column) or opens the next new value,
    which yields each canonical pattern exactly once.
    """
    if k < max(l, 2) or l < 1:
        return []
    rows = k - 1
    cells = [(i, j) for i in range(rows) for j in range(l)]
    grid = [[0] * l for _ in range(rows)]
    count = {}
    out = []

    def rec(pos, nvals):
        if pos == len(cells):
            if r_max is None or nvals <= r_max:
                out.append(PatternMatrix(grid))
            return
        i, j = cells[pos]
        used_row = set(grid[i][:j])
        used_col = {grid[a][j] for a in range(i)}
        for v in range(1, nvals + 1):
            if count[v] == 1 and v not in used_row and v not in used_col:
                grid[i][j] = v
                count[v] += 1
                rec(pos + 1, nvals)
                count[v] -= 1
        if r_max is None or nvals < r_max:
            v = nvals + 1
            grid[i][j] = v
            count[v] = 1
            rec(pos + 1, nvals + 1)
            del count[v]
        grid[i][j] = 0

    rec(0, 0)
    return out


def enumerate_patterns_bruteforce(k: int, l: int) -> list[PatternMatrix]:
    """Independent enumerator: every labeling of the cells, filtered and deduplicated."""
    if k < max(l, 2) or l < 1:
        return []
    rows = k - 1
    ncell = rows * l
    seen = set()
    for labels in itertools.product(range(1, ncell + 1), repeat=ncell):
        grid = tuple(tuple(labels[i * l:(i + 1) * l]) for i in range(rows))
        canon = canonical(grid)
        if canon in seen:
            continue
        try:
            validate_pattern(canon)
        except InvalidPattern:
            continue
        seen.add(canon)
    return [PatternMatrix(g) for g in sorted(seen)]


def enlarge(p: PatternMatrix) -> np.ndarray:
    """Square up to ``(k-1) x k`` with fresh, pairwise distinct labels."""
    arr = p.array()
    extra = p.k - p.cols
    if extra == 0:
        return arr
    fresh = p.r + 1 + np.arange(p.rows * extra).reshape(p.rows, extra)
    return np.hstack([arr, fresh])


def _bareiss_det(mat: list[list[int]]) -> int:
    a = [row[:] for row in mat]
    n = len(a)
    sign, prev = 1, 1
    for i in range(n - 1):
        if a[i][i] == 0:
            swap = next((r for r in range(i + 1, n) if a[r][i] != 0), None)
            if swap is None:
                return 0
            a[i], a[swap] = a[swap], a[i]
            sign = -sign
        for r in range(i + 1, n):
            for c in range(i + 1, n):
                a[r][c] = (a[r][c] * a[i][i] - a[r][i] * a[i][c]) // prev
        prev = a[i][i]
    return sign * a[n - 1][n - 1]


def pit_nonzero(p: PatternMatrix, seed: int, reps: int = 8, bits: int = 62) -> bool:
    """Randomized identity test for ``det B != 0``.

    ``B`` is the enlarged pattern with a row of ones appended.  Each
    repetition evaluates it at ``t = a / Q`` with random integers ``a`` and
    ``Q = 2**bits``; scaling the first ``k-1`` rows by ``Q`` keeps everything
    integral, so ``det`` is computed exactly by fraction-free elimination.
    A nonzero polynomial of degree ``<= k`` vanishes at a random point with
    probability at most ``k / 2**bits`` per repetition.
    """
    grid = enlarge(p)
    nvals = int(grid.max())
    q = 1 << bits
    rng = stream(seed, "pit", *p.array().ravel().tolist())
    for _ in range(reps):
        a = [int(v) for v in rng.integers(0, q, size=nvals, dtype=np.uint64)]
        mat = [[a[v - 1] for v in row] for row in grid.tolist()] + [[q] * grid.shape[1]]
        if _bareiss_det(mat) != 0:
            return True
    return False


def symbolic_det_poly(p: PatternMatrix) -> dict:
    """Leibniz expansion of ``det B`` as ``{exponent tuple: integer coefficient}``."""
    grid = enlarge(p).tolist()
    nvals = max(max(row) for row in grid)
    k = len(grid) + 1
    poly = {}
    for perm in itertools.permutations(range(k)):
        inv = sum(1 for i in range(k) for j in range(i + 1, k) if perm[i] > perm[j])
        exps = [0] * nvals
        for i in range(k - 1):
            exps[grid[i][perm[i]] - 1] += 1
        key = tuple(exps)
        poly[key] = poly.get(key, 0) + (-1) ** inv
    return {m: c for m, c in poly.items() if c}


def symbolic_det_nonzero(p: PatternMatrix) -> bool:
    return bool(symbolic_det_poly(p))


@dataclass(frozen=True)
class PatternVerdict:
    rate: float
    pit_nonzero: bool
    trials: int
    failures: tuple  # trial indices that failed, logged rather than fatal


def pattern_generic_independent(p, trials: int, seed: int, tol: float = TOL) -> PatternVerdict:
    """Monte-Carlo affine-independence rate of the pattern's columns plus a PIT verdict."""
    if not isinstance(p, PatternMatrix):
        p = PatternMatrix(p)
    rng = stream(seed, "pattern", *p.array().ravel().tolist())
    failures = []
    for i in range(trials):
        t = rng.random(p.r)
        if not affinely_independent(p.instantiate(t), tol):
            failures.append(i)
    rate = 1.0 - len(failures) / trials if trials else float("nan")
    return PatternVerdict(rate, pit_nonzero(p, seed), trials, tuple(failures))
