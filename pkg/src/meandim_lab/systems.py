"""Finite samples of compact metric spaces carrying commuting ℤᵏ actions.

A :class:`SampledSpace` is a distance matrix over point indices.  A
:class:`SampledAction` adds ``k`` generator permutations of those indices.
Everything downstream (covers, delay maps, towers) works on index arrays, so
a group element ``g`` is applied by composing permutations.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import HorizonExceeded, NonCommuting, SchemaError

TAU_TRI = 1e-9
TAU_SNAP = 0.0
DEFAULT_HORIZON = 64
# Full O(N^3) triangle checks are skipped above this size; builders produce
# metrics by construction and tests check the explicit ones.
TRIANGLE_CHECK_LIMIT = 400


def check_metric(dist: np.ndarray, tau_tri: float = TAU_TRI, triangle: bool = True) -> None:
    """Raise ``ValueError`` unless ``dist`` is a metric on its index set."""
    dist = np.asarray(dist, dtype=float)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ValueError("distance matrix must be square")
    n = dist.shape[0]
    if not np.all(np.isfinite(dist)):
        raise ValueError("distance matrix has non-finite entries")
    if np.any(np.diag(dist) != 0):
        raise ValueError("distance matrix needs a zero diagonal")
    if not np.array_equal(dist, dist.T):
        raise ValueError("distance matrix is not symmetric")
    off = dist[~np.eye(n, dtype=bool)]
    if off.size and off.min() <= 0:
        raise ValueError("distinct points must have positive distance")
    if triangle:
        for l in range(n):
            if np.any(dist > dist[:, l, None] + dist[None, l, :] + tau_tri):
                i, j = np.argwhere(dist > dist[:, l, None] + dist[None, l, :] + tau_tri)[0]
                raise ValueError(f"triangle inequality fails at ({i},{l},{j})")


@dataclass(frozen=True, eq=False)
class SampledSpace:
    """Points ``0..N-1`` with a metric ``dist``.

    ``coords`` optionally holds Euclidean features used to evaluate
    parametric observables; ``labels`` are free-form point names.
    """

    dist: np.ndarray
    declared_dim: int | None = None
    labels: tuple | None = None
    coords: np.ndarray | None = None
    resolution: float | None = None
    tau_tri: float = TAU_TRI
    validate: bool = True

    def __post_init__(self):
        dist = np.ascontiguousarray(np.asarray(self.dist, dtype=float))
        dist.setflags(write=False)
        object.__setattr__(self, "dist", dist)
        if self.validate:
            check_metric(dist, self.tau_tri, triangle=dist.shape[0] <= TRIANGLE_CHECK_LIMIT)
        if self.coords is not None:
            coords = np.asarray(self.coords, dtype=float)
            if coords.ndim == 1:
                coords = coords[:, None]
            if coords.shape[0] != dist.shape[0]:
                raise ValueError("coords must have one row per point")
            coords.setflags(write=False)
            object.__setattr__(self, "coords", coords)
        if self.declared_dim is not None and self.declared_dim < 0:
            raise ValueError("declared_dim must be nonnegative")

    @property
    def size(self) -> int:
        return self.dist.shape[0]

    def min_gap(self) -> float:
        if self.size < 2:
            return math.inf
        return float(self.dist[~np.eye(self.size, dtype=bool)].min())

    def diameter(self) -> float:
        return float(self.dist.max()) if self.size else 0.0

    def sample_resolution(self) -> float:
        """Declared resolution, else the largest nearest-neighbour distance."""
        if self.resolution is not None:
            return float(self.resolution)
        if self.size < 2:
            return 0.0
        d = self.dist + np.diag(np.full(self.size, np.inf))
        return float(d.min(axis=1).max())

    def subspace(self, idx: Sequence[int]) -> "SampledSpace":
        idx = np.asarray(idx, dtype=int)
        return SampledSpace(
            self.dist[np.ix_(idx, idx)],
            declared_dim=self.declared_dim,
            coords=None if self.coords is None else self.coords[idx],
            resolution=self.resolution,
            validate=False,
        )

    def with_dist(self, dist: np.ndarray) -> "SampledSpace":
        return SampledSpace(dist, self.declared_dim, self.labels, self.coords, self.resolution, self.tau_tri, validate=False)


@dataclass(frozen=True, eq=False)
class SampledAction:
    """A sampled space with ``k`` commuting generator permutations.

    ``generators[i][x]`` is the index of ``T_i x``.  ``snap_error`` records
    how far the sampled generators are from the continuum maps they stand
    for (zero for exactly closed samples).
    """

    space: SampledSpace
    generators: tuple
    horizon: int = DEFAULT_HORIZON
    closure_policy: str = "exact-closed"
    snap_error: float = 0.0
    tau_snap: float = TAU_SNAP
    name: str = ""
    commuting: bool = field(init=False, default=True)
    _inverses: tuple = field(init=False, default=(), repr=False)

    def __post_init__(self):
        gens = []
        n = self.space.size
        for g in self.generators:
            arr = np.asarray(g, dtype=np.int64)
            if arr.shape != (n,):
                raise ValueError("each generator must map every sample index")
            if not np.array_equal(np.sort(arr), np.arange(n)):
                raise ValueError("generators must be bijections of the sample")
            arr.setflags(write=False)
            gens.append(arr)
        if not gens:
            raise ValueError("an action needs at least one generator")
        if self.closure_policy not in ("exact-closed", "nearest-snap"):
            raise ValueError(f"unknown closure policy {self.closure_policy!r}")
        if self.closure_policy == "exact-closed" and self.snap_error > self.tau_snap:
            raise ValueError("exact-closed sample reports a nonzero snap error")
        invs = []
        for arr in gens:
            inv = np.empty_like(arr)
            inv[arr] = np.arange(n)
            inv.setflags(write=False)
            invs.append(inv)
        object.__setattr__(self, "generators", tuple(gens))
        object.__setattr__(self, "_inverses", tuple(invs))
        object.__setattr__(self, "commuting", check_commutation(self)[0])

    @property
    def k(self) -> int:
        return len(self.generators)

    @property
    def size(self) -> int:
        return self.space.size

    def power(self, axis: int, e: int) -> np.ndarray:
        """Permutation array of ``T_axis ** e``."""
        if abs(e) > self.horizon:
            raise HorizonExceeded(f"|{e}| exceeds the orbit horizon {self.horizon}")
        base = self.generators[axis] if e >= 0 else self._inverses[axis]
        out = np.arange(self.size)
        for _ in range(abs(e)):
            out = base[out]
        return out

    def perm(self, g) -> np.ndarray:
        """Permutation array ``x -> g x`` for a group element ``g``."""
        g = _as_element(g, self.k)
        if not self.commuting:
            raise NonCommuting("generators do not commute; group action undefined")
        out = np.arange(self.size)
        for axis, e in enumerate(g):
            if e:
                out = self.power(axis, e)[out]
        return out

    def box(self, n: int) -> list[tuple[int, ...]]:
        """The box ``[n]^k`` in row-major order."""
        return list(itertools.product(range(n), repeat=self.k))


def _as_element(g, k: int) -> tuple[int, ...]:
    if isinstance(g, (int, np.integer)):
        g = (int(g),)
    g = tuple(int(v) for v in g)
    if len(g) != k:
        raise ValueError(f"group element has length {len(g)}, action has k={k}")
    return g


def act(a: SampledAction, g, x: int) -> int:
    """Index of ``g x``."""
    return int(a.perm(g)[x])


def check_commutation(a: SampledAction) -> tuple[bool, tuple | None]:
    """``(True, None)`` or ``(False, (i, j, x))`` with ``T_i T_j x != T_j T_i x``."""
    gens = a.generators
    for i in range(len(gens)):
        for j in range(i + 1, len(gens)):
            bad = np.nonzero(gens[i][gens[j]] != gens[j][gens[i]])[0]
            if bad.size:
                return False, (i, j, int(bad[0]))
    return True, None


def dynamical_metric(a: SampledAction, n: int) -> np.ndarray:
    """``d_[n](x, y) = max_{g in [n]^k} d(gx, gy)``."""
    if n < 1:
        raise ValueError("n must be positive")
    if n - 1 > a.horizon:
        raise HorizonExceeded(f"n={n} needs horizon {n - 1} > {a.horizon}")
    dist = a.space.dist
    out = dist.copy()
    for g in a.box(n):
        if any(g):
            p = a.perm(g)
            np.maximum(out, dist[np.ix_(p, p)], out=out)
    return out


def dynamical_space(a: SampledAction, n: int) -> SampledSpace:
    return a.space.with_dist(dynamical_metric(a, n))


@dataclass(frozen=True)
class PeriodTable:
    """Periods, adjusted periods and the sets ``P_n`` / ``H_n``.

    ``period`` uses ``math.inf`` for points without a return inside
    ``n_max``.  For ``k >= 2`` ``axis_periods`` holds the per-axis return
    times and ``period`` their product, the index of the largest diagonal
    stabilizer box.
    """

    period: tuple
    adjusted: tuple
    d: int
    n_max: int
    axis_periods: tuple | None = None

    def P(self, n: int) -> np.ndarray:
        return np.array([i for i, p in enumerate(self.period) if p <= n], dtype=int)

    def H(self, n: int) -> np.ndarray:
        return np.array([i for i, p in enumerate(self.period) if p == n], dtype=int)

    def aperiodic(self) -> np.ndarray:
        return np.array([i for i, p in enumerate(self.period) if p == math.inf], dtype=int)


def _return_times(perm: np.ndarray, n_max: int) -> list:
    n = perm.shape[0]
    out = [math.inf] * n
    cur = perm.copy()
    idx = np.arange(n)
    for i in range(1, n_max + 1):
        hit = np.nonzero(cur == idx)[0]
        for x in hit:
            if out[x] == math.inf:
                out[x] = i
        cur = perm[cur]
    return out


def period_table(a: SampledAction, n_max: int, d: int) -> PeriodTable:
    if n_max < 1 or d < 0:
        raise ValueError("need n_max >= 1 and d >= 0")
    if a.k == 1:
        per = _return_times(a.generators[0], n_max)
        axis = None
    else:
        axis = [_return_times(g, n_max) for g in a.generators]
        per = []
        for x in range(a.size):
            ps = [ax[x] for ax in axis]
            prod = math.prod(ps) if all(p != math.inf for p in ps) else math.inf
            per.append(prod if prod <= n_max else math.inf)
        axis = tuple(tuple(ax[x] for ax in axis) for x in range(a.size))
    adjusted = tuple(min(2 * d + 1, p) for p in per)
    return PeriodTable(tuple(per), adjusted, d, n_max, axis)


# -- builders ---------------------------------------------------------------


def circle_distance(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    diff = np.abs(u - v) % 1.0
    return np.minimum(diff, 1.0 - diff)


def circle_rotation(alpha: float, n_points: int, horizon: int = DEFAULT_HORIZON, declared_dim: int = 1) -> SampledAction:
    """Rotation by ``alpha`` on the grid ``j / N``, snapped to the nearest grid shift."""
    if n_points < 1:
        raise ValueError("need at least one sample point")
    x = np.arange(n_points) / n_points
    shift = int(round(alpha * n_points)) % n_points
    dist = _grid_circle_dist(n_points)
    err = float(circle_distance(np.array(alpha), np.array(shift / n_points)))
    space = SampledSpace(dist, declared_dim=declared_dim, coords=x[:, None], resolution=1.0 / n_points, validate=n_points <= TRIANGLE_CHECK_LIMIT)
    gen = (np.arange(n_points) + shift) % n_points
    return SampledAction(space, (gen,), horizon, "nearest-snap", err, name=f"circle(alpha={alpha!r},N={n_points})")


def _grid_circle_dist(n: int) -> np.ndarray:
    j = np.arange(n)
    diff = np.abs(j[:, None] - j[None, :])
    return np.minimum(diff, n - diff) / n


def torus_rotation(alphas: Sequence[float], sizes: Sequence[int], horizon: int = DEFAULT_HORIZON) -> SampledAction:
    """ℤᵏ rotation of the k-torus grid, one generator per axis, sup metric."""
    if len(alphas) != len(sizes):
        raise ValueError("one grid size per angle")
    circles = [circle_rotation(a, n, horizon) for a, n in zip(alphas, sizes)]
    return product_action(circles, diagonal=False)


def product_action(parts: Sequence[SampledAction], diagonal: bool = True) -> SampledAction:
    """Product of sampled actions under the sup metric.

    ``diagonal=True`` needs all parts to share ``k`` and acts componentwise
    (the product ℤᵏ system).  ``diagonal=False`` stacks the generators, so
    ``k`` is the sum of the parts' ``k`` (used for torus grids).
    """
    sizes = [p.size for p in parts]
    grids = np.indices(sizes).reshape(len(parts), -1)  # row-major multi-index
    total = grids.shape[1]
    dist = np.zeros((total, total))
    for i, p in enumerate(parts):
        np.maximum(dist, p.space.dist[np.ix_(grids[i], grids[i])], out=dist)
    coords = None
    if all(p.space.coords is not None for p in parts):
        coords = np.hstack([p.space.coords[grids[i]] for i, p in enumerate(parts)])
    dims = [p.space.declared_dim for p in parts]
    ddim = sum(dims) if all(v is not None for v in dims) else None
    res = [p.space.resolution for p in parts]
    space = SampledSpace(dist, ddim, coords=coords, resolution=max(res) if all(r is not None for r in res) else None, validate=total <= TRIANGLE_CHECK_LIMIT)
    gens = []
    if diagonal:
        k = parts[0].k
        if any(p.k != k for p in parts):
            raise ValueError("diagonal products need equal k")
        for axis in range(k):
            new = [p.generators[axis][grids[i]] for i, p in enumerate(parts)]
            gens.append(np.ravel_multi_index(new, sizes))
    else:
        for i, p in enumerate(parts):
            for g in p.generators:
                new = [grids[j] if j != i else g[grids[i]] for j in range(len(parts))]
                gens.append(np.ravel_multi_index(new, sizes))
    policy = "nearest-snap" if any(p.closure_policy == "nearest-snap" for p in parts) else "exact-closed"
    return SampledAction(space, tuple(gens), min(p.horizon for p in parts), policy, max(p.snap_error for p in parts), name="x".join(p.name or "?" for p in parts))


def trivial_action(space: SampledSpace, k: int = 1, horizon: int = DEFAULT_HORIZON) -> SampledAction:
    ident = np.arange(space.size)
    return SampledAction(space, tuple(ident for _ in range(k)), horizon, name="identity")


def point_system(k: int = 1) -> SampledAction:
    return trivial_action(SampledSpace(np.zeros((1, 1)), declared_dim=0), k)


def cyclic_action(n: int, step: int = 1, spacing: str = "circle") -> SampledAction:
    """Rotation by ``step / n`` on ``n`` evenly spaced circle points (exactly closed)."""
    space = SampledSpace(_grid_circle_dist(n), declared_dim=0, coords=(np.arange(n) / n)[:, None], resolution=1.0 / n)
    return SampledAction(space, ((np.arange(n) + step) % n,), name=f"cycle({n},{step})")


def shift_window(m: int, resolution: int, window: int, theta: float = 0.25, horizon: int = DEFAULT_HORIZON) -> SampledAction:
    """Truncated full shift on ``([0,1]^m)^ℤ``.

    Points are cyclic words of length ``window`` whose letters lie on the
    grid ``{0, 1/r, ..., 1}^m``.  The metric weights letter ``i`` by
    ``theta ** c(i)`` with ``c`` the cyclic distance to position 0, which is
    the usual product metric restricted to periodic words.  The shift is
    exactly closed.
    """
    if window < 1 or resolution < 1 or m < 1:
        raise ValueError("window, resolution and m must be positive")
    levels = np.arange(resolution + 1) / resolution
    letters = np.array(list(itertools.product(levels, repeat=m)))  # (L, m)
    L = len(letters)
    words = np.array(list(itertools.product(range(L), repeat=window)))  # (N, W)
    n = words.shape[0]
    pos = np.arange(window)
    weight = theta ** np.minimum(pos, window - pos)
    letter_dist = np.abs(letters[:, None, :] - letters[None, :, :]).max(axis=2)
    dist = np.zeros((n, n))
    for i in range(window):
        np.maximum(dist, weight[i] * letter_dist[np.ix_(words[:, i], words[:, i])], out=dist)
    coords = letters[words].reshape(n, window * m)
    space = SampledSpace(dist, declared_dim=None, coords=coords, resolution=1.0 / resolution, validate=n <= TRIANGLE_CHECK_LIMIT)
    shifted = np.roll(words, -1, axis=1)
    gen = np.ravel_multi_index(shifted.T, (L,) * window)
    return SampledAction(space, (gen,), horizon, name=f"shift(m={m},r={resolution},W={window})")


def grid_space(n: int, dim: int = 2) -> SampledSpace:
    """The grid ``{0, 1/n, ..., (n-1)/n}^dim`` with the sup metric.

    The grid is half-open so that periodic features (trigonometric
    observables) do not identify opposite faces.
    """
    if n < 2 or dim < 1:
        raise ValueError("need n >= 2 and dim >= 1")
    pts = np.array(list(itertools.product(np.arange(n) / n, repeat=dim)))
    dist = np.abs(pts[:, None, :] - pts[None, :, :]).max(axis=2)
    return SampledSpace(dist, declared_dim=dim, coords=pts, resolution=1.0 / n, validate=len(pts) <= TRIANGLE_CHECK_LIMIT)


def explicit_action(dist, generators: Iterable, declared_dim: int | None = None, coords=None, horizon: int = DEFAULT_HORIZON) -> SampledAction:
    space = SampledSpace(np.asarray(dist, dtype=float), declared_dim, coords=coords)
    return SampledAction(space, tuple(np.asarray(g) for g in generators), horizon, name="explicit")


# -- JSON -------------------------------------------------------------------

SYSTEM_SCHEMA = "meandim-lab/system/1"


def system_from_json(obj: dict) -> SampledAction:
    """Build a system from its JSON description.

    Either ``dist`` + ``generators`` are given explicitly, or ``generator``
    names a builder (``circle``, ``torus``, ``shift``, ``cycle``, ``product``,
    ``point``) with its parameters under ``params``.
    """
    schema = obj.get("schema")
    if schema is not None and schema != SYSTEM_SCHEMA:
        raise SchemaError(f"unsupported system schema {schema!r}")
    horizon = int(obj.get("horizon", DEFAULT_HORIZON))
    gen = obj.get("generator")
    if gen is None:
        if "dist" not in obj or "generators" not in obj:
            raise SchemaError("explicit systems need 'dist' and 'generators'")
        a = explicit_action(obj["dist"], obj["generators"], obj.get("declared_dim"), obj.get("coords"), horizon)
    else:
        p = obj.get("params", {})
        if gen == "circle":
            a = circle_rotation(float(p["alpha"]), int(p["N"]), horizon)
        elif gen == "torus":
            a = torus_rotation([float(v) for v in p["alphas"]], [int(v) for v in p["sizes"]], horizon)
        elif gen == "shift":
            a = shift_window(int(p.get("m", 1)), int(p["resolution"]), int(p["window"]), float(p.get("theta", 0.25)), horizon)
        elif gen == "cycle":
            a = cyclic_action(int(p["N"]), int(p.get("step", 1)))
        elif gen == "point":
            a = point_system(int(obj.get("k", 1)))
        elif gen == "product":
            a = product_action([system_from_json(part) for part in p["parts"]], diagonal=bool(p.get("diagonal", True)))
        else:
            raise SchemaError(f"unknown generator {gen!r}")
    k = obj.get("k")
    if k is not None and int(k) != a.k:
        raise SchemaError(f"declared k={k} but the system has k={a.k}")
    if "declared_dim" in obj and gen is not None and obj["declared_dim"] is not None:
        sp = a.space
        space = SampledSpace(sp.dist, int(obj["declared_dim"]), sp.labels, sp.coords, sp.resolution, validate=False)
        a = SampledAction(space, a.generators, a.horizon, a.closure_policy, a.snap_error, a.tau_snap, a.name)
    return a


def system_to_json(a: SampledAction) -> dict:
    out = {
        "schema": SYSTEM_SCHEMA,
        "k": a.k,
        "points": list(range(a.size)),
        "dist": a.space.dist.tolist(),
        "generators": [g.tolist() for g in a.generators],
        "declared_dim": a.space.declared_dim,
        "horizon": a.horizon,
    }
    if a.space.coords is not None:
        out["coords"] = a.space.coords.tolist()
    return out


SPACE_SCHEMA = "meandim-lab/space/1"
_METRICS = {"sup": "chebyshev", "euclidean": "euclidean"}


def space_from_json(obj: dict) -> SampledSpace:
    """A bare sample: ``dist`` given directly, or ``coords`` with a named metric.

    A system document is accepted too and contributes its space.
    """
    schema = obj.get("schema")
    if schema == SYSTEM_SCHEMA:
        return system_from_json(obj).space
    if schema is not None and schema != SPACE_SCHEMA:
        raise SchemaError(f"unsupported space schema {schema!r}")
    coords = obj.get("coords")
    if "dist" in obj:
        dist = np.asarray(obj["dist"], dtype=float)
    elif coords is not None:
        pts = np.asarray(coords, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        metric = obj.get("metric", "sup")
        if metric == "circle":
            dist = np.max([circle_distance(pts[:, None, c], pts[None, :, c]) for c in range(pts.shape[1])], axis=0)
        elif metric in _METRICS:
            dist = squareform(pdist(pts, _METRICS[metric])) if len(pts) > 1 else np.zeros((len(pts), len(pts)))
        else:
            raise SchemaError(f"unknown metric {metric!r}")
    else:
        raise SchemaError("a space needs 'dist' or 'coords'")
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise SchemaError("dist must be a square matrix")
    try:
        return SampledSpace(dist, obj.get("declared_dim"), coords=coords, resolution=obj.get("resolution"))
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


def space_to_json(s: SampledSpace) -> dict:
    out = {"schema": SPACE_SCHEMA, "dist": s.dist.tolist(), "declared_dim": s.declared_dim}
    if s.coords is not None:
        out["coords"] = s.coords.tolist()
    if s.resolution is not None:
        out["resolution"] = s.resolution
    return out
