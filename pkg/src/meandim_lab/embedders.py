"""Delay-observation maps, separation certificates and perturbative embeddings.

Everything here works on value tables: an observable evaluated on a sample
is an ``(N, m)`` array, and a delay map is an ``(N, blocks * m)`` array whose
block ``s`` holds the observable at ``g_s x`` for the ``s``-th element of
the window in row-major order.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from . import covers as cv
from .errors import (GeneralPositionExhausted, OrderBoundViolated, PreconditionFailed,
                     RegionOverlap, SchemaError, SeparationFailed)
from .genlin import affinely_independent
from .rng import child_seed, stream
from .systems import SampledAction, SampledSpace, period_table

log = logging.getLogger(__name__)

TAU_EQ = 1e-10
RETRIES = 32
OBSERVABLE_SCHEMA = "meandim-lab/observable/1"


# -- observables --------------------------------------------------------------


def features(space: SampledSpace) -> np.ndarray:
    """Euclidean features for parametric observables.

    Declared coordinates when present, otherwise the distance profile
    ``x -> (d(x, p))_p``, which is injective on any metric sample.
    """
    return space.coords if space.coords is not None else space.dist


@dataclass(frozen=True, eq=False)
class Observable:
    """A seeded map from sample points to ``[0,1]^m``.

    ``family`` is ``"trig"`` (random trigonometric polynomial on the point
    features), ``"pou"`` (partition-of-unity interpolation of vertex values
    over a cover) or ``"table"`` (explicit values).
    """

    family: str
    m: int
    params: dict = field(default_factory=dict)
    seed: int = 0

    def values(self, space: SampledSpace) -> np.ndarray:
        if self.family == "table":
            vals = np.asarray(self.params["values"], dtype=float).reshape(-1, self.m)
            if vals.shape[0] != space.size:
                raise ValueError(f"table has {vals.shape[0]} rows, space has {space.size} points")
            return np.clip(vals, 0.0, 1.0)
        if self.family == "trig":
            return _trig_values(features(space), self.m, self.params, self.seed)
        if self.family == "pou":
            c = cv.Cover(self.params["sets"], space.size)
            pou = cv.partition_of_unity(c, space, self.params.get("anchors"))
            verts = np.asarray(self.params["vertex_values"], dtype=float).reshape(len(c), self.m)
            return np.clip(pou.weights.T @ verts, 0.0, 1.0)
        raise SchemaError(f"unknown observable family {self.family!r}")

    def to_json(self) -> dict:
        params = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        return {"schema": OBSERVABLE_SCHEMA, "family": self.family, "m": self.m, "params": params, "seed": self.seed}

    @classmethod
    def from_json(cls, obj: dict) -> "Observable":
        if obj.get("schema", OBSERVABLE_SCHEMA) != OBSERVABLE_SCHEMA:
            raise SchemaError(f"unsupported observable schema {obj.get('schema')!r}")
        try:
            return cls(obj["family"], int(obj["m"]), dict(obj.get("params", {})), int(obj.get("seed", 0)))
        except KeyError as exc:
            raise SchemaError(f"observable is missing {exc}") from exc


def table(values) -> Observable:
    vals = np.asarray(values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    return Observable("table", vals.shape[1], {"values": vals})


def random_trig(m: int, degree: int, seed: int, n_terms: int | None = None) -> Observable:
    return Observable("trig", m, {"degree": int(degree), **({"n_terms": int(n_terms)} if n_terms else {})}, int(seed))


def _trig_values(feat: np.ndarray, m: int, params: dict, seed: int) -> np.ndarray:
    """``1/2 + 1/2 * sum a_nu cos(2 pi nu.x) + b_nu sin(2 pi nu.x)`` normalized by ``sum |a|+|b|``.

    One-dimensional features use every frequency ``1..degree``; otherwise
    ``n_terms`` integer frequency vectors are drawn from ``[-degree, degree]``.
    The normalization keeps values in ``[0,1]``; the final clip only guards
    rounding.
    """
    degree = int(params.get("degree", 5))
    rng = stream(seed, "observable", "trig")
    c = feat.shape[1]
    if c == 1:
        freqs = np.arange(1, degree + 1)[:, None]
    else:
        n_terms = int(params.get("n_terms", 4 * degree))
        freqs = rng.integers(-degree, degree + 1, size=(n_terms, c))
        freqs[~freqs.any(axis=1), 0] = 1
    out = np.empty((feat.shape[0], m))
    phase = 2 * np.pi * feat @ freqs.T
    for j in range(m):
        a = rng.uniform(-1, 1, freqs.shape[0])
        b = rng.uniform(-1, 1, freqs.shape[0])
        raw = np.cos(phase) @ a + np.sin(phase) @ b
        out[:, j] = 0.5 + 0.5 * raw / (np.abs(a).sum() + np.abs(b).sum())
    return np.clip(out, 0.0, 1.0)


def _values(h, space: SampledSpace) -> np.ndarray:
    if isinstance(h, Observable):
        return h.values(space)
    vals = np.asarray(h, dtype=float)
    return vals[:, None] if vals.ndim == 1 else vals


# -- delay maps ---------------------------------------------------------------


def delay_map_Zk(a: SampledAction, f, d: int) -> np.ndarray:
    """``x -> (f(i x))_{i in [0,2d]^k}`` with the window in row-major order."""
    if d < 0:
        raise ValueError("d must be nonnegative")
    vals = _values(f, a.space)
    blocks = [vals[a.perm(g)] for g in itertools.product(range(2 * d + 1), repeat=a.k)]
    return np.hstack(blocks)


def delay_map_Z(a: SampledAction, h, d: int) -> np.ndarray:
    """``x -> (h(x), h(Tx), ..., h(T^{2d} x))``."""
    if a.k != 1:
        raise ValueError("delay_map_Z needs a Z-action; use delay_map_Zk")
    return delay_map_Zk(a, h, d)


def block(v: np.ndarray, s: int, m: int) -> np.ndarray:
    """Block ``s`` (0-based) of a delay vector or of every row of a delay table."""
    return v[..., s * m:(s + 1) * m]


def repeat_block(v, target: int) -> np.ndarray:
    """Blocks ``(v|_{k mod p})_{k < target}`` for a ``(p, m)`` block array."""
    if target < 1:
        raise ValueError("target must be at least 1")
    v = np.asarray(v)
    if v.ndim == 1:
        v = v[:, None]
    return v[np.arange(target) % v.shape[0]]


# -- separation -------------------------------------------------------------


@dataclass(frozen=True)
class EmbeddingReport:
    min_separation: float      # over every tested pair
    eta: float
    margin: float
    eta_injective: bool        # every pair with d >= eta differs by more than margin
    realized_margin: float     # smallest output gap among pairs with d >= eta
    witness: tuple | None      # worst pair among pairs with d >= eta
    n_pairs: int

    def to_json(self) -> dict:
        return {"min_separation": self.min_separation, "eta": self.eta, "margin": self.margin,
                "verdict": self.eta_injective, "realized_margin": self.realized_margin,
                "witness": None if self.witness is None else list(self.witness), "n_pairs": self.n_pairs}


def output_gaps(vectors: np.ndarray) -> np.ndarray:
    """All-pairs sup-norm distance matrix of the rows."""
    vectors = np.asarray(vectors, dtype=float)
    if vectors.shape[0] < 2:
        return np.zeros((vectors.shape[0], vectors.shape[0]))
    return squareform(pdist(vectors.reshape(vectors.shape[0], -1), metric="chebyshev"))


def separation_report(vectors, dist: np.ndarray, pairs=None, eta: float = 0.0, margin: float = TAU_EQ) -> EmbeddingReport:
    """Separation of a candidate map over ``pairs`` (default: all distinct pairs)."""
    vectors = np.asarray(vectors, dtype=float)
    n = vectors.shape[0]
    if pairs is None:
        i, j = np.triu_indices(n, 1)
        gaps = output_gaps(vectors)[i, j]
    else:
        pairs = np.asarray(list(pairs), dtype=int).reshape(-1, 2)
        if np.any(pairs[:, 0] == pairs[:, 1]):
            raise ValueError("pair sets exclude diagonal pairs")
        i, j = pairs[:, 0], pairs[:, 1]
        flat = vectors.reshape(n, -1)
        gaps = np.abs(flat[i] - flat[j]).max(axis=1) if len(i) else np.zeros(0)
    if len(i) == 0:
        return EmbeddingReport(math.inf, float(eta), float(margin), True, math.inf, None, 0)
    min_sep = float(gaps.min())
    far = dist[i, j] >= eta
    if far.any():
        k = int(np.argmin(np.where(far, gaps, np.inf)))
        realized = float(gaps[k])
        witness = (int(i[k]), int(j[k]))
    else:
        realized, witness = math.inf, None
    return EmbeddingReport(min_sep, float(eta), float(margin), bool(realized > margin), realized, witness, int(len(i)))


@dataclass(frozen=True)
class GenericityReport:
    rate: float
    passed: tuple
    realized_margins: tuple
    hypothesis_holds: bool
    periodic_dims: dict
    seeds: tuple


def genericity_experiment(a: SampledAction, d: int, m: int, family: dict, seeds: int, eta: float = 0.0,
                          margin: float = TAU_EQ, master_seed: int = 0, periodic_dims: dict | None = None) -> GenericityReport:
    """Share of seeded observables whose delay map is ``eta``-injective with the given margin.

    The report also states whether ``dim(P_n) < m n / 2`` holds for every
    ``1 <= n <= 2d``.  Empty ``P_n`` count as dimension -1, ``P_n`` equal to
    the whole sample get the declared dimension, and any other ``P_n`` must
    be declared through ``periodic_dims`` (else the declared dimension of the
    space is used as an upper bound).
    """
    table_ = period_table(a, max(2 * d, 1), d) if a.k == 1 else None
    dims = {}
    for n in range(1, 2 * d + 1):
        if periodic_dims and n in periodic_dims:
            dims[n] = periodic_dims[n]
        elif table_ is None:
            dims[n] = a.space.declared_dim
        else:
            pn = table_.P(n)
            dims[n] = -1 if pn.size == 0 else a.space.declared_dim
    holds = all(v is not None and v < m * n / 2 for n, v in dims.items())
    passed, margins, used = [], [], []
    for i in range(seeds):
        sd = child_seed(master_seed, "generic", i)
        used.append(sd)
        h = Observable(family.get("family", "trig"), m, {k: v for k, v in family.items() if k != "family"}, sd)
        rep = separation_report(delay_map_Zk(a, h, d), a.space.dist, eta=eta, margin=margin)
        passed.append(rep.eta_injective)
        margins.append(rep.realized_margin)
    rate = sum(passed) / seeds if seeds else float("nan")
    return GenericityReport(rate, tuple(passed), tuple(margins), holds, dims, tuple(used))


# -- eps-embeddings -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EpsEmbedResult:
    g: Observable
    values: np.ndarray
    report: EmbeddingReport
    sup_deviation: float
    attempts: int
    anchors: tuple
    vertex_values: np.ndarray
    certified_pairs: int


def _supports(weights: np.ndarray) -> list[frozenset]:
    return [frozenset(np.flatnonzero(weights[:, z] > 0).tolist()) for z in range(weights.shape[1])]


def eps_embed(s: SampledSpace, f, eps: float, delta: float, cover: cv.Cover, seed: int,
              tau_eq: float = TAU_EQ) -> EpsEmbedResult:
    """Perturb ``f`` into an ``eps``-embedding ``g`` with ``sup |f - g| < delta``.

    ``g = sum_W psi_W v_W`` where ``v_W`` is drawn uniformly within
    ``rho = (delta - omega) / 2`` of ``f(q_W)`` and ``omega`` is the largest
    deviation of ``f`` over a cover set from its value at the anchor.  Points
    at distance ``>= eps`` lie in disjoint cover sets, so ``g(x) = g(y)``
    there would be an affine dependence among at most ``2 (ord + 1) <= m + 1``
    vertex vectors.  Every such star pair is certified affinely independent.
    """
    fv = _values(f, s)
    m = fv.shape[1]
    if s.size > 1 and not cv.order(cover) < m / 2:
        raise PreconditionFailed(f"cover order {cv.order(cover)} is not below m/2 = {m / 2}")
    if not cv.mesh(cover, s) < eps:
        raise PreconditionFailed(f"cover mesh {cv.mesh(cover, s)} is not below eps = {eps}")
    close = (s.dist < eps) & ~np.eye(s.size, dtype=bool)
    if close.any():
        worst = float(output_gaps(fv)[close].max())
        if not worst < delta:
            raise PreconditionFailed(f"points closer than eps have outputs {worst} apart, not below delta")
    pou = cv.partition_of_unity(cover, s)
    q = np.array(pou.anchors)
    omega = max(float(np.abs(fv[list(w)] - fv[q[i]]).max()) for i, w in enumerate(cover.sets))
    if not omega < delta:
        raise PreconditionFailed(f"f varies by {omega} inside a cover set, not below delta")
    rho = (delta - omega) / 2
    supp = _supports(pou.weights)
    far = s.dist >= eps
    star_pairs = set()
    uniq = sorted(set(supp), key=sorted)
    index = {st: i for i, st in enumerate(uniq)}
    sid = np.array([index[st] for st in supp])
    for a_ in range(len(uniq)):
        pts_a = np.flatnonzero(sid == a_)
        for b_ in range(a_, len(uniq)):
            pts_b = np.flatnonzero(sid == b_)
            if far[np.ix_(pts_a, pts_b)].any():
                star_pairs.add((a_, b_))
    rng = stream(seed, "eps_embed")
    for attempt in range(1, RETRIES + 1):
        verts = np.clip(fv[q] + rng.uniform(-rho, rho, size=(len(cover), m)), 0.0, 1.0)
        ok = True
        for a_, b_ in sorted(star_pairs):
            members = sorted(uniq[a_] | uniq[b_])
            if uniq[a_] & uniq[b_] or not affinely_independent(verts[members].T):
                ok = False
                break
        g = pou.weights.T @ verts
        rep = separation_report(g, s.dist, eta=eps, margin=tau_eq)
        if ok and rep.eta_injective:
            dev = float(np.abs(g - fv).max()) if s.size else 0.0
            return EpsEmbedResult(table(g), g, rep, dev, attempt, pou.anchors, verts, len(star_pairs))
        log.info("eps_embed attempt %d (seed %d) not in general position", attempt, seed)
    raise GeneralPositionExhausted(f"no general-position vertex choice in {RETRIES} attempts")


# -- Tietze-style extension -------------------------------------------------------


def tietze_extend(s: SampledSpace, B: Sequence[int], f_on_B, f_tilde, eps: float,
                  radius: float | None = None, power: float = 2.0) -> Observable:
    """Extend ``f_on_B`` from ``B`` to the sample while staying within ``eps`` of ``f_tilde``.

    Off ``B`` the result is ``f_tilde + phi * R`` clipped to the cube, where
    ``R`` is the inverse-distance-weighted residual ``f_on_B - f_tilde`` and
    ``phi`` decays linearly to 0 at distance ``radius`` from ``B``.  Every
    residual has norm below ``eps``, a convex combination of them does too,
    and clipping toward the cube only moves values closer to ``f_tilde``.
    """
    ft = _values(f_tilde, s)
    B = np.asarray(sorted(set(int(b) for b in B)), dtype=int)
    out = ft.copy()
    if B.size == 0:
        return table(out)
    fb = np.asarray(f_on_B, dtype=float).reshape(B.size, ft.shape[1])
    if np.any(fb < 0) or np.any(fb > 1):
        raise PreconditionFailed("values on B must lie in [0,1]^m")
    resid = fb - ft[B]
    if not float(np.abs(resid).max()) < eps:
        raise PreconditionFailed(f"f_on_B is {float(np.abs(resid).max())} from f_tilde on B, not below eps")
    rest = np.setdiff1d(np.arange(s.size), B)
    if rest.size:
        dB = s.dist[np.ix_(rest, B)]
        w = dB ** -power
        R = (w @ resid) / w.sum(axis=1, keepdims=True)
        reach = radius if radius is not None else 0.25 * s.diameter()
        phi = np.clip(1.0 - dB.min(axis=1) / reach, 0.0, 1.0) if reach > 0 else np.zeros(rest.size)
        out[rest] = np.clip(ft[rest] + phi[:, None] * R, 0.0, 1.0)
    out[B] = fb
    return table(out)


# -- local constructions ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LocalConstruction:
    case: str
    F: dict                 # region name -> (|U|, blocks, m) array of F(z)
    f_prime: np.ndarray     # values on A, aligned with ``domain``
    domain: np.ndarray      # indices of A
    f: Observable           # extension to the whole sample
    record: dict


def _orbit_sets(a: SampledAction, U: np.ndarray, count: int) -> list[np.ndarray]:
    return [a.power(0, k)[U] for k in range(count)]


def _check_disjoint(families: list[np.ndarray]) -> None:
    seen = {}
    for idx, part in enumerate(families):
        for p in part.tolist():
            if p in seen:
                raise RegionOverlap(f"iterates {seen[p]} and {idx} share point {p}")
            seen[p] = idx


def default_region_cover(a: SampledAction, U: np.ndarray, ftv: np.ndarray, blocks: int, eps: float,
                         order_bound: float) -> cv.Cover:
    """A ball cover of ``U`` on which ``f_tilde`` varies by less than ``eps/2`` along ``blocks`` iterates.

    Tries greedy ball covers at shrinking scales and falls back to singletons.
    The cover is over local indices ``0..|U|-1``.
    """
    sub = a.space.subspace(U)
    orbit = np.stack([ftv[a.power(0, k)[U]] for k in range(blocks)], axis=1).reshape(U.size, -1)
    osc = output_gaps(orbit)
    scales = sorted({float(v) for v in np.unique(sub.dist) if v > 0}, reverse=True)
    for sc in scales:
        try:
            res = cv.widim(sub, sc, 0.0, "greedy")
        except Exception:
            continue
        if res.order < order_bound and all(osc[np.ix_(sorted(w), sorted(w))].max() < eps / 2 for w in res.cover.sets):
            return res.cover
    return cv.Cover([[i] for i in range(U.size)], U.size)


def _region_model(a, U, ftv, blocks, eps, order_bound, cover):
    sub = a.space.subspace(U)
    if cover is None:
        cover = default_region_cover(a, U, ftv, blocks, eps, order_bound)
    if not cv.order(cover) < order_bound:
        raise OrderBoundViolated(f"cover order {cv.order(cover)} is not below {order_bound}")
    orbit = np.stack([ftv[a.power(0, k)[U]] for k in range(blocks)], axis=1)  # (|U|, blocks, m)
    flat = orbit.reshape(U.size, -1)
    for w in cover.sets:
        w = sorted(w)
        if np.abs(flat[w][:, None, :] - flat[w][None, :, :]).max(initial=0.0) >= eps / 2:
            raise PreconditionFailed("f_tilde varies by eps/2 or more along the orbit of a cover set")
    pou = cv.partition_of_unity(cover, sub)
    pou.check(cover)
    vtilde = orbit[list(pou.anchors)]  # (|cover|, blocks, m)
    return cover, pou, vtilde


def _perturb(rng, vtilde, eps):
    rho = eps / 4
    return np.clip(vtilde + rng.uniform(-rho, rho, size=vtilde.shape), 0.0, 1.0)


def _star_sets(pou) -> list[list[int]]:
    return [sorted(np.flatnonzero(pou.weights[:, z] > 0).tolist()) for z in range(pou.weights.shape[1])]


def takens_local_construct(case: str, a: SampledAction, region: dict, f_tilde, eps: float, seed: int,
                           d: int = 1, covers: dict | None = None, tau_eq: float = TAU_EQ) -> LocalConstruction:
    """Local perturbation around a pair of orbits, one of three cases.

    ``region`` holds index lists: case ``"A"`` takes ``U_x`` and ``U_y``
    (separate orbits), case ``"B"`` takes ``U`` and a shift ``l`` inside one
    periodic orbit, case ``"C"`` takes ``U`` and ``l > 0`` on an aperiodic
    orbit.  ``F = sum psi_W v_W`` with ``v_W`` within ``eps/4`` of the orbit
    samples ``(f_tilde(T^k q_W))_k``; the case's separation property is
    checked on every pair of region points, and the tower-wise assembly
    ``f'(T^k z) = F(z)|_k`` is extended to the sample by :func:`tietze_extend`.
    """
    if a.k != 1:
        raise ValueError("local constructions are for Z-actions")
    covers = covers or {}
    ftv = _values(f_tilde, a.space)
    m = ftv.shape[1]
    rng = stream(seed, "takens", case)
    table_ = period_table(a, max(a.size, 2 * d + 1), d)

    def per(U):
        ps = {table_.period[int(z)] for z in U}
        if len(ps) != 1:
            raise PreconditionFailed(f"region points have differing periods {sorted(ps)}")
        return ps.pop()

    if case == "A":
        Ux = np.asarray(region["U_x"], dtype=int)
        Uy = np.asarray(region["U_y"], dtype=int)
        if set(Ux.tolist()) & set(Uy.tolist()):
            raise RegionOverlap("U_x and U_y intersect")
        px, py = per(Ux), per(Uy)
        ptx, pty = min(2 * d + 1, px), min(2 * d + 1, py)
        if ptx < pty:
            Ux, Uy, ptx, pty, px, py = Uy, Ux, pty, ptx, py, px
        _check_disjoint(_orbit_sets(a, Ux, ptx) + _orbit_sets(a, Uy, pty))
        cx, pou_x, vt_x = _region_model(a, Ux, ftv, ptx, eps, ptx * m / 2, covers.get("U_x"))
        cy, pou_y, vt_y = _region_model(a, Uy, ftv, pty, eps, pty * m / 2, covers.get("U_y"))
        Fy = np.einsum("wz,wbm->zbm", pou_y.weights, vt_y)
        Fy_rep = Fy[:, np.arange(ptx) % pty, :].reshape(Uy.size, -1)
        rep_verts_y = vt_y[:, np.arange(ptx) % pty, :].reshape(len(cy), -1)
        stars_x, stars_y = _star_sets(pou_x), _star_sets(pou_y)
        for attempt in range(1, RETRIES + 1):
            vx = _perturb(rng, vt_x, eps)
            Fx = np.einsum("wz,wbm->zbm", pou_x.weights, vx)
            gaps = np.abs(Fx.reshape(Ux.size, 1, -1) - Fy_rep[None, :, :]).max(axis=2)
            if gaps.min() > tau_eq:
                break
            log.info("case A attempt %d failed", attempt)
        else:
            i, j = np.unravel_index(np.argmin(gaps), gaps.shape)
            raise SeparationFailed(f"F_x(x') equals the repeated F_y(y') at ({Ux[i]}, {Uy[j]})")
        affine = sum(affinely_independent(np.hstack([vx.reshape(len(cx), -1)[sx].T, rep_verts_y[sy].T]))
                     for sx in {tuple(s) for s in stars_x} for sy in {tuple(s) for s in stars_y})
        parts = [(Ux, Fx, ptx), (Uy, Fy, pty)]
        F = {"U_x": Fx, "U_y": Fy}
        dev_q = max(float(np.abs(vx - vt_x).max()), 0.0)
        sep_record = {"property": "F_x(x') != F_y(y')^repeat", "pairs": int(gaps.size), "min_gap": float(gaps.min()),
                      "affinely_independent_star_pairs": int(affine), "attempts": attempt}
        K = [(int(x), int(y)) for x in Ux for y in Uy]
    elif case in ("B", "C"):
        U = np.asarray(region["U"], dtype=int)
        l = int(region["l"])
        if case == "B":
            p = per(U)
            if p == math.inf:
                raise PreconditionFailed("case B needs periodic region points")
            if not 1 <= l <= p - 1:
                raise PreconditionFailed("case B needs 1 <= l <= p - 1")
            blocks, pt = p, min(2 * d + 1, p)
            bound = pt * m / 2
        else:
            if l < 1:
                raise PreconditionFailed("case C needs l > 0")
            if per(U) <= l + 2 * d:
                # at sample scale "aperiodic" means no return within the window
                raise PreconditionFailed("case C needs region points that do not return within l + 2d steps")
            blocks, pt = l + 2 * d + 1, 2 * d + 1
            bound = (2 * d + 1) / 2
        _check_disjoint(_orbit_sets(a, U, blocks))
        cu, pou, vt = _region_model(a, U, ftv, blocks, eps, bound, covers.get("U"))
        if case == "B":
            idx_x = np.arange(pt)
            idx_y = (np.arange(pt) + l) % p
        else:
            idx_x = np.arange(2 * d + 1)
            idx_y = l + np.arange(2 * d + 1)
        for attempt in range(1, RETRIES + 1):
            v = _perturb(rng, vt, eps)
            Fu = np.einsum("wz,wbm->zbm", pou.weights, v)
            lhs = Fu[:, idx_x, :].reshape(U.size, -1)
            rhs = Fu[:, idx_y, :].reshape(U.size, -1)
            gaps = np.abs(lhs[:, None, :] - rhs[None, :, :]).max(axis=2)
            if gaps.min() > tau_eq:
                break
            log.info("case %s attempt %d failed", case, attempt)
        else:
            i, j = np.unravel_index(np.argmin(gaps), gaps.shape)
            raise SeparationFailed(f"separation fails at ({U[i]}, {U[j]})")
        parts = [(U, Fu, blocks)]
        F = {"U": Fu}
        dev_q = float(np.abs(v - vt).max())
        sep_record = {"property": "window mismatch", "pairs": int(gaps.size), "min_gap": float(gaps.min()),
                      "attempts": attempt}
        shift = a.power(0, l)
        K = [(int(x), int(shift[y])) for x in U for y in U]
    else:
        raise ValueError(f"unknown case {case!r}")

    dom, vals = [], []
    for U_, Fj, nb in parts:
        for k in range(nb):
            dom.append(a.power(0, k)[U_])
            vals.append(Fj[:, k, :])
    domain = np.concatenate(dom)
    fprime = np.vstack(vals)
    dev_prime = float(np.abs(fprime - ftv[domain]).max())
    if not dev_prime < eps:
        raise SeparationFailed(f"assembled f' deviates {dev_prime} from f_tilde, not below eps")
    order_idx = np.argsort(domain)
    f_full = tietze_extend(a.space, domain[order_idx], fprime[order_idx], ftv, eps)
    fv = f_full.values(a.space)
    delay = delay_map_Z(a, fv, d)
    kgaps = np.array([np.abs(delay[x] - delay[y]).max() for x, y in K])
    record = {
        "case": case,
        "anchor_deviation": dev_q,
        "anchor_deviation_below": eps / 2,
        "convex_hull": True,
        "separation": sep_record,
        "f_prime_deviation": dev_prime,
        "f_deviation": float(np.abs(fv - ftv).max()),
        "eps": eps,
        "K_pairs": len(K),
        "K_min_delay_gap": float(kgaps.min()) if kgaps.size else math.inf,
    }
    return LocalConstruction(case, F, fprime[order_idx], domain[order_idx], f_full, record)
