"""Finite covers of sampled spaces.

Covers are lists of index sets.  Besides mesh and order, a cover carries a
regularity scale: ``admits(c, s, lam)`` holds when every subset of the
sample with diameter at most ``lam`` sits inside one cover set.  On a finite
sample this is what keeps ``widim`` from collapsing to zero (singletons
always have mesh 0), and as the sample gets denser the admissible ``lam``
shrinks with it.

Subsets of diameter ``<= lam`` are exactly the cliques of the graph
``{d <= lam}``, so it is enough to check the maximal cliques.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import networkx as nx
import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import AnchorConflict, Infeasible, NotACover, SearchCapExceeded
from .systems import SampledSpace

TAU_POU = 1e-9
# slack for comparing floating distances against eps / lam
DIST_TOL = 1e-9
EXACT_CANDIDATE_CAP = 96
EXACT_NODE_CAP = 2_000_000


@dataclass(frozen=True, eq=False)
class Cover:
    """A family of nonempty index sets whose union is ``range(n_points)``."""

    sets: tuple
    n_points: int

    def __init__(self, sets: Iterable[Iterable[int]], n_points: int):
        frozen = tuple(frozenset(int(i) for i in s) for s in sets)
        object.__setattr__(self, "sets", frozen)
        object.__setattr__(self, "n_points", int(n_points))
        if any(not s for s in frozen):
            raise NotACover("cover sets must be nonempty")
        union = frozenset().union(*frozen) if frozen else frozenset()
        if union != frozenset(range(n_points)):
            missing = sorted(set(range(n_points)) - union)
            extra = sorted(union - set(range(n_points)))
            raise NotACover(f"not a cover: missing {missing[:5]} out-of-range {extra[:5]}")

    def __len__(self) -> int:
        return len(self.sets)

    def membership(self) -> np.ndarray:
        """Boolean matrix ``[set, point]``."""
        m = np.zeros((len(self.sets), self.n_points), dtype=bool)
        for i, s in enumerate(self.sets):
            m[i, list(s)] = True
        return m

    def multiplicity(self) -> np.ndarray:
        return self.membership().sum(axis=0)

    def to_json(self) -> dict:
        return {"sets": [sorted(s) for s in self.sets]}

    @classmethod
    def from_json(cls, obj: dict, n_points: int) -> "Cover":
        return cls(obj["sets"], n_points)


def _require(c, s: SampledSpace | None = None) -> Cover:
    if not isinstance(c, Cover):
        raise NotACover("expected a Cover")
    if s is not None and c.n_points != s.size:
        raise NotACover(f"cover is over {c.n_points} points, space has {s.size}")
    return c


def set_diameter(s: SampledSpace, idx) -> float:
    idx = sorted(idx)
    if len(idx) < 2:
        return 0.0
    return float(s.dist[np.ix_(idx, idx)].max())


def mesh(c: Cover, s: SampledSpace) -> float:
    _require(c, s)
    return max((set_diameter(s, u) for u in c.sets), default=0.0)


def order(c: Cover) -> int:
    _require(c)
    return int(c.multiplicity().max()) - 1


def maximal_cliques(s: SampledSpace, lam: float) -> list[frozenset]:
    """Maximal subsets of diameter ``<= lam``."""
    n = s.size
    adj = (s.dist <= lam + DIST_TOL) & ~np.eye(n, dtype=bool)
    if not adj.any():
        return [frozenset([i]) for i in range(n)]
    g = nx.from_numpy_array(adj.astype(np.uint8))
    return sorted((frozenset(q) for q in nx.find_cliques(g)), key=lambda q: (len(q), sorted(q)))


def admits(c: Cover, s: SampledSpace, lam: float) -> bool:
    """True if every subset of diameter ``<= lam`` lies in some cover set."""
    _require(c, s)
    return all(any(q <= u for u in c.sets) for q in maximal_cliques(s, lam))


def lebesgue_number(c: Cover, s: SampledSpace) -> float:
    """Supremum of the admissible ``lam``.

    Admissibility only changes at pairwise distance values, so the answer is
    the smallest distance value at which some subset of that diameter fails
    to fit in a cover set (the supremum is not attained).  A cover that never
    fails, such as the single whole-space set, reports the space diameter.
    """
    _require(c, s)
    values = np.unique(s.dist[np.triu_indices(s.size, 1)])
    for v in values:
        if not admits(c, s, float(v)):
            return float(v)
    return s.diameter()


# -- widim -----------------------------------------------------------------


def ball_candidates(s: SampledSpace, eps: float, radii: Sequence[float] | None = None) -> list[frozenset]:
    """Distinct sample balls ``B(x, r)`` with diameter ``<= eps``.

    ``radii=None`` uses every distance value as a radius, which generates
    every ball the sample can distinguish.
    """
    out = set()
    for x in range(s.size):
        row = s.dist[x]
        rs = np.unique(row) if radii is None else np.unique(np.asarray(radii, dtype=float))
        for r in rs[rs >= 0]:
            ball = np.flatnonzero(row <= r)
            # balls about x are nested, so diameters only grow with r
            if set_diameter(s, ball) > eps + DIST_TOL:
                break
            out.add(frozenset(ball.tolist()))
    return sorted(out, key=lambda b: (len(b), sorted(b)))


@dataclass(frozen=True)
class WidimResult:
    order: int
    cover: Cover
    mode: str
    eps: float
    lam: float
    n_candidates: int
    nodes: int = 0

    @property
    def upper_bound_only(self) -> bool:
        return self.mode != "exact"

    def to_json(self) -> dict:
        return {"order": self.order, "mode": self.mode, "eps": self.eps, "lam": self.lam,
                "n_candidates": self.n_candidates, "cover": self.cover.to_json()}


class _Instance:
    """Bitmask form of a widim problem: requirements are maximal cliques,
    ``options[r]`` the candidates containing requirement ``r``."""

    def __init__(self, s: SampledSpace, eps: float, lam: float, radii=None):
        if eps <= 0 or lam < 0:
            raise ValueError("need eps > 0 and lam >= 0")
        self.s = s
        self.cands = ball_candidates(s, eps, radii)
        self.reqs = maximal_cliques(s, lam)
        self.cmask = [sum(1 << i for i in c) for c in self.cands]
        self.rmask = [sum(1 << i for i in q) for q in self.reqs]
        self.options = []
        for r, rm in enumerate(self.rmask):
            opts = [j for j, cm in enumerate(self.cmask) if rm & ~cm == 0]
            if not opts:
                raise Infeasible(
                    f"no set of diameter <= {eps} contains the {len(self.reqs[r])}-point "
                    f"subset {sorted(self.reqs[r])[:6]} of diameter <= {lam}")
            self.options.append(opts)
        self.satisfies = [[r for r, rm in enumerate(self.rmask) if rm & ~cm == 0] for cm in self.cmask]

    def cover(self, chosen) -> Cover:
        return Cover([self.cands[j] for j in sorted(chosen)], self.s.size)


def _exact(inst: _Instance, node_cap: int):
    n = inst.s.size
    nreq = len(inst.reqs)
    nodes = 0
    members = [list(c) for c in inst.cands]

    def search(bound):
        mult = [0] * n
        sat = [0] * nreq
        chosen = []
        banned = set()

        def fits(j):
            return all(mult[p] < bound for p in members[j])

        def rec():
            nonlocal nodes
            nodes += 1
            if nodes > node_cap:
                raise SearchCapExceeded(f"exact widim exceeded {node_cap} search nodes")
            best, best_opts = None, None
            for r in range(nreq):
                if sat[r]:
                    continue
                opts = [j for j in inst.options[r] if j not in banned and fits(j)]
                if not opts:
                    return False
                if best is None or len(opts) < len(best_opts):
                    best, best_opts = r, opts
                    if len(opts) == 1:
                        break
            if best is None:
                return True
            # try options that satisfy many open requirements first
            best_opts.sort(key=lambda j: -sum(1 for r in inst.satisfies[j] if not sat[r]))
            tried = []
            for j in best_opts:
                chosen.append(j)
                for p in members[j]:
                    mult[p] += 1
                for r in inst.satisfies[j]:
                    sat[r] += 1
                if rec():
                    return True
                chosen.pop()
                for p in members[j]:
                    mult[p] -= 1
                for r in inst.satisfies[j]:
                    sat[r] -= 1
                banned.add(j)
                tried.append(j)
            banned.difference_update(tried)
            return False

        return list(chosen) if rec() else None

    for bound in range(1, len(inst.cands) + 1):
        found = search(bound)
        if found is not None:
            return bound - 1, found, nodes
    raise Infeasible("no admissible cover among the candidates")  # unreachable when options exist


def _greedy_pass(inst: _Instance, req_order):
    n = inst.s.size
    mult = np.zeros(n, dtype=int)
    sat = np.zeros(len(inst.reqs), dtype=int)
    chosen = []
    members = [np.fromiter(c, dtype=int) for c in inst.cands]
    for r in req_order:
        if sat[r]:
            continue
        best, key = None, None
        for j in inst.options[r]:
            peak = int(mult[members[j]].max()) + 1
            gain = int(np.count_nonzero(sat[inst.satisfies[j]] == 0))
            cand_key = (peak, -gain, int(mult[members[j]].sum()), j)
            if key is None or cand_key < key:
                best, key = j, cand_key
        chosen.append(best)
        mult[members[best]] += 1
        sat[inst.satisfies[best]] += 1
    changed = True
    while changed:
        changed = False
        for j in sorted(chosen, key=lambda j: (-int(mult[members[j]].max()), -len(members[j]), j)):
            if np.all(sat[inst.satisfies[j]] >= 2):
                chosen.remove(j)
                mult[members[j]] -= 1
                sat[inst.satisfies[j]] -= 1
                changed = True
                break
    return int(mult.max()) - 1, chosen


def _greedy(inst: _Instance):
    """Clique-driven greedy with redundancy pruning.

    Requirements are visited in a sweep order; each unmet one takes the
    candidate that keeps the running peak multiplicity lowest, then closes
    the most open requirements.  Redundant sets are dropped afterwards,
    highest multiplicity first.  Two sweeps are tried (index order and
    fewest-options-first) and the better cover is kept.
    """
    reqs = range(len(inst.reqs))
    sweeps = [sorted(reqs, key=lambda r: sorted(inst.reqs[r])),
              sorted(reqs, key=lambda r: (len(inst.options[r]), r))]
    return min((_greedy_pass(inst, sw) for sw in sweeps), key=lambda t: t[0])


def widim(s: SampledSpace, eps: float, lam: float, mode: str = "exact", radii=None,
          candidate_cap: int = EXACT_CANDIDATE_CAP, node_cap: int = EXACT_NODE_CAP) -> WidimResult:
    """Smallest order of a ball cover with mesh ``<= eps`` admitting ``lam``.

    ``mode="exact"`` runs an iterative-deepening branch and bound on the
    multiplicity bound and returns the minimum.  ``mode="greedy"`` returns
    an upper bound.  Both return a witness cover.
    """
    inst = _Instance(s, eps, lam, radii)
    if mode == "exact":
        if len(inst.cands) > candidate_cap:
            raise SearchCapExceeded(f"{len(inst.cands)} candidates exceed the exact-mode cap {candidate_cap}")
        value, chosen, nodes = _exact(inst, node_cap)
    elif mode == "greedy":
        value, chosen = _greedy(inst)
        nodes = 0
    else:
        raise ValueError(f"unknown widim mode {mode!r}")
    cover = inst.cover(chosen)
    return WidimResult(value, cover, mode, float(eps), float(lam), len(inst.cands), nodes)


# -- nerve and partitions of unity ------------------------------------------


@dataclass(frozen=True)
class Nerve:
    n_vertices: int
    simplices: frozenset  # of sorted tuples, downward closed, without the empty face

    @property
    def dim(self) -> int:
        return max((len(f) for f in self.simplices), default=0) - 1

    def edges(self) -> list[tuple[int, int]]:
        return sorted(f for f in self.simplices if len(f) == 2)

    def maximal(self) -> list[tuple]:
        return sorted(f for f in self.simplices
                      if not any(len(g) > len(f) and set(f) <= set(g) for g in self.simplices))


def nerve(c: Cover) -> Nerve:
    _require(c)
    m = c.membership()
    tops = {tuple(np.flatnonzero(m[:, p]).tolist()) for p in range(c.n_points)}
    faces = set()
    for top in tops:
        for r in range(1, len(top) + 1):
            faces.update(itertools.combinations(top, r))
    return Nerve(len(c.sets), frozenset(faces))


@dataclass(frozen=True, eq=False)
class PartitionOfUnity:
    weights: np.ndarray  # [set, point]
    anchors: tuple

    def check(self, c: Cover, tau: float = TAU_POU) -> None:
        m = c.membership()
        if np.any(self.weights < 0):
            raise AssertionError("negative weight")
        if np.any((self.weights > 0) & ~m):
            raise AssertionError("weight outside its set")
        if np.max(np.abs(self.weights.sum(axis=0) - 1.0)) > tau:
            raise AssertionError("weights do not sum to one")
        for w, q in enumerate(self.anchors):
            if self.weights[w, q] != 1.0:
                raise AssertionError(f"anchor of set {w} has weight {self.weights[w, q]}")


def _bumps(c: Cover, s: SampledSpace) -> np.ndarray:
    m = c.membership()
    bump = np.zeros(m.shape)
    for w in range(m.shape[0]):
        inside = m[w]
        if inside.all():
            bump[w] = 1.0
        else:
            bump[w, inside] = s.dist[np.ix_(inside, ~inside)].min(axis=1)
    return bump


def default_anchors(c: Cover, s: SampledSpace) -> tuple:
    """Distinct anchors ``q_W in W`` chosen as deep inside their sets as possible."""
    bump = _bumps(c, s)
    if len(c.sets) > s.size:
        raise AnchorConflict("more cover sets than points; anchors cannot be distinct")
    big = 1.0 + bump.max()
    cost = np.where(bump > 0, big - bump, np.inf)
    try:
        rows, cols = linear_sum_assignment(np.where(np.isfinite(cost), cost, 1e12))
    except ValueError as exc:
        raise AnchorConflict(str(exc)) from exc
    anchors = [0] * len(c.sets)
    for r, col in zip(rows, cols):
        if not np.isfinite(cost[r, col]):
            raise AnchorConflict("no system of distinct anchors exists for this cover")
        anchors[r] = int(col)
    return tuple(anchors)


def partition_of_unity(c: Cover, s: SampledSpace, anchors: Sequence[int] | None = None) -> PartitionOfUnity:
    """Normalized distance-to-complement bumps, sharpened at the anchors.

    At an anchor ``q_W`` the weight column becomes the indicator of ``W``;
    elsewhere the bumps are normalized.  Support stays inside each set.
    """
    _require(c, s)
    if anchors is None:
        anchors = default_anchors(c, s)
    anchors = tuple(int(q) for q in anchors)
    if len(anchors) != len(c.sets):
        raise AnchorConflict("one anchor per cover set is required")
    if len(set(anchors)) != len(anchors):
        raise AnchorConflict("anchors must be pairwise distinct")
    for w, q in enumerate(anchors):
        if q not in c.sets[w]:
            raise AnchorConflict(f"anchor {q} is not in cover set {w}")
    bump = _bumps(c, s)
    weights = bump / bump.sum(axis=0, keepdims=True)
    for w, q in enumerate(anchors):
        weights[:, q] = 0.0
        weights[w, q] = 1.0
    return PartitionOfUnity(weights, anchors)
