"""Mean-dimension estimates from normalized widim sequences."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .covers import widim
from .errors import InsufficientRows
from .systems import SampledAction, dynamical_space


@dataclass(frozen=True)
class MdimRow:
    n: int
    value: int
    ratio: float
    mode: str

    @property
    def upper_bound(self) -> bool:
        return self.mode != "exact"


@dataclass(frozen=True)
class MdimCurve:
    eps: float
    lam: float
    k: int
    rows: tuple

    def __post_init__(self):
        ns = [r.n for r in self.rows]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("curve rows must have strictly increasing n")

    def to_rows(self) -> list[dict]:
        return [{"eps": self.eps, "lam": self.lam, "n": r.n, "value": r.value, "ratio": r.ratio, "mode": r.mode}
                for r in self.rows]


def mdim_curve(a: SampledAction, eps: float, lam: float, n_list: Sequence[int], mode: str = "greedy") -> MdimCurve:
    """One row per ``n``: widim of the sample under ``d_[n]`` and its ratio to ``n**k``."""
    rows = []
    for n in sorted(set(int(v) for v in n_list)):
        res = widim(dynamical_space(a, n), eps, lam, mode)
        rows.append(MdimRow(n, res.order, res.order / n ** a.k, mode))
    return MdimCurve(float(eps), float(lam), a.k, tuple(rows))


@dataclass(frozen=True)
class MdimEstimate:
    value: float
    flag: str  # "confident" or "upper-bound-only"
    window: tuple


def mdim_estimate(curve: MdimCurve, plateau_window: int) -> MdimEstimate:
    """Mean of the last ``plateau_window`` ratios."""
    if plateau_window < 1:
        raise ValueError("plateau_window must be positive")
    if len(curve.rows) < plateau_window:
        raise InsufficientRows(f"need {plateau_window} rows, curve has {len(curve.rows)}")
    tail = curve.rows[-plateau_window:]
    value = sum(r.ratio for r in tail) / plateau_window
    flag = "upper-bound-only" if any(r.upper_bound for r in tail) else "confident"
    return MdimEstimate(value, flag, tuple(r.n for r in tail))


def mdim_table(a: SampledAction, eps_grid: Sequence[float], lam: float, n_list: Sequence[int],
               mode: str = "greedy", plateau_window: int = 2) -> list[tuple[MdimCurve, MdimEstimate]]:
    """Curves and plateau estimates over an eps grid; the sup over eps is left to the reader."""
    out = []
    for eps in eps_grid:
        curve = mdim_curve(a, eps, lam, n_list, mode)
        out.append((curve, mdim_estimate(curve, min(plateau_window, len(curve.rows)))))
    return out
