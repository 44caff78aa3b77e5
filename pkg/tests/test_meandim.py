import pytest

from meandim_lab.errors import InsufficientRows
from meandim_lab.meandim import MdimCurve, MdimRow, mdim_curve, mdim_estimate, mdim_table
from meandim_lab.systems import circle_rotation, point_system


def test_point_system_curve_is_zero():
    curve = mdim_curve(point_system(), 0.3, 0.0, [1, 2, 3], "exact")
    assert [r.ratio for r in curve.rows] == [0.0, 0.0, 0.0]
    est = mdim_estimate(curve, 2)
    assert est.value == 0.0 and est.flag == "confident"


def test_isometry_has_constant_widim_column():
    a = circle_rotation((5 ** 0.5 - 1) / 2, 30)
    curve = mdim_curve(a, 0.2, 0.05, [1, 2, 3, 4], "greedy")
    values = {r.value for r in curve.rows}
    assert len(values) == 1
    ratios = [r.ratio for r in curve.rows]
    assert all(b <= a for a, b in zip(ratios, ratios[1:]))
    assert all(r.ratio == r.value / r.n for r in curve.rows)


def test_estimate_of_constant_ratios():
    rows = tuple(MdimRow(n, 2 * n, 2.0, "exact") for n in (1, 2, 3))
    est = mdim_estimate(MdimCurve(0.1, 0.0, 1, rows), 3)
    assert est.value == 2.0 and est.flag == "confident"


def test_insufficient_rows():
    curve = mdim_curve(point_system(), 0.3, 0.0, [1])
    with pytest.raises(InsufficientRows):
        mdim_estimate(curve, 2)


def test_rows_must_increase():
    with pytest.raises(ValueError):
        MdimCurve(0.1, 0.0, 1, (MdimRow(2, 0, 0.0, "exact"), MdimRow(1, 0, 0.0, "exact")))


def test_table_flags_greedy_rows():
    out = mdim_table(point_system(), [0.2, 0.4], 0.0, [1, 2])
    assert len(out) == 2
    assert all(est.flag == "upper-bound-only" for _, est in out)
