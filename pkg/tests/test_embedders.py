import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meandim_lab import covers as cv
from meandim_lab.embedders import (Observable, delay_map_Z, delay_map_Zk, eps_embed, genericity_experiment,
                                   random_trig, repeat_block, separation_report, table, takens_local_construct,
                                   tietze_extend)
from meandim_lab.errors import OrderBoundViolated, PreconditionFailed, RegionOverlap, SchemaError
from meandim_lab.systems import (SampledSpace, circle_rotation, cyclic_action, grid_space, point_system,
                                 torus_rotation, trivial_action)

from oracles import all_pairs_min_gap

GOLDEN = (5 ** 0.5 - 1) / 2


def line(n, gap=0.1):
    x = np.arange(n) * gap
    return SampledSpace(np.abs(x[:, None] - x[None, :]), coords=x[:, None])


def cos_obs(a):
    return table(0.5 + 0.5 * np.cos(2 * np.pi * a.space.coords[:, 0]))


def test_delay_d0_is_h():
    a = circle_rotation(GOLDEN, 20)
    h = random_trig(2, 3, 0)
    assert np.array_equal(delay_map_Z(a, h, 0), h.values(a.space))


def test_delay_matches_direct_loop():
    a = circle_rotation(GOLDEN, 30)
    hv = random_trig(2, 3, 4).values(a.space)
    T = a.generators[0]
    out = delay_map_Z(a, hv, 2)
    for x in range(a.size):
        y, want = x, []
        for _ in range(5):
            want.extend(hv[y])
            y = T[y]
        assert np.array_equal(out[x], want)


def test_constant_h_is_never_injective():
    a = circle_rotation(GOLDEN, 20)
    rep = separation_report(delay_map_Z(a, np.full(20, 0.3), 2), a.space.dist)
    assert rep.min_separation == 0 and not rep.eta_injective


def test_golden_cos_delay_is_injective():
    a = circle_rotation(GOLDEN, 64)
    vec = delay_map_Z(a, cos_obs(a), 1)
    rep = separation_report(vec, a.space.dist)
    assert rep.min_separation > 0 and rep.eta_injective
    assert rep.realized_margin == pytest.approx(all_pairs_min_gap(vec, a.space.dist, 0.0))


def test_zk_agrees_with_z_for_k1():
    a = circle_rotation(GOLDEN, 40)
    h = random_trig(3, 4, 9)
    for d in range(3):
        assert np.array_equal(delay_map_Zk(a, h, d), delay_map_Z(a, h, d))


def test_torus_delay_injective():
    a = torus_rotation([2 ** 0.5 - 1, 3 ** 0.5 - 1], [16, 16])
    f = random_trig(1, 3, 5)
    assert np.array_equal(delay_map_Zk(a, f, 0), f.values(a.space))
    vec = delay_map_Zk(a, f, 1)
    assert vec.shape == (256, 9)
    assert separation_report(vec, a.space.dist).eta_injective


def test_separation_identity_payloads():
    s = line(6)
    rep = separation_report(s.coords, s.dist)
    assert rep.eta_injective
    assert rep.min_separation == pytest.approx(s.min_gap())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.0, 0.5))
def test_separation_invariant_under_relabeling(seed, eta):
    rng = np.random.default_rng(seed)
    pts = rng.random((9, 2))
    dist = np.abs(pts[:, None] - pts[None, :]).max(axis=2)
    vals = np.round(rng.random((9, 2)), 1)
    perm = rng.permutation(9)
    a = separation_report(vals, dist, eta=eta)
    b = separation_report(vals[perm], dist[np.ix_(perm, perm)], eta=eta)
    assert a.eta_injective == b.eta_injective
    assert a.min_separation == b.min_separation
    assert a.realized_margin == b.realized_margin


def test_separation_pair_subset():
    s = line(4)
    vals = np.array([0.0, 0.0, 1.0, 1.0])
    rep = separation_report(vals, s.dist, pairs=[(0, 2), (1, 3)])
    assert rep.eta_injective and rep.n_pairs == 2
    with pytest.raises(ValueError):
        separation_report(vals, s.dist, pairs=[(1, 1)])


def test_genericity_point_system():
    rep = genericity_experiment(point_system(), 1, 1, {"degree": 3}, 5)
    assert rep.rate == 1.0


def test_genericity_identity_on_grid_obstruction():
    # a finite sample never forces an exact collision; the obstruction shows as collapsing margins
    a = trivial_action(grid_space(14))
    rep = genericity_experiment(a, 2, 1, {"degree": 3}, 20, margin=1e-4)
    assert rep.rate <= 0.05
    assert not rep.hypothesis_holds


def test_repeat_block_examples():
    v = np.array([[1.0], [2.0]])
    assert np.array_equal(repeat_block(v, 2), v)
    assert repeat_block(v, 5)[:, 0].tolist() == [1, 2, 1, 2, 1]
    assert repeat_block(np.array([[7.0]]), 3)[:, 0].tolist() == [7, 7, 7]
    with pytest.raises(ValueError):
        repeat_block(v, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 9), st.integers(1, 3))
def test_repeat_block_idempotent(p, target, m):
    v = np.arange(p * m, dtype=float).reshape(p, m)
    once = repeat_block(v, target)
    assert np.array_equal(repeat_block(once, target), once)
    for k in range(target):
        assert np.array_equal(once[k], v[k % p])


def test_eps_embed_single_point():
    s = SampledSpace(np.zeros((1, 1)))
    res = eps_embed(s, np.array([[0.2, 0.9]]), 0.1, 0.1, cv.Cover([[0]], 1), 0)
    assert res.sup_deviation < 0.1
    assert res.report.eta_injective


def test_eps_embed_collinear_chain():
    s = line(5)
    f = np.tile([0.5, 0.5, 0.5], (5, 1))  # constant, so the perturbation alone separates
    cover = cv.Cover([[0, 1], [1, 2], [2, 3], [3, 4]], 5)
    assert cv.order(cover) == 1
    res = eps_embed(s, f, 0.15, 0.05, cover, 7)
    assert res.sup_deviation < 0.05
    gaps = all_pairs_min_gap(res.values, s.dist, 0.15)
    assert gaps > 0
    assert res.report.realized_margin == gaps


def test_eps_embed_gates():
    s = line(5)
    f = np.zeros((5, 3))
    thick = cv.Cover([[0, 1, 2], [1, 2, 3], [2, 3, 4]], 5)
    with pytest.raises(PreconditionFailed):
        eps_embed(s, f, 0.3, 0.1, thick, 0)  # order 2, m = 3
    steep = np.array([[0, 0, 0], [1, 1, 1], [0, 0, 0], [1, 1, 1], [0, 0, 0]], dtype=float)
    cover = cv.Cover([[0, 1], [1, 2], [2, 3], [3, 4]], 5)
    with pytest.raises(PreconditionFailed):
        eps_embed(s, steep, 0.15, 0.5, cover, 0)


def test_tietze_examples():
    s = line(6)
    ft = random_trig(2, 3, 1)
    ftv = ft.values(s)
    assert np.array_equal(tietze_extend(s, range(6), ftv * 0.99, ft, 0.1).values(s), ftv * 0.99)
    assert np.array_equal(tietze_extend(s, [], [], ft, 0.1).values(s), ftv)
    target = np.clip(ftv[2] + 0.05, 0, 1)
    f = tietze_extend(s, [2], [target], ft, 0.1).values(s)
    assert np.array_equal(f[2], target)
    assert np.abs(f - ftv).max() < 0.1
    far = np.where(ftv[2] < 0.5, ftv[2] + 0.4, ftv[2] - 0.4)
    with pytest.raises(PreconditionFailed):
        tietze_extend(s, [2], [far], ft, 0.1)


@pytest.mark.parametrize("l", [1, 2, 3, 4])
def test_case_b_five_cycle(l):
    a = cyclic_action(5)
    ft = random_trig(2, 3, 1)
    eps = 0.2
    r = takens_local_construct("B", a, {"U": [0], "l": l}, ft, eps, 0, d=1, covers={"U": cv.Cover([[0]], 1)})
    # independent rescan: the delay vector of x and of T^l x differ
    fv = r.f.values(a.space)
    T = a.generators[0]
    orbit = [0]
    for _ in range(4):
        orbit.append(int(T[orbit[-1]]))
    window = np.concatenate([fv[orbit[i % 5]] for i in range(3)])
    shifted = np.concatenate([fv[orbit[(i + l) % 5]] for i in range(3)])
    assert np.abs(window - shifted).max() > 0
    assert np.abs(r.f_prime - ft.values(a.space)[r.domain]).max() < eps
    assert r.record["anchor_deviation"] < eps / 2


def test_case_c_golden():
    a = circle_rotation(GOLDEN, 200)
    ft = random_trig(1, 3, 2)
    eps = 0.2
    U = [0, 1, 2, 3]
    r = takens_local_construct("C", a, {"U": U, "l": 3}, ft, eps, 0, d=1)
    delay = delay_map_Z(a, r.f.values(a.space), 1)
    T3 = a.power(0, 3)
    for x in U:
        for y in U:
            assert np.abs(delay[x] - delay[T3[y]]).max() > 0
    assert np.abs(r.f_prime - ft.values(a.space)[r.domain]).max() < eps


def test_case_a_overlap_and_order_bound():
    a = circle_rotation(GOLDEN, 200)
    ft = random_trig(1, 3, 2)
    with pytest.raises(RegionOverlap):
        takens_local_construct("A", a, {"U_x": [0, 1], "U_y": [0, 1]}, ft, 0.2, 0)
    r = takens_local_construct("A", a, {"U_x": [0, 1, 2], "U_y": [100, 101, 102]}, ft, 0.2, 0)
    assert r.record["separation"]["min_gap"] > 0
    # case C needs order below (2d+1)/2 = 1.5; this cover has order 2
    thick = cv.Cover([[0, 1, 2], [0, 1], [0, 2]], 3)
    with pytest.raises(OrderBoundViolated):
        takens_local_construct("C", a, {"U": [0, 1, 2], "l": 3}, ft, 0.2, 0, covers={"U": thick})


def test_observable_json():
    h = random_trig(2, 3, 11)
    back = Observable.from_json(h.to_json())
    s = line(5)
    assert np.array_equal(back.values(s), h.values(s))
    with pytest.raises(SchemaError):
        Observable.from_json({"schema": "x/1", "family": "trig", "m": 1})
    with pytest.raises(SchemaError):
        Observable("weird", 1).values(s)
