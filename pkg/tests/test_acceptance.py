"""Acceptance suite: one PASS/FAIL line per criterion.

Tolerances are pinned here and nowhere else.  Run under pytest, or directly
with ``python3 tests/test_acceptance.py`` for the bare verdict lines.
"""
import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import sympy

sys.path.insert(0, str(Path(__file__).parent))

from meandim_lab import covers as cv
from meandim_lab.cli import main as cli_main
from meandim_lab.embedders import (delay_map_Z, eps_embed, genericity_experiment, output_gaps, random_trig,
                                   takens_local_construct)
from meandim_lab.errors import PreconditionFailed, ResolutionTooCoarse
from meandim_lab.genlin import enlarge, enumerate_patterns, pattern_generic_independent, symbolic_det_nonzero
from meandim_lab.meandim import mdim_curve, mdim_estimate
from meandim_lab.rokhlin import (FactorMap, build_circle_towers, theorem2_pipeline, torus_towers,
                                 verify_towers)
from meandim_lab.systems import (SampledSpace, circle_rotation, cyclic_action, grid_space, point_system,
                                 product_action, shift_window, system_to_json, trivial_action)

from oracles import all_pairs_min_gap, brute_options, towers_bruteforce, widim_bruteforce

GOLDEN = (5 ** 0.5 - 1) / 2
SQRT2 = 2 ** 0.5 - 1

# pinned tolerances
MDIM_BAND = (0.8, 1.2)
GENERIC_MARGIN = 1e-4     # realized output gap a delay map must exceed to count as injective
GENERIC_PASS = 0.95
OBSTRUCTION_MAX = 0.05
TAU_EQ = 1e-10
ETA_PIPELINE = 0.1


_capture = {}


@pytest.fixture(autouse=True)
def _live_output(capsys):
    _capture["capsys"] = capsys
    yield
    _capture.clear()


def verdict(name, ok, detail):
    with _capture["capsys"].disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}", flush=True)
    return ok


def timed(fn):
    t0 = time.monotonic()
    out = fn()
    return out, time.monotonic() - t0


# -- 1 ----------------------------------------------------------------------------


def _criterion_1():
    s11 = np.arange(11) / 10
    line = SampledSpace(np.abs(s11[:, None] - s11[None, :]))
    line_order = cv.widim(line, 0.35, 0.1, "exact").order
    checked, agree, greedy_ok, seed = 0, True, True, 0
    while checked < 24:
        rng = np.random.default_rng(seed)
        seed += 1
        n = int(rng.integers(5, 11))
        pts = np.round(rng.random((n, int(rng.integers(1, 3)))), 3)
        dist = np.abs(pts[:, None] - pts[None, :]).max(axis=2)
        if np.any(dist[~np.eye(n, dtype=bool)] == 0):
            continue
        eps = float(rng.uniform(0.2, 0.7))
        lam = float(rng.uniform(0.0, 0.5)) * eps
        if brute_options(dist, eps, lam) > 100_000:
            continue
        oracle = widim_bruteforce(dist, eps, lam)
        if oracle is None:
            continue
        s = SampledSpace(dist)
        ex = cv.widim(s, eps, lam, "exact").order
        gr = cv.widim(s, eps, lam, "greedy").order
        agree &= ex == oracle
        greedy_ok &= gr >= ex
        checked += 1
    return line_order, checked, agree, greedy_ok


def test_criterion_1_widim_oracles():
    (line_order, checked, agree, greedy_ok), dt = timed(_criterion_1)
    ok = line_order == 1 and checked >= 20 and agree and greedy_ok and dt < 60
    assert verdict("criterion-1 widim oracles", ok,
                   f"line order {line_order}, {checked} random samples, exact=brute {agree}, "
                   f"greedy>=exact {greedy_ok}, {dt:.1f}s")


# -- 2 ----------------------------------------------------------------------------


def test_criterion_2_mean_dimension():
    def run():
        shift = shift_window(1, 5, 3)
        curve = mdim_curve(shift, 0.4, 0.2, [1, 2, 3], "greedy")
        est = mdim_estimate(curve, 2)
        zero = mdim_estimate(mdim_curve(point_system(), 0.4, 0.0, [1, 2, 3], "exact"), 2)
        return curve, est, zero

    (curve, est, zero), dt = timed(run)
    ok = (MDIM_BAND[0] <= est.value <= MDIM_BAND[1] and est.flag == "upper-bound-only"
          and zero.value == 0.0 and dt < 600)
    rows = ", ".join(f"n={r.n}:{r.value}" for r in curve.rows)
    assert verdict("criterion-2 mean dimension", ok,
                   f"shift rows {rows}, plateau {est.value:.3f} ({est.flag}), point system {zero.value}, {dt:.1f}s")


# -- 3 ----------------------------------------------------------------------------


def _sympy_nonzero(p):
    grid = enlarge(p)
    t = sympy.symbols(f"t1:{int(grid.max()) + 1}")
    mat = sympy.Matrix([[t[v - 1] for v in row] for row in grid.tolist()] + [[1] * grid.shape[1]])
    return sympy.expand(mat.det()) != 0


def test_criterion_3_general_position():
    def run():
        pats = [p for k in (2, 3) for l in (1, 2, 3) for p in enumerate_patterns(k, l)]
        rates, pits, agree = [], [], True
        for p in pats:
            v = pattern_generic_independent(p, 1000, 0)
            rates.append(v.rate)
            pits.append(v.pit_nonzero)
            agree &= v.pit_nonzero == symbolic_det_nonzero(p) == _sympy_nonzero(p)
        return pats, rates, pits, agree

    (pats, rates, pits, agree), dt = timed(run)
    ok = bool(pats) and all(r == 1.0 for r in rates) and all(pits) and agree and dt < 120
    assert verdict("criterion-3 pattern genericity", ok,
                   f"{len(pats)} patterns, min rate {min(rates)}, PIT nonzero {all(pits)}, "
                   f"symbolic agreement {agree}, {dt:.1f}s")


# -- 4 ----------------------------------------------------------------------------


def test_criterion_4_eps_embedding():
    results = []
    for i in range(20):
        rng = np.random.default_rng(i)
        pts = np.sort(rng.random(30))
        s = SampledSpace(np.abs(pts[:, None] - pts[None, :]), declared_dim=1, coords=pts[:, None])
        res = cv.widim(s, 0.15, 0.02, "greedy")
        eps = cv.mesh(res.cover, s) * 1.05 + 1e-3
        m = 2 * res.order + 1
        fv = random_trig(m, 3, i).values(s)
        close = (s.dist < eps) & ~np.eye(30, dtype=bool)
        delta = float(output_gaps(fv)[close].max()) * 1.1 + 1e-3
        r = eps_embed(s, fv, eps, delta, res.cover, i)
        # independent re-scan of the emitted values
        rescan = all_pairs_min_gap(r.values, s.dist, eps)
        dev = float(np.max(np.abs(r.values - fv)))
        results.append((r.sup_deviation < delta, rescan > TAU_EQ, rescan == r.report.realized_margin,
                        dev == r.sup_deviation, r.report.realized_margin))
    rejected = 0
    x = np.arange(5) / 10
    s = SampledSpace(np.abs(x[:, None] - x[None, :]))
    try:
        eps_embed(s, np.zeros((5, 3)), 0.3, 0.1, cv.Cover([[0, 1, 2], [1, 2, 3], [2, 3, 4]], 5), 0)
    except PreconditionFailed:
        rejected += 1
    try:
        steep = np.tile([[0.0], [1.0]], (3, 3))[:5]
        eps_embed(s, steep, 0.15, 0.5, cv.Cover([[0, 1], [1, 2], [2, 3], [3, 4]], 5), 0)
    except PreconditionFailed:
        rejected += 1
    ok = all(all(r[:4]) for r in results) and rejected == 2
    assert verdict("criterion-4 eps-embedding", ok,
                   f"{sum(all(r[:4]) for r in results)}/20 certified and re-scanned bit-for-bit, "
                   f"min realized margin {min(r[4] for r in results):.3e}, gate violations rejected {rejected}/2")


# -- 5 ----------------------------------------------------------------------------


def test_criterion_5_takens_genericity():
    def run():
        a = circle_rotation(GOLDEN, 200, declared_dim=1)
        gold = genericity_experiment(a, 1, 1, {"degree": 5}, 100, margin=GENERIC_MARGIN)
        grid = trivial_action(grid_space(14))
        obst = genericity_experiment(grid, 2, 1, {"degree": 5}, 100, margin=GENERIC_MARGIN)
        return gold, obst

    (gold, obst), dt = timed(run)
    ok = gold.rate >= GENERIC_PASS and obst.rate <= OBSTRUCTION_MAX and gold.hypothesis_holds and dt < 120
    assert verdict("criterion-5 delay genericity", ok,
                   f"golden rate {gold.rate:.2f} (hypothesis {gold.hypothesis_holds}), "
                   f"2-D identity rate {obst.rate:.2f} (hypothesis {obst.hypothesis_holds}), "
                   f"margin {GENERIC_MARGIN}, {dt:.1f}s")


# -- 6 ----------------------------------------------------------------------------


def test_criterion_6_local_constructions():
    eps = 0.2
    a5 = cyclic_action(5)
    ft5 = random_trig(2, 3, 1)
    T = a5.generators[0]
    orbit = [0]
    for _ in range(4):
        orbit.append(int(T[orbit[-1]]))
    b_ok, b_dev, b_pairs = True, 0.0, []
    for l in range(1, 5):
        rb = takens_local_construct("B", a5, {"U": [0], "l": l}, ft5, eps, 0, d=1,
                                    covers={"U": cv.Cover([[0]], 1)})
        # the length-3 window along the orbit differs from the same window shifted by l
        fv = rb.f.values(a5.space)
        window = np.concatenate([fv[orbit[i % 5]] for i in range(3)])
        shifted = np.concatenate([fv[orbit[(i + l) % 5]] for i in range(3)])
        b_pairs.append(l)
        b_ok &= bool(np.abs(window - shifted).max() > TAU_EQ)
        b_dev = max(b_dev, float(np.abs(rb.f_prime - ft5.values(a5.space)[rb.domain]).max()))

    ag = circle_rotation(GOLDEN, 200)
    ftg = random_trig(1, 3, 2)
    U = [0, 1, 2, 3]
    rc = takens_local_construct("C", ag, {"U": U, "l": 3}, ftg, eps, 0, d=1)
    delay = delay_map_Z(ag, rc.f.values(ag.space), 1)
    T3 = ag.power(0, 3)
    c_pairs = [(x, y) for x in U for y in U]
    c_ok = all(np.abs(delay[x] - delay[T3[y]]).max() > TAU_EQ for x, y in c_pairs)
    c_dev = float(np.abs(rc.f_prime - ftg.values(ag.space)[rc.domain]).max())
    ok = b_ok and c_ok and b_dev < eps and c_dev < eps
    assert verdict("criterion-6 local constructions", ok,
                   f"case B shifts l={b_pairs} ok {b_ok}, |f'-f~| {b_dev:.3f}; case C {len(c_pairs)} pairs ok "
                   f"{c_ok}, |f'-f~| {c_dev:.3f}; eps {eps}")


# -- 7 ----------------------------------------------------------------------------


def test_criterion_7a_circle_towers():
    (t, a, info), dt = timed(lambda: build_circle_towers(SQRT2, 10, 2000))
    v = verify_towers(t, a)
    brute = towers_bruteforce([b.tolist() for b in t.bases], t.n, t.margin, a.space.dist, a.generators)
    ok = v.valid and brute and t.D == 1 and dt < 60
    assert verdict("criterion-7a circle towers", ok,
                   f"sqrt(2)-1, n=10, 2000 points, margin {info.margin_steps} steps, D={t.D}, "
                   f"verify {v.valid}, brute force {brute}, q={info.q}, heights {info.heights}, {dt:.1f}s")


@pytest.mark.xfail(raises=ResolutionTooCoarse, strict=True,
                   reason="on 64 points per axis no pair of height-6 towers with a 2-step margin exists "
                          "for either angle; the exact integer program proves infeasibility")
def test_criterion_7b_torus_towers_default_margin():
    try:
        prod, torus = torus_towers([GOLDEN, SQRT2], 6, 64, margin_steps=2)
    except ResolutionTooCoarse as exc:
        verdict("criterion-7b torus towers", False, f"expected failure, 64x64 with 2-step margin: {exc}")
        raise
    v = verify_towers(prod, torus)
    assert verdict("criterion-7b torus towers", v.valid and prod.D == 3, f"D={prod.D}, verify {v.valid}")


def test_criterion_7b_torus_towers_zero_margin():
    """The same 64x64 product with closures equal to the bases; not a substitute for 7b."""
    (res, dt) = timed(lambda: torus_towers([GOLDEN, SQRT2], 6, 64, margin_steps=0))
    prod, torus = res
    v = verify_towers(prod, torus)
    ok = v.valid and prod.D == 3
    assert verdict("criterion-7b-variant torus towers at margin 0", ok, f"D={prod.D}, verify {v.valid}, {dt:.1f}s")


# -- 8 ----------------------------------------------------------------------------


def _ig_oracle(g, generator, n):
    """``I_g`` on the window ``-(n-1)..n-1`` by stepping the generator one point at a time."""
    N = g.shape[0]
    inv = np.empty(N, dtype=int)
    inv[generator] = np.arange(N)
    cols = []
    for w in range(-(n - 1), n):
        img = np.arange(N)
        step = generator if w >= 0 else inv
        for _ in range(abs(w)):
            img = step[img]
        cols.append(g[img])
    return np.hstack(cols)


def test_criterion_8_pipeline():
    def run():
        t, circ, _ = build_circle_towers(GOLDEN, 10, 200, margin_steps=1)
        fib = trivial_action(SampledSpace(np.array([[0, 1 / 3, 1 / 3], [1 / 3, 0, 1 / 3], [1 / 3, 1 / 3, 0]]),
                                          coords=np.array([[0.0], [1 / 3], [2 / 3]])))
        x = product_action([circ, fib])
        pi = FactorMap(np.arange(600) // 3, circ)
        f = random_trig(2, 3, 7)
        fv = f.values(x.space)
        eps = 0.08
        close = (x.space.dist < eps) & ~np.eye(600, dtype=bool)
        delta = float(output_gaps(fv)[close].max()) * 1.1 + 1e-3
        res = theorem2_pipeline(x, pi, t, 1, f, eps, delta, ETA_PIPELINE, 3, lam=0.01)
        return res, x, pi, delta, fv

    (res, x, pi, delta, fv), dt = timed(run)
    Ig = _ig_oracle(res.values, x.generators[0], 10)
    worst = np.inf
    for p in range(600):
        q = np.arange(p + 1, 600)
        hit = q[(pi.pi[q] == pi.pi[p]) & (x.space.dist[p, q] >= ETA_PIPELINE)]
        if hit.size:
            worst = min(worst, float(np.abs(Ig[hit] - Ig[p]).max()))
    ok = (worst > TAU_EQ and res.report.eta_injective and res.reassembly_ok and res.sup_deviation < delta
          and res.values.shape == (600, 2) and np.all((res.values >= 0) & (res.values <= 1)) and dt < 300)
    assert verdict("criterion-8 tower pipeline", ok,
                   f"I_g x pi eta-injective at eta={ETA_PIPELINE}: report {res.report.eta_injective}, all-pairs "
                   f"re-scan margin {worst:.4f}; reassembly {res.reassembly_ok} over {res.reassembly_checked} "
                   f"checks; sup|f-g| {res.sup_deviation:.4f} < delta {delta:.4f}; widim order "
                   f"{res.widim_certificate['order']} < {res.widim_certificate['budget']}; {dt:.1f}s")


# -- 9 ----------------------------------------------------------------------------


def _cli_commands(d: Path):
    def put(name, obj):
        p = d / name
        p.write_text(json.dumps(obj))
        return str(p)

    t, y, _ = build_circle_towers(GOLDEN, 5, 100, 1)
    x = product_action([y, trivial_action(cyclic_action(2).space)])
    circle = put("circle.json", system_to_json(circle_rotation(GOLDEN, 60)))
    line = put("line11.json", {"coords": [i / 10 for i in range(11)], "metric": "sup"})
    line5 = put("line5.json", {"coords": [0, 0.1, 0.2, 0.3, 0.4], "metric": "sup"})
    flat = put("flat.json", {"family": "table", "m": 3, "params": {"values": [[0.5] * 3] * 5}})
    trig = put("trig.json", random_trig(1, 3, 4).to_json())
    y100 = put("y.json", system_to_json(y))
    tfile = put("t.json", t.to_json())
    return [
        ["widim", "--space", line, "--eps", "0.35", "--lam", "0.1"],
        ["mdim", "--system", circle, "--eps", "0.2", "--lam", "0.02", "--n-list", "1,2"],
        ["towers", "--alpha", "0.41421356", "--n", "10", "--resolution", "2000"],
        ["pipeline", "--system", put("x.json", system_to_json(x)), "--base", y100,
         "--factor", put("pi.json", FactorMap(np.arange(200) // 2, y).to_json()), "--towers", tfile,
         "--observable", put("f.json", random_trig(2, 3, 7).to_json()), "--L", "1", "--eps", "0.05",
         "--delta", "0.25", "--eta", "0.1", "--lam", "0.01", "--seed", "5"],
        ["delay", "--system", circle, "--observable", trig, "--d", "1"],
        ["embed", "--space", line5, "--observable", flat, "--eps", "0.15", "--delta", "0.05", "--seed", "2"],
        ["generic", "--system", circle, "--d", "1", "--m", "1", "--seeds", "20", "--seed", "9"],
        ["genlin", "--k", "3", "--l", "3", "--trials", "100", "--seed", "4"],
        ["verify", "--system", y100, "--towers", tfile],
    ]


def test_criterion_9_determinism(tmp_path):
    d = tmp_path / "inputs"
    d.mkdir()
    same, codes = [], []
    for i, argv in enumerate(_cli_commands(d)):
        snaps = []
        for rep in range(2):
            out = tmp_path / f"run{i}_{rep}"
            codes.append(cli_main(["--out", str(out), *argv]))
            snaps.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        same.append((argv[0], snaps[0] == snaps[1] and bool(snaps[0])))
    ok = all(s for _, s in same) and all(c == 0 for c in codes)
    assert verdict("criterion-9 determinism", ok,
                   f"{sum(s for _, s in same)}/{len(same)} subcommands byte-identical "
                   f"({', '.join(n for n, _ in same)}), exit codes {sorted(set(codes))}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
