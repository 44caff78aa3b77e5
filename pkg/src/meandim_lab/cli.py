"""Command-line entry point.

Every subcommand parses all of its inputs before computing anything, and
writes its outputs only after the computation succeeded, each file through a
temporary name and an atomic rename.  Outputs carry a digest of the run
configuration (arguments plus input file contents) and contain no clocks or
paths, so repeating a run with the same seed reproduces them byte for byte.

Exit codes: 0 success, 2 unreadable or malformed input, 3 a gate or
precondition failed, 4 a search cap or retry budget ran out.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import itertools
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import covers as cv
from .embedders import (Observable, delay_map_Zk, eps_embed, genericity_experiment, separation_report)
from .errors import (GeneralPositionExhausted, Infeasible, MeandimError, SchemaError, SearchCapExceeded)
from .genlin import enumerate_patterns, pattern_generic_independent, symbolic_det_nonzero
from .meandim import mdim_curve, mdim_estimate
from .rokhlin import (FactorMap, TowerSystem, build_circle_towers, product_towers, theorem2_pipeline,
                      verify_towers)
from .systems import dynamical_space, product_action, space_from_json, system_from_json

log = logging.getLogger("meandim_lab")

EXIT_OK, EXIT_PARSE, EXIT_GATE, EXIT_CAP = 0, 2, 3, 4
_CAP_ERRORS = (SearchCapExceeded, GeneralPositionExhausted, Infeasible)


class InputError(Exception):
    """An input file is missing, unreadable or malformed."""


# -- plumbing ----------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Run:
    """Inputs read so far, and the digest of everything that shapes the output."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.inputs: dict[str, str] = {}

    def load(self, name: str) -> dict:
        path = getattr(self.args, name)
        try:
            raw = Path(path).read_bytes()
            obj = json.loads(raw.decode("utf-8"))
        except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise InputError(f"--{name.replace('_', '-')} {path}: {exc}") from exc
        if not isinstance(obj, dict):
            raise InputError(f"--{name.replace('_', '-')} {path}: expected a JSON object")
        self.inputs[name] = hashlib.sha256(raw).hexdigest()
        return obj

    def digest(self) -> str:
        params = {k: v for k, v in vars(self.args).items() if k not in ("out", "func", "verbose") and k not in self.inputs}
        blob = dumps({"subcommand": self.args.command, "params": params, "inputs": self.inputs})
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def header(self) -> dict:
        return {"config_digest": self.digest(), "subcommand": self.args.command, "seed": getattr(self.args, "seed", None)}


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"{text} is not positive")
    return v


def _parse(fn, *args):
    try:
        return fn(*args)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(str(exc)) from exc


# -- subcommands -----------------------------------------------------------------


def cmd_widim(run: Run) -> dict:
    a = run.args
    if a.n is not None:
        system = _parse(system_from_json, run.load("space"))
        space = dynamical_space(system, a.n)
    else:
        space = _parse(space_from_json, run.load("space"))
    res = cv.widim(space, a.eps, a.lam, a.mode, radii=a.radii)
    row = [a.eps, a.lam, a.n if a.n is not None else "", res.order, res.mode, res.upper_bound_only,
           res.n_candidates, len(res.cover), cv.mesh(res.cover, space)]
    header = ["eps", "lam", "n", "order", "mode", "upper_bound_only", "n_candidates", "n_sets", "mesh"]
    doc = {**run.header(), **res.to_json(), "upper_bound_only": res.upper_bound_only, "n": a.n}
    return {"widim.csv": csv_text(header, [row]), "widim.json": dumps(doc)}


def cmd_mdim(run: Run) -> dict:
    a = run.args
    system = _parse(system_from_json, run.load("system"))
    rows, estimates = [], []
    for eps in a.eps:
        curve = mdim_curve(system, eps, a.lam, a.n_list, a.mode)
        est = mdim_estimate(curve, min(a.window, len(curve.rows)))
        rows += [[r["eps"], r["lam"], r["n"], r["value"], r["ratio"], r["mode"]] for r in curve.to_rows()]
        estimates.append({"eps": eps, "estimate": est.value, "flag": est.flag, "window": list(est.window)})
    doc = {**run.header(), "k": system.k, "estimates": estimates,
           "sup_over_eps": max(e["estimate"] for e in estimates)}
    return {"mdim.csv": csv_text(["eps", "lam", "n", "value", "ratio", "mode"], rows), "mdim.json": dumps(doc)}


def _runs(idx: np.ndarray, size: int) -> list[tuple[int, int]]:
    """Maximal cyclic runs ``[start, stop)`` of consecutive grid indices."""
    if idx.size == 0:
        return []
    if idx.size == size:
        return [(0, size)]
    mark = np.zeros(size, dtype=bool)
    mark[idx] = True
    starts = np.flatnonzero(mark & ~np.roll(mark, 1))
    out = []
    for s in starts:
        e = s
        while mark[e % size]:
            e += 1
        out.append((int(s), int(e)))
    return out


def cmd_towers(run: Run) -> dict:
    a = run.args
    alphas = a.alphas if a.alphas else [a.alpha]
    parts, infos, acts = [], [], []
    for al in alphas:
        t, act, info = build_circle_towers(al, a.n, a.resolution, a.margin_steps, a.budget)
        parts.append(t)
        infos.append(info)
        acts.append(act)
    if len(parts) == 1:
        t, act = parts[0], acts[0]
    else:
        t, act = product_towers(parts), product_action(acts, diagonal=False)
    verdict = verify_towers(t, act)
    N = a.resolution
    rows = []
    if len(parts) == 1:
        header = ["tower", "arc", "start_index", "stop_index", "start", "stop"]
        for i, U in enumerate(t.bases):
            for j, (lo, hi) in enumerate(_runs(U, N)):
                rows.append([i, j, lo, hi, lo / N, hi / N])
    else:
        header = ["tower"] + [f"{ax}{end}" for ax in range(len(parts)) for end in ("_start", "_stop")]
        for i, combo in enumerate(itertools.product(*[p.bases for p in parts])):
            for rect in itertools.product(*[_runs(U, N) for U in combo]):
                rows.append([i] + [v / N for lo_hi in rect for v in lo_hi])
    doc = {**run.header(), "towers": t.to_json(), "verdict": verdict.to_json(), "alphas": alphas,
           "resolution": N, "castles": [vars(i) | {"heights": list(i.heights)} for i in infos]}
    out = {f"{a.emit}.json": dumps(doc), f"{a.emit}_arcs.csv": csv_text(header, rows)}
    if not verdict.valid:
        raise _Failed(EXIT_GATE, "constructed towers failed verification", out)
    return out


def cmd_pipeline(run: Run) -> dict:
    a = run.args
    total = _parse(system_from_json, run.load("system"))
    base = _parse(system_from_json, run.load("base"))
    fobj = run.load("factor")
    t = _parse(TowerSystem.from_json, run.load("towers"))
    f = _parse(Observable.from_json, run.load("observable"))
    if "pi" not in fobj:
        raise InputError("factor map needs 'pi'")
    pi = FactorMap(_parse(np.asarray, fobj["pi"]), base)
    res = theorem2_pipeline(total, pi, t, a.L, f, a.eps, a.delta, a.eta, a.seed, lam=a.lam)
    rows = [[x] + list(v) for x, v in enumerate(res.values)]
    header = ["point"] + [f"g{j}" for j in range(res.values.shape[1])]
    doc = {**run.header(), "report": res.report.to_json(), "window": list(res.window),
           "sup_deviation": res.sup_deviation, "delta": a.delta, "widim_certificate": res.widim_certificate,
           "reassembly": {"checked": res.reassembly_checked, "holds": res.reassembly_ok},
           "claim_chain": res.chain, "per_tower": list(res.per_tower)}
    return {"pipeline.json": dumps(doc), "pipeline_g.csv": csv_text(header, rows)}


def cmd_delay(run: Run) -> dict:
    a = run.args
    system = _parse(system_from_json, run.load("system"))
    h = _parse(Observable.from_json, run.load("observable"))
    vals = delay_map_Zk(system, h, a.d)
    rep = separation_report(vals, system.space.dist, eta=a.eta, margin=a.margin)
    rows = [[x] + list(v) for x, v in enumerate(vals)]
    header = ["point"] + [f"c{j}" for j in range(vals.shape[1])]
    doc = {**run.header(), "d": a.d, "report": rep.to_json()}
    return {"delay.csv": csv_text(header, rows), "delay.json": dumps(doc)}


def cmd_embed(run: Run) -> dict:
    a = run.args
    space = _parse(space_from_json, run.load("space"))
    f = _parse(Observable.from_json, run.load("observable"))
    if a.cover:
        cover = _parse(cv.Cover.from_json, run.load("cover"), space.size)
    else:
        cover = cv.widim(space, a.eps * (1 - 1e-6) - 2 * cv.DIST_TOL, a.lam, "greedy").cover
    res = eps_embed(space, f, a.eps, a.delta, cover, a.seed)
    rows = [[x] + list(v) for x, v in enumerate(res.values)]
    header = ["point"] + [f"g{j}" for j in range(res.values.shape[1])]
    doc = {**run.header(), "report": res.report.to_json(), "sup_deviation": res.sup_deviation,
           "attempts": res.attempts, "certified_pairs": res.certified_pairs, "cover": cover.to_json(),
           "anchors": list(res.anchors), "vertex_values": res.vertex_values}
    return {"embed.json": dumps(doc), "embed_g.csv": csv_text(header, rows)}


def cmd_generic(run: Run) -> dict:
    a = run.args
    system = _parse(system_from_json, run.load("system"))
    family = {"family": a.family, "degree": a.degree}
    rep = genericity_experiment(system, a.d, a.m, family, a.seeds, a.eta, a.margin, a.seed)
    rows = [[i, sd, ok, mg] for i, (sd, ok, mg) in enumerate(zip(rep.seeds, rep.passed, rep.realized_margins))]
    doc = {**run.header(), "rate": rep.rate, "hypothesis_holds": rep.hypothesis_holds,
           "periodic_dims": rep.periodic_dims, "d": a.d, "m": a.m, "family": family}
    return {"generic.csv": csv_text(["trial", "seed", "injective", "realized_margin"], rows),
            "generic.json": dumps(doc)}


def cmd_genlin(run: Run) -> dict:
    a = run.args
    rows, all_ok = [], True
    for p in enumerate_patterns(a.k, a.l):
        v = pattern_generic_independent(p, a.trials, a.seed)
        sym = symbolic_det_nonzero(p) if p.k <= 6 else ""
        all_ok &= v.rate == 1.0 and v.pit_nonzero
        rows.append([json.dumps(p.to_json(), separators=(",", ":")), p.r, v.rate, v.pit_nonzero, sym])
    doc = {**run.header(), "k": a.k, "l": a.l, "patterns": len(rows), "all_generic": all_ok}
    return {"genlin.csv": csv_text(["pattern", "r", "rate", "pit_nonzero", "symbolic_nonzero"], rows),
            "genlin.json": dumps(doc)}


def cmd_verify(run: Run) -> dict:
    a = run.args
    system = _parse(system_from_json, run.load("system"))
    if a.towers:
        t = _parse(TowerSystem.from_json, run.load("towers"))
        verdict = verify_towers(t, system)
        doc = {**run.header(), "kind": "towers", "verdict": verdict.to_json()}
        ok = verdict.valid
    else:
        g = _parse(Observable.from_json, run.load("values"))
        vals = g.values(system.space)
        rep = separation_report(vals, system.space.dist, eta=a.eta, margin=a.margin)
        doc = {**run.header(), "kind": "embedding", "report": rep.to_json()}
        ok = rep.eta_injective
    out = {"verify.json": dumps(doc)}
    if not ok:
        raise _Failed(EXIT_GATE, "verification failed", out)
    return out


class _Failed(Exception):
    def __init__(self, code: int, message: str, outputs: dict | None = None):
        super().__init__(message)
        self.code = code
        self.outputs = outputs or {}


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="meandim-lab", description="Mean-dimension and embedding experiments on sampled Z^k systems.")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--seed", type=int, default=0)
        return sp

    sp = add("widim", cmd_widim, "widim of a sample (or of d_[n] with --n)")
    sp.add_argument("--space", required=True)
    sp.add_argument("--eps", type=_positive, required=True)
    sp.add_argument("--lam", type=float, required=True)
    sp.add_argument("--mode", choices=["exact", "greedy"], default="exact")
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--radii", type=_floats, default=None)

    sp = add("mdim", cmd_mdim, "normalized widim curves and plateau estimates")
    sp.add_argument("--system", required=True)
    sp.add_argument("--eps", type=_floats, required=True)
    sp.add_argument("--lam", type=float, required=True)
    sp.add_argument("--n-list", dest="n_list", type=_ints, required=True)
    sp.add_argument("--mode", choices=["exact", "greedy"], default="greedy")
    sp.add_argument("--window", type=int, default=2)

    sp = add("towers", cmd_towers, "two-tower systems for circle rotations, products for tori")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--alpha", type=float)
    g.add_argument("--alphas", type=_floats)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--resolution", type=int, required=True)
    sp.add_argument("--margin-steps", dest="margin_steps", type=int, default=2)
    sp.add_argument("--budget", type=_positive, default=50.0, help="seconds for the tower search")
    sp.add_argument("--emit", default="towers", help="output file stem")

    sp = add("pipeline", cmd_pipeline, "tower-driven perturbation with I_g x pi separation")
    for name in ("system", "base", "factor", "towers", "observable"):
        sp.add_argument(f"--{name}", required=True)
    sp.add_argument("--L", type=int, required=True)
    sp.add_argument("--eps", type=_positive, required=True)
    sp.add_argument("--delta", type=_positive, required=True)
    sp.add_argument("--eta", type=_positive, required=True)
    sp.add_argument("--lam", type=float, default=0.0)

    sp = add("delay", cmd_delay, "delay-coordinate map and its separation report")
    sp.add_argument("--system", required=True)
    sp.add_argument("--observable", required=True)
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--eta", type=float, default=0.0)
    sp.add_argument("--margin", type=_positive, default=1e-10)

    sp = add("embed", cmd_embed, "eps-embedding perturbation of an observable")
    sp.add_argument("--space", required=True)
    sp.add_argument("--observable", required=True)
    sp.add_argument("--cover", default=None)
    sp.add_argument("--eps", type=_positive, required=True)
    sp.add_argument("--delta", type=_positive, required=True)
    sp.add_argument("--lam", type=float, default=0.0)

    sp = add("generic", cmd_generic, "seeded genericity experiment for delay maps")
    sp.add_argument("--system", required=True)
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--family", choices=["trig"], default="trig")
    sp.add_argument("--degree", type=int, default=5)
    sp.add_argument("--seeds", type=int, default=100)
    sp.add_argument("--eta", type=float, default=0.0)
    sp.add_argument("--margin", type=_positive, default=1e-10)

    sp = add("genlin", cmd_genlin, "pattern enumeration with Monte-Carlo and identity tests")
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--l", type=int, required=True)
    sp.add_argument("--trials", type=int, default=1000)

    sp = add("verify", cmd_verify, "re-check a tower file or an embedding table")
    sp.add_argument("--system", required=True)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--towers")
    g.add_argument("--values")
    sp.add_argument("--eta", type=float, default=0.0)
    sp.add_argument("--margin", type=_positive, default=1e-10)
    return p


def _error(code: int, message: str, extra: dict | None = None) -> int:
    sys.stderr.write(dumps({"error": message, "exit": code, **(extra or {})}))
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    run = Run(args)
    out_dir = Path(args.out)
    try:
        outputs = args.func(run)
    except InputError as exc:
        return _error(EXIT_PARSE, str(exc))
    except SchemaError as exc:
        return _error(EXIT_PARSE, str(exc), {"code": exc.code})
    except _Failed as exc:
        for name, text in exc.outputs.items():
            write_atomic(out_dir / name, text)
        return _error(exc.code, str(exc))
    except _CAP_ERRORS as exc:
        return _error(EXIT_CAP, str(exc), {"code": exc.code})
    except MeandimError as exc:
        return _error(EXIT_GATE, str(exc), {"code": exc.code, "certificate": getattr(exc, "certificate", None)})
    for name, text in outputs.items():
        write_atomic(out_dir / name, text)
    print(dumps({"outputs": sorted(outputs), "config_digest": run.digest()}), end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
