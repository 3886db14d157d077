"""Command-line front end.

Subcommands: ``partition gen|check``, ``bounds``, ``simulate seq|par`` and
``grid``.  Reports go to stdout as JSON; sweeps append rows to a CSV file
with the fixed column set ``CSV_COLUMNS``.  Exit codes: 0 success, 1 engine
or validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import bounds, gridopt, parsim, seqsim, tbp
from .errors import TrisymError
from .kernels import KernelInstance, KernelShape, random_instance, reference

CSV_COLUMNS = (
    "engine", "kernel", "n1", "n2", "M", "P", "algo", "p1", "p2", "b", "seed",
    "plan", "reads", "writes", "words", "peak_memory", "bound", "ratio", "correct",
)


class UsageError(Exception):
    pass


def _emit(obj: dict) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _timestamp(t0: float) -> dict:
    return {"utc": datetime.now(timezone.utc).isoformat(), "wall_clock_s": time.perf_counter() - t0}


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}")


# -- partition -----------------------------------------------------------------


def _build_partition(kind: str, c: int | None) -> tbp.TrianglePartition:
    if kind == "steiner15":
        return tbp.builtin_steiner_15()
    if c is None:
        raise UsageError(f"--c is required for --kind {kind}")
    return tbp.affine_partition(c) if kind == "affine" else tbp.projective_partition(c)


def cmd_partition(args) -> int:
    if args.action == "gen":
        p = _build_partition(args.kind, args.c)
        if args.diagonals and not p.has_diagonals:
            p = tbp.assign_diagonals(p)
        elif not args.diagonals:
            p = p.with_diagonals([() for _ in p.R])
        text = tbp.to_json(p) if args.format == "json" else tbp.to_text(p)
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        return 0

    text = Path(args.file).read_text() if args.file != "-" else sys.stdin.read()
    try:
        p = tbp.from_json(text) if text.lstrip().startswith("{") else tbp.load_steiner(text, args.file)
    except tbp.NotASteinerSystem as exc:
        print(f"invalid: {exc}")
        for name in ("missing", "duplicated"):
            if getattr(exc, name, None) is not None:
                print(f"{name} pair: {getattr(exc, name)}")
        return 1
    report = tbp.validate(p)
    print(f"n={p.n} r={p.r} blocks={p.K} diagonals={'yes' if p.has_diagonals else 'no'}")
    for line in report.lines():
        print(line)
    return 0 if report.ok else 1


# -- bounds --------------------------------------------------------------------


def cmd_bounds(args) -> int:
    s = KernelShape(args.kernel, args.n1, args.n2)
    P = args.P if args.P is not None else 1
    mi = bounds.memindep_lb(s, P)
    out = {
        "kernel": s.kernel.value, "n1": s.n1, "n2": s.n2, "P": P,
        "memindep": {
            "case": mi.case_id, "W": mi.W, "lb": mi.lb,
            "thresholds": list(mi.thresholds),
            "W_by_case": {str(k): v for k, v in mi.W_by_case.items()},
        },
    }
    if args.M is not None:
        out["M"] = args.M
        out["seq_lb"] = bounds.seq_read_lb(s, args.M)
        if args.P is not None:
            out["par_memdep_lb"] = bounds.par_memdep_lb(s, P, args.M)
    _emit(out)
    return 0


# -- simulate ------------------------------------------------------------------


def _instance(args, kernel: str, n1: int, n2: int) -> KernelInstance:
    if args.load:
        with np.load(args.load) as z:
            B = z["B"] if "B" in z.files else None
            inst = KernelInstance(kernel, n1, n2, z["A"], B, z["C"])
    else:
        inst = random_instance(kernel, n1, n2, args.seed)
    if args.dump:
        arrays = {"A": inst.A, "C": inst.C}
        if inst.B is not None:
            arrays["B"] = inst.B
        np.savez(args.dump, **arrays)
    return inst


def _simulate_seq(args, kernel: str, n1: int, n2: int, M: int) -> tuple[dict, dict]:
    inst = _instance(args, kernel, n1, n2)
    s = inst.shape
    kw = {"strategy": args.strategy}
    if args.mode:
        kw["mode"] = args.mode
    res = seqsim.run_seq(inst, M, **kw)
    ref = reference(inst, seqsim.symm_order(res.plan) if s.kernel.value == "symm" else None)
    exact = bool(np.array_equal(res.C_out, ref))
    sb = seqsim.seq_bounds(s, M, res.ledger.reads)
    report = {
        "engine": "seq",
        "params": {"kernel": s.kernel.value, "n1": n1, "n2": n2, "M": M, "seed": args.seed,
                   "strategy": args.strategy, "mode": args.mode},
        "plan": res.plan.describe(),
        "ledger": {"reads": res.ledger.reads, "writes": res.ledger.writes, "peak": res.ledger.peak},
        "bounds": sb,
        "ratios": {"reads_over_lb": res.ledger.reads / sb["seq_lb"] if sb["seq_lb"] > 0 else None,
                   "reads_over_leading": sb["ratio_vs_leading"]},
        "correctness": {"bitwise_equal": exact},
    }
    row = {
        "engine": "seq", "kernel": s.kernel.value, "n1": n1, "n2": n2, "M": M, "P": "",
        "algo": res.plan.mode, "p1": "", "p2": "", "b": "", "seed": args.seed,
        "plan": res.plan.describe().get("origin", res.plan.mode),
        "reads": res.ledger.reads, "writes": res.ledger.writes, "words": "",
        "peak_memory": res.ledger.peak, "bound": sb["seq_lb"], "ratio": sb["ratio_vs_leading"],
        "correct": exact,
    }
    return report, row


def _par_grid(args, s: KernelShape, P: int) -> tuple[str, int, int, int | None, float | None]:
    algo, b, x = args.algo, args.b, args.x
    if algo is None:
        choice = gridopt.select_grid(s, P)
        return choice.algo, choice.p1, choice.p2, None, None
    if algo == "3d-lim":
        if args.p1 and args.p2:
            p1, p2 = args.p1, args.p2
        elif x is not None:
            lp = gridopt.limited_params(P, x, s.n1)
            p1, p2 = lp.p1, lp.p2
            b = b if b is not None else lp.b
        else:
            raise UsageError("--algo 3d-lim needs --x or both --p1 and --p2")
        return algo, p1, p2, b if b is not None else 1, x
    if args.p1 or args.p2:
        p1, p2 = args.p1 or 1, args.p2 or 1
    else:
        p1, p2 = gridopt.family_grid(s, P, algo)
    return algo, p1, p2, None, None


def _simulate_par(args, kernel: str, n1: int, n2: int, P: int) -> tuple[dict, dict]:
    s = KernelShape(kernel, n1, n2)
    algo, p1, p2, b, x = _par_grid(args, s, P)
    inst = _instance(args, kernel, n1, n2)
    spec = parsim.MachineSpec(p1, p2, args.M)
    res = parsim.run_par(inst, spec, algo, b)
    ref = reference(inst)
    err = float(np.max(np.abs(res.result - ref)) / max(np.max(np.abs(ref)), 1e-300))
    led = res.ledger
    words = float(led.max_words_received)
    mi = bounds.memindep_lb(s, P)
    report = {
        "engine": "par",
        "params": {"kernel": s.kernel.value, "n1": n1, "n2": n2, "P": P, "algo": algo,
                   "p1": p1, "p2": p2, "b": b, "x": x, "M": args.M, "seed": args.seed},
        "ledger": led.to_dict(),
        "bounds": {"memindep_case": mi.case_id, "W": mi.W, "memindep_lb": mi.lb,
                   "memdep_lb_at_peak": bounds.par_memdep_lb(s, P, led.peak_memory)},
        "ratios": {"words_over_W": words / mi.W},
        "correctness": {"max_rel_err": err, "ok": err <= 1e-10},
    }
    if x is not None:
        owned = max(r.owned_words for r in led.ranks)
        budget = x * n1 * n1 / (2 * P) + owned
        report["memory_claim"] = {"peak": led.peak_memory, "budget": budget,
                                  "holds": led.peak_memory <= budget,
                                  "words_over_m_n1n2_sqrtPx": words / (s.m * n1 * n2 / math.sqrt(P * x))}
    row = {
        "engine": "par", "kernel": s.kernel.value, "n1": n1, "n2": n2, "M": args.M or "", "P": P,
        "algo": algo, "p1": p1, "p2": p2, "b": b if b is not None else "", "seed": args.seed,
        "plan": f"{p1}x{p2}", "reads": "", "writes": "", "words": words,
        "peak_memory": led.peak_memory, "bound": mi.W, "ratio": words / mi.W, "correct": err <= 1e-10,
    }
    return report, row


def _append_csv(path: str, rows: list[dict]) -> None:
    p = Path(path)
    new = not p.exists() or p.stat().st_size == 0
    with p.open("a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        if new:
            w.writeheader()
        w.writerows(rows)


def cmd_simulate(args) -> int:
    if args.engine == "seq":
        if args.M is None:
            raise UsageError("simulate seq needs --M")
        sizes = [args.n1, args.n2, args.M]
    else:
        if args.P is None:
            raise UsageError("simulate par needs --P")
        sizes = [args.n1, args.n2, args.P]
        args.M = args.M[0] if args.M else None
    if not args.sweep and any(len(v) != 1 for v in sizes):
        raise UsageError("lists of sizes need --sweep")

    reports, rows = [], []
    for n1, n2, third in itertools.product(*sizes):
        t0 = time.perf_counter()
        if args.engine == "seq":
            report, row = _simulate_seq(args, args.kernel, n1, n2, third)
        else:
            report, row = _simulate_par(args, args.kernel, n1, n2, third)
        report["timestamp"] = _timestamp(t0)
        reports.append(report)
        rows.append(row)
    if args.csv:
        _append_csv(args.csv, rows)
    _emit(reports[0] if not args.sweep else {"reports": reports})
    return 0


# -- grid ----------------------------------------------------------------------


def cmd_grid(args) -> int:
    s = KernelShape(args.kernel, args.n1, args.n2)
    out = {"kernel": s.kernel.value, "n1": s.n1, "n2": s.n2, "P": args.P,
           "choice": gridopt.select_grid(s, args.P).to_dict()}
    if args.x is not None:
        out["limited"] = vars(gridopt.limited_params(args.P, args.x, s.n1))
    _emit(out)
    return 0


# -- parser --------------------------------------------------------------------


def _kernel_args(p: argparse.ArgumentParser, lists: bool = False) -> None:
    kind = _int_list if lists else int
    p.add_argument("--kernel", required=True, choices=["syrk", "syr2k", "symm"], type=str.lower)
    p.add_argument("--n1", required=True, type=kind)
    p.add_argument("--n2", required=True, type=kind)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trisym", description="Symmetric kernel communication toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    part = sub.add_parser("partition", help="generate or check triangle block partitions")
    psub = part.add_subparsers(dest="action", required=True)
    gen = psub.add_parser("gen")
    gen.add_argument("--kind", required=True, choices=["affine", "projective", "steiner15"])
    gen.add_argument("--c", type=int)
    gen.add_argument("--diagonals", action="store_true")
    gen.add_argument("--out")
    gen.add_argument("--format", choices=["text", "json"], default="text")
    chk = psub.add_parser("check")
    chk.add_argument("--file", required=True)
    part.set_defaults(func=cmd_partition)

    bnd = sub.add_parser("bounds", help="evaluate lower bounds")
    _kernel_args(bnd)
    bnd.add_argument("--M", type=float)
    bnd.add_argument("--P", type=int)
    bnd.set_defaults(func=cmd_bounds)

    sim = sub.add_parser("simulate", help="run a sequential or parallel simulation")
    sim.add_argument("engine", choices=["seq", "par"])
    _kernel_args(sim, lists=True)
    sim.add_argument("--M", type=_int_list)
    sim.add_argument("--P", type=_int_list)
    sim.add_argument("--algo", choices=["1d", "2d", "3d", "3d-lim"])
    sim.add_argument("--p1", type=int)
    sim.add_argument("--p2", type=int)
    sim.add_argument("--b", type=int)
    sim.add_argument("--x", type=float)
    sim.add_argument("--strategy", choices=["first-fit", "min-reads"], default="first-fit")
    sim.add_argument("--mode", choices=["whole", "elementwise", "chunked"])
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--sweep", action="store_true", help="iterate comma-separated size lists")
    sim.add_argument("--csv", help="append one row per run to this CSV file")
    sim.add_argument("--dump", help="write operands to an .npz file")
    sim.add_argument("--load", help="read operands from an .npz file instead of the PRNG")
    sim.set_defaults(func=cmd_simulate)

    grd = sub.add_parser("grid", help="select algorithm family and processor grid")
    _kernel_args(grd)
    grd.add_argument("--P", required=True, type=int)
    grd.add_argument("--x", type=float)
    grd.set_defaults(func=cmd_grid)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"trisym: error: {exc}", file=sys.stderr)
        return 2
    except (TrisymError, ValueError, OSError) as exc:
        print(f"trisym: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
