"""Command-line front end: solve, verify, wkb-table, ode, crosscheck, sweep.

Exit codes: 0 success, 1 usage or domain error, 2 numerical failure
(non-convergence, constraint violation, inadmissible quantum numbers).
Error objects are printed to stderr as JSON and, when --out is given,
written there as well.
"""
import argparse
import csv
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import iba, odeim, wkb
from .errors import AdmissibilityError, BetheError, DomainError
from .partitions import parse_partition
from .special import alpha_context

COMMANDS = ("solve", "verify", "wkb-table", "ode", "crosscheck", "sweep")
THREADS_ENV = "BETHE_IBA_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ------------------------------------------------------------- output

def _plain(v):
    """Recursively convert numpy scalars and tuples to JSON-native values."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else repr(v)
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if v is None or isinstance(v, (bool, int, str)):
        return v
    return str(v)


def dumps_json(obj):
    """Sorted keys; floats in shortest round-trip form (Python repr)."""
    return json.dumps(_plain(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def dumps_csv(header, rows, comment=None):
    buf = io.StringIO()
    if comment:
        buf.write(comment.rstrip("\n") + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def write_atomic(path, text):
    """Write text to path through a temporary file in the same directory and a rename."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(args, text):
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


def _emit_table(args, header, rows, payload, comment=None):
    if args.format == "csv":
        _emit(args, dumps_csv(header, rows, comment))
    else:
        _emit(args, dumps_json(payload))


# ----------------------------------------------------------- parser

def build_parser():
    ap = _Parser(prog="bethe-iba", description="Integral Bethe ansatz solver and ODE/IM checks.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, partition=True, p=True):
        sp.add_argument("--alpha", type=float, required=True, help="degree alpha > 1 (alpha >= 1 for ode)")
        if p:
            sp.add_argument("--p", type=float, help="momentum p > 0")
        if partition:
            sp.add_argument("--partition", default="", help='partition "nu1,nu2,..." (empty: ground state)')
        sp.add_argument("--k-max", type=int, default=None, help="highest root or level index")
        sp.add_argument("--tol", type=float, default=None, help="fixed-point tolerance")
        sp.add_argument("--out", default=None, help="output path (default stdout)")
        sp.add_argument("--format", choices=("json", "csv"), default="json", help="output format")

    common(sub.add_parser("solve", help="solve the IBA and list the Bethe roots"))
    common(sub.add_parser("verify", help="solve and check BAE residuals and hole conditions"))
    sp = sub.add_parser("wkb-table", help="tabulate tau, D tau and the linearised solution")
    common(sp)
    sp = sub.add_parser("ode", help="eigenvalues of the (monster) anharmonic oscillator")
    common(sp)
    sp.add_argument("--ell", type=float, default=None, help="angular momentum (default: from --p)")
    common(sub.add_parser("crosscheck", help="compare Bethe roots with ODE eigenvalues"))
    sp = sub.add_parser("sweep", help="ground or excited state solves over a list of p")
    common(sp, p=False)
    sp.add_argument("--p-list", required=True, help="comma separated momenta")
    return ap


def _config(args):
    cfg = iba.IbaConfig()
    if args.k_max is not None:
        cfg = replace(cfg, k_max=args.k_max)
    if args.tol is not None:
        cfg = replace(cfg, tol_fp=args.tol)
    return cfg


def _need_p(args):
    if args.p is None:
        raise UsageError("--p is required")
    return args.p


# --------------------------------------------------------- commands

def cmd_solve(args):
    ctx = alpha_context(args.alpha)
    nu = parse_partition(args.partition)
    sol = iba.solve(ctx, _need_p(args), nu, _config(args))
    if args.format == "csv":
        _emit(args, dumps_csv(iba.ROOT_CSV_HEADER, iba.root_table(sol)))
    else:
        _emit(args, dumps_json(iba.solution_to_dict(sol)))
    return 0


def verify_report(sol, n_roots=20, tol=1e-6):
    ks = [k for k in sorted(sol.roots)][:n_roots]
    logs = iba.log_bae_residuals(sol, ks)
    mults = [iba.mult_bae_residual(sol, k)[0] for k in ks]
    sig = sol.problem.sigma
    zh = iba.z_eval(sol, sol.h) if len(sig) else np.zeros(0)
    hole_err = float(np.max(np.abs(zh - (np.asarray(sig) + 0.5)))) if len(sig) else 0.0
    asym = iba.check_asymptotics(sol)
    checks = {
        "log_bae": float(np.max(logs)) < tol,
        "mult_bae": max(mults) < tol,
        "holes": hole_err < 1e-9,
        "contraction": sol.diagnostics["contraction_ratio"] < 1.0,
    }
    return {
        "alpha": sol.ctx.alpha, "p": sol.p, "partition": list(sol.partition.parts),
        "iterations": sol.diagnostics["iterations"],
        "contraction_ratio": sol.diagnostics["contraction_ratio"],
        "log_bae_max": float(np.max(logs)), "mult_bae_max": float(max(mults)),
        "hole_error": hole_err, "asymptotics": asym,
        "checks": checks, "passed": all(checks.values()),
    }


def cmd_verify(args):
    ctx = alpha_context(args.alpha)
    sol = iba.solve(ctx, _need_p(args), parse_partition(args.partition), _config(args))
    rep = verify_report(sol)
    rows = [(name, ok) for name, ok in sorted(rep["checks"].items())]
    _emit_table(args, ("check", "passed"), rows, rep)
    return 0 if rep["passed"] else 2


def cmd_wkb_table(args):
    ctx = alpha_context(args.alpha)
    nu = parse_partition(args.partition)
    n = args.k_max or 50
    xi = np.geomspace(1.0, 100.0, n)
    t = wkb.tau_all(ctx, xi)
    resid = t[0] + 2 - wkb.k1_tau(ctx, xi)
    header = ["xi", "tau", "dtau", "d2tau", "residual"]
    cols = [xi, t[0], t[1], t[2], resid]
    if args.p is not None:
        lin = wkb.linearized_solution(ctx, args.p, wkb.omega_h(ctx, args.p, nu.H))
        lb, dl = lin.both(xi)
        header += ["lbar", "dlbar"]
        cols += [lb, dl]
    rows = [tuple(float(c[i]) for c in cols) for i in range(n)]
    payload = {"alpha": ctx.alpha, "p": args.p, "columns": header, "rows": rows}
    _emit_table(args, header, rows, payload)
    return 0


def cmd_ode(args):
    a = args.alpha
    if not a >= 1.0:
        raise DomainError("alpha must be >= 1", alpha=a)
    ctx = a if a == 1.0 else alpha_context(a)
    if args.ell is not None:
        ell = args.ell
    elif args.p is not None:
        ell = odeim.ELL_MAPS["quarter"](a, args.p)
    else:
        raise UsageError("--ell or --p is required")
    nu = parse_partition(args.partition)
    count = (args.k_max if args.k_max is not None else 9) + 1
    z = ()
    if nu.N:
        if isinstance(ctx, float):
            raise DomainError("monster potentials need alpha > 1")
        z = odeim.solve_monster(ctx, ell, nu).z
    E = odeim.eigenvalues(ctx, ell, z, count)
    payload = {"alpha": a, "ell": ell, "N": nu.N,
               "z": [{"re": float(np.real(v)), "im": float(np.imag(v))} for v in z],
               "eigenvalues": [float(e) for e in E]}
    _emit_table(args, ("k", "E_k"), list(enumerate(E)), payload)
    return 0


def cmd_crosscheck(args):
    ctx = alpha_context(args.alpha)
    nu = parse_partition(args.partition)
    k_hi = args.k_max if args.k_max is not None else 5
    cc = odeim.crosscheck(ctx, _need_p(args), nu, range(0, k_hi + 1), _config(args))
    header = ("k", "x_k", "E_k", "scaled_ratio", "deviation")
    rows = [tuple(r[h] for h in header) for r in cc.rows]
    payload = {"alpha": cc.alpha, "p": cc.p, "ell": cc.ell, "eta_power": cc.eta_power,
               "ell_map": cc.ell_map, "rows": cc.rows}
    _emit_table(args, header, rows, payload, comment=cc.header())
    return 0


SWEEP_HEADER = ("p", "iterations", "contraction_ratio", "omega", "x0", "x0_scaled",
                "root_remainder_p2", "oscillation_scale", "residual_max")


def sweep_row(alpha, p, partition, config):
    ctx = alpha_context(alpha)
    sol = iba.solve(ctx, p, parse_partition(partition), config)
    k0 = min(sol.roots)
    x0 = sol.roots[k0]
    return (p, sol.diagnostics["iterations"], sol.diagnostics["contraction_ratio"], sol.omega, x0,
            x0 * p ** (-2 * alpha / (1 + alpha)) / ctx.A,
            iba.root_remainder(sol, k0), iba.oscillation_scale(sol),
            sol.diagnostics["residual_max"])


def _threads(n):
    env = os.environ.get(THREADS_ENV)
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be a positive integer")
        if cap < 1:
            raise UsageError(f"{THREADS_ENV} must be a positive integer")
    return max(1, min(cap, n))


def cmd_sweep(args):
    alpha_context(args.alpha)
    try:
        ps = [float(v) for v in args.p_list.split(",") if v.strip()]
    except ValueError:
        raise UsageError("--p-list must be comma separated numbers")
    if not ps:
        raise UsageError("--p-list is empty")
    cfg = _config(args)
    n = _threads(len(ps))
    job = [(args.alpha, p, args.partition, cfg) for p in ps]
    if n == 1:
        rows = [sweep_row(*j) for j in job]
    else:
        with ProcessPoolExecutor(max_workers=n) as ex:
            rows = list(ex.map(sweep_row, *zip(*job)))
    payload = {"alpha": args.alpha, "partition": args.partition,
               "rows": [dict(zip(SWEEP_HEADER, r)) for r in rows]}
    _emit_table(args, SWEEP_HEADER, rows, payload)
    return 0


HANDLERS = {"solve": cmd_solve, "verify": cmd_verify, "wkb-table": cmd_wkb_table,
            "ode": cmd_ode, "crosscheck": cmd_crosscheck, "sweep": cmd_sweep}


def _fail(args, code, obj):
    text = dumps_json(obj)
    sys.stderr.write(text)
    if args is not None and getattr(args, "out", None):
        try:
            write_atomic(args.out, text)
        except OSError:
            pass
    return code


def main(argv=None):
    args = None
    try:
        args = build_parser().parse_args(argv)
        return HANDLERS[args.command](args)
    except UsageError as exc:
        return _fail(args, 1, {"error": "UsageError", "message": str(exc), "diagnostics": {}})
    except AdmissibilityError as exc:
        return _fail(args, 2, exc.to_dict())
    except DomainError as exc:
        return _fail(args, 1, exc.to_dict())
    except BetheError as exc:
        return _fail(args, 2, exc.to_dict())


if __name__ == "__main__":
    sys.exit(main())
