"""Command-line front end.

``ipoc solve`` runs one benchmark with one method and writes the node
trajectories as CSV plus a JSON report; ``ipoc table`` renders one or more
reports as the standard comparison table; ``ipoc plot`` turns a trajectory
CSV back into figures. ``solve --figures DIR`` renders the same figures
directly, next to the delimited output.

Exit codes: 2 unknown problem, 3 solver failure (a partial report is still
written when a report path was given), 64 invalid flags or empty input,
65 malformed report file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from . import continuation, diagnostics, problems
from .errors import ContinuationError, IpocError

EXIT_UNKNOWN_PROBLEM = 2
EXIT_SOLVER_FAILURE = 3
EXIT_USAGE = 64
EXIT_BAD_REPORT = 65

TABLE_COLUMNS = ("Method", "decay ratio α", "number of iterations",
                 "final length of time array", "exec. time")


class _Parser(argparse.ArgumentParser):
    """argparse with the usage-error exit status fixed at 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _atomic_write(path, text):
    """Write text to path via a temp file in the same directory + rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v):
    return format(float(v), ".17g")


def _trajectory_csv(spec, solution, lam_g, lam_c):
    d = spec.dims
    header = (["t"]
              + [f"x{i + 1}" for i in range(d.n)]
              + [f"p{i + 1}" for i in range(d.n)]
              + [f"u{i + 1}" for i in range(d.m)]
              + [f"lg{i + 1}" for i in range(d.n_g)]
              + [f"lc{i + 1}" for i in range(d.n_c)])
    t = solution.mesh.nodes
    blocks = [t[:, None], solution.Y, solution.Z_nodes[:, :d.m]]
    if d.n_g:
        blocks.append(np.asarray(lam_g).reshape(t.size, d.n_g))
    if d.n_c:
        blocks.append(np.asarray(lam_c).reshape(t.size, d.n_c))
    data = np.hstack(blocks)
    lines = [",".join(header)]
    for row in data:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _figure_paths(out_dir, stem):
    return {
        "states": os.path.join(out_dir, f"{stem}_states.png"),
        "adjoints": os.path.join(out_dir, f"{stem}_adjoints.png"),
        "controls": os.path.join(out_dir, f"{stem}_controls.png"),
        "multipliers": os.path.join(out_dir, f"{stem}_multipliers.png"),
    }


def _render_figures(t, groups, out_dir, stem):
    """Render one figure per non-empty variable group; return written paths.

    ``groups`` maps group name -> (array of shape (len(t), k), label prefix).
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    paths = _figure_paths(out_dir, stem)
    written = []
    for key, (arr, label) in groups.items():
        if arr is None or arr.size == 0:
            continue
        fig, ax = plt.subplots(figsize=(7.0, 4.0))
        for j in range(arr.shape[1]):
            ax.plot(t, arr[:, j], label=f"{label}{j + 1}")
        ax.set_xlabel("t")
        ax.set_title(key)
        ax.legend(loc="best", fontsize="small")
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(paths[key], dpi=130)
        plt.close(fig)
        written.append(paths[key])
    return written


def _solution_groups(spec, solution, lam_g, lam_c):
    d = spec.dims
    lam = []
    if d.n_g:
        lam.append(np.asarray(lam_g).reshape(-1, d.n_g))
    if d.n_c:
        lam.append(np.asarray(lam_c).reshape(-1, d.n_c))
    lam_block = np.hstack(lam) if lam else None
    return {
        "states": (solution.Y[:, :d.n], "x"),
        "adjoints": (solution.Y[:, d.n:], "p"),
        "controls": (solution.Z_nodes[:, :d.m], "u"),
        "multipliers": (lam_block, "lam"),
    }


def _resolved_config(bundle, args):
    cfg = bundle.config(args.method)
    eps0 = cfg.eps0 if args.eps0 is None else args.eps0
    alpha = cfg.alpha if args.alpha is None else args.alpha
    tol = cfg.tol if args.tol is None else args.tol
    opts = bundle.solver_options
    if args.newton_tol is not None or args.mesh_tol is not None:
        from dataclasses import replace
        kw = {}
        if args.newton_tol is not None:
            kw["newton_tol"] = args.newton_tol
        if args.mesh_tol is not None:
            kw["mesh_tol"] = args.mesh_tol
        opts = replace(opts, **kw)
    return continuation.ContinuationConfig(eps0=eps0, alpha=alpha, tol=tol), opts


def cmd_solve(args):
    if args.problem not in problems.REGISTRY:
        known = ", ".join(sorted(problems.REGISTRY))
        print(f"unknown problem {args.problem!r}; available: {known}",
              file=sys.stderr)
        return EXIT_UNKNOWN_PROBLEM

    bundle = problems.REGISTRY[args.problem]()
    config, options = _resolved_config(bundle, args)
    guess = bundle.make_guess(args.method)
    report_body = {
        "problem": args.problem,
        "method": args.method,
        "config": {
            "eps0": config.eps0, "alpha": config.alpha, "tol": config.tol,
            "newton_tol": options.newton_tol, "mesh_tol": options.mesh_tol,
        },
        "notes": bundle.notes,
    }

    try:
        if args.method == "primal":
            solution, (lam_g, lam_c), run = continuation.run_primal(
                bundle.spec, guess, config, options)
        else:
            solution, run = continuation.run_primal_dual(
                bundle.spec, guess, config, options)
            d = bundle.spec.dims
            lam_g = solution.Z_nodes[:, d.m:d.m + d.n_g]
            lam_c = solution.Z_nodes[:, d.m + d.n_g:]
    except IpocError as exc:
        report_body["error"] = str(exc)
        if isinstance(exc, ContinuationError):
            report_body["failed_at_eps"] = exc.eps
            if exc.last_good is not None:
                report_body["last_good_eps"] = exc.last_good[0]
        if args.report:
            _atomic_write(args.report, json.dumps(report_body, indent=1) + "\n")
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE

    eps_final = run.eps_schedule[-1]
    kkt = diagnostics.kkt_report(bundle.spec, solution, (lam_g, lam_c),
                                 eps_final)
    report_body["run"] = run.to_dict()
    report_body["kkt"] = kkt.to_dict()

    if args.out:
        _atomic_write(args.out, _trajectory_csv(bundle.spec, solution,
                                                lam_g, lam_c))
    if args.report:
        _atomic_write(args.report, json.dumps(report_body, indent=1) + "\n")
    if args.figures:
        stem = f"{args.problem}_{args.method.replace('-', '_')}"
        groups = _solution_groups(bundle.spec, solution, lam_g, lam_c)
        for path in _render_figures(solution.mesh.nodes, groups,
                                    args.figures, stem):
            print(f"wrote {path}")
    print(f"{args.problem} {args.method}: {run.eps_iterations} solves, "
          f"mesh {run.final_mesh_len}, cost {kkt.cost:.6g}, "
          f"{run.wall_time:.2f} s")
    return 0


def _report_row(path):
    try:
        with open(path) as fh:
            body = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise _BadReport(f"cannot read report {path!r}: {exc}")
    run = body.get("run")
    if not isinstance(run, dict):
        raise _BadReport(f"report {path!r}: missing field 'run'")
    row = []
    for field in ("method", "alpha", "eps_iterations", "final_mesh_len",
                  "wall_time"):
        if field not in run:
            raise _BadReport(f"report {path!r}: missing field 'run.{field}'")
        row.append(run[field])
    return row


class _BadReport(Exception):
    pass


def cmd_table(args):
    if not args.reports:
        print("table: no report files given", file=sys.stderr)
        return EXIT_USAGE
    try:
        rows = [_report_row(p) for p in args.reports]
    except _BadReport as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_BAD_REPORT
    cells = [list(TABLE_COLUMNS)]
    for method, alpha, iters, mesh_len, wall in rows:
        cells.append([str(method), repr(float(alpha)), str(int(iters)),
                      str(int(mesh_len)), f"{float(wall):.2f} s"])
    widths = [max(len(r[j]) for r in cells) for j in range(len(TABLE_COLUMNS))]
    out = []
    for i, row in enumerate(cells):
        out.append(" | ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            out.append("-+-".join("-" * w for w in widths))
    print("\n".join(out))
    return 0


def cmd_plot(args):
    try:
        data = np.genfromtxt(args.csv, delimiter=",", names=True)
    except OSError as exc:
        print(f"cannot read {args.csv!r}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    names = data.dtype.names
    if names is None or names[0] != "t":
        print(f"{args.csv!r}: expected a trajectory CSV with a 't' column",
              file=sys.stderr)
        return EXIT_USAGE

    def cols(prefix):
        sel = [n for n in names if n.startswith(prefix) and n[len(prefix):].isdigit()]
        if not sel:
            return None
        return np.column_stack([np.atleast_1d(data[n]) for n in sel])

    t = np.atleast_1d(data["t"])
    lam_parts = [c for c in (cols("lg"), cols("lc")) if c is not None]
    groups = {
        "states": (cols("x"), "x"),
        "adjoints": (cols("p"), "p"),
        "controls": (cols("u"), "u"),
        "multipliers": (np.hstack(lam_parts) if lam_parts else None, "lam"),
    }
    stem = os.path.splitext(os.path.basename(args.csv))[0]
    for path in _render_figures(t, groups, args.out_dir, stem):
        print(f"wrote {path}")
    return 0


def build_parser():
    parser = _Parser(prog="ipoc",
                     description="Interior-point solvers for constrained "
                                 "optimal control benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="run one benchmark with one method")
    ps.add_argument("--problem", required=True,
                    help="benchmark name (vdp, zermelo, goddard)")
    ps.add_argument("--method", choices=("primal", "primal-dual"),
                    default="primal")
    ps.add_argument("--eps0", type=float, default=None,
                    help="initial continuation parameter (default: bundle)")
    ps.add_argument("--alpha", type=float, default=None,
                    help="geometric decay ratio (default: bundle)")
    ps.add_argument("--tol", type=float, default=None,
                    help="final continuation parameter (default: bundle)")
    ps.add_argument("--newton-tol", type=float, default=None)
    ps.add_argument("--mesh-tol", type=float, default=None)
    ps.add_argument("--out", default=None, help="trajectory CSV path")
    ps.add_argument("--report", default=None, help="JSON report path")
    ps.add_argument("--figures", default=None,
                    help="directory for rendered figures (optional)")
    ps.set_defaults(func=cmd_solve)

    pt = sub.add_parser("table", help="render reports as a comparison table")
    pt.add_argument("reports", nargs="*", help="JSON report files")
    pt.set_defaults(func=cmd_table)

    pp = sub.add_parser("plot", help="render figures from a trajectory CSV")
    pp.add_argument("--csv", required=True)
    pp.add_argument("--out-dir", default=".")
    pp.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
