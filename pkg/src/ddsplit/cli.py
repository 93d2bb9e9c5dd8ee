"""Command line front end writing CSV data for every experiment.

Subcommands: ``run``, ``sweep``, ``verify``, ``diagnose`` and ``table``.
Flags override values read from ``--config`` (flat ``key = value`` lines,
keys named like the long flags).  Exit codes: 0 success (recorded
divergence included), 1 usage or configuration error, 2 solver failure,
3 divergence under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adaptive import (
    estimate_bound,
    estimate_bprime_lipschitz,
    estimate_lf,
    g_coefficients,
    sandwich_check,
)
from .errors import ConfigError, DDSplitError, IoError, NotApplicable, SolverFailure, UsageError
from .mesh import write_field_csv
from .nonlinearity import build_kirchhoff_table
from .problems import RunConfig, RunReport, default_problem, initial_state, run, verify_barenblatt
from .schemes import SchemeSpec, step

OUTPUT_ENV = "DDSPLIT_OUTPUT_DIR"
SUBCOMMANDS = ("run", "sweep", "verify", "diagnose", "table")
SCHEME_ALIASES = {"newton": "newton", "l": "l", "lscheme": "l", "m": "m", "mscheme": "m", "madaptive": "madaptive"}


@dataclass
class CliConfig:
    """Validated command line configuration."""

    subcommand: str
    problem: str | None = None
    dim: int = 1
    h: float = 0.1
    tau: float = 0.1
    T: float | None = None
    scheme: str = "m"
    M: float | None = None
    epsilon: float = 1e-6
    eps_stop: float = 1e-6
    max_iters: int = 10_000
    divergence_threshold: float = 1e10
    reaction_mode: str = "lagged"
    solver: str = "direct"
    gamma: float | None = None
    C: float = 0.5
    gravity: bool = True
    newton_advection: bool = True
    lo: float = -10.0
    hi: float = 10.0
    output_dir: str | None = None
    snapshot_stride: int = 0
    strict: bool = False
    h_list: list = field(default_factory=list)
    tau_list: list = field(default_factory=list)
    scheme_list: list = field(default_factory=list)
    workers: int = 1
    lam: float = 0.8
    p_min: float = -1.0e4
    samples: int = 100_000

    def problem_spec(self):
        kw = {"C": self.C, "gravity_on": self.gravity}
        if self.T is not None:
            kw["T_final"] = self.T
        if self.gamma is not None:
            kw["gamma"] = self.gamma
        if self.problem == "richards":
            kw["lam"] = self.lam
        return default_problem(self.problem, self.dim, **kw)

    def scheme_spec(self, kind=None):
        kind = kind or self.scheme
        return SchemeSpec(
            kind=kind,
            M=0.01 if self.M is None else self.M,
            epsilon=self.epsilon,
            eps_stop=self.eps_stop,
            max_iters=self.max_iters,
            divergence_threshold=self.divergence_threshold,
            newton_linearize_advection=self.newton_advection,
            reaction_mode=self.reaction_mode,
            solver=self.solver,
        )

    def run_config(self, h=None, tau=None, kind=None):
        return RunConfig(
            tau=self.tau if tau is None else tau,
            h=self.h if h is None else h,
            scheme=self.scheme_spec(kind),
            lo=self.lo,
            hi=self.hi,
            store_history=False,
        )


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma separated numbers, got {text!r}") from exc


def _schemes(text):
    out = []
    for v in str(text).split(","):
        v = v.strip().lower()
        if not v:
            continue
        if v not in SCHEME_ALIASES:
            raise UsageError(f"unknown scheme {v!r}")
        out.append(SCHEME_ALIASES[v])
    return out


def _scheme(text):
    v = str(text).strip().lower()
    if v not in SCHEME_ALIASES:
        raise UsageError(f"unknown scheme {v!r}")
    return SCHEME_ALIASES[v]


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


# option name -> (type, help)
_OPTIONS = {
    "problem": (str, "pme, toy, biofilm or richards"),
    "dim": (int, "space dimension (1 or 2)"),
    "h": (float, "mesh width"),
    "tau": (float, "time step"),
    "T": (float, "final time"),
    "scheme": (_scheme, "newton, l, m or madaptive"),
    "M": (float, "M of the fixed M-scheme"),
    "epsilon": (float, "epsilon in 1 + epsilon"),
    "eps-stop": (float, "stopping tolerance on E_lin"),
    "max-iters": (int, "iteration cap per step"),
    "divergence-threshold": (float, "E_fix divergence threshold"),
    "reaction-mode": (str, "lagged or frozen"),
    "solver": (str, "direct or cg"),
    "gamma": (float, "Barenblatt amplitude of the initial data"),
    "C": (float, "reaction coefficient"),
    "gravity": (_bool, "gravity flux for richards (true/false)"),
    "newton-advection": (_bool, "Newton linearizes the advective flux"),
    "lo": (float, "domain lower bound"),
    "hi": (float, "domain upper bound"),
    "output-dir": (str, f"output directory (default ${OUTPUT_ENV} or ./output)"),
    "snapshot-stride": (int, "write solution snapshots every k steps (0: none)"),
    "h-list": (_floats, "sweep: comma separated mesh widths"),
    "tau-list": (_floats, "sweep: comma separated time steps"),
    "scheme-list": (_schemes, "sweep: comma separated schemes"),
    "workers": (int, "sweep: worker processes"),
    "lam": (float, "van Genuchten parameter"),
    "p-min": (float, "table: lower pressure bound"),
    "samples": (int, "table: number of pressure samples"),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ddsplit", allow_abbrev=False, description="Linearization schemes for doubly-degenerate parabolic problems.")
    sub = p.add_subparsers(dest="subcommand")
    for name in SUBCOMMANDS:
        sp_ = sub.add_parser(name, allow_abbrev=False)
        sp_.add_argument("--config", help="flat key = value configuration file")
        sp_.add_argument("--strict", action="store_true", default=None, help="exit 3 on divergence")
        for opt, (typ, hlp) in _OPTIONS.items():
            sp_.add_argument(f"--{opt}", dest=opt.replace("-", "_"), type=typ, default=None, help=hlp)
    return p


def read_config_file(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment.

    Raises:
        UsageError: on unreadable files, malformed lines or unknown keys.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    out = {}
    for k, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{k}: expected key = value")
        key, val = (x.strip() for x in line.split("=", 1))
        key = key.replace("_", "-")
        if key == "strict":
            out["strict"] = _bool(val)
            continue
        if key not in _OPTIONS:
            raise UsageError(f"{path}:{k}: unknown key {key!r}")
        try:
            out[key.replace("-", "_")] = _OPTIONS[key][0](val)
        except ValueError as exc:
            raise UsageError(f"{path}:{k}: bad value for {key}: {val!r}") from exc
    return out


def parse_cli(argv) -> CliConfig:
    """Parse arguments into a validated :class:`CliConfig`.

    Raises:
        UsageError: on unknown flags, missing required values or invalid values.
    """
    ns = build_parser().parse_args(list(argv))
    if ns.subcommand is None:
        raise UsageError("missing subcommand (run, sweep, verify, diagnose, table)")
    vals = read_config_file(ns.config) if ns.config else {}
    for k, v in vars(ns).items():
        if k in ("config", "subcommand") or v is None:
            continue
        vals[k] = v
    cfg = CliConfig(subcommand=ns.subcommand, **vals)
    _validate(cfg)
    return cfg


def _validate(cfg: CliConfig) -> None:
    if cfg.subcommand == "table":
        return
    if cfg.problem is None:
        raise UsageError("--problem is required")
    if cfg.problem not in ("pme", "toy", "biofilm", "richards"):
        raise UsageError(f"unknown problem {cfg.problem!r}")
    if cfg.scheme == "madaptive" and cfg.M is not None:
        raise UsageError("--M cannot be combined with --scheme madaptive (M is selected automatically)")
    if cfg.subcommand == "sweep":
        if not cfg.h_list or not cfg.tau_list or not cfg.scheme_list:
            raise UsageError("sweep needs non-empty --h-list, --tau-list and --scheme-list")
    if cfg.workers < 1 or cfg.snapshot_stride < 0:
        raise UsageError("workers must be >= 1 and snapshot-stride >= 0")
    try:
        prob = cfg.problem_spec()
        kinds = cfg.scheme_list if cfg.subcommand == "sweep" else [cfg.scheme]
        hs = cfg.h_list if cfg.subcommand == "sweep" else [cfg.h]
        taus = cfg.tau_list if cfg.subcommand == "sweep" else [cfg.tau]
        for kind in kinds:
            for h in hs:
                for tau in taus:
                    rc = cfg.run_config(h, tau, kind)
                    rc.n_steps(prob.T_final)
                    rc.grid(prob.dim)
    except (ConfigError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


# --------------------------------------------------------------------------
# CSV emission


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    """Write rows with shortest round-trip float formatting."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(v) for v in r])


def emit_histories(report: RunReport, outdir) -> None:
    """Write iterations.csv, history.csv, mass.csv and solution.csv.

    Raises:
        IoError: if ``outdir`` cannot be created or written.
    """
    out = Path(outdir)
    _check_writable(out)
    write_csv(
        out / "iterations.csv",
        ["n", "iters", "converged", "diverged", "alpha", "p"],
        [(n, r.iterations, r.converged, r.diverged, r.alpha, r.order_p) for n, r in enumerate(report.steps, 1)],
    )
    rows = []
    for n, r in enumerate(report.steps, 1):
        for i in range(r.iterations):
            rows.append((n, i + 1, r.elin_history[i], r.efix_history[i], r.eta_upper[i], r.eta_lower[i], r.M_history[i]))
    write_csv(out / "history.csv", ["n", "i", "elin", "efix", "eta_upper", "eta_lower", "M"], rows)
    err = report.error_vs_exact or [(math.nan, math.nan)] * len(report.times)
    write_csv(
        out / "mass.csv",
        ["n", "t", "mass", "l1_error", "l2_error"],
        [(n, t, m, e[0], e[1]) for n, (t, m, e) in enumerate(zip(report.times, report.mass_history, err))],
    )
    write_field_csv(out / "solution.csv", report.grid, {"s": report.s, "u": report.u, "w": report.w})


def _output_dir(cfg: CliConfig) -> Path:
    return Path(cfg.output_dir or os.environ.get(OUTPUT_ENV) or "output")


def _check_writable(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise IoError(f"output directory {out} is not writable")


def cmd_run(cfg: CliConfig) -> int:
    out = _output_dir(cfg)
    _check_writable(out)
    prob = cfg.problem_spec()
    rc = cfg.run_config()
    grid = rc.grid(prob.dim)
    snap = out / "snapshots"

    def sink(n, t, s, u, w, srep):
        if cfg.snapshot_stride > 0 and n % cfg.snapshot_stride == 0:
            snap.mkdir(exist_ok=True)
            write_field_csv(snap / f"solution_{n:05d}.csv", grid, {"s": s, "u": u, "w": w})

    rep = run(prob, rc, on_step=sink)
    emit_histories(rep, out)
    status = "diverged" if rep.diverged else ("converged" if rep.converged else "max_iters")
    print(f"{prob.kind} dim={prob.dim} h={rc.h!r} tau={rc.tau!r} scheme={rc.scheme.kind}: "
          f"{len(rep.steps)} steps, avg iterations {rep.avg_iterations:.3f}, {status}")
    return 3 if (cfg.strict and rep.diverged) else 0


def _sweep_one(args):
    cfg, kind, h, tau = args
    t0 = time.perf_counter()
    prob = cfg.problem_spec()
    rep = run(prob, cfg.run_config(h, tau, kind))
    wall = time.perf_counter() - t0
    return (kind, h, tau, rep.avg_iterations, rep.converged, rep.diverged, len(rep.steps)), wall


def sweep(cfg: CliConfig, h_list=None, tau_list=None, scheme_list=None):
    """Run every (scheme, h, tau) combination.

    Returns:
        ``(rows, walls)`` sorted by (scheme, h, tau); divergence is recorded.
    """
    h_list = h_list or cfg.h_list
    tau_list = tau_list or cfg.tau_list
    scheme_list = scheme_list or cfg.scheme_list
    if not h_list or not tau_list or not scheme_list:
        raise UsageError("sweep lists must be non-empty")
    jobs = sorted({(k, h, t) for k in scheme_list for h in h_list for t in tau_list})
    args = [(cfg, k, h, t) for k, h, t in jobs]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_sweep_one, args))
    else:
        results = [_sweep_one(a) for a in args]
    return [r for r, _ in results], [w for _, w in results]


def cmd_sweep(cfg: CliConfig) -> int:
    out = _output_dir(cfg)
    _check_writable(out)
    rows, walls = sweep(cfg)
    write_csv(out / "sweep.csv", ["scheme", "h", "tau", "avg_iterations", "converged", "diverged", "steps"], rows)
    write_csv(out / "sweep_timing.csv", ["scheme", "h", "tau", "wall_seconds"], [r[:3] + (w,) for r, w in zip(rows, walls)])
    for r in rows:
        print(f"{r[0]:9s} h={r[1]!r:<8} tau={r[2]!r:<10} avg={r[3]:.3f} converged={bool(r[4])} diverged={bool(r[5])}")
    return 3 if (cfg.strict and any(r[5] for r in rows)) else 0


def cmd_verify(cfg: CliConfig) -> int:
    out = _output_dir(cfg)
    _check_writable(out)
    prob = cfg.problem_spec()
    if prob.kind != "pme":
        raise NotApplicable("verify needs --problem pme")
    rc = cfg.run_config()
    rc = RunConfig(rc.tau, rc.h, rc.scheme, rc.lo, rc.hi, store_history=True)
    rep = run(prob, rc)
    errs = verify_barenblatt(rep)
    write_csv(out / "verify.csv", ["n", "t", "l1", "l2"], [(n, t, e[0], e[1]) for n, (t, e) in enumerate(zip(rep.times, errs))])
    emit_histories(rep, out)
    print(f"final L1 error {errs[-1][0]!r}, L2 error {errs[-1][1]!r}")
    return 3 if (cfg.strict and rep.diverged) else 0


def cmd_diagnose(cfg: CliConfig) -> int:
    """Per-iteration diagnostics of the first time step."""
    out = _output_dir(cfg)
    _check_writable(out)
    prob = cfg.problem_spec()
    rc = cfg.run_config()
    grid = rc.grid(prob.dim)
    model = prob.model
    s0, u0 = initial_state(prob, grid)
    ref_spec = SchemeSpec("newton" if not model.has_advection else "l", eps_stop=1e-11, max_iters=20_000)
    s_ref, *_ = step(s0, u0, ref_spec, model, grid, rc.tau)
    iters = []
    step(s0, u0, rc.scheme, model, grid, rc.tau, hook=lambda i, st, Lb, LB, e: iters.append((i, st, Lb, LB, e)))
    lf = estimate_lf(model)
    lip = estimate_bprime_lipschitz(model, 0.0, float(np.max(s_ref)) + 0.1)
    _, _, _, srep = step(s0, u0, rc.scheme, model, grid, rc.tau)
    rows = []
    for k, (i, st, Lb, LB, e) in enumerate(iters):
        G1, G2, G3 = g_coefficients(model, st.s_prev, s_ref, Lb, LB, rc.tau, lf)
        M = srep.M_history[k] if not math.isnan(srep.M_history[k]) else 0.0
        ok = sandwich_check(model, st.s_prev, s_ref, LB, M, rc.tau, lip, estimate_bound(st.s_prev, s_ref, rc.tau))
        rows.append((i, e, srep.efix_history[k], srep.eta_upper[k], srep.eta_lower[k], srep.M_history[k],
                     float(G1.min()), float(G2.min()), float(G3.min()), ok))
    write_csv(out / "diagnostics.csv",
              ["i", "elin", "efix", "eta_upper", "eta_lower", "M", "G1_min", "G2_min", "G3_min", "sandwich_ok"], rows)
    print(f"{len(rows)} iterations written to {out / 'diagnostics.csv'}")
    return 0


def cmd_table(cfg: CliConfig) -> int:
    out = _output_dir(cfg)
    _check_writable(out)
    table = build_kirchhoff_table(cfg.lam, cfg.p_min, cfg.samples)
    table.to_csv(out / "kirchhoff_table.csv")
    print(f"u*={table.u_star!r} Phi(u*)={table.phi_star!r} Phi_M={table.phi_max!r}")
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify, "diagnose": cmd_diagnose, "table": cmd_table}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_cli(argv)
        return COMMANDS[cfg.subcommand](cfg)
    except (UsageError, ConfigError, NotApplicable) as exc:
        print(f"ddsplit: error: {exc}", file=sys.stderr)
        return 1
    except SolverFailure as exc:
        print(f"ddsplit: solver failure: {exc}", file=sys.stderr)
        return 2
    except DDSplitError as exc:
        print(f"ddsplit: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
