"""Command line entry point: ``abcring <command> [options]``.

Every command writes its data files, a JSON manifest and (where useful) a
small plotting script into ``--out``.  Existing files are never overwritten
unless ``--force`` is given.  Exit codes: 0 success, 1 usage error,
2 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np

from . import continuum, dynamics, generators, hydro, interchange, minimizer, studies
from .statespace import BudgetExceeded, build_ensemble, enumerate_states

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
SCHEMA = "# schema=1"


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# ---------------------------------------------------------------- parsing helpers


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).replace(" ", "").split(",") if v]


def _ints(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).replace(" ", "").split(",") if v]


def _sizes(text) -> list[int]:
    ns = _ints(text)
    bad = [n for n in ns if n <= 0 or n % 3]
    if bad:
        raise UsageError(f"N must be a positive multiple of 3 (equal densities); got {bad}")
    return ns


def _betas(text) -> list[float]:
    bs = _floats(text)
    if any(b < 0 for b in bs):
        raise UsageError("beta must be non-negative")
    return bs


class Settings:
    """Flag values layered over a config section over built-in defaults."""

    def __init__(self, args: argparse.Namespace, config: configparser.ConfigParser | None):
        self.args = args
        self.section = {}
        if config is not None and config.has_section(args.command):
            self.section = dict(config.items(args.command))
        self.used: dict[str, object] = {}

    def get(self, key: str, default=None, convert=lambda v: v):
        val = getattr(self.args, key, None)
        if val is None:
            val = self.section.get(key, default)
        try:
            out = convert(val) if val is not None else None
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {key}: {val!r} ({exc})") from None
        self.used[key] = out
        return out


class Output:
    """Writes files under one directory and remembers them for the manifest."""

    def __init__(self, root: Path, force: bool):
        self.root = root
        self.force = force
        self.files: list[str] = []
        root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.root / name
        if p.exists() and not self.force:
            raise UsageError(f"{p} exists; pass --force to overwrite")
        return p

    def write(self, name: str, text: str):
        self.path(name).write_text(text)
        self.files.append(name)

    def csv(self, name: str, header: list[str], rows: list[list]):
        buf = io.StringIO()
        buf.write(SCHEMA + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])
        self.write(name, buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _pool_map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))  # ordered collection


PLOT_TEMPLATE = '''"""Plot helper generated by abcring; needs matplotlib."""
import csv, sys
import matplotlib.pyplot as plt

def load(name):
    with open(name) as fh:
        rows = [r for r in csv.reader(l for l in fh if not l.startswith("#"))]
    return rows[0], [[float(v) if v not in ("", "None") else float("nan") for v in r] for r in rows[1:]]

header, rows = load({data!r})
x = [r[{xcol}] for r in rows]
for col in {ycols!r}:
    plt.plot(x, [r[col] for r in rows], "o-", label=header[col])
plt.xlabel(header[{xcol}])
{extra}
plt.legend()
plt.savefig({png!r})
'''


def _plot_script(out: Output, name: str, data: str, xcol: int, ycols: list[int], extra: str = ""):
    out.write(name, PLOT_TEMPLATE.format(data=data, xcol=xcol, ycols=ycols, extra=extra,
                                         png=name.replace(".py", ".png")))


# ---------------------------------------------------------------- commands


def _gap_task(item):
    N, beta, graph, method, budget = item
    try:
        r = studies.exact_gap(N, beta, graph, method, budget)
        return {"N": N, "beta": beta, "graph": graph, "method": r.method, "gap": r.gap,
                "residual": r.residual, "iterations": r.iterations, "wall_time_s": r.wall_time_s}
    except BudgetExceeded as exc:
        return {"N": N, "beta": beta, "graph": graph, "error": str(exc)}


def cmd_gap(st: Settings, out: Output) -> dict:
    Ns = st.get("N", "3,6,9", _sizes)
    betas = st.get("beta", "0", _betas)
    graphs = st.get("graph", "ring", lambda v: [g.strip() for g in str(v).split(",")])
    if any(g not in ("ring", "complete") for g in graphs):
        raise UsageError("graph must be ring and/or complete")
    method = st.get("method", "auto")
    items = [(N, b, g, method, st.budget) for g in graphs for b in betas for N in Ns]
    results = _pool_map(_gap_task, items, st.workers)
    rows, failures = [], []
    for r in results:
        if "error" in r:
            failures.append(r)
            print(f"N={r['N']}: {r['error']}", file=sys.stderr)
            continue
        rows.append([r["N"], r["beta"], r["graph"], r["gap"], r["method"], r["residual"],
                     r["wall_time_s"], r["iterations"]])
    out.csv("gaps.csv", ["N", "beta", "graph", "gap", "method", "residual", "wall_time_s", "iterations"], rows)
    _plot_script(out, "plot_gaps.py", "gaps.csv", 0, [3], "plt.xscale('log'); plt.yscale('log')")
    rec = {"results": [r for r in results if "error" not in r], "failures": failures}
    if failures:
        rec["status"] = "partial"
    return rec


def cmd_scaling(st: Settings, out: Output) -> dict:
    Ns = st.get("N", "6,9,12,15", _sizes)
    if len(Ns) < 4:
        raise UsageError("scaling needs at least 4 values of N")
    beta = st.get("beta", "0", lambda v: _betas(v)[0])
    quotient = st.get("quotient", beta > continuum.critical_beta(),
                      lambda v: str(v).lower() in ("1", "true", "yes"))
    rows, gaps, quots = [], [], []
    for N in Ns:
        if quotient:
            probe = studies.cosine_quotient(N, beta, budget_bytes=st.budget)
            g, q = probe.gap, probe.quotient
        else:
            g, q = studies.exact_gap(N, beta, budget_bytes=st.budget).gap, None
        gaps.append(g)
        quots.append(q)
        rows.append([N, beta, g, q if q is not None else "", q * N**3 if q is not None else ""])
    fit = studies.loglog_slope(Ns, gaps)
    rec = {"beta": beta, "N": Ns, "gaps": gaps, "slope": fit.slope, "fit_residual": fit.residual}
    if quotient:
        qf = studies.loglog_slope(Ns, quots)
        scaled = [q * N**3 for q, N in zip(quots, Ns)]
        rec.update(quotients=quots, quotient_slope=qf.slope,
                   quotient_N3_spread=max(scaled) / min(scaled),
                   quotient_bounds_gap=all(q >= g for q, g in zip(quots, gaps)))
    out.csv("scaling.csv", ["N", "beta", "gap", "quotient", "quotient_N3"], rows)
    _plot_script(out, "plot_scaling.py", "scaling.csv", 0, [2, 3] if quotient else [2],
                 "plt.xscale('log'); plt.yscale('log')")
    return rec


def cmd_minimizer(st: Settings, out: Output) -> dict:
    betas = st.get("beta", "15", _betas)
    M = st.get("M", 1024, int)
    records = []
    for b in betas:
        sol = minimizer.solve_minimizer(b, M)
        if not sol:
            records.append({"beta": b, "nontrivial": False, "reason": sol.reason})
            continue
        name = f"profile_beta{b:g}.csv"
        out.write(name, sol.profile.to_csv())
        out.write(f"minimizer_beta{b:g}.json", json.dumps(_jsonable(sol.record()), indent=2))
        r = sol.record()
        r.update(nontrivial=True, profile=name, closure=sol.closure,
                 product_drift=sol.product_drift, moment=sol.moment,
                 homogeneous_free_energy=b / 6, monotone_scan=sol.monotone_scan)
        records.append(r)
        if sol.period_residual > 1e-8:
            raise NumericalFailure(f"period residual {sol.period_residual:.2e} at beta={b}")
    return {"minimizers": records}


def cmd_hydro(st: Settings, out: Output) -> dict:
    beta = st.get("beta", "15", lambda v: _betas(v)[0])
    M = st.get("M", 256, int)
    T = st.get("T", 1.0, float)
    scheme = st.get("scheme", "semi-implicit")
    flux = st.get("flux", "gradient")
    dt = st.get("dt", None, float)
    init = st.get("init", "perturbed")
    eps = st.get("eps", 1e-3, float)
    every = st.get("record_every", 16, int)
    if init == "homogeneous":
        prof = continuum.homogeneous(M)
    elif init == "minimizer":
        sol = minimizer.solve_minimizer(beta, M)
        if not sol:
            raise UsageError(f"no nontrivial minimizer at beta={beta}")
        prof = sol.profile
    elif init == "perturbed":
        r = np.arange(M) / M
        d = eps * np.cos(2 * np.pi * r)
        prof = continuum.DensityProfile(np.stack([1 / 3 + d, 1 / 3 - d / 2, 1 / 3 - d / 2]))
    else:
        raise UsageError("init must be homogeneous, minimizer or perturbed")
    try:
        tr = hydro.integrate_hydro(prof, beta, T, dt, scheme, flux=flux, record_every=every)
    except hydro.CFLViolation as exc:
        raise UsageError(str(exc)) from None
    except hydro.HydroBlowup as exc:
        raise NumericalFailure(str(exc)) from None
    out.write("hydro_trace.csv", tr.to_csv())
    out.write("hydro_final.csv", tr.final.profile.to_csv())
    _plot_script(out, "plot_hydro.py", "hydro_trace.csv", 0, [1])
    return {"steps": tr.steps, "dt": tr.dt, "max_mass_step_drift": tr.max_mass_step_drift,
            "max_free_energy_increase": tr.max_free_energy_increase,
            "max_simplex_error": tr.max_simplex_error, "final_residual": tr.residuals[-1],
            "final_modes": tr.modes[-1]}


def _sample_task(item):
    seed, rep, N, beta, graph, T, burn, dt = item
    rng = dynamics.replica_rng(seed, rep)
    z0 = dynamics.random_equal_density(N, rng)
    tr = dynamics.simulate(z0, beta, T, graph, rng, sample_dt=dt, record_events=False)
    f = dynamics.test_function(tr.snapshots, studies.cosine)
    ops = np.stack([dynamics.order_parameter(tr.snapshots, k) for k in (1, 2, 3)], axis=1)
    return tr.sample_times, tr.energies(), f, ops, tr.n_events


def cmd_sample(st: Settings, out: Output) -> dict:
    N = st.get("N", "9", lambda v: _sizes(v)[0])
    beta = st.get("beta", "5", lambda v: _betas(v)[0])
    graph = st.get("graph", "ring")
    T = st.get("T", 1e5, float)
    burn = st.get("burn_in", 1e3, float)
    dt = st.get("sample_dt", 1.0, float)
    reps = st.get("replicas", 1, int)
    if graph not in ("ring", "complete"):
        raise UsageError("graph must be ring or complete")
    if not 0 <= burn < T:
        raise UsageError("need 0 <= burn_in < T")
    items = [(st.seed, r, N, beta, graph, T, burn, dt) for r in range(reps)]
    results = _pool_map(_sample_task, items, st.workers)
    summary = []
    for r, (t, h, f, ops, nev) in enumerate(results):
        rows = [[float(a), float(b), float(c), *map(float, o)] for a, b, c, o in zip(t, h, f, ops)]
        out.csv(f"trajectory_r{r}.csv", ["time", "H_N", "f_N", "order_k1", "order_k2", "order_k3"], rows)
        keep = t >= burn
        try:
            est_h = dynamics.batch_means(h[keep]).as_dict()
            est_f2 = dynamics.batch_means(f[keep] ** 2).as_dict()
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        summary.append({"replica": r, "seed": st.seed, "spawn_key": [r], "events": nev,
                        "H_N": est_h, "f_N_squared": est_f2})
    _plot_script(out, "plot_sample.py", "trajectory_r0.csv", 0, [1, 3])
    return {"replicas": summary, "rng": "Philox(SeedSequence(seed, spawn_key=(replica,)))"}


def cmd_lln(st: Settings, out: Output) -> dict:
    N = st.get("N", "120", lambda v: _sizes(v)[0])
    betas = st.get("beta", "5,15", _betas)
    T = st.get("T", 4e5, float)
    burn = st.get("burn_in", 4e4, float)
    dt = st.get("sample_dt", 100.0, float)
    reports = []
    rows = []
    for i, b in enumerate(betas):
        rep = studies.lln_probe(N, b, T, burn, st.seed + i, dt)
        reports.append(rep.as_dict())
        rows.append([N, b, rep.modulus.mean, rep.modulus.standard_error, rep.threshold,
                     rep.target if rep.target is not None else ""])
    out.csv("lln.csv", ["N", "beta", "modulus", "stderr", "threshold", "target"], rows)
    return {"reports": reports}


def cmd_interchange(st: Settings, out: Output) -> dict:
    N = st.get("N", "3", lambda v: _ints(v)[0])
    beta = st.get("beta", "0", lambda v: _betas(v)[0])
    name = st.get("oracle", "zero")
    override = st.get("allow_large", False, lambda v: str(v).lower() in ("1", "true", "yes"))
    try:
        oracle = interchange.get_oracle(name, N)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    gen = interchange.build_interchange_generator(N, beta, oracle, max_N=8 if override else 7,
                                                  budget_bytes=st.budget)
    vals = np.sort(np.linalg.eigvalsh(gen.symmetrized().toarray()))[::-1]
    rec = {"N": N, "beta": beta, "oracle": name, "states": gen.dimension,
           "detailed_balance_integer_residual": generators.reversibility_residual(gen)[0],
           "gap": float(-vals[1]), "spectrum_head": vals[:8]}
    if N == 3:
        rec["spectrum"] = vals
        if beta == 0:
            m = interchange.s3_matrix_exact()
            o = interchange.S3_DISPLAY_ORDER
            rec["matrix_display_order"] = [[str(m[i][j]) for j in o] for i in o]
    if N % 3 == 0:
        pf = interchange.pushforward_check(N, beta)
        rec["pushforward_max_discrepancy"] = pf.max_discrepancy
        ens = build_ensemble(enumerate_states(N), beta)
        rec["complete_gap"] = generators.spectral_gap(generators.build_complete_generator(ens))
    out.write("spectrum.txt", "".join(f"{v:.17g}\n" for v in vals))
    return rec


def cmd_selftest(st: Settings, out: Output) -> dict:
    checks = {}
    g = studies.exact_gap(3, 0.0)
    checks["ring_gap_N3"] = abs(g.gap - 3.0) < 1e-10
    checks["complete_gap_N3"] = abs(studies.exact_gap(3, 0.0, "complete").gap - 1.0) < 1e-10
    ens = build_ensemble(enumerate_states(6), 5.0)
    checks["detailed_balance_N6"] = generators.reversibility_residual(generators.build_ring_generator(ens))[0] == 0
    ig = interchange.build_interchange_generator(3, 0.0)
    ev = np.sort(np.linalg.eigvalsh(ig.dense()))
    checks["s3_spectrum"] = bool(np.allclose(ev, [-2, -1, -1, -1, -1, 0], atol=1e-10))
    checks["beta_c"] = abs(continuum.critical_beta() - 10.8828) < 1e-4
    checks["no_minimizer_beta5"] = not minimizer.solve_minimizer(5.0, scan_points=8)
    ok = all(checks.values())
    if not ok:
        raise NumericalFailure(f"selftest failed: {[k for k, v in checks.items() if not v]}")
    return {"checks": checks}


COMMANDS = {
    "gap": (cmd_gap, "exact spectral gaps over N and beta"),
    "scaling": (cmd_scaling, "log-log gap slope over an N sweep"),
    "minimizer": (cmd_minimizer, "segregated free-energy minimizers"),
    "hydro": (cmd_hydro, "integrate the hydrodynamic equations"),
    "sample": (cmd_sample, "kinetic Monte Carlo trajectories"),
    "lln": (cmd_lln, "order-parameter probe at large N"),
    "interchange": (cmd_interchange, "interchange process on S_N"),
    "selftest": (cmd_selftest, "fast consistency checks"),
}

OPTIONS = {
    "gap": ["N", "beta", "graph", "method"],
    "scaling": ["N", "beta", "quotient"],
    "minimizer": ["beta", "M"],
    "hydro": ["beta", "M", "T", "dt", "scheme", "flux", "init", "eps", "record_every"],
    "sample": ["N", "beta", "graph", "T", "burn_in", "sample_dt", "replicas"],
    "lln": ["N", "beta", "T", "burn_in", "sample_dt"],
    "interchange": ["N", "beta", "oracle", "allow_large"],
    "selftest": [],
}


def _global_flags(p: argparse.ArgumentParser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", type=Path, default=d, help="INI file with one section per command")
    p.add_argument("--seed", type=int, default=d, help="64-bit seed (default 0)")
    p.add_argument("--out", type=Path, default=d, help="output directory (default ./abcring_out/<command>)")
    p.add_argument("--workers", type=int, default=d, help="parallel sweep workers (default 1)")
    p.add_argument("--budget-gib", type=float, default=d, dest="budget_gib", help="memory budget in GiB (default 2)")
    p.add_argument("--force", action="store_true", default=d, help="overwrite existing outputs")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="abcring", description="ABC model laboratory")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        _global_flags(sp, suppress=True)
        for opt in OPTIONS[name]:
            sp.add_argument(f"--{opt.replace('_', '-')}", dest=opt, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = None
    try:
        if args.config is not None:
            if not args.config.exists():
                raise UsageError(f"config file {args.config} not found")
            config = configparser.ConfigParser()
            config.optionxform = str  # keys such as N and M are case-sensitive
            config.read(args.config)
        st = Settings(args, config)
        st.seed = args.seed if args.seed is not None else int(st.section.get("seed", 0))
        if not 0 <= st.seed < 2**64:
            raise UsageError("seed must be a 64-bit unsigned integer")
        st.workers = max(1, args.workers or 1)
        st.budget = int((args.budget_gib if args.budget_gib is not None else 2.0) * 2**30)
        root = args.out if args.out is not None else Path("abcring_out") / args.command
        out = Output(root, bool(args.force))
        manifest_path = out.path("manifest.json")
        t0 = time.perf_counter()
        record = COMMANDS[args.command][0](st, out)
        manifest = {
            "experiment": args.command,
            "version": _version(),
            "seed": st.seed,
            "parameters": st.used,
            "workers": st.workers,
            "budget_bytes": st.budget,
            "files": out.files,
            "wall_time_s": time.perf_counter() - t0,
            "result": record,
        }
        manifest_path.write_text(json.dumps(_jsonable(manifest), indent=2, default=str))
        print(json.dumps(_jsonable(record), default=str)[:2000])
        if isinstance(record, dict) and record.get("status") == "partial":
            return EXIT_NUMERIC
        return EXIT_OK
    except UsageError as exc:
        print(f"abcring: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, BudgetExceeded, minimizer.BracketError, minimizer.NoReturn,
            minimizer.StepUnderflow, generators.GapError, FloatingPointError) as exc:
        print(f"abcring: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError) as exc:
        print(f"abcring: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
