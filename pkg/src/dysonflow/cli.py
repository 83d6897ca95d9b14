"""Command-line front end: ``dysonflow run <spec.json>`` and ``dysonflow selftest``.

Every run writes CSV tables and a ``manifest.json`` into the output
directory.  Files are written to a temporary name and renamed into place.
Floats are written with ``repr``, so a rerun with the same spec and seed
reproduces every byte whatever the thread count.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .configspace import ConfigError, GapConfig, ParticleConfig, SpaceParams
from .convergence import (
    coupled_errors, density_partition_check, make_windows, neighbour_ratio, spacing_balance,
    spacing_conservation, uniqueness_diagnostics, balance_residual,
)
from .interaction import InteractionParams
from .iteration import check_decreasing, iterate_stage, stage_differences, start
from .oracles import (
    MatrixEnsembleSpec, matrix_dbm_sample, membership_stats_sine, q_table, sine_like_sample, solve_tau,
)
from .runspec import RunSpec, RunSpecError, load
from .sde import StabilityError, simulate_gaps, simulate_particles
from .selftest import SUITES

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3


# ---------------------------------------------------------------- output

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Table:
    """A CSV table held in memory until the run succeeds."""

    def __init__(self, name: str, header: Sequence[str], rows: Iterable[Sequence]):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        self.rows = 0
        for row in rows:
            w.writerow([_fmt(v) for v in row])
            self.rows += 1
        self.name = name
        self.text = buf.getvalue()

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _wide(values: np.ndarray, times: np.ndarray, replicas, offset: int, prefix: str, lead=()):
    """Header and rows ``(*lead, replica, time, v[offset], v[offset+1], ...)``."""
    cols = [f"{prefix}[{i}]" for i in range(offset, offset + values.shape[2])]
    header = [name for name, _ in lead] + ["replica", "time"] + cols

    def rows():
        fixed = [v for _, v in lead]
        for r, rep in enumerate(replicas):
            for k, t in enumerate(times):
                yield fixed + [rep, float(t)] + [float(v) for v in values[r, k]]
    return header, rows()


def _finite(x) -> object:
    x = float(x)
    return x if math.isfinite(x) else str(x)


# ---------------------------------------------------------------- experiments

def _lattice_particles(spec: RunSpec) -> ParticleConfig:
    lo = -(spec.N // 2)
    return ParticleConfig.lattice(lo, lo + spec.N - 1, spec.rho)


def _window_particles(spec: RunSpec) -> ParticleConfig:
    return ParticleConfig.lattice(-spec.window, spec.window, spec.rho)


def _reps(spec: RunSpec) -> list[int]:
    return list(range(spec.replicas))


def exp_simulate(spec, threads):
    p = simulate_particles(_lattice_particles(spec), spec.beta, spec.scheme_spec(), spec.T, spec.seed,
                           _reps(spec), spec.record_every, threads=threads)
    header, rows = _wide(p.values, p.times, p.replicas, p.offset, "x")
    gaps = p.gaps()
    return [Table("paths.csv", header, rows)], {"min_gap": _finite(gaps.min()) if gaps.size else None}


def exp_iterate(spec, threads):
    y = GapConfig.constant(-spec.window, spec.window, spec.rho)
    params = InteractionParams(beta=spec.beta)
    state = start(y, spec.T, spec.seed, _reps(spec), spec.gamma)
    for _ in range(spec.stages):
        state = iterate_stage(state, params, spec.scheme_spec(), threads)
    step = spec.record_every
    first = state.paths[0]
    header = ["stage", "replica", "time"] + [f"y[{a}]" for a in range(first.offset, first.offset + first.values.shape[2])]

    def rows():
        for s, path in enumerate(state.paths):
            yield from _wide(path.values[:, ::step], path.times[::step], path.replicas, path.offset, "y",
                             lead=[("stage", s)])[1]
    diffs = stage_differences(state)
    results = {"stage_differences": diffs}
    if len(state.paths) >= 2:
        rep = check_decreasing(state, 10 * spec.dt)
        results.update(max_increase=rep.max_violation, decreasing=rep.passed)
    tables = [Table("stages.csv", header, rows()),
              Table("differences.csv", ["stage", "sup_difference"], enumerate(diffs, start=1))]
    return tables, results


def exp_converge(spec, threads):
    x = ParticleConfig.lattice(-spec.ladder[-1], spec.ladder[-1], spec.rho)
    ladder = make_windows(x, spec.ladder)
    table = coupled_errors(x, ladder, spec.beta, spec.scheme_spec(), spec.T, spec.seed, _reps(spec),
                           spec.tracked, spec.p_prime, threads)
    summary = [(n, table.median(n), table.mean_power(n)) for n in table.n_values]
    return ([Table("errors.csv", ["n", "replica", "sup_error"], table.rows()),
             Table("summary.csv", ["n", "median_sup_error", "mean_power_error"], summary)],
            {"reference": table.reference, "tracked": table.tracked})


def exp_diagnose(spec, threads):
    lo, hi = -spec.window, spec.window
    up0 = GapConfig.constant(lo, hi, spec.rho)
    lw0 = GapConfig.constant(lo, hi, spec.rho * (1 - spec.delta))
    kw = dict(record_every=1, threads=threads)
    up = simulate_gaps(up0, spec.beta, spec.scheme_spec(), spec.T, spec.seed, _reps(spec), **kw)
    lw = simulate_gaps(lw0, spec.beta, spec.scheme_spec(), spec.T, spec.seed, _reps(spec), **kw)
    d = uniqueness_diagnostics(up, lw, spec.i1, spec.i2, spec.m)
    keys = sorted(d.L)
    header = ["replica", "time", "E"]
    for i, s in keys:
        tag = f"{'+' if s > 0 else '-'}{i}"
        header += [f"L{tag}", f"L_short{tag}", f"L_long{tag}"]

    def rows():
        step = spec.record_every
        for r, rep in enumerate(up.replicas):
            for k in range(0, d.times.size, step):
                row = [rep, float(d.times[k]), float(d.E[r, k])]
                for key in keys:
                    row += [float(d.L[key][r, k]), float(d.L_short[key][r, k]), float(d.L_long[key][r, k])]
                yield row
    return [Table("diagnostics.csv", header, rows())], {
        "balance_residual": balance_residual(d, spec.beta), "min_E": float(d.E.min())}


def exp_density(spec, threads):
    x = _window_particles(spec)
    p = simulate_particles(x, spec.beta, spec.scheme_spec(), spec.T, spec.seed, _reps(spec),
                           spec.record_every, threads=threads)
    rep = density_partition_check(p, spec.alpha, spec.k, spec.rho)
    ratio = neighbour_ratio(spec.alpha, spec.k, max(abs(b) for b in rep.cells) + 1)
    cells = [(b, lo, hi) for b, (lo, hi) in sorted(rep.cells.items())]
    return [Table("cells.csv", ["b", "first_gap", "stop_gap"], cells)], {
        "min_average": rep.min_average, "threshold": rep.threshold, "passed": rep.passed,
        "worst_cell": rep.worst_cell, "worst_time": rep.worst_time, "neighbour_ratio": float(ratio)}


def exp_spacing(spec, threads):
    x = _window_particles(spec)
    p = simulate_particles(x, spec.beta, spec.scheme_spec(), spec.T, spec.seed, _reps(spec),
                           spec.record_every, record_brownian=True, threads=threads)
    st = spacing_conservation(p, spec.m_values, spec.T, spec.rho)
    balance = [(m, float(np.max(np.abs(spacing_balance(p, -m, m, spec.beta))))) for m in st.m_values]

    def rows():
        for r, rep in enumerate(p.replicas):
            for c, m in enumerate(st.m_values):
                yield rep, m, float(st.deviation[r, c])
    mean = st.mean()
    return ([Table("spacing.csv", ["replica", "m", "deviation"], rows()),
             Table("balance.csv", ["m", "max_residual"], balance)],
            {"mean_deviation": [float(v) for v in mean], "slope": _finite(st.slope),
             "decreasing": bool(np.all(np.diff(mean) < 0))})


def exp_oracle(spec, threads):
    if spec.oracle == "matrix":
        x = _lattice_particles(spec)
        ms = MatrixEnsembleSpec(beta=int(spec.beta), N=spec.N, dt=spec.dt, T=spec.T, seed=spec.seed,
                                replicas=spec.replicas)
        traj = matrix_dbm_sample(ms, initial=x.positions)
        keep = slice(None, None, spec.record_every)
        header, rows = _wide(traj.eigenvalues[:, keep], traj.times[keep], _reps(spec), x.offset, "x")
        return [Table("eigenvalues.csv", header, rows)], {}
    if spec.oracle == "bessel":
        tab = q_table(spec.t_values, spec.p_values, spec.samples, spec.beta, spec.seed, spec.n_steps)
        rows = [(e.t, e.p, e.estimate, e.ci_half_width, e.samples)
                for _, e in sorted(tab.entries.items())]
        results = {"monotone_in_t": tab.monotone_in_t(), "monotone_in_p": tab.monotone_in_p()}
        if spec.target is not None:
            tau = solve_tau(spec.target, spec.samples, spec.beta, spec.seed, spec.n_steps)
            results.update(tau=tau.tau, tau_residual=tau.residual, tau_ci_half_width=tau.estimate.ci_half_width)
        return [Table("moments.csv", ["t", "p", "estimate", "ci_half_width", "samples"], rows)], results
    samples = [sine_like_sample(spec.N, spec.sine_window, spec.seed, r) for r in _reps(spec)]
    rows = ((r, int(i), float(v)) for r, s in enumerate(samples) for i, v in zip(s.indices(), s.positions))
    return [Table("samples.csv", ["replica", "index", "position"], rows)], {}


def exp_membership(spec, threads):
    params = SpaceParams(alpha=spec.alpha, rho=spec.rho, p=spec.p)
    rows = []
    for r in _reps(spec):
        s = sine_like_sample(spec.N, spec.sine_window, spec.seed, r)
        st = membership_stats_sine(s, params, spec.m_max, spec.r_min)
        rows.append((r, st.count_deviation, st.gap_moment))
    arr = np.array([row[1:] for row in rows])
    return [Table("membership.csv", ["replica", "count_deviation", "gap_moment"], rows)], {
        "max_count_deviation": float(arr[:, 0].max()), "max_gap_moment": float(arr[:, 1].max())}


EXPERIMENTS = {
    "simulate": exp_simulate, "iterate": exp_iterate, "converge": exp_converge, "diagnose": exp_diagnose,
    "density": exp_density, "spacing": exp_spacing, "oracle": exp_oracle, "membership": exp_membership,
}


def run_spec(spec: RunSpec, out_dir: str, threads: int) -> dict:
    """Run one experiment and write its tables plus ``manifest.json``; returns the manifest."""
    tables, results = EXPERIMENTS[spec.experiment](spec, threads)
    os.makedirs(out_dir, exist_ok=True)
    for t in tables:
        _atomic_write(os.path.join(out_dir, t.name), t.text)
    manifest = {
        "package": "dysonflow", "version": __version__, "status": "ok",
        # threads never change the outputs, so they are not part of the record
        "spec": {k: v for k, v in spec.to_dict().items() if k != "threads"},
        "artifacts": {t.name: {"rows": t.rows, "sha256": t.sha256} for t in tables},
        "results": results,
    }
    _atomic_write(os.path.join(out_dir, "manifest.json"), json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ---------------------------------------------------------------- entry point

def _error(kind: str, message: str) -> dict:
    return {"status": "error", "kind": kind, "errors": [{"field": None, "message": message}]}


def cmd_run(args) -> int:
    try:
        spec = load(args.spec)
        if args.threads is not None:
            spec = dataclasses.replace(spec, threads=args.threads)
            if spec.threads < 1:
                raise RunSpecError([("threads", "must be >= 1")])
    except RunSpecError as exc:
        print(json.dumps(exc.report(), sort_keys=True), file=sys.stderr)
        return EXIT_INVALID
    out_dir = args.out_dir if args.out_dir is not None else spec.output
    try:
        manifest = run_spec(spec, out_dir, spec.threads)
    except (ConfigError, StabilityError, ValueError, IndexError, OSError) as exc:
        print(json.dumps(_error(type(exc).__name__, str(exc)), sort_keys=True), file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps({"status": "ok", "out_dir": out_dir, "artifacts": sorted(manifest["artifacts"])}))
    return EXIT_OK


def cmd_selftest(args) -> int:
    failed = False
    for name, fn in SUITES.items():
        res = fn(seed=args.seed)
        print(res.line())
        failed |= not res.passed
    return EXIT_FAIL if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dysonflow", description="Dyson Brownian motion experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by a JSON spec")
    r.add_argument("spec")
    r.add_argument("--threads", type=int, default=None, help="worker threads (overrides the run spec)")
    r.add_argument("--out-dir", default=None, help="output directory (overrides the run spec)")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("selftest", help="run the deterministic invariant suites")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
