"""Command-line entry point: ``python -m emodel <command> ...``.

Exit codes: 0 success, 1 validation failure, 2 config or input error,
3 runtime or numerical error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .likelihood import (EventHistory, HistoryStep, chained_density, empirical_first_event_table,
                         exclusive_density, joint_density, no_event_probability, total_variation,
                         windowed_event_probability)
from .lindblad import DirectSumDensity, IntegrationError, integrate_master
from .model import ModelError
from .propagator import NumericalDegeneracyError
from .serialize import (ConfigError, LogFormatError, decode_vector, parse_config, stats_report,
                        write_density_csv, write_event_log)
from .trajectory import run_ensemble

EXIT_OK, EXIT_INVALID, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _times(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad time list {text!r}") from None


def _load(args):
    cfg = parse_config(args.config)
    rc = cfg.run
    for attr, key in (("trajectories", "trajectories"), ("seed", "seed"), ("t_max", "t_max"), ("step", "step")):
        v = getattr(args, attr, None)
        if v is not None:
            setattr(rc, key, v)
            cfg.raw.setdefault("run", {})[key] = v
    if getattr(args, "snapshots", False):
        rc.snapshot_states = True
        cfg.raw.setdefault("run", {})["snapshot_states"] = True
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load(args)
    rc = cfg.run
    ens = run_ensemble(cfg.model, cfg.init, rc.trajectories, (), t_max=rc.t_max, seed=rc.seed, step=rc.step,
                       t0=rc.t0, event_budget=rc.event_budget, snapshots=rc.snapshot_states,
                       workers=args.workers)
    n = write_event_log(ens.trajectories, args.out, cfg.hash, rc.seed, rc.t0)
    print(f"{rc.trajectories} trajectories, {n} events -> {args.out}")
    return EXIT_OK


def cmd_lindblad(args) -> int:
    cfg = _load(args)
    rc = cfg.run
    probes = args.probe if args.probe is not None else (rc.probe_times or [rc.t_max])
    probes = sorted(set([rc.t0] + list(probes)))
    t1 = max(rc.t_max, probes[-1])
    rho0 = DirectSumDensity.pure(cfg.model, *cfg.init)
    dens = integrate_master(cfg.model, rho0, rc.t0, t1, rc.step, probes=probes)
    write_density_csv(args.out, probes, dens)
    for t, d in zip(probes, dens):
        print(f"t={t:g} trace={d.trace():.12f} min_eig={d.min_eigenvalue():.3e}")
    return EXIT_OK


def _read_history(path, cfg):
    try:
        raw = json.loads(Path(path).read_text())
        steps = [HistoryStep(int(s["sector"]), float(s["t"]), s.get("label")) for s in raw["steps"]]
        h = EventHistory(int(raw.get("sector", cfg.init[0])), float(raw.get("t0", cfg.run.t0)), steps,
                         raw.get("t_end"))
        psi = decode_vector(raw["state"]) if "state" in raw else cfg.init[1]
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed history ({exc})") from None
    if psi.shape != (cfg.model.dim(h.sector),):
        raise ConfigError("history start state does not match the start sector")
    return h, psi / np.linalg.norm(psi)


def cmd_likelihood(args) -> int:
    cfg = _load(args)
    h, psi = _read_history(args.history, cfg)
    step = cfg.run.step
    try:
        joint = joint_density(cfg.model, h, psi, step)
        chain = chained_density(cfg.model, h, psi, step)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    first_t = h.steps[0].t if h.steps else (h.t_end if h.t_end is not None else h.t0)
    report = {
        "events": h.n,
        "joint_density": joint,
        "chained_density": chain,
        "units": f"1/time^{h.n}",
        "survival_to_first_event": no_event_probability(cfg.model, h.sector, psi, h.t0, first_t, step),
    }
    if h.t_end is not None:
        report["exclusive_density"] = exclusive_density(cfg.model, h, psi, step)
    Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report))
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args)
    rc = cfg.run
    m = cfg.model
    n = rc.trajectories
    probes = rc.probe_times or [t for t in (0.5, 1.0, 2.0) if rc.t0 < t <= rc.t_max] or [rc.t_max]
    tol = args.tol if args.tol is not None else 5.0 / math.sqrt(n)
    ens = run_ensemble(m, cfg.init, n, probes, t_max=rc.t_max, seed=rc.seed, step=rc.step, t0=rc.t0,
                       event_budget=rc.event_budget)
    rho0 = DirectSumDensity.pure(m, *cfg.init)
    exact = integrate_master(m, rho0, rc.t0, max(probes), rc.step, probes=probes)
    ok = True
    for t, a, b in zip(probes, ens.densities, exact):
        d = a.distance(b)
        good = d <= tol
        ok &= good
        print(f"{'PASS' if good else 'FAIL'} density t={t:g}: frobenius {d:.4g} (tol {tol:.4g})")
    if m.history_dependent:
        print("SKIP first-event histogram: history-dependent operators")
    else:
        tab = windowed_event_probability(m, cfg.init[0], cfg.init[1], rc.t0, rc.t_max, args.bins,
                                         max_events=0, step=rc.step)
        want = dict(tab.first_event)
        want["quiet"] = tab.quiet
        got = empirical_first_event_table(ens.trajectories, tab.edges)
        tv = total_variation(want, got)
        good = tv <= args.tv_tol
        ok &= good
        print(f"{'PASS' if good else 'FAIL'} first-event histogram: total variation {tv:.4g} (tol {args.tv_tol:g})")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_stats(args) -> int:
    rep = stats_report(args.events, args.out)
    print(f"{rep['trajectories']} trajectories, {rep['events']} events -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emodel", description="Event-model simulator and oracles.")
    sub = p.add_subparsers(dest="command", required=True)

    def run_opts(q, trajectories=True):
        q.add_argument("--config", required=True)
        if trajectories:
            q.add_argument("--trajectories", type=int)
            q.add_argument("--seed", type=int)
        q.add_argument("--t-max", dest="t_max", type=float)
        q.add_argument("--step", type=float)

    q = sub.add_parser("simulate", help="run trajectories and write a JSON-Lines event log")
    run_opts(q)
    q.add_argument("--out", required=True)
    q.add_argument("--snapshots", action="store_true", help="store post-jump states in the log")
    q.add_argument("--workers", type=int, default=1)
    q.set_defaults(fn=cmd_simulate)

    q = sub.add_parser("lindblad", help="integrate the master equation and write probe densities as CSV")
    run_opts(q, trajectories=False)
    q.add_argument("--out", required=True)
    q.add_argument("--probe", type=_times)
    q.set_defaults(fn=cmd_lindblad)

    q = sub.add_parser("likelihood", help="joint density of an event history")
    q.add_argument("--config", required=True)
    q.add_argument("--history", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_likelihood)

    q = sub.add_parser("validate", help="ensemble vs master equation and first-event law")
    run_opts(q)
    q.add_argument("--tol", type=float, help="Frobenius tolerance (default 5/sqrt(N))")
    q.add_argument("--tv-tol", dest="tv_tol", type=float, default=0.05)
    q.add_argument("--bins", type=int, default=20)
    q.set_defaults(fn=cmd_validate)

    q = sub.add_parser("stats", help="inter-event statistics of an event log")
    q.add_argument("--events", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        for line in exc.problems:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except LogFormatError as exc:
        for line in exc.problems:
            print(f"log error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, NumericalDegeneracyError, ModelError, ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
