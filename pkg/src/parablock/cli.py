"""Command-line runner.

Subcommands: run, compare, check, bound, gradcheck, partition-preview.
Exit codes: 0 success, 2 config error, 3 numeric error, 4 invariant violation.
Log verbosity comes from ``PARABLOCK_LOG_LEVEL`` (default WARNING).
"""

import argparse
import csv
import json
import logging
import os
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checks, netsim, theory
from .compression import TopKConfig
from .config import build_run, build_specs, load_config
from .engine import METHODS, run as run_engine
from .errors import ConfigError, InvariantViolation, NumericError
from .local_opt import SgdConfig
from .objectives import (
    LogisticObjective, MLPObjective, QuadraticObjective, dirichlet_partition,
    estimate_sigma_g, global_loss, gradient_rel_error, make_classification,
    quadratic_minimum, smoothness_constant,
)
from .trace_io import write_trace_csv

log = logging.getLogger("parablock")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INVARIANT = 0, 2, 3, 4
COMPARE_COLUMNS = ("method", "bandwidth", "batch_size", "total_wall", "compute_share",
                   "comm_share", "final_loss", "bytes_up", "bytes_down")


def _bound_inputs(cfg, objs, theta0):
    L, _ = smoothness_constant(objs)
    if objs[0].kind == "quadratic":
        _, fstar = quadratic_minimum(objs)
    else:
        fstar = 0.0  # cross-entropy is non-negative
    F = max(0.0, global_loss(objs, theta0) - fstar)
    return theory.BoundInputs(
        eta=cfg.eta, eta_l=cfg.optimizer.eta_l, T=cfg.rounds, K=cfg.local_steps,
        N=cfg.n_clients, L=max(L, 1e-300), sigma=objs[0].noise_sigma,
        sigma_g=float(np.sqrt(estimate_sigma_g(objs, theta0))), F=F)


def _timed(method, res, rc, cfg, *, bandwidth=None, batch_size=None):
    link, comp = build_specs(rc, bandwidth=bandwidth, batch_size=batch_size)
    timing = netsim.simulate_timeline(method, res.traces, link, comp, n_clients=cfg.n_clients,
                                      local_steps=cfg.local_steps,
                                      staleness=max(cfg.staleness, 1))
    return timing


def cmd_run(args):
    rc = load_config(args.config)
    cfg, objs, theta0 = build_run(rc)
    inputs = _bound_inputs(cfg, objs, theta0)
    feas = theory.lr_feasible(inputs.eta, inputs.eta_l, inputs.K, inputs.L)
    if not feas.ok:
        log.warning("learning rates violate the convergence conditions: %s", "; ".join(feas.violations))
    if not isinstance(cfg.optimizer, SgdConfig):
        log.info("bound report assumes local SGD; optimizer is %s", type(cfg.optimizer).__name__)

    res = run_engine(rc.method, cfg, objs, theta0)
    method = "fedbcd" if (rc.method == "parablock" and cfg.staleness == 0) else rc.method
    timing = _timed(method, res, rc, cfg)
    netsim.attach_timing(res.traces, timing)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(res.traces, out / rc.output.trace)
    report = theory.trace_vs_bound(res.traces, inputs)
    summary = {
        "method": rc.method,
        "rounds": cfg.rounds,
        "final_loss": global_loss(objs, res.theta),
        "total_wall": timing.total,
        "flush_time": timing.flush_time,
        "total_bytes_up": int(sum(t.bytes_up for t in res.traces)),
        "total_bytes_down": int(sum(t.bytes_down for t in res.traces)),
        "lr_feasible": feas.ok,
        "bound": {"measured": report.measured, "bound_rhs": report.bound, "ratio": report.ratio,
                  "L": inputs.L, "sigma": inputs.sigma, "sigma_g": inputs.sigma_g, "F": inputs.F},
    }
    with open(out / rc.output.summary, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"trace: {out / rc.output.trace} ({len(res.traces)} rounds)")
    for k in ("final_loss", "total_wall", "total_bytes_up", "total_bytes_down"):
        print(f"{k}={summary[k]}")
    print("[bound]")
    for line in report.lines():
        print(line)
    return EXIT_OK


_METHOD_RE = re.compile(r"^(\w+)(?:\+topk(?:\(([0-9.eE+-]+)\))?)?$")


def _parse_method(name, default_topk):
    """``base``, ``base+topk`` or ``base+topk(ratio)`` -> ``(base, TopKConfig or None)``."""
    m = _METHOD_RE.match(name)
    if not m or m.group(1) not in METHODS:
        raise ConfigError(f"unknown method {name!r}; expected one of "
                          f"{', '.join(METHODS)} with optional '+topk' or '+topk(ratio)'")
    if "+topk" not in name:
        return m.group(1), None
    if m.group(2) is None:
        return m.group(1), default_topk
    try:
        return m.group(1), replace(default_topk, ratio=float(m.group(2)))
    except ValueError as e:
        raise ConfigError(f"method {name!r}: {e}") from None


def compare_rows(rc, methods):
    rows = []
    topk = rc.compression.build() if rc.compression else TopKConfig(0.2)
    parsed = [(m, *_parse_method(m, topk)) for m in methods]
    for name, base, comp in parsed:
        for batch in rc.sweep.batch_sizes:
            cfg, objs, theta0 = build_run(rc, compression=comp, batch_size=batch)
            res = run_engine(base, cfg, objs, theta0)
            final = global_loss(objs, res.theta)
            for bw in rc.sweep.bandwidths:
                tm = _timed(base, res, rc, cfg, bandwidth=bw, batch_size=batch)
                rows.append({
                    "method": name, "bandwidth": bw, "batch_size": batch,
                    "total_wall": tm.total,
                    "compute_share": tm.total_compute / tm.total if tm.total else 0.0,
                    "comm_share": tm.total_comm / tm.total if tm.total else 0.0,
                    "final_loss": final,
                    "bytes_up": int(sum(tm.bytes_up)), "bytes_down": int(sum(tm.bytes_down)),
                })
    return rows


def cmd_compare(args):
    rc = load_config(args.config)
    methods = args.methods or rc.sweep.methods
    rows = compare_rows(rc, methods)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / rc.output.comparison
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COMPARE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in r.items()})
    print(f"comparison: {path} ({len(rows)} rows)")
    return EXIT_OK


def _fault_hook(round_, magnitude=1e-3):
    def hook(t, client, block, corr):
        if t == round_ and client == 0:
            return corr + magnitude
        return corr
    return hook


def cmd_check(args):
    rc = load_config(args.config)
    cfg, objs, theta0 = build_run(rc)
    hook = _fault_hook(args.inject_fault) if args.inject_fault is not None else None
    ok, msgs, violation = checks.run_battery(cfg, objs, theta0, correction_hook=hook)
    for m in msgs:
        print(m)
    if not ok:
        print(f"INVARIANT VIOLATION: {violation} "
              f"[round={violation.round} client={violation.client} block={violation.block}]")
        return EXIT_INVARIANT
    print("all invariants hold")
    return EXIT_OK


def cmd_bound(args):
    if args.schedule:
        eta, eta_l = theory.sqrt_rate_schedule(args.T, args.K, args.N, args.L, args.c_eta, args.c_etal)
    else:
        if args.eta is None or args.eta_l is None:
            raise ConfigError("--eta and --eta-l are required unless --schedule is given")
        eta, eta_l = args.eta, args.eta_l
    b = theory.BoundInputs(eta, eta_l, args.T, args.K, args.N, args.L, args.sigma, args.sigma_g, args.F)
    feas = theory.lr_feasible(eta, eta_l, args.K, args.L)
    print(f"eta={eta:.17g}")
    print(f"eta_l={eta_l:.17g}")
    for i, term in enumerate(theory.bound_terms(b), 1):
        print(f"term{i}={term:.17g}")
    print(f"bound_rhs={theory.bound_rhs(b):.17g}")
    print(f"lr_feasible={feas.ok}")
    for v in feas.violations:
        print(f"violation: {v}")
    return EXIT_OK


def gradcheck_battery(points=10, seed=0, tol=1e-5):
    """Finite-difference check of all objective kinds; returns ``{kind: max_rel_error}``."""
    rng = np.random.default_rng(seed)
    ds = make_classification(24, 5, 3, seed=seed)
    objs = {
        "quadratic": QuadraticObjective(rng.standard_normal(7), rng.uniform(0.1, 2.0, 7)),
        "logistic": LogisticObjective(ds.features, ds.labels, 3),
        "mlp": MLPObjective(ds.features, ds.labels, 3, hidden=6),
    }
    return {k: max(gradient_rel_error(o, rng.standard_normal(o.dim)) for _ in range(points))
            for k, o in objs.items()}


def cmd_gradcheck(args):
    errs = gradcheck_battery(args.points, args.seed)
    bad = False
    for kind, e in errs.items():
        flag = "ok" if e <= args.tol else "FAIL"
        bad |= e > args.tol
        print(f"{kind}: max_rel_error={e:.3e} {flag}")
    return EXIT_INVARIANT if bad else EXIT_OK


def cmd_partition_preview(args):
    if args.config:
        o = load_config(args.config)
        n, p, C = o.objective.n_samples, o.objective.n_features, o.objective.n_classes
        N, alpha, seed = o.federation.n_clients, o.objective.alpha, o.seed
    else:
        n, p, C, N, alpha, seed = args.n_samples, 4, args.n_classes, args.clients, args.alpha, args.seed
    ds = make_classification(n, p, C, seed=seed)
    part = dirichlet_partition(ds, alpha, N, seed)
    H = part.class_histogram(ds.labels, C)
    print("client," + ",".join(f"class_{c}" for c in range(C)) + ",total")
    for i, row in enumerate(H):
        print(f"{i}," + ",".join(str(int(x)) for x in row) + f",{int(row.sum())}")
    if part.fallback:
        print("note: empty clients were filled from the largest client", file=sys.stderr)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="parablock", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the configured engine and write a trace")
    p.add_argument("config")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="wall-clock comparison over the config's sweep")
    p.add_argument("config")
    p.add_argument("--methods", nargs="+")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("check", help="run the invariant battery")
    p.add_argument("config")
    p.add_argument("--inject-fault", type=int, default=None, metavar="ROUND", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("bound", help="evaluate the convergence bound")
    for name in ("T", "K", "N"):
        p.add_argument(f"--{name}", type=int, required=True)
    p.add_argument("--L", type=float, required=True)
    p.add_argument("--eta", type=float)
    p.add_argument("--eta-l", dest="eta_l", type=float)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--sigma-g", dest="sigma_g", type=float, default=0.0)
    p.add_argument("--F", type=float, default=1.0)
    p.add_argument("--schedule", action="store_true", help="use the sqrt(KN), 1/(sqrt(T)K) schedule")
    p.add_argument("--c-eta", dest="c_eta", type=float, default=1.0)
    p.add_argument("--c-etal", dest="c_etal", type=float, default=1.0)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("gradcheck", help="finite-difference gradient battery")
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("partition-preview", help="per-client class histogram of a Dirichlet split")
    p.add_argument("--config")
    p.add_argument("--n-samples", type=int, default=4000)
    p.add_argument("--n-classes", type=int, default=4)
    p.add_argument("--clients", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=13)
    p.set_defaults(func=cmd_partition_preview)
    return ap


def main(argv=None):
    logging.basicConfig(level=os.environ.get("PARABLOCK_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvariantViolation as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
