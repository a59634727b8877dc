"""Command-line front end.

Exit codes: 0 success / VALID / PASS, 1 completed but INVALID / FAIL,
2 usage or input error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ContraktError
from .measures import MeasureKind, load_matrix, mu

EXIT_OK, EXIT_INVALID, EXIT_ERROR = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _positive(kind):
    def conv(text):
        value = kind(text)
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return conv


def _vector(text):
    try:
        return np.array([float(v) for v in text.replace(",", " ").split()])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None


def _config(args) -> dict:
    skip = {"func"}
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in vars(args).items() if k not in skip}


def _measure(args) -> MeasureKind:
    weight = None
    if getattr(args, "theta", None):
        weight = load_matrix(args.theta)
    elif getattr(args, "weight", None) is not None:
        weight = np.diag(args.weight)
    return MeasureKind(args.measure, weight)


def _out(args) -> Path:
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write(path, text, config):
    from .simulate import config_header

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_header(config))
        fh.write(text)


# ---------------------------------------------------------------- commands

def cmd_measure(args) -> int:
    a = load_matrix(args.matrix)
    print(f"{mu(a, _measure(args)):.17g}")
    return EXIT_OK


def cmd_certify(args) -> int:
    from .certify import certify_system, search_weight_for_system
    from .model import load_system_file

    sys_ = load_system_file(args.system)
    times = sys_.default_time_samples(args.t_samples)
    if args.weight_search:
        lo, hi, points = args.theta_range
        _, cert = search_weight_for_system(sys_, args.measure, lo=lo, hi=hi, points=int(points),
                                           grid=args.grid, cert_t_samples=times)
    else:
        cert = certify_system(sys_, _measure(args), args.grid, times)
    out = _out(args)
    cfg = _config(args)
    _write(out / "certificate.txt", cert.report(), cfg)
    _write(out / "certificate.kv", cert.to_kv(), cfg)
    print(cert.report(), end="")
    return EXIT_OK if cert.valid else EXIT_INVALID


def cmd_simulate(args) -> int:
    from .model import load_system_file
    from .simulate import integrate, write_events_csv, write_trajectory_csv
    from .svg import line_plot

    sys_ = load_system_file(args.system)
    x0 = args.x0 if args.x0 is not None else 0.5 * (sys_.domain.lower + sys_.domain.upper)
    traj = integrate(sys_, x0, args.t0, args.t1, args.dt)
    out = _out(args)
    cfg = _config(args)
    write_trajectory_csv(traj, out / "trajectory.csv", cfg)
    write_events_csv(traj, out / "events.csv", cfg)
    line_plot([(traj.times, traj.states[:, i], s) for i, s in enumerate(sys_.states)], out / "trajectory.svg",
              sys_.name, ylabel="state", config=cfg)
    print(f"{len(traj.times)} samples, {len(traj.events)} switching events, final state "
          + " ".join(f"{v:.10g}" for v in traj.final_state))
    return EXIT_OK


def cmd_divergence(args) -> int:
    from .certify import certify_system
    from .model import load_system_file
    from .simulate import divergence
    from .svg import line_plot

    sys_ = load_system_file(args.system)
    cert = certify_system(sys_, _measure(args), args.grid, sys_.default_time_samples(args.t_samples))
    rep = divergence(sys_, args.x0, args.y0, args.t0, args.t1, args.dt, cert)
    out = _out(args)
    cfg = _config(args)
    rows = "t,distance,envelope\n" + "".join(
        f"{t:.17g},{d:.17g},{rep.initial_distance * np.exp(-rep.rate * (t - args.t0)):.17g}\n"
        for t, d in zip(rep.times, rep.distances)
    )
    _write(out / "divergence.csv", rows, cfg)
    env = rep.initial_distance * np.exp(-rep.rate * (rep.times - args.t0))
    line_plot([(rep.times, rep.distances, "|x - y|"), (rep.times, env, "envelope")], out / "divergence.svg",
              f"{sys_.name}: distance between solutions", ylabel="distance", logy=True, config=cfg)
    print(f"certificate: {'VALID' if cert.valid else 'INVALID'} (c = {cert.rate:.6g})")
    print(rep.summary(), end="")
    return EXIT_OK if cert.valid and not rep.violated else EXIT_INVALID


def cmd_network(args) -> int:
    from .network import certify_sync, load_network_file, simulate_network
    from .svg import line_plot

    net = load_network_file(args.network)
    if args.gain is not None:
        net = net.with_gain(args.gain)
    kind = _measure(args)
    cert = certify_sync(net, kind)
    rng = np.random.default_rng(args.seed)
    x0 = rng.uniform(-1.0, 1.0, size=(net.nodes, net.dim))
    rep, nodes, _ = simulate_network(net, x0, args.t0, args.t1, args.dt, kind)
    out = _out(args)
    cfg = _config(args)
    from .simulate import write_trajectory_csv

    for i, tr in enumerate(nodes):
        write_trajectory_csv(tr, out / f"node{i}.csv", cfg)
    _write(out / "coordination.csv",
           "t,error\n" + "".join(f"{t:.17g},{e:.17g}\n" for t, e in zip(rep.times, rep.errors)), cfg)
    _write(out / "sync_certificate.txt", cert.report(), cfg)
    line_plot([(tr.times, tr.states[:, 0], f"node {i}") for i, tr in enumerate(nodes)], out / "states.svg",
              f"{net.name}, k = {net.gain:g}", ylabel="x1", config=cfg)
    line_plot([(rep.times, rep.errors, "coordination error")], out / "coordination.svg",
              "distance to synchrony", ylabel="error", logy=True, config=cfg)
    print(cert.report(), end="")
    print(rep.summary(), end="")
    return EXIT_OK if cert.valid else EXIT_INVALID


def cmd_threshold(args) -> int:
    from .network import load_network_file, threshold_k

    net = load_network_file(args.network)
    k = threshold_k(net, _measure(args), tuple(args.k_range), args.tol)
    print(f"{k:.17g}")
    return EXIT_OK


def cmd_repro(args) -> int:
    from . import repro

    names = list(repro.RUNNERS) if args.name == "all" else [args.name]
    if any(n not in repro.RUNNERS for n in names):
        print(f"unknown reproduction {args.name!r}; choose from {', '.join(repro.RUNNERS)} or all", file=sys.stderr)
        return EXIT_ERROR
    ok = True
    for n in names:
        result = repro.run(n, seed=args.seed, out=args.out)
        print(result.summary(), end="")
        ok &= result.passed
    return EXIT_OK if ok else EXIT_INVALID


# ---------------------------------------------------------------- parser

def _measure_flags(p, default="2"):
    p.add_argument("--measure", default=default, choices=["1", "2", "inf"], help="matrix measure")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--theta", help="weight matrix file (measure of theta A theta^-1)")
    g.add_argument("--weight", type=_vector, help="diagonal weight entries, e.g. '1 1.045'")


def _grid_flags(p):
    p.add_argument("--grid", type=_positive(int), default=33, help="grid points per dimension")
    p.add_argument("--t-samples", type=_positive(int), default=65, help="time samples over one period")


def _time_flags(p, t1=10.0, dt=1e-3):
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--t1", type=float, default=t1)
    p.add_argument("--dt", type=_positive(float), default=dt)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="contrakt", description="Contraction analysis of switched systems.")
    parser.add_argument("--out", default="./out", help="output directory (default ./out)")
    parser.add_argument("--seed", type=int, default=42, help="random seed (default 42)")
    parser.add_argument("--threads", type=_positive(int), help="cap worker threads (sets CONTRAKT_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("measure", help="matrix measure of a matrix file")
    p.add_argument("matrix")
    _measure_flags(p)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("certify", help="contraction certificate of a system file")
    p.add_argument("system")
    _measure_flags(p)
    _grid_flags(p)
    p.add_argument("--weight-search", action="store_true", help="search a diagonal weight first")
    p.add_argument("--theta-range", type=float, nargs=3, default=[1e-2, 1e2, 9], metavar=("LO", "HI", "POINTS"))
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("simulate", help="integrate a system file")
    p.add_argument("system")
    p.add_argument("--x0", type=_vector)
    _time_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("divergence", help="distance between two solutions vs the certified envelope")
    p.add_argument("system")
    p.add_argument("--x0", type=_vector, required=True)
    p.add_argument("--y0", type=_vector, required=True)
    _measure_flags(p)
    _grid_flags(p)
    _time_flags(p)
    p.set_defaults(func=cmd_divergence)

    p = sub.add_parser("network", help="certify and simulate a network file")
    p.add_argument("network")
    p.add_argument("--gain", type=float)
    _measure_flags(p, default="1")
    _time_flags(p, t1=20.0)
    p.set_defaults(func=cmd_network)

    p = sub.add_parser("threshold", help="smallest coupling gain with a VALID certificate")
    p.add_argument("network")
    _measure_flags(p, default="1")
    p.add_argument("--k-range", type=float, nargs=2, default=[0.0, 10.0], metavar=("LO", "HI"))
    p.add_argument("--tol", type=_positive(float), default=1e-9)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("repro", help="reproduce a worked example: pwl, transcriptional, network, virtual, all")
    p.add_argument("name")
    p.set_defaults(func=cmd_repro)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads:
        os.environ["CONTRAKT_THREADS"] = str(args.threads)
    try:
        return args.func(args)
    except (ContraktError, OSError, ValueError) as exc:
        print(f"contrakt: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
