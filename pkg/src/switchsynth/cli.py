"""Command-line interface.

Exit codes: 0 success, 2 usage or parse error, 3 empty result,
4 verification or containment failure, 5 controller failure at run time.
"""
import argparse
import logging
import os
import sys
import time

import numpy as np

from . import direct, indirect, model, sim

EXIT_OK, EXIT_USAGE, EXIT_EMPTY, EXIT_VERIFY, EXIT_RUNTIME = 0, 2, 3, 4, 5

log = logging.getLogger("switchsynth")

BUILTIN_MODELS = {
    "boost1": """\
builder: boost1
tau: 1/2
box:
lower: 3 1.5
upper: 3.4 1.8
eta: 1/40
""",
    "boost3": """\
builder: boost3
tau: 1/60000
box:
lower: 4 4 4 15
upper: 7 7 7 17
eta: 1/5
""",
    "boost3-failure": """\
builder: boost3
tau: 1/60000
sigma_available: 000 001 010 011
box:
lower: 4 4 4 15
upper: 7 7 7 17
""",
}


class UsageError(Exception):
    pass


def _number(text):
    try:
        return model.parse_number(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive(text):
    value = _number(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text}")
    return value


def _load(args):
    name = args.model
    if name.startswith("builtin:"):
        key = name.split(":", 1)[1]
        if key not in BUILTIN_MODELS:
            raise UsageError(f"unknown builtin model {key!r}; choose from {sorted(BUILTIN_MODELS)}")
        spec = model.parse_model(BUILTIN_MODELS[key])
    else:
        try:
            spec = model.load_model(name)
        except OSError as exc:
            raise UsageError(f"cannot read model: {exc}") from None
    system = spec.system
    if getattr(args, "tau", None) is not None:
        system = system.with_tau(args.tau)
    box = spec.box
    if getattr(args, "lower", None) is not None or getattr(args, "upper", None) is not None:
        if args.lower is None or args.upper is None:
            raise UsageError("--lower and --upper go together")
        box = model.Box(args.lower, args.upper)
    if box is not None and box.n != system.n:
        raise UsageError(f"box has dimension {box.n}, model has {system.n}")
    return spec, system, box


def _out_dir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _write(out, name, text):
    with open(os.path.join(out, name), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def cmd_synth_indirect(args):
    spec, system, box = _load(args)
    if box is None:
        raise UsageError("no safe box: give one in the model or with --lower/--upper")
    eta = args.eta if args.eta is not None else spec.params.get("eta")
    if eta is None:
        raise UsageError("missing --eta")
    pitch = args.pitch_factor if args.pitch_factor is not None else spec.params.get("pitch_factor", 2.0)
    grid = indirect.Grid(eta, system.n, pitch)
    try:
        graph = indirect.build_abstract_graph(system, box, grid, threads=args.threads)
    except indirect.EmptyGridError as exc:
        raise UsageError(str(exc)) from None
    result = indirect.safety_synthesis(graph)
    patterns = indirect.find_patterns(result, args.max_len)

    cert_lines = [f"eta: {float(eta)!r}", f"pitch: {float(grid.pitch)!r}"]
    try:
        cert = indirect.certificate(system, eta)
        cert_lines += [f"beta: {float(cert.beta)!r}", f"epsilon: {float(cert.epsilon)!r}", "status: certified"]
    except indirect.CertificateError as exc:
        cert_lines += [f"beta: {float(exc.beta)!r}", "epsilon: none", "status: uncertified"]
        log.warning("%s; results are uncertified", exc)
    cert_lines += [f"nodes: {graph.num_nodes}", f"winning: {result.size}",
                   f"patterns: {len(patterns)}", f"max_len: {args.max_len}"]

    out = _out_dir(args)
    _write(out, "graph.txt", graph.to_text())
    _write(out, "graph.dot", graph.to_dot(result.winning))
    _write(out, "patterns.txt", indirect.patterns_to_text(patterns))
    _write(out, "certificate.txt", "\n".join(cert_lines) + "\n")
    print("\n".join(cert_lines))
    return EXIT_OK if result.size else EXIT_EMPTY


def _direct_grid(args, spec, box):
    delta = args.delta if args.delta is not None else spec.params.get("delta")
    if delta is not None and len(delta) not in (1, box.n):
        raise UsageError(f"--delta needs 1 or {box.n} values")
    if delta is None:
        return direct.CellGrid(box, resolution=args.resolution)
    return direct.CellGrid(box, delta)


def cmd_synth_direct(args):
    spec, system, box = _load(args)
    if box is None:
        raise UsageError("no safe box: give one in the model or with --lower/--upper")
    grid = _direct_grid(args, spec, box)
    start = time.perf_counter()
    cs = direct.algorithm1(system, box, grid=grid, pre=args.pre, threads=args.threads)
    elapsed = time.perf_counter() - start
    report = direct.verify_invariance(system, cs, args.samples_per_cell, seed=args.seed)

    lines = [
        f"cells: {grid.size}",
        "counts: " + " ".join(str(c) for c in grid.shape),
        "delta: " + " ".join(repr(float(d)) for d in grid.delta),
        f"pre: {args.pre}",
        f"iterations: {cs.iterations}",
        f"converged: {int(cs.converged)}",
        f"v_prime_cells: {len(cs.v_prime)}",
    ]
    lines += [f"control_{i}_cells: {len(c)}" for i, c in enumerate(cs.control, start=1)]
    zones = cs.zones() if grid.dense else []
    lines.append(f"uncontrollable_zones: {len(zones)}")
    for z in zones:
        lines.append("zone {} cells {} {}".format(
            z.cells, " ".join(repr(float(v)) for v in z.bbox.lower),
            " ".join(repr(float(v)) for v in z.bbox.upper)))
    text = "\n".join(lines) + "\n" + report.summary()

    out = _out_dir(args)
    _write(out, "subspace.txt", cs.to_text())
    _write(out, "regions.svg", direct.render_svg(cs))
    _write(out, "report.txt", text)
    print(text, end="")
    log.info("synthesis took %.2f s", elapsed)
    return EXIT_OK if len(cs.v_prime) else EXIT_EMPTY


def _read_subspace(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return direct.ControllableSubspace.from_text(fh.read())
    except OSError as exc:
        raise UsageError(f"cannot read subspace: {exc}") from None
    except direct.SubspaceFormatError as exc:
        raise UsageError(f"corrupt subspace file: {exc}") from None


def cmd_simulate(args):
    spec, system, box = _load(args)
    if (args.pattern is None) == (args.subspace is None):
        raise UsageError("give exactly one of --pattern or --subspace")
    if args.x0 is None or len(args.x0) != system.n:
        raise UsageError(f"--x0 needs {system.n} values")
    out = _out_dir(args)
    if args.pattern is not None:
        if box is None:
            raise UsageError("no safe box")
        try:
            pattern = indirect.SwitchingPattern.parse(args.pattern)
            traj = sim.simulate_pattern(system, args.x0, pattern, args.steps, args.substeps)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        eps = args.epsilon if args.epsilon is not None else spec.params.get("epsilon", 0.0)
        rep = sim.check_containment(traj, box, eps)
        failed = rep.inflated_at_samples > 0
        header = f"mode: pattern {pattern}\n"
    else:
        cs = _read_subspace(args.subspace)
        if cs.grid.n != system.n or cs.m != system.m:
            raise UsageError("subspace does not match the model")
        box = cs.grid.box
        try:
            traj, _ = sim.simulate_closed_loop(system, args.x0, cs, args.steps, args.substeps)
        except sim.X0OutsideControllable as exc:
            raise UsageError(str(exc)) from None
        except direct.NoSafeMode as exc:
            _write(out, "trajectory.csv", exc.trajectory.to_csv())
            _write(out, "report.txt", f"mode: closed-loop\nNoSafeMode at step {exc.step}\n")
            print(f"NoSafeMode at step {exc.step}", file=sys.stderr)
            return EXIT_RUNTIME
        rep = sim.check_containment(traj, box, 0.0)
        failed = len(rep.violations_at_samples) > 0
        header = "mode: closed-loop\n"
    _write(out, "trajectory.csv", traj.to_csv())
    text = header + f"steps: {args.steps}\nsubsteps: {args.substeps}\n" + rep.to_text()
    _write(out, "report.txt", text)
    print(text, end="")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_verify(args):
    spec, system, _ = _load(args)
    if args.subspace is None:
        raise UsageError("missing --subspace")
    cs = _read_subspace(args.subspace)
    if cs.grid.n != system.n or cs.m != system.m:
        raise UsageError("subspace does not match the model")
    report = direct.verify_invariance(system, cs, args.samples_per_cell, seed=args.seed)
    text = report.summary()
    out = _out_dir(args)
    _write(out, "report.txt", text)
    print(text, end="")
    return EXIT_OK if report.ok else EXIT_VERIFY


def build_parser():
    parser = argparse.ArgumentParser(prog="switchsynth", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--model", required=True,
                       help="model file, or builtin:boost1 / builtin:boost3 / builtin:boost3-failure")
        p.add_argument("--out", default="out", help="artifact directory")
        p.add_argument("--tau", type=_positive)
        p.add_argument("--lower", type=_number, nargs="+")
        p.add_argument("--upper", type=_number, nargs="+")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth-indirect", help="grid abstraction and safety synthesis")
    common(p)
    p.add_argument("--eta", type=_positive)
    p.add_argument("--pitch-factor", type=_positive,
                   help="lattice pitch in units of eta (default 2)")
    p.add_argument("--max-len", type=int, default=12)
    p.set_defaults(func=cmd_synth_indirect)

    p = sub.add_parser("synth-direct", help="controllable subspace on a cell grid")
    common(p)
    p.add_argument("--delta", type=_positive, nargs="+")
    p.add_argument("--resolution", type=int, default=200,
                   help="cells per box edge when --delta is absent")
    p.add_argument("--pre", choices=("over", "center"), default="over")
    p.add_argument("--samples-per-cell", type=int)
    p.set_defaults(func=cmd_synth_direct)

    p = sub.add_parser("simulate", help="simulate a pattern or the on-line controller")
    common(p)
    p.add_argument("--pattern")
    p.add_argument("--subspace")
    p.add_argument("--x0", type=_number, nargs="+")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--substeps", type=int, default=32)
    p.add_argument("--epsilon", type=_number)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="check invariance of a subspace artifact")
    common(p)
    p.add_argument("--subspace")
    p.add_argument("--samples-per-cell", type=int)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    for name in ("steps", "substeps", "max_len", "resolution"):
        if getattr(args, name, 1) is not None and getattr(args, name, 1) < 1:
            print(f"error: --{name.replace('_', '-')} must be at least 1", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, model.ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
