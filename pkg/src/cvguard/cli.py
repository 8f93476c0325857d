"""Command-line entry point.

Exit codes: 0 success / normal verdict, 1 internal or run failure,
2 usage or configuration error, 3 abnormal verdict.
"""
from __future__ import annotations

import argparse
import logging
import sys
import threading
import time
from pathlib import Path

from . import bounds, eot, features, voltagram
from .voltagram import CellCondition, SweepError, SweepProgram

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_ABNORMAL = 3

log = logging.getLogger("cvguard")


class UsageError(Exception):
    pass


def _condition(text):
    try:
        return CellCondition.parse(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"invalid condition {text!r} (choose from normal, disconnected, low-volume)") from None


def _positive_float(text):
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError(f"{text} must be positive")
    return val


def _add_sweep_args(p):
    d = SweepProgram()
    p.add_argument("--v-min", type=float, default=d.v_min)
    p.add_argument("--v-max", type=float, default=d.v_max)
    p.add_argument("--scan-rate", type=float, default=d.scan_rate)
    p.add_argument("--cycles", type=int, default=d.cycles)
    p.add_argument("--dt", type=float, default=d.dt)


def _program(args):
    try:
        return SweepProgram(args.v_min, args.v_max, args.scan_rate, args.cycles, args.dt)
    except SweepError as exc:
        raise UsageError(f"--{exc.field.replace('_', '-')}: {exc}") from None


def _read_gram(path):
    try:
        return voltagram.read_csv(path)
    except (OSError, UnicodeDecodeError, voltagram.CsvFormatError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def _load_model(path):
    try:
        return eot.load(path)
    except FileNotFoundError:
        raise UsageError(f"model file not found: {path}") from None
    except (OSError, eot.ModelFileError) as exc:
        raise UsageError(f"cannot load model {path}: {exc}") from None


# -- simulate -----------------------------------------------------------------

def cmd_simulate(args):
    gram = voltagram.simulate(_program(args), args.condition, args.seed, args.noise)
    out = Path(args.out)
    try:
        voltagram.write_csv(gram, out)
    except OSError as exc:
        raise UsageError(f"cannot write {out}: {exc}") from None
    print(out)
    return EXIT_OK


# -- train ----------------------------------------------------------------------

def _class_vectors(directory, label):
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"{label} directory not found: {d}")
    files = sorted(p for p in d.glob("*.csv") if not p.name.startswith("."))
    if not files:
        raise UsageError(f"{label} class has no examples in {d}")
    return [features.extract(_read_gram(f)) for f in files]


def cmd_train(args):
    normal = _class_vectors(args.normal, "normal")
    abnormal = _class_vectors(args.abnormal, "abnormal")
    data = eot.TrainingSet.from_vectors(normal, abnormal)
    cfg = eot.TrainConfig(tree_count=args.trees, max_depth=args.max_depth,
                          min_leaf=args.min_leaf, feature_subsample=args.features,
                          seed=args.seed)
    model = eot.train(data, cfg)
    eot.save(model, args.out)
    if args.features_out:
        data.to_csv(args.features_out)
    print(f"model={args.out}")
    print(f"l={model.l}")
    print(f"training_error={model.training_error!r}")
    print(f"n_leaves={model.n_leaves}")
    return EXIT_OK


# -- check ----------------------------------------------------------------------

def check_file(model, path) -> int:
    return eot.predict(model, features.extract(_read_gram(path)))


def _spooled(directory: Path):
    return sorted(p for p in directory.glob("*.csv") if not p.name.startswith("."))


def watch(model, directory, log_path=None, poll=0.2, timeout=None, max_files=None, stop=None):
    """Check each CSV that appears in ``directory``; returns {name: verdict}.

    Only completed files are considered: writers drop a dot-prefixed
    temporary and rename it to ``*.csv`` once fully written.
    """
    directory = Path(directory)
    seen = {}
    deadline = None if timeout is None else time.monotonic() + timeout
    while True:
        for path in _spooled(directory):
            if path.name in seen:
                continue
            try:
                verdict = check_file(model, path)
                entry = str(verdict)
            except (UsageError, features.FeatureError) as exc:
                verdict, entry = None, f"error {exc}"
            seen[path.name] = verdict
            line = f"{path.name} {entry}"
            print(line, flush=True)
            if log_path is not None:
                with open(log_path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
            if max_files is not None and len(seen) >= max_files:
                return seen
        if stop is not None and stop.is_set():
            return seen
        if deadline is not None and time.monotonic() >= deadline:
            return seen
        time.sleep(poll)


def cmd_check(args):
    model = _load_model(args.model)
    if args.watch:
        d = Path(args.watch)
        if not d.is_dir():
            raise UsageError(f"watch directory not found: {d}")
        watch(model, d, args.log, args.poll, args.timeout, args.max_files)
        return EXIT_OK
    if not args.csv:
        raise UsageError("check needs a CSV file or --watch DIR")
    verdict = check_file(model, args.csv)
    print(verdict)
    return EXIT_OK if verdict == 1 else EXIT_ABNORMAL


# -- bound ----------------------------------------------------------------------

def cmd_bound(args):
    solve = args.solve_l or args.delta is not None
    if solve and args.delta is None:
        raise UsageError("--solve-l needs --delta")
    if not solve and args.l is None:
        raise UsageError(f"bound {args.kind} needs --l (or --solve-l --delta)")
    if args.kind == "gpr":
        def make(l):
            return bounds.GprBoundParams(args.eps, l, args.nk, args.a, args.c)
        inverse = bounds.min_samples_gpr
    else:
        def make(l):
            return bounds.EotBoundParams(args.eps, l, args.b, args.nl, args.g)
        inverse = bounds.min_samples_eot
    try:
        p = make(0 if solve else args.l)
        if solve:
            query = bounds.BoundQuery(args.delta, args.eps_hat or 0.0)
            p = make(inverse(p, query))
        elif args.eps_hat is not None and not 0 <= args.eps_hat <= 1:
            raise bounds.BoundError("training error must lie in [0, 1]")
    except bounds.BoundError as exc:
        raise UsageError(str(exc)) from None
    print(bounds.report(p, target_delta=args.delta if solve else None,
                        epsilon_hat=args.eps_hat, solved=solve))
    return EXIT_OK


# -- plot -----------------------------------------------------------------------

def cmd_plot(args):
    from .plotting import plot_gram

    gram = _read_gram(args.csv)
    plot_gram(gram, args.out, with_fit=args.with_fit, title=args.title)
    print(args.out)
    return EXIT_OK


# -- serve / orchestrate --------------------------------------------------------

def _instrument_arg(text):
    kind, sep, port = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected KIND=PORT, got {text!r}")
    from .net.instruments import InstrumentKind

    try:
        return InstrumentKind.parse(kind), int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad --instrument value {text!r}") from None


def cmd_serve(args):
    from .net.instruments import CellState, InstrumentKind, InstrumentServer

    specs = list(args.instrument or [])
    if args.kind:
        specs.append((InstrumentKind.parse(args.kind), args.port))
    if not specs:
        raise UsageError("serve needs --kind/--port or at least one --instrument KIND=PORT")
    cell = CellState(capacity_ml=args.capacity, low_threshold_ml=args.low_threshold)
    servers = []
    try:
        for kind, port in specs:
            try:
                srv = InstrumentServer(kind, port, cell, host=args.host)
            except OSError as exc:
                raise UsageError(f"cannot bind {args.host}:{port} for {kind.value}: {exc}") from None
            servers.append(srv.start())
            print(f"{kind.value} listening on {srv.address}", flush=True)
        stop = threading.Event()
        try:
            stop.wait(args.duration)
        except KeyboardInterrupt:
            pass
    finally:
        for srv in servers:
            srv.stop()
    return EXIT_OK


def cmd_orchestrate(args):
    from .net.orchestrator import ConfigError, Orchestrator, exit_status, load_config

    try:
        cfg = load_config(args.config)
        if args.rounds is not None:
            cfg.rounds = args.rounds
        if args.model is not None:
            cfg.model_path = Path(args.model)
        if args.fault is not None:
            cfg.fault = args.fault
        cfg.validate()
    except ConfigError as exc:
        raise UsageError(f"config error: {exc}") from None
    model = _load_model(cfg.model_path) if cfg.model_path else None
    manifest = Orchestrator(cfg, model).run()
    for r in manifest["rounds"]:
        verdict = "-" if r["verdict"] is None else r["verdict"]
        print(f"round={r['round']} status={r['status']} file={r['file']} verdict={verdict}"
              + (f" error={r['error']}" if r["error"] else ""))
    print(f"manifest={cfg.manifest}")
    return exit_status(manifest)


# -- parser ---------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="cvguard", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic voltammogram CSV")
    p.add_argument("--condition", type=_condition, default=CellCondition.NORMAL)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=voltagram.DEFAULT_NOISE)
    p.add_argument("--out", required=True)
    _add_sweep_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the tree ensemble from class directories")
    p.add_argument("--normal", required=True, help="directory of normal CSVs")
    p.add_argument("--abnormal", required=True, help="directory of abnormal CSVs")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    d = eot.TrainConfig()
    p.add_argument("--trees", type=int, default=d.tree_count)
    p.add_argument("--max-depth", type=int, default=d.max_depth)
    p.add_argument("--min-leaf", type=int, default=d.min_leaf)
    p.add_argument("--features", type=int, default=d.feature_subsample)
    p.add_argument("--features-out", help="also write the training-set CSV here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("check", help="classify a CSV (exit 0 normal, 3 abnormal)")
    p.add_argument("csv", nargs="?")
    p.add_argument("--model", required=True)
    p.add_argument("--watch", metavar="DIR")
    p.add_argument("--log")
    p.add_argument("--poll", type=float, default=0.2)
    p.add_argument("--timeout", type=float)
    p.add_argument("--max-files", type=int)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("bound", help="evaluate a generalization confidence function")
    p.add_argument("kind", choices=["gpr", "eot"])
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--l", type=int)
    p.add_argument("--nk", type=int, default=1)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--nl", type=int, default=1)
    p.add_argument("--g", type=float, default=1.0)
    p.add_argument("--eps-hat", type=float)
    p.add_argument("--solve-l", action="store_true")
    p.add_argument("--delta", type=float)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("plot", help="render a CSV as an SVG I-V plot")
    p.add_argument("csv")
    p.add_argument("--out", required=True)
    p.add_argument("--with-fit", action="store_true")
    p.add_argument("--title")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("serve", help="run instrument servers (sharing one cell)")
    p.add_argument("--kind")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--instrument", action="append", type=_instrument_arg, metavar="KIND=PORT")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--capacity", type=_positive_float, default=50.0)
    p.add_argument("--low-threshold", type=float, default=5.0)
    p.add_argument("--duration", type=float, help="stop after this many seconds")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("orchestrate", help="run a workflow plan against instrument servers")
    p.add_argument("config")
    p.add_argument("--rounds", type=int)
    p.add_argument("--model")
    p.add_argument("--fault")
    p.set_defaults(func=cmd_orchestrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"cvguard {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except features.FeatureError as exc:
        print(f"cvguard {args.command}: feature extraction failed: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except KeyboardInterrupt:
        return EXIT_INTERNAL
    except Exception as exc:  # last-resort mapping onto the exit-code contract
        log.debug("unhandled error", exc_info=True)
        print(f"cvguard {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
