"""Command-line front end: ``urnlab analyze | simulate | verify``.

Exit codes: 0 success, 1 invalid or inapplicable input, 2 a statistical
check failed, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .errors import InapplicableSuite, UrnLabError, ValidationError
from .matrix_core import analysis_report, model_from_dict
from .urn_process import parse_schedule, run_ensemble, write_trajectory_csv
from .verify import BUDGETS, SCHEMA, SUITES, run_verification

EXIT_OK, EXIT_INPUT, EXIT_STAT, EXIT_IO = 0, 1, 2, 3


class _IOFailure(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"


def _error(exc: Exception, code: str | None = None) -> str:
    if isinstance(exc, UrnLabError):
        body = exc.to_dict()
    else:
        body = {"error": code or "error", "message": str(exc)}
    return _dump({"schema": SCHEMA, **body})


def _load_model(path):
    try:
        with open(path) as fh:
            raw = fh.read()
    except OSError as exc:
        raise _IOFailure(f"cannot read model file {path}: {exc}") from None
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"model file is not valid JSON: {exc}") from None
    return model_from_dict(data)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise _IOFailure(f"cannot write {out}: {exc}") from None


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def cmd_analyze(args) -> int:
    spec = _load_model(args.model)
    _emit(_dump(analysis_report(spec)), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = _load_model(args.model)
    checkpoints = parse_schedule(args.checkpoints, args.steps)
    records = run_ensemble(spec, args.steps, args.replicas, args.seed, checkpoints,
                           workers=args.workers, paranoid=args.paranoid)
    try:
        with open(args.out, "w", newline="") as fh:
            write_trajectory_csv(records, fh)
    except OSError as exc:
        raise _IOFailure(f"cannot write {args.out}: {exc}") from None
    final = np.mean([r.proportions[-1] for r in records], axis=0)
    shown = ", ".join(f"{x:.6f}" for x in final)
    print(f"n={args.steps} replicas={args.replicas} seed={args.seed} "
          f"mean U/(n+1) = [{shown}] -> {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    spec = _load_model(args.model)
    try:
        report = run_verification(spec, args.suite, args.seed, args.budget)
    except InapplicableSuite as exc:
        sys.stdout.write(_error(exc))
        return EXIT_INPUT
    _emit(_dump(report), args.out)
    for c in report["checks"]:
        flag = {True: "PASS", False: "FAIL", None: "info"}[c["pass"]]
        print(f"[{flag}] {c['suite']}/{c['name']}: {c['statistic']}", file=sys.stderr)
    return EXIT_OK if report["pass"] else EXIT_STAT


class _Parser(argparse.ArgumentParser):
    # usage errors are invalid input (1); argparse's default 2 means "check failed" here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="urnlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="exact limits, irreducibility and spectral regime")
    a.add_argument("model")
    a.add_argument("--out", default=None, help="write the report here instead of stdout")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="simulate replicas and write a trajectory CSV")
    s.add_argument("model")
    s.add_argument("--steps", type=_positive, required=True)
    s.add_argument("--replicas", type=_positive, default=1)
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--checkpoints", default="geometric:2",
                   help="linear:<step> or geometric:<ratio> (default geometric:2)")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=_positive, default=1)
    s.add_argument("--paranoid", action="store_true", help="check invariants after every step")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="Monte Carlo verification of the limit theorems")
    v.add_argument("model")
    v.add_argument("--suite", choices=SUITES + ("all",), default="invariants")
    v.add_argument("--seed", type=_seed, default=0)
    v.add_argument("--budget", choices=tuple(BUDGETS), default="quick")
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _IOFailure as exc:
        sys.stdout.write(_error(exc, "io_error"))
        return EXIT_IO
    except UrnLabError as exc:
        sys.stdout.write(_error(exc))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
