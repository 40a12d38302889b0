"""``essm`` command line: run one harness experiment and emit CSV or JSON records.

Exit codes: 0 when every check passes, 2 when a check fails, 1 on usage errors.
"""

import argparse
import csv
import io
import json
import os
import sys
from contextlib import nullcontext

from threadpoolctl import threadpool_limits

from .harness import COMMANDS, EXTRA_STRATEGIES, STRATEGIES, RunConfig, UsageError, run

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILED = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--L", dest="lengths", type=int, action="append", default=[], help="sequence length (repeatable for bench)")
    common.add_argument("--N", dest="n", type=int, help="state size")
    common.add_argument("--H", dest="h", type=int, help="input width")
    common.add_argument("--M", dest="m", type=int, help="output width (defaults to H)")
    common.add_argument("--heads", type=int, default=1, help="number of heads s")
    common.add_argument("--bidirectional", action="store_true")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", dest="output_path", help="write records here instead of stdout")
    common.add_argument("--format", dest="fmt", choices=("csv", "json"), default="csv")
    common.add_argument("--steps", type=int, help="training steps (train-demo) or instance count (oracle-sweep, gradcheck)")
    common.add_argument("--lr", dest="learning_rate", type=float, help="learning rate for train-demo")
    common.add_argument("--reps", type=int, default=5, help="timed repetitions per bench case (at least 5)")
    common.add_argument(
        "--strategy",
        dest="strategies",
        action="append",
        default=[],
        choices=STRATEGIES + EXTRA_STRATEGIES,
        help="bench strategy (repeatable; default: the three standard strategies)",
    )
    parser = _Parser(prog="essm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for command in COMMANDS:
        sub.add_parser(command, parents=[common])
    return parser


def _config(args):
    values = vars(args).copy()
    values["lengths"] = tuple(values["lengths"])
    values["strategies"] = tuple(values["strategies"])
    return RunConfig(**values)


def render(report, fmt):
    if fmt == "json":
        meta = dict(report.meta, passed=report.passed, checks={k: {"passed": ok, "detail": d} for k, (ok, d) in report.checks.items()})
        return json.dumps({"meta": meta, "records": report.records}, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=report.columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(report.records)
    return buf.getvalue()


def _thread_limit():
    value = os.environ.get("ESSM_THREADS")
    if not value:
        return nullcontext()
    try:
        limit = int(value)
    except ValueError as exc:
        raise UsageError(f"ESSM_THREADS must be an integer, got {value!r}") from exc
    if limit < 1:
        raise UsageError("ESSM_THREADS must be at least 1")
    return threadpool_limits(limits=limit)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        with _thread_limit():
            report = run(cfg)
    except ValueError as exc:
        # validation errors of the library are ValueError subclasses
        print(f"essm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    text = render(report, cfg.fmt)
    if cfg.output_path:
        with open(cfg.output_path, "w", newline="") as fh:
            fh.write(text)
        print(report.summary)
    else:
        sys.stdout.write(text)
        print(report.summary, file=sys.stderr)
    if not report.passed:
        print(f"essm: failed checks: {', '.join(report.failures)}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
