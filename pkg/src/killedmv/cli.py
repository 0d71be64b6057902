"""Command line interface over the experiment runner and acceptance suite."""

import argparse
import json
import sys
from pathlib import Path

import tomli

from .acceptance import acceptance_suite, format_report
from .config import EXPERIMENT_KINDS
from .errors import ConfigError, KmvError
from .harness import EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_ERROR, \
    run_experiment

_OP_HELP = {
    "simulate": "integrate the killed dynamics under the frozen initial law",
    "picard": "iterate the solution map to its fixed point",
    "couple": "drive a synchronized pair and emit the node-wise bound terms",
    "dist": "distance between the two configured measures",
    "girsanov-check": "reweighting diagnostics against a second flow",
    "validate": "falsification checks of the declared coefficient bounds",
    "fp-residual": "weak-form residual of a simulated flow",
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="killedmv",
        description="Killed mean-field particle experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENT_KINDS:
        p = sub.add_parser(name, help=_OP_HELP[name])
        p.add_argument("--config", required=True,
                       help="TOML experiment description")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured seed")
        p.add_argument("--threads", type=int, default=None,
                       help="recorded in the manifest; never affects results")
        p.add_argument("--out", default=None, help="output directory")
    pa = sub.add_parser("accept", help="run the acceptance experiments")
    pa.add_argument("--tier", choices=("fast", "full"), default="fast")
    pa.add_argument("--config", default=None,
                    help="optional [accept] table: criteria, tolerance_scale")
    pa.add_argument("--threads", type=int, default=None,
                    help="recorded only; never affects results")
    pa.add_argument("--out", default=None,
                    help="directory for report.txt and results.json")
    return parser


def _run_accept(args):
    tolerance_scale = 1.0
    only = None
    if args.config is not None:
        try:
            with open(args.config, "rb") as fh:
                raw = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError("config parse error in %s: %s"
                              % (args.config, exc))
        except OSError as exc:
            raise ConfigError("cannot read config %s: %s"
                              % (args.config, exc))
        acc = raw.get("accept", {})
        tolerance_scale = float(acc.get("tolerance_scale", 1.0))
        criteria = acc.get("criteria")
        if criteria is not None:
            only = [str(cid) for cid in criteria]
    results, ok = acceptance_suite(args.tier, tolerance_scale, only)
    report = format_report(results)
    print(report)
    if args.out is not None:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "report.txt").write_text(report + "\n")
        payload = [{
            "id": r.cid, "description": r.description, "passed": r.passed,
            "observed": r.observed, "runtime_s": r.runtime,
            "detail": r.detail,
        } for r in results]
        (outdir / "results.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0 if ok else EXIT_CHECK_FAILED


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "accept":
            return _run_accept(args)
        code, outdir = run_experiment(
            args.config, seed=args.seed, out=args.out, threads=args.threads,
            expect_kind=args.command)
        print("wrote %s (exit %d)" % (outdir, code))
        return code
    except ConfigError as exc:
        print("config error: %s" % (exc,), file=sys.stderr)
        return EXIT_CONFIG
    except KmvError as exc:
        print("error: %s" % (exc,), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
