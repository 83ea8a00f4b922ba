"""One-command evaluation entry point.

Subcommands:

* ``run``          execute (or resume) an evaluation run
* ``report``       aggregate completed runs into a leaderboard
* ``conformance``  drive an adapter command through the protocol suite

Exit codes: 0 success (per-sample errors allowed and recorded), 2 validation
or configuration failure, 3 output-directory I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
from pathlib import Path

from .aggregate import build_leaderboard, render_json, render_text
from .config import RunSpec, load_config
from .errors import AudioEvalError, ConfigError
from .runner import execute_run, load_summary

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_IO = 3


def _add_run_parser(sub):
    p = sub.add_parser("run", help="execute an evaluation run")
    p.add_argument("--config", required=True, help="path to the YAML config")
    p.add_argument("--dataset", help="dataset entry name")
    p.add_argument("--model", help="model entry name")
    p.add_argument("--prompt", help="prompt entry name (overrides at runtime)")
    p.add_argument("--evaluator", help="evaluator entry name (default: dataset's)")
    p.add_argument("--limit", type=int, help="evaluate at most N samples")
    p.add_argument("--workers", type=int, default=1, help="worker pool size")
    p.add_argument("--output", default="runs", help="output directory")
    p.add_argument("--resume", metavar="RUN_ID", help="resume a prior run")
    return p


def _cmd_run(args) -> int:
    try:
        registry = load_config(args.config)
        if args.resume:
            run_json = Path(args.output) / args.resume / "run.json"
            if not run_json.exists():
                print(f"error: no run {args.resume!r} under {args.output}",
                      file=sys.stderr)
                return EXIT_VALIDATION
            payload = json.loads(run_json.read_text(encoding="utf-8"))["spec"]
            payload["output_dir"] = args.output
            spec = RunSpec.from_payload(payload)
        else:
            missing = [n for n in ("dataset", "model", "prompt")
                       if getattr(args, n) is None]
            if missing:
                print(f"error: missing required flags: "
                      f"{', '.join('--' + m for m in missing)}", file=sys.stderr)
                return EXIT_VALIDATION
            model_spec = registry.resolve("model", args.model)
            spec = RunSpec(
                dataset=args.dataset,
                model=args.model,
                prompt=args.prompt,
                evaluator=args.evaluator,
                inference_params=dict(model_spec.params),
                limit=args.limit,
                output_dir=args.output,
            )
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    try:
        result = execute_run(registry, spec, workers=args.workers,
                             resume_run_id=args.resume)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except AudioEvalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    summary = result.summary
    print(f"run {result.run_id}: {summary['samples']} samples, "
          f"{summary['errors']} errors")
    for kind, value in summary["metrics"].items():
        print(f"  {kind}: {value:.4f}")
    if summary.get("composite") is not None:
        print(f"  composite: {summary['composite']:.4f}")
    print(f"results: {result.run_dir}")
    return EXIT_OK if summary["samples"] >= 0 else EXIT_FAILURE


def _cmd_report(args) -> int:
    try:
        summaries = [load_summary(args.output, run_id) for run_id in args.run_ids]
    except AudioEvalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    board = build_leaderboard(summaries)
    text = render_text(board)
    out_dir = Path(args.output)
    try:
        (out_dir / "leaderboard.txt").write_text(text, encoding="utf-8")
        (out_dir / "leaderboard.json").write_text(
            json.dumps(render_json(board), indent=2, ensure_ascii=False),
            encoding="utf-8")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.format == "json":
        print(json.dumps(render_json(board), indent=2, ensure_ascii=False))
    else:
        print(text, end="")
    return EXIT_OK


def _cmd_conformance(args) -> int:
    from .conformance import passed, run_conformance

    base = shlex.split(args.adapter)

    def make_argv(mode: str, script: str | None) -> list[str]:
        argv = [*base, "--mode", mode]
        if script:
            argv += ["--script", script]
        return argv

    results = run_conformance(make_argv)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    ok = passed(results)
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return EXIT_OK if ok else EXIT_FAILURE


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="audioeval",
        description="config-driven evaluation harness for audio models",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_run_parser(sub)

    p_report = sub.add_parser("report", help="render a leaderboard from runs")
    p_report.add_argument("run_ids", nargs="+", help="completed run ids")
    p_report.add_argument("--output", default="runs", help="runs directory")
    p_report.add_argument("--format", choices=("text", "json"), default="text")

    p_conf = sub.add_parser("conformance", help="check an adapter against the protocol")
    p_conf.add_argument("--adapter", required=True,
                        help="adapter command; gets --mode/--script appended")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)

    if args.command == "run":
        return _cmd_run(args)
    if args.command == "report":
        return _cmd_report(args)
    return _cmd_conformance(args)


if __name__ == "__main__":
    sys.exit(main())
