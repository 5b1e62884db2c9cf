"""Command-line interface: ``osrlie {synth,filter,lie,cluster,run,eval}``.

Exit codes: 0 success, 2 usage/config/input error, 3 runtime or degenerate fit.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from . import lie, synth
from .cloud import PointCloud
from .errors import (ConfigError, FormatError, InputMismatch, OsrLieError, ParseError,
                     SchemaError)
from .io import read_cloud, read_csv, write_csv
from .pipeline import (ClusterSettings, LieSettings, PipelineConfig, StageFailure, dump_report,
                       evaluate, load_input, new_report, run_stages)

log = logging.getLogger("osrlie")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

# errors caused by what the user handed us rather than by the data's geometry
_INPUT_ERRORS = (ConfigError, SchemaError, ParseError, FormatError, InputMismatch,
                 FileNotFoundError, IsADirectoryError, PermissionError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _bandwidth(text: str) -> lie.Bandwidth:
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad bandwidth {text!r}") from None
    if len(vals) == 2:
        vals = [vals[0], vals[0], vals[1]]
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("bandwidth takes hx,hy,hz or h,hz")
    try:
        return lie.Bandwidth(*vals)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config (pipeline) or scene spec (synth)")
    common.add_argument("--input", help="input .csv or .las")
    common.add_argument("--output", help="output CSV")
    common.add_argument("--report", help="JSON report path")
    common.add_argument("--seed", type=int, help="RNG seed (clustering; scene for synth)")
    common.add_argument("--k", type=int, choices=(2, 3), help="number of mixture components")
    common.add_argument("--bandwidth", type=_bandwidth, help="hx,hy,hz in cloud units")
    common.add_argument("--mode", choices=("exact", "grid"), help="kernel summation mode")
    common.add_argument("--use-intensity", action="store_true", default=None,
                        help="cluster on (v, intensity) instead of v alone")
    common.add_argument("--verbose", "-v", action="store_true")

    p = _Parser(prog="osrlie", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    s = sub.add_parser("synth", parents=[common], help="generate a labelled scene")
    s.add_argument("--scene", help="named scene: " + ", ".join(sorted(synth.default_scenes())))
    sub.add_parser("filter", parents=[common], help="OSR ground filtering; adds 'ground'")
    sub.add_parser("lie", parents=[common], help="kernel Hessian feature; adds 'v'")
    sub.add_parser("cluster", parents=[common], help="mixture clustering; adds 'class'")
    sub.add_parser("run", parents=[common], help="filter, lie and cluster in one go")
    e = sub.add_parser("eval", parents=[common], help="confusion matrix against truth")
    e.add_argument("--truth", help="CSV with a truth column (defaults to --input's own)")
    return p


def _load_config(args) -> PipelineConfig:
    raw = {}
    if args.config:
        with open(args.config) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: malformed JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    if args.input:
        raw = {k: v for k, v in raw.items() if k != "scene"}
        raw["input"] = args.input
    elif "input" not in raw and "scene" not in raw:
        raise ConfigError("no input: pass --input or give 'input'/'scene' in --config")
    cfg = PipelineConfig.from_dict(raw)
    lie_cfg, cl_cfg = cfg.lie, cfg.cluster
    if args.bandwidth is not None:
        lie_cfg = replace(lie_cfg, bandwidth=args.bandwidth)
    if args.mode is not None:
        lie_cfg = replace(lie_cfg, mode=args.mode)
    if args.k is not None:
        cl_cfg = replace(cl_cfg, k=args.k)
    if args.seed is not None:
        cl_cfg = replace(cl_cfg, seed=args.seed)
    if args.use_intensity:
        cl_cfg = replace(cl_cfg, use_intensity=True)
    return replace(cfg, lie=LieSettings(lie_cfg.bandwidth, lie_cfg.mode, lie_cfg.truncation),
                   cluster=ClusterSettings(**vars(cl_cfg)),
                   output=args.output or cfg.output, report=args.report or cfg.report)


def _write_outputs(cloud: PointCloud, report: dict, cfg: PipelineConfig) -> None:
    if cfg.output:
        write_csv(cloud, cfg.output)
    if cfg.report:
        dump_report(report, cfg.report)


_STAGES = {
    "filter": ("filter",),
    "lie": ("lie",),
    "cluster": ("cluster",),
    "run": ("filter", "lie", "cluster"),
}


def cmd_stages(args) -> int:
    cfg = _load_config(args)
    cloud = load_input(cfg)
    report = new_report(cloud.n, cfg.parameters())
    try:
        cloud, report = run_stages(cloud, cfg, _STAGES[args.verb], report)
    except StageFailure as fail:
        if cfg.report:
            dump_report(fail.report, cfg.report)
        print(f"osrlie {args.verb}: stage {fail.stage} failed: {fail.error}", file=sys.stderr)
        return EXIT_RUNTIME
    _write_outputs(cloud, report, cfg)
    if not cfg.output and not cfg.report:
        json.dump(report, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    if bool(args.scene) == bool(args.config):
        raise ConfigError("synth needs exactly one of --scene and --config")
    if not args.output:
        raise ConfigError("synth needs --output")
    if args.scene:
        scenes = synth.default_scenes()
        if args.scene not in scenes:
            raise ConfigError(f"unknown scene {args.scene!r}; choose from {sorted(scenes)}")
        spec = scenes[args.scene]
    else:
        with open(args.config) as fh:
            try:
                spec = synth.SceneSpec.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: malformed JSON ({exc})") from exc
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    cloud = synth.generate(spec)
    write_csv(cloud, args.output)
    log.info("wrote %d points to %s", cloud.n, args.output)
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.input:
        raise ConfigError("eval needs --input")
    pred = read_cloud(args.input)
    if pred.predicted is None:
        raise SchemaError(f"{args.input} has no 'class' column")
    truth_cloud = read_csv(args.truth) if args.truth else pred
    if truth_cloud.truth is None:
        raise SchemaError("no 'truth' column to evaluate against")
    if truth_cloud.n != pred.n:
        raise InputMismatch(f"{pred.n} predicted points vs {truth_cloud.n} truth points")
    metrics = evaluate(pred.predicted, truth_cloud.truth)
    if args.report:
        dump_report(metrics, args.report)
    json.dump(metrics, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK


_COMMANDS = {"synth": cmd_synth, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"osrlie: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS.get(args.verb, cmd_stages)(args)
    except _INPUT_ERRORS as exc:
        print(f"osrlie {args.verb}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OsrLieError, ValueError) as exc:
        print(f"osrlie {args.verb}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
