"""Command-line pipeline: taint, learn, localize and repair.

Every artifact is written next to a ``<artifact>.manifest.json`` recording the
command, seed, configuration and SHA-256 of the inputs.  Manifests hold no
timestamps, so identical invocations produce identical bytes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from dataclasses import replace
from importlib import metadata
from pathlib import Path

from tarl import errors as E
from tarl.config import load_config, resolve_seed
from tarl.executor import instrument, run_episode
from tarl.faultloc import LocalizationReport, localize
from tarl.lang import find_statement, parse_file, stmt_text
from tarl.mend import atr, epsilon_greedy_search, evaluate, generate_mutants, select_and_validate
from tarl.sarsa import converged, learn, load, save, table_max
from tarl.taintflow import taint_analyze
from tarl.world import ODOMETRY, VELOCITY

EXIT_OK = 0
EXIT_IO = 1
EXIT_INPUT = 2
EXIT_NO_FLOW = 3
EXIT_NOT_CONVERGED = 4
EXIT_DEGENERATE = 5
EXIT_NO_CONSTANTS = 6
EXIT_INSUFFICIENT = 7

_EXIT_FOR = [
    (E.NoFlowError, EXIT_NO_FLOW),
    (E.DegenerateError, EXIT_DEGENERATE),
    (E.NoConstantsError, EXIT_NO_CONSTANTS),
    (E.InsufficientDataError, EXIT_INSUFFICIENT),
    ((E.ParseError, E.ShapeError, E.FormatError, E.InstrumentError, E.AnalysisError,
      E.NameCollisionError, ValueError), EXIT_INPUT),
]


def _version() -> str:
    try:
        return metadata.version("tarl")
    except metadata.PackageNotFoundError:
        return "unknown"


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _dump_json(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def write_manifest(artifact, command: str, args: argparse.Namespace, inputs: dict,
                   outputs: list, seed: int | None = None) -> None:
    manifest = {
        "command": command,
        "config": getattr(args, "config", None),
        "seed": seed,
        "inputs": {name: {"path": str(p), "sha256": _sha256(p)} for name, p in inputs.items() if p},
        "outputs": [str(p) for p in outputs],
        "toolchain": {"tarl": _version(), "python": platform.python_version()},
    }
    _write(f"{artifact}.manifest.json", _dump_json(manifest))


# ---------------------------------------------------------------------------
# Subcommands


def cmd_taint(args) -> int:
    program = parse_file(args.program)
    report = taint_analyze(program, args.source, args.sink)
    print(report.format_list())
    if args.json:
        _write(args.json, report.to_json())
        write_manifest(args.json, "taint", args, {"program": args.program}, [args.json])
    return EXIT_OK


def cmd_learn(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(args.seed, cfg.rl.seed)
    params = replace(cfg.rl, seed=seed,
                     episodes=cfg.rl.episodes if args.episodes is None else args.episodes)
    world = cfg.world.offline() if args.env == "offline" else cfg.world
    program = parse_file(args.program)
    iprog = instrument(program, taint_analyze(program, args.source, args.sink))
    table, stats = learn(iprog, world, params)
    q_max = table_max(table)
    summary = stats.to_dict()
    summary.update({"env": args.env, "q_max": q_max, "seed": seed})
    is_converged = None
    if len(stats.block_deltas) >= 2:
        is_converged = converged(stats.block_deltas, params.tol, q_max)
    summary["converged"] = is_converged

    save(table, args.out)
    stats_path = args.stats or f"{args.out}.stats.json"
    _write(stats_path, _dump_json(summary))
    outputs = [args.out, stats_path]
    if args.dump_trace:
        _write(args.dump_trace, run_episode(iprog, world, seed=seed).to_jsonl())
        outputs.append(args.dump_trace)
    write_manifest(args.out, "learn", args, {"program": args.program, "config": args.config},
                   outputs, seed)
    print(f"success_rate={stats.success_rate:.3f} converged={is_converged} q_max={q_max:.3f}")
    if args.require_converged and not is_converged:
        print("error: utility did not converge", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_localize(args) -> int:
    q_off = load(args.offline)
    q_on = load(args.online)
    texts = None
    if args.program:
        program = parse_file(args.program)
        texts = {}
        for line in q_off.lines:
            stmt = find_statement(program, line)
            if stmt is not None:
                texts[line] = stmt_text(stmt)
    report = localize(q_off, q_on, args.window, texts)
    _write(args.out, report.to_json())
    write_manifest(args.out, "localize", args,
                   {"offline": args.offline, "online": args.online, "program": args.program}, [args.out])
    r = report.region
    print(f"region terrain={r.terrain} bins=[{r.p_lo},{r.p_hi}] "
          f"culprit line {report.culprit_line}: {report.culprit_text} (margin {report.margin:.4g})")
    return EXIT_OK


def cmd_repair(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(args.seed, cfg.repair.seed)
    overrides = {"seed": seed}
    if args.search_episodes is not None:
        overrides["search_episodes"] = args.search_episodes
    if args.eval_episodes is not None:
        overrides["eval_episodes"] = args.eval_episodes
    params = replace(cfg.repair, **overrides)
    program = parse_file(args.program)
    with open(args.report, encoding="utf-8") as fh:
        report = LocalizationReport.from_json(fh.read())

    arms = generate_mutants(program, report.culprit_line, report.region, params, cfg.world)
    log = epsilon_greedy_search(arms, cfg.world, params)
    _write(args.out_log, log.to_csv())
    patch = select_and_validate(log, arms, cfg.world, params)
    _write(args.out_patch, patch.source)

    def baseline(world):
        series = atr(evaluate(program, world, params.eval_episodes, [params.seed, 2]))
        return series[-1] if series else 0.0

    summary = patch.summary(log)
    summary["offline_atr"] = baseline(cfg.world.offline())
    summary["unrepaired_atr"] = baseline(cfg.world)
    summary["eval_atr_series"] = patch.atr_series
    summary["seed"] = seed
    summary_path = args.summary or f"{args.out_patch}.summary.json"
    _write(summary_path, _dump_json(summary))
    write_manifest(args.out_patch, "repair", args,
                   {"program": args.program, "report": args.report, "config": args.config},
                   [args.out_patch, args.out_log, summary_path], seed)
    print(f"selected {patch.arm.label} search ATR {log.final_atr:.2f} eval ATR {patch.atr_eval:.2f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tarl", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("taint", help="print the taint list of a program")
    p.add_argument("program")
    p.add_argument("--source", default=ODOMETRY)
    p.add_argument("--sink", default=VELOCITY)
    p.add_argument("--json", help="write the TaintReport as JSON")
    p.set_defaults(func=cmd_taint)

    p = sub.add_parser("learn", help="learn a utility table")
    p.add_argument("program")
    p.add_argument("--config")
    p.add_argument("--env", choices=["offline", "online"], default="offline")
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="utility table CSV")
    p.add_argument("--stats", help="stats JSON (default: <out>.stats.json)")
    p.add_argument("--source", default=ODOMETRY)
    p.add_argument("--sink", default=VELOCITY)
    p.add_argument("--require-converged", action="store_true")
    p.add_argument("--dump-trace", help="write one episode's hook events as JSON lines")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("localize", help="compare off-line and on-line tables")
    p.add_argument("--offline", required=True)
    p.add_argument("--online", required=True)
    p.add_argument("--window", type=int)
    p.add_argument("--program", help="source file, used to report the culprit's text")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("repair", help="search guarded constant mutations of the culprit")
    p.add_argument("program")
    p.add_argument("--report", required=True, help="localization JSON")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--search-episodes", type=int)
    p.add_argument("--eval-episodes", type=int)
    p.add_argument("--out-patch", required=True)
    p.add_argument("--out-log", required=True)
    p.add_argument("--summary", help="summary JSON (default: <out-patch>.summary.json)")
    p.set_defaults(func=cmd_repair)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:
        for kinds, code in _EXIT_FOR:
            if isinstance(exc, kinds):
                print(f"error: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
