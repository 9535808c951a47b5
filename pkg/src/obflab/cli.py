"""Command line front end.

Five subcommands cover the workflow: `build-zoo` writes the seeded models,
`obfuscate` protects one serialized model, `attack` reconstructs one,
`verify` measures output deviation between two models, and `report` merges
per-run report files into a single table.

Exit codes are stable API: 0 success, 1 unexpected failure, 2 missing or
unusable path, 3 invalid configuration or flags, 4 malformed container,
5 validation failure (invalid graph, or deviation above a requested
tolerance). Failures also emit a one-line JSON object on stderr so callers
never have to parse prose.

The default output directory may be supplied via the OBFLAB_OUT
environment variable instead of --out.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import container
from .container import ContainerError
from .coupling import couple
from .explorer import AttackContext, run_attack
from .ir import validate
from .metrics import MetricsReport, compute_metrics, compute_theta, format_report_table
from .pipeline import MODES, REPORT_VERSION, attack_stats_dict, load_cell_report
from .static_obf import GroundTruthMap, StaticObfConfig, apply_static, ground_truth_from
from .zoo import build_zoo

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_BAD_PATH = 2
EXIT_BAD_CONFIG = 3
EXIT_CONTAINER = 4
EXIT_VALIDATION = 5

OUT_ENV_VAR = "OBFLAB_OUT"


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str) -> None:
        super().__init__(message)
        self.code = code
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    # argparse would sys.exit(2); route through the shared error protocol
    def error(self, message: str) -> None:
        raise CliError(EXIT_BAD_CONFIG, "config", message)


def _resolve_out(args) -> Path:
    out = args.out or os.environ.get(OUT_ENV_VAR)
    if not out:
        raise CliError(
            EXIT_BAD_CONFIG, "config",
            f"no output directory: pass --out or set {OUT_ENV_VAR}",
        )
    return Path(out)


def _existing_dir(raw: str) -> Path:
    path = Path(raw)
    if not path.exists():
        raise CliError(EXIT_BAD_PATH, "path", f"no such path: {raw}")
    return path


def _load_model(raw: str):
    graph, store = container.deserialize(_existing_dir(raw))
    report = validate(graph, store)
    if not report.ok:
        first = report.issues[0].message if report.issues else "unknown"
        raise CliError(EXIT_VALIDATION, "validation", f"invalid model {raw}: {first}")
    return graph, store


def cmd_build_zoo(args) -> int:
    out = _resolve_out(args)
    paths = build_zoo(out, seed=args.seed)
    print(json.dumps({m: str(p) for m, p in paths.items()}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_obfuscate(args) -> int:
    graph, store = _load_model(args.model)
    out = _resolve_out(args)
    out.mkdir(parents=True, exist_ok=True)

    if args.mode == "none":
        truth = ground_truth_from(graph, store)
        plan = None
    else:
        config = StaticObfConfig(seed=args.seed, extra_op_count=args.extra_ops)
        graph, store, truth = apply_static(graph, store, config)
        plan = None
        if args.mode == "static+couple":
            rounds = args.pairs if args.pairs is not None else len(graph.nodes)
            graph, store, plan = couple(graph, store, rounds=rounds, seed=args.seed)

    shipped = container.serialize(graph, store, out / "model", encapsulated=args.mode != "none")
    truth.save(out / "oracle")
    if plan is not None:
        plan.save(out / "plan.json")
    print(json.dumps({
        "model": str(shipped),
        "mode": args.mode,
        "nodes": len(graph.nodes),
        "applied_pairs": sum(plan.applied) if plan else 0,
    }, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_attack(args) -> int:
    _load_model(args.model)  # path and validity gate with proper exit codes
    out = _resolve_out(args)
    out.mkdir(parents=True, exist_ok=True)
    ctx = AttackContext.from_container(Path(args.model), probe_seed=args.seed)
    recovered, stats = run_attack(ctx)
    recovered.save(out / "recovered")

    payload = {"attack": attack_stats_dict(stats)}
    if args.oracle:
        truth = GroundTruthMap.load(_existing_dir(args.oracle))
        report = compute_metrics(recovered, truth)
        payload.update({
            "version": REPORT_VERSION,
            "model": Path(args.model).name,
            "mode": "unknown",
            "metrics": report.to_dict(),
        })
        (out / "report.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n"
        )
        (out / "report.txt").write_text(
            format_report_table({Path(args.model).name: report})
        )
    print(json.dumps(payload["attack"], indent=2, sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    original = _load_model(args.original)
    candidate = _load_model(args.candidate)
    if original[0].input_specs != candidate[0].input_specs:
        raise CliError(EXIT_VALIDATION, "validation", "models take different inputs")
    theta = compute_theta(original, candidate, probes=args.probes, seed=args.seed)
    print(json.dumps(theta.to_dict(), indent=2, sort_keys=True))
    if args.tolerance is not None and theta.value > args.tolerance:
        raise CliError(
            EXIT_VALIDATION, "validation",
            f"deviation {theta.value:.3g} exceeds tolerance {args.tolerance:.3g}",
        )
    return EXIT_OK


def cmd_report(args) -> int:
    reports: dict[str, MetricsReport] = {}
    for raw in args.runs:
        payload = load_cell_report(_existing_dir(raw))
        label = f"{payload['model']} [{payload['mode']}]"
        n = 2
        while label in reports:
            label = f"{payload['model']} [{payload['mode']}] #{n}"
            n += 1
        reports[label] = MetricsReport.from_dict(payload["metrics"])
    table = format_report_table(reports)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "merged.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="obflab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0, help="master random seed")
        return p

    p = add("build-zoo", cmd_build_zoo, "write the three seeded zoo models")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV_VAR})")

    p = add("obfuscate", cmd_obfuscate, "protect one serialized model")
    p.add_argument("model", help="container directory of the model to protect")
    p.add_argument("--mode", choices=MODES, default="static")
    p.add_argument("--extra-ops", type=int, default=30, dest="extra_ops")
    p.add_argument("--pairs", type=int, default=None,
                   help="coupling rounds (default: node count)")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV_VAR})")

    p = add("attack", cmd_attack, "reconstruct a shipped model")
    p.add_argument("model", help="container directory to attack")
    p.add_argument("--oracle", help="ground-truth directory; enables scoring")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV_VAR})")

    p = add("verify", cmd_verify, "measure output deviation between two models")
    p.add_argument("original", help="reference container directory")
    p.add_argument("candidate", help="container directory to compare")
    p.add_argument("--probes", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=None,
                   help="exit 5 when deviation exceeds this")

    p = add("report", cmd_report, "merge run reports into one table")
    p.add_argument("runs", nargs="+", help="report.json files or cell directories")
    p.add_argument("--out", help="also write merged.txt here")

    return parser


def _emit_error(code: int, kind: str, message: str) -> None:
    print(json.dumps({"error": {"code": code, "kind": kind, "message": message}}),
          file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        _emit_error(exc.code, exc.kind, str(exc))
        return exc.code
    except ContainerError as exc:
        _emit_error(EXIT_CONTAINER, "container", str(exc))
        return EXIT_CONTAINER
    except (FileNotFoundError, NotADirectoryError, IsADirectoryError) as exc:
        _emit_error(EXIT_BAD_PATH, "path", str(exc))
        return EXIT_BAD_PATH
    except ValueError as exc:
        _emit_error(EXIT_BAD_CONFIG, "config", str(exc))
        return EXIT_BAD_CONFIG
    except Exception as exc:  # anything else is a bug, not user error
        _emit_error(EXIT_UNEXPECTED, type(exc).__name__, str(exc))
        return EXIT_UNEXPECTED


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
