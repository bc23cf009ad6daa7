"""Command line entry points: tune, extract, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import KnobTunerError
from .backends import RemoteBackend
from .knowledge import extract_knob_knowledge
from .mcts import MctsParams
from .pruning import PruningParams
from .session import (
    ABLATION_TOKENS,
    AblationToggles,
    SessionConfig,
    SessionReport,
    run_repeated,
    run_session,
    write_json_atomic,
)

log = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="knobtuner",
        description="Search-based blockchain configuration tuning.",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    tune = sub.add_parser("tune", help="run one tuning search")
    tune.add_argument("--space", required=True, help="knob knowledge JSON file")
    tune.add_argument(
        "--knowledge",
        required=True,
        help="directory holding system.json and an optional manual_knobs.json",
    )
    tune.add_argument(
        "--backend", required=True, choices=["oracle", "random", "remote"]
    )
    tune.add_argument(
        "--evaluator", required=True, choices=["synthetic", "external"]
    )
    tune.add_argument("--no-prune", action="store_true", help="disable pruning rules")
    tune.add_argument(
        "--ablate",
        default="",
        help="comma-separated toggles: " + ", ".join(sorted(ABLATION_TOKENS)),
    )
    tune.add_argument("--seed", type=int, default=0)
    tune.add_argument("--rollouts", type=int, default=30)
    tune.add_argument("--target-tps", type=float, default=None)
    tune.add_argument("--out", default="tuning-out", help="output directory")
    tune.add_argument("--resume", default=None, help="checkpoint file to continue")
    tune.add_argument(
        "--eval-cmd",
        default="",
        help="external benchmark command with {config_path} and {workload_path}",
    )
    tune.add_argument("--eval-timeout", type=float, default=1800.0)
    tune.add_argument("--repeat", type=int, default=1, help="independent repeats")
    tune.add_argument("--checkpoint-every", type=int, default=1)
    tune.add_argument(
        "--difficulty", type=float, default=0.5, help="synthetic model difficulty"
    )

    extract = sub.add_parser("extract", help="extract knob knowledge from manuals")
    extract.add_argument("--manual", required=True, help="directory of text files")
    extract.add_argument("--backend", required=True, choices=["remote"])
    extract.add_argument("--out", required=True, help="target knowledge JSON file")

    report = sub.add_parser("report", help="print a stored session report")
    report.add_argument("--session", required=True, help="session output directory")
    return parser


def _cmd_tune(args: argparse.Namespace) -> int:
    ablations = AblationToggles.from_tokens(args.ablate.split(","))
    pruning = (
        PruningParams.disabled()
        if args.no_prune or ablations.pruning
        else PruningParams()
    )
    knowledge_dir = Path(args.knowledge)
    system_path = knowledge_dir / "system.json"
    if not system_path.is_file():
        raise KnobTunerError(f"no system.json under {knowledge_dir}")
    manual_path = knowledge_dir / "manual_knobs.json"
    config = SessionConfig(
        knob_path=args.space,
        system_path=str(system_path),
        manual_knob_path=str(manual_path) if manual_path.is_file() else None,
        backend_name=args.backend,
        evaluator_name=args.evaluator,
        eval_cmd=args.eval_cmd,
        eval_timeout=args.eval_timeout,
        mcts=MctsParams(
            seed=args.seed,
            max_rollouts=args.rollouts,
            target_throughput=args.target_tps,
        ),
        pruning=pruning,
        ablations=ablations,
        out_dir=args.out,
        checkpoint_every=args.checkpoint_every,
        difficulty=args.difficulty,
    )
    if args.repeat > 1:
        if args.resume:
            raise KnobTunerError("--resume cannot be combined with --repeat")
        reports = run_repeated(config, args.repeat)
        for i, rep in enumerate(reports):
            print(f"--- run {i:02d} ---")
            print(rep.to_text_table())
        return 0
    report = run_session(config, resume_path=args.resume)
    print(report.to_text_table())
    return 0


def _cmd_extract(args: argparse.Namespace) -> int:
    manual_dir = Path(args.manual)
    files = sorted(
        p for p in manual_dir.rglob("*") if p.suffix in (".txt", ".md") and p.is_file()
    )
    if not files:
        raise KnobTunerError(f"no .txt or .md manual files under {manual_dir}")
    texts = [p.read_text() for p in files]
    backend = RemoteBackend()
    knowledge = extract_knob_knowledge(texts, backend)
    write_json_atomic(Path(args.out), knowledge.to_doc())
    print(
        f"extracted {len(knowledge.records)} knobs in "
        f"{len(knowledge.clusters)} clusters -> {args.out}"
    )
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    session_path = Path(args.session)
    report_path = session_path if session_path.is_file() else session_path / "report.json"
    if not report_path.is_file():
        raise KnobTunerError(f"no report.json under {session_path}")
    report = SessionReport.from_dict(json.loads(report_path.read_text()))
    print(report.to_text_table())
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {"tune": _cmd_tune, "extract": _cmd_extract, "report": _cmd_report}
    try:
        return handlers[args.command](args)
    except KnobTunerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
