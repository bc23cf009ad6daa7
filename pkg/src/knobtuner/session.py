"""Session orchestration: wiring, checkpoints, reports, ablation toggles.

The search itself lives in mcts; this layer owns everything with a side
effect beyond the tree: building collaborators from a config, writing
checkpoints on a cadence, catching signals for a graceful stop, and
shaping the final report.
"""

from __future__ import annotations

import json
import logging
import os
import signal
import statistics
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

from .actions import ActionEngine, ActionKind
from .backends import (
    DecisionBackend,
    RandomBackend,
    RemoteBackend,
    scripted_oracle,
)
from .errors import ConfigError
from .evaluation import Evaluator, build_synthetic, external_adapter
from .knowledge import build_space, load_bundle
from .mcts import MctsParams, SearchSession
from .pruning import Pruner, PruningParams

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1

ABLATION_TOKENS = {
    "knob-knowledge": "knob_knowledge",
    "hardware-knowledge": "hardware_knowledge",
    "network-knowledge": "network_knowledge",
    "plan": "plan",
    "cluster-tune": "cluster_tune",
    "single-knob": "single_knob",
    "validation": "validation",
    "feedback": "feedback",
    "pruning": "pruning",
}

_KIND_TOGGLES = {
    "plan": ActionKind.PLAN,
    "cluster_tune": ActionKind.CLUSTER_TUNE,
    "single_knob": ActionKind.SINGLE_KNOB,
    "validation": ActionKind.VALIDATE,
    "feedback": ActionKind.FEEDBACK,
}


@dataclass(frozen=True)
class AblationToggles:
    """Each flag disables one ingredient; all off reproduces the full system."""

    knob_knowledge: bool = False
    hardware_knowledge: bool = False
    network_knowledge: bool = False
    plan: bool = False
    cluster_tune: bool = False
    single_knob: bool = False
    validation: bool = False
    feedback: bool = False
    pruning: bool = False

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "AblationToggles":
        flags = {}
        for token in tokens:
            token = token.strip()
            if not token:
                continue
            if token not in ABLATION_TOKENS:
                raise ConfigError(
                    f"unknown ablation token {token!r}; valid tokens: "
                    + ", ".join(sorted(ABLATION_TOKENS))
                )
            flags[ABLATION_TOKENS[token]] = True
        return cls(**flags)

    def tokens(self) -> list[str]:
        return sorted(t for t, attr in ABLATION_TOKENS.items() if getattr(self, attr))

    def disabled_kinds(self) -> frozenset[ActionKind]:
        return frozenset(
            kind for attr, kind in _KIND_TOGGLES.items() if getattr(self, attr)
        )


@dataclass
class SessionConfig:
    knob_path: str
    system_path: str
    backend_name: str = "oracle"
    evaluator_name: str = "synthetic"
    eval_cmd: str = ""
    eval_timeout: float = 1800.0
    manual_knob_path: str | None = None
    mcts: MctsParams = field(default_factory=MctsParams)
    pruning: PruningParams = field(default_factory=PruningParams)
    ablations: AblationToggles = field(default_factory=AblationToggles)
    out_dir: str = "."
    checkpoint_every: int = 1
    difficulty: float = 0.5
    oracle_alpha: float = 0.8
    out_of_domain_rate: float = 0.25

    def __post_init__(self):
        if self.backend_name not in ("oracle", "random", "remote"):
            raise ConfigError(f"unknown backend {self.backend_name!r}")
        if self.evaluator_name not in ("synthetic", "external"):
            raise ConfigError(f"unknown evaluator {self.evaluator_name!r}")
        if self.evaluator_name == "external" and not self.eval_cmd:
            raise ConfigError("the external evaluator needs --eval-cmd")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be at least 1")
        if self.ablations.pruning and self.pruning.enabled:
            self.pruning = PruningParams.disabled()


def build_collaborators(
    config: SessionConfig,
) -> tuple[ActionEngine, DecisionBackend, Evaluator, Pruner, str]:
    """Constructs engine, backend, evaluator, and pruner; returns the digest too."""
    bundle = load_bundle(
        config.knob_path, config.system_path, manual_knob_path=config.manual_knob_path
    )
    space = build_space(bundle.knob)
    ab = config.ablations
    engine = ActionEngine(
        space,
        bundle,
        disabled_kinds=ab.disabled_kinds(),
        include_knob_knowledge=not ab.knob_knowledge,
        include_hardware=not ab.hardware_knowledge,
        include_network=not ab.network_knowledge,
    )
    seed = config.mcts.seed
    if config.evaluator_name == "synthetic":
        evaluator: Evaluator = build_synthetic(
            space, bundle, seed, difficulty=config.difficulty
        )
    else:
        evaluator = external_adapter(config.eval_cmd, timeout=config.eval_timeout)
    if config.backend_name == "oracle":
        if config.evaluator_name != "synthetic":
            raise ConfigError("the oracle backend needs the synthetic evaluator")
        backend: DecisionBackend = scripted_oracle(
            space, evaluator, seed, alpha=config.oracle_alpha
        )
    elif config.backend_name == "random":
        backend = RandomBackend(space, seed, out_of_domain_rate=config.out_of_domain_rate)
    else:
        backend = RemoteBackend(space)
    pruner = Pruner(config.pruning, engine)
    return engine, backend, evaluator, pruner, bundle.space_digest


# ---------------------------------------------------------------------------
# report


@dataclass
class SessionReport:
    t_default: float
    t_star: float
    delta_t_pct: float
    n_star: int
    n_neg: int
    n_err: int
    evaluations: int
    rollouts: int
    stop_reason: str
    best_assignments: dict[str, Any]
    eval_log: list[dict[str, Any]]
    action_counts: dict[str, int]
    timings: dict[str, Any]
    backend_usage: dict[str, int]
    params: dict[str, Any]
    pruning: dict[str, Any]
    ablations: list[str]
    space_digest: str

    def full_dict(self) -> dict[str, Any]:
        return {
            "t_default": self.t_default,
            "t_star": self.t_star,
            "delta_t_pct": self.delta_t_pct,
            "n_star": self.n_star,
            "n_neg": self.n_neg,
            "n_err": self.n_err,
            "evaluations": self.evaluations,
            "rollouts": self.rollouts,
            "stop_reason": self.stop_reason,
            "best_assignments": dict(self.best_assignments),
            "eval_log": list(self.eval_log),
            "action_counts": dict(self.action_counts),
            "timings": dict(self.timings),
            "backend_usage": dict(self.backend_usage),
            "params": dict(self.params),
            "pruning": dict(self.pruning),
            "ablations": list(self.ablations),
            "space_digest": self.space_digest,
        }

    def canonical_dict(self) -> dict[str, Any]:
        """The deterministic subtree: everything except wall-clock timings."""
        d = self.full_dict()
        d.pop("timings")
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SessionReport":
        return cls(
            t_default=float(d["t_default"]),
            t_star=float(d["t_star"]),
            delta_t_pct=float(d["delta_t_pct"]),
            n_star=int(d["n_star"]),
            n_neg=int(d["n_neg"]),
            n_err=int(d["n_err"]),
            evaluations=int(d["evaluations"]),
            rollouts=int(d["rollouts"]),
            stop_reason=d["stop_reason"],
            best_assignments=dict(d["best_assignments"]),
            eval_log=list(d["eval_log"]),
            action_counts=dict(d["action_counts"]),
            timings=dict(d.get("timings", {})),
            backend_usage=dict(d["backend_usage"]),
            params=dict(d["params"]),
            pruning=dict(d["pruning"]),
            ablations=list(d["ablations"]),
            space_digest=d["space_digest"],
        )

    def to_text_table(self) -> str:
        rows = [
            ("baseline throughput", f"{self.t_default:.2f} tps"),
            ("best throughput", f"{self.t_star:.2f} tps"),
            ("improvement", f"{self.delta_t_pct:.1f} %"),
            ("evals to best (N*)", str(self.n_star)),
            ("evals below baseline (N_neg)", str(self.n_neg)),
            ("invalid evals (N_err)", str(self.n_err)),
            ("evaluations", str(self.evaluations)),
            ("rollouts", str(self.rollouts)),
            ("stopped because", self.stop_reason or "-"),
        ]
        t = self.timings
        if t:
            rows.extend(
                [
                    ("total time", f"{t.get('total', 0.0):.2f} s"),
                    ("backend wait", f"{t.get('backend_wait', 0.0):.2f} s"),
                    ("deployment", f"{t.get('deploy', 0.0):.2f} s"),
                    ("evaluation", f"{t.get('evaluation', 0.0):.2f} s"),
                    (
                        "search overhead",
                        f"{t.get('search_overhead', 0.0):.2f} s"
                        f" ({t.get('overhead_pct', 0.0):.1f} %)",
                    ),
                ]
            )
        width = max(len(name) for name, _ in rows)
        lines = ["knob tuning session", "=" * (width + 24)]
        lines += [f"{name.ljust(width)}  {value}" for name, value in rows]
        counts = " | ".join(f"{k} {v}" for k, v in self.action_counts.items() if v)
        lines.append(f"{'actions'.ljust(width)}  {counts or '-'}")
        avgs = t.get("per_kind_avg", {}) if t else {}
        if avgs:
            avg_text = " | ".join(f"{k} {v:.3f}s" for k, v in avgs.items())
            lines.append(f"{'avg action time'.ljust(width)}  {avg_text}")
        usage = " | ".join(f"{k} {v}" for k, v in self.backend_usage.items())
        lines.append(f"{'backend usage'.ljust(width)}  {usage}")
        if self.ablations:
            lines.append(f"{'ablations'.ljust(width)}  {', '.join(self.ablations)}")
        return "\n".join(lines)


def emit_report(
    session: SearchSession,
    ablations: AblationToggles,
    space_digest: str,
    total_seconds: float,
) -> SessionReport:
    tracker = session.tracker
    t_default = tracker.baseline or 0.0
    t_star = tracker.best_throughput
    delta = 100.0 * (t_star - t_default) / t_default if t_default > 0 else 0.0
    overhead = total_seconds - (
        session.backend_wait + session.deploy_time + session.evaluation_time
    )
    per_kind_avg = {
        kind: session.kind_seconds[kind] / session.kind_counts[kind]
        for kind in sorted(session.kind_seconds)
        if session.kind_counts.get(kind)
    }
    timings = {
        "total": total_seconds,
        "backend_wait": session.backend_wait,
        "deploy": session.deploy_time,
        "evaluation": session.evaluation_time,
        "search_overhead": overhead,
        "overhead_pct": 100.0 * overhead / total_seconds if total_seconds > 0 else 0.0,
        "per_kind_avg": per_kind_avg,
    }
    return SessionReport(
        t_default=t_default,
        t_star=t_star,
        delta_t_pct=delta,
        n_star=tracker.n_star() or 0,
        n_neg=tracker.n_neg(),
        n_err=tracker.n_err(),
        evaluations=tracker.evaluations,
        rollouts=session.rollouts_done,
        stop_reason=session.stop_reason,
        best_assignments=dict(tracker.best_assignments),
        eval_log=[r.to_dict() for r in tracker.records],
        action_counts=session.tree.action_counts(),
        timings=timings,
        backend_usage=session.backend.usage.to_dict(),
        params=session.params.to_dict(),
        pruning=session.pruner.params.to_dict(),
        ablations=ablations.tokens(),
        space_digest=space_digest,
    )


# ---------------------------------------------------------------------------
# checkpointing and the run loop


def write_json_atomic(path: Path, obj: Any) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, sort_keys=True))
    os.replace(tmp, path)


def checkpoint_payload(
    session: SearchSession, config: SessionConfig, space_digest: str
) -> dict[str, Any]:
    return {
        "format": CHECKPOINT_FORMAT,
        "space_digest": space_digest,
        "backend_name": config.backend_name,
        "evaluator_name": config.evaluator_name,
        "mcts": config.mcts.to_dict(),
        "pruning": config.pruning.to_dict(),
        "ablations": config.ablations.tokens(),
        "session": session.checkpoint_state(),
    }


def verify_checkpoint(
    payload: Mapping[str, Any], config: SessionConfig, space_digest: str
) -> None:
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"unsupported checkpoint format {payload.get('format')!r}")
    mismatches = []
    if payload.get("space_digest") != space_digest:
        mismatches.append("knob space digest")
    if payload.get("backend_name") != config.backend_name:
        mismatches.append("backend")
    if payload.get("evaluator_name") != config.evaluator_name:
        mismatches.append("evaluator")
    if payload.get("mcts") != config.mcts.to_dict():
        mismatches.append("search parameters")
    if payload.get("pruning") != config.pruning.to_dict():
        mismatches.append("pruning parameters")
    if payload.get("ablations") != config.ablations.tokens():
        mismatches.append("ablation toggles")
    if mismatches:
        raise ConfigError(
            "checkpoint does not match this session: " + ", ".join(mismatches)
        )


class _GracefulStop(Exception):
    pass


def run_session(config: SessionConfig, resume_path: str | None = None) -> SessionReport:
    """Full tuning run: build, (resume), search, checkpoint, report."""
    engine, backend, evaluator, pruner, digest = build_collaborators(config)
    session = SearchSession(engine, backend, evaluator, pruner, config.mcts)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / "checkpoint.json"

    if resume_path is not None:
        payload = json.loads(Path(resume_path).read_text())
        verify_checkpoint(payload, config, digest)
        session.restore_state(payload["session"])
        log.info("resumed at rollout %d", session.rollouts_done)

    stop_requested = threading.Event()
    previous_handlers: dict[int, Any] = {}
    if threading.current_thread() is threading.main_thread():
        def _request_stop(signum, frame):
            log.warning("stop requested; finishing the current rollout")
            stop_requested.set()

        for sig in (signal.SIGINT, signal.SIGTERM):
            previous_handlers[sig] = signal.signal(sig, _request_stop)

    started = time.perf_counter()

    def on_rollout(s: SearchSession) -> None:
        if s.rollouts_done % config.checkpoint_every == 0:
            write_json_atomic(checkpoint_path, checkpoint_payload(s, config, digest))
        if stop_requested.is_set():
            raise _GracefulStop

    try:
        session.run(on_rollout=on_rollout)
    except _GracefulStop:
        session.stop_reason = "interrupted"
    finally:
        for sig, handler in previous_handlers.items():
            signal.signal(sig, handler)

    total = time.perf_counter() - started
    write_json_atomic(checkpoint_path, checkpoint_payload(session, config, digest))

    report = emit_report(session, config.ablations, digest, total)
    write_json_atomic(out_dir / "report.json", report.full_dict())
    (out_dir / "summary.txt").write_text(report.to_text_table() + "\n")
    return report


def run_repeated(config: SessionConfig, repeats: int) -> list[SessionReport]:
    """Convenience wrapper: independent seeds, median best throughput logged."""
    if repeats < 1:
        raise ConfigError("repeats must be at least 1")
    reports = []
    for i in range(repeats):
        sub = replace(
            config,
            mcts=replace(config.mcts, seed=config.mcts.seed + i),
            out_dir=str(Path(config.out_dir) / f"run-{i:02d}"),
        )
        reports.append(run_session(sub))
    median = statistics.median(r.t_star for r in reports)
    log.info("median best throughput over %d runs: %.2f tps", repeats, median)
    return reports
