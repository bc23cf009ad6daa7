"""Tuning actions: kinds, payloads, legal transitions, prompts, and state updates.

A tuning trajectory is a sequence of actions over immutable search states:
plan the direction, tune clusters or single knobs, validate and fix the
tuned values, evaluate on the system, refine from feedback, terminate.
Which action may follow which is fixed by a transition relation; an engine
instance can additionally rewire that relation when action kinds are
disabled for ablation runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping, Sequence

from .errors import CandidateRejected, ConfigError, EvaluatorError, IllegalTransition
from .evaluation import EvalResult, Evaluator, RunError
from .knowledge import KnowledgeBundle
from .space import (
    BoolDomain,
    ConfigSpace,
    Configuration,
    EnumDomain,
    IntRange,
    Knob,
    RealRange,
    Value,
    WorkloadSpec,
    coerce_value,
    is_scalar,
    merge_subconfig,
    nearest_valid,
)

_FALLBACK_WORKLOAD = WorkloadSpec(name="default", transaction_count=1000)


class ActionKind(Enum):
    ROOT = "root"
    PLAN = "plan"
    CLUSTER_TUNE = "cluster_tune"
    SINGLE_KNOB = "single_knob"
    VALIDATE = "validate"
    FIX = "fix"
    EVALUATE = "evaluate"
    FEEDBACK = "feedback"
    TERMINAL = "terminal"


KIND_ORDER = {kind: i for i, kind in enumerate(ActionKind)}

ADJUSTMENT_KINDS = frozenset({ActionKind.CLUSTER_TUNE, ActionKind.SINGLE_KNOB})
REWARD_KINDS = frozenset({ActionKind.VALIDATE, ActionKind.EVALUATE, ActionKind.FEEDBACK})
DETERMINISTIC_KINDS = frozenset({ActionKind.EVALUATE, ActionKind.TERMINAL})
DISABLEABLE_KINDS = frozenset(
    {
        ActionKind.PLAN,
        ActionKind.CLUSTER_TUNE,
        ActionKind.SINGLE_KNOB,
        ActionKind.VALIDATE,
        ActionKind.FIX,
        ActionKind.FEEDBACK,
    }
)

TRANSITIONS: dict[ActionKind, frozenset[ActionKind]] = {
    ActionKind.ROOT: frozenset({ActionKind.PLAN}),
    ActionKind.PLAN: frozenset({ActionKind.CLUSTER_TUNE, ActionKind.SINGLE_KNOB}),
    ActionKind.CLUSTER_TUNE: frozenset(
        {
            ActionKind.CLUSTER_TUNE,
            ActionKind.SINGLE_KNOB,
            ActionKind.VALIDATE,
            ActionKind.EVALUATE,
        }
    ),
    ActionKind.SINGLE_KNOB: frozenset(
        {ActionKind.CLUSTER_TUNE, ActionKind.SINGLE_KNOB, ActionKind.VALIDATE}
    ),
    ActionKind.VALIDATE: frozenset(
        {
            ActionKind.CLUSTER_TUNE,
            ActionKind.SINGLE_KNOB,
            ActionKind.FIX,
            ActionKind.EVALUATE,
            ActionKind.TERMINAL,
        }
    ),
    ActionKind.FIX: frozenset({ActionKind.VALIDATE}),
    ActionKind.EVALUATE: frozenset(
        {ActionKind.PLAN, ActionKind.FEEDBACK, ActionKind.TERMINAL}
    ),
    ActionKind.FEEDBACK: frozenset({ActionKind.TERMINAL}),
    ActionKind.TERMINAL: frozenset(),
}


def valid_next(kind: ActionKind) -> frozenset[ActionKind]:
    """Legal successor kinds under the full transition relation."""
    return TRANSITIONS[kind]


# ---------------------------------------------------------------------------
# payloads


@dataclass(frozen=True)
class ValidationIssue:
    knob: str
    category: str  # range, format, or logical-conflict
    explanation: str

    def to_dict(self) -> dict[str, str]:
        return {"knob": self.knob, "category": self.category, "explanation": self.explanation}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ValidationIssue":
        return cls(knob=d["knob"], category=d["category"], explanation=d["explanation"])


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    issues: tuple[ValidationIssue, ...] = ()

    def __post_init__(self):
        if self.valid and self.issues:
            raise ConfigError("a valid report cannot carry issues")

    def issue_knobs(self) -> frozenset[str]:
        return frozenset(i.knob for i in self.issues)

    def to_dict(self) -> dict[str, Any]:
        return {"valid": self.valid, "issues": [i.to_dict() for i in self.issues]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ValidationReport":
        return cls(
            valid=bool(d["valid"]),
            issues=tuple(ValidationIssue.from_dict(i) for i in d.get("issues", [])),
        )


@dataclass(frozen=True)
class PlanPayload:
    text: str = ""
    cluster_order: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {"plan": self.text, "cluster_order": list(self.cluster_order)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PlanPayload":
        return cls(text=d.get("plan", ""), cluster_order=tuple(d.get("cluster_order", ())))


@dataclass(frozen=True)
class ClusterTunePayload:
    cluster: str
    assignments: Mapping[str, Value]
    reasoning: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "cluster": self.cluster,
            "assignments": dict(self.assignments),
            "reasoning": self.reasoning,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ClusterTunePayload":
        return cls(
            cluster=d["cluster"],
            assignments=dict(d["assignments"]),
            reasoning=d.get("reasoning", ""),
        )


@dataclass(frozen=True)
class SingleKnobPayload:
    knob: str
    value: Value
    reasoning: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"knob": self.knob, "value": self.value, "reasoning": self.reasoning}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SingleKnobPayload":
        return cls(knob=d["knob"], value=d["value"], reasoning=d.get("reasoning", ""))


@dataclass(frozen=True)
class ValidatePayload:
    """The backend's logical verdict; mechanical checks are added on apply."""

    logical_valid: bool = True
    logical_issues: tuple[ValidationIssue, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "logical_valid": self.logical_valid,
            "logical_issues": [i.to_dict() for i in self.logical_issues],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ValidatePayload":
        return cls(
            logical_valid=bool(d.get("logical_valid", True)),
            logical_issues=tuple(
                ValidationIssue.from_dict(i) for i in d.get("logical_issues", [])
            ),
        )


@dataclass(frozen=True)
class FixPayload:
    assignments: Mapping[str, Value]

    def to_dict(self) -> dict[str, Any]:
        return {"assignments": dict(self.assignments)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FixPayload":
        return cls(assignments=dict(d["assignments"]))


@dataclass(frozen=True)
class EvaluatePayload:
    def to_dict(self) -> dict[str, Any]:
        return {}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvaluatePayload":
        return cls()


@dataclass(frozen=True)
class FeedbackPayload:
    assignments: Mapping[str, Value]
    analysis: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"assignments": dict(self.assignments), "analysis": self.analysis}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FeedbackPayload":
        return cls(assignments=dict(d["assignments"]), analysis=d.get("analysis", ""))


@dataclass(frozen=True)
class TerminalPayload:
    reason: str = "chosen by search"

    def to_dict(self) -> dict[str, Any]:
        return {"reason": self.reason}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TerminalPayload":
        return cls(reason=d.get("reason", "chosen by search"))


PAYLOAD_TYPES = {
    ActionKind.PLAN: PlanPayload,
    ActionKind.CLUSTER_TUNE: ClusterTunePayload,
    ActionKind.SINGLE_KNOB: SingleKnobPayload,
    ActionKind.VALIDATE: ValidatePayload,
    ActionKind.FIX: FixPayload,
    ActionKind.EVALUATE: EvaluatePayload,
    ActionKind.FEEDBACK: FeedbackPayload,
    ActionKind.TERMINAL: TerminalPayload,
}


@dataclass(frozen=True)
class ActionInstance:
    kind: ActionKind
    payload: Any

    def key(self) -> str:
        """Canonical identity used to collapse duplicate proposals."""
        return json.dumps(
            {"kind": self.kind.value, "payload": self.payload.to_dict()}, sort_keys=True
        )

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "payload": self.payload.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ActionInstance":
        kind = ActionKind(d["kind"])
        return cls(kind=kind, payload=PAYLOAD_TYPES[kind].from_dict(d["payload"]))


# ---------------------------------------------------------------------------
# search state


@dataclass(frozen=True)
class SearchState:
    """One node's tuning context, immutable along the tree."""

    config: Configuration
    tuned: frozenset[str]
    untuned_clusters: frozenset[str]
    plan: PlanPayload | None
    last_action: ActionKind
    pending_issues: tuple[ValidationIssue, ...]
    last_validation: ValidationReport | None
    last_eval: EvalResult | None
    feedback_round: int
    depth: int
    adjustments_since_validation: int
    adjustments_since_evaluation: int
    cluster_tunes: int
    terminal_reason: str | None = None

    @property
    def is_terminal(self) -> bool:
        return self.last_action is ActionKind.TERMINAL

    def to_dict(self) -> dict[str, Any]:
        return {
            "assignments": dict(self.config.assignments),
            "provenance": dict(self.config.provenance),
            "tuned": sorted(self.tuned),
            "untuned_clusters": sorted(self.untuned_clusters),
            "plan": self.plan.to_dict() if self.plan else None,
            "last_action": self.last_action.value,
            "pending_issues": [i.to_dict() for i in self.pending_issues],
            "last_validation": self.last_validation.to_dict() if self.last_validation else None,
            "last_eval": self.last_eval.to_dict() if self.last_eval else None,
            "feedback_round": self.feedback_round,
            "depth": self.depth,
            "adjustments_since_validation": self.adjustments_since_validation,
            "adjustments_since_evaluation": self.adjustments_since_evaluation,
            "cluster_tunes": self.cluster_tunes,
            "terminal_reason": self.terminal_reason,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SearchState":
        return cls(
            config=Configuration(
                assignments=dict(d["assignments"]), provenance=dict(d["provenance"])
            ),
            tuned=frozenset(d["tuned"]),
            untuned_clusters=frozenset(d["untuned_clusters"]),
            plan=PlanPayload.from_dict(d["plan"]) if d.get("plan") else None,
            last_action=ActionKind(d["last_action"]),
            pending_issues=tuple(
                ValidationIssue.from_dict(i) for i in d.get("pending_issues", [])
            ),
            last_validation=(
                ValidationReport.from_dict(d["last_validation"])
                if d.get("last_validation")
                else None
            ),
            last_eval=EvalResult.from_dict(d["last_eval"]) if d.get("last_eval") else None,
            feedback_round=int(d["feedback_round"]),
            depth=int(d["depth"]),
            adjustments_since_validation=int(d["adjustments_since_validation"]),
            adjustments_since_evaluation=int(d["adjustments_since_evaluation"]),
            cluster_tunes=int(d["cluster_tunes"]),
            terminal_reason=d.get("terminal_reason"),
        )


def initial_state(space: ConfigSpace) -> SearchState:
    return SearchState(
        config=space.default_configuration(),
        tuned=frozenset(),
        untuned_clusters=frozenset(space.cluster_ids()),
        plan=None,
        last_action=ActionKind.ROOT,
        pending_issues=(),
        last_validation=None,
        last_eval=None,
        feedback_round=0,
        depth=0,
        adjustments_since_validation=0,
        adjustments_since_evaluation=0,
        cluster_tunes=0,
    )


# ---------------------------------------------------------------------------
# prompts


REPLY_SHAPES: dict[ActionKind, dict[str, Any]] = {
    ActionKind.PLAN: {"plan": "<text>", "cluster_order": ["<cluster_id>", "..."]},
    ActionKind.CLUSTER_TUNE: {
        "cluster": "<cluster_id>",
        "assignments": {"<knob>": "<value>"},
        "reasoning": "<text>",
    },
    ActionKind.SINGLE_KNOB: {"knob": "<name>", "value": "<value>", "reasoning": "<text>"},
    ActionKind.VALIDATE: {
        "valid": True,
        "issues": [{"knob": "<name>", "category": "<kind>", "explanation": "<text>"}],
    },
    ActionKind.FIX: {"assignments": {"<knob>": "<value>"}},
    ActionKind.FEEDBACK: {
        "assignments": {"<knob>": "<value>"},
        "bottleneck_analysis": "<text>",
    },
}

INSTRUCTIONS: dict[ActionKind, str] = {
    ActionKind.PLAN: (
        "Draft a tuning direction for the blockchain deployment described "
        "below: which knob clusters matter most for throughput, in what order "
        "they should be tuned, and why."
    ),
    ActionKind.CLUSTER_TUNE: (
        "Pick one candidate cluster and propose values for its knobs, staying "
        "consistent with the already tuned values."
    ),
    ActionKind.SINGLE_KNOB: (
        "Propose a new value for exactly one knob with high expected "
        "throughput impact."
    ),
    ActionKind.VALIDATE: (
        "Check the tuned configuration for logical inconsistencies between "
        "knobs, given the constraints and the deployment context. Range and "
        "format violations are checked mechanically; report on conflicts a "
        "per-knob check cannot see."
    ),
    ActionKind.FIX: (
        "Propose corrected values for the knobs flagged below so the "
        "configuration passes validation."
    ),
    ActionKind.FEEDBACK: (
        "The configuration was benchmarked. Analyze the bottleneck and "
        "propose a small refinement of the tuned values."
    ),
}


@dataclass(frozen=True)
class PromptBundle:
    """Structured prompt: instructions, knowledge slices, reply schema.

    Scripted policies read `state` and `context`; the remote backend sends
    `render_text()`.
    """

    kind: ActionKind
    instructions: str
    sections: tuple[tuple[str, str], ...]
    reply_schema: Mapping[str, Any] | None
    state: SearchState
    context: Mapping[str, Any] = field(default_factory=dict)

    def render_text(self) -> str:
        parts = [self.instructions] if self.instructions else []
        for title, body in self.sections:
            parts.append(f"## {title}\n{body}")
        if self.reply_schema is not None:
            parts.append(
                "## Reply format\nReply with a single JSON object shaped like:\n"
                + json.dumps(self.reply_schema, indent=1)
            )
        return "\n\n".join(parts)


def domain_text(knob: Knob) -> str:
    d = knob.domain
    if isinstance(d, IntRange):
        text = f"integer in [{d.lo}, {d.hi}]"
        if d.step != 1:
            text += f" step {d.step}"
    elif isinstance(d, RealRange):
        text = f"real in [{d.lo:g}, {d.hi:g}]"
    elif isinstance(d, BoolDomain):
        text = "boolean"
    elif isinstance(d, EnumDomain):
        text = "one of " + ", ".join(d.values)
    else:
        text = f"string matching {d.pattern!r}"
    if knob.unit:
        text += f" ({knob.unit})"
    return text


def _issue_for(knob: Knob, v: Value) -> ValidationIssue:
    d = knob.domain
    expected = domain_text(knob)
    if isinstance(d, IntRange):
        if isinstance(v, int) and not isinstance(v, bool):
            return ValidationIssue(
                knob.name, "range", f"value {v!r} outside {expected}"
            )
        return ValidationIssue(knob.name, "format", f"value {v!r} is not an integer")
    if isinstance(d, RealRange):
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            return ValidationIssue(knob.name, "range", f"value {v!r} outside {expected}")
        return ValidationIssue(knob.name, "format", f"value {v!r} is not a number")
    if isinstance(d, BoolDomain):
        return ValidationIssue(knob.name, "format", f"value {v!r} is not a boolean")
    if isinstance(d, EnumDomain):
        if isinstance(v, str):
            return ValidationIssue(knob.name, "range", f"value {v!r} is not {expected}")
        return ValidationIssue(knob.name, "format", f"value {v!r} is not a string")
    if isinstance(v, str):
        return ValidationIssue(knob.name, "format", f"value {v!r} does not match {expected}")
    return ValidationIssue(knob.name, "format", f"value {v!r} is not a string")


# ---------------------------------------------------------------------------
# candidate validation (reply dict -> ActionInstance)


def _coerced_assignments(
    space: ConfigSpace,
    raw: Any,
    label: str,
    allowed: frozenset[str] | None = None,
) -> dict[str, Value]:
    if not isinstance(raw, Mapping) or not raw:
        raise CandidateRejected(f"{label}: assignments must be a non-empty object")
    out: dict[str, Value] = {}
    for name, v in raw.items():
        if not isinstance(name, str) or name not in space:
            raise CandidateRejected(f"{label}: unknown knob {name!r}")
        if allowed is not None and name not in allowed:
            raise CandidateRejected(f"{label}: knob {name} is outside the permitted set")
        if not is_scalar(v):
            raise CandidateRejected(f"{label}: value for {name} must be a scalar")
        try:
            v = coerce_value(space.knob(name), v)
        except ValueError:
            pass  # keep the raw scalar; validation flags it later
        out[name] = v
    return out


def build_instance(
    space: ConfigSpace,
    state: SearchState,
    kind: ActionKind,
    reply: Mapping[str, Any],
) -> ActionInstance:
    """Validate a reply dict against the action's schema and payload rules."""
    if not isinstance(reply, Mapping):
        raise CandidateRejected(f"{kind.value}: reply must be a JSON object")

    if kind is ActionKind.PLAN:
        text = reply.get("plan", "")
        if not isinstance(text, str):
            raise CandidateRejected("plan: plan text must be a string")
        raw_order = reply.get("cluster_order", [])
        if not isinstance(raw_order, Sequence) or isinstance(raw_order, str):
            raise CandidateRejected("plan: cluster_order must be a list")
        known = set(space.cluster_ids())
        order: list[str] = []
        for cid in raw_order:
            if isinstance(cid, str) and cid in known and cid not in order:
                order.append(cid)
        return ActionInstance(kind, PlanPayload(text=text, cluster_order=tuple(order)))

    if kind is ActionKind.CLUSTER_TUNE:
        cluster = reply.get("cluster")
        if not isinstance(cluster, str) or cluster not in set(space.cluster_ids()):
            raise CandidateRejected(f"cluster_tune: unknown cluster {cluster!r}")
        if state.untuned_clusters and cluster not in state.untuned_clusters:
            raise CandidateRejected(
                f"cluster_tune: cluster {cluster} is already tuned and untuned "
                "clusters remain"
            )
        members = frozenset(k.name for k in space.knobs_in(cluster))
        assignments = _coerced_assignments(
            space, reply.get("assignments"), "cluster_tune", allowed=members
        )
        reasoning = reply.get("reasoning", "")
        return ActionInstance(
            kind,
            ClusterTunePayload(
                cluster=cluster,
                assignments=assignments,
                reasoning=reasoning if isinstance(reasoning, str) else "",
            ),
        )

    if kind is ActionKind.SINGLE_KNOB:
        name = reply.get("knob")
        if not isinstance(name, str) or name not in space:
            raise CandidateRejected(f"single_knob: unknown knob {name!r}")
        if "value" not in reply or not is_scalar(reply["value"]):
            raise CandidateRejected("single_knob: value must be a scalar")
        v = reply["value"]
        try:
            v = coerce_value(space.knob(name), v)
        except ValueError:
            pass
        reasoning = reply.get("reasoning", "")
        return ActionInstance(
            kind,
            SingleKnobPayload(
                knob=name, value=v, reasoning=reasoning if isinstance(reasoning, str) else ""
            ),
        )

    if kind is ActionKind.VALIDATE:
        valid = reply.get("valid")
        if not isinstance(valid, bool):
            raise CandidateRejected("validate: valid must be a boolean")
        issues: list[ValidationIssue] = []
        if not valid:
            raw_issues = reply.get("issues", [])
            if not isinstance(raw_issues, list):
                raise CandidateRejected("validate: issues must be a list")
            for entry in raw_issues:
                if not isinstance(entry, Mapping):
                    continue
                name = entry.get("knob")
                if not isinstance(name, str) or name not in space:
                    continue  # issues naming unknown knobs are noise
                category = entry.get("category", "logical-conflict")
                if category not in ("range", "format", "logical-conflict"):
                    category = "logical-conflict"
                issues.append(
                    ValidationIssue(
                        knob=name,
                        category=category,
                        explanation=str(entry.get("explanation", "")),
                    )
                )
        return ActionInstance(
            kind, ValidatePayload(logical_valid=valid, logical_issues=tuple(issues))
        )

    if kind is ActionKind.FIX:
        allowed = frozenset(i.knob for i in state.pending_issues)
        if not allowed:
            raise CandidateRejected("fix: no pending validation issues")
        assignments = _coerced_assignments(
            space, reply.get("assignments"), "fix", allowed=allowed
        )
        quantized = {
            name: (
                nearest_valid(space.knob(name), v)
                if isinstance(space.knob(name).domain, IntRange)
                else v
            )
            for name, v in assignments.items()
        }
        return ActionInstance(kind, FixPayload(assignments=quantized))

    if kind is ActionKind.FEEDBACK:
        assignments = _coerced_assignments(space, reply.get("assignments"), "feedback")
        analysis = reply.get("bottleneck_analysis", reply.get("analysis", ""))
        return ActionInstance(
            kind,
            FeedbackPayload(
                assignments=assignments,
                analysis=analysis if isinstance(analysis, str) else "",
            ),
        )

    if kind is ActionKind.EVALUATE:
        return ActionInstance(kind, EvaluatePayload())
    if kind is ActionKind.TERMINAL:
        reason = reply.get("reason", "chosen by search")
        return ActionInstance(
            kind, TerminalPayload(reason=reason if isinstance(reason, str) else "chosen by search")
        )
    raise CandidateRejected(f"no payload schema for {kind.value}")


# ---------------------------------------------------------------------------
# the engine


class ActionEngine:
    """Builds prompts and applies actions over a fixed space and knowledge.

    `disabled_kinds` rewires the transition relation for ablations: each
    disabled kind's predecessors inherit its successors, so trajectories
    route around it.
    """

    def __init__(
        self,
        space: ConfigSpace,
        bundle: KnowledgeBundle | None = None,
        disabled_kinds: frozenset[ActionKind] = frozenset(),
        include_knob_knowledge: bool = True,
        include_hardware: bool = True,
        include_network: bool = True,
    ):
        self.space = space
        self.bundle = bundle
        self.include_knob_knowledge = include_knob_knowledge
        self.include_hardware = include_hardware
        self.include_network = include_network

        bad = disabled_kinds - DISABLEABLE_KINDS
        if bad:
            raise ConfigError(
                f"these action kinds cannot be disabled: {sorted(k.value for k in bad)}"
            )
        if ActionKind.VALIDATE in disabled_kinds:
            disabled_kinds = disabled_kinds | {ActionKind.FIX}
        elif ActionKind.FIX in disabled_kinds:
            raise ConfigError("disabling fix requires disabling validation too")
        if ActionKind.CLUSTER_TUNE in disabled_kinds and ActionKind.SINGLE_KNOB in disabled_kinds:
            raise ConfigError("cluster and single-knob tuning cannot both be disabled")
        self.disabled_kinds = frozenset(disabled_kinds)
        self._table, self._replacement = _effective_transitions(self.disabled_kinds)

        self._static_sections: dict[str, str] = {}
        self._knob_lines: dict[str, str] = {}
        if bundle is not None:
            self._build_static_sections()

    @property
    def workload(self) -> WorkloadSpec:
        if self.bundle is not None:
            return self.bundle.system.workload
        return _FALLBACK_WORKLOAD

    # -- transition relation

    def valid_next(self, kind: ActionKind) -> frozenset[ActionKind]:
        if kind in self.disabled_kinds:
            return frozenset()
        return self._table[kind]

    def feasible_next(self, state: SearchState) -> frozenset[ActionKind]:
        """valid_next of the state, minus fix when nothing is pending."""
        allowed = self.valid_next(state.last_action)
        if ActionKind.FIX in allowed and not state.pending_issues:
            allowed = allowed - {ActionKind.FIX}
        return allowed

    def map_targets(self, kinds: frozenset[ActionKind]) -> frozenset[ActionKind]:
        """Route a target set around disabled kinds."""
        out: set[ActionKind] = set()
        for k in kinds:
            if k in self.disabled_kinds:
                out |= self._replacement[k]
            else:
                out.add(k)
        return frozenset(out)

    # -- prompt construction

    def _build_static_sections(self) -> None:
        bundle = self.bundle
        assert bundle is not None
        self._static_sections["hardware"] = json.dumps(
            bundle.system.hardware_dicts(), indent=1
        )
        self._static_sections["network"] = json.dumps(bundle.system.network_dict(), indent=1)
        cluster_infos = []
        for c in self.space.clusters:
            cluster_infos.append(
                {
                    "id": c.id,
                    "role": c.role,
                    "description": c.description,
                    "knobs": [k.name for k in self.space.knobs_in(c.id)],
                }
            )
        self._static_sections["clusters"] = json.dumps(cluster_infos, indent=1)
        for knob in self.space.knobs:
            record = bundle.knob.record_for(knob.name)
            entry: dict[str, Any] = {
                "name": knob.name,
                "domain": domain_text(knob),
                "default": knob.default,
                "cluster": knob.cluster_id,
            }
            if record is not None:
                if record.description:
                    entry["description"] = record.description
                entry["performance_relevant"] = record.performance_relevant
            if knob.special_values:
                entry["special_values"] = [
                    {"value": sp.value, "meaning": sp.meaning} for sp in knob.special_values
                ]
            self._knob_lines[knob.name] = json.dumps(entry)

    def _knob_section(self, names: Sequence[str]) -> str:
        return "[\n" + ",\n".join(self._knob_lines[n] for n in names) + "\n]"

    def _tuned_section(self, state: SearchState) -> str:
        tuned = {
            k.name: state.config.assignments[k.name]
            for k in self.space.knobs
            if k.name in state.tuned
        }
        if not tuned:
            return "(all knobs still at their defaults)"
        return json.dumps(tuned)

    def relevant_knobs(self) -> tuple[str, ...]:
        if self.bundle is None:
            return self.space.names()
        names = []
        for knob in self.space.knobs:
            record = self.bundle.knob.record_for(knob.name)
            if record is None or record.performance_relevant:
                names.append(knob.name)
        return tuple(names) if names else self.space.names()

    def candidate_clusters(self, state: SearchState) -> tuple[str, ...]:
        """Clusters a cluster-tune may pick, ordered by plan then space order."""
        if state.untuned_clusters:
            pool = state.untuned_clusters
        else:
            pool = frozenset(self.space.cluster_ids())
        ordered: list[str] = []
        if state.plan is not None:
            for cid in state.plan.cluster_order:
                if cid in pool and cid not in ordered:
                    ordered.append(cid)
        for cid in self.space.cluster_ids():
            if cid in pool and cid not in ordered:
                ordered.append(cid)
        return tuple(ordered)

    def build_prompt(
        self,
        state: SearchState,
        kind: ActionKind,
        best_throughput: float | None = None,
    ) -> PromptBundle:
        if kind not in self.valid_next(state.last_action):
            raise IllegalTransition(
                f"{kind.value} cannot follow {state.last_action.value}"
            )
        if kind in DETERMINISTIC_KINDS:
            return PromptBundle(
                kind=kind,
                instructions="",
                sections=(),
                reply_schema=None,
                state=state,
                context={},
            )

        sections: list[tuple[str, str]] = []
        context: dict[str, Any] = {}

        def add_static(name: str, title: str) -> None:
            if name == "hardware" and not self.include_hardware:
                return
            if name == "network" and not self.include_network:
                return
            if name in self._static_sections:
                sections.append((title, self._static_sections[name]))

        if kind is ActionKind.PLAN:
            add_static("clusters", "Knob clusters")
            add_static("hardware", "Hardware")
            add_static("network", "Network topology")
            context["untuned_clusters"] = list(self.candidate_clusters(state))

        elif kind is ActionKind.CLUSTER_TUNE:
            candidates = self.candidate_clusters(state)
            context["candidate_clusters"] = list(candidates)
            if state.plan is not None and state.plan.text:
                sections.append(("Tuning plan", state.plan.text))
            add_static("hardware", "Hardware")
            add_static("network", "Network topology")
            if self.include_knob_knowledge and self._knob_lines:
                names = [
                    k.name for cid in candidates for k in self.space.knobs_in(cid)
                ]
                sections.append(("Candidate knobs", self._knob_section(names)))
            sections.append(("Already tuned", self._tuned_section(state)))

        elif kind is ActionKind.SINGLE_KNOB:
            candidates = self.relevant_knobs()
            context["candidate_knobs"] = list(candidates)
            if state.plan is not None and state.plan.text:
                sections.append(("Tuning plan", state.plan.text))
            add_static("hardware", "Hardware")
            add_static("network", "Network topology")
            if self.include_knob_knowledge and self._knob_lines:
                sections.append(("Candidate knobs", self._knob_section(candidates)))
            sections.append(("Already tuned", self._tuned_section(state)))

        elif kind is ActionKind.VALIDATE:
            tuned_names = [k.name for k in self.space.knobs if k.name in state.tuned]
            context["tuned_knobs"] = tuned_names
            constraints = {n: domain_text(self.space.knob(n)) for n in tuned_names}
            sections.append(("Knob constraints", json.dumps(constraints, indent=1)))
            add_static("hardware", "Hardware")
            add_static("network", "Network topology")
            sections.append(("Tuned configuration", self._tuned_section(state)))

        elif kind is ActionKind.FIX:
            pending = [i.to_dict() for i in state.pending_issues]
            context["pending_knobs"] = sorted({i.knob for i in state.pending_issues})
            sections.append(("Validation issues", json.dumps(pending, indent=1)))
            constraints = {
                n: domain_text(self.space.knob(n)) for n in context["pending_knobs"]
            }
            sections.append(("Knob constraints", json.dumps(constraints, indent=1)))
            sections.append(("Tuned configuration", self._tuned_section(state)))

        elif kind is ActionKind.FEEDBACK:
            result = state.last_eval
            outcome = {
                "throughput": result.throughput if result else None,
                "run_errors": [e.to_dict() for e in result.run_errors] if result else [],
            }
            context["last_throughput"] = outcome["throughput"]
            context["best_throughput"] = best_throughput
            sections.append(("Latest benchmark", json.dumps(outcome, indent=1)))
            if best_throughput is not None:
                sections.append(("Best throughput so far", f"{best_throughput:g} tps"))
            if self.include_knob_knowledge and self._knob_lines:
                tuned_names = [k.name for k in self.space.knobs if k.name in state.tuned]
                if tuned_names:
                    sections.append(("Tuned knobs", self._knob_section(tuned_names)))
            add_static("hardware", "Hardware")
            sections.append(("Tuned configuration", self._tuned_section(state)))

        return PromptBundle(
            kind=kind,
            instructions=INSTRUCTIONS[kind],
            sections=tuple(sections),
            reply_schema=REPLY_SHAPES.get(kind),
            state=state,
            context=context,
        )

    # -- mechanical validation

    def mechanical_check(self, config: Configuration) -> tuple[ValidationIssue, ...]:
        """Range and format violations, computed without any backend."""
        issues = []
        for knob in self.space.knobs:
            if knob.name not in config.assignments:
                issues.append(
                    ValidationIssue(knob.name, "format", "no value assigned")
                )
                continue
            v = config.assignments[knob.name]
            if not knob.permits(v):
                issues.append(_issue_for(knob, v))
        return tuple(issues)

    # -- state transition

    def apply_action(
        self,
        state: SearchState,
        action: ActionInstance,
        evaluator: Evaluator | None = None,
    ) -> SearchState:
        """Pure successor computation, except for evaluator calls."""
        kind = action.kind
        if kind not in self.valid_next(state.last_action):
            raise IllegalTransition(f"{kind.value} cannot follow {state.last_action.value}")
        if kind is ActionKind.FIX and not state.pending_issues:
            raise IllegalTransition("fix requires pending validation issues")
        if kind in (ActionKind.EVALUATE, ActionKind.FEEDBACK) and evaluator is None:
            raise ConfigError(f"{kind.value} needs an evaluator")

        base = dict(
            last_action=kind,
            depth=state.depth + 1,
        )

        if kind is ActionKind.PLAN:
            return replace(state, plan=action.payload, **base)

        if kind is ActionKind.CLUSTER_TUNE:
            payload: ClusterTunePayload = action.payload
            return replace(
                state,
                config=merge_subconfig(state.config, payload.assignments),
                tuned=state.tuned | frozenset(payload.assignments),
                untuned_clusters=state.untuned_clusters - {payload.cluster},
                adjustments_since_validation=state.adjustments_since_validation + 1,
                adjustments_since_evaluation=state.adjustments_since_evaluation + 1,
                cluster_tunes=state.cluster_tunes + 1,
                **base,
            )

        if kind is ActionKind.SINGLE_KNOB:
            sk: SingleKnobPayload = action.payload
            return replace(
                state,
                config=merge_subconfig(state.config, {sk.knob: sk.value}),
                tuned=state.tuned | {sk.knob},
                adjustments_since_validation=state.adjustments_since_validation + 1,
                adjustments_since_evaluation=state.adjustments_since_evaluation + 1,
                **base,
            )

        if kind is ActionKind.VALIDATE:
            vp: ValidatePayload = action.payload
            mechanical = self.mechanical_check(state.config)
            logical = vp.logical_issues if not vp.logical_valid else ()
            valid = not mechanical and vp.logical_valid
            issues = tuple(mechanical) + tuple(logical)
            report = ValidationReport(valid=valid, issues=() if valid else issues)
            return replace(
                state,
                last_validation=report,
                pending_issues=() if valid else issues,
                adjustments_since_validation=0,
                **base,
            )

        if kind is ActionKind.FIX:
            fp: FixPayload = action.payload
            return replace(
                state,
                config=merge_subconfig(state.config, fp.assignments),
                tuned=state.tuned | frozenset(fp.assignments),
                pending_issues=(),
                **base,
            )

        if kind is ActionKind.EVALUATE:
            result = self._run_eval(evaluator, state.config)
            return replace(
                state,
                last_eval=result,
                adjustments_since_evaluation=0,
                **base,
            )

        if kind is ActionKind.FEEDBACK:
            fb: FeedbackPayload = action.payload
            config = merge_subconfig(state.config, fb.assignments)
            result = self._run_eval(evaluator, config)
            return replace(
                state,
                config=config,
                tuned=state.tuned | frozenset(fb.assignments),
                feedback_round=state.feedback_round + 1,
                last_eval=result,
                **base,
            )

        if kind is ActionKind.TERMINAL:
            tp: TerminalPayload = action.payload
            return replace(state, terminal_reason=tp.reason, **base)

        raise IllegalTransition(f"cannot apply {kind.value}")

    def _run_eval(self, evaluator: Evaluator, config: Configuration) -> EvalResult:
        try:
            return evaluator.evaluate(config, self.workload)
        except EvaluatorError as exc:
            # mid-search failures become failed results, not aborts
            return EvalResult(
                throughput=0.0,
                run_errors=(RunError("evaluator", str(exc)),),
                failed=True,
            )


def _effective_transitions(
    disabled: frozenset[ActionKind],
) -> tuple[dict[ActionKind, frozenset[ActionKind]], dict[ActionKind, frozenset[ActionKind]]]:
    table: dict[ActionKind, set[ActionKind]] = {
        k: set(v) for k, v in TRANSITIONS.items()
    }
    replacement: dict[ActionKind, set[ActionKind]] = {}
    for d in sorted(disabled, key=lambda k: KIND_ORDER[k]):
        succ = table[d] - {d}
        replacement[d] = succ
        for k in table:
            if d in table[k]:
                table[k] = (table[k] - {d}) | succ
        del table[d]
    for _ in range(len(replacement)):
        changed = False
        for d, succ in replacement.items():
            resolved: set[ActionKind] = set()
            for s in succ:
                if s in replacement:
                    resolved |= replacement[s]
                    changed = True
                else:
                    resolved.add(s)
            replacement[d] = resolved
        if not changed:
            break
    return (
        {k: frozenset(v) for k, v in table.items()},
        {d: frozenset(s) for d, s in replacement.items()},
    )
