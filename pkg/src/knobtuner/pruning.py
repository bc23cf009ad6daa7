"""Search-space pruning rules.

Two rule families: expansion-time filters that narrow which action kinds a
node may expand (stage-aware progression, validation and evaluation
spacing), and outcome gates consulted once when a validation, evaluation,
or feedback node is born (branch termination, forced fixes, feedback
admission). Outcome decisions are frozen into the node at birth so a later
shift of the best-so-far throughput cannot rewrite history.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .actions import ActionEngine, ActionKind, SearchState, ValidationReport
from .errors import ConfigError

FLOOR_REFERENCES = ("baseline", "first_eval")


class Verdict(Enum):
    RESTRICT = "restrict"
    TERMINATE = "terminate"
    REDIRECT = "redirect"


@dataclass(frozen=True)
class PruneDecision:
    verdict: Verdict
    allowed: frozenset[ActionKind] = frozenset()
    reason: str = ""

    def __post_init__(self):
        if self.verdict in (Verdict.TERMINATE, Verdict.REDIRECT) and not self.reason:
            raise ConfigError(f"{self.verdict.value} decisions need a reason")
        if self.verdict in (Verdict.RESTRICT, Verdict.REDIRECT) and not self.allowed:
            raise ConfigError(f"{self.verdict.value} decisions need an allowed set")


@dataclass(frozen=True)
class PruningParams:
    enabled: bool = True
    min_adjustments_before_validation: int = 2
    min_adjustments_before_evaluation: int = 3
    eval_suppression_window: int = 3
    max_evals_in_window: int = 1
    validation_dedup_window: int = 3
    eval_floor_ratio: float = 0.9
    feedback_gate_ratio: float = 0.8
    feedback_degrade_ratio: float = 0.1
    max_feedback_rounds: int = 3
    floor_reference: str = "baseline"

    def __post_init__(self):
        for name in ("eval_floor_ratio", "feedback_gate_ratio", "feedback_degrade_ratio"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1]")
        for name in ("eval_suppression_window", "validation_dedup_window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.floor_reference not in FLOOR_REFERENCES:
            raise ConfigError(f"floor_reference must be one of {FLOOR_REFERENCES}")

    @classmethod
    def disabled(cls) -> "PruningParams":
        return cls(enabled=False)

    def to_dict(self) -> dict:
        return {
            "enabled": self.enabled,
            "min_adjustments_before_validation": self.min_adjustments_before_validation,
            "min_adjustments_before_evaluation": self.min_adjustments_before_evaluation,
            "eval_suppression_window": self.eval_suppression_window,
            "max_evals_in_window": self.max_evals_in_window,
            "validation_dedup_window": self.validation_dedup_window,
            "eval_floor_ratio": self.eval_floor_ratio,
            "feedback_gate_ratio": self.feedback_gate_ratio,
            "feedback_degrade_ratio": self.feedback_degrade_ratio,
            "max_feedback_rounds": self.max_feedback_rounds,
            "floor_reference": self.floor_reference,
        }

    @classmethod
    def from_dict(cls, d) -> "PruningParams":
        return cls(**dict(d))


# ---------------------------------------------------------------------------
# outcome gates (pure functions over raw action kinds)


def after_validation(
    report: ValidationReport,
    recent_issue_sets: Sequence[frozenset[str]],
    dedup_window: int,
) -> PruneDecision:
    """Gate applied when a validation node is born.

    `recent_issue_sets` lists the issue-knob sets of invalid validations on
    the path, nearest ancestor first.
    """
    if report.valid:
        return PruneDecision(
            Verdict.RESTRICT,
            frozenset(
                {ActionKind.CLUSTER_TUNE, ActionKind.SINGLE_KNOB, ActionKind.EVALUATE}
            ),
        )
    knobs = report.issue_knobs()
    for past in list(recent_issue_sets)[:dedup_window]:
        if past == knobs:
            return PruneDecision(
                Verdict.TERMINATE,
                reason="validation flagged the same knobs as a recent ancestor: "
                + ", ".join(sorted(knobs)),
            )
    return PruneDecision(Verdict.RESTRICT, frozenset({ActionKind.FIX}))


def after_evaluation(
    throughput: float,
    failed: bool,
    floor_reference: float,
    baseline: float,
    best: float,
    params: PruningParams,
) -> PruneDecision:
    """Gate applied when an evaluation node is born.

    `best` must already include this node's throughput, so a new best
    always clears its own gate.
    """
    if failed or throughput < params.eval_floor_ratio * floor_reference:
        return PruneDecision(
            Verdict.TERMINATE,
            reason=(
                "evaluation failed"
                if failed
                else f"throughput {throughput:g} is below "
                f"{params.eval_floor_ratio:g} of the reference {floor_reference:g}"
            ),
        )
    gate = baseline + params.feedback_gate_ratio * (best - baseline)
    if throughput >= gate:
        return PruneDecision(
            Verdict.RESTRICT, frozenset({ActionKind.FEEDBACK, ActionKind.TERMINAL})
        )
    return PruneDecision(
        Verdict.REDIRECT,
        frozenset({ActionKind.PLAN, ActionKind.TERMINAL}),
        reason=f"throughput {throughput:g} did not reach the feedback gate {gate:g}",
    )


def after_feedback(
    new_throughput: float,
    failed: bool,
    prev_throughput: float,
    feedback_round: int,
    params: PruningParams,
) -> PruneDecision:
    """Gate applied when a feedback node is born."""
    floor = (1.0 - params.feedback_degrade_ratio) * prev_throughput
    if failed or new_throughput < floor:
        return PruneDecision(
            Verdict.TERMINATE,
            reason=(
                "feedback evaluation failed"
                if failed
                else f"feedback regressed throughput {prev_throughput:g} -> "
                f"{new_throughput:g}, more than "
                f"{params.feedback_degrade_ratio:.0%}"
            ),
        )
    if feedback_round >= params.max_feedback_rounds:
        return PruneDecision(
            Verdict.TERMINATE,
            reason=f"feedback budget of {params.max_feedback_rounds} rounds used up",
        )
    return PruneDecision(Verdict.RESTRICT, frozenset({ActionKind.TERMINAL}))


# ---------------------------------------------------------------------------
# orchestration


class Pruner:
    """Applies the rules through the engine's ablation-adjusted transitions."""

    def __init__(self, params: PruningParams, engine: ActionEngine):
        self.params = params
        self.engine = engine

    def allowed_actions(
        self,
        state: SearchState,
        allowed: frozenset[ActionKind],
        recent_kinds: Sequence[ActionKind],
    ) -> frozenset[ActionKind]:
        """Expansion-time filter.

        `recent_kinds` lists the last actions on the path including this
        node's own, nearest first.
        """
        if not self.params.enabled:
            return allowed
        p = self.params
        out = allowed

        # stage progression: no other moves until the first cluster tune
        if (
            state.cluster_tunes == 0
            and ActionKind.CLUSTER_TUNE in out
            and ActionKind.CLUSTER_TUNE not in self.engine.disabled_kinds
        ):
            out = out & frozenset({ActionKind.CLUSTER_TUNE})

        # validation spacing; a fresh fix must still reach its re-validation
        if (
            ActionKind.VALIDATE in out
            and state.last_action is not ActionKind.FIX
            and state.adjustments_since_validation < p.min_adjustments_before_validation
        ):
            out = out - {ActionKind.VALIDATE}

        # evaluation spacing and local density cap
        if ActionKind.EVALUATE in out:
            if state.adjustments_since_evaluation < p.min_adjustments_before_evaluation:
                out = out - {ActionKind.EVALUATE}
            else:
                window = list(recent_kinds)[: p.eval_suppression_window]
                if window.count(ActionKind.EVALUATE) > p.max_evals_in_window:
                    out = out - {ActionKind.EVALUATE}

        # verdict-driven restriction, rederived from state for completeness
        if state.last_action is ActionKind.VALIDATE and state.last_validation is not None:
            if state.last_validation.valid:
                out = out & self.engine.map_targets(
                    frozenset(
                        {
                            ActionKind.CLUSTER_TUNE,
                            ActionKind.SINGLE_KNOB,
                            ActionKind.EVALUATE,
                        }
                    )
                )
            else:
                out = out & frozenset({ActionKind.FIX})
        return out

    def decide_for_child(
        self,
        child_state: SearchState,
        parent_state: SearchState,
        ancestor_states: Sequence[SearchState],
        floor_reference: float,
        baseline: float,
        best: float,
    ) -> PruneDecision | None:
        """Outcome gate for a freshly created node, or None when no gate applies.

        `ancestor_states` is the path above the child, nearest first. The
        returned allowed sets are already routed around disabled kinds.
        """
        if not self.params.enabled:
            return None
        kind = child_state.last_action

        if kind is ActionKind.VALIDATE:
            report = child_state.last_validation
            recent = [
                s.last_validation.issue_knobs()
                for s in list(ancestor_states)[: self.params.validation_dedup_window]
                if s.last_action is ActionKind.VALIDATE
                and s.last_validation is not None
                and not s.last_validation.valid
            ]
            decision = after_validation(report, recent, self.params.validation_dedup_window)
        elif kind is ActionKind.EVALUATE:
            result = child_state.last_eval
            decision = after_evaluation(
                result.throughput,
                result.failed,
                floor_reference,
                baseline,
                best,
                self.params,
            )
        elif kind is ActionKind.FEEDBACK:
            result = child_state.last_eval
            prev = parent_state.last_eval
            decision = after_feedback(
                result.throughput,
                result.failed,
                prev.throughput if prev is not None else baseline,
                child_state.feedback_round,
                self.params,
            )
        else:
            return None

        if decision.verdict is Verdict.TERMINATE:
            return decision
        mapped = self.engine.map_targets(decision.allowed)
        return PruneDecision(decision.verdict, mapped, decision.reason)
