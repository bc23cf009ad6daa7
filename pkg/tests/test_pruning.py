"""Pruning gates and expansion-time filters."""
from dataclasses import replace

import pytest

from knobtuner.actions import (
    ActionEngine,
    ActionKind,
    ValidationIssue,
    ValidationReport,
    initial_state,
)
from knobtuner.errors import ConfigError
from knobtuner.evaluation import EvalResult
from knobtuner.pruning import (
    PruneDecision,
    Pruner,
    PruningParams,
    Verdict,
    after_evaluation,
    after_feedback,
    after_validation,
)

K = ActionKind
ALL_AFTER_CT = frozenset({K.CLUSTER_TUNE, K.SINGLE_KNOB, K.VALIDATE, K.EVALUATE})


def invalid_report(*knobs):
    issues = tuple(ValidationIssue(k, "range", "bad") for k in knobs)
    return ValidationReport(valid=False, issues=issues)


def state_with(space, **fields):
    return replace(initial_state(space), **fields)


@pytest.fixture(scope="module")
def engine(tiny_setup):
    space, bundle = tiny_setup
    return ActionEngine(space, bundle)


# -- decision and parameter validation


def test_prune_decision_requirements():
    with pytest.raises(ConfigError):
        PruneDecision(Verdict.TERMINATE)
    with pytest.raises(ConfigError):
        PruneDecision(Verdict.RESTRICT)
    with pytest.raises(ConfigError):
        PruneDecision(Verdict.REDIRECT, allowed=frozenset({K.PLAN}))
    PruneDecision(Verdict.TERMINATE, reason="because")
    PruneDecision(Verdict.REDIRECT, allowed=frozenset({K.PLAN}), reason="because")


def test_pruning_params_validation():
    with pytest.raises(ConfigError):
        PruningParams(eval_floor_ratio=0.0)
    with pytest.raises(ConfigError):
        PruningParams(feedback_gate_ratio=1.5)
    with pytest.raises(ConfigError):
        PruningParams(validation_dedup_window=0)
    with pytest.raises(ConfigError):
        PruningParams(floor_reference="median")
    assert not PruningParams.disabled().enabled
    p = PruningParams(eval_floor_ratio=0.75, max_feedback_rounds=5)
    assert PruningParams.from_dict(p.to_dict()) == p


# -- gate: validation


def test_valid_report_restricts_to_progress_moves():
    d = after_validation(ValidationReport(valid=True), [], dedup_window=3)
    assert d.verdict is Verdict.RESTRICT
    assert d.allowed == {K.CLUSTER_TUNE, K.SINGLE_KNOB, K.EVALUATE}


def test_repeated_issue_set_terminates_the_branch():
    report = invalid_report("a", "b")
    history = [frozenset({"a", "b"})]
    d = after_validation(report, history, dedup_window=3)
    assert d.verdict is Verdict.TERMINATE
    assert "a, b" in d.reason


def test_new_issue_set_forces_a_fix():
    report = invalid_report("a", "b")
    d = after_validation(report, [frozenset({"a"})], dedup_window=3)
    assert d.verdict is Verdict.RESTRICT
    assert d.allowed == {K.FIX}


def test_dedup_window_limits_the_lookback():
    report = invalid_report("a")
    history = [frozenset({"x"}), frozenset({"y"}), frozenset({"z"}), frozenset({"a"})]
    d = after_validation(report, history, dedup_window=3)
    assert d.verdict is Verdict.RESTRICT  # the match sits outside the window
    d = after_validation(report, history, dedup_window=4)
    assert d.verdict is Verdict.TERMINATE


# -- gate: evaluation


def test_failed_evaluation_terminates():
    d = after_evaluation(0.0, True, 1000.0, 1000.0, 1500.0, PruningParams())
    assert d.verdict is Verdict.TERMINATE
    assert d.reason == "evaluation failed"


def test_throughput_below_floor_terminates():
    d = after_evaluation(899.9, False, 1000.0, 1000.0, 1500.0, PruningParams())
    assert d.verdict is Verdict.TERMINATE
    assert "899.9" in d.reason and "1000" in d.reason
    d = after_evaluation(900.0, False, 1000.0, 1000.0, 1500.0, PruningParams())
    assert d.verdict is not Verdict.TERMINATE


def test_feedback_gate_boundary():
    # gate = 1000 + 0.8 * (1500 - 1000) = 1400
    params = PruningParams()
    d = after_evaluation(1400.0, False, 1000.0, 1000.0, 1500.0, params)
    assert d.verdict is Verdict.RESTRICT
    assert d.allowed == {K.FEEDBACK, K.TERMINAL}
    d = after_evaluation(1399.9, False, 1000.0, 1000.0, 1500.0, params)
    assert d.verdict is Verdict.REDIRECT
    assert d.allowed == {K.PLAN, K.TERMINAL}
    assert "1400" in d.reason


def test_new_best_always_clears_its_own_gate():
    # best already includes the new throughput
    d = after_evaluation(1600.0, False, 1000.0, 1000.0, 1600.0, PruningParams())
    assert d.verdict is Verdict.RESTRICT


# -- gate: feedback


def test_feedback_regression_terminates():
    params = PruningParams()
    d = after_feedback(899.9, False, 1000.0, 1, params)
    assert d.verdict is Verdict.TERMINATE
    assert "899.9" in d.reason
    d = after_feedback(0.0, True, 1000.0, 1, params)
    assert d.verdict is Verdict.TERMINATE
    assert d.reason == "feedback evaluation failed"


def test_feedback_round_budget():
    params = PruningParams()  # max_feedback_rounds = 3
    ok = after_feedback(1000.0, False, 1000.0, 2, params)
    assert ok.verdict is Verdict.RESTRICT and ok.allowed == {K.TERMINAL}
    out = after_feedback(1000.0, False, 1000.0, 3, params)
    assert out.verdict is Verdict.TERMINATE
    assert "3 rounds" in out.reason


# -- expansion-time filters


def test_disabled_pruning_passes_everything_through(engine):
    pruner = Pruner(PruningParams.disabled(), engine)
    state = state_with(engine.space, last_action=K.PLAN, depth=1)
    assert pruner.allowed_actions(state, ALL_AFTER_CT, []) == ALL_AFTER_CT


def test_first_move_must_be_a_cluster_tune(engine):
    pruner = Pruner(PruningParams(), engine)
    state = state_with(engine.space, last_action=K.PLAN, depth=1)
    allowed = frozenset({K.CLUSTER_TUNE, K.SINGLE_KNOB})
    assert pruner.allowed_actions(state, allowed, [K.PLAN]) == {K.CLUSTER_TUNE}
    warmed = replace(state, cluster_tunes=1)
    assert pruner.allowed_actions(warmed, allowed, [K.PLAN]) == allowed


def test_stage_rule_skipped_when_cluster_tune_is_disabled(tiny_setup):
    space, bundle = tiny_setup
    engine = ActionEngine(space, bundle, disabled_kinds=frozenset({K.CLUSTER_TUNE}))
    pruner = Pruner(PruningParams(), engine)
    state = state_with(space, last_action=K.PLAN, depth=1)
    allowed = frozenset({K.SINGLE_KNOB})
    assert pruner.allowed_actions(state, allowed, [K.PLAN]) == {K.SINGLE_KNOB}


def test_validation_needs_enough_adjustments(engine):
    pruner = Pruner(PruningParams(), engine)  # min 2 adjustments
    state = state_with(
        engine.space,
        last_action=K.CLUSTER_TUNE,
        cluster_tunes=1,
        adjustments_since_validation=1,
        adjustments_since_evaluation=1,
    )
    out = pruner.allowed_actions(state, ALL_AFTER_CT, [K.CLUSTER_TUNE])
    assert K.VALIDATE not in out
    ready = replace(state, adjustments_since_validation=2)
    out = pruner.allowed_actions(ready, ALL_AFTER_CT, [K.CLUSTER_TUNE])
    assert K.VALIDATE in out


def test_fresh_fix_is_exempt_from_validation_spacing(engine):
    pruner = Pruner(PruningParams(), engine)
    state = state_with(
        engine.space,
        last_action=K.FIX,
        cluster_tunes=1,
        adjustments_since_validation=0,
        pending_issues=(),
    )
    out = pruner.allowed_actions(state, frozenset({K.VALIDATE}), [K.FIX])
    assert out == {K.VALIDATE}


def test_evaluation_spacing_and_density_cap(engine):
    pruner = Pruner(PruningParams(), engine)  # min 3 adjustments, window 3, max 1
    base = state_with(
        engine.space,
        last_action=K.CLUSTER_TUNE,
        cluster_tunes=1,
        adjustments_since_validation=2,
    )
    sparse = replace(base, adjustments_since_evaluation=2)
    out = pruner.allowed_actions(sparse, ALL_AFTER_CT, [K.CLUSTER_TUNE])
    assert K.EVALUATE not in out
    ready = replace(base, adjustments_since_evaluation=3)
    out = pruner.allowed_actions(ready, ALL_AFTER_CT, [K.CLUSTER_TUNE])
    assert K.EVALUATE in out
    crowded = [K.CLUSTER_TUNE, K.EVALUATE, K.EVALUATE]
    out = pruner.allowed_actions(ready, ALL_AFTER_CT, crowded)
    assert K.EVALUATE not in out
    spaced = [K.CLUSTER_TUNE, K.EVALUATE, K.CLUSTER_TUNE, K.EVALUATE]
    out = pruner.allowed_actions(ready, ALL_AFTER_CT, spaced)
    assert K.EVALUATE in out


def test_validation_verdict_restricts_successors(engine):
    pruner = Pruner(PruningParams(), engine)
    valid_state = state_with(
        engine.space,
        last_action=K.VALIDATE,
        cluster_tunes=1,
        last_validation=ValidationReport(valid=True),
        adjustments_since_evaluation=3,
    )
    allowed = frozenset({K.CLUSTER_TUNE, K.SINGLE_KNOB, K.FIX, K.EVALUATE, K.TERMINAL})
    out = pruner.allowed_actions(valid_state, allowed, [K.VALIDATE])
    assert out == {K.CLUSTER_TUNE, K.SINGLE_KNOB, K.EVALUATE}
    report = invalid_report("knob_00")
    flagged = replace(
        valid_state, last_validation=report, pending_issues=report.issues
    )
    out = pruner.allowed_actions(flagged, allowed, [K.VALIDATE])
    assert out == {K.FIX}


# -- outcome gates through the pruner


def test_decide_for_child_dedup_terminate(engine):
    pruner = Pruner(PruningParams(), engine)
    report = invalid_report("knob_00")
    child = state_with(
        engine.space,
        last_action=K.VALIDATE,
        last_validation=report,
        pending_issues=report.issues,
    )
    parent = state_with(engine.space, last_action=K.FIX)
    ancestor = state_with(
        engine.space, last_action=K.VALIDATE, last_validation=invalid_report("knob_00")
    )
    decision = pruner.decide_for_child(child, parent, [parent, ancestor], 0.0, 0.0, 0.0)
    assert decision.verdict is Verdict.TERMINATE
    fresh = pruner.decide_for_child(child, parent, [parent], 0.0, 0.0, 0.0)
    assert fresh.verdict is Verdict.RESTRICT and fresh.allowed == {K.FIX}


def test_decide_for_child_routes_around_disabled_feedback(tiny_setup):
    space, bundle = tiny_setup
    engine = ActionEngine(space, bundle, disabled_kinds=frozenset({K.FEEDBACK}))
    pruner = Pruner(PruningParams(), engine)
    child = state_with(
        space,
        last_action=K.EVALUATE,
        last_eval=EvalResult(throughput=1500.0),
    )
    parent = state_with(space, last_action=K.CLUSTER_TUNE)
    decision = pruner.decide_for_child(child, parent, [parent], 1000.0, 1000.0, 1500.0)
    assert decision.verdict is Verdict.RESTRICT
    assert decision.allowed == {K.TERMINAL}  # feedback mapped away


def test_decide_for_child_feedback_uses_parent_throughput(engine):
    pruner = Pruner(PruningParams(), engine)
    parent = state_with(
        engine.space, last_action=K.EVALUATE, last_eval=EvalResult(throughput=1000.0)
    )
    child = state_with(
        engine.space,
        last_action=K.FEEDBACK,
        last_eval=EvalResult(throughput=850.0),
        feedback_round=1,
    )
    decision = pruner.decide_for_child(child, parent, [parent], 500.0, 500.0, 1000.0)
    assert decision.verdict is Verdict.TERMINATE  # 850 < 0.9 * 1000
    improved = replace(child, last_eval=EvalResult(throughput=980.0))
    decision = pruner.decide_for_child(improved, parent, [parent], 500.0, 500.0, 1000.0)
    assert decision.verdict is Verdict.RESTRICT and decision.allowed == {K.TERMINAL}


def test_decide_for_child_ignores_non_reward_kinds(engine):
    pruner = Pruner(PruningParams(), engine)
    child = state_with(engine.space, last_action=K.CLUSTER_TUNE)
    assert pruner.decide_for_child(child, child, [], 0.0, 0.0, 0.0) is None
    off = Pruner(PruningParams.disabled(), engine)
    eval_child = state_with(
        engine.space, last_action=K.EVALUATE, last_eval=EvalResult(throughput=1.0)
    )
    assert off.decide_for_child(eval_child, child, [], 0.0, 0.0, 0.0) is None
