"""Search-based configuration tuning for blockchain systems.

Knowledge about knobs and the deployment feeds a Monte Carlo tree search
whose actions (plan, tune, validate, fix, evaluate, refine) are proposed
by a pluggable decision backend and scored against a benchmark evaluator.
"""

from .actions import (
    ActionEngine,
    ActionInstance,
    ActionKind,
    PromptBundle,
    SearchState,
    TRANSITIONS,
    ValidationIssue,
    ValidationReport,
    build_instance,
    initial_state,
    valid_next,
)
from .backends import (
    BackendUsage,
    DecisionBackend,
    OracleBackend,
    RandomBackend,
    RemoteBackend,
    ReplayBackend,
    scripted_oracle,
)
from .errors import KnobTunerError
from .evaluation import (
    EvalResult,
    Evaluator,
    ExternalCommandEvaluator,
    RunError,
    SyntheticModel,
    build_synthetic,
    external_adapter,
)
from .knowledge import (
    KnobKnowledge,
    KnobRecord,
    KnowledgeBundle,
    build_space,
    extract_knob_knowledge,
    load_bundle,
    parse_knob_doc,
    parse_system_doc,
)
from .mcts import (
    BestTracker,
    MctsParams,
    NodeStats,
    SearchSession,
    SearchTree,
    backpropagate,
    compute_reward,
    feedback_reward,
    run_search,
    select_child,
    throughput_reward,
    uct_score,
    validation_reward,
)
from .pruning import (
    PruneDecision,
    Pruner,
    PruningParams,
    Verdict,
    after_evaluation,
    after_feedback,
    after_validation,
)
from .session import (
    AblationToggles,
    SessionConfig,
    SessionReport,
    emit_report,
    run_repeated,
    run_session,
)
from .space import (
    Cluster,
    ConfigSpace,
    Configuration,
    Knob,
    SystemContext,
    WorkloadSpec,
    diff_configs,
    merge_subconfig,
)

__version__ = "0.1.0"

__all__ = [
    "ActionEngine",
    "ActionInstance",
    "ActionKind",
    "AblationToggles",
    "BackendUsage",
    "BestTracker",
    "Cluster",
    "ConfigSpace",
    "Configuration",
    "DecisionBackend",
    "EvalResult",
    "Evaluator",
    "ExternalCommandEvaluator",
    "Knob",
    "KnobKnowledge",
    "KnobRecord",
    "KnobTunerError",
    "KnowledgeBundle",
    "MctsParams",
    "NodeStats",
    "OracleBackend",
    "PromptBundle",
    "PruneDecision",
    "Pruner",
    "PruningParams",
    "RandomBackend",
    "RemoteBackend",
    "ReplayBackend",
    "RunError",
    "SearchSession",
    "SearchState",
    "SearchTree",
    "SessionConfig",
    "SessionReport",
    "SyntheticModel",
    "SystemContext",
    "TRANSITIONS",
    "ValidationIssue",
    "ValidationReport",
    "Verdict",
    "WorkloadSpec",
    "after_evaluation",
    "after_feedback",
    "after_validation",
    "backpropagate",
    "build_instance",
    "build_space",
    "build_synthetic",
    "compute_reward",
    "diff_configs",
    "emit_report",
    "extract_knob_knowledge",
    "external_adapter",
    "feedback_reward",
    "initial_state",
    "load_bundle",
    "merge_subconfig",
    "parse_knob_doc",
    "parse_system_doc",
    "run_repeated",
    "run_search",
    "run_session",
    "scripted_oracle",
    "select_child",
    "throughput_reward",
    "uct_score",
    "valid_next",
    "validation_reward",
]
