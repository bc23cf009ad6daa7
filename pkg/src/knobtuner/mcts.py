"""Monte Carlo tree search over tuning states.

Each rollout walks the tree from the root: expanded nodes are descended by
UCT, the first unexpanded node is expanded through the backend, and the
walk continues inside the freshly created subtree until it hits a terminal
node, a pruned dead end, or the depth cap. The whole walked trajectory is
backpropagated with the reward of the last reward-bearing node on it.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Mapping, Sequence

from .actions import (
    KIND_ORDER,
    REWARD_KINDS,
    ActionEngine,
    ActionInstance,
    ActionKind,
    DETERMINISTIC_KINDS,
    SearchState,
    build_instance,
    initial_state,
)
from .backends import DecisionBackend
from .errors import (
    AllCandidatesRejected,
    AllChildrenPruned,
    ConfigError,
    MissingBaseline,
    NoViableChildren,
)
from .evaluation import EvalResult, Evaluator
from .pruning import Pruner, Verdict
from .space import Configuration

REWARD_BRANCHES = ("verbatim", "mirrored")


@dataclass(frozen=True)
class MctsParams:
    exploration_c: float = math.sqrt(2)
    proposal_k: int = 3
    max_rollouts: int = 30
    max_depth: int = 40
    target_throughput: float | None = None
    seed: int = 0
    negative_reward_branch: str = "verbatim"

    def __post_init__(self):
        if self.exploration_c <= 0:
            raise ConfigError("exploration_c must be positive")
        if self.proposal_k < 1:
            raise ConfigError("proposal_k must be at least 1")
        if self.max_rollouts < 1:
            raise ConfigError("max_rollouts must be at least 1")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be at least 1")
        if self.negative_reward_branch not in REWARD_BRANCHES:
            raise ConfigError(
                f"negative_reward_branch must be one of {REWARD_BRANCHES}"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "exploration_c": self.exploration_c,
            "proposal_k": self.proposal_k,
            "max_rollouts": self.max_rollouts,
            "max_depth": self.max_depth,
            "target_throughput": self.target_throughput,
            "seed": self.seed,
            "negative_reward_branch": self.negative_reward_branch,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MctsParams":
        return cls(**dict(d))


# ---------------------------------------------------------------------------
# rewards


def throughput_reward(t: float, t_default: float, branch: str = "verbatim") -> float:
    """Exponential of the relative gain; sign flips below the baseline.

    The positive and negative branches meet discontinuously at t_default
    (limit from below is -1, the value at equality is +1). The mirrored
    branch instead returns -e^{-(t-t_default)/t_default}, which deepens the
    penalty as t falls.
    """
    if t_default is None or t_default <= 0:
        raise MissingBaseline("throughput reward needs a positive baseline")
    x = (t - t_default) / t_default
    if t >= t_default:
        return math.exp(x)
    if branch == "mirrored":
        return -math.exp(-x)
    return -math.exp(x)


def validation_reward(valid: bool) -> float:
    return 1.0 if valid else -1.0


def feedback_reward(t: float, t_default: float, branch: str = "verbatim") -> float:
    return 1.5 * throughput_reward(t, t_default, branch)


def compute_reward(state: SearchState, t_default: float | None, branch: str = "verbatim") -> float:
    """Reward of a reward-bearing state (validation, evaluation, feedback)."""
    kind = state.last_action
    if kind is ActionKind.VALIDATE:
        if state.last_validation is None:
            raise ConfigError("validation state without a report")
        return validation_reward(state.last_validation.valid)
    if t_default is None or t_default <= 0:
        raise MissingBaseline("rewards need a measured baseline throughput")
    if kind is ActionKind.EVALUATE:
        return throughput_reward(state.last_eval.throughput, t_default, branch)
    if kind is ActionKind.FEEDBACK:
        return feedback_reward(state.last_eval.throughput, t_default, branch)
    raise ConfigError(f"{kind.value} carries no reward")


# ---------------------------------------------------------------------------
# tree plumbing


@dataclass
class TreeNode:
    id: int
    state: SearchState
    parent_id: int | None
    action: ActionInstance | None
    children: list[int] = field(default_factory=list)
    expanded: bool = False
    pruned: bool = False
    prune_reason: str = ""
    allowed_override: frozenset[ActionKind] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "state": self.state.to_dict(),
            "parent_id": self.parent_id,
            "action": self.action.to_dict() if self.action else None,
            "children": list(self.children),
            "expanded": self.expanded,
            "pruned": self.pruned,
            "prune_reason": self.prune_reason,
            "allowed_override": (
                sorted(k.value for k in self.allowed_override)
                if self.allowed_override is not None
                else None
            ),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TreeNode":
        override = d.get("allowed_override")
        return cls(
            id=int(d["id"]),
            state=SearchState.from_dict(d["state"]),
            parent_id=d["parent_id"],
            action=ActionInstance.from_dict(d["action"]) if d.get("action") else None,
            children=list(d["children"]),
            expanded=bool(d["expanded"]),
            pruned=bool(d["pruned"]),
            prune_reason=d.get("prune_reason", ""),
            allowed_override=(
                frozenset(ActionKind(v) for v in override) if override is not None else None
            ),
        )


class SearchTree:
    def __init__(self, root_state: SearchState):
        self.nodes: list[TreeNode] = [
            TreeNode(id=0, state=root_state, parent_id=None, action=None)
        ]

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    def node(self, node_id: int) -> TreeNode:
        return self.nodes[node_id]

    def __len__(self) -> int:
        return len(self.nodes)

    def add_child(
        self, parent: TreeNode, state: SearchState, action: ActionInstance
    ) -> TreeNode:
        node = TreeNode(
            id=len(self.nodes), state=state, parent_id=parent.id, action=action
        )
        self.nodes.append(node)
        parent.children.append(node.id)
        return node

    def ancestors(self, node_id: int) -> Iterator[TreeNode]:
        """Parent chain, nearest first, excluding the node itself."""
        parent_id = self.nodes[node_id].parent_id
        while parent_id is not None:
            node = self.nodes[parent_id]
            yield node
            parent_id = node.parent_id

    def live_children(self, node: TreeNode) -> list[int]:
        return [cid for cid in node.children if not self.nodes[cid].pruned]

    def action_counts(self) -> dict[str, int]:
        counts = {kind.value: 0 for kind in ActionKind if kind is not ActionKind.ROOT}
        for node in self.nodes[1:]:
            counts[node.state.last_action.value] += 1
        return counts

    def to_dict(self) -> dict[str, Any]:
        return {"nodes": [n.to_dict() for n in self.nodes]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SearchTree":
        tree = cls.__new__(cls)
        tree.nodes = [TreeNode.from_dict(nd) for nd in d["nodes"]]
        return tree


class NodeStats:
    """Edge statistics keyed by child node id (edges are unique per child)."""

    def __init__(self):
        self.edge_q: dict[int, float] = {}
        self.edge_n: dict[int, int] = {}
        self.node_n: dict[int, int] = {}

    def to_dict(self) -> dict[str, Any]:
        return {
            "edge_q": {str(k): v for k, v in self.edge_q.items()},
            "edge_n": {str(k): v for k, v in self.edge_n.items()},
            "node_n": {str(k): v for k, v in self.node_n.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "NodeStats":
        stats = cls()
        stats.edge_q = {int(k): float(v) for k, v in d["edge_q"].items()}
        stats.edge_n = {int(k): int(v) for k, v in d["edge_n"].items()}
        stats.node_n = {int(k): int(v) for k, v in d["node_n"].items()}
        return stats


def uct_score(q_sum: float, n_edge: int, n_node: int, c: float) -> float:
    """Mean reward plus the exploration bonus; q_sum holds the reward sum."""
    return q_sum / n_edge + c * math.sqrt(math.log(n_node) / n_edge)


def select_child(
    tree: SearchTree, stats: NodeStats, node: TreeNode, c: float
) -> TreeNode:
    """Unvisited children first in insertion order, then best UCT."""
    live = tree.live_children(node)
    if not live:
        raise AllChildrenPruned(f"node {node.id} has no unpruned children")
    for cid in live:
        if stats.edge_n.get(cid, 0) == 0:
            return tree.node(cid)
    n_node = stats.node_n.get(node.id, 0)
    best_id = live[0]
    best_score = -math.inf
    for cid in live:
        score = uct_score(stats.edge_q[cid], stats.edge_n[cid], n_node, c)
        if score > best_score:
            best_score = score
            best_id = cid
    return tree.node(best_id)


def backpropagate(tree: SearchTree, trajectory: Sequence[TreeNode], r: float, stats: NodeStats) -> None:
    """Add r to every trajectory edge; parents count one visit per edge."""
    for node in trajectory:
        stats.edge_q[node.id] = stats.edge_q.get(node.id, 0.0) + r
        stats.edge_n[node.id] = stats.edge_n.get(node.id, 0) + 1
        stats.node_n[node.parent_id] = stats.node_n.get(node.parent_id, 0) + 1


# ---------------------------------------------------------------------------
# evaluation log


@dataclass
class EvalRecord:
    index: int
    source: str  # baseline, evaluate, or feedback
    throughput: float
    failed: bool
    error_stages: tuple[str, ...]
    assignments: dict[str, Any]
    node_id: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "source": self.source,
            "throughput": self.throughput,
            "failed": self.failed,
            "error_stages": list(self.error_stages),
            "assignments": dict(self.assignments),
            "node_id": self.node_id,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvalRecord":
        return cls(
            index=int(d["index"]),
            source=d["source"],
            throughput=float(d["throughput"]),
            failed=bool(d["failed"]),
            error_stages=tuple(d["error_stages"]),
            assignments=dict(d["assignments"]),
            node_id=d.get("node_id"),
        )


class BestTracker:
    """Evaluation log plus the running best; index 0 is the baseline."""

    def __init__(self):
        self.records: list[EvalRecord] = []
        self.baseline: float | None = None
        self.best_throughput: float = 0.0
        self.best_index: int | None = None
        self.best_assignments: dict[str, Any] = {}

    def record(
        self,
        source: str,
        result: EvalResult,
        config: Configuration,
        node_id: int | None = None,
    ) -> EvalRecord:
        rec = EvalRecord(
            index=len(self.records),
            source=source,
            throughput=result.throughput,
            failed=result.failed,
            error_stages=tuple(e.stage for e in result.run_errors),
            assignments=dict(config.assignments),
            node_id=node_id,
        )
        self.records.append(rec)
        if source == "baseline":
            self.baseline = result.throughput
        if rec.throughput > self.best_throughput or self.best_index is None:
            self.best_throughput = rec.throughput
            self.best_index = rec.index
            self.best_assignments = dict(config.assignments)
        return rec

    @property
    def first_eval(self) -> float | None:
        for rec in self.records[1:]:
            return rec.throughput
        return None

    @property
    def evaluations(self) -> int:
        """Post-baseline evaluation count."""
        return max(0, len(self.records) - 1)

    def n_neg(self) -> int:
        base = self.baseline or 0.0
        return sum(1 for r in self.records[1:] if r.throughput < base)

    def n_err(self) -> int:
        return sum(1 for r in self.records[1:] if r.failed or r.error_stages)

    def n_star(self) -> int | None:
        return self.best_index

    def to_dict(self) -> dict[str, Any]:
        return {
            "records": [r.to_dict() for r in self.records],
            "baseline": self.baseline,
            "best_throughput": self.best_throughput,
            "best_index": self.best_index,
            "best_assignments": dict(self.best_assignments),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BestTracker":
        tracker = cls()
        tracker.records = [EvalRecord.from_dict(r) for r in d["records"]]
        tracker.baseline = d["baseline"]
        tracker.best_throughput = float(d["best_throughput"])
        tracker.best_index = d["best_index"]
        tracker.best_assignments = dict(d["best_assignments"])
        return tracker


# ---------------------------------------------------------------------------
# the session


class SearchSession:
    """One tree search over one space; owns the tree exclusively.

    File IO, checkpoint cadence, and reporting live a layer up; this class
    only mutates in-memory state so tests can drive it directly.
    """

    def __init__(
        self,
        engine: ActionEngine,
        backend: DecisionBackend,
        evaluator: Evaluator,
        pruner: Pruner,
        params: MctsParams,
    ):
        self.engine = engine
        self.backend = backend
        self.evaluator = evaluator
        self.pruner = pruner
        self.params = params
        self.tree = SearchTree(initial_state(engine.space))
        self.stats = NodeStats()
        self.tracker = BestTracker()
        self.rollouts_done = 0
        self.stop_reason = ""
        self.last_trajectory: list[int] = []
        self.backend_wait = 0.0
        self.deploy_time = 0.0
        self.evaluation_time = 0.0
        self.kind_seconds: dict[str, float] = {}
        self.kind_counts: dict[str, int] = {}

    # -- baseline

    @property
    def workload(self):
        return self.engine.workload

    def measure_baseline(self) -> float:
        """Evaluates the default configuration; failures abort the session."""
        if self.tracker.baseline is not None:
            return self.tracker.baseline
        config = self.engine.space.default_configuration()
        result = self.evaluator.evaluate(config, self.workload)
        self._absorb_result_timing(result)
        if result.failed or result.throughput <= 0:
            stages = ", ".join(e.stage for e in result.run_errors) or "unknown"
            raise MissingBaseline(
                f"baseline measurement failed (stages: {stages}); "
                "rewards need a positive default throughput"
            )
        self.evaluator.baseline_measured = True
        self.tracker.record("baseline", result, config, node_id=0)
        return result.throughput

    # -- helpers

    @property
    def target_reached(self) -> bool:
        target = self.params.target_throughput
        return target is not None and self.tracker.best_throughput >= target

    def _floor_reference(self) -> float:
        if self.pruner.params.floor_reference == "first_eval":
            first = self.tracker.first_eval
            if first is not None:
                return first
        return self.tracker.baseline or 0.0

    def _absorb_result_timing(self, result: EvalResult) -> None:
        self.evaluation_time += result.wall_time
        self.deploy_time += result.deploy_time

    def _note_kind_time(self, kind: ActionKind, seconds: float, instances: int) -> None:
        self.kind_seconds[kind.value] = self.kind_seconds.get(kind.value, 0.0) + seconds
        self.kind_counts[kind.value] = self.kind_counts.get(kind.value, 0) + instances

    def _prune(self, node: TreeNode, reason: str) -> None:
        node.pruned = True
        node.prune_reason = node.prune_reason or reason
        parent_id = node.parent_id
        while parent_id is not None:
            parent = self.tree.node(parent_id)
            if not parent.expanded or self.tree.live_children(parent):
                break
            parent.pruned = True
            parent.prune_reason = parent.prune_reason or "all children pruned"
            parent_id = parent.parent_id

    # -- expansion

    def _recent_kinds(self, node: TreeNode) -> list[ActionKind]:
        window = self.pruner.params.eval_suppression_window
        recent = [node.state.last_action]
        for ancestor in self.tree.ancestors(node.id):
            if len(recent) >= window:
                break
            recent.append(ancestor.state.last_action)
        return recent

    def _stamp_decision(self, node: TreeNode, decision) -> None:
        if decision is None:
            return
        if decision.verdict is Verdict.TERMINATE:
            node.pruned = True
            node.prune_reason = decision.reason
        else:
            node.allowed_override = decision.allowed

    def _expand(self, node: TreeNode) -> None:
        engine = self.engine
        allowed = engine.feasible_next(node.state)
        if node.allowed_override is not None:
            allowed = allowed & node.allowed_override
        allowed = self.pruner.allowed_actions(
            node.state, allowed, self._recent_kinds(node)
        )
        node.expanded = True
        ancestor_states = [node.state] + [
            a.state for a in self.tree.ancestors(node.id)
        ]
        k = self.params.proposal_k

        for kind in sorted(allowed, key=lambda kk: KIND_ORDER[kk]):
            if kind in DETERMINISTIC_KINDS:
                instance = build_instance(engine.space, node.state, kind, {})
                started = time.perf_counter()
                child_state = engine.apply_action(node.state, instance, self.evaluator)
                self._note_kind_time(kind, time.perf_counter() - started, 1)
                if kind is ActionKind.EVALUATE:
                    self._absorb_result_timing(child_state.last_eval)
                    self.tracker.record(
                        "evaluate",
                        child_state.last_eval,
                        child_state.config,
                        node_id=len(self.tree.nodes),
                    )
                decision = self.pruner.decide_for_child(
                    child_state,
                    node.state,
                    ancestor_states,
                    self._floor_reference(),
                    self.tracker.baseline or 0.0,
                    self.tracker.best_throughput,
                )
                for _ in range(k):
                    child = self.tree.add_child(node, child_state, instance)
                    self._stamp_decision(child, decision)
                continue

            prompt = engine.build_prompt(
                node.state, kind, best_throughput=self.tracker.best_throughput
            )
            started = time.perf_counter()
            try:
                proposals = self.backend.propose(prompt, k)
            except AllCandidatesRejected:
                self.backend_wait += time.perf_counter() - started
                continue
            self.backend_wait += time.perf_counter() - started

            seen: set[str] = set()
            for instance in proposals:
                key = instance.key()
                if key in seen:
                    continue
                seen.add(key)
                started = time.perf_counter()
                child_state = engine.apply_action(node.state, instance, self.evaluator)
                self._note_kind_time(kind, time.perf_counter() - started, 1)
                if kind is ActionKind.FEEDBACK:
                    self._absorb_result_timing(child_state.last_eval)
                    self.tracker.record(
                        "feedback",
                        child_state.last_eval,
                        child_state.config,
                        node_id=len(self.tree.nodes),
                    )
                decision = self.pruner.decide_for_child(
                    child_state,
                    node.state,
                    ancestor_states,
                    self._floor_reference(),
                    self.tracker.baseline or 0.0,
                    self.tracker.best_throughput,
                )
                child = self.tree.add_child(node, child_state, instance)
                self._stamp_decision(child, decision)

        if not self.tree.live_children(node):
            self._prune(node, "expansion exhausted")

    # -- rollouts

    def _trajectory_reward(self, trajectory: Sequence[TreeNode]) -> float:
        branch = self.params.negative_reward_branch
        for node in reversed(trajectory):
            if node.state.last_action in REWARD_KINDS:
                return compute_reward(node.state, self.tracker.baseline, branch)
        return 0.0

    def rollout(self) -> float:
        """One walk from the root; returns the backpropagated reward."""
        if self.tracker.baseline is None:
            raise MissingBaseline("measure_baseline must run before rollouts")
        if self.tree.root.pruned:
            raise NoViableChildren("the root is pruned; the search space is exhausted")
        node = self.tree.root
        trajectory: list[TreeNode] = []
        while True:
            if node.state.is_terminal or node.pruned:
                break
            if node.state.depth >= self.params.max_depth:
                self._prune(node, "max depth")
                break
            if not node.expanded:
                self._expand(node)
                if node.pruned:
                    break
            try:
                child = select_child(
                    self.tree, self.stats, node, self.params.exploration_c
                )
            except AllChildrenPruned:
                self._prune(node, "all children pruned")
                break
            trajectory.append(child)
            node = child
            if self.target_reached:
                break
        reward = self._trajectory_reward(trajectory)
        if trajectory:
            backpropagate(self.tree, trajectory, reward, self.stats)
        self.last_trajectory = [n.id for n in trajectory]
        self.rollouts_done += 1
        return reward

    def run(self, on_rollout: Callable[["SearchSession"], None] | None = None) -> BestTracker:
        """Rollouts until the target, the budget, or exhaustion stops them."""
        self.measure_baseline()
        while True:
            if self.target_reached:
                self.stop_reason = "target throughput reached"
                break
            if self.rollouts_done >= self.params.max_rollouts:
                self.stop_reason = "rollout budget exhausted"
                break
            if self.tree.root.pruned:
                self.stop_reason = "search space exhausted"
                break
            self.rollout()
            if on_rollout is not None:
                on_rollout(self)
        return self.tracker

    # -- checkpointing

    def checkpoint_state(self) -> dict[str, Any]:
        return {
            "params": self.params.to_dict(),
            "pruning": self.pruner.params.to_dict(),
            "rollouts_done": self.rollouts_done,
            "stop_reason": self.stop_reason,
            "tree": self.tree.to_dict(),
            "stats": self.stats.to_dict(),
            "tracker": self.tracker.to_dict(),
            "backend": self.backend.get_state(),
            "evaluator": self.evaluator.get_state(),
            "timing": {
                "backend_wait": self.backend_wait,
                "deploy": self.deploy_time,
                "evaluation": self.evaluation_time,
                "kind_seconds": dict(self.kind_seconds),
                "kind_counts": dict(self.kind_counts),
            },
        }

    def restore_state(self, state: Mapping[str, Any]) -> None:
        self.rollouts_done = int(state["rollouts_done"])
        self.stop_reason = state.get("stop_reason", "")
        self.tree = SearchTree.from_dict(state["tree"])
        self.stats = NodeStats.from_dict(state["stats"])
        self.tracker = BestTracker.from_dict(state["tracker"])
        self.backend.set_state(state["backend"])
        self.evaluator.set_state(state["evaluator"])
        timing = state.get("timing", {})
        self.backend_wait = float(timing.get("backend_wait", 0.0))
        self.deploy_time = float(timing.get("deploy", 0.0))
        self.evaluation_time = float(timing.get("evaluation", 0.0))
        self.kind_seconds = dict(timing.get("kind_seconds", {}))
        self.kind_counts = dict(timing.get("kind_counts", {}))
        if self.tracker.baseline is not None:
            self.evaluator.baseline_measured = True


def run_search(
    engine: ActionEngine,
    backend: DecisionBackend,
    evaluator: Evaluator,
    pruner: Pruner,
    params: MctsParams,
    on_rollout: Callable[[SearchSession], None] | None = None,
) -> SearchSession:
    session = SearchSession(engine, backend, evaluator, pruner, params)
    session.run(on_rollout=on_rollout)
    return session
