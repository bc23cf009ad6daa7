import math, statistics, sys, time
sys.path.insert(0, "tests")
from conftest import make_setup
from knobtuner.actions import ActionEngine, ActionKind
from knobtuner.backends import RandomBackend, scripted_oracle
from knobtuner.evaluation import build_synthetic
from knobtuner.mcts import MctsParams, SearchSession
from knobtuner.pruning import Pruner, PruningParams

K = ActionKind
tiny = make_setup(8, 2, seed=3)

def build(setup, backend, seed, *, difficulty=0.5, pruning=None, ood=0.25,
          disabled=frozenset(), alpha=0.8, **params_kw):
    space, bundle = setup
    model = build_synthetic(space, bundle, seed=seed, difficulty=difficulty)
    engine = ActionEngine(space, bundle, disabled_kinds=frozenset(disabled))
    if backend == "oracle":
        policy = scripted_oracle(space, model, seed=seed, alpha=alpha)
    else:
        policy = RandomBackend(space, seed=seed, out_of_domain_rate=ood)
    pruner = Pruner(pruning if pruning is not None else PruningParams(), engine)
    return SearchSession(engine, policy, model, pruner, MctsParams(seed=seed, **params_kw)), model

# (a) big-tree size for conservation runs
t0 = time.perf_counter()
s, _ = build(tiny, "random", 1, pruning=PruningParams.disabled(),
             proposal_k=3, max_depth=20, max_rollouts=150)
trajs = []
s.run(on_rollout=lambda ss: trajs.append(list(ss.last_trajectory)))
print("big tree nodes:", len(s.tree), "rollouts:", s.rollouts_done,
      "stop:", s.stop_reason, "secs:", round(time.perf_counter() - t0, 2))
print("all trajectories non-empty:", all(trajs))

# per-edge conservation spot check
from collections import Counter
member = Counter()
for t in trajs:
    for nid in t:
        member[nid] += 1
bad = [n.id for n in s.tree.nodes if s.stats.edge_n.get(n.id, 0) != member.get(n.id, 0)]
print("conservation mismatches:", len(bad))
root_sum = sum(s.stats.edge_n.get(c, 0) for c in s.tree.root.children)
print("root sum == rollouts:", root_sum == s.rollouts_done, root_sum)

# (b) fuzz-loop cost estimate: one mixed batch
t0 = time.perf_counter()
total = 0
rotations = [
    (PruningParams(), 0.0, frozenset()),
    (PruningParams.disabled(), 0.3, frozenset({K.PLAN})),
    (PruningParams(), 0.3, frozenset({K.VALIDATE})),
    (PruningParams.disabled(), 0.05, frozenset({K.FEEDBACK})),
    (PruningParams(), 0.0, frozenset({K.SINGLE_KNOB})),
    (PruningParams(), 0.05, frozenset({K.PLAN, K.FEEDBACK})),
]
for seed in range(12):
    pruning, ood, disabled = rotations[seed % len(rotations)]
    s, _ = build(tiny, "random", seed, pruning=pruning, ood=ood, disabled=disabled,
                 proposal_k=1 + seed % 3, max_depth=6 + 4 * (seed % 3), max_rollouts=50)
    s.run()
    total += s.rollouts_done
dt = time.perf_counter() - t0
print(f"12 fuzz sessions: {total} rollouts in {dt:.2f}s -> est {dt * 10000 / total:.1f}s per 10k")
