import sys, time
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

# big-but-bounded conservation tree candidates
for k, depth, rolls in [(3, 12, 60), (2, 14, 80), (3, 10, 80)]:
    t0 = time.perf_counter()
    s, _ = build(tiny, "random", 1, pruning=PruningParams.disabled(),
                 proposal_k=k, max_depth=depth, max_rollouts=rolls)
    s.run()
    print(f"k={k} depth={depth} rolls={rolls}: nodes={len(s.tree)} "
          f"stop={s.stop_reason!r} {time.perf_counter()-t0:.2f}s")

# cheaper fuzz rotation estimate
rotations = [
    (PruningParams(), 0.0, frozenset()),
    (PruningParams.disabled(), 0.3, frozenset({K.PLAN})),
    (PruningParams(), 0.3, frozenset({K.VALIDATE})),
    (PruningParams.disabled(), 0.05, frozenset({K.FEEDBACK})),
    (PruningParams(), 0.0, frozenset({K.SINGLE_KNOB})),
    (PruningParams(), 0.05, frozenset({K.PLAN, K.FEEDBACK})),
]
t0 = time.perf_counter()
total = sessions = 0
seed = 0
while total < 10_000:
    pruning, ood, disabled = rotations[seed % len(rotations)]
    s, _ = build(tiny, "random", seed, pruning=pruning, ood=ood, disabled=disabled,
                 proposal_k=1 + seed % 2, max_depth=6 + 2 * (seed % 3), max_rollouts=80)
    s.run()
    total += s.rollouts_done
    sessions += 1
    seed += 1
print(f"fuzz: {sessions} sessions, {total} rollouts, {time.perf_counter()-t0:.1f}s")
