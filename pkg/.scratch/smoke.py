import json
import random

from knobtuner.actions import ActionEngine
from knobtuner.backends import RandomBackend, scripted_oracle
from knobtuner.evaluation import build_synthetic
from knobtuner.knowledge import KnowledgeBundle, build_space, parse_knob_doc, parse_system_doc
from knobtuner.mcts import MctsParams, SearchSession
from knobtuner.pruning import Pruner, PruningParams


def demo_docs(n_knobs=20, n_clusters=4, seed=7):
    rng = random.Random(seed)
    clusters = [
        {"id": f"c{i}", "role": f"stage {i}", "description": f"pipeline stage {i}"}
        for i in range(n_clusters)
    ]
    knobs = []
    for i in range(n_knobs):
        cid = f"c{i % n_clusters}"
        kind = rng.choice(["integer", "real", "boolean", "enum"])
        entry = {
            "name": f"knob_{i:02d}",
            "description": f"knob {i}",
            "type": kind,
            "unit": "",
            "special_values": [],
            "cluster": cid,
            "performance_relevant": True,
        }
        if kind == "integer":
            lo = rng.randint(0, 10)
            hi = lo + rng.randint(10, 500)
            entry["range"] = {"min": lo, "max": hi, "step": 1}
            entry["default"] = lo
        elif kind == "real":
            lo = round(rng.uniform(0, 5), 2)
            hi = lo + rng.randint(5, 50)
            entry["range"] = {"min": lo, "max": hi}
            entry["default"] = lo
        elif kind == "boolean":
            entry["default"] = False
        else:
            entry["values"] = ["a", "b", "c", "d"]
            entry["default"] = "a"
        knobs.append(entry)
    knob_doc = {"knobs": knobs, "clusters": clusters}
    system_doc = {
        "hardware": [
            {"node": "peer0", "cpus": 16, "memory_mb": 32768, "storage_gb": 512},
            {"node": "peer1", "cpus": 16, "memory_mb": 32768, "storage_gb": 512},
        ],
        "network": {
            "nodes": [
                {"name": "peer0", "role": "peer", "org": "org1"},
                {"name": "peer1", "role": "peer", "org": "org2"},
                {"name": "orderer0", "role": "orderer", "org": "ord"},
            ],
            "edges": [["peer0", "peer1"], ["peer0", "orderer0"], ["peer1", "orderer0"]],
        },
        "workload": {"name": "transfer", "transaction_count": 10000, "rate_mode": "fixed", "extra": {}},
    }
    return knob_doc, system_doc


knob_doc, system_doc = demo_docs()
knowledge = parse_knob_doc(knob_doc, "demo")
system = parse_system_doc(system_doc, "demo")
bundle = KnowledgeBundle(knob=knowledge, system=system, space_digest="demo")
space = build_space(knowledge)
print(f"space: {len(space)} knobs, {len(space.clusters)} clusters")

model = build_synthetic(space, bundle, seed=11, difficulty=0.5)
print(f"t_max={model.t_max:.1f} interactions={len(model.interactions)} constraints={len(model.constraints)}")
default_result = model.evaluate(space.default_configuration(), bundle.system.workload)
print(f"default T={default_result.throughput:.1f} failed={default_result.failed}")

from knobtuner.space import Configuration
opt_cfg = Configuration(assignments=dict(model.optimum), provenance={})
opt_result = model.evaluate(opt_cfg, bundle.system.workload)
print(f"optimum T={opt_result.throughput:.1f} (t_max {model.t_max:.1f}) failed={opt_result.failed}")

engine = ActionEngine(space, bundle)
backend = scripted_oracle(space, model, seed=3, alpha=0.8)
pruner = Pruner(PruningParams(), engine)
params = MctsParams(seed=3, max_rollouts=12, target_throughput=0.9 * model.t_max)
session = SearchSession(engine, backend, model, pruner, params)
session.run()
print(
    f"oracle run: rollouts={session.rollouts_done} stop={session.stop_reason!r} "
    f"best={session.tracker.best_throughput:.1f} evals={session.tracker.evaluations} "
    f"nodes={len(session.tree)}"
)
print("action counts:", {k: v for k, v in session.tree.action_counts().items() if v})
print("n_star", session.tracker.n_star(), "n_neg", session.tracker.n_neg(), "n_err", session.tracker.n_err())

# random backend, pruning off, no validation: should produce failures
from knobtuner.actions import ActionKind

engine2 = ActionEngine(space, bundle, disabled_kinds=frozenset({ActionKind.VALIDATE}))
backend2 = RandomBackend(space, seed=5)
model2 = build_synthetic(space, bundle, seed=11, difficulty=0.5)
pruner2 = Pruner(PruningParams.disabled(), engine2)
session2 = SearchSession(engine2, backend2, model2, pruner2, MctsParams(seed=5, max_rollouts=10))
session2.run()
print(
    f"random run: stop={session2.stop_reason!r} best={session2.tracker.best_throughput:.1f} "
    f"evals={session2.tracker.evaluations} n_err={session2.tracker.n_err()} nodes={len(session2.tree)}"
)

# checkpoint round trip determinism
blob = json.dumps(session.checkpoint_state(), sort_keys=True)
session3 = SearchSession(engine, scripted_oracle(space, model, seed=3, alpha=0.8),
                         build_synthetic(space, bundle, seed=11, difficulty=0.5), pruner, params)
session3.restore_state(json.loads(blob))
blob2 = json.dumps(session3.checkpoint_state(), sort_keys=True)
print("checkpoint round-trip identical:", blob == blob2)
