"""Probe acceptance criteria 4/5/6 feasibility: convergence + paired comparisons."""
import math
import statistics
import time

from knobtuner.actions import ActionEngine, ActionKind
from knobtuner.backends import RandomBackend, scripted_oracle
from knobtuner.evaluation import build_synthetic
from knobtuner.knowledge import KnowledgeBundle, build_space, parse_knob_doc, parse_system_doc
from knobtuner.mcts import MctsParams, SearchSession
from knobtuner.pruning import Pruner, PruningParams

import sys
sys.path.insert(0, ".scratch")
from smoke import demo_docs


def bundle_for(n_knobs, n_clusters, seed=7):
    knob_doc, system_doc = demo_docs(n_knobs, n_clusters, seed)
    knowledge = parse_knob_doc(knob_doc, "demo")
    system = parse_system_doc(system_doc, "demo")
    b = KnowledgeBundle(knob=knowledge, system=system, space_digest="demo")
    return build_space(knowledge), b


# --- criterion 4: oracle convergence, 40 knobs / 5 clusters, 11 seeds
space, bundle = bundle_for(40, 5)
t0 = time.perf_counter()
evals_needed = []
for seed in range(11):
    model = build_synthetic(space, bundle, seed=seed, difficulty=0.5)
    engine = ActionEngine(space, bundle)
    backend = scripted_oracle(space, model, seed=seed, alpha=0.8)
    pruner = Pruner(PruningParams(), engine)
    params = MctsParams(seed=seed, max_rollouts=30, target_throughput=0.9 * model.t_max)
    s = SearchSession(engine, backend, model, pruner, params)
    s.run()
    reached = s.tracker.best_throughput >= 0.9 * model.t_max
    evals_needed.append((s.tracker.evaluations, reached, s.rollouts_done))
elapsed = time.perf_counter() - t0
print("criterion 4 (oracle):", evals_needed)
print(f"  median evals={statistics.median(e for e, _, _ in evals_needed)}, all reached={all(r for _, r, _ in evals_needed)}, time={elapsed:.1f}s")

# --- criterion 5: pruning on vs off, random backend, evals to reach 0.8*t_max
def evals_to_fraction(space, bundle, seed, pruning_on, frac=0.8, rollouts=8):
    model = build_synthetic(space, bundle, seed=seed, difficulty=0.5)
    engine = ActionEngine(space, bundle)
    backend = RandomBackend(space, seed=seed)
    pruner = Pruner(PruningParams() if pruning_on else PruningParams.disabled(), engine)
    params = MctsParams(seed=seed, max_rollouts=rollouts, target_throughput=frac * model.t_max)
    s = SearchSession(engine, backend, model, pruner, params)
    s.run()
    if s.tracker.best_throughput >= frac * model.t_max:
        return s.tracker.evaluations
    return math.inf

t0 = time.perf_counter()
on_vals, off_vals = [], []
for seed in range(21):
    on_vals.append(evals_to_fraction(space, bundle, seed, True))
    off_vals.append(evals_to_fraction(space, bundle, seed, False))
elapsed = time.perf_counter() - t0
print(f"criterion 5 (random, evals to 0.8*t_max): time={elapsed:.1f}s")
print("  pruning on :", on_vals, "median", statistics.median(on_vals))
print("  pruning off:", off_vals, "median", statistics.median(off_vals))

# --- criterion 6: n_err with validation vs without, random backend
def n_err_run(space, bundle, seed, with_validation, rollouts=6):
    model = build_synthetic(space, bundle, seed=seed, difficulty=0.5)
    disabled = frozenset() if with_validation else frozenset({ActionKind.VALIDATE})
    engine = ActionEngine(space, bundle, disabled_kinds=disabled)
    backend = RandomBackend(space, seed=seed)
    pruner = Pruner(PruningParams(), engine)
    params = MctsParams(seed=seed, max_rollouts=rollouts)
    s = SearchSession(engine, backend, model, pruner, params)
    s.run()
    return s.tracker.n_err(), s.tracker.evaluations

t0 = time.perf_counter()
with_v, without_v = [], []
for seed in range(21):
    with_v.append(n_err_run(space, bundle, seed, True))
    without_v.append(n_err_run(space, bundle, seed, False))
elapsed = time.perf_counter() - t0
print(f"criterion 6 (n_err with/without validation): time={elapsed:.1f}s")
print("  with   :", with_v)
print("  without:", without_v)
print("  medians:", statistics.median(e for e, _ in with_v), "vs", statistics.median(e for e, _ in without_v))
