"""Instrumented scan for the paired random-backend criteria (5 and 6).

Confirms the degenerate-regime diagnosis (fresh-descent never walks VALIDATE
children with tiny rollout budgets) and searches for parameters where the
paired comparisons are non-vacuous and directional.
"""
import math
import statistics
import sys
import time

sys.path.insert(0, ".scratch")

from knobtuner.actions import ActionEngine, ActionKind
from knobtuner.backends import RandomBackend
from knobtuner.evaluation import build_synthetic
from knobtuner.knowledge import KnowledgeBundle, build_space, parse_knob_doc, parse_system_doc
from knobtuner.mcts import MctsParams, SearchSession
from knobtuner.pruning import Pruner, PruningParams

from smoke import demo_docs


def bundle_for(n_knobs, n_clusters, seed=7):
    knob_doc, system_doc = demo_docs(n_knobs, n_clusters, seed)
    knowledge = parse_knob_doc(knob_doc, "demo")
    system = parse_system_doc(system_doc, "demo")
    b = KnowledgeBundle(knob=knowledge, system=system, space_digest="demo")
    return build_space(knowledge), b


SPACE, BUNDLE = bundle_for(40, 5)


def run_one(seed, difficulty, ood, rollouts, k, depth, pruning_on=True, disabled=frozenset(), target=None):
    model = build_synthetic(SPACE, BUNDLE, seed=seed, difficulty=difficulty)
    engine = ActionEngine(SPACE, BUNDLE, disabled_kinds=disabled)
    backend = RandomBackend(SPACE, seed=seed, out_of_domain_rate=ood)
    pruner = Pruner(PruningParams() if pruning_on else PruningParams.disabled(), engine)
    params = MctsParams(
        seed=seed, proposal_k=k, max_rollouts=rollouts, max_depth=depth,
        target_throughput=(target * model.t_max if target else None),
    )
    s = SearchSession(engine, backend, model, pruner, params)
    s.run()
    return s, model


def stats_for(s, model, frac):
    recs = s.tracker.records[1:]
    clean = sum(1 for r in recs if not r.failed and not r.error_stages)
    reach = math.inf
    for i, r in enumerate(recs, start=1):
        if not r.failed and r.throughput >= frac * model.t_max:
            reach = i
            break
    n_valid = n_invalid = walked_validate = 0
    for node in s.tree.nodes:
        if node.action is not None and node.action.kind is ActionKind.VALIDATE:
            rep = node.state.last_validation
            if rep is not None and rep.valid:
                n_valid += 1
            else:
                n_invalid += 1
            if node.expanded or s.stats.node_n.get(node.id, 0) > 0:
                walked_validate += 1
    return dict(
        evals=s.tracker.evaluations, clean=clean, n_err=s.tracker.n_err(),
        reach=reach, baseline=s.tracker.baseline, tmax=model.t_max,
        best=s.tracker.best_throughput, nodes=len(s.tree.nodes),
        n_valid=n_valid, n_invalid=n_invalid, walked_validate=walked_validate,
    )


def scan5(difficulty, ood, rollouts, k, depth, seeds, frac=0.8):
    t0 = time.perf_counter()
    on, off, diag = [], [], []
    for seed in range(seeds):
        s, m = run_one(seed, difficulty, ood, rollouts, k, depth, True, target=frac)
        st = stats_for(s, m, frac)
        on.append(st["reach"])
        diag.append(st)
        s, m = run_one(seed, difficulty, ood, rollouts, k, depth, False, target=frac)
        off.append(stats_for(s, m, frac)["reach"])
    dt = time.perf_counter() - t0
    bl = statistics.median(d["baseline"] / d["tmax"] for d in diag)
    cl = statistics.median(d["clean"] for d in diag)
    ev = statistics.median(d["evals"] for d in diag)
    print(f"c5 d={difficulty} ood={ood} r={rollouts} k={k} depth={depth}: "
          f"on_med={statistics.median(on)} off_med={statistics.median(off)} "
          f"on_reach={sum(v < math.inf for v in on)}/{seeds} off_reach={sum(v < math.inf for v in off)}/{seeds} "
          f"[bl/tmax={bl:.3f} clean_med={cl} evals_med={ev}] {dt:.1f}s")
    print(f"   on:  {on}\n   off: {off}")


def scan6(difficulty, ood, rollouts, k, depth, seeds):
    t0 = time.perf_counter()
    full, abl, diag_f, diag_a = [], [], [], []
    for seed in range(seeds):
        s, m = run_one(seed, difficulty, ood, rollouts, k, depth, True)
        st = stats_for(s, m, 0.8)
        full.append(st["n_err"]); diag_f.append(st)
        s, m = run_one(seed, difficulty, ood, rollouts, k, depth, True,
                       disabled=frozenset({ActionKind.VALIDATE, ActionKind.FIX}))
        st = stats_for(s, m, 0.8)
        abl.append(st["n_err"]); diag_a.append(st)
    dt = time.perf_counter() - t0
    wv = statistics.median(d["walked_validate"] for d in diag_f)
    nv = statistics.median(d["n_valid"] for d in diag_f)
    ni = statistics.median(d["n_invalid"] for d in diag_f)
    ef = statistics.median(d["evals"] for d in diag_f)
    ea = statistics.median(d["evals"] for d in diag_a)
    print(f"c6 d={difficulty} ood={ood} r={rollouts} k={k} depth={depth}: "
          f"full_med={statistics.median(full)} abl_med={statistics.median(abl)} "
          f"[full A4 valid/invalid/walked={nv}/{ni}/{wv} evals full/abl={ef}/{ea}] {dt:.1f}s")
    print(f"   full: {full}\n   abl:  {abl}")


if __name__ == "__main__":
    which = sys.argv[1] if len(sys.argv) > 1 else "both"
    if which in ("5", "both"):
        for d in (0.2, 0.3):
            for ood in (0.05, 0.1):
                scan5(d, ood, rollouts=24, k=2, depth=10, seeds=8)
        scan5(0.3, 0.05, rollouts=40, k=2, depth=10, seeds=8)
    if which in ("6", "both"):
        for ood in (0.25, 0.35):
            for r in (24, 40):
                scan6(0.5, ood, rollouts=r, k=2, depth=10, seeds=8)
