"""Synthetic response surface and the external benchmark adapter."""
import json
import math
import random
import sys

import pytest

from knobtuner.errors import ConfigError, SpawnFailure
from knobtuner.evaluation import (
    EvalResult,
    ExternalCommandEvaluator,
    ResourceConstraint,
    RunError,
    SyntheticModel,
    build_synthetic,
    external_adapter,
)
from knobtuner.space import Configuration, EnumDomain, IntRange, RealRange

from conftest import make_setup


@pytest.fixture(scope="module")
def wide_model():
    space, bundle = make_setup(40, 5, seed=7)
    return space, bundle, build_synthetic(space, bundle, seed=0, difficulty=0.5)


def config_from(space, assignments):
    return Configuration(
        assignments=dict(assignments),
        provenance={k: "tuned" for k in assignments},
    )


def sample_config(space, rng):
    out = {}
    for k in space.knobs:
        d = k.domain
        if isinstance(d, IntRange):
            out[k.name] = d.lo + rng.randint(0, (d.hi - d.lo) // d.step) * d.step
        elif isinstance(d, RealRange):
            out[k.name] = rng.uniform(d.lo, d.hi)
        elif isinstance(d, EnumDomain):
            out[k.name] = rng.choice(list(d.values))
        else:
            out[k.name] = rng.random() < 0.5
    return config_from(space, out)


# -- results


def test_eval_result_validation():
    with pytest.raises(ConfigError):
        EvalResult(throughput=-1.0)
    with pytest.raises(ConfigError):
        EvalResult(throughput=10.0, failed=True)
    r = EvalResult(
        throughput=120.5,
        run_errors=(RunError("run", "hiccup"),),
        wall_time=3.25,
        deploy_time=1.5,
    )
    assert EvalResult.from_dict(r.to_dict()) == r


def test_resource_constraint_edges():
    c = ResourceConstraint(knob="k", cap=10.0, description="d")
    assert c.violated(config_from(None, {"k": 10.5}))
    assert not c.violated(config_from(None, {"k": 10.0}))
    assert not c.violated(config_from(None, {"k": True}))  # booleans are not magnitudes
    assert not c.violated(config_from(None, {"k": "big"}))
    assert not c.violated(config_from(None, {}))


# -- the planted-optimum surface


def test_build_synthetic_validation(tiny_setup):
    space, bundle = tiny_setup
    with pytest.raises(ConfigError):
        build_synthetic(space, bundle, seed=0, difficulty=1.5)
    from conftest import make_docs
    from knobtuner.knowledge import build_space, parse_knob_doc

    knob_doc, _ = make_docs(4, 1, seed=1)
    single = build_space(parse_knob_doc(knob_doc))
    with pytest.raises(ConfigError):
        build_synthetic(single, None, seed=0)


def test_optimum_scores_t_max(wide_model):
    space, bundle, m = wide_model
    r = m.evaluate(config_from(space, m.optimum), bundle.system.workload)
    assert not r.failed
    assert r.throughput == pytest.approx(m.t_max, rel=1e-12)


def test_optimum_sits_away_from_defaults(wide_model):
    space, bundle, m = wide_model
    from knobtuner.space import normalized_gap

    moved = [
        k.name
        for k in space.knobs
        if normalized_gap(k, m.optimum[k.name], k.default) >= 0.3
    ]
    # every performance-relevant knob was pushed off its default
    assert len(moved) == len(space)


def test_optimum_dominates_random_configs(wide_model):
    space, bundle, m = wide_model
    best = m.response(config_from(space, m.optimum))
    rng = random.Random(42)
    for _ in range(200):
        t = m.response(sample_config(space, rng))
        assert 0.0 <= t < best


def test_single_knob_deviation_never_helps(wide_model):
    space, bundle, m = wide_model
    best = m.response(config_from(space, m.optimum))
    rng = random.Random(7)
    for knob in space.knobs:
        for _ in range(4):
            probe = dict(m.optimum)
            probe[knob.name] = sample_config(space, rng).assignments[knob.name]
            assert m.response(config_from(space, probe)) <= best + 1e-9


def test_cluster_weights_follow_the_loss_budget():
    space, bundle = make_setup(40, 5, seed=7)
    for difficulty in (0.0, 0.5, 1.0):
        m = build_synthetic(space, bundle, seed=3, difficulty=difficulty)
        budget = m.t_max * (0.25 + 0.5 * difficulty)
        assert sum(m.cluster_weight.values()) == pytest.approx(0.85 * budget, rel=1e-9)
        assert sum(s for _, _, s in m.interactions) == pytest.approx(
            0.15 * budget, rel=1e-9
        )


def test_interactions_are_cross_cluster(wide_model):
    space, bundle, m = wide_model
    assert len(m.interactions) == math.ceil(len(space) / 10)
    for a, b, strength in m.interactions:
        assert space.knob(a).cluster_id != space.knob(b).cluster_id
        assert strength > 0


def test_resource_constraints_fail_the_run(wide_model):
    space, bundle, m = wide_model
    assert 1 <= len(m.constraints) <= math.ceil(len(space) / 20)
    c = m.constraints[0]
    knob = space.knob(c.knob)
    assert float(m.optimum[c.knob]) <= c.cap  # the optimum always starts
    probe = dict(m.optimum)
    probe[c.knob] = knob.domain.hi
    assert knob.domain.hi > c.cap
    r = m.evaluate(config_from(space, probe), bundle.system.workload)
    assert r.failed and r.throughput == 0.0
    assert r.run_errors[0].stage == "resource"


def test_out_of_domain_refuses_to_start(wide_model):
    space, bundle, m = wide_model
    probe = dict(m.optimum)
    enum_knob = next(k for k in space.knobs if isinstance(k.domain, EnumDomain))
    probe[enum_knob.name] = "zz_not_a_choice"
    r = m.evaluate(config_from(space, probe), bundle.system.workload)
    assert r.failed
    assert r.run_errors[0].stage == "startup"
    partial = {k: v for k, v in m.optimum.items() if k != enum_knob.name}
    r2 = m.evaluate(config_from(space, partial), bundle.system.workload)
    assert r2.failed and "no value assigned" in r2.run_errors[0].message


def test_same_seed_builds_identical_models():
    space, bundle = make_setup(20, 4, seed=7)
    a = build_synthetic(space, bundle, seed=5, difficulty=0.4)
    b = build_synthetic(space, bundle, seed=5, difficulty=0.4)
    assert a.optimum == b.optimum
    assert a.cluster_weight == b.cluster_weight
    assert a.knob_scale == b.knob_scale
    assert a.interactions == b.interactions
    assert a.constraints == b.constraints
    c = build_synthetic(space, bundle, seed=6, difficulty=0.4)
    assert c.optimum != a.optimum


def test_noise_is_reproducible_through_state(wide_model):
    space, bundle, base = wide_model
    kw = dict(
        space=space,
        t_max=base.t_max,
        optimum=base.optimum,
        cluster_weight=base.cluster_weight,
        knob_scale=base.knob_scale,
        noise=25.0,
        seed=11,
    )
    cfg = config_from(space, base.optimum)
    first = SyntheticModel(**kw)
    seq = [first.evaluate(cfg, bundle.system.workload).throughput for _ in range(4)]
    assert len(set(seq)) > 1  # noise actually moves the needle
    resumed = SyntheticModel(**kw)
    resumed.set_state(first.get_state())
    cont = [first.evaluate(cfg, bundle.system.workload).throughput for _ in range(3)]
    again = [resumed.evaluate(cfg, bundle.system.workload).throughput for _ in range(3)]
    assert cont == again


# -- external benchmark command


def write_script(tmp_path, body):
    script = tmp_path / "bench.py"
    script.write_text(body)
    return f"{sys.executable} {script} {{config_path}} {{workload_path}}"


def test_external_requires_both_placeholders():
    with pytest.raises(SpawnFailure):
        ExternalCommandEvaluator("bench --config {config_path}")
    with pytest.raises(SpawnFailure):
        external_adapter("bench {workload_path}")


def test_external_happy_path(tiny_setup, tmp_path):
    space, bundle = tiny_setup
    command = write_script(
        tmp_path,
        "import json, sys\n"
        "config = json.load(open(sys.argv[1]))\n"
        "workload = json.load(open(sys.argv[2]))\n"
        "print('warming up')\n"
        "print(json.dumps({'tps': config['knob_03'] * 10.0,"
        " 'deploy_seconds': 1.5, 'errors': ['one stray timeout']}))\n",
    )
    ev = external_adapter(command, timeout=30.0)
    r = ev.evaluate(space.default_configuration(), bundle.system.workload)
    assert not r.failed
    assert r.throughput == 90.0  # knob_03 default is 9
    assert r.deploy_time == 1.5
    assert [e.stage for e in r.run_errors] == ["run"]
    assert r.wall_time > 0


def test_external_nonzero_exit(tiny_setup, tmp_path):
    space, bundle = tiny_setup
    command = write_script(
        tmp_path, "import sys\nprint('partial')\nsys.exit(3)\n"
    )
    r = external_adapter(command, timeout=30.0).evaluate(
        space.default_configuration(), bundle.system.workload
    )
    assert r.failed and r.run_errors[0].stage == "benchmark"
    assert "exit status 3" in r.run_errors[0].message


def test_external_timeout(tiny_setup, tmp_path):
    space, bundle = tiny_setup
    command = write_script(tmp_path, "import time\ntime.sleep(30)\n")
    r = external_adapter(command, timeout=0.5).evaluate(
        space.default_configuration(), bundle.system.workload
    )
    assert r.failed and r.run_errors[0].stage == "timeout"


def test_external_unparseable_metrics(tiny_setup, tmp_path):
    space, bundle = tiny_setup
    for body in (
        "print('no json here')\n",
        "import json\nprint(json.dumps({'tps': -5}))\n",
        "import json\nprint(json.dumps({'tps': True}))\n",
        "import json\nprint(json.dumps({'rate': 100}))\n",
    ):
        command = write_script(tmp_path, body)
        r = external_adapter(command, timeout=30.0).evaluate(
            space.default_configuration(), bundle.system.workload
        )
        assert r.failed and r.run_errors[0].stage == "metrics"


def test_external_empty_output(tiny_setup, tmp_path):
    space, bundle = tiny_setup
    command = write_script(tmp_path, "pass\n")
    r = external_adapter(command, timeout=30.0).evaluate(
        space.default_configuration(), bundle.system.workload
    )
    assert r.failed and "no output to parse" in r.run_errors[0].message


def test_external_missing_binary(tiny_setup):
    space, bundle = tiny_setup
    ev = ExternalCommandEvaluator(
        "/no/such/binary-anywhere {config_path} {workload_path}"
    )
    with pytest.raises(SpawnFailure):
        ev.evaluate(space.default_configuration(), bundle.system.workload)


def test_external_ignores_bad_deploy_seconds(tiny_setup, tmp_path):
    space, bundle = tiny_setup
    command = write_script(
        tmp_path,
        "import json\nprint(json.dumps({'tps': 50, 'deploy_seconds': 'fast'}))\n",
    )
    r = external_adapter(command, timeout=30.0).evaluate(
        space.default_configuration(), bundle.system.workload
    )
    assert not r.failed and r.deploy_time == 0.0
