"""Domains, value handling, configurations, and the system context types."""
import math
import random

import pytest

from knobtuner.errors import ConfigError, SpaceMismatch, UnknownKnob
from knobtuner.space import (
    BoolDomain,
    Cluster,
    ConfigSpace,
    Configuration,
    EnumDomain,
    HardwareNode,
    IntRange,
    Knob,
    NetworkNode,
    NetworkTopology,
    PatternDomain,
    RealRange,
    SpecialValue,
    SystemContext,
    WorkloadSpec,
    coerce_value,
    diff_configs,
    domain_kind,
    is_scalar,
    merge_subconfig,
    nearest_valid,
    normalized_gap,
    values_equal,
)


def int_knob(lo=0, hi=100, step=1, default=0, name="n", cluster_id="c", **kw):
    return Knob(name=name, domain=IntRange(lo, hi, step), default=default, cluster_id=cluster_id, **kw)


def real_knob(lo=0.0, hi=10.0, default=0.0, name="r", cluster_id="c", **kw):
    return Knob(name=name, domain=RealRange(lo, hi), default=default, cluster_id=cluster_id, **kw)


# -- domains


def test_int_range_contains_and_step():
    d = IntRange(0, 10, 2)
    assert d.contains(0) and d.contains(10) and d.contains(4)
    assert not d.contains(5)
    assert not d.contains(-2) and not d.contains(12)
    assert not d.contains(True)
    assert not d.contains(4.0)
    assert d.span == 10.0


def test_int_range_validation():
    with pytest.raises(ConfigError):
        IntRange(5, 1)
    with pytest.raises(ConfigError):
        IntRange(0, 10, 0)
    with pytest.raises(ConfigError):
        IntRange(0, 10, -1)


def test_real_range_contains_with_tolerance():
    d = RealRange(0.0, 1.0)
    assert d.contains(0.0) and d.contains(1.0) and d.contains(0.5)
    assert d.contains(1.0 + 1e-13)
    assert not d.contains(1.1)
    assert not d.contains(True)
    assert not d.contains("0.5")
    with pytest.raises(ConfigError):
        RealRange(2.0, 1.0)


def test_bool_domain():
    d = BoolDomain()
    assert d.contains(True) and d.contains(False)
    assert not d.contains(1) and not d.contains("true")


def test_enum_domain():
    d = EnumDomain(("a", "b"))
    assert d.contains("a") and not d.contains("c") and not d.contains(1)
    with pytest.raises(ConfigError):
        EnumDomain(())
    with pytest.raises(ConfigError):
        EnumDomain(("a", "a"))


def test_pattern_domain():
    d = PatternDomain(r"[0-9]+ms")
    assert d.contains("250ms")
    assert not d.contains("250ms extra")
    assert not d.contains(250)
    with pytest.raises(ConfigError):
        PatternDomain("(")


def test_domain_kind_tags():
    assert domain_kind(IntRange(0, 1)) == "integer"
    assert domain_kind(RealRange(0, 1)) == "real"
    assert domain_kind(BoolDomain()) == "boolean"
    assert domain_kind(EnumDomain(("x",))) == "enum"
    assert domain_kind(PatternDomain()) == "string"


# -- knobs and values


def test_knob_default_must_be_permitted():
    with pytest.raises(ConfigError):
        int_knob(default=500)
    k = Knob(
        name="timeout",
        domain=IntRange(1, 60),
        default=-1,
        cluster_id="c",
        special_values=(SpecialValue(-1, "disabled"),),
    )
    assert k.permits(-1)
    assert k.permits(30)
    assert not k.permits(0)


def test_values_equal_tolerances():
    assert values_equal(1.0, 1.0 + 1e-12)
    assert values_equal(1, 1.0)
    assert not values_equal(1.0, 1.001)
    assert values_equal("a", "a") and not values_equal("a", "b")
    assert not values_equal(True, 1)
    assert not values_equal(1, "1")


def test_is_scalar():
    assert is_scalar(1) and is_scalar(1.5) and is_scalar("x") and is_scalar(True)
    assert not is_scalar([1]) and not is_scalar({"a": 1}) and not is_scalar(None)


def test_coerce_value_integer():
    k = int_knob()
    assert coerce_value(k, 7) == 7
    assert coerce_value(k, 7.0) == 7
    assert coerce_value(k, " 7 ") == 7
    with pytest.raises(ValueError):
        coerce_value(k, 7.5)
    with pytest.raises(ValueError):
        coerce_value(k, True)
    with pytest.raises(ValueError):
        coerce_value(k, "seven")
    with pytest.raises(ValueError):
        coerce_value(k, [7])


def test_coerce_value_real_bool_enum():
    r = real_knob()
    assert coerce_value(r, 2) == 2.0
    assert coerce_value(r, "2.5") == 2.5
    with pytest.raises(ValueError):
        coerce_value(r, True)
    b = Knob(name="b", domain=BoolDomain(), default=False, cluster_id="c")
    assert coerce_value(b, True) is True
    assert coerce_value(b, "TRUE") is True
    assert coerce_value(b, "false") is False
    with pytest.raises(ValueError):
        coerce_value(b, 1)
    e = Knob(name="e", domain=EnumDomain(("a", "b")), default="a", cluster_id="c")
    assert coerce_value(e, "b") == "b"
    assert coerce_value(e, "zzz") == "zzz"
    with pytest.raises(ValueError):
        coerce_value(e, 3)


def test_nearest_valid_integer_lattice():
    k = int_knob(lo=0, hi=100, step=10, default=50)
    assert nearest_valid(k, 50) == 50
    assert nearest_valid(k, 43) == 40
    assert nearest_valid(k, 47) == 50
    assert nearest_valid(k, 45) == 50
    assert nearest_valid(k, -20) == 0
    assert nearest_valid(k, 400) == 100


def test_nearest_valid_tie_without_numeric_default():
    k = int_knob(lo=0, hi=100, step=10, default=0)
    assert nearest_valid(k, 5) == 0


def test_nearest_valid_real_and_categorical():
    r = real_knob(lo=1.0, hi=2.0, default=1.0)
    assert nearest_valid(r, 5.0) == 2.0
    assert nearest_valid(r, 0.0) == 1.0
    assert nearest_valid(r, 1.5) == 1.5
    e = Knob(name="e", domain=EnumDomain(("a", "b")), default="a", cluster_id="c")
    assert nearest_valid(e, "zzz") == "a"
    assert nearest_valid(e, "b") == "b"


def test_normalized_gap():
    k = int_knob(lo=0, hi=100)
    assert normalized_gap(k, 0, 50) == pytest.approx(0.5)
    assert normalized_gap(k, 0, 100) == 1.0
    assert normalized_gap(k, 0, 0) == 0.0
    e = Knob(name="e", domain=EnumDomain(("a", "b")), default="a", cluster_id="c")
    assert normalized_gap(e, "a", "a") == 0.0
    assert normalized_gap(e, "a", "b") == 1.0
    z = int_knob(lo=5, hi=5, default=5)
    assert normalized_gap(z, 5, 5) == 0.0


def test_normalized_gap_uncomparable_values():
    k = int_knob(lo=0, hi=100)
    assert normalized_gap(k, "oops", 50) == 1.0
    assert normalized_gap(k, "oops", "oops") == 0.0
    assert normalized_gap(k, True, True) == 0.0
    assert normalized_gap(k, True, 1) == 1.0


# -- configurations


def make_space():
    knobs = (
        int_knob(name="a", lo=0, hi=10, default=1),
        real_knob(name="b", lo=0.0, hi=1.0, default=0.5),
        Knob(name="c", domain=BoolDomain(), default=False, cluster_id="d"),
    )
    clusters = (Cluster(id="c", role="x"), Cluster(id="d", role="y"))
    return ConfigSpace(knobs=knobs, clusters=clusters)


def test_space_lookup_and_defaults():
    space = make_space()
    assert len(space) == 3
    assert "a" in space and "zz" not in space
    assert space.knob("a").default == 1
    with pytest.raises(UnknownKnob):
        space.knob("zz")
    with pytest.raises(UnknownKnob):
        space.cluster("zz")
    assert [k.name for k in space.knobs_in("c")] == ["a", "b"]
    cfg = space.default_configuration()
    assert cfg.value("b") == 0.5
    assert cfg.tuned_names() == ()
    with pytest.raises(UnknownKnob):
        cfg.value("zz")


def test_space_rejects_duplicates_and_orphans():
    with pytest.raises(ConfigError):
        ConfigSpace(
            knobs=(int_knob(name="a"), int_knob(name="a")),
            clusters=(Cluster(id="c", role="x"),),
        )
    with pytest.raises(ConfigError):
        ConfigSpace(
            knobs=(int_knob(name="a", cluster_id="nope"),),
            clusters=(Cluster(id="c", role="x"),),
        )
    with pytest.raises(ConfigError):
        ConfigSpace(
            knobs=(),
            clusters=(Cluster(id="c", role="x"), Cluster(id="c", role="y")),
        )


def test_merge_subconfig_tracks_provenance():
    space = make_space()
    base = space.default_configuration()
    merged = merge_subconfig(base, {"a": 7})
    assert merged.value("a") == 7
    assert merged.tuned_names() == ("a",)
    assert base.value("a") == 1
    with pytest.raises(UnknownKnob):
        merge_subconfig(base, {"zz": 1})


def test_diff_configs():
    space = make_space()
    base = space.default_configuration()
    other = merge_subconfig(base, {"a": 7, "c": True})
    changed = dict((n, (va, vb)) for n, va, vb in diff_configs(base, other))
    assert set(changed) == {"a", "c"}
    assert changed["a"] == (1, 7)
    assert diff_configs(base, base) == []
    with pytest.raises(SpaceMismatch):
        diff_configs(base, Configuration(assignments={"a": 1}))


# -- system context


def test_hardware_and_network_validation():
    with pytest.raises(ConfigError):
        HardwareNode(node="x", cpus=0, memory_mb=1, storage_gb=1)
    with pytest.raises(ConfigError):
        NetworkNode(name="x", role="")
    nodes = (NetworkNode("a", "peer"), NetworkNode("b", "orderer"))
    NetworkTopology(nodes=nodes, edges=(("a", "b"),))
    with pytest.raises(ConfigError):
        NetworkTopology(nodes=nodes, edges=(("a", "zzz"),))
    with pytest.raises(ConfigError):
        NetworkTopology(nodes=(NetworkNode("a", "peer"), NetworkNode("a", "peer")))


def test_workload_and_context():
    with pytest.raises(ConfigError):
        WorkloadSpec(name="w", transaction_count=0)
    ctx = SystemContext(
        hardware=(
            HardwareNode("a", 8, 1024, 10),
            HardwareNode("b", 4, 1024, 10),
        ),
        network=NetworkTopology(nodes=(NetworkNode("a", "peer"),)),
        workload=WorkloadSpec(name="w", transaction_count=100),
    )
    assert ctx.min_cpus() == 4
    assert ctx.workload.to_dict()["transaction_count"] == 100


def test_nearest_valid_random_always_permitted():
    rng = random.Random(11)
    knobs = [
        int_knob(lo=0, hi=1000, step=7, default=0, name="i"),
        real_knob(lo=-5.0, hi=5.0, default=0.0, name="r"),
        Knob(name="e", domain=EnumDomain(("a", "b", "c")), default="a", cluster_id="c"),
    ]
    for _ in range(500):
        k = rng.choice(knobs)
        raw = rng.choice(
            [rng.randint(-2000, 2000), rng.uniform(-50, 50), "junk", True]
        )
        snapped = nearest_valid(k, raw)
        assert k.permits(snapped), (k.name, raw, snapped)


def test_normalized_gap_symmetry_and_bounds():
    rng = random.Random(12)
    k = int_knob(lo=0, hi=500, default=0)
    for _ in range(300):
        a, b = rng.randint(-100, 600), rng.randint(-100, 600)
        g1, g2 = normalized_gap(k, a, b), normalized_gap(k, b, a)
        assert g1 == g2
        assert 0.0 <= g1 <= 1.0
        assert math.isclose(normalized_gap(k, a, a), 0.0)
