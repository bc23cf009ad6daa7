"""Knowledge documents: parsing, merging, chunking, and backend extraction."""
import json

import pytest

from knobtuner.errors import ExtractionRejected, ParseError, SchemaViolation
from knobtuner.knowledge import (
    KnobRecord,
    build_space,
    chunk_texts,
    extract_knob_knowledge,
    fallback_range,
    load_bundle,
    parse_knob_doc,
    parse_system_doc,
    record_to_knob,
)
from knobtuner.space import BoolDomain, EnumDomain, IntRange, PatternDomain, RealRange

from conftest import make_docs


def minimal_doc(**knob_overrides):
    knob = {
        "name": "batch_size",
        "description": "messages per block",
        "type": "integer",
        "range": {"min": 1, "max": 500},
        "default": 10,
        "cluster": "ordering",
    }
    knob.update(knob_overrides)
    return {
        "knobs": [knob],
        "clusters": [{"id": "ordering", "role": "block formation"}],
    }


# -- knob documents


def test_parse_knob_doc_happy_path():
    kn = parse_knob_doc(minimal_doc())
    assert len(kn.records) == 1
    rec = kn.records[0]
    assert rec.name == "batch_size"
    assert rec.range == (1.0, 500.0, 0.0)
    assert rec.cluster == "ordering"
    assert kn.record_for("batch_size") is rec
    assert kn.record_for("zz") is None


def test_parse_knob_doc_collects_all_violations():
    doc = {
        "knobs": [
            {"name": "", "type": "integer", "default": 0, "cluster": "c"},
            {"name": "x", "type": "alien", "default": 0, "cluster": "c"},
            {"name": "y", "type": "integer", "default": 0, "cluster": "missing"},
        ],
        "clusters": [{"id": "c", "role": "r"}],
    }
    with pytest.raises(SchemaViolation) as err:
        parse_knob_doc(doc, source="f")
    text = "; ".join(err.value.violations)
    assert len(err.value.violations) >= 3
    assert "f.knobs[0]" in text
    assert "f.knobs[1]" in text
    assert "missing" in text


def test_parse_knob_doc_rejects_duplicates_and_bad_shapes():
    doc = minimal_doc()
    doc["knobs"].append(dict(doc["knobs"][0]))
    with pytest.raises(SchemaViolation) as err:
        parse_knob_doc(doc)
    assert any("duplicate" in v for v in err.value.violations)
    with pytest.raises(SchemaViolation):
        parse_knob_doc([])
    with pytest.raises(SchemaViolation):
        parse_knob_doc({"knobs": "nope", "clusters": []})


def test_parse_knob_doc_range_checks():
    with pytest.raises(SchemaViolation):
        parse_knob_doc(minimal_doc(range={"min": 500, "max": 1}))
    with pytest.raises(SchemaViolation):
        parse_knob_doc(minimal_doc(default=9999))


def test_record_to_knob_domains():
    enum = record_to_knob(
        KnobRecord(name="e", type="string", values=("a", "b"), default="a", cluster="c")
    )
    assert isinstance(enum.domain, EnumDomain)
    pat = record_to_knob(
        KnobRecord(name="p", type="string", pattern=r"\d+ms", default="5ms", cluster="c")
    )
    assert isinstance(pat.domain, PatternDomain)
    flag = record_to_knob(KnobRecord(name="b", type="boolean", default=False, cluster="c"))
    assert isinstance(flag.domain, BoolDomain)
    ir = record_to_knob(
        KnobRecord(name="i", type="integer", range=(0, 10, 2), default=4.0, cluster="c")
    )
    assert isinstance(ir.domain, IntRange) and ir.domain.step == 2
    assert ir.default == 4 and isinstance(ir.default, int)
    rr = record_to_knob(KnobRecord(name="r", type="real", range=(0, 1, 0), default=0, cluster="c"))
    assert isinstance(rr.domain, RealRange)
    assert rr.default == 0.0 and isinstance(rr.default, float)


def test_fallback_range():
    assert fallback_range(0, as_int=True) == (0.0, 10.0)
    assert fallback_range(100, as_int=True) == (10.0, 1000.0)
    lo, hi = fallback_range(-4, as_int=False)
    assert lo == -40.0 and hi == -0.4
    assert fallback_range("junk", as_int=True) == (0.0, 10.0)


def test_integer_knob_without_range_gets_fallback():
    knob = record_to_knob(KnobRecord(name="i", type="integer", default=100, cluster="c"))
    assert isinstance(knob.domain, IntRange)
    assert knob.domain.lo == 10 and knob.domain.hi == 1000


# -- system documents


def test_parse_system_doc_happy_path():
    _, system_doc = make_docs(4, 2)
    ctx = parse_system_doc(system_doc)
    assert ctx.min_cpus() == 16
    assert len(ctx.network.nodes) == 3
    assert ctx.workload.name == "transfer"


def test_parse_system_doc_violations():
    _, system_doc = make_docs(4, 2)
    bad = json.loads(json.dumps(system_doc))
    bad["hardware"][0]["cpus"] = True
    bad["network"]["edges"].append(["peer0", "ghost"])
    del bad["workload"]["name"]
    with pytest.raises(SchemaViolation) as err:
        parse_system_doc(bad, source="s")
    text = "; ".join(err.value.violations)
    assert "s.hardware[0].cpus" in text
    assert "ghost" in text
    assert "s.workload.name" in text
    with pytest.raises(SchemaViolation):
        parse_system_doc({"hardware": [], "network": {}, "workload": {}})


# -- bundle loading


def test_load_bundle_digest_is_stable(bundle_files):
    knob_path, system_path = bundle_files
    b1 = load_bundle(knob_path, system_path)
    b2 = load_bundle(knob_path, system_path)
    assert b1.space_digest == b2.space_digest
    assert len(b1.space_digest) == 64
    space = build_space(b1.knob)
    assert len(space) == 8


def test_load_bundle_bad_json(tmp_path, bundle_files):
    knob_path, system_path = bundle_files
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ParseError):
        load_bundle(str(broken), system_path)
    with pytest.raises(ParseError):
        load_bundle(str(tmp_path / "missing.json"), system_path)


def test_load_bundle_aggregates_both_files(tmp_path):
    knob_path = tmp_path / "k.json"
    system_path = tmp_path / "s.json"
    knob_path.write_text(json.dumps({"knobs": "nope", "clusters": []}))
    system_path.write_text(json.dumps({"hardware": [], "network": {}, "workload": {}}))
    with pytest.raises(SchemaViolation) as err:
        load_bundle(str(knob_path), str(system_path))
    text = "; ".join(err.value.violations)
    assert "k.json" in text and "s.json" in text


def test_manual_merge_admin_wins(tmp_path, bundle_files, caplog):
    knob_path, system_path = bundle_files
    admin = json.loads(open(knob_path).read())
    first = admin["knobs"][0]
    manual_doc = {
        "knobs": [
            {
                "name": first["name"],
                "description": "from the manual",
                "type": first["type"],
                "default": first["default"],
                "cluster": first["cluster"],
                **({"range": first["range"]} if "range" in first else {}),
                **({"values": first["values"]} if "values" in first else {}),
            },
            {
                "name": "manual_only",
                "description": "new knob",
                "type": "integer",
                "range": {"min": 0, "max": 9},
                "default": 3,
                "cluster": "manual_cluster",
            },
        ],
        "clusters": [
            {"id": first["cluster"], "role": "same stage"},
            {"id": "manual_cluster", "role": "extra"},
        ],
    }
    manual_path = tmp_path / "manual.json"
    manual_path.write_text(json.dumps(manual_doc))
    bundle = load_bundle(knob_path, system_path, manual_knob_path=str(manual_path))
    merged = bundle.knob.record_for(first["name"])
    assert merged.description == first["description"]  # admin text kept
    assert bundle.knob.record_for("manual_only") is not None
    assert any(c.id == "manual_cluster" for c in bundle.clusters)


def test_manual_merge_fills_missing_description(tmp_path):
    admin_doc = minimal_doc(description="")
    manual_doc = minimal_doc(description="explains the knob")
    ka = tmp_path / "a.json"
    km = tmp_path / "m.json"
    ks = tmp_path / "s.json"
    _, system_doc = make_docs(4, 2)
    ka.write_text(json.dumps(admin_doc))
    km.write_text(json.dumps(manual_doc))
    ks.write_text(json.dumps(system_doc))
    bundle = load_bundle(str(ka), str(ks), manual_knob_path=str(km))
    assert bundle.knob.record_for("batch_size").description == "explains the knob"


# -- chunking


def test_chunk_texts_groups_paragraphs():
    texts = ["para one\n\npara two", "para three"]
    chunks = chunk_texts(texts, cap=100)
    assert chunks == ["para one\n\npara two\n\npara three"]


def test_chunk_texts_respects_cap():
    paras = [f"paragraph {i} " + "x" * 50 for i in range(40)]
    chunks = chunk_texts(["\n\n".join(paras)], cap=200)
    assert all(len(c) <= 200 for c in chunks)
    rejoined = "\n\n".join(chunks)
    for i in range(40):
        assert f"paragraph {i} " in rejoined


def test_chunk_texts_hard_splits_oversize_paragraph():
    chunks = chunk_texts(["y" * 450], cap=200)
    assert [len(c) for c in chunks] == [200, 200, 50]
    assert chunk_texts([], cap=100) == []
    assert chunk_texts(["", "   "], cap=100) == []


# -- extraction


class QueueBackend:
    """Feeds canned completions and records the prompts it saw."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.prompts = []

    def complete(self, prompt):
        self.prompts.append(prompt)
        if not self.replies:
            raise AssertionError("backend queue exhausted")
        return self.replies.pop(0)


IDENTIFY = json.dumps({"knobs": ["batch_size", "timeout"]})
ATTRIBUTE = json.dumps(
    {
        "knobs": [
            {
                "name": "batch_size",
                "description": "messages per block",
                "type": "integer",
                "range": {"min": 1, "max": 500},
                "default": 10,
                "performance_relevant": True,
            },
            {
                "name": "timeout",
                "description": "cut a block after this long",
                "type": "real",
                "range": {"min": 0.1, "max": 10.0},
                "default": 2.0,
                "performance_relevant": True,
            },
        ]
    }
)
CLUSTER = json.dumps(
    {
        "clusters": [{"id": "ordering", "role": "block formation", "description": ""}],
        "assignments": {"batch_size": "ordering", "timeout": "ordering"},
    }
)


def test_extract_happy_path():
    backend = QueueBackend([IDENTIFY, ATTRIBUTE, CLUSTER])
    kn = extract_knob_knowledge(["The ordering service batches messages."], backend)
    assert sorted(r.name for r in kn.records) == ["batch_size", "timeout"]
    assert [c.id for c in kn.clusters] == ["ordering"]
    assert len(backend.prompts) == 3
    assert "Excerpt" in backend.prompts[0]
    space = build_space(kn)
    assert len(space) == 2


def test_extract_repair_retry_recovers():
    backend = QueueBackend(["not json at all", IDENTIFY, ATTRIBUTE, CLUSTER])
    kn = extract_knob_knowledge(["manual text"], backend)
    assert len(kn.records) == 2
    assert len(backend.prompts) == 4
    assert "could not be used" in backend.prompts[1]


def test_extract_rejects_after_failed_repair():
    backend = QueueBackend(["garbage", "still garbage"])
    with pytest.raises(ExtractionRejected):
        extract_knob_knowledge(["manual text"], backend)


def test_extract_requires_text():
    with pytest.raises(ExtractionRejected):
        extract_knob_knowledge([], QueueBackend([]))


def test_extract_handles_fenced_replies():
    fenced = f"```json\n{IDENTIFY}\n```"
    backend = QueueBackend([fenced, ATTRIBUTE, CLUSTER])
    kn = extract_knob_knowledge(["manual text"], backend)
    assert len(kn.records) == 2


def test_extract_drops_unclustered_knobs():
    grouping = json.dumps(
        {
            "clusters": [{"id": "ordering", "role": "r", "description": ""}],
            "assignments": {"batch_size": "ordering", "timeout": "ghost_cluster"},
        }
    )
    backend = QueueBackend([IDENTIFY, ATTRIBUTE, grouping])
    kn = extract_knob_knowledge(["manual text"], backend)
    assert [r.name for r in kn.records] == ["batch_size"]


def test_extract_no_knobs_in_chunk():
    backend = QueueBackend([json.dumps({"knobs": []})])
    kn = extract_knob_knowledge(["nothing relevant here"], backend)
    assert kn.records == ()
    assert len(backend.prompts) == 1
