"""Shared fixtures: generated knob/system documents and spaces of a few sizes."""
import json
import random

import pytest

from knobtuner.knowledge import (
    KnowledgeBundle,
    build_space,
    parse_knob_doc,
    parse_system_doc,
)


def make_docs(n_knobs=20, n_clusters=4, seed=7):
    """A knob document and a system document with mixed domain kinds."""
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
        "workload": {
            "name": "transfer",
            "transaction_count": 10000,
            "rate_mode": "fixed",
            "extra": {},
        },
    }
    return knob_doc, system_doc


def make_setup(n_knobs=20, n_clusters=4, seed=7):
    knob_doc, system_doc = make_docs(n_knobs, n_clusters, seed)
    knowledge = parse_knob_doc(knob_doc, "generated")
    system = parse_system_doc(system_doc, "generated")
    bundle = KnowledgeBundle(
        knob=knowledge, system=system, space_digest=f"gen-{n_knobs}-{n_clusters}-{seed}"
    )
    return build_space(knowledge), bundle


@pytest.fixture(scope="session")
def tiny_setup():
    return make_setup(8, 2, seed=3)


@pytest.fixture(scope="session")
def small_setup():
    return make_setup(20, 4, seed=7)


@pytest.fixture(scope="session")
def wide_setup():
    return make_setup(40, 5, seed=7)


@pytest.fixture
def bundle_files(tmp_path):
    """Knob and system documents written to disk; returns their paths."""
    knob_doc, system_doc = make_docs(8, 2, seed=3)
    knob_path = tmp_path / "knobs.json"
    system_path = tmp_path / "system.json"
    knob_path.write_text(json.dumps(knob_doc))
    system_path.write_text(json.dumps(system_doc))
    return str(knob_path), str(system_path)
