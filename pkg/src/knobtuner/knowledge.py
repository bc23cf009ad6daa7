"""Multi-source knowledge: loading, validation, and manual-text extraction.

Three knowledge sources ground every tuning decision: per-knob records
(descriptions, types, ranges, relevance, cluster assignment), the hardware
inventory, and the network topology plus workload. Administrators supply
them as JSON files; the extraction pipeline can draft the knob file from
plain-text manual excerpts through a decision backend.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from .errors import ExtractionRejected, ParseError, SchemaViolation
from .space import (
    BoolDomain,
    Cluster,
    ConfigSpace,
    Domain,
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
    Value,
    WorkloadSpec,
    is_scalar,
)

log = logging.getLogger(__name__)

KNOB_TYPES = ("integer", "real", "boolean", "string", "enum")

MAX_CHUNK_CHARS = 8000


@dataclass(frozen=True)
class KnobRecord:
    """One knob's knowledge entry, as read from a file or extracted."""

    name: str
    description: str = ""
    type: str = "integer"
    unit: str = ""
    special_values: tuple[SpecialValue, ...] = ()
    range: tuple[float, float, float] | None = None  # (min, max, step); step 0 means unset
    values: tuple[str, ...] | None = None
    pattern: str = ""
    default: Value = 0
    cluster: str = ""
    performance_relevant: bool = True

    def to_entry(self) -> dict[str, Any]:
        entry: dict[str, Any] = {
            "name": self.name,
            "description": self.description,
            "type": self.type,
            "unit": self.unit,
            "default": self.default,
            "cluster": self.cluster,
            "performance_relevant": self.performance_relevant,
        }
        if self.special_values:
            entry["special_values"] = [
                {"value": sp.value, "meaning": sp.meaning} for sp in self.special_values
            ]
        if self.range is not None:
            lo, hi, step = self.range
            r: dict[str, Any] = {"min": lo, "max": hi}
            if step:
                r["step"] = step
            if self.type == "integer":
                r = {k: int(v) for k, v in r.items()}
            entry["range"] = r
        if self.values is not None:
            entry["values"] = list(self.values)
        if self.pattern:
            entry["pattern"] = self.pattern
        return entry


@dataclass(frozen=True)
class KnobKnowledge:
    records: tuple[KnobRecord, ...]
    clusters: tuple[Cluster, ...]

    def record_for(self, name: str) -> KnobRecord | None:
        for r in self.records:
            if r.name == name:
                return r
        return None

    def to_doc(self) -> dict[str, Any]:
        return {
            "knobs": [r.to_entry() for r in self.records],
            "clusters": [
                {"id": c.id, "role": c.role, "description": c.description}
                for c in self.clusters
            ],
        }


@dataclass(frozen=True)
class KnowledgeBundle:
    """Everything a tuning session knows before it starts searching."""

    knob: KnobKnowledge
    system: SystemContext
    space_digest: str = ""

    @property
    def clusters(self) -> tuple[Cluster, ...]:
        return self.knob.clusters


def fallback_range(default: Value, as_int: bool) -> tuple[float, float]:
    """Range for knobs whose manual gives none: a decade around the default.

    A zero default would collapse the rule, so it widens to [0, 10].
    """
    try:
        d = float(default)  # type: ignore[arg-type]
    except (TypeError, ValueError):
        d = 0.0
    if d == 0:
        lo, hi = 0.0, 10.0
    else:
        cands = (0.1 * d, 10 * d, d)
        lo, hi = min(cands), max(cands)
    if as_int:
        return float(math.floor(lo)), float(math.ceil(hi))
    return lo, hi


def _domain_for(record: KnobRecord) -> Domain:
    if record.values is not None:
        return EnumDomain(values=record.values)
    t = record.type
    if t == "boolean":
        return BoolDomain()
    if t == "string":
        return PatternDomain(pattern=record.pattern or ".*")
    if t == "integer":
        if record.range is not None:
            lo, hi, step = record.range
            return IntRange(lo=int(lo), hi=int(hi), step=int(step) if step else 1)
        lo, hi = fallback_range(record.default, as_int=True)
        return IntRange(lo=int(lo), hi=int(hi))
    if record.range is not None:
        lo, hi, _ = record.range
        return RealRange(lo=float(lo), hi=float(hi))
    lo, hi = fallback_range(record.default, as_int=False)
    return RealRange(lo=lo, hi=hi)


def record_to_knob(record: KnobRecord) -> Knob:
    domain = _domain_for(record)
    default: Value = record.default
    if isinstance(domain, IntRange) and isinstance(default, float) and default.is_integer():
        default = int(default)
    if isinstance(domain, RealRange) and isinstance(default, int) and not isinstance(default, bool):
        default = float(default)
    return Knob(
        name=record.name,
        domain=domain,
        default=default,
        cluster_id=record.cluster,
        unit=record.unit,
        description=record.description,
        special_values=record.special_values,
    )


def build_space(knowledge: KnobKnowledge) -> ConfigSpace:
    """Bind knob knowledge to a configuration space."""
    return ConfigSpace(
        knobs=tuple(record_to_knob(r) for r in knowledge.records),
        clusters=knowledge.clusters,
    )


# ---------------------------------------------------------------------------
# document validation


def _parse_clusters(raw: Any, path: str, out: list[str]) -> tuple[Cluster, ...]:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        out.append(f"{path}: expected a list")
        return ()
    clusters: list[Cluster] = []
    seen: set[str] = set()
    for i, entry in enumerate(raw):
        p = f"{path}[{i}]"
        if not isinstance(entry, dict):
            out.append(f"{p}: expected an object")
            continue
        cid = entry.get("id")
        if not isinstance(cid, str) or not cid:
            out.append(f"{p}.id: expected a non-empty string")
            continue
        if cid in seen:
            out.append(f"{p}.id: duplicate cluster id {cid!r}")
            continue
        seen.add(cid)
        role = entry.get("role", "")
        desc = entry.get("description", "")
        if not isinstance(role, str):
            out.append(f"{p}.role: expected a string")
            role = ""
        if not isinstance(desc, str):
            out.append(f"{p}.description: expected a string")
            desc = ""
        clusters.append(Cluster(id=cid, role=role, description=desc))
    return tuple(clusters)


def _parse_knob_entry(entry: Any, path: str) -> tuple[KnobRecord | None, list[str]]:
    """Parse one knob entry; returns the record (or None) plus its violations."""
    out: list[str] = []
    if not isinstance(entry, dict):
        return None, [f"{path}: expected an object"]

    name = entry.get("name")
    if not isinstance(name, str) or not name:
        return None, [f"{path}.name: expected a non-empty string"]

    t = entry.get("type", "integer")
    if t == "float":
        t = "real"
    if t not in KNOB_TYPES:
        out.append(f"{path}.type: {t!r} is not one of {list(KNOB_TYPES)}")
        t = "integer"

    desc = entry.get("description", "")
    unit = entry.get("unit", "")
    if not isinstance(desc, str):
        out.append(f"{path}.description: expected a string")
        desc = ""
    if not isinstance(unit, str):
        out.append(f"{path}.unit: expected a string")
        unit = ""

    specials: list[SpecialValue] = []
    for j, sp in enumerate(entry.get("special_values", []) or []):
        sp_path = f"{path}.special_values[{j}]"
        if not isinstance(sp, dict) or "value" not in sp:
            out.append(f"{sp_path}: expected an object with a value")
            continue
        if not is_scalar(sp["value"]):
            out.append(f"{sp_path}.value: expected a scalar")
            continue
        meaning = sp.get("meaning", "")
        specials.append(SpecialValue(value=sp["value"], meaning=str(meaning)))

    rng = None
    raw_range = entry.get("range")
    if raw_range is not None:
        if not isinstance(raw_range, dict):
            out.append(f"{path}.range: expected an object with min/max")
        else:
            lo, hi = raw_range.get("min"), raw_range.get("max")
            step = raw_range.get("step", 0)
            bad = False
            for label, v in (("min", lo), ("max", hi), ("step", step)):
                if not isinstance(v, (int, float)) or isinstance(v, bool):
                    out.append(f"{path}.range.{label}: expected a number")
                    bad = True
            if not bad:
                if lo > hi:
                    out.append(f"{path}.range: min {lo} > max {hi}")
                elif step < 0:
                    out.append(f"{path}.range.step: must be positive")
                else:
                    rng = (float(lo), float(hi), float(step))

    values = None
    raw_values = entry.get("values")
    if raw_values is not None:
        if rng is not None:
            out.append(f"{path}: range and values are mutually exclusive")
        elif not isinstance(raw_values, list) or not raw_values:
            out.append(f"{path}.values: expected a non-empty list")
        elif not all(isinstance(v, str) for v in raw_values):
            out.append(f"{path}.values: enumeration values must be strings")
        else:
            values = tuple(raw_values)
            t = "enum"

    pattern = entry.get("pattern", "")
    if not isinstance(pattern, str):
        out.append(f"{path}.pattern: expected a string")
        pattern = ""

    if "default" not in entry:
        out.append(f"{path}.default: required")
        return None, out
    default = entry["default"]
    if not is_scalar(default):
        out.append(f"{path}.default: expected a scalar")
        return None, out

    cluster = entry.get("cluster")
    if not isinstance(cluster, str) or not cluster:
        out.append(f"{path}.cluster: expected a non-empty string")
        return None, out

    relevant = entry.get("performance_relevant", True)
    if not isinstance(relevant, bool):
        out.append(f"{path}.performance_relevant: expected a boolean")
        relevant = True

    record = KnobRecord(
        name=name,
        description=desc,
        type=t,
        unit=unit,
        special_values=tuple(specials),
        range=rng,
        values=values,
        pattern=pattern,
        default=default,
        cluster=cluster,
        performance_relevant=relevant,
    )
    if not out:
        # the default must survive domain construction
        try:
            record_to_knob(record)
        except Exception as exc:
            out.append(f"{path}: {exc}")
            return None, out
    return (record if not out else None), out


def parse_knob_doc(doc: Any, source: str = "knobs") -> KnobKnowledge:
    """Validate and parse a knob-knowledge document; raises with all violations."""
    violations: list[str] = []
    if not isinstance(doc, dict):
        raise SchemaViolation([f"{source}: expected a JSON object"])
    clusters = _parse_clusters(doc.get("clusters"), f"{source}.clusters", violations)
    cluster_ids = {c.id for c in clusters}
    raw_knobs = doc.get("knobs")
    records: list[KnobRecord] = []
    if not isinstance(raw_knobs, list):
        violations.append(f"{source}.knobs: expected a list")
        raw_knobs = []
    seen: set[str] = set()
    for i, entry in enumerate(raw_knobs):
        record, errs = _parse_knob_entry(entry, f"{source}.knobs[{i}]")
        violations.extend(errs)
        if record is None:
            continue
        if record.name in seen:
            violations.append(f"{source}.knobs[{i}].name: duplicate knob {record.name!r}")
            continue
        if record.cluster not in cluster_ids:
            violations.append(
                f"{source}.knobs[{i}]: knob {record.name!r} references unknown "
                f"cluster {record.cluster!r}"
            )
            continue
        seen.add(record.name)
        records.append(record)
    if violations:
        raise SchemaViolation(violations)
    return KnobKnowledge(records=tuple(records), clusters=clusters)


def parse_system_doc(doc: Any, source: str = "system") -> SystemContext:
    violations: list[str] = []
    if not isinstance(doc, dict):
        raise SchemaViolation([f"{source}: expected a JSON object"])

    hardware: list[HardwareNode] = []
    raw_hw = doc.get("hardware")
    if not isinstance(raw_hw, list) or not raw_hw:
        violations.append(f"{source}.hardware: expected a non-empty list")
    else:
        for i, entry in enumerate(raw_hw):
            p = f"{source}.hardware[{i}]"
            if not isinstance(entry, dict):
                violations.append(f"{p}: expected an object")
                continue
            node = entry.get("node")
            cpus = entry.get("cpus")
            mem = entry.get("memory_mb")
            disk = entry.get("storage_gb")
            ok = True
            if not isinstance(node, str) or not node:
                violations.append(f"{p}.node: expected a non-empty string")
                ok = False
            if not isinstance(cpus, int) or isinstance(cpus, bool) or cpus <= 0:
                violations.append(f"{p}.cpus: expected a positive integer")
                ok = False
            for label, v in (("memory_mb", mem), ("storage_gb", disk)):
                if not isinstance(v, (int, float)) or isinstance(v, bool) or v <= 0:
                    violations.append(f"{p}.{label}: expected a positive number")
                    ok = False
            if ok:
                hardware.append(
                    HardwareNode(
                        node=node,
                        cpus=cpus,
                        memory_mb=float(mem),
                        storage_gb=float(disk),
                        notes=str(entry.get("notes", "")),
                    )
                )

    nodes: list[NetworkNode] = []
    edges: list[tuple[str, str]] = []
    raw_net = doc.get("network")
    if not isinstance(raw_net, dict):
        violations.append(f"{source}.network: expected an object")
    else:
        declared: set[str] = set()
        for i, entry in enumerate(raw_net.get("nodes", []) or []):
            p = f"{source}.network.nodes[{i}]"
            if not isinstance(entry, dict):
                violations.append(f"{p}: expected an object")
                continue
            nm, role = entry.get("name"), entry.get("role")
            if not isinstance(nm, str) or not nm:
                violations.append(f"{p}.name: expected a non-empty string")
                continue
            if not isinstance(role, str) or not role:
                violations.append(f"{p}.role: expected a non-empty string")
                continue
            if nm in declared:
                violations.append(f"{p}.name: duplicate node {nm!r}")
                continue
            declared.add(nm)
            nodes.append(NetworkNode(name=nm, role=role, org=str(entry.get("org", ""))))
        for i, edge in enumerate(raw_net.get("edges", []) or []):
            p = f"{source}.network.edges[{i}]"
            if (
                not isinstance(edge, (list, tuple))
                or len(edge) != 2
                or not all(isinstance(e, str) for e in edge)
            ):
                violations.append(f"{p}: expected a pair of node names")
                continue
            a, b = edge
            if a not in declared or b not in declared:
                violations.append(f"{p}: edge ({a}, {b}) references undeclared nodes")
                continue
            edges.append((a, b))

    workload = None
    raw_wl = doc.get("workload")
    if not isinstance(raw_wl, dict):
        violations.append(f"{source}.workload: expected an object")
    else:
        wname = raw_wl.get("name")
        count = raw_wl.get("transaction_count")
        if not isinstance(wname, str) or not wname:
            violations.append(f"{source}.workload.name: expected a non-empty string")
        if not isinstance(count, int) or isinstance(count, bool) or count <= 0:
            violations.append(
                f"{source}.workload.transaction_count: expected a positive integer"
            )
        extra = raw_wl.get("extra", {})
        if not isinstance(extra, dict):
            violations.append(f"{source}.workload.extra: expected an object")
            extra = {}
        if isinstance(wname, str) and wname and isinstance(count, int) and count > 0:
            workload = WorkloadSpec(
                name=wname,
                transaction_count=count,
                rate_mode=str(raw_wl.get("rate_mode", "fixed")),
                extra=extra,
            )

    if violations or workload is None:
        raise SchemaViolation(violations or [f"{source}.workload: invalid"])
    return SystemContext(
        hardware=tuple(hardware),
        network=NetworkTopology(nodes=tuple(nodes), edges=tuple(edges)),
        workload=workload,
    )


def _read_json(path: Path) -> Any:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc


def _merge_manual(admin: KnobKnowledge, manual: KnobKnowledge) -> KnobKnowledge:
    """Enrich administrator knowledge with manual-derived records.

    On conflicting fields the administrator file wins and the conflict is
    logged; manual-only knobs and clusters are appended.
    """
    by_name = {r.name: r for r in manual.records}
    merged: list[KnobRecord] = []
    for rec in admin.records:
        man = by_name.pop(rec.name, None)
        if man is None:
            merged.append(rec)
            continue
        for fname in ("range", "default", "type", "values"):
            a, m = getattr(rec, fname), getattr(man, fname)
            if m is not None and m != a:
                log.warning(
                    "knob %s: manual %s %r conflicts with administrator value %r; "
                    "keeping the administrator value",
                    rec.name, fname, m, a,
                )
        updates: dict[str, Any] = {}
        if not rec.description and man.description:
            updates["description"] = man.description
        if not rec.unit and man.unit:
            updates["unit"] = man.unit
        if not rec.special_values and man.special_values:
            updates["special_values"] = man.special_values
        if updates:
            rec = dataclasses.replace(rec, **updates)
        merged.append(rec)

    cluster_ids = {c.id for c in admin.clusters}
    clusters = list(admin.clusters)
    for rec in manual.records:
        if rec.name in by_name:  # only the leftovers
            if rec.cluster not in cluster_ids:
                for c in manual.clusters:
                    if c.id == rec.cluster and c.id not in cluster_ids:
                        clusters.append(c)
                        cluster_ids.add(c.id)
            if rec.cluster in cluster_ids:
                merged.append(rec)
            else:
                log.warning("manual knob %s has no usable cluster; dropped", rec.name)
    return KnobKnowledge(records=tuple(merged), clusters=tuple(clusters))


def load_bundle(
    knob_path: str | Path,
    system_path: str | Path,
    manual_knob_path: str | Path | None = None,
) -> KnowledgeBundle:
    """Load and validate the knowledge files into one immutable bundle.

    All schema violations across both files are collected and raised
    together.
    """
    knob_path = Path(knob_path)
    system_path = Path(system_path)
    knob_doc = _read_json(knob_path)
    system_doc = _read_json(system_path)

    violations: list[str] = []
    knob_knowledge = None
    system = None
    try:
        knob_knowledge = parse_knob_doc(knob_doc, source=knob_path.name)
    except SchemaViolation as exc:
        violations.extend(exc.violations)
    try:
        system = parse_system_doc(system_doc, source=system_path.name)
    except SchemaViolation as exc:
        violations.extend(exc.violations)
    if violations or knob_knowledge is None or system is None:
        raise SchemaViolation(violations)

    if manual_knob_path is not None:
        manual_doc = _read_json(Path(manual_knob_path))
        manual = parse_knob_doc(manual_doc, source=Path(manual_knob_path).name)
        knob_knowledge = _merge_manual(knob_knowledge, manual)

    digest = hashlib.sha256(
        json.dumps(knob_knowledge.to_doc(), sort_keys=True).encode("utf-8")
    ).hexdigest()
    return KnowledgeBundle(knob=knob_knowledge, system=system, space_digest=digest)


# ---------------------------------------------------------------------------
# extraction from manual text


def chunk_texts(texts: Iterable[str], cap: int = MAX_CHUNK_CHARS) -> list[str]:
    """Pack manual excerpts into chunks no longer than the prompt cap.

    Splits on blank lines and regroups greedily; paragraphs longer than the
    cap are hard-split.
    """
    paragraphs: list[str] = []
    for text in texts:
        for para in text.split("\n\n"):
            para = para.strip()
            if not para:
                continue
            while len(para) > cap:
                paragraphs.append(para[:cap])
                para = para[cap:]
            paragraphs.append(para)
    chunks: list[str] = []
    current = ""
    for para in paragraphs:
        joined = f"{current}\n\n{para}" if current else para
        if len(joined) > cap and current:
            chunks.append(current)
            current = para
        else:
            current = joined
    if current:
        chunks.append(current)
    return chunks


def _extract_json(text: str) -> Any:
    """Pull the first JSON object out of a backend reply, fences included."""
    text = text.strip()
    if text.startswith("```"):
        lines = text.splitlines()
        body = [ln for ln in lines if not ln.strip().startswith("```")]
        text = "\n".join(body).strip()
    start = text.find("{")
    if start < 0:
        raise ValueError("no JSON object in reply")
    depth = 0
    for i in range(start, len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                return json.loads(text[start : i + 1])
    raise ValueError("unbalanced JSON object in reply")


def _validate_identify(doc: Any) -> list[str]:
    if not isinstance(doc, dict) or not isinstance(doc.get("knobs"), list):
        raise ValueError('reply must be {"knobs": [names]}')
    names = []
    for v in doc["knobs"]:
        if isinstance(v, str) and v:
            names.append(v)
        else:
            raise ValueError("knob names must be non-empty strings")
    return names


def _query(backend, prompt: str, validate, description: str):
    """One extraction query with a single schema-repair retry."""
    reply = backend.complete(prompt)
    try:
        return validate(_extract_json(reply))
    except (ValueError, json.JSONDecodeError, SchemaViolation) as exc:
        first_error = exc
    repair = (
        f"{prompt}\n\nYour previous reply could not be used: {first_error}. "
        "Answer again with exactly one valid JSON object and nothing else."
    )
    reply = backend.complete(repair)
    try:
        return validate(_extract_json(reply))
    except (ValueError, json.JSONDecodeError, SchemaViolation) as exc:
        raise ExtractionRejected(
            f"{description}: reply failed validation after retry: {exc}"
        ) from exc


def extract_knob_knowledge(texts: Iterable[str], backend) -> KnobKnowledge:
    """Draft knob knowledge from manual excerpts via the decision backend.

    Each chunk goes through three queries: identify performance-related
    knobs, attribute them, and cluster them. Records that fail validation
    are dropped with a warning; malformed replies fail hard after one
    repair retry.
    """
    chunks = chunk_texts(texts)
    if not chunks:
        raise ExtractionRejected("no manual text to extract from")

    records: dict[str, KnobRecord] = {}
    clusters: dict[str, Cluster] = {}

    for ci, chunk in enumerate(chunks):
        tag = f"chunk {ci + 1}/{len(chunks)}"
        names = _query(
            backend,
            "You are reading a systems manual excerpt. List the names of the "
            "performance-related configuration knobs it documents.\n"
            'Reply with JSON only: {"knobs": ["name", ...]}\n\n'
            f"Excerpt:\n{chunk}",
            _validate_identify,
            f"{tag} identify",
        )
        if not names:
            log.info("%s: no knobs identified, skipping", tag)
            continue

        def check_attr(doc: Any) -> list[Any]:
            if not isinstance(doc, dict) or not isinstance(doc.get("knobs"), list):
                raise ValueError('reply must be {"knobs": [records]}')
            return doc["knobs"]

        entries = _query(
            backend,
            "For each knob named below, give its attributes from the excerpt: "
            "description, type (integer, real, boolean, or string), unit, "
            'special values, value range {"min","max","step"} or "values" list, '
            "default, and whether it is performance relevant.\n"
            'Reply with JSON only: {"knobs": [{"name","description","type","unit",'
            '"special_values":[{"value","meaning"}],"range":{"min","max","step"},'
            '"default","performance_relevant"}]}\n\n'
            f"Knobs: {json.dumps(names)}\n\nExcerpt:\n{chunk}",
            check_attr,
            f"{tag} attribute",
        )

        def check_cluster(doc: Any) -> dict[str, Any]:
            if not isinstance(doc, dict):
                raise ValueError("reply must be a JSON object")
            if not isinstance(doc.get("clusters"), list) or not isinstance(
                doc.get("assignments"), dict
            ):
                raise ValueError('reply must carry "clusters" and "assignments"')
            return doc

        existing = [
            {"id": c.id, "role": c.role, "description": c.description}
            for c in clusters.values()
        ]
        grouping = _query(
            backend,
            "Group the knobs below into functional clusters (for example "
            "ordering, validation, networking, resource management). Reuse the "
            "existing cluster ids when they fit.\n"
            'Reply with JSON only: {"clusters":[{"id","role","description"}],'
            '"assignments":{"knob_name":"cluster_id"}}\n\n'
            f"Existing clusters: {json.dumps(existing)}\n"
            f"Knobs: {json.dumps(names)}",
            check_cluster,
            f"{tag} cluster",
        )

        new_violations: list[str] = []
        new_clusters = _parse_clusters(grouping["clusters"], f"{tag}.clusters", new_violations)
        for msg in new_violations:
            log.warning("%s: dropped cluster entry (%s)", tag, msg)
        for c in new_clusters:
            clusters.setdefault(c.id, c)

        assignments = grouping["assignments"]
        for i, entry in enumerate(entries):
            if isinstance(entry, dict) and "cluster" not in entry:
                name = entry.get("name")
                if isinstance(name, str) and name in assignments:
                    entry = {**entry, "cluster": assignments[name]}
            record, errs = _parse_knob_entry(entry, f"{tag}.knobs[{i}]")
            if record is None or errs:
                log.warning("%s: dropped knob entry (%s)", tag, "; ".join(errs) or "invalid")
                continue
            if record.cluster not in clusters:
                log.warning(
                    "%s: knob %s assigned to undeclared cluster %r; dropped",
                    tag, record.name, record.cluster,
                )
                continue
            if record.name in records:
                log.warning("%s: knob %s already extracted; keeping the first", tag, record.name)
                continue
            records[record.name] = record

    return KnobKnowledge(records=tuple(records.values()), clusters=tuple(clusters.values()))
