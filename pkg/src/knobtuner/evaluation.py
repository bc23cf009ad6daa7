"""Throughput evaluation backends.

Two implementations of the same contract: a deterministic synthetic
performance model with a planted optimum (cheap enough to verify search
behavior at desk scale), and an adapter that spawns an external benchmark
command against a real deployment.
"""

from __future__ import annotations

import json
import logging
import math
import random
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError, SpawnFailure
from .knowledge import KnowledgeBundle
from .space import (
    BoolDomain,
    ConfigSpace,
    Configuration,
    EnumDomain,
    IntRange,
    Knob,
    RealRange,
    Value,
    WorkloadSpec,
    normalized_gap,
)

log = logging.getLogger(__name__)

SEED_STRIDE = 1_000_003


@dataclass(frozen=True)
class RunError:
    stage: str
    message: str

    def to_dict(self) -> dict[str, str]:
        return {"stage": self.stage, "message": self.message}


@dataclass(frozen=True)
class EvalResult:
    """One benchmark outcome: throughput in transactions per second."""

    throughput: float
    run_errors: tuple[RunError, ...] = ()
    wall_time: float = 0.0
    failed: bool = False
    deploy_time: float = 0.0

    def __post_init__(self):
        if self.throughput < 0:
            raise ConfigError(f"throughput must be non-negative, got {self.throughput}")
        if self.failed and self.throughput != 0:
            raise ConfigError("a failed evaluation must report zero throughput")

    def to_dict(self) -> dict[str, Any]:
        return {
            "throughput": self.throughput,
            "run_errors": [e.to_dict() for e in self.run_errors],
            "wall_time": self.wall_time,
            "failed": self.failed,
            "deploy_time": self.deploy_time,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EvalResult":
        return cls(
            throughput=float(data["throughput"]),
            run_errors=tuple(
                RunError(stage=e["stage"], message=e["message"])
                for e in data.get("run_errors", [])
            ),
            wall_time=float(data.get("wall_time", 0.0)),
            failed=bool(data.get("failed", False)),
            deploy_time=float(data.get("deploy_time", 0.0)),
        )


class Evaluator:
    """Contract shared by all evaluation backends."""

    name = "evaluator"

    def __init__(self):
        self.baseline_measured = False

    def evaluate(self, config: Configuration, workload: WorkloadSpec) -> EvalResult:
        raise NotImplementedError

    def get_state(self) -> dict[str, Any]:
        return {}

    def set_state(self, state: Mapping[str, Any]) -> None:
        pass


@dataclass(frozen=True)
class ResourceConstraint:
    """A hardware-derived cap: pushing the knob past it fails the run."""

    knob: str
    cap: float
    description: str

    def violated(self, config: Configuration) -> bool:
        v = config.assignments.get(self.knob)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return False
        return float(v) > self.cap * (1 + 1e-12)


class SyntheticModel(Evaluator):
    """Deterministic stand-in for a blockchain deployment.

    Throughput is a planted-optimum response surface: per-cluster losses
    (quadratic in normalized distance from the optimum, capped at 1),
    cross-cluster interaction penalties, and hard resource constraints
    derived from the hardware inventory. Out-of-domain assignments model a
    system that refuses to start.
    """

    name = "synthetic"

    def __init__(
        self,
        space: ConfigSpace,
        t_max: float,
        optimum: Mapping[str, Value],
        cluster_weight: Mapping[str, float],
        knob_scale: Mapping[str, float],
        interactions: tuple[tuple[str, str, float], ...] = (),
        constraints: tuple[ResourceConstraint, ...] = (),
        noise: float = 0.0,
        seed: int = 0,
    ):
        super().__init__()
        self.space = space
        self.t_max = t_max
        self.optimum = dict(optimum)
        self.cluster_weight = dict(cluster_weight)
        self.knob_scale = dict(knob_scale)
        self.interactions = interactions
        self.constraints = constraints
        self.noise = noise
        self.seed = seed
        self.eval_count = 0

    def knob_gap(self, knob: Knob, v: Value) -> float:
        return normalized_gap(knob, v, self.optimum[knob.name])

    def knob_loss(self, knob: Knob, v: Value) -> float:
        gap = self.knob_gap(knob, v)
        scale = self.knob_scale[knob.name]
        return min(1.0, (gap / scale) ** 2)

    def response(self, config: Configuration) -> float:
        """Noise-free throughput of an in-domain configuration."""
        t = self.t_max
        for cluster_id, weight in self.cluster_weight.items():
            knobs = self.space.knobs_in(cluster_id)
            if not knobs:
                continue
            mean_loss = sum(
                self.knob_loss(k, config.assignments[k.name]) for k in knobs
            ) / len(knobs)
            t -= weight * mean_loss
        for a, b, strength in self.interactions:
            ka, kb = self.space.knob(a), self.space.knob(b)
            t -= strength * self.knob_gap(ka, config.assignments[a]) * self.knob_gap(
                kb, config.assignments[b]
            )
        return max(0.0, t)

    def evaluate(self, config: Configuration, workload: WorkloadSpec) -> EvalResult:
        self.eval_count += 1
        errors: list[RunError] = []
        for knob in self.space.knobs:
            if knob.name not in config.assignments:
                errors.append(RunError("startup", f"knob {knob.name}: no value assigned"))
                continue
            v = config.assignments[knob.name]
            if not knob.permits(v):
                errors.append(
                    RunError("startup", f"knob {knob.name}: value {v!r} outside the domain")
                )
        if not errors:
            for c in self.constraints:
                if c.violated(config):
                    errors.append(RunError("resource", c.description))
        if errors:
            return EvalResult(throughput=0.0, run_errors=tuple(errors), failed=True)

        t = self.response(config)
        if self.noise:
            rng = random.Random(self.seed * SEED_STRIDE + self.eval_count)
            t = max(0.0, t + rng.gauss(0.0, self.noise))
        return EvalResult(throughput=t)

    def get_state(self) -> dict[str, Any]:
        return {"eval_count": self.eval_count, "baseline_measured": self.baseline_measured}

    def set_state(self, state: Mapping[str, Any]) -> None:
        self.eval_count = int(state.get("eval_count", 0))
        self.baseline_measured = bool(state.get("baseline_measured", False))


def _sample_in_domain(knob: Knob, rng: random.Random) -> Value:
    d = knob.domain
    if isinstance(d, IntRange):
        n_steps = (d.hi - d.lo) // d.step
        return d.lo + rng.randint(0, n_steps) * d.step
    if isinstance(d, RealRange):
        return rng.uniform(d.lo, d.hi)
    if isinstance(d, BoolDomain):
        return rng.random() < 0.5
    if isinstance(d, EnumDomain):
        return rng.choice(list(d.values))
    return knob.default  # free-string knobs keep their default


def build_synthetic(
    space: ConfigSpace,
    bundle: KnowledgeBundle | None,
    seed: int,
    difficulty: float = 0.5,
) -> SyntheticModel:
    """Construct a seeded synthetic model over the given space.

    Plants one in-domain optimum value per knob, pushed away from the
    default for performance-relevant knobs; weights clusters; designates
    ceil(m/10) cross-cluster interacting pairs; and derives hard resource
    caps from the hardware inventory.
    """
    if len(space.clusters) < 2:
        raise ConfigError("the synthetic model needs at least 2 clusters")
    if not 0.0 <= difficulty <= 1.0:
        raise ConfigError("difficulty must lie in [0, 1]")

    rng = random.Random(seed * SEED_STRIDE + 17)
    t_max = 1500.0 + rng.random() * 1000.0
    budget = t_max * (0.25 + 0.5 * difficulty)

    def relevant(name: str) -> bool:
        if bundle is None:
            return True
        record = bundle.knob.record_for(name)
        return record.performance_relevant if record else True

    optimum: dict[str, Value] = {}
    for knob in space.knobs:
        v = _sample_in_domain(knob, rng)
        if relevant(knob.name):
            for _ in range(20):
                if normalized_gap(knob, v, knob.default) >= 0.3:
                    break
                v = _sample_in_domain(knob, rng)
        optimum[knob.name] = v

    raw = {c.id: rng.uniform(0.5, 1.5) for c in space.clusters}
    total = sum(raw.values())
    cluster_weight = {cid: r / total * 0.85 * budget for cid, r in raw.items()}

    knob_scale = {k.name: rng.uniform(0.35, 0.85) for k in space.knobs}

    n_pairs = math.ceil(len(space) / 10)
    pairs: list[tuple[str, str, float]] = []
    names = list(space.names())
    attempts = 0
    raw_strengths: list[float] = []
    while len(pairs) < n_pairs and attempts < 200:
        attempts += 1
        a, b = rng.sample(names, 2)
        if space.knob(a).cluster_id == space.knob(b).cluster_id:
            continue
        if any(p[:2] == (a, b) or p[:2] == (b, a) for p in pairs):
            continue
        pairs.append((a, b, 0.0))
        raw_strengths.append(rng.uniform(0.5, 1.5))
    if pairs:
        scale = 0.15 * budget / sum(raw_strengths)
        pairs = [
            (a, b, raw_strengths[i] * scale) for i, (a, b, _) in enumerate(pairs)
        ]

    constraints: list[ResourceConstraint] = []
    min_cpus = bundle.system.min_cpus() if bundle is not None else 8
    frac = min(max(min_cpus / 32.0, 0.15), 0.85)
    numeric = [k for k in space.knobs if isinstance(k.domain, (IntRange, RealRange))]
    n_constraints = math.ceil(len(space) / 20)
    for knob in rng.sample(numeric, min(n_constraints, len(numeric))):
        ref_vals = [float(optimum[knob.name]), float(knob.default)]  # type: ignore[arg-type]
        ref = max(ref_vals)
        headroom = knob.domain.hi - ref  # type: ignore[union-attr]
        if headroom <= 0:
            continue
        cap = ref + frac * headroom
        if isinstance(knob.domain, IntRange):
            cap = float(math.floor(cap))
            if cap < ref:
                continue
        constraints.append(
            ResourceConstraint(
                knob=knob.name,
                cap=cap,
                description=(
                    f"knob {knob.name} above simulated capacity {cap:g} "
                    f"for {min_cpus}-cpu nodes"
                ),
            )
        )

    return SyntheticModel(
        space=space,
        t_max=t_max,
        optimum=optimum,
        cluster_weight=cluster_weight,
        knob_scale=knob_scale,
        interactions=tuple(pairs),
        constraints=tuple(constraints),
        seed=seed,
    )


class ExternalCommandEvaluator(Evaluator):
    """Runs a benchmark command and parses its final stdout line.

    The command template must reference {config_path} and {workload_path};
    both are written as JSON files before each run. The command's last
    stdout line must be a JSON object {"tps": number, "errors": [string]},
    optionally carrying "deploy_seconds" for time attribution. Failures of
    the run (nonzero exit, timeout, unparseable metrics) become failed
    results rather than exceptions.
    """

    name = "external"

    def __init__(self, command: str, timeout: float = 1800.0):
        super().__init__()
        if "{config_path}" not in command or "{workload_path}" not in command:
            raise SpawnFailure(
                "the benchmark command must reference {config_path} and {workload_path}"
            )
        self.command = command
        self.timeout = timeout

    def evaluate(self, config: Configuration, workload: WorkloadSpec) -> EvalResult:
        started = time.monotonic()
        with tempfile.TemporaryDirectory(prefix="knobtuner-eval-") as tmp:
            config_path = Path(tmp) / "config.json"
            workload_path = Path(tmp) / "workload.json"
            config_path.write_text(json.dumps(config.to_flat_dict(), sort_keys=True))
            workload_path.write_text(json.dumps(workload.to_dict(), sort_keys=True))
            args = shlex.split(
                self.command.format(config_path=config_path, workload_path=workload_path)
            )
            try:
                proc = subprocess.run(
                    args, capture_output=True, text=True, timeout=self.timeout
                )
            except subprocess.TimeoutExpired:
                wall = time.monotonic() - started
                return EvalResult(
                    throughput=0.0,
                    run_errors=(
                        RunError("timeout", f"benchmark exceeded {self.timeout:g}s"),
                    ),
                    wall_time=wall,
                    failed=True,
                )
            except OSError as exc:
                raise SpawnFailure(f"could not spawn {args[0]!r}: {exc}") from exc

        wall = time.monotonic() - started
        if proc.stderr:
            log.debug("benchmark stderr: %s", proc.stderr.rstrip())
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        for ln in lines[:-1]:
            log.debug("benchmark stdout: %s", ln)

        if proc.returncode != 0:
            tail = proc.stderr.strip().splitlines()[-1] if proc.stderr.strip() else ""
            message = f"exit status {proc.returncode}" + (f": {tail}" if tail else "")
            return EvalResult(
                throughput=0.0,
                run_errors=(RunError("benchmark", message[:300]),),
                wall_time=wall,
                failed=True,
            )

        if not lines:
            return EvalResult(
                throughput=0.0,
                run_errors=(RunError("metrics", "no output to parse"),),
                wall_time=wall,
                failed=True,
            )
        try:
            metrics = json.loads(lines[-1])
            tps = metrics["tps"]
            if isinstance(tps, bool) or not isinstance(tps, (int, float)) or tps < 0:
                raise ValueError(f"bad tps value {tps!r}")
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            return EvalResult(
                throughput=0.0,
                run_errors=(RunError("metrics", f"unparseable metrics line: {exc}"),),
                wall_time=wall,
                failed=True,
            )

        errors = tuple(
            RunError("run", str(msg)) for msg in metrics.get("errors", []) or []
        )
        deploy = metrics.get("deploy_seconds", 0.0)
        if isinstance(deploy, bool) or not isinstance(deploy, (int, float)) or deploy < 0:
            deploy = 0.0
        return EvalResult(
            throughput=float(tps),
            run_errors=errors,
            wall_time=wall,
            deploy_time=float(deploy),
        )


def external_adapter(command: str, timeout: float = 1800.0) -> ExternalCommandEvaluator:
    """Factory for the external benchmark evaluator."""
    return ExternalCommandEvaluator(command=command, timeout=timeout)
