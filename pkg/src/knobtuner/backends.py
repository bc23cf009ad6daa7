"""Decision backends: the policies that answer action prompts.

Three families ship with the tuner. The scripted oracle walks knob values
toward a synthetic model's optimum and exists so search behavior can be
tested without a language model. The random backend is its intentionally
weak sibling for paired comparisons. The remote backend speaks the common
chat-completion wire shape over HTTP.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass
from random import Random
from typing import Any, Callable, Mapping, Sequence

import requests

from .actions import (
    ActionInstance,
    ActionKind,
    PromptBundle,
    build_instance,
)
from .errors import (
    AllCandidatesRejected,
    BackendUnavailable,
    CandidateRejected,
    ConfigError,
)
from .evaluation import SEED_STRIDE, SyntheticModel, _sample_in_domain
from .space import (
    BoolDomain,
    ConfigSpace,
    EnumDomain,
    IntRange,
    Knob,
    RealRange,
    Value,
    nearest_valid,
)

log = logging.getLogger(__name__)

ENV_URL = "KNOBTUNER_LLM_URL"
ENV_MODEL = "KNOBTUNER_LLM_MODEL"
ENV_KEY = "KNOBTUNER_LLM_KEY"


@dataclass
class BackendUsage:
    """Monotone counters; never reset within a session."""

    calls: int = 0
    replies: int = 0
    rejected: int = 0
    retries: int = 0
    prompt_chars: int = 0
    reply_chars: int = 0
    prompt_tokens: int = 0
    reply_tokens: int = 0

    def add_call(self, prompt_chars: int, prompt_tokens: int | None = None) -> None:
        self.calls += 1
        self.prompt_chars += prompt_chars
        self.prompt_tokens += prompt_tokens if prompt_tokens is not None else prompt_chars // 4

    def add_reply(self, reply_chars: int, reply_tokens: int | None = None) -> None:
        self.replies += 1
        self.reply_chars += reply_chars
        self.reply_tokens += reply_tokens if reply_tokens is not None else reply_chars // 4

    def to_dict(self) -> dict[str, int]:
        return {
            "calls": self.calls,
            "replies": self.replies,
            "rejected": self.rejected,
            "retries": self.retries,
            "prompt_chars": self.prompt_chars,
            "reply_chars": self.reply_chars,
            "prompt_tokens": self.prompt_tokens,
            "reply_tokens": self.reply_tokens,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, int]) -> "BackendUsage":
        return cls(**{k: int(d.get(k, 0)) for k in cls().to_dict()})


class DecisionBackend:
    """Answers prompts with validated action instances.

    `propose` returns up to k candidates and raises AllCandidatesRejected
    when none survive validation. `complete` answers a free-form prompt
    with raw text; only backends with a language model support it.
    """

    name = "backend"

    def __init__(self):
        self.usage = BackendUsage()

    def propose(self, prompt: PromptBundle, k: int) -> list[ActionInstance]:
        raise NotImplementedError

    def complete(self, prompt_text: str) -> str:
        raise BackendUnavailable(f"backend {self.name!r} has no completion endpoint")

    def get_state(self) -> dict[str, Any]:
        return {"usage": self.usage.to_dict()}

    def set_state(self, state: Mapping[str, Any]) -> None:
        self.usage = BackendUsage.from_dict(state["usage"])


class _ScriptedBackend(DecisionBackend):
    """Shared plumbing for deterministic, seeded policies."""

    def __init__(self, space: ConfigSpace, seed: int):
        super().__init__()
        self.space = space
        self.seed = seed
        self.call_index = 0

    def _next_rng(self) -> Random:
        rng = Random(self.seed * SEED_STRIDE + self.call_index)
        self.call_index += 1
        return rng

    def get_state(self) -> dict[str, Any]:
        state = super().get_state()
        state["call_index"] = self.call_index
        return state

    def set_state(self, state: Mapping[str, Any]) -> None:
        super().set_state(state)
        self.call_index = int(state["call_index"])

    def _replies(self, prompt: PromptBundle, k: int, rng: Random) -> list[dict[str, Any]]:
        raise NotImplementedError

    def propose(self, prompt: PromptBundle, k: int) -> list[ActionInstance]:
        rng = self._next_rng()
        text = prompt.render_text()
        self.usage.add_call(len(text))
        out: list[ActionInstance] = []
        for reply in self._replies(prompt, k, rng):
            encoded = json.dumps(reply)
            self.usage.add_reply(len(encoded))
            try:
                out.append(build_instance(self.space, prompt.state, prompt.kind, reply))
            except CandidateRejected as exc:
                self.usage.rejected += 1
                log.debug("scripted candidate rejected: %s", exc)
        if not out and k > 0:
            raise AllCandidatesRejected(f"no valid {prompt.kind.value} candidate")
        return out


def _step_numeric(knob: Knob, cur: Value, target: Value, frac: float) -> Value:
    new = cur + frac * (target - cur)
    return nearest_valid(knob, new)


class OracleBackend(_ScriptedBackend):
    """Walks values a fraction `alpha` of the way toward a known optimum.

    Sample 0 of every draw takes the pure alpha step; later samples jitter
    the fraction so expansion sees distinct candidates.
    """

    name = "oracle"

    def __init__(self, space: ConfigSpace, model: SyntheticModel, seed: int, alpha: float = 0.8):
        super().__init__(space, seed)
        if not 0.0 < alpha <= 1.0:
            raise ConfigError("alpha must be in (0, 1]")
        self.model = model
        self.alpha = alpha

    # -- ranking helpers

    def _loss_share(self, name: str, value: Value) -> float:
        knob = self.space.knob(name)
        members = len(self.space.knobs_in(knob.cluster_id)) or 1
        weight = self.model.cluster_weight.get(knob.cluster_id, 0.0)
        return weight * self.model.knob_loss(knob, value) / members

    def _ranked_knobs(self, state, names: Sequence[str]) -> list[str]:
        scored = [(-self._loss_share(n, state.config.assignments[n]), i, n)
                  for i, n in enumerate(names)]
        scored.sort()
        return [n for _, _, n in scored]

    def _value_for(self, knob: Knob, cur: Value, frac: float, rng: Random) -> Value:
        target = self.model.optimum[knob.name]
        if isinstance(knob.domain, (IntRange, RealRange)):
            return _step_numeric(knob, cur, target, frac)
        if frac >= 1.0 or rng.random() < frac:
            return target
        return cur

    def _frac(self, sample_index: int, rng: Random) -> float:
        if sample_index == 0:
            return self.alpha
        return min(1.0, max(0.05, self.alpha + rng.uniform(-0.15, 0.15)))

    # -- per-kind replies

    def _replies(self, prompt: PromptBundle, k: int, rng: Random) -> list[dict[str, Any]]:
        kind, state = prompt.kind, prompt.state
        if kind is ActionKind.PLAN:
            by_weight = sorted(
                self.space.cluster_ids(),
                key=lambda cid: (-self.model.cluster_weight.get(cid, 0.0), cid),
            )
            replies = []
            for i in range(k):
                order = list(by_weight)
                if i > 0 and len(order) > 1:
                    a = rng.randrange(len(order) - 1)
                    order[a], order[a + 1] = order[a + 1], order[a]
                replies.append(
                    {
                        "plan": "tune clusters by expected throughput weight: "
                        + ", ".join(order),
                        "cluster_order": order,
                    }
                )
            return replies

        if kind is ActionKind.CLUSTER_TUNE:
            candidates = prompt.context.get("candidate_clusters") or list(
                self.space.cluster_ids()
            )
            cluster = candidates[0]
            replies = []
            for i in range(k):
                frac = self._frac(i, rng)
                assignments = {}
                for knob in self.space.knobs_in(cluster):
                    cur = state.config.assignments[knob.name]
                    assignments[knob.name] = self._value_for(knob, cur, frac, rng)
                replies.append(
                    {
                        "cluster": cluster,
                        "assignments": assignments,
                        "reasoning": f"move cluster {cluster} toward its expected optimum",
                    }
                )
            return replies

        if kind is ActionKind.SINGLE_KNOB:
            candidates = list(prompt.context.get("candidate_knobs") or self.space.names())
            ranked = self._ranked_knobs(state, candidates)
            replies = []
            for i in range(k):
                name = ranked[i % len(ranked)]
                knob = self.space.knob(name)
                cur = state.config.assignments[name]
                replies.append(
                    {
                        "knob": name,
                        "value": self._value_for(knob, cur, self._frac(i, rng), rng),
                        "reasoning": "largest remaining throughput loss",
                    }
                )
            return replies

        if kind is ActionKind.VALIDATE:
            issues = []
            for name in sorted(state.tuned):
                knob = self.space.knob(name)
                if not knob.permits(state.config.assignments[name]):
                    issues.append(
                        {
                            "knob": name,
                            "category": "range",
                            "explanation": "tuned value is outside the knob domain",
                        }
                    )
            return [{"valid": not issues, "issues": issues}] * k

        if kind is ActionKind.FIX:
            assignments = {
                name: nearest_valid(self.space.knob(name), self.model.optimum[name])
                for name in sorted({i.knob for i in state.pending_issues})
            }
            return [{"assignments": assignments}] * k

        if kind is ActionKind.FEEDBACK:
            pool = sorted(state.tuned) or list(self.space.names())
            ranked = self._ranked_knobs(state, pool)[:3]
            replies = []
            for i in range(k):
                frac = self._frac(i, rng)
                assignments = {}
                for name in ranked:
                    knob = self.space.knob(name)
                    cur = state.config.assignments[name]
                    assignments[name] = self._value_for(knob, cur, frac, rng)
                replies.append(
                    {
                        "assignments": assignments,
                        "bottleneck_analysis": "largest weighted losses: "
                        + ", ".join(ranked),
                    }
                )
            return replies

        if kind is ActionKind.TERMINAL:
            return [{"reason": "oracle chose to stop"}] * k
        return [{}] * k


def scripted_oracle(
    space: ConfigSpace, model: SyntheticModel, seed: int, alpha: float = 0.8
) -> OracleBackend:
    return OracleBackend(space, model, seed, alpha=alpha)


class RandomBackend(_ScriptedBackend):
    """Uniform proposals; a tunable share of values falls outside the domain."""

    name = "random"

    def __init__(self, space: ConfigSpace, seed: int, out_of_domain_rate: float = 0.25):
        super().__init__(space, seed)
        if not 0.0 <= out_of_domain_rate <= 1.0:
            raise ConfigError("out_of_domain_rate must be in [0, 1]")
        self.out_of_domain_rate = out_of_domain_rate

    def _sample_value(self, knob: Knob, rng: Random, allow_bad: bool) -> Value:
        d = knob.domain
        if allow_bad and rng.random() < self.out_of_domain_rate:
            if isinstance(d, IntRange):
                span = max(d.step, d.hi - d.lo)
                if rng.random() < 0.5:
                    return d.hi + d.step * rng.randint(1, 100)
                return d.lo - d.step * rng.randint(1, 100)
            if isinstance(d, RealRange):
                return d.hi + (d.hi - d.lo + 1.0) * rng.uniform(0.1, 2.0)
            if isinstance(d, EnumDomain):
                return "__not_an_option__"
            if isinstance(d, BoolDomain):
                return "yes"
        return _sample_in_domain(knob, rng)

    def _replies(self, prompt: PromptBundle, k: int, rng: Random) -> list[dict[str, Any]]:
        kind, state = prompt.kind, prompt.state
        if kind is ActionKind.PLAN:
            replies = []
            for _ in range(k):
                order = list(self.space.cluster_ids())
                rng.shuffle(order)
                replies.append({"plan": "tune in a random order", "cluster_order": order})
            return replies

        if kind is ActionKind.CLUSTER_TUNE:
            candidates = list(
                prompt.context.get("candidate_clusters") or self.space.cluster_ids()
            )
            replies = []
            for _ in range(k):
                cluster = rng.choice(candidates)
                assignments = {
                    knob.name: self._sample_value(knob, rng, allow_bad=True)
                    for knob in self.space.knobs_in(cluster)
                }
                replies.append(
                    {"cluster": cluster, "assignments": assignments, "reasoning": ""}
                )
            return replies

        if kind is ActionKind.SINGLE_KNOB:
            names = list(self.space.names())
            replies = []
            for _ in range(k):
                name = rng.choice(names)
                knob = self.space.knob(name)
                replies.append(
                    {
                        "knob": name,
                        "value": self._sample_value(knob, rng, allow_bad=True),
                        "reasoning": "",
                    }
                )
            return replies

        if kind is ActionKind.VALIDATE:
            # never flags anything; mechanical checks still apply
            return [{"valid": True, "issues": []}] * k

        if kind is ActionKind.FIX:
            pending = sorted({i.knob for i in state.pending_issues})
            replies = []
            for _ in range(k):
                assignments = {
                    name: _sample_in_domain(self.space.knob(name), rng) for name in pending
                }
                replies.append({"assignments": assignments})
            return replies

        if kind is ActionKind.FEEDBACK:
            names = list(self.space.names())
            replies = []
            for _ in range(k):
                count = rng.randint(1, min(3, len(names)))
                picked = [names[i] for i in sorted(rng.sample(range(len(names)), count))]
                assignments = {
                    name: _sample_in_domain(self.space.knob(name), rng) for name in picked
                }
                replies.append(
                    {"assignments": assignments, "bottleneck_analysis": "no analysis"}
                )
            return replies

        if kind is ActionKind.TERMINAL:
            return [{"reason": "random stop"}] * k
        return [{}] * k


class ReplayBackend(DecisionBackend):
    """Feeds back a fixed series of replies; used to test parsing layers."""

    name = "replay"

    def __init__(self, replies: Sequence[Any], space: ConfigSpace | None = None):
        super().__init__()
        self.replies = list(replies)
        self.space = space
        self.cursor = 0

    def _next(self) -> Any:
        if self.cursor >= len(self.replies):
            raise BackendUnavailable("replay backend ran out of scripted replies")
        reply = self.replies[self.cursor]
        self.cursor += 1
        return reply

    def complete(self, prompt_text: str) -> str:
        self.usage.add_call(len(prompt_text))
        reply = self._next()
        text = reply if isinstance(reply, str) else json.dumps(reply)
        self.usage.add_reply(len(text))
        return text

    def propose(self, prompt: PromptBundle, k: int) -> list[ActionInstance]:
        if self.space is None:
            raise ConfigError("replay backend needs a space to build instances")
        self.usage.add_call(len(prompt.render_text()))
        out: list[ActionInstance] = []
        for _ in range(k):
            reply = self._next()
            if isinstance(reply, str):
                reply = json.loads(reply)
            self.usage.add_reply(len(json.dumps(reply)))
            try:
                out.append(build_instance(self.space, prompt.state, prompt.kind, reply))
            except CandidateRejected:
                self.usage.rejected += 1
        if not out and k > 0:
            raise AllCandidatesRejected(f"no valid {prompt.kind.value} candidate")
        return out

    def get_state(self) -> dict[str, Any]:
        state = super().get_state()
        state["cursor"] = self.cursor
        return state

    def set_state(self, state: Mapping[str, Any]) -> None:
        super().set_state(state)
        self.cursor = int(state["cursor"])


# ---------------------------------------------------------------------------
# remote chat-completion backend


def _strip_fences(text: str) -> str:
    text = text.strip()
    if text.startswith("```"):
        first_newline = text.find("\n")
        if first_newline != -1:
            text = text[first_newline + 1 :]
        if text.rstrip().endswith("```"):
            text = text.rstrip()[:-3]
    return text.strip()


def _candidate_dicts(text: str) -> list[dict[str, Any]]:
    """Parse one reply into candidate objects; arrays yield multiple."""
    body = _strip_fences(text)
    start_obj = body.find("{")
    start_arr = body.find("[")
    starts = [s for s in (start_obj, start_arr) if s != -1]
    if not starts:
        raise ValueError("no JSON object in reply")
    start = min(starts)
    opener = body[start]
    closer = "}" if opener == "{" else "]"
    depth = 0
    in_string = False
    escape = False
    for i in range(start, len(body)):
        ch = body[i]
        if in_string:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch in "{[":
            depth += 1
        elif ch in "}]":
            depth -= 1
            if depth == 0:
                parsed = json.loads(body[start : i + 1])
                if isinstance(parsed, list):
                    return [p for p in parsed if isinstance(p, dict)]
                return [parsed]
    raise ValueError("unbalanced JSON in reply")


class RemoteBackend(DecisionBackend):
    """Talks to a chat-completion HTTP endpoint.

    Configured from KNOBTUNER_LLM_URL, KNOBTUNER_LLM_MODEL, and
    KNOBTUNER_LLM_KEY unless given explicitly. Transport errors are retried
    twice with 1s and 4s pauses; reply parse failures are not retried, they
    count as rejected candidates.
    """

    name = "remote"
    RETRY_PAUSES = (1.0, 4.0)

    def __init__(
        self,
        space: ConfigSpace | None = None,
        url: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        temperature: float = 0.7,
        timeout: float = 120.0,
        transport: Callable[[dict[str, Any]], dict[str, Any]] | None = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        super().__init__()
        self.space = space
        self.url = url or os.environ.get(ENV_URL, "")
        if not self.url and transport is None:
            raise ConfigError(f"remote backend needs {ENV_URL} or an explicit url")
        self.model = model or os.environ.get(ENV_MODEL, "default")
        self.api_key = api_key or os.environ.get(ENV_KEY, "")
        self.temperature = temperature
        self.timeout = timeout
        self._transport = transport or self._http_post
        self._sleep = sleeper

    def _http_post(self, payload: dict[str, Any]) -> dict[str, Any]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        response = requests.post(self.url, json=payload, headers=headers, timeout=self.timeout)
        response.raise_for_status()
        return response.json()

    def _chat(self, text: str, n: int) -> list[str]:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": text}],
            "temperature": self.temperature,
            "n": n,
        }
        last_error: Exception | None = None
        for attempt in range(1 + len(self.RETRY_PAUSES)):
            if attempt:
                self.usage.retries += 1
                self._sleep(self.RETRY_PAUSES[attempt - 1])
            try:
                data = self._transport(payload)
                choices = data["choices"]
                contents = [c["message"]["content"] for c in choices]
                usage = data.get("usage", {})
                self.usage.add_call(len(text), usage.get("prompt_tokens"))
                for content in contents:
                    share = usage.get("completion_tokens")
                    self.usage.add_reply(
                        len(content),
                        None if share is None else share // max(1, len(contents)),
                    )
                return contents
            except (requests.RequestException, KeyError, IndexError, TypeError, ValueError) as exc:
                last_error = exc
                log.warning("chat request failed (attempt %d): %s", attempt + 1, exc)
        raise BackendUnavailable(f"chat endpoint failed after 3 attempts: {last_error}")

    def complete(self, prompt_text: str) -> str:
        return self._chat(prompt_text, 1)[0]

    def propose(self, prompt: PromptBundle, k: int) -> list[ActionInstance]:
        if self.space is None:
            raise ConfigError("remote backend needs a space to build instances")
        contents = self._chat(prompt.render_text(), k)
        out: list[ActionInstance] = []
        for content in contents:
            try:
                dicts = _candidate_dicts(content)
            except ValueError as exc:
                self.usage.rejected += 1
                log.debug("unparseable reply: %s", exc)
                continue
            for reply in dicts:
                try:
                    out.append(build_instance(self.space, prompt.state, prompt.kind, reply))
                except CandidateRejected as exc:
                    self.usage.rejected += 1
                    log.debug("remote candidate rejected: %s", exc)
        if not out and k > 0:
            raise AllCandidatesRejected(f"no valid {prompt.kind.value} candidate")
        return out[:k]
