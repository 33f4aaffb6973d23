"""YAML-scripted room sessions: a timed event script plus embedded
expectations, replayed deterministically on the manual clock.

A scenario is data, not code.  The runner injects each scripted world event
at its tick, records every bus envelope in canonical line format, and grades
the expectations as their deadlines pass.  Two runs of the same scenario are
byte-identical after id normalization, which is what makes recorded logs
comparable across machines.
"""

import json
import math
from dataclasses import dataclass, field

import jsonschema
import yaml

from .bus import Timeout, TopicPattern
from .canon import canonical_dumps
from .controller import EVENT_TYPES, TICK_DT, Controller, depth_observation_source

__all__ = [
    "SCENARIO_SCHEMA",
    "Scenario",
    "ScenarioError",
    "ScenarioResult",
    "load_scenario",
    "normalize_log",
    "run_scenario",
]


class ScenarioError(ValueError):
    """The scenario document is malformed or internally inconsistent."""


_EVENT_STEP = {
    "type": "object",
    "required": ["t", "event"],
    "additionalProperties": False,
    "properties": {
        "t": {"type": "number", "minimum": 0},
        "event": {
            "type": "object",
            "required": ["type"],
            "properties": {"type": {"enum": list(EVENT_TYPES)}},
        },
    },
}

_EXPECT_STEP = {
    "type": "object",
    "required": ["t", "expect"],
    "additionalProperties": False,
    "properties": {
        "t": {"type": "number", "minimum": 0},
        "expect": {
            "type": "object",
            "oneOf": [
                {
                    "required": ["event"],
                    "additionalProperties": False,
                    "properties": {
                        "event": {"type": "string", "minLength": 1},
                        "payload": {"type": "object"},
                    },
                },
                {
                    "required": ["state", "path", "equals"],
                    "additionalProperties": False,
                    "properties": {
                        "state": {"type": "string", "minLength": 1},
                        "path": {
                            "type": "array",
                            "items": {"type": ["string", "integer"]},
                        },
                        "equals": {},
                        "tol": {"type": "number", "minimum": 0},
                    },
                },
            ],
        },
    },
}

SCENARIO_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "room scenario",
    "type": "object",
    "required": ["name", "duration_s", "timeline"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "duration_s": {"type": "number", "exclusiveMinimum": 0},
        "perception": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["scripted", "depth"]},
                "noise_sigma": {"type": "number", "minimum": 0},
            },
        },
        "timeline": {
            "type": "array",
            "items": {"oneOf": [_EVENT_STEP, _EXPECT_STEP]},
        },
    },
}


@dataclass(frozen=True)
class TimedEvent:
    t: float
    event: dict


@dataclass(frozen=True)
class Expectation:
    t: float
    kind: str  # event | state
    spec: dict


@dataclass(frozen=True)
class Scenario:
    name: str
    duration_s: float
    timeline: tuple
    seed: int = 0
    description: str = ""
    perception_mode: str = "scripted"
    noise_sigma: float = 0.0

    @staticmethod
    def from_dict(data: dict) -> "Scenario":
        try:
            jsonschema.validate(data, SCENARIO_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ScenarioError(f"scenario does not match schema: {exc.message}") from exc

        steps = []
        last_t = -math.inf
        for i, raw in enumerate(data["timeline"]):
            t = float(raw["t"])
            if t < last_t:
                raise ScenarioError(f"timeline entry {i} out of order: t={t} after t={last_t}")
            last_t = t
            if t > float(data["duration_s"]):
                raise ScenarioError(f"timeline entry {i} at t={t} lies past duration_s")
            if "event" in raw:
                steps.append(TimedEvent(t, dict(raw["event"])))
            else:
                spec = dict(raw["expect"])
                kind = "event" if "event" in spec else "state"
                if kind == "event":
                    TopicPattern.parse(spec["event"])  # fail fast on bad patterns
                steps.append(Expectation(t, kind, spec))

        perception = data.get("perception", {})
        return Scenario(
            name=data["name"],
            duration_s=float(data["duration_s"]),
            timeline=tuple(steps),
            seed=int(data.get("seed", 0)),
            description=data.get("description", ""),
            perception_mode=perception.get("mode", "scripted"),
            noise_sigma=float(perception.get("noise_sigma", 0.0)),
        )


def load_scenario(source) -> Scenario:
    """Parse a scenario from a YAML string or an open file / path."""
    if hasattr(source, "read"):
        data = yaml.safe_load(source.read())
    else:
        text = str(source)
        if "\n" not in text and text.endswith((".yaml", ".yml")):
            with open(text, "r", encoding="utf-8") as fh:
                data = yaml.safe_load(fh)
        else:
            data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ScenarioError("scenario document must be a mapping")
    return Scenario.from_dict(data)


def _subset(expected, actual) -> bool:
    """Expected structure must appear inside actual; extra actual keys are fine."""
    if isinstance(expected, dict):
        if not isinstance(actual, dict):
            return False
        return all(k in actual and _subset(v, actual[k]) for k, v in expected.items())
    if isinstance(expected, list):
        if not isinstance(actual, list) or len(actual) != len(expected):
            return False
        return all(_subset(e, a) for e, a in zip(expected, actual))
    if isinstance(expected, bool) or isinstance(actual, bool):
        return expected is actual
    if isinstance(expected, (int, float)) and isinstance(actual, (int, float)):
        return math.isclose(float(expected), float(actual), rel_tol=1e-9, abs_tol=1e-9)
    return expected == actual


def _dig(entities: dict, entity: str, path):
    cur = entities[entity]
    for key in path:
        cur = cur[key]
    return cur


@dataclass
class ScenarioResult:
    scenario: Scenario
    lines: list = field(default_factory=list)  # raw envelope lines
    report: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.report)

    def normalized(self) -> list:
        return normalize_log(self.lines)

    def write(self, path: str, normalized: bool = True) -> None:
        lines = self.normalized() if normalized else self.lines
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))


def normalize_log(lines: list) -> list:
    """Replace envelope ids with their line ordinal (32 hex chars).

    Everything else — topic, publisher, per-stream seq, tick timestamps,
    payloads — is already deterministic, so two normalized logs from the same
    script compare byte-for-byte.
    """
    out = []
    for n, line in enumerate(lines):
        d = json.loads(line)
        d["id"] = format(n, "032x")
        out.append(canonical_dumps(d))
    return out


def _evaluate(ex: Expectation, envelopes: list, controller: Controller) -> dict:
    entry = {"t": ex.t, "kind": ex.kind, "spec": ex.spec, "passed": False, "detail": ""}
    if ex.kind == "event":
        pattern = TopicPattern.parse(ex.spec["event"])
        want = ex.spec.get("payload", {})
        for env in envelopes:
            if pattern.matches(env.topic) and _subset(want, env.payload):
                entry["passed"] = True
                entry["detail"] = f"matched {env.topic} seq {env.seq}"
                return entry
        entry["detail"] = f"no envelope matched {ex.spec['event']} by t={ex.t}"
        return entry

    entities = controller.snapshot().entities
    try:
        got = _dig(entities, ex.spec["state"], ex.spec["path"])
    except (KeyError, IndexError, TypeError) as exc:
        entry["detail"] = f"state path not found: {exc!r}"
        return entry
    want = ex.spec["equals"]
    tol = float(ex.spec.get("tol", 0.0))
    if isinstance(want, (int, float)) and not isinstance(want, bool) and isinstance(got, (int, float)):
        ok = abs(float(got) - float(want)) <= tol
    else:
        ok = _subset(want, got)
    entry["passed"] = ok
    entry["detail"] = f"value {got!r}" if ok else f"value {got!r} != expected {want!r}"
    return entry


def run_scenario(scenario: Scenario, controller: Controller | None = None, seed: int | None = None) -> ScenarioResult:
    """Deterministic replay: inject each event at its tick, grade expectations.

    A failing expectation is recorded and the run continues, so one report
    covers the whole script.
    """
    c = controller if controller is not None else Controller()
    use_seed = scenario.seed if seed is None else int(seed)
    if scenario.perception_mode == "depth":
        c.observation_source = depth_observation_source(scenario.noise_sigma, seed=use_seed)

    # events fire before the tick that spans (t, t+dt]; deadlines are graded
    # after the tick that ends at t
    events: dict[int, list] = {}
    expects: dict[int, list] = {}
    for step in scenario.timeline:
        if isinstance(step, TimedEvent):
            events.setdefault(int(round(step.t / TICK_DT)), []).append(step)
        else:
            expects.setdefault(max(1, int(math.ceil(step.t / TICK_DT))), []).append(step)

    tap = c.bus.subscribe("ds/#", replay=0)
    result = ScenarioResult(scenario=scenario)
    envelopes: list = []
    total_ticks = int(math.ceil(scenario.duration_s / TICK_DT))
    for tick in range(total_ticks):
        for step in events.get(tick, ()):
            c.inject_event(step.event)
        c.tick()
        while True:
            env = tap.next(timeout=0.0)
            if isinstance(env, Timeout):
                break
            envelopes.append(env)
        for ex in expects.get(tick + 1, ()):
            result.report.append(_evaluate(ex, envelopes, c))

    result.lines = [canonical_dumps(env.to_dict()) for env in envelopes]
    return result
