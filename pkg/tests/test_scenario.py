"""Scenario scripting: schema validation, deterministic replay, expectation
grading, and the bundled demo script."""

import json
import os

import pytest

from rotunda.scenario import (
    SCENARIO_SCHEMA,
    Scenario,
    ScenarioError,
    load_scenario,
    normalize_log,
    run_scenario,
)

DEMO = os.path.join(os.path.dirname(__file__), "..", "scenarios", "golden_demo.yaml")


def scenario(**overrides):
    doc = {"name": "t", "duration_s": 1.0, "timeline": []}
    doc.update(overrides)
    return Scenario.from_dict(doc)


class TestSchema:
    def test_minimal_document(self):
        s = scenario()
        assert s.name == "t" and s.duration_s == 1.0 and s.timeline == ()

    def test_rejects_unknown_top_level_keys(self):
        with pytest.raises(ScenarioError):
            scenario(extra=1)

    def test_rejects_unknown_event_type(self):
        with pytest.raises(ScenarioError):
            scenario(timeline=[{"t": 0.0, "event": {"type": "earthquake"}}])

    def test_rejects_out_of_order_timeline(self):
        with pytest.raises(ScenarioError):
            scenario(
                duration_s=5.0,
                timeline=[
                    {"t": 2.0, "event": {"type": "person_leave", "person": 1}},
                    {"t": 1.0, "event": {"type": "person_leave", "person": 1}},
                ],
            )

    def test_rejects_step_past_duration(self):
        with pytest.raises(ScenarioError):
            scenario(timeline=[{"t": 2.0, "event": {"type": "person_leave", "person": 1}}])

    def test_rejects_bad_topic_pattern(self):
        with pytest.raises(Exception):
            scenario(timeline=[{"t": 0.5, "expect": {"event": "ds/#/state"}}])

    def test_rejects_expect_with_both_kinds(self):
        with pytest.raises(ScenarioError):
            scenario(
                timeline=[{"t": 0.5, "expect": {"event": "ds/#", "state": "room", "path": [], "equals": 1}}]
            )

    def test_schema_is_json_serializable(self):
        json.dumps(SCENARIO_SCHEMA)

    def test_load_from_yaml_text(self):
        s = load_scenario("name: inline\nduration_s: 0.5\ntimeline: []\n")
        assert s.name == "inline"


class TestRunner:
    def test_empty_scenario_logs_only_snapshots(self):
        res = run_scenario(scenario())
        topics = {json.loads(line)["topic"] for line in res.lines}
        assert topics == {"ds/state/snapshot"}
        assert len(res.lines) == 1  # one second -> one periodic snapshot

    def test_event_injection_reaches_the_bus(self):
        s = scenario(
            duration_s=0.5,
            timeline=[{"t": 0.1, "event": {"type": "person_enter", "person": 7, "position": [1.0, 0.5]}}],
        )
        res = run_scenario(s)
        topics = [json.loads(line)["topic"] for line in res.lines]
        assert "ds/sim/person_enter" in topics

    def test_failing_expectation_is_listed_and_run_continues(self):
        s = scenario(
            duration_s=1.0,
            timeline=[
                {"t": 0.3, "expect": {"event": "ds/display/focus"}},
                {"t": 0.9, "expect": {"state": "room", "path": ["people"], "equals": []}},
            ],
        )
        res = run_scenario(s)
        assert [r["passed"] for r in res.report] == [False, True]
        assert not res.passed
        assert "ds/display/focus" in res.report[0]["detail"]

    def test_state_expectation_with_tolerance(self):
        s = scenario(
            duration_s=0.5,
            timeline=[
                {"t": 0.4, "expect": {"state": "room", "path": ["room_radius"], "equals": 2.438, "tol": 1e-9}}
            ],
        )
        assert run_scenario(s).passed

    def test_same_script_twice_is_byte_identical(self):
        s = scenario(
            duration_s=2.0,
            timeline=[
                {"t": 0.1, "event": {"type": "person_enter", "person": 1, "position": [1.2, 0.2]}},
                {"t": 0.5, "event": {"type": "utterance", "transcript": "merlin apply immersion", "person": 1}},
            ],
        )
        a, b = run_scenario(s), run_scenario(s)
        assert a.lines == b.lines
        assert a.normalized() == b.normalized()

    def test_normalization_rewrites_only_ids(self):
        s = scenario(
            duration_s=0.5,
            timeline=[{"t": 0.1, "event": {"type": "person_enter", "person": 1, "position": [1.0, 0.0]}}],
        )
        res = run_scenario(s)
        norm = normalize_log(res.lines)
        assert len(norm) == len(res.lines)
        for n, (raw, cooked) in enumerate(zip(res.lines, norm)):
            a, b = json.loads(raw), json.loads(cooked)
            assert b["id"] == format(n, "032x")
            a.pop("id"), b.pop("id")
            assert a == b

    def test_write_emits_one_envelope_per_line(self, tmp_path):
        s = scenario(duration_s=1.0)
        res = run_scenario(s)
        out = tmp_path / "log.ndjson"
        res.write(str(out))
        lines = out.read_text().splitlines()
        assert len(lines) == len(res.lines)
        for line in lines:
            env = json.loads(line)
            assert set(env) == {"id", "topic", "publisher", "seq", "ts", "payload"}


class TestDemoScript:
    def test_demo_passes_all_expectations(self):
        res = run_scenario(load_scenario(DEMO))
        for r in res.report:
            assert r["passed"], r
        assert len(res.report) == 8

    def test_demo_replay_is_byte_identical(self):
        s = load_scenario(DEMO)
        assert run_scenario(s).normalized() == run_scenario(s).normalized()
