import random
import threading

import pytest

from rotunda.bus import (
    BadPattern,
    BadTopic,
    ClosedBus,
    EventBus,
    EventEnvelope,
    ManualClock,
    MonotonicClock,
    Timeout,
    TopicPattern,
)


def brute_match(pat, parts):
    """Independent recursive matcher used as the oracle."""
    if not pat:
        return not parts
    if pat[0] == "#":
        return True  # final by construction; zero or more levels
    if not parts:
        return False
    if pat[0] == "+" or pat[0] == parts[0]:
        return brute_match(pat[1:], parts[1:])
    return False


def drain(sub, timeout=0.02):
    out = []
    while True:
        env = sub.next(timeout)
        if isinstance(env, Timeout):
            return out
        out.append(env)


class TestTopicMatching:
    def test_single_wildcard_binds_one_segment(self):
        assert TopicPattern.parse("ds/perception/+/gesture").matches("ds/perception/track3/gesture")
        assert not TopicPattern.parse("ds/motion/+").matches("ds/motion/arm/4")

    def test_tail_wildcard_covers_subtrees_and_parent(self):
        pat = TopicPattern.parse("ds/motion/#")
        assert pat.matches("ds/motion/arm/4/state")
        assert pat.matches("ds/motion")
        assert not pat.matches("ds/display/view")

    def test_agrees_with_brute_force_oracle(self):
        rng = random.Random(2026)
        alpha = ["a", "b", "arm", "3", "state", "x7"]
        for _ in range(10_000):
            n = rng.randint(1, 5)
            segs = [rng.choice(alpha + ["+", "+"]) for _ in range(n)]
            if rng.random() < 0.3:
                segs[-1] = "#"
            topic = "/".join(rng.choice(alpha) for _ in range(rng.randint(1, 5)))
            assert TopicPattern(tuple(segs)).matches(topic) == brute_match(segs, topic.split("/"))

    @pytest.mark.parametrize("text", ["ds/#/x", "", "ds//x", "ds/a+b", "a/b#"])
    def test_malformed_patterns_rejected(self, text):
        with pytest.raises(BadPattern):
            TopicPattern.parse(text)

    @pytest.mark.parametrize("topic", ["ds/+/x", "", "a//b", "a/#"])
    def test_wildcards_and_gaps_invalid_in_literal_topics(self, topic):
        with pytest.raises(BadTopic):
            EventBus(clock=ManualClock()).publish(topic, {}, "p")


class TestDelivery:
    def test_publish_order_preserved_per_stream(self):
        bus = EventBus(clock=ManualClock())
        sub = bus.subscribe("ds/#")
        bus.publish("ds/t", {"v": 1}, "p1")
        bus.publish("ds/t", {"v": 2}, "p1")
        assert [e.payload["v"] for e in drain(sub)] == [1, 2]

    def test_redelivered_envelope_deduplicated(self):
        bus = EventBus(clock=ManualClock())
        sub = bus.subscribe("ds/#")
        env = bus.publish("ds/t", {"v": 1}, "p1")
        assert sub.next(0.01).event_id == env.event_id
        bus.redeliver(env)
        assert sub.next(0.01) == Timeout()

    def test_unmatched_publish_lands_in_ring_log_only(self):
        bus = EventBus(clock=ManualClock())
        bus.publish("lonely/topic", {}, "p")
        assert len(bus.log_entries()) == 1

    def test_replay_serves_last_n_matching(self):
        bus = EventBus(clock=ManualClock())
        for k in range(5):
            bus.publish("ds/r/x", {"k": k}, "p")
            bus.publish("ds/other", {"k": k}, "p")
        late = bus.subscribe("ds/r/#", replay=3)
        assert [e.payload["k"] for e in drain(late)] == [2, 3, 4]

    def test_ring_log_capacity_bounds_history(self):
        bus = EventBus(clock=ManualClock(), log_size=10)
        for k in range(25):
            bus.publish("ds/t", k, "p")
        assert [e.payload for e in bus.log_entries()] == list(range(15, 25))

    def test_empty_queue_times_out(self):
        bus = EventBus(clock=ManualClock())
        sub = bus.subscribe("ds/#")
        assert sub.next(0.01) == Timeout()

    def test_unserializable_payload_rejected(self):
        bus = EventBus(clock=ManualClock())
        with pytest.raises(Exception):
            bus.publish("ds/t", {"bad": float("nan")}, "p")

    def test_fifo_and_zero_loss_under_concurrent_publishers(self):
        bus = EventBus(clock=MonotonicClock())
        sub = bus.subscribe("#")
        n = 2000
        publishers = [f"pub{i}" for i in range(8)]

        def run(pub):
            for k in range(n):
                bus.publish(f"ds/stress/{'even' if k % 2 == 0 else 'odd'}", {"k": k}, pub)

        threads = [threading.Thread(target=run, args=(p,)) for p in publishers]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        seen = {}
        ids = set()
        for env in drain(sub, timeout=0.1):
            key = (env.publisher, env.topic)
            assert env.seq == seen.get(key, 0) + 1  # stream order = publish order
            seen[key] = env.seq
            ids.add(env.event_id)
        assert len(ids) == 8 * n  # nothing lost, nothing duplicated


class TestEnvelopes:
    def test_ids_are_deterministic_across_runs(self):
        a = EventBus(clock=ManualClock(7)).publish("ds/t", {"a": [1.5, None]}, "px")
        b = EventBus(clock=ManualClock(7)).publish("ds/t", {"a": [1.5, None]}, "px")
        assert a.event_id == b.event_id
        assert len(a.event_id) == 32

    def test_wire_line_roundtrip(self):
        env = EventBus(clock=ManualClock(7)).publish("ds/t", {"a": [1.5, None]}, "px")
        line = env.to_line()
        assert line.startswith('{"id":"')
        assert EventEnvelope.from_line(line) == env

    def test_manual_clock_stamps(self):
        clock = ManualClock(100)
        bus = EventBus(clock=clock)
        assert bus.publish("t", 1, "p").ts == 100
        clock.advance(50)
        assert bus.publish("t", 2, "p").ts == 150
        with pytest.raises(ValueError):
            clock.advance(-1)

    def test_seq_counts_per_publisher_topic_stream(self):
        bus = EventBus(clock=ManualClock())
        assert bus.publish("a", 0, "p1").seq == 1
        assert bus.publish("a", 0, "p1").seq == 2
        assert bus.publish("b", 0, "p1").seq == 1
        assert bus.publish("a", 0, "p2").seq == 1


class TestLifecycle:
    def test_closed_bus_refuses_everything(self):
        bus = EventBus(clock=ManualClock())
        sub = bus.subscribe("#")
        bus.close()
        with pytest.raises(ClosedBus):
            bus.publish("t", 1, "p")
        with pytest.raises(ClosedBus):
            bus.subscribe("#")
        with pytest.raises(ClosedBus):
            sub.next(0.01)
        bus.close()  # idempotent

    def test_unsubscribe_stops_delivery(self):
        bus = EventBus(clock=ManualClock())
        sub = bus.subscribe("#")
        bus.unsubscribe(sub)
        bus.publish("t", 1, "p")
        with pytest.raises(ClosedBus):
            sub.next(0.01)
