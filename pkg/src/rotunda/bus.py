"""In-process publish/subscribe backbone with MQTT-style topic matching.

Envelopes are stamped with a per-(publisher, topic) sequence number, a
monotonic timestamp from an injectable clock, and a deterministic 128-bit
event id derived from the stream coordinates — so a replayed run produces
identical ids.  Delivery is at-least-once (explicit redelivery supported);
each subscription deduplicates by event id, making consumers effectively-once.
"""

import hashlib
import threading
import time
from collections import OrderedDict, deque
from dataclasses import dataclass

from .canon import canonical_dumps, canonical_loads

DEDUP_WINDOW = 1024
DEFAULT_LOG_SIZE = 4096


class BadTopic(ValueError):
    pass


class BadPattern(ValueError):
    pass


class ClosedBus(RuntimeError):
    pass


@dataclass(frozen=True)
class Timeout:
    """next() deadline expired with nothing deliverable."""


class MonotonicClock:
    def now_ns(self) -> int:
        return time.monotonic_ns()


class ManualClock:
    """Deterministic clock for simulation and replay; advances only on demand."""

    def __init__(self, start_ns: int = 0):
        self._now = int(start_ns)

    def now_ns(self) -> int:
        return self._now

    def advance(self, delta_ns: int) -> int:
        if delta_ns < 0:
            raise ValueError("clock cannot run backwards")
        self._now += int(delta_ns)
        return self._now


def validate_topic(topic: str) -> list[str]:
    """Literal topics only: non-empty segments, no wildcard characters."""
    if not isinstance(topic, str) or not topic:
        raise BadTopic(f"empty topic {topic!r}")
    segments = topic.split("/")
    for seg in segments:
        if not seg:
            raise BadTopic(f"empty segment in {topic!r}")
        if "+" in seg or "#" in seg:
            raise BadTopic(f"wildcard in literal topic {topic!r}")
    return segments


@dataclass(frozen=True)
class TopicPattern:
    segments: tuple

    def __post_init__(self):
        if not self.segments:
            raise BadPattern("empty pattern")
        for i, seg in enumerate(self.segments):
            if not seg:
                raise BadPattern("empty pattern segment")
            if seg == "#" and i != len(self.segments) - 1:
                raise BadPattern("# only allowed in the final position")
            if seg not in ("+", "#") and ("+" in seg or "#" in seg):
                raise BadPattern(f"wildcard inside literal segment {seg!r}")

    @staticmethod
    def parse(text: str) -> "TopicPattern":
        if not isinstance(text, str) or not text:
            raise BadPattern(f"empty pattern {text!r}")
        return TopicPattern(tuple(text.split("/")))

    def matches(self, topic: str) -> bool:
        parts = topic.split("/")
        pat = self.segments
        if pat[-1] == "#":
            head = pat[:-1]
            if len(parts) < len(head):  # '#' also covers the parent itself
                return False
            return all(p == "+" or p == t for p, t in zip(head, parts[: len(head)]))
        if len(parts) != len(pat):
            return False
        return all(p == "+" or p == t for p, t in zip(pat, parts))

    def __str__(self) -> str:
        return "/".join(self.segments)


@dataclass(frozen=True)
class EventEnvelope:
    event_id: str  # 32 hex chars (128 bits), deterministic per stream position
    topic: str
    publisher: str
    seq: int  # per-(publisher, topic), starting at 1
    ts: int  # monotonic ns
    payload: object  # canonical-JSON value

    def to_dict(self) -> dict:
        return {
            "id": self.event_id,
            "topic": self.topic,
            "publisher": self.publisher,
            "seq": self.seq,
            "ts": self.ts,
            "payload": self.payload,
        }

    def to_line(self) -> str:
        return canonical_dumps(self.to_dict())

    @staticmethod
    def from_dict(d: dict) -> "EventEnvelope":
        return EventEnvelope(
            event_id=d["id"],
            topic=d["topic"],
            publisher=d["publisher"],
            seq=int(d["seq"]),
            ts=int(d["ts"]),
            payload=d["payload"],
        )

    @staticmethod
    def from_line(line: str) -> "EventEnvelope":
        return EventEnvelope.from_dict(canonical_loads(line))


def _event_id(publisher: str, topic: str, seq: int) -> str:
    key = f"{publisher}|{topic}|{seq}".encode()
    return hashlib.sha256(key).hexdigest()[:32]


class Subscription:
    """FIFO queue of matching envelopes with an id window for dedup."""

    def __init__(self, sub_id: int, pattern: TopicPattern, dedup_window: int = DEDUP_WINDOW):
        self.id = sub_id
        self.pattern = pattern
        self._queue: deque = deque()
        self._delivered: OrderedDict = OrderedDict()
        self._dedup_window = dedup_window
        self._cond = threading.Condition()
        self._closed = False

    def _push(self, envelope: EventEnvelope) -> None:
        with self._cond:
            self._queue.append(envelope)
            self._cond.notify()

    def _close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def pending(self) -> int:
        with self._cond:
            return len(self._queue)

    def next(self, timeout: float = 0.0):
        """Oldest pending envelope, or Timeout; duplicate ids are dropped."""
        deadline = time.monotonic() + timeout
        with self._cond:
            while True:
                while not self._queue:
                    if self._closed:
                        raise ClosedBus("subscription closed")
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        return Timeout()
                    self._cond.wait(remaining)
                envelope = self._queue.popleft()
                if envelope.event_id in self._delivered:
                    continue  # redelivery of something already consumed
                self._delivered[envelope.event_id] = True
                while len(self._delivered) > self._dedup_window:
                    self._delivered.popitem(last=False)
                return envelope


class EventBus:
    """publish() is safe from any thread; each Subscription has one consumer."""

    def __init__(self, clock=None, log_size: int = DEFAULT_LOG_SIZE):
        self._clock = clock if clock is not None else MonotonicClock()
        self._lock = threading.RLock()
        self._subs: list[Subscription] = []
        self._seq: dict = {}
        self._log: deque = deque(maxlen=log_size)
        self._next_sub_id = 1
        self._closed = False

    def publish(self, topic: str, payload, publisher: str) -> EventEnvelope:
        validate_topic(topic)
        canonical_dumps(payload)  # reject unserializable payloads up front
        if not publisher:
            raise ValueError("publisher id required")
        with self._lock:
            if self._closed:
                raise ClosedBus("bus closed")
            seq = self._seq.get((publisher, topic), 0) + 1
            self._seq[(publisher, topic)] = seq
            envelope = EventEnvelope(
                event_id=_event_id(publisher, topic, seq),
                topic=topic,
                publisher=publisher,
                seq=seq,
                ts=self._clock.now_ns(),
                payload=payload,
            )
            self._log.append(envelope)
            for sub in self._subs:
                if sub.pattern.matches(topic):
                    sub._push(envelope)
        return envelope

    def redeliver(self, envelope: EventEnvelope) -> None:
        """Push an existing envelope again (retry path); dedup absorbs it."""
        with self._lock:
            if self._closed:
                raise ClosedBus("bus closed")
            for sub in self._subs:
                if sub.pattern.matches(envelope.topic):
                    sub._push(envelope)

    def subscribe(self, pattern, replay: int = 0) -> Subscription:
        if isinstance(pattern, str):
            pattern = TopicPattern.parse(pattern)
        if replay < 0:
            raise ValueError("replay count must be >= 0")
        with self._lock:
            if self._closed:
                raise ClosedBus("bus closed")
            sub = Subscription(self._next_sub_id, pattern)
            self._next_sub_id += 1
            if replay:
                matching = [e for e in self._log if pattern.matches(e.topic)]
                for envelope in matching[-replay:]:
                    sub._push(envelope)
            self._subs.append(sub)
            return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            self._subs = [s for s in self._subs if s is not sub]
        sub._close()

    def log_entries(self) -> list[EventEnvelope]:
        with self._lock:
            return list(self._log)

    def close(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
            subs = list(self._subs)
            self._subs = []
        for sub in subs:
            sub._close()
