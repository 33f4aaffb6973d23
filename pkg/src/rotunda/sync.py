"""State synchronization: snapshots, deltas, and a bounded replay log.

State is published as a flat map of entity paths (``"room"``, ``"arm/3"``,
``"screen/3"``, ``"view/2"``, ``"group/1"``, ``"track/5"``) to plain JSON
values.  A snapshot carries the whole map plus a canonical hash; a delta
carries exact upserts and deletions between two sequence numbers.  Folding a
snapshot through an unbroken chain of deltas reproduces the publisher's map
bit-for-bit in canonical encoding, so replica hashes can be compared directly
against publisher hashes.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, field

from .canon import canonical_hash


class SyncError(ValueError):
    """Base class for snapshot/delta protocol violations."""


class SeqMismatch(SyncError):
    """A delta was applied to (or appended after) the wrong sequence number."""


class HashMismatch(SyncError):
    """A snapshot's stored hash does not match its contents."""


@dataclass(frozen=True)
class NeedSnapshot:
    """Returned when a delta chain from the requested seq cannot be produced.

    The requester should fetch a full snapshot and resume from there.
    ``latest_seq`` is the publisher's current sequence number, when known.
    """

    latest_seq: int | None = None


def snapshot_hash(seq: int, entities: dict) -> str:
    return canonical_hash({"seq": seq, "entities": entities})


@dataclass(frozen=True)
class Snapshot:
    seq: int
    entities: dict  # path -> JSON value; treat values as immutable
    hash: str

    @staticmethod
    def build(seq: int, entities: dict) -> "Snapshot":
        ents = dict(entities)
        for path in ents:
            if not isinstance(path, str) or not path:
                raise SyncError(f"entity path must be a non-empty string, got {path!r}")
        return Snapshot(seq=int(seq), entities=ents, hash=snapshot_hash(int(seq), ents))

    def verify(self) -> None:
        if snapshot_hash(self.seq, self.entities) != self.hash:
            raise HashMismatch(f"snapshot {self.seq} hash does not match its contents")

    def to_dict(self) -> dict:
        return {"seq": self.seq, "entities": self.entities, "hash": self.hash}

    @staticmethod
    def from_dict(data: dict) -> "Snapshot":
        snap = Snapshot(seq=int(data["seq"]), entities=dict(data["entities"]), hash=data["hash"])
        snap.verify()
        return snap


@dataclass(frozen=True)
class Delta:
    from_seq: int
    to_seq: int
    upserts: dict = field(default_factory=dict)  # path -> new value
    deletions: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.to_seq <= self.from_seq:
            raise SyncError(f"delta must advance the sequence: {self.from_seq} -> {self.to_seq}")
        overlap = set(self.upserts) & set(self.deletions)
        if overlap:
            raise SyncError(f"paths both upserted and deleted: {sorted(overlap)}")

    def to_dict(self) -> dict:
        return {
            "from_seq": self.from_seq,
            "to_seq": self.to_seq,
            "upserts": self.upserts,
            "deletions": list(self.deletions),
        }

    @staticmethod
    def from_dict(data: dict) -> "Delta":
        return Delta(
            from_seq=int(data["from_seq"]),
            to_seq=int(data["to_seq"]),
            upserts=dict(data["upserts"]),
            deletions=tuple(data["deletions"]),
        )


_MISSING = object()


def diff_entities(old: dict, new: dict) -> tuple[dict, tuple[str, ...]]:
    """Exact difference between two entity maps (no tolerance on values)."""
    upserts = {path: value for path, value in sorted(new.items()) if old.get(path, _MISSING) != value}
    deletions = tuple(sorted(path for path in old if path not in new))
    return upserts, deletions


def make_delta(from_seq: int, to_seq: int, old: dict, new: dict) -> Delta:
    upserts, deletions = diff_entities(old, new)
    return Delta(from_seq=from_seq, to_seq=to_seq, upserts=upserts, deletions=deletions)


def apply_delta(snapshot: Snapshot, delta: Delta) -> Snapshot:
    """Fold one delta into a snapshot, returning the successor snapshot."""
    if delta.from_seq != snapshot.seq:
        raise SeqMismatch(f"delta starts at seq {delta.from_seq}, snapshot is at {snapshot.seq}")
    entities = dict(snapshot.entities)
    for path in delta.deletions:
        if path not in entities:
            raise SeqMismatch(f"delta deletes unknown path {path!r}")
        del entities[path]
    entities.update(delta.upserts)
    return Snapshot.build(delta.to_seq, entities)


class DeltaLog:
    """Bounded, chain-validated history of published deltas.

    ``since(seq)`` either returns the exact list of deltas that carries a
    replica from ``seq`` to the latest state, or :class:`NeedSnapshot` when
    ``seq`` is not a retained chain boundary (too old, unknown, or ahead).
    """

    def __init__(self, base_seq: int | None = None, retention: int = 10_000):
        if retention < 1:
            raise ValueError("retention must be positive")
        self._deltas: list[Delta] = []
        self._latest = base_seq
        self._retention = int(retention)

    @property
    def latest_seq(self) -> int | None:
        return self._latest

    def __len__(self) -> int:
        return len(self._deltas)

    def append(self, delta: Delta) -> None:
        if self._latest is not None and delta.from_seq != self._latest:
            raise SeqMismatch(f"delta starts at seq {delta.from_seq}, log ends at {self._latest}")
        self._deltas.append(delta)
        self._latest = delta.to_seq
        if len(self._deltas) > self._retention:
            del self._deltas[: len(self._deltas) - self._retention]

    def since(self, seq: int) -> "list[Delta] | NeedSnapshot":
        if self._latest is not None and seq == self._latest:
            return []
        idx = bisect_left(self._deltas, seq, key=lambda d: d.from_seq)
        if idx < len(self._deltas) and self._deltas[idx].from_seq == seq:
            return list(self._deltas[idx:])
        return NeedSnapshot(self._latest)


class Replica:
    """Client-side fold of one snapshot plus an in-order delta stream."""

    def __init__(self):
        self.snapshot: Snapshot | None = None

    @property
    def seq(self) -> int | None:
        return None if self.snapshot is None else self.snapshot.seq

    def ingest_snapshot(self, snapshot: "Snapshot | dict") -> None:
        if isinstance(snapshot, dict):
            snapshot = Snapshot.from_dict(snapshot)
        else:
            snapshot.verify()
        self.snapshot = snapshot

    def ingest_delta(self, delta: "Delta | dict") -> None:
        if isinstance(delta, dict):
            delta = Delta.from_dict(delta)
        if self.snapshot is None:
            raise SeqMismatch("replica has no snapshot to apply a delta to")
        self.snapshot = apply_delta(self.snapshot, delta)
