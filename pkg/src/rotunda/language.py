"""Attention-keyword voice commands: tokens, grammar, deixis, speaker azimuth.

Utterances must open with the attention keyword to be considered at all;
anything else is NotAddressed.  The grammar (shipped as docs/grammar.ebnf) is
deliberately small: verbs for stock layouts, panel motion, content placement
and focus, with word numbers up to ninety-nine folded to integers by the
tokenizer.  parse() is total — every input string maps to exactly one of
CommandAst, NotAddressed, or ParseError.
"""

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .geometry import Ray, wrap_angle
from .perception import PersonTrack
from .room import RoomModel, UnknownEntity, nearest_screen, ray_screen_hit

ATTENTION_KEYWORD = "merlin"
VERBS = ("apply", "move", "load", "clear", "swap", "span", "focus")
CONFIG_NAMES = ("immersion", "context", "triptych", "outward")
DIRECTIONS = ("up", "down", "left", "right", "in", "out")
SETTING_NAMES = ("radius", "height", "gap")
UNIT_SCALE = {
    "meter": 1.0,
    "meters": 1.0,
    "centimeter": 0.01,
    "centimeters": 0.01,
    "millimeter": 0.001,
    "millimeters": 0.001,
}

AZIMUTH_GATE = math.radians(15.0)
AZIMUTH_AMBIGUITY = math.radians(5.0)

_ONES = {
    "zero": 0, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10, "eleven": 11,
    "twelve": 12, "thirteen": 13, "fourteen": 14, "fifteen": 15,
    "sixteen": 16, "seventeen": 17, "eighteen": 18, "nineteen": 19,
}
_TENS = {
    "twenty": 20, "thirty": 30, "forty": 40, "fifty": 50,
    "sixty": 60, "seventy": 70, "eighty": 80, "ninety": 90,
}
_NUMBER_RE = re.compile(r"^\d+(?:\.\d+)?(?:e[+-]?\d+)?$")
_TOKEN_RE = re.compile(r"\S+")
_VIEW_NAME_RE = re.compile(r"^[a-z][a-z0-9_]*$")
_EDGE_PUNCT = ",.;:!?\"'()"

RESERVED_WORDS = frozenset(
    (ATTENTION_KEYWORD,)
    + VERBS
    + CONFIG_NAMES
    + DIRECTIONS
    + SETTING_NAMES
    + tuple(UNIT_SCALE)
    + ("screen", "screens", "group", "nearest", "this", "with", "on", "across", "through")
    + tuple(_ONES)
    + tuple(_TENS)
)


class UnresolvableDeixis(RuntimeError):
    """A deictic slot could not be bound to a concrete entity."""


@dataclass(frozen=True)
class NotAddressed:
    """The utterance did not start with the attention keyword."""


@dataclass(frozen=True)
class ParseError:
    """Keyword present but the rest does not parse; position is a char offset."""

    position: int
    message: str


@dataclass(frozen=True)
class Ambiguous:
    """Two candidate speakers too close in bearing to tell apart."""


@dataclass(frozen=True)
class NoSpeaker:
    """No tracked person near the reported azimuth."""


@dataclass(frozen=True)
class ScreenRef:
    kind: str  # "id" | "this_screen"
    id: int | None = None

    def __post_init__(self):
        if self.kind not in ("id", "this_screen"):
            raise ValueError(f"bad screen ref kind {self.kind!r}")
        if (self.kind == "id") != (self.id is not None):
            raise ValueError("screen id required exactly for kind 'id'")


@dataclass(frozen=True)
class GroupRef:
    kind: str  # "id" | "nearest_group" | "range"
    id: int | None = None
    lo: int | None = None
    hi: int | None = None

    def __post_init__(self):
        if self.kind not in ("id", "nearest_group", "range"):
            raise ValueError(f"bad group ref kind {self.kind!r}")
        if (self.kind == "id") != (self.id is not None):
            raise ValueError("group id required exactly for kind 'id'")
        if (self.kind == "range") != (self.lo is not None and self.hi is not None):
            raise ValueError("range bounds required exactly for kind 'range'")
        if self.kind == "range" and self.hi < self.lo:
            raise ValueError("descending screen range")


# slots every verb must fill / must leave empty
_ARITY = {
    "apply": {"config"},
    "move": {"screen", "direction", "distance_m"},
    "load": {"view", "target"},
    "clear": {"target"},
    "swap": {"screen", "screen2"},
    "span": {"view", "group"},
    "focus": {"screen"},
}


@dataclass(frozen=True)
class CommandAst:
    verb: str
    config: str | None = None
    settings: tuple = ()  # ((name, metres), ...) in spoken order
    screen: ScreenRef | None = None
    screen2: ScreenRef | None = None
    view: str | None = None
    direction: str | None = None
    distance_m: float | None = None
    group: GroupRef | None = None

    def __post_init__(self):
        if self.verb not in VERBS:
            raise ValueError(f"unknown verb {self.verb!r}")
        required = _ARITY[self.verb]
        filled = {
            name
            for name in ("config", "screen", "screen2", "view", "direction", "distance_m", "group")
            if getattr(self, name) is not None
        }
        if "target" in required:  # load/clear take a screen or a group, not both
            filled -= {"screen", "group"}
            if (self.screen is None) == (self.group is None):
                raise ValueError(f"{self.verb} needs exactly one of screen/group")
        if filled != required - {"target"}:
            raise ValueError(f"{self.verb} slots incomplete: have {sorted(filled)}")
        if self.settings and self.verb != "apply":
            raise ValueError("settings only apply to 'apply'")
        if self.distance_m is not None and not self.distance_m > 0:
            raise ValueError("distances must be positive")
        for name, value in self.settings:
            if name not in SETTING_NAMES:
                raise ValueError(f"unknown setting {name!r}")
            if not value > 0:
                raise ValueError("setting values must be positive")


@dataclass(frozen=True)
class ResolvedCommand:
    """CommandAst with every deictic slot bound to concrete entity ids."""

    verb: str
    config: str | None = None
    settings: tuple = ()
    screen_ids: tuple = ()  # one id for move/focus/clear-screen, two for swap
    view: str | None = None
    direction: str | None = None
    distance_m: float | None = None
    group_screen_ids: tuple | None = None
    speaker_track: int | None = None


@dataclass(eq=False)
class UtteranceEvent:
    transcript: str
    azimuth: float  # rad, mic-array frame
    confidence: float
    ts: float = 0.0

    def __post_init__(self):
        if not -math.pi <= self.azimuth <= math.pi:
            raise ValueError(f"azimuth {self.azimuth} outside [-pi, pi]")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "transcript": self.transcript,
            "azimuth": float(self.azimuth),
            "confidence": float(self.confidence),
            "ts": float(self.ts),
        }

    @staticmethod
    def from_dict(d: dict) -> "UtteranceEvent":
        return UtteranceEvent(
            transcript=d["transcript"],
            azimuth=float(d["azimuth"]),
            confidence=float(d["confidence"]),
            ts=float(d.get("ts", 0.0)),
        )


class StaticTranscriber:
    """Deterministic stand-in for an external speech service.

    Audio references are looked up in a fixed table; unknown references pass
    through verbatim, which keeps scripted scenarios self-describing.
    """

    def __init__(self, table: dict | None = None):
        self.table = dict(table or {})

    def transcribe(self, audio_ref: str) -> tuple[str, float]:
        return self.table.get(audio_ref, audio_ref), 1.0


# ---------------------------------------------------------------------------
# tokenizer


@dataclass(frozen=True)
class Token:
    text: str
    pos: int  # char offset in the original transcript
    value: object = None  # int | float for number tokens


def tokenize(transcript: str) -> list[Token]:
    """Lowercased word tokens with edge punctuation stripped and word numbers
    (including hyphenated and two-word tens) folded into single number tokens.
    """
    raw: list[Token] = []
    for m in _TOKEN_RE.finditer(transcript):
        word = m.group(0).lower().strip(_EDGE_PUNCT)
        if not word:
            continue
        if _NUMBER_RE.match(word):  # keep "1e-05" whole; hyphens split words only
            raw.append(Token(word, m.start()))
            continue
        for part in word.split("-"):
            if part:
                raw.append(Token(part, m.start()))

    out: list[Token] = []
    i = 0
    while i < len(raw):
        tok = raw[i]
        if tok.text in _TENS:
            tens = _TENS[tok.text]
            if i + 1 < len(raw) and 1 <= _ONES.get(raw[i + 1].text, 0) <= 9:
                out.append(Token(f"{tok.text} {raw[i + 1].text}", tok.pos, tens + _ONES[raw[i + 1].text]))
                i += 2
                continue
            out.append(Token(tok.text, tok.pos, tens))
        elif tok.text in _ONES:
            out.append(Token(tok.text, tok.pos, _ONES[tok.text]))
        elif _NUMBER_RE.match(tok.text):
            value = int(tok.text) if tok.text.isdigit() else float(tok.text)
            out.append(Token(tok.text, tok.pos, value))
        else:
            out.append(tok)
        i += 1
    return out


# ---------------------------------------------------------------------------
# parser


class _Fail(Exception):
    def __init__(self, pos: int, message: str):
        self.pos = pos
        self.message = message


class _Parser:
    def __init__(self, tokens: list[Token], end: int):
        self.tokens = tokens
        self.i = 0
        self.end = end  # char offset for errors at end of input

    def peek(self) -> Token | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def take(self, expected: str | None = None) -> Token:
        tok = self.peek()
        if tok is None:
            raise _Fail(self.end, f"expected {expected or 'more input'} at end of command")
        if expected is not None and tok.text != expected:
            raise _Fail(tok.pos, f"expected {expected!r}, got {tok.text!r}")
        self.i += 1
        return tok

    def take_integer(self, what: str) -> int:
        tok = self.take(None) if self.peek() else self.take(what)
        if not isinstance(tok.value, int):
            raise _Fail(tok.pos, f"expected a {what}, got {tok.text!r}")
        return tok.value

    def take_distance(self) -> float:
        tok = self.peek()
        if tok is None or tok.value is None:
            pos = self.end if tok is None else tok.pos
            raise _Fail(pos, "expected a distance")
        self.i += 1
        unit = self.peek()
        if unit is None or unit.text not in UNIT_SCALE:
            pos = self.end if unit is None else unit.pos
            raise _Fail(pos, "expected a unit (meters, centimeters, millimeters)")
        self.i += 1
        metres = float(tok.value) * UNIT_SCALE[unit.text]
        if not metres > 0:
            raise _Fail(tok.pos, "distance must be positive")
        return metres

    def take_screen_ref(self) -> ScreenRef:
        tok = self.peek()
        if tok is not None and tok.text == "this":
            self.take("this")
            self.take("screen")
            return ScreenRef("this_screen")
        self.take("screen")
        return ScreenRef("id", self.take_integer("screen number"))

    def take_group_ref(self) -> GroupRef:
        tok = self.peek()
        if tok is not None and tok.text == "nearest":
            self.take("nearest")
            self.take("group")
            return GroupRef("nearest_group")
        if tok is not None and tok.text == "screens":
            self.take("screens")
            lo = self.take_integer("screen number")
            self.take("through")
            hi_tok = self.peek()
            hi = self.take_integer("screen number")
            if hi < lo:
                raise _Fail(hi_tok.pos, "descending screen range")
            return GroupRef("range", lo=lo, hi=hi)
        self.take("group")
        return GroupRef("id", self.take_integer("group number"))

    def take_target(self) -> tuple[ScreenRef | None, GroupRef | None]:
        tok = self.peek()
        if tok is None:
            raise _Fail(self.end, "expected a screen or group")
        if tok.text in ("screen", "this"):
            return self.take_screen_ref(), None
        if tok.text in ("group", "nearest", "screens"):
            return None, self.take_group_ref()
        raise _Fail(tok.pos, f"expected a screen or group, got {tok.text!r}")

    def take_view_name(self) -> str:
        tok = self.peek()
        if (
            tok is None
            or tok.value is not None
            or tok.text in RESERVED_WORDS
            or not _VIEW_NAME_RE.match(tok.text)
        ):
            pos = self.end if tok is None else tok.pos
            raise _Fail(pos, "expected a view name")
        self.i += 1
        return tok.text


def parse(transcript) -> CommandAst | NotAddressed | ParseError:
    """Classify an utterance; never raises, regardless of input bytes."""
    if isinstance(transcript, (bytes, bytearray)):
        transcript = bytes(transcript).decode("utf-8", "replace")
    transcript = str(transcript)
    tokens = tokenize(transcript)
    if not tokens or tokens[0].text != ATTENTION_KEYWORD:
        return NotAddressed()
    p = _Parser(tokens[1:], end=len(transcript))
    try:
        verb_tok = p.take(None) if p.peek() else p.take("a command")
        verb = verb_tok.text
        if verb == "apply":
            cfg = p.take(None) if p.peek() else p.take("a configuration name")
            if cfg.text not in CONFIG_NAMES:
                raise _Fail(cfg.pos, f"unknown configuration {cfg.text!r}")
            settings = []
            while p.peek() is not None and p.peek().text == "with":
                p.take("with")
                name = p.take(None) if p.peek() else p.take("a setting name")
                if name.text not in SETTING_NAMES:
                    raise _Fail(name.pos, f"unknown setting {name.text!r}")
                settings.append((name.text, p.take_distance()))
            ast = CommandAst(verb="apply", config=cfg.text, settings=tuple(settings))
        elif verb == "move":
            ref = p.take_screen_ref()
            d = p.peek()
            if d is None or d.text not in DIRECTIONS:
                raise _Fail(p.end if d is None else d.pos, "expected a direction")
            p.i += 1
            ast = CommandAst(verb="move", screen=ref, direction=d.text, distance_m=p.take_distance())
        elif verb == "load":
            view = p.take_view_name()
            p.take("on")
            screen, group = p.take_target()
            ast = CommandAst(verb="load", view=view, screen=screen, group=group)
        elif verb == "clear":
            screen, group = p.take_target()
            ast = CommandAst(verb="clear", screen=screen, group=group)
        elif verb == "swap":
            a = p.take_screen_ref()
            p.take("with")
            ast = CommandAst(verb="swap", screen=a, screen2=p.take_screen_ref())
        elif verb == "span":
            view = p.take_view_name()
            p.take("across")
            ast = CommandAst(verb="span", view=view, group=p.take_group_ref())
        elif verb == "focus":
            if p.peek() is not None and p.peek().text == "on":
                p.take("on")
            ast = CommandAst(verb="focus", screen=p.take_screen_ref())
        else:
            raise _Fail(verb_tok.pos, f"unknown verb {verb!r}")
        tail = p.peek()
        if tail is not None:
            raise _Fail(tail.pos, f"unexpected trailing words starting at {tail.text!r}")
        return ast
    except _Fail as f:
        return ParseError(position=f.pos, message=f.message)


# ---------------------------------------------------------------------------
# pretty printer


def _format_distance(metres: float) -> str:
    # pick the unit whose value both prints in plain decimal and multiplies
    # back to the exact float, so pretty -> parse is lossless
    for unit, scale in (("meters", 1.0), ("centimeters", 0.01), ("millimeters", 0.001)):
        value = metres / scale
        text = repr(value)
        if "e" not in text and float(text) * scale == metres:
            return f"{text} {unit}"
    return f"{metres!r} meters"  # exponent form; the number grammar accepts it


def _format_screen(ref: ScreenRef) -> str:
    return "this screen" if ref.kind == "this_screen" else f"screen {ref.id}"


def _format_group(ref: GroupRef) -> str:
    if ref.kind == "nearest_group":
        return "nearest group"
    if ref.kind == "range":
        return f"screens {ref.lo} through {ref.hi}"
    return f"group {ref.id}"


def pretty(ast: CommandAst) -> str:
    """Canonical spoken form; parse(pretty(ast)) reconstructs ast exactly."""
    parts = [ATTENTION_KEYWORD, ast.verb]
    if ast.verb == "apply":
        parts.append(ast.config)
        for name, value in ast.settings:
            parts += ["with", name, _format_distance(value)]
    elif ast.verb == "move":
        parts += [_format_screen(ast.screen), ast.direction, _format_distance(ast.distance_m)]
    elif ast.verb == "load":
        target = _format_screen(ast.screen) if ast.screen else _format_group(ast.group)
        parts += [ast.view, "on", target]
    elif ast.verb == "clear":
        parts.append(_format_screen(ast.screen) if ast.screen else _format_group(ast.group))
    elif ast.verb == "swap":
        parts += [_format_screen(ast.screen), "with", _format_screen(ast.screen2)]
    elif ast.verb == "span":
        parts += [ast.view, "across", _format_group(ast.group)]
    elif ast.verb == "focus":
        parts += ["on", _format_screen(ast.screen)]
    return " ".join(parts)


# ---------------------------------------------------------------------------
# deixis resolution


@dataclass(eq=False)
class ResolveContext:
    room: RoomModel
    speaker: PersonTrack | None = None
    pointing: Ray | None = None
    groups: dict = field(default_factory=dict)  # group id -> tuple of screen ids


def _bind_screen(ref: ScreenRef, ctx: ResolveContext) -> int:
    if ref.kind == "id":
        ctx.room.screen(ref.id)  # existence check; raises UnknownEntity
        return ref.id
    if ctx.pointing is not None:
        hit = ray_screen_hit(ctx.room, ctx.pointing)
        if hit is not None:
            return hit[0]
    if ctx.speaker is None:
        raise UnresolvableDeixis("'this screen' needs a pointing ray or a speaker track")
    return nearest_screen(ctx.room, ctx.speaker.centroid)


def _bind_group(ref: GroupRef, ctx: ResolveContext) -> tuple:
    if ref.kind == "id":
        if ref.id not in ctx.groups:
            raise UnknownEntity(f"group {ref.id}")
        ids = tuple(ctx.groups[ref.id])
    elif ref.kind == "range":
        ids = tuple(range(ref.lo, ref.hi + 1))
    else:  # nearest_group
        if ctx.speaker is None:
            raise UnresolvableDeixis("'nearest group' needs a speaker track")
        if not ctx.groups:
            raise UnresolvableDeixis("no groups defined")
        best = None
        for gid in sorted(ctx.groups):
            centers = np.array([ctx.room.screen(s).pose.position for s in ctx.groups[gid]])
            d = float(np.linalg.norm(centers.mean(axis=0) - ctx.speaker.centroid))
            if best is None or d < best[0] - 1e-15:
                best = (d, gid)
        ids = tuple(ctx.groups[best[1]])
    for sid in ids:
        ctx.room.screen(sid)  # never bind an id the room does not have
    return ids


def resolve(ast: CommandAst, ctx: ResolveContext) -> ResolvedCommand:
    """Bind deictic slots against a room snapshot; ids are validated to exist."""
    screen_ids: tuple = ()
    group_ids = None
    if ast.screen is not None:
        screen_ids = (_bind_screen(ast.screen, ctx),)
    if ast.screen2 is not None:
        screen_ids = screen_ids + (_bind_screen(ast.screen2, ctx),)
    if ast.group is not None:
        group_ids = _bind_group(ast.group, ctx)
    return ResolvedCommand(
        verb=ast.verb,
        config=ast.config,
        settings=ast.settings,
        screen_ids=screen_ids,
        view=ast.view,
        direction=ast.direction,
        distance_m=ast.distance_m,
        group_screen_ids=group_ids,
        speaker_track=None if ctx.speaker is None else ctx.speaker.id,
    )


# ---------------------------------------------------------------------------
# speaker localization


def azimuth_to_speaker(azimuth: float, tracks: list[PersonTrack]):
    """Track whose bearing from the mic array best matches the azimuth.

    Within 15 degrees wins; a second candidate within 5 degrees of the winner's
    bearing makes the result Ambiguous; nothing in the gate is NoSpeaker.
    Exact distance ties break to the lower track id.
    """
    cands = []
    for t in sorted(tracks, key=lambda t: t.id):
        bearing = math.atan2(float(t.centroid[1]), float(t.centroid[0]))
        dist = abs(wrap_angle(bearing - azimuth))
        if dist <= AZIMUTH_GATE + 1e-12:
            cands.append((dist, t.id, bearing))
    if not cands:
        return NoSpeaker()
    cands.sort(key=lambda c: (c[0], c[1]))
    _, best_id, best_bearing = cands[0]
    for _, _tid, bearing in cands[1:]:
        if abs(wrap_angle(bearing - best_bearing)) <= AZIMUTH_AMBIGUITY + 1e-12:
            return Ambiguous()
    return best_id
