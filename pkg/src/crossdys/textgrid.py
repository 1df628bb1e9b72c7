"""Praat TextGrid reading/writing and phone-class segmentation.

Both the "long" (``key = value``) and the "short" (bare values) text layouts
are accepted. Praat itself reads them with the same tokenizer: everything that
is not a number, a double-quoted string or a ``<flag>`` is skipped, as is any
``[...]`` index group. We do the same, which keeps one grammar for both layouts.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

BOUNDARY_TOL = 1e-9


class TextGridError(ValueError):
    """Malformed TextGrid input. ``line`` is 1-based (0 when unknown)."""

    def __init__(self, message: str, line: int = 0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class PhoneMapError(ValueError):
    pass


class PhoneClass(str, Enum):
    VOWEL = "Vowel"
    CONSONANT = "Consonant"
    SILENCE = "Silence"


class RunClass(str, Enum):
    VOCALIC = "Vocalic"
    CONSONANTAL = "Consonantal"
    SILENCE = "Silence"


_RUN_OF = {
    PhoneClass.VOWEL: RunClass.VOCALIC,
    PhoneClass.CONSONANT: RunClass.CONSONANTAL,
    PhoneClass.SILENCE: RunClass.SILENCE,
}

CORNER_VOWELS = ("i", "ae", "a", "u")


@dataclass(frozen=True)
class Interval:
    label: str
    xmin: float
    xmax: float

    @property
    def duration(self) -> float:
        return self.xmax - self.xmin

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.xmin + self.xmax)


@dataclass(frozen=True)
class Tier:
    name: str
    intervals: tuple[Interval, ...]
    xmin: float = 0.0
    xmax: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "intervals", tuple(self.intervals))
        validate_intervals(self.intervals, self.xmin, self.xmax)

    @property
    def duration(self) -> float:
        return self.xmax - self.xmin


@dataclass(frozen=True)
class SegmentRun:
    cls: RunClass
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


def validate_intervals(intervals: Sequence[Interval], xmin: float, xmax: float, line: int = 0):
    if xmax < xmin:
        raise TextGridError(f"tier xmax {xmax} < xmin {xmin}", line)
    if not intervals:
        return
    if abs(intervals[0].xmin - xmin) > BOUNDARY_TOL:
        raise TextGridError(f"first interval starts at {intervals[0].xmin}, tier starts at {xmin}", line)
    if abs(intervals[-1].xmax - xmax) > BOUNDARY_TOL:
        raise TextGridError(f"last interval ends at {intervals[-1].xmax}, tier ends at {xmax}", line)
    prev = None
    for k, iv in enumerate(intervals):
        if not iv.xmin < iv.xmax:
            raise TextGridError(f"interval {k + 1} has xmax {iv.xmax} <= xmin {iv.xmin}", line)
        if prev is not None:
            if iv.xmin < prev.xmax - BOUNDARY_TOL:
                raise TextGridError(f"interval {k + 1} overlaps its predecessor (non-monotone boundaries)", line)
            if iv.xmin > prev.xmax + BOUNDARY_TOL:
                raise TextGridError(f"gap between interval {k} and {k + 1} ({prev.xmax} .. {iv.xmin})", line)
        prev = iv


# -- tokenizer ---------------------------------------------------------------

_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")


@dataclass
class _Token:
    kind: str  # "num", "str", "flag"
    value: object
    line: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    i, n, line = 0, len(text), 1
    while i < n:
        c = text[i]
        if c == "\n":
            line += 1
            i += 1
        elif c.isspace():
            i += 1
        elif c == "!":
            while i < n and text[i] != "\n":
                i += 1
        elif c == '"':
            start_line = line
            i += 1
            buf = []
            while True:
                if i >= n:
                    raise TextGridError("unterminated string", start_line)
                if text[i] == '"':
                    if i + 1 < n and text[i + 1] == '"':
                        buf.append('"')
                        i += 2
                        continue
                    i += 1
                    break
                if text[i] == "\n":
                    line += 1
                buf.append(text[i])
                i += 1
            tokens.append(_Token("str", "".join(buf), start_line))
        elif c == "<":
            j = text.find(">", i)
            if j < 0:
                raise TextGridError("unterminated flag", line)
            tokens.append(_Token("flag", text[i + 1 : j], line))
            i = j + 1
        elif c == "[":
            j = text.find("]", i)
            if j < 0:
                raise TextGridError("unterminated index bracket", line)
            i = j + 1
        else:
            m = _NUMBER.match(text, i)
            prev_ok = i == 0 or not (text[i - 1].isalnum() or text[i - 1] == "_")
            if m and prev_ok:
                end = m.end()
                if end < n and (text[end].isalpha() or text[end] == "_"):
                    # part of an identifier such as "2nd"; skip the word
                    while end < n and not text[end].isspace():
                        end += 1
                    i = end
                    continue
                tokens.append(_Token("num", float(m.group()), line))
                i = end
            else:
                # label text: identifiers, "=", ":", "?" etc.
                i += 1
    return tokens


class _Stream:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def _next(self, kind: str, what: str) -> _Token:
        if self.pos >= len(self.tokens):
            last = self.tokens[-1].line if self.tokens else 0
            raise TextGridError(f"unexpected end of file, expected {what}", last)
        tok = self.tokens[self.pos]
        if tok.kind != kind:
            raise TextGridError(f"expected {what}, found {tok.kind} {tok.value!r}", tok.line)
        self.pos += 1
        return tok

    def num(self, what: str) -> tuple[float, int]:
        tok = self._next("num", what)
        return tok.value, tok.line

    def string(self, what: str) -> tuple[str, int]:
        tok = self._next("str", what)
        return tok.value, tok.line

    def count(self, what: str) -> tuple[int, int]:
        value, line = self.num(what)
        if value < 0 or value != int(value):
            raise TextGridError(f"{what} must be a non-negative integer, got {value}", line)
        return int(value), line


def decode_textgrid(data: bytes) -> str:
    if data.startswith(b"ooBinaryFile"):
        raise TextGridError("binary TextGrid files are not supported")
    if data.startswith(b"\xff\xfe") or data.startswith(b"\xfe\xff"):
        return data.decode("utf-16")
    if data.startswith(b"\xef\xbb\xbf"):
        return data[3:].decode("utf-8")
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise TextGridError(f"not valid UTF-8: {exc}") from None


def parse_textgrid(text: str | bytes) -> list[Tier]:
    """Parse a TextGrid in long or short text format.

    Returns every IntervalTier in file order; point tiers are read and dropped.
    """
    if isinstance(text, bytes):
        text = decode_textgrid(text)
    if text.startswith("\ufeff"):
        text = text[1:]
    s = _Stream(_tokenize(text))
    ftype, line = s.string("file type")
    if ftype != "ooTextFile":
        raise TextGridError(f"unsupported file type {ftype!r}", line)
    oclass, line = s.string("object class")
    if oclass != "TextGrid":
        raise TextGridError(f"object class {oclass!r} is not TextGrid", line)
    gxmin, _ = s.num("xmin")
    gxmax, line = s.num("xmax")
    if gxmax < gxmin:
        raise TextGridError(f"xmax {gxmax} < xmin {gxmin}", line)
    if s.pos < len(s.tokens) and s.tokens[s.pos].kind == "flag":
        flag = s.tokens[s.pos]
        s.pos += 1
        if flag.value == "absent":
            return []
        if flag.value != "exists":
            raise TextGridError(f"unexpected flag <{flag.value}>", flag.line)
    else:
        tok = s.tokens[s.pos] if s.pos < len(s.tokens) else None
        raise TextGridError("missing <exists> tiers flag", tok.line if tok else line)
    n_tiers, _ = s.count("tier count")

    tiers = []
    for _ in range(n_tiers):
        tclass, tline = s.string("tier class")
        name, _ = s.string("tier name")
        txmin, _ = s.num("tier xmin")
        txmax, _ = s.num("tier xmax")
        n_items, _ = s.count("item count")
        if tclass == "IntervalTier":
            intervals = []
            for _ in range(n_items):
                xmin, iline = s.num("interval xmin")
                xmax, _ = s.num("interval xmax")
                label, _ = s.string("interval text")
                if not xmin < xmax:
                    raise TextGridError(f"interval xmax {xmax} <= xmin {xmin}", iline)
                if intervals and xmin < intervals[-1].xmax - BOUNDARY_TOL:
                    raise TextGridError("non-monotone interval boundaries", iline)
                intervals.append(Interval(label, xmin, xmax))
            validate_intervals(intervals, txmin, txmax, tline)
            tiers.append(Tier(name, tuple(intervals), txmin, txmax))
        elif tclass == "TextTier":
            for _ in range(n_items):
                s.num("point time")
                s.string("point mark")
        else:
            raise TextGridError(f"unknown tier class {tclass!r}", tline)
    return tiers


def read_textgrid(path) -> list[Tier]:
    return parse_textgrid(Path(path).read_bytes())


def _fmt(x: float) -> str:
    r = repr(float(x))
    return r[:-2] if r.endswith(".0") else r


def _quote(s: str) -> str:
    return '"' + s.replace('"', '""') + '"'


def format_textgrid(tiers: Sequence[Tier], short: bool = False) -> str:
    """Serialize interval tiers; used for round-trip checks and fixtures."""
    xmin = min((t.xmin for t in tiers), default=0.0)
    xmax = max((t.xmax for t in tiers), default=0.0)
    out = ['File type = "ooTextFile"', 'Object class = "TextGrid"', ""]
    if short:
        out += [_fmt(xmin), _fmt(xmax), "<exists>", str(len(tiers))]
        for t in tiers:
            out += ['"IntervalTier"', _quote(t.name), _fmt(t.xmin), _fmt(t.xmax), str(len(t.intervals))]
            for iv in t.intervals:
                out += [_fmt(iv.xmin), _fmt(iv.xmax), _quote(iv.label)]
    else:
        out += [f"xmin = {_fmt(xmin)} ", f"xmax = {_fmt(xmax)} ", "tiers? <exists> ",
                f"size = {len(tiers)} ", "item []: "]
        for k, t in enumerate(tiers, 1):
            out += [
                f"    item [{k}]:",
                '        class = "IntervalTier" ',
                f"        name = {_quote(t.name)} ",
                f"        xmin = {_fmt(t.xmin)} ",
                f"        xmax = {_fmt(t.xmax)} ",
                f"        intervals: size = {len(t.intervals)} ",
            ]
            for j, iv in enumerate(t.intervals, 1):
                out += [
                    f"        intervals [{j}]:",
                    f"            xmin = {_fmt(iv.xmin)} ",
                    f"            xmax = {_fmt(iv.xmax)} ",
                    f"            text = {_quote(iv.label)} ",
                ]
    return "\n".join(out) + "\n"


def find_tier(tiers: Sequence[Tier], name: str | None = None) -> Tier:
    """Pick a tier by name; without a name prefer "phones", else the last tier."""
    if not tiers:
        raise TextGridError("TextGrid has no interval tiers")
    if name is None:
        for t in tiers:
            if t.name.lower() in ("phones", "phone", "phonemes"):
                return t
        return tiers[-1]
    for t in tiers:
        if t.name == name:
            return t
    raise TextGridError(f"no tier named {name!r}")


# -- phone classes -------------------------------------------------------------

_STRESS = re.compile(r"\d+$")


@dataclass
class PhoneClassMap:
    """Per-language phone inventory: class of each label plus vowel roles.

    Config file (JSON)::

        {"language": "en",
         "vowels": ["IY", "AA", ...], "consonants": ["P", ...],
         "silence": ["sil", "sp"],
         "corner_vowels": {"i": ["IY"], "ae": ["AE"], "a": ["AA"], "u": ["UW"]},
         "front_back_pair": ["IY", "UW"],
         "strip_stress": true}

    The empty label is always silence.
    """

    language: str
    class_of: dict[str, PhoneClass]
    corner_vowel_of: dict[str, str] = field(default_factory=dict)
    front_back_pair: tuple[str, str] = ("i", "u")
    strip_stress: bool = False

    def __post_init__(self):
        self.class_of = {k: PhoneClass(v) for k, v in self.class_of.items()}
        self.class_of.setdefault("", PhoneClass.SILENCE)
        for label, corner in self.corner_vowel_of.items():
            if corner not in CORNER_VOWELS:
                raise PhoneMapError(f"unknown corner category {corner!r} for {label!r}")
            if self.class_of.get(label) != PhoneClass.VOWEL:
                raise PhoneMapError(f"corner vowel {label!r} is not classified as a vowel")
        self.front_back_pair = tuple(self.front_back_pair)
        for label in self.front_back_pair:
            if self.class_of.get(label) != PhoneClass.VOWEL:
                raise PhoneMapError(f"front/back vowel {label!r} is not classified as a vowel")

    def normalize(self, label: str) -> str:
        label = label.strip()
        if self.strip_stress and label not in self.class_of:
            label = _STRESS.sub("", label)
        return label

    def classify(self, label: str) -> PhoneClass:
        key = self.normalize(label)
        try:
            return self.class_of[key]
        except KeyError:
            raise PhoneMapError(f"phone label {label!r} is not in the {self.language} phone map") from None

    def corner_of(self, label: str) -> str | None:
        return self.corner_vowel_of.get(self.normalize(label))

    @classmethod
    def from_dict(cls, cfg: dict) -> "PhoneClassMap":
        class_of = {}
        for key, pc in (("vowels", PhoneClass.VOWEL), ("consonants", PhoneClass.CONSONANT),
                        ("silence", PhoneClass.SILENCE)):
            for label in cfg.get(key, []):
                if label in class_of and class_of[label] != pc:
                    raise PhoneMapError(f"label {label!r} listed as both {class_of[label].value} and {pc.value}")
                class_of[label] = pc
        corner_of = {}
        for corner, labels in cfg.get("corner_vowels", {}).items():
            for label in labels:
                if label in corner_of:
                    raise PhoneMapError(f"label {label!r} assigned to corners {corner_of[label]!r} and {corner!r}")
                corner_of[label] = corner
        return cls(
            language=cfg["language"],
            class_of=class_of,
            corner_vowel_of=corner_of,
            front_back_pair=tuple(cfg.get("front_back_pair", ("i", "u"))),
            strip_stress=bool(cfg.get("strip_stress", False)),
        )

    def to_dict(self) -> dict:
        by_class = {pc: sorted(k for k, v in self.class_of.items() if v == pc and k) for pc in PhoneClass}
        corners: dict[str, list[str]] = {}
        for label, corner in sorted(self.corner_vowel_of.items()):
            corners.setdefault(corner, []).append(label)
        return {
            "language": self.language,
            "vowels": by_class[PhoneClass.VOWEL],
            "consonants": by_class[PhoneClass.CONSONANT],
            "silence": by_class[PhoneClass.SILENCE],
            "corner_vowels": corners,
            "front_back_pair": list(self.front_back_pair),
            "strip_stress": self.strip_stress,
        }


def load_phone_map(path) -> PhoneClassMap:
    with open(path, encoding="utf-8") as fh:
        return PhoneClassMap.from_dict(json.load(fh))


def classify_runs(tier: Tier, phone_map: PhoneClassMap) -> list[SegmentRun]:
    """Merge consecutive phones of the same broad class into runs."""
    runs: list[SegmentRun] = []
    for iv in tier.intervals:
        cls = _RUN_OF[phone_map.classify(iv.label)]
        if runs and runs[-1].cls == cls:
            runs[-1] = SegmentRun(cls, runs[-1].start, iv.xmax)
        else:
            runs.append(SegmentRun(cls, iv.xmin, iv.xmax))
    return runs


def intervals_of(tier: Tier, phone_map: PhoneClassMap, cls: PhoneClass) -> Iterable[Interval]:
    return (iv for iv in tier.intervals if phone_map.classify(iv.label) == cls)
