"""Minimal prompt template engine: substitution and presence-conditionals.

Supported constructs, and nothing else:

* ``{{name}}``                      variable substitution
* ``{% if name %} ... {% endif %}`` body included iff the field exists and
                                    is non-empty
* literal text, preserved verbatim

Equality tests, filters, and loops are rejected at parse time as unsupported
constructs. Audio slots are declared by content ``type: audio`` in the prompt
configuration, never inferred from variable names.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .audio import AudioRef
from .data import DataRecord
from .errors import (
    MissingVariableError,
    TemplateParseError,
    TemplateTypeError,
    UnsupportedConstructError,
)

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_TOKEN = re.compile(r"\{\{(.*?)\}\}|\{%(.*?)%\}", re.DOTALL)


@dataclass(frozen=True)
class Literal:
    text: str


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Cond:
    name: str
    body: tuple


Segment = Literal | Var | Cond


def parse_template(source: str) -> tuple[Segment, ...]:
    """Parse template text into a segment tree.

    Raises :class:`TemplateParseError` for unclosed blocks or empty variable
    names and :class:`UnsupportedConstructError` for anything beyond the
    supported subset, both with character positions.
    """
    root: list[Segment] = []
    stack: list[tuple[str, int, list[Segment]]] = []  # (cond name, pos, body)
    current = root
    pos = 0
    for m in _TOKEN.finditer(source):
        literal = source[pos : m.start()]
        _check_literal(literal, pos)
        if literal:
            current.append(Literal(literal))
        pos = m.end()
        if m.group(1) is not None:  # {{ ... }}
            name = m.group(1).strip()
            if not name:
                raise TemplateParseError("empty variable name", position=m.start())
            if not _IDENT.match(name):
                raise UnsupportedConstructError(
                    f"unsupported variable expression {name!r} "
                    "(only bare identifiers are allowed)",
                    position=m.start(),
                )
            current.append(Var(name))
        else:  # {% ... %}
            stmt = m.group(2).strip()
            if stmt.startswith("if "):
                cond = stmt[3:].strip()
                if not cond:
                    raise TemplateParseError("empty condition", position=m.start())
                if not _IDENT.match(cond):
                    raise UnsupportedConstructError(
                        f"unsupported condition {cond!r} "
                        "(only presence checks on a field name are allowed)",
                        position=m.start(),
                    )
                stack.append((cond, m.start(), current))
                current = []
            elif stmt == "endif":
                if not stack:
                    raise TemplateParseError("endif without open if", position=m.start())
                name, _, parent = stack.pop()
                parent.append(Cond(name, tuple(current)))
                current = parent
            else:
                raise UnsupportedConstructError(
                    f"unsupported construct {{% {stmt} %}}", position=m.start()
                )
    tail = source[pos:]
    _check_literal(tail, pos)
    if tail:
        current.append(Literal(tail))
    if stack:
        name, open_pos, _ = stack[-1]
        raise TemplateParseError(f"unclosed conditional on {name!r}", position=open_pos)
    return tuple(root)


def _check_literal(text: str, offset: int) -> None:
    for marker in ("{{", "{%"):
        i = text.find(marker)
        if i != -1:
            raise TemplateParseError(f"unclosed {marker!r}", position=offset + i)


@dataclass(frozen=True)
class ContentSlot:
    """One content item of a role: parsed text segments, or an audio variable."""

    type: str  # "text" | "audio"
    segments: tuple[Segment, ...] = ()
    audio_var: str = ""


@dataclass(frozen=True)
class PromptTemplate:
    """Parsed multimodal template: ordered roles with ordered content slots."""

    roles: tuple[tuple[str, tuple[ContentSlot, ...]], ...]

    @classmethod
    def from_config(cls, template: list) -> "PromptTemplate":
        if not isinstance(template, list) or not template:
            raise TemplateParseError("prompt template must be a non-empty list of roles")
        roles = []
        for entry in template:
            if not isinstance(entry, dict) or "role" not in entry:
                raise TemplateParseError("each template entry needs a 'role'")
            contents = entry.get("contents")
            if not isinstance(contents, list) or not contents:
                raise TemplateParseError(
                    f"role {entry['role']!r} needs a non-empty 'contents' list"
                )
            slots = []
            for item in contents:
                ctype = item.get("type")
                value = item.get("value", "")
                if ctype == "text":
                    slots.append(ContentSlot("text", segments=parse_template(str(value))))
                elif ctype == "audio":
                    segments = parse_template(str(value))
                    if len(segments) != 1 or not isinstance(segments[0], Var):
                        raise TemplateParseError(
                            "audio content value must be a single variable reference"
                        )
                    slots.append(ContentSlot("audio", audio_var=segments[0].name))
                else:
                    raise TemplateParseError(f"unknown content type {ctype!r}")
            roles.append((str(entry["role"]), tuple(slots)))
        return cls(roles=tuple(roles))


@dataclass(frozen=True)
class Content:
    type: str  # "text" | "audio"
    value: object  # str for text, AudioRef for audio


@dataclass(frozen=True)
class Message:
    role: str
    contents: tuple[Content, ...]


@dataclass(frozen=True)
class MessageList:
    """A rendered multimodal prompt, ready for the wire."""

    messages: tuple[Message, ...]

    def text(self) -> str:
        """All text segments concatenated, in order."""
        return "".join(
            c.value for msg in self.messages for c in msg.contents if c.type == "text"
        )

    def to_wire(self) -> list[dict]:
        """Protocol form: audio values become local file paths."""
        out = []
        for msg in self.messages:
            contents = []
            for c in msg.contents:
                if c.type == "audio":
                    contents.append({"type": "audio", "value": str(c.value.path)})
                else:
                    contents.append({"type": "text", "value": c.value})
            out.append({"role": msg.role, "contents": contents})
        return out


def _present(record: DataRecord, name: str) -> bool:
    value = record.fields.get(name)
    return value is not None and value != ""


def _render_segments(segments: tuple[Segment, ...], record: DataRecord) -> str:
    parts: list[str] = []
    for seg in segments:
        if isinstance(seg, Literal):
            parts.append(seg.text)
        elif isinstance(seg, Var):
            if seg.name not in record.fields or record.fields[seg.name] is None:
                raise MissingVariableError(seg.name)
            value = record.fields[seg.name]
            if isinstance(value, AudioRef):
                raise TemplateTypeError(
                    f"audio reference {seg.name!r} substituted into a text slot"
                )
            parts.append(value if isinstance(value, str) else str(value))
        else:  # Cond
            if _present(record, seg.name):
                parts.append(_render_segments(seg.body, record))
    return "".join(parts)


def render(ast: PromptTemplate | tuple[Segment, ...], record: DataRecord):
    """Render a template against a record.

    For a :class:`PromptTemplate` this yields a :class:`MessageList`; for a
    bare segment tuple (one text template) it yields the rendered string.
    Rendering is pure: the record is never mutated.
    """
    if not isinstance(ast, PromptTemplate):
        return _render_segments(ast, record)
    messages = []
    for role, slots in ast.roles:
        contents = []
        for slot in slots:
            if slot.type == "text":
                contents.append(Content("text", _render_segments(slot.segments, record)))
            else:
                if slot.audio_var not in record.fields:
                    raise MissingVariableError(slot.audio_var)
                value = record.fields[slot.audio_var]
                if not isinstance(value, AudioRef):
                    raise TemplateTypeError(
                        f"field {slot.audio_var!r} bound to an audio slot "
                        f"is not an audio reference (got {type(value).__name__})"
                    )
                contents.append(Content("audio", value))
        messages.append(Message(role=role, contents=tuple(contents)))
    return MessageList(messages=tuple(messages))


def referenced_variables(ast: PromptTemplate | tuple[Segment, ...]) -> set[str]:
    """All variable names a template can reference (conditionals included)."""
    names: set[str] = set()

    def walk(segments):
        for seg in segments:
            if isinstance(seg, Var):
                names.add(seg.name)
            elif isinstance(seg, Cond):
                names.add(seg.name)
                walk(seg.body)

    if isinstance(ast, PromptTemplate):
        for _, slots in ast.roles:
            for slot in slots:
                if slot.type == "audio":
                    names.add(slot.audio_var)
                else:
                    walk(slot.segments)
    else:
        walk(ast)
    return names
