"""Composable parsers that turn raw model output into metric-ready values.

Processors are pure functions configured by a :class:`ProcessorSpec`; a chain
applies them left to right. Text normalization profiles used by the string
metrics also live here.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field

from .errors import ExtractionError, SchemaError, StageError

# CJK punctuation commonly emitted by Chinese ASR/TTS systems.
CJK_PUNCTUATION = "，。！？、；：“”‘’（）《》〈〉【】〔〕…—～·「」『』"


@dataclass(frozen=True)
class NormalizationProfile:
    """Declared text-preprocessing steps applied before string metrics.

    Steps run in a fixed order: case fold, strip punctuation, then whitespace
    handling. Applying a profile twice equals applying it once.
    """

    id: str
    case_fold: bool = True
    strip_punctuation: frozenset[str] = frozenset()
    collapse_whitespace: bool = True
    strip_inner_whitespace: bool = False

    def apply(self, text: str) -> str:
        return normalize_text(text, self)


# Built-in profiles. Scores are only comparable under a declared profile.
PROFILES: dict[str, NormalizationProfile] = {
    "en": NormalizationProfile(
        id="en",
        case_fold=True,
        strip_punctuation=frozenset(string.punctuation),
        collapse_whitespace=True,
    ),
    "zh": NormalizationProfile(
        id="zh",
        case_fold=True,
        strip_punctuation=frozenset(string.punctuation) | frozenset(CJK_PUNCTUATION),
        collapse_whitespace=False,
        strip_inner_whitespace=True,
    ),
    "none": NormalizationProfile(
        id="none",
        case_fold=False,
        strip_punctuation=frozenset(),
        collapse_whitespace=False,
    ),
}


def get_profile(profile: str | NormalizationProfile) -> NormalizationProfile:
    if isinstance(profile, NormalizationProfile):
        return profile
    try:
        return PROFILES[profile]
    except KeyError:
        raise SchemaError(
            f"unknown normalization profile {profile!r}; "
            f"available: {sorted(PROFILES)}"
        ) from None


def normalize_text(text: str, profile: str | NormalizationProfile) -> str:
    """Apply a normalization profile: fold case, strip punctuation, fix spaces."""
    prof = get_profile(profile)
    if prof.case_fold:
        text = text.casefold()
    if prof.strip_punctuation:
        text = "".join(ch for ch in text if ch not in prof.strip_punctuation)
    if prof.strip_inner_whitespace:
        text = "".join(text.split())
    elif prof.collapse_whitespace:
        text = " ".join(text.split())
    return text


_PROCESSOR_KINDS = ("option_extract", "yes_no", "json_field", "normalize_text", "regex_capture")


@dataclass(frozen=True)
class ProcessorSpec:
    """One stage of a post-processing chain."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _PROCESSOR_KINDS:
            raise SchemaError(
                f"unknown processor kind {self.kind!r}; available: {_PROCESSOR_KINDS}"
            )
        if self.kind == "option_extract":
            labels = self.params.get("allowed", [])
            if not labels:
                raise SchemaError("option_extract requires non-empty 'allowed' labels")
            if len(set(labels)) != len(labels):
                raise SchemaError("option_extract labels must be distinct")
            for label in labels:
                if not label or any(ch.isspace() for ch in label):
                    raise SchemaError(f"option label {label!r} is not a single token")


def extract_option(text: str, allowed: list[str]) -> str:
    """Pick a multiple-choice label out of free-form model output.

    Priority: (1) the trimmed text is exactly one label; (2) a label followed
    by '.', ')' or ':' at the start of the text; (3) the first standalone
    occurrence of any label, earliest position first. Matching is
    case-insensitive; the canonical label from ``allowed`` is returned.
    """
    if not allowed:
        raise ExtractionError("no allowed option labels given")
    trimmed = text.strip()
    lowered = {label.casefold(): label for label in allowed}

    # (1) exact single-label output
    if trimmed.casefold() in lowered:
        return lowered[trimmed.casefold()]

    # (2) leading "<label>." / "<label>)" / "<label>:"
    for label in allowed:
        if re.match(rf"^{re.escape(label)}[.):]", trimmed, re.IGNORECASE):
            return label

    # (3) earliest standalone occurrence as a word
    best: tuple[int, str] | None = None
    for label in allowed:
        pattern = rf"(?<![A-Za-z0-9]){re.escape(label)}(?![A-Za-z0-9])"
        m = re.search(pattern, trimmed, re.IGNORECASE)
        if m and (best is None or m.start() < best[0]):
            best = (m.start(), label)
    if best is not None:
        return best[1]
    raise ExtractionError(f"no option label from {allowed} found in {trimmed!r}")


def parse_yes_no(text: str) -> bool:
    """Parse a leading yes/no, ignoring case and leading punctuation."""
    m = re.match(r"^\W*(yes|no)\b", text.strip(), re.IGNORECASE)
    if not m:
        raise ExtractionError(f"no leading yes/no in {text.strip()!r}")
    return m.group(1).casefold() == "yes"


def _run_processor(spec: ProcessorSpec, value: str) -> str:
    if spec.kind == "normalize_text":
        return normalize_text(value, spec.params.get("profile", "en"))
    if spec.kind == "option_extract":
        return extract_option(value, list(spec.params["allowed"]))
    if spec.kind == "yes_no":
        return "yes" if parse_yes_no(value) else "no"
    if spec.kind == "json_field":
        name = spec.params["field"]
        try:
            obj = json.loads(value)
        except (json.JSONDecodeError, TypeError) as exc:
            raise ExtractionError(f"not valid JSON: {exc}") from exc
        if not isinstance(obj, dict) or name not in obj:
            raise ExtractionError(f"JSON object has no field {name!r}")
        out = obj[name]
        return out if isinstance(out, str) else json.dumps(out, ensure_ascii=False)
    if spec.kind == "regex_capture":
        pattern = spec.params["pattern"]
        m = re.search(pattern, value, re.DOTALL)
        if not m:
            raise ExtractionError(f"pattern {pattern!r} did not match")
        return m.group(1) if m.groups() else m.group(0)
    raise StageError(-1, f"unhandled processor kind {spec.kind!r}")  # pragma: no cover


def apply_chain(chain: list[ProcessorSpec], raw: str) -> str:
    """Apply processors left to right; the output of each feeds the next.

    A failing stage raises :class:`StageError` carrying the stage index so the
    per-sample result can record the failure without aborting the run.
    """
    value = raw
    for index, spec in enumerate(chain):
        try:
            value = _run_processor(spec, value)
        except (ExtractionError, KeyError, SchemaError) as exc:
            raise StageError(index, f"{spec.kind}: {exc}") from exc
    return value
