"""Declarative configuration: registry, run specs, and validation.

A config document is a YAML map of named entries. Each entry declares its
component kind either natively (``kind: dataset``) or through a ``class:``
tag from existing config dialects, which is mapped onto a built-in kind by
keyword (never imported or executed). Payload fields live either under
``args:`` or inline next to the kind tag. A top-level ``include:`` list pulls
in further documents relative to the including file.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import yaml

from .errors import (
    ConfigParseError,
    DuplicateNameError,
    ResolutionError,
    SchemaError,
)
from .postprocess import PROFILES, ProcessorSpec
from .templates import PromptTemplate

logger = logging.getLogger(__name__)

KINDS = ("dataset", "prompt", "model", "postprocess", "evaluator", "task")

# Task taxonomy: which metric kinds each task identifier admits. The three
# 0-5 quality predictors travel together wherever one of them is admitted.
_ACOUSTIC = ("utmos", "dnsmos_p835", "dnsmos_p808")
TASK_METRICS: dict[str, frozenset[str]] = {
    "asr": frozenset({"wer", "cer"}),
    "ast": frozenset({"bleu"}),
    "gender": frozenset({"acc"}),
    "emotion": frozenset({"acc"}),
    "instrument": frozenset({"acc"}),
    "music_genre": frozenset({"acc"}),
    "chord": frozenset({"acc"}),
    "audio_classification": frozenset({"acc"}),
    "caption": frozenset({"bleu", "rouge_l"}),
    "speech_qa": frozenset({"exist_match", "judge", "acc", *_ACOUSTIC}),
    "tts": frozenset({"wer", "cer"}),
    "vc": frozenset({"wer", "cer", "sim"}),
    "speech_codec": frozenset({"wer", "cer", "sim", *_ACOUSTIC}),
}

# Map an evaluator kind onto the metric kinds it produces.
EVALUATOR_METRICS: dict[str, frozenset[str]] = {
    "wer": frozenset({"wer"}),
    "cer": frozenset({"cer"}),
    "bleu": frozenset({"bleu"}),
    "rouge_l": frozenset({"rouge_l"}),
    "acc": frozenset({"acc"}),
    "exist_match": frozenset({"exist_match"}),
    "judge": frozenset({"judge"}),
    "quality": frozenset(_ACOUSTIC),
}


@dataclass(frozen=True)
class Spec:
    """Base class: a named, typed config entry with its payload."""

    name: str
    payload: Mapping

    @property
    def kind(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class DatasetSpec(Spec):
    path: str = ""
    task: str | None = None
    evaluator: str | None = None
    postprocess: tuple[str, ...] = ()

    kind = "dataset"


@dataclass(frozen=True)
class PromptSpec(Spec):
    template: PromptTemplate = None  # parsed form; equality uses payload

    kind = "prompt"

    def __eq__(self, other):
        return isinstance(other, PromptSpec) and self.name == other.name \
            and self.payload == other.payload

    def __hash__(self):
        return hash(("prompt", self.name))


@dataclass(frozen=True)
class AdapterSpec(Spec):
    """How to reach a model: local subprocess or remote endpoint."""

    adapter: str = "local"  # "local" | "remote"
    command: tuple[str, ...] = ()
    workdir: str | None = None
    env: Mapping[str, str] = field(default_factory=dict)
    ready_timeout: float = 30.0
    request_timeout: float = 60.0
    max_restarts: int = 1
    url: str = ""
    auth_header: str | None = None
    secret_env: str | None = None
    expected_sample_rate: int | None = None
    params: Mapping = field(default_factory=dict)

    kind = "model"

    def __post_init__(self):
        if self.adapter == "local":
            if not self.command:
                raise SchemaError(f"local model {self.name!r} needs a non-empty command")
        elif self.adapter == "remote":
            if not self.url.startswith(("http://", "https://")):
                raise SchemaError(f"remote model {self.name!r} needs a valid http(s) URL")
        else:
            raise SchemaError(f"model {self.name!r}: unknown adapter {self.adapter!r}")


@dataclass(frozen=True)
class PostprocessSpec(Spec):
    processor: ProcessorSpec = None

    kind = "postprocess"


@dataclass(frozen=True)
class EvaluatorSpec(Spec):
    eval_kind: str = ""
    profile: str = "en"
    tokenizer: str = "whitespace"
    ref_field: str = "text"
    question_field: str = "question"
    adapter: str | None = None  # model entry for judge/quality evaluators
    rubric: str = ""

    kind = "evaluator"

    def __post_init__(self):
        if self.eval_kind not in EVALUATOR_METRICS:
            raise SchemaError(
                f"evaluator {self.name!r}: unknown kind {self.eval_kind!r}; "
                f"available: {sorted(EVALUATOR_METRICS)}"
            )
        if self.profile not in PROFILES:
            raise SchemaError(
                f"evaluator {self.name!r}: unknown profile {self.profile!r}"
            )
        if self.eval_kind in ("judge", "quality") and not self.adapter:
            raise SchemaError(
                f"evaluator {self.name!r}: kind {self.eval_kind!r} needs an "
                "'adapter' naming a model entry"
            )

    @property
    def metric_kinds(self) -> frozenset[str]:
        return EVALUATOR_METRICS[self.eval_kind]


@dataclass(frozen=True)
class TaskSpec(Spec):
    task_kind: str = ""
    metric_kinds: tuple[str, ...] = ()
    language_profile: str = "en"

    kind = "task"

    def __post_init__(self):
        if self.task_kind not in TASK_METRICS:
            raise SchemaError(
                f"task {self.name!r}: unknown task kind {self.task_kind!r}; "
                f"available: {sorted(TASK_METRICS)}"
            )
        if not self.metric_kinds:
            raise SchemaError(f"task {self.name!r}: metric_kinds must be non-empty")
        allowed = TASK_METRICS[self.task_kind]
        bad = [m for m in self.metric_kinds if m not in allowed]
        if bad:
            raise SchemaError(
                f"task {self.name!r} ({self.task_kind}): metric kinds {bad} "
                f"not in that task's vocabulary {sorted(allowed)}"
            )


@dataclass(frozen=True)
class Registry:
    """Immutable name registry of all declared components."""

    entries: Mapping[tuple[str, str], Spec] = field(default_factory=dict)

    def resolve(self, kind: str, name: str) -> Spec:
        try:
            return self.entries[(kind, name)]
        except KeyError:
            available = sorted(n for k, n in self.entries if k == kind)
            raise ResolutionError(
                f"no {kind} named {name!r}; available {kind}s: {available}"
            ) from None

    def names(self, kind: str) -> list[str]:
        return sorted(n for k, n in self.entries if k == kind)

    def with_entry(self, spec: Spec) -> "Registry":
        key = (spec.kind, spec.name)
        if key in self.entries:
            raise DuplicateNameError(f"duplicate {spec.kind} entry {spec.name!r}")
        merged = dict(self.entries)
        merged[key] = spec
        return Registry(entries=merged)

    def __len__(self):
        return len(self.entries)


# -- YAML loading -------------------------------------------------------------

class _StrictLoader(yaml.SafeLoader):
    """SafeLoader that rejects duplicate mapping keys with line context."""


def _construct_mapping(loader, node, deep=False):
    seen = set()
    for key_node, _ in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in seen:
            raise DuplicateNameError(
                f"duplicate key {key!r} (line {key_node.start_mark.line + 1})"
            )
        seen.add(key)
    return yaml.SafeLoader.construct_mapping(loader, node, deep=deep)


_StrictLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping
)


def _parse_yaml(text: str, source: str) -> dict:
    try:
        doc = yaml.load(io.StringIO(text), Loader=_StrictLoader)
    except DuplicateNameError:
        raise
    except yaml.YAMLError as exc:
        line = None
        mark = getattr(exc, "problem_mark", None)
        if mark is not None:
            line = mark.line + 1
        raise ConfigParseError(f"cannot parse {source}: {exc}", line=line) from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigParseError(f"{source}: top level must be a map of named entries")
    return doc


# class-tag keywords, scanned right to left over dotted/underscored segments
_CLASS_KEYWORDS = (
    ("prompt", "prompt"),
    ("dataset", "dataset"),
    ("adapter", "model"),
    ("model", "model"),
    ("processor", "postprocess"),
    ("process", "postprocess"),
    ("parser", "postprocess"),
    ("evaluator", "evaluator"),
    ("eval", "evaluator"),
    ("task", "task"),
)


def _kind_from_class_tag(tag: str) -> str | None:
    segments = [s for part in tag.split(".") for s in part.split("_") if s]
    for segment in reversed([s.lower() for s in segments]):
        for keyword, kind in _CLASS_KEYWORDS:
            if keyword in segment:
                return kind
    return None


def _build_spec(kind: str, name: str, payload: dict,
                base_dir: Path | None = None) -> Spec:
    if kind == "prompt":
        template = payload.get("template")
        return PromptSpec(name=name, payload=payload,
                          template=PromptTemplate.from_config(template))
    if kind == "dataset":
        path = payload.get("path")
        if not path:
            raise SchemaError(f"dataset {name!r} needs a 'path'")
        path = Path(path)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        post = payload.get("postprocess", [])
        if isinstance(post, str):
            post = [post]
        return DatasetSpec(name=name, payload=payload, path=str(path),
                           task=payload.get("task"),
                           evaluator=payload.get("evaluator"),
                           postprocess=tuple(post))
    if kind == "model":
        command = payload.get("command", [])
        if isinstance(command, str):
            command = command.split()
        return AdapterSpec(
            name=name, payload=payload,
            adapter=payload.get("adapter", "remote" if payload.get("url") else "local"),
            command=tuple(str(c) for c in command),
            workdir=payload.get("workdir"),
            env=dict(payload.get("env", {})),
            ready_timeout=float(payload.get("ready_timeout", 30.0)),
            request_timeout=float(payload.get("request_timeout", 60.0)),
            max_restarts=int(payload.get("max_restarts", 1)),
            url=str(payload.get("url", "")),
            auth_header=payload.get("auth_header"),
            secret_env=payload.get("secret_env"),
            expected_sample_rate=payload.get("expected_sample_rate"),
            params=dict(payload.get("params", {})),
        )
    if kind == "postprocess":
        proc_kind = payload.get("kind") or payload.get("processor")
        if not proc_kind:
            raise SchemaError(f"postprocess {name!r} needs a processor kind")
        params = {k: v for k, v in payload.items() if k not in ("kind", "processor")}
        return PostprocessSpec(name=name, payload=payload,
                               processor=ProcessorSpec(kind=proc_kind, params=params))
    if kind == "evaluator":
        ev_kind = payload.get("kind") or payload.get("metric")
        if not ev_kind:
            raise SchemaError(f"evaluator {name!r} needs a metric kind")
        return EvaluatorSpec(
            name=name, payload=payload, eval_kind=str(ev_kind),
            profile=str(payload.get("profile", "en")),
            tokenizer=str(payload.get("tokenizer", "whitespace")),
            ref_field=str(payload.get("ref_field", "text")),
            question_field=str(payload.get("question_field", "question")),
            adapter=payload.get("adapter"),
            rubric=str(payload.get("rubric", "")),
        )
    if kind == "task":
        metrics = payload.get("metrics") or payload.get("metric_kinds") or []
        if isinstance(metrics, str):
            metrics = [metrics]
        return TaskSpec(name=name, payload=payload,
                        task_kind=str(payload.get("task_kind", "")),
                        metric_kinds=tuple(metrics),
                        language_profile=str(payload.get("language_profile", "en")))
    raise SchemaError(f"entry {name!r}: unknown kind {kind!r}")


def _entry_to_spec(name: str, entry: dict,
                   base_dir: Path | None = None) -> Spec | None:
    """Turn one top-level document entry into a Spec, or None to skip it."""
    if not isinstance(entry, dict):
        logger.warning("ignoring top-level key %r: not a map", name)
        return None
    kind = entry.get("kind")
    payload = entry.get("args")
    if kind is None and "class" in entry:
        kind = _kind_from_class_tag(str(entry["class"]))
        if kind is None:
            raise SchemaError(
                f"entry {name!r}: cannot map class tag {entry['class']!r} "
                "to a component kind"
            )
    if kind is None:
        logger.warning("ignoring top-level key %r: no kind or class tag", name)
        return None
    if kind not in KINDS:
        raise SchemaError(f"entry {name!r}: unknown kind {kind!r}; expected {KINDS}")
    if payload is None:
        payload = {k: v for k, v in entry.items() if k not in ("kind", "class")}
    return _build_spec(kind, name, dict(payload), base_dir=base_dir)


def load_config(path: str | Path) -> Registry:
    """Load a config document (plus its includes) into a fresh Registry."""
    registry = Registry()
    for name, entry, source in _iter_entries(Path(path), seen=set()):
        spec = _entry_to_spec(name, entry, base_dir=Path(source).parent)
        if spec is not None:
            registry = registry.with_entry(spec)
    _check_references(registry)
    return registry


def _iter_entries(path: Path, seen: set):
    real = path.resolve()
    if real in seen:
        raise ConfigParseError(f"include cycle through {path}")
    seen.add(real)
    if not path.exists():
        raise ConfigParseError(f"config file not found: {path}")
    doc = _parse_yaml(path.read_text(encoding="utf-8"), str(path))
    includes = doc.pop("include", [])
    if isinstance(includes, str):
        includes = [includes]
    for inc in includes:
        inc_path = Path(inc)
        if not inc_path.is_absolute():
            inc_path = path.parent / inc_path
        yield from _iter_entries(inc_path, seen)
    for name, entry in doc.items():
        yield str(name), entry, str(path)


def _check_references(registry: Registry) -> None:
    """Every cross-reference must resolve to an entry of the expected kind."""
    for (kind, name), spec in registry.entries.items():
        if kind == "dataset":
            if spec.task is not None:
                registry.resolve("task", spec.task)
            if spec.evaluator is not None:
                registry.resolve("evaluator", spec.evaluator)
            for post in spec.postprocess:
                registry.resolve("postprocess", post)
        elif kind == "evaluator":
            if spec.adapter is not None:
                registry.resolve("model", spec.adapter)


def resolve(registry: Registry, kind: str, name: str) -> Spec:
    """Module-level alias for :meth:`Registry.resolve`."""
    return registry.resolve(kind, name)


def register_prompt(registry: Registry, name: str, source: list | dict) -> Registry:
    """Parse and add a prompt template under ``name``; returns a new Registry."""
    if isinstance(source, dict):
        source = source.get("template", source)
    template = PromptTemplate.from_config(source)
    spec = PromptSpec(name=name, payload={"template": source}, template=template)
    return registry.with_entry(spec)


def dump_config(registry: Registry) -> str:
    """Serialize a Registry back to a single YAML document."""
    doc = {}
    for (kind, name), spec in sorted(registry.entries.items()):
        doc[name] = {"kind": kind, **{k: _plain(v) for k, v in spec.payload.items()
                                      if k not in ("kind", "class")}}
    return yaml.safe_dump(doc, sort_keys=True, allow_unicode=True)


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


@dataclass(frozen=True)
class RunSpec:
    """One evaluation run bound by name; all names resolve in the Registry."""

    dataset: str
    model: str
    prompt: str
    evaluator: str | None = None
    postprocess: tuple[str, ...] = ()
    inference_params: Mapping = field(default_factory=dict)
    limit: int | None = None
    output_dir: str = "runs"

    def __post_init__(self):
        if self.limit is not None and self.limit <= 0:
            raise SchemaError(f"limit must be a positive integer, got {self.limit}")

    def to_payload(self) -> dict:
        return {
            "dataset": self.dataset,
            "model": self.model,
            "prompt": self.prompt,
            "evaluator": self.evaluator,
            "postprocess": list(self.postprocess),
            "inference_params": dict(self.inference_params),
            "limit": self.limit,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_payload(cls, payload: Mapping) -> "RunSpec":
        return cls(
            dataset=payload["dataset"],
            model=payload["model"],
            prompt=payload["prompt"],
            evaluator=payload.get("evaluator"),
            postprocess=tuple(payload.get("postprocess", ())),
            inference_params=dict(payload.get("inference_params", {})),
            limit=payload.get("limit"),
            output_dir=payload.get("output_dir", "runs"),
        )


@dataclass(frozen=True)
class RunPlan:
    """A fully resolved, executable description of one run."""

    spec: RunSpec
    dataset: DatasetSpec
    task: TaskSpec | None
    prompt: PromptSpec
    model: AdapterSpec
    chain: tuple[ProcessorSpec, ...]
    evaluator: EvaluatorSpec


def validate_run(registry: Registry, run: RunSpec) -> RunPlan:
    """Resolve every reference and check metric/task compatibility."""
    dataset = registry.resolve("dataset", run.dataset)
    model = registry.resolve("model", run.model)
    prompt = registry.resolve("prompt", run.prompt)

    evaluator_name = run.evaluator or dataset.evaluator
    if not evaluator_name:
        raise ResolutionError(
            f"run on dataset {run.dataset!r} names no evaluator and the "
            "dataset declares none"
        )
    evaluator = registry.resolve("evaluator", evaluator_name)

    post_names = run.postprocess or dataset.postprocess
    chain = tuple(registry.resolve("postprocess", p).processor for p in post_names)

    task = None
    if dataset.task is not None:
        task = registry.resolve("task", dataset.task)
        extra = evaluator.metric_kinds - set(task.metric_kinds)
        if extra:
            raise SchemaError(
                f"evaluator {evaluator.name!r} produces metric kinds "
                f"{sorted(extra)} outside task {task.name!r}'s declared "
                f"metrics {sorted(task.metric_kinds)}"
            )
    if evaluator.adapter is not None:
        registry.resolve("model", evaluator.adapter)
    return RunPlan(spec=run, dataset=dataset, task=task, prompt=prompt,
                   model=model, chain=chain, evaluator=evaluator)
