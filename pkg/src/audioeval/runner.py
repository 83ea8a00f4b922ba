"""Run execution: drive the pipeline, persist per-sample rows, resume.

Per-sample results are appended to ``samples.jsonl`` as each sample finishes
(single writer, flushed per line), so a killed run leaves a prefix of valid
lines and ``resume`` re-executes only what is missing. The summary is always
recomputed from the rows, never from in-memory state.
"""

from __future__ import annotations

import hashlib
import json
import logging
import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .aggregate import average_scores, normalize
from .audio import resample, resolve_audio
from .config import Registry, RunPlan, RunSpec, validate_run
from .data import DataRecord, iter_dataset, manifest_digest
from .errors import AudioEvalError, StageError
from .metrics import MetricValue, bleu, edit_distance, exist_match, judge_score, \
    quality_scores, rouge_l
from .postprocess import apply_chain, normalize_text
from .runtime import AdapterClient, connect
from .templates import MessageList, render

logger = logging.getLogger(__name__)


@dataclass
class SampleRow:
    """Terminal outcome for one dataset record."""

    id: str
    index: int
    prompt_digest: str = ""
    raw: str | None = None
    audio_out: str | None = None
    processed: str | None = None
    metrics: dict = field(default_factory=dict)
    aux: dict = field(default_factory=dict)
    error: str | None = None
    latency: float = 0.0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "SampleRow":
        obj = json.loads(line)
        row = cls(id=obj["id"], index=obj["index"])
        for key in ("prompt_digest", "raw", "audio_out", "processed", "metrics",
                    "aux", "error", "latency"):
            if key in obj:
                setattr(row, key, obj[key])
        return row


@dataclass
class RunResult:
    run_id: str
    run_dir: Path
    summary: dict


def _digest(*parts: str) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def make_run_id(spec: RunSpec, manifest_path: str | Path, started: str) -> str:
    return _digest(json.dumps(spec.to_payload(), sort_keys=True),
                   manifest_digest(manifest_path), started)[:16]


def _prompt_digest(prompt: MessageList) -> str:
    return _digest(json.dumps(prompt.to_wire(), sort_keys=True, ensure_ascii=False))[:16]


def _prepare_record(record: DataRecord, plan: RunPlan, cache_dir: Path) -> DataRecord:
    """Resolve and rate-normalize the audio field for the target model."""
    ref = record.audio
    if ref is None:
        return record
    resolved = resolve_audio(ref, cache_dir)
    target = plan.model.expected_sample_rate
    if target and resolved.sample_rate != target:
        resolved = resample(resolved, target, out_dir=cache_dir)
    fields = dict(record.fields)
    fields["audio"] = resolved
    return DataRecord(id=record.id, fields=fields)


class _Evaluator:
    """Per-sample metric computation for one run plan."""

    def __init__(self, plan: RunPlan, registry: Registry, log_dir: Path):
        self.plan = plan
        self.spec = plan.evaluator
        self.profile = self.spec.profile
        self._aux_client: AdapterClient | None = None
        self._aux_lock = threading.Lock()
        if self.spec.adapter is not None:
            adapter_spec = registry.resolve("model", self.spec.adapter)
            self._aux_client = connect(adapter_spec, log_dir=log_dir)

    def close(self):
        if self._aux_client is not None:
            self._aux_client.close()

    def _reference(self, record: DataRecord) -> str:
        value = record.get(self.spec.ref_field)
        if value is None:
            raise StageError(-1, f"record {record.id!r} has no reference field "
                                 f"{self.spec.ref_field!r}")
        return value

    def evaluate(self, record: DataRecord, row: SampleRow) -> None:
        kind = self.spec.eval_kind
        if kind in ("wer", "cer"):
            unit = "word" if kind == "wer" else "character"
            ref = normalize_text(str(self._reference(record)), self.profile)
            hyp = normalize_text(row.processed or "", self.profile)
            ref_tokens = ref.split() if unit == "word" else list(ref)
            hyp_tokens = hyp.split() if unit == "word" else list(hyp)
            distance = edit_distance(ref_tokens, hyp_tokens)
            row.aux = {"distance": distance, "ref_len": len(ref_tokens)}
            if ref_tokens:
                row.metrics = {kind: 100.0 * distance / len(ref_tokens)}
        elif kind == "bleu":
            row.aux = {"ref": str(self._reference(record)), "hyp": row.processed or ""}
        elif kind == "rouge_l":
            value = rouge_l(str(self._reference(record)), row.processed or "",
                            tokenizer=self.spec.tokenizer).value
            row.metrics = {"rouge_l": value}
        elif kind == "acc":
            gold = str(self._reference(record))
            correct = row.processed is not None and row.processed == gold
            row.metrics = {"acc": 100.0 if correct else 0.0}
        elif kind == "exist_match":
            golds = self._reference(record)
            golds = [str(g) for g in golds] if isinstance(golds, list) else [str(golds)]
            matched = row.processed is not None and exist_match(
                golds, row.processed, profile=self.profile)
            row.metrics = {"exist_match": 100.0 if matched else 0.0}
        elif kind == "judge":
            question = str(record.get(self.spec.question_field, ""))
            with self._aux_lock:
                rating = judge_score(self._aux_client, question,
                                     row.processed or "", self.spec.rubric)
            row.metrics = {"judge": rating.value}
        elif kind == "quality":
            if not row.audio_out:
                raise StageError(-1, "quality evaluator needs an audio response")
            with self._aux_lock:
                values = quality_scores(self._aux_client, row.audio_out)
            row.metrics = {mv.kind: mv.value for mv in values}
        else:  # pragma: no cover - rejected at config time
            raise StageError(-1, f"unknown evaluator kind {kind!r}")


def summarize(rows: list[SampleRow], plan: RunPlan) -> dict:
    """Aggregate per-sample rows; deterministic for any row arrival order."""
    rows = sorted(rows, key=lambda r: r.index)
    kind = plan.evaluator.eval_kind
    metrics: dict[str, float] = {}
    errors = sum(1 for r in rows if r.error)
    if kind in ("wer", "cer"):
        total_distance = sum(r.aux.get("distance", 0) for r in rows if not r.error)
        total_ref = sum(r.aux.get("ref_len", 0) for r in rows if not r.error)
        if total_ref:
            metrics[kind] = 100.0 * total_distance / total_ref
    elif kind == "bleu":
        pairs = [(r.aux["ref"], r.aux["hyp"]) for r in rows
                 if not r.error and "ref" in r.aux]
        if pairs:
            metrics["bleu"] = bleu([p[0] for p in pairs], [p[1] for p in pairs],
                                   tokenizer=plan.evaluator.tokenizer).value
    elif kind in ("rouge_l", "judge"):
        values = [r.metrics[kind] for r in rows if kind in r.metrics]
        if values:
            metrics[kind] = sum(values) / len(values)
    elif kind in ("acc", "exist_match"):
        # extraction failures already scored 0; infrastructure errors excluded
        values = [r.metrics[kind] for r in rows if kind in r.metrics]
        if values:
            metrics[kind] = sum(values) / len(values)
    elif kind == "quality":
        for quality_kind in ("utmos", "dnsmos_p835", "dnsmos_p808"):
            values = [r.metrics[quality_kind] for r in rows
                      if quality_kind in r.metrics]
            if values:
                metrics[quality_kind] = sum(values) / len(values)

    normalized = {k: normalize(MetricValue(k, v)).value
                  for k, v in sorted(metrics.items())}
    summary = {
        "dataset": plan.spec.dataset,
        "model": plan.spec.model,
        "prompt": plan.spec.prompt,
        "evaluator": plan.evaluator.name,
        "samples": len(rows),
        "errors": errors,
        "metrics": metrics,
        "normalized": normalized,
        "composite": average_scores(list(normalized.values())) if normalized else None,
    }
    return summary


def _load_existing_rows(samples_path: Path) -> tuple[dict[str, SampleRow], int]:
    """Read prior rows; invalid lines are dropped (their samples re-run)."""
    rows: dict[str, SampleRow] = {}
    corrupt = 0
    if not samples_path.exists():
        return rows, corrupt
    with open(samples_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                row = SampleRow.from_json(line)
            except (json.JSONDecodeError, KeyError):
                corrupt += 1
                continue
            rows[row.id] = row
    return rows, corrupt


class _ClientPool:
    """N adapter clients checked in and out by worker threads."""

    def __init__(self, plan: RunPlan, size: int, log_dir: Path):
        self._queue: queue.Queue[AdapterClient] = queue.Queue()
        self._clients = [connect(plan.model, log_dir=log_dir) for _ in range(size)]
        for client in self._clients:
            self._queue.put(client)

    def run(self, fn):
        client = self._queue.get()
        try:
            return fn(client)
        finally:
            self._queue.put(client)

    def close(self):
        for client in self._clients:
            client.close()


def execute_run(
    registry: Registry,
    spec: RunSpec,
    workers: int = 1,
    resume_run_id: str | None = None,
) -> RunResult:
    """Execute (or resume) one validated run end to end."""
    plan = validate_run(registry, spec)
    output_dir = Path(spec.output_dir)

    manifest_path = Path(plan.dataset.path)
    if resume_run_id is not None:
        run_id = resume_run_id
        run_dir = output_dir / run_id
        if not (run_dir / "samples.jsonl").exists() and not (run_dir / "run.json").exists():
            raise AudioEvalError(f"no prior run {run_id!r} under {output_dir}")
    else:
        started = datetime.now(timezone.utc).isoformat()
        run_id = make_run_id(spec, manifest_path, started)
        run_dir = output_dir / run_id

    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        cache_dir = run_dir / "cache"
        cache_dir.mkdir(exist_ok=True)
        log_dir = run_dir / "logs"
    except OSError as exc:
        raise OSError(f"cannot prepare output dir {run_dir}: {exc}") from exc

    (run_dir / "run.json").write_text(json.dumps({
        "run_id": run_id,
        "spec": spec.to_payload(),
        "manifest_digest": manifest_digest(manifest_path),
    }, indent=2), encoding="utf-8")

    records = list(iter_dataset(manifest_path, limit=spec.limit))

    samples_path = run_dir / "samples.jsonl"
    existing, corrupt = _load_existing_rows(samples_path)
    if corrupt:
        logger.warning("%d corrupt result line(s) dropped; re-executing", corrupt)
    if existing or corrupt:
        # compact the file so it only holds valid rows before appending
        tmp = samples_path.with_suffix(".jsonl.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for row in sorted(existing.values(), key=lambda r: r.index):
                fh.write(row.to_json() + "\n")
        tmp.replace(samples_path)

    pending = [(i, rec) for i, rec in enumerate(records) if rec.id not in existing]

    evaluator = _Evaluator(plan, registry, log_dir)
    pool = _ClientPool(plan, max(1, workers), log_dir) if pending else None
    rows: list[SampleRow] = list(existing.values())

    def process(index: int, record: DataRecord) -> SampleRow:
        row = SampleRow(id=record.id, index=index)
        try:
            prepared = _prepare_record(record, plan, cache_dir)
            prompt = render(plan.prompt.template, prepared)
            row.prompt_digest = _prompt_digest(prompt)
            start = time.monotonic()
            result = pool.run(lambda c: c.inference(prompt, dict(spec.inference_params)))
            row.latency = time.monotonic() - start
            row.raw = result.text
            row.audio_out = result.audio
            try:
                row.processed = (apply_chain(list(plan.chain), result.text)
                                 if result.text is not None else None)
            except StageError as exc:
                # parse failures score as wrong answers, not missing samples
                row.error = f"StageError: {exc}"
                row.processed = None
            evaluator.evaluate(record, row)
        except AudioEvalError as exc:
            row.error = row.error or f"{type(exc).__name__}: {exc}"
        except Exception as exc:  # defensive: record, never abort the run
            row.error = row.error or f"{type(exc).__name__}: {exc}"
        return row

    try:
        if pending:
            with open(samples_path, "a", encoding="utf-8") as sink:
                with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
                    futures = [executor.submit(process, i, rec) for i, rec in pending]
                    for future in as_completed(futures):
                        row = future.result()
                        rows.append(row)
                        sink.write(row.to_json() + "\n")
                        sink.flush()
    finally:
        if pool is not None:
            pool.close()
        evaluator.close()

    summary = {"run_id": run_id, **summarize(rows, plan)}
    (run_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, ensure_ascii=False), encoding="utf-8")
    return RunResult(run_id=run_id, run_dir=run_dir, summary=summary)


def load_summary(output_dir: str | Path, run_id: str) -> dict:
    path = Path(output_dir) / run_id / "summary.json"
    if not path.exists():
        raise AudioEvalError(f"run {run_id!r} is incomplete: no summary at {path}")
    return json.loads(path.read_text(encoding="utf-8"))
