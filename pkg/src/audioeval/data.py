"""Audio-centric record model and JSONL manifest loading.

A manifest is UTF-8 JSON-lines, one record per line, with fields ``id``
(string), optional ``audio`` (path or URI, relative paths resolved against
the manifest's directory), plus arbitrary scalar fields. The reserved key
``audio`` always carries an :class:`AudioRef` on the loaded record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from .audio import AudioRef
from .errors import AudioResolutionError, DatasetError, RowError


@dataclass(frozen=True)
class DataRecord:
    """One evaluation sample: named scalar fields plus a reserved audio ref."""

    id: str
    fields: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ValueError("record id must be non-empty")
        audio = self.fields.get("audio")
        if audio is not None and not isinstance(audio, AudioRef):
            raise ValueError("reserved field 'audio' must be an AudioRef")

    @property
    def audio(self) -> AudioRef | None:
        return self.fields.get("audio")

    def get(self, name: str, default=None):
        return self.fields.get(name, default)


def _record_from_row(row: dict, index: int, base_dir: Path) -> DataRecord:
    if not isinstance(row, dict):
        raise RowError(index, f"expected a JSON object, got {type(row).__name__}")
    record_id = row.get("id")
    if not isinstance(record_id, str) or not record_id:
        raise RowError(index, "missing or non-string 'id'")
    fields = dict(row)
    fields.pop("id")
    audio = fields.get("audio")
    if audio is not None:
        if not isinstance(audio, str) or not audio:
            raise RowError(index, "'audio' must be a non-empty path or URI")
        if audio.startswith(("http://", "https://")):
            location = audio
        else:
            path = Path(audio)
            if not path.is_absolute():
                path = base_dir / path
            if not path.exists():
                raise AudioResolutionError(record_id, f"audio file not found: {path}")
            location = str(path)
        fields["audio"] = AudioRef(location=location)
    return DataRecord(id=record_id, fields=fields)


def iter_dataset(manifest: str | Path, limit: int | None = None) -> Iterator[DataRecord]:
    """Yield records in manifest order, at most ``limit`` of them.

    Raises on missing manifests, malformed rows (with row index), duplicate
    ids, and audio paths that do not exist (with record id).
    """
    manifest = Path(manifest)
    if not manifest.exists():
        raise DatasetError(f"manifest not found: {manifest}")
    if limit is not None and limit <= 0:
        raise ValueError(f"limit must be positive, got {limit}")
    base_dir = manifest.parent
    seen: set[str] = set()
    yielded = 0
    with open(manifest, encoding="utf-8") as fh:
        for index, line in enumerate(fh):
            if limit is not None and yielded >= limit:
                return
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RowError(index, f"invalid JSON: {exc}") from exc
            record = _record_from_row(row, index, base_dir)
            if record.id in seen:
                raise RowError(index, f"duplicate record id {record.id!r}")
            seen.add(record.id)
            yielded += 1
            yield record


def load_dataset(manifest: str | Path, limit: int | None = None) -> list[DataRecord]:
    """Materialize :func:`iter_dataset` into a list."""
    return list(iter_dataset(manifest, limit=limit))


def write_manifest(path: str | Path, records: list[dict]) -> Path:
    """Write records as a JSONL manifest (inverse of :func:`load_dataset`)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in records:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path


def manifest_digest(manifest: str | Path) -> str:
    """Content digest of a manifest file, used in run ids."""
    import hashlib

    h = hashlib.sha256()
    with open(manifest, "rb") as fh:
        while chunk := fh.read(65536):
            h.update(chunk)
    return h.hexdigest()
