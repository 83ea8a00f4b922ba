"""Speech benchmark construction: synthesize, transcribe, keep only exact
round-trips.

Each input record carries an instruction string. The pipeline synthesizes it
to audio, transcribes the audio back, and retains the sample only when the
round-trip character error rate is exactly zero, eliminating pronunciation
errors introduced during synthesis. Adapter failures reject the record with
a reason instead of aborting the run.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .data import DataRecord, write_manifest
from .errors import InputError
from .metrics import word_error_rate
from .postprocess import NormalizationProfile


@dataclass(frozen=True)
class RejectedRecord:
    id: str
    round_trip_cer: float | None
    reason: str


@dataclass(frozen=True)
class BenchGenReport:
    total_in: int
    retained: int
    rejected: tuple[RejectedRecord, ...]

    def __post_init__(self):
        if self.retained + len(self.rejected) != self.total_in:
            raise ValueError(
                f"count mismatch: retained {self.retained} + rejected "
                f"{len(self.rejected)} != total {self.total_in}"
            )


def build_speech_benchmark(
    text_records,
    tts,
    asr,
    cer_profile: str | NormalizationProfile = "zh",
    out_dir: str | Path = "benchmark",
    text_field: str = "instruction",
    manifest_name: str = "manifest.jsonl",
) -> tuple[Path, BenchGenReport]:
    """Turn text instructions into a speech dataset with exact-match QC.

    ``tts`` and ``asr`` are adapter clients exposing ``synthesize`` and
    ``transcribe``. Returns the manifest path of retained records and a
    report whose counts always reconcile (retained + rejected = total).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    retained_rows: list[dict] = []
    rejected: list[RejectedRecord] = []
    total = 0
    for record in text_records:
        total += 1
        if isinstance(record, DataRecord):
            record_id, fields = record.id, dict(record.fields)
        else:
            fields = dict(record)
            record_id = str(fields.pop("id"))
        instruction = fields.get(text_field)
        if not isinstance(instruction, str) or not instruction:
            rejected.append(RejectedRecord(record_id, None,
                                           f"missing text field {text_field!r}"))
            continue
        try:
            audio_path = tts.synthesize(instruction)
            transcript = asr.transcribe(audio_path)
        except Exception as exc:
            rejected.append(RejectedRecord(record_id, None, f"adapter failure: {exc}"))
            continue
        cer = word_error_rate(instruction, transcript,
                              profile=cer_profile, unit="character").value
        if cer == 0.0:
            row = {"id": record_id, "audio": str(audio_path)}
            row.update({k: v for k, v in fields.items() if k != "audio"})
            retained_rows.append(row)
        else:
            rejected.append(RejectedRecord(record_id, cer,
                                           f"round-trip CER {cer:.2f} != 0"))
    manifest = write_manifest(out_dir / manifest_name, retained_rows)
    report = BenchGenReport(total_in=total, retained=len(retained_rows),
                            rejected=tuple(rejected))
    return manifest, report


def verify_benchmark(manifest: str | Path, asr, cer_profile="zh",
                     text_field: str = "instruction") -> bool:
    """Re-check that every retained record still round-trips at CER 0."""
    from .data import iter_dataset

    for record in iter_dataset(manifest):
        instruction = record.get(text_field)
        if not instruction:
            raise InputError(f"record {record.id!r} has no {text_field!r}")
        transcript = asr.transcribe(str(record.audio.path))
        cer = word_error_rate(instruction, transcript,
                              profile=cer_profile, unit="character").value
        if cer != 0.0:
            return False
    return True
