"""Score normalization onto the leaderboard scale and composite averages.

Normalization rules: error-rate metrics (WER/CER) map to ``100 - value``
without clamping, so a rate above 100 yields a negative score that still
drags the average down; 0-5 quality predictors are multiplied by 20; 1-10
judge ratings by 10; everything else passes through unchanged. Composites
are arithmetic means with not-applicable entries excluded from numerator
and denominator alike.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

from .errors import EvaluatorError, UndefinedMetricError
from .metrics import (
    ACOUSTIC_KINDS,
    CER,
    DNSMOS_P808,
    DNSMOS_P835,
    JUDGE_RATING,
    UTMOS,
    WER,
    MetricValue,
    word_error_rate,
)
from .postprocess import NormalizationProfile


@dataclass(frozen=True)
class NormalizedScore:
    """A metric mapped onto the common 0-100 leaderboard orientation.

    WER-derived scores are deliberately unclamped and may be negative.
    """

    source_kind: str
    value: float


def round_display(value: float, digits: int = 2) -> float:
    """Half-up rounding for display; stored values stay unrounded."""
    q = Decimal(1).scaleb(-digits)
    return float(Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_UP))


def normalize(metric: MetricValue) -> NormalizedScore:
    """Map one raw metric onto the leaderboard scale (never clamps)."""
    if metric.kind in (WER, CER):
        return NormalizedScore(metric.kind, 100.0 - metric.value)
    if metric.kind in ACOUSTIC_KINDS:
        return NormalizedScore(metric.kind, 20.0 * metric.value)
    if metric.kind == JUDGE_RATING:
        return NormalizedScore(metric.kind, 10.0 * metric.value)
    return NormalizedScore(metric.kind, metric.value)


def acoustic_composite(values: dict[str, float | None]) -> NormalizedScore:
    """Mean of the available 0-5 quality scores, mapped to 0-100.

    ``values`` maps utmos/dnsmos_p835/dnsmos_p808 to a score or None;
    absent entries are ignored (the leaderboard hyphen).
    """
    present = [v for v in (values.get(UTMOS), values.get(DNSMOS_P835),
                           values.get(DNSMOS_P808)) if v is not None]
    if not present:
        raise UndefinedMetricError("no acoustic scores available")
    return NormalizedScore("acoustic", 20.0 * sum(present) / len(present))


def average_scores(scores: list[NormalizedScore | float]) -> float:
    """Arithmetic mean of normalized scores (unrounded)."""
    if not scores:
        raise UndefinedMetricError("cannot average an empty score list")
    values = [s.value if isinstance(s, NormalizedScore) else float(s) for s in scores]
    return sum(values) / len(values)


# -- codec evaluation ----------------------------------------------------------


@dataclass(frozen=True)
class CodecPairSet:
    """One dataset's (original, reconstructed, reference text) triples."""

    dataset: str
    pairs: tuple  # of (AudioRef, AudioRef, str)
    profile: str | NormalizationProfile = "en"
    unit: str = "word"  # "word" for WER, "character" for CER


@dataclass(frozen=True)
class CodecDatasetResult:
    dataset: str
    asr_error: float          # mean WER/CER over successful pairs
    error_unit: str           # "word" | "character"
    sim: float                # mean SIM (negatives clamped to 0 per pair)
    acoustic: dict            # kind -> mean 0-5 value, or None when absent
    pair_count: int
    failed_pairs: int

    def normalized(self) -> tuple[float, float, float]:
        return (
            100.0 - self.asr_error,
            self.sim,
            acoustic_composite(self.acoustic).value,
        )


@dataclass(frozen=True)
class CodecReport:
    """Three-dimensional codec scores per dataset plus their composite."""

    datasets: tuple[CodecDatasetResult, ...]
    composite: float
    failures: int = 0


def codec_composite(per_dataset: list[tuple[float, float, float]]) -> float:
    """Mean over the flattened (semantic, timbre, acoustic) scores."""
    flat = [v for triple in per_dataset for v in triple]
    return average_scores(flat)


def _mean(values: list[float]) -> float:
    return sum(values) / len(values)


def evaluate_codec(pair_sets, asr, embedder, scorer) -> CodecReport:
    """Score codec reconstructions on semantics, timbre, and acoustic quality.

    ``pair_sets`` is one :class:`CodecPairSet` or a list of them. The three
    adapters are clients exposing ``transcribe``, ``embed`` and
    ``score_quality``. Per-pair adapter failures are excluded from the means
    and surfaced in the failure counts.
    """
    from .metrics import quality_scores, signed_cosine

    if isinstance(pair_sets, CodecPairSet):
        pair_sets = [pair_sets]
    results = []
    total_failures = 0
    for pair_set in pair_sets:
        errors: list[float] = []
        sims: list[float] = []
        acoustic: dict[str, list[float]] = {k: [] for k in ACOUSTIC_KINDS}
        failed = 0
        for original, reconstructed, reference in pair_set.pairs:
            try:
                orig_path = str(original.path) if hasattr(original, "path") else str(original)
                recon_path = (str(reconstructed.path) if hasattr(reconstructed, "path")
                              else str(reconstructed))
                transcript = asr.transcribe(recon_path)
                semantic = word_error_rate(reference, transcript,
                                           profile=pair_set.profile,
                                           unit=pair_set.unit).value
                sim = max(0.0, signed_cosine(embedder.embed(orig_path),
                                             embedder.embed(recon_path)))
                quality = quality_scores(scorer, recon_path)
            except Exception:
                failed += 1
                continue
            errors.append(semantic)
            sims.append(sim)
            for mv in quality:
                acoustic[mv.kind].append(mv.value)
        if not errors:
            raise EvaluatorError(
                f"codec dataset {pair_set.dataset!r}: every pair failed"
            )
        total_failures += failed
        results.append(CodecDatasetResult(
            dataset=pair_set.dataset,
            asr_error=_mean(errors),
            error_unit=pair_set.unit,
            sim=_mean(sims),
            acoustic={k: (_mean(v) if v else None) for k, v in acoustic.items()},
            pair_count=len(errors),
            failed_pairs=failed,
        ))
    composite = codec_composite([r.normalized() for r in results])
    return CodecReport(datasets=tuple(results), composite=composite,
                       failures=total_failures)


# -- leaderboard ---------------------------------------------------------------


@dataclass(frozen=True)
class LeaderboardRow:
    model: str
    metrics: dict = field(default_factory=dict)      # benchmark -> MetricValue | None
    normalized: dict = field(default_factory=dict)   # benchmark -> float | None
    composite: float = 0.0


@dataclass(frozen=True)
class Leaderboard:
    benchmarks: tuple[str, ...]
    rows: tuple[LeaderboardRow, ...]


def leaderboard_from_cells(cells: dict[str, dict[str, MetricValue | None]]) -> Leaderboard:
    """Build a leaderboard from per-model benchmark cells.

    Missing benchmarks count as not-applicable: shown as a hyphen and
    excluded from that row's mean. Rows sort by composite descending with
    ties broken by model name ascending.
    """
    benchmarks: list[str] = []
    for row_cells in cells.values():
        for bench in row_cells:
            if bench not in benchmarks:
                benchmarks.append(bench)
    rows = []
    for model, row_cells in cells.items():
        normalized: dict[str, float | None] = {}
        metrics: dict[str, MetricValue | None] = {}
        for bench in benchmarks:
            metric = row_cells.get(bench)
            metrics[bench] = metric
            normalized[bench] = None if metric is None else normalize(metric).value
        available = [v for v in normalized.values() if v is not None]
        if not available:
            raise UndefinedMetricError(f"model {model!r} has no scores")
        rows.append(LeaderboardRow(
            model=model,
            metrics=metrics,
            normalized=normalized,
            composite=average_scores(available),
        ))
    rows.sort(key=lambda r: (-r.composite, r.model))
    return Leaderboard(benchmarks=tuple(benchmarks), rows=tuple(rows))


def build_leaderboard(reports) -> Leaderboard:
    """Aggregate completed run reports into one leaderboard.

    Each report contributes its summary metrics as benchmark cells named
    ``<dataset>.<metric kind>``; a model missing a benchmark gets a hyphen
    there and its composite averages the rest.
    """
    cells: dict[str, dict[str, MetricValue | None]] = {}
    for report in reports:
        model = report["model"] if isinstance(report, dict) else report.model
        summary = report["metrics"] if isinstance(report, dict) else report.summary_metrics
        dataset = report["dataset"] if isinstance(report, dict) else report.dataset
        row = cells.setdefault(model, {})
        for kind, value in summary.items():
            metric = value if isinstance(value, MetricValue) else MetricValue(kind, value)
            row[f"{dataset}.{kind}"] = metric
    return leaderboard_from_cells(cells)


def render_text(board: Leaderboard) -> str:
    """Fixed-width UTF-8 table with display rounding; '-' marks gaps."""
    headers = ["Model", *board.benchmarks, "Avg. Score"]
    table = [headers]
    for row in board.rows:
        rendered = [row.model]
        for bench in board.benchmarks:
            v = row.normalized.get(bench)
            rendered.append("-" if v is None else f"{round_display(v):.2f}")
        rendered.append(f"{round_display(row.composite):.2f}")
        table.append(rendered)
    widths = [max(len(r[i]) for r in table) for i in range(len(headers))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * widths[j] for j in range(len(headers))))
    return "\n".join(lines) + "\n"


def render_json(board: Leaderboard) -> dict:
    """Machine-readable leaderboard with unrounded values."""
    return {
        "benchmarks": list(board.benchmarks),
        "rows": [
            {
                "model": row.model,
                "normalized": {k: v for k, v in row.normalized.items()},
                "raw": {
                    k: None if m is None else {"kind": m.kind, "value": m.value, "unit": m.unit}
                    for k, m in row.metrics.items()
                },
                "composite": row.composite,
            }
            for row in board.rows
        ],
    }
