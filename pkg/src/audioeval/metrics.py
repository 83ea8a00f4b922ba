"""Rule-based metric engines plus drivers for model-based evaluators.

All string metrics normalize their inputs through a declared profile first.
WER/CER may exceed 100 when the hypothesis piles up more errors than the
reference has tokens; that is intentional and preserved downstream.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .errors import EvaluatorError, InputError, UndefinedMetricError
from .postprocess import NormalizationProfile, normalize_text

WER = "wer"
CER = "cer"
BLEU = "bleu"
ROUGE_L = "rouge_l"
ACC = "acc"
EXIST_MATCH = "exist_match"
SIM = "sim"
UTMOS = "utmos"
DNSMOS_P835 = "dnsmos_p835"
DNSMOS_P808 = "dnsmos_p808"
JUDGE_RATING = "judge"

ACOUSTIC_KINDS = (UTMOS, DNSMOS_P835, DNSMOS_P808)

# unit per kind: percent scales 0-100 (WER/CER unbounded above),
# raw_0_5 for objective quality predictors, raw_1_10 for judge ratings.
UNITS = {
    WER: "percent",
    CER: "percent",
    BLEU: "percent",
    ROUGE_L: "percent",
    ACC: "percent",
    EXIST_MATCH: "percent",
    SIM: "percent",
    UTMOS: "raw_0_5",
    DNSMOS_P835: "raw_0_5",
    DNSMOS_P808: "raw_0_5",
    JUDGE_RATING: "raw_1_10",
}


@dataclass(frozen=True)
class MetricValue:
    """A raw metric with its kind tag and unit."""

    kind: str
    value: float
    unit: str = ""

    def __post_init__(self):
        if self.kind not in UNITS:
            raise InputError(f"unknown metric kind {self.kind!r}")
        if not self.unit:
            object.__setattr__(self, "unit", UNITS[self.kind])
        v = self.value
        if self.kind in (WER, CER):
            if v < 0:
                raise InputError(f"{self.kind} must be >= 0, got {v}")
        elif self.kind in (BLEU, ROUGE_L, ACC, EXIST_MATCH, SIM):
            if not 0.0 <= v <= 100.0:
                raise InputError(f"{self.kind} must be in [0, 100], got {v}")
        elif self.kind in ACOUSTIC_KINDS:
            if not 0.0 <= v <= 5.0:
                raise InputError(f"{self.kind} must be in [0, 5], got {v}")
        elif self.kind == JUDGE_RATING:
            if not 1.0 <= v <= 10.0:
                raise InputError(f"{self.kind} must be in [1, 10], got {v}")


def edit_distance(ref: list[str], hyp: list[str]) -> int:
    """Levenshtein distance with unit substitution/insertion/deletion costs."""
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(
                prev[j] + 1,          # deletion
                cur[j - 1] + 1,       # insertion
                prev[j - 1] + (r != h),  # substitution
            )
        prev = cur
    return prev[-1]


def _tokenize(text: str, unit: str) -> list[str]:
    if unit == "word":
        return text.split()
    if unit == "character":
        return list(text)
    raise InputError(f"unknown tokenization unit {unit!r}")


def word_error_rate(
    ref: str,
    hyp: str,
    profile: str | NormalizationProfile = "en",
    unit: str = "word",
) -> MetricValue:
    """WER (word unit) or CER (character unit) as a percentage of the reference.

    Raises :class:`UndefinedMetricError` when the reference is empty after
    normalization.
    """
    ref_norm = normalize_text(ref, profile)
    hyp_norm = normalize_text(hyp, profile)
    ref_tokens = _tokenize(ref_norm, unit)
    hyp_tokens = _tokenize(hyp_norm, unit)
    if not ref_tokens:
        raise UndefinedMetricError("reference is empty after normalization")
    distance = edit_distance(ref_tokens, hyp_tokens)
    kind = WER if unit == "word" else CER
    return MetricValue(kind, 100.0 * distance / len(ref_tokens))


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(refs: list[str], hyps: list[str], tokenizer: str = "whitespace") -> MetricValue:
    """Corpus-level BLEU-4 on the 0-100 scale.

    Geometric mean of clipped n-gram precisions (n=1..4), brevity penalty
    exp(1 - r/c) when c <= r, add-one smoothing on zero precisions for n >= 2.
    Character tokenization is the convention for Chinese targets.
    """
    if len(refs) != len(hyps):
        raise InputError(f"refs/hyps length mismatch: {len(refs)} vs {len(hyps)}")
    if not refs:
        raise InputError("empty corpus")
    unit = "word" if tokenizer == "whitespace" else "character"

    matched = [0] * 4
    total = [0] * 4
    ref_len = 0
    hyp_len = 0
    for ref, hyp in zip(refs, hyps):
        ref_tokens = _tokenize(ref, unit)
        hyp_tokens = _tokenize(hyp, unit)
        ref_len += len(ref_tokens)
        hyp_len += len(hyp_tokens)
        for n in range(1, 5):
            hyp_ngrams = _ngram_counts(hyp_tokens, n)
            if not hyp_ngrams:
                continue
            ref_ngrams = _ngram_counts(ref_tokens, n)
            total[n - 1] += sum(hyp_ngrams.values())
            matched[n - 1] += sum(
                min(count, ref_ngrams[gram]) for gram, count in hyp_ngrams.items()
            )

    if hyp_len == 0 or total[0] == 0 or matched[0] == 0:
        return MetricValue(BLEU, 0.0)

    log_precisions = []
    for n in range(1, 5):
        m, t = matched[n - 1], total[n - 1]
        if n >= 2 and m == 0:
            m, t = m + 1, t + 1
        if t == 0 or m == 0:
            return MetricValue(BLEU, 0.0)
        log_precisions.append(math.log(m / t))

    brevity = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    score = brevity * math.exp(sum(log_precisions) / 4.0)
    return MetricValue(BLEU, 100.0 * score)


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(ref: str, hyp: str, tokenizer: str = "whitespace") -> MetricValue:
    """ROUGE-L F-measure from the longest common subsequence, on 0-100."""
    unit = "word" if tokenizer == "whitespace" else "character"
    ref_tokens = _tokenize(ref, unit)
    hyp_tokens = _tokenize(hyp, unit)
    if not ref_tokens:
        raise UndefinedMetricError("reference is empty")
    lcs = _lcs_length(ref_tokens, hyp_tokens)
    precision = lcs / len(hyp_tokens) if hyp_tokens else 0.0
    recall = lcs / len(ref_tokens)
    if precision + recall == 0:
        return MetricValue(ROUGE_L, 0.0)
    f = 2 * precision * recall / (precision + recall)
    return MetricValue(ROUGE_L, 100.0 * f)


def exist_match(
    golds: list[str],
    transcript: str,
    profile: str | NormalizationProfile = "en",
) -> bool:
    """True iff any normalized acceptable answer is a substring of the transcript."""
    if not golds:
        raise InputError("golds must be non-empty")
    transcript_norm = normalize_text(transcript, profile)
    return any(normalize_text(gold, profile) in transcript_norm for gold in golds)


def accuracy(pairs: list[tuple[str | None, str]]) -> MetricValue:
    """Share of equal (predicted, gold) pairs; None predictions count as wrong."""
    if not pairs:
        raise UndefinedMetricError("no pairs")
    correct = sum(1 for pred, gold in pairs if pred is not None and pred == gold)
    return MetricValue(ACC, 100.0 * correct / len(pairs))


def signed_cosine(u: list[float], v: list[float]) -> float:
    """Cosine similarity of two embeddings scaled to [-100, 100].

    Self-similarity is exactly 100 (not just up to rounding), which the codec
    fixed-point contract relies on.
    """
    if len(u) != len(v):
        raise InputError(f"dimension mismatch: {len(u)} vs {len(v)}")
    if not u:
        raise InputError("empty vectors")
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    if nu == 0.0 or nv == 0.0:
        raise UndefinedMetricError("zero vector has no direction")
    if list(u) == list(v):
        return 100.0
    dot = sum(a * b for a, b in zip(u, v))
    return max(-100.0, min(100.0, 100.0 * dot / (nu * nv)))


def cosine_similarity(u: list[float], v: list[float]) -> MetricValue:
    """Speaker/timbre similarity metric: signed cosine with negatives mapped
    to 0 for reporting (SIM columns are 0-100)."""
    return MetricValue(SIM, max(0.0, signed_cosine(u, v)))


def judge_score(judge, question: str, answer: str, rubric: str = "") -> MetricValue:
    """Obtain a 1-10 rating from a judge adapter; retry once on bad replies."""
    last = None
    for _ in range(2):
        try:
            rating = judge.judge(question, answer, rubric)
        except EvaluatorError:
            raise
        except Exception as exc:
            raise EvaluatorError(f"judge adapter failed: {exc}") from exc
        last = rating
        if isinstance(rating, int) and not isinstance(rating, bool) and 1 <= rating <= 10:
            return MetricValue(JUDGE_RATING, float(rating))
    raise EvaluatorError(f"judge returned invalid rating after retry: {last!r}")


_QUALITY_FIELDS = {
    "utmos": UTMOS,
    "dnsmos_p835": DNSMOS_P835,
    "dnsmos_p808": DNSMOS_P808,
}


def quality_scores(scorer, audio) -> list[MetricValue]:
    """Fetch objective quality scores for an audio file from a scorer adapter.

    The adapter may return any subset of utmos / dnsmos_p835 / dnsmos_p808;
    absent scores are simply not in the result (recorded as not-applicable by
    callers). Out-of-range values are evaluator errors.
    """
    try:
        raw = scorer.score_quality(audio)
    except EvaluatorError:
        raise
    except Exception as exc:
        raise EvaluatorError(f"quality scorer failed: {exc}") from exc
    if not isinstance(raw, dict):
        raise EvaluatorError(f"quality scorer returned non-mapping: {raw!r}")
    values = []
    for field, kind in _QUALITY_FIELDS.items():
        if field not in raw or raw[field] is None:
            continue
        v = raw[field]
        if not isinstance(v, (int, float)) or not 0.0 <= float(v) <= 5.0:
            raise EvaluatorError(f"{field} out of range [0, 5]: {v!r}")
        values.append(MetricValue(kind, float(v)))
    if not values:
        raise EvaluatorError("quality scorer returned no known scores")
    return values
