import json
import sys
from pathlib import Path

import pytest

from audioeval.config import AdapterSpec
from audioeval.mock_adapter import read_text_wav, write_text_wav

FIXTURES = Path(__file__).parent / "fixtures"


def mock_argv(mode: str = "echo", script: str | None = None, **flags) -> tuple[str, ...]:
    argv = [sys.executable, "-m", "audioeval.mock_adapter", "--mode", mode]
    if script:
        argv += ["--script", script]
    for flag, value in flags.items():
        argv += [f"--{flag.replace('_', '-')}", str(value)]
    return tuple(argv)


def adapter_spec(command, name="test", *, ready_timeout=15.0, request_timeout=15.0,
                 max_restarts=1, **kwargs) -> AdapterSpec:
    return AdapterSpec(name=name, payload={}, adapter="local", command=tuple(command),
                       ready_timeout=ready_timeout, request_timeout=request_timeout,
                       max_restarts=max_restarts, **kwargs)


def write_script(path: Path, directives: list, **top) -> str:
    path.write_text(json.dumps({"directives": directives, **top}), encoding="utf-8")
    return str(path)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


# In-process adapter fakes for pipeline units that accept duck-typed clients.

class FakeTTS:
    """Writes mock WAVs with the text embedded in the frames."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.calls = 0

    def synthesize(self, text: str) -> str:
        self.calls += 1
        path = self.out_dir / f"tts-{self.calls}.wav"
        return write_text_wav(path, text)


class FakeASR:
    """Faithful by default; per-text overrides simulate corruption."""

    def __init__(self, replace: dict[str, str] | None = None,
                 responses: list[str] | None = None):
        self.replace = replace or {}
        self.responses = list(responses) if responses is not None else None
        self.calls = 0

    def transcribe(self, audio_path: str) -> str:
        self.calls += 1
        if self.responses is not None:
            return self.responses.pop(0)
        text = read_text_wav(str(audio_path))
        return self.replace.get(text, text)


class FakeEmbedder:
    """Deterministic function of file content; optional per-call overrides."""

    def __init__(self, vectors: list[list[float]] | None = None):
        self.vectors = list(vectors) if vectors is not None else None

    def embed(self, audio_path: str) -> list[float]:
        if self.vectors is not None:
            return self.vectors.pop(0)
        import hashlib

        digest = hashlib.sha256(Path(audio_path).read_bytes()).digest()
        return [b / 255.0 for b in digest[:8]]


class FakeScorer:
    def __init__(self, scores: dict | None = None):
        self.scores = scores if scores is not None else {
            "utmos": 4.0, "dnsmos_p835": 3.5, "dnsmos_p808": 3.5}

    def score_quality(self, audio_path: str) -> dict:
        return dict(self.scores)


class FakeJudge:
    def __init__(self, ratings: list):
        self.ratings = list(ratings)

    def judge(self, question, answer, rubric=""):
        return self.ratings.pop(0)
