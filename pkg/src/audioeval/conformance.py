"""Protocol conformance suite for adapters.

This suite is the normative definition of the stdio wire protocol: an
adapter that passes it can serve as a model, ASR, TTS, embedder, quality
scorer, or judge. It drives the adapter through the same Worker machinery
the harness uses in production and asserts the documented error taxonomy.

Adapters under test must accept ``--mode echo`` and
``--mode scripted --script <file>`` on their command line, with script
semantics as documented in the README (directives consumed strictly in
order; optional ``handshake`` field of ``garbage`` or ``none``).
"""

from __future__ import annotations

import json
import tempfile
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .config import AdapterSpec
from .errors import (
    AdapterError,
    InferenceTimeoutError,
    ProtocolError,
    StartupTimeoutError,
    WorkerFailureError,
)
from .runtime import LocalClient, spawn_worker

# fixture quality map exercised through score_quality
QUALITY_FIXTURE = {"utmos": 4.29, "dnsmos_p835": 3.44, "dnsmos_p808": 4.26}


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


ArgvBuilder = Callable[[str, str | None], list[str]]


def _spec(argv: list[str], *, ready_timeout=15.0, request_timeout=15.0,
          max_restarts=1) -> AdapterSpec:
    return AdapterSpec(name="conformance", payload={}, adapter="local",
                       command=tuple(argv), ready_timeout=ready_timeout,
                       request_timeout=request_timeout, max_restarts=max_restarts)


def _write_script(directory: Path, name: str, script: dict) -> str:
    path = directory / name
    path.write_text(json.dumps(script), encoding="utf-8")
    return str(path)


def _prompt(text: str) -> list[dict]:
    return [{"role": "user", "contents": [{"type": "text", "value": text}]}]


def _check(name):
    def deco(fn):
        fn.check_name = name
        return fn
    return deco


@_check("handshake_ready")
def _check_handshake(make_argv: ArgvBuilder, tmp: Path) -> str:
    worker = spawn_worker(_spec(make_argv("echo", None)))
    try:
        assert worker.state == "ready", f"state {worker.state!r}"
        assert worker.restart_count == 0
    finally:
        worker.shutdown()
    return "ready handshake within timeout"


@_check("echo_inference")
def _check_echo(make_argv: ArgvBuilder, tmp: Path) -> str:
    worker = spawn_worker(_spec(make_argv("echo", None)))
    try:
        client = LocalClient(worker)
        result = client.request("inference", {"prompt": _prompt("conformance ping")})
        assert result.get("text") == "conformance ping", f"got {result!r}"
        # echo must be stateless across requests
        again = client.request("inference", {"prompt": _prompt("conformance ping")})
        assert again == result, "echo is not deterministic across requests"
    finally:
        worker.shutdown()
    return "echo returns the concatenated text segments"


@_check("request_response_bijection")
def _check_bijection(make_argv: ArgvBuilder, tmp: Path) -> str:
    worker = spawn_worker(_spec(make_argv("echo", None)))
    try:
        for i in range(5):
            result = worker.request("inference", {"prompt": _prompt(f"msg-{i}")})
            assert result.get("text") == f"msg-{i}", f"response mismatch at {i}"
        assert worker.requests_issued == 5 and worker.requests_resolved == 5
    finally:
        worker.shutdown()
    return "every request id received exactly one correlated outcome"


@_check("all_methods")
def _check_methods(make_argv: ArgvBuilder, tmp: Path) -> str:
    script = {"directives": [
        {"respond": {"text": "alpha"}},
        {"respond": {"text": "beta"}},
        {"embed": [0.25, 0.5, 0.25]},
        {"quality": QUALITY_FIXTURE},
        {"respond": {"audio_text": "hello wave"}},
        {"judge": 7},
    ]}
    path = _write_script(tmp, "methods.json", script)
    worker = spawn_worker(_spec(make_argv("scripted", path)))
    client = LocalClient(worker)
    try:
        result = client.inference(_prompt("q"))
        assert result.text == "alpha", f"inference: {result!r}"
        text = client.transcribe("unused.wav")
        assert text == "beta", f"transcribe: {text!r}"
        vector = client.embed("unused.wav")
        assert vector == [0.25, 0.5, 0.25], f"embed: {vector!r}"
        quality = client.score_quality("unused.wav")
        assert quality == QUALITY_FIXTURE, f"score_quality: {quality!r}"
        audio_path = client.synthesize("hello wave")
        assert Path(audio_path).exists(), f"synthesize path missing: {audio_path}"
        with wave.open(audio_path, "rb") as wav:
            assert wav.getnframes() > 0, "synthesized audio is empty"
        rating = client.judge("q", "a")
        assert rating == 7, f"judge: {rating!r}"
    finally:
        worker.shutdown()
    return "inference/transcribe/embed/score_quality/synthesize/judge all conform"


@_check("error_shape")
def _check_error(make_argv: ArgvBuilder, tmp: Path) -> str:
    path = _write_script(tmp, "error.json",
                         {"directives": [{"error": "deliberate failure"}]})
    worker = spawn_worker(_spec(make_argv("scripted", path)))
    try:
        try:
            worker.request("inference", {"prompt": _prompt("x")})
            raise AssertionError("error directive did not raise")
        except AdapterError as exc:
            assert "deliberate failure" in str(exc), f"message lost: {exc}"
        assert worker.state == "ready", "adapter error must not kill the worker"
    finally:
        worker.shutdown()
    return "adapter errors carry the adapter's message and keep the worker alive"


@_check("crash_recovery")
def _check_crash(make_argv: ArgvBuilder, tmp: Path) -> str:
    script = {"directives": [{"respond": {"text": "ok-1"}}, {"crash": True}]}
    path = _write_script(tmp, "crash.json", script)
    worker = spawn_worker(_spec(make_argv("scripted", path), max_restarts=1))
    try:
        first = worker.request("inference", {"prompt": _prompt("a")})
        assert first.get("text") == "ok-1"
        try:
            worker.request("inference", {"prompt": _prompt("b")})
            raise AssertionError("crash did not surface")
        except WorkerFailureError:
            pass
        assert worker.restart_count == 1, f"restart_count {worker.restart_count}"
        third = worker.request("inference", {"prompt": _prompt("c")})
        assert third.get("text") == "ok-1", "restarted script should answer again"
        assert worker.requests_issued == worker.requests_resolved == 3
    finally:
        worker.shutdown()
    return "crash mid-request yields worker-failure, restart accounted"


@_check("garbage_pre_handshake")
def _check_garbage(make_argv: ArgvBuilder, tmp: Path) -> str:
    path = _write_script(tmp, "garbage.json",
                         {"handshake": "garbage", "directives": []})
    try:
        worker = spawn_worker(_spec(make_argv("scripted", path)))
        worker.shutdown()
        raise AssertionError("garbage handshake was accepted")
    except ProtocolError:
        return "garbage before the handshake is a protocol error"


@_check("startup_timeout")
def _check_startup_timeout(make_argv: ArgvBuilder, tmp: Path) -> str:
    path = _write_script(tmp, "silent.json",
                         {"handshake": "none", "directives": []})
    try:
        worker = spawn_worker(_spec(make_argv("scripted", path), ready_timeout=0.5))
        worker.shutdown()
        raise AssertionError("missing handshake was accepted")
    except StartupTimeoutError:
        return "silent adapters hit the startup timeout and are killed"


@_check("request_timeout")
def _check_request_timeout(make_argv: ArgvBuilder, tmp: Path) -> str:
    script = {"directives": [{"delay": 5.0}, {"respond": {"text": "late"}}]}
    path = _write_script(tmp, "slow.json", script)
    worker = spawn_worker(_spec(make_argv("scripted", path),
                                request_timeout=0.4, max_restarts=0))
    try:
        try:
            worker.request("inference", {"prompt": _prompt("x")})
            raise AssertionError("timeout did not surface")
        except InferenceTimeoutError:
            pass
    finally:
        worker.shutdown()
    return "slow responses hit the inference timeout"


@_check("script_exhaustion")
def _check_exhaustion(make_argv: ArgvBuilder, tmp: Path) -> str:
    path = _write_script(tmp, "short.json",
                         {"directives": [{"respond": {"text": "only"}}]})
    worker = spawn_worker(_spec(make_argv("scripted", path)))
    try:
        first = worker.request("inference", {"prompt": _prompt("a")})
        assert first.get("text") == "only"
        try:
            worker.request("inference", {"prompt": _prompt("b")})
            raise AssertionError("exhausted script kept answering")
        except AdapterError:
            pass
    finally:
        worker.shutdown()
    return "directive exhaustion turns into error responses"


CHECKS = [
    _check_handshake,
    _check_echo,
    _check_bijection,
    _check_methods,
    _check_error,
    _check_crash,
    _check_garbage,
    _check_startup_timeout,
    _check_request_timeout,
    _check_exhaustion,
]


def run_conformance(make_argv: ArgvBuilder) -> list[CheckResult]:
    """Run every protocol check against an adapter command builder."""
    results = []
    with tempfile.TemporaryDirectory(prefix="conformance-") as tmp:
        tmp_path = Path(tmp)
        for check in CHECKS:
            name = check.check_name
            try:
                detail = check(make_argv, tmp_path)
                results.append(CheckResult(name, True, detail))
            except AssertionError as exc:
                results.append(CheckResult(name, False, str(exc)))
            except Exception as exc:
                results.append(CheckResult(name, False,
                                           f"{type(exc).__name__}: {exc}"))
    return results


def passed(results: list[CheckResult]) -> bool:
    return all(r.passed for r in results)
