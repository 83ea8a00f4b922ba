"""Isolated model execution: subprocess workers and remote endpoints.

Local workers are daemonized child processes speaking newline-delimited JSON
over stdin/stdout. On startup the child must emit ``{"status":"ready"}``;
each request carries an id the response must echo. A worker serves one
request at a time; on crash it is restarted while its restart budget lasts.
The child's stderr is captured verbatim into a log file.
"""

from __future__ import annotations

import itertools
import json
import logging
import os
import queue
import subprocess
import tempfile
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

from .config import AdapterSpec
from .errors import (
    AdapterError,
    InferenceTimeoutError,
    PermanentFailureError,
    ProtocolError,
    SpawnError,
    StartupTimeoutError,
    WorkerFailureError,
)

logger = logging.getLogger(__name__)

_EOF = object()

# Keys a child environment keeps from the parent; everything else is dropped
# so two workers never share environment state beyond these basics.
_BASE_ENV_KEYS = ("PATH", "HOME", "LANG", "LC_ALL", "TMPDIR", "SYSTEMROOT",
                  "PYTHONPATH", "VIRTUAL_ENV")


@dataclass
class InferenceResult:
    """One successful adapter response."""

    text: str | None = None
    audio: str | None = None
    latency: float = 0.0
    raw: dict = field(default_factory=dict)


def _isolated_env(overrides) -> dict[str, str]:
    env = {k: os.environ[k] for k in _BASE_ENV_KEYS if k in os.environ}
    env.update({str(k): str(v) for k, v in dict(overrides).items()})
    return env


class Worker:
    """A live handle to one local adapter subprocess.

    States: starting -> ready -> busy -> ready ... -> failed. At most one
    request is in flight; a crash mid-request surfaces as an error on that
    request and triggers a restart while the budget lasts.
    """

    _ids = itertools.count(1)

    def __init__(self, spec: AdapterSpec, log_dir: str | Path | None = None):
        self.spec = spec
        self.worker_id = f"w{next(Worker._ids)}"
        self.state = "starting"
        self.restart_count = 0
        self.requests_issued = 0
        self.requests_resolved = 0
        self._seq = itertools.count(1)
        self._lock = threading.Lock()
        self._closing = False
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        if log_dir is not None:
            Path(log_dir).mkdir(parents=True, exist_ok=True)
            self.stderr_path = Path(log_dir) / f"{self.worker_id}.stderr.log"
        else:
            fd, p = tempfile.mkstemp(prefix=f"audioeval-{self.worker_id}-", suffix=".stderr.log")
            os.close(fd)
            self.stderr_path = Path(p)
        self._start()

    # -- lifecycle -----------------------------------------------------------

    def _start(self) -> None:
        spec = self.spec
        self._lines = queue.Queue()
        stderr_file = open(self.stderr_path, "ab")
        try:
            self._proc = subprocess.Popen(
                list(spec.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=stderr_file,
                cwd=spec.workdir,
                env=_isolated_env(spec.env),
                text=True,
                bufsize=1,
            )
        except (FileNotFoundError, NotADirectoryError, PermissionError) as exc:
            self.state = "failed"
            raise SpawnError(f"cannot start {spec.command[0]!r}: {exc}") from exc
        finally:
            stderr_file.close()  # the child holds its own descriptor

        reader = threading.Thread(target=self._drain_stdout, daemon=True)
        reader.start()
        self._await_handshake()

    def _drain_stdout(self) -> None:
        proc = self._proc
        assert proc is not None and proc.stdout is not None
        for line in proc.stdout:
            self._lines.put(line)
        self._lines.put(_EOF)

    def _await_handshake(self) -> None:
        try:
            line = self._lines.get(timeout=self.spec.ready_timeout)
        except queue.Empty:
            self._kill()
            self.state = "failed"
            raise StartupTimeoutError(
                f"{self.worker_id}: no handshake within {self.spec.ready_timeout}s"
            ) from None
        if line is _EOF:
            self._kill()
            self.state = "failed"
            raise StartupTimeoutError(
                f"{self.worker_id}: process exited before the ready handshake"
            )
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            self._kill()
            self.state = "failed"
            raise ProtocolError(
                f"{self.worker_id}: expected ready handshake, got {line!r}"
            ) from None
        if not isinstance(msg, dict) or msg.get("status") != "ready":
            self._kill()
            self.state = "failed"
            raise ProtocolError(f"{self.worker_id}: malformed handshake {msg!r}")
        self.state = "ready"

    def _kill(self) -> None:
        proc = self._proc
        if proc is None:
            return
        try:
            proc.kill()
            proc.wait(timeout=5)
        except Exception:
            pass

    def _handle_crash(self, message: str, error_cls) -> None:
        """Mark failed, restart within budget, and raise for the current request."""
        self._kill()
        self.state = "failed"
        if not self._closing and self.restart_count < self.spec.max_restarts:
            self.restart_count += 1
            try:
                self._start()
            except (SpawnError, StartupTimeoutError, ProtocolError) as exc:
                logger.warning("%s: restart failed: %s", self.worker_id, exc)
        raise error_cls(f"{self.worker_id}: {message}")

    # -- requests --------------------------------------------------------------

    def request(self, method: str, payload: dict, params: dict | None = None,
                timeout: float | None = None) -> dict:
        """Send one request and return its result object.

        Raises the documented error taxonomy; exactly one terminal outcome per
        issued request.
        """
        timeout = timeout if timeout is not None else self.spec.request_timeout
        with self._lock:
            if self._closing:
                raise PermanentFailureError(f"{self.worker_id}: worker is shut down")
            if self.state == "failed":
                if self.restart_count >= self.spec.max_restarts or self._closing:
                    raise PermanentFailureError(
                        f"{self.worker_id}: restart budget exhausted "
                        f"({self.restart_count}/{self.spec.max_restarts})"
                    )
                self.restart_count += 1
                self._start()
            request_id = f"{self.worker_id}-{next(self._seq)}"
            message = {"id": request_id, "method": method, **payload,
                       "params": params or {}}
            self.requests_issued += 1
            self.state = "busy"
            try:
                return self._exchange(request_id, message, timeout)
            finally:
                self.requests_resolved += 1
                if self.state == "busy":
                    self.state = "ready"

    def _exchange(self, request_id: str, message: dict, timeout: float) -> dict:
        proc = self._proc
        assert proc is not None and proc.stdin is not None
        try:
            proc.stdin.write(json.dumps(message, ensure_ascii=False) + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError):
            self._handle_crash("worker died before accepting the request",
                               WorkerFailureError)
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self._handle_crash(f"no response within {timeout}s",
                                   InferenceTimeoutError)
            try:
                line = self._lines.get(timeout=remaining)
            except queue.Empty:
                self._handle_crash(f"no response within {timeout}s",
                                   InferenceTimeoutError)
            if line is _EOF:
                self._handle_crash("worker crashed mid-request", WorkerFailureError)
            try:
                msg = json.loads(line)
            except json.JSONDecodeError:
                self._handle_crash(f"unparseable response line {line!r}", ProtocolError)
            if not isinstance(msg, dict) or msg.get("id") != request_id:
                self._handle_crash(
                    f"response id {msg.get('id')!r} does not match request "
                    f"{request_id!r}", ProtocolError)
            if "error" in msg:
                detail = msg["error"]
                text = detail.get("message") if isinstance(detail, dict) else str(detail)
                raise AdapterError(text or "adapter error")
            if "result" not in msg:
                self._handle_crash(f"response carries neither result nor error: {msg!r}",
                                   ProtocolError)
            return msg["result"]

    def shutdown(self) -> str:
        """Graceful close of stdin, bounded wait, then forced termination.

        Idempotent, and deliberately lock-free: shutting down a busy worker
        makes the in-flight request fail with a worker-failure error instead
        of blocking until it completes.
        """
        self._closing = True
        proc = self._proc
        if proc is not None and proc.poll() is None:
            try:
                if proc.stdin is not None:
                    proc.stdin.close()
            except OSError:
                pass
            try:
                proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                proc.terminate()
                try:
                    proc.wait(timeout=2.0)
                except subprocess.TimeoutExpired:
                    proc.kill()
                    proc.wait()
        self.state = "stopped"
        return self.state


def spawn_worker(spec: AdapterSpec, log_dir: str | Path | None = None) -> Worker:
    """Launch a local worker and wait for its ready handshake."""
    if spec.adapter != "local":
        raise SpawnError(f"model {spec.name!r} is not a local adapter")
    return Worker(spec, log_dir=log_dir)


# -- unified client over local/remote adapters --------------------------------

class AdapterClient:
    """Uniform access to every adapter method, local or remote."""

    def request(self, method: str, payload: dict, params: dict | None = None) -> dict:
        raise NotImplementedError

    def close(self) -> None:
        pass

    # convenience wrappers -----------------------------------------------------

    def inference(self, prompt, params: dict | None = None) -> InferenceResult:
        wire = prompt.to_wire() if hasattr(prompt, "to_wire") else prompt
        start = time.monotonic()
        result = self.request("inference", {"prompt": wire}, params)
        latency = time.monotonic() - start
        text = result.get("text")
        audio = result.get("audio")
        if text is None and audio is None:
            raise ProtocolError("inference result carries neither text nor audio")
        return InferenceResult(text=text, audio=audio, latency=latency, raw=result)

    def transcribe(self, audio_path: str) -> str:
        result = self.request("transcribe", {"audio": str(audio_path)})
        text = result.get("text")
        if not isinstance(text, str):
            raise ProtocolError(f"transcribe result has no text: {result!r}")
        return text

    def embed(self, audio_path: str) -> list[float]:
        result = self.request("embed", {"audio": str(audio_path)})
        vector = result.get("vector")
        if not isinstance(vector, list) or not vector:
            raise ProtocolError(f"embed result has no vector: {result!r}")
        return [float(v) for v in vector]

    def score_quality(self, audio_path: str) -> dict:
        return self.request("score_quality", {"audio": str(audio_path)})

    def synthesize(self, text: str) -> str:
        result = self.request("synthesize", {"text": text})
        audio = result.get("audio")
        if not isinstance(audio, str) or not audio:
            raise ProtocolError(f"synthesize result has no audio path: {result!r}")
        return audio

    def judge(self, question: str, answer: str, rubric: str = ""):
        result = self.request(
            "judge", {"question": question, "answer": answer, "rubric": rubric}
        )
        return result.get("rating")


class LocalClient(AdapterClient):
    def __init__(self, worker: Worker):
        self.worker = worker

    def request(self, method, payload, params=None):
        return self.worker.request(method, payload, params)

    def close(self):
        self.worker.shutdown()


class RemoteClient(AdapterClient):
    """HTTP adapter: POST one JSON object per request to the endpoint."""

    _ids = itertools.count(1)

    def __init__(self, spec: AdapterSpec):
        if spec.adapter != "remote":
            raise SpawnError(f"model {spec.name!r} is not a remote adapter")
        self.spec = spec

    def request(self, method, payload, params=None):
        request_id = f"r{next(RemoteClient._ids)}"
        body = json.dumps(
            {"id": request_id, "method": method, **payload, "params": params or {}},
            ensure_ascii=False,
        ).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.spec.auth_header:
            secret = os.environ.get(self.spec.secret_env or "", "")
            headers[self.spec.auth_header] = secret
        req = urllib.request.Request(self.spec.url, data=body, headers=headers)
        try:
            with urllib.request.urlopen(req, timeout=self.spec.request_timeout) as resp:
                raw = resp.read().decode("utf-8")
        except urllib.error.HTTPError as exc:
            raise AdapterError(f"endpoint returned HTTP {exc.code}") from exc
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise InferenceTimeoutError(
                f"cannot reach {self.spec.url}: {exc}"
            ) from exc
        try:
            msg = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"endpoint returned non-JSON: {raw[:200]!r}") from exc
        if "error" in msg:
            detail = msg["error"]
            text = detail.get("message") if isinstance(detail, dict) else str(detail)
            raise AdapterError(text or "adapter error")
        if "result" not in msg:
            raise ProtocolError(f"response carries neither result nor error: {msg!r}")
        return msg["result"]


def connect(spec: AdapterSpec, log_dir: str | Path | None = None) -> AdapterClient:
    """Open a client for a model spec: spawn a worker or bind the endpoint."""
    if spec.adapter == "local":
        return LocalClient(spawn_worker(spec, log_dir=log_dir))
    return RemoteClient(spec)
