"""Reference adapter server for the newline-delimited JSON stdio protocol.

One binary covers every adapter role (model, ASR, TTS, embedder, quality
scorer, judge) in three modes:

* ``echo``     deterministic, stateless: inference returns the concatenated
               text segments of the prompt; transcribe recovers text embedded
               in echo-generated WAVs; embed hashes file bytes; score_quality
               and judge return fixed values; synthesize writes a WAV and
               returns its path.
* ``scripted`` replays a JSON script of directives, consumed strictly in
               order; once exhausted, every request receives an error
               response. Directives: ``respond`` (text or audio_text),
               ``crash``, ``delay`` (seconds; the following directive then
               answers the request), ``error``, ``judge``, ``embed``,
               ``quality``. An optional top-level ``handshake`` field of
               ``garbage`` or ``none`` misbehaves before the ready line.
* ``bridge``   forwards requests to a real model behind a small backend
               interface; scaffold only, see ``--mode bridge`` below.

Protocol: on startup the server writes ``{"status": "ready"}``; each request
line carries an ``id`` the response echoes, with either ``result`` or
``error.message``. Requests are handled strictly serially. A malformed
request line gets a protocol error response carrying the offending id when
one can be parsed out; input EOF ends the process cleanly.

Bridge extension point: pass ``--config bridge.json`` with
``{"backend": "your_module:factory", "options": {...}}``. The factory is
called with the options dict and returns an object implementing any subset
of ``inference(prompt, params)``, ``transcribe(audio)``, ``embed(audio)``,
``score_quality(audio)``, ``synthesize(text)``, ``judge(question, answer,
rubric)``. Methods the backend does not provide produce error responses.
Model weights never ship with this package; the bridge exists so a real
ASR/TTS/embedding/quality model can be wrapped without touching the
protocol plumbing.
"""

from __future__ import annotations

import argparse
import hashlib
import importlib
import json
import os
import sys
import tempfile
import time
import wave
from pathlib import Path

FIXED_QUALITY = {"utmos": 4.0, "dnsmos_p835": 3.5, "dnsmos_p808": 3.5}
FIXED_JUDGE_RATING = 5


def write_text_wav(path: str | Path, text: str, rate: int = 16000) -> str:
    """A valid 16 kHz mono PCM WAV whose frames are the UTF-8 text bytes."""
    data = text.encode("utf-8")
    if len(data) % 2:
        data += b"\x00"
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(rate)
        wav.writeframes(data)
    return str(path)


def read_text_wav(path: str) -> str:
    try:
        with wave.open(str(path), "rb") as wav:
            data = wav.readframes(wav.getnframes())
        return data.rstrip(b"\x00").decode("utf-8")
    except Exception:
        return ""


def embed_file(path: str) -> list[float]:
    digest = hashlib.sha256(Path(path).read_bytes()).digest()
    return [b / 255.0 for b in digest[:8]]


def prompt_text(prompt) -> str:
    parts = []
    for message in prompt or []:
        for content in message.get("contents", []):
            if content.get("type") == "text":
                parts.append(str(content.get("value", "")))
    return "".join(parts)


class ShimError(Exception):
    """Raised by handlers to produce an error response."""


class EchoMode:
    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self._serial = 0

    def handle(self, request: dict) -> dict:
        method = request.get("method")
        if method == "inference":
            return {"text": prompt_text(request.get("prompt"))}
        if method == "transcribe":
            return {"text": read_text_wav(request.get("audio", ""))}
        if method == "embed":
            return {"vector": embed_file(request.get("audio", ""))}
        if method == "score_quality":
            return dict(FIXED_QUALITY)
        if method == "synthesize":
            self._serial += 1
            path = os.path.join(self.out_dir,
                                f"shim-tts-{os.getpid()}-{self._serial}.wav")
            return {"audio": write_text_wav(path, str(request.get("text", "")))}
        if method == "judge":
            return {"rating": FIXED_JUDGE_RATING}
        raise ShimError(f"unknown method {method!r}")


class ScriptedMode:
    """Directives answer requests strictly in order until exhausted."""

    def __init__(self, script: dict, out_dir: str):
        self.directives = list(script.get("directives", []))
        self.out_dir = out_dir
        self._cursor = 0
        self._serial = 0

    def handle(self, request: dict) -> dict:
        while True:
            if self._cursor >= len(self.directives):
                raise ShimError("script exhausted")
            directive = self.directives[self._cursor]
            self._cursor += 1
            if "delay" in directive:
                time.sleep(float(directive["delay"]))
                continue
            if directive.get("crash"):
                sys.stdout.flush()
                os._exit(1)
            if "error" in directive:
                raise ShimError(str(directive["error"]))
            if "respond" in directive:
                payload = directive["respond"]
                if "audio_text" in payload:
                    self._serial += 1
                    path = os.path.join(
                        self.out_dir, f"shim-{os.getpid()}-{self._serial}.wav")
                    return {"audio": write_text_wav(path, str(payload["audio_text"]))}
                if "audio" in payload:
                    return {"audio": str(payload["audio"])}
                return {"text": payload.get("text", "")}
            if "judge" in directive:
                return {"rating": directive["judge"]}
            if "embed" in directive:
                return {"vector": directive["embed"]}
            if "quality" in directive:
                return dict(directive["quality"])
            raise ShimError(f"unknown directive {directive!r}")


class BridgeMode:
    """Forwards protocol requests to a configured backend object."""

    def __init__(self, config: dict, out_dir: str):
        target = config.get("backend", "")
        if ":" not in target:
            raise SystemExit(f"bridge backend must be 'module:factory', got {target!r}")
        module_name, factory_name = target.split(":", 1)
        module = importlib.import_module(module_name)
        factory = getattr(module, factory_name)
        self.backend = factory(config.get("options", {}))
        self.out_dir = out_dir

    def _call(self, name: str, *args):
        method = getattr(self.backend, name, None)
        if method is None:
            raise ShimError(f"backend does not implement {name!r}")
        return method(*args)

    def handle(self, request: dict) -> dict:
        method = request.get("method")
        params = request.get("params", {})
        if method == "inference":
            result = self._call("inference", request.get("prompt"), params)
            if not isinstance(result, dict):
                result = {"text": str(result)}
            return result
        if method == "transcribe":
            return {"text": str(self._call("transcribe", request.get("audio", "")))}
        if method == "embed":
            return {"vector": list(self._call("embed", request.get("audio", "")))}
        if method == "score_quality":
            return dict(self._call("score_quality", request.get("audio", "")))
        if method == "synthesize":
            return {"audio": str(self._call("synthesize", request.get("text", "")))}
        if method == "judge":
            rating = self._call("judge", request.get("question", ""),
                                request.get("answer", ""), request.get("rubric", ""))
            return {"rating": rating}
        raise ShimError(f"unknown method {method!r}")


def _emit(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj, ensure_ascii=False) + "\n")
    sys.stdout.flush()


def serve(handler) -> int:
    _emit({"status": "ready"})
    for line in sys.stdin:
        if not line.strip():
            continue
        request_id = None
        try:
            request = json.loads(line)
            if isinstance(request, dict):
                request_id = request.get("id")
            else:
                raise ShimError("request is not an object")
            result = handler.handle(request)
        except ShimError as exc:
            _emit({"id": request_id, "error": {"message": str(exc)}})
            continue
        except json.JSONDecodeError as exc:
            _emit({"id": request_id, "error": {"message": f"malformed request: {exc}"}})
            continue
        except Exception as exc:
            _emit({"id": request_id, "error": {"message": f"{type(exc).__name__}: {exc}"}})
            continue
        _emit({"id": request_id, "result": result})
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="adapter-shim",
        description="reference stdio adapter: echo, scripted, or bridge",
    )
    parser.add_argument("--mode", choices=("echo", "scripted", "bridge"),
                        default="echo")
    parser.add_argument("--script", help="JSON script for scripted mode")
    parser.add_argument("--config", help="JSON config for bridge mode")
    parser.add_argument("--out-dir", help="directory for audio replies")
    args = parser.parse_args(argv)

    out_dir = args.out_dir or tempfile.mkdtemp(prefix="adapter-shim-")
    os.makedirs(out_dir, exist_ok=True)

    if args.mode == "scripted":
        if not args.script:
            parser.error("--script is required in scripted mode")
        script = json.loads(Path(args.script).read_text(encoding="utf-8"))
        handshake = script.get("handshake")
        if handshake == "garbage":
            sys.stdout.write("%% not a protocol line %%\n")
            sys.stdout.flush()
        elif handshake == "none":
            time.sleep(float(script.get("handshake_delay", 3600)))
        return serve(ScriptedMode(script, out_dir))

    if args.mode == "bridge":
        if not args.config:
            parser.error("--config is required in bridge mode")
        config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        return serve(BridgeMode(config, out_dir))

    return serve(EchoMode(out_dir))


if __name__ == "__main__":
    sys.exit(main())
