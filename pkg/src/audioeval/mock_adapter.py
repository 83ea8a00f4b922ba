"""Deterministic in-repo adapter for tests, demos, and protocol conformance.

Speaks the newline-delimited JSON protocol on stdin/stdout. Modes:

* ``echo``     answers every method deterministically: inference returns the
               concatenated text segments of the prompt, transcribe recovers
               text embedded in mock WAV files, embed hashes file bytes,
               score_quality returns fixed scores, judge returns 5.
* ``scripted`` consumes a JSON script of directives strictly in order;
               after exhaustion every request gets an error response.
* ``garbage``  emits a non-JSON line before the ready handshake.

Mock audio: ``synthesize`` writes a real 16 kHz mono PCM WAV whose frame
bytes are the UTF-8 text, so a faithful ``transcribe`` can recover it.

Run as ``python -m audioeval.mock_adapter --mode echo``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
import wave
from pathlib import Path

ECHO_QUALITY = {"utmos": 4.0, "dnsmos_p835": 3.5, "dnsmos_p808": 3.5}
ECHO_JUDGE_RATING = 5


def write_text_wav(path: str | Path, text: str, rate: int = 16000) -> str:
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
        with wave.open(path, "rb") as wav:
            data = wav.readframes(wav.getnframes())
        return data.rstrip(b"\x00").decode("utf-8")
    except Exception:
        return ""


def _embed_vector(path: str) -> list[float]:
    digest = hashlib.sha256(Path(path).read_bytes()).digest()
    return [b / 255.0 for b in digest[:8]]


def _prompt_text(prompt) -> str:
    parts = []
    for message in prompt or []:
        for content in message.get("contents", []):
            if content.get("type") == "text":
                parts.append(str(content.get("value", "")))
    return "".join(parts)


def _prompt_audio(prompt) -> str | None:
    for message in prompt or []:
        for content in message.get("contents", []):
            if content.get("type") == "audio":
                return content.get("value")
    return None


class EchoHandler:
    def __init__(self, out_dir: str, replace: dict[str, str],
                 respond_delay: float = 0.0):
        self.out_dir = out_dir
        self.replace = replace
        self.respond_delay = respond_delay
        self._n = 0

    def _apply(self, text: str) -> str:
        return self.replace.get(text, text)

    def handle(self, request: dict) -> dict:
        if self.respond_delay > 0:
            time.sleep(self.respond_delay)
        method = request.get("method")
        if method == "inference":
            return {"text": self._apply(_prompt_text(request.get("prompt")))}
        if method == "transcribe":
            return {"text": self._apply(read_text_wav(request.get("audio", "")))}
        if method == "embed":
            return {"vector": _embed_vector(request.get("audio", ""))}
        if method == "score_quality":
            return dict(ECHO_QUALITY)
        if method == "synthesize":
            self._n += 1
            path = os.path.join(self.out_dir, f"tts-{os.getpid()}-{self._n}.wav")
            return {"audio": write_text_wav(path, str(request.get("text", "")))}
        if method == "judge":
            return {"rating": ECHO_JUDGE_RATING}
        raise ValueError(f"unknown method {method!r}")


class ScriptedHandler:
    """Consumes directives strictly in order; exhaustion yields errors."""

    def __init__(self, script: dict, out_dir: str):
        self.directives = list(script.get("directives", []))
        self.out_dir = out_dir
        self._cursor = 0
        self._n = 0

    def handle(self, request: dict) -> dict:
        while True:
            if self._cursor >= len(self.directives):
                return {"__error__": "script exhausted"}
            directive = self.directives[self._cursor]
            self._cursor += 1
            if "delay" in directive:
                time.sleep(float(directive["delay"]))
                continue  # the next directive answers this request
            if directive.get("crash"):
                sys.stdout.flush()
                os._exit(1)
            if "error" in directive:
                return {"__error__": str(directive["error"])}
            if "respond" in directive:
                spec = directive["respond"]
                if "audio_text" in spec:
                    self._n += 1
                    path = os.path.join(
                        self.out_dir, f"scripted-{os.getpid()}-{self._n}.wav"
                    )
                    return {"audio": write_text_wav(path, str(spec["audio_text"]))}
                return {"text": spec.get("text", "")}
            if "judge" in directive:
                return {"rating": directive["judge"]}
            if "embed" in directive:
                return {"vector": directive["embed"]}
            if "quality" in directive:
                return dict(directive["quality"])
            return {"__error__": f"unknown directive {directive!r}"}


def serve(handler, log_requests: str | None = None) -> int:
    sys.stdout.write(json.dumps({"status": "ready"}) + "\n")
    sys.stdout.flush()
    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            request = json.loads(line)
            request_id = request.get("id")
        except json.JSONDecodeError:
            sys.stdout.write(json.dumps({"error": {"message": "malformed request"}}) + "\n")
            sys.stdout.flush()
            continue
        if log_requests:
            with open(log_requests, "a", encoding="utf-8") as fh:
                fh.write(f"{request_id}\t{request.get('method')}\n")
        try:
            result = handler.handle(request)
        except Exception as exc:  # adapter-reported error, not a crash
            result = {"__error__": str(exc)}
        if "__error__" in result:
            response = {"id": request_id, "error": {"message": result["__error__"]}}
        else:
            response = {"id": request_id, "result": result}
        sys.stdout.write(json.dumps(response, ensure_ascii=False) + "\n")
        sys.stdout.flush()
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="deterministic mock adapter")
    parser.add_argument("--mode", choices=("echo", "scripted", "garbage"),
                        default="echo")
    parser.add_argument("--script", help="JSON script file for scripted mode")
    parser.add_argument("--out-dir", help="directory for generated audio files")
    parser.add_argument("--replace-json",
                        help="JSON file mapping exact echo outputs to replacements")
    parser.add_argument("--handshake-delay", type=float, default=0.0)
    parser.add_argument("--respond-delay", type=float, default=0.0,
                        help="seconds to sleep before answering each request")
    parser.add_argument("--log-requests", help="append one line per request here")
    args = parser.parse_args(argv)

    out_dir = args.out_dir or tempfile.mkdtemp(prefix="mock-adapter-")
    os.makedirs(out_dir, exist_ok=True)

    if args.handshake_delay > 0:
        time.sleep(args.handshake_delay)

    if args.mode == "garbage":
        sys.stdout.write("!!! this is not a protocol line !!!\n")
        sys.stdout.flush()
        handler = EchoHandler(out_dir, {}, args.respond_delay)
        return serve(handler, args.log_requests)

    if args.mode == "scripted":
        if not args.script:
            parser.error("--script is required in scripted mode")
        script = json.loads(Path(args.script).read_text(encoding="utf-8"))
        if script.get("handshake") == "garbage":
            sys.stdout.write("!!! this is not a protocol line !!!\n")
            sys.stdout.flush()
        elif script.get("handshake") == "none":
            time.sleep(float(script.get("handshake_delay", 3600)))
        handler = ScriptedHandler(script, out_dir)
        return serve(handler, args.log_requests)

    replace = {}
    if args.replace_json:
        replace = json.loads(Path(args.replace_json).read_text(encoding="utf-8"))
    handler = EchoHandler(out_dir, replace, args.respond_delay)
    return serve(handler, args.log_requests)


if __name__ == "__main__":
    sys.exit(main())
