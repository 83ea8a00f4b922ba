"""Protocol-level tests driving the shim over raw pipes, plus the identical
conformance suite the evaluation harness runs against its own in-repo mock."""

import json
import os
import subprocess
import sys
import wave
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).parent


def start_shim(*args, extra_env=None):
    env = dict(os.environ)
    if extra_env:
        env.update(extra_env)
    return subprocess.Popen(
        [sys.executable, "-m", "adapter_shim", *args],
        stdin=subprocess.PIPE, stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL, text=True, bufsize=1, env=env,
    )


def request(proc, obj):
    proc.stdin.write(json.dumps(obj) + "\n")
    proc.stdin.flush()
    return json.loads(proc.stdout.readline())


def read_handshake(proc):
    return json.loads(proc.stdout.readline())


def stop(proc):
    try:
        proc.stdin.close()
        proc.wait(timeout=5)
    except Exception:
        proc.kill()


@pytest.fixture
def echo_shim():
    proc = start_shim("--mode", "echo")
    assert read_handshake(proc) == {"status": "ready"}
    yield proc
    stop(proc)


class TestEchoMode:
    def test_inference_concatenates_text_segments(self, echo_shim):
        reply = request(echo_shim, {
            "id": "r1", "method": "inference",
            "prompt": [{"role": "user", "contents": [
                {"type": "text", "value": "abc"},
                {"type": "audio", "value": "/tmp/x.wav"},
                {"type": "text", "value": "def"},
            ]}],
            "params": {},
        })
        assert reply == {"id": "r1", "result": {"text": "abcdef"}}

    def test_echo_is_stateless_across_requests(self, echo_shim):
        msg = {"id": "a", "method": "inference",
               "prompt": [{"role": "user",
                           "contents": [{"type": "text", "value": "same"}]}],
               "params": {}}
        first = request(echo_shim, msg)
        second = request(echo_shim, dict(msg, id="b"))
        assert first["result"] == second["result"] == {"text": "same"}

    def test_synthesize_then_transcribe_roundtrip(self, echo_shim, tmp_path):
        reply = request(echo_shim, {"id": "s", "method": "synthesize",
                                    "text": "round trip text", "params": {}})
        path = reply["result"]["audio"]
        assert Path(path).exists()
        with wave.open(path, "rb") as wav:
            assert wav.getframerate() == 16000
        back = request(echo_shim, {"id": "t", "method": "transcribe",
                                   "audio": path, "params": {}})
        assert back["result"]["text"] == "round trip text"

    def test_embed_is_deterministic_per_file(self, echo_shim, tmp_path):
        reply = request(echo_shim, {"id": "s", "method": "synthesize",
                                    "text": "determinism", "params": {}})
        path = reply["result"]["audio"]
        v1 = request(echo_shim, {"id": "e1", "method": "embed",
                                 "audio": path, "params": {}})["result"]["vector"]
        v2 = request(echo_shim, {"id": "e2", "method": "embed",
                                 "audio": path, "params": {}})["result"]["vector"]
        assert v1 == v2 and len(v1) == 8

    def test_quality_and_judge_fixed_values(self, echo_shim):
        quality = request(echo_shim, {"id": "q", "method": "score_quality",
                                      "audio": "x.wav", "params": {}})["result"]
        assert set(quality) == {"utmos", "dnsmos_p835", "dnsmos_p808"}
        rating = request(echo_shim, {"id": "j", "method": "judge",
                                     "question": "?", "answer": "!",
                                     "rubric": "", "params": {}})["result"]
        assert rating == {"rating": 5}

    def test_unknown_method_is_error_response(self, echo_shim):
        reply = request(echo_shim, {"id": "u", "method": "explode", "params": {}})
        assert reply["id"] == "u"
        assert "message" in reply["error"]

    def test_malformed_request_line_gets_protocol_error(self, echo_shim):
        echo_shim.stdin.write("this is not json\n")
        echo_shim.stdin.flush()
        reply = json.loads(echo_shim.stdout.readline())
        assert "error" in reply
        # still serving afterwards
        ok = request(echo_shim, {"id": "after", "method": "inference",
                                 "prompt": [{"role": "user", "contents": [
                                     {"type": "text", "value": "alive"}]}],
                                 "params": {}})
        assert ok["result"]["text"] == "alive"


class TestScriptedMode:
    def write_script(self, tmp_path, directives, **top):
        path = tmp_path / "script.json"
        path.write_text(json.dumps({"directives": directives, **top}))
        return str(path)

    def test_directives_in_order_then_exhaustion(self, tmp_path):
        script = self.write_script(tmp_path, [
            {"respond": {"text": "x"}},
            {"judge": 7},
            {"embed": [1, 0]},
            {"quality": {"utmos": 4.29, "dnsmos_p835": 3.44, "dnsmos_p808": 4.26}},
        ])
        proc = start_shim("--mode", "scripted", "--script", script)
        try:
            assert read_handshake(proc) == {"status": "ready"}
            assert request(proc, {"id": "1", "method": "inference",
                                  "prompt": [], "params": {}})["result"] == {"text": "x"}
            assert request(proc, {"id": "2", "method": "judge",
                                  "params": {}})["result"] == {"rating": 7}
            assert request(proc, {"id": "3", "method": "embed",
                                  "params": {}})["result"] == {"vector": [1, 0]}
            assert request(proc, {"id": "4", "method": "score_quality",
                                  "params": {}})["result"] == {
                "utmos": 4.29, "dnsmos_p835": 3.44, "dnsmos_p808": 4.26}
            exhausted = request(proc, {"id": "5", "method": "inference",
                                       "prompt": [], "params": {}})
            assert "error" in exhausted
        finally:
            stop(proc)

    def test_crash_exits_without_responding(self, tmp_path):
        script = self.write_script(tmp_path, [
            {"respond": {"text": "first"}},
            {"crash": True},
        ])
        proc = start_shim("--mode", "scripted", "--script", script)
        assert read_handshake(proc) == {"status": "ready"}
        assert request(proc, {"id": "1", "method": "inference",
                              "prompt": [], "params": {}})["result"]["text"] == "first"
        proc.stdin.write(json.dumps({"id": "2", "method": "inference",
                                     "prompt": [], "params": {}}) + "\n")
        proc.stdin.flush()
        assert proc.stdout.readline() == ""  # EOF, no response
        assert proc.wait(timeout=5) == 1

    def test_audio_reply_written_by_path(self, tmp_path):
        script = self.write_script(tmp_path, [{"respond": {"audio_text": "wave out"}}])
        proc = start_shim("--mode", "scripted", "--script", script,
                          "--out-dir", str(tmp_path))
        try:
            assert read_handshake(proc) == {"status": "ready"}
            reply = request(proc, {"id": "1", "method": "synthesize",
                                   "text": "ignored", "params": {}})
            path = reply["result"]["audio"]
            assert Path(path).exists()
            with wave.open(path, "rb") as wav:
                assert wav.getnframes() > 0
        finally:
            stop(proc)

    def test_garbage_handshake_emits_junk_first(self, tmp_path):
        script = self.write_script(tmp_path, [], handshake="garbage")
        proc = start_shim("--mode", "scripted", "--script", script)
        try:
            first = proc.stdout.readline()
            with pytest.raises(json.JSONDecodeError):
                json.loads(first)
        finally:
            proc.kill()
            proc.wait()


class TestBridgeMode:
    def test_bridge_forwards_to_backend(self, tmp_path):
        config = tmp_path / "bridge.json"
        config.write_text(json.dumps({
            "backend": "demo_backend:create_backend",
            "options": {"prefix": ">> "},
        }))
        proc = start_shim("--mode", "bridge", "--config", str(config),
                          extra_env={"PYTHONPATH": str(TESTS_DIR)})
        try:
            assert read_handshake(proc) == {"status": "ready"}
            reply = request(proc, {
                "id": "1", "method": "inference",
                "prompt": [{"role": "user",
                            "contents": [{"type": "text", "value": "hello"}]}],
                "params": {}})
            assert reply["result"] == {"text": ">> HELLO"}
            rating = request(proc, {"id": "2", "method": "judge", "question": "q",
                                    "answer": "a", "rubric": "", "params": {}})
            assert rating["result"] == {"rating": 8}
            unsupported = request(proc, {"id": "3", "method": "embed",
                                         "audio": "x.wav", "params": {}})
            assert "error" in unsupported
        finally:
            stop(proc)


class TestConformanceParity:
    def test_shim_passes_the_harness_conformance_suite(self):
        """The identical protocol suite the harness runs against its own
        in-repo mock, reached through the harness CLI."""
        result = subprocess.run(
            [sys.executable, "-m", "audioeval.cli", "conformance",
             "--adapter", f"{sys.executable} -m adapter_shim"],
            capture_output=True, text=True, timeout=300,
        )
        assert result.returncode == 0, result.stdout + result.stderr
        assert "10/10 checks passed" in result.stdout
        assert "FAIL" not in result.stdout
