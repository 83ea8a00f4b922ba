import json
import sys
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from audioeval.config import AdapterSpec
from audioeval.errors import (
    AdapterError,
    InferenceTimeoutError,
    PermanentFailureError,
    ProtocolError,
    SpawnError,
    StartupTimeoutError,
    WorkerFailureError,
)
from audioeval.runtime import RemoteClient, connect, spawn_worker
from conftest import adapter_spec, mock_argv, write_script


def prompt(text):
    return [{"role": "user", "contents": [{"type": "text", "value": text}]}]


class TestSpawn:
    def test_echo_worker_ready(self):
        worker = spawn_worker(adapter_spec(mock_argv("echo")))
        try:
            assert worker.state == "ready"
            assert worker.restart_count == 0
        finally:
            worker.shutdown()

    def test_command_not_found(self):
        with pytest.raises(SpawnError):
            spawn_worker(adapter_spec(["/does/not/exist-adapter"]))

    def test_immediate_exit_is_startup_timeout(self):
        spec = adapter_spec([sys.executable, "-c", "import sys; sys.exit(0)"],
                            ready_timeout=5.0)
        with pytest.raises(StartupTimeoutError):
            spawn_worker(spec)

    def test_garbage_before_handshake_is_protocol_error(self):
        with pytest.raises(ProtocolError):
            spawn_worker(adapter_spec(mock_argv("garbage")))

    def test_slow_handshake_times_out_and_kills(self):
        spec = adapter_spec(mock_argv("echo", handshake_delay=30),
                            ready_timeout=0.4)
        with pytest.raises(StartupTimeoutError):
            spawn_worker(spec)

    def test_remote_spec_cannot_spawn(self):
        spec = AdapterSpec(name="r", payload={}, adapter="remote",
                           url="http://127.0.0.1:9/x")
        with pytest.raises(SpawnError):
            spawn_worker(spec)


class TestInference:
    def test_echo_identity(self):
        worker = spawn_worker(adapter_spec(mock_argv("echo")))
        try:
            result = worker.request("inference", {"prompt": prompt("hello")})
            assert result == {"text": "hello"}
        finally:
            worker.shutdown()

    def test_crash_schedule_with_restart(self, tmp_path):
        script = write_script(tmp_path / "s.json", [
            {"respond": {"text": "one"}},
            {"crash": True},
        ])
        worker = spawn_worker(adapter_spec(mock_argv("scripted", script),
                                           max_restarts=1))
        try:
            assert worker.request("inference", {"prompt": prompt("a")})["text"] == "one"
            with pytest.raises(WorkerFailureError):
                worker.request("inference", {"prompt": prompt("b")})
            assert worker.restart_count == 1
            # restarted process replays its script from the top
            assert worker.request("inference", {"prompt": prompt("c")})["text"] == "one"
        finally:
            worker.shutdown()

    def test_restart_budget_exhaustion(self, tmp_path):
        script = write_script(tmp_path / "s.json", [{"crash": True}])
        worker = spawn_worker(adapter_spec(mock_argv("scripted", script),
                                           max_restarts=0))
        try:
            with pytest.raises(WorkerFailureError):
                worker.request("inference", {"prompt": prompt("a")})
            with pytest.raises(PermanentFailureError):
                worker.request("inference", {"prompt": prompt("b")})
        finally:
            worker.shutdown()

    def test_timeout_is_inference_timeout(self, tmp_path):
        script = write_script(tmp_path / "s.json",
                              [{"delay": 10}, {"respond": {"text": "late"}}])
        worker = spawn_worker(adapter_spec(mock_argv("scripted", script),
                                           request_timeout=0.4, max_restarts=0))
        try:
            with pytest.raises(InferenceTimeoutError):
                worker.request("inference", {"prompt": prompt("a")})
        finally:
            worker.shutdown()

    def test_adapter_error_carries_message_and_worker_survives(self, tmp_path):
        script = write_script(tmp_path / "s.json", [
            {"error": "cannot transcode"},
            {"respond": {"text": "fine"}},
        ])
        worker = spawn_worker(adapter_spec(mock_argv("scripted", script)))
        try:
            with pytest.raises(AdapterError, match="cannot transcode"):
                worker.request("inference", {"prompt": prompt("a")})
            assert worker.state == "ready"
            assert worker.request("inference", {"prompt": prompt("b")})["text"] == "fine"
        finally:
            worker.shutdown()

    def test_request_response_bijection_over_a_run(self):
        worker = spawn_worker(adapter_spec(mock_argv("echo")))
        try:
            for i in range(10):
                result = worker.request("inference", {"prompt": prompt(f"n{i}")})
                assert result["text"] == f"n{i}"
            assert worker.requests_issued == worker.requests_resolved == 10
        finally:
            worker.shutdown()

    def test_stderr_captured_verbatim(self, tmp_path):
        code = ("import sys, json\n"
                "print(json.dumps({'status': 'ready'})); sys.stdout.flush()\n"
                "sys.stderr.write('warped diagnostics 42\\n'); sys.stderr.flush()\n"
                "line = sys.stdin.readline()\n"
                "req = json.loads(line)\n"
                "print(json.dumps({'id': req['id'], 'result': {'text': 'ok'}}))\n"
                "sys.stdout.flush()\n"
                "sys.stdin.readline()\n")
        worker = spawn_worker(adapter_spec([sys.executable, "-c", code]),
                              log_dir=tmp_path)
        try:
            worker.request("inference", {"prompt": prompt("x")})
            time.sleep(0.1)
            assert "warped diagnostics 42" in worker.stderr_path.read_text()
        finally:
            worker.shutdown()


class TestShutdown:
    def test_graceful(self):
        worker = spawn_worker(adapter_spec(mock_argv("echo")))
        assert worker.shutdown() == "stopped"
        assert worker._proc.poll() is not None

    def test_already_dead_is_noop(self):
        worker = spawn_worker(adapter_spec(mock_argv("echo")))
        worker._proc.kill()
        worker._proc.wait()
        assert worker.shutdown() == "stopped"

    def test_busy_worker_in_flight_gets_failure(self, tmp_path):
        script = write_script(tmp_path / "s.json",
                              [{"delay": 10}, {"respond": {"text": "late"}}])
        worker = spawn_worker(adapter_spec(mock_argv("scripted", script),
                                           request_timeout=30, max_restarts=1))
        errors = []

        def call():
            try:
                worker.request("inference", {"prompt": prompt("x")})
            except Exception as exc:
                errors.append(exc)

        thread = threading.Thread(target=call)
        thread.start()
        time.sleep(0.3)  # let the request get in flight
        worker.shutdown()
        thread.join(timeout=5)
        assert len(errors) == 1
        assert isinstance(errors[0], WorkerFailureError)

    def test_no_requests_after_shutdown(self):
        worker = spawn_worker(adapter_spec(mock_argv("echo")))
        worker.shutdown()
        with pytest.raises(PermanentFailureError):
            worker.request("inference", {"prompt": prompt("x")})


class TestIsolation:
    def test_two_workers_one_crashing(self, tmp_path):
        script = write_script(tmp_path / "s.json", [{"crash": True}])
        crasher = spawn_worker(adapter_spec(mock_argv("scripted", script),
                                            max_restarts=0))
        survivor = spawn_worker(adapter_spec(mock_argv("echo")))
        try:
            with pytest.raises(WorkerFailureError):
                crasher.request("inference", {"prompt": prompt("boom")})
            # the other worker is unaffected
            result = survivor.request("inference", {"prompt": prompt("still here")})
            assert result["text"] == "still here"
        finally:
            crasher.shutdown()
            survivor.shutdown()

    def test_workers_do_not_share_environment(self, tmp_path):
        code = ("import sys, os, json\n"
                "print(json.dumps({'status': 'ready'})); sys.stdout.flush()\n"
                "for line in sys.stdin:\n"
                "    req = json.loads(line)\n"
                "    print(json.dumps({'id': req['id'],"
                " 'result': {'text': os.environ.get('WORKER_TAG', '')}}))\n"
                "    sys.stdout.flush()\n")
        a = spawn_worker(adapter_spec([sys.executable, "-c", code],
                                      env={"WORKER_TAG": "alpha"}))
        b = spawn_worker(adapter_spec([sys.executable, "-c", code],
                                      env={"WORKER_TAG": "beta"}))
        try:
            assert a.request("inference", {})["text"] == "alpha"
            assert b.request("inference", {})["text"] == "beta"
        finally:
            a.shutdown()
            b.shutdown()


class _RemoteHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        request = json.loads(self.rfile.read(length))
        auth = self.headers.get("X-Api-Key")
        if request.get("method") == "inference":
            text = "".join(c["value"] for m in request["prompt"]
                           for c in m["contents"] if c["type"] == "text")
            body = {"id": request["id"], "result": {"text": f"{auth or ''}:{text}"}}
        else:
            body = {"id": request["id"], "error": {"message": "unsupported"}}
        payload = json.dumps(body).encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def remote_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _RemoteHandler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    yield f"http://127.0.0.1:{server.server_address[1]}/infer"
    server.shutdown()


class TestRemote:
    def test_remote_inference(self, remote_server, monkeypatch):
        monkeypatch.setenv("TEST_API_KEY", "sekrit")
        spec = AdapterSpec(name="api", payload={}, adapter="remote",
                           url=remote_server, auth_header="X-Api-Key",
                           secret_env="TEST_API_KEY", request_timeout=5.0)
        client = connect(spec)
        result = client.inference(prompt("ping"))
        assert result.text == "sekrit:ping"
        assert result.latency >= 0.0

    def test_remote_error_response(self, remote_server):
        spec = AdapterSpec(name="api", payload={}, adapter="remote",
                           url=remote_server, request_timeout=5.0)
        client = RemoteClient(spec)
        with pytest.raises(AdapterError, match="unsupported"):
            client.request("transcribe", {"audio": "x.wav"})

    def test_unreachable_endpoint(self):
        spec = AdapterSpec(name="api", payload={}, adapter="remote",
                           url="http://127.0.0.1:1/infer", request_timeout=0.5)
        client = RemoteClient(spec)
        with pytest.raises(InferenceTimeoutError):
            client.request("inference", {"prompt": prompt("x")})


class TestConformance:
    def test_mock_adapter_passes_everything(self):
        from audioeval.conformance import passed, run_conformance

        def make_argv(mode, script):
            argv = list(mock_argv(mode))
            if script:
                argv += ["--script", script]
            return argv

        results = run_conformance(make_argv)
        failures = [r for r in results if not r.passed]
        assert not failures, failures
        assert len(results) == 10
