import http.server
import threading

import numpy as np
import pytest

from audioeval.audio import (
    AudioRef,
    probe_wav,
    read_wav,
    resample,
    resolve_audio,
    write_wav,
)
from audioeval.errors import DecodeError, FetchError


def sine(freq: float, rate: int, seconds: float = 1.0) -> np.ndarray:
    t = np.arange(int(rate * seconds)) / rate
    return 0.5 * np.sin(2 * np.pi * freq * t)


class TestAudioRef:
    def test_rejects_empty_location(self):
        with pytest.raises(ValueError):
            AudioRef(location="")

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            AudioRef(location="x.wav", sample_rate=0)

    def test_rejects_bad_channels(self):
        with pytest.raises(ValueError):
            AudioRef(location="x.wav", channels=0)


class TestProbe:
    def test_probe_fixture_header(self, tmp_path):
        path = tmp_path / "one_second.wav"
        write_wav(path, np.zeros(16000), 16000)
        ref = probe_wav(path)
        assert (ref.sample_rate, ref.channels, ref.duration) == (16000, 1, 1.0)
        assert ref.format_tag == "wav/pcm16"

    def test_truncated_header_is_decode_error(self, tmp_path):
        path = tmp_path / "broken.wav"
        path.write_bytes(b"RIFF\x00\x00")
        with pytest.raises(DecodeError):
            probe_wav(path)

    def test_non_wav_is_decode_error(self, tmp_path):
        path = tmp_path / "noise.mp3"
        path.write_bytes(b"\xff\xfbnot really audio")
        with pytest.raises(DecodeError) as exc:
            probe_wav(path)
        assert exc.value.format_tag == "mp3"


class TestResolveAudio:
    def test_local_file_probed_in_place(self, tmp_path):
        path = tmp_path / "a.wav"
        write_wav(path, np.zeros(8000), 16000)
        ref = resolve_audio(AudioRef(location=str(path)), tmp_path / "cache")
        assert ref.sample_rate == 16000
        assert ref.duration == pytest.approx(0.5)

    def test_missing_local_file(self, tmp_path):
        with pytest.raises(FetchError):
            resolve_audio(AudioRef(location=str(tmp_path / "nope.wav")),
                          tmp_path / "cache")

    def test_remote_fetch_cached_once(self, tmp_path):
        wav_path = tmp_path / "served.wav"
        write_wav(wav_path, sine(440, 16000, 0.25), 16000)
        payload = wav_path.read_bytes()
        hits = []

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_GET(self):
                hits.append(self.path)
                self.send_response(200)
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        threading.Thread(target=server.serve_forever, daemon=True).start()
        try:
            uri = f"http://127.0.0.1:{server.server_address[1]}/clip.wav"
            cache = tmp_path / "cache"
            first = resolve_audio(AudioRef(location=uri), cache)
            assert first.sample_rate == 16000
            second = resolve_audio(AudioRef(location=uri), cache)
            assert second == first
            assert len(hits) == 1, "second resolve must hit the cache"
        finally:
            server.shutdown()

    def test_unreachable_uri(self, tmp_path):
        with pytest.raises(FetchError):
            resolve_audio(AudioRef(location="http://127.0.0.1:1/clip.wav"),
                          tmp_path / "cache")


class TestResample:
    def test_same_rate_is_passthrough(self, tmp_path):
        path = tmp_path / "a.wav"
        original = write_wav(path, sine(440, 16000), 16000)
        result = resample(original, 16000)
        assert result.location == original.location  # no copy at all

    def test_silence_resamples_to_exact_silence(self, tmp_path):
        path = tmp_path / "sil.wav"
        ref = write_wav(path, np.zeros(48000), 48000)
        out = resample(ref, 16000, out_dir=tmp_path)
        samples, rate = read_wav(out.path)
        assert rate == 16000
        assert samples.shape[0] == 16000
        assert np.all(samples == 0.0)

    def test_sine_dominant_bin_preserved(self, tmp_path):
        path = tmp_path / "sine.wav"
        ref = write_wav(path, sine(440, 48000), 48000)
        out = resample(ref, 16000, out_dir=tmp_path)
        samples, rate = read_wav(out.path)
        x = samples[:, 0]
        spectrum = np.abs(np.fft.rfft(x * np.hanning(len(x))))
        peak_hz = np.argmax(spectrum) * rate / len(x)
        bin_width = rate / len(x)
        assert abs(peak_hz - 440.0) <= bin_width

    def test_duration_preserved_within_one_sample(self, tmp_path):
        path = tmp_path / "odd.wav"
        ref = write_wav(path, np.zeros(44100 + 37), 44100)
        out = resample(ref, 16000, out_dir=tmp_path)
        expected = (44100 + 37) / 44100
        assert abs(out.duration - expected) <= 1.0 / 16000

    def test_upsampling_roundtrip_keeps_tone(self, tmp_path):
        path = tmp_path / "up.wav"
        ref = write_wav(path, sine(440, 16000), 16000)
        up = resample(ref, 48000, out_dir=tmp_path)
        samples, rate = read_wav(up.path)
        assert rate == 48000 and samples.shape[0] == 48000
        x = samples[:, 0]
        spectrum = np.abs(np.fft.rfft(x * np.hanning(len(x))))
        peak_hz = np.argmax(spectrum) * rate / len(x)
        assert abs(peak_hz - 440.0) <= rate / len(x)
