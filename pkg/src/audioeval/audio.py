"""Audio references: probing, fetching/caching, and sample-rate normalization.

Only RIFF/WAVE PCM (8/16-bit, any rate) is decoded natively; anything else
must be pre-converted or handled by an adapter.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
import urllib.error
import urllib.request
import wave
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DecodeError, FetchError

RESAMPLE_TAPS = 64  # windowed-sinc kernel length, fixed for reproducibility


@dataclass(frozen=True)
class AudioRef:
    """Reference to an audio resource, local or remote.

    Header metadata is None until the resource has been probed by
    :func:`resolve_audio`.
    """

    location: str
    sample_rate: int | None = None
    channels: int | None = None
    duration: float | None = None
    format_tag: str | None = None

    def __post_init__(self):
        if not self.location:
            raise ValueError("AudioRef.location must be non-empty")
        if self.sample_rate is not None and self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.channels is not None and self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")
        if self.duration is not None and self.duration < 0:
            raise ValueError(f"duration must be >= 0, got {self.duration}")

    @property
    def is_remote(self) -> bool:
        return self.location.startswith(("http://", "https://"))

    @property
    def path(self) -> Path:
        if self.is_remote:
            raise ValueError(f"{self.location} is not local")
        loc = self.location
        if loc.startswith("file://"):
            loc = loc[len("file://"):]
        return Path(loc)


def probe_wav(path: str | Path) -> AudioRef:
    """Read container header metadata without decoding samples."""
    try:
        with wave.open(str(path), "rb") as wav:
            rate = wav.getframerate()
            channels = wav.getnchannels()
            frames = wav.getnframes()
            width = wav.getsampwidth()
    except (wave.Error, EOFError) as exc:
        raise DecodeError(f"cannot read WAV header of {path}: {exc}",
                          format_tag=Path(path).suffix.lstrip(".") or "unknown") from exc
    return AudioRef(
        location=str(path),
        sample_rate=rate,
        channels=channels,
        duration=frames / rate if rate else 0.0,
        format_tag=f"wav/pcm{8 * width}",
    )


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Decode a PCM WAV into float samples in [-1, 1), shape (frames, channels)."""
    try:
        with wave.open(str(path), "rb") as wav:
            rate = wav.getframerate()
            channels = wav.getnchannels()
            width = wav.getsampwidth()
            raw = wav.readframes(wav.getnframes())
    except (wave.Error, EOFError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}",
                          format_tag=Path(path).suffix.lstrip(".") or "unknown") from exc
    if width == 2:
        samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif width == 1:
        samples = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    else:
        raise DecodeError(f"unsupported PCM width {8 * width} bits in {path}",
                          format_tag=f"wav/pcm{8 * width}")
    return samples.reshape(-1, channels), rate


def write_wav(path: str | Path, samples: np.ndarray, rate: int) -> AudioRef:
    """Write float samples in [-1, 1] as 16-bit PCM."""
    if samples.ndim == 1:
        samples = samples[:, None]
    clipped = np.clip(samples, -1.0, 1.0 - 1.0 / 32768.0)
    pcm = (clipped * 32768.0).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(samples.shape[1])
        wav.setsampwidth(2)
        wav.setframerate(rate)
        wav.writeframes(pcm.tobytes())
    return AudioRef(
        location=str(path),
        sample_rate=rate,
        channels=samples.shape[1],
        duration=samples.shape[0] / rate,
        format_tag="wav/pcm16",
    )


def _cache_path(cache_dir: Path, uri: str) -> Path:
    digest = hashlib.sha256(uri.encode("utf-8")).hexdigest()
    suffix = Path(uri.split("?", 1)[0]).suffix or ".audio"
    return cache_dir / f"{digest}{suffix}"


def resolve_audio(ref: AudioRef, cache_dir: str | Path) -> AudioRef:
    """Materialize a reference locally and fill in header metadata.

    Remote URIs are fetched once into ``cache_dir``, keyed by a digest of the
    URI string; the fetch downloads to a temp file and renames it into place,
    so concurrent resolution of the same ref is race-free. Local refs are
    probed in place.
    """
    cache_dir = Path(cache_dir)
    if ref.is_remote:
        cache_dir.mkdir(parents=True, exist_ok=True)
        target = _cache_path(cache_dir, ref.location)
        if not target.exists():
            fd, tmp = tempfile.mkstemp(dir=cache_dir, prefix=".fetch-")
            try:
                with os.fdopen(fd, "wb") as out:
                    with urllib.request.urlopen(ref.location, timeout=60) as resp:
                        while chunk := resp.read(65536):
                            out.write(chunk)
                os.replace(tmp, target)
            except (urllib.error.URLError, OSError, TimeoutError) as exc:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise FetchError(f"cannot fetch {ref.location}: {exc}") from exc
        probed = probe_wav(target)
        return replace(probed, location=str(target))

    path = ref.path
    if not path.exists():
        raise FetchError(f"audio file not found: {path}")
    return probe_wav(path)


def _sinc_kernel_apply(samples: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    """Windowed-sinc interpolation of one channel onto the target rate grid.

    The kernel spans RESAMPLE_TAPS input samples (half each side), Hann
    windowed, with the cutoff scaled to the lower of the two Nyquist rates.
    """
    ratio = dst_rate / src_rate
    n_out = int(round(len(samples) * ratio))
    half = RESAMPLE_TAPS // 2
    cutoff = min(1.0, ratio)

    positions = np.arange(n_out) / ratio  # output sample centers in input coords
    base = np.floor(positions).astype(np.int64)
    offsets = np.arange(-half + 1, half + 1)
    idx = base[:, None] + offsets[None, :]
    frac = positions[:, None] - idx

    kernel = cutoff * np.sinc(cutoff * frac)
    window = 0.5 + 0.5 * np.cos(np.pi * frac / half)
    kernel *= np.where(np.abs(frac) <= half, window, 0.0)

    padded = np.pad(samples, (half, half))
    gathered = padded[np.clip(idx + half, 0, len(padded) - 1)]
    return np.sum(gathered * kernel, axis=1)


def resample(ref: AudioRef, target_rate: int, out_dir: str | Path | None = None) -> AudioRef:
    """Return audio at ``target_rate``; matching rates pass through untouched.

    Duration is preserved within one sample period. Output is written as
    16-bit PCM next to the source unless ``out_dir`` is given.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    probed = ref if ref.sample_rate is not None else probe_wav(ref.path)
    if probed.sample_rate == target_rate:
        return probed

    samples, rate = read_wav(probed.path)
    out = np.stack(
        [_sinc_kernel_apply(samples[:, ch], rate, target_rate)
         for ch in range(samples.shape[1])],
        axis=1,
    )
    src = probed.path
    directory = Path(out_dir) if out_dir is not None else src.parent
    directory.mkdir(parents=True, exist_ok=True)
    out_path = directory / f"{src.stem}.{target_rate}hz.wav"
    return write_wav(out_path, out, target_rate)
