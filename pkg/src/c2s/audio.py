"""Audio ingestion: PCM WAV decoding, Hann ramps and RMS level normalization.

Levels are expressed in dB relative to ``REF_AMPLITUDE`` model units. The
basilar-membrane stage is linear and is calibrated against a reference tone,
so only level differences matter downstream.
"""

import dataclasses
import math
import wave
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ClipTooShort, DecodeError, SilentClip, UnsupportedFormat

REF_AMPLITUDE = 1e-4
LANGUAGES = ("english", "german", "n/a")


@dataclass(frozen=True)
class ClipMeta:
    gender: Optional[str] = None
    age: Optional[float] = None
    body_height: Optional[float] = None


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: float
    label: int = 0
    speaker_id: int = -1
    language: str = "n/a"
    source_path: str = ""
    meta: Optional[ClipMeta] = field(default=None, compare=False)

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.language not in LANGUAGES:
            raise ValueError(f"unknown language {self.language!r}")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate

    def with_samples(self, samples):
        return dataclasses.replace(self, samples=samples)


def _pcm_to_float(raw, sampwidth, n_channels):
    if sampwidth == 1:
        data = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0
    elif sampwidth == 2:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    elif sampwidth == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        data = v.astype(np.float64)
    elif sampwidth == 4:
        data = np.frombuffer(raw, dtype="<i4").astype(np.float64)
    else:
        raise UnsupportedFormat(f"unsupported sample width {sampwidth} bytes")
    full_scale = float(1 << (8 * sampwidth - 1))
    data = data / full_scale
    if n_channels > 1:
        data = data.reshape(-1, n_channels)[:, 0]
    return data


def decode_wav(path, label=0, speaker_id=-1, language="n/a"):
    """Decode a PCM WAV file into an AudioClip with samples in [-1, 1].

    Multi-channel files contribute their first channel only.
    """
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedFormat(f"{path}: {msg}") from exc
        raise DecodeError(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise DecodeError(f"{path}: truncated header") from exc
    if rate <= 0:
        raise DecodeError(f"{path}: invalid sample rate {rate}")
    usable = len(raw) - len(raw) % (sampwidth * n_channels)
    samples = _pcm_to_float(raw[:usable], sampwidth, n_channels)
    return AudioClip(samples, float(rate), label, speaker_id, language, str(path))


def encode_wav(path, samples, sample_rate, sampwidth=2):
    """Write mono PCM samples in [-1, 1] to ``path`` (inverse of decode_wav)."""
    full_scale = float(1 << (8 * sampwidth - 1))
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    ints = np.clip(np.round(x * full_scale), -full_scale, full_scale - 1).astype(np.int64)
    if sampwidth == 1:
        raw = (ints + 128).astype(np.uint8).tobytes()
    elif sampwidth == 2:
        raw = ints.astype("<i2").tobytes()
    elif sampwidth == 3:
        u = ints & 0xFFFFFF
        raw = np.stack([u & 0xFF, (u >> 8) & 0xFF, (u >> 16) & 0xFF], axis=1).astype(np.uint8).tobytes()
    elif sampwidth == 4:
        raw = ints.astype("<i4").tobytes()
    else:
        raise UnsupportedFormat(f"unsupported sample width {sampwidth} bytes")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(sampwidth)
        wf.setframerate(int(round(sample_rate)))
        wf.writeframes(raw)


def ramp_length(ramp, sample_rate):
    # round first so 0.030 * 16000 is 480, not 481
    return int(math.ceil(round(ramp * sample_rate, 9)))


def apply_hann_ramps(clip, ramp=0.030):
    """Fade in and out with the rising and falling halves of a Hann window."""
    n = ramp_length(ramp, clip.sample_rate)
    x = np.array(clip.samples, dtype=np.float64)
    if len(x) < 2 * n:
        raise ClipTooShort(f"clip of {len(x)} samples is shorter than two {n}-sample ramps")
    if n == 0:
        return clip.with_samples(x)
    rise = 0.5 * (1.0 - np.cos(np.pi * np.arange(n) / n))
    x[:n] *= rise
    x[len(x) - n:] *= rise[::-1]
    return clip.with_samples(x)


def rms(x):
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


def level_to_rms(level_db, ref=REF_AMPLITUDE):
    return ref * 10.0 ** (level_db / 20.0)


def normalize_rms_db(clip, level_db=65.0, ref=REF_AMPLITUDE):
    """Scale the clip linearly so its RMS equals ``ref * 10**(level_db/20)``."""
    r = rms(clip.samples)
    if r == 0.0:
        raise SilentClip("cannot normalize an all-zero clip")
    return clip.with_samples(np.asarray(clip.samples, dtype=np.float64) * (level_to_rms(level_db, ref) / r))


def tone(freq, duration, sample_rate, level_db=None):
    """Sine tone, optionally normalized to ``level_db``."""
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    clip = AudioClip(np.sin(2 * np.pi * freq * t), float(sample_rate))
    return normalize_rms_db(clip, level_db) if level_db is not None else clip


def preprocess(clip, level_db=65.0, ramp=0.030):
    """Ramps first, then level normalization."""
    return normalize_rms_db(apply_hann_ramps(clip, ramp), level_db)
