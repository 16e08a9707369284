"""Render beat grids to an audible click track and write 16-bit WAV files."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .pose import BeatGrid

CLICK_FREQ_HZ = 1000.0
CLICK_LEN_S = 0.030
CLICK_DECAY_S = 0.006
PEAK = 0.9


@dataclass
class Waveform:
    sample_rate: int
    samples: np.ndarray  # mono, values in [-1, 1]


def render_clicks(beats: BeatGrid, duration_s: float, sample_rate: int = 44100) -> Waveform:
    """Exponentially decaying 1 kHz sine bursts at each beat time,
    overlap-added and peak-normalized to 0.9."""
    n = int(round(duration_s * sample_rate))
    out = np.zeros(n)
    burst_n = int(round(CLICK_LEN_S * sample_rate))
    t = np.arange(burst_n) / sample_rate
    burst = np.exp(-t / CLICK_DECAY_S) * np.sin(2 * math.pi * CLICK_FREQ_HZ * t)
    for f in beats.beat_frames:
        t0 = f / beats.fps
        if t0 > duration_s:
            raise ConfigError(f"beat at {t0:.3f}s lies beyond the {duration_s}s render window")
        s0 = int(round(t0 * sample_rate))
        seg = min(burst_n, n - s0)
        out[s0:s0 + seg] += burst[:seg]
    peak = np.abs(out).max()
    if peak > 0:
        out *= PEAK / peak
    return Waveform(sample_rate=sample_rate, samples=out)


def write_wav(w: Waveform, path) -> None:
    """Canonical 44-byte RIFF/WAVE header, PCM 16-bit mono little-endian."""
    q = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    data = q.tobytes()
    hdr = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(data), b"WAVE",
        b"fmt ", 16, 1, 1, w.sample_rate, w.sample_rate * 2, 2, 16,
        b"data", len(data),
    )
    with open(path, "wb") as f:
        f.write(hdr + data)


def read_wav_header(path) -> dict:
    """Parse back the fixed header fields (round-trip checks)."""
    with open(path, "rb") as f:
        raw = f.read(44)
    fields = struct.unpack("<4sI4s4sIHHIIHH4sI", raw)
    return {
        "riff": fields[0], "wave": fields[2], "audio_format": fields[5],
        "channels": fields[6], "sample_rate": fields[7],
        "bits_per_sample": fields[10], "data_bytes": fields[12],
    }
