"""Speaker audio: synthetic utterances, utterance pools, WAV I/O and pitch shifting.

Synthetic speakers stand in for recorded speech. Each utterance is a
harmonic complex at a slightly jittered fundamental, shaped by the speaker's
harmonic envelope and a slow amplitude modulation that mimics syllable
rhythm. Clips are stored as float32 to keep large pools affordable.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, InvalidInputError

DEFAULT_SAMPLE_RATE = 48000
PEAK_LEVEL = 0.9
EDGE_SILENCE_S = 0.05
FADE_S = 0.01
AM_DEPTH = 0.6
DURATION_RANGE_S = (1.0, 4.0)


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1 or samples.size == 0:
            raise InvalidInputError("AudioClip samples must be a non-empty 1-D array")
        if self.sample_rate <= 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)) or np.max(np.abs(samples)) > 1.0:
            raise InvalidInputError("AudioClip samples must be finite and lie in [-1, 1]")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    f0: float
    harmonic_gains: tuple[float, ...]
    am_rate: float = 4.0
    jitter_pct: float = 0.03

    def validate(self) -> None:
        """Raise InvalidInputError naming the first violated field."""
        if not self.f0 > 0:
            raise InvalidInputError(f"f0 must be > 0, got {self.f0}", field="f0")
        if not self.am_rate >= 0:
            raise InvalidInputError(f"am_rate must be >= 0, got {self.am_rate}", field="am_rate")
        if not 0 <= self.jitter_pct < 0.5:
            raise InvalidInputError(f"jitter_pct must lie in [0, 0.5), got {self.jitter_pct}", field="jitter_pct")
        gains = np.asarray(self.harmonic_gains, dtype=float)
        if gains.ndim != 1 or gains.size == 0 or np.any(gains < 0) or not np.any(gains > 0):
            raise InvalidInputError("harmonic_gains must be non-negative with at least one > 0", field="harmonic_gains")


# Two low voices and one high voice with clearly separated spectral envelopes.
DEFAULT_PROFILES: tuple[SpeakerProfile, ...] = (
    SpeakerProfile("male_low", 110.0, (1.0, 0.8, 0.6, 0.4, 0.2, 0.1), am_rate=4.0),
    SpeakerProfile("male_mid", 150.0, (0.2, 0.4, 1.0, 0.9, 0.6, 0.3, 0.1), am_rate=5.0),
    SpeakerProfile("female", 220.0, (0.3, 0.5, 0.7, 1.0, 0.9, 0.7, 0.5, 0.3), am_rate=6.0),
)


def synth_utterance(profile: SpeakerProfile, duration_s: float, seed: int,
                    sample_rate: int = DEFAULT_SAMPLE_RATE) -> AudioClip:
    """Synthesize one utterance; identical arguments give bit-identical output."""
    profile.validate()
    if not 0.5 <= duration_s <= 10.0:
        raise InvalidInputError(f"duration_s must lie in [0.5, 10], got {duration_s}")
    rng = np.random.default_rng(seed)
    f0 = profile.f0 * (1.0 + profile.jitter_pct * rng.uniform(-1.0, 1.0))
    phases = rng.uniform(0.0, 2 * np.pi, size=len(profile.harmonic_gains))
    am_phase = rng.uniform(0.0, 2 * np.pi)

    n_total = int(round(duration_s * sample_rate))
    n_edge = int(round(EDGE_SILENCE_S * sample_rate))
    n_body = n_total - 2 * n_edge
    t = np.arange(n_body) / sample_rate

    body = np.zeros(n_body)
    for k, (gain, phase) in enumerate(zip(profile.harmonic_gains, phases), start=1):
        if gain == 0 or k * f0 >= sample_rate / 2:
            continue
        body += gain * np.sin(2 * np.pi * k * f0 * t + phase)
    if profile.am_rate > 0:
        body *= 1.0 - AM_DEPTH * 0.5 * (1.0 - np.cos(2 * np.pi * profile.am_rate * t + am_phase))

    n_fade = min(int(round(FADE_S * sample_rate)), n_body // 2)
    if n_fade > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(n_fade) / n_fade)
        body[:n_fade] *= ramp
        body[n_body - n_fade:] *= ramp[::-1]

    peak = np.max(np.abs(body))
    if peak == 0:
        raise InvalidInputError("profile produces silence at this sample rate")
    samples = np.zeros(n_total, dtype=np.float32)
    samples[n_edge:n_edge + n_body] = body * (PEAK_LEVEL / peak)
    return AudioClip(samples, sample_rate)


@dataclass(frozen=True, eq=False)
class UtterancePool:
    speaker_id: str
    clips: tuple[AudioClip, ...]
    partition: str = "train"
    # Provenance for manifests: ("seed", seed, duration) or ("path", path).
    sources: tuple[tuple, ...] = field(default=(), repr=False)

    def __post_init__(self):
        object.__setattr__(self, "clips", tuple(self.clips))
        object.__setattr__(self, "sources", tuple(self.sources))
        if not self.clips:
            raise InvalidInputError(f"pool for {self.speaker_id!r} is empty")
        if self.partition not in ("train", "test"):
            raise InvalidInputError(f"partition must be 'train' or 'test', got {self.partition!r}")
        rates = {clip.sample_rate for clip in self.clips}
        if len(rates) != 1:
            raise InvalidInputError(f"pool clips have mixed sample rates {sorted(rates)}")

    def __len__(self) -> int:
        return len(self.clips)

    @property
    def sample_rate(self) -> int:
        return self.clips[0].sample_rate


def utterance_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed & 0xFFFFFFFFFFFFFFFF, index]).generate_state(1, np.uint64)[0])


def utterance_duration(seed: int) -> float:
    # Separate stream from the synthesis stream so durations don't correlate with jitter.
    rng = np.random.default_rng([seed, 1])
    return float(rng.uniform(*DURATION_RANGE_S))


def build_pools(profile: SpeakerProfile, n_train: int, n_test: int, seed: int,
                sample_rate: int = DEFAULT_SAMPLE_RATE) -> tuple[UtterancePool, UtterancePool]:
    """Synthesize disjoint train/test pools from one master seed."""
    if n_train < 1 or n_test < 1:
        raise InvalidInputError(f"n_train and n_test must be >= 1, got {n_train}, {n_test}")
    pools = []
    for partition, indices in (("train", range(n_train)), ("test", range(n_train, n_train + n_test))):
        sources = []
        clips = []
        for i in indices:
            s = utterance_seed(seed, i)
            d = utterance_duration(s)
            sources.append(("seed", s, d))
            clips.append(synth_utterance(profile, d, s, sample_rate))
        pools.append(UtterancePool(profile.speaker_id, clips, partition, sources))
    return pools[0], pools[1]


def next_utterance(pool: UtterancePool, rng: np.random.Generator) -> int:
    """Index of a uniformly drawn clip; repeats are allowed."""
    if len(pool.clips) == 0:
        raise InvalidInputError("cannot draw from an empty pool")
    return int(rng.integers(len(pool.clips)))


def pitch_shift(clip: AudioClip, factor: float) -> AudioClip:
    """Scale pitch by `factor` via linear-interpolation resampling.

    Duration scales by 1/factor; the output has floor(len/factor) samples.
    """
    if not 0.5 <= factor <= 2.0:
        raise InvalidInputError(f"pitch factor must lie in [0.5, 2.0], got {factor}")
    x = clip.samples
    if factor == 1.0:
        return AudioClip(x.copy(), clip.sample_rate)
    n_out = max(1, math.floor(x.size / factor))
    positions = np.arange(n_out) * factor
    y = np.interp(positions, np.arange(x.size), x).astype(x.dtype)
    return AudioClip(y, clip.sample_rate)


def resample(samples: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    if src_rate == dst_rate:
        return samples
    n_out = max(1, math.floor(samples.size * dst_rate / src_rate))
    positions = np.arange(n_out) * (src_rate / dst_rate)
    return np.interp(positions, np.arange(samples.size), samples)


# --- WAV I/O ----------------------------------------------------------------

_PCM = 1
_IEEE_FLOAT = 3
_EXTENSIBLE = 0xFFFE


def save_wav(clip: AudioClip, path, encoding: str = "pcm16") -> None:
    """Write a mono RIFF/WAVE file as 16-bit PCM or 32-bit IEEE float."""
    if encoding == "pcm16":
        data = np.clip(np.round(np.asarray(clip.samples, dtype=np.float64) * 32768.0), -32768, 32767).astype("<i2").tobytes()
        fmt_tag, bits = _PCM, 16
    elif encoding == "float32":
        data = np.asarray(clip.samples, dtype="<f4").tobytes()
        fmt_tag, bits = _IEEE_FLOAT, 32
    else:
        raise InvalidInputError(f"unsupported encoding {encoding!r}")
    block_align = bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, 1, clip.sample_rate,
                      clip.sample_rate * block_align, block_align, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
    if len(data) % 2:
        body += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def load_wav(path, sample_rate: int | None = None) -> AudioClip:
    """Read a mono PCM16 or float32 WAV file.

    If `sample_rate` is given and differs from the file's rate, the audio is
    resampled by linear interpolation.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError("RIFF header", "file shorter than 12 bytes")
    if raw[:4] != b"RIFF":
        raise FormatError("RIFF chunk id", f"expected b'RIFF', got {raw[:4]!r}")
    if raw[8:12] != b"WAVE":
        raise FormatError("RIFF form type", f"expected b'WAVE', got {raw[8:12]!r}")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos:pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        payload = raw[pos + 8:pos + 8 + size]
        if len(payload) < size:
            raise FormatError(f"{chunk_id.decode('latin-1')!r} chunk size",
                              f"declares {size} bytes, only {len(payload)} present")
        if chunk_id == b"fmt ":
            fmt = payload
        elif chunk_id == b"data":
            data = payload
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise FormatError("fmt chunk", "missing")
    if data is None:
        raise FormatError("data chunk", "missing")
    if len(fmt) < 16:
        raise FormatError("fmt chunk size", f"expected >= 16 bytes, got {len(fmt)}")

    fmt_tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if fmt_tag == _EXTENSIBLE and len(fmt) >= 26:
        (fmt_tag,) = struct.unpack_from("<H", fmt, 24)
    if channels != 1:
        raise FormatError("channels", f"only mono is supported, got {channels}")
    if rate == 0:
        raise FormatError("sample_rate", "must be positive")
    if fmt_tag == _PCM and bits == 16:
        samples = np.frombuffer(data[:len(data) - len(data) % 2], dtype="<i2").astype(np.float32) / 32768.0
    elif fmt_tag == _IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(data[:len(data) - len(data) % 4], dtype="<f4").astype(np.float32)
    else:
        raise FormatError("audio format", f"unsupported format tag {fmt_tag} with {bits} bits per sample")
    if samples.size == 0:
        raise FormatError("data chunk", "contains no samples")
    if sample_rate is not None and sample_rate != rate:
        samples = resample(samples, rate, sample_rate).astype(np.float32)
        rate = sample_rate
    return AudioClip(np.clip(samples, -1.0, 1.0), rate)


# --- pool manifests ---------------------------------------------------------

MANIFEST_HEADER = "# audionav pool manifest v1"


def write_manifest(pools: Sequence[UtterancePool], path) -> None:
    """Write a tab-separated index: speaker_id, partition, source.

    Sources are ``seed:<int>:<duration>`` for synthesized clips or
    ``path:<file>`` for clips loaded from WAV.
    """
    lines = [MANIFEST_HEADER, "# speaker_id\tpartition\tsource"]
    for pool in pools:
        if len(pool.sources) != len(pool.clips):
            raise InvalidInputError(f"pool {pool.speaker_id!r} has no provenance to write")
        for source in pool.sources:
            if source[0] == "seed":
                entry = f"seed:{source[1]}:{source[2]!r}"
            else:
                entry = f"path:{source[1]}"
            lines.append(f"{pool.speaker_id}\t{pool.partition}\t{entry}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path, profiles: Sequence[SpeakerProfile],
                  sample_rate: int = DEFAULT_SAMPLE_RATE) -> dict[str, dict[str, UtterancePool]]:
    """Rebuild pools from a manifest: {speaker_id: {partition: pool}}."""
    path = Path(path)
    by_id = {p.speaker_id: p for p in profiles}
    entries: dict[tuple[str, str], list[tuple]] = {}
    text = path.read_text().splitlines()
    if not text or text[0].strip() != MANIFEST_HEADER:
        raise FormatError("manifest header", f"expected {MANIFEST_HEADER!r}")
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"manifest line {lineno}", "expected 3 tab-separated fields")
        speaker_id, partition, entry = parts
        kind, _, rest = entry.partition(":")
        if kind == "seed":
            seed_s, _, dur_s = rest.partition(":")
            try:
                source = ("seed", int(seed_s), float(dur_s))
            except ValueError:
                raise FormatError(f"manifest line {lineno}", f"bad seed entry {entry!r}") from None
        elif kind == "path":
            source = ("path", rest)
        else:
            raise FormatError(f"manifest line {lineno}", f"unknown source kind {kind!r}")
        entries.setdefault((speaker_id, partition), []).append(source)

    result: dict[str, dict[str, UtterancePool]] = {}
    for (speaker_id, partition), sources in entries.items():
        clips = []
        for source in sources:
            if source[0] == "seed":
                if speaker_id not in by_id:
                    raise FormatError("speaker_id", f"no profile for synthesized speaker {speaker_id!r}")
                clips.append(synth_utterance(by_id[speaker_id], source[2], source[1], sample_rate))
            else:
                wav = Path(source[1])
                if not wav.is_absolute():
                    wav = path.parent / wav
                clips.append(load_wav(wav, sample_rate))
        result.setdefault(speaker_id, {})[partition] = UtterancePool(speaker_id, clips, partition, sources)
    return result
