"""Waveform I/O, resampling, snippet extraction, SNR-controlled mixing, and
synthetic corpus generation for desk-scale experiments."""

from __future__ import annotations

import json
import math
import wave as _wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .errors import ContractError, UnsupportedWavError, WavFormatError

__all__ = [
    "Waveform",
    "MixSpec",
    "read_wav",
    "write_wav",
    "resample",
    "snippet",
    "mix_at_snr",
    "synth_corpus",
    "load_manifest",
    "write_manifest",
    "CORPUS_KINDS",
]

_PCM_SCALE = 32768.0


@dataclass
class Waveform:
    """Mono sample sequence (nominally in [-1, 1]) plus its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ContractError(f"waveform samples must be 1-d, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ContractError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ContractError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def energy(self) -> float:
        return float(np.dot(self.samples, self.samples))

    def copy(self) -> "Waveform":
        return Waveform(self.samples.copy(), self.sample_rate)


@dataclass
class MixSpec:
    """How to mix: which source is the SNR reference and the target SNR."""

    reference_index: int = 0
    snr_db: float = 0.0


def read_wav(path) -> Waveform:
    """Read a 16-bit PCM WAV file; stereo is averaged down to mono."""
    try:
        with _wave.open(str(path), "rb") as wav:
            channels = wav.getnchannels()
            width = wav.getsampwidth()
            rate = wav.getframerate()
            raw = wav.readframes(wav.getnframes())
    except _wave.Error as exc:
        if "unknown format" in str(exc):
            raise UnsupportedWavError(f"{path}: {exc}") from exc
        raise WavFormatError(f"{path}: {exc}") from exc
    except EOFError as exc:
        raise WavFormatError(f"{path}: truncated header") from exc
    if width != 2:
        raise UnsupportedWavError(f"{path}: only 16-bit PCM supported, got {8 * width}-bit")
    if channels not in (1, 2):
        raise UnsupportedWavError(f"{path}: only mono/stereo supported, got {channels} channels")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / _PCM_SCALE
    if channels == 2:
        data = data.reshape(-1, 2).mean(axis=1)
    return Waveform(data, rate)


def write_wav(path, w: Waveform) -> float:
    """Write a mono 16-bit PCM little-endian RIFF file.

    Samples with peak above 1.0 are normalized to full scale first so the
    quantizer never hard-clips; the applied gain is returned (1.0 when no
    normalization happened) so callers can undo it.
    """
    samples = w.samples
    peak = float(np.max(np.abs(samples))) if len(samples) else 0.0
    gain = 1.0 if peak <= 1.0 else 1.0 / peak
    quantized = np.clip(np.rint(samples * (gain * _PCM_SCALE)), -32768, 32767).astype("<i2")
    with _wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(w.sample_rate)
        wav.writeframes(quantized.tobytes())
    return gain


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Polyphase resampling with a Kaiser-windowed sinc filter.

    Output length is round(len * target / source); a same-rate call is the
    identity (modulo a defensive copy).
    """
    if target_rate <= 0:
        raise ContractError(f"target rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return w.copy()
    g = math.gcd(int(target_rate), int(w.sample_rate))
    up, down = target_rate // g, w.sample_rate // g
    out = resample_poly(w.samples, up, down, window=("kaiser", 8.6), padtype="line")
    want = int(round(len(w.samples) * target_rate / w.sample_rate))
    if len(out) > want:
        out = out[:want]
    elif len(out) < want:
        out = np.pad(out, (0, want - len(out)), mode="edge")
    return Waveform(out, target_rate)


def snippet(w: Waveform, seconds: float, seed: int) -> Waveform:
    """Cut a random full-length window, offset uniform over valid positions."""
    n = int(round(seconds * w.sample_rate))
    if n < 1:
        raise ContractError(f"snippet of {seconds} s is empty at {w.sample_rate} Hz")
    if len(w.samples) < n:
        raise ContractError(
            f"waveform of {len(w.samples)} samples too short for a {n}-sample snippet")
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, len(w.samples) - n + 1))
    return Waveform(w.samples[offset:offset + n].copy(), w.sample_rate)


def mix_at_snr(sources: list[Waveform], spec: MixSpec) -> tuple[Waveform, list[Waveform]]:
    """Scale the non-reference sources by a common factor so that
    10*log10(E_ref / E_interference) equals ``spec.snr_db`` exactly, then sum.

    Returns the mixture and the scaled sources (original order, reference
    untouched) as ground truth for scoring.
    """
    if len(sources) < 2:
        raise ContractError("mixing needs at least two sources")
    if not 0 <= spec.reference_index < len(sources):
        raise ContractError(f"reference index {spec.reference_index} out of range")
    rate = sources[0].sample_rate
    length = len(sources[0])
    for s in sources[1:]:
        if s.sample_rate != rate:
            raise ContractError("all sources must share one sample rate")
        if len(s) != length:
            raise ContractError("all sources must have equal length")
    ref = sources[spec.reference_index]
    ref_energy = ref.energy()
    if ref_energy == 0.0:
        raise ContractError("reference source is silent")
    interference = np.zeros(length)
    for i, s in enumerate(sources):
        if i != spec.reference_index:
            interference += s.samples
    int_energy = float(np.dot(interference, interference))
    if int_energy == 0.0:
        raise ContractError("interfering sources are silent; SNR is undefined")
    alpha = math.sqrt(ref_energy / (10.0 ** (spec.snr_db / 10.0) * int_energy))
    scaled = [s.copy() if i == spec.reference_index else Waveform(alpha * s.samples, rate)
              for i, s in enumerate(sources)]
    mixture = Waveform(np.sum([s.samples for s in scaled], axis=0), rate)
    return mixture, scaled


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

CORPUS_KINDS = ("tonal", "filtered_noise", "chirp")
_ITEM_SECONDS = 8.0

# Band allocation relative to Nyquist keeps the three source kinds spectrally
# disjoint at any sample rate, which is what makes desk-scale separation
# learnable with small models.
_TONAL_F0 = (0.020, 0.048)      # fundamentals
_TONAL_TOP = 0.33               # highest harmonic allowed
_CHIRP_BAND = (0.36, 0.54)
_NOISE_BAND = (0.58, 0.93)


def _envelope(n: int, rate: int, rng: np.random.Generator) -> np.ndarray:
    """Slow amplitude modulation in [0.3, 1.0]."""
    t = np.arange(n) / rate
    freq = rng.uniform(0.2, 0.8)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    return 0.65 + 0.35 * np.sin(2.0 * np.pi * freq * t + phase)


def _normalize(x: np.ndarray, peak: float = 0.7) -> np.ndarray:
    top = np.max(np.abs(x))
    return x * (peak / top) if top > 0 else x


def _tonal_item(n: int, rate: int, rng: np.random.Generator) -> np.ndarray:
    nyq = rate / 2.0
    f0 = rng.uniform(_TONAL_F0[0] * nyq, _TONAL_F0[1] * nyq)
    t = np.arange(n) / rate
    drift_rate = rng.uniform(0.1, 0.5)
    drift = 1.0 + 0.02 * np.sin(2.0 * np.pi * drift_rate * t + rng.uniform(0, 2 * np.pi))
    inst_freq = f0 * drift
    base_phase = 2.0 * np.pi * np.cumsum(inst_freq) / rate
    max_harmonic = max(1, int((_TONAL_TOP * nyq) // f0))
    n_harmonics = int(rng.integers(3, 7))
    out = np.zeros(n)
    decay = rng.uniform(0.5, 1.5)
    for h in range(1, min(n_harmonics, max_harmonic) + 1):
        amp = 1.0 / h ** decay
        out += amp * np.sin(h * base_phase + rng.uniform(0, 2 * np.pi))
    return out


def _filtered_noise_item(n: int, rate: int, rng: np.random.Generator) -> np.ndarray:
    nyq = rate / 2.0
    lo = rng.uniform(_NOISE_BAND[0], _NOISE_BAND[1] - 0.12) * nyq
    hi = lo + rng.uniform(0.06, 0.12) * nyq
    hi = min(hi, _NOISE_BAND[1] * nyq)
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / rate)
    spectrum[(freqs < lo) | (freqs > hi)] = 0.0
    return np.fft.irfft(spectrum, n=n)


def _chirp_item(n: int, rate: int, rng: np.random.Generator) -> np.ndarray:
    nyq = rate / 2.0
    t = np.arange(n) / rate
    n_segments = int(rng.integers(2, 5))
    bounds = np.linspace(0, n, n_segments + 1).astype(int)
    inst_freq = np.zeros(n)
    freq = rng.uniform(_CHIRP_BAND[0], _CHIRP_BAND[1]) * nyq
    for i in range(n_segments):
        target = rng.uniform(_CHIRP_BAND[0], _CHIRP_BAND[1]) * nyq
        seg = slice(bounds[i], bounds[i + 1])
        inst_freq[seg] = np.linspace(freq, target, bounds[i + 1] - bounds[i])
        freq = target
    phase = 2.0 * np.pi * np.cumsum(inst_freq) / rate
    return np.sin(phase + rng.uniform(0, 2 * np.pi))


_ITEM_BUILDERS = {
    "tonal": _tonal_item,
    "filtered_noise": _filtered_noise_item,
    "chirp": _chirp_item,
}


def synth_corpus(kind: str, seconds: float, sample_rate: int, seed: int) -> list[Waveform]:
    """Generate a list of synthetic source recordings totalling at least
    ``seconds`` of audio (items of up to 8 s each, independently drawn)."""
    if kind not in _ITEM_BUILDERS:
        raise ContractError(f"unknown corpus kind {kind!r}; choose from {CORPUS_KINDS}")
    if seconds <= 0:
        raise ContractError(f"corpus duration must be positive, got {seconds}")
    rng = np.random.default_rng([seed, CORPUS_KINDS.index(kind)])
    build = _ITEM_BUILDERS[kind]
    items: list[Waveform] = []
    remaining = seconds
    while remaining > 0:
        item_seconds = min(_ITEM_SECONDS, max(remaining, 1.0))
        n = int(round(item_seconds * sample_rate))
        raw = build(n, sample_rate, rng)
        raw = _normalize(raw * _envelope(n, sample_rate, rng))
        items.append(Waveform(raw, sample_rate))
        remaining -= item_seconds
    return items


# ---------------------------------------------------------------------------
# corpus manifest
# ---------------------------------------------------------------------------

def write_manifest(path, sources: dict[str, list[str]]) -> None:
    """Write {"sources": [{"name": ..., "files": [...]}]} with paths as given
    (conventionally relative to the manifest's directory)."""
    doc = {"sources": [{"name": name, "files": list(files)}
                       for name, files in sources.items()]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_manifest(path) -> dict[str, list[Path]]:
    """Read a corpus manifest; relative file entries resolve against the
    manifest's directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ContractError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "sources" not in doc:
        raise ContractError(f"{path}: manifest must contain a 'sources' list")
    out: dict[str, list[Path]] = {}
    for entry in doc["sources"]:
        name = entry.get("name")
        files = entry.get("files")
        if not isinstance(name, str) or not isinstance(files, list):
            raise ContractError(f"{path}: each source needs a name and a file list")
        if name in out:
            raise ContractError(f"{path}: duplicate source name {name!r}")
        out[name] = [path.parent / f for f in files]
    return out
