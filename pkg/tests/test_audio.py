"""Tests for waveform I/O, resampling, mixing, and the synthetic corpus."""

import math
import struct

import numpy as np
import pytest

from naesep.audio import (
    CORPUS_KINDS,
    MixSpec,
    Waveform,
    load_manifest,
    mix_at_snr,
    read_wav,
    resample,
    snippet,
    synth_corpus,
    write_manifest,
    write_wav,
)
from naesep.errors import ContractError, UnsupportedWavError, WavFormatError


def _riff_bytes(fmt_tag=1, channels=1, rate=16000, bits=16, payload=b""):
    block = channels * bits // 8
    fmt = struct.pack("<IHHIIHH", 16, fmt_tag, channels, rate, rate * block, block, bits)
    body = b"fmt " + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body


class TestWavIo:
    def test_full_scale_clips_to_max_code(self, tmp_path):
        path = tmp_path / "full.wav"
        write_wav(path, Waveform(np.array([1.0]), 16000))
        back = read_wav(path)
        assert back.samples[0] == 32767 / 32768

    def test_silence_round_trip_exact(self, tmp_path):
        path = tmp_path / "zero.wav"
        write_wav(path, Waveform(np.zeros(100), 8000))
        back = read_wav(path)
        np.testing.assert_array_equal(back.samples, np.zeros(100))
        assert back.sample_rate == 8000

    def test_round_trip_error_within_one_lsb(self, tmp_path):
        rng = np.random.default_rng(0)
        w = Waveform(rng.uniform(-1.0, 1.0, 2000), 16000)
        path = tmp_path / "rt.wav"
        gain = write_wav(path, w)
        assert gain == 1.0
        back = read_wav(path)
        assert np.max(np.abs(back.samples - w.samples)) <= 1.0 / 32768

    def test_known_riff_fixture(self, tmp_path):
        # hand-assembled 3-sample mono PCM16 file: codes 1000, -2000, 32767
        payload = struct.pack("<3h", 1000, -2000, 32767)
        path = tmp_path / "fixture.wav"
        path.write_bytes(_riff_bytes(payload=payload))
        w = read_wav(path)
        assert w.sample_rate == 16000
        np.testing.assert_array_equal(
            w.samples, np.array([1000, -2000, 32767]) / 32768)

    def test_stereo_averages_to_mono(self, tmp_path):
        payload = struct.pack("<4h", 1000, 3000, -2000, -4000)
        path = tmp_path / "stereo.wav"
        path.write_bytes(_riff_bytes(channels=2, payload=payload))
        w = read_wav(path)
        np.testing.assert_allclose(w.samples, np.array([2000, -3000]) / 32768)

    def test_written_header_is_pcm16_mono(self, tmp_path):
        path = tmp_path / "hdr.wav"
        write_wav(path, Waveform(np.array([0.5, -0.5]), 22050))
        blob = path.read_bytes()
        assert blob[:4] == b"RIFF" and blob[8:12] == b"WAVE"
        i = blob.index(b"fmt ") + 4
        _size, tag, channels, rate, _byterate, _align, bits = struct.unpack(
            "<IHHIIHH", blob[i:i + 20])
        assert (tag, channels, rate, bits) == (1, 1, 22050, 16)

    def test_peak_normalization_reports_gain(self, tmp_path):
        path = tmp_path / "hot.wav"
        gain = write_wav(path, Waveform(np.array([2.0, -1.0]), 16000))
        assert gain == 0.5
        back = read_wav(path)
        assert abs(back.samples[0] - 32767 / 32768) < 1e-12

    def test_float_format_rejected(self, tmp_path):
        path = tmp_path / "float.wav"
        path.write_bytes(_riff_bytes(fmt_tag=3, bits=32))
        with pytest.raises(UnsupportedWavError):
            read_wav(path)

    def test_truncated_header_rejected(self, tmp_path):
        path = tmp_path / "trunc.wav"
        path.write_bytes(b"RIFF" + struct.pack("<I", 100) + b"WA")
        with pytest.raises(WavFormatError):
            read_wav(path)

    def test_8bit_rejected(self, tmp_path):
        path = tmp_path / "8bit.wav"
        path.write_bytes(_riff_bytes(bits=8, payload=b"\x80\x80"))
        with pytest.raises(UnsupportedWavError):
            read_wav(path)


class TestResample:
    def test_same_rate_is_identity(self):
        w = Waveform(np.linspace(-1, 1, 100), 16000)
        out = resample(w, 16000)
        np.testing.assert_array_equal(out.samples, w.samples)

    def test_output_length(self):
        w = Waveform(np.zeros(24000), 48000)
        assert len(resample(w, 16000)) == 8000
        assert len(resample(Waveform(np.zeros(1001), 8000), 16000)) == 2002

    def test_dc_preserved(self):
        w = Waveform(np.full(4800, 0.25), 48000)
        out = resample(w, 16000)
        np.testing.assert_allclose(out.samples, 0.25, atol=1e-6)

    def test_tone_survives_downsampling(self):
        # 1 kHz sine at 48 kHz -> 16 kHz: peak stays at 1 kHz and everything
        # outside a +-50 Hz guard band sits below -60 dB
        rate_in, rate_out, freq = 48000, 16000, 1000.0
        t = np.arange(rate_in // 2) / rate_in
        w = Waveform(np.sin(2 * np.pi * freq * t), rate_in)
        out = resample(w, rate_out)
        windowed = out.samples * np.hanning(len(out))
        spectrum = np.abs(np.fft.rfft(windowed))
        freqs = np.fft.rfftfreq(len(out), d=1.0 / rate_out)
        peak_idx = int(np.argmax(spectrum))
        assert abs(freqs[peak_idx] - freq) < 5.0
        guard = np.abs(freqs - freq) > 50.0
        spurious = spectrum[guard].max() / spectrum[peak_idx]
        assert 20 * math.log10(spurious) < -60.0


class TestSnippet:
    def test_full_length_window_in_bounds(self):
        w = Waveform(np.arange(100, dtype=float), 10)
        for seed in range(20):
            s = snippet(w, 3.0, seed)
            assert len(s) == 30
            start = int(s.samples[0])
            np.testing.assert_array_equal(s.samples, np.arange(start, start + 30))

    def test_deterministic_under_seed(self):
        w = Waveform(np.random.default_rng(1).standard_normal(500), 100)
        a = snippet(w, 1.0, seed=42)
        b = snippet(w, 1.0, seed=42)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_too_short_raises(self):
        with pytest.raises(ContractError):
            snippet(Waveform(np.zeros(10), 10), 2.0, 0)


class TestMixAtSnr:
    def test_equal_energy_zero_db_is_plain_sum(self):
        a = Waveform(np.array([1.0, 0.0, 0.0, 0.0]), 8000)
        b = Waveform(np.array([0.0, 1.0, 0.0, 0.0]), 8000)
        mixture, scaled = mix_at_snr([a, b], MixSpec(0, 0.0))
        np.testing.assert_allclose(scaled[1].samples, b.samples)
        np.testing.assert_allclose(mixture.samples, a.samples + b.samples)

    def test_requested_snr_achieved_exactly(self):
        rng = np.random.default_rng(2)
        a = Waveform(rng.standard_normal(1000), 8000)
        b = Waveform(rng.standard_normal(1000), 8000)
        _, scaled = mix_at_snr([a, b], MixSpec(0, 3.0))
        measured = 10 * math.log10(scaled[0].energy() / scaled[1].energy())
        assert abs(measured - 3.0) < 1e-9

    def test_minus_three_db_closed_form(self):
        # unit-energy reference and interferer: scale is 10^(3/20)
        a = Waveform(np.array([1.0, 0.0]), 8000)
        b = Waveform(np.array([0.0, 1.0]), 8000)
        _, scaled = mix_at_snr([a, b], MixSpec(0, -3.0))
        assert abs(scaled[1].samples[1] - 10 ** (3 / 20)) < 1e-12

    def test_three_sources_share_common_scale(self):
        rng = np.random.default_rng(3)
        sources = [Waveform(rng.standard_normal(500), 8000) for _ in range(3)]
        mixture, scaled = mix_at_snr(sources, MixSpec(1, 2.0))
        total = scaled[0].samples + scaled[2].samples
        measured = 10 * math.log10(scaled[1].energy() / float(np.dot(total, total)))
        assert abs(measured - 2.0) < 1e-9
        np.testing.assert_allclose(
            mixture.samples, scaled[0].samples + scaled[1].samples + scaled[2].samples)

    def test_silent_interferer_raises(self):
        a = Waveform(np.array([1.0, 0.0]), 8000)
        b = Waveform(np.zeros(2), 8000)
        with pytest.raises(ContractError):
            mix_at_snr([a, b], MixSpec(0, 0.0))

    def test_silent_reference_raises(self):
        a = Waveform(np.zeros(2), 8000)
        b = Waveform(np.array([1.0, 0.0]), 8000)
        with pytest.raises(ContractError):
            mix_at_snr([a, b], MixSpec(0, 0.0))

    def test_length_mismatch_raises(self):
        a = Waveform(np.ones(3), 8000)
        b = Waveform(np.ones(4), 8000)
        with pytest.raises(ContractError):
            mix_at_snr([a, b], MixSpec(0, 0.0))


def _band_energy_fraction(w: Waveform, lo_frac: float, hi_frac: float) -> float:
    nyq = w.sample_rate / 2
    spectrum = np.abs(np.fft.rfft(w.samples)) ** 2
    freqs = np.fft.rfftfreq(len(w), d=1.0 / w.sample_rate)
    band = (freqs >= lo_frac * nyq) & (freqs <= hi_frac * nyq)
    return float(spectrum[band].sum() / spectrum.sum())


class TestSynthCorpus:
    def test_total_duration_and_rate(self):
        items = synth_corpus("tonal", 20.0, 16000, seed=0)
        assert sum(len(i) for i in items) >= 20.0 * 16000
        assert all(i.sample_rate == 16000 for i in items)

    def test_deterministic(self):
        a = synth_corpus("chirp", 10.0, 16000, seed=5)
        b = synth_corpus("chirp", 10.0, 16000, seed=5)
        for wa, wb in zip(a, b):
            np.testing.assert_array_equal(wa.samples, wb.samples)

    @pytest.mark.parametrize("kind,lo,hi", [
        ("tonal", 0.0, 0.35),
        ("chirp", 0.34, 0.56),
        ("filtered_noise", 0.56, 0.95),
    ])
    def test_kinds_stay_in_their_bands(self, kind, lo, hi):
        for item in synth_corpus(kind, 16.0, 16000, seed=1):
            assert _band_energy_fraction(item, lo, hi) > 0.95

    def test_kinds_are_mutually_disjoint(self):
        bands = {"tonal": (0.0, 0.35), "chirp": (0.34, 0.56),
                 "filtered_noise": (0.56, 0.95)}
        for kind in CORPUS_KINDS:
            item = synth_corpus(kind, 8.0, 16000, seed=2)[0]
            for other, (lo, hi) in bands.items():
                if other != kind:
                    assert _band_energy_fraction(item, lo, hi) < 0.03

    def test_normalized_peak(self):
        for kind in CORPUS_KINDS:
            item = synth_corpus(kind, 8.0, 16000, seed=3)[0]
            assert abs(np.max(np.abs(item.samples)) - 0.7) < 1e-9

    def test_unknown_kind_raises(self):
        with pytest.raises(ContractError):
            synth_corpus("speech", 1.0, 16000, 0)


class TestManifest:
    def test_round_trip(self, tmp_path):
        write_manifest(tmp_path / "manifest.json",
                       {"tonal": ["a.wav", "b.wav"], "chirp": ["c.wav"]})
        loaded = load_manifest(tmp_path / "manifest.json")
        assert set(loaded) == {"tonal", "chirp"}
        assert loaded["tonal"] == [tmp_path / "a.wav", tmp_path / "b.wav"]

    def test_bad_json_raises(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{nope")
        with pytest.raises(ContractError):
            load_manifest(p)

    def test_duplicate_name_raises(self, tmp_path):
        p = tmp_path / "dup.json"
        p.write_text('{"sources": [{"name": "a", "files": []}, {"name": "a", "files": []}]}')
        with pytest.raises(ContractError):
            load_manifest(p)
