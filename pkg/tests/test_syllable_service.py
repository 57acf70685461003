import numpy as np
import pytest

from prosodid.schemas.corpus import Tier, UnitSegment
from prosodid.schemas.experiment import OscillatorConfig
from prosodid.schemas.signals import AudioRecording
from prosodid.services.syllable_service import (
    compute_envelope,
    detect_syllables,
    oscillate,
    restrict_to_units,
    simulate_oscillator,
    syllabify,
)

CONFIG = OscillatorConfig()
SR = 8000


def am_tone(mod_hz: float, seconds: float, carrier: float = 1000.0) -> AudioRecording:
    """Fully modulated tone: loudness rises and falls mod_hz times per second."""
    t = np.arange(int(seconds * SR)) / SR
    x = 0.5 * (1 - np.cos(2 * np.pi * mod_hz * t)) * np.sin(2 * np.pi * carrier * t)
    return AudioRecording(samples=0.8 * x, sample_rate=SR, recording_id="am")


def _peak_frequency(x: np.ndarray, rate: float) -> float:
    x = x - x.mean()
    n = 1 << 18
    spectrum = np.abs(np.fft.rfft(x, n=n))
    return float(np.fft.rfftfreq(n, d=1.0 / rate)[np.argmax(spectrum)])


# ============= Envelope =============

def test_envelope_of_silence():
    env = compute_envelope(AudioRecording(samples=np.zeros(SR), sample_rate=SR))
    assert np.all(env == 0.0)


def test_envelope_of_steady_sine():
    t = np.arange(SR) / SR
    env = compute_envelope(AudioRecording(samples=np.sin(2 * np.pi * 1000 * t), sample_rate=SR))
    settled = env[int(0.05 * CONFIG.envelope_rate):]
    assert settled.max() <= 1.05 * settled.mean()
    assert settled.min() >= 0.95 * settled.mean()


def test_envelope_follows_modulation():
    env = compute_envelope(am_tone(4.0, 8.0))
    assert _peak_frequency(env, CONFIG.envelope_rate) == pytest.approx(4.0, rel=0.02)


def test_envelope_resamples_uncommon_rates():
    rec = AudioRecording(samples=np.abs(np.sin(np.arange(22050) / 30.0)), sample_rate=22050)
    env = compute_envelope(rec)
    assert abs(len(env) - 1000) <= 1
    assert np.all(env >= 0)


# ============= Oscillator =============

def test_oscillator_at_rest():
    assert np.all(oscillate(np.zeros(500)) == 0.0)


def test_oscillator_step_response():
    x = oscillate(np.ones(2000))
    assert np.all(np.diff(x) >= -1e-12)
    assert x.max() <= 1.05
    assert x[-1] == pytest.approx(1.0, abs=0.01)


def test_oscillator_centre_frequency_selectivity():
    rate = CONFIG.envelope_rate
    t = np.arange(int(6 * rate)) / rate
    gains = {}
    for hz in (1.0, 5.0, 20.0):
        _, v = simulate_oscillator(1.0 + np.sin(2 * np.pi * hz * t))
        steady = v[int(3 * rate):]
        gains[hz] = steady.max() - steady.min()
    assert gains[5.0] > gains[1.0]
    assert gains[5.0] > gains[20.0]

    x = oscillate(1.0 + np.sin(2 * np.pi * 5.0 * t))
    assert _peak_frequency(x[int(3 * rate):], rate) == pytest.approx(5.0, rel=0.02)


# ============= Syllable Detection =============

def test_detect_syllables_silence():
    assert detect_syllables(np.zeros(2000)) == []


def test_detect_syllables_four_hertz():
    units = syllabify(am_tone(4.0, 2.0))
    assert 7 <= len(units) <= 9
    spacing = np.diff([u.start for u in units])
    assert np.median(spacing) == pytest.approx(0.25, rel=0.2)
    assert all(u.tier == Tier.SYLLABLE and u.recording_id == "am" for u in units)


def test_detect_syllables_six_hertz():
    units = syllabify(am_tone(6.0, 2.0))
    assert 10 <= len(units) <= 14


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_detect_syllables_ordered_and_long_enough(seed):
    rng = np.random.default_rng(seed)
    envelope = np.abs(rng.normal(size=3000)).cumsum() % 3.0
    units = detect_syllables(oscillate(envelope), min_dur=0.05)
    for a, b in zip(units, units[1:]):
        assert a.end <= b.start
    assert all(u.end - u.start >= 0.05 for u in units)


def test_detect_syllables_merges_short_segments():
    units = detect_syllables(oscillate(np.abs(np.random.default_rng(4).normal(size=3000))), min_dur=0.2)
    assert all(u.duration >= 0.2 for u in units)


def test_detect_syllables_shift_equivariant():
    rec = am_tone(4.0, 2.0)
    shift = 0.25
    padded = AudioRecording(
        samples=np.concatenate([np.zeros(int(shift * SR)), rec.samples]), sample_rate=SR, recording_id="am",
    )
    units = syllabify(rec)
    shifted = syllabify(padded)
    assert len(shifted) == len(units)
    assert [u.end for u in shifted] == pytest.approx([u.end + shift for u in units], abs=1e-9)
    assert [u.start for u in shifted[1:]] == pytest.approx([u.start + shift for u in units[1:]], abs=1e-9)
    # the leading boundary may move into the added silence
    assert 0.0 <= shifted[0].start <= units[0].start + shift + 1e-9


@pytest.mark.parametrize("gain", [0.5, 2.0])
def test_detect_syllables_amplitude_invariant(gain):
    rec = am_tone(5.0, 2.0)
    louder = AudioRecording(samples=gain * rec.samples, sample_rate=SR, recording_id="am")
    units = syllabify(rec)
    scaled = syllabify(louder)
    assert len(scaled) == len(units)
    assert [(u.start, u.end) for u in scaled] == [(u.start, u.end) for u in units]


def test_restrict_to_units():
    syllables = [
        UnitSegment(start=s, end=s + 0.2, tier=Tier.SYLLABLE, text=f"syl{i}")
        for i, s in enumerate([0.0, 0.2, 0.4, 0.6, 0.8])
    ]
    words = [UnitSegment(start=0.15, end=0.45, tier=Tier.WORD, text="sana")]
    kept = restrict_to_units(syllables, words)
    assert [u.start for u in kept] == [0.2]
    assert restrict_to_units(syllables, []) == syllables
