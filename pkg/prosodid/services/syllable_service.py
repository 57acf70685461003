"""
Syllable Service - envelope-driven damped harmonic oscillator segmentation
"""
import logging
from math import gcd
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from prosodid.schemas.corpus import Tier, UnitSegment
from prosodid.schemas.experiment import OscillatorConfig
from prosodid.schemas.signals import AudioRecording

logger = logging.getLogger(__name__)


def compute_envelope(rec: AudioRecording, config: Optional[OscillatorConfig] = None) -> np.ndarray:
    """
    Full-wave rectification, causal 2nd-order Butterworth low-pass and
    decimation to the envelope rate. Output is non-negative.
    """
    config = config or OscillatorConfig()
    rectified = np.abs(rec.samples)
    sos = signal.butter(2, config.envelope_cutoff, btype="low", fs=rec.sample_rate, output="sos")
    smooth = signal.sosfilt(sos, rectified)

    env_rate = int(round(config.envelope_rate))
    if rec.sample_rate % env_rate == 0:
        envelope = smooth[:: rec.sample_rate // env_rate]
    else:
        g = gcd(int(rec.sample_rate), env_rate)
        envelope = signal.resample_poly(smooth, env_rate // g, rec.sample_rate // g)
    return np.maximum(envelope, 0.0)


def simulate_oscillator(envelope: np.ndarray, config: Optional[OscillatorConfig] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Integrate x'' + (w/Q) x' + w^2 x = k e(t) with semi-implicit Euler at the
    envelope rate, from rest. k = w^2, so a unit step settles at x = 1.
    Returns (displacement, velocity).
    """
    config = config or OscillatorConfig()
    omega = 2.0 * np.pi * config.center_freq
    damping = omega / config.q_factor
    k = omega ** 2
    dt = 1.0 / config.envelope_rate

    e = np.asarray(envelope, dtype=np.float64)
    x = np.zeros(len(e))
    v = np.zeros(len(e))
    pos, vel = 0.0, 0.0
    for n in range(len(e)):
        vel += dt * (k * e[n] - damping * vel - omega ** 2 * pos)
        pos += dt * vel
        x[n] = pos
        v[n] = vel
    return x, v


def oscillate(envelope: np.ndarray, config: Optional[OscillatorConfig] = None) -> np.ndarray:
    """Oscillator displacement driven by the envelope."""
    return simulate_oscillator(envelope, config)[0]


def _merge_short(times: List[float], depth: List[float], min_dur: float) -> Tuple[List[float], List[float]]:
    """
    Merge segments shorter than min_dur into the neighbour across their
    weaker boundary. depth[i] is the strength of interior boundary times[i + 1].
    """
    times, depth = list(times), list(depth)
    while len(times) > 2:
        lengths = np.diff(times)
        short = np.flatnonzero(lengths < min_dur)
        if short.size == 0:
            break
        i = int(short[np.argmin(lengths[short])])
        # interior boundaries of segment i: times[i] (if i > 0) and times[i + 1] (if not last)
        options = []
        if i > 0:
            options.append((depth[i - 1], i))
        if i + 1 < len(times) - 1:
            options.append((depth[i], i + 1))
        _, drop = min(options)
        del times[drop]
        del depth[drop - 1]
    return times, depth


def detect_syllables(
    displacement: np.ndarray,
    config: Optional[OscillatorConfig] = None,
    min_dur: Optional[float] = None,
    recording_id: str = "",
    offset: float = 0.0,
) -> List[UnitSegment]:
    """
    Syllables are the spans between displacement minima that separate
    successive maxima. Segments shorter than min_dur are merged across
    their weaker boundary.
    """
    config = config or OscillatorConfig()
    min_dur = config.min_duration if min_dur is None else min_dur
    x = np.asarray(displacement, dtype=np.float64)
    peak_level = float(np.max(x)) if x.size else 0.0
    if peak_level <= 0.0:
        return []

    peaks, _ = signal.find_peaks(x, prominence=config.min_prominence * peak_level)
    if peaks.size == 0:
        return []

    # start boundary: latest minimum before the first peak; end: earliest after the last
    head = x[: peaks[0] + 1]
    start = int(len(head) - 1 - np.argmin(head[::-1]))
    tail = x[peaks[-1]:]
    end = int(peaks[-1] + np.argmin(tail))
    if end <= peaks[-1]:
        end = len(x) - 1

    bounds = [start]
    depth = []
    for left, right in zip(peaks[:-1], peaks[1:]):
        trough = int(left + np.argmin(x[left:right + 1]))
        bounds.append(trough)
        depth.append(min(x[left], x[right]) - x[trough])
    bounds.append(end)

    times = [offset + b / config.envelope_rate for b in bounds]
    times, depth = _merge_short(times, depth, min_dur)
    if len(times) == 2 and times[1] - times[0] < min_dur:
        return []

    return [
        UnitSegment(start=t0, end=t1, tier=Tier.SYLLABLE, text=f"syl{i}", recording_id=recording_id)
        for i, (t0, t1) in enumerate(zip(times[:-1], times[1:]))
    ]


def restrict_to_units(syllables: Sequence[UnitSegment], words: Sequence[UnitSegment]) -> List[UnitSegment]:
    """Keep syllables whose centre lies inside one of the given units."""
    if not words:
        return list(syllables)
    starts = np.array([w.start for w in words])
    ends = np.array([w.end for w in words])
    kept = []
    for syl in syllables:
        c = syl.center
        if np.any((starts <= c) & (c < ends)):
            kept.append(syl)
    return kept


def syllabify(rec: AudioRecording, config: Optional[OscillatorConfig] = None) -> List[UnitSegment]:
    """Envelope, oscillator and boundary detection in one call."""
    config = config or OscillatorConfig()
    envelope = compute_envelope(rec, config)
    units = detect_syllables(oscillate(envelope, config), config, recording_id=rec.recording_id)
    logger.debug(f"Recording {rec.recording_id}: {len(units)} syllables")
    return units
