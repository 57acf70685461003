"""
DSP Service - pre-processing (denoise, level normalization, resampling) and
frame-level energy, F0 and spectral tilt
"""
import csv
import logging
from math import gcd
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal
from scipy.fft import dct, rfft
from scipy.ndimage import uniform_filter1d

from prosodid.core.errors import SignalError
from prosodid.schemas.experiment import DenoiseConfig, FrameSpec, PitchConfig, TiltConfig
from prosodid.schemas.signals import AudioRecording, ProsodicTrack

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-10
PEAK_LEVEL = 0.95
DENOISE_WINDOW_SEC = 0.032


# ============= Framing =============

def num_frames(n_samples: int, spec: FrameSpec) -> int:
    return (n_samples - 1) // spec.hop_samples + 1


def frame_centers(n_samples: int, spec: FrameSpec) -> np.ndarray:
    """Frame centre sample indices, one every hop starting at sample 0."""
    return np.arange(num_frames(n_samples, spec)) * spec.hop_samples


def frame_signal(x: np.ndarray, spec: FrameSpec, extra: int = 0) -> np.ndarray:
    """
    Centred frames of window_samples (+ extra trailing samples), zero-padded
    at the signal edges. Row i starts at centre_i - window // 2.
    """
    w = spec.window_samples
    half = w // 2
    n = num_frames(len(x), spec)
    padded = np.concatenate([np.zeros(half), x, np.zeros(w + extra)])
    windows = sliding_window_view(padded, w + extra)
    return windows[: n * spec.hop_samples : spec.hop_samples][:n]


# ============= Pre-processing =============

def denoise(rec: AudioRecording, config: Optional[DenoiseConfig] = None) -> AudioRecording:
    """
    Magnitude spectral subtraction. The noise profile is the mean magnitude
    spectrum of the lowest-energy decile of frames; each bin keeps
    max(1 - alpha * N / |Y|_smoothed, beta) of its magnitude, phase unchanged.
    """
    config = config or DenoiseConfig()
    if rec.duration < config.min_duration:
        raise SignalError(
            f"recording {rec.recording_id!r} is {rec.duration:.3f} s; "
            f"noise estimation needs >= {config.min_duration} s"
        )

    x = rec.samples
    nperseg = int(2 ** np.ceil(np.log2(DENOISE_WINDOW_SEC * rec.sample_rate)))
    noverlap = nperseg // 2
    _, _, spec = signal.stft(x, fs=rec.sample_rate, window="hann", nperseg=nperseg, noverlap=noverlap)
    magnitude = np.abs(spec)

    frame_energy_ = (magnitude ** 2).sum(axis=0)
    n_noise = max(1, int(np.ceil(config.noise_quantile * magnitude.shape[1])))
    quiet = np.argsort(frame_energy_, kind="stable")[:n_noise]
    noise_profile = magnitude[:, quiet].mean(axis=1, keepdims=True)

    if not np.any(noise_profile > 0):
        return rec

    smoothed = uniform_filter1d(magnitude, size=max(1, config.smoothing_frames), axis=1, mode="nearest")
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = 1.0 - config.over_subtraction * noise_profile / smoothed
    gain = np.where(smoothed > 0, gain, config.spectral_floor)
    gain = np.clip(gain, config.spectral_floor, 1.0)

    _, y = signal.istft(spec * gain, fs=rec.sample_rate, window="hann", nperseg=nperseg, noverlap=noverlap)
    y = y[: len(x)]
    if len(y) < len(x):
        y = np.concatenate([y, np.zeros(len(x) - len(y))])
    return rec.with_samples(y)


def level_normalize(rec: AudioRecording, peak: float = PEAK_LEVEL) -> AudioRecording:
    """Scale so the absolute peak equals `peak`; silence is returned unchanged."""
    current = float(np.max(np.abs(rec.samples)))
    if current == 0.0:
        return rec
    return rec.with_samples(rec.samples * (peak / current))


def resample(rec: AudioRecording, target: int = 8000) -> AudioRecording:
    """
    Polyphase downsampling with a Kaiser FIR low-pass centred at 0.45 x target,
    stop band from 0.4875 x target (97.5 % of the new Nyquist).
    """
    if rec.sample_rate < target:
        raise SignalError(f"upsampling {rec.sample_rate} Hz -> {target} Hz is not supported")
    if rec.sample_rate == target:
        return rec

    g = gcd(int(rec.sample_rate), int(target))
    up, down = target // g, rec.sample_rate // g
    fs_filter = rec.sample_rate * up
    cutoff = 0.45 * target
    width = 2 * (0.4875 - 0.45) * target
    numtaps, beta = signal.kaiserord(60.0, width / (0.5 * fs_filter))
    numtaps |= 1
    taps = signal.firwin(numtaps, cutoff, window=("kaiser", beta), fs=fs_filter)
    y = signal.resample_poly(rec.samples, up, down, window=taps)
    return rec.with_samples(y, sample_rate=target)


# ============= Frame Analyses =============

def frame_energy(rec: AudioRecording, spec: FrameSpec) -> np.ndarray:
    """
    EN(t) = sum_{tau=-w/2}^{w/2-1} |x(t + tau)|^2 at every frame centre,
    zero-padded at the edges.
    """
    x2 = rec.samples ** 2
    w = spec.window_samples
    running = np.convolve(x2, np.ones(w))
    idx = frame_centers(len(x2), spec) + (w - 1 - w // 2)
    return np.maximum(running[idx], 0.0)


def _nccf(rec: AudioRecording, spec: FrameSpec, lag_min: int, lag_max: int) -> Tuple[np.ndarray, np.ndarray]:
    """Normalized cross-correlation per frame for lags lag_min..lag_max."""
    w = spec.window_samples
    frames = frame_signal(rec.samples, spec, extra=lag_max)
    ref = frames[:, :w]
    e0 = np.einsum("ij,ij->i", ref, ref)
    cum = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames ** 2, axis=1)], axis=1)

    lags = np.arange(lag_min, lag_max + 1)
    nccf = np.zeros((frames.shape[0], len(lags)))
    for j, lag in enumerate(lags):
        num = np.einsum("ij,ij->i", ref, frames[:, lag:lag + w])
        ek = cum[:, lag + w] - cum[:, lag]
        denom = np.sqrt(e0 * ek)
        nccf[:, j] = np.where(denom > LOG_FLOOR, num / np.maximum(denom, LOG_FLOOR), 0.0)
    return lags, nccf


def _candidates(lags: np.ndarray, nccf: np.ndarray, sample_rate: int, config: PitchConfig):
    """Top NCCF peaks above the voicing threshold, refined by parabolic interpolation."""
    n_frames = nccf.shape[0]
    n = config.n_candidates
    freqs = np.full((n_frames, n), np.nan)
    scores = np.full((n_frames, n), np.nan)
    lag_max = lags[-1]

    interior = (nccf[:, 1:-1] > nccf[:, :-2]) & (nccf[:, 1:-1] >= nccf[:, 2:]) & (nccf[:, 1:-1] >= config.voicing_threshold)
    for t in range(n_frames):
        peaks = np.flatnonzero(interior[t]) + 1
        if peaks.size == 0:
            continue
        peaks = peaks[np.argsort(-nccf[t, peaks], kind="stable")][:n]
        for c, p in enumerate(peaks):
            a, b, d = nccf[t, p - 1], nccf[t, p], nccf[t, p + 1]
            denom = a - 2 * b + d
            shift = 0.5 * (a - d) / denom if denom < 0 else 0.0
            lag = lags[p] + float(np.clip(shift, -0.5, 0.5))
            freqs[t, c] = np.clip(sample_rate / lag, config.f0_min, config.f0_max)
            scores[t, c] = b * (1.0 - config.lag_weight * lags[p] / lag_max)
    return freqs, scores


def track_f0(
    rec: AudioRecording,
    spec: FrameSpec,
    f0_min: float = 60.0,
    f0_max: float = 400.0,
    config: Optional[PitchConfig] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    YAAPT-style tracker: NCCF candidates per frame, then a dynamic-programming
    path through candidates plus an unvoiced state. Voiced-to-voiced moves
    cost octave_cost * |log2(f_t / f_{t-1})|.

    Returns (f0, voiced) with f0 = 0 on unvoiced frames.
    """
    config = (config or PitchConfig()).model_copy(update={"f0_min": f0_min, "f0_max": f0_max})
    if not 0 < f0_min < f0_max < rec.sample_rate / 2:
        raise SignalError(f"invalid F0 search range {f0_min}-{f0_max} Hz at {rec.sample_rate} Hz")

    lag_min = max(2, int(np.floor(rec.sample_rate / f0_max)))
    lag_max = int(np.ceil(rec.sample_rate / f0_min))
    lags, nccf = _nccf(rec, spec, lag_min - 1, lag_max + 1)
    freqs, scores = _candidates(lags, nccf, rec.sample_rate, config)

    n_frames, n_cand = freqs.shape
    # state 0 is unvoiced, states 1..n_cand are voiced candidates
    local = np.full((n_frames, n_cand + 1), np.inf)
    local[:, 0] = 1.0 - config.voicing_threshold
    local[:, 1:] = np.where(np.isnan(scores), np.inf, 1.0 - scores)
    log_f = np.log2(np.where(np.isnan(freqs), 1.0, freqs))

    cost = local[0].copy()
    back = np.zeros((n_frames, n_cand + 1), dtype=np.int64)
    for t in range(1, n_frames):
        trans = np.zeros((n_cand + 1, n_cand + 1))
        trans[0, 1:] = config.voicing_transition_cost
        trans[1:, 0] = config.voicing_transition_cost
        trans[1:, 1:] = config.octave_cost * np.abs(log_f[t - 1][:, None] - log_f[t][None, :])
        total = cost[:, None] + trans
        back[t] = np.argmin(total, axis=0)
        cost = total[back[t], np.arange(n_cand + 1)] + local[t]

    path = np.zeros(n_frames, dtype=np.int64)
    path[-1] = int(np.argmin(cost))
    for t in range(n_frames - 1, 0, -1):
        path[t - 1] = back[t, path[t]]

    voiced = path > 0
    f0 = np.zeros(n_frames)
    f0[voiced] = freqs[np.flatnonzero(voiced), path[voiced] - 1]
    return f0, voiced


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, f_low: float = 0.0, f_high: Optional[float] = None) -> np.ndarray:
    """Area-normalized triangular filters evenly spaced on the mel scale."""
    f_high = f_high or sample_rate / 2
    mel = lambda f: 2595.0 * np.log10(1.0 + f / 700.0)
    hz = lambda m: 700.0 * (10 ** (m / 2595.0) - 1.0)
    edges = hz(np.linspace(mel(f_low), mel(f_high), n_mels + 2))
    bins = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)

    fb = np.zeros((n_mels, len(bins)))
    for j in range(n_mels):
        lo, mid, hi = edges[j], edges[j + 1], edges[j + 2]
        rising = (bins - lo) / (mid - lo)
        falling = (hi - bins) / (hi - mid)
        fb[j] = np.maximum(0.0, np.minimum(rising, falling))
        area = fb[j].sum()
        if area > 0:
            fb[j] /= area
    return fb


def spectral_tilt(
    rec: AudioRecording,
    spec: FrameSpec,
    n_mels: int = 26,
    n_fft: int = 256,
) -> np.ndarray:
    """
    Per-frame C1: Hamming window, power spectrum, mel filterbank, log,
    orthonormal DCT-II, coefficient 1.
    """
    frames = frame_signal(rec.samples, spec) * np.hamming(spec.window_samples)
    power = np.abs(rfft(frames, n=n_fft, axis=1)) ** 2 / n_fft
    fb = mel_filterbank(n_mels, n_fft, rec.sample_rate)
    log_mel = np.log(np.maximum(power @ fb.T, LOG_FLOOR))
    return dct(log_mel, type=2, norm="ortho", axis=1)[:, 1]


def extract_tracks(
    rec: AudioRecording,
    spec: Optional[FrameSpec] = None,
    denoise_config: Optional[DenoiseConfig] = None,
    pitch_config: Optional[PitchConfig] = None,
    tilt_config: Optional[TiltConfig] = None,
) -> ProsodicTrack:
    """denoise -> level_normalize -> resample -> energy, F0, tilt on shared frames."""
    spec = spec or FrameSpec()
    analysed = preprocess(rec, spec, denoise_config)
    return analyse(analysed, spec, pitch_config, tilt_config)


def preprocess(rec: AudioRecording, spec: FrameSpec, denoise_config: Optional[DenoiseConfig] = None) -> AudioRecording:
    denoise_config = denoise_config or DenoiseConfig()
    if denoise_config.enabled:
        rec = denoise(rec, denoise_config)
    rec = level_normalize(rec)
    return resample(rec, spec.sample_rate)


def analyse(
    rec: AudioRecording,
    spec: FrameSpec,
    pitch_config: Optional[PitchConfig] = None,
    tilt_config: Optional[TiltConfig] = None,
) -> ProsodicTrack:
    """Frame analyses of an already pre-processed recording at the analysis rate."""
    if rec.sample_rate != spec.sample_rate:
        raise SignalError(f"recording at {rec.sample_rate} Hz, analysis expects {spec.sample_rate} Hz")
    pitch_config = pitch_config or PitchConfig()
    tilt_config = tilt_config or TiltConfig()

    energy = frame_energy(rec, spec)
    f0, voiced = track_f0(rec, spec, pitch_config.f0_min, pitch_config.f0_max, pitch_config)
    tilt = spectral_tilt(rec, spec, tilt_config.n_mels, tilt_config.n_fft)
    times = frame_centers(len(rec.samples), spec) / rec.sample_rate
    return ProsodicTrack(
        energy=energy, f0=f0, voiced=voiced, tilt=tilt,
        frame_times=times, recording_id=rec.recording_id,
    )


def write_track_csv(track: ProsodicTrack, path: Union[str, Path]) -> None:
    """Dump a track as CSV: frame_time, energy, f0, voiced, tilt."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["frame_time", "energy", "f0", "voiced", "tilt"])
        for row in zip(track.frame_times, track.energy, track.f0, track.voiced, track.tilt):
            writer.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), int(row[3]), repr(float(row[4]))])
