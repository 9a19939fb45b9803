"""Classical pulse-signal chain.

Frequencies are in Hz throughout. The default analysis band 0.66-4.16 Hz
covers 40-250 bpm. Periodic segments are one systolic-peak-to-peak cycle
resampled to a canonical length of 90 samples and z-scored, so only the
waveform shape survives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .errors import ConfigError, DspError
from .tensor import Tensor, bandpass_time, extract_segments

BAND = (0.66, 4.16)
SEGMENT_LEN = 90
# 40 bpm at 60 Hz gives the longest admissible cycle: 90 samples = 1.5 s.
MAX_SEGMENT_SECONDS = 1.5


@dataclass
class RppgSignal:
    """A pulse signal and its sample rate."""

    samples: np.ndarray
    fs: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.fs <= 0:
            raise ConfigError("fs must be positive")
        if self.samples.ndim != 1 or self.samples.size < 2 * self.fs:
            raise DspError("signal must be 1-D and at least 2 s long")
        if not np.all(np.isfinite(self.samples)):
            raise DspError("signal holds NaN or Inf")

    @property
    def duration(self) -> float:
        return self.samples.size / self.fs


@dataclass
class Psd:
    """Band-limited power spectral density normalized to unit mass.

    ``power`` is an ndarray for analysis use; the differentiable variant in
    the contrastive-training module carries a Tensor instead.
    """

    freqs: np.ndarray
    power: np.ndarray | Tensor
    band: tuple[float, float]

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=np.float64)
        if np.any(np.diff(self.freqs) <= 0):
            raise DspError("psd frequencies must be strictly increasing")
        if isinstance(self.power, np.ndarray):
            if np.any(self.power < 0):
                raise DspError("psd power must be nonnegative")
            if abs(self.power.sum() - 1.0) > 1e-9:
                raise DspError("psd power must sum to 1")


@dataclass
class SegmentBatch:
    """K periodic segments, each resampled to SEGMENT_LEN and z-scored."""

    segments: np.ndarray
    source_peaks: np.ndarray
    fs: float
    dropped: int = 0

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=np.float64)
        if self.segments.ndim != 2 or self.segments.shape[0] < 1:
            raise DspError("segment batch must be (K>=1, L)")


def bandpass(x: RppgSignal, lo: float = BAND[0], hi: float = BAND[1]) -> RppgSignal:
    """Zero-phase brick-wall bandpass via forward/inverse FFT."""
    y = bandpass_time(Tensor(x.samples), x.fs, lo, hi)
    return RppgSignal(y.data, x.fs)


def _periodogram(samples: np.ndarray, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """Hann-windowed periodogram of the zero-meaned signal (unnormalized)."""
    x = samples - samples.mean()
    w = np.hanning(x.size)
    spec = np.fft.rfft(x * w)
    power = (spec.real**2 + spec.imag**2)
    freqs = np.fft.rfftfreq(x.size, d=1.0 / fs)
    return freqs, power


def psd(x: RppgSignal, band: tuple[float, float] = BAND) -> Psd:
    if x.samples.size < x.fs:
        raise DspError("psd needs at least 1 s of signal")
    freqs, power = _periodogram(x.samples, x.fs)
    mask = (freqs >= band[0]) & (freqs <= band[1])
    if not mask.any():
        raise DspError(f"band {band} holds no frequency bins")
    p = power[mask]
    total = p.sum()
    if total <= 0:
        raise DspError("zero in-band power")
    return Psd(freqs[mask], p / total, band)


def dominant_frequency(p: Psd) -> float:
    """Frequency of maximum power; ties resolve to the lower frequency."""
    power = p.power.data if isinstance(p.power, Tensor) else p.power
    return float(p.freqs[int(np.argmax(power))])


def ipr(x: RppgSignal) -> float:
    """Irrelevant power ratio: share of 0.5-5 Hz power away from the pulse.

    1 - (power within +-0.1 Hz of the dominant in-band frequency) / (total
    power in 0.5-5 Hz). 0 = clean single tone, 1 = no dominant pulse.
    """
    if x.duration < 5.0:
        raise DspError("ipr needs at least 5 s of signal")
    freqs, power = _periodogram(x.samples, x.fs)
    denom_mask = (freqs >= 0.5) & (freqs <= 5.0)
    band_mask = (freqs >= BAND[0]) & (freqs <= BAND[1])
    denom = power[denom_mask].sum()
    if denom <= 0:
        raise DspError("zero power in 0.5-5 Hz")
    f_dom = freqs[band_mask][int(np.argmax(power[band_mask]))]
    # tiny slack so bins exactly 0.1 Hz away survive float rounding
    num = power[denom_mask & (np.abs(freqs - f_dom) <= 0.1 + 1e-9)].sum()
    return float(min(max(1.0 - num / denom, 0.0), 1.0))


def estimate_pulse_rate(x: RppgSignal) -> float:
    """Fundamental heart-rate estimate in Hz from the autocorrelation period.

    Pulse waveforms with a pronounced dicrotic bump can carry more power in
    a harmonic than in the fundamental (for some shapes the fundamental all
    but cancels), so a PSD argmax reads a multiple of the true rate. The
    autocorrelation peaks at the true period for any harmonic mix; the
    smallest in-band lag reaching 90% of the range maximum rejects both
    period doublings (longer lag) and harmonics (lower correlation).

    The internal filter is wider than the analysis band: high harmonics
    carry the evidence that separates a beat from its dicrotic echo when
    the fundamental nearly cancels.
    """
    y = bandpass(x, 0.5, min(8.0, 0.45 * x.fs)).samples
    y = y - y.mean()
    n = y.size
    spec = np.fft.rfft(y, n=2 * n)
    acf = np.fft.irfft(spec.real**2 + spec.imag**2)[:n]
    if acf[0] <= 0:
        raise DspError("cannot estimate pulse rate of an empty signal")
    lo = max(2, int(np.ceil(x.fs / BAND[1])))
    hi = min(n - 2, int(np.floor(x.fs / BAND[0])))
    if lo >= hi:
        raise DspError("signal too short for a pulse-rate estimate")
    window = acf[lo : hi + 1]
    peak = window.max()
    lag = None
    for i, v in enumerate(window):
        k = lo + i
        if v >= 0.9 * peak and acf[k - 1] <= v >= acf[k + 1]:
            lag = k
            break
    if lag is None:
        lag = lo + int(np.argmax(window))
    # parabolic refinement for sub-sample period resolution
    denom = acf[lag - 1] - 2.0 * acf[lag] + acf[lag + 1]
    if denom < 0:
        lag = lag + 0.5 * (acf[lag - 1] - acf[lag + 1]) / denom
    return float(x.fs / lag)


def detect_peaks(x: RppgSignal) -> np.ndarray:
    """Systolic peak indices of a bandpassed signal, ascending.

    Local maxima above the 60th percentile of the signal, separated by at
    least 0.6 of the estimated beat period. The spacing floor sits above
    the widest systolic-to-dicrotic gap the waveform family produces and
    below one full period, so dicrotic maxima are suppressed while every
    true beat survives.
    """
    f_hr = estimate_pulse_rate(x)
    min_dist = max(1, int(round(0.6 * x.fs / f_hr)))
    height = np.percentile(x.samples, 60.0)
    peaks, _ = find_peaks(x.samples, height=height, distance=min_dist)
    if peaks.size < 2:
        raise DspError("insufficient beats: fewer than 2 peaks")
    return peaks.astype(np.int64)


def segment_bounds(
    peaks: np.ndarray, fs: float, max_seconds: float = MAX_SEGMENT_SECONDS
) -> tuple[list[tuple[int, int]], int]:
    """Peak-to-peak [start, end] spans; spans longer than max_seconds drop."""
    bounds, dropped = [], 0
    for a, b in zip(peaks[:-1], peaks[1:]):
        if (b - a) / fs > max_seconds:
            dropped += 1
        else:
            bounds.append((int(a), int(b)))
    return bounds, dropped


def segment_and_resample(x: RppgSignal, peaks: np.ndarray) -> SegmentBatch:
    """Cut peak-to-peak cycles, resample each to SEGMENT_LEN, z-score rows."""
    peaks = np.asarray(peaks, dtype=np.int64)
    if peaks.size < 2:
        raise DspError("insufficient beats: need at least 2 peaks")
    bounds, dropped = segment_bounds(peaks, x.fs)
    if not bounds:
        raise DspError("all segments exceeded the maximum cycle length")
    seg = extract_segments(Tensor(x.samples), bounds, SEGMENT_LEN).data
    std = seg.std(axis=1, keepdims=True)
    mean = seg.mean(axis=1, keepdims=True)
    live = std > 1e-12 * np.maximum(np.abs(mean), 1.0)
    z = np.where(live, (seg - mean) / np.where(live, std, 1.0), 0.0)
    return SegmentBatch(z, peaks, x.fs, dropped)


def cppg_segments(samples: np.ndarray, fs: float) -> SegmentBatch:
    """Segment a raw contact-PPG trace into periodic cycles.

    Peaks are located on a wide-band (0.5 Hz to ~8 Hz) filtered copy, which
    keeps the harmonics that distinguish systolic peaks from dicrotic
    echoes; cycles are then cut from the raw trace so the morphology keeps
    its full bandwidth.
    """
    raw = RppgSignal(samples, fs)
    wide = bandpass(raw, 0.5, min(8.0, 0.45 * fs))
    peaks = detect_peaks(wide)
    return segment_and_resample(raw, peaks)


def pearson(a, b) -> float:
    """Pearson correlation of two equal-length sequences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise DspError("pearson needs two equal-length 1-D sequences (>=2)")
    da, db = a - a.mean(), b - b.mean()
    va, vb = (da * da).sum(), (db * db).sum()
    if va == 0 or vb == 0:
        raise DspError("pearson undefined for zero-variance input")
    return float((da * db).sum() / np.sqrt(va * vb))


def polarity(samples: np.ndarray) -> float:
    """+1 if the signal's sharp peaks already point up, else -1.

    Pulse waveforms are positively skewed; spectral losses cannot fix the
    sign, so this deterministic convention is applied wherever a pulse is
    extracted.
    """
    d = samples - samples.mean()
    s = d.std()
    if s == 0:
        return 1.0
    return -1.0 if np.mean(d**3) / s**3 < 0 else 1.0


def orient_positive(samples: np.ndarray) -> np.ndarray:
    """Flip a pulse signal so its sharp (systolic) peaks point upward."""
    p = polarity(samples)
    return samples if p > 0 else samples * p


def pos_baseline(st_map) -> RppgSignal:
    """Plane-orthogonal-to-skin pulse extraction from a raw ST map.

    Runs the standard POS projection (1.6 s sliding window, overlap-add)
    on each of the 36 row traces, averages the rows, and bandpasses.
    Expects the unnormalized ST map: the projection divides by temporal
    color means, which z-scoring would destroy.
    """
    data = st_map.data
    fs = float(st_map.fps)
    rows, t_len, _ = data.shape
    win = int(round(1.6 * fs))
    if t_len < win:
        raise DspError("pos_baseline needs at least 1.6 s of data")
    out = np.zeros((rows, t_len))
    for n in range(t_len - win + 1):
        block = data[:, n : n + win, :]  # (rows, win, 3)
        mean = block.mean(axis=1, keepdims=True)
        cn = np.divide(block, mean, out=np.ones_like(block), where=mean != 0)
        s1 = cn[:, :, 1] - cn[:, :, 2]
        s2 = cn[:, :, 1] + cn[:, :, 2] - 2.0 * cn[:, :, 0]
        sd1 = s1.std(axis=1, keepdims=True)
        sd2 = s2.std(axis=1, keepdims=True)
        alpha = np.divide(sd1, sd2, out=np.zeros_like(sd1), where=sd2 > 0)
        h = s1 + alpha * s2
        out[:, n : n + win] += h - h.mean(axis=1, keepdims=True)
    pulse = out.mean(axis=0)
    return bandpass(RppgSignal(pulse, fs))
