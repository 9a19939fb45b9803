"""Synthetic ground-truth generator: subjects with distinct pulse
morphology, contact-PPG traces, and pulse-bearing videos.

Each subject's waveform is two Gaussian bumps over cardiac phase (systolic
peak plus a dicrotic/diastolic bump), which is the smallest family showing
the fiducial structure that makes pulse shape subject-specific. Phase
advances with an analytic heart-rate trajectory shared between a session's
video and cPPG trace, so both views sample the same heart.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .ingest import CppgTrace, FrameSequence, save_frames

BASE_COLOR = np.array([0.6, 0.45, 0.4])
CHANNEL_WEIGHTS = np.array([0.3, 1.0, 0.5])
HRV_FREQ_HZ = 0.1


@dataclass
class SubjectMorph:
    """Two-bump waveform parameters over phase in [0, 1)."""

    a1: float
    mu1: float
    sigma1: float
    a2: float
    mu2: float
    sigma2: float
    seed: int

    def __post_init__(self):
        if not (self.a1 > self.a2 > 0):
            raise ConfigError("bump amplitudes must satisfy a1 > a2 > 0")
        if not (0 < self.mu1 < self.mu2 < 1):
            raise ConfigError("bump centers must satisfy 0 < mu1 < mu2 < 1")
        for s in (self.sigma1, self.sigma2):
            if not (0.03 < s < 0.2):
                raise ConfigError("bump widths must lie in (0.03, 0.2)")


@dataclass
class SessionProfile:
    """Heart-rate trajectory and measurement-noise settings for one session."""

    base_bpm: float
    hrv_bpm: float = 2.0
    hr_offset_bpm: float = 0.0
    noise_sigma: float = 0.003
    alpha: np.ndarray | None = None  # per-channel pulse amplitude

    def __post_init__(self):
        if self.alpha is None:
            # ~1% peak-to-peak modulation of the dominant (green) channel
            self.alpha = 0.01 * BASE_COLOR[1] * CHANNEL_WEIGHTS
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        lo = self.base_bpm + self.hr_offset_bpm - self.hrv_bpm
        hi = self.base_bpm + self.hr_offset_bpm + self.hrv_bpm
        if lo < 40.0 or hi > 180.0:
            raise ConfigError(f"heart rate range [{lo:.1f}, {hi:.1f}] leaves 40-180 bpm")


def gen_subject(seed: int) -> SubjectMorph:
    rng = np.random.default_rng(seed)
    return SubjectMorph(
        a1=rng.uniform(0.8, 1.2),
        mu1=rng.uniform(0.20, 0.30),
        sigma1=rng.uniform(0.05, 0.10),
        a2=rng.uniform(0.25, 0.50),
        mu2=rng.uniform(0.55, 0.75),
        sigma2=rng.uniform(0.08, 0.15),
        seed=seed,
    )


def template(subj: SubjectMorph, phases) -> np.ndarray:
    """Waveform value at each phase; bumps wrap periodically."""
    phi = np.asarray(phases, dtype=np.float64) % 1.0
    out = np.zeros_like(phi)
    for a, mu, sig in ((subj.a1, subj.mu1, subj.sigma1), (subj.a2, subj.mu2, subj.sigma2)):
        for k in (-1.0, 0.0, 1.0):
            out += a * np.exp(-0.5 * ((phi - mu - k) / sig) ** 2)
    return out


def template_peak_phase(subj: SubjectMorph, resolution: int = 20000) -> float:
    """Phase of the systolic maximum (numeric argmax on a fine grid)."""
    phi = np.arange(resolution) / resolution
    return float(phi[int(np.argmax(template(subj, phi)))])


def peak_aligned_template(subj: SubjectMorph, n: int = 90) -> np.ndarray:
    """One peak-to-peak cycle sampled at n points, starting at the peak."""
    start = template_peak_phase(subj)
    return template(subj, start + np.linspace(0.0, 1.0, n))


def phase_trajectory(prof: SessionProfile, t: np.ndarray) -> np.ndarray:
    """Closed-form integral of the instantaneous heart rate.

    HR(t) = base + offset + hrv * sin(2 pi f t) with f = HRV_FREQ_HZ, so the
    same continuous phase can be sampled at any rate.
    """
    steady = (prof.base_bpm + prof.hr_offset_bpm) / 60.0
    w = 2.0 * math.pi * HRV_FREQ_HZ
    return steady * t + (prof.hrv_bpm / 60.0) * (1.0 - np.cos(w * t)) / w


def pulse_wave(subj: SubjectMorph, prof: SessionProfile, duration_s: float, fs: float) -> np.ndarray:
    t = np.arange(int(round(duration_s * fs))) / fs
    return template(subj, phase_trajectory(prof, t))


def gen_cppg(
    subj: SubjectMorph,
    prof: SessionProfile,
    duration_s: float,
    fs: float,
    subject_id: int = 0,
    rng: np.random.Generator | None = None,
) -> CppgTrace:
    """Contact-PPG trace; additive Gaussian noise at the profile's sigma."""
    if duration_s < 10.0:
        raise ConfigError("cPPG generation needs at least 10 s")
    clean = pulse_wave(subj, prof, duration_s, fs)
    if rng is None:
        rng = np.random.default_rng(subj.seed)
    noisy = clean + rng.normal(0.0, prof.noise_sigma, size=clean.shape)
    return CppgTrace(noisy, fs, subject_id)


def render_video(
    subj: SubjectMorph,
    prof: SessionProfile,
    duration_s: float,
    fps: float,
    height: int = 36,
    width: int = 36,
    seed: int = 0,
) -> FrameSequence:
    """Pulse-bearing video: base skin color + per-pixel gain * pulse + noise.

    pixel(t, h, w, c) = B_c + g(h, w) * alpha_c * s(t) + eps, with s scaled
    to unit peak-to-peak and gains fixed per video in [0.5, 1.5].
    """
    if height < 6 or width < 6:
        raise ConfigError("frame must be at least 6x6")
    s = pulse_wave(subj, prof, duration_s, fps)
    ptp = s.max() - s.min()
    s_norm = (s - s.mean()) / ptp if ptp > 0 else np.zeros_like(s)
    rng = np.random.default_rng(seed)
    gains = rng.uniform(0.5, 1.5, size=(height, width))
    # worst-case deterministic excursion must stay inside [0, 1]
    reach = 1.5 * np.abs(s_norm).max() * prof.alpha
    if np.any(BASE_COLOR + reach > 1.0) or np.any(BASE_COLOR - reach < 0.0):
        raise ConfigError("modulation amplitude would leave the [0, 1] pixel range")
    frames = (
        BASE_COLOR[None, None, None, :]
        + gains[None, :, :, None] * prof.alpha[None, None, None, :] * s_norm[:, None, None, None]
    )
    if prof.noise_sigma > 0:
        frames = frames + rng.normal(0.0, prof.noise_sigma, size=frames.shape)
    return FrameSequence(np.clip(frames, 0.0, 1.0), fps)


def _write_cppg_csv(path: Path, trace: CppgTrace) -> None:
    path.write_text("".join(f"{v:.17g}\n" for v in trace.samples))


def _corner_landmarks(height: int, width: int) -> list[list[int]]:
    # inset scales with the frame so the padded crop never undercuts the
    # 6x6 de-identification grid
    inset = max(1, min(height, width) // 12)
    return [
        [inset, inset],
        [width - 1 - inset, inset],
        [width - 1 - inset, height - 1 - inset],
        [inset, height - 1 - inset],
    ]


def gen_dataset(
    n_subjects: int,
    duration_s: float,
    out_dir,
    seed: int,
    sessions: int = 2,
    fps: float = 30.0,
    frame_size: int = 36,
    noise_sigma: float = 0.003,
    hrv_bpm: float = 2.0,
) -> Path:
    """Write a full synthetic rPPG dataset; returns the manifest path.

    Session 1 is at rest (base HR uniform in 60-90 bpm); session 2 adds a
    post-exercise offset of 15-25 bpm. Each session gets one video, one
    paired cPPG trace sampled from the same phase trajectory, and static
    corner landmarks. Byte-identical for a fixed seed.
    """
    if n_subjects < 2:
        raise ConfigError("need at least 2 subjects")
    if sessions not in (1, 2):
        raise ConfigError("sessions must be 1 or 2")
    out = Path(out_dir)
    for sub in ("videos", "cppg", "landmarks"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    root = np.random.default_rng(seed)
    records = []
    lm_name = "landmarks/static.json"
    (out / lm_name).write_text(
        json.dumps(_corner_landmarks(frame_size, frame_size)) + "\n"
    )
    for s in range(n_subjects):
        subj = gen_subject(int(root.integers(0, 2**31)))
        base = float(root.uniform(60.0, 90.0))
        offset2 = float(root.uniform(15.0, 25.0))
        for sess in range(1, sessions + 1):
            prof = SessionProfile(
                base_bpm=base,
                hrv_bpm=hrv_bpm,
                hr_offset_bpm=0.0 if sess == 1 else offset2,
                noise_sigma=noise_sigma,
            )
            vid_seed = int(root.integers(0, 2**31))
            cppg_rng = np.random.default_rng(int(root.integers(0, 2**31)))
            stem = f"subject{s:02d}_session{sess}"
            video = render_video(subj, prof, duration_s, fps, frame_size, frame_size, vid_seed)
            save_frames(out / "videos" / f"{stem}.rppg", video)
            trace = gen_cppg(subj, prof, duration_s, fps, subject_id=s, rng=cppg_rng)
            _write_cppg_csv(out / "cppg" / f"{stem}.csv", trace)
            records.append(
                {
                    "video_path": f"videos/{stem}.rppg",
                    "subject_id": s,
                    "session_tag": f"session{sess}",
                    "fps": fps,
                    "landmarks_path": lm_name,
                    "cppg_path": f"cppg/{stem}.csv",
                }
            )
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")
    return manifest_path


def gen_cppg_dataset(
    n_subjects: int,
    duration_s: float,
    out_dir,
    seed: int,
    fs: float = 60.0,
    noise_sigma: float = 0.003,
    hrv_bpm: float = 2.0,
) -> Path:
    """External cPPG-only identity set (for the hybrid training branch)."""
    if n_subjects < 2:
        raise ConfigError("need at least 2 subjects")
    out = Path(out_dir)
    (out / "cppg").mkdir(parents=True, exist_ok=True)
    root = np.random.default_rng(seed)
    records = []
    for s in range(n_subjects):
        subj = gen_subject(int(root.integers(0, 2**31)))
        prof = SessionProfile(
            base_bpm=float(root.uniform(55.0, 95.0)),
            hrv_bpm=hrv_bpm,
            noise_sigma=noise_sigma,
        )
        rng = np.random.default_rng(int(root.integers(0, 2**31)))
        trace = gen_cppg(subj, prof, duration_s, fs, subject_id=s, rng=rng)
        name = f"cppg/ext_subject{s:02d}.csv"
        _write_cppg_csv(out / name, trace)
        records.append({"cppg_path": name, "subject_id": s, "fs": fs})
    manifest_path = out / "cppg_manifest.json"
    manifest_path.write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")
    return manifest_path
