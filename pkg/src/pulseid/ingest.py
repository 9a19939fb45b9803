"""Dataset loading: manifests, raw frame tensors, landmarks, cPPG traces.

File formats
------------
Raw frames: magic ``RPPG``, u32 version=1, u32 T,H,W,C, then T*H*W*C f32
little-endian values in row-major (t, h, w, c) order.

Manifest: JSON array of records ``{video_path, subject_id, session_tag,
fps, landmarks_path?, cppg_path?}``. Paths are resolved relative to the
manifest's directory. Subject ids are relabeled to a dense 0..N-1 range
(sorted original order); the original id is kept on the record.

Landmarks: JSON, either one static point list ``[[x, y], ...]`` or one
list per frame. cPPG: single-column CSV, one sample per line; the sample
rate comes from the manifest record.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, IngestError

FRAME_MAGIC = b"RPPG"
FRAME_VERSION = 1


@dataclass
class FrameSequence:
    """RGB video tensor (T, H, W, 3) with values in [0, 1]."""

    data: np.ndarray
    fps: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4 or self.data.shape[3] != 3 or self.data.shape[0] < 1:
            raise IngestError(f"frames must be (T, H, W, 3), got {self.data.shape}")
        if self.fps <= 0:
            raise IngestError("fps must be positive")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise IngestError("frame values must lie in [0, 1]")


@dataclass
class LandmarkSet:
    """Per-frame boundary points, or a single static point set."""

    frames: list[np.ndarray]
    static: bool

    def all_points(self) -> np.ndarray:
        return np.concatenate(self.frames, axis=0)


@dataclass
class CppgTrace:
    samples: np.ndarray
    fs: float
    subject_id: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.fs <= 0:
            raise IngestError("cppg fs must be positive")
        if self.samples.size < 2 * self.fs:
            raise IngestError("trace shorter than 2 s")


@dataclass
class ManifestRecord:
    video_path: str
    subject_id: int
    session_tag: str
    fps: float
    orig_subject_id: int
    landmarks_path: str | None = None
    cppg_path: str | None = None


@dataclass
class Manifest:
    records: list[ManifestRecord]
    path: str
    n_subjects: int = field(init=False)

    def __post_init__(self):
        self.n_subjects = len({r.subject_id for r in self.records})


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise IngestError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise IngestError(f"{path}: manifest must be a JSON array")
    if not raw:
        raise IngestError(f"{path}: empty manifest")

    base = path.parent
    records = []
    for i, rec in enumerate(raw):
        if not isinstance(rec, dict):
            raise IngestError(f"record {i}: not an object")
        for fld in ("video_path", "subject_id", "session_tag", "fps"):
            if fld not in rec:
                raise IngestError(f"record {i}: missing field {fld!r}")
        fps = rec["fps"]
        if not isinstance(fps, (int, float)) or fps <= 0:
            raise IngestError(f"record {i}: fps must be a positive number")
        if not isinstance(rec["subject_id"], int):
            raise IngestError(f"record {i}: subject_id must be an integer")
        records.append(
            ManifestRecord(
                video_path=str(base / rec["video_path"]),
                subject_id=rec["subject_id"],
                session_tag=str(rec["session_tag"]),
                fps=float(fps),
                orig_subject_id=rec["subject_id"],
                landmarks_path=str(base / rec["landmarks_path"]) if rec.get("landmarks_path") else None,
                cppg_path=str(base / rec["cppg_path"]) if rec.get("cppg_path") else None,
            )
        )

    relabel = {orig: new for new, orig in enumerate(sorted({r.subject_id for r in records}))}
    for r in records:
        r.subject_id = relabel[r.orig_subject_id]
    return Manifest(records, str(path))


@dataclass
class CppgRecord:
    cppg_path: str
    subject_id: int
    fs: float
    orig_subject_id: int


def load_cppg_manifest(path) -> list[CppgRecord]:
    """External cPPG identity set: JSON array of {cppg_path, subject_id, fs}."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    raw = json.loads(path.read_text())
    if not isinstance(raw, list) or not raw:
        raise IngestError(f"{path}: empty manifest")
    base = path.parent
    records = []
    for i, rec in enumerate(raw):
        for fld in ("cppg_path", "subject_id", "fs"):
            if fld not in rec:
                raise IngestError(f"record {i}: missing field {fld!r}")
        records.append(
            CppgRecord(
                cppg_path=str(base / rec["cppg_path"]),
                subject_id=int(rec["subject_id"]),
                fs=float(rec["fs"]),
                orig_subject_id=int(rec["subject_id"]),
            )
        )
    relabel = {orig: new for new, orig in enumerate(sorted({r.subject_id for r in records}))}
    for r in records:
        r.subject_id = relabel[r.orig_subject_id]
    return records


def save_frames(path, frames: FrameSequence) -> None:
    t, h, w, c = frames.data.shape
    header = FRAME_MAGIC + struct.pack("<5I", FRAME_VERSION, t, h, w, c)
    Path(path).write_bytes(header + frames.data.astype("<f4").tobytes())


def peek_frames_header(path) -> tuple[int, int, int, int]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        head = fh.read(24)
    if len(head) < 24 or head[:4] != FRAME_MAGIC:
        raise FormatError(f"{path}: bad frame-file header")
    version, t, h, w, c = struct.unpack("<5I", head[4:24])
    if version != FRAME_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    return t, h, w, c


def load_frames(path, fps: float = 30.0) -> FrameSequence:
    t, h, w, c = peek_frames_header(path)
    blob = Path(path).read_bytes()[24:]
    n = t * h * w * c
    if len(blob) < 4 * n:
        raise FormatError(f"{path}: payload shorter than header promises")
    if len(blob) > 4 * n:
        raise FormatError(f"{path}: {len(blob) - 4 * n} trailing bytes")
    if c != 3:
        raise FormatError(f"{path}: expected 3 channels, got {c}")
    data = np.frombuffer(blob, dtype="<f4").astype(np.float64).reshape(t, h, w, c)
    return FrameSequence(data, fps)


def load_landmarks(path) -> LandmarkSet:
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, list) or not raw:
        raise IngestError(f"{path}: empty landmark file")
    if isinstance(raw[0][0], (int, float)):
        frames = [np.asarray(raw, dtype=np.float64)]
        static = True
    else:
        frames = [np.asarray(f, dtype=np.float64) for f in raw]
        static = False
    for f in frames:
        if f.ndim != 2 or f.shape[1] != 2 or f.shape[0] < 1:
            raise IngestError(f"{path}: landmark frames must be (P, 2)")
    return LandmarkSet(frames, static)


def crop_face(v: FrameSequence, lm: LandmarkSet) -> FrameSequence:
    """Crop to the landmark bounding box, expanded 10% per side.

    A static union box over all landmark frames is used so the crop cannot
    introduce temporal color jitter. Output pixels are a subset of input
    pixels; no resampling.
    """
    t, h, w, _ = v.data.shape
    pts = lm.all_points()
    if len(lm.frames) not in (1, t):
        raise IngestError("landmarks must be static or one set per frame")
    if pts[:, 0].min() < 0 or pts[:, 0].max() > w - 1 or pts[:, 1].min() < 0 or pts[:, 1].max() > h - 1:
        raise IngestError("landmark coordinates outside frame bounds")
    x0, x1 = pts[:, 0].min(), pts[:, 0].max()
    y0, y1 = pts[:, 1].min(), pts[:, 1].max()
    pad_x, pad_y = 0.1 * (x1 - x0), 0.1 * (y1 - y0)
    xs = max(0, math.floor(x0 - pad_x))
    xe = min(w, math.ceil(x1 + pad_x))
    ys = max(0, math.floor(y0 - pad_y))
    ye = min(h, math.ceil(y1 + pad_y))
    if xe - xs <= 0 or ye - ys <= 0:
        raise IngestError("degenerate box: landmark area is empty")
    return FrameSequence(v.data[:, ys:ye, xs:xe, :].copy(), v.fps)


def load_cppg(path, fs: float, subject_id: int) -> CppgTrace:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    samples = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            samples.append(float(line))
        except ValueError as exc:
            raise FormatError(f"{path}: non-numeric value at line {lineno}") from exc
    return CppgTrace(np.asarray(samples), fs, subject_id)


def resample(x, fs_in: float, fs_out: float) -> np.ndarray:
    """Linear interpolation onto a uniform fs_out grid over the same span."""
    if fs_in <= 0 or fs_out <= 0:
        raise ConfigError("sample rates must be positive")
    x = np.asarray(x, dtype=np.float64)
    if fs_in == fs_out:
        return x.copy()
    t_in = np.arange(x.size) / fs_in
    n_out = int(round((x.size - 1) * fs_out / fs_in)) + 1
    t_out = np.arange(n_out) / fs_out
    return np.interp(t_out, t_in, x)
