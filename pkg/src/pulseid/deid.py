"""Face de-identification: 6x6 block-mean downsampling, cell permutation,
and the 36 x T x 3 spatiotemporal map fed to the pulse model.

Appearance is destroyed (36 shuffled color cells carry no usable face
structure) while the pulse modulation, being spatially redundant, survives.
The permutation is fixed within a video and distinct across videos.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DeidError
from .ingest import FrameSequence, load_frames, save_frames

GRID = 6
CELLS = GRID * GRID


@dataclass
class DeidVideo:
    """De-identified video (T, 6, 6, 3) plus the permutation that made it."""

    data: np.ndarray
    permutation: list[int]
    fps: float
    seed: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape[1:] != (GRID, GRID, 3):
            raise DeidError(f"deid video must be (T, {GRID}, {GRID}, 3)")
        if sorted(self.permutation) != list(range(CELLS)):
            raise DeidError("permutation must be a bijection on 0..35")


@dataclass
class STMap:
    """Spatiotemporal map (36, T, 3): row r is the time series of cell r."""

    data: np.ndarray
    fps: float


def downsample(v: FrameSequence) -> np.ndarray:
    """Block-mean each frame onto a 6x6 grid -> (T, 6, 6, 3).

    Blocks are near-equal; remainder pixels join the last block per axis.
    """
    t, h, w, _ = v.data.shape
    if h < GRID or w < GRID:
        raise DeidError(f"frame {h}x{w} smaller than the {GRID}x{GRID} grid")
    bh, bw = h // GRID, w // GRID
    out = np.empty((t, GRID, GRID, 3))
    for i in range(GRID):
        ys, ye = i * bh, (i + 1) * bh if i < GRID - 1 else h
        for j in range(GRID):
            xs, xe = j * bw, (j + 1) * bw if j < GRID - 1 else w
            out[:, i, j, :] = v.data[:, ys:ye, xs:xe, :].mean(axis=(1, 2))
    return out


def _fisher_yates(n: int, rng: np.random.Generator) -> list[int]:
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def permute(v_d: np.ndarray, video_seed: int, fps: float) -> DeidVideo:
    """Shuffle the 36 cells with a permutation drawn from video_seed.

    The same permutation applies to every frame; distinct seeds give
    distinct permutations (up to the 1/36! collision chance).
    """
    rng = np.random.default_rng(video_seed)
    perm = _fisher_yates(CELLS, rng)
    t = v_d.shape[0]
    flat = v_d.reshape(t, CELLS, 3)
    shuffled = flat[:, perm, :].reshape(t, GRID, GRID, 3)
    return DeidVideo(shuffled, perm, fps, video_seed)


def invert_permutation(perm: list[int]) -> list[int]:
    inv = [0] * len(perm)
    for i, p in enumerate(perm):
        inv[p] = i
    return inv


def build_st_map(vd: DeidVideo) -> STMap:
    """(T, 6, 6, 3) -> (36, T, 3); row r carries cell r over time."""
    t = vd.data.shape[0]
    if t < 2 * vd.fps:
        raise DeidError("video shorter than 2 s cannot produce an ST map")
    return STMap(vd.data.reshape(t, CELLS, 3).transpose(1, 0, 2).copy(), vd.fps)


def normalize_rows(data: np.ndarray) -> np.ndarray:
    """Z-score each (row, channel) series over time; constant rows -> 0.

    Constancy uses a relative floor: rounding dust on a flat series must
    not be amplified into a unit-variance garbage signal.
    """
    mean = data.mean(axis=1, keepdims=True)
    std = data.std(axis=1, keepdims=True)
    live = std > 1e-12 * np.maximum(np.abs(mean), 1.0)
    return np.where(live, (data - mean) / np.where(live, std, 1.0), 0.0)


def normalize_st_map(m: STMap) -> STMap:
    return STMap(normalize_rows(m.data), m.fps)


def video_seed_for(video_path: str, record_index: int) -> int:
    """Stable per-video permutation seed from the manifest entry."""
    digest = hashlib.sha256(f"{video_path}:{record_index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def save_deid(path, vd: DeidVideo) -> None:
    """Write the raw tensor file plus a {permutation, seed, fps} sidecar."""
    path = Path(path)
    save_frames(path, FrameSequence(np.clip(vd.data, 0.0, 1.0), vd.fps))
    sidecar = {"fps": vd.fps, "permutation": vd.permutation, "seed": vd.seed}
    path.with_suffix(".json").write_text(
        json.dumps(sidecar, sort_keys=True, separators=(",", ":")) + "\n"
    )


def load_deid(path) -> DeidVideo:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    frames = load_frames(path, fps=float(meta["fps"]))
    return DeidVideo(frames.data, [int(p) for p in meta["permutation"]], float(meta["fps"]), int(meta["seed"]))
