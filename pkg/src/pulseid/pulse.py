"""Stage 1: unsupervised contrastive pretraining of the pulse model.

The pulse model maps a normalized 36 x T x 3 ST map to a 4 x T pulse
map. Training draws two different videos per step, samples 16 half-length
single-row patches from each output map, and pulls the patches' normalized
power spectra together within a video while pushing them apart across
videos. No labels and no contact traces are read anywhere in this stage;
model selection uses the irrelevant power ratio on held-out windows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dsp, evaluate, tensor as T
from .deid import STMap, normalize_rows
from .errors import ConfigError, ContractError, DspError, ModelError
from .optim import AdamState, ParamStore, adam_step

S_OUT = 4  # vertical extent of the pulse map


def init_pulse_model(seed: int) -> ParamStore:
    """Conv stack 3->16->32->32 (3x3, tanh) with 36->12->4 row pooling,
    closed by a 1x1 projection to a single channel."""
    ps = ParamStore(seed)
    ps.create("conv1.k", (16, 3, 3, 3))
    ps.create("conv1.b", (16,), init="zeros")
    ps.create("conv2.k", (32, 16, 3, 3))
    ps.create("conv2.b", (32,), init="zeros")
    ps.create("conv3.k", (32, 32, 3, 3))
    ps.create("conv3.b", (32,), init="zeros")
    ps.create("out.k", (1, 32, 1, 1))
    ps.create("out.b", (1,), init="zeros")
    return ps


def forward_pulse(params: ParamStore, st_data: np.ndarray | T.Tensor) -> T.Tensor:
    """Normalized ST map (36, T, 3) -> pulse map (4, T)."""
    if isinstance(st_data, T.Tensor):
        x = st_data
    else:
        x = T.Tensor(np.transpose(st_data, (2, 0, 1))[None])  # (1, 3, 36, T)
    if x.data.ndim != 4 or x.shape[1] != 3 or x.shape[2] != 36:
        raise ModelError(f"pulse model expects (1, 3, 36, T), got {x.shape}")
    t_len = x.shape[3]
    h = T.tanh(T.bias_channels(T.conv2d(x, params["conv1.k"]), params["conv1.b"]))
    h = T.avg_pool_rows(h, 3)  # 36 -> 12
    h = T.tanh(T.bias_channels(T.conv2d(h, params["conv2.k"]), params["conv2.b"]))
    h = T.avg_pool_rows(h, 3)  # 12 -> 4
    h = T.tanh(T.bias_channels(T.conv2d(h, params["conv3.k"]), params["conv3.b"]))
    h = T.bias_channels(T.conv2d(h, params["out.k"]), params["out.b"])
    return T.reshape(h, (S_OUT, t_len))


@dataclass
class PatchSample:
    """One single-row, half-length window of a pulse map."""

    row: int
    start: int
    length: int
    values: T.Tensor


def sample_patches(pulse_map: T.Tensor, n: int, rng: np.random.Generator) -> list[PatchSample]:
    """Draw n patches of shape (1, T//2) at uniform row/offset.

    An odd time length is truncated by one sample so every patch has the
    same even-split length.
    """
    s, t_len = pulse_map.shape
    usable = t_len - (t_len % 2)
    length = usable // 2
    patches = []
    for _ in range(n):
        row = int(rng.integers(0, s))
        start = int(rng.integers(0, usable - length + 1))
        patches.append(PatchSample(row, start, length, T.patch_row(pulse_map, row, start, length)))
    return patches


_DFT_CACHE: dict[tuple, tuple] = {}


def _band_dft(length: int, fs: float, band: tuple[float, float]):
    key = (length, fs, band)
    if key not in _DFT_CACHE:
        ks = np.arange(1, length // 2 + 1)
        freqs = ks * fs / length
        keep = (freqs >= band[0]) & (freqs <= band[1])
        ks, freqs = ks[keep], freqs[keep]
        if ks.size == 0:
            raise DspError(f"band {band} holds no frequency bins at length {length}")
        angles = 2.0 * np.pi * np.outer(ks, np.arange(length)) / length
        _DFT_CACHE[key] = (freqs, np.cos(angles), np.sin(angles))
    return _DFT_CACHE[key]


def patch_to_psd(patch: PatchSample | T.Tensor, fs: float, band=dsp.BAND) -> dsp.Psd:
    """Differentiable band-normalized power spectrum of a patch.

    Spatial averaging is a no-op for single-row patches but the values are
    treated as an already-averaged pulse sample. Power is an explicit DFT
    on the in-band bins so gradients flow to the patch.
    """
    x = patch.values if isinstance(patch, PatchSample) else patch
    length = x.shape[0]
    if length < fs:
        raise DspError("patch shorter than 1 s")
    freqs, cos_m, sin_m = _band_dft(length, fs, band)
    col = T.reshape(x, (length, 1))
    centered = T.add_b(col, T.mul_scalar(T.mean_all(col), -1.0))
    re = T.matmul(T.Tensor(cos_m), centered)
    im = T.matmul(T.Tensor(sin_m), centered)
    power = T.add(T.mul(re, re), T.mul(im, im))
    total = T.sum_all(power)
    if total.item() <= 0.0:
        raise DspError("zero-power patch has no spectrum")
    return dsp.Psd(freqs, T.reshape(T.div_b(power, total), (freqs.size,)), band)


def contrastive_loss(psds_a, psds_b) -> T.Tensor:
    """Spectral contrastive loss over two videos' patch PSDs.

    Mean squared distance between same-video PSD pairs (i != j, both
    videos) minus the mean squared distance between cross-video pairs.
    """
    fa = [p.power if isinstance(p, dsp.Psd) else p for p in psds_a]
    fb = [p.power if isinstance(p, dsp.Psd) else p for p in psds_b]
    n = len(fa)
    if n < 2 or len(fb) != n:
        raise ContractError("contrastive loss needs n >= 2 samples per video")
    a = T.stack_rows(fa)
    b = T.stack_rows(fb)
    within = T.add(T.sum_all(T.pairwise_sqdist(a, a)), T.sum_all(T.pairwise_sqdist(b, b)))
    across = T.sum_all(T.pairwise_sqdist(a, b))
    return T.add(
        T.mul_scalar(within, 1.0 / (2.0 * n * (n - 1))),
        T.mul_scalar(across, -1.0 / (n * n)),
    )


def extract_rppg(params: ParamStore, st_map: STMap, band=dsp.BAND) -> dsp.RppgSignal:
    """Pulse signal from an ST map: row-average the pulse map, bandpass,
    and orient systolic peaks upward."""
    norm = normalize_rows(st_map.data)
    pulse_map = forward_pulse(params, norm)
    sig = T.mean_axis(pulse_map, 0)
    banded = T.bandpass_time(sig, st_map.fps, band[0], band[1])
    return dsp.RppgSignal(dsp.orient_positive(banded.data), st_map.fps)


@dataclass
class Stage1Config:
    epochs: int
    seed: int
    lr: float = 1e-3
    window_s: float = 10.0
    n_patches: int = 16
    steps_per_epoch: int | None = None
    band: tuple[float, float] = dsp.BAND


@dataclass
class Stage1Result:
    params: ParamStore
    best_ipr: float
    log: list[dict] = field(default_factory=list)


def _window_ipr(params: ParamStore, st_map: STMap, band) -> float:
    return dsp.ipr(extract_rppg(params, st_map, band))


def validation_ipr(params: ParamStore, val_maps: list[STMap], band=dsp.BAND) -> float:
    """Mean irrelevant power ratio of extracted pulse over validation maps."""
    return float(np.mean([_window_ipr(params, m, band) for m in val_maps]))


def train_stage1(train_maps: list[STMap], val_maps: list[STMap], config: Stage1Config) -> Stage1Result:
    """Contrastive pretraining over raw (unnormalized) ST-map slices.

    Each step normalizes fresh 10 s windows from two distinct videos, so
    the model never sees absolute color levels. The returned parameters
    are the epoch snapshot with the lowest validation IPR.
    """
    if len(train_maps) < 2:
        raise ConfigError("stage-1 training needs at least 2 videos")
    if not val_maps:
        raise ConfigError("stage-1 training needs validation maps")
    rng = np.random.default_rng(config.seed)
    params = init_pulse_model(int(rng.integers(0, 2**31)))
    state = AdamState()
    steps = config.steps_per_epoch or len(train_maps)

    best = {"ipr": validation_ipr(params, val_maps, config.band), "snap": params.snapshot()}
    log = [{"epoch": 0, "loss": None, "val_ipr": best["ipr"]}]

    for epoch in range(1, config.epochs + 1):
        losses = []
        for _ in range(steps):
            i, j = rng.choice(len(train_maps), size=2, replace=False)
            windows = []
            for idx in (int(i), int(j)):
                m = train_maps[idx]
                w = int(round(config.window_s * m.fps))
                if m.data.shape[1] < w:
                    raise ConfigError("training video shorter than one window")
                start = int(rng.integers(0, m.data.shape[1] - w + 1))
                windows.append((normalize_rows(m.data[:, start : start + w, :]), m.fps))
            with T.Tape() as tape:
                psds = []
                for data, fps in windows:
                    pulse_map = forward_pulse(params, data)
                    patches = sample_patches(pulse_map, config.n_patches, rng)
                    psds.append([patch_to_psd(p, fps, config.band) for p in patches])
                loss = contrastive_loss(psds[0], psds[1])
            grads = T.grad(tape, loss, params)
            params, state = adam_step(params, grads, config.lr, state)
            losses.append(loss.item())
        val = validation_ipr(params, val_maps, config.band)
        log.append({"epoch": epoch, "loss": float(np.mean(losses)), "val_ipr": val})
        if val < best["ipr"]:
            best = {"ipr": val, "snap": params.snapshot()}

    params.restore(best["snap"])
    return Stage1Result(params, best["ipr"], log)


def load_split_maps(manifest, window_s: float = 10.0):
    """Slice each session-1 video's ST map into train/val/test portions.

    Returns (train, val, test_intra, test_cross) lists of (record, STMap).
    Slices are cut from the raw map; normalization happens per use.
    """
    from .deid import build_st_map, load_deid

    plan = evaluate.split_dataset(manifest, window_s)
    maps: dict[int, STMap] = {}
    out = {"train": [], "val": [], "test-intra": [], "test-cross": []}
    for sl in plan:
        rec = manifest.records[sl.record_idx]
        if sl.record_idx not in maps:
            maps[sl.record_idx] = build_st_map(load_deid(rec.video_path))
        m = maps[sl.record_idx]
        a = int(sl.t0 * m.fps)
        b = int(sl.t1 * m.fps)
        out[sl.tag].append((rec, STMap(m.data[:, a:b, :], m.fps)))
    return out["train"], out["val"], out["test-intra"], out["test-cross"]
