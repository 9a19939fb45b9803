"""Stage 2: identity training on pulse-cycle morphology.

A shared morphology encoder embeds 90-sample periodic segments into a
64-dim feature; two softmax heads classify identities of the video branch
and of an external contact-PPG branch. The branches alternate: a video
step updates the pulse model, the encoder, and the video head; a contact
step updates the encoder and contact head only. The external branch
exists to steer the encoder toward waveform shape, which then flows into
the video branch through the shared encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import pulse, dsp, evaluate, tensor as T
from .deid import STMap, normalize_rows
from .errors import ConfigError, ContractError, DspError, EvalError, ModelError
from .optim import AdamState, ParamStore, adam_step

FEATURE_DIM = 64
TOKEN_DIM = 32
HEADS = 2
FF_DIM = 64
N_ENCODER_LAYERS = 2


def init_encoder(seed: int) -> ParamStore:
    """conv1d 1->16->32 (kernel 5, ReLU, /2 max-pool) -> 22 tokens of 32
    -> 2 transformer encoder layers -> mean-pool -> dense 32->64."""
    ps = ParamStore(seed)
    ps.create("conv1.k", (16, 1, 5))
    ps.create("conv1.b", (16,), init="zeros")
    ps.create("conv2.k", (32, 16, 5))
    ps.create("conv2.b", (32,), init="zeros")
    for i in range(1, N_ENCODER_LAYERS + 1):
        for name in ("wq", "wk", "wv"):
            ps.create(f"tf{i}.{name}", (TOKEN_DIM, TOKEN_DIM))
        ps.create(f"tf{i}.ln1.g", (TOKEN_DIM,), init="zeros")
        ps.create(f"tf{i}.ln1.b", (TOKEN_DIM,), init="zeros")
        ps.create(f"tf{i}.ff1.w", (TOKEN_DIM, FF_DIM))
        ps.create(f"tf{i}.ff1.b", (FF_DIM,), init="zeros")
        ps.create(f"tf{i}.ff2.w", (FF_DIM, TOKEN_DIM))
        ps.create(f"tf{i}.ff2.b", (TOKEN_DIM,), init="zeros")
        ps.create(f"tf{i}.ln2.g", (TOKEN_DIM,), init="zeros")
        ps.create(f"tf{i}.ln2.b", (TOKEN_DIM,), init="zeros")
    ps.create("fc.w", (TOKEN_DIM, FEATURE_DIM))
    ps.create("fc.b", (FEATURE_DIM,), init="zeros")
    return ps


def _ln_params(ps: ParamStore, name: str) -> tuple[T.Tensor, T.Tensor]:
    # layer-norm gains are stored zero-centered so freshly created stores
    # start at identity scale
    g = T.add_scalar(ps[f"{name}.g"], 1.0)
    return g, ps[f"{name}.b"]


def forward_encoder(params: ParamStore, segments: T.Tensor | np.ndarray) -> T.Tensor:
    """Z-scored segments (K, 90) -> morphology features (K, 64)."""
    x = segments if isinstance(segments, T.Tensor) else T.Tensor(segments)
    if x.data.ndim != 2 or x.shape[1] != dsp.SEGMENT_LEN:
        raise ModelError(f"morphology model expects (K, {dsp.SEGMENT_LEN}), got {x.shape}")
    k = x.shape[0]
    h = T.reshape(x, (k, 1, dsp.SEGMENT_LEN))
    h = T.max_pool1d(T.relu(T.bias_channels(T.conv1d(h, params["conv1.k"]), params["conv1.b"])), 2)
    h = T.max_pool1d(T.relu(T.bias_channels(T.conv1d(h, params["conv2.k"]), params["conv2.b"])), 2)
    tokens = T.permute(h, (0, 2, 1))  # (K, 22, 32)
    for i in range(1, N_ENCODER_LAYERS + 1):
        attn = T.attention(
            tokens, params[f"tf{i}.wq"], params[f"tf{i}.wk"], params[f"tf{i}.wv"], HEADS
        )
        g1, b1 = _ln_params(params, f"tf{i}.ln1")
        tokens = T.layer_norm(T.add(tokens, attn), g1, b1)
        ff = _bias_last(T.matmul(tokens, params[f"tf{i}.ff1.w"]), params[f"tf{i}.ff1.b"])
        ff = _bias_last(T.matmul(T.relu(ff), params[f"tf{i}.ff2.w"]), params[f"tf{i}.ff2.b"])
        g2, b2 = _ln_params(params, f"tf{i}.ln2")
        tokens = T.layer_norm(T.add(tokens, ff), g2, b2)
    pooled = T.mean_axis(tokens, 1)  # (K, 32)
    return T.dense(pooled, params["fc.w"], params["fc.b"])


def _bias_last(x: T.Tensor, b: T.Tensor) -> T.Tensor:
    return T.affine_last(x, T.Tensor(np.ones(b.shape)), b)


def init_head(seed: int, n_ids: int) -> ParamStore:
    ps = ParamStore(seed)
    ps.create("w", (FEATURE_DIM, n_ids))
    ps.create("b", (n_ids,), init="zeros")
    return ps


def head_probs(head: ParamStore, features: T.Tensor) -> T.Tensor:
    """Identity probabilities (K, N); rows sum to 1."""
    return T.softmax(T.dense(features, head["w"], head["b"]))


def ce_loss(probs: T.Tensor, label: int) -> T.Tensor:
    """Mean negative log probability of the true class over K segments.

    Probabilities are floored at 1e-12 inside the log so a confidently
    wrong head cannot produce an infinite loss.
    """
    if probs.data.ndim != 2:
        raise ContractError("ce_loss expects (K, N) probabilities")
    if not (0 <= label < probs.shape[1]):
        raise ContractError(f"label {label} outside 0..{probs.shape[1] - 1}")
    return T.neg(T.mean_all(T.log_clamped(T.gather_col(probs, label))))


# ---------------------------------------------------------------------------
# training


@dataclass
class Stage2Config:
    steps: int
    seed: int
    lr: float = 1e-3
    window_s: float = 10.0
    eval_every: int = 50
    cppg_block: int = 10
    hybrid: bool = True
    band: tuple[float, float] = dsp.BAND


@dataclass
class Stage2Result:
    groups: dict[str, ParamStore]
    best_eer: float
    log: list[dict] = field(default_factory=list)


def _segment_window(params_pulse, window: np.ndarray, fps: float, band) -> T.Tensor | None:
    """Differentiable window -> z-scored segments, or None if no clean beats."""
    pulse_map = pulse.forward_pulse(params_pulse, normalize_rows(window))
    sig = T.mean_axis(pulse_map, 0)
    sig = T.bandpass_time(sig, fps, band[0], band[1])
    flip = dsp.polarity(sig.data)
    if flip < 0:
        sig = T.mul_scalar(sig, flip)
    try:
        peaks = dsp.detect_peaks(dsp.RppgSignal(sig.data, fps))
    except DspError:
        return None
    bounds, _ = dsp.segment_bounds(peaks, fps)
    if not bounds:
        return None
    return T.zscore_last(T.extract_segments(sig, bounds, dsp.SEGMENT_LEN))


def _prepare_cppg_bank(cppg_records) -> tuple[list[tuple[np.ndarray, int]], int]:
    """Precompute (segments, label) per external trace."""
    from .ingest import load_cppg

    bank = []
    for rec in cppg_records:
        trace = load_cppg(rec.cppg_path, rec.fs, rec.subject_id)
        batch = dsp.cppg_segments(trace.samples, trace.fs)
        bank.append((batch.segments, rec.subject_id))
    n_ids = len({label for _, label in bank})
    if n_ids < 2:
        raise ConfigError("external cPPG set needs at least 2 identities")
    return bank, n_ids


def validation_scores(
    params_pulse: ParamStore,
    params_morph: ParamStore,
    head_r: ParamStore,
    val_maps: list[tuple[int, STMap]],
    band=dsp.BAND,
) -> list[evaluate.ScoreRow]:
    """Per-segment identity scores over validation maps."""
    rows = []
    for label, st_map in val_maps:
        try:
            sig = pulse.extract_rppg(params_pulse, st_map, band)
            peaks = dsp.detect_peaks(sig)
            batch = dsp.segment_and_resample(sig, peaks)
        except DspError:
            continue
        feats = forward_encoder(params_morph, batch.segments)
        probs = head_probs(head_r, feats).data
        rows.extend(evaluate.ScoreRow(label, probs[i]) for i in range(probs.shape[0]))
    return rows


def _validation_eer(params_pulse, params_morph, head_r, val_maps, n_subjects, band) -> float:
    rows = validation_scores(params_pulse, params_morph, head_r, val_maps, band)
    if not rows:
        return 1.0
    try:
        return evaluate.per_subject_eval(rows, n_subjects)["mean_eer"]
    except EvalError:
        return 1.0


def rppg_mini_step(groups, states, window: np.ndarray, fps: float, label: int, config) -> float | None:
    """One video-branch step: updates the pulse model, encoder, video head.

    Returns the loss, or None when the window produced no clean beats (the
    step is skipped without touching any parameters).
    """
    with T.Tape() as tape:
        segments = _segment_window(groups["pulse"], window, fps, config.band)
        if segments is None:
            return None
        probs = head_probs(groups["head_rppg"], forward_encoder(groups["morph"], segments))
        loss = ce_loss(probs, label)
    for name in ("pulse", "morph", "head_rppg"):
        grads = T.grad(tape, loss, groups[name])
        groups[name], states[name] = adam_step(groups[name], grads, config.lr, states[name])
    return loss.item()


def cppg_mini_step(groups, states, segments: np.ndarray, label: int, config) -> float:
    """One contact-branch step: updates the encoder and contact head only."""
    with T.Tape() as tape:
        probs = head_probs(groups["head_cppg"], forward_encoder(groups["morph"], T.Tensor(segments)))
        loss = ce_loss(probs, label)
    for name in ("morph", "head_cppg"):
        grads = T.grad(tape, loss, groups[name])
        groups[name], states[name] = adam_step(groups[name], grads, config.lr, states[name])
    return loss.item()


def train_stage2(
    train_maps: list[tuple[int, STMap]],
    val_maps: list[tuple[int, STMap]],
    cppg_records,
    pulse_params: ParamStore,
    config: Stage2Config,
) -> Stage2Result:
    """Alternating identity training; returns the lowest-validation-EER
    snapshot of all four parameter groups.

    ``train_maps``/``val_maps`` are (subject_id, raw ST-map slice) pairs.
    With ``config.hybrid`` false the contact branch is skipped entirely
    (its head keeps its initialization), which is the ablation variant.
    """
    n_rppg = len({label for label, _ in train_maps})
    if n_rppg < 2:
        raise ConfigError("stage-2 training needs at least 2 identities")
    rng = np.random.default_rng(config.seed)

    groups: dict[str, ParamStore] = {"pulse": pulse_params}
    groups["morph"] = init_encoder(int(rng.integers(0, 2**31)))
    groups["head_rppg"] = init_head(int(rng.integers(0, 2**31)), n_rppg)

    if config.hybrid:
        bank, n_cppg = _prepare_cppg_bank(cppg_records)
        groups["head_cppg"] = init_head(int(rng.integers(0, 2**31)), n_cppg)
        by_id: dict[int, list[np.ndarray]] = {}
        for segs, label in bank:
            by_id.setdefault(label, []).append(segs)
    else:
        groups["head_cppg"] = init_head(int(rng.integers(0, 2**31)), 2)

    states = {name: AdamState() for name in groups}

    def snapshot():
        return {name: ps.snapshot() for name, ps in groups.items()}

    best_eer = _validation_eer(
        groups["pulse"], groups["morph"], groups["head_rppg"], val_maps, n_rppg, config.band
    )
    best_snap = snapshot()
    log = [{"step": 0, "branch": "init", "loss": None, "val_eer": best_eer}]

    for step in range(1, config.steps + 1):
        vid = int(rng.integers(0, len(train_maps)))
        label, st_map = train_maps[vid]
        w = int(round(config.window_s * st_map.fps))
        start = int(rng.integers(0, max(1, st_map.data.shape[1] - w + 1)))
        window = st_map.data[:, start : start + w, :]
        loss_r = rppg_mini_step(groups, states, window, st_map.fps, label, config)
        if loss_r is None:
            log.append({"step": step, "branch": "rppg", "event": "skipped: no clean beats"})
        else:
            log.append({"step": step, "branch": "rppg", "loss": loss_r})

        if config.hybrid:
            label_c = int(rng.choice(sorted(by_id)))
            segs_all = by_id[label_c][int(rng.integers(0, len(by_id[label_c])))]
            block = min(config.cppg_block, segs_all.shape[0])
            s0 = int(rng.integers(0, segs_all.shape[0] - block + 1))
            loss_c = cppg_mini_step(groups, states, segs_all[s0 : s0 + block], label_c, config)
            log.append({"step": step, "branch": "cppg", "loss": loss_c})

        if step % config.eval_every == 0 or step == config.steps:
            eer = _validation_eer(
                groups["pulse"], groups["morph"], groups["head_rppg"], val_maps, n_rppg, config.band
            )
            log.append({"step": step, "branch": "val", "val_eer": eer})
            if eer < best_eer:
                best_eer = eer
                best_snap = snapshot()

    for name, ps in groups.items():
        ps.restore(best_snap[name])
    return Stage2Result(groups, best_eer, log)


def train_stage2_rppg_only(train_maps, val_maps, pulse_params, config: Stage2Config) -> Stage2Result:
    """Ablation: the contact branch is disabled; its head stays at init."""
    cfg = Stage2Config(**{**config.__dict__, "hybrid": False})
    return train_stage2(train_maps, val_maps, None, pulse_params, cfg)


# ---------------------------------------------------------------------------
# inference


def authenticate(
    groups: dict[str, ParamStore], st_map: STMap, window_beats: int, band=dsp.BAND
) -> np.ndarray:
    """Identity score vectors from consecutive beat windows.

    Per-segment probabilities are averaged over non-overlapping groups of
    ``window_beats`` consecutive segments; a trailing partial group is
    dropped. Returns (n_windows, N) scores in [0, 1].
    """
    if window_beats < 1:
        raise ContractError("window_beats must be positive")
    sig = pulse.extract_rppg(groups["pulse"], st_map, band)
    peaks = dsp.detect_peaks(sig)
    batch = dsp.segment_and_resample(sig, peaks)
    feats = forward_encoder(groups["morph"], batch.segments)
    probs = head_probs(groups["head_rppg"], feats).data
    n_win = probs.shape[0] // window_beats
    if n_win == 0:
        raise DspError(
            f"insufficient beats: {probs.shape[0]} segments < {window_beats} per window"
        )
    used = probs[: n_win * window_beats]
    return used.reshape(n_win, window_beats, -1).mean(axis=1)


def rppg_segment_bank(
    groups: dict[str, ParamStore], maps: list[tuple[int, STMap]], band=dsp.BAND
) -> dict[int, np.ndarray]:
    """Subject id -> stacked extracted segments, for morphology reports."""
    out: dict[int, list[np.ndarray]] = {}
    for label, st_map in maps:
        try:
            sig = pulse.extract_rppg(groups["pulse"], st_map, band)
            peaks = dsp.detect_peaks(sig)
            batch = dsp.segment_and_resample(sig, peaks)
        except DspError:
            continue
        out.setdefault(label, []).append(batch.segments)
    return {label: np.concatenate(parts) for label, parts in out.items()}
