"""Command-line pipeline: synth, deid, pretrain, train, eval, authenticate.

Every command writes a ``run_manifest.json`` next to its outputs recording
the command, its semantic configuration (paths excluded, so reruns in a
different directory stay byte-identical), the seed, and SHA-256 hashes of
the direct input artifacts. Exit codes: 0 success, 2 configuration or
usage error, 3 missing upstream artifact, 4 runtime or data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import checkpoint, pulse, deid, dsp, evaluate, ingest, morph, synth
from .errors import ConfigError, DspError, PulseIdError
from .optim import ParamStore


def _require(args, *names) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) is None]
    if missing:
        raise ConfigError(f"missing required option(s): {', '.join(missing)}")


def _config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_run_manifest(out_dir: Path, command: str, config: dict, seed: int, inputs) -> None:
    doc = {
        "command": command,
        "config": config,
        "config_hash": _config_hash(config),
        "seed": seed,
        "input_hashes": {str(Path(p).name): _file_hash(p) for p in inputs},
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_groups(path) -> dict[str, ParamStore]:
    named = checkpoint.load_tensors(path)
    return {
        prefix: ParamStore.from_tensors(entries)
        for prefix, entries in checkpoint.split_groups(named).items()
    }


def _save_groups(path, groups: dict[str, ParamStore]) -> None:
    checkpoint.save_tensors(
        path, checkpoint.join_groups({k: dict(v.items()) for k, v in groups.items()})
    )


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    _require(args, "subjects", "out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.cppg_only:
        manifest = synth.gen_cppg_dataset(
            args.subjects, args.duration, out, seed=args.seed, fs=args.cppg_fs,
            noise_sigma=args.noise,
        )
        config = {
            "mode": "cppg-only", "subjects": args.subjects, "duration_s": args.duration,
            "fs": args.cppg_fs, "noise_sigma": args.noise,
        }
    else:
        manifest = synth.gen_dataset(
            args.subjects, args.duration, out, seed=args.seed, sessions=args.sessions,
            fps=args.fps, frame_size=args.frame_size, noise_sigma=args.noise,
        )
        config = {
            "mode": "video", "subjects": args.subjects, "duration_s": args.duration,
            "sessions": args.sessions, "fps": args.fps, "frame_size": args.frame_size,
            "noise_sigma": args.noise,
        }
    _write_run_manifest(out, "synth", config, args.seed, [])
    print(manifest)
    return 0


def cmd_deid(args) -> int:
    _require(args, "manifest", "out")
    manifest = ingest.load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = [None] * len(manifest.records)

    def work(index_rec):
        index, rec = index_rec
        frames = ingest.load_frames(rec.video_path, rec.fps)
        if rec.landmarks_path:
            frames = ingest.crop_face(frames, ingest.load_landmarks(rec.landmarks_path))
        seed = deid.video_seed_for(Path(rec.video_path).name, index)
        vd = deid.permute(deid.downsample(frames), seed, rec.fps)
        name = f"deid_{index:02d}_subject{rec.orig_subject_id:02d}_{rec.session_tag}.rppg"
        deid.save_deid(out / name, vd)
        entry = {
            "video_path": name,
            "subject_id": rec.orig_subject_id,
            "session_tag": rec.session_tag,
            "fps": rec.fps,
        }
        if rec.cppg_path:
            entry["cppg_path"] = os.path.relpath(rec.cppg_path, out)
        return index, entry

    jobs = list(enumerate(manifest.records))
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            for index, entry in pool.map(work, jobs):
                entries[index] = entry
    else:
        for job in jobs:
            index, entry = work(job)
            entries[index] = entry
    (out / "manifest.json").write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n")
    _write_run_manifest(out, "deid", {"videos": len(entries)}, args.seed, [args.manifest])
    print(out / "manifest.json")
    return 0


def _session1_slices(manifest, window_s):
    train, val, test_intra, test_cross = pulse.load_split_maps(manifest, window_s)
    pick = lambda items: [(r.subject_id, m) for r, m in items if r.session_tag == "session1"]
    return pick(train), pick(val), pick(test_intra), [(r.subject_id, m) for r, m in test_cross]


def cmd_pretrain(args) -> int:
    _require(args, "manifest", "out")
    manifest = ingest.load_manifest(args.manifest)
    train, val, _, _ = _session1_slices(manifest, args.window)
    config = pulse.Stage1Config(
        epochs=args.epochs, seed=args.seed, lr=args.lr, window_s=args.window,
        steps_per_epoch=args.steps_per_epoch,
    )
    result = pulse.train_stage1([m for _, m in train], [m for _, m in val], config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _save_groups(out / "stage1.pidc", {"pulse": result.params})
    (out / "train_log.json").write_text(json.dumps(result.log, indent=2) + "\n")
    semantic = {"epochs": args.epochs, "lr": args.lr, "window_s": args.window,
                "steps_per_epoch": args.steps_per_epoch}
    _write_run_manifest(out, "pretrain", semantic, args.seed, [args.manifest])
    print(f"{out / 'stage1.pidc'} best_val_ipr={result.best_ipr:.4f}")
    return 0


def cmd_train(args) -> int:
    _require(args, "manifest", "stage1", "out")
    manifest = ingest.load_manifest(args.manifest)
    groups = _load_groups(args.stage1)
    if "pulse" not in groups:
        raise ConfigError(f"{args.stage1}: checkpoint holds no pulse-model group")
    train, val, _, _ = _session1_slices(manifest, args.window)
    config = morph.Stage2Config(
        steps=args.steps, seed=args.seed, lr=args.lr, window_s=args.window,
        eval_every=args.eval_every, hybrid=not args.rppg_only,
    )
    if args.rppg_only:
        result = morph.train_stage2_rppg_only(train, val, groups["pulse"], config)
    else:
        if not args.cppg_manifest:
            raise ConfigError("hybrid training needs --cppg-manifest (or pass --rppg-only)")
        cppg_records = ingest.load_cppg_manifest(args.cppg_manifest)
        result = morph.train_stage2(train, val, cppg_records, groups["pulse"], config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _save_groups(out / "checkpoint.pidc", result.groups)
    (out / "train_log.json").write_text(json.dumps(result.log, indent=2) + "\n")
    semantic = {"steps": args.steps, "lr": args.lr, "window_s": args.window,
                "eval_every": args.eval_every, "hybrid": not args.rppg_only}
    inputs = [args.manifest, args.stage1] + ([args.cppg_manifest] if args.cppg_manifest else [])
    _write_run_manifest(out, "train", semantic, args.seed, inputs)
    print(f"{out / 'checkpoint.pidc'} best_val_eer={result.best_eer:.4f}")
    return 0


def _eval_scores(groups, maps, window_beats, session, threads=1):
    def work(item):
        label, st_map = item
        try:
            return label, morph.authenticate(groups, st_map, window_beats)
        except DspError:
            return label, None

    rows = []
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, maps))
    else:
        results = [work(item) for item in maps]
    for label, scores in results:
        if scores is None:
            continue
        rows.extend(evaluate.ScoreRow(label, s, session) for s in scores)
    return rows


def cmd_eval(args) -> int:
    _require(args, "manifest", "checkpoint", "out")
    manifest = ingest.load_manifest(args.manifest)
    groups = _load_groups(args.checkpoint)
    window_beats = sorted(int(w) for w in args.window_beats.split(","))
    _, _, test_intra, test_cross = _session1_slices(manifest, args.window)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    # ground-truth morphology from each subject's session-1 contact trace
    cppg_by_subject: dict[int, np.ndarray] = {}
    for rec in manifest.records:
        if rec.session_tag == "session1" and rec.cppg_path and rec.subject_id not in cppg_by_subject:
            trace = ingest.load_cppg(rec.cppg_path, rec.fps, rec.subject_id)
            cppg_by_subject[rec.subject_id] = dsp.cppg_segments(trace.samples, trace.fs).segments

    g_only = {"pulse": groups["pulse"]}
    rppg_bank = morph.rppg_segment_bank(g_only, test_intra)
    morphology = evaluate.morphology_report(rppg_bank, cppg_by_subject)
    for s, segs in sorted(rppg_bank.items()):
        evaluate.write_mean_segment_csv(
            out / f"segments_subject{s:02d}.csv",
            s,
            segs.mean(axis=0),
            cppg_by_subject.get(s, np.zeros(dsp.SEGMENT_LEN)).mean(axis=0)
            if s in cppg_by_subject
            else None,
        )

    semantic = {"window_beats": window_beats, "window_s": args.window}
    report: dict = {
        "config_hash": _config_hash(semantic),
        "seed": args.seed,
        "n_subjects": manifest.n_subjects,
        "pearson_mean": morphology["mean"],
        "pearson_per_subject": {str(k): v for k, v in morphology["per_subject"].items()},
        "windows": {},
    }

    can_authenticate = "morph" in groups and "head_rppg" in groups
    if can_authenticate:
        primary = max(window_beats)
        for wb in window_beats:
            intra_rows = _eval_scores(groups, test_intra, wb, "session1", args.threads)
            entry: dict = {}
            if intra_rows:
                rep = evaluate.per_subject_eval(intra_rows, manifest.n_subjects)
                entry["intra"] = {
                    "mean_eer": rep["mean_eer"], "mean_auc": rep["mean_auc"],
                    "per_subject": {str(k): v for k, v in rep["per_subject"].items()},
                    "skipped": rep["skipped"],
                }
            cross_rows = _eval_scores(groups, test_cross, wb, "session2", args.threads)
            if cross_rows:
                rep = evaluate.per_subject_eval(cross_rows, manifest.n_subjects)
                entry["cross"] = {
                    "mean_eer": rep["mean_eer"], "mean_auc": rep["mean_auc"],
                    "per_subject": {str(k): v for k, v in rep["per_subject"].items()},
                    "skipped": rep["skipped"],
                }
            report["windows"][str(wb)] = entry
            name = "scores.csv" if wb == primary else f"scores_w{wb}.csv"
            evaluate.write_scores_csv(out / name, intra_rows + cross_rows)
        top = report["windows"][str(primary)].get("intra", {})
        report["mean_eer"] = top.get("mean_eer")
        report["mean_auc"] = top.get("mean_auc")
    else:
        report["note"] = "checkpoint has no identity heads; morphology-only report"

    evaluate.write_report_json(out / "report.json", report)
    _write_run_manifest(out, "eval", semantic, args.seed, [args.manifest, args.checkpoint])
    print(out / "report.json")
    return 0


def cmd_authenticate(args) -> int:
    _require(args, "checkpoint", "video", "claim")
    groups = _load_groups(args.checkpoint)
    if "morph" not in groups:
        raise ConfigError(f"{args.checkpoint}: stage-2 checkpoint required")
    frames = ingest.load_frames(args.video, fps=args.fps)
    if args.landmarks:
        frames = ingest.crop_face(frames, ingest.load_landmarks(args.landmarks))
    seed = deid.video_seed_for(Path(args.video).name, args.seed)
    vd = deid.permute(deid.downsample(frames), seed, args.fps)
    st_map = deid.build_st_map(vd)
    scores = morph.authenticate(groups, st_map, args.window_beats)
    claim_scores = scores[:, args.claim] if args.claim < scores.shape[1] else None
    if claim_scores is None:
        raise ConfigError(f"claimed id {args.claim} outside 0..{scores.shape[1] - 1}")
    accepted = [bool(int(np.argmax(s)) == args.claim) for s in scores]
    doc = {
        "claim": args.claim,
        "windows": [[float(v) for v in s] for s in scores],
        "claim_scores": [float(v) for v in claim_scores],
        "accepted_windows": accepted,
        "accept_rate": float(np.mean(accepted)),
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulseid",
        description="Pulse-morphology biometrics from de-identified facial video.",
    )
    parser.add_argument("--seed", type=int, default=0, help="global random seed")
    parser.add_argument("--config", type=str, default=None,
                        help="JSON file with default values for any option")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap for parallel-safe stages (deid, eval)")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--subjects", type=int)
    p.add_argument("--duration", type=float, default=120.0, help="seconds per video")
    p.add_argument("--sessions", type=int, default=2)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--frame-size", type=int, default=36)
    p.add_argument("--noise", type=float, default=0.003)
    p.add_argument("--cppg-only", action="store_true",
                   help="emit only contact traces (external identity set)")
    p.add_argument("--cppg-fs", type=float, default=60.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("deid", help="de-identify a dataset's videos")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.set_defaults(func=cmd_deid)

    p = sub.add_parser("pretrain", help="stage 1: unsupervised pulse training")
    p.add_argument("--manifest", help="de-identified manifest")
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--window", type=float, default=10.0)
    p.add_argument("--steps-per-epoch", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="stage 2: identity training")
    p.add_argument("--manifest", help="de-identified manifest")
    p.add_argument("--stage1", help="stage-1 checkpoint")
    p.add_argument("--cppg-manifest", default=None, help="external contact-PPG set")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--hybrid", dest="rppg_only", action="store_false", default=False)
    mode.add_argument("--rppg-only", dest="rppg_only", action="store_true")
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--window", type=float, default=10.0)
    p.add_argument("--eval-every", type=int, default=50)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--manifest", help="de-identified manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--window-beats", default="5,10,20")
    p.add_argument("--window", type=float, default=10.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("authenticate", help="score one video against a claim")
    p.add_argument("--checkpoint")
    p.add_argument("--video", help="raw frame file")
    p.add_argument("--landmarks", default=None)
    p.add_argument("--claim", type=int)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--window-beats", type=int, default=20)
    p.set_defaults(func=cmd_authenticate)

    parser._subcommands = {name: sp for name, sp in sub.choices.items()}
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    # --config supplies defaults; explicit flags still win
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=str, default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            defaults = json.loads(Path(known.config).read_text())
        except FileNotFoundError:
            print(f"error: config file not found: {known.config}", file=sys.stderr)
            return 3
        # subparsers re-parse into a fresh namespace, so defaults must land
        # on every parser, not just the root
        parser.set_defaults(**defaults)
        for sp in parser._subcommands.values():
            sp.set_defaults(**defaults)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return 3
    except PulseIdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
