"""Command-line surface: synthesize benchmarks, extract rhythm, align,
train, generate, and evaluate — all deterministic under a fixed seed."""
from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import align as align_mod
from . import checkpoint, clicktrack, flowgen, metrics, pose, rhythm
from .config import RunConfig, load_config
from .errors import ConfigError, DanceBeatError
from .pose import BeatGrid


def _parallel_map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _clip_ids(data_dir: Path) -> list[str]:
    manifest = data_dir / "manifest.txt"
    if not manifest.exists():
        raise ConfigError(f"no manifest.txt in {data_dir}")
    ids = []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if line.strip():
            ids.append(line.split()[0])
    return sorted(ids)


def _load_dataset(data_dir: Path, cfg: RunConfig):
    ids = _clip_ids(data_dir)
    dataset = []
    for cid in ids:
        p = pose.load_pose_sequence(data_dir / f"{cid}.pose")
        z = pose.load_latent(data_dir / f"{cid}.latent")
        c = pose.load_conditioning(data_dir / f"{cid}.cond")
        dataset.append((p, z, c))
    return ids, dataset


def _write_runlog(path: Path, cfg: RunConfig, command: str) -> None:
    path.write_text(f"command = {command}\n{cfg.to_text()}", encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: RunConfig, args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(f"{out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    manifest_lines = []
    for i in range(args.n_clips):
        cid = f"clip_{i:03d}"
        tempo = float(rng.uniform(cfg.tempo_min, cfg.tempo_max))
        clip_seed = int(rng.integers(2 ** 31 - 1))
        p, grid = pose.synth_dance(
            tempo_bpm=tempo, duration_s=cfg.duration_s, fps=cfg.fps,
            joints=cfg.joints, amplitude=cfg.amplitude, noise_std=cfg.noise_std,
            seed=clip_seed, beat_joint_fraction=cfg.beat_joint_fraction,
            coords=cfg.coords)
        z = pose.synth_latent(grid, cfg.latent_len, cfg.latent_dim, seed=clip_seed + 1)
        c = pose.synth_conditioning(cfg.cond_len, cfg.cond_dim, seed=clip_seed + 2)
        pose.save_pose_sequence(p, out / f"{cid}.pose")
        pose.save_beat_grid(grid, out / f"{cid}.beats")
        pose.save_latent(z, out / f"{cid}.latent")
        pose.save_conditioning(c, out / f"{cid}.cond")
        manifest_lines.append(f"{cid} tempo={tempo!r} seed={clip_seed}")
    (out / "manifest.txt").write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")
    _write_runlog(out / "run.log", cfg, "synth")
    print(f"wrote {args.n_clips} clips to {out}")
    return 0


def cmd_extract(cfg: RunConfig, args) -> int:
    p = pose.load_pose_sequence(args.pose)
    if args.ckpt:
        model = checkpoint.load_model(args.ckpt)
        bank, params = model.bank, model.rhythm_net
    else:
        rng = np.random.default_rng(cfg.seed)
        bank = rhythm.build_wavelet_bank(cfg.scales, cfg.base_period)
        params = rhythm.RhythmParams.init(rng, cfg.scales, cfg.bins, cfg.rhythm_dim,
                                        cfg.hidden_w, cfg.hidden_a)
    r = rhythm.extract_rhythm(p, bank, params)
    rhythm.save_rhythm(r, args.out)
    _write_runlog(Path(args.out).with_suffix(".log"), cfg, "extract")
    print(f"rhythm embedding {r.length}x{r.dim} -> {args.out}")
    return 0


def cmd_align(cfg: RunConfig, args) -> int:
    r = rhythm.load_rhythm(args.rhythm)
    if args.ckpt:
        queries = checkpoint.load_model(args.ckpt).queries
    else:
        rng = np.random.default_rng(cfg.seed)
        queries = align_mod.ContextQueries.init(rng, cfg.latent_len, r.dim)
    a = align_mod.align(r, queries)
    align_mod.save_aligned(a, args.out)
    _write_runlog(Path(args.out).with_suffix(".log"), cfg, "align")
    print(f"aligned rhythm {a.data.shape[0]}x{a.data.shape[1]} -> {args.out}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    data_dir = Path(args.data)
    _ids, dataset = _load_dataset(data_dir, cfg)
    t0 = time.monotonic()
    model = flowgen.train(dataset, cfg.train_config())
    wall = time.monotonic() - t0
    checkpoint.save_model(model, args.out)
    _write_runlog(Path(args.out).with_suffix(".log"), cfg, "train")
    print(f"trained {len(dataset)} clips for {cfg.epochs} epochs; "
          f"loss {model.loss_history[0]:.4f} -> {model.loss_history[-1]:.4f}")
    print(f"wall time {wall:.1f}s", file=sys.stderr)
    return 0


def cmd_generate(cfg: RunConfig, args) -> int:
    model = checkpoint.load_model(args.ckpt)
    p = pose.load_pose_sequence(args.pose)
    cond = pose.load_conditioning(args.cond) if args.cond else None
    sc = cfg.sample_config()
    z = flowgen.generate(model, p, cond, cfg.latent_len, sc,
                         conditioned=not args.unconditional)
    pose.save_latent(z, args.out)
    if args.wav:
        grid = metrics.detect_latent_beats(z, cfg.rel_threshold,
                                           fps=cfg.fps * cfg.latent_len / p.frames)
        wav = clicktrack.render_clicks(grid, duration_s=p.frames / p.fps)
        clicktrack.write_wav(wav, args.wav)
    _write_runlog(Path(args.out).with_suffix(".log"), cfg, "generate")
    print(f"generated latent -> {args.out}")
    return 0


def _evaluate_clips(cfg: RunConfig, data_dir: Path, latents: dict[str, pose.MusicLatent],
                    jobs: int = 1):
    ids = sorted(latents)

    def score_one(cid: str) -> metrics.BeatScores:
        truth = pose.load_beat_grid(data_dir / f"{cid}.beats")
        fps_latent = cfg.fps * cfg.latent_len / truth.timeline_len
        truth_latent = BeatGrid(
            beat_frames=pose.map_to_latent(truth, cfg.latent_len),
            timeline_len=cfg.latent_len, fps=fps_latent)
        det = metrics.detect_latent_beats(latents[cid], cfg.rel_threshold, fps=fps_latent)
        return metrics.beat_scores(det, truth_latent, cfg.window_latent)

    scores = _parallel_map(score_one, ids, jobs)
    return ids, scores, metrics.aggregate(scores)


def _generate_all(cfg: RunConfig, model: flowgen.TrainedModel, data_dir: Path,
                  conditioned: bool, jobs: int = 1) -> dict[str, pose.MusicLatent]:
    ids = _clip_ids(data_dir)

    def gen_one(item) -> pose.MusicLatent:
        i, cid = item
        p = pose.load_pose_sequence(data_dir / f"{cid}.pose")
        c = pose.load_conditioning(data_dir / f"{cid}.cond")
        sc = cfg.sample_config(seed=cfg.seed + 7919 * (i + 1))
        return flowgen.generate(model, p, c, cfg.latent_len, sc, conditioned=conditioned)

    return dict(zip(ids, _parallel_map(gen_one, list(enumerate(ids)), jobs)))


def cmd_evaluate(cfg: RunConfig, args) -> int:
    data_dir = Path(args.data)
    if args.ablation:
        return _cmd_ablation(cfg, args)
    if args.generated:
        gen_dir = Path(args.generated)
        latents = {cid: pose.load_latent(gen_dir / f"{cid}.latent")
                   for cid in _clip_ids(data_dir)}
    elif args.ckpt:
        model = checkpoint.load_model(args.ckpt)
        latents = _generate_all(cfg, model, data_dir,
                                conditioned=not args.unconditional, jobs=args.jobs)
    else:
        raise ConfigError("evaluate needs --generated or --ckpt")
    ids, scores, agg = _evaluate_clips(cfg, data_dir, latents, jobs=args.jobs)
    report = metrics.format_report(ids, scores, agg)
    print(report, end="")
    print(f"BCS={agg.mean_bcs:.2f} CSD={agg.csd:.2f} BHS={agg.mean_bhs:.2f} "
          f"HSD={agg.hsd:.2f} F1={agg.mean_f1:.2f}")
    if args.report:
        Path(args.report).write_text(report, encoding="utf-8")
        Path(args.report).with_suffix(".tsv").write_text(
            metrics.format_report_tsv(ids, scores, agg), encoding="utf-8")
    return 0


_ABLATION_ROWS = [
    ("conditioning-only", {"rhythm_mode": "none"}),
    ("+rhythm (meanpool)", {"rhythm_mode": "learned", "align_mode": "meanpool"}),
    ("+rhythm +alignment", {"rhythm_mode": "learned", "align_mode": "attn"}),
    ("mean-motion rhythm", {"rhythm_mode": "mean", "align_mode": "attn"}),
    ("binarized rhythm", {"rhythm_mode": "binary", "align_mode": "attn"}),
]


def _cmd_ablation(cfg: RunConfig, args) -> int:
    """Component and rhythm-feature comparison on a train/held-out pair."""
    from dataclasses import replace

    train_dir = Path(args.data)
    eval_dir = Path(args.eval_data) if args.eval_data else train_dir
    _ids, dataset = _load_dataset(train_dir, cfg)
    rows = []
    for name, overrides in _ABLATION_ROWS:
        sub = replace(cfg, **overrides)
        model = flowgen.train(dataset, sub.train_config())
        latents = _generate_all(sub, model, eval_dir, conditioned=True, jobs=args.jobs)
        _cids, scores, agg = _evaluate_clips(sub, eval_dir, latents, jobs=args.jobs)
        rows.append((name, agg))
        print(f"[ablation] {name}: F1={agg.mean_f1:.2f}", file=sys.stderr)
    lines = [f"{'configuration':<22}{'BCS':>8}{'CSD':>8}{'BHS':>8}{'HSD':>8}{'F1':>8}"]
    for name, agg in rows:
        lines.append(f"{name:<22}{agg.mean_bcs:>8.2f}{agg.csd:>8.2f}"
                     f"{agg.mean_bhs:>8.2f}{agg.hsd:>8.2f}{agg.mean_f1:>8.2f}")
    table = "\n".join(lines) + "\n"
    print(table, end="")
    if args.report:
        Path(args.report).write_text(table, encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dancebeat",
                                 description="desk-scale dance-to-music pipeline")
    ap.add_argument("--config", help="key=value config file")
    ap.add_argument("--seed", type=int, help="override the master seed")
    ap.add_argument("--jobs", type=int, default=1, help="parallel clip workers")
    ap.add_argument("--force", action="store_true", help="overwrite non-empty outputs")
    ap.add_argument("--print-config", action="store_true",
                    help="print the effective config with provenance labels and exit")
    sub = ap.add_subparsers(dest="command")

    sp = sub.add_parser("synth", help="generate a synthetic benchmark directory")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n-clips", type=int, default=16)

    sp = sub.add_parser("extract", help="extract a rhythm embedding from a pose file")
    sp.add_argument("--pose", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--ckpt")

    sp = sub.add_parser("align", help="align a rhythm embedding to the latent timeline")
    sp.add_argument("--rhythm", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--ckpt")

    sp = sub.add_parser("train", help="train the generator on a benchmark directory")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("generate", help="sample a music latent for one clip")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--pose", required=True)
    sp.add_argument("--cond")
    sp.add_argument("--out", required=True)
    sp.add_argument("--wav", help="also render detected beats to a click-track WAV")
    sp.add_argument("--unconditional", action="store_true")

    sp = sub.add_parser("evaluate", help="score generated latents against ground truth")
    sp.add_argument("--data", required=True, help="benchmark directory with ground truth")
    sp.add_argument("--generated", help="directory of generated latents")
    sp.add_argument("--ckpt", help="generate on the fly from a checkpoint")
    sp.add_argument("--unconditional", action="store_true")
    sp.add_argument("--report", help="write the report (and .tsv variant) here")
    sp.add_argument("--ablation", action="store_true",
                    help="train and compare component/rhythm-feature variants")
    sp.add_argument("--eval-data", help="held-out directory for --ablation")
    return ap


_HANDLERS = {
    "synth": cmd_synth,
    "extract": cmd_extract,
    "align": cmd_align,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            from dataclasses import replace

            cfg = replace(cfg, seed=args.seed)
        if args.print_config:
            print(cfg.to_text(labeled=True), end="")
            return 0
        if not args.command:
            ap.print_help()
            return 2
        args.jobs = max(1, args.jobs)
        return _HANDLERS[args.command](cfg, args)
    except DanceBeatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
