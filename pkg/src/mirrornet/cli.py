"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import audfront, checkpoint, config as cfgmod, data, evaluation
from .model import InitPhaseConfig, LearningPhaseConfig, MirrorNet, infer_articulation, init_phase, learning_phase
from .synth import BATCH_BY_VARIANT, OraclePlant, SynthModel, SynthTrainConfig, eval_synthesizer, train_synthesizer, write_eval_csv


def _split_items(items):
    by_split = {s: [] for s in data.SPLITS}
    for it in items:
        by_split[it.split].append(it)
    return by_split


def _require(items, split, what):
    if not items:
        raise cfgmod.ConfigError(f"manifest has no items in the {split!r} split ({what})")
    return items


def cmd_gen_synthetic(args) -> int:
    if args.n < 1:
        raise cfgmod.ConfigError("--n must be >= 1")
    if args.duration <= 0:
        raise cfgmod.ConfigError("--duration must be positive")
    items = data.gen_synthetic(args.n, args.duration, seed=args.seed, split=args.split)
    manifest = data.write_dataset(items, args.out)
    print(f"wrote {len(items)} items to {manifest}")
    return 0


def cmd_train_synth(args) -> int:
    cfg = cfgmod.load_config(args.config)
    items = data.load_manifest(args.manifest)
    by_split = _split_items(items)
    train = _require(by_split["train"], "train", "synth training data")
    dev = by_split["dev"] or train

    tcfg = SynthTrainConfig(
        lr=cfg.train_synth.lr,
        batch=BATCH_BY_VARIANT[args.variant],
        epochs=cfg.train_synth.epochs,
        decay=cfg.train_synth.decay,
        patience=cfg.train_synth.patience,
        seed=args.seed if args.seed is not None else cfg.seed,
        n_channels=args.channels,
        variant=args.variant,
    )
    model, hist = train_synthesizer(train, dev, tcfg)
    ckpt = model.to_checkpoint(
        config_hash=cfg.config_hash(),
        seed=tcfg.seed,
        metrics={"best_dev_mse": hist.best_dev, "steps": hist.steps},
    )
    checkpoint.save(args.out, ckpt)
    print(f"variant={args.variant} steps={hist.steps} best_dev_mse={hist.best_dev:.6f}")
    print(f"wrote checkpoint {args.out}")
    return 0


def _load_plant(spec: str, stats: data.ChannelStats):
    if spec == "oracle":
        return OraclePlant(stats)
    return SynthModel.from_checkpoint(checkpoint.load(spec))


def cmd_train_mirrornet(args) -> int:
    cfg = cfgmod.load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    items = data.load_manifest(args.manifest)
    by_split = _split_items(items)
    train = _require(by_split["train"], "train", "learning-phase audio")
    init_items = by_split["init"]
    use_init = args.init == "on"
    if use_init and not init_items:
        raise cfgmod.ConfigError("--init on requires items in the 'init' split")

    # latent statistics are owned by the plant: a trained synthesizer brings
    # its own, the oracle gets supervised stats when available
    if args.synth == "oracle":
        if use_init:
            stats = data.ChannelStats.fit([it.load_trajectory() for it in init_items])
        else:
            stats = data.default_stats()
        plant = OraclePlant(stats)
    else:
        plant = _load_plant(args.synth, None)
        stats = plant.stats

    model = MirrorNet(latent_channels=cfg.model.latent_channels, seed=seed, stats=stats)
    metrics = {}
    if use_init:
        icfg = InitPhaseConfig(lr=cfg.init.lr, epochs=cfg.init.epochs, seed=seed)
        ihist = init_phase(model, init_items, icfg, stats=stats)
        metrics["init_final_e_c"] = ihist[-1]["e_c_init"]
        metrics["init_final_e_d"] = ihist[-1]["e_d_init"]

    lcfg = LearningPhaseConfig(
        lr_encoder=cfg.learn.lr_enc,
        lr_decoder=cfg.learn.lr_dec,
        epochs_decoder=cfg.learn.stage_epochs[0],
        epochs_encoder=cfg.learn.stage_epochs[1],
        iterations=cfg.learn.iterations,
        seed=seed,
        log_path=args.log,
    )
    lhist = learning_phase(model, train, plant, lcfg)
    metrics["final_e_c"] = lhist[-1]["e_c"]
    metrics["final_e_d"] = lhist[-1]["e_d"]
    metrics["plant_digest"] = plant.digest()

    checkpoint.save(args.out, model.to_checkpoint(cfg.config_hash(), seed, metrics))
    print(f"init={args.init} e_c={metrics['final_e_c']:.6f} e_d={metrics['final_e_d']:.6f}")
    print(f"wrote checkpoint {args.out}")
    return 0


def _eval_model_on_items(model: MirrorNet, items):
    estimates, truths, ids = [], [], []
    for it in items:
        spec = it.load_spectrogram().values
        truth = it.load_trajectory()
        trim = spec.shape[-1] - (spec.shape[-1] % 5)
        l_norm = model.infer_latent(spec[:, :trim])
        est = data.denormalize_channels(l_norm, model.stats)
        k = min(est.shape[-1], truth.shape[-1])
        estimates.append(est[:, :k])
        truths.append(truth[: model.latent_channels, :k])
        ids.append(it.id)
    return estimates, truths, ids


def cmd_eval(args) -> int:
    model = MirrorNet.from_checkpoint(checkpoint.load(args.model))
    items = data.load_manifest(args.manifest)
    by_split = _split_items(items)
    test = by_split["test"] or items
    test = [it for it in test if it.trajectory is not None]
    if not test:
        raise cfgmod.ConfigError("no evaluable items: ground-truth trajectories required")

    report_dir = Path(args.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    estimates, truths, ids = _eval_model_on_items(model, test)
    channels = data.CHANNELS[: model.latent_channels]
    report = evaluation.ppmc_report(estimates, truths, ids, channels=channels)
    report.to_csv(report_dir / "ppmc.csv")
    (report_dir / "summary.json").write_text(report.to_json())
    for est, tru, item_id in zip(estimates, truths, ids):
        evaluation.export_trajectories(
            item_id, est, tru, report_dir / f"{item_id}.trajectories.csv", channels=channels
        )
    print(f"avg_6tvs={report.avg_6tvs:.4f} avg_all={report.avg_all:.4f}")
    print(f"wrote reports to {report_dir}")
    return 0


def cmd_invert(args) -> int:
    model = MirrorNet.from_checkpoint(checkpoint.load(args.model))
    wav, fs = audfront.read_wav(args.wav)
    traj = infer_articulation(model, wav, fs)
    data.write_trajectory_csv(args.out_csv, traj)
    print(f"wrote {traj.shape[0]}x{traj.shape[1]} trajectory to {args.out_csv}")
    return 0


def cmd_synth_audio(args) -> int:
    model = SynthModel.from_checkpoint(checkpoint.load(args.synth))
    traj = data.read_trajectory_csv(args.traj)
    spec = model.synth_forward(traj[: model.n_channels])
    wav = audfront.invert_spectrogram(spec, iters=args.iters, seed=0)
    audfront.write_wav(args.out_wav, wav)
    print(f"wrote {len(wav) / audfront.FS:.2f} s of audio to {args.out_wav}")
    return 0


def cmd_paper_study(args) -> int:
    """Full study preset: data, both synthesizers, all MirrorNet variants."""
    cfg = cfgmod.load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    sizes = {"init": 8, "train": 64, "dev": 8, "test": 16}
    items = []
    for i, (split, n) in enumerate(sizes.items()):
        for item in data.gen_synthetic(n, 2.0, seed=seed + i, split=split):
            # keep speakers disjoint across the per-split generations
            item.speaker = f"{split}-{item.speaker}"
            items.append(item)
    manifest = data.write_dataset(items, out / "dataset")
    by_split = _split_items(data.load_manifest(manifest))

    def synth_cfg(variant, train_items):
        return SynthTrainConfig(
            lr=cfg.train_synth.lr,
            batch=BATCH_BY_VARIANT[variant],
            epochs=cfg.train_synth.epochs,
            decay=cfg.train_synth.decay,
            patience=cfg.train_synth.patience,
            seed=seed,
            variant=variant,
        ), train_items

    plants = {}
    synth_rows = []
    for variant, train_items in (("ft", by_split["train"]), ("lt", by_split["init"])):
        tcfg, titems = synth_cfg(variant, train_items)
        plant, hist = train_synthesizer(titems, by_split["dev"], tcfg)
        checkpoint.save(out / f"synth_{variant}.ckpt", plant.to_checkpoint(cfg.config_hash(), seed))
        rep = eval_synthesizer(plant, by_split["test"])
        synth_rows.append((variant, hist.best_dev, rep["mean_mse"]))
        plants[variant] = plant

    def run_mirrornet(plant, use_init, tag):
        model = MirrorNet(cfg.model.latent_channels, seed=seed, stats=plant.stats)
        if use_init:
            init_phase(model, by_split["init"], InitPhaseConfig(lr=cfg.init.lr, epochs=cfg.init.epochs, seed=seed), stats=plant.stats)
        lcfg = LearningPhaseConfig(
            lr_encoder=cfg.learn.lr_enc,
            lr_decoder=cfg.learn.lr_dec,
            epochs_decoder=cfg.learn.stage_epochs[0],
            epochs_encoder=cfg.learn.stage_epochs[1],
            iterations=cfg.learn.iterations,
            seed=seed,
            log_path=str(out / f"learning_{tag}.jsonl"),
        )
        learning_phase(model, by_split["train"], plant, lcfg)
        checkpoint.save(out / f"mirrornet_{tag}.ckpt", model.to_checkpoint(cfg.config_hash(), seed))
        est, tru, ids = _eval_model_on_items(model, by_split["test"])
        return evaluation.ppmc_report(est, tru, ids)

    rep_no_init = run_mirrornet(plants["ft"], False, "ft_noinit")
    rep_init_ft = run_mirrornet(plants["ft"], True, "ft_init")
    rep_init_lt = run_mirrornet(plants["lt"], True, "lt_init")

    channels = list(data.CHANNELS)

    def table(path, rows):
        import csv

        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["model"] + channels + ["AVG_6TVs", "AVG_all"])
            for name, rep in rows:
                w.writerow(
                    [name]
                    + [f"{rep.per_channel[c]:.4f}" for c in channels]
                    + [f"{rep.avg_6tvs:.4f}", f"{rep.avg_all:.4f}"]
                )

    table(out / "table1.csv", [("no-init", rep_no_init), ("init", rep_init_ft)])
    table(out / "table2.csv", [("ft-plant", rep_init_ft), ("lt-plant", rep_init_lt)])
    with open(out / "synth_mse.csv", "w") as f:
        f.write("variant,best_dev_mse,test_mse\n")
        for variant, dev_mse, test_mse in synth_rows:
            f.write(f"{variant},{dev_mse:.6f},{test_mse:.6f}\n")
    print(f"no-init avg_all={rep_no_init.avg_all:.4f}  init avg_all={rep_init_ft.avg_all:.4f}")
    print(f"wrote study artifacts to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mirrornet", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="generate a synthetic oracle dataset")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--duration", type=float, default=2.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--split", default="train", choices=data.SPLITS)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_synthetic)

    t = sub.add_parser("train-synth", help="train the articulatory synthesizer")
    t.add_argument("--config")
    t.add_argument("--manifest", required=True)
    t.add_argument("--variant", choices=("ft", "lt"), default="ft")
    t.add_argument("--channels", type=int, default=data.N_LATENT)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train_synth)

    m = sub.add_parser("train-mirrornet", help="train the autoencoder against a frozen plant")
    m.add_argument("--config")
    m.add_argument("--manifest", required=True)
    m.add_argument("--synth", required=True, help="synth checkpoint path or 'oracle'")
    m.add_argument("--init", choices=("on", "off"), default="on")
    m.add_argument("--seed", type=int)
    m.add_argument("--log", help="JSON-lines metrics path")
    m.add_argument("--out", required=True)
    m.set_defaults(fn=cmd_train_mirrornet)

    e = sub.add_parser("eval", help="PPMC evaluation of a trained model")
    e.add_argument("--model", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--report-dir", required=True)
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("invert", help="estimate articulation from a WAV file")
    i.add_argument("--model", required=True)
    i.add_argument("--wav", required=True)
    i.add_argument("--out-csv", required=True)
    i.set_defaults(fn=cmd_invert)

    s = sub.add_parser("synth-audio", help="synthesize audio from a trajectory CSV")
    s.add_argument("--synth", required=True)
    s.add_argument("--traj", required=True)
    s.add_argument("--iters", type=int, default=60)
    s.add_argument("--out-wav", required=True)
    s.set_defaults(fn=cmd_synth_audio)

    ps = sub.add_parser("paper-study", help="full desk-scale study preset")
    ps.add_argument("--config")
    ps.add_argument("--seed", type=int)
    ps.add_argument("--out", required=True)
    ps.set_defaults(fn=cmd_paper_study)
    return p


def main(argv=None) -> int:
    try:
        evaluation.max_workers()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (cfgmod.ConfigError, data.ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure, distinct from usage errors
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
