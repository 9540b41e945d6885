"""Command-line entry point.

Subcommands: synth, import-ppge, preprocess, train, loso, report,
gradcheck. Every run echoes its effective configuration to
<out>/run_config.json so results are reproducible from the artifacts
alone. Exit codes: 0 success, 1 domain/validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import data as data_io
from . import evaluation as ev
from .errors import ConfigError, PpgEmoError
from .models import ModelConfig, build, model_config_from_dict, model_config_to_dict
from .nn.gradcheck import run_suite
from .signals import FilterSpec, SegmenterSpec, preprocess_record
from .training import TrainConfig, make_validation_split, train


@dataclass(frozen=True)
class RunConfig:
    """Effective configuration of one run: specs, paths, and seeds."""

    filter: FilterSpec
    segmenter: SegmenterSpec
    model: ModelConfig
    train: TrainConfig
    dataset: str | None
    out_dir: str
    variants: tuple[str, ...]
    targets: tuple[str, ...]
    seed: int
    jobs: int


def _make(cls, d: dict, section: str):
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad '{section}' section in config file: {exc}") from None


def resolve_run_config(args) -> RunConfig:
    """Defaults, overridden by the JSON config file, overridden by flags."""
    file_cfg = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            file_cfg = json.load(fh)

    fspec = _make(FilterSpec, file_cfg.get("filter", {}), "filter")
    sspec = _make(SegmenterSpec, file_cfg.get("segmenter", {}), "segmenter")
    if "model" in file_cfg:
        mcfg = model_config_from_dict({**model_config_to_dict(ModelConfig()), **file_cfg["model"]})
    else:
        mcfg = ModelConfig()
    tcfg = _make(TrainConfig, file_cfg.get("train", {}), "train")

    seed = args.seed if args.seed is not None else file_cfg.get("seed", 0)
    jobs = getattr(args, "jobs", None) or file_cfg.get("jobs", 1)
    dataset = getattr(args, "dataset", None) or file_cfg.get("dataset")
    out_dir = getattr(args, "out", None) or file_cfg.get("out_dir", "out")
    variants = tuple(
        (getattr(args, "variant", None) or file_cfg.get("variant", mcfg.variant)).split(",")
    )
    targets = tuple(
        (getattr(args, "target", None) or file_cfg.get("target", "valence")).split(",")
    )

    for name, value in (
        ("max_epochs", getattr(args, "max_epochs", None)),
        ("batch_size", getattr(args, "batch_size", None)),
        ("patience", getattr(args, "patience", None)),
        ("learning_rate", getattr(args, "learning_rate", None)),
    ):
        if value is not None:
            tcfg = replace(tcfg, **{name: value})

    return RunConfig(fspec, sspec, mcfg, tcfg, dataset, out_dir, variants, targets, seed, jobs)


def run_config_to_dict(cfg: RunConfig) -> dict:
    return {
        "filter": asdict(cfg.filter),
        "segmenter": asdict(cfg.segmenter),
        "model": model_config_to_dict(cfg.model),
        "train": asdict(cfg.train),
        "dataset": cfg.dataset,
        "out_dir": cfg.out_dir,
        "variants": list(cfg.variants),
        "targets": list(cfg.targets),
        "seed": cfg.seed,
        "jobs": cfg.jobs,
    }


def _echo_config(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run_config.json", "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)


def _dump_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)


# -- subcommands -----------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = data_io.SynthSpec(
        n_subjects=args.subjects,
        trials_per_subject=args.trials,
        duration_s=args.duration,
        fs_hz=args.fs,
        seed=args.seed if args.seed is not None else 0,
    )
    dataset = data_io.synth_dataset(spec)
    out = Path(args.out)
    data_io.save_canonical(dataset, out)
    _echo_config(out, {"synth": asdict(spec)})
    print(f"wrote {len(dataset.records)} records to {out}")
    return 0


def cmd_import_ppge(args) -> int:
    out = Path(args.out)
    dataset = data_io.import_ppge(args.raw, out, threshold=args.threshold, fs_hz=args.fs)
    _echo_config(out, {"import": {"raw": args.raw, "threshold": args.threshold, "fs_hz": args.fs}})
    print(f"imported {len(dataset.records)} records from {len(dataset.subjects)} subjects")
    return 0


def cmd_preprocess(args) -> int:
    cfg = resolve_run_config(args)
    if not cfg.dataset:
        raise ConfigError("preprocess needs --dataset (or 'dataset' in the config file)")
    dataset = data_io.load_canonical(cfg.dataset)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    segments = []
    skipped = 0
    per_record = []
    for record in dataset.records:
        segs = preprocess_record(record, cfg.filter, cfg.segmenter)
        if not segs:
            skipped += 1
        per_record.append(
            {"subject_id": record.subject_id, "trial_id": record.trial_id, "segments": len(segs)}
        )
        segments.extend(segs)
    if segments:
        np.savez(
            out / "segments.npz",
            samples=np.stack([s.samples for s in segments]),
            subject_id=np.array([s.subject_id for s in segments]),
            trial_id=np.array([s.trial_id for s in segments]),
            valence=np.array([s.valence for s in segments]),
            arousal=np.array([s.arousal for s in segments]),
        )
    _dump_json(
        out / "summary.json",
        {
            "n_records": len(dataset.records),
            "n_segments": len(segments),
            "n_records_skipped": skipped,
            "per_record": per_record,
        },
    )
    _echo_config(out, run_config_to_dict(cfg))
    print(f"{len(segments)} segments from {len(dataset.records)} records ({skipped} skipped)")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_run_config(args)
    if not cfg.dataset:
        raise ConfigError("train needs --dataset (or 'dataset' in the config file)")
    if len(cfg.variants) != 1 or len(cfg.targets) != 1:
        raise ConfigError("train runs exactly one variant and one target")
    dataset = data_io.load_canonical(cfg.dataset)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    excluded = set(args.exclude_subjects.split(",")) if args.exclude_subjects else set()
    segments = []
    for record in dataset.records:
        if record.subject_id in excluded:
            continue
        segments.extend(preprocess_record(record, cfg.filter, cfg.segmenter))
    subjects = sorted({s.subject_id for s in segments})

    tcfg = replace(cfg.train, seed=cfg.seed, target=cfg.targets[0])
    if args.val_subjects:
        val = sorted(set(args.val_subjects.split(",")))
        unknown = set(val) - set(subjects)
        if unknown:
            raise ConfigError(f"--val-subjects not in dataset: {sorted(unknown)}")
        fit = [s for s in subjects if s not in val]
        if not fit:
            raise ConfigError("no training subjects left after the validation split")
    else:
        fit, val = make_validation_split(subjects, tcfg, cfg.seed)

    mcfg = replace(cfg.model, variant=cfg.variants[0])
    model = build(mcfg, np.random.default_rng([cfg.seed, 0]))
    fit_segs = [s for s in segments if s.subject_id in set(fit)]
    val_segs = [s for s in segments if s.subject_id in set(val)]
    tlog, _ = train(model, fit_segs, val_segs, tcfg)

    with open(out / "trainlog.jsonl", "w") as fh:
        for row in tlog.to_records():
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    model.save(out / "model.json")
    _echo_config(
        out,
        {**run_config_to_dict(cfg), "fit_subjects": fit, "val_subjects": val},
    )
    print(
        f"trained {mcfg.variant} on {len(fit_segs)} segments; best epoch "
        f"{tlog.best_epoch} (val_acc {tlog.val_acc[tlog.best_epoch - 1]:.3f})"
    )
    return 0


def cmd_loso(args) -> int:
    cfg = resolve_run_config(args)
    if not cfg.dataset:
        raise ConfigError("loso needs --dataset (or 'dataset' in the config file)")
    for t in cfg.targets:
        if t not in ("valence", "arousal"):
            raise ConfigError(f"unknown target {t!r}")
    dataset = data_io.load_canonical(cfg.dataset)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(out, run_config_to_dict(cfg))

    reports = {}
    for variant in cfg.variants:
        mcfg = replace(cfg.model, variant=variant)
        runs = ev.run_loso(
            dataset,
            cfg.filter,
            cfg.segmenter,
            mcfg,
            cfg.train,
            cfg.targets,
            cfg.seed,
            jobs=cfg.jobs,
        )
        for target, fold_runs in runs.items():
            fold_dir = out / variant / target
            fold_dir.mkdir(parents=True, exist_ok=True)
            for run in fold_runs:
                _dump_json(
                    fold_dir / f"fold_{run.test_subject}.json",
                    {
                        "variant": variant,
                        "target": target,
                        "fold_index": run.fold_index,
                        "fold_seed": run.fold_seed,
                        "test_subject": run.test_subject,
                        "fit_subjects": run.fit_subjects,
                        "val_subjects": run.val_subjects,
                        "metrics": asdict(run.metrics),
                        "train_log": {
                            "best_epoch": run.train_log.best_epoch,
                            "stop_epoch": run.train_log.stop_epoch,
                            "train_loss": run.train_log.train_loss,
                            "train_acc": run.train_log.train_acc,
                            "val_acc": run.train_log.val_acc,
                            "class_weights": run.train_log.class_weights,
                        },
                    },
                )
        reports[variant] = ev.aggregate(
            {t: [r.metrics for r in runs[t]] for t in cfg.targets}
        )

    ev.save_reports(reports, out / "report.json")
    (out / "report.csv").write_text(ev.render_csv(reports))
    (out / "report.md").write_text(ev.render_markdown(reports))
    print(ev.render_markdown(reports))
    return 0


def cmd_report(args) -> int:
    reports = ev.load_reports(args.report)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(ev.render_csv(reports))
    (out / "report.md").write_text(ev.render_markdown(reports))
    _echo_config(out, {"report": str(args.report)})
    print(ev.render_markdown(reports))
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(cases_per_layer=args.cases, seed=args.seed if args.seed is not None else 0)
    failed = False
    for r in results:
        status = "ok" if r.ok else "FAIL"
        print(f"{r.name:<30} cases={r.cases:<3} max_rel_err={r.max_rel_err:.3e}  {status}")
        failed |= not r.ok
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ppgemo",
        description="PPG emotion classification: preprocessing, training, LOSO evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=True):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        if dataset:
            p.add_argument("--dataset", help="canonical dataset directory")

    p = sub.add_parser("synth", help="generate a synthetic canonical dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=6)
    p.add_argument("--trials", type=int, default=4)
    p.add_argument("--duration", type=float, default=120.0, help="seconds per trial")
    p.add_argument("--fs", type=float, default=100.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("import-ppge", help="convert a raw study directory to canonical form")
    p.add_argument("--raw", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=5.0, help="rating >= threshold maps to 1")
    p.add_argument("--fs", type=float, default=100.0)
    p.set_defaults(func=cmd_import_ppge)

    p = sub.add_parser("preprocess", help="filter, window, and standardize a dataset")
    common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one variant on an explicit subject split")
    common(p)
    p.add_argument("--variant", help="cnn | cnn_lstm | cnn_tcn_lstm")
    p.add_argument("--target", help="valence | arousal")
    p.add_argument("--val-subjects", dest="val_subjects", help="comma-separated validation subjects")
    p.add_argument("--exclude-subjects", dest="exclude_subjects", help="subjects to drop entirely")
    p.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("loso", help="leave-one-subject-out evaluation")
    common(p)
    p.add_argument("--variant", help="comma-separated list of variants")
    p.add_argument("--target", help="comma-separated list of targets")
    p.add_argument("--jobs", type=int, default=None, help="concurrent folds")
    p.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.set_defaults(func=cmd_loso)

    p = sub.add_parser("report", help="render an existing report as CSV and markdown")
    p.add_argument("--report", required=True, help="path to report.json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--cases", type=int, default=20, help="random cases per layer family")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except PpgEmoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
