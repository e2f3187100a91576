"""``metsk`` command line: synth, train, probe, similarity, importance.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical abort.
``MTSK_THREADS`` caps BLAS threads.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import probe as pb
from .connectome import Dataset, GeneratorSpec, load_dataset, save_dataset, synth_generate
from .errors import DegenerateInputError, FormatError, MetskError, NumericalError, ValidationError
from .metatrain import MODES, TrainConfig, TrainingAborted, train
from .stgcn import load_checkpoint, save_checkpoint
from .transport import DEFAULT_BINS, DEFAULT_GAMMA, SimilarityReport, domain_similarity

log = logging.getLogger("metsk")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3
CHECKPOINT = "checkpoint.bin"
TRAIN_LOG = "train_log.csv"
RUN_MANIFEST = "run_manifest.json"
SYNTH_ARTIFACTS = ("manifest.json", "subjects")


# --------------------------------------------------------------------------
# run manifest
# --------------------------------------------------------------------------


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dataset_hash(path: str | Path) -> str:
    """Hash of a dataset directory: its manifest plus every subject file."""
    root = Path(path)
    h = hashlib.sha256()
    files = [root / "manifest.json"] + sorted((root / "subjects").glob("*"))
    for f in files:
        if f.is_file():
            h.update(f.relative_to(root).as_posix().encode())
            h.update(f.read_bytes())
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_run_manifest(out_dir: Path, command: str, config: dict, seed: int, datasets: dict[str, str],
                       outputs: Sequence[Path], started: float) -> Path:
    manifest = {
        "command": command,
        "build": f"metsk {__version__}",
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "datasets": {name: {"path": str(p), "sha256": dataset_hash(p)} for name, p in datasets.items()},
        "outputs": {Path(o).name: sha256_file(o) for o in outputs},
        "timings": {"seconds": round(time.perf_counter() - started, 3)},
    }
    path = out_dir / RUN_MANIFEST
    write_atomic(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _read_json(path: str, what: str) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"{what} file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{what} file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ValidationError(f"{what} file must hold a JSON object")
    return data


def cmd_synth(args) -> int:
    spec = GeneratorSpec.from_dict(_read_json(args.spec, "spec")) if args.spec else GeneratorSpec()
    try:
        spec.validate()
    except TypeError as exc:
        raise ValidationError(f"invalid spec: {exc}") from None
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        if not args.force:
            raise ValidationError(f"{out} is not empty; pass --force to overwrite")
        # only remove what this command writes
        for name in SYNTH_ARTIFACTS:
            target = out / name
            if target.is_dir():
                for f in target.iterdir():
                    f.unlink()
                target.rmdir()
            elif target.exists():
                target.unlink()
    out.mkdir(parents=True, exist_ok=True)
    dataset = synth_generate(spec, np.random.default_rng(args.seed))
    save_dataset(dataset, out, fmt=args.format)
    log.info("wrote %d subjects (%d ROIs) to %s", len(dataset), dataset.n_rois, out)
    return EXIT_OK


TRAIN_FLAGS = {
    # flag dest -> TrainConfig field
    "alpha": "alpha", "beta": "beta", "inner_steps": "inner_steps", "outer_iterations": "outer_iterations",
    "lam": "lam", "tau": "tau", "window": "window_length", "batch_size": "batch_size",
    "warmup": "warmup_epochs", "epochs": "total_epochs", "seed": "seed", "source_task": "source_task",
    "head_channels": "head_channels", "embed_dim": "embed_dim", "kernel": "kernel",
    "meta_train_size": "meta_train_size", "meta_val_size": "meta_val_size",
}


def build_train_config(args) -> TrainConfig:
    values = _read_json(args.config, "config") if args.config else {}
    base = TrainConfig.from_dict(values)
    merged = base.to_dict()
    for dest, name in TRAIN_FLAGS.items():
        v = getattr(args, dest, None)
        if v is not None:
            merged[name] = v
    if args.channels is not None:
        merged["extractor_channels"] = [int(c) for c in args.channels.split(",")]
    if args.second_order:
        merged["second_order"] = True
    if args.include_positive:
        merged["include_positive_in_denominator"] = True
    merged["mode"] = args.mode
    # a shorter run given only --epochs keeps its warm-up inside the budget
    if args.epochs is not None and args.warmup is None and "warmup_epochs" not in values:
        merged["warmup_epochs"] = min(merged["warmup_epochs"], merged["total_epochs"])
    try:
        cfg = TrainConfig.from_dict(merged)
    except TypeError as exc:
        raise ValidationError(f"invalid config: {exc}") from None
    cfg.validate()
    return cfg


def cmd_train(args) -> int:
    started = time.perf_counter()
    cfg = build_train_config(args)
    source: Optional[Dataset] = None
    target: Optional[Dataset] = None
    datasets = {}
    if args.source:
        if cfg.mode == "mel":
            log.warning("mode mel trains without a source domain; --source %s is ignored", args.source)
        else:
            source = load_dataset(args.source)
            datasets["source"] = args.source
    if args.target:
        target = load_dataset(args.target)
        datasets["target"] = args.target
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / CHECKPOINT
    echo = {"train": cfg.to_dict()}
    try:
        params, train_log = train(source, target, cfg, abort_checkpoint=ckpt)
    except TrainingAborted as exc:
        log.error("%s; partial checkpoint written to %s", exc, ckpt)
        return EXIT_NUMERICAL
    save_checkpoint(ckpt, params, echo)
    train_log.to_csv(out / TRAIN_LOG)
    write_run_manifest(out, "train", cfg.to_dict(), cfg.seed, datasets, [ckpt, out / TRAIN_LOG], started)
    log.info("trained %s for %d iterations; outputs in %s", cfg.mode, len(train_log), out)
    return EXIT_OK


def _window_length(config: dict, override: Optional[int]) -> int:
    if override is not None:
        return override
    try:
        return int(config["train"]["window_length"])
    except (KeyError, TypeError, ValueError):
        raise ValidationError("checkpoint carries no window length; pass --window") from None


def _embed(args, dataset: Dataset, pool: str = "nodes") -> pb.EmbeddingSet:
    params, config = load_checkpoint(args.checkpoint)
    return pb.extract_embeddings(params, dataset, _window_length(config, args.window), windows=args.windows,
                                 seed=args.seed, pool=pool)


def cmd_probe(args) -> int:
    started = time.perf_counter()
    dataset = load_dataset(args.dataset)
    if not dataset.is_labeled:
        raise ValidationError(f"{args.dataset} has unlabelled subjects; probing needs labels")
    if args.connectivity:
        emb = pb.connectivity_embeddings(dataset)
    else:
        if not args.checkpoint:
            raise ValidationError("--checkpoint is required unless --connectivity is given")
        emb = _embed(args, dataset, args.pool)
    pca_dim = None if args.pca_dim == 0 else args.pca_dim
    report = pb.cross_validate(emb, args.classifier, k=args.folds, seed=args.seed, pca_dim=pca_dim)
    out = Path(args.out)
    files = report.write(out)
    config = {"classifier": args.classifier, "folds": args.folds, "pca_dim": pca_dim, "windows": args.windows,
              "connectivity": bool(args.connectivity), "pool": args.pool,
              "checkpoint": None if args.connectivity else sha256_file(Path(args.checkpoint))}
    write_run_manifest(out, "probe", config, args.seed, {"dataset": args.dataset}, files, started)
    print(f"mean AUC {report.mean:.4f} +/- {report.std:.4f}")
    return EXIT_OK


def cmd_similarity(args) -> int:
    a, b = load_dataset(args.dataset_a), load_dataset(args.dataset_b)
    ea = _embed(args, a).features.mean(axis=0)
    eb = _embed(args, b).features.mean(axis=0)
    ds, distance = domain_similarity(ea, eb, gamma=args.gamma, bins=args.bins)
    report = SimilarityReport(Path(args.dataset_a).name, Path(args.dataset_b).name, distance, ds, args.gamma, args.bins)
    if args.out:
        Path(args.out).write_text(report.line(), encoding="utf-8")
    sys.stdout.write(report.line())
    return EXIT_OK


def cmd_importance(args) -> int:
    dataset = load_dataset(args.dataset)
    if not dataset.is_labeled:
        raise ValidationError(f"{args.dataset} has unlabelled subjects; the importance probe needs labels")
    emb = _embed(args, dataset, pool="time")
    X = pb.Standardizer.fit(emb.features).transform(emb.features)
    model = pb.svm_train(X, emb.labels, C=args.C)
    channels = X.shape[1] // dataset.n_rois
    feature_roi = np.repeat(np.arange(dataset.n_rois), channels)
    names = dataset.roi_names or [f"ROI{i + 1:03d}" for i in range(dataset.n_rois)]
    ranked = pb.importance_map(model.w, feature_roi, names, order=args.order)
    pb.write_importance(args.out, ranked)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metsk", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic connectome dataset")
    p.add_argument("--spec", help="generator spec as a JSON object (defaults: 116 ROIs, two sites, two classes)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("bin", "csv"), default="bin")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train in any mode")
    p.add_argument("--mode", choices=MODES, default="metsk")
    p.add_argument("--source")
    p.add_argument("--target")
    p.add_argument("--config", help="flat JSON object with TrainConfig field names")
    p.add_argument("--out", required=True)
    for flag, kind in (("alpha", float), ("beta", float), ("inner-steps", int), ("outer-iterations", int),
                       ("lam", float), ("tau", float), ("window", int), ("batch-size", int), ("warmup", int),
                       ("epochs", int), ("seed", int), ("head-channels", int), ("embed-dim", int),
                       ("kernel", int), ("meta-train-size", int), ("meta-val-size", int)):
        p.add_argument(f"--{flag}", type=kind)
    p.add_argument("--source-task", choices=("contrastive", "supervised"))
    p.add_argument("--channels", help="comma-separated extractor widths, e.g. 16,16,16")
    p.add_argument("--second-order", action="store_true")
    p.add_argument("--include-positive", action="store_true",
                   help="keep the positive pair in the contrastive denominator")
    p.set_defaults(func=cmd_train)

    def embedding_args(q):
        q.add_argument("--checkpoint")
        q.add_argument("--windows", type=int, default=pb.DEFAULT_WINDOWS)
        q.add_argument("--window", type=int, help="window length (default: the checkpoint's)")
        q.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("probe", help="cross-validated linear probe of frozen embeddings")
    embedding_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--classifier", choices=("svm", "logreg"), default="svm")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--pca-dim", type=int, default=pb.DEFAULT_MAX_PCA, help="0 disables PCA")
    p.add_argument("--pool", choices=("nodes", "time"), default="nodes")
    p.add_argument("--connectivity", action="store_true", help="probe raw connectivity features instead")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("similarity", help="domain similarity between two datasets")
    embedding_args(p)
    p.add_argument("--dataset-a", required=True)
    p.add_argument("--dataset-b", required=True)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("importance", help="per-ROI importance map from a linear probe")
    embedding_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--order", choices=("mean_then_abs", "abs_then_mean"), default="mean_then_abs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_importance)
    return parser


def _thread_limit():
    n = os.environ.get("MTSK_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if getattr(args, "command", None) in ("similarity", "importance") and not args.checkpoint:
        parser.error("--checkpoint is required")
    try:
        with _thread_limit():
            return args.func(args)
    except (ValidationError, FormatError, DegenerateInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MetskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
