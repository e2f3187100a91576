"""Bi-level meta-training with a contrastive source task, plus the
ablation training modes (ssl, mel, mtl, ft, supervised_source).

One outer iteration of the default ``metsk`` mode:

1. re-initialise the target head and re-split the labelled target set
   into disjoint meta-train / meta-validation subsets;
2. adapt only the target head with ``inner_steps`` plain SGD steps on a
   class-balanced meta-train batch, extractor frozen;
3. freeze the adapted head and take one Adam step on extractor + source
   head against ``L_S(source) + lam * L_T(meta-val)``.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import numerics as nm
from . import objectives as obj
from ._rng import stream
from .connectome import Dataset, SubjectRecord, sample_subsequences, sample_view_pair
from .errors import MetskError, NumericalError, ValidationError
from .numerics import ParamTree, Tensor
from .stgcn import (
    EXTRACTOR,
    SOURCE_HEAD,
    TARGET_HEAD,
    GraphCache,
    ModelConfig,
    extractor_forward,
    head_output,
    init_params,
    init_target_head,
    save_checkpoint,
)

log = logging.getLogger(__name__)

MODES = ("metsk", "ssl", "mel", "mtl", "ft", "supervised_source")
SOURCE_TASKS = ("contrastive", "supervised")
ADAM_B1, ADAM_B2, ADAM_EPS = 0.9, 0.999, 1e-8
META_TRAIN_FRACTION = 0.8


@dataclass
class TrainConfig:
    alpha: float = 0.01
    beta: float = 0.001
    inner_steps: int = 25
    outer_iterations: Optional[int] = None  # overrides the epoch-derived count when set
    lam: float = 30.0
    tau: float = 30.0
    window_length: int = 128
    batch_size: int = 32
    warmup_epochs: int = 20
    total_epochs: int = 90
    meta_train_size: Optional[int] = None
    meta_val_size: Optional[int] = None
    mode: str = "metsk"
    second_order: bool = False
    seed: int = 0
    source_task: str = "contrastive"
    include_positive_in_denominator: bool = False
    vote: str = "mean"
    extractor_channels: list[int] = field(default_factory=lambda: [16, 16, 16])
    head_channels: int = 16
    embed_dim: int = 64
    kernel: int = 11

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(list(self.extractor_channels), self.head_channels, self.embed_dim, self.kernel)

    @property
    def effective_source_task(self) -> str:
        return "supervised" if self.mode == "supervised_source" else self.source_task

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.source_task not in SOURCE_TASKS:
            raise ValidationError(f"unknown source_task {self.source_task!r}")
        for name in ("alpha", "beta", "lam"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if not self.tau > 0:
            raise ValidationError("tau must be > 0")
        for name in ("inner_steps", "warmup_epochs", "total_epochs"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.warmup_epochs > self.total_epochs:
            raise ValidationError("warmup_epochs cannot exceed total_epochs")
        if self.outer_iterations is not None and self.outer_iterations < 0:
            raise ValidationError("outer_iterations must be >= 0")
        if self.window_length < 1 or self.batch_size < 2:
            raise ValidationError("window_length must be >= 1 and batch_size >= 2")
        self.model.validate()

    def meta_sizes(self, n_target: int) -> tuple[int, int]:
        """Meta-train / meta-val subject counts for a target split of ``n_target``."""
        n_tr, n_val = self.meta_train_size, self.meta_val_size
        if n_tr is None and n_val is None:
            n_tr = int(round(META_TRAIN_FRACTION * n_target))
            n_val = n_target - n_tr
        elif n_tr is None:
            n_tr = n_target - n_val
        elif n_val is None:
            n_val = n_target - n_tr
        if n_tr + n_val != n_target or n_tr < 2 or n_val < 2:
            raise ValidationError(
                f"meta_train_size ({n_tr}) + meta_val_size ({n_val}) must equal the "
                f"{n_target} target subjects, each at least 2"
            )
        return n_tr, n_val

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


class TrainingAborted(MetskError):
    """Raised when a loss or gradient goes non-finite during training."""

    def __init__(self, message: str, iteration: int, params: ParamTree):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration
        self.params = params


# --------------------------------------------------------------------------
# log
# --------------------------------------------------------------------------

LOG_COLUMNS = ("iter", "epoch", "phase", "inner_final_loss", "source_loss", "metaval_loss", "seconds")


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def append(self, **record) -> None:
        self.records.append({c: record.get(c) for c in LOG_COLUMNS})

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if r[name] is None else r[name] for r in self.records], dtype=float)

    def to_csv(self, path: str | Path, with_timing: bool = False) -> None:
        """Write the log; wall-clock seconds are left blank unless
        ``with_timing`` so that reruns are byte-identical."""

        def fmt(name, value):
            if value is None or (name == "seconds" and not with_timing):
                return ""
            return repr(float(value)) if isinstance(value, float) else str(value)

        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LOG_COLUMNS)
            for r in self.records:
                writer.writerow([fmt(c, r[c]) for c in LOG_COLUMNS])


# --------------------------------------------------------------------------
# optimisers
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    m: ParamTree = field(default_factory=dict)
    v: ParamTree = field(default_factory=dict)
    t: int = 0


def adam_step(params: ParamTree, grads: Mapping[str, np.ndarray], keys: Sequence[str], state: AdamState, lr: float):
    """One Adam update of ``keys``; every other leaf is passed through untouched."""
    t = state.t + 1
    m, v = dict(state.m), dict(state.v)
    new = dict(params)
    for k in keys:
        g = grads[k]
        m[k] = ADAM_B1 * m.get(k, np.zeros_like(g)) + (1 - ADAM_B1) * g
        v[k] = ADAM_B2 * v.get(k, np.zeros_like(g)) + (1 - ADAM_B2) * g * g
        m_hat = m[k] / (1 - ADAM_B1**t)
        v_hat = v[k] / (1 - ADAM_B2**t)
        new[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return new, AdamState(m, v, t)


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> ParamTree:
    return {k: params[k] - lr * grads[k] for k in params}


def keys_of(params: Mapping, *prefixes: str) -> list[str]:
    return nm.select(params, prefixes)


# --------------------------------------------------------------------------
# batches
# --------------------------------------------------------------------------


@dataclass
class Batch:
    """Windows ``x`` [B, P, L, 1] with normalised adjacencies [B, P, P]."""

    x: np.ndarray
    ahat: np.ndarray
    labels: Optional[np.ndarray] = None
    x2: Optional[np.ndarray] = None  # second contrastive view

    def __len__(self) -> int:
        return self.x.shape[0]


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index chunks covering ``range(n)``; a trailing singleton is
    folded into the previous chunk because the contrastive loss needs N >= 2."""
    order = rng.permutation(n)
    chunks = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        last = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], last])
    return chunks


def split_meta(labels: np.ndarray, n_train: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint, class-stratified meta-train / meta-val index sets covering all subjects."""
    labels = np.asarray(labels)
    n = labels.size
    train: list[int] = []
    val: list[int] = []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        k = int(round(n_train * idx.size / n))
        k = min(max(k, 1), idx.size - 1) if idx.size > 1 else idx.size
        train.extend(idx[:k].tolist())
        val.extend(idx[k:].tolist())
    # stratified rounding may miss the requested size by one or two
    train_arr, val_arr = np.array(train, dtype=int), np.array(val, dtype=int)
    while train_arr.size > n_train:
        val_arr = np.append(val_arr, train_arr[-1])
        train_arr = train_arr[:-1]
    while train_arr.size < n_train:
        train_arr = np.append(train_arr, val_arr[-1])
        val_arr = val_arr[:-1]
    return np.sort(train_arr), np.sort(val_arr)


def balanced_batch(indices: np.ndarray, labels: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Equal numbers of each class, ``min(size // 2, smallest class)`` apiece, no repeats."""
    indices = np.asarray(indices)
    by_class = [indices[labels[indices] == c] for c in (0, 1)]
    per_class = min(size // 2, *(b.size for b in by_class))
    if per_class < 1:
        raise ValidationError("a class-balanced batch needs both classes present")
    picked = [rng.choice(b, per_class, replace=False) for b in by_class]
    return np.concatenate(picked)


class BatchFactory:
    """Turns subject indices into model-ready windows for one dataset."""

    def __init__(self, dataset: Dataset, window: int, cache: GraphCache):
        self.dataset = dataset
        self.window = window
        self.cache = cache

    def _graphs(self, records: Sequence[SubjectRecord]) -> np.ndarray:
        return np.stack([self.cache.get(r).normalized for r in records])

    def single(self, idx: Sequence[int], rng: np.random.Generator, with_labels: bool = True) -> Batch:
        records = [self.dataset.subjects[i] for i in idx]
        x = np.stack([sample_subsequences(r, self.window, 1, rng)[0].window for r in records])
        labels = np.array([r.label for r in records], dtype=float) if with_labels else None
        return Batch(x, self._graphs(records), labels)

    def views(self, idx: Sequence[int], rng: np.random.Generator) -> Batch:
        records = [self.dataset.subjects[i] for i in idx]
        pairs = [sample_view_pair(r, self.window, rng) for r in records]
        return Batch(
            np.stack([a.window for a, _ in pairs]),
            self._graphs(records),
            x2=np.stack([b.window for _, b in pairs]),
        )


# --------------------------------------------------------------------------
# losses on batches
# --------------------------------------------------------------------------


def target_loss(params: Mapping, batch: Batch, emb: Tensor | None = None) -> Tensor:
    if emb is None:
        emb = extractor_forward(params, batch.x, batch.ahat)
    logits = head_output(params, emb, batch.ahat, TARGET_HEAD)
    return obj.bce_with_logits(nm.reshape(logits, (len(batch),)), batch.labels)


def source_loss(params: Mapping, batch: Batch, cfg: TrainConfig) -> Tensor:
    if cfg.effective_source_task == "supervised":
        emb = extractor_forward(params, batch.x, batch.ahat)
        logits = head_output(params, emb, batch.ahat, SOURCE_HEAD)
        return obj.bce_with_logits(nm.reshape(logits, (len(batch),)), batch.labels)
    z1 = head_output(params, extractor_forward(params, batch.x, batch.ahat), batch.ahat, SOURCE_HEAD)
    z2 = head_output(params, extractor_forward(params, batch.x2, batch.ahat), batch.ahat, SOURCE_HEAD)
    return obj.contrastive_loss(z1, z2, cfg.tau, cfg.include_positive_in_denominator)


# --------------------------------------------------------------------------
# the three steps
# --------------------------------------------------------------------------


def _guard(fn, what: str):
    try:
        return fn()
    except NumericalError as exc:
        raise NumericalError(f"{what}: {exc}", exc.path) from None


def inner_adapt(
    params: Mapping[str, np.ndarray], theta0: Mapping[str, np.ndarray], batch: Batch, cfg: TrainConfig
) -> tuple[ParamTree, list[float]]:
    """``inner_steps`` SGD steps on the target head only, extractor frozen.

    Returns the adapted head leaves and the loss seen at every step.
    """
    with nm.no_grad():
        emb = extractor_forward(params, batch.x, batch.ahat)
    theta = dict(theta0)
    losses = []
    for j in range(cfg.inner_steps):

        def loss_fn(t):
            return target_loss(t, batch, emb)

        try:
            value, g = nm.value_and_grad(loss_fn, theta)
        except NumericalError as exc:
            raise NumericalError(f"inner step {j}: {exc}", exc.path) from None
        losses.append(value)
        theta = sgd_step(theta, g, cfg.alpha)
    return theta, losses


def _differentiable_inner(t: Mapping[str, Tensor], theta0: Mapping[str, np.ndarray], batch: Batch, cfg: TrainConfig):
    """Inner loop recorded on the tape so the outer gradient flows through it."""
    emb = extractor_forward(t, batch.x, batch.ahat)
    theta = {k: Tensor(v, requires_grad=True) for k, v in theta0.items()}
    for _ in range(cfg.inner_steps):
        merged = {**t, **theta}
        loss = target_loss(merged, batch, emb)
        keys = list(theta)
        grads = nm.gradients(loss, [theta[k] for k in keys], create_graph=True)
        theta = {k: nm.sub(theta[k], nm.mul(cfg.alpha, g)) for k, g in zip(keys, grads)}
    return theta


def outer_objective(
    params: Mapping[str, np.ndarray],
    cfg: TrainConfig,
    source_batch: Batch | None,
    metaval_batch: Batch | None,
    *,
    second_order_batch: Batch | None = None,
    theta0: Mapping[str, np.ndarray] | None = None,
    use_source: bool = True,
):
    """Step-3 objective as a function of a tensor tree.

    Returns ``fn(tensors) -> Tensor`` plus a dict that ``fn`` fills with the
    separate source and meta-val loss values. The target head enters as
    whatever leaves ``tensors`` holds (frozen constants in the first-order
    path); with ``second_order_batch`` it is rebuilt from ``theta0`` by a
    differentiable inner loop.
    """
    parts: dict[str, float] = {}

    def fn(t):
        total = None
        if use_source and source_batch is not None:
            ls = source_loss(t, source_batch, cfg)
            parts["source"] = float(ls.data)
            total = ls
        if metaval_batch is not None and cfg.lam != 0:
            tt = t
            if second_order_batch is not None:
                tt = {**t, **_differentiable_inner(t, theta0, second_order_batch, cfg)}
            lt = target_loss(tt, metaval_batch)
            parts["metaval"] = float(lt.data)
            scaled = nm.mul(lt, cfg.lam)
            total = scaled if total is None else nm.add(total, scaled)
        if total is None:
            raise ValidationError("outer objective has no terms")
        return total

    return fn, parts


def outer_step(
    params: ParamTree,
    adam: AdamState,
    cfg: TrainConfig,
    source_batch: Batch | None,
    metaval_batch: Batch | None,
    update: Sequence[str] = (EXTRACTOR, SOURCE_HEAD),
    **kwargs,
) -> tuple[ParamTree, AdamState, dict[str, float]]:
    """One Adam step on the ``update`` partitions; all other leaves stay constant."""
    fn, parts = outer_objective(params, cfg, source_batch, metaval_batch, **kwargs)
    keys = keys_of(params, *update)
    _, grads = nm.value_and_grad(fn, params, wrt=keys)
    new, adam = adam_step(params, grads, keys, adam, cfg.beta)
    return new, adam, parts


# --------------------------------------------------------------------------
# training loops
# --------------------------------------------------------------------------


class _Run:
    """Mutable state shared by the training loops of every mode."""

    def __init__(self, source: Dataset | None, target: Dataset | None, cfg: TrainConfig,
                 on_iteration: Callable | None):
        cfg.validate()
        self.cfg = cfg
        self.source = source
        self.target = target
        cache = GraphCache()
        self.src = BatchFactory(source, cfg.window_length, cache) if source is not None else None
        self.tgt = BatchFactory(target, cfg.window_length, cache) if target is not None else None
        seed = cfg.seed
        source_out = 1 if cfg.effective_source_task == "supervised" else cfg.embed_dim
        self.params = init_params(cfg.model, stream(seed, "init"), source_out=source_out)
        self.head_rng = stream(seed, "target_head_init")
        self.source_order_rng = stream(seed, "source_order")
        self.source_window_rng = stream(seed, "source_windows")
        self.split_rng = stream(seed, "target_split")
        self.target_rng = stream(seed, "target_batches")
        self.adam = AdamState()
        self.log = TrainLog()
        self.iteration = 0
        self.on_iteration = on_iteration
        self.t0 = time.perf_counter()

    def record(self, epoch: int, phase: str, inner=None, src=None, val=None) -> None:
        self.log.append(
            iter=self.iteration, epoch=epoch, phase=phase, inner_final_loss=inner, source_loss=src,
            metaval_loss=val, seconds=time.perf_counter() - self.t0,
        )
        self.iteration += 1
        if self.on_iteration is not None:
            self.on_iteration(self)

    # -- batches --------------------------------------------------------

    def source_batches(self):
        labels = self.cfg.effective_source_task == "supervised"
        for idx in epoch_batches(len(self.source), self.cfg.batch_size, self.source_order_rng):
            if labels:
                yield self.src.single(idx, self.source_window_rng)
            else:
                yield self.src.views(idx, self.source_window_rng)

    def target_labels(self) -> np.ndarray:
        return self.target.labels

    def iterations_per_epoch(self, dataset: Dataset) -> int:
        return math.ceil(len(dataset) / self.cfg.batch_size)

    def meta_iterations(self, epochs: int, dataset: Dataset) -> int:
        if self.cfg.outer_iterations is not None:
            return self.cfg.outer_iterations
        return epochs * self.iterations_per_epoch(dataset)

    # -- phases ---------------------------------------------------------

    def source_only_epochs(self, epochs: int, phase: str) -> None:
        for epoch in range(epochs):
            for batch in self.source_batches():
                self.params, self.adam, parts = outer_step(
                    self.params, self.adam, self.cfg, batch, None, update=(EXTRACTOR, SOURCE_HEAD)
                )
                self.record(epoch, phase, src=parts.get("source"))

    def meta_loop(self, first_epoch: int, use_source: bool) -> None:
        cfg = self.cfg
        labels = self.target_labels()
        n_tr, _ = cfg.meta_sizes(len(self.target))
        driver = self.source if use_source else self.target
        total = self.meta_iterations(cfg.total_epochs - first_epoch, driver)
        per_epoch = self.iterations_per_epoch(driver)
        source_iter = iter(())
        for i in range(total):
            epoch = first_epoch + i // per_epoch
            source_batch = None
            if use_source:
                source_batch = next(source_iter, None)
                if source_batch is None:
                    source_iter = self.source_batches()
                    source_batch = next(source_iter)
            # fresh head and a fresh meta split every iteration
            theta0 = init_target_head(cfg.model, self.head_rng)
            tr_idx, val_idx = split_meta(labels, n_tr, self.split_rng)
            tr_batch = self.tgt.single(balanced_batch(tr_idx, labels, cfg.batch_size, self.target_rng), self.target_rng)
            val_batch = self.tgt.single(balanced_batch(val_idx, labels, cfg.batch_size, self.target_rng), self.target_rng)
            update = (EXTRACTOR, SOURCE_HEAD) if use_source else (EXTRACTOR,)
            theta_k, inner_losses = inner_adapt(self.params, theta0, tr_batch, cfg)
            with_head = {**self.params, **theta_k}
            # the second-order path re-runs the inner loop on the tape
            extra = {"second_order_batch": tr_batch, "theta0": theta0} if cfg.second_order else {}
            new, self.adam, parts = outer_step(
                with_head, self.adam, cfg, source_batch, val_batch, update=update, use_source=use_source, **extra
            )
            if "metaval" not in parts:
                with nm.no_grad():
                    parts["metaval"] = float(target_loss(with_head, val_batch).data)
            self.params = new
            self.record(epoch, "meta", inner=inner_losses[-1] if inner_losses else None,
                        src=parts.get("source"), val=parts.get("metaval"))

    def joint_loop(self, first_epoch: int) -> None:
        """Multi-task learning: both heads and the extractor in one Adam step."""
        cfg = self.cfg
        labels = self.target_labels()
        everyone = np.arange(len(self.target))
        total = self.meta_iterations(cfg.total_epochs - first_epoch, self.source)
        per_epoch = self.iterations_per_epoch(self.source)
        source_iter = iter(())
        for i in range(total):
            source_batch = next(source_iter, None)
            if source_batch is None:
                source_iter = self.source_batches()
                source_batch = next(source_iter)
            tgt_batch = self.tgt.single(balanced_batch(everyone, labels, cfg.batch_size, self.target_rng), self.target_rng)
            self.params, self.adam, parts = outer_step(
                self.params, self.adam, cfg, source_batch, tgt_batch,
                update=(EXTRACTOR, SOURCE_HEAD, TARGET_HEAD),
            )
            self.record(first_epoch + i // per_epoch, "joint", src=parts.get("source"), val=parts.get("metaval"))

    def finetune_loop(self, first_epoch: int) -> None:
        """Supervised fine-tuning of extractor + target head on the target set."""
        cfg = self.cfg
        labels = self.target_labels()
        everyone = np.arange(len(self.target))
        total = self.meta_iterations(cfg.total_epochs - first_epoch, self.target)
        per_epoch = self.iterations_per_epoch(self.target)
        self.adam = AdamState()
        for i in range(total):
            batch = self.tgt.single(balanced_batch(everyone, labels, cfg.batch_size, self.target_rng), self.target_rng)
            self.params, self.adam, parts = outer_step(
                self.params, self.adam, cfg, None, batch, update=(EXTRACTOR, TARGET_HEAD), use_source=False
            )
            self.record(first_epoch + i // per_epoch, "finetune", val=parts.get("metaval"))


def _require(dataset: Dataset | None, what: str, labeled: bool) -> None:
    if dataset is None or len(dataset) == 0:
        raise ValidationError(f"{what} dataset is required for this mode")
    if labeled and not dataset.is_labeled:
        raise ValidationError(f"{what} dataset must be fully labelled for this mode")


def train(
    source: Dataset | None,
    target: Dataset | None,
    cfg: TrainConfig,
    on_iteration: Callable | None = None,
    abort_checkpoint: str | Path | None = None,
) -> tuple[ParamTree, TrainLog]:
    """Train in ``cfg.mode``; deterministic given ``cfg.seed``.

    ``total_epochs`` counts the warm-up epochs. On a non-finite loss the
    current parameters are written to ``abort_checkpoint`` (when given)
    and :class:`TrainingAborted` is raised.
    """
    cfg.validate()
    mode = cfg.mode
    needs_source = mode != "mel"
    needs_target = mode not in ("ssl",)
    if needs_source:
        _require(source, "source", labeled=cfg.effective_source_task == "supervised")
    if needs_target:
        _require(target, "target", labeled=True)
    run = _Run(source if needs_source else None, target if needs_target else None, cfg, on_iteration)
    try:
        if mode == "ssl":
            run.source_only_epochs(cfg.total_epochs, "ssl")
        elif mode in ("metsk", "supervised_source"):
            run.source_only_epochs(cfg.warmup_epochs, "warmup")
            run.meta_loop(cfg.warmup_epochs, use_source=True)
        elif mode == "mel":
            # warm-up is source-only, so without a source every epoch is a meta epoch
            run.meta_loop(0, use_source=False)
        elif mode == "mtl":
            run.source_only_epochs(cfg.warmup_epochs, "warmup")
            run.joint_loop(cfg.warmup_epochs)
        elif mode == "ft":
            run.source_only_epochs(cfg.warmup_epochs, "pretrain")
            run.finetune_loop(cfg.warmup_epochs)
    except NumericalError as exc:
        if abort_checkpoint is not None:
            save_checkpoint(abort_checkpoint, run.params, {"train": cfg.to_dict(), "aborted": True})
        log.error("training aborted: %s", exc)
        raise TrainingAborted(str(exc), run.iteration, run.params) from None
    return run.params, run.log


def train_ablation(mode: str, source: Dataset | None, target: Dataset | None, cfg: TrainConfig, **kwargs):
    """:func:`train` with ``cfg.mode`` replaced by ``mode``."""
    return train(source, target, dataclasses.replace(cfg, mode=mode), **kwargs)
