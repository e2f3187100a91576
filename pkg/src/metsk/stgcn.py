"""Spatio-temporal graph convolution model: a three-module feature
extractor plus two single-module heads (source and target).

Parameters live in one flat ParamTree whose top-level prefixes are the
three disjoint partitions ``extractor`` (phi), ``source_head`` (theta_s)
and ``target_head`` (theta_t).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import numerics as nm
from .connectome import FunctionalGraph, SubjectRecord, SubSequenceSample
from .errors import DimensionError, FormatError, ValidationError
from .numerics import ParamTree, Tensor

EXTRACTOR = "extractor"
SOURCE_HEAD = "source_head"
TARGET_HEAD = "target_head"
PARTITIONS = (EXTRACTOR, SOURCE_HEAD, TARGET_HEAD)

CKPT_MAGIC = b"MTSKCKPT"
CKPT_VERSION = 1


@dataclass
class ModelConfig:
    extractor_channels: list[int] = field(default_factory=lambda: [16, 16, 16])
    head_channels: int = 16
    embed_dim: int = 64
    kernel: int = 11

    def validate(self) -> None:
        if len(self.extractor_channels) < 1 or min(self.extractor_channels) < 1:
            raise ValidationError("extractor_channels must be positive widths")
        if self.head_channels < 1 or self.embed_dim < 1:
            raise ValidationError("head widths must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValidationError(f"temporal kernel must be odd, got {self.kernel}")


def partition_of(path: str) -> str:
    head = path.split("/", 1)[0]
    if head not in PARTITIONS:
        raise ValidationError(f"leaf {path!r} belongs to no partition")
    return head


# --------------------------------------------------------------------------
# initialisation
# --------------------------------------------------------------------------


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_layer(rng: np.random.Generator, c_in: int, c_out: int, kernel: int) -> dict[str, np.ndarray]:
    return {
        "W": _uniform(rng, (c_in, c_out), c_in),
        "K": _uniform(rng, (kernel, c_out, c_out), kernel * c_out),
        "b": _uniform(rng, (c_out,), kernel * c_out),
    }


def init_head(rng: np.random.Generator, cfg: ModelConfig, c_in: int, out_dim: int) -> dict[str, np.ndarray]:
    leaves = {f"stgcn/{k}": v for k, v in init_layer(rng, c_in, cfg.head_channels, cfg.kernel).items()}
    leaves["fc/W"] = _uniform(rng, (cfg.head_channels, out_dim), cfg.head_channels)
    leaves["fc/b"] = _uniform(rng, (out_dim,), cfg.head_channels)
    return leaves


def init_params(cfg: ModelConfig, rng: np.random.Generator, source_out: int | None = None) -> ParamTree:
    """Fresh parameters, uniform in +-1/sqrt(fan_in).

    ``source_out`` is the source head's output width: ``embed_dim`` for
    the contrastive projector, 1 for a supervised source classifier.
    """
    cfg.validate()
    params: ParamTree = {}
    c_in = 1
    for i, c_out in enumerate(cfg.extractor_channels):
        for k, v in init_layer(rng, c_in, c_out, cfg.kernel).items():
            params[f"{EXTRACTOR}/layer{i}/{k}"] = v
        c_in = c_out
    out = cfg.embed_dim if source_out is None else source_out
    for k, v in init_head(rng, cfg, c_in, out).items():
        params[f"{SOURCE_HEAD}/{k}"] = v
    params.update(init_target_head(cfg, rng))
    return params


def init_target_head(cfg: ModelConfig, rng: np.random.Generator) -> ParamTree:
    return {f"{TARGET_HEAD}/{k}": v for k, v in init_head(rng, cfg, cfg.extractor_channels[-1], 1).items()}


# --------------------------------------------------------------------------
# forward pass
# --------------------------------------------------------------------------


def spatial_graph_conv(x, normalized_adjacency, W) -> Tensor:
    """``out[b, :, l, :] = A_hat[b] @ x[b, :, l, :] @ W`` for every time point.

    ``x`` is ``[B, P, L, C_in]`` (or ``[P, L, C_in]``), the adjacency
    ``[B, P, P]`` (or ``[P, P]``) and ``W`` is ``[C_in, C_out]``.
    """
    x = nm.as_tensor(x)
    ahat = nm.as_tensor(normalized_adjacency)
    W = nm.as_tensor(W)
    *lead, p, length, c_in = x.shape
    if ahat.shape[-1] != p or ahat.shape[-2] != p:
        raise DimensionError(f"adjacency {ahat.shape} does not match {p} nodes")
    if W.shape[0] != c_in:
        raise DimensionError(f"W {W.shape} does not match {c_in} input channels")
    mixed = nm.matmul(ahat, nm.reshape(x, tuple(lead) + (p, length * c_in)))
    mixed = nm.reshape(mixed, tuple(lead) + (p, length, c_in))
    return nm.matmul(mixed, W)


def temporal_conv(x, K, b) -> Tensor:
    """Per-node 1-D convolution along time (zero same-padding), bias, ReLU."""
    return nm.relu(nm.add(nm.conv_time(x, K), b))


def stgcn_module(x, normalized_adjacency, leaves: Mapping[str, Tensor], prefix: str) -> Tensor:
    s = spatial_graph_conv(x, normalized_adjacency, leaves[f"{prefix}/W"])
    return temporal_conv(s, leaves[f"{prefix}/K"], leaves[f"{prefix}/b"])


def n_extractor_layers(params: Mapping) -> int:
    return sum(1 for p in params if p.startswith(f"{EXTRACTOR}/") and p.endswith("/W"))


def extractor_forward(params: Mapping, x, normalized_adjacency) -> Tensor:
    """Three chained ST-GCN modules; returns ``[B, P, L, C_final]``."""
    h = nm.as_tensor(x)
    for i in range(n_extractor_layers(params)):
        h = stgcn_module(h, normalized_adjacency, params, f"{EXTRACTOR}/layer{i}")
    return h


def head_output(params: Mapping, emb, normalized_adjacency, head: str) -> Tensor:
    """Head ST-GCN module, global mean pool over nodes and time, then FC.

    Returns ``[B, out_dim]`` raw outputs (logits for a classifier head,
    embedding vectors for the projector).
    """
    h = stgcn_module(emb, normalized_adjacency, params, f"{head}/stgcn")
    pooled = nm.mean(h, axis=(-3, -2))
    return nm.add(nm.matmul(pooled, params[f"{head}/fc/W"]), params[f"{head}/fc/b"])


def head_forward(params: Mapping, emb, normalized_adjacency, head: str, kind: str) -> Tensor:
    """Classifier heads give probabilities ``[B]``; projectors give ``[B, D]``."""
    out = head_output(params, emb, normalized_adjacency, head)
    if kind == "classifier":
        return nm.sigmoid(nm.reshape(out, out.shape[:-1]))
    if kind == "projector":
        return out
    raise ValidationError(f"unknown head kind {kind!r}")


def vote(probabilities: Sequence[float], method: str = "mean") -> float:
    """Combine per-window probabilities into one subject-level probability."""
    p = np.asarray(list(probabilities), dtype=np.float64)
    if p.size == 0:
        raise ValidationError("vote needs at least one window")
    if ((p < 0) | (p > 1)).any():
        raise ValidationError("vote inputs must be probabilities in [0, 1]")
    if method == "mean":
        return float(np.sort(p).mean())
    if method == "majority":
        return float(np.mean(p > 0.5))
    raise ValidationError(f"unknown vote method {method!r}")


# --------------------------------------------------------------------------
# batching helpers
# --------------------------------------------------------------------------


class GraphCache:
    """Normalised adjacency per subject, computed once from the full series."""

    def __init__(self):
        self._graphs: dict[str, FunctionalGraph] = {}

    def get(self, record: SubjectRecord) -> FunctionalGraph:
        g = self._graphs.get(record.subject_id)
        if g is None:
            g = FunctionalGraph.from_series(record.series)
            self._graphs[record.subject_id] = g
        return g


def stack_windows(samples: Sequence[SubSequenceSample]) -> np.ndarray:
    return np.stack([s.window for s in samples])


def stack_graphs(records: Sequence[SubjectRecord], cache: GraphCache) -> np.ndarray:
    return np.stack([cache.get(r).normalized for r in records])


def predict_subject(
    params: Mapping[str, np.ndarray],
    record: SubjectRecord,
    windows: Sequence[SubSequenceSample],
    cache: GraphCache | None = None,
    method: str = "mean",
) -> float:
    """Target-head probability for one subject, voted across windows."""
    cache = cache or GraphCache()
    x = stack_windows(windows)
    ahat = np.broadcast_to(cache.get(record).normalized, (len(windows),) + (record.n_rois,) * 2)
    with nm.no_grad():
        emb = extractor_forward(params, x, ahat)
        probs = head_forward(params, emb, ahat, TARGET_HEAD, "classifier")
    return vote(probs.data, method)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(path: str | Path, params: Mapping[str, np.ndarray], config: dict | None = None) -> None:
    """Binary checkpoint: magic, version, JSON config echo, then every leaf."""
    echo = json.dumps(config or {}, sort_keys=True).encode("utf-8")
    chunks = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(echo)), echo, struct.pack("<I", len(params))]
    for name, value in params.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        key = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(key)) + key)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> tuple[ParamTree, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise FormatError(f"{path} is not a checkpoint")
    try:
        version, n_echo = struct.unpack_from("<II", raw, 8)
        if version != CKPT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        pos = 16
        config = json.loads(raw[pos : pos + n_echo].decode("utf-8"))
        pos += n_echo
        (n_leaves,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        params: ParamTree = {}
        for _ in range(n_leaves):
            (n_key,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            key = raw[pos : pos + n_key].decode("utf-8")
            pos += n_key
            (ndim,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            params[key] = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"truncated or corrupt checkpoint: {exc}") from None
    if pos != len(raw):
        raise FormatError("trailing bytes after checkpoint leaves")
    return params, config


def config_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)
