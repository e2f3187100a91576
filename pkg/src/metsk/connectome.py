"""Subjects, functional graphs, window sampling, dataset files and a
synthetic multi-site connectome generator."""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .errors import DegenerateInputError, DimensionError, FormatError, SingularDegreeError, ValidationError

DEFAULT_ROIS = 116
BIN_MAGIC = b"MTSK"
BIN_VERSION = 1


@dataclass(frozen=True, eq=False)
class SubjectRecord:
    """One subject's ROI x time matrix with its class label and site tag."""

    subject_id: str
    series: np.ndarray
    label: Optional[int] = None
    site: str = ""

    def __post_init__(self):
        series = np.array(self.series, dtype=np.float64)
        if series.ndim != 2:
            raise DimensionError(f"subject {self.subject_id}: series must be 2-D, got {series.shape}")
        n_rois, n_time = series.shape
        if n_rois < 2 or n_time < 2:
            raise DimensionError(f"subject {self.subject_id}: need P>=2 and T>=2, got {series.shape}")
        if not np.isfinite(series).all():
            raise DegenerateInputError(f"subject {self.subject_id}: non-finite samples")
        flat = np.flatnonzero(series.var(axis=1) == 0)
        if flat.size:
            raise DegenerateInputError(f"subject {self.subject_id}: ROI {int(flat[0])} has zero variance")
        if self.label is not None and self.label not in (0, 1):
            raise ValidationError(f"subject {self.subject_id}: label must be 0, 1 or None, got {self.label}")
        series.flags.writeable = False
        object.__setattr__(self, "series", series)

    @property
    def n_rois(self) -> int:
        return self.series.shape[0]

    @property
    def n_timepoints(self) -> int:
        return self.series.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SubjectRecord):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.label == other.label
            and self.site == other.site
            and self.series.shape == other.series.shape
            and np.array_equal(self.series, other.series)
        )


@dataclass(frozen=True)
class SubSequenceSample:
    subject_id: str
    start: int
    window: np.ndarray  # [P, L, 1]


@dataclass(eq=False)
class Dataset:
    subjects: list[SubjectRecord] = field(default_factory=list)
    roi_names: list[str] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        ids = [s.subject_id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate subject ids in dataset")
        sizes = {s.n_rois for s in self.subjects}
        if len(sizes) > 1:
            raise DimensionError(f"subjects disagree on ROI count: {sorted(sizes)}")
        if self.subjects and self.roi_names and len(self.roi_names) != self.subjects[0].n_rois:
            raise DimensionError(
                f"{len(self.roi_names)} ROI names for {self.subjects[0].n_rois} ROIs"
            )

    def __len__(self) -> int:
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.subjects == other.subjects
            and list(self.roi_names) == list(other.roi_names)
            and self.metadata == other.metadata
        )

    @property
    def n_rois(self) -> int:
        if self.subjects:
            return self.subjects[0].n_rois
        return len(self.roi_names)

    @property
    def labels(self) -> np.ndarray:
        if any(s.label is None for s in self.subjects):
            raise ValidationError("dataset contains unlabeled subjects")
        return np.array([s.label for s in self.subjects], dtype=int)

    @property
    def is_labeled(self) -> bool:
        return bool(self.subjects) and all(s.label is not None for s in self.subjects)

    def subset(self, indices: Sequence[int]) -> Dataset:
        return Dataset([self.subjects[i] for i in indices], list(self.roi_names), dict(self.metadata))


@dataclass(frozen=True)
class FunctionalGraph:
    adjacency: np.ndarray
    normalized: np.ndarray

    @classmethod
    def from_series(cls, series: np.ndarray) -> FunctionalGraph:
        adjacency = pearson_adjacency(series)
        return cls(adjacency, normalize_adjacency(adjacency))


# --------------------------------------------------------------------------
# graph construction
# --------------------------------------------------------------------------


def pearson_adjacency(series: np.ndarray) -> np.ndarray:
    """Pairwise Pearson correlation between ROI rows; diagonal exactly 1."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise DimensionError(f"series must be P x T with T >= 2, got {x.shape}")
    centered = x - x.mean(axis=1, keepdims=True)
    ss = np.einsum("ij,ij->i", centered, centered)
    bad = np.flatnonzero(ss == 0)
    if bad.size:
        raise DegenerateInputError(f"ROI {int(bad[0])} has zero variance")
    unit = centered / np.sqrt(ss)[:, None]
    r = unit @ unit.T
    r = np.triu(r, 1)
    r = r + r.T
    np.fill_diagonal(r, 1.0)
    return r


def normalize_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """``D^{-1/2} (A + I) D^{-1/2}`` with ``D_ii = sum_j A_ij + 1``."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"adjacency must be square, got {a.shape}")
    degree = a.sum(axis=1) + 1.0
    bad = np.flatnonzero(degree <= 0)
    if bad.size:
        raise SingularDegreeError(f"node {int(bad[0])} has degree {degree[bad[0]]:.6g} <= 0")
    scale = 1.0 / np.sqrt(degree)
    out = scale[:, None] * (a + np.eye(a.shape[0])) * scale[None, :]
    upper = np.triu(out, 1)
    return upper + upper.T + np.diag(np.diag(out))


def connectivity_features(adjacency: np.ndarray) -> np.ndarray:
    """Row-major upper triangle including the diagonal: ``P(P+1)/2`` values."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"adjacency must be square, got {a.shape}")
    return a[np.triu_indices(a.shape[0])]


def features_to_adjacency(features: np.ndarray) -> np.ndarray:
    """Inverse of :func:`connectivity_features`."""
    v = np.asarray(features, dtype=np.float64)
    n = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if n * (n + 1) // 2 != v.size:
        raise DimensionError(f"{v.size} is not a triangular number")
    out = np.zeros((n, n))
    out[np.triu_indices(n)] = v
    return out + np.triu(out, 1).T


def roi_of_feature(n_rois: int) -> np.ndarray:
    """Row ROI of every connectivity feature (for importance maps)."""
    return np.triu_indices(n_rois)[0]


# --------------------------------------------------------------------------
# windows
# --------------------------------------------------------------------------


def _check_window(record: SubjectRecord, length: int) -> None:
    if length < 1:
        raise ValidationError(f"window length must be positive, got {length}")
    if record.n_timepoints < length:
        raise ValidationError(
            f"subject {record.subject_id}: T={record.n_timepoints} shorter than window L={length}"
        )


def window_at(record: SubjectRecord, start: int, length: int) -> SubSequenceSample:
    _check_window(record, length)
    if not 0 <= start <= record.n_timepoints - length:
        raise ValidationError(f"window start {start} out of range for subject {record.subject_id}")
    window = np.array(record.series[:, start : start + length])[:, :, None]
    return SubSequenceSample(record.subject_id, int(start), window)


def sample_subsequences(
    record: SubjectRecord, length: int, count: int, rng: np.random.Generator
) -> list[SubSequenceSample]:
    """``count`` windows with starts uniform on ``{0, ..., T-L}``.

    Starts are drawn one at a time, so the first ``R`` windows of a call
    with ``2R`` match a call with ``R`` on the same generator state.
    """
    _check_window(record, length)
    span = record.n_timepoints - length + 1
    return [window_at(record, int(rng.integers(span)), length) for _ in range(count)]


def sample_view_pair(
    record: SubjectRecord, length: int, rng: np.random.Generator
) -> tuple[SubSequenceSample, SubSequenceSample]:
    """Two windows with distinct starts whenever ``T > L`` (contrastive views)."""
    _check_window(record, length)
    span = record.n_timepoints - length + 1
    first = int(rng.integers(span))
    second = first
    if span > 1:
        second = int(rng.integers(span - 1))
        second += second >= first
    return window_at(record, first, length), window_at(record, second, length)


# --------------------------------------------------------------------------
# synthetic generator
# --------------------------------------------------------------------------


def contiguous_blocks(start: int, sizes: Sequence[int]) -> list[list[int]]:
    blocks, pos = [], start
    for size in sizes:
        blocks.append(list(range(pos, pos + size)))
        pos += size
    return blocks


def default_class_blocks(n_rois: int, n_classes: int) -> list[list[list[int]]]:
    """Disjoint ROI ranges per class, each split into two equal blocks."""
    span = n_rois // n_classes
    half = span // 2
    return [contiguous_blocks(c * span, [half, half]) for c in range(n_classes)]


@dataclass
class GeneratorSpec:
    """Parameters of the block-latent AR(1) connectome generator.

    Each ROI in block ``b`` mixes a shared latent signal with weight
    ``sqrt(rho)`` and a private signal with weight ``sqrt(1 - rho)``; both
    are unit-variance AR(1) processes with coefficient ``ar``. A global
    AR(1) signal with variance share ``global_share`` is then mixed into
    every ROI, which keeps row sums of the correlation matrix (and so the
    graph degrees) positive, as in real BOLD data. Finally white noise of
    standard deviation ``noise`` is added, so the expected within-block
    correlation is ``(g + (1 - g) rho) / (1 + noise**2)`` with
    ``g = global_share``. ``rho`` and ``ar`` may be given per class.
    Rows are z-scored before being stored.
    """

    n_rois: int = DEFAULT_ROIS
    n_timepoints: int = 231
    class_counts: list[int] = field(default_factory=lambda: [40, 40])
    class_blocks: Optional[list[list[list[int]]]] = None
    rho: Any = 0.6  # scalar or one value per class
    ar: Any = 0.5  # scalar or one value per class
    noise: float = 0.5
    global_share: float = 0.4
    sites: list[str] = field(default_factory=lambda: ["site0", "site1"])
    labeled: bool = True
    rho_jitter: float = 0.0  # per-subject uniform perturbation of rho
    ar_jitter: float = 0.0  # per-subject uniform perturbation of ar
    shuffle_rois: bool = False  # per-subject random ROI relabelling
    id_prefix: str = "sub"

    @property
    def n_classes(self) -> int:
        return len(self.class_counts)

    def rho_for(self, cls: int) -> float:
        if isinstance(self.rho, (list, tuple)):
            return float(self.rho[cls])
        return float(self.rho)

    def ar_for(self, cls: int) -> float:
        if isinstance(self.ar, (list, tuple)):
            return float(self.ar[cls])
        return float(self.ar)

    def blocks(self) -> list[list[list[int]]]:
        if self.class_blocks is not None:
            return self.class_blocks
        return default_class_blocks(self.n_rois, self.n_classes)

    def validate(self) -> None:
        if self.n_rois < 2 or self.n_timepoints < 2:
            raise ValidationError("generator needs n_rois >= 2 and n_timepoints >= 2")
        if not self.class_counts or any(int(c) < 0 for c in self.class_counts):
            raise ValidationError("class_counts must be a non-empty list of nonnegative ints")
        if self.labeled and self.n_classes > 2:
            raise ValidationError("labels are binary; use at most two classes")
        if isinstance(self.rho, (list, tuple)) and len(self.rho) != self.n_classes:
            raise ValidationError("per-class rho must have one value per class")
        for c in range(self.n_classes):
            rho = self.rho_for(c)
            if not 0 <= rho < 1:
                raise ValidationError(f"rho must lie in [0, 1), got {rho}")
            if not 0 <= rho - self.rho_jitter or not rho + self.rho_jitter < 1:
                raise ValidationError("rho +/- rho_jitter must stay inside [0, 1)")
        if isinstance(self.ar, (list, tuple)) and len(self.ar) != self.n_classes:
            raise ValidationError("per-class ar must have one value per class")
        for c in range(self.n_classes):
            ar = self.ar_for(c)
            if not 0 <= ar - self.ar_jitter or not ar + self.ar_jitter < 1:
                raise ValidationError(f"ar +/- ar_jitter must lie in [0, 1), got ar={ar}")
        if not 0 <= self.global_share < 1:
            raise ValidationError(f"global_share must lie in [0, 1), got {self.global_share}")
        if not self.noise > 0:
            raise ValidationError(f"noise must be > 0, got {self.noise}")
        if not self.sites:
            raise ValidationError("at least one site tag is required")
        blocks = self.blocks()
        if len(blocks) != self.n_classes:
            raise ValidationError("class_blocks needs one block list per class")
        for cls_blocks in blocks:
            seen: set[int] = set()
            for block in cls_blocks:
                for roi in block:
                    if not 0 <= roi < self.n_rois or roi in seen:
                        raise ValidationError(f"invalid or repeated ROI {roi} in class_blocks")
                    seen.add(roi)

    @classmethod
    def from_dict(cls, data: dict) -> GeneratorSpec:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValidationError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _ar1(white: np.ndarray, coef: float) -> np.ndarray:
    """Stationary unit-variance AR(1) filtering along the last axis."""
    out = np.empty_like(white)
    out[..., 0] = white[..., 0]
    gain = np.sqrt(1.0 - coef * coef)
    for t in range(1, white.shape[-1]):
        out[..., t] = coef * out[..., t - 1] + gain * white[..., t]
    return out


def _simulate(spec: GeneratorSpec, cls: int, rng: np.random.Generator) -> np.ndarray:
    p, t = spec.n_rois, spec.n_timepoints
    rho = spec.rho_for(cls) + spec.rho_jitter * rng.uniform(-1, 1)
    ar = spec.ar_for(cls) + spec.ar_jitter * rng.uniform(-1, 1)
    blocks = spec.blocks()[cls]
    order = rng.permutation(p) if spec.shuffle_rois else np.arange(p)
    private = _ar1(rng.standard_normal((p, t)), ar)
    latent = _ar1(rng.standard_normal((max(len(blocks), 1), t)), ar)
    x = private.copy()
    for b, block in enumerate(blocks):
        rows = order[np.asarray(block, dtype=int)]
        x[rows] = np.sqrt(rho) * latent[b] + np.sqrt(1.0 - rho) * private[rows]
    if spec.global_share > 0:
        shared = _ar1(rng.standard_normal((1, t)), ar)
        x = np.sqrt(spec.global_share) * shared + np.sqrt(1.0 - spec.global_share) * x
    x += spec.noise * rng.standard_normal((p, t))
    x -= x.mean(axis=1, keepdims=True)
    x /= x.std(axis=1, keepdims=True)
    return x


def _simulate_valid(spec: GeneratorSpec, cls: int, rng: np.random.Generator, tries: int = 100) -> np.ndarray:
    # short series occasionally give a row of strongly negative correlations;
    # redraw so every generated subject has a usable graph
    for _ in range(tries):
        x = _simulate(spec, cls, rng)
        if (pearson_adjacency(x).sum(axis=1) + 1.0 > 0).all():
            return x
    raise DegenerateInputError(f"could not draw a subject with positive graph degrees in {tries} tries")


def synth_generate(spec: GeneratorSpec, rng: np.random.Generator | int) -> Dataset:
    """Draw a dataset from ``spec``; identical seeds give identical datasets."""
    spec.validate()
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    root = np.random.SeedSequence(int(rng.integers(2**63)))
    total = sum(int(c) for c in spec.class_counts)
    children = root.spawn(total)
    subjects = []
    i = 0
    for cls, count in enumerate(spec.class_counts):
        for _ in range(int(count)):
            sub_rng = np.random.default_rng(children[i])
            series = _simulate_valid(spec, cls, sub_rng)
            subjects.append(
                SubjectRecord(
                    subject_id=f"{spec.id_prefix}{i:04d}",
                    series=series,
                    label=cls if spec.labeled else None,
                    site=spec.sites[i % len(spec.sites)],
                )
            )
            i += 1
    roi_names = [f"ROI{j + 1:03d}" for j in range(spec.n_rois)]
    return Dataset(subjects, roi_names, {"generator": spec.to_dict()})


# --------------------------------------------------------------------------
# dataset files
# --------------------------------------------------------------------------


def _write_bin(path: Path, series: np.ndarray) -> None:
    p, t = series.shape
    header = BIN_MAGIC + struct.pack("<III", BIN_VERSION, p, t)
    path.write_bytes(header + np.ascontiguousarray(series, dtype="<f8").tobytes())


def _read_bin(path: Path, subject_id: str) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != BIN_MAGIC:
        raise FormatError(f"subject {subject_id}: {path.name} is not an MTSK matrix file")
    version, p, t = struct.unpack("<III", raw[4:16])
    if version != BIN_VERSION:
        raise FormatError(f"subject {subject_id}: unsupported matrix version {version}")
    body = raw[16:]
    if len(body) != 8 * p * t:
        raise FormatError(f"subject {subject_id}: payload holds {len(body) // 8} values, header says {p}x{t}")
    return np.frombuffer(body, dtype="<f8").reshape(p, t).astype(np.float64)


def _write_csv(path: Path, series: np.ndarray) -> None:
    lines = [",".join(repr(float(v)) for v in row) for row in series]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_csv(path: Path, subject_id: str) -> np.ndarray:
    rows = [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    try:
        data = [[float(v) for v in line.split(",")] for line in rows]
    except ValueError as exc:
        raise FormatError(f"subject {subject_id}: unparsable CSV value ({exc})") from None
    if not data or len({len(r) for r in data}) != 1:
        raise FormatError(f"subject {subject_id}: ragged or empty CSV matrix")
    return np.array(data, dtype=np.float64)


def save_dataset(dataset: Dataset, path: str | Path, fmt: str = "bin") -> None:
    """Write ``manifest.json`` plus one matrix file per subject."""
    if fmt not in ("bin", "csv"):
        raise ValidationError(f"unknown matrix format {fmt!r}")
    root = Path(path)
    (root / "subjects").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in dataset.subjects:
        rel = f"subjects/{s.subject_id}.{fmt}"
        (_write_bin if fmt == "bin" else _write_csv)(root / rel, s.series)
        entries.append(
            {"subject_id": s.subject_id, "label": s.label, "site": s.site, "file": rel,
             "P": s.n_rois, "T": s.n_timepoints}
        )
    manifest = {
        "format_version": 1,
        "roi_names": list(dataset.roi_names),
        "metadata": dataset.metadata,
        "subjects": entries,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_dataset(path: str | Path) -> Dataset:
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError(f"no manifest.json in {root}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed manifest: {exc}") from None
    if not isinstance(manifest, dict) or not isinstance(manifest.get("subjects"), list):
        raise FormatError("manifest must be an object with a 'subjects' list")
    subjects = []
    for entry in manifest["subjects"]:
        try:
            sid, rel, p, t = entry["subject_id"], entry["file"], int(entry["P"]), int(entry["T"])
        except (KeyError, TypeError, ValueError):
            raise FormatError(f"malformed subject entry: {entry!r}") from None
        file = root / rel
        if not file.exists():
            raise FormatError(f"subject {sid}: missing matrix file {rel}")
        if file.suffix == ".bin":
            series = _read_bin(file, sid)
        elif file.suffix == ".csv":
            series = _read_csv(file, sid)
        else:
            raise FormatError(f"subject {sid}: unknown matrix extension {file.suffix!r}")
        if series.shape != (p, t):
            raise FormatError(f"subject {sid}: matrix is {series.shape[0]}x{series.shape[1]}, manifest says {p}x{t}")
        subjects.append(SubjectRecord(sid, series, entry.get("label"), entry.get("site", "")))
    return Dataset(subjects, list(manifest.get("roi_names", [])), dict(manifest.get("metadata", {})))
