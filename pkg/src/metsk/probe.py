"""Linear probing of frozen embeddings: PCA, linear SVM / logistic
regression, stratified k-fold AUC with nested hyper-parameter search,
coefficient importance maps and paired significance tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import numerics as nm
from ._rng import stream
from .connectome import Dataset, connectivity_features, pearson_adjacency, sample_subsequences
from .errors import DegenerateInputError, DimensionError, ValidationError
from .stgcn import GraphCache, extractor_forward

DEFAULT_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
DEFAULT_WINDOWS = 8
DEFAULT_MAX_PCA = 32


@dataclass
class EmbeddingSet:
    features: np.ndarray  # [n_subjects, dim]
    labels: Optional[np.ndarray]
    subject_ids: list[str]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != len(self.subject_ids):
            raise DimensionError(f"features {self.features.shape} vs {len(self.subject_ids)} subjects")
        if not np.isfinite(self.features).all():
            raise DegenerateInputError("embeddings contain non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)

    def __len__(self) -> int:
        return len(self.subject_ids)


# --------------------------------------------------------------------------
# features
# --------------------------------------------------------------------------


def extract_embeddings(
    params: Mapping[str, np.ndarray],
    dataset: Dataset,
    window_length: int,
    windows: int = DEFAULT_WINDOWS,
    seed: int = 0,
    pool: str = "nodes",
) -> EmbeddingSet:
    """Frozen-extractor features per subject.

    The extractor output is averaged over ``windows`` random windows and
    then over nodes (``pool="nodes"``, giving ``L*C`` values) or over time
    (``pool="time"``, giving ``P*C`` values laid out node-major).
    Each subject's windows come from its own seeded stream, so raising
    ``windows`` only appends windows.
    """
    if pool not in ("nodes", "time"):
        raise ValidationError(f"unknown pool {pool!r}")
    cache = GraphCache()
    rows = []
    for record in dataset.subjects:
        rng = stream(seed, f"embed/{record.subject_id}")
        samples = sample_subsequences(record, window_length, windows, rng)
        x = np.stack([s.window for s in samples])
        ahat = np.broadcast_to(cache.get(record).normalized, (windows,) + (record.n_rois,) * 2)
        with nm.no_grad():
            out = extractor_forward(params, x, ahat).data.mean(axis=0)  # [P, L, C]
        rows.append(out.mean(axis=0 if pool == "nodes" else 1).ravel())
    labels = dataset.labels if dataset.is_labeled else None
    return EmbeddingSet(np.array(rows).reshape(len(rows), -1) if rows else np.zeros((0, 0)),
                        labels, [s.subject_id for s in dataset.subjects])


def connectivity_embeddings(dataset: Dataset) -> EmbeddingSet:
    """Flattened upper-triangular Pearson connectivity per subject."""
    rows = [connectivity_features(pearson_adjacency(s.series)) for s in dataset.subjects]
    labels = dataset.labels if dataset.is_labeled else None
    return EmbeddingSet(np.array(rows), labels, [s.subject_id for s in dataset.subjects])


@dataclass
class PCA:
    mean: np.ndarray
    components: np.ndarray  # [d, dim], orthonormal rows

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X) - self.mean) @ self.components.T

    def inverse_transform(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z) @ self.components + self.mean


def fit_pca(X: np.ndarray, d: int) -> PCA:
    """Top-``d`` principal directions of ``X`` (sign fixed so each
    component's largest-magnitude entry is positive)."""
    X = np.asarray(X, dtype=np.float64)
    n, dim = X.shape
    if not 1 <= d <= min(n - 1, dim):
        raise ValidationError(f"PCA dimension {d} must lie in [1, min(n-1, dim)] = [1, {min(n - 1, dim)}]")
    mean = X.mean(axis=0)
    _, _, vt = np.linalg.svd(X - mean, full_matrices=False)
    comps = vt[:d]
    signs = np.sign(comps[np.arange(d), np.abs(comps).argmax(axis=1)])
    signs[signs == 0] = 1.0
    return PCA(mean, comps * signs[:, None])


def pca_reduce(X: EmbeddingSet, d: int) -> EmbeddingSet:
    pca = fit_pca(X.features, d)
    return EmbeddingSet(pca.transform(X.features), X.labels, list(X.subject_ids))


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> Standardizer:
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(X.mean(axis=0), scale)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale


# --------------------------------------------------------------------------
# linear classifiers
# --------------------------------------------------------------------------


@dataclass
class LinearModel:
    w: np.ndarray
    b: float
    kind: str = "svm"

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X) @ self.w + self.b

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        z = self.decision_function(X)
        return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_binary(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(int)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DimensionError(f"X {X.shape} and y {y.shape} disagree")
    if set(np.unique(y)) != {0, 1}:
        raise DegenerateInputError("linear classifiers need both classes 0 and 1 present")
    return X, y


def svm_objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, C: float) -> float:
    s = 2.0 * np.asarray(y) - 1.0
    margins = s * (np.asarray(X) @ w + b)
    return float(0.5 * w @ w + C * np.maximum(0.0, 1.0 - margins).sum())


def svm_train(X, y, C: float = 1.0, iterations: int = 4000) -> LinearModel:
    """Primal linear SVM, ``0.5|w|^2 + C * sum hinge``, by full-batch
    subgradient descent from zero.

    Steps decay as ``eta0 / sqrt(t)``. Candidates are the best iterate,
    the average of the last half of the run, and an active-set polish of
    the best point; whichever has the lowest objective is returned.
    Everything is deterministic.
    """
    X, y = _check_binary(X, y)
    if not C > 0:
        raise ValidationError("C must be positive")
    s = 2.0 * y - 1.0
    n, dim = X.shape
    # |w*| <= sqrt(2 f(0)) = sqrt(2 C n) bounds the distance to travel;
    # C * sum(|x_i| + 1) bounds the hinge part of the subgradient
    radius = math.sqrt(2.0 * C * n)
    eta0 = radius / (radius + C * (np.linalg.norm(X, axis=1).sum() + n))
    w = np.zeros(dim)
    b = 0.0
    best = (svm_objective(w, b, X, y, C), w.copy(), b)
    avg_w, avg_b, avg_n = np.zeros(dim), 0.0, 0
    for t in range(1, iterations + 1):
        margins = s * (X @ w + b)
        active = margins < 1.0
        gw = w - C * (s[active, None] * X[active]).sum(axis=0)
        gb = -C * s[active].sum()
        step = eta0 / math.sqrt(t)
        w = w - step * gw
        b = b - step * gb
        f = svm_objective(w, b, X, y, C)
        if f < best[0]:
            best = (f, w.copy(), b)
        if t > iterations // 2:
            avg_w += w
            avg_b += b
            avg_n += 1
    if avg_n:
        avg_w, avg_b = avg_w / avg_n, avg_b / avg_n
        f = svm_objective(avg_w, avg_b, X, y, C)
        if f < best[0]:
            best = (f, avg_w, avg_b)
    improved = True
    while improved:
        improved = False
        for eps in (1e-1, 1e-2, 1e-3, 1e-4, 1e-6):
            cand = _polish_svm(best[1], best[2], X, s, C, eps)
            if cand is not None:
                f = svm_objective(cand[0], cand[1], X, y, C)
                if f < best[0] - 1e-15 * max(1.0, abs(best[0])):
                    best = (f, cand[0], cand[1])
                    improved = True
    return LinearModel(best[1], float(best[2]), "svm")


def _polish_svm(w, b, X, s, C, eps):
    """Solve the optimality conditions for the margin pattern of ``(w, b)``:
    points well inside the margin carry weight ``C``, points within ``eps``
    of it are support vectors with free weights, the rest carry none."""
    margins = s * (X @ w + b)
    inside = margins < 1.0 - eps
    on = np.abs(margins - 1.0) <= eps
    dim, k = X.shape[1], int(on.sum())
    Xs, ss = X[on], s[on]
    a = np.zeros((dim + k + 1, dim + 1 + k))
    rhs = np.zeros(dim + k + 1)
    # w - sum_on alpha_i s_i x_i = C sum_inside s_i x_i
    a[:dim, :dim] = np.eye(dim)
    a[:dim, dim + 1 :] = -(ss[:, None] * Xs).T
    rhs[:dim] = C * (s[inside, None] * X[inside]).sum(axis=0)
    # s_i (x_i . w + b) = 1 on the margin
    a[dim : dim + k, :dim] = ss[:, None] * Xs
    a[dim : dim + k, dim] = ss
    rhs[dim : dim + k] = 1.0
    # sum_on alpha_i s_i + C sum_inside s_i = 0
    a[-1, dim + 1 :] = ss
    rhs[-1] = -C * s[inside].sum()
    sol = np.linalg.lstsq(a, rhs, rcond=None)[0]
    if not np.isfinite(sol).all():
        return None
    return sol[:dim], float(sol[dim])


def logreg_objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float) -> float:
    z = np.asarray(X) @ w + b
    # mean of log(1 + exp(-s z)) computed without overflow
    s = 2.0 * np.asarray(y) - 1.0
    return float(np.logaddexp(0.0, -s * z).mean() + 0.5 * l2 * w @ w)


def logreg_gradient(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float) -> tuple[np.ndarray, float]:
    z = X @ w + b
    p = 0.5 * (1.0 + np.tanh(0.5 * z))
    r = (p - y) / y.size
    return X.T @ r + l2 * w, float(r.sum())


def logreg_train(X, y, l2: float = 1.0, tol: float = 1e-6, max_iter: int = 20000) -> LinearModel:
    """L2-regularised logistic regression (mean cross-entropy + ``l2/2 |w|^2``,
    bias unpenalised) by accelerated gradient descent with restarts, run
    until the gradient norm drops below ``tol``."""
    X, y = _check_binary(X, y)
    if not l2 > 0:
        raise ValidationError("l2 must be positive")
    y = y.astype(np.float64)
    n, dim = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    lipschitz = 0.25 * np.linalg.eigvalsh(Xa.T @ Xa / n).max() + l2
    step = 1.0 / lipschitz
    theta = np.zeros(dim + 1)
    prev = theta.copy()
    momentum = 1.0
    f_prev = np.inf
    for _ in range(max_iter):
        gw, gb = logreg_gradient(theta[:-1], theta[-1], X, y, l2)
        if math.hypot(np.linalg.norm(gw), gb) < tol:
            break
        m_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum * momentum))
        look = theta + ((momentum - 1.0) / m_next) * (theta - prev)
        gw, gb = logreg_gradient(look[:-1], look[-1], X, y, l2)
        prev = theta
        theta = look - step * np.append(gw, gb)
        momentum = m_next
        f = logreg_objective(theta[:-1], theta[-1], X, y, l2)
        if f > f_prev:
            # restart the momentum whenever the objective goes up
            momentum = 1.0
            prev = theta
        f_prev = f
    return LinearModel(theta[:-1].copy(), float(theta[-1]), "logreg")


def train_classifier(kind: str, X, y, hyper: float) -> LinearModel:
    if kind == "svm":
        return svm_train(X, y, C=hyper)
    if kind == "logreg":
        return logreg_train(X, y, l2=hyper)
    raise ValidationError(f"unknown classifier {kind!r}")


# --------------------------------------------------------------------------
# AUC and cross-validation
# --------------------------------------------------------------------------


def _midranks(x: np.ndarray) -> np.ndarray:
    _, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts + 1
    return ((starts + ends) / 2.0)[inverse]


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: fraction of (positive, negative) pairs ranked
    correctly, ties counted as one half."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).astype(int).ravel()
    if scores.size != labels.size:
        raise DimensionError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0 or n_pos + n_neg != labels.size:
        raise DegenerateInputError("AUC is undefined without both classes 0 and 1")
    ranks = _midranks(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def stratified_folds(labels: np.ndarray, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Test-index arrays for ``k`` folds; each class is dealt round-robin."""
    labels = np.asarray(labels).astype(int)
    if k < 2:
        raise ValidationError("need at least 2 folds")
    folds: list[list[int]] = [[] for _ in range(k)]
    offset = 0
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        if idx.size < k:
            raise ValidationError(f"class {c} has {idx.size} subjects, fewer than {k} folds")
        for j, i in enumerate(idx):
            folds[(j + offset) % k].append(int(i))
        offset += idx.size
    return [np.sort(np.array(f, dtype=int)) for f in folds]


@dataclass
class FoldRecord:
    train_ids: list[str]
    test_ids: list[str]
    fit_ids: list[str]  # subjects that touched preprocessing / hyper-parameter choice
    hyper: float
    auc: float


@dataclass
class ProbeReport:
    classifier: str
    fold_aucs: list[float]
    hypers: list[float]
    folds: list[FoldRecord] = field(default_factory=list)
    p_values: dict[str, float] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_aucs))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_aucs))

    def summary(self) -> str:
        lines = [f"classifier: {self.classifier}", f"folds: {len(self.fold_aucs)}",
                 f"mean AUC: {self.mean:.4f} +/- {self.std:.4f}"]
        lines += [f"fold {i}: C={h!r}" for i, h in enumerate(self.hypers)]
        lines += [f"p[{k}]: {v:.6g}" for k, v in sorted(self.p_values.items())]
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path, stem: str = "probe") -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        folds = out / f"{stem}_folds.csv"
        folds.write_text("fold,auc\n" + "".join(f"{i},{a!r}\n" for i, a in enumerate(self.fold_aucs)), encoding="utf-8")
        summary = out / f"{stem}_summary.txt"
        summary.write_text(self.summary(), encoding="utf-8")
        return [folds, summary]


class _Pipeline:
    """Standardise -> optional PCA -> linear classifier, fitted on one index set."""

    def __init__(self, kind: str, hyper: float, pca_dim: Optional[int]):
        self.kind, self.hyper, self.pca_dim = kind, hyper, pca_dim

    def fit(self, X: np.ndarray, y: np.ndarray) -> _Pipeline:
        self.scaler = Standardizer.fit(X)
        Z = self.scaler.transform(X)
        self.pca = None
        if self.pca_dim is not None:
            d = min(self.pca_dim, Z.shape[0] - 1, Z.shape[1])
            self.pca = fit_pca(Z, d)
            Z = self.pca.transform(Z)
        self.model = train_classifier(self.kind, Z, y, self.hyper)
        return self

    def score(self, X: np.ndarray) -> np.ndarray:
        Z = self.scaler.transform(X)
        if self.pca is not None:
            Z = self.pca.transform(Z)
        return self.model.decision_function(Z)


def _select_hyper(X, y, kind, grid, pca_dim, inner_folds, rng) -> float:
    n_min = int(min((y == 0).sum(), (y == 1).sum()))
    k = min(inner_folds, n_min)
    if k < 2 or len(grid) == 1:
        return float(grid[len(grid) // 2])
    folds = stratified_folds(y, k, rng)
    best, best_score = None, -np.inf
    for hyper in grid:
        scores = []
        for test in folds:
            train = np.setdiff1d(np.arange(y.size), test)
            if len(np.unique(y[train])) < 2 or len(np.unique(y[test])) < 2:
                continue
            pipe = _Pipeline(kind, hyper, pca_dim).fit(X[train], y[train])
            scores.append(auc(pipe.score(X[test]), y[test]))
        mean = np.mean(scores) if scores else -np.inf
        if mean > best_score:
            best, best_score = hyper, mean
    return float(best)


def cross_validate(
    embeddings: EmbeddingSet,
    classifier: str = "svm",
    k: int = 5,
    seed: int = 0,
    grid: Sequence[float] = DEFAULT_GRID,
    pca_dim: Optional[int] = DEFAULT_MAX_PCA,
    inner_folds: int = 3,
) -> ProbeReport:
    """Stratified ``k``-fold AUC with the hyper-parameter chosen by an inner
    stratified CV on each training portion. Scaling and PCA are fitted on
    training subjects only (``pca_dim=None`` skips PCA)."""
    if embeddings.labels is None:
        raise ValidationError("probing needs labelled embeddings")
    X, y = embeddings.features, embeddings.labels
    ids = np.array(embeddings.subject_ids)
    rng = stream(seed, "probe_folds")
    inner_rng = stream(seed, "probe_inner")
    folds = stratified_folds(y, k, rng)
    report = ProbeReport(classifier, [], [])
    for test in folds:
        train = np.setdiff1d(np.arange(y.size), test)
        hyper = _select_hyper(X[train], y[train], classifier, grid, pca_dim, inner_folds, inner_rng)
        pipe = _Pipeline(classifier, hyper, pca_dim).fit(X[train], y[train])
        a = auc(pipe.score(X[test]), y[test])
        report.fold_aucs.append(a)
        report.hypers.append(hyper)
        report.folds.append(FoldRecord(ids[train].tolist(), ids[test].tolist(), ids[train].tolist(), hyper, a))
    return report


# --------------------------------------------------------------------------
# importance maps
# --------------------------------------------------------------------------


def importance_map(
    w: np.ndarray, feature_roi: Sequence[int], roi_names: Sequence[str], order: str = "mean_then_abs"
) -> list[tuple[str, float]]:
    """Per-ROI score from linear coefficients, sorted high to low.

    ``mean_then_abs`` takes ``|mean(w over the ROI's features)|``;
    ``abs_then_mean`` takes ``mean(|w|)``.
    """
    w = np.asarray(w, dtype=np.float64).ravel()
    roi = np.asarray(feature_roi, dtype=int).ravel()
    if roi.size != w.size:
        raise ValidationError(f"mapping covers {roi.size} of {w.size} features")
    if roi.size and (roi.min() < 0 or roi.max() >= len(roi_names)):
        raise ValidationError("feature mapped to an unknown ROI")
    if order not in ("mean_then_abs", "abs_then_mean"):
        raise ValidationError(f"unknown order {order!r}")
    scores = []
    for r, name in enumerate(roi_names):
        coef = w[roi == r]
        if coef.size == 0:
            score = 0.0
        elif order == "mean_then_abs":
            score = abs(float(coef.mean()))
        else:
            score = float(np.abs(coef).mean())
        scores.append((name, score))
    ranked = sorted(range(len(scores)), key=lambda i: (-scores[i][1], i))
    return [scores[i] for i in ranked]


def write_importance(path: str | Path, ranked: Sequence[tuple[str, float]]) -> None:
    Path(path).write_text("roi_name,score\n" + "".join(f"{n},{s!r}\n" for n, s in ranked), encoding="utf-8")


# --------------------------------------------------------------------------
# significance tests
# --------------------------------------------------------------------------


def wilcoxon_signed_rank(a, b, alternative: str = "two-sided") -> float:
    """Exact Wilcoxon signed-rank p-value for ``a - b``.

    Zero differences are dropped and tied magnitudes get mid-ranks. The
    null distribution of the positive-rank sum is counted exactly over all
    sign assignments for up to 20 nonzero pairs, with a normal
    approximation beyond that. All-zero differences give p = 1.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size or a.size < 1:
        raise ValidationError("paired samples must have equal, nonzero length")
    if alternative not in ("two-sided", "greater", "less"):
        raise ValidationError(f"unknown alternative {alternative!r}")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        return 1.0
    ranks = _midranks(np.abs(d))
    w_plus = ranks[d > 0].sum()
    if n <= 20:
        # ranks are multiples of 1/2, so doubled ranks are integers
        twice = np.rint(2 * ranks).astype(int)
        total = int(twice.sum())
        counts = np.zeros(total + 1)
        counts[0] = 1.0
        for r in twice:
            counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
        probs = counts / 2.0**n
        w2 = int(round(2 * w_plus))
        upper = float(probs[w2:].sum())
        lower = float(probs[: w2 + 1].sum())
    else:
        mean = n * (n + 1) / 4.0
        _, counts = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - (counts**3 - counts).sum() / 48.0
        z = (w_plus - mean) / math.sqrt(var)
        upper = 0.5 * math.erfc(z / math.sqrt(2))
        lower = 0.5 * math.erfc(-z / math.sqrt(2))
    if alternative == "greater":
        return min(1.0, upper)
    if alternative == "less":
        return min(1.0, lower)
    return min(1.0, 2.0 * min(upper, lower))


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta ``I_x(a, b)``."""
    if not 0.0 <= x <= 1.0:
        raise ValidationError("betainc needs 0 <= x <= 1")
    if x == 0.0 or x == 1.0:
        return x
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """Two-sided tail probability of Student's t with ``df`` degrees of freedom."""
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def paired_t_test(a, b) -> float:
    """Two-sided paired Student's t-test p-value."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size or a.size < 2:
        raise ValidationError("paired t-test needs two equal-length samples with n >= 2")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0:
        raise DegenerateInputError("paired differences have zero variance")
    t = d.mean() / (sd / math.sqrt(d.size))
    return t_two_sided_p(t, d.size - 1)
