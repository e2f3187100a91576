"""End-to-end acceptance criteria, one test per criterion.

Each test prints a ``PASS``/``FAIL`` line as it finishes and the lines are
repeated in the terminal summary. Run with ``pytest tests/test_acceptance.py -v``.
"""

import dataclasses
import itertools
import math
import time

import numpy as np
import pytest

from metsk import cli
from metsk import connectome as cn
from metsk import metatrain as mt
from metsk import numerics as nm
from metsk import objectives as obj
from metsk import probe as pb
from metsk import stgcn as sg
from metsk import transport as tp

pytestmark = pytest.mark.acceptance

RESULTS: dict[int, str] = {}


def report(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line


def same(a, b, keys=None):
    keys = a.keys() if keys is None else keys
    return all(a[k].tobytes() == b[k].tobytes() for k in keys)


def keys_in(params, *parts):
    return [k for k in params if sg.partition_of(k) in parts]


# --------------------------------------------------------------------------
# shared toy setup for the gradient and partition criteria
# --------------------------------------------------------------------------

TOY = dict(extractor_channels=[2, 2, 2], head_channels=2, embed_dim=3, kernel=3, window_length=8, batch_size=2)


def toy_batches(cfg, seed=0, n_rois=4):
    src = cn.synth_generate(cn.GeneratorSpec(n_rois=n_rois, n_timepoints=16, class_counts=[2], labeled=False,
                                             rho=0.5, global_share=0.0, id_prefix="src"), seed)
    tgt = cn.synth_generate(cn.GeneratorSpec(n_rois=n_rois, n_timepoints=16, class_counts=[2, 2], rho=0.7,
                                             global_share=0.0, id_prefix="tgt"), seed + 1)
    cache = sg.GraphCache()
    r = np.random.default_rng(seed)
    tf = mt.BatchFactory(tgt, cfg.window_length, cache)
    source = mt.BatchFactory(src, cfg.window_length, cache).views(np.arange(2), r)
    train = tf.single(np.array([0, 2]), r)
    val = tf.single(np.array([1, 3]), r)
    return source, train, val


def live_params(cfg, seed):
    """Initial parameters with positive biases and doubled weights, so no
    ReLU layer is dead and every leaf's gradient is well above round-off."""
    params = sg.init_params(cfg.model, np.random.default_rng(seed))
    return {k: np.abs(v) + 0.1 if k.endswith("/b") else 2.0 * v for k, v in params.items()}


def test_criterion_01_gradient_fidelity():
    started = time.perf_counter()
    cfg = mt.TrainConfig(**TOY, alpha=0.5, inner_steps=2, lam=2.0, tau=0.5)
    source, train, val = toy_batches(cfg)
    params = live_params(cfg, 3)
    wrt = [sg.EXTRACTOR, sg.SOURCE_HEAD]
    theta0 = {k: params[k] for k in keys_in(params, sg.TARGET_HEAD)}
    theta_k, _ = mt.inner_adapt(params, theta0, train, cfg)
    objectives = {
        "first-order": mt.outer_objective({**params, **theta_k}, cfg, source, val)[0],
        "second-order": mt.outer_objective(params, cfg, source, val, second_order_batch=train, theta0=theta0)[0],
    }
    worst = {}
    for name, fn in objectives.items():
        point = {**params, **theta_k} if name == "first-order" else params
        analytic = nm.grad(fn, point, wrt)
        numeric = nm.numerical_grad(fn, point, wrt, h=1e-5)
        worst[name] = max(nm.relative_error(analytic[k], numeric[k]) for k in nm.select(point, wrt))
    elapsed = time.perf_counter() - started
    ok = max(worst.values()) < 1e-4 and elapsed < 30
    report(1, ok, f"max rel err first-order {worst['first-order']:.2e}, second-order {worst['second-order']:.2e} "
                  f"(< 1e-4), {elapsed:.1f}s (< 30s)")


def test_criterion_02_graph_normalisation():
    rng = np.random.default_rng(0)
    zeros_ok = all(np.array_equal(cn.normalize_adjacency(np.zeros((p, p))), np.eye(p)) for p in (1, 2, 5, 116))
    triple_err = conv_err = 0.0
    for _ in range(50):
        p = int(rng.integers(2, 12))
        x = rng.standard_normal((p, 40))
        a = cn.pearson_adjacency(x)
        a_tilde = a + np.eye(p)
        d = np.diag(a_tilde.sum(axis=1) ** -0.5)
        ahat = cn.normalize_adjacency(a)
        triple_err = max(triple_err, np.abs(ahat - d @ a_tilde @ d).max())
        c_in, c_out, length = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 9))
        h = rng.standard_normal((2, p, length, c_in))
        w = rng.standard_normal((c_in, c_out))
        fast = sg.spatial_graph_conv(h, np.stack([ahat, ahat]), w).data
        brute = np.zeros((2, p, length, c_out))
        for b, t, i, j, ci, co in itertools.product(range(2), range(length), range(p), range(p), range(c_in),
                                                    range(c_out)):
            brute[b, i, t, co] += ahat[i, j] * h[b, j, t, ci] * w[ci, co]
        conv_err = max(conv_err, np.abs(fast - brute).max())
    ok = zeros_ok and triple_err <= 1e-12 and conv_err <= 1e-12
    report(2, ok, f"normalize(0)=I {zeros_ok}, triple product err {triple_err:.1e}, "
                  f"spatial conv err {conv_err:.1e} (<= 1e-12)")


def test_criterion_03_contrastive_identities():
    rng = np.random.default_rng(0)
    same_vec = np.tile(rng.standard_normal(5), (2, 1))
    zero_loss = obj.contrastive_loss(same_vec, same_vec, 1.0).item()
    scale_err = 0.0
    for _ in range(20):
        v1, v2 = rng.standard_normal((6, 4)), rng.standard_normal((6, 4))
        base = obj.contrastive_loss(v1, v2, 0.5).item()
        c = float(rng.uniform(0.01, 100))
        scale_err = max(scale_err, abs(obj.contrastive_loss(c * v1, c * v2, 0.5).item() - base))
    params = {"a": rng.standard_normal((4, 8)), "b": rng.standard_normal((4, 8))}
    losses = []
    for _ in range(200):
        value, g = nm.value_and_grad(lambda t: obj.contrastive_loss(t["a"], t["b"], 1.0), params)
        losses.append(value)
        params = {k: params[k] - 0.1 * g[k] for k in params}
    decreasing = all(b < a for a, b in zip(losses, losses[1:]))
    ok = abs(zero_loss) <= 1e-12 and scale_err <= 1e-9 and decreasing
    report(3, ok, f"identical pair loss {zero_loss:.1e}, rescaling err {scale_err:.1e}, "
                  f"200 steps strictly decreasing {decreasing} ({losses[0]:.3f} -> {losses[-1]:.3f})")


def test_criterion_04_bilevel_discipline():
    cfg = mt.TrainConfig(**TOY, alpha=0.1, inner_steps=3, beta=0.01, lam=2.0, tau=0.5)
    source, train, val = toy_batches(cfg)
    params = live_params(cfg, 3)
    frozen = nm.tree_copy(params)
    theta0 = {k: params[k] for k in keys_in(params, sg.TARGET_HEAD)}
    theta, _ = mt.inner_adapt(params, theta0, train, cfg)
    inner_ok = same(params, frozen) and set(theta) == set(theta0) and not same(theta, theta0)

    new, _, _ = mt.outer_step(params, mt.AdamState(), cfg, source, val)
    outer_ok = same(new, params, keys_in(params, sg.TARGET_HEAD)) and all(
        not np.array_equal(new[k], params[k]) for k in keys_in(params, sg.EXTRACTOR, sg.SOURCE_HEAD))

    no_meta = dataclasses.replace(cfg, lam=0.0)
    meta, _, _ = mt.outer_step(params, mt.AdamState(), no_meta, source, val)
    ssl, _, _ = mt.outer_step(params, mt.AdamState(), no_meta, source, None)
    lam_ok = same(meta, ssl)

    still, _ = mt.inner_adapt(params, theta0, train, dataclasses.replace(cfg, alpha=0.0))
    alpha_ok = same(still, theta0)
    report(4, inner_ok and outer_ok and lam_ok and alpha_ok,
           f"inner touches only target head {inner_ok}, outer only extractor+source head {outer_ok}, "
           f"lambda=0 equals SSL step {lam_ok}, alpha=0 no-op {alpha_ok}")


def test_criterion_05_convex_inner_loop():
    cfg = mt.TrainConfig(**{**TOY, "batch_size": 8}, alpha=0.01, inner_steps=25)
    outcomes = []
    for seed in range(10):
        tgt = cn.synth_generate(cn.GeneratorSpec(n_rois=4, n_timepoints=16, class_counts=[4, 4], rho=0.7,
                                                 global_share=0.0), seed)
        batch = mt.BatchFactory(tgt, cfg.window_length, sg.GraphCache()).single(
            np.arange(8), np.random.default_rng(seed))
        params = sg.init_params(cfg.model, np.random.default_rng(seed))
        theta0 = {k: params[k] for k in keys_in(params, sg.TARGET_HEAD)}
        initial = mt.target_loss(params, batch).item()
        theta, _ = mt.inner_adapt(params, theta0, batch, cfg)
        final = mt.target_loss({**params, **theta}, batch).item()
        outcomes.append(final < initial)
    report(5, all(outcomes), f"final < initial target CE on {sum(outcomes)}/10 seeds (k=25, alpha=0.01)")


# --------------------------------------------------------------------------
# synthetic end-to-end runs
# --------------------------------------------------------------------------

N_ROIS, N_TIME, WINDOW = 32, 96, 64
SYNTH_TRAIN = dict(alpha=0.1, beta=0.01, tau=0.5, lam=1.0, extractor_channels=[8, 8, 8], head_channels=8,
                   kernel=5, window_length=WINDOW, batch_size=32, warmup_epochs=5, total_epochs=10)
CLINICAL_AR = [0.35, 0.65]


def synthetic_domains(seed: int) -> tuple[cn.Dataset, cn.Dataset, cn.Dataset]:
    """Unlabelled source, labelled target and a shifted labelled clinical domain.

    Clinical classes differ in temporal smoothness on a block layout that
    neither source nor target uses, so raw connectivity carries little of
    the label.
    """
    common = dict(n_rois=N_ROIS, n_timepoints=N_TIME, global_share=0.4)
    source = cn.GeneratorSpec(**common, class_counts=[200], labeled=False, rho=0.5, rho_jitter=0.3, ar=0.5,
                              ar_jitter=0.4, shuffle_rois=True, id_prefix="src")
    target = cn.GeneratorSpec(**common, class_counts=[30, 30], rho=0.6, ar=0.5, ar_jitter=0.3, id_prefix="tgt")
    shifted = [list(range(16, 24)), list(range(24, 32))]
    clinical = cn.GeneratorSpec(**common, class_counts=[20, 20], rho=0.6, ar=CLINICAL_AR,
                                class_blocks=[shifted, shifted], shuffle_rois=True, id_prefix="cli")
    return (cn.synth_generate(source, 1000 * seed), cn.synth_generate(target, 1000 * seed + 1),
            cn.synth_generate(clinical, 1000 * seed + 2))


_RUNS: dict[int, dict] = {}


def synthetic_run(seed: int) -> dict:
    """Probe reports for MeTSK, MeL and raw connectivity on one seed, cached."""
    if seed in _RUNS:
        return _RUNS[seed]
    source, target, clinical = synthetic_domains(seed)
    out = {"baseline": pb.cross_validate(pb.connectivity_embeddings(clinical), "svm", seed=seed)}
    started = time.perf_counter()
    cfg = mt.TrainConfig(**SYNTH_TRAIN, seed=seed)
    params, log = mt.train(source, target, cfg)
    out["train_seconds"] = time.perf_counter() - started
    out["metsk"] = pb.cross_validate(pb.extract_embeddings(params, clinical, WINDOW, seed=seed), "svm", seed=seed)
    # same number of meta updates as the MeTSK meta phase
    meta_updates = sum(1 for row in log.records if row["phase"] == "meta")
    mel_cfg = dataclasses.replace(cfg, mode="mel", outer_iterations=meta_updates)
    params, _ = mt.train(None, target, mel_cfg)
    out["mel"] = pb.cross_validate(pb.extract_embeddings(params, clinical, WINDOW, seed=seed), "svm", seed=seed)
    _RUNS[seed] = out
    return out


def test_criterion_06_synthetic_end_to_end():
    run = synthetic_run(0)
    metsk, base = run["metsk"], run["baseline"]
    matched = [f.test_ids for f in metsk.folds] == [f.test_ids for f in base.folds]
    ok = metsk.mean >= 0.85 and metsk.mean >= base.mean and matched and run["train_seconds"] < 600
    report(6, ok, f"MeTSK probe AUC {metsk.mean:.3f} (>= 0.85), connectivity {base.mean:.3f} on matched folds "
                  f"{matched}, training {run['train_seconds']:.0f}s (< 600s)")


def test_criterion_07_ablation_ordering():
    runs = [synthetic_run(seed) for seed in range(5)]
    metsk = [r["metsk"].mean for r in runs]
    mel = [r["mel"].mean for r in runs]
    base = [r["baseline"].mean for r in runs]
    p_top = pb.wilcoxon_signed_rank(metsk, mel, "greater")
    p_low = pb.wilcoxon_signed_rank(mel, base, "greater")
    ordered = np.mean(metsk) >= np.mean(mel) >= np.mean(base)
    ok = ordered and p_top < 0.1 and p_low < 0.1
    report(7, ok, f"mean AUC MeTSK {np.mean(metsk):.3f} >= MeL {np.mean(mel):.3f} >= connectivity "
                  f"{np.mean(base):.3f}; Wilcoxon p {p_top:.4f}, {p_low:.4f} (< 0.1)")


# --------------------------------------------------------------------------
# probing, transport and statistics
# --------------------------------------------------------------------------


def brute_auc(scores, labels):
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (pos.size * neg.size)


def test_criterion_08_auc_oracle():
    rng = np.random.default_rng(0)
    exact = invariant = 0
    for _ in range(1000):
        n = int(rng.integers(2, 30))
        labels = rng.permutation(np.r_[[0, 1], rng.integers(0, 2, n - 2)])
        scores = rng.integers(0, 6, n).astype(float) if rng.random() < 0.5 else rng.standard_normal(n)
        value = pb.auc(scores, labels)
        exact += value == brute_auc(scores, labels)
        invariant += pb.auc(np.exp(scores) * 3 + 1, labels) == value == pb.auc(scores ** 3, labels)
    report(8, exact == invariant == 1000,
           f"rank AUC == pair counting on {exact}/1000 sets, monotone-invariant on {invariant}/1000")


def random_histogram(r, bins):
    mass = r.random(bins) + 0.01
    perm = r.permutation(bins)
    return tp.FeatureHistogram(np.linspace(0, 1, bins + 1), (mass / mass.sum())[perm], (r.random(bins) * 10)[perm])


def test_criterion_09_transport():
    r = np.random.default_rng(0)
    gap = 0.0
    for _ in range(500):
        a, b = random_histogram(r, int(r.integers(1, 16))), random_histogram(r, int(r.integers(1, 16)))
        gap = max(gap, abs(tp.emd_closed_form(a, b) - tp.emd_simplex(a, b)))
    x, y = r.standard_normal(200), r.standard_normal(150) + 0.5
    identity = tp.domain_similarity(x, x)[0] == 1.0
    symmetric = tp.domain_similarity(x, y) == tp.domain_similarity(y, x)
    point = abs(tp.domain_similarity([0.0], [1.0], gamma=0.01)[0] - math.exp(-0.01))
    ok = gap <= 1e-9 and identity and symmetric and point <= 1e-12
    report(9, ok, f"closed form vs simplex max gap {gap:.1e} on 500 pairs, DS(X,X)=1 {identity}, "
                  f"symmetric {symmetric}, point mass err {point:.1e}")


T_TABLE_DF9 = {0.10: 1.833, 0.05: 2.262, 0.02: 2.821, 0.01: 3.250}


def test_criterion_10_statistics():
    w = pb.wilcoxon_signed_rank([1.5, 2.5, 3.5, 4.5, 5.5], [1.0] * 5)
    worst = 0.0
    for alpha, t_crit in T_TABLE_DF9.items():
        d = np.array([1.0, -1.0] * 5)
        d = d / d.std(ddof=1) + t_crit / math.sqrt(10)
        worst = max(worst, abs(pb.paired_t_test(d, np.zeros(10)) - alpha))
    ok = w == 0.0625 and worst <= 1e-3
    report(10, ok, f"Wilcoxon n=5 all positive p={w}, t-table (df=9) max p error {worst:.1e}")


# --------------------------------------------------------------------------
# CLI reproducibility
# --------------------------------------------------------------------------


def test_criterion_11_cli_reproducibility(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text('{"n_rois": 6, "n_timepoints": 24, "class_counts": [6, 6], "rho": 0.7}')
    src_spec = tmp_path / "src_spec.json"
    src_spec.write_text('{"n_rois": 6, "n_timepoints": 24, "class_counts": [8], "labeled": false}')
    train_flags = ["--channels", "2,2,2", "--head-channels", "2", "--embed-dim", "3", "--kernel", "3",
                   "--window", "8", "--batch-size", "4", "--inner-steps", "2", "--epochs", "2", "--warmup", "1"]
    outputs = []
    for rep in ("a", "b"):
        root = tmp_path / rep
        codes = [
            cli.main(["synth", "--spec", str(src_spec), "--out", str(root / "src"), "--seed", "5"]),
            cli.main(["synth", "--spec", str(spec), "--out", str(root / "tgt"), "--seed", "6"]),
            cli.main(["train", "--source", str(root / "src"), "--target", str(root / "tgt"),
                      "--out", str(root / "run"), *train_flags]),
        ]
        ckpt = str(root / "run" / cli.CHECKPOINT)
        codes += [
            cli.main(["probe", "--checkpoint", ckpt, "--dataset", str(root / "tgt"), "--folds", "3",
                      "--out", str(root / "probe")]),
            cli.main(["similarity", "--checkpoint", ckpt, "--dataset-a", str(root / "src"),
                      "--dataset-b", str(root / "tgt"), "--out", str(root / "ds.txt")]),
            cli.main(["importance", "--checkpoint", ckpt, "--dataset", str(root / "tgt"),
                      "--out", str(root / "importance.csv")]),
        ]
        assert codes == [0] * 6
        files = {}
        for path in sorted(root.rglob("*")):
            # dataset paths and wall-clock timings in run manifests differ by construction
            if path.is_file() and path.name != cli.RUN_MANIFEST:
                files[str(path.relative_to(root))] = path.read_bytes()
        outputs.append(files)
    identical = outputs[0] == outputs[1]
    report(11, identical, f"{len(outputs[0])} output files (datasets, checkpoint, log, reports) byte-identical "
                          f"across reruns: {identical}")
