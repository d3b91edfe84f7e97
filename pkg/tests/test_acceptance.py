"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Criterion 7 trains nine models (three activations, three seeds, 5000
iterations each) and is by far the heaviest item; it parallelizes over
worker processes pinned to single-threaded BLAS.
"""

import multiprocessing
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from itertools import combinations

import numpy as np

from adastyle import (
    ArchConfig,
    LatentStyleSampler,
    LossWeights,
    ProxyFeatureNet,
    Trainer,
    TranslationModel,
    controllability,
    diversity,
    fid_proxy,
    frechet_distance,
    generate_dataset,
    negative_part_stats,
    translator_param_report,
)
from adastyle import gradcheck
from adastyle.cli import main as cli_main
from adastyle.layers import Activation, rectify_forward, struconv_forward


def _report(criterion, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    print(f"[{status}] criterion {criterion}: {detail}")
    assert passed, f"criterion {criterion}: {detail}"


# -- 1: gradient certification ------------------------------------------------

def test_criterion_01_gradient_certification():
    ops = ["conv2d", "instance_norm", "adain", "affine_style", "relu", "leaky_relu",
           "prelu", "adarelu", "struconv", "sa_relu", "sa_leaky_relu", "sa_prelu",
           "sa_adarelu", "disc_head", "avgpool2", "upsample2", "tanh_out"]
    t0 = time.perf_counter()
    reports = gradcheck.check_all(ops, seeds=20, threshold=1e-5)
    elapsed = time.perf_counter() - t0
    for r in reports:
        print("  " + r.line())
    worst = max(r.max_rel_error for r in reports)
    ok = all(r.passed for r in reports) and elapsed < 120.0
    _report(1, ok, f"{len(reports)} ops, worst rel error {worst:.2e}, {elapsed:.1f}s")


# -- 2: statistics-shift law ---------------------------------------------------

def test_criterion_02_statistics_shift_law():
    worst = 0.0
    for i in range(100):
        rng = np.random.default_rng(1000 + i)
        x = rng.standard_normal(256)
        for a in (0.01, 0.2, 0.5, 1.0):
            mr, vr = negative_part_stats(x, a)
            worst = max(worst,
                        abs(mr - a) / max(abs(a), 1e-300) if a else abs(mr),
                        abs(vr - a * a) / max(a * a, 1e-300) if a else abs(vr))
    _report(2, worst <= 1e-10, f"max relative deviation from (a, a^2): {worst:.2e}")


# -- 3: degenerate equivalences ------------------------------------------------

def test_criterion_03_degenerate_equivalences():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 6, 8, 8)).astype(np.float32)
    w = rng.standard_normal((2, 5)).astype(np.float32)

    def adarelu_with(bias):
        act = Activation("adarelu", 6, style_dim=5, rng=np.random.default_rng(0),
                         dtype=np.float32)
        act.slope_affine.weight.value[...] = 0.0
        act.slope_affine.bias.value[...] = bias
        return act.forward(x, w)[0]

    leaky = rectify_forward(x, np.float32(0.2))[0]
    ident = x
    relu = rectify_forward(x, np.float32(0.0))[0]
    bitwise = (adarelu_with(0.2).tobytes() == leaky.tobytes()
               and adarelu_with(1.0).tobytes() == ident.tobytes()
               and adarelu_with(0.0).tobytes() == relu.tobytes())

    sa_gap = 0.0
    for kind in ("sa_relu", "sa_leaky_relu", "sa_prelu", "sa_adarelu"):
        sa = Activation(kind, 6, style_dim=5, rng=np.random.default_rng(1),
                        dtype=np.float32)
        sa.structural.kernels.value[...] = 0.0
        sa.structural.kernels.value[:, 1, 1] = 1.0
        plain = Activation(kind.removeprefix("sa_"), 6, style_dim=5,
                           rng=np.random.default_rng(1), dtype=np.float32)
        if kind == "sa_prelu":
            plain.learned_slopes.value[...] = sa.learned_slopes.value
        if kind == "sa_adarelu":
            plain.slope_affine.weight.value[...] = sa.slope_affine.weight.value
            plain.slope_affine.bias.value[...] = sa.slope_affine.bias.value
        got = sa.forward(x, w)[0]
        want = plain.forward(x, w)[0]
        sa_gap = max(sa_gap, float(np.abs(got - want).max()))
    _report(3, bitwise and sa_gap <= 1e-6,
            f"bitwise chain {'ok' if bitwise else 'BROKEN'}, SA-vs-plain max gap {sa_gap:.2e}")


# -- 4: StruConv scale invariance ----------------------------------------------

def test_criterion_04_struconv_scale_invariance():
    rng = np.random.default_rng(4)
    # float32-valued doubles make c*k exactly representable for c in {0.5, 2, 10}
    x = rng.standard_normal((2, 5, 9, 9)).astype(np.float32).astype(np.float64)
    k = rng.standard_normal((5, 3, 3)).astype(np.float32).astype(np.float64)
    base = struconv_forward(x, k)[0].tobytes()
    ok = all(struconv_forward(x, c * k)[0].tobytes() == base for c in (0.5, 2.0, 10.0))
    _report(4, ok, "outputs bitwise identical for kernel banks k, 0.5k, 2k, 10k")


# -- 5: AdaIN output statistics ------------------------------------------------

def test_criterion_05_adain_statistics():
    from adastyle.layers import adain_forward
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        x = rng.standard_normal((3, 4, 16, 16))
        mu = rng.uniform(0.5, 2.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4))
        sigma = rng.uniform(0.5, 2.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4))
        out, _ = adain_forward(x, mu, sigma)
        got_mu = out.mean(axis=(2, 3))
        got_var = out.var(axis=(2, 3))
        worst = max(worst,
                    float(np.abs((got_mu - mu) / mu).max()),
                    float(np.abs((got_var - sigma ** 2) / sigma ** 2).max()))
    _report(5, worst <= 1e-4, f"worst relative stats error {worst:.2e}")


# -- 6: style control through the activation alone ------------------------------

def test_criterion_06_in_only_ablation_mechanism():
    rng = np.random.default_rng(6)
    x = rng.uniform(-1, 1, (2, 3, 32, 32)).astype(np.float32)
    w1 = rng.standard_normal((2, 16)).astype(np.float32)
    w2 = rng.standard_normal((2, 16)).astype(np.float32)

    def build(activation):
        cfg = ArchConfig(image_size=32, base_channels=8, down_blocks=2,
                         translator_blocks=4, activation=activation,
                         adain_mode="in_only")
        return TranslationModel(cfg, seed=66)

    passive = build("leaky_relu")
    style_free = (passive.translate(x, w1).tobytes()
                  == passive.translate(x, w2).tobytes())
    active = build("adarelu")
    gap = float(np.abs(active.translate(x, w1) - active.translate(x, w2)).mean())
    _report(6, style_free and gap > 0,
            f"in_only+leaky bitwise style-free; in_only+adarelu mean gap {gap:.2e}")


# -- 7: trend reproduction -----------------------------------------------------

TREND_ACTIVATIONS = ("leaky_relu", "adarelu", "sa_adarelu")
TREND_SEEDS = (101, 102, 103)
TREND_ITERATIONS = 5000
TREND_DATA_SEED = 7
TREND_DATA_COUNT = 512


def _trend_worker(job):
    activation, seed = job
    ds = generate_dataset(TREND_DATA_SEED, TREND_DATA_COUNT)
    cfg = ArchConfig(image_size=32, base_channels=8, down_blocks=2,
                     translator_blocks=6, style_dim=16, latent_dim=8,
                     activation=activation)
    model = TranslationModel(cfg, seed=seed)
    trainer = Trainer(model, ds, LossWeights(), iterations=TREND_ITERATIONS,
                      batch_size=4, lr=1e-4, seed=seed)
    trainer.run()
    net = ProxyFeatureNet(seed=0)
    ctrl, div = [], []
    for src in (0, 1):
        dst = 1 - src
        pool = ds.images[ds.test_indices_for(src)]
        ctrl.append(controllability(model, pool[:32],
                                    LatentStyleSampler(model, dst, seed=123), net))
        div.append(diversity(model, pool[:8],
                             LatentStyleSampler(model, dst, seed=123), net))
    return activation, seed, float(np.mean(ctrl)), float(np.mean(div))


def test_criterion_07_trend_reproduction():
    jobs = [(act, seed) for act in TREND_ACTIVATIONS for seed in TREND_SEEDS]
    saved = {k: os.environ.get(k) for k in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS")}
    os.environ["OPENBLAS_NUM_THREADS"] = "1"
    os.environ["OMP_NUM_THREADS"] = "1"
    t0 = time.perf_counter()
    try:
        workers = max(2, min(8, os.cpu_count() or 2))
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
            results = list(ex.map(_trend_worker, jobs))
    finally:
        for k, v in saved.items():
            if v is None:
                os.environ.pop(k, None)
            else:
                os.environ[k] = v
    elapsed = (time.perf_counter() - t0) / 60
    ctrl = {act: [] for act in TREND_ACTIVATIONS}
    div = {act: [] for act in TREND_ACTIVATIONS}
    for act, seed, c, d in results:
        ctrl[act].append(c)
        div[act].append(d)
        print(f"  {act:<12} seed {seed}: controllability {c:.5f}  diversity {d:.5f}")
    med_ctrl = {act: statistics.median(v) for act, v in ctrl.items()}
    med_div = {act: statistics.median(v) for act, v in div.items()}
    print(f"  medians: ctrl {med_ctrl}  div {med_div}  ({elapsed:.0f} min)")
    ok = (med_ctrl["adarelu"] < med_ctrl["leaky_relu"]
          and med_ctrl["sa_adarelu"] <= med_ctrl["adarelu"]
          and med_div["adarelu"] > med_div["leaky_relu"])
    _report(7, ok,
            f"controllability medians adarelu {med_ctrl['adarelu']:.5f} < "
            f"leaky {med_ctrl['leaky_relu']:.5f}, sa_adarelu "
            f"{med_ctrl['sa_adarelu']:.5f} <= adarelu; diversity adarelu "
            f"{med_div['adarelu']:.5f} > leaky {med_div['leaky_relu']:.5f}")


# -- 8: parameter overhead audit -------------------------------------------------

def test_criterion_08_parameter_overhead():
    model = TranslationModel(ArchConfig(activation="sa_adarelu"), seed=0)
    structural, total, frac = translator_param_report(model)
    print(f"  translator params: {total}, structural kernels: {structural} "
          f"({100 * frac:.3f}%)")
    _report(8, 0 < frac < 0.01,
            f"structural overhead {100 * frac:.3f}% of the translator (< 1%)")


# -- 9: training determinism -----------------------------------------------------

def test_criterion_09_training_determinism(tmp_path):
    data_dir = tmp_path / "data"
    assert cli_main(["gen-data", "--seed", "9", "--count", "48",
                     "--out", str(data_dir)]) == 0
    cfg_path = tmp_path / "run.cfg"
    assert cli_main(["dump-config", "--out", str(cfg_path),
                     "--set", "base_channels=4", "--set", "translator_blocks=2",
                     "--set", "style_dim=4", "--set", "latent_dim=3",
                     "--set", "iterations=10", "--set", "batch_size=3",
                     "--set", "log_every=2", "--set", "seed=13"]) == 0
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / f"run_{run}"
        assert cli_main(["train", "--config", str(cfg_path), "--data", str(data_dir),
                         "--out", str(out)]) == 0
        outputs.append(((out / "checkpoint_final.ckpt").read_bytes(),
                        (out / "losses.csv").read_bytes()))
    ok = outputs[0] == outputs[1]
    _report(9, ok, "two same-seed runs produced byte-identical checkpoints and CSVs")


# -- 10: metric oracles ------------------------------------------------------------

def _oracle_diversity(model, sources, sampler, net, codes=10):
    totals = []
    for k in range(sources.shape[0]):
        w = sampler(codes)
        outs = model.translate(np.repeat(sources[k:k + 1], codes, axis=0), w)
        feats = net.features(outs)
        dists = [float(np.abs(feats[i] - feats[j]).mean())
                 for i, j in combinations(range(codes), 2)]
        totals.append(sum(dists) / len(dists))
    return sum(totals) / len(totals)


def _oracle_controllability(model, sources, sampler, net, rounds=10):
    means = []
    for _ in range(rounds):
        w = sampler(1)
        outs = model.translate(sources, np.repeat(w, sources.shape[0], axis=0))
        feats = net.features(outs)
        dists = [float(np.abs(feats[i] - feats[i + 1]).mean())
                 for i in range(0, sources.shape[0], 2)]
        means.append(sum(dists) / len(dists))
    return sum(means) / len(means)


def test_criterion_10_metric_oracles():
    net = ProxyFeatureNet(seed=0)
    cfg = ArchConfig(image_size=16, base_channels=4, down_blocks=2,
                     translator_blocks=2, style_dim=4, latent_dim=3)
    worst = 0.0
    for seed in range(10):
        model = TranslationModel(cfg, seed=seed)
        rng = np.random.default_rng(500 + seed)
        div_sources = rng.uniform(-1, 1, (2, 3, 16, 16)).astype(np.float32)
        fast = diversity(model, div_sources, LatentStyleSampler(model, 0, seed=9), net)
        slow = _oracle_diversity(model, div_sources,
                                 LatentStyleSampler(model, 0, seed=9), net)
        worst = max(worst, abs(fast - slow))
        ctrl_sources = rng.uniform(-1, 1, (32, 3, 16, 16)).astype(np.float32)
        fast = controllability(model, ctrl_sources,
                               LatentStyleSampler(model, 1, seed=9), net)
        slow = _oracle_controllability(model, ctrl_sources,
                                       LatentStyleSampler(model, 1, seed=9), net)
        worst = max(worst, abs(fast - slow))

    rng = np.random.default_rng(77)
    imgs = rng.uniform(-1, 1, (10, 3, 16, 16)).astype(np.float32)
    fid_same = fid_proxy(imgs, imgs, net)
    d = 9
    closed_gap = abs(frechet_distance(np.zeros(d), np.eye(d),
                                      np.ones(d), np.eye(d)) - d)
    ok = worst <= 1e-12 and fid_same <= 1e-6 and closed_gap <= 1e-8
    _report(10, ok,
            f"oracle gap {worst:.2e} (<=1e-12), identical-set FID {fid_same:.2e} "
            f"(<=1e-6), closed-form gap {closed_gap:.2e} (<=1e-8)")
