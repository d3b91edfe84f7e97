"""Diversity, controllability, and visual-quality metrics over a frozen
random feature extractor, plus the negative-part statistics analyzer.

A note on the feature extractor: at desk scale no pretrained perceptual
network is available, so distances are measured in the feature space of a
small fixed-seed random conv net (four conv+pool stages, channel-averaged
activations concatenated across stages).  Absolute values are therefore
not comparable to published perceptual scores; only orderings and trends
are meaningful.  The substitution is deliberate and recorded in the docs.

Procedures:

* diversity: each source image is translated with 10 different style
  codes; the mean feature distance over all 45 unordered output pairs is
  averaged over sources.  Higher = more diverse.
* controllability: 32 different sources are translated with one shared
  style code, paired (1,2), (3,4), ... in dataset order into 16 pairs;
  repeated for 10 style codes and averaged.  Lower = the style code
  dictates the result more strongly.
* visual quality: Frechet distance between Gaussians fit to the feature
  vectors of a translated set and a real set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import layers
from .tensor import SINGLE

DIVERSITY_CODES = 10
CONTROLLABILITY_SOURCES = 32
CONTROLLABILITY_ROUNDS = 10


class ProxyFeatureNet:
    """Frozen random conv features standing in for a pretrained perceptual
    net.  Same seed, same input -> bitwise-identical features, across runs."""

    def __init__(self, seed=0, stage_channels=(16, 32, 64, 64), dtype=SINGLE):
        self.seed = seed
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
        self.stages = []
        cin = 3
        for cout in stage_channels:
            std = np.sqrt(2.0 / (cin * 9))
            self.stages.append(rng.normal(0.0, std, (cout, cin, 3, 3)).astype(dtype))
            cin = cout
        self.feature_dim = int(sum(stage_channels))

    def features(self, images):
        """(n, d) feature matrix: channel-averaged activations of every stage."""
        x = np.asarray(images, dtype=np.float32)
        if x.ndim == 3:
            x = x[None]
        feats = []
        h = x
        for weight in self.stages:
            h, _ = layers.conv2d_forward(h, weight, None, stride=1, padding=1)
            h, _ = layers.rectify_forward(h, 0.2)
            h, _ = layers.avgpool2_forward(h)
            feats.append(h.mean(axis=(2, 3)))
        return np.concatenate(feats, axis=1).astype(np.float64)


def feature_distance(a, b, net: ProxyFeatureNet):
    """Mean absolute difference of proxy feature vectors of two images."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"image shape mismatch: {a.shape} vs {b.shape}")
    fa = net.features(a)[0]
    fb = net.features(b)[0]
    return float(np.abs(fa - fb).mean())


def _pairwise_mean_distance(feats):
    # mean |fi - fj| over all unordered pairs, fixed index order
    total = 0.0
    count = 0
    for i, j in combinations(range(feats.shape[0]), 2):
        total += float(np.abs(feats[i] - feats[j]).mean())
        count += 1
    return total / count


def diversity(model, sources, style_sampler, net: ProxyFeatureNet,
              codes_per_source=DIVERSITY_CODES):
    """Mean pairwise output distance under different style codes.

    For each source image, ``codes_per_source`` style codes are drawn from
    the sampler, the source is translated with each, and the mean feature
    distance over all unordered output pairs is computed; the result is
    averaged over sources.
    """
    sources = np.asarray(sources)
    if sources.ndim == 3:
        sources = sources[None]
    if sources.shape[0] == 0:
        raise ValueError("empty source list")
    per_source = []
    for k in range(sources.shape[0]):
        w = style_sampler(codes_per_source)
        batch = np.repeat(sources[k:k + 1], codes_per_source, axis=0)
        outs = model.translate(batch, w)
        per_source.append(_pairwise_mean_distance(net.features(outs)))
    return float(np.mean(per_source))


def controllability(model, sources, style_sampler, net: ProxyFeatureNet,
                    rounds=CONTROLLABILITY_ROUNDS):
    """Mean distance between outputs of different sources under one shared
    style code; 16 fixed consecutive pairs per round, averaged over rounds."""
    sources = np.asarray(sources)
    if sources.shape[0] != CONTROLLABILITY_SOURCES:
        raise ValueError(f"controllability needs exactly {CONTROLLABILITY_SOURCES} "
                         f"source images, got {sources.shape[0]}")
    per_round = []
    for _ in range(rounds):
        w = style_sampler(1)
        batch_w = np.repeat(w, sources.shape[0], axis=0)
        outs = model.translate(sources, batch_w)
        feats = net.features(outs)
        dists = [float(np.abs(feats[i] - feats[i + 1]).mean())
                 for i in range(0, CONTROLLABILITY_SOURCES, 2)]
        per_round.append(float(np.mean(dists)))
    return float(np.mean(per_round))


def frechet_distance(mu_a, cov_a, mu_b, cov_b):
    """Frechet distance between two Gaussians.

    ||mu_a - mu_b||^2 + tr(cov_a + cov_b - 2 (cov_a cov_b)^(1/2)), with the
    matrix square root evaluated through symmetric eigendecompositions and
    negative eigenvalues clamped to zero.
    """
    mu_a = np.asarray(mu_a, dtype=np.float64)
    mu_b = np.asarray(mu_b, dtype=np.float64)
    cov_a = np.atleast_2d(np.asarray(cov_a, dtype=np.float64))
    cov_b = np.atleast_2d(np.asarray(cov_b, dtype=np.float64))
    diff = float(((mu_a - mu_b) ** 2).sum())
    # tr sqrt(cov_a cov_b) == tr sqrt(S cov_b S) with S = sqrt(cov_a), which is symmetric
    wa, va = np.linalg.eigh((cov_a + cov_a.T) / 2)
    s = (va * np.sqrt(np.clip(wa, 0, None))) @ va.T
    m = s @ cov_b @ s
    wm = np.linalg.eigvalsh((m + m.T) / 2)
    tr_sqrt = float(np.sqrt(np.clip(wm, 0, None)).sum())
    val = diff + float(np.trace(cov_a) + np.trace(cov_b)) - 2.0 * tr_sqrt
    return max(val, 0.0)


def fid_proxy(set_a, set_b, net: ProxyFeatureNet):
    """Frechet distance between Gaussians fit to proxy features of two image
    sets (sample covariance, so each set needs at least 2 images)."""
    a = np.asarray(set_a)
    b = np.asarray(set_b)
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("fid_proxy needs at least 2 images per set")
    fa = net.features(a)
    fb = net.features(b)
    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    cov_a = np.cov(fa, rowvar=False)
    cov_b = np.cov(fb, rowvar=False)
    return frechet_distance(mu_a, cov_a, mu_b, cov_b)


def negative_part_stats(x, slope):
    """Shift of the negative-part statistics under a leaky rectifier.

    Returns (mean_ratio, var_ratio): the mean and population variance of
    the values at negative positions after applying the rectifier with the
    given slope, divided by the same statistics before.  Expected (a, a^2).
    """
    vals = np.asarray(x, dtype=np.float64).reshape(-1)
    neg = vals[vals < 0]
    if neg.size < 2:
        raise ValueError(f"need at least 2 negative values, got {neg.size}")
    after = slope * neg
    mean_ratio = after.mean() / neg.mean()
    var_ratio = after.var() / neg.var()
    return float(mean_ratio), float(var_ratio)


# ---------------------------------------------------------------------------
# style samplers and checkpoint-level evaluation
# ---------------------------------------------------------------------------

class LatentStyleSampler:
    """Latent-guided codes: w = F(z), z drawn from a seeded Gaussian."""

    def __init__(self, model, domain, seed=0):
        self.model = model
        self.domain = domain
        self.rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(11, domain)))

    def __call__(self, count):
        z = self.rng.standard_normal((count, self.model.cfg.latent_dim), dtype=np.float32)
        return self.model.map_latent(z.astype(self.model.dtype), self.domain)


class ReferenceStyleSampler:
    """Reference-guided codes: w = E(x_ref) for randomly drawn references."""

    def __init__(self, model, domain, reference_images, seed=0):
        if len(reference_images) == 0:
            raise ValueError("no reference images")
        self.model = model
        self.domain = domain
        self.references = np.asarray(reference_images)
        self.rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(13, domain)))

    def __call__(self, count):
        idx = self.rng.integers(0, self.references.shape[0], size=count)
        return self.model.encode_style(self.references[idx], self.domain)


@dataclass
class MetricsReport:
    """Per-(source domain, target domain) metric values for one guidance mode."""

    mode: str
    rows: list = field(default_factory=list)  # (metric, src, dst, value)

    def add(self, metric, src, dst, value):
        self.rows.append((metric, int(src), int(dst), float(value)))

    def value(self, metric, src, dst):
        for m, s, d, v in self.rows:
            if (m, s, d) == (metric, src, dst):
                return v
        raise KeyError((metric, src, dst))

    def mean(self, metric, cross_only=True):
        vals = [v for m, s, d, v in self.rows
                if m == metric and (s != d if cross_only else True)]
        return float(np.mean(vals))

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("metric,source_domain,target_domain,mode,value\n")
            for metric, s, d, v in self.rows:
                f.write(f"{metric},{s},{d},{self.mode},{v:.8e}\n")


def style_sampler_for(model, dataset, mode, domain, seed):
    if mode == "latent":
        return LatentStyleSampler(model, domain, seed)
    refs = dataset.images[dataset.test_indices_for(domain)]
    return ReferenceStyleSampler(model, domain, refs, seed)


def evaluate_model(model, dataset, mode="latent", seed=0, net=None,
                   diversity_sources=8):
    """Diversity, controllability, and FID proxy for every ordered domain
    pair (cross and internal), computed on the test split."""
    if mode not in ("latent", "ref"):
        raise ValueError(f"unknown guidance mode {mode!r}")
    net = net or ProxyFeatureNet(seed=0)
    report = MetricsReport(mode=mode)
    num_domains = model.cfg.num_domains
    for src in range(num_domains):
        src_pool = dataset.images[dataset.test_indices_for(src)]
        if src_pool.shape[0] < CONTROLLABILITY_SOURCES:
            raise ValueError(f"domain {src} test split has {src_pool.shape[0]} images; "
                             f"needs >= {CONTROLLABILITY_SOURCES}")
        ctrl_sources = src_pool[:CONTROLLABILITY_SOURCES]
        div_sources = src_pool[:diversity_sources]
        for dst in range(num_domains):
            sampler = style_sampler_for(model, dataset, mode, dst, seed)
            report.add("diversity", src, dst,
                       diversity(model, div_sources, sampler, net))
            sampler = style_sampler_for(model, dataset, mode, dst, seed)
            report.add("controllability", src, dst,
                       controllability(model, ctrl_sources, sampler, net))
            sampler = style_sampler_for(model, dataset, mode, dst, seed)
            w = sampler(src_pool.shape[0])
            translated = model.translate(src_pool, w)
            real = dataset.images[dataset.test_indices_for(dst)]
            report.add("fid_proxy", src, dst, fid_proxy(translated, real, net))
    return report
