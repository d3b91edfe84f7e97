"""The miniature style-translation model: encoder -> translator -> decoder
generator, mapping network, style encoder, and discriminator.

Layout
------
Generator: a 3x3 stem conv, ``down_blocks`` residual down-blocks (instance
norm, factor-2 average pooling, channels doubled per block and capped at
8 * base_channels), then a translator of ``translator_blocks`` modulation
units, each exactly AdaIN (or plain IN in the in_only ablation) ->
activation -> 3x3 conv, then mirrored residual up-blocks with
nearest-neighbor upsampling and a tanh-saturated RGB head.  Style codes
are consumed only inside the translator; every adaptive site owns its own
affine map fed by the same w.

Mapping network: small MLP from the latent z with one output head per
domain.  Style encoder and discriminator share a conv trunk topology
(global average pool into per-domain heads); the discriminator head emits
one real/fake logit per domain and is kept piecewise-linear so that the
R1 penalty can be differentiated exactly via a linearized second pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from .layers import (
    Activation,
    AffineMap,
    Conv2d,
    InstanceNorm,
    Linear,
    RECTIFIER_KINDS,
)
from .tensor import SINGLE

ADAIN_MODES = ("adain", "in_only")
STRUCTURAL_MODES = ("struconv", "dwconv")

_SQRT2 = float(np.sqrt(2.0))


@dataclass
class ArchConfig:
    """Architecture knobs for the translation model."""

    image_size: int = 32
    base_channels: int = 32
    down_blocks: int = 2
    translator_blocks: int = 6
    style_dim: int = 16
    latent_dim: int = 8
    num_domains: int = 2
    activation: str = "adarelu"
    structural_mode: str = "struconv"
    fixed_slope: float = 0.2
    adain_mode: str = "adain"

    def validate(self):
        if self.image_size % (1 << self.down_blocks):
            raise ValueError(f"image_size {self.image_size} not divisible by "
                             f"2^{self.down_blocks}")
        if self.translator_blocks < 1:
            raise ValueError("translator_blocks must be >= 1")
        for name in ("image_size", "base_channels", "style_dim", "latent_dim", "num_domains"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.activation not in RECTIFIER_KINDS:
            raise ValueError(f"unknown activation kind {self.activation!r}")
        if self.adain_mode not in ADAIN_MODES:
            raise ValueError(f"unknown adain_mode {self.adain_mode!r}")
        if self.structural_mode not in STRUCTURAL_MODES:
            raise ValueError(f"unknown structural_mode {self.structural_mode!r}")
        return self

    def channels_after(self, block):
        return min(self.base_channels << block, 8 * self.base_channels)


def _lrelu_fwd(x):
    return layers.rectify_forward(x, 0.2)


class AdaINSite:
    """AdaIN site inside the translator: affine map from w to per-channel
    (mu, sigma) targets, then the adain transform.  In in_only mode the site
    degrades to plain instance norm and w has no path through it."""

    def __init__(self, channels, style_dim, mode, rng, dtype):
        self.mode = mode
        self.affine = None
        if mode == "adain":
            self.affine = AffineMap(style_dim, channels, "mean_and_sigma", rng=rng, dtype=dtype)

    def params(self, prefix):
        if self.affine is not None:
            yield from self.affine.params(f"{prefix}.affine")

    def forward(self, x, w):
        if self.affine is None:
            out, ctx = layers.instance_norm_forward(x)
            return out, (None, ctx)
        params, actx = self.affine.forward(w)
        mu, sigma = self.affine.split(params)
        out, adctx = layers.adain_forward(x, mu, sigma)
        return out, (actx, adctx)

    def backward(self, ctx, gout):
        actx, inner = ctx
        if actx is None:
            return layers.instance_norm_backward(inner, gout), None
        gx, gmu, gsigma = layers.adain_backward(inner, gout)
        gw = self.affine.backward(actx, np.concatenate([gmu, gsigma], axis=-1))
        return gx, gw


class TranslatorBlock:
    """One modulation unit: AdaIN (or IN) -> activation -> 3x3 conv."""

    def __init__(self, channels, cfg: ArchConfig, rng, dtype):
        self.norm = AdaINSite(channels, cfg.style_dim, cfg.adain_mode, rng, dtype)
        self.act = Activation(cfg.activation, channels, style_dim=cfg.style_dim,
                              fixed_slope=cfg.fixed_slope,
                              structural_mode=cfg.structural_mode, rng=rng, dtype=dtype)
        self.conv = Conv2d(channels, channels, 3, rng=rng, dtype=dtype)

    def params(self, prefix):
        yield from self.norm.params(f"{prefix}.norm")
        yield from self.act.params(f"{prefix}.act")
        yield from self.conv.params(f"{prefix}.conv")

    def forward(self, x, w, trace=None):
        h, nctx = self.norm.forward(x, w)
        h, actx = self.act.forward(h, w, trace=trace)
        out, cctx = self.conv.forward(h)
        return out, (nctx, actx, cctx)

    def backward(self, ctx, gout):
        nctx, actx, cctx = ctx
        g = self.conv.backward(cctx, gout)
        g, gw_act = self.act.backward(actx, g)
        gx, gw_norm = self.norm.backward(nctx, g)
        gw = None
        if gw_act is not None or gw_norm is not None:
            gw = (gw_act if gw_act is not None else 0) + (gw_norm if gw_norm is not None else 0)
        return gx, gw


class ResBlockDown:
    """Residual encoder block: IN -> lrelu -> conv -> avgpool -> IN -> lrelu
    -> conv, with a pooled 1x1-conv skip; output scaled by 1/sqrt(2)."""

    def __init__(self, cin, cout, rng, dtype):
        self.norm1 = InstanceNorm()
        self.conv1 = Conv2d(cin, cin, 3, rng=rng, dtype=dtype)
        self.norm2 = InstanceNorm()
        self.conv2 = Conv2d(cin, cout, 3, rng=rng, dtype=dtype)
        self.skip = Conv2d(cin, cout, 1, bias=False, rng=rng, dtype=dtype)

    def params(self, prefix):
        yield from self.conv1.params(f"{prefix}.conv1")
        yield from self.conv2.params(f"{prefix}.conv2")
        yield from self.skip.params(f"{prefix}.skip")

    def forward(self, x):
        h, n1 = self.norm1.forward(x)
        h, r1 = _lrelu_fwd(h)
        h, c1 = self.conv1.forward(h)
        h, p1 = layers.avgpool2_forward(h)
        h, n2 = self.norm2.forward(h)
        h, r2 = _lrelu_fwd(h)
        h, c2 = self.conv2.forward(h)
        s, ps = layers.avgpool2_forward(x)
        s, cs = self.skip.forward(s)
        out = (h + s) / np.asarray(_SQRT2, dtype=h.dtype)
        return out, (n1, r1, c1, p1, n2, r2, c2, ps, cs)

    def backward(self, ctx, gout):
        n1, r1, c1, p1, n2, r2, c2, ps, cs = ctx
        g = gout / np.asarray(_SQRT2, dtype=gout.dtype)
        gs = self.skip.backward(cs, g)
        gs = layers.avgpool2_backward(ps, gs)
        gh = self.conv2.backward(c2, g)
        gh, _ = layers.rectify_backward(r2, gh, need_slope_grad=False)
        gh = self.norm2.backward(n2, gh)
        gh = layers.avgpool2_backward(p1, gh)
        gh = self.conv1.backward(c1, gh)
        gh, _ = layers.rectify_backward(r1, gh, need_slope_grad=False)
        gh = self.norm1.backward(n1, gh)
        return gh + gs


class ResBlockUp:
    """Residual decoder block: IN -> lrelu -> upsample -> conv -> IN -> lrelu
    -> conv, with an upsampled 1x1-conv skip; output scaled by 1/sqrt(2)."""

    def __init__(self, cin, cout, rng, dtype):
        self.norm1 = InstanceNorm()
        self.conv1 = Conv2d(cin, cout, 3, rng=rng, dtype=dtype)
        self.norm2 = InstanceNorm()
        self.conv2 = Conv2d(cout, cout, 3, rng=rng, dtype=dtype)
        self.skip = Conv2d(cin, cout, 1, bias=False, rng=rng, dtype=dtype)

    def params(self, prefix):
        yield from self.conv1.params(f"{prefix}.conv1")
        yield from self.conv2.params(f"{prefix}.conv2")
        yield from self.skip.params(f"{prefix}.skip")

    def forward(self, x):
        h, n1 = self.norm1.forward(x)
        h, r1 = _lrelu_fwd(h)
        h, u1 = layers.upsample2_forward(h)
        h, c1 = self.conv1.forward(h)
        h, n2 = self.norm2.forward(h)
        h, r2 = _lrelu_fwd(h)
        h, c2 = self.conv2.forward(h)
        s, us = layers.upsample2_forward(x)
        s, cs = self.skip.forward(s)
        out = (h + s) / np.asarray(_SQRT2, dtype=h.dtype)
        return out, (n1, r1, u1, c1, n2, r2, c2, us, cs)

    def backward(self, ctx, gout):
        n1, r1, u1, c1, n2, r2, c2, us, cs = ctx
        g = gout / np.asarray(_SQRT2, dtype=gout.dtype)
        gs = self.skip.backward(cs, g)
        gs = layers.upsample2_backward(us, gs)
        gh = self.conv2.backward(c2, g)
        gh, _ = layers.rectify_backward(r2, gh, need_slope_grad=False)
        gh = self.norm2.backward(n2, gh)
        gh = self.conv1.backward(c1, gh)
        gh = layers.upsample2_backward(u1, gh)
        gh, _ = layers.rectify_backward(r1, gh, need_slope_grad=False)
        gh = self.norm1.backward(n1, gh)
        return gh + gs


class Generator:
    def __init__(self, cfg: ArchConfig, rng, dtype=SINGLE):
        self.cfg = cfg
        base = cfg.base_channels
        self.stem = Conv2d(3, base, 3, rng=rng, dtype=dtype)
        self.down = []
        c = base
        for b in range(cfg.down_blocks):
            cout = cfg.channels_after(b + 1)
            self.down.append(ResBlockDown(c, cout, rng, dtype))
            c = cout
        self.translator = [TranslatorBlock(c, cfg, rng, dtype)
                           for _ in range(cfg.translator_blocks)]
        self.up = []
        for b in range(cfg.down_blocks - 1, -1, -1):
            cout = cfg.channels_after(b)
            self.up.append(ResBlockUp(c, cout, rng, dtype))
            c = cout
        self.out_norm = InstanceNorm()
        self.out_conv = Conv2d(c, 3, 3, rng=rng, dtype=dtype)

    def params(self, prefix="generator"):
        yield from self.stem.params(f"{prefix}.stem")
        for i, blk in enumerate(self.down):
            yield from blk.params(f"{prefix}.down{i}")
        for i, blk in enumerate(self.translator):
            yield from blk.params(f"{prefix}.translator{i}")
        for i, blk in enumerate(self.up):
            yield from blk.params(f"{prefix}.up{i}")
        yield from self.out_conv.params(f"{prefix}.out_conv")

    def forward(self, x, w, trace=None):
        h, stem_ctx = self.stem.forward(x)
        down_ctx = []
        for blk in self.down:
            h, c = blk.forward(h)
            down_ctx.append(c)
        tr_ctx = []
        for blk in self.translator:
            h, c = blk.forward(h, w, trace=trace)
            tr_ctx.append(c)
        up_ctx = []
        for blk in self.up:
            h, c = blk.forward(h)
            up_ctx.append(c)
        h, onorm = self.out_norm.forward(h)
        h, orelu = _lrelu_fwd(h)
        h, oconv = self.out_conv.forward(h)
        out, otanh = layers.tanh_forward(h)
        return out, (stem_ctx, down_ctx, tr_ctx, up_ctx, onorm, orelu, oconv, otanh)

    def backward(self, ctx, gout):
        """Returns (gx, gw) with gw the total cotangent into the style code."""
        stem_ctx, down_ctx, tr_ctx, up_ctx, onorm, orelu, oconv, otanh = ctx
        g = layers.tanh_backward(otanh, gout)
        g = self.out_conv.backward(oconv, g)
        g, _ = layers.rectify_backward(orelu, g, need_slope_grad=False)
        g = self.out_norm.backward(onorm, g)
        for blk, c in zip(reversed(self.up), reversed(up_ctx)):
            g = blk.backward(c, g)
        gw = None
        for blk, c in zip(reversed(self.translator), reversed(tr_ctx)):
            g, gw_blk = blk.backward(c, g)
            if gw_blk is not None:
                gw = gw_blk if gw is None else gw + gw_blk
        for blk, c in zip(reversed(self.down), reversed(down_ctx)):
            g = blk.backward(c, g)
        gx = self.stem.backward(stem_ctx, g)
        return gx, gw


class MappingNetwork:
    """MLP from latent z to style code w, one output head per domain."""

    def __init__(self, cfg: ArchConfig, rng, dtype=SINGLE, hidden=64):
        self.num_domains = cfg.num_domains
        self.shared = [Linear(cfg.latent_dim, hidden, rng=rng, dtype=dtype),
                       Linear(hidden, hidden, rng=rng, dtype=dtype)]
        self.heads = [[Linear(hidden, hidden, rng=rng, dtype=dtype),
                       Linear(hidden, cfg.style_dim, rng=rng, dtype=dtype)]
                      for _ in range(cfg.num_domains)]

    def params(self, prefix="mapping"):
        for i, lin in enumerate(self.shared):
            yield from lin.params(f"{prefix}.shared{i}")
        for d, head in enumerate(self.heads):
            for i, lin in enumerate(head):
                yield from lin.params(f"{prefix}.head{d}.{i}")

    def _check_domains(self, y):
        y = np.asarray(y)
        if np.any(y < 0) or np.any(y >= self.num_domains):
            raise ValueError(f"domain out of range: got {y}, have {self.num_domains} domains")
        return y

    def forward(self, z, y):
        y = self._check_domains(y)
        h = z
        shared_ctx = []
        for lin in self.shared:
            h, c = lin.forward(h)
            shared_ctx.append(c)
            h, r = _apply_lrelu_vec(h)
            shared_ctx.append(r)
        head_ctx = []
        outs = []
        for head in self.heads:
            hh = h
            ctxs = []
            hh, c = head[0].forward(hh)
            ctxs.append(c)
            hh, r = _apply_lrelu_vec(hh)
            ctxs.append(r)
            hh, c = head[1].forward(hh)
            ctxs.append(c)
            head_ctx.append(ctxs)
            outs.append(hh)
        w = np.stack([outs[d][i] for i, d in enumerate(y)], axis=0)
        return w, (shared_ctx, head_ctx, y, z.shape[0])

    def backward(self, ctx, gw):
        shared_ctx, head_ctx, y, n = ctx
        gh_total = None
        for d, head in enumerate(self.heads):
            sel = y == d
            if not np.any(sel):
                continue
            g = np.zeros((n, gw.shape[1]), dtype=gw.dtype)
            g[sel] = gw[sel]
            c0, r, c1 = head_ctx[d]
            g = head[1].backward(c1, g)
            g = _lrelu_vec_backward(r, g)
            g = head[0].backward(c0, g)
            gh_total = g if gh_total is None else gh_total + g
        g = gh_total
        for i in range(len(self.shared) - 1, -1, -1):
            g = _lrelu_vec_backward(shared_ctx[2 * i + 1], g)
            g = self.shared[i].backward(shared_ctx[2 * i], g)
        return g


def _apply_lrelu_vec(x):
    # leaky relu on (n, d) activations
    pos = x >= 0
    out = np.where(pos, x, np.asarray(0.2, dtype=x.dtype) * x)
    return out, pos


def _lrelu_vec_backward(pos, g):
    return np.where(pos, g, np.asarray(0.2, dtype=g.dtype) * g)


class ImageEncoder:
    """Shared conv trunk for the style encoder and the discriminator:
    stem conv, lrelu+conv+avgpool stages down to 4x4, global average pool,
    a shared linear, then per-domain linear heads.

    The whole stack is piecewise linear (convs, leaky rectifiers, average
    pooling, linears), which keeps an exact linearized second pass available
    for the R1 penalty gradient."""

    def __init__(self, cfg: ArchConfig, head_dim, rng, dtype=SINGLE):
        self.num_domains = cfg.num_domains
        self.head_dim = head_dim
        base = cfg.base_channels
        self.stem = Conv2d(3, base, 3, rng=rng, dtype=dtype)
        self.convs = []
        size = cfg.image_size
        c = base
        while size > 4:
            cout = min(2 * c, 8 * base)
            self.convs.append(Conv2d(c, cout, 3, rng=rng, dtype=dtype))
            c = cout
            size //= 2
        self.fc = Linear(c, c, rng=rng, dtype=dtype)
        self.heads = [Linear(c, head_dim, rng=rng, dtype=dtype)
                      for _ in range(cfg.num_domains)]

    def params(self, prefix):
        yield from self.stem.params(f"{prefix}.stem")
        for i, conv in enumerate(self.convs):
            yield from conv.params(f"{prefix}.conv{i}")
        yield from self.fc.params(f"{prefix}.fc")
        for d, head in enumerate(self.heads):
            yield from head.params(f"{prefix}.head{d}")

    def _check_domains(self, y):
        y = np.asarray(y)
        if np.any(y < 0) or np.any(y >= self.num_domains):
            raise ValueError(f"domain out of range: got {y}, have {self.num_domains} domains")
        return y

    def forward(self, x, y):
        y = self._check_domains(y)
        h, stem_ctx = self.stem.forward(x)
        stage_ctx = []
        for conv in self.convs:
            h, r = _lrelu_fwd(h)
            h, c = conv.forward(h)
            h, p = layers.avgpool2_forward(h)
            stage_ctx.append((r, c, p))
        h, rf = _lrelu_fwd(h)
        h, gap = layers.global_avgpool_forward(h)
        h, fc_ctx = self.fc.forward(h)
        h, rv = _apply_lrelu_vec(h)
        outs = []
        head_ctx = []
        for head in self.heads:
            o, c = head.forward(h)
            outs.append(o)
            head_ctx.append(c)
        out = np.stack([outs[d][i] for i, d in enumerate(y)], axis=0)
        ctx = (stem_ctx, stage_ctx, rf, gap, fc_ctx, rv, head_ctx, y, x.shape[0])
        return out, ctx

    def backward(self, ctx, gout):
        stem_ctx, stage_ctx, rf, gap, fc_ctx, rv, head_ctx, y, n = ctx
        gh = None
        for d, head in enumerate(self.heads):
            sel = y == d
            if not np.any(sel):
                continue
            g = np.zeros((n, self.head_dim), dtype=gout.dtype)
            g[sel] = gout[sel]
            g = head.backward(head_ctx[d], g)
            gh = g if gh is None else gh + g
        g = _lrelu_vec_backward(rv, gh)
        g = self.fc.backward(fc_ctx, g)
        g = layers.global_avgpool_backward(gap, g)
        g, _ = layers.rectify_backward(rf, g, need_slope_grad=False)
        for conv, (r, c, p) in zip(reversed(self.convs), reversed(stage_ctx)):
            g = layers.avgpool2_backward(p, g)
            g = conv.backward(c, g)
            g, _ = layers.rectify_backward(r, g, need_slope_grad=False)
        return self.stem.backward(stem_ctx, g)

    # -- linearized (tangent) pass for the R1 penalty ----------------------
    # Propagates a tangent v through the network with every rectifier
    # replaced by multiplication with its cached activation mask and every
    # bias dropped.  For this piecewise-linear stack the result equals the
    # directional derivative v . dD/dx, and backprop through it yields the
    # exact (almost-everywhere) parameter gradient of gradient-norm terms.

    def tangent_forward(self, v, ctx):
        stem_ctx, stage_ctx, rf, gap, fc_ctx, rv, head_ctx, y, n = ctx
        t, t_stem = self.stem.forward_linear(v)
        t_stage = []
        for conv, (r, c, p) in zip(self.convs, stage_ctx):
            t = _mask_apply(r, t)
            t, tc = conv.forward_linear(t)
            t, tp = layers.avgpool2_forward(t)
            t_stage.append((tc, tp))
        t = _mask_apply(rf, t)
        t, tgap = layers.global_avgpool_forward(t)
        t, tfc = self.fc.forward_linear(t)
        t = _lrelu_vec_backward(rv, t)  # same mask-multiply as the backward pass
        t_heads = []
        outs = []
        for head in self.heads:
            o, c = head.forward_linear(t)
            outs.append(o)
            t_heads.append(c)
        tout = np.stack([outs[d][i] for i, d in enumerate(y)], axis=0)
        tctx = (t_stem, t_stage, tgap, tfc, t_heads, ctx)
        return tout, tctx

    def tangent_backward(self, tctx, gt):
        t_stem, t_stage, tgap, tfc, t_heads, ctx = tctx
        stem_ctx, stage_ctx, rf, gap, fc_ctx, rv, head_ctx, y, n = ctx
        gh = None
        for d, head in enumerate(self.heads):
            sel = y == d
            if not np.any(sel):
                continue
            g = np.zeros((n, self.head_dim), dtype=gt.dtype)
            g[sel] = gt[sel]
            g = head.backward(t_heads[d], g, update_bias=False)
            gh = g if gh is None else gh + g
        g = _lrelu_vec_backward(rv, gh)
        g = self.fc.backward(tfc, g, update_bias=False)
        g = layers.global_avgpool_backward(tgap, g)
        g = _mask_apply(rf, g)
        for i in range(len(self.convs) - 1, -1, -1):
            tc, tp = t_stage[i]
            g = layers.avgpool2_backward(tp, g)
            g = self.convs[i].backward(tc, g)
            g = _mask_apply(stage_ctx[i][0], g)
        return self.stem.backward(t_stem, g)


def _mask_apply(rectify_ctx, t):
    # multiply a tangent by the cached rectifier derivative mask
    x, s, pos, _ = rectify_ctx
    return np.where(pos, t, s * t)


class TranslationModel:
    """Bundles the generator, mapping network, style encoder, discriminator
    and the config that built them."""

    def __init__(self, cfg: ArchConfig, seed=0, dtype=SINGLE):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        self.seed = seed
        ss = np.random.SeedSequence(seed).spawn(4)
        self.generator = Generator(cfg, np.random.default_rng(ss[0]), dtype)
        self.mapping = MappingNetwork(cfg, np.random.default_rng(ss[1]), dtype)
        self.style_encoder = ImageEncoder(cfg, cfg.style_dim, np.random.default_rng(ss[2]), dtype)
        self.discriminator = ImageEncoder(cfg, 1, np.random.default_rng(ss[3]), dtype)

    def named_params(self):
        out = list(self.generator.params("generator"))
        out += list(self.mapping.params("mapping"))
        out += list(self.style_encoder.params("style_encoder"))
        out += list(self.discriminator.params("discriminator"))
        return out

    def zero_grads(self):
        for _, p in self.named_params():
            p.zero_grad()

    # -- inference conveniences (contexts dropped) --------------------------

    def map_latent(self, z, domain):
        z = np.atleast_2d(np.asarray(z, dtype=self.dtype))
        y = np.full(z.shape[0], domain) if np.isscalar(domain) else np.asarray(domain)
        return self.mapping.forward(z, y)[0]

    def encode_style(self, image, domain):
        x = self._image_batch(image)
        y = np.full(x.shape[0], domain) if np.isscalar(domain) else np.asarray(domain)
        return self.style_encoder.forward(x, y)[0]

    def translate(self, source, w, trace=None):
        x = self._image_batch(source)
        w = np.atleast_2d(np.asarray(w, dtype=self.dtype))
        if x.shape[2] != self.cfg.image_size or x.shape[3] != self.cfg.image_size:
            raise ValueError(f"source shape {x.shape} does not match image_size "
                             f"{self.cfg.image_size}")
        return self.generator.forward(x, w, trace=trace)[0]

    def discriminate(self, image, domain):
        x = self._image_batch(image)
        y = np.full(x.shape[0], domain) if np.isscalar(domain) else np.asarray(domain)
        return self.discriminator.forward(x, y)[0][:, 0]

    def _image_batch(self, image):
        x = np.asarray(image, dtype=self.dtype)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4:
            raise ValueError(f"expected an image or image batch, got rank {x.ndim}")
        return x


def translator_param_report(model: TranslationModel):
    """Parameter counts inside the translator, split into structural-conv
    kernels and everything else.  Returns (structural, total, fraction)."""
    structural = 0
    total = 0
    for name, p in model.generator.params("generator"):
        if ".translator" not in name:
            continue
        total += p.value.size
        if ".structural." in name:
            structural += p.value.size
    frac = structural / total if total else 0.0
    return structural, total, frac
