"""Layer forward/backward passes: convolution, normalization, affine style
maps, the rectifier family, StruConv, and the SA-composed activations.

Conventions:

* every ``*_forward`` returns ``(out, ctx)``; the matching ``*_backward``
  consumes ``ctx`` plus the output cotangent and returns cotangents for
  each differentiable input, in argument order
* the rectifier derivative at exactly 0 takes the positive branch (slope 1),
  so gradients are deterministic
* layer classes own parameters as :class:`Param` objects and accumulate
  gradients on them in ``backward``
* everything is dtype-preserving; float32 for training, float64 for the
  gradient-check oracle

All analytic gradients here are certified against central finite
differences by :mod:`adastyle.gradcheck`.
"""

from __future__ import annotations

import numpy as np

from .tensor import EPS, SINGLE

RECTIFIER_KINDS = (
    "relu",
    "leaky_relu",
    "prelu",
    "adarelu",
    "sa_relu",
    "sa_leaky_relu",
    "sa_prelu",
    "sa_adarelu",
)


class Param:
    """A mutable parameter array plus its accumulated gradient."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _pad2d(x, p):
    if p == 0:
        return x
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    xp[:, :, p:p + h, p:p + w] = x
    return xp


def _windows(xp, kh, kw, stride):
    # (n, c, oh, ow, kh, kw) strided view into the padded input
    v = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    if stride != 1:
        v = v[:, :, ::stride, ::stride]
    return v


def _scatter_windows(gwins, xshape, stride, padding):
    # adjoint of _windows: accumulate window cotangents back onto the input
    n, c, h, w = xshape
    kh, kw = gwins.shape[4], gwins.shape[5]
    oh, ow = gwins.shape[2], gwins.shape[3]
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=gwins.dtype)
    for u in range(kh):
        for v in range(kw):
            xp[:, :, u:u + stride * oh:stride, v:v + stride * ow:stride] += gwins[:, :, :, :, u, v]
    if padding == 0:
        return xp
    return xp[:, :, padding:padding + h, padding:padding + w]


def conv2d_forward(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of a rank-4 input with a full (oc, ic, kh, kw) kernel.

    The stride-1 path works in NHWC internally: one pointwise GEMM over the
    padded grid per kernel offset, accumulated with shifted adds.  Strided
    convolutions take a generic strided-window path.
    """
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ValueError(f"channel mismatch: input has {cin} channels, kernels expect {cin_w}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"conv output would be empty: input {h}x{w}, kernel {kh}x{kw}, "
                         f"stride {stride}, padding {padding}")
    if stride == 1:
        p = padding
        hp, wp = h + 2 * p, w + 2 * p
        xt = np.zeros((n, hp, wp, cin), dtype=x.dtype)
        xt[:, p:p + h, p:p + w, :] = x.transpose(0, 2, 3, 1)
        xflat = xt.reshape(n * hp * wp, cin)
        wr = np.ascontiguousarray(weight.transpose(2, 3, 1, 0))  # (kh, kw, ic, oc)
        acc = np.zeros((n, oh, ow, cout), dtype=x.dtype)
        for u in range(kh):
            for v in range(kw):
                z = (xflat @ wr[u, v]).reshape(n, hp, wp, cout)
                acc += z[:, u:u + oh, v:v + ow, :]
        if bias is not None:
            acc += bias
        out = np.ascontiguousarray(acc.transpose(0, 3, 1, 2))
        ctx = ("nhwc", x.shape, xt, weight, bias is not None, padding, kh, kw)
        return out, ctx
    wins = _windows(_pad2d(x, padding), kh, kw, stride)
    cols = wins.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, cin * kh * kw)
    out = cols @ weight.reshape(cout, -1).T
    if bias is not None:
        out += bias
    out = np.ascontiguousarray(out.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2))
    ctx = ("strided", x.shape, cols, weight, bias is not None, stride, padding, kh, kw)
    return out, ctx


def conv2d_backward(ctx, gout):
    if ctx[0] == "nhwc":
        return _conv2d_backward_nhwc(ctx, gout)
    _, xshape, cols, weight, has_bias, stride, padding, kh, kw = ctx
    n, cin, h, w = xshape
    cout = weight.shape[0]
    oh, ow = gout.shape[2], gout.shape[3]
    g = gout.transpose(0, 2, 3, 1).reshape(n * oh * ow, cout)
    gweight = (g.T @ cols).reshape(weight.shape)
    gbias = g.sum(axis=0) if has_bias else None
    gcols = g @ weight.reshape(cout, -1)
    gwins = gcols.reshape(n, oh, ow, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    gx = _scatter_windows(gwins, xshape, stride, padding)
    return gx, gweight, gbias


def _conv2d_backward_nhwc(ctx, gout):
    _, xshape, xt, weight, has_bias, p, kh, kw = ctx
    n, cin, h, w = xshape
    cout = weight.shape[0]
    oh, ow = gout.shape[2], gout.shape[3]
    hp, wp = h + 2 * p, w + 2 * p
    g = np.ascontiguousarray(gout.transpose(0, 2, 3, 1))
    gflat = g.reshape(n * oh * ow, cout)
    gbias = gflat.sum(axis=0) if has_bias else None
    wr = np.ascontiguousarray(weight.transpose(2, 3, 0, 1))  # (kh, kw, oc, ic)
    gwr = np.empty((kh, kw, cin, cout), dtype=gout.dtype)
    gxp = np.zeros((n, hp, wp, cin), dtype=gout.dtype)
    for u in range(kh):
        for v in range(kw):
            xs = np.ascontiguousarray(xt[:, u:u + oh, v:v + ow, :]).reshape(n * oh * ow, cin)
            gwr[u, v] = xs.T @ gflat
            gxp[:, u:u + oh, v:v + ow, :] += (gflat @ wr[u, v]).reshape(n, oh, ow, cin)
    gweight = np.ascontiguousarray(gwr.transpose(3, 2, 0, 1))
    gx = np.ascontiguousarray(gxp[:, p:p + h, p:p + w, :].transpose(0, 3, 1, 2))
    return gx, gweight, gbias


# ---------------------------------------------------------------------------
# depthwise convolution and kernel normalization (StruConv)
# ---------------------------------------------------------------------------

def normalize_kernels(raw):
    """Unit-L2-norm view of a per-channel kernel bank (c, kh, kw).

    The direction of each kernel is preserved; any positive scale factor is
    removed.  Scaling is canonicalized by the max-magnitude entry first so
    that banks ``k`` and ``c*k`` normalize to bitwise-identical results
    whenever ``c*k`` is exactly representable.
    """
    scale = np.max(np.abs(raw), axis=(1, 2), keepdims=True)
    if np.any(scale <= 0):
        raise ValueError("degenerate kernel")
    r = raw / scale
    rnorm = np.sqrt((r * r).sum(axis=(1, 2), keepdims=True))
    full_norm = scale * rnorm
    if np.any(full_norm <= 1e-12):
        raise ValueError("degenerate kernel")
    khat = r / rnorm
    return khat, (khat, full_norm)


def normalize_kernels_backward(ctx, gk):
    # k_hat = k / ||k||: project out the radial component, then rescale
    khat, full_norm = ctx
    radial = (khat * gk).sum(axis=(1, 2), keepdims=True)
    return (gk - khat * radial) / full_norm


def depthwise_forward(x, kernels):
    """Per-channel cross-correlation, stride 1, shape-preserving padding."""
    n, c, h, w = x.shape
    ck, kh, kw = kernels.shape
    if c != ck:
        raise ValueError(f"channel mismatch: input has {c} channels, kernel bank has {ck}")
    p = kh // 2
    xp = _pad2d(x, p)
    out = np.zeros_like(x)
    for u in range(kh):
        for v in range(kw):
            out += xp[:, :, u:u + h, v:v + w] * kernels[:, u, v][None, :, None, None]
    return out, (xp, kernels, p, x.shape)


def depthwise_backward(ctx, gout):
    xp, kernels, p, xshape = ctx
    n, c, h, w = xshape
    kh, kw = kernels.shape[1], kernels.shape[2]
    gk = np.empty_like(kernels)
    gxp = np.zeros_like(xp)
    for u in range(kh):
        for v in range(kw):
            sl = xp[:, :, u:u + h, v:v + w]
            gk[:, u, v] = (gout * sl).sum(axis=(0, 2, 3))
            gxp[:, :, u:u + h, v:v + w] += gout * kernels[:, u, v][None, :, None, None]
    gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
    return gx, gk


def struconv_forward(x, raw_kernels, normalize=True):
    """Depthwise conv with unit-norm kernels; ``normalize=False`` is the
    plain-DWConv ablation that applies the raw kernels."""
    if normalize:
        khat, nctx = normalize_kernels(raw_kernels)
        out, dctx = depthwise_forward(x, khat)
        return out, (dctx, nctx)
    out, dctx = depthwise_forward(x, raw_kernels)
    return out, (dctx, None)


def struconv_backward(ctx, gout):
    dctx, nctx = ctx
    gx, gk = depthwise_backward(dctx, gout)
    if nctx is not None:
        gk = normalize_kernels_backward(nctx, gk)
    return gx, gk


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def instance_norm_forward(x, eps=EPS):
    """Standardize each (sample, channel) plane to mean 0, variance ~1."""
    if x.shape[2] * x.shape[3] < 2:
        raise ValueError("instance norm needs at least 2 spatial elements per channel")
    m = x.mean(axis=(2, 3), keepdims=True)
    xc = x - m
    v = (xc * xc).mean(axis=(2, 3), keepdims=True)
    istd = 1.0 / np.sqrt(v + eps)
    xhat = xc * istd
    return xhat, (xhat, istd)


def instance_norm_backward(ctx, gout):
    xhat, istd = ctx
    gm = gout.mean(axis=(2, 3), keepdims=True)
    gv = (gout * xhat).mean(axis=(2, 3), keepdims=True)
    return istd * (gout - gm - xhat * gv)


def _style_vec(v, channels, name):
    v = np.asarray(v)
    if v.ndim == 1:
        v = v[None, :]
    if v.ndim != 2 or v.shape[1] != channels:
        raise ValueError(f"{name} length mismatch: expected {channels} channels, got shape {v.shape}")
    return v


def adain_forward(x, style_mu, style_sigma, eps=EPS):
    """Standardize per (sample, channel), then impose the target mean and
    standard deviation.  ``style_mu``/``style_sigma`` are (c,) or (n, c);
    sigma is used as given (it may be negative)."""
    c = x.shape[1]
    mu = _style_vec(style_mu, c, "style_mu")
    sigma = _style_vec(style_sigma, c, "style_sigma")
    xhat, in_ctx = instance_norm_forward(x, eps)
    out = sigma[:, :, None, None] * xhat + mu[:, :, None, None]
    ctx = (xhat, in_ctx, sigma, np.asarray(style_mu).ndim, np.asarray(style_sigma).ndim)
    return out, ctx


def adain_backward(ctx, gout):
    xhat, in_ctx, sigma, mu_ndim, sigma_ndim = ctx
    gmu = gout.sum(axis=(2, 3))
    gsigma = (gout * xhat).sum(axis=(2, 3))
    gx = instance_norm_backward(in_ctx, gout * sigma[:, :, None, None])
    if mu_ndim == 1:
        gmu = gmu.sum(axis=0)
    if sigma_ndim == 1:
        gsigma = gsigma.sum(axis=0)
    return gx, gmu, gsigma


# ---------------------------------------------------------------------------
# affine style maps
# ---------------------------------------------------------------------------

def affine_forward(w, weight, bias):
    """``weight @ w + bias`` for a single style code (d,) or a batch (n, d)."""
    w = np.asarray(w)
    single = w.ndim == 1
    wb = w[None, :] if single else w
    if wb.shape[1] != weight.shape[1]:
        raise ValueError(f"dimension mismatch: style code has dim {wb.shape[1]}, "
                         f"affine expects {weight.shape[1]}")
    out = wb @ weight.T + bias
    if single:
        out = out[0]
    return out, (wb, weight, single)


def affine_backward(ctx, gout):
    wb, weight, single = ctx
    g = gout[None, :] if single else gout
    gw = g @ weight
    gweight = g.T @ wb
    gbias = g.sum(axis=0)
    if single:
        gw = gw[0]
    return gw, gweight, gbias


# ---------------------------------------------------------------------------
# rectifiers
# ---------------------------------------------------------------------------

def _broadcast_slopes(slopes, x):
    s = np.asarray(slopes, dtype=x.dtype)
    if s.ndim == 0:
        return s.reshape(1, 1, 1, 1)
    if s.ndim == 1:
        if s.shape[0] != x.shape[1]:
            raise ValueError(f"slope vector length mismatch: {s.shape[0]} slopes "
                             f"for {x.shape[1]} channels")
        return s.reshape(1, -1, 1, 1)
    if s.ndim == 2:
        if s.shape != (x.shape[0], x.shape[1]):
            raise ValueError(f"slope matrix shape mismatch: {s.shape} for input "
                             f"batch/channels {(x.shape[0], x.shape[1])}")
        return s.reshape(s.shape[0], s.shape[1], 1, 1)
    raise ValueError(f"slopes must be scalar, (c,) or (n, c); got rank {s.ndim}")


def rectify_forward(x, slopes):
    """Channel-wise leaky rectifier: identity for x >= 0, ``slope * x`` below.

    ``slopes`` may be a scalar (LeakyReLU), a (c,) vector (PReLU), or an
    (n, c) matrix (AdaReLU, one slope per sample and channel).  Slope 0
    reproduces ReLU bitwise; slope 1 is the identity; negative slopes give
    the reversed activation.
    """
    s = _broadcast_slopes(slopes, x)
    pos = x >= 0
    out = np.where(pos, x, s * x)
    return out, (x, s, pos, np.asarray(slopes).ndim)


def rectify_backward(ctx, gout, need_slope_grad=True):
    x, s, pos, slope_ndim = ctx
    gx = np.where(pos, gout, s * gout)
    if not need_slope_grad:
        return gx, None
    gneg = np.where(pos, np.zeros((), dtype=gout.dtype), gout * x)
    gs = gneg.sum(axis=(2, 3))  # (n, c)
    if slope_ndim == 0:
        gs = gs.sum()
    elif slope_ndim == 1:
        gs = gs.sum(axis=0)
    return gx, gs


def sa_activate_forward(x, raw_kernels, slopes, normalize=True):
    """Structural-adaptation activation: StruConv first, then the rectifier.

    The caller is responsible for feeding AdaIN- (or IN-) conditioned
    features; the kernel bank reshapes spatial structure without touching
    per-channel scale, and the rectifier then gates on the reshaped sign.
    """
    h, sctx = struconv_forward(x, raw_kernels, normalize=normalize)
    out, rctx = rectify_forward(h, slopes)
    return out, (sctx, rctx)


def sa_activate_backward(ctx, gout):
    sctx, rctx = ctx
    gh, gs = rectify_backward(rctx, gout)
    gx, gk = struconv_backward(sctx, gh)
    return gx, gk, gs


# ---------------------------------------------------------------------------
# pooling, resampling, pointwise
# ---------------------------------------------------------------------------

def avgpool2_forward(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avgpool2 needs even spatial dims, got {h}x{w}")
    out = (x[:, :, ::2, ::2] + x[:, :, 1::2, ::2] + x[:, :, ::2, 1::2] + x[:, :, 1::2, 1::2])
    out *= np.asarray(0.25, dtype=x.dtype)
    return out, x.shape


def avgpool2_backward(ctx, gout):
    g = np.repeat(np.repeat(gout, 2, axis=2), 2, axis=3)
    return g * np.asarray(0.25, dtype=gout.dtype)


def upsample2_forward(x):
    out = np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)
    return out, None


def upsample2_backward(ctx, gout):
    n, c, h, w = gout.shape
    return gout.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def global_avgpool_forward(x):
    return x.mean(axis=(2, 3)), x.shape


def global_avgpool_backward(xshape, gout):
    n, c, h, w = xshape
    scale = np.asarray(1.0 / (h * w), dtype=gout.dtype)
    return np.broadcast_to((gout * scale)[:, :, None, None], xshape).copy()


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(y, gout):
    return gout * (1 - y * y)


# ---------------------------------------------------------------------------
# parameterized layer objects
# ---------------------------------------------------------------------------

class Conv2d:
    """3x3 (by default) convolution layer with He-normal init."""

    def __init__(self, cin, cout, ksize=3, stride=1, padding=None, bias=True,
                 rng=None, dtype=SINGLE):
        if padding is None:
            padding = ksize // 2
        self.stride = stride
        self.padding = padding
        std = np.sqrt(2.0 / (cin * ksize * ksize))
        self.weight = Param(rng.normal(0.0, std, (cout, cin, ksize, ksize)).astype(dtype))
        self.bias = Param(np.zeros(cout, dtype=dtype)) if bias else None

    def params(self, prefix):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias

    def forward(self, x):
        b = self.bias.value if self.bias is not None else None
        return conv2d_forward(x, self.weight.value, b, self.stride, self.padding)

    def forward_linear(self, v):
        # tangent-mode pass: same weights, bias dropped
        return conv2d_forward(v, self.weight.value, None, self.stride, self.padding)

    def backward(self, ctx, gout):
        gx, gweight, gbias = conv2d_backward(ctx, gout)
        self.weight.grad += gweight
        if gbias is not None and self.bias is not None:
            self.bias.grad += gbias
        return gx


class Linear:
    """Fully connected layer on (n, d) activations."""

    def __init__(self, din, dout, rng=None, dtype=SINGLE):
        std = np.sqrt(2.0 / din)
        self.weight = Param(rng.normal(0.0, std, (dout, din)).astype(dtype))
        self.bias = Param(np.zeros(dout, dtype=dtype))

    def params(self, prefix):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias

    def forward(self, x):
        return affine_forward(x, self.weight.value, self.bias.value)

    def forward_linear(self, v):
        zero = np.zeros_like(self.bias.value)
        return affine_forward(v, self.weight.value, zero)

    def backward(self, ctx, gout, update_bias=True):
        gx, gweight, gbias = affine_backward(ctx, gout)
        self.weight.grad += gweight
        if update_bias:
            self.bias.grad += gbias
        return gx


class InstanceNorm:
    """Parameter-free instance normalization."""

    def __init__(self, eps=EPS):
        self.eps = eps

    def params(self, prefix):
        return iter(())

    def forward(self, x):
        return instance_norm_forward(x, self.eps)

    def backward(self, ctx, gout):
        return instance_norm_backward(ctx, gout)


class AffineMap:
    """Learned affine map from a style code to per-channel modulation
    parameters.

    ``target="slopes"`` emits one rectifier slope per channel and starts at
    a constant 0.2 (bias 0.2, weight std 0.01) so training begins exactly at
    LeakyReLU(0.2).  ``target="mean_and_sigma"`` emits 2*C values, the first
    C the target means (bias 0) and the next C the target sigmas (bias 1);
    sigma is not clamped, reversed modulation is allowed.
    """

    def __init__(self, style_dim, channels, target, rng=None, dtype=SINGLE):
        if target not in ("slopes", "mean_and_sigma"):
            raise ValueError(f"unknown affine target {target!r}")
        self.target = target
        self.channels = channels
        if target == "slopes":
            out = channels
            bias = np.full(out, 0.2, dtype=dtype)
            weight = rng.normal(0.0, 0.01, (out, style_dim)).astype(dtype)
        else:
            out = 2 * channels
            bias = np.concatenate([np.zeros(channels, dtype=dtype),
                                   np.ones(channels, dtype=dtype)])
            weight = rng.normal(0.0, 1.0 / np.sqrt(style_dim), (out, style_dim)).astype(dtype)
        self.weight = Param(weight)
        self.bias = Param(bias)

    def params(self, prefix):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias

    def forward(self, w):
        return affine_forward(w, self.weight.value, self.bias.value)

    def backward(self, ctx, gout):
        gw, gweight, gbias = affine_backward(ctx, gout)
        self.weight.grad += gweight
        self.bias.grad += gbias
        return gw

    def split(self, out):
        """(mu, sigma) halves of a mean_and_sigma output."""
        c = self.channels
        return out[..., :c], out[..., c:]


class StruConv:
    """Per-channel depthwise conv whose kernels are applied in unit-L2-norm
    form ("struconv" mode) or raw ("dwconv" mode, the ablation).

    Kernels start as identity-direction plus noise (center 0.9, elsewhere
    N(0, 0.05), normalized), so a fresh SA activation behaves like its
    plain counterpart.  No bias: a bias would shift channel statistics,
    which is exactly what this layer must not do.
    """

    def __init__(self, channels, ksize=3, mode="struconv", rng=None, dtype=SINGLE):
        if mode not in ("struconv", "dwconv"):
            raise ValueError(f"unknown structural mode {mode!r}")
        self.mode = mode
        k = rng.normal(0.0, 0.05, (channels, ksize, ksize))
        k[:, ksize // 2, ksize // 2] = 0.9
        k /= np.sqrt((k * k).sum(axis=(1, 2), keepdims=True))
        self.kernels = Param(k.astype(dtype))

    def params(self, prefix):
        yield f"{prefix}.kernels", self.kernels

    def forward(self, x):
        return struconv_forward(x, self.kernels.value, normalize=self.mode == "struconv")

    def backward(self, ctx, gout):
        gx, gk = struconv_backward(ctx, gout)
        self.kernels.grad += gk
        return gx

    def ensure_nondegenerate(self):
        """Reset any kernel whose norm underflowed to the identity direction."""
        k = self.kernels.value
        norms = np.sqrt((k * k).sum(axis=(1, 2)))
        bad = norms < 1e-8
        if np.any(bad):
            ident = np.zeros(k.shape[1:], dtype=k.dtype)
            ident[k.shape[1] // 2, k.shape[2] // 2] = 1
            k[bad] = ident


class Activation:
    """One activation site: resolves per-channel negative-branch slopes from
    its kind, applies the structural conv for sa_* kinds, then rectifies.

    Exactly the attributes demanded by ``kind`` exist: ``fixed_slope`` for
    leaky variants, ``learned_slopes`` for prelu variants (init 0.25),
    ``slope_affine`` for adarelu variants, ``structural`` for sa_* kinds.
    """

    def __init__(self, kind, channels, style_dim=None, fixed_slope=0.2,
                 structural_mode="struconv", rng=None, dtype=SINGLE):
        if kind not in RECTIFIER_KINDS:
            raise ValueError(f"unknown activation kind {kind!r}")
        self.kind = kind
        self.base = kind.removeprefix("sa_")
        self.fixed_slope = None
        self.learned_slopes = None
        self.slope_affine = None
        self.structural = None
        if self.base == "leaky_relu":
            self.fixed_slope = fixed_slope
        elif self.base == "prelu":
            self.learned_slopes = Param(np.full(channels, 0.25, dtype=dtype))
        elif self.base == "adarelu":
            if style_dim is None:
                raise ValueError("adarelu needs a style_dim")
            self.slope_affine = AffineMap(style_dim, channels, "slopes", rng=rng, dtype=dtype)
        if kind.startswith("sa_"):
            self.structural = StruConv(channels, mode=structural_mode, rng=rng, dtype=dtype)

    @property
    def needs_style(self):
        return self.base == "adarelu"

    def params(self, prefix):
        if self.learned_slopes is not None:
            yield f"{prefix}.slopes", self.learned_slopes
        if self.slope_affine is not None:
            yield from self.slope_affine.params(f"{prefix}.slope_affine")
        if self.structural is not None:
            yield from self.structural.params(f"{prefix}.structural")

    def resolve_slopes(self, w):
        if self.base == "relu":
            return 0.0, None
        if self.base == "leaky_relu":
            return self.fixed_slope, None
        if self.base == "prelu":
            return self.learned_slopes.value, None
        slopes, actx = self.slope_affine.forward(w)
        return slopes, actx

    def forward(self, x, w=None, trace=None):
        slopes, actx = self.resolve_slopes(w)
        dctx = None
        pre = x
        if self.structural is not None:
            pre, dctx = self.structural.forward(x)
        if trace is not None:
            trace.append((pre, np.broadcast_to(np.asarray(slopes), (pre.shape[0], pre.shape[1]))))
        out, rctx = rectify_forward(pre, slopes)
        return out, (dctx, actx, rctx)

    def backward(self, ctx, gout):
        """Returns (gx, gw); gw is None for style-independent kinds."""
        dctx, actx, rctx = ctx
        adaptive = self.base in ("prelu", "adarelu")
        gpre, gslopes = rectify_backward(rctx, gout, need_slope_grad=adaptive)
        gw = None
        if self.base == "prelu":
            self.learned_slopes.grad += gslopes
        elif self.base == "adarelu":
            gw = self.slope_affine.backward(actx, gslopes)
        gx = self.structural.backward(dctx, gpre) if self.structural is not None else gpre
        return gx, gw
