"""Finite-difference certification of every analytic backward pass.

The oracle knows nothing about how the analytic gradients are produced: it
re-derives each directional derivative from central differences of the
forward function alone, in float64, and compares coordinate by coordinate
against the vector-Jacobian products the layers report.  Training code is
only trusted once every registered op passes.

Probe points that land within 1e-3 of a rectifier kink are excluded by
resampling the inputs: the comparison is only meaningful where the op is
differentiable.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import layers

#: step size for float64 central differences
FD_STEP = 1e-5

#: coordinates closer than this to a rectifier kink are rejected
KINK_MARGIN = 1e-3


def finite_diff_jvp(f, x, direction, h=FD_STEP):
    """Central-difference directional derivative (f(x+h*d) - f(x-h*d)) / (2h)."""
    if h <= 0:
        raise ValueError("step size must be positive")
    hi = np.asarray(f(x + h * direction), dtype=np.float64)
    lo = np.asarray(f(x - h * direction), dtype=np.float64)
    out = (hi - lo) / (2.0 * h)
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite function output in finite difference")
    return out


@dataclass
class GradCheckReport:
    op_name: str
    max_rel_error: float
    worst_argument: str
    worst_coordinate: int
    probes: int
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.threshold

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"{status}  {self.op_name:<14} max_rel_error={self.max_rel_error:.3e}  "
                f"worst={self.worst_argument}[{self.worst_coordinate}]  probes={self.probes}")


class _Case:
    """One random instantiation of an op: named float64 args, a pure forward,
    and the analytic VJP under test."""

    def __init__(self, args, forward, vjp, kink_values=None):
        self.args = args            # dict name -> float64 array
        self.forward = forward      # forward(args) -> output array
        self.vjp = vjp              # vjp(args, cotangent) -> dict name -> grad
        self.kink_values = kink_values  # kink_values(args) -> pre-rectifier array


def _conv2d_case(rng):
    args = {
        "x": rng.standard_normal((2, 3, 5, 6)),
        "weight": rng.standard_normal((4, 3, 3, 3)),
        "bias": rng.standard_normal(4),
    }

    def forward(a):
        return layers.conv2d_forward(a["x"], a["weight"], a["bias"], stride=2, padding=1)[0]

    def vjp(a, cot):
        _, ctx = layers.conv2d_forward(a["x"], a["weight"], a["bias"], stride=2, padding=1)
        gx, gw, gb = layers.conv2d_backward(ctx, cot)
        return {"x": gx, "weight": gw, "bias": gb}

    return _Case(args, forward, vjp)


def _instance_norm_case(rng):
    args = {"x": rng.standard_normal((2, 3, 4, 5))}

    def forward(a):
        return layers.instance_norm_forward(a["x"])[0]

    def vjp(a, cot):
        _, ctx = layers.instance_norm_forward(a["x"])
        return {"x": layers.instance_norm_backward(ctx, cot)}

    return _Case(args, forward, vjp)


def _adain_case(rng):
    # sigma is kept away from zero: it scales the whole channel's input
    # gradient, and a near-zero draw turns the relative-error comparison
    # into a measurement of finite-difference rounding noise
    sigma = (0.3 + np.abs(rng.standard_normal((2, 3)))) * rng.choice([-1.0, 1.0], (2, 3))
    args = {
        "x": rng.standard_normal((2, 3, 4, 4)),
        "mu": rng.standard_normal((2, 3)),
        "sigma": sigma,
    }

    def forward(a):
        return layers.adain_forward(a["x"], a["mu"], a["sigma"])[0]

    def vjp(a, cot):
        _, ctx = layers.adain_forward(a["x"], a["mu"], a["sigma"])
        gx, gmu, gsigma = layers.adain_backward(ctx, cot)
        return {"x": gx, "mu": gmu, "sigma": gsigma}

    return _Case(args, forward, vjp)


def _affine_case(rng):
    args = {
        "w": rng.standard_normal((3, 6)),
        "weight": rng.standard_normal((5, 6)),
        "bias": rng.standard_normal(5),
    }

    def forward(a):
        return layers.affine_forward(a["w"], a["weight"], a["bias"])[0]

    def vjp(a, cot):
        _, ctx = layers.affine_forward(a["w"], a["weight"], a["bias"])
        gw, gweight, gbias = layers.affine_backward(ctx, cot)
        return {"w": gw, "weight": gweight, "bias": gbias}

    return _Case(args, forward, vjp)


def _make_slope_resolver(slope_spec):
    # returns resolve(args) -> (slopes, affine_ctx or None)
    if slope_spec == "prelu":
        return lambda a: (a["slopes"], None)
    if slope_spec == "adarelu":
        return lambda a: layers.affine_forward(a["w"], a["weight"], a["bias"])
    fixed = 0.0 if slope_spec is None else slope_spec
    return lambda a: (fixed, None)


def _slope_args(rng, slope_spec, channels):
    if slope_spec == "prelu":
        return {"slopes": rng.standard_normal(channels) * 0.5}
    if slope_spec == "adarelu":
        return {
            "w": rng.standard_normal((2, 6)),
            "weight": rng.standard_normal((channels, 6)) * 0.3,
            "bias": rng.standard_normal(channels) * 0.3,
        }
    return {}


def _slope_grads(slope_spec, actx, gs):
    if slope_spec == "prelu":
        return {"slopes": gs}
    if slope_spec == "adarelu":
        gw, gweight, gbias = layers.affine_backward(actx, gs)
        return {"w": gw, "weight": gweight, "bias": gbias}
    return {}


def _rectifier_case(rng, slope_spec):
    args = {"x": rng.standard_normal((2, 4, 5, 5))}
    args.update(_slope_args(rng, slope_spec, 4))
    resolve = _make_slope_resolver(slope_spec)

    def forward(a):
        return layers.rectify_forward(a["x"], resolve(a)[0])[0]

    def vjp(a, cot):
        s, actx = resolve(a)
        _, rctx = layers.rectify_forward(a["x"], s)
        gx, gs = layers.rectify_backward(rctx, cot)
        grads = {"x": gx}
        grads.update(_slope_grads(slope_spec, actx, gs))
        return grads

    return _Case(args, forward, vjp, kink_values=lambda a: a["x"])


def _struconv_case(rng):
    args = {
        "x": rng.standard_normal((2, 4, 5, 5)),
        "kernels": rng.standard_normal((4, 3, 3)),
    }

    def forward(a):
        return layers.struconv_forward(a["x"], a["kernels"])[0]

    def vjp(a, cot):
        _, ctx = layers.struconv_forward(a["x"], a["kernels"])
        gx, gk = layers.struconv_backward(ctx, cot)
        return {"x": gx, "kernels": gk}

    return _Case(args, forward, vjp)


def _sa_case(rng, slope_spec):
    args = {
        "x": rng.standard_normal((2, 4, 5, 5)),
        "kernels": rng.standard_normal((4, 3, 3)),
    }
    args.update(_slope_args(rng, slope_spec, 4))
    resolve = _make_slope_resolver(slope_spec)

    def forward(a):
        s = resolve(a)[0]
        return layers.sa_activate_forward(a["x"], a["kernels"], s)[0]

    def vjp(a, cot):
        s, actx = resolve(a)
        _, ctx = layers.sa_activate_forward(a["x"], a["kernels"], s)
        gx, gk, gs = layers.sa_activate_backward(ctx, cot)
        grads = {"x": gx, "kernels": gk}
        grads.update(_slope_grads(slope_spec, actx, gs))
        return grads

    def kinks(a):
        # the rectifier sees the struconv output, so that is where the kinks live
        return layers.struconv_forward(a["x"], a["kernels"])[0]

    return _Case(args, forward, vjp, kink_values=kinks)


def _disc_head_case(rng):
    # global average pool -> per-domain linear heads -> select one domain
    args = {
        "x": rng.standard_normal((3, 4, 4, 4)),
        "weight": rng.standard_normal((2, 4)),
        "bias": rng.standard_normal(2),
    }
    domain = 1

    def forward(a):
        pooled = layers.global_avgpool_forward(a["x"])[0]
        logits = layers.affine_forward(pooled, a["weight"], a["bias"])[0]
        return logits[:, domain]

    def vjp(a, cot):
        pooled, pctx = layers.global_avgpool_forward(a["x"])
        logits, actx = layers.affine_forward(pooled, a["weight"], a["bias"])
        glogits = np.zeros_like(logits)
        glogits[:, domain] = cot
        gpooled, gweight, gbias = layers.affine_backward(actx, glogits)
        gx = layers.global_avgpool_backward(pctx, gpooled)
        return {"x": gx, "weight": gweight, "bias": gbias}

    return _Case(args, forward, vjp)


def _avgpool_case(rng):
    args = {"x": rng.standard_normal((2, 3, 4, 6))}

    def forward(a):
        return layers.avgpool2_forward(a["x"])[0]

    def vjp(a, cot):
        _, ctx = layers.avgpool2_forward(a["x"])
        return {"x": layers.avgpool2_backward(ctx, cot)}

    return _Case(args, forward, vjp)


def _upsample_case(rng):
    args = {"x": rng.standard_normal((2, 3, 3, 4))}

    def forward(a):
        return layers.upsample2_forward(a["x"])[0]

    def vjp(a, cot):
        _, ctx = layers.upsample2_forward(a["x"])
        return {"x": layers.upsample2_backward(ctx, cot)}

    return _Case(args, forward, vjp)


def _tanh_case(rng):
    args = {"x": rng.standard_normal((2, 3, 4, 4))}

    def forward(a):
        return layers.tanh_forward(a["x"])[0]

    def vjp(a, cot):
        _, ctx = layers.tanh_forward(a["x"])
        return {"x": layers.tanh_backward(ctx, cot)}

    return _Case(args, forward, vjp)


OPS = {
    "conv2d": _conv2d_case,
    "instance_norm": _instance_norm_case,
    "adain": _adain_case,
    "affine_style": _affine_case,
    "relu": lambda rng: _rectifier_case(rng, None),
    "leaky_relu": lambda rng: _rectifier_case(rng, 0.2),
    "prelu": lambda rng: _rectifier_case(rng, "prelu"),
    "adarelu": lambda rng: _rectifier_case(rng, "adarelu"),
    "struconv": _struconv_case,
    "sa_relu": lambda rng: _sa_case(rng, None),
    "sa_leaky_relu": lambda rng: _sa_case(rng, 0.2),
    "sa_prelu": lambda rng: _sa_case(rng, "prelu"),
    "sa_adarelu": lambda rng: _sa_case(rng, "adarelu"),
    "disc_head": _disc_head_case,
    "avgpool2": _avgpool_case,
    "upsample2": _upsample_case,
    "tanh_out": _tanh_case,
}


def all_ops():
    return list(OPS)


def _draw_case(op, rng, max_tries=50):
    build = OPS[op]
    for _ in range(max_tries):
        case = build(rng)
        if case.kink_values is None:
            return case
        margin = np.min(np.abs(case.kink_values(case.args)))
        if margin >= KINK_MARGIN:
            return case
    raise RuntimeError(f"could not draw a kink-free probe point for {op}")


def check_layer(op, seeds=20, threshold=1e-5, base_seed=0):
    """Compare analytic VJPs of one op against central differences.

    Every coordinate of every argument is probed over ``seeds`` random
    instantiations; the worst relative error is reported.  Relative error
    uses max(|analytic|, |numeric|, 1e-8) as denominator.
    """
    if op not in OPS:
        raise ValueError(f"unknown op name {op!r}; known: {', '.join(sorted(OPS))}")
    op_tag = zlib.crc32(op.encode()) & 0xFFFF
    worst = 0.0
    worst_arg = ""
    worst_coord = 0
    probes = 0
    for s in range(seeds):
        rng = np.random.default_rng((base_seed, op_tag, s))
        case = _draw_case(op, rng)
        out = case.forward(case.args)
        cot = rng.standard_normal(out.shape)
        analytic = case.vjp(case.args, cot)
        for name, arr in case.args.items():
            g_analytic = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
            flat = arr.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + FD_STEP
                hi = float(np.sum(cot * case.forward(case.args)))
                flat[i] = orig - FD_STEP
                lo = float(np.sum(cot * case.forward(case.args)))
                flat[i] = orig
                numeric = (hi - lo) / (2.0 * FD_STEP)
                ana = float(g_analytic[i])
                denom = max(abs(ana), abs(numeric), 1e-8)
                rel = abs(ana - numeric) / denom
                probes += 1
                if rel > worst:
                    worst, worst_arg, worst_coord = rel, name, i
    return GradCheckReport(op_name=op, max_rel_error=worst, worst_argument=worst_arg,
                           worst_coordinate=worst_coord, probes=probes, threshold=threshold)


def check_all(ops=None, seeds=20, threshold=1e-5, base_seed=0):
    """Run check_layer over the given ops (default: all registered)."""
    names = list(ops) if ops else all_ops()
    return [check_layer(op, seeds=seeds, threshold=threshold, base_seed=base_seed)
            for op in names]
