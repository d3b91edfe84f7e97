"""Losses, optimizer, and the deterministic adversarial training loop.

The recipe follows the usual diverse image-to-image translation setup:
per iteration two discriminator updates (latent-guided and
reference-guided fakes) and two generator updates (latent one also steps
the mapping network and style encoder).  The generator objective is

    adv + lambda_sty * style_rec - lambda_ds(t) * diversity + lambda_cyc * cycle

with the diversity weight decayed linearly from its initial to its final
value over the run.  R1 regularization is applied to the discriminator on
real images every step; its parameter gradient is computed exactly
(almost everywhere) with a linearized second pass through the
discriminator, which is piecewise linear by construction.

Everything is seeded: two runs with the same config and seed produce
byte-identical checkpoints and loss logs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .model import TranslationModel


@dataclass
class LossWeights:
    lambda_adv: float = 1.0
    lambda_sty: float = 1.0
    lambda_ds_initial: float = 2.0
    lambda_ds_final: float = 0.8
    lambda_cyc: float = 1.0
    r1_gamma: float = 1.0

    def lambda_ds(self, iteration, total_iterations):
        """Linear in the iteration from initial to final, clamped at final."""
        if total_iterations <= 1:
            return self.lambda_ds_final
        frac = min(iteration / (total_iterations - 1), 1.0)
        return self.lambda_ds_initial + (self.lambda_ds_final - self.lambda_ds_initial) * frac


@dataclass
class TrainState:
    """Loop position plus everything needed to reproduce it: the seed, the
    latest loss snapshot, and the per-parameter Adam moments (first and
    second moment arrays and step counters, one optimizer per network)."""

    iteration: int
    rng_seed: int
    metrics: dict = field(default_factory=dict)
    optimizers: dict = field(default_factory=dict)


def softplus(x):
    return np.logaddexp(0, x)


def sigmoid(x):
    # exp(-softplus(-x)): stable on both tails
    return np.exp(-np.logaddexp(0, -x))


def adversarial_losses(d_real, d_fake):
    """Non-saturating adversarial objectives (means over the batch).

    loss_D = softplus(-d_real) + softplus(d_fake)
    loss_G = softplus(-d_fake)
    """
    d_real = np.asarray(d_real, dtype=np.float64)
    d_fake = np.asarray(d_fake, dtype=np.float64)
    loss_d = float(softplus(-d_real).mean() + softplus(d_fake).mean())
    loss_g = float(softplus(-d_fake).mean())
    return loss_d, loss_g


def style_reconstruction_loss(w_target, w_recovered):
    """Mean absolute difference between style codes."""
    a = np.asarray(w_target)
    b = np.asarray(w_recovered)
    if a.shape != b.shape:
        raise ValueError(f"style code dim mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a.astype(np.float64) - b.astype(np.float64)).mean())


def diversity_sensitive_loss(img1, img2):
    """Mean absolute pixel difference; enters the generator objective with a
    negative coefficient (it is maximized)."""
    if img1.shape != img2.shape:
        raise ValueError(f"image shape mismatch: {img1.shape} vs {img2.shape}")
    return float(np.abs(img1.astype(np.float64) - img2.astype(np.float64)).mean())


def cycle_loss(source, reconstructed):
    """Mean absolute reconstruction error."""
    if source.shape != reconstructed.shape:
        raise ValueError(f"image shape mismatch: {source.shape} vs {reconstructed.shape}")
    return float(np.abs(source.astype(np.float64) - reconstructed.astype(np.float64)).mean())


def r1_penalty(discriminator, real_image, domain, gamma=1.0):
    """(gamma/2) * mean_n ||grad_x d(x_n)||^2 via the analytic backward pass.

    Pure with respect to the discriminator: parameter gradient buffers are
    restored afterwards.
    """
    params = [p for _, p in discriminator.params("d")]
    saved = [p.grad.copy() for p in params]
    out, ctx = discriminator.forward(real_image, domain)
    gx = discriminator.backward(ctx, np.ones_like(out))
    for p, g in zip(params, saved):
        p.grad[...] = g
    n = real_image.shape[0]
    sq = (gx.astype(np.float64) ** 2).reshape(n, -1).sum(axis=1)
    return float(0.5 * gamma * sq.mean())


def adam_step(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected adaptive-moment update, in place."""
    if param.shape != grad.shape:
        raise ValueError(f"shape mismatch: param {param.shape} vs grad {grad.shape}")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


class Adam:
    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.moments = {name: (np.zeros_like(p.value), np.zeros_like(p.value))
                        for name, p in self.named_params}

    def step(self):
        self.t += 1
        for name, p in self.named_params:
            m, v = self.moments[name]
            adam_step(p.value, p.grad, m, v, self.t, self.lr, self.beta1, self.beta2, self.eps)


LOG_COLUMNS = [
    "iteration", "lambda_ds",
    "d_latent", "d_ref", "r1_latent", "r1_ref",
    "g_adv_latent", "g_sty_latent", "g_ds_latent", "g_cyc_latent", "g_total_latent",
    "g_adv_ref", "g_sty_ref", "g_ds_ref", "g_cyc_ref", "g_total_ref",
]


class Trainer:
    """Single-writer training loop over a TranslationModel."""

    def __init__(self, model: TranslationModel, dataset, weights: LossWeights,
                 iterations, batch_size=8, lr=1e-4, seed=0,
                 log_every=100, checkpoint_every=0, out_dir=None):
        if len(dataset.train_indices) == 0:
            raise ValueError("empty dataset")
        for d in range(model.cfg.num_domains):
            if len(dataset.train_indices_by_domain[d]) == 0:
                raise ValueError(f"empty dataset for domain {d}")
        self.model = model
        self.dataset = dataset
        self.weights = weights
        self.iterations = iterations
        self.batch_size = batch_size
        self.seed = seed
        self.log_every = log_every
        self.checkpoint_every = checkpoint_every
        self.out_dir = out_dir
        self.rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
        self.opt_g = Adam(model.generator.params("generator"), lr)
        self.opt_f = Adam(model.mapping.params("mapping"), lr)
        self.opt_e = Adam(model.style_encoder.params("style_encoder"), lr)
        self.opt_d = Adam(model.discriminator.params("discriminator"), lr)
        self.state = TrainState(iteration=0, rng_seed=seed,
                                optimizers={"generator": self.opt_g,
                                            "mapping": self.opt_f,
                                            "style_encoder": self.opt_e,
                                            "discriminator": self.opt_d})
        self._log_rows = []

    # -- batch sampling ------------------------------------------------------

    def sample_batch(self):
        ds = self.dataset
        rng = self.rng
        cfg = self.model.cfg
        b = self.batch_size
        idx = ds.train_indices[rng.integers(0, len(ds.train_indices), size=b)]
        y_org = ds.domains[idx]
        y_trg = rng.integers(0, cfg.num_domains, size=b)
        ref1 = np.empty(b, dtype=np.int64)
        ref2 = np.empty(b, dtype=np.int64)
        for i in range(b):
            pool = ds.train_indices_by_domain[int(y_trg[i])]
            ref1[i] = pool[rng.integers(0, len(pool))]
            ref2[i] = pool[rng.integers(0, len(pool))]
        z1 = rng.standard_normal((b, cfg.latent_dim), dtype=np.float32).astype(self.model.dtype)
        z2 = rng.standard_normal((b, cfg.latent_dim), dtype=np.float32).astype(self.model.dtype)
        return {
            "x_real": ds.images[idx].astype(self.model.dtype),
            "y_org": y_org,
            "y_trg": y_trg,
            "x_ref1": ds.images[ref1].astype(self.model.dtype),
            "x_ref2": ds.images[ref2].astype(self.model.dtype),
            "z1": z1,
            "z2": z2,
        }

    # -- discriminator update ------------------------------------------------

    def d_step(self, batch, mode, update=True):
        model = self.model
        disc = model.discriminator
        x_real, y_org, y_trg = batch["x_real"], batch["y_org"], batch["y_trg"]
        b = x_real.shape[0]
        gamma = self.weights.r1_gamma

        model.zero_grads()

        # real branch: penalty first (its input-gradient pass pollutes the
        # parameter gradients, so they are zeroed before the real backward)
        d_real, ctx_real = disc.forward(x_real, y_org)
        gx = disc.backward(ctx_real, np.ones_like(d_real))
        model.zero_grads()
        sq = (gx.astype(np.float64) ** 2).reshape(b, -1).sum(axis=1)
        r1 = float(0.5 * gamma * sq.mean())
        g_real = (-sigmoid(-d_real) / b).astype(d_real.dtype)
        disc.backward(ctx_real, g_real)
        # exact R1 parameter gradient through the linearized discriminator
        v = (gx * np.asarray(gamma / b, dtype=gx.dtype))
        _, tctx = disc.tangent_forward(v, ctx_real)
        disc.tangent_backward(tctx, np.ones_like(d_real))

        # fake branch, generator detached
        if mode == "latent":
            s = model.mapping.forward(batch["z1"], y_trg)[0]
        else:
            s = model.style_encoder.forward(batch["x_ref1"], y_trg)[0]
        x_fake = model.generator.forward(x_real, s)[0]
        d_fake, ctx_fake = disc.forward(x_fake, y_trg)
        disc.backward(ctx_fake, (sigmoid(d_fake) / b).astype(d_fake.dtype))

        if update:
            self.opt_d.step()
        loss_d, _ = adversarial_losses(d_real[:, 0], d_fake[:, 0])
        return {"d": loss_d + r1, "r1": r1}

    # -- generator update ----------------------------------------------------

    def g_step(self, batch, mode, lambda_ds, update=True):
        model = self.model
        gen, mapping, senc, disc = (model.generator, model.mapping,
                                    model.style_encoder, model.discriminator)
        w = self.weights
        x_real, y_org, y_trg = batch["x_real"], batch["y_org"], batch["y_trg"]
        b = x_real.shape[0]

        model.zero_grads()

        if mode == "latent":
            s1, ctx_s1 = mapping.forward(batch["z1"], y_trg)
            s2 = mapping.forward(batch["z2"], y_trg)[0]
        else:
            s1, ctx_s1 = senc.forward(batch["x_ref1"], y_trg)
            s2 = senc.forward(batch["x_ref2"], y_trg)[0]

        x_fake, ctx_g1 = gen.forward(x_real, s1)
        d_fake, ctx_d = disc.forward(x_fake, y_trg)
        loss_adv = float(softplus(-d_fake.astype(np.float64)).mean())
        gx_fake = disc.backward(ctx_d, (-w.lambda_adv * sigmoid(-d_fake) / b).astype(d_fake.dtype))

        # style reconstruction: E must recover the code used for the fake
        s_rec, ctx_e1 = senc.forward(x_fake, y_trg)
        diff = s_rec - s1
        loss_sty = float(np.abs(diff.astype(np.float64)).mean())
        g_srec = (w.lambda_sty * np.sign(diff) / diff.size).astype(diff.dtype)
        gx_fake = gx_fake + senc.backward(ctx_e1, g_srec)
        gs1 = -g_srec

        # diversity: second fake from the other code, detached
        x_fake2 = gen.forward(x_real, s2)[0]
        ds_diff = x_fake - x_fake2
        loss_ds = float(np.abs(ds_diff.astype(np.float64)).mean())
        gx_fake = gx_fake + (-lambda_ds * np.sign(ds_diff) / ds_diff.size).astype(x_fake.dtype)

        # cycle: translate back with the source's own style
        s_org, ctx_e2 = senc.forward(x_real, y_org)
        x_rec, ctx_g2 = gen.forward(x_fake, s_org)
        cyc_diff = x_rec - x_real
        loss_cyc = float(np.abs(cyc_diff.astype(np.float64)).mean())
        g_rec = (w.lambda_cyc * np.sign(cyc_diff) / cyc_diff.size).astype(cyc_diff.dtype)
        g_from_cyc, gs_org = gen.backward(ctx_g2, g_rec)
        gx_fake = gx_fake + g_from_cyc
        if gs_org is not None:
            senc.backward(ctx_e2, gs_org)

        _, gs1_main = gen.backward(ctx_g1, gx_fake)
        if gs1_main is not None:
            gs1 = gs1 + gs1_main
        if mode == "latent":
            mapping.backward(ctx_s1, gs1)
        else:
            senc.backward(ctx_s1, gs1)

        if update:
            self.opt_g.step()
            if mode == "latent":
                self.opt_f.step()
                self.opt_e.step()
            self._guard_struconv()

        total = (w.lambda_adv * loss_adv + w.lambda_sty * loss_sty
                 - lambda_ds * loss_ds + w.lambda_cyc * loss_cyc)
        return {"adv": loss_adv, "sty": loss_sty, "ds": loss_ds, "cyc": loss_cyc,
                "total": total}

    def _guard_struconv(self):
        for blk in self.model.generator.translator:
            if blk.act.structural is not None:
                blk.act.structural.ensure_nondegenerate()

    # -- loop ------------------------------------------------------------------

    def run(self):
        for it in range(self.iterations):
            lam = self.weights.lambda_ds(it, self.iterations)
            batch = self.sample_batch()
            d_lat = self.d_step(batch, "latent")
            d_ref = self.d_step(batch, "ref")
            g_lat = self.g_step(batch, "latent", lam)
            g_ref = self.g_step(batch, "ref", lam)
            self.state.iteration = it + 1
            row = {
                "iteration": it,
                "lambda_ds": lam,
                "d_latent": d_lat["d"], "d_ref": d_ref["d"],
                "r1_latent": d_lat["r1"], "r1_ref": d_ref["r1"],
                "g_adv_latent": g_lat["adv"], "g_sty_latent": g_lat["sty"],
                "g_ds_latent": g_lat["ds"], "g_cyc_latent": g_lat["cyc"],
                "g_total_latent": g_lat["total"],
                "g_adv_ref": g_ref["adv"], "g_sty_ref": g_ref["sty"],
                "g_ds_ref": g_ref["ds"], "g_cyc_ref": g_ref["cyc"],
                "g_total_ref": g_ref["total"],
            }
            self.state.metrics = row
            if it % self.log_every == 0 or it == self.iterations - 1:
                self._log_rows.append(row)
            if (self.out_dir and self.checkpoint_every
                    and (it + 1) % self.checkpoint_every == 0
                    and it + 1 < self.iterations):
                self._save(f"checkpoint_{it + 1:06d}.ckpt")
        if self.out_dir:
            self._save("checkpoint_final.ckpt")
            self._write_log()
        return self.state

    def _save(self, name):
        os.makedirs(self.out_dir, exist_ok=True)
        checkpoint.save_model(os.path.join(self.out_dir, name), self.model)

    def _write_log(self):
        os.makedirs(self.out_dir, exist_ok=True)
        path = os.path.join(self.out_dir, "losses.csv")
        with open(path, "w") as f:
            f.write(",".join(LOG_COLUMNS) + "\n")
            for row in self._log_rows:
                cells = [str(row["iteration"])]
                cells += [f"{row[k]:.8e}" for k in LOG_COLUMNS[1:]]
                f.write(",".join(cells) + "\n")
