"""Adaptive rectifiers and structural convolution for style-based image
translation, with a from-scratch training and evaluation harness.

The compute core is numpy; every differentiable operation ships with a
hand-derived backward pass that is certified against a finite-difference
oracle (:mod:`adastyle.gradcheck`) before any training result is trusted.
"""

from .tensor import ChannelStats, as_tensor, axpy, channel_stats, map_elements
from .layers import (
    Activation,
    AffineMap,
    Param,
    StruConv,
    adain_forward,
    affine_forward,
    instance_norm_forward,
    normalize_kernels,
    rectify_forward,
    sa_activate_forward,
    struconv_forward,
)
from .model import ArchConfig, TranslationModel, translator_param_report
from .training import (
    Adam,
    LossWeights,
    Trainer,
    TrainState,
    adam_step,
    adversarial_losses,
    cycle_loss,
    diversity_sensitive_loss,
    r1_penalty,
    style_reconstruction_loss,
)
from .metrics import (
    LatentStyleSampler,
    MetricsReport,
    ProxyFeatureNet,
    ReferenceStyleSampler,
    controllability,
    diversity,
    feature_distance,
    fid_proxy,
    frechet_distance,
    negative_part_stats,
)
from .data import SynthDataset, generate_dataset, load_dataset, load_png, save_png, write_dataset
from .config import RunConfig, dump_config, load_config
from .checkpoint import load_model, save_model

__version__ = "0.1.0"
