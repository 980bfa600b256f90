"""Desk-scale domain-adaptive semantic segmentation with a covariance
pixel-text loss, built on a minimal deterministic autodiff stack."""

from .config import TrainConfig, load_config
from .copt_loss import CoptConfig, CovarianceMatrix, copt, copt_step, pixel_covariance
from .data_synth import SceneConfig, generate_sample, load_dataset, write_dataset
from .metrics import ConfusionMatrix, iou
from .model import SegModel, clone_params, ema_update, forward, init_model
from .pixel_features import FeatureMemoryBank, downsample_mask, masked_spatial_average
from .selftrain import MaskSpec, mask_image, masked_loss, pseudo_label, strong_augment, strongaug_loss
from .tensor import Tape, Tensor, backward, grad_check
from .text_embed import (
    ClassList,
    DomainTemplateSet,
    TextBank,
    build_text_bank,
    builtin_template,
    format_handcrafted,
    format_llm,
    hash_embedder,
    load_ctef,
    save_ctef,
    text_covariance,
)
from .train import evaluate_checkpoint, train

__version__ = "0.1.0"
