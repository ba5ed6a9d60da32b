"""Mixed-sample data augmentation lab: masks, regularisation coefficients,
mask synthesis, the approximate MSDA loss and small experiments."""
from .coefficients import (
    CoeffMatrix,
    Heatmap,
    coeff_closed,
    coeff_closed_expected,
    coeff_matrix_closed,
    coeff_monte_carlo,
    expected_coeff_matrix,
    gmix_grid_coeff,
    offset_heatmap,
)
from .errors import MSDAError
from .experiments import (
    ExperimentReport,
    TrainConfig,
    compare_engines,
    partial_grad_map,
    run_two_moons,
    train_sgd,
    two_moons,
)
from .losses import Dataset, LossBreakdown, approx_loss, approx_loss_grad, center_dataset, msda_empirical_loss
from .masks import GridShape, Mask, MaskSpec, mask_with_witness, sample_mask, sample_masks
from .mixer import Sample, mix_extrapolate, mix_pair
from .models import LOGISTIC, GlmModel, LossFamily, TwoLayerNet, flatness_identity_check
from .stochastics import BetaParams, RngStream, beta_sample, tilde_lambda_moment, tilde_lambda_sample
from .synthesis import MaskSynthesizer, TargetSpec, psd_sqrt, synthesize_mask_sampler, verify_synthesis

__version__ = "0.1.0"
