"""Generative scattering networks.

Wavelet scattering coefficients of images, their whitened principal
components, a convolutional decoder back to pixels, and three latent
models (independent Gaussians, a VAE, a GAN) that generate new
coefficient vectors, plus the normality analysis used to compare them.
"""

from .datasets import ensure_dataset, load_idx_images, synthesize_digits, write_idx_images
from .errors import (
    ContractError,
    DegenerateSampleError,
    DependencyError,
    DimensionError,
    FormatError,
    NumericDomainError,
    ParameterError,
    ScatgenError,
)
from .models import (
    Decoder,
    DecoderConfig,
    Gan,
    TrainSettings,
    Vae,
    decoder_loss,
    gan_losses,
    train,
    vae_forward,
    vae_loss,
)
from .pca import PcaModel, WhitenedCoeffs, fit_pca, unwhiten, whiten
from .pipeline import (
    PipelineConfig,
    load_config,
    report_table1,
    run_pipeline,
    run_stage,
    sample_images,
    visualization_matrix,
)
from .scattering import (
    FilterBank,
    ScatteringConfig,
    ScatteringOutput,
    build_filter_bank,
    flatten_coefficients,
    scatter,
)
from .stats import NormalityReport, dagostino_k2, jarque_bera, moments, test_all_components
from .tensor import Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "ScatgenError",
    "DimensionError",
    "ParameterError",
    "NumericDomainError",
    "ContractError",
    "FormatError",
    "DependencyError",
    "DegenerateSampleError",
    "Tensor",
    "backward",
    "synthesize_digits",
    "ensure_dataset",
    "load_idx_images",
    "write_idx_images",
    "ScatteringConfig",
    "FilterBank",
    "ScatteringOutput",
    "build_filter_bank",
    "scatter",
    "flatten_coefficients",
    "PcaModel",
    "WhitenedCoeffs",
    "fit_pca",
    "whiten",
    "unwhiten",
    "Decoder",
    "DecoderConfig",
    "Vae",
    "Gan",
    "TrainSettings",
    "decoder_loss",
    "vae_forward",
    "vae_loss",
    "gan_losses",
    "train",
    "NormalityReport",
    "moments",
    "jarque_bera",
    "dagostino_k2",
    "test_all_components",
    "PipelineConfig",
    "load_config",
    "run_stage",
    "run_pipeline",
    "sample_images",
    "visualization_matrix",
    "report_table1",
    "__version__",
]
