"""Disentangled variational aging: a VAE whose latent splits into an
age-related part with prior N(age * 1, I) and an age-irrelevant part with
prior N(0, I), trained introspectively.
"""
from .data import (AgeDistributionSpec, GlyphIdentity, LabeledImage, generate_glyph_dataset,
                   load_image_folder, recover_glyph_age, render_glyph, split_80_20)
from .errors import (CheckpointCorruptError, InvalidArgumentError, TrainingDivergenceError,
                     UnsupportedVersionError)
from .inference import (age_estimate, age_generate_conditioned, age_generate_from_noise,
                        age_translate)
from .latent import (DisentangledPosterior, GaussianDiag, LatentSample, kl_age, kl_standard,
                     reparameterize, sample_age_prior, sample_irrel_prior)
from .losses import LossReport, LossWeights
from .metrics import cumulative_accuracy, frechet_gaussian_distance, mae
from .networks import ArchitectureConfig, UVAModel, build_architecture, decode, encode, init_params
from .training import (Checkpoint, TrainConfig, load_checkpoint, preset, save_checkpoint,
                       train_loop, train_step)

__version__ = "0.1.0"
