"""Diagonal Gaussian latents, reparameterized sampling and closed-form KLs.

Everything here works on batched tensors: the last axis is the latent
dimension C and any leading axes are batch axes. KL functions return one
value per batch entry (a 0-d tensor for an unbatched Gaussian).
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import InvalidArgumentError

LOGVAR_MIN = -20.0
LOGVAR_MAX = 20.0


def as_generator(rng) -> torch.Generator:
    """Accept an int seed or an existing ``torch.Generator``."""
    if isinstance(rng, torch.Generator):
        return rng
    if rng is None:
        raise InvalidArgumentError("an explicit rng or seed is required")
    g = torch.Generator()
    g.manual_seed(int(rng))
    return g


@dataclass(frozen=True)
class GaussianDiag:
    """N(mean, diag(exp(logvar))).

    Stored as log-variance so the optimiser works on an unconstrained
    quantity; use :meth:`from_stddev` to build one from a stddev vector.
    """

    mean: torch.Tensor
    logvar: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.logvar.shape:
            raise InvalidArgumentError(
                f"mean shape {tuple(self.mean.shape)} != logvar shape {tuple(self.logvar.shape)}"
            )
        if self.mean.dim() == 0:
            raise InvalidArgumentError("latent must have at least one dimension")

    @classmethod
    def from_stddev(cls, mean, stddev) -> "GaussianDiag":
        mean = torch.as_tensor(mean, dtype=torch.get_default_dtype()) if not torch.is_tensor(mean) else mean
        stddev = torch.as_tensor(stddev, dtype=mean.dtype) if not torch.is_tensor(stddev) else stddev
        if mean.shape != stddev.shape:
            raise InvalidArgumentError("mean and stddev must have identical shapes")
        if not bool(torch.isfinite(mean).all()):
            raise InvalidArgumentError("mean must be finite")
        if not bool(torch.isfinite(stddev).all()) or not bool((stddev > 0).all()):
            raise InvalidArgumentError("stddev must be strictly positive and finite")
        return cls(mean, 2.0 * torch.log(stddev))

    @classmethod
    def from_logvar(cls, mean, logvar, clamp=True) -> "GaussianDiag":
        if clamp:
            logvar = logvar.clamp(LOGVAR_MIN, LOGVAR_MAX)
        return cls(mean, logvar)

    @property
    def stddev(self) -> torch.Tensor:
        return torch.exp(0.5 * self.logvar)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def shift(self, offset) -> "GaussianDiag":
        """Translate the mean by ``offset`` (broadcast over the last axis)."""
        offset = torch.as_tensor(offset, dtype=self.mean.dtype)
        if offset.dim() > 0 and offset.shape != self.mean.shape:
            offset = offset.unsqueeze(-1)
        return GaussianDiag(self.mean + offset, self.logvar)

    def detach(self) -> "GaussianDiag":
        return GaussianDiag(self.mean.detach(), self.logvar.detach())


@dataclass(frozen=True)
class DisentangledPosterior:
    """Age-related and age-irrelevant halves of the encoder posterior."""

    age: GaussianDiag
    irrel: GaussianDiag

    def __post_init__(self):
        if self.age.mean.shape != self.irrel.mean.shape:
            raise InvalidArgumentError("age and irrelevant latents must share a shape")


@dataclass(frozen=True)
class LatentSample:
    z_R: torch.Tensor
    z_I: torch.Tensor

    def __post_init__(self):
        if self.z_R.shape != self.z_I.shape:
            raise InvalidArgumentError("z_R and z_I must have equal shapes")

    def concat(self) -> torch.Tensor:
        return torch.cat([self.z_R, self.z_I], dim=-1)


def reparameterize(g: GaussianDiag, eps) -> torch.Tensor:
    eps = torch.as_tensor(eps, dtype=g.mean.dtype)
    if eps.shape != g.mean.shape:
        raise InvalidArgumentError(
            f"eps shape {tuple(eps.shape)} does not match latent shape {tuple(g.mean.shape)}"
        )
    return g.mean + eps * g.stddev


def kl_standard(g: GaussianDiag) -> torch.Tensor:
    """KL(g || N(0, I)) summed over the latent axis."""
    return 0.5 * torch.sum(g.mean.pow(2) + g.logvar.exp() - g.logvar - 1.0, dim=-1)


def kl_age(g: GaussianDiag, y) -> torch.Tensor:
    """KL(g || N(y*1, I)); ``y`` is a scalar or one age per batch entry."""
    y = torch.as_tensor(y, dtype=g.mean.dtype)
    if not bool(torch.isfinite(y).all()):
        raise InvalidArgumentError("age label must be finite")
    if y.dim() > 0:
        y = y.unsqueeze(-1)
    return 0.5 * torch.sum((g.mean - y).pow(2) + g.logvar.exp() - g.logvar - 1.0, dim=-1)


def _check_dim(C):
    if int(C) < 1:
        raise InvalidArgumentError(f"latent dimension must be >= 1, got {C}")


def sample_irrel_prior(C: int, rng, n: int | None = None, dtype=None) -> torch.Tensor:
    """Draw from N(0, I); shape ``[C]`` or ``[n, C]``."""
    _check_dim(C)
    shape = (int(C),) if n is None else (int(n), int(C))
    return torch.randn(shape, generator=as_generator(rng), dtype=dtype or torch.get_default_dtype())


def sample_age_prior(y, C: int, rng, n: int | None = None, dtype=None) -> torch.Tensor:
    """Draw from N(y*1, I). ``y`` may be a scalar or a length-``n`` vector."""
    eps = sample_irrel_prior(C, rng, n=n, dtype=dtype)
    y = torch.as_tensor(y, dtype=eps.dtype)
    if y.dim() > 0:
        y = y.unsqueeze(-1)
    return y + eps
