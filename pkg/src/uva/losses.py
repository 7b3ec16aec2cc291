"""Training objectives for the encoder and generator.

All batched losses reduce by the arithmetic mean over samples. Inputs may
be Python floats or tensors; tensor inputs keep their autograd graph.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import torch

from .errors import InvalidArgumentError


@dataclass
class LossWeights:
    lambda1: float = 1.0   # age KL (encoder)
    lambda2: float = 1.0   # adversarial (encoder)
    lambda3: float = 1.0   # age regularisation (encoder)
    lambda4: float = 1.0   # adversarial (generator)
    lambda5: float = 1.0   # age preserving (generator)
    alpha: float = 0.5
    margin: float = 1000.0
    alpha_on_generator: bool = False

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "alpha_on_generator":
                continue
            if not math.isfinite(v) or v < 0:
                raise InvalidArgumentError(f"{f.name} must be finite and nonnegative, got {v}")
        if self.margin <= 0:
            raise InvalidArgumentError(f"margin must be positive, got {self.margin}")

    def to_dict(self):
        return asdict(self)


@dataclass
class LossReport:
    rec: float = 0.0
    age_kl: float = 0.0
    kl_irrel: float = 0.0
    adv_E: float = 0.0
    adv_G: float = 0.0
    reg: float = 0.0
    age_keep: float = 0.0
    total_E: float = 0.0
    total_G: float = 0.0

    FIELDS = ("rec", "age_kl", "kl_irrel", "adv_E", "adv_G", "reg", "age_keep", "total_E", "total_G")

    def as_row(self):
        return [float(torch.as_tensor(getattr(self, k)).detach()) for k in self.FIELDS]

    def detached(self) -> "LossReport":
        return LossReport(**{k: float(torch.as_tensor(getattr(self, k)).detach()) for k in self.FIELDS})


def _mean(v):
    return v.mean() if torch.is_tensor(v) and v.dim() > 0 else v


def reconstruction_loss(x, x_r):
    """Half the squared Frobenius distance per sample, averaged over the batch."""
    if x.shape != x_r.shape:
        raise InvalidArgumentError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_r.shape)}")
    per_sample = 0.5 * (x - x_r).pow(2).flatten(1).sum(dim=1)
    return per_sample.mean()


def hinge(v, m):
    """max(0, m - v)."""
    if torch.is_tensor(v):
        return torch.clamp(m - v, min=0.0)
    return max(0.0, m - v)


def encoder_adversarial_loss(kl_real, kl_rec, kl_sample, w: LossWeights):
    """KL on real data plus weighted hinges pushing fake KLs above the margin.

    The hinge is taken per sample before the batch mean.
    """
    return _mean(kl_real) + w.alpha * (_mean(hinge(kl_rec, w.margin)) + _mean(hinge(kl_sample, w.margin)))


def generator_adversarial_loss(kl_rec, kl_sample, w: LossWeights | None = None):
    out = _mean(kl_rec) + _mean(kl_sample)
    if w is not None and w.alpha_on_generator:
        out = w.alpha * out
    return out


def _age_gap(mu_R, y):
    if not torch.is_tensor(mu_R):
        mu_R = torch.as_tensor(mu_R, dtype=torch.get_default_dtype())
    if mu_R.dim() == 0 or mu_R.shape[-1] == 0:
        raise InvalidArgumentError("mu_R must be a nonempty vector")
    y = torch.as_tensor(y, dtype=mu_R.dtype)
    return torch.abs(mu_R.mean(dim=-1) - y)


def age_regularization(mu_R, y):
    """|mean(mu_R) - y|, averaged over the batch."""
    return _mean(_age_gap(mu_R, y))


def age_preserving_loss(mu_R_rec, mu_R_sample, y):
    if mu_R_rec.shape != mu_R_sample.shape:
        raise InvalidArgumentError("reconstruction and sample mu_R must have equal shapes")
    return age_regularization(mu_R_rec, y) + age_regularization(mu_R_sample, y)


def total_encoder_loss(parts: LossReport, w: LossWeights):
    # the irrelevant-latent KL is already inside adv_E
    return parts.rec + w.lambda1 * parts.age_kl + w.lambda2 * parts.adv_E + w.lambda3 * parts.reg


def total_generator_loss(parts: LossReport, w: LossWeights):
    return parts.rec + w.lambda4 * parts.adv_G + w.lambda5 * parts.age_keep
