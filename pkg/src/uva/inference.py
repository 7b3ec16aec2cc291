"""Age translation, the two generation modes, and age estimation.

Every function runs without gradients and leaves the model untouched.
Images may be a single ``[3, H, W]`` tensor/array or a batch ``[N, 3, H, W]``;
the output keeps the input's batching.
"""
from __future__ import annotations

import math

import numpy as np
import torch

from .data import AGE_MAX
from .errors import InvalidArgumentError
from .latent import as_generator, reparameterize
from .networks import UVAModel, decode, encode


def _batch(model, x):
    t = torch.as_tensor(np.asarray(x) if not torch.is_tensor(x) else x)
    t = t.to(next(model.parameters()).dtype)
    single = t.dim() == 3
    return (t.unsqueeze(0) if single else t), single


def _check_age(age):
    a = np.asarray(age, dtype=np.float64)
    if not np.all(np.isfinite(a)) or np.any(a < 0) or np.any(a > AGE_MAX):
        raise InvalidArgumentError(f"target age must lie in [0, {AGE_MAX:g}], got {age}")


def _scale(model):
    return float(getattr(model, "age_scale", 1.0))


def _age_latent(model, target_age, n, gen, deterministic, dtype):
    C = model.cfg.latent_dim
    mean = torch.as_tensor(target_age, dtype=dtype).reshape(-1, 1) * _scale(model)
    mean = mean.expand(n, C)
    if deterministic:
        return mean.clone()
    return mean + torch.randn((n, C), generator=gen, dtype=dtype)


@torch.no_grad()
def age_translate(model: UVAModel, x, target_age, rng, deterministic: bool = False):
    """Re-render ``x`` at ``target_age``: keep its age-irrelevant code, swap the age code.

    With ``deterministic=True`` the age code is the prior mean instead of a draw.
    """
    _check_age(target_age)
    xb, single = _batch(model, x)
    gen = as_generator(rng)
    post = encode(model, xb)
    eps = torch.randn(post.irrel.mean.shape, generator=gen, dtype=xb.dtype)
    z_I = reparameterize(post.irrel, eps)
    z_R = _age_latent(model, target_age, xb.shape[0], gen, deterministic, xb.dtype)
    out = decode(model, z_R, z_I)
    return out[0] if single else out


@torch.no_grad()
def age_generate_from_noise(model: UVAModel, target_age, rng, n: int | None = None):
    """Sample both latent parts from their priors. ``n=None`` returns one image."""
    _check_age(target_age)
    gen = as_generator(rng)
    dtype = next(model.parameters()).dtype
    k = 1 if n is None else int(n)
    z_R = _age_latent(model, target_age, k, gen, False, dtype)
    z_I = torch.randn((k, model.cfg.latent_dim), generator=gen, dtype=dtype)
    out = decode(model, z_R, z_I)
    return out[0] if n is None else out


@torch.no_grad()
def age_generate_conditioned(model: UVAModel, x, rng):
    """Keep the input's sampled age code, draw a fresh age-irrelevant code."""
    xb, single = _batch(model, x)
    gen = as_generator(rng)
    post = encode(model, xb)
    eps = torch.randn(post.age.mean.shape, generator=gen, dtype=xb.dtype)
    z_R = reparameterize(post.age, eps)
    z_I = torch.randn(post.irrel.mean.shape, generator=gen, dtype=xb.dtype)
    out = decode(model, z_R, z_I)
    return out[0] if single else out


@torch.no_grad()
def age_estimate(model: UVAModel, x):
    """Mean of the age-related posterior mean, in years. Float for one image."""
    xb, single = _batch(model, x)
    est = encode(model, xb).age.mean.mean(dim=-1) / _scale(model)
    return float(est[0]) if single else est


@torch.no_grad()
def age_estimate_spread(model: UVAModel, x):
    """Per-image standard deviation of the mu_R coordinates (estimator diagnostic)."""
    xb, single = _batch(model, x)
    s = encode(model, xb).age.mean.std(dim=-1) / _scale(model)
    return float(s[0]) if single else s


def estimate_in_batches(model, images, batch_size: int = 256):
    parts = [age_estimate(model, images[i:i + batch_size]) for i in range(0, len(images), batch_size)]
    return torch.cat(parts) if parts else torch.empty(0)
