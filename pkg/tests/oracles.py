"""Independent reference computations shared by unit and acceptance tests."""
import itertools
from fractions import Fraction

import numpy as np
from scipy import stats
import torch

from uva.networks import ArchitectureConfig, decode, encode, init_params
from uva.training import RngStreams

GRAD_CFG = ArchitectureConfig(input_size=8, base_channels=2, max_channels=2, latent_dim=4, seed=0)
E_TERMS = ("rec", "age_kl", "kl_irrel", "reg", "adv_E")
G_TERMS = ("rec", "adv_G", "age_keep")


def _kl(mu, logvar, prior_mean=0.0):
    return 0.5 * ((mu - prior_mean) ** 2 + logvar.exp() - logvar - 1).sum(-1)


def loss_terms(model, x, y, noise, alpha, margin, fakes=None):
    """Loss terms written out from the model definition, without the losses module.

    ``noise`` is ``(eps_R, eps_I, zhat_I)``. When ``fakes`` is given, the
    encoder scores those images instead of freshly generated ones.
    """
    eps_R, eps_I, zhat = noise
    n, C = x.shape[0], model.cfg.latent_dim
    h = model.encoder(x)
    mu_R, lv_R, mu_I, lv_I = h[:, :C], h[:, C:2 * C], h[:, 2 * C:3 * C], h[:, 3 * C:]
    z_R = mu_R + eps_R * (0.5 * lv_R).exp()
    z_I = mu_I + eps_I * (0.5 * lv_I).exp()
    x_r = model.generator(torch.cat([z_R, z_I], 1))
    x_s = model.generator(torch.cat([z_R, zhat], 1))
    f = torch.cat([x_r, x_s]) if fakes is None else fakes
    hf = model.encoder(f)
    fmu_R, fmu_I, flv_I = hf[:, :C], hf[:, 2 * C:3 * C], hf[:, 3 * C:]
    kl_real = _kl(mu_I, lv_I)
    kl_fake = _kl(fmu_I, flv_I)
    hinge = lambda v: torch.clamp(margin - v, min=0.0)
    gap = lambda mu: (mu.mean(1) - y).abs().mean()
    return {
        "rec": 0.5 * ((x - x_r) ** 2).sum((1, 2, 3)).mean(),
        "age_kl": _kl(mu_R, lv_R, y[:, None]).mean(),
        "kl_irrel": kl_real.mean(),
        "reg": gap(mu_R),
        "adv_E": (kl_real + alpha * (hinge(kl_fake[:n]) + hinge(kl_fake[n:]))).mean(),
        "adv_G": (kl_fake[:n] + kl_fake[n:]).mean(),
        "age_keep": gap(fmu_R[:n]) + gap(fmu_R[n:]),
    }, torch.cat([x_r, x_s])


def noise_for(seed, n, C, dtype=torch.float64):
    r = RngStreams(seed)
    return (torch.randn((n, C), generator=r.eps_R, dtype=dtype),
            torch.randn((n, C), generator=r.eps_I, dtype=dtype),
            torch.randn((n, C), generator=r.prior, dtype=dtype))


def fd_term_gradients(model, x, y, noise, alpha, margin, h=1e-5):
    """Central differences of every term wrt every parameter.

    Encoder-side terms are differentiated wrt encoder params with generated
    images frozen at their unperturbed value; generator-side terms wrt
    generator params with the encoder fixed.
    """
    with torch.no_grad():
        _, fakes0 = loss_terms(model, x, y, noise, alpha, margin)
    out = {}
    for side, params, names in (("E", model.encoder_params(), E_TERMS),
                                ("G", model.generator_params(), G_TERMS)):
        fixed = fakes0 if side == "E" else None
        res = {t: {} for t in names}
        for pname, p in params.items():
            fd = {t: torch.zeros_like(p) for t in names}
            for idx in itertools.product(*(range(k) for k in p.shape)):
                old = p.data[idx].item()
                vals = []
                for v in (old + h, old - h):
                    p.data[idx] = v
                    with torch.no_grad():
                        vals.append(loss_terms(model, x, y, noise, alpha, margin, fixed)[0])
                p.data[idx] = old
                for t in names:
                    fd[t][idx] = (vals[0][t] - vals[1][t]).item() / (2 * h)
            for t in names:
                res[t][pname] = fd[t]
        out[side] = res
    return out


def analytic_term_gradients(model, x, y, seed, weights):
    """Per-term gradients through the training module's own code paths."""
    from uva.training import RngStreams, compute_losses, generator_gradients

    terms = compute_losses(model, x, y, weights, RngStreams(seed))
    enc = model.encoder_params()
    out = {"E": {}, "G": {}}
    for t in E_TERMS:
        g = torch.autograd.grad(terms[t], list(enc.values()), retain_graph=True, allow_unused=True)
        out["E"][t] = {n: (gi if gi is not None else torch.zeros_like(p))
                       for (n, p), gi in zip(enc.items(), g)}
    out["G"]["rec"] = generator_gradients(model, terms, None, include_rec=True)
    for t in ("adv_G", "age_keep"):
        out["G"][t] = generator_gradients(model, terms, terms[t], include_rec=False)
    return out


def grad_instance(k):
    """Random float64 model, batch and labels for gradient instance ``k``."""
    model = init_params(GRAD_CFG, 100 + k, dtype=torch.float64)
    g = torch.Generator().manual_seed(200 + k)
    x = torch.rand(2, 3, 8, 8, generator=g, dtype=torch.float64)
    y = torch.rand(2, generator=g, dtype=torch.float64) * 3
    return model, x, y


def max_rel_err(a: dict, b: dict):
    va = torch.cat([t.flatten() for t in a.values()]).double()
    vb = torch.cat([b[k].flatten() for k in a]).double()
    denom = max(va.norm().item(), vb.norm().item())
    return 0.0 if denom == 0 else (va - vb).norm().item() / denom


def brute_mae(pred, truth):
    """Exact rational mean of the absolute errors, rounded once."""
    s = Fraction(0)
    for p, t in zip(pred, truth):
        s += Fraction(abs(float(p) - float(t)))
    return float(s / len(pred))


def brute_ca(pred, truth, n):
    hits = 0
    for p, t in zip(pred, truth):
        if abs(p - t) < n:
            hits += 1
    return 100.0 * hits / len(pred)


def w2_monte_carlo(m1, s1, m2, s2, n, rng):
    """Monte-Carlo W2^2 between 1-D Gaussians: average of (F1^-1(u) - F2^-1(u))^2 over uniform u."""
    u = rng.uniform(size=n)
    return float(np.mean((stats.norm.ppf(u, m1, s1) - stats.norm.ppf(u, m2, s2)) ** 2))
