"""
The split latent space
======================

Two Gaussian posteriors per image: one pulled toward the age, one toward
the standard normal. This walks through the closed-form KL terms and the
reparameterised draw.
"""

import numpy as np
import torch

from uva.latent import GaussianDiag, kl_age, kl_standard, reparameterize, sample_age_prior

# a posterior that already sits on its prior has zero divergence
q = GaussianDiag.from_stddev(torch.zeros(4), torch.ones(4))
print("KL to N(0, I):", float(kl_standard(q)))

# shifting the mean by one unit in a single coordinate costs exactly 1/2
q = GaussianDiag.from_stddev(torch.tensor([1.0, 0, 0, 0]), torch.ones(4))
print("KL after a unit shift:", float(kl_standard(q)))

# the age prior is N(y 1, I): every coordinate is pulled toward the label
q_age = GaussianDiag.from_stddev(torch.full((4,), 35.0), torch.ones(4))
print("age KL at y=35:", float(kl_age(q_age, 35.0)), " at y=33:", float(kl_age(q_age, 33.0)))

# check one value against a Monte-Carlo estimate
rng = np.random.default_rng(0)
mu, sd = np.array([0.5, -1.0]), np.array([0.7, 1.3])
z = mu + sd * rng.standard_normal((200_000, 2))
log_ratio = (-0.5 * ((z - mu) / sd) ** 2 - np.log(sd) + 0.5 * z**2).sum(1)
exact = float(kl_standard(GaussianDiag.from_stddev(torch.tensor(mu), torch.tensor(sd))))
print(f"closed form {exact:.4f}  vs  sampled {log_ratio.mean():.4f}")

# z = mu + eps * sigma keeps the draw differentiable in mu and sigma
mean = torch.tensor([2.0, -1.0], requires_grad=True)
std = torch.tensor([0.5, 3.0], requires_grad=True)
z = reparameterize(GaussianDiag.from_stddev(mean, std), torch.tensor([1.0, -1.0]))
z.sum().backward()
print("z =", z.tolist(), " d/dsigma =", std.grad.tolist())

# age-prior draws centre on the label
draws = sample_age_prior(60.0, 8, rng=1, n=10_000)
print("mean of N(60 1, I) draws:", round(float(draws.mean()), 3))
