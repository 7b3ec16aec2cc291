"""
Training a desk-scale model, then aging glyphs with it
======================================================

Trains the 32x32 desk preset for a short run (pass a step count to train
longer; about 2,000 steps are needed for clean results, roughly 15 minutes
on one CPU core) and then exercises translation, generation and estimation.
"""

import sys
from pathlib import Path

import numpy as np
import torch

from uva.data import AgeDistributionSpec, generate_glyph_dataset, save_image, stack
from uva.inference import age_estimate, age_generate_conditioned, age_generate_from_noise, age_translate
from uva.metrics import cumulative_accuracy, mae
from uva.training import preset, train_loop

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
out = Path(sys.argv[2] if len(sys.argv) > 2 else "train_demo")

ages = AgeDistributionSpec("uniform", 0, 100)
train = generate_glyph_dataset(5000, ages, 32, seed=1)
test = generate_glyph_dataset(500, ages, 32, seed=99)

arch, cfg = preset("desk", steps=steps, seed=7)


def progress(step, rep):
    if step % 50 == 0:
        print(f"step {step:5d}  rec {rep.rec:8.2f}  age_kl {rep.age_kl:6.2f}  adv_E {rep.adv_E:7.2f}")


ckpt, rows = train_loop(train, cfg, arch, out_dir=out, callback=progress)
model = ckpt.model

# estimation: the mean of the age code
x, y = stack(test)
pred = age_estimate(model, x)
print(f"MAE {mae(pred, y):.2f}  CA(5) {cumulative_accuracy(pred, y, 5):.1f}%")

# translation: keep the identity code, swap the age code
gen = torch.Generator().manual_seed(0)
rows_out = []
for i in range(6):
    outs = [age_translate(model, x[i], float(t), gen) for t in (0, 25, 50, 75, 100)]
    rows_out.append(torch.cat([x[i]] + outs, dim=2))
save_image(torch.cat(rows_out, dim=1).numpy(), out / "translations.png")
print("translation grid saved (input, then targets 0/25/50/75/100)")

# generation from noise at a fixed age, and conditioned on an input's age code
noise = torch.cat(list(age_generate_from_noise(model, 70.0, gen, n=8)), dim=2)
cond = torch.cat([age_generate_conditioned(model, x[0], gen) for _ in range(8)], dim=2)
save_image(torch.cat([noise, cond], dim=1).numpy(), out / "generations.png")
print("estimated age of noise samples at 70:", np.round(age_estimate(model, age_generate_from_noise(model, 70.0, gen, n=8)).numpy(), 1))
