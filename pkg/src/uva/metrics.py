"""MAE, cumulative accuracy, diagonal-Gaussian Frechet distance and the
aging-accuracy group protocol."""
from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .errors import InvalidArgumentError

# (label, low, high); high None means open-ended
PAPER_GROUPS = (("AG0", 0, 30), ("AG1", 31, 40), ("AG2", 41, 50), ("AG3", 51, None))
OPEN_GROUP_TARGET = 60.0


def _pair(pred, truth):
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.size == 0 or p.size != t.size:
        raise InvalidArgumentError(f"need equal nonempty lengths, got {p.size} and {t.size}")
    return p, t


def mae(pred, truth) -> float:
    """Mean absolute error, correctly rounded (exact summation)."""
    p, t = _pair(pred, truth)
    return float(statistics.mean(np.abs(p - t).tolist()))


def cumulative_accuracy(pred, truth, n: float) -> float:
    """Percentage of predictions whose absolute error is strictly below ``n`` years."""
    if n < 0:
        raise InvalidArgumentError("n must be >= 0")
    p, t = _pair(pred, truth)
    return 100.0 * float(np.count_nonzero(np.abs(p - t) < n)) / p.size


def frechet_gaussian_distance(stats1, stats2) -> float:
    """||m1 - m2||^2 + sum (sqrt(v1) - sqrt(v2))^2 for diagonal Gaussians."""
    m1, v1 = (np.atleast_1d(np.asarray(a, dtype=np.float64)) for a in stats1)
    m2, v2 = (np.atleast_1d(np.asarray(a, dtype=np.float64)) for a in stats2)
    if not (m1.shape == v1.shape == m2.shape == v2.shape):
        raise InvalidArgumentError("statistics must share one dimension")
    if np.any(v1 < 0) or np.any(v2 < 0):
        raise InvalidArgumentError("variances must be nonnegative")
    return float(np.sum((m1 - m2) ** 2) + np.sum((np.sqrt(v1) - np.sqrt(v2)) ** 2))


@torch.no_grad()
def feature_stats(model, images, batch_size: int = 256):
    """Per-coordinate mean and sample variance of the age-irrelevant posterior mean."""
    from .networks import encode

    if len(images) < 2:
        raise InvalidArgumentError("need at least two images")
    dtype = next(model.parameters()).dtype
    feats = []
    for i in range(0, len(images), batch_size):
        xb = torch.as_tensor(np.asarray(images[i:i + batch_size])).to(dtype)
        feats.append(encode(model, xb).irrel.mean.double())
    f = torch.cat(feats).numpy()
    return f.mean(axis=0), f.var(axis=0, ddof=1)


@dataclass
class GroupRow:
    name: str
    low: float
    high: float | None
    target_age: float
    real_mean_age: float | None   # mean label of test images in the group
    real_count: int
    translated_mean_age: float | None  # mean estimate of inputs translated to target_age

    def to_dict(self):
        return asdict(self)


def group_target(low, high) -> float:
    return OPEN_GROUP_TARGET if high is None else 0.5 * (low + high)


def _members(ages, low, high):
    a = np.floor(np.asarray(ages, dtype=np.float64))
    m = a >= low
    if high is not None:
        m &= a <= high
    return m


@torch.no_grad()
def aging_accuracy_by_group(model, test_set, groups=PAPER_GROUPS, seed: int = 0,
                            batch_size: int = 256):
    """Translate every input-group image to each target group's midpoint age.

    ``groups[0]`` is the input group, the rest are targets. Returns
    ``(input_row, target_rows)``; the input row's ``translated_mean_age`` is
    the mean estimate of the unmodified inputs.
    """
    from .inference import age_estimate, age_translate
    from .latent import as_generator

    if len(groups) < 2:
        raise InvalidArgumentError("need an input group and at least one target group")
    ages = np.array([d.age for d in test_set], dtype=np.float64)
    name0, lo0, hi0 = groups[0]
    sel = np.flatnonzero(_members(ages, lo0, hi0))
    if sel.size == 0:
        raise InvalidArgumentError(f"no test images in input group {name0}")
    x = torch.from_numpy(np.stack([test_set[i].image for i in sel]))
    gen = as_generator(seed)

    def est_all(batch_fn):
        out = []
        for i in range(0, len(x), batch_size):
            out.append(age_estimate(model, batch_fn(x[i:i + batch_size])))
        return float(torch.cat(out).double().mean())

    input_row = GroupRow(name0, lo0, hi0, group_target(lo0, hi0), float(ages[sel].mean()),
                         int(sel.size), est_all(lambda b: b))
    rows = []
    for name, lo, hi in groups[1:]:
        members = _members(ages, lo, hi)
        target = group_target(lo, hi)
        rows.append(GroupRow(
            name, lo, hi, target,
            float(ages[members].mean()) if members.any() else None,
            int(members.sum()),
            est_all(lambda b, t=target: age_translate(model, b, t, gen)),
        ))
    return input_row, rows


@torch.no_grad()
def evaluate(model, test_set, ca_ns=(3, 5, 7), seed: int = 0, groups=PAPER_GROUPS,
             truth=None, config=None) -> dict:
    """Build the evaluation report (MAE, CA(n), FID-lite, aging accuracy)."""
    from .inference import age_generate_from_noise, estimate_in_batches

    images = np.stack([d.image for d in test_set])
    labels = np.array([d.age for d in test_set]) if truth is None else np.asarray(truth)
    pred = estimate_in_batches(model, torch.from_numpy(images)).double().numpy()
    report = {
        "mae": mae(pred, labels),
        "ca": {str(n): cumulative_accuracy(pred, labels, n) for n in ca_ns},
    }
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    fakes = torch.cat([age_generate_from_noise(model, float(np.clip(a, 0, 120)), gen, n=1)
                       for a in labels])
    if len(test_set) >= 2:
        report["fid_lite"] = frechet_gaussian_distance(
            feature_stats(model, images), feature_stats(model, fakes.numpy()))
    else:
        report["fid_lite"] = None
    try:
        inp, rows = aging_accuracy_by_group(model, test_set, groups, seed=seed)
        report["aging_accuracy"] = {"input": inp.to_dict(), "groups": [r.to_dict() for r in rows]}
    except InvalidArgumentError as exc:
        report["aging_accuracy"] = {"error": str(exc)}
    report["config"] = dict(config or {}, seed=seed, ca=list(ca_ns))
    return report
