"""Alternating encoder/generator training, Adam, checkpoints and loss logs."""
from __future__ import annotations

import csv
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses as L
from .errors import (CheckpointCorruptError, InvalidArgumentError,
                     TrainingDivergenceError, UnsupportedVersionError)
from .latent import kl_age, kl_standard, reparameterize
from .networks import ArchitectureConfig, UVAModel, decode, encode, init_params

log = logging.getLogger(__name__)

MAGIC_PREFIX = b"UVACKPT"
FORMAT_VERSION = 1
MAGIC = MAGIC_PREFIX + str(FORMAT_VERSION).encode()
LOG_HEADER = ["step", *L.LossReport.FIELDS]


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.99
    batch_size: int = 28
    steps: int = 2000
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    seed: int = 0
    checkpoint_every: int = 0      # 0 disables periodic checkpoints
    age_scale: float = 1.0
    grad_clip: float = 100.0       # global-norm clip; 0 disables
    early_stop: bool = False
    early_stop_window: int = 200
    early_stop_tol: float = 1e-3

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = L.LossWeights(**self.weights)
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise InvalidArgumentError("learning_rate must be finite and >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidArgumentError("betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if self.steps < 0:
            raise InvalidArgumentError("steps must be >= 0")
        if not (self.age_scale > 0 and math.isfinite(self.age_scale)):
            raise InvalidArgumentError("age_scale must be positive")

    def to_dict(self):
        return asdict(self)


PRESETS = {
    # reference values from the paper's experimental settings
    "paper": dict(arch=dict(input_size=256, base_channels=16, max_channels=512, latent_dim=256),
                  weights=dict(margin=1000.0)),
    # KL magnitudes scale with C, so the margin shrinks with the latent width;
    # ages enter the latent prior in tenths of years so the short run can fit
    # them, and alpha also damps the generator's adversarial term, which keeps
    # the reconstruction loss from oscillating over a 2,000-step budget
    "desk": dict(arch=dict(input_size=32, base_channels=16, max_channels=128, latent_dim=32),
                 weights=dict(margin=120.0, alpha_on_generator=True), train=dict(age_scale=0.1)),
}


def preset(name: str, **overrides):
    """Return ``(ArchitectureConfig, TrainConfig)`` for a named preset."""
    if name not in PRESETS:
        raise InvalidArgumentError(f"unknown preset {name!r}")
    p = PRESETS[name]
    arch_kw = dict(p["arch"])
    arch_kw.update({k: overrides.pop(k) for k in list(overrides) if k in ArchitectureConfig.__dataclass_fields__})
    w = L.LossWeights(**{**p["weights"], **overrides.pop("weights", {})})
    train_kw = {**p.get("train", {}), **overrides}
    return ArchitectureConfig(**arch_kw), TrainConfig(weights=w, **train_kw)


# ----------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(params: dict, grads: dict, state: AdamState, lr: float,
                beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8):
    """One bias-corrected Adam step applied in place. Returns ``(params, state)``."""
    if state.step < 0:
        raise InvalidArgumentError("optimizer step must be >= 0")
    for name, g in grads.items():
        if name not in params:
            raise InvalidArgumentError(f"gradient for unknown parameter {name!r}")
        if not bool(torch.isfinite(g).all()):
            raise TrainingDivergenceError(f"non-finite gradient for parameter {name}", term=name)
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = torch.zeros_like(p)
            m = state.m.get(name)
            if m is None:
                m = state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            v = state.v[name]
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))
    return params, state


def _clip(grads: list, max_norm: float):
    if max_norm <= 0:
        return grads
    total = torch.sqrt(sum((g.detach().double() ** 2).sum() for g in grads))
    if total > max_norm:
        scale = max_norm / (float(total) + 1e-12)
        grads = [g * scale for g in grads]
    return grads


# ----------------------------------------------------------------------------
# one step


class RngStreams:
    """Independent generators per role, all forked from one seed."""

    ROLES = ("init", "shuffle", "eps_R", "eps_I", "prior")

    def __init__(self, seed: int):
        children = np.random.SeedSequence(int(seed)).spawn(len(self.ROLES))
        for role, ss in zip(self.ROLES, children):
            g = torch.Generator()
            g.manual_seed(int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)))
            setattr(self, role, g)
        self.shuffle_seed = int(children[1].generate_state(1)[0])


def compute_losses(model: UVAModel, x, y, weights: L.LossWeights, rngs: RngStreams,
                   age_scale: float = 1.0):
    """Forward pass of one training step.

    Returns a dict of loss tensors plus the graph handles ``fakes`` (the
    generated images) and ``fakes_in`` (their detached copy fed to the
    encoder). Terms whose weight is zero are skipped and reported as 0.
    """
    w = weights
    ys = y * age_scale
    n, C = x.shape[0], model.cfg.latent_dim
    post = encode(model, x, check=False)
    eps_R = torch.randn((n, C), generator=rngs.eps_R, dtype=x.dtype)
    eps_I = torch.randn((n, C), generator=rngs.eps_I, dtype=x.dtype)
    zhat_I = torch.randn((n, C), generator=rngs.prior, dtype=x.dtype)
    z_R = reparameterize(post.age, eps_R)
    z_I = reparameterize(post.irrel, eps_I)
    # separate generator calls keep the encoder-gradient backward to the x_r half
    x_r = decode(model, z_R, z_I)
    x_s = decode(model, z_R, zhat_I)
    fakes = torch.cat([x_r, x_s])

    out = {"fakes": fakes}
    zero = x.new_zeros(())
    out["rec"] = L.reconstruction_loss(x, x_r)
    out["age_kl"] = kl_age(post.age, ys).mean() if w.lambda1 > 0 else zero
    out["reg"] = L.age_regularization(post.age.mean, ys) if w.lambda3 > 0 else zero
    kl_real = kl_standard(post.irrel)
    out["kl_irrel"] = kl_real.mean()

    need_fake_E = w.lambda2 > 0 and w.alpha > 0
    need_fake_G = w.lambda4 > 0 or w.lambda5 > 0
    if need_fake_E or need_fake_G:
        # the encoder sees generated images as constants; generator gradients
        # are routed back through ``fakes_in`` by the caller
        fakes_in = fakes.detach().requires_grad_(need_fake_G)
        pf = encode(model, fakes_in, check=False)
        kl_fake = kl_standard(pf.irrel)
        kl_r, kl_s = kl_fake[:n], kl_fake[n:]
        out["fakes_in"] = fakes_in
        out["adv_E"] = L.encoder_adversarial_loss(kl_real, kl_r, kl_s, w) if w.lambda2 > 0 else zero
        out["adv_G"] = L.generator_adversarial_loss(kl_r, kl_s, w) if w.lambda4 > 0 else zero
        out["age_keep"] = (L.age_preserving_loss(pf.age.mean[:n], pf.age.mean[n:], ys)
                           if w.lambda5 > 0 else zero)
    else:
        out["fakes_in"] = None
        out["adv_E"] = L.encoder_adversarial_loss(kl_real, 0.0, 0.0, w) if w.lambda2 > 0 else zero
        out["adv_G"] = zero
        out["age_keep"] = zero
    return out


def _as_report(terms, w) -> L.LossReport:
    rep = L.LossReport(**{k: terms[k] for k in ("rec", "age_kl", "kl_irrel", "adv_E", "adv_G", "reg", "age_keep")})
    rep.total_E = L.total_encoder_loss(rep, w)
    rep.total_G = L.total_generator_loss(rep, w)
    return rep


def generator_gradients(model: UVAModel, terms: dict, side, include_rec: bool = True):
    """Gradient wrt generator params of ``side`` (a function of the re-encoded
    fakes, encoder frozen), optionally plus L_rec. Returns a name -> tensor dict."""
    gen = model.generator_params()
    outputs, grad_outputs = [], []
    if include_rec:
        outputs.append(terms["rec"])
        grad_outputs.append(torch.ones_like(terms["rec"]))
    fakes_in = terms["fakes_in"]
    if fakes_in is not None and fakes_in.requires_grad and torch.is_tensor(side) and side.requires_grad:
        (g_fake,) = torch.autograd.grad(side, fakes_in, retain_graph=True)
        outputs.append(terms["fakes"])
        grad_outputs.append(g_fake)
    if outputs:
        grads = torch.autograd.grad(outputs, list(gen.values()), grad_outputs=grad_outputs,
                                    retain_graph=True, allow_unused=True)
    else:
        grads = [None] * len(gen)
    return {n: (g if g is not None else torch.zeros_like(p)) for (n, p), g in zip(gen.items(), grads)}


def loss_gradients(model: UVAModel, terms: dict, w: L.LossWeights):
    """Gradients of the encoder objective wrt encoder params and of the
    generator objective wrt generator params (encoder frozen)."""
    rep = _as_report(terms, w)
    enc = model.encoder_params()
    gE = torch.autograd.grad(rep.total_E, list(enc.values()), retain_graph=True, allow_unused=True)
    gE = {n: (g if g is not None else torch.zeros_like(p)) for (n, p), g in zip(enc.items(), gE)}
    side = w.lambda4 * terms["adv_G"] + w.lambda5 * terms["age_keep"]
    return rep, gE, generator_gradients(model, terms, side)


@dataclass
class Optimizers:
    encoder: AdamState = field(default_factory=AdamState)
    generator: AdamState = field(default_factory=AdamState)


def train_step(model: UVAModel, batch, cfg: TrainConfig, rngs: RngStreams,
               opt: Optimizers | None = None) -> L.LossReport:
    """Encode, sample, generate, score, then update E followed by G."""
    x, y = batch
    if x.shape[0] < 1:
        raise InvalidArgumentError("empty batch")
    if not bool(torch.isfinite(y).all()):
        raise InvalidArgumentError("ages must be finite")
    opt = opt if opt is not None else Optimizers()
    w = cfg.weights
    terms = compute_losses(model, x, y, w, rngs, cfg.age_scale)
    rep, gE, gG = loss_gradients(model, terms, w)
    for k in L.LossReport.FIELDS:
        v = getattr(rep, k)
        if not bool(torch.isfinite(torch.as_tensor(v)).all()):
            raise TrainingDivergenceError(f"non-finite loss term {k}", term=k)

    for params, grads, state in ((model.encoder_params(), gE, opt.encoder),
                                 (model.generator_params(), gG, opt.generator)):
        names = list(grads)
        clipped = _clip([grads[n] for n in names], cfg.grad_clip)
        adam_update(params, dict(zip(names, clipped)), state, cfg.learning_rate, cfg.beta1, cfg.beta2)
    return rep.detached()


# ----------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    model: UVAModel
    optimizers: Optimizers
    step: int
    train_config: TrainConfig
    arch_config: ArchitectureConfig


def _tensor_table(ckpt: Checkpoint):
    table = [("params/" + n, p) for n, p in ckpt.model.named_parameters()]
    for role, st in (("encoder", ckpt.optimizers.encoder), ("generator", ckpt.optimizers.generator)):
        for n in sorted(st.m):
            table.append((f"adam/{role}/m/{n}", st.m[n]))
            table.append((f"adam/{role}/v/{n}", st.v[n]))
    return table


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write magic, length-prefixed JSON manifest, then float32 LE payloads."""
    path = Path(path)
    blobs, directory, offset = [], [], 0
    for name, t in _tensor_table(ckpt):
        data = t.detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()
        directory.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    manifest = {
        "format_version": FORMAT_VERSION,
        "arch_config": ckpt.arch_config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "step": ckpt.step,
        "optimizer_steps": {"encoder": ckpt.optimizers.encoder.step,
                            "generator": ckpt.optimizers.generator.step},
        "payload_bytes": offset,
        "tensors": directory,
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(mbytes)))
            fh.write(mbytes)
            for b in blobs:
                fh.write(b)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + 8 or not raw.startswith(MAGIC_PREFIX):
        raise CheckpointCorruptError(f"{path}: bad magic bytes")
    if raw[: len(MAGIC)] != MAGIC:
        raise UnsupportedVersionError(f"{path}: unsupported checkpoint version {raw[7:8]!r}")
    (mlen,) = struct.unpack("<Q", raw[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    if start + mlen > len(raw):
        raise CheckpointCorruptError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[start:start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"{path}: unreadable manifest ({exc})") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported format_version {manifest.get('format_version')}")
    payload = raw[start + mlen:]
    if len(payload) != manifest["payload_bytes"]:
        raise CheckpointCorruptError(
            f"{path}: payload is {len(payload)} bytes, manifest says {manifest['payload_bytes']}"
        )
    arch = ArchitectureConfig(**manifest["arch_config"])
    tcfg = TrainConfig(**manifest["train_config"])
    model = UVAModel(arch)
    model.age_scale = tcfg.age_scale
    params = dict(model.named_parameters())
    opt = Optimizers(AdamState(manifest["optimizer_steps"]["encoder"]),
                     AdamState(manifest["optimizer_steps"]["generator"]))
    seen = set()
    for entry in manifest["tensors"]:
        a, b = entry["offset"], entry["offset"] + entry["nbytes"]
        arr = np.frombuffer(payload[a:b], dtype="<f4")
        if arr.size != int(np.prod(entry["shape"], dtype=np.int64)):
            raise CheckpointCorruptError(f"{path}: tensor {entry['name']} has wrong size")
        t = torch.from_numpy(arr.copy()).reshape(entry["shape"])
        name = entry["name"]
        if name.startswith("params/"):
            p = params.get(name[7:])
            if p is None or p.shape != t.shape:
                raise CheckpointCorruptError(f"{path}: unexpected tensor {name}")
            with torch.no_grad():
                p.copy_(t)
            seen.add(name[7:])
        elif name.startswith("adam/"):
            _, role, kind, pname = name.split("/", 3)
            getattr(getattr(opt, role), kind)[pname] = t
        else:
            raise CheckpointCorruptError(f"{path}: unexpected tensor {name}")
    if seen != set(params):
        raise CheckpointCorruptError(f"{path}: missing parameters {sorted(set(params) - seen)[:3]}")
    return Checkpoint(model, opt, manifest["step"], tcfg, arch)


# ----------------------------------------------------------------------------
# loop


def write_loss_log(rows, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_HEADER)
        for step, rep in rows:
            w.writerow([step, *(repr(v) for v in rep.as_row())])
    return path


def read_loss_log(path):
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in r]


def _plateaued(recs, window, tol):
    if len(recs) < 2 * window:
        return False
    prev = float(np.mean(recs[-2 * window:-window]))
    cur = float(np.mean(recs[-window:]))
    return prev > 0 and (prev - cur) / prev < tol


def train_loop(dataset, cfg: TrainConfig, arch: ArchitectureConfig | None = None,
               out_dir=None, callback=None):
    """Run a fixed step budget; returns ``(Checkpoint, [(step, LossReport), ...])``.

    Everything random (init, shuffling, noise) derives from ``cfg.seed``.
    With ``out_dir`` set, writes ``ckpt-final.uva``, periodic checkpoints and
    ``loss.csv``.
    """
    from .data import batch_iterator

    if len(dataset) == 0:
        raise InvalidArgumentError("dataset is empty")
    arch = arch or ArchitectureConfig()
    if len(dataset) < cfg.batch_size:
        raise InvalidArgumentError(f"dataset has {len(dataset)} items, fewer than batch_size {cfg.batch_size}")
    rngs = RngStreams(cfg.seed)
    model = init_params(arch, rngs.init)
    model.age_scale = cfg.age_scale
    opt = Optimizers()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    rows, recs = [], []
    batches = batch_iterator(dataset, cfg.batch_size, seed=rngs.shuffle_seed, epochs=None)
    step = 0
    for step in range(1, cfg.steps + 1):
        rep = train_step(model, next(batches), cfg, rngs, opt)
        rows.append((step, rep))
        recs.append(rep.rec)
        if callback is not None:
            callback(step, rep)
        if out is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(Checkpoint(model, opt, step, cfg, arch), out / f"ckpt-{step:06d}.uva")
        if cfg.early_stop and _plateaued(recs, cfg.early_stop_window, cfg.early_stop_tol):
            log.info("early stop at step %d: reconstruction plateau", step)
            break
    else:
        step = cfg.steps
    ckpt = Checkpoint(model, opt, step, cfg, arch)
    if out is not None:
        save_checkpoint(ckpt, out / "ckpt-final.uva")
        write_loss_log(rows, out / "loss.csv")
    return ckpt, rows
