import numpy as np
import pytest
import torch

ACCEPTANCE_LINES = []


def record(criterion: str, passed: bool, detail: str):
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def f64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


def central_diff(fn, x: torch.Tensor, h: float = 1e-5) -> torch.Tensor:
    """Central finite-difference gradient of scalar ``fn`` at ``x`` (float64)."""
    x = x.detach().clone()
    g = torch.zeros_like(x)
    flat, gflat = x.view(-1), g.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + h
        up = float(fn(x))
        flat[i] = old - h
        down = float(fn(x))
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    a, b = torch.as_tensor(a).double().flatten(), torch.as_tensor(b).double().flatten()
    denom = max(a.norm().item(), b.norm().item(), 1e-12)
    return (a - b).norm().item() / denom


# ---------------------------------------------------------------------------
# trained desk models shared by the acceptance and trained-model tests

UNIFORM_AGES = "uniform:0:100"
TAILED_AGES = "long-tailed:20:80:1.5"
TRAIN_SEED, DATA_SEED, HELDOUT_SEED = 7, 1, 99


class TrainedRun:
    def __init__(self, ckpt, rows, train_set, heldout):
        self.ckpt, self.rows, self.train_set, self.heldout = ckpt, rows, train_set, heldout
        self.model = ckpt.model


def _trained(name, ages_text, tmp_path_factory):
    """Train (or, with UVA_ACCEPTANCE_DIR set, reuse) a seed-pinned 2,000-step desk run."""
    import os
    from pathlib import Path

    from uva.data import AgeDistributionSpec, generate_glyph_dataset
    from uva.training import load_checkpoint, preset, read_loss_log, train_loop

    spec = AgeDistributionSpec.parse(ages_text)
    train_set = generate_glyph_dataset(5000, spec, 32, seed=DATA_SEED)
    heldout = generate_glyph_dataset(1000, spec, 32, seed=HELDOUT_SEED)
    base = os.environ.get("UVA_ACCEPTANCE_DIR")
    out = Path(base) / name if base else tmp_path_factory.mktemp(name)
    final = out / "ckpt-final.uva"
    if not (final.exists() and (out / "loss.csv").exists()):
        arch, cfg = preset("desk", steps=2000, seed=TRAIN_SEED)
        train_loop(train_set, cfg, arch, out_dir=out)
    return TrainedRun(load_checkpoint(final), read_loss_log(out / "loss.csv"), train_set, heldout)


@pytest.fixture(scope="session")
def uniform_run(tmp_path_factory):
    return _trained("uniform", UNIFORM_AGES, tmp_path_factory)


@pytest.fixture(scope="session")
def tailed_run(tmp_path_factory):
    return _trained("tailed", TAILED_AGES, tmp_path_factory)
