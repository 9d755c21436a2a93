import math
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from asymnets.checkpoint import ModelCheckpoint
from asymnets.data import gaussian_blobs
from asymnets.nn import ModelConfig, build_model

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = Path(__file__).resolve().parent.parent
MNIST_DIR = ROOT / "data" / "mnist"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def blobs():
    return gaussian_blobs(3, 40, 4, 3.0, seed=0)


def min_n_fix(d1: int, d2: int) -> int:
    """Smallest per-row fixed count that still allows ``d2`` distinct mask rows."""
    return next(k for k in range(1, d1) if math.comb(d1, k) >= d2)


def small_ckpt(mode="standard", widths=(4, 6, 5, 3), init_seed=0, asym_seed=0, **kw) -> ModelCheckpoint:
    widths = list(widths)
    if mode == "w_asym":
        kw.setdefault("n_fix", [min_n_fix(a, b) for a, b in zip(widths, widths[1:])])
        kw.setdefault("kappa", [1.0] * (len(widths) - 1))
    if mode == "sigma_asym":
        kw.setdefault("nonlinearity", "figlu")
    cfg = ModelConfig(widths, mode, asym_seed=asym_seed, init_seed=init_seed, **kw)
    return ModelCheckpoint.from_model(build_model(cfg))


def perturbed(ckpt: ModelCheckpoint, seed: int, scale: float = 0.5) -> ModelCheckpoint:
    """Same checkpoint with every parameter jittered (gains and biases move off their defaults)."""
    r = np.random.default_rng(seed)
    masks = ckpt.trainable_masks()
    params = {}
    for k, v in ckpt.params.items():
        new = v + scale * r.normal(size=v.shape)
        params[k] = new if masks[k] is None else np.where(masks[k], new, 0.0)
    return ckpt.with_params(params)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
