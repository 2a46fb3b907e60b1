import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lrfact import Activation, Conv, Flatten, Linear, Model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def f32(x):
    return np.asarray(x, dtype=np.float32)


def low_rank_matrix(rng, m, n, r):
    """Random m x n float32 matrix with true rank exactly r (w.h.p.)."""
    a = rng.uniform(-1.0, 1.0, (m, r))
    b = rng.uniform(-1.0, 1.0, (r, n))
    return (a @ b).astype(np.float32)


def make_mlp(rng, name="mlp", widths=(16, 32, 8), bias=True):
    """Linear/relu stack; widths[0] is the input width."""
    layers = []
    for i, (n, m) in enumerate(zip(widths[:-1], widths[1:])):
        layers.append(
            Linear(
                name=f"fc{i}",
                weight=rng.uniform(-1.0, 1.0, (m, n)).astype(np.float32),
                bias=rng.uniform(-1.0, 1.0, m).astype(np.float32) if bias else None,
            )
        )
        if i < len(widths) - 2:
            layers.append(Activation(name=f"act{i}"))
    return Model(name=name, input_shape=(widths[0],), layers=tuple(layers))


def make_cnn(rng, name="cnn", dims=2, in_shape=None):
    """Small conv/relu/flatten/linear model for the given conv dimensionality."""
    if in_shape is None:
        in_shape = (2,) + (8,) * dims
    conv = Conv(
        name="conv0",
        weight=rng.uniform(-1.0, 1.0, (in_shape[0], 6) + (3,) * dims).astype(np.float32),
        bias=rng.uniform(-1.0, 1.0, 6).astype(np.float32),
        stride=(1,) * dims,
        padding=(1,) * dims,
        dilation=(1,) * dims,
    )
    layers = [conv, Activation(name="act0"), Flatten(name="flat")]
    model = Model(name=name, input_shape=in_shape, layers=tuple(layers))
    flat = model.output_shape()[0]
    head = Linear(
        name="head",
        weight=rng.uniform(-1.0, 1.0, (4, flat)).astype(np.float32),
        bias=rng.uniform(-1.0, 1.0, 4).astype(np.float32),
    )
    return model.with_layers(layers + [head])
