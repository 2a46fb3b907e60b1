"""Rank policy, the factorization gate, conv-weight rearrangement, and the
rewrite pass that replaces linear/conv layers with encoder-decoder pairs.

A weight matrix W (m x n) is replaced by factors A (m x r) and B (r x n)
only when r * (m + n) < m * n, i.e. strictly below the break-even rank
r_max = m*n / (m+n); at or above it there is no theoretical saving. For
convolutions the gate is applied to the rearranged 2-D matrix, so
m = C_in * prod(kernel) and n = C_out.
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass, field, replace

import numpy as np

from . import linalg
from .errors import LrfactError, ShapeError, SolverError
from .linalg import SnmfOptions, SvdResult
from .netgraph import CED, LED, Conv, Layer, Linear, Model, count_flops, count_params, layer_output_shape

__all__ = [
    "RankPolicy",
    "ModuleFilter",
    "FactorizeConfig",
    "ReportEntry",
    "FactorizationReport",
    "SOLVERS",
    "max_rank",
    "should_factorize",
    "resolve_rank",
    "split_sigma",
    "rearrange_conv_weight",
    "tensorize_conv_factors",
    "factorize_linear",
    "factorize_conv",
    "auto_fact",
]

SOLVERS = ("random", "svd", "snmf")


@dataclass(frozen=True)
class RankPolicy:
    """Either a fixed rank for every layer or a ratio of each layer's r_max."""

    rank: int | None = None
    ratio: float | None = None

    def __post_init__(self):
        if (self.rank is None) == (self.ratio is None):
            raise ValueError("exactly one of rank/ratio must be set")
        if self.rank is not None and self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.ratio is not None and not 0.0 < self.ratio <= 1.0:
            raise ValueError("ratio must be in (0, 1]")

    @classmethod
    def absolute(cls, r: int) -> "RankPolicy":
        return cls(rank=r)

    @classmethod
    def of_ratio(cls, rho: float) -> "RankPolicy":
        return cls(ratio=rho)


@dataclass(frozen=True)
class ModuleFilter:
    """Glob filters on layer names: eligible iff it matches include (or include
    is empty) and does not match exclude. Only ``*`` and ``?`` are supported."""

    include: tuple[str, ...] = ()
    exclude: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "include", tuple(self.include))
        object.__setattr__(self, "exclude", tuple(self.exclude))
        for pat in self.include + self.exclude:
            if any(ch in pat for ch in "[]"):
                raise ValueError(f"pattern {pat!r}: only '*' and '?' wildcards are supported")

    def matches(self, name: str) -> bool:
        if self.include and not any(fnmatch.fnmatchcase(name, p) for p in self.include):
            return False
        return not any(fnmatch.fnmatchcase(name, p) for p in self.exclude)


@dataclass(frozen=True)
class FactorizeConfig:
    solver: str = "svd"
    rank_policy: RankPolicy = field(default_factory=lambda: RankPolicy(ratio=0.5))
    filter: ModuleFilter = field(default_factory=ModuleFilter)
    seed: int = 0
    snmf_options: SnmfOptions = field(default_factory=SnmfOptions)
    sigma: str = "balanced"  # or "decoder-only": A = U, B = diag(s) V^T

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; expected one of {SOLVERS}")
        if self.sigma not in ("balanced", "decoder-only"):
            raise ValueError(f"sigma must be 'balanced' or 'decoder-only', got {self.sigma!r}")


@dataclass(frozen=True)
class ReportEntry:
    layer_name: str
    decision: str  # "factorized" | "skipped"
    skip_reason: str | None  # "rank-gate" | "filtered" | None
    rank_used: int | None
    params_before: int
    params_after: int
    flops_before: int
    flops_after: int
    rel_error: float | None


@dataclass(frozen=True)
class FactorizationReport:
    """Per-layer decision log, in model layer order."""

    entries: tuple[ReportEntry, ...]

    @property
    def totals(self) -> dict:
        return {
            "layers": len(self.entries),
            "factorized": sum(1 for e in self.entries if e.decision == "factorized"),
            "params_before": sum(e.params_before for e in self.entries),
            "params_after": sum(e.params_after for e in self.entries),
            "flops_before": sum(e.flops_before for e in self.entries),
            "flops_after": sum(e.flops_after for e in self.entries),
        }


def max_rank(m: int, n: int) -> float:
    """Break-even rank m*n / (m+n); factoring at or above it saves nothing."""
    return (m * n) / (m + n)


def should_factorize(r: int, m: int, n: int) -> bool:
    """True iff rank r strictly reduces cost: r*(m+n) < m*n, exact integers."""
    return r * (m + n) < m * n


def resolve_rank(policy: RankPolicy, m: int, n: int) -> int:
    if policy.rank is not None:
        return policy.rank
    return max(1, int(policy.ratio * m * n / (m + n)))


def split_sigma(svd: SvdResult, mode: str = "balanced"):
    """Split u diag(s) v^T into the factor pair (a, b).

    balanced: a = u sqrt(diag(s)), b = sqrt(diag(s)) v^T -- equal factor norms.
    decoder-only: a = u, b = diag(s) v^T.
    """
    s64 = svd.s.astype(np.float64)
    u64 = svd.u.astype(np.float64)
    vt64 = svd.v.astype(np.float64).T
    if mode == "balanced":
        sq = np.sqrt(s64)
        a = u64 * sq
        b = sq[:, None] * vt64
    elif mode == "decoder-only":
        a = u64
        b = s64[:, None] * vt64
    else:
        raise ValueError(f"unknown sigma split {mode!r}")
    return a.astype(np.float32), b.astype(np.float32)


def rearrange_conv_weight(w: np.ndarray) -> np.ndarray:
    """Flatten a conv weight [C_in, C_out, K1..Kd] to (C_in * prod(K)) x C_out.

    Row index is flatten(c_in, k1..kd) with c_in major, kernel indices minor
    in declared order.
    """
    if w.ndim - 2 not in (1, 2, 3):
        raise ShapeError(f"conv weight must have 1-3 kernel dims, got shape {w.shape}")
    c_in, c_out = w.shape[0], w.shape[1]
    kernel = w.shape[2:]
    # [C_in, C_out, K...] -> [C_in, K..., C_out] -> 2-D
    moved = np.moveaxis(w, 1, -1)
    return np.ascontiguousarray(moved.reshape(c_in * int(np.prod(kernel)), c_out))


def tensorize_conv_factors(a: np.ndarray, b: np.ndarray, c_in: int, kernel):
    """Inverse of the rearrangement: factor matrices back to conv tensors.

    Returns (enc [C_in, r, K...], dec [r, C_out, 1..1]).
    """
    kernel = tuple(kernel)
    size = int(np.prod(kernel))
    if a.shape[0] != c_in * size:
        raise ShapeError(
            f"encoder factor has {a.shape[0]} rows, expected C_in*prod(K) = {c_in * size}"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"factor ranks disagree: {a.shape} vs {b.shape}")
    r = a.shape[1]
    c_out = b.shape[1]
    enc = np.ascontiguousarray(np.moveaxis(a.reshape((c_in,) + kernel + (r,)), -1, 1))
    dec = np.ascontiguousarray(b.reshape((r, c_out) + (1,) * len(kernel)))
    return enc, dec


def _solve(w2d: np.ndarray, r: int, config: FactorizeConfig, seed: int):
    """Run the configured solver on a 2-D matrix. Returns (a, b, rel_error)."""
    if config.solver == "svd":
        a, b = split_sigma(linalg.truncated_svd(w2d, r), config.sigma)
        return a, b, linalg.frobenius_error(w2d, a, b)
    if config.solver == "snmf":
        opts = replace(config.snmf_options, seed=seed)
        a, b = linalg.snmf(w2d, r, opts)
        return a, b, linalg.frobenius_error(w2d, a, b)
    a, b = linalg.random_factors(w2d.shape[0], w2d.shape[1], r, seed)
    return a, b, None  # random factors do not approximate the weight


def _layer_seed(seed: int, layer_name: str) -> int:
    # 64-bit FNV-1a of the layer name, xored into the config seed: stable
    # across runs and independent of layer order.
    h = 0xCBF29CE484222325
    for byte in layer_name.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return (seed ^ h) & 0xFFFFFFFFFFFFFFFF


def _entry(layer, new_layer, in_shape, decision, skip_reason, rank_used, rel_error):
    pb = count_params(Model("tmp", in_shape, (layer,)))[1]
    fb = count_flops(Model("tmp", in_shape, (layer,)))[1]
    pa = count_params(Model("tmp", in_shape, (new_layer,)))[1]
    fa = count_flops(Model("tmp", in_shape, (new_layer,)))[1]
    return ReportEntry(
        layer_name=layer.name,
        decision=decision,
        skip_reason=skip_reason,
        rank_used=rank_used,
        params_before=pb,
        params_after=pa,
        flops_before=fb,
        flops_after=fa,
        rel_error=rel_error,
    )


def factorize_linear(layer: Linear, config: FactorizeConfig, seed: int | None = None):
    """Factorize one linear layer into an LED layer, or skip it.

    Returns (layer, report entry); the skip reason is "filtered" or
    "rank-gate". The bias moves unchanged to the decoder.
    """
    in_shape = (layer.in_features,)
    m, n = layer.out_features, layer.in_features
    if not config.filter.matches(layer.name):
        return layer, _entry(layer, layer, in_shape, "skipped", "filtered", None, None)
    r = resolve_rank(config.rank_policy, m, n)
    if not should_factorize(r, m, n):
        return layer, _entry(layer, layer, in_shape, "skipped", "rank-gate", None, None)
    seed = _layer_seed(config.seed, layer.name) if seed is None else seed
    try:
        a, b, rel_error = _solve(layer.weight, r, config, seed)
    except (LrfactError, ValueError, np.linalg.LinAlgError) as exc:
        raise SolverError(f"layer {layer.name!r}: {exc}", layer.name) from exc
    led = LED(name=layer.name, encoder=b, decoder=a, bias=layer.bias)
    return led, _entry(layer, led, in_shape, "factorized", None, r, rel_error)


def factorize_conv(layer: Conv, config: FactorizeConfig, in_shape=None, seed: int | None = None):
    """Factorize one conv layer into a CED layer, or skip it.

    The gate and the solver both operate on the rearranged 2-D matrix, so
    m = C_in * prod(kernel) and n = C_out. ``in_shape`` (default: minimal
    valid input) only affects the FLOP columns of the report entry.
    """
    if in_shape is None:
        spans = [d * (k - 1) + 1 for k, d in zip(layer.kernel, layer.dilation)]
        in_shape = (layer.in_channels,) + tuple(
            max(1, s - 2 * p) for s, p in zip(spans, layer.padding)
        )
    w2d = rearrange_conv_weight(layer.weight)
    m, n = w2d.shape
    if not config.filter.matches(layer.name):
        return layer, _entry(layer, layer, in_shape, "skipped", "filtered", None, None)
    r = resolve_rank(config.rank_policy, m, n)
    if not should_factorize(r, m, n):
        return layer, _entry(layer, layer, in_shape, "skipped", "rank-gate", None, None)
    seed = _layer_seed(config.seed, layer.name) if seed is None else seed
    try:
        a, b, rel_error = _solve(w2d, r, config, seed)
    except (LrfactError, ValueError, np.linalg.LinAlgError) as exc:
        raise SolverError(f"layer {layer.name!r}: {exc}", layer.name) from exc
    enc, dec = tensorize_conv_factors(a, b, layer.in_channels, layer.kernel)
    ced = CED(
        name=layer.name,
        encoder=enc,
        decoder=dec,
        bias=layer.bias,
        stride=layer.stride,
        padding=layer.padding,
        dilation=layer.dilation,
    )
    return ced, _entry(layer, ced, in_shape, "factorized", None, r, rel_error)


def auto_fact(model: Model, config: FactorizeConfig):
    """Rewrite every eligible linear/conv layer of the model.

    Returns (new model, report); the input model is untouched. Deterministic
    for a fixed config seed: each layer's solver seed is derived from
    (config.seed, layer name).
    """
    new_layers: list[Layer] = []
    entries: list[ReportEntry] = []
    shape = model.input_shape
    for layer in model.layers:
        if isinstance(layer, Linear):
            new_layer, entry = factorize_linear(layer, config)
            entries.append(entry)
        elif isinstance(layer, Conv):
            new_layer, entry = factorize_conv(layer, config, in_shape=shape)
            entries.append(entry)
        else:
            new_layer = layer
        new_layers.append(new_layer)
        shape = layer_output_shape(layer, shape)
    return model.with_layers(new_layers), FactorizationReport(tuple(entries))
