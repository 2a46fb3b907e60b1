"""Dense matrix kernels and the three factorization solvers.

Matrices are 2-D ``numpy.ndarray`` of float32, row-major. All solvers compute
in float64 internally and return float32 results; all are pure functions of
their arguments (RNG state is derived from the explicit seed), so identical
inputs give bitwise-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RankError, ShapeError

__all__ = [
    "SvdResult",
    "SnmfOptions",
    "as_matrix",
    "matmul",
    "truncated_svd",
    "snmf",
    "snmf_objective_trace",
    "random_factors",
    "frobenius_error",
]

_SNMF_EPS = 1e-16


@dataclass(frozen=True)
class SvdResult:
    """Truncated SVD: ``u @ diag(s) @ v.T`` is the best rank-r approximation.

    u: (m, r), columns orthonormal.
    s: (r,), nonnegative, nonincreasing.
    v: (n, r), columns orthonormal.
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class SnmfOptions:
    max_iterations: int = 200
    rel_tolerance: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.rel_tolerance < 0:
            raise ValueError("rel_tolerance must be >= 0")


def as_matrix(data) -> np.ndarray:
    """Coerce to a float32 2-D matrix, rejecting non-finite entries."""
    m = np.asarray(data, dtype=np.float32)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product of two matrices, accumulated in float64, stored as float32."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a.astype(np.float64) @ b.astype(np.float64)
    return out.astype(np.float32)


def _check_rank(r: int, m: int, n: int) -> None:
    if not 1 <= r <= min(m, n):
        raise RankError(f"rank {r} out of range [1, {min(m, n)}] for {m}x{n} matrix")


def truncated_svd(w: np.ndarray, r: int) -> SvdResult:
    """Best rank-r approximation factors of ``w`` (Eckart-Young optimal).

    Sign convention: the largest-magnitude entry of each u column is made
    positive, so results are deterministic.
    """
    m, n = w.shape
    _check_rank(r, m, n)
    if not np.all(np.isfinite(w)):
        raise ValueError("truncated_svd: input contains non-finite entries")
    u, s, vt = np.linalg.svd(w.astype(np.float64), full_matrices=False)
    u, s, v = u[:, :r], s[:r], vt[:r, :].T
    # Fix column signs for determinism.
    for j in range(r):
        k = int(np.argmax(np.abs(u[:, j])))
        if u[k, j] < 0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]
    return SvdResult(
        u=u.astype(np.float32),
        s=np.maximum(s, 0.0).astype(np.float32),
        v=v.astype(np.float32),
    )


def _pos(x: np.ndarray) -> np.ndarray:
    return (np.abs(x) + x) / 2.0


def _neg(x: np.ndarray) -> np.ndarray:
    return (np.abs(x) - x) / 2.0


def _snmf_impl(w, r, opts):
    m, n = w.shape
    _check_rank(r, m, n)
    w64 = w.astype(np.float64)
    wnorm2 = float(np.sum(w64 * w64))
    if wnorm2 == 0.0:
        a = np.zeros((m, r), dtype=np.float32)
        b = np.zeros((r, n), dtype=np.float32)
        return a, b, [0.0]

    # Initialize b from the truncated SVD magnitude; small offset avoids
    # zero-locking in the multiplicative update.
    svd = truncated_svd(w, r)
    sqrt_s = np.sqrt(svd.s.astype(np.float64))
    b = np.abs(sqrt_s[:, None] * svd.v.astype(np.float64).T) + 1e-4
    a = np.zeros((m, r))

    objectives: list[float] = []
    prev = None
    for _ in range(opts.max_iterations):
        # Least-squares update of a: minimizes ||w - a b||_F for fixed b.
        a = w64 @ b.T @ np.linalg.pinv(b @ b.T)
        # Multiplicative update of b (positive/negative part split); a few
        # inner sweeps per a-solve converge much faster, and each sweep is
        # individually monotone, so the recorded objective stays monotone.
        wta = w64.T @ a  # (n, r)
        ata = a.T @ a  # (r, r)
        g = b.T  # (n, r), stays >= 0
        for _ in range(3):
            num = _pos(wta) + g @ _neg(ata)
            den = _neg(wta) + g @ _pos(ata) + _SNMF_EPS
            g = g * np.sqrt(num / den)
        b = g.T
        obj = float(np.sum((w64 - a @ b) ** 2))
        objectives.append(obj)
        if prev is not None and prev - obj < opts.rel_tolerance * max(prev, _SNMF_EPS):
            break
        prev = obj
    return a.astype(np.float32), b.astype(np.float32), objectives


def snmf(w: np.ndarray, r: int, opts: SnmfOptions | None = None):
    """Semi-NMF: ``w ~ a @ b`` with b elementwise nonnegative, a unconstrained.

    Alternates an exact least-squares solve for a with a multiplicative
    update of b, so the Frobenius objective is non-increasing. Stops at
    max_iterations or when the relative objective improvement drops below
    rel_tolerance.
    """
    opts = opts or SnmfOptions()
    a, b, _ = _snmf_impl(w, r, opts)
    return a, b


def snmf_objective_trace(w: np.ndarray, r: int, opts: SnmfOptions | None = None):
    """Like :func:`snmf`, but also returns the per-iteration objective values."""
    opts = opts or SnmfOptions()
    return _snmf_impl(w, r, opts)


def random_factors(m: int, n: int, r: int, seed: int):
    """Two random factor matrices with entries i.i.d. uniform on [-1/sqrt(r), 1/sqrt(r)].

    Deterministic for a fixed seed; a and b are drawn from the same stream in
    that order.
    """
    if r < 1:
        raise RankError(f"rank must be >= 1, got {r}")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(r)
    a = rng.uniform(-bound, bound, size=(m, r)).astype(np.float32)
    b = rng.uniform(-bound, bound, size=(r, n)).astype(np.float32)
    return a, b


def frobenius_error(w: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Relative Frobenius reconstruction error ||w - a b||_F / ||w||_F."""
    if a.shape[0] != w.shape[0] or a.shape[1] != b.shape[0] or b.shape[1] != w.shape[1]:
        raise ShapeError(
            f"shapes do not compose: w {w.shape}, a {a.shape}, b {b.shape}"
        )
    w64 = w.astype(np.float64)
    diff = w64 - a.astype(np.float64) @ b.astype(np.float64)
    wnorm = float(np.linalg.norm(w64))
    errnorm = float(np.linalg.norm(diff))
    if wnorm == 0.0:
        return 0.0 if errnorm == 0.0 else float("inf")
    return errnorm / wnorm
