"""Dense matrix arithmetic, seeded RNG, and weight initializers.

Every tensor in this package is a dense 2-D ``numpy.ndarray`` of float64,
batch-major (rows are samples). numpy supplies the arithmetic; this module
adds the shape validation, the documented deterministic RNG, and the
initializers the rest of the package builds on.

The RNG is numpy's PCG64, wrapped so that the same 64-bit seed yields the
same stream on every platform and run.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError

DTYPE = np.float64

Matrix = np.ndarray
Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    """Deterministic generator (PCG64) for the given seed."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed: int, n: int) -> list[Rng]:
    """n independent deterministic streams derived from one seed."""
    return [np.random.Generator(np.random.PCG64(s))
            for s in np.random.SeedSequence(seed).spawn(n)]


def as_matrix(values) -> Matrix:
    """Coerce nested lists / arrays to a 2-D float64 matrix."""
    a = np.asarray(values, dtype=DTYPE)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim}")
    return a


def zeros(rows: int, cols: int) -> Matrix:
    return np.zeros((rows, cols), dtype=DTYPE)


def ones(rows: int, cols: int) -> Matrix:
    return np.ones((rows, cols), dtype=DTYPE)


def eye(n: int) -> Matrix:
    return np.eye(n, dtype=DTYPE)


def _require_2d(name: str, a: Matrix) -> None:
    if not isinstance(a, np.ndarray) or a.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D matrix")


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product; raises ShapeError naming both shapes on mismatch."""
    _require_2d("a", a)
    _require_2d("b", b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    return a @ b


def _match_shapes(op: str, a: Matrix, b: Matrix) -> None:
    _require_2d("a", a)
    _require_2d("b", b)
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes differ, {a.shape} vs {b.shape}")


def add(a: Matrix, b: Matrix) -> Matrix:
    _match_shapes("add", a, b)
    return a + b


def sub(a: Matrix, b: Matrix) -> Matrix:
    _match_shapes("sub", a, b)
    return a - b


def hadamard(a: Matrix, b: Matrix) -> Matrix:
    _match_shapes("hadamard", a, b)
    return a * b


def scale(a: Matrix, c: float) -> Matrix:
    _require_2d("a", a)
    return a * c


def transpose(a: Matrix) -> Matrix:
    _require_2d("a", a)
    return np.ascontiguousarray(a.T)


def row_argmax(a: Matrix) -> np.ndarray:
    """Index of the max entry per row; ties break toward the lowest index."""
    _require_2d("a", a)
    return np.argmax(a, axis=1)


def reduce_sum(a: Matrix, axis: int | None = None):
    _require_2d("a", a)
    return a.sum(axis=axis)


def reduce_mean(a: Matrix, axis: int | None = None):
    _require_2d("a", a)
    return a.mean(axis=axis)


def reduce_max(a: Matrix, axis: int | None = None):
    _require_2d("a", a)
    return a.max(axis=axis)


def he_normal_init(rows: int, cols: int, rng: Rng) -> Matrix:
    """He normal initializer: i.i.d. Normal(0, 2/fan_in) with fan_in = rows."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"he_normal_init: invalid size {rows}x{cols}")
    std = np.sqrt(2.0 / rows)
    return rng.normal(0.0, std, size=(rows, cols)).astype(DTYPE)


def ensure_finite(a: Matrix, context: str) -> Matrix:
    """Raise NumericError if the matrix holds NaN or Inf."""
    if not np.isfinite(a).all():
        raise NumericError(f"non-finite values in {context}")
    return a
