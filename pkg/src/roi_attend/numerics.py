"""Dense float64 kernels, activations, seeded randomness, and a gradient checker.

Conventions used across the package: a "matrix" is a 2-D C-contiguous float64
numpy array, a "vector" is 1-D float64. All public operations keep values
finite; anything that would produce NaN/Inf raises instead of propagating it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = [
    "ShapeError",
    "EvaluationError",
    "GradCheckReport",
    "SeededRng",
    "as_matrix",
    "matmul",
    "softmax",
    "sigmoid",
    "tanh",
    "activation",
    "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class EvaluationError(RuntimeError):
    """A numeric operation produced or encountered a non-finite value."""


def as_matrix(x) -> np.ndarray:
    """Coerce to a 2-D float64 matrix, rejecting other ranks."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got array of rank {a.ndim}")
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit shape checking.

    Raises ShapeError naming both shapes when a.cols != b.rows, and
    EvaluationError if the product contains NaN/Inf.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise EvaluationError("matmul produced non-finite entries")
    return out


def softmax(v, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max subtraction) along `axis`.

    Entries may be -inf (they get exactly zero weight), but each slice must
    contain at least one finite entry.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ShapeError("softmax: empty input")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def sigmoid(v) -> np.ndarray:
    return expit(np.asarray(v, dtype=np.float64))


def tanh(v) -> np.ndarray:
    return np.tanh(np.asarray(v, dtype=np.float64))


def activation(v, kind: str) -> np.ndarray:
    """Elementwise nonlinearity, kind is 'sigmoid' or 'tanh'."""
    if kind == "sigmoid":
        return sigmoid(v)
    if kind == "tanh":
        return tanh(v)
    raise ValueError(f"unknown activation kind '{kind}' (expected 'sigmoid' or 'tanh')")


@dataclass
class GradCheckReport:
    """Central-difference gradient comparison, one entry per coordinate."""

    fd: np.ndarray
    analytic: np.ndarray
    rel_err: np.ndarray
    max_rel_err: float
    mean_rel_err: float


# Relative-error denominator floor; keeps near-zero gradients from blowing
# up the ratio.
REL_ERR_FLOOR = 1e-8


def grad_check(f, theta, analytic, h: float = 1e-5) -> GradCheckReport:
    """Compare an analytic gradient against central finite differences.

    f: scalar function of a 1-D parameter vector (must not mutate its input).
    theta: evaluation point. analytic: gradient of f at theta.
    Relative error per coordinate uses denominator max(|fd|, |analytic|, 1e-8).
    """
    theta = np.array(theta, dtype=np.float64).ravel()
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if theta.shape != analytic.shape:
        raise ShapeError(
            f"grad_check: theta has {theta.size} coordinates but analytic gradient has {analytic.size}"
        )
    if h <= 0:
        raise ValueError("grad_check: step h must be positive")
    fd = np.zeros_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + h
        f_plus = float(f(theta))
        theta[i] = orig - h
        f_minus = float(f(theta))
        theta[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise EvaluationError(f"grad_check: non-finite function value at coordinate {i}")
        fd[i] = (f_plus - f_minus) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(analytic)), REL_ERR_FLOOR)
    rel = np.abs(fd - analytic) / denom
    return GradCheckReport(
        fd=fd,
        analytic=analytic,
        rel_err=rel,
        max_rel_err=float(rel.max()) if rel.size else 0.0,
        mean_rel_err=float(rel.mean()) if rel.size else 0.0,
    )


class SeededRng:
    """Deterministic random source: Philox4x64 keyed directly by a 64-bit seed.

    Philox is counter-based, so the seed->stream mapping is frozen by the
    algorithm itself; equal seeds give bit-equal streams on every platform.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        self.seed = seed
        self._gen = np.random.Generator(np.random.Philox(key=seed))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size=size)

    def integers(self, low: int, high: int | None = None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def get_state(self) -> str:
        """Serialize the generator state as canonical JSON (for checkpoints)."""
        st = self._gen.bit_generator.state
        safe = {
            "bit_generator": st["bit_generator"],
            "counter": [int(x) for x in st["state"]["counter"]],
            "key": [int(x) for x in st["state"]["key"]],
            "buffer": [int(x) for x in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
            "seed": self.seed,
        }
        return json.dumps(safe, sort_keys=True)

    def set_state(self, blob: str) -> None:
        safe = json.loads(blob)
        if safe.get("bit_generator") != "Philox":
            raise ValueError("rng state is not a Philox state")
        self.seed = int(safe["seed"])
        self._gen.bit_generator.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(safe["counter"], dtype=np.uint64),
                "key": np.array(safe["key"], dtype=np.uint64),
            },
            "buffer": np.array(safe["buffer"], dtype=np.uint64),
            "buffer_pos": int(safe["buffer_pos"]),
            "has_uint32": int(safe["has_uint32"]),
            "uinteger": int(safe["uinteger"]),
        }

    @classmethod
    def from_state(cls, blob: str) -> "SeededRng":
        rng = cls(0)
        rng.set_state(blob)
        return rng
