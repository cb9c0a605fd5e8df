"""Input validation and random-state helpers shared by all modules.

scikit-learn's ``check_array`` rejects complex input, so the checks here are
small complex-aware counterparts.
"""
import numbers

import numpy as np


class ApertureConditionError(ValueError):
    """Raised when d0*B/(lambda*z0) is not a positive integer."""


class BudgetError(ValueError):
    """Raised when a computation would exceed its configured size budget."""


class DivergenceError(RuntimeError):
    """Raised when solver iterates become non-finite."""

    def __init__(self, iteration):
        self.iteration = iteration
        super().__init__(f"non-finite iterate at iteration {iteration}")


class RankError(np.linalg.LinAlgError):
    """Raised when a support Gram matrix is singular or too ill-conditioned."""


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``.

    Generators pass through unchanged. ``None`` is refused: all randomness
    must be seeded explicitly.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    if isinstance(seed, numbers.Integral) and not isinstance(seed, bool):
        return np.random.default_rng(int(seed))
    raise TypeError(f"expected an integer seed or numpy Generator, got {seed!r}")


def substream(seed, *key):
    """Deterministic child generator for ``(seed, *key)``.

    Independent of call order, so trials can run in any order or in
    parallel and still see identical random numbers.
    """
    return np.random.default_rng(
        np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    )


def check_vector(x, size=None, name="x"):
    """Return ``x`` as a 1-D complex128 array, checking length and finiteness."""
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {size}")
    arr = arr.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_positive_int(value, name):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_index_set(T, N, name="T"):
    """Distinct integer indices into ``range(N)``, order preserved."""
    idx = np.asarray(T, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= N):
        raise ValueError(f"{name} has indices outside [0, {N})")
    if np.unique(idx).size != idx.size:
        raise ValueError(f"{name} contains repeated indices")
    return idx


def csign(z):
    """Complex sign: z/|z| for z != 0 and 0 at 0."""
    z = np.asarray(z, dtype=np.complex128)
    mag = np.abs(z)
    out = np.zeros_like(z)
    nz = mag > 0
    out[nz] = z[nz] / mag[nz]
    return out
