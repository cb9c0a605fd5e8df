"""The scattering sensing operator and general BOS sampling matrices.

Row ``(j, k)`` of the ``n**2 x N`` operator (antenna ``j`` transmits,
antenna ``k`` receives) lives at flat index ``j * n + k``. Entry
``A[(j, k), l] = G(b_j, r_l) * G(r_l, b_k)`` with ``G`` the normalized
paraxial Green's function, so every entry has unit modulus and every
column has Euclidean norm exactly ``n``.

Three evaluation modes share one contract:

``"dense"``
    the full matrix is materialized (guarded by an element budget);
``"direct"``
    ``A x`` is evaluated as ``G diag(x) G^T`` from the ``n x N`` kernel;
``"factorized"``
    diagonal phase factors around a separable nonequispaced exponential
    sum, evaluated exactly with two small matrix products.
"""
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse.linalg import LinearOperator

from ._validation import BudgetError, check_positive_int, check_random_state, check_vector
from .geometry import AntennaArray, TargetGrid, paraxial_kernel

__all__ = [
    "ScatteringOperator",
    "BosSystem",
    "build_scattering_matrix",
    "build_bos_matrix",
    "apply",
    "apply_adjoint",
    "apply_factorized",
    "measure",
    "operator_norm",
    "write_matrix_binary",
    "read_matrix_binary",
    "write_matrix_csv",
]

DEFAULT_ELEMENT_BUDGET = 200_000_000
MODES = ("dense", "direct", "factorized")

_MAGIC = b"ARIMGMAT"
_HEADER = struct.Struct("<8sQQII")  # magic, rows, cols, mode code, reserved
_MODE_CODES = {"dense": 0, "direct": 1, "factorized": 2, "bos": 3}


class ScatteringOperator(LinearOperator):
    """Random scattering matrix for a fixed antenna draw.

    Parameters
    ----------
    config : ImagingConfig
    antennas : AntennaArray or array of shape (n, 2)
    mode : {"dense", "direct", "factorized"}
    max_elements : int
        Dense mode refuses to build when ``n**2 * N`` exceeds this.
    """

    def __init__(self, config, antennas, mode="factorized", max_elements=DEFAULT_ELEMENT_BUDGET):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if not isinstance(antennas, AntennaArray):
            antennas = AntennaArray(antennas, center=tuple(config.center), side=config.aperture)
        self.config = config
        self.array = antennas
        self.grid = TargetGrid(config)
        self.mode = mode
        self.n = antennas.n
        self.N = len(self.grid)
        self.max_elements = int(max_elements)
        super().__init__(dtype=np.complex128, shape=(self.n**2, self.N))
        if mode == "dense":
            _ = self.matrix

    # -- cached building blocks -------------------------------------------

    @cached_property
    def kernel(self):
        """``(n, N)`` matrix of paraxial Green's function values."""
        return paraxial_kernel(self.config, self.array.positions, self.grid.points)

    @cached_property
    def matrix(self):
        if self.n**2 * self.N > self.max_elements:
            raise BudgetError(
                f"dense operator needs {self.n**2 * self.N} entries, "
                f"budget is {self.max_elements}"
            )
        g = self.kernel
        j, k = self._pairs
        half = g[j] * g[k]
        out = np.empty((self.n, self.n, self.N), dtype=complex)
        out[j, k] = half
        out[k, j] = half
        return out.reshape(self.n**2, self.N)

    @cached_property
    def _pairs(self):
        # rows (j, k) and (k, j) coincide, so only j <= k is evaluated
        return np.triu_indices(self.n)

    @cached_property
    def _factors(self):
        cfg = self.config
        pos = self.array.positions
        j, k = self._pairs
        sums = pos[j] + pos[k]
        s = cfg.fresnel_scale
        axis = self.grid.axis
        # axis = -L + (q+1) d0, so <p, S> splits into an integer-frequency
        # sum at nodes s*d0*S (= rho*S/B) and an offset phase in -L
        freqs = np.arange(1, self.grid.side + 1)
        nodes = s * cfg.mesh * sums
        ex = np.exp(-2j * np.pi * np.outer(nodes[:, 0], freqs))
        ey = np.exp(-2j * np.pi * np.outer(nodes[:, 1], freqs))
        sqn = np.sum(pos**2, axis=1)
        post = cfg.carrier_phase**2 * np.exp(
            1j * np.pi * s * (sqn[j] + sqn[k]) + 2j * np.pi * s * cfg.halfsize * (sums[:, 0] + sums[:, 1])
        )
        pre = np.exp(2j * np.pi * s * (axis[:, None] ** 2 + axis[None, :] ** 2))
        return pre, ex, ey, post

    # -- evaluation ------------------------------------------------------

    def _matvec(self, x):
        x = np.asarray(x, dtype=np.complex128).reshape(-1)
        if self.mode == "dense":
            return self.matrix @ x
        if self.mode == "direct":
            g = self.kernel
            return ((g * x) @ g.T).reshape(-1)
        return _factorized_forward(self, x)

    def _rmatvec(self, y):
        y = np.asarray(y, dtype=np.complex128).reshape(-1)
        if self.mode == "dense":
            return self.matrix.conj().T @ y
        if self.mode == "direct":
            g = self.kernel.conj()
            w = y.reshape(self.n, self.n) @ g
            return np.sum(g * w, axis=0)
        return _factorized_adjoint(self, y)

    def _adjoint(self):
        return LinearOperator(
            shape=(self.N, self.n**2), dtype=self.dtype, matvec=self._rmatvec, rmatvec=self._matvec
        )

    def columns(self, T):
        """Dense ``n**2 x |T|`` column submatrix, without building the rest."""
        T = np.asarray(T, dtype=int).ravel()
        if self.mode == "dense":
            return self.matrix[:, T]
        g = paraxial_kernel(self.config, self.array.positions, self.grid.points[T])
        return (g[:, None, :] * g[None, :, :]).reshape(self.n**2, T.size)

    def column_gram(self, T):
        """``A_T^* A_T`` in O(n |T|^2) from the product structure of the rows."""
        T = np.asarray(T, dtype=int).ravel()
        g = paraxial_kernel(self.config, self.array.positions, self.grid.points[T])
        gram = (g.conj().T @ g) ** 2
        # unit-modulus entries: every column has squared norm exactly n**2
        np.fill_diagonal(gram, float(self.n**2))
        return gram

    def todense(self):
        if self.mode == "dense":
            return self.matrix.copy()
        return self.columns(np.arange(self.N))

    def row_index(self, j, k):
        return np.asarray(j) * self.n + np.asarray(k)


def _factorized_forward(op, x):
    pre, ex, ey, post = op._factors
    side = op.grid.side
    z = pre * x.reshape(side, side)
    half = post * np.einsum("rk,rk->r", ex @ z, ey)
    out = np.empty((op.n, op.n), dtype=np.complex128)
    j, k = op._pairs
    out[j, k] = half
    out[k, j] = half
    return out.reshape(-1)


def _factorized_adjoint(op, y):
    pre, ex, ey, post = op._factors
    yy = y.reshape(op.n, op.n)
    j, k = op._pairs
    w = yy[j, k] + np.where(j != k, yy[k, j], 0)
    w = np.conj(post) * w
    z = ex.conj().T @ (w[:, None] * ey.conj())
    return (np.conj(pre) * z).reshape(-1)


def build_scattering_matrix(config, array, grid=None, max_elements=DEFAULT_ELEMENT_BUDGET):
    """Dense scattering operator. ``grid`` must be the config's own grid."""
    if grid is not None and len(grid) != config.grid_size:
        raise ValueError("grid does not match config")
    return ScatteringOperator(config, array, mode="dense", max_elements=max_elements)


def apply(op, x):
    return op.matvec(check_vector(x, op.shape[1]))


def apply_adjoint(op, y):
    return op.rmatvec(check_vector(y, op.shape[0], name="y"))


def apply_factorized(op, x):
    """Forward map through the diagonal/exponential-sum factorization."""
    if op.grid.side**2 != op.N:
        raise ValueError("factorized evaluation needs a square grid")
    return _factorized_forward(op, check_vector(x, op.N))


def measure(op, x, noise=None):
    """Born measurements ``y = A x + e``."""
    y = apply(op, x)
    if noise is not None:
        y = y + check_vector(noise, op.shape[0], name="noise")
    return y


def operator_norm(op, iters=50, rng=0):
    """Power-iteration estimate of the spectral norm of ``op``.

    The estimate ``sqrt(|M v_k| / |v_k|)`` with ``M = A^* A`` never exceeds the
    true norm and does not decrease with ``iters``.
    """
    iters = check_positive_int(iters, "iters")
    rng = check_random_state(rng)
    A = op if isinstance(op, LinearOperator) else np.asarray(op, dtype=np.complex128)
    size = A.shape[1]
    v = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = A.conj().T @ (A @ v) if isinstance(A, np.ndarray) else A.rmatvec(A.matvec(v))
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        est = max(est, nrm)
        v = w / nrm
    return float(np.sqrt(est))


@dataclass(frozen=True)
class BosSystem:
    """Unit-modulus bounded orthonormal system.

    ``evaluator(points)`` returns the ``(len(points), N)`` matrix
    ``Phi_l(t_j)``.
    """

    evaluator: object
    N: int
    domain: str = ""

    def __call__(self, points):
        vals = np.asarray(self.evaluator(np.asarray(points)), dtype=np.complex128)
        if vals.ndim != 2 or vals.shape[1] != self.N:
            raise ValueError(f"evaluator returned shape {vals.shape}, expected (n, {self.N})")
        if np.max(np.abs(np.abs(vals) - 1.0)) > 1e-10:
            raise ValueError("BOS invariant violated: |Phi_l(t)| must equal 1")
        return vals

    @classmethod
    def fourier(cls, N):
        """``Phi_l(t) = exp(2 pi i l t)`` on [0, 1], ``l = 1..N``."""
        freqs = np.arange(1, N + 1)
        return cls(lambda t: np.exp(2j * np.pi * np.outer(np.ravel(t), freqs)), N, "uniform [0, 1]")

    @classmethod
    def scattering(cls, config):
        """``Phi_l(b) = G(r_l, b)``; sampling this reproduces the scattering matrix."""
        grid = TargetGrid(config)
        return cls(
            lambda b: paraxial_kernel(config, np.reshape(b, (-1, 2)), grid.points),
            len(grid),
            "uniform aperture square",
        )


def build_bos_matrix(system, samples):
    """Sampling matrix with row ``(j, k)`` equal to ``Phi(b_j) * Phi(b_k)``.

    That row is the conjugate transpose of
    ``v(b_j, b_k) = (conj Phi_l(b_j) conj Phi_l(b_k))_l``.
    """
    phi = system(samples)
    n = phi.shape[0]
    return (phi[:, None, :] * phi[None, :, :]).reshape(n * n, system.N)


def write_matrix_binary(path, matrix, mode="dense"):
    """Header (magic, rows, cols, mode) then interleaved float64 re/im, row-major."""
    m = np.ascontiguousarray(matrix, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, m.shape[0], m.shape[1], _MODE_CODES[mode], 0))
        fh.write(m.tobytes(order="C"))


def read_matrix_binary(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError(f"truncated header at byte offset {len(head)}")
        magic, rows, cols, code, _ = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise ValueError("bad magic at byte offset 0")
        body = fh.read()
    if len(body) != rows * cols * 16:
        raise ValueError(
            f"body size {len(body)} does not match {rows}x{cols} at byte offset {_HEADER.size}"
        )
    mode = {v: k for k, v in _MODE_CODES.items()}[code]
    return np.frombuffer(body, dtype="<c16").reshape(rows, cols).astype(np.complex128), mode


def write_matrix_csv(path, matrix):
    """One line per flat row index: ``re,im`` pairs for every column."""
    m = np.asarray(matrix, dtype=np.complex128)
    header = ",".join(f"re{c},im{c}" for c in range(m.shape[1]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in m:
            inter = np.empty(2 * row.size)
            inter[0::2] = row.real
            inter[1::2] = row.imag
            fh.write(",".join(repr(float(v)) for v in inter) + "\n")
