"""Submatrix conditioning, least-squares dual certificates and coherence.

Certificates are built for the column-normalized matrix ``A / n`` (``n**2``
rows, each scattering column has norm ``n``), so the recovery conditions
are checked at the scale where they are stated.
"""
import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg

from ._validation import RankError, check_index_set, check_vector
from .operator import ScatteringOperator

__all__ = [
    "CertificateReport",
    "gram_deviation",
    "build_certificate",
    "verify_certificate",
    "coherence",
    "conditioning_antennas",
]

SIGN_TOL = 1e-8
RANK_MARGIN = 1e-6


def _shape(op):
    return op.shape


def _columns(op, T):
    if isinstance(op, ScatteringOperator):
        return op.columns(T)
    return np.asarray(op, dtype=np.complex128)[:, T]


def _adjoint(op, v):
    if isinstance(op, ScatteringOperator):
        return op.rmatvec(v)
    return np.asarray(op, dtype=np.complex128).conj().T @ v


def _support(op, T):
    N = _shape(op)[1]
    idx = check_index_set(T, N)
    if idx.size == 0:
        raise ValueError("support set must be nonempty")
    return idx


def _normalized_gram(op, T):
    m = _shape(op)[0]
    if isinstance(op, ScatteringOperator):
        gram = op.column_gram(T)
    else:
        cols = _columns(op, T)
        gram = cols.conj().T @ cols
    return gram / m


def gram_deviation(op, T):
    """Spectral norm of ``A_T^* A_T / n**2 - Id``."""
    T = _support(op, T)
    H = _normalized_gram(op, T)
    H = (H + H.conj().T) / 2
    eig = np.linalg.eigvalsh(H)
    return float(max(abs(eig[0] - 1.0), abs(eig[-1] - 1.0)))


def build_certificate(op, T, sign_pattern):
    """Return ``(u, v)`` with ``v = A~_T (A~_T^* A~_T)^{-1} sign`` and ``u = A~^* v``.

    ``A~ = A / n``. By construction ``u_T`` equals ``sign_pattern``.
    """
    T = _support(op, T)
    sgn = check_vector(sign_pattern, T.size, name="sign_pattern")
    m = _shape(op)[0]
    H = _normalized_gram(op, T)
    H = (H + H.conj().T) / 2
    eig = np.linalg.eigvalsh(H)
    deviation = max(abs(eig[0] - 1.0), abs(eig[-1] - 1.0))
    if deviation >= 1.0 - RANK_MARGIN:
        raise RankError(f"support Gram deviates from the identity by {deviation:.6g} >= 1")
    coef = scipy.linalg.cho_solve(scipy.linalg.cho_factor(H), sgn)
    scale = math.sqrt(m)
    v = _columns(op, T) @ coef / scale
    u = _adjoint(op, v) / scale
    return u, v


@dataclass(frozen=True)
class CertificateReport:
    gram_deviation: float
    sign_match_error: float
    offsupport_max: float
    dual_norm: float
    bound_dual: float
    passed: bool
    scaling: str = "A/n"

    def to_dict(self):
        return asdict(self)


def verify_certificate(op, T, sign_pattern, s=None):
    """Check the four recovery conditions for the least-squares certificate.

    Conditions: Gram deviation at most 1/2, ``u_T = sign`` to 1e-8,
    ``max |u_l|`` off the support at most 1/2, and ``||v||_2 <= sqrt(2 s)``.
    """
    T = _support(op, T)
    s = T.size if s is None else int(s)
    dev = gram_deviation(op, T)
    u, v = build_certificate(op, T, sign_pattern)
    mask = np.ones(u.size, dtype=bool)
    mask[T] = False
    sign_err = float(np.max(np.abs(u[T] - np.asarray(sign_pattern))))
    off = float(np.max(np.abs(u[mask]))) if mask.any() else 0.0
    dual = float(np.linalg.norm(v))
    bound = math.sqrt(2 * s)
    passed = dev <= 0.5 and sign_err <= SIGN_TOL and off <= 0.5 and dual <= bound
    return CertificateReport(dev, sign_err, off, dual, bound, bool(passed))


def coherence(op, T):
    """``max |<a_l, a_k>|`` over ``l`` outside ``T`` and ``k`` in ``T`` (unnormalized)."""
    T = _support(op, T)
    N = _shape(op)[1]
    if T.size == N:
        raise ValueError("support covers every column; complement is empty")
    cols = _columns(op, T)
    inner = np.stack([_adjoint(op, cols[:, i]) for i in range(T.size)], axis=1)
    mask = np.ones(N, dtype=bool)
    mask[T] = False
    return float(np.max(np.abs(inner[mask])))


def conditioning_antennas(s, delta, eps):
    """Smallest ``n`` with ``n**2 >= 1024 delta**-2 s log(576 s**3 / eps)**2``."""
    need = 1024.0 / delta**2 * s * math.log(576.0 * s**3 / eps) ** 2
    n = math.isqrt(math.ceil(need))
    while n * n < need:
        n += 1
    return n
