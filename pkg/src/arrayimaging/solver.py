"""Chambolle-Pock primal-dual solver for basis pursuit and its noisy variant.

Both problems are ``min ||x||_1`` subject to ``A x = y`` (basis pursuit) or
``||A x - y||_2 <= eta`` (basis pursuit denoising). The iteration is::

    xi    <- prox_{sigma F*}(xi + sigma A xbar)
    x_new <- soft_threshold(x - tau A^* xi, tau)
    xbar  <- x_new + theta (x_new - x)

``A x`` is carried along between iterations so ``A xbar`` costs no extra
operator application and the feasibility residual is available for free.
"""
import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.linalg import LinearOperator, aslinearoperator
from sklearn.base import BaseEstimator

from ._validation import DivergenceError, check_vector
from .operator import operator_norm

__all__ = [
    "soft_threshold",
    "prox_l1",
    "dual_step_equality",
    "dual_step_ball",
    "PdhgParams",
    "SolveResult",
    "solve_bp",
    "solve_bpdn",
    "BasisPursuit",
    "BasisPursuitDenoising",
    "write_iterate_log",
]

_STALL_WINDOW = 10


def soft_threshold(z, tau):
    """Complex soft thresholding ``sgn(z) * max(|z| - tau, 0)``, elementwise."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    z = np.asarray(z, dtype=np.complex128)
    # max(|z|, tau) >= tau > 0, so no division by tiny or zero moduli
    shrink = 1.0 - tau / np.maximum(np.abs(z), tau)
    return z * shrink


def prox_l1(z, tau):
    """Proximal map of ``tau * ||.||_1``, coordinatewise soft thresholding."""
    return soft_threshold(check_vector(z, name="z"), tau)


def dual_step_equality(xi, Axbar, y, sigma):
    """Dual update for the equality constraint: ``xi + sigma (A xbar - y)``."""
    xi, Axbar, y = _same_length(xi, Axbar, y)
    return xi + sigma * (Axbar - y)


def dual_step_ball(xi, Axbar, y, sigma, eta):
    """Dual update for the constraint ``||A x - y||_2 <= eta``.

    Returns 0 when ``xi/sigma + A xbar`` lies in the ball, otherwise shrinks
    ``w = xi + sigma (A xbar - y)`` radially by ``eta * sigma``.
    """
    if eta < 0 or sigma <= 0:
        raise ValueError("need eta >= 0 and sigma > 0")
    xi, Axbar, y = _same_length(xi, Axbar, y)
    w = xi + sigma * (Axbar - y)
    nrm = np.linalg.norm(w)
    if nrm <= eta * sigma:
        return np.zeros_like(w)
    return (1.0 - eta * sigma / nrm) * w


def _same_length(*vectors):
    arrs = [np.asarray(v, dtype=np.complex128) for v in vectors]
    if len({a.shape for a in arrs}) != 1:
        raise ValueError(f"dimension mismatch: {[a.shape for a in arrs]}")
    return arrs


@dataclass(frozen=True)
class PdhgParams:
    """Solver configuration.

    ``sigma`` and ``tau`` default to ``0.99 / L`` with ``L`` the power-iteration
    norm of the (possibly rescaled) operator, which certifies
    ``tau * sigma * L**2 < 1``. Explicit steps that break that bound are
    refused unless ``allow_uncertified_steps`` is set.
    """

    theta: float = 1.0
    sigma: float = None
    tau: float = None
    max_iters: int = 2000
    residual_tol: float = 1e-6
    rescale_by_sqrtN: bool = True
    allow_uncertified_steps: bool = False
    stop_early: bool = True
    norm_iters: int = 50
    log_iterates: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.theta <= 1:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        for name in ("sigma", "tau"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.residual_tol < 0:
            raise ValueError("residual_tol must be >= 0")

    @classmethod
    def reference(cls, **overrides):
        """theta=1, sigma=1, tau=0.5 on A/sqrt(N), 300 fixed iterations.

        These steps are not certified (tau*sigma*L^2 is about 1.9 on the
        scattering operator), so a solve refuses them unless
        ``allow_uncertified_steps=True`` is passed as an override.
        """
        base = dict(
            theta=1.0,
            sigma=1.0,
            tau=0.5,
            rescale_by_sqrtN=True,
            max_iters=300,
            stop_early=False,
        )
        base.update(overrides)
        return cls(**base)


@dataclass
class SolveResult:
    x_hat: np.ndarray
    iterations_run: int
    final_feasibility: float
    objective: float
    converged: bool
    step_product: float
    operator_norm: float
    step_product_linear: float = float("nan")
    eta: float = 0.0
    iterate_log: np.ndarray = field(default=None, repr=False)
    dual: np.ndarray = field(default=None, repr=False)


def solve_bp(op, y, params=None):
    """Basis pursuit ``min ||x||_1 s.t. A x = y``."""
    return _pdhg(op, y, None, params or PdhgParams())


def solve_bpdn(op, y, eta, params=None):
    """Basis pursuit denoising ``min ||x||_1 s.t. ||A x - y||_2 <= eta``."""
    if eta < 0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    return _pdhg(op, y, float(eta), params or PdhgParams())


def _as_operator(A):
    if isinstance(A, LinearOperator):
        return A
    return aslinearoperator(np.asarray(A, dtype=np.complex128))


def _pdhg(op, y, eta, params, x0=None, xi0=None):
    A = _as_operator(op)
    m, N = A.shape
    y = check_vector(y, m, name="y")
    scale = np.sqrt(N) if params.rescale_by_sqrtN else 1.0
    y_s = y / scale
    eta_s = None if eta is None else eta / scale

    def fwd(v):
        return A.matvec(v) / scale

    def adj(v):
        return A.rmatvec(v) / scale

    L = operator_norm(A, params.norm_iters, params.seed) / scale
    sigma = params.sigma if params.sigma is not None else 0.99 / L
    tau = params.tau if params.tau is not None else 0.99 / L
    step_product = tau * sigma * L**2
    if step_product > 1 and not params.allow_uncertified_steps:
        raise ValueError(
            f"tau*sigma*L^2 = {step_product:.4g} > 1; pass allow_uncertified_steps=True to run anyway"
        )
    theta = params.theta

    x = np.zeros(N, dtype=np.complex128) if x0 is None else check_vector(x0, N).copy()
    xi = np.zeros(m, dtype=np.complex128) if xi0 is None else check_vector(xi0, m).copy()
    Ax = fwd(x)
    Ax_prev = Ax
    objectives = []
    log = [] if params.log_iterates else None
    converged = False
    it = 0
    feas = np.linalg.norm(Ax - y_s) * scale
    bound = (0.0 if eta is None else eta) + params.residual_tol

    for it in range(1, params.max_iters + 1):
        Axbar = (1 + theta) * Ax - theta * Ax_prev
        if eta is None:
            xi = xi + sigma * (Axbar - y_s)
        else:
            xi = dual_step_ball(xi, Axbar, y_s, sigma, eta_s)
        x_new = soft_threshold(x - tau * adj(xi), tau)
        Ax_prev, Ax = Ax, fwd(x_new)
        x = x_new
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xi))):
            raise DivergenceError(it)
        feas = np.linalg.norm(Ax - y_s) * scale
        obj = float(np.sum(np.abs(x)))
        objectives.append(obj)
        if log is not None:
            log.append((it, obj, feas))
        if params.stop_early and feas <= bound and len(objectives) > _STALL_WINDOW:
            if abs(obj - objectives[-1 - _STALL_WINDOW]) <= params.residual_tol * max(1.0, obj):
                converged = True
                break

    if not params.stop_early:
        converged = bool(feas <= bound)
    return SolveResult(
        x_hat=x,
        iterations_run=it,
        final_feasibility=float(feas),
        objective=float(np.sum(np.abs(x))),
        converged=converged,
        step_product=float(step_product),
        operator_norm=float(L * scale),
        step_product_linear=float(tau * sigma * L),
        eta=0.0 if eta is None else eta,
        iterate_log=None if log is None else np.array(log),
        dual=xi * scale,
    )


def write_iterate_log(path, result):
    """CSV with columns ``iter,objective,feasibility``."""
    if result.iterate_log is None:
        raise ValueError("solve was run without log_iterates=True")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter", "objective", "feasibility"])
        for it, obj, feas in result.iterate_log:
            writer.writerow([int(it), repr(float(obj)), repr(float(feas))])


class BasisPursuit(BaseEstimator):
    """Estimator wrapper around :func:`solve_bp`.

    ``fit(A, y)`` takes the sensing matrix (ndarray or ``LinearOperator``)
    and the measurements; the recovered scene is stored in ``coef_``.

    Examples
    --------
    >>> import numpy as np
    >>> A = np.eye(3, dtype=complex)
    >>> BasisPursuit().fit(A, np.array([1, 0, 0])).coef_.round(6)
    array([1.+0.j, 0.+0.j, 0.+0.j])
    """

    def __init__(
        self,
        theta=1.0,
        sigma=None,
        tau=None,
        max_iters=2000,
        residual_tol=1e-6,
        rescale_by_sqrtN=True,
        allow_uncertified_steps=False,
        log_iterates=False,
    ):
        self.theta = theta
        self.sigma = sigma
        self.tau = tau
        self.max_iters = max_iters
        self.residual_tol = residual_tol
        self.rescale_by_sqrtN = rescale_by_sqrtN
        self.allow_uncertified_steps = allow_uncertified_steps
        self.log_iterates = log_iterates

    def _params(self):
        return PdhgParams(
            theta=self.theta,
            sigma=self.sigma,
            tau=self.tau,
            max_iters=self.max_iters,
            residual_tol=self.residual_tol,
            rescale_by_sqrtN=self.rescale_by_sqrtN,
            allow_uncertified_steps=self.allow_uncertified_steps,
            log_iterates=self.log_iterates,
        )

    def _solve(self, A, y):
        return solve_bp(A, y, self._params())

    def fit(self, A, y):
        result = self._solve(A, y)
        self.result_ = result
        self.coef_ = result.x_hat
        self.n_iter_ = result.iterations_run
        self.converged_ = result.converged
        return self

    def predict(self, A):
        if not hasattr(self, "coef_"):
            raise AttributeError("estimator is not fitted; call fit first")
        return _as_operator(A).matvec(self.coef_)


class BasisPursuitDenoising(BasisPursuit):
    """Estimator wrapper around :func:`solve_bpdn` with noise radius ``eta``."""

    def __init__(
        self,
        eta=0.0,
        theta=1.0,
        sigma=None,
        tau=None,
        max_iters=2000,
        residual_tol=1e-6,
        rescale_by_sqrtN=True,
        allow_uncertified_steps=False,
        log_iterates=False,
    ):
        super().__init__(
            theta=theta,
            sigma=sigma,
            tau=tau,
            max_iters=max_iters,
            residual_tol=residual_tol,
            rescale_by_sqrtN=rescale_by_sqrtN,
            allow_uncertified_steps=allow_uncertified_steps,
            log_iterates=log_iterates,
        )
        self.eta = eta

    def _solve(self, A, y):
        return solve_bpdn(A, y, self.eta, self._params())


def one_more_iteration(op, y, result, params):
    """Run a single extra BP iteration warm-started from ``result``."""
    p = replace(params, max_iters=1, stop_early=False, allow_uncertified_steps=True)
    if params.sigma is None or params.tau is None:
        step = 0.99 / (result.operator_norm / (np.sqrt(op.shape[1]) if params.rescale_by_sqrtN else 1.0))
        p = replace(p, sigma=params.sigma or step, tau=params.tau or step)
    scale = np.sqrt(op.shape[1]) if params.rescale_by_sqrtN else 1.0
    return _pdhg(op, y, None, p, x0=result.x_hat, xi0=result.dual / scale)
