"""Scenes, noise, oracles and the Monte Carlo experiment protocols.

Every trial draws from its own generator keyed by ``(seed, tag, ...)``, so
curves are reproducible bit-for-bit regardless of ``jobs`` or run order.
"""
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import __version__
from ._validation import (
    BudgetError,
    DivergenceError,
    check_positive_int,
    check_random_state,
    check_vector,
    csign,
    substream,
)
from .certificates import verify_certificate
from .geometry import ImagingConfig, sample_antennas
from .operator import ScatteringOperator
from .solver import PdhgParams, solve_bp, solve_bpdn

__all__ = [
    "Scene",
    "RocPoint",
    "TransitionCurve",
    "LpBracket",
    "ErrorBoundRecord",
    "random_scene",
    "gaussian_noise",
    "best_s_term_error",
    "l0_oracle",
    "l1_lp_oracle",
    "recovery_success",
    "snr_to_eta",
    "phase_transition",
    "roc_curve",
    "certificate_trials",
    "error_bound_check",
    "write_curve_csv",
    "write_roc_csv",
]

SUCCESS_TOL = 1e-3
C1 = 4 * (1 + math.sqrt(2)) + 8 * math.sqrt(3)
C2 = 4 * (1 + math.sqrt(6))

# random-stream tags
_SCENE, _TRANSITION, _ROC, _CERTIFY = 0, 1, 2, 3


@dataclass(frozen=True)
class Scene:
    """Exactly ``s``-sparse complex reflectivities with moduli in ``dynamic_range``."""

    x: np.ndarray
    support: np.ndarray
    dynamic_range: tuple = (1.0, 10.0)

    def __post_init__(self):
        nz = np.flatnonzero(self.x)
        if not np.array_equal(np.sort(self.support), nz):
            raise ValueError("support does not match the nonzero entries of x")
        lo, hi = self.dynamic_range
        mags = np.abs(self.x[nz])
        if mags.size and (mags.min() < lo - 1e-12 or mags.max() > hi + 1e-12):
            raise ValueError("nonzero moduli outside the dynamic range")

    @property
    def s(self):
        return self.support.size

    @property
    def N(self):
        return self.x.size


def random_scene(N, s, dynamic_range=(1.0, 10.0), rng=0):
    """Uniform random support, Steinhaus phases, moduli uniform on the range."""
    N = check_positive_int(N, "N")
    if not 0 <= s <= N:
        raise ValueError(f"need 0 <= s <= N, got s={s}, N={N}")
    lo, hi = (float(v) for v in dynamic_range)
    if not 0 < lo <= hi:
        raise ValueError(f"need 0 < lo <= hi, got {dynamic_range}")
    rng = check_random_state(rng)
    support = np.sort(rng.choice(N, size=s, replace=False))
    phases = np.exp(2j * np.pi * rng.random(s))
    x = np.zeros(N, dtype=np.complex128)
    x[support] = phases * rng.uniform(lo, hi, size=s)
    return Scene(x, support, (lo, hi))


def gaussian_noise(m, eta, rng):
    """Complex Gaussian vector with ``E|e_i|^2 = eta**2`` (real/imag variance eta**2/2)."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    rng = check_random_state(rng)
    e = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    return e * (eta / math.sqrt(2))


def best_s_term_error(x, s):
    """l1 error of the best s-term approximation: sum of the N - s smallest moduli."""
    mags = np.sort(np.abs(np.asarray(x)))
    if not 0 <= s:
        raise ValueError("s must be >= 0")
    return float(mags[: max(mags.size - s, 0)].sum())


def recovery_success(x_true, x_hat, tol=SUCCESS_TOL):
    x_true = check_vector(x_true, name="x_true")
    x_hat = check_vector(x_hat, x_true.size, name="x_hat")
    return bool(np.linalg.norm(x_hat - x_true) <= tol)


def snr_to_eta(x, snr_db):
    """Per-row noise level for a target SNR.

    SNR is ``20 log10(||A x|| / ||e||)`` with ``E||A x||^2 = n^2 ||x||^2`` and
    ``E||e||^2 = n^2 eta^2``, so ``eta = ||x|| / 10**(snr_db / 20)``.
    """
    return float(np.linalg.norm(x) / 10 ** (snr_db / 20))


# -- tiny-instance oracles ------------------------------------------------


def l0_oracle(A, y, s_max, max_N=20, max_s=3):
    """Sparsest least-squares fit found by exhaustive support search.

    Returns ``(support, coefficients)``, where the support is a tuple, or
    ``None`` if no support of size ``<= s_max`` fits ``y`` to relative
    residual 1e-8. Ties are broken by residual, then lexicographically.
    """
    A = np.asarray(A, dtype=np.complex128)
    m, N = A.shape
    y = check_vector(y, m, name="y")
    if N > max_N or s_max > max_s:
        raise BudgetError(f"l0 search limited to N <= {max_N}, s_max <= {max_s}")
    ynorm = np.linalg.norm(y)
    tol = 1e-8 * ynorm
    if ynorm == 0:
        return (), np.zeros(0, dtype=np.complex128)
    for size in range(1, s_max + 1):
        best = None
        for supp in itertools.combinations(range(N), size):
            sub = A[:, supp]
            coef, *_ = np.linalg.lstsq(sub, y, rcond=None)
            res = np.linalg.norm(sub @ coef - y)
            if res <= tol and (best is None or res < best[0]):
                best = (res, supp, coef)
        if best is not None:
            return best[1], best[2]
    return None


@dataclass(frozen=True)
class LpBracket:
    lower: float
    upper: float
    point: np.ndarray = field(repr=False)

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, value, rtol=0.0):
        slack = rtol * max(1.0, abs(self.upper))
        return self.lower - slack <= value <= self.upper + slack


def l1_lp_oracle(A, y, grid_resolution=256, max_N=12, max_m=16):
    """Bracket ``min ||z||_1 s.t. A z = y`` with a polygonal linear program.

    Each modulus ``|z_i|`` is replaced by ``max_k Re(exp(-i phi_k) z_i)``
    over ``grid_resolution`` equally spaced angles. That polygon lies
    inside the unit circle, so the LP optimum is a lower bound. The LP
    minimizer, corrected onto ``A z = y`` by a least-squares step, is
    feasible, and its true l1 norm is an upper bound.
    """
    A = np.asarray(A, dtype=np.complex128)
    m, N = A.shape
    y = check_vector(y, m, name="y")
    if N > max_N or m > max_m:
        raise BudgetError(f"LP oracle limited to N <= {max_N}, m <= {max_m}")
    if np.linalg.norm(y) == 0:
        return LpBracket(0.0, 0.0, np.zeros(N, dtype=np.complex128))
    K = int(grid_resolution)
    phi = 2 * np.pi * np.arange(K) / K
    eye = np.eye(N)
    # variables [u, v, t]: z = u + i v, t_i >= cos(phi) u_i + sin(phi) v_i
    A_ub = np.vstack(
        [np.hstack([np.cos(p) * eye, np.sin(p) * eye, -eye]) for p in phi]
    )
    b_ub = np.zeros(K * N)
    zero = np.zeros((m, N))
    A_eq = np.vstack(
        [
            np.hstack([A.real, -A.imag, zero]),
            np.hstack([A.imag, A.real, zero]),
        ]
    )
    b_eq = np.concatenate([y.real, y.imag])
    c = np.concatenate([np.zeros(2 * N), np.ones(N)])
    bounds = [(None, None)] * (2 * N) + [(0, None)] * N
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP oracle failed: {res.message}")
    z = res.x[:N] + 1j * res.x[N : 2 * N]
    z = z + np.linalg.lstsq(A, y - A @ z, rcond=None)[0]
    # HiGHS optimality tolerance is ~1e-9 relative to the objective
    lower = float(res.fun) * (1 - 1e-9)
    return LpBracket(lower, float(np.abs(z).sum()), z)


@dataclass(frozen=True)
class ErrorBoundRecord:
    lhs: float
    rhs: float
    satisfied: bool


def error_bound_check(x, x_hat, s, eta_row):
    """Compare ``||x - x_hat||_2`` with ``C1 sqrt(s) eta + C2 sigma_s(x)_1``."""
    lhs = float(np.linalg.norm(np.asarray(x) - np.asarray(x_hat)))
    rhs = C1 * math.sqrt(s) * eta_row + C2 * best_s_term_error(x, s)
    return ErrorBoundRecord(lhs, rhs, lhs <= rhs)


# -- Monte Carlo protocols --------------------------------------------------


@dataclass
class TransitionCurve:
    s: int
    N: int
    seed: int
    points: list = field(default_factory=list)  # (n, success_rate, trials)

    @property
    def n_values(self):
        return np.array([p[0] for p in self.points])

    @property
    def rates(self):
        return np.array([p[1] for p in self.points])

    def crossing(self, level=0.5):
        """First ``n`` where the success rate reaches ``level`` (linear interpolation)."""
        ns, rs = self.n_values, self.rates
        for i, r in enumerate(rs):
            if r >= level:
                if i == 0:
                    return float(ns[0])
                n0, n1, r0 = ns[i - 1], ns[i], rs[i - 1]
                return float(n0 + (level - r0) * (n1 - n0) / (r - r0))
        return math.inf


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    p_detect: float
    p_false_alarm: float
    trials: int


def _config_for(N, config):
    if config is None:
        return ImagingConfig.default(N)
    if config.grid_size != N:
        return ImagingConfig.with_grid_size(
            N,
            mesh=config.mesh,
            wavelength=config.wavelength,
            aperture=config.aperture,
            range_z0=config.range_z0,
            center_x=config.center_x,
            center_y=config.center_y,
        )
    return config


def _map(func, tasks, jobs):
    if jobs is None or jobs <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, tasks, chunksize=1))


def _transition_trial(task):
    config, x, n, seed, trial, params, mode = task
    rng = substream(seed, _TRANSITION, n, trial)
    op = ScatteringOperator(config, sample_antennas(config, n, rng), mode=mode)
    y = op.matvec(x)
    try:
        result = solve_bp(op, y, params)
    except DivergenceError:
        return False
    return recovery_success(x, result.x_hat)


def phase_transition(
    s,
    N,
    n_list,
    trials,
    config=None,
    seed=0,
    params=None,
    dynamic_range=(1.0, 10.0),
    mode="factorized",
    jobs=1,
    progress=None,
):
    """Empirical recovery rate versus antenna count for one fixed scene."""
    trials = check_positive_int(trials, "trials")
    n_list = [check_positive_int(n, "n") for n in n_list]
    config = _config_for(N, config)
    params = params or PdhgParams()
    scene = random_scene(N, s, dynamic_range, substream(seed, _SCENE, N, s))
    curve = TransitionCurve(s, N, seed)
    for n in n_list:
        tasks = [(config, scene.x, n, seed, t, params, mode) for t in range(trials)]
        wins = sum(_map(_transition_trial, tasks, jobs))
        curve.points.append((n, wins / trials, trials))
        if progress is not None:
            progress(n, wins, trials)
    return curve


def _roc_trial(task):
    config, x, n, eta, seed, trial, params, mode = task
    rng = substream(seed, _ROC, n, trial)
    op = ScatteringOperator(config, sample_antennas(config, n, rng), mode=mode)
    y = op.matvec(x) + gaussian_noise(op.shape[0], eta, rng)
    try:
        result = solve_bpdn(op, y, eta * n, params)
    except DivergenceError:
        return None
    return np.abs(result.x_hat)


def roc_curve(
    scene,
    n,
    eta,
    tau_list,
    trials,
    config=None,
    seed=0,
    params=None,
    mode="factorized",
    false_alarm_base="targets",
    jobs=1,
):
    """Detection and false-alarm rates of thresholded BPDN reconstructions.

    Each trial redraws both the antennas and the noise. A cell is declared
    occupied when ``|x_hat_k| >= tau``. ``false_alarm_base`` selects the
    false-alarm denominator: the number of true scatterers (``"targets"``)
    or the number of empty cells (``"cells"``). A diverged trial counts as
    no detections and no false alarms.
    """
    trials = check_positive_int(trials, "trials")
    config = _config_for(scene.N, config)
    params = params or PdhgParams()
    tasks = [(config, scene.x, n, eta, seed, t, params, mode) for t in range(trials)]
    mags = _map(_roc_trial, tasks, jobs)
    on = np.zeros(scene.N, dtype=bool)
    on[scene.support] = True
    base = {"targets": scene.s, "cells": scene.N - scene.s}[false_alarm_base]
    points = []
    for tau in tau_list:
        det = fa = 0
        for mag in mags:
            if mag is None:
                continue
            hit = mag >= tau
            det += int(np.count_nonzero(hit & on))
            fa += int(np.count_nonzero(hit & ~on))
        pd = det / (scene.s * trials) if scene.s else 0.0
        pf = fa / (base * trials) if base else 0.0
        points.append(RocPoint(float(tau), pd, pf, trials))
    return points


def _certify_trial(task):
    config, N, s, n, seed, trial, params, mode, solve = task
    rng = substream(seed, _CERTIFY, n, trial)
    scene = random_scene(N, s, (1.0, 10.0), rng)
    op = ScatteringOperator(config, sample_antennas(config, n, rng), mode=mode)
    try:
        report = verify_certificate(op, scene.support, csign(scene.x[scene.support]))
    except np.linalg.LinAlgError:
        report = None
    recovered = None
    if solve:
        try:
            recovered = recovery_success(scene.x, solve_bp(op, op.matvec(scene.x), params).x_hat)
        except DivergenceError:
            recovered = False
    return report, recovered


def certificate_trials(
    s, N, n, draws, config=None, seed=0, params=None, mode="factorized", solve=True, jobs=1
):
    """Per draw: fresh scene and antennas, certificate report, optional BP recovery.

    Returns a list of ``(CertificateReport or None, recovered or None)``;
    the report is ``None`` when the support Gram is rank deficient.
    """
    draws = check_positive_int(draws, "draws")
    config = _config_for(N, config)
    params = params or PdhgParams()
    tasks = [(config, N, s, n, seed, t, params, mode, solve) for t in range(draws)]
    return _map(_certify_trial, tasks, jobs)


# -- CSV output -----------------------------------------------------------


def _metadata_lines(meta):
    lines = [f"# tool: arrayimaging {__version__}"]
    for key in sorted(meta):
        lines.append(f"# {key}: {meta[key]}")
    return lines


def write_curve_csv(path, curve, meta=None):
    meta = dict(meta or {})
    meta.update(s=curve.s, N=curve.N, seed=curve.seed)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in _metadata_lines(meta):
            fh.write(line + "\n")
        fh.write("n,success_rate,trials\n")
        for n, rate, trials in curve.points:
            fh.write(f"{n},{rate!r},{trials}\n")


def write_roc_csv(path, points, meta=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in _metadata_lines(meta or {}):
            fh.write(line + "\n")
        fh.write("threshold,p_detect,p_false_alarm,trials\n")
        for p in points:
            fh.write(f"{p.threshold!r},{p.p_detect!r},{p.p_false_alarm!r},{p.trials}\n")


def curve_to_dict(curve):
    return asdict(curve)
