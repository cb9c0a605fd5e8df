"""Imaging geometry: target grid, antenna sampling and Green's functions.

Targets sit on an ``N1 x N1`` grid at range ``z0``; transducers lie in a
square of side ``B`` on the ``z = 0`` plane. Lengths are in metres.
"""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._validation import ApertureConditionError, check_positive_int, check_random_state

__all__ = [
    "ImagingConfig",
    "AntennaArray",
    "TargetGrid",
    "ParaxialErrorReport",
    "sample_antennas",
    "green_exact",
    "green_paraxial",
    "paraxial_kernel",
    "paraxial_error_report",
    "orthonormality_gram",
]

APERTURE_RTOL = 1e-9
FAR_FIELD_FACTOR = 10.0

_CONFIG_KEYS = {
    "lambda_m": "wavelength",
    "aperture_m": "aperture",
    "range_m": "range_z0",
    "mesh_m": "mesh",
    "halfsize_m": "halfsize",
    "domain_center_x_m": "center_x",
    "domain_center_y_m": "center_y",
}


class ConfigParseError(ValueError):
    def __init__(self, lineno, message):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


@dataclass(frozen=True)
class ImagingConfig:
    """Physical imaging setup.

    Construction fails unless the aperture ratio ``rho = d0*B/(lambda*z0)``
    is a positive integer (relative tolerance 1e-9); that condition makes
    the normalized paraxial Green's functions orthonormal over the antenna
    square. A ``UserWarning`` is emitted when ``z0 < 10 * (B + L)``.
    """

    wavelength: float
    aperture: float
    range_z0: float
    mesh: float
    halfsize: float
    center_x: float = 0.0
    center_y: float = 0.0
    grid_side: int = field(init=False)
    rho: int = field(init=False)

    def __post_init__(self):
        for name in ("wavelength", "aperture", "range_z0", "mesh", "halfsize"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        ratio = self.mesh * self.aperture / (self.wavelength * self.range_z0)
        nearest = round(ratio)
        if nearest < 1 or abs(ratio - nearest) > APERTURE_RTOL * ratio:
            raise ApertureConditionError(
                f"aperture condition violated: rho = d0*B/(lambda*z0) = {ratio:.12g} "
                "is not a positive integer"
            )
        object.__setattr__(self, "rho", int(nearest))
        # guard floor() against 2L/d0 landing just below an integer
        side = int(math.floor(2 * self.halfsize / self.mesh + 1e-9))
        if side < 1:
            raise ValueError("halfsize too small for a single grid cell")
        object.__setattr__(self, "grid_side", side)
        if self.range_z0 < FAR_FIELD_FACTOR * (self.aperture + self.halfsize):
            warnings.warn(
                f"z0 = {self.range_z0:g} is below {FAR_FIELD_FACTOR:g}*(B + L); "
                "the paraxial approximation may be inaccurate",
                UserWarning,
                stacklevel=3,
            )

    @property
    def grid_size(self):
        return self.grid_side**2

    @property
    def center(self):
        return np.array([self.center_x, self.center_y])

    @property
    def fresnel_scale(self):
        """1 / (lambda * z0), the quadratic-phase coefficient."""
        return 1.0 / (self.wavelength * self.range_z0)

    @property
    def carrier_phase(self):
        """exp(2*pi*i*z0/lambda), computed modulo one period."""
        return np.exp(2j * np.pi * math.fmod(self.range_z0 / self.wavelength, 1.0))

    @classmethod
    def default(cls, grid_size=6400, **overrides):
        """lambda = 0.03, d0 = 10, z0 = 10000, B = 30 with ``grid_size`` cells."""
        params = dict(wavelength=0.03, aperture=30.0, range_z0=10000.0, mesh=10.0)
        params.update(overrides)
        return cls.with_grid_size(grid_size, **params)

    @classmethod
    def with_grid_size(cls, grid_size, mesh, **params):
        """Choose the halfsize so that the grid has exactly ``grid_size`` cells."""
        side = math.isqrt(int(grid_size))
        if side * side != grid_size or side < 1:
            raise ValueError(f"grid_size must be a positive perfect square, got {grid_size}")
        return cls(mesh=mesh, halfsize=side * mesh / 2.0, **params)

    def to_text(self):
        lines = []
        for key, attr in _CONFIG_KEYS.items():
            lines.append(f"{key} = {getattr(self, attr)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigParseError(lineno, f"expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_KEYS:
                raise ConfigParseError(lineno, f"unknown key {key!r}")
            if key in values:
                raise ConfigParseError(lineno, f"duplicate key {key!r}")
            try:
                values[key] = float(value)
            except ValueError:
                raise ConfigParseError(lineno, f"{key}: not a number: {value!r}") from None
        missing = [k for k in _CONFIG_KEYS if k not in values and not k.startswith("domain_")]
        if missing:
            raise ConfigParseError(len(text.splitlines()), f"missing keys: {', '.join(missing)}")
        return cls(**{_CONFIG_KEYS[k]: v for k, v in values.items()})

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())


@dataclass(frozen=True)
class AntennaArray:
    """Transducer positions ``(n, 2)`` inside the side-``B`` antenna square."""

    positions: np.ndarray
    center: tuple = (0.0, 0.0)
    side: float = 1.0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise ValueError(f"positions must have shape (n, 2), got {pos.shape}")
        lo = np.asarray(self.center) - self.side / 2
        hi = np.asarray(self.center) + self.side / 2
        if np.any(pos < lo) or np.any(pos > hi):
            raise ValueError("antenna position outside the aperture square")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def n(self):
        return self.positions.shape[0]


class TargetGrid:
    """Resolution cells ``r = (-L + (k+1) d0, -L + (l+1) d0, z0)``.

    ``k, l`` run over ``0..N1-1`` and the flat index is ``k * N1 + l``
    (lexicographic in ``(k, l)``).
    """

    def __init__(self, config):
        self.config = config
        self.side = config.grid_side
        self.axis = -config.halfsize + config.mesh * np.arange(1, self.side + 1)
        kk, ll = np.meshgrid(self.axis, self.axis, indexing="ij")
        pts = np.empty((self.side**2, 3))
        pts[:, 0] = kk.ravel()
        pts[:, 1] = ll.ravel()
        pts[:, 2] = config.range_z0
        pts.setflags(write=False)
        self.points = pts

    def __len__(self):
        return self.side**2

    def flat_index(self, k, l):
        return np.asarray(k) * self.side + np.asarray(l)

    def double_index(self, flat):
        return np.divmod(np.asarray(flat), self.side)


def sample_antennas(config, n, rng):
    """Draw ``n`` positions iid uniform on the configured aperture square."""
    n = check_positive_int(n, "n")
    rng = check_random_state(rng)
    half = config.aperture / 2
    pos = rng.uniform(-half, half, size=(n, 2)) + config.center
    return AntennaArray(pos, center=(config.center_x, config.center_y), side=config.aperture)


def green_exact(r, b, wavelength):
    """Free-space Helmholtz Green's function exp(2 pi i |r-b| / lambda) / (4 pi |r-b|)."""
    dist = np.linalg.norm(np.asarray(r, dtype=float) - np.asarray(b, dtype=float), axis=-1)
    if np.any(dist == 0):
        raise ZeroDivisionError("Green's function is singular at r == b")
    return np.exp(2j * np.pi * dist / wavelength) / (4 * np.pi * dist)


def green_paraxial(r, b, config):
    """Normalized paraxial Green's function; unit modulus.

    Only the transverse coordinates of ``r`` (range plane) and ``b``
    (antenna plane) are used, so 2- or 3-vectors are accepted. Broadcasts.
    """
    r = np.asarray(r, dtype=float)[..., :2]
    b = np.asarray(b, dtype=float)[..., :2]
    sq = np.sum((r - b) ** 2, axis=-1)
    return config.carrier_phase * np.exp(1j * np.pi * config.fresnel_scale * sq)


def paraxial_kernel(config, antennas, points):
    """Matrix ``G[j, l] = green_paraxial(points[l], antennas[j])``."""
    antennas = np.asarray(antennas, dtype=float)[:, :2]
    points = np.asarray(points, dtype=float)[:, :2]
    return green_paraxial(points[None, :, :], antennas[:, None, :], config)


@dataclass(frozen=True)
class ParaxialErrorReport:
    """Distance error of the paraxial expansion, in wavelengths."""

    max_error: float
    mean_error: float
    pairs: int


def _paraxial_distance_error(transverse_sq, z0):
    # sqrt(z0^2 + d^2) - z0 written without cancellation
    exact_excess = transverse_sq / (np.sqrt(z0**2 + transverse_sq) + z0)
    return np.abs(exact_excess - transverse_sq / (2 * z0))


def paraxial_error_report(config, sample_pairs, rng):
    sample_pairs = check_positive_int(sample_pairs, "sample_pairs")
    rng = check_random_state(rng)
    grid = TargetGrid(config)
    ants = sample_antennas(config, sample_pairs, rng).positions
    cells = grid.points[rng.integers(0, len(grid), size=sample_pairs), :2]
    sq = np.sum((cells - ants) ** 2, axis=1)
    err = _paraxial_distance_error(sq, config.range_z0) / config.wavelength
    return ParaxialErrorReport(float(err.max()), float(err.mean()), sample_pairs)


def orthonormality_gram(config, indices, nodes=256):
    """Midpoint-rule Gram matrix of the paraxial functions over the aperture.

    Entry ``(m, l)`` approximates
    ``B**-2 * integral G(b, r_m) conj(G(b, r_l)) db`` with ``nodes**2``
    tensor-product nodes.
    """
    grid = TargetGrid(config)
    idx = np.asarray(indices, dtype=int)
    h = config.aperture / nodes
    axis = -config.aperture / 2 + h * (np.arange(nodes) + 0.5)
    bx, by = np.meshgrid(axis + config.center_x, axis + config.center_y, indexing="ij")
    b = np.stack([bx.ravel(), by.ravel()], axis=1)
    vals = paraxial_kernel(config, b, grid.points[idx])  # (nodes**2, len(idx))
    return (vals.T @ vals.conj()) / b.shape[0]
