"""Compressive array imaging: far-field scattering operator, l1 recovery,
dual-certificate checks and Monte Carlo experiment harnesses."""

__version__ = "0.1.0"

from .certificates import (  # noqa: E402
    CertificateReport,
    build_certificate,
    coherence,
    gram_deviation,
    verify_certificate,
)
from .geometry import (  # noqa: E402
    AntennaArray,
    ImagingConfig,
    TargetGrid,
    green_exact,
    green_paraxial,
    sample_antennas,
)
from .operator import ScatteringOperator, build_scattering_matrix, operator_norm  # noqa: E402
from .solver import (  # noqa: E402
    BasisPursuit,
    BasisPursuitDenoising,
    PdhgParams,
    SolveResult,
    solve_bp,
    solve_bpdn,
)

__all__ = [
    "AntennaArray",
    "BasisPursuit",
    "BasisPursuitDenoising",
    "CertificateReport",
    "ImagingConfig",
    "PdhgParams",
    "ScatteringOperator",
    "SolveResult",
    "TargetGrid",
    "build_certificate",
    "build_scattering_matrix",
    "coherence",
    "gram_deviation",
    "green_exact",
    "green_paraxial",
    "operator_norm",
    "sample_antennas",
    "solve_bp",
    "solve_bpdn",
    "verify_certificate",
]
