"""Independent reference implementations used only by the tests."""
from decimal import Decimal, getcontext

import numpy as np

getcontext().prec = 40
_INVPHI = (Decimal(5).sqrt() - 1) / 2


def golden_section_prox(z, tau, iters=200):
    """argmin_x tau|x| + |x - z|^2 / 2 for a complex scalar z.

    The minimiser lies on the segment [0, z], so the search is over the
    modulus t in [0, |z|] with x = t * z / |z|. Arithmetic is 40-digit
    decimal so the bracket can shrink far below float64 resolution.
    """
    r = abs(complex(z))
    if r == 0:
        return 0j
    R, T = Decimal(r), Decimal(tau)

    def f(t):
        return T * t + (t - R) ** 2 / 2

    a, b = Decimal(0), R
    c, d = b - _INVPHI * (b - a), a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    t = (a + b) / 2
    # endpoint t = 0 is a valid minimiser the interior search only approaches
    if f(Decimal(0)) <= f(t):
        t = Decimal(0)
    return float(t) * complex(z) / r


def ball_dual_step(xi, Axbar, y, sigma, eta):
    """Moreau decomposition: v - sigma * P_ball(v / sigma) with v = xi + sigma A xbar."""
    v = xi + sigma * Axbar
    p = v / sigma
    d = p - y
    nrm = np.linalg.norm(d)
    proj = p if nrm <= eta else y + eta * d / nrm
    return v - sigma * proj
