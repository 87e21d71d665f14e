"""Shared oracles and model builders for the test suite."""
import numpy as np

from specbulk.model import (
    CovarianceSpec,
    ModelParams,
    ModelSpec,
    build_covariance,
    validate_model,
)

# Three-class Toeplitz demo family: scales 1, 9, 17 with ratios 0, 0.2, 0.4
# and class fractions 1/8, 5/8, 1/4 at aspect ratio c0 = 8.
THREECLASS_SPECS = (
    CovarianceSpec("toeplitz", scale=1.0, rho=0.0),
    CovarianceSpec("toeplitz", scale=9.0, rho=0.2),
    CovarianceSpec("toeplitz", scale=17.0, rho=0.4),
)
THREECLASS_BASE = ModelSpec(p=64, classes=((1, THREECLASS_SPECS[0]),
                                           (5, THREECLASS_SPECS[1]),
                                           (2, THREECLASS_SPECS[2])))


def threeclass_params(p=256):
    """The three-class Toeplitz model at dimension p (multiple of 64)."""
    return THREECLASS_BASE.at_p(p)


def mp_params(c0_num, c0_den, p=16):
    """k=1, C=I model with c0 = c0_num/c0_den; its measure depends on c0 only."""
    if (p * c0_den) % c0_num:
        raise ValueError("p incompatible with the requested ratio")
    n = p * c0_den // c0_num
    return validate_model(
        ModelParams(p=p, class_sizes=(n,), covariances=(np.eye(p),))
    )


def mp_spec(p_base, n_base):
    return ModelSpec(p=p_base, classes=((n_base, CovarianceSpec("identity")),))


def mp_stieltjes(z, c0):
    """Closed-form Stieltjes transform of the square-root law with ratio c0.

    Root of z m^2 + (c0 z - c0 + 1) m + c0 = 0 with Im(m) Im(z) > 0 off the
    axis; on the negative real axis the transform is the positive root.
    """
    z = complex(z)
    b = c0 * z - c0 + 1.0
    disc = np.sqrt(b * b - 4.0 * z * c0 + 0j)
    roots = [(-b + disc) / (2 * z), (-b - disc) / (2 * z)]
    if z.imag != 0:
        return next(m for m in roots if m.imag * z.imag > 0)
    if z.real < 0:
        return max(roots, key=lambda m: m.real)
    return min(roots, key=lambda m: m.real)


def mp_edges(c0):
    """Support edges (1 -/+ sqrt(1/c0))^2 of the continuous part."""
    r = np.sqrt(1.0 / c0)
    return (1.0 - r) ** 2, (1.0 + r) ** 2


def mp_density(x, c0):
    """Continuous density of the square-root law with ratio c0."""
    lo, hi = mp_edges(c0)
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = (x > lo) & (x < hi)
    y = 1.0 / c0
    out[inside] = np.sqrt((hi - x[inside]) * (x[inside] - lo)) / (
        2 * np.pi * y * x[inside]
    )
    return out
