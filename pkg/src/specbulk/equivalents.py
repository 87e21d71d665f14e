"""Deterministic equivalents of the resolvents and derived functionals.

First order: the n x n resolvent of the Gram matrix concentrates around
the block-constant diagonal Qbar with value c0 g_a(z) on class a, and the
p x p companion resolvent around Qtbar = -(1/z)(I + sum_a c_a g_a C_a)^{-1}.

Second order: products of resolvents concentrate around combinations
driven by the k x k kernel

    Omega(z1,z2)_ab = c0 c_b z1 g_a(z1) z2 g_a(z2) (1/p) tr C_a Qtbar_1 C_b Qtbar_2

and R(z1,z2) = diag(c) (I - Omega)^{-1} Omega diag(c)^{-1}.

The module also provides the two channel functionals: the per-class trace
n_a (1 + z c0 g_a(z)) and the log-determinant assembled by quadrature of
tr Qtbar over the noise parameter.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.integrate

from .errors import (
    ConsistencyError,
    NearSupportError,
    QuadratureError,
    ValidationError,
)
from .fixed_point import (
    DEFAULT_OPTIONS,
    ResolventPoint,
    SolverOptions,
    mixture_matrix,
    solve_g,
)
from .model import ModelParams
from .nonneg import spectral_radius


@dataclass(frozen=True)
class EquivalentSet:
    """First-order deterministic equivalents at one point z.

    q_bar_diag holds the k per-class diagonal values c0 g_a(z) of the
    block-constant Qbar; the dense n x n form is never materialized.
    """

    z: complex
    q_bar_diag: np.ndarray
    q_tilde_bar: np.ndarray
    source: ResolventPoint


@dataclass(frozen=True)
class SecondOrderSet:
    """The pair-resolvent kernel Omega and response matrix R at (z1, z2)."""

    z1: complex
    z2: complex
    omega: np.ndarray
    r: np.ndarray
    spectral_radius_omega: float


def first_order(point: ResolventPoint, params: ModelParams) -> EquivalentSet:
    """Build (Qbar, Qtbar) from a converged point and certify the defining system."""
    z = point.z
    m = mixture_matrix(point.g, params)
    try:
        minv = np.linalg.inv(m)
    except np.linalg.LinAlgError as exc:
        raise NearSupportError(
            f"I + sum c_a g_a C_a is singular at z={z}"
        ) from exc
    q_tilde_bar = -minv / z
    residual = np.abs(m @ minv - np.eye(params.p)).max()
    if residual > 1e-10:
        raise NearSupportError(
            f"defining system for Qtbar at z={z} solved to only {residual:.3e}"
        )
    # consistency with the solved point: (1/p) tr C_a Qtbar = gt_a
    traces = np.array(
        [np.einsum("ij,ji->", cov, q_tilde_bar) for cov in params.covariances]
    ) / params.p
    err = np.abs(traces - point.g_tilde).max()
    if err > 1e-10 * (1.0 + np.abs(point.g_tilde).max()):
        raise ConsistencyError(
            f"tr C_a Qtbar disagrees with gt_a by {err:.3e} at z={z}"
        )
    q_bar = params.c0 * np.asarray(point.g, dtype=complex)
    q_bar.setflags(write=False)
    q_tilde_bar.setflags(write=False)
    return EquivalentSet(z=z, q_bar_diag=q_bar, q_tilde_bar=q_tilde_bar, source=point)


def q_bar_trace(eq: EquivalentSet, params: ModelParams) -> complex:
    """(1/n) tr Qbar = sum_a c_a (c0 g_a)."""
    return complex(params.c @ eq.q_bar_diag)


def pair_traces(eq1: EquivalentSet, eq2: EquivalentSet, params: ModelParams):
    """T_ab = (1/p) tr C_a Qtbar_1 C_b Qtbar_2 for all class pairs."""
    k = params.k
    x = [params.covariances[a] @ eq1.q_tilde_bar for a in range(k)]
    y = [params.covariances[b] @ eq2.q_tilde_bar for b in range(k)]
    t = np.empty((k, k), dtype=complex)
    for a in range(k):
        for b in range(k):
            t[a, b] = np.einsum("ij,ji->", x[a], y[b])
    return t / params.p


def omega_radius_bound(z1, z2, params: ModelParams) -> float:
    """Explicit upper bound for rho(Omega(z, z*)): 1 - min-term squared.

    term(z) = (Im z)^2 / (|z| (|Im z| + C_max)); the bound applies with the
    conjugate pairing and degenerates to 1 when either point is real.
    """
    def term(z):
        z = complex(z)
        if z.imag == 0.0 or z == 0:
            return 0.0
        return z.imag**2 / (abs(z) * (abs(z.imag) + params.c_max))

    return 1.0 - min(term(z1), term(z2)) ** 2


def second_order(point1: ResolventPoint, point2: ResolventPoint,
                 params: ModelParams) -> SecondOrderSet:
    """Omega(z1,z2), R(z1,z2) and the spectral radius of Omega."""
    eq1 = first_order(point1, params)
    eq2 = first_order(point2, params)
    return second_order_from_equivalents(eq1, eq2, params)


def second_order_from_equivalents(eq1: EquivalentSet, eq2: EquivalentSet,
                                  params: ModelParams) -> SecondOrderSet:
    z1, z2 = eq1.z, eq2.z
    g1 = eq1.source.g
    g2 = eq2.source.g
    t = pair_traces(eq1, eq2, params)
    omega = (params.c0 * (z1 * g1) * (z2 * g2))[:, None] * params.c[None, :] * t
    rho = spectral_radius(omega)
    if rho >= 1.0:
        raise NearSupportError(
            f"rho(Omega) = {rho:.6f} >= 1 at (z1, z2) = ({z1}, {z2})"
        )
    if rho >= 1.0 - 1e-8:
        warnings.warn(
            f"rho(Omega) = {rho:.12f} is within 1e-8 of 1; R is ill-conditioned",
            RuntimeWarning,
            stacklevel=2,
        )
    resp = np.linalg.solve(np.eye(params.k) - omega, omega)
    r = (params.c[:, None] / params.c[None, :]) * resp
    omega.setflags(write=False)
    r.setflags(write=False)
    return SecondOrderSet(
        z1=z1, z2=z2, omega=omega, r=r, spectral_radius_omega=float(rho)
    )


def _check_pair(so: SecondOrderSet, eq1: EquivalentSet, eq2: EquivalentSet, a: int,
                params: ModelParams):
    if not (so.z1 == eq1.z and so.z2 == eq2.z):
        raise ValidationError(
            f"second-order set at ({so.z1}, {so.z2}) does not match the "
            f"equivalents at ({eq1.z}, {eq2.z})"
        )
    if not 0 <= a < params.k:
        raise ValidationError(f"class index {a} out of range for k={params.k}")


def q_da_q_equivalent(so: SecondOrderSet, eq1: EquivalentSet, eq2: EquivalentSet,
                      a: int, params: ModelParams) -> np.ndarray:
    """Equivalent of Q_{z1} D_a Q_{z2} as k block-diagonal coefficients.

    The equivalent is diagonal and constant on each class block b with value
    c0^2 g_b(z1) g_b(z2) (delta_ab + R_ab); expansion to n x n is left to
    callers that need the dense form.
    """
    _check_pair(so, eq1, eq2, a, params)
    g1 = eq1.source.g
    g2 = eq2.source.g
    coeff = np.zeros(params.k, dtype=complex)
    for b in range(params.k):
        coeff[b] = params.c0**2 * g1[b] * g2[b] * ((1.0 if b == a else 0.0) + so.r[a, b])
    return coeff


def qt_ca_qt_equivalent(so: SecondOrderSet, eq1: EquivalentSet, eq2: EquivalentSet,
                        a: int, params: ModelParams) -> np.ndarray:
    """Equivalent of Qt_{z1} C_a Qt_{z2}: the bar product plus R_ba corrections."""
    _check_pair(so, eq1, eq2, a, params)
    base = [eq1.q_tilde_bar @ params.covariances[b] @ eq2.q_tilde_bar
            for b in range(params.k)]
    out = base[a].copy()
    for b in range(params.k):
        out += so.r[b, a] * base[b]
    return out


def qt_w_da_wt_qt_equivalent(so: SecondOrderSet, eq1: EquivalentSet,
                             eq2: EquivalentSet, a: int,
                             params: ModelParams) -> np.ndarray:
    """Equivalent of (1/p) Qt_{z1} W D_a W^T Qt_{z2}."""
    scale = (so.z1 * so.z2 * params.c0 * params.c[a]
             * eq1.source.g[a] * eq2.source.g[a])
    return scale * qt_ca_qt_equivalent(so, eq1, eq2, a, params)


def class_trace_functional(z: float, a: int, point: ResolventPoint,
                           params: ModelParams) -> float:
    """Equivalent of tr W_a W_a^T (W W^T + sigma^2 I)^{-1} at z = -sigma^2.

    From the push-through identity W^T Qt W = z Q + I_n, the trace equals
    z tr D_a Q + n_a, whose equivalent is n_a (1 + z c0 g_a(z)).
    """
    if not (np.isreal(z) and float(np.real(z)) < 0):
        raise ValidationError(f"z must be real negative, got {z}")
    z = float(np.real(z))
    if not 0 <= a < params.k:
        raise ValidationError(f"class index {a} out of range for k={params.k}")
    if abs(point.z - z) > 1e-12 * (1.0 + abs(z)):
        raise ValidationError(f"point was solved at {point.z}, not at z={z}")
    return float(params.class_sizes[a] * (1.0 + z * params.c0 * point.g[a].real))


class _TraceIntegrand:
    """tr Qtbar_{-t} as a function of t > 0, warm-started across calls."""

    def __init__(self, params, opts):
        self.params = params
        self.opts = opts
        self._g = None

    def __call__(self, t: float) -> float:
        point = solve_g(complex(-t, 0.0), self.params, self.opts, warm_start=self._g)
        self._g = point.g
        m = mixture_matrix(point.g, self.params)
        return float(np.trace(np.linalg.inv(m)).real / t)


def log_det_functional(sigma2: float, params: ModelParams,
                       opts: SolverOptions | None = None) -> float:
    """Deterministic equivalent of log det(W W^T + sigma^2 I_p).

    Assembled from d/dt log det(W W^T + t I) = tr (W W^T + t I)^{-1} whose
    equivalent is tr Qtbar_{-t}:

        p log T - int_{sigma2}^{T} tr Qtbar_{-t} dt
                - int_{T}^{inf} (tr Qtbar_{-t} - p/t) dt

    with T = 1e3 (edge bound + sigma2). The tail integral is mapped to
    [0, 1/T] by u = 1/t; absolute quadrature tolerance is 1e-6 p.
    """
    if not sigma2 > 0:
        raise ValidationError(f"sigma2 must be positive, got {sigma2}")
    opts = opts or DEFAULT_OPTIONS
    p = params.p
    edge_bound = (1.0 + np.sqrt(1.0 / params.c0)) ** 2 * params.c_max
    t_big = 1e3 * (edge_bound + sigma2)
    tol = 1e-6 * p

    f = _TraceIntegrand(params, opts)
    main, main_err = scipy.integrate.quad(
        f, sigma2, t_big, epsabs=0.5 * tol, epsrel=0.0, limit=400
    )

    f_tail = _TraceIntegrand(params, opts)

    def tail_integrand(u):
        return (f_tail(1.0 / u) - p * u) / u**2

    tail, tail_err = scipy.integrate.quad(
        tail_integrand, 0.0, 1.0 / t_big, epsabs=0.4 * tol, epsrel=0.0, limit=200
    )
    if main_err + tail_err > tol:
        raise QuadratureError(
            f"log-det quadrature error {main_err + tail_err:.3e} exceeds {tol:.3e}"
        )
    return float(p * np.log(t_big) - main - tail)
