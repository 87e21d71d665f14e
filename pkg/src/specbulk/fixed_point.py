"""Coupled fixed-point solver for the class resolvent functions g_a(z).

For each complex z off the real axis there is a unique admissible vector
(g_1(z), ..., g_k(z)) solving

    c0 g_a = -1 / (z (1 + gt_a)),
    gt_a   = -(1/z) (1/p) tr C_a (I_p + sum_b c_b g_b C_b)^{-1},

equivalently the fixed point of the map

    Psi_a(g) = -(1/c0) / (z - (1/p) tr C_a (I_p + sum_b c_b g_b C_b)^{-1}).

The measure of interest has Stieltjes transform m(z) = c0 sum_a c_a g_a(z).
Solving is done by damped Picard iteration on Psi, with continuation in
the imaginary part toward the real axis and warm starting across nearby
points. Real-axis values outside the support are obtained by descending
the imaginary part to ~1e-9 and polishing at exactly zero.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConsistencyError,
    NonConvergenceError,
    NumericalSingularityError,
    ValidationError,
)
from .model import ModelParams

# Residual denominators are guarded by this floor to avoid 0/0.
_NORM_FLOOR = 1e-30
# Imaginary part below which a real-axis target is solved by continuation.
_REAL_AXIS_ETA_FLOOR = 1e-9
# Evaluation budget for a warm-start attempt before falling back to the
# continuation ladder (a warm start from across a support edge can stall).
_WARM_EVAL_CAP = 150


@dataclass(frozen=True)
class SolverOptions:
    """Fixed-point solver knobs.

    tol is the relative sup-norm residual on g. damping in (0, 1] is the
    Picard step fraction; it is halved adaptively when the iteration
    oscillates. Points with |Im z| < continuation_start_im are reached by
    halving the imaginary part from that level, warm-starting each level.
    """

    tol: float = 1e-12
    max_iter: int = 10_000
    damping: float = 1.0
    continuation_start_im: float = 1.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValidationError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValidationError(f"max_iter must be >= 1, got {self.max_iter}")
        if not 0.0 < self.damping <= 1.0:
            raise ValidationError(f"damping must lie in (0, 1], got {self.damping}")
        if not self.continuation_start_im > 0:
            raise ValidationError("continuation_start_im must be positive")


DEFAULT_OPTIONS = SolverOptions()


@dataclass(frozen=True)
class ResolventPoint:
    """Solved state at one complex point z."""

    z: complex
    g: np.ndarray
    g_tilde: np.ndarray
    m_mu: complex
    iterations: int
    residual: float


def mixture_matrix(g, params: ModelParams) -> np.ndarray:
    """I_p + sum_b c_b g_b C_b for the current iterate g."""
    c = params.c
    m = np.eye(params.p, dtype=complex)
    for b in range(params.k):
        m = m + (c[b] * g[b]) * params.covariances[b]
    return m


def _trace_terms(g, z, params: ModelParams):
    """Traces t_a = (1/p) tr C_a M^{-1} plus M^{-1} for M = I + sum c_b g_b C_b."""
    m = mixture_matrix(g, params)
    try:
        minv = np.linalg.inv(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalSingularityError(
            f"singular mixture matrix I + sum c_b g_b C_b at z={z}", z=z
        ) from exc
    t = np.array(
        [np.einsum("ij,ji->", params.covariances[a], minv) for a in range(params.k)]
    ) / params.p
    return t, minv


def psi_step(g, z, params: ModelParams):
    """One application of the fixed-point map Psi at the point z."""
    g = np.asarray(g, dtype=complex)
    t, _ = _trace_terms(g, z, params)
    denom = z - t
    if np.any(np.abs(denom) < _NORM_FLOOR):
        raise NumericalSingularityError(f"vanishing denominator z - trace at z={z}", z=z)
    return -1.0 / (params.c0 * denom)


def initial_guess(z, params: ModelParams) -> np.ndarray:
    """The exact z -> infinity asymptote g_a = -1/(c0 z), admissible for large |z|."""
    return np.full(params.k, -1.0 / (params.c0 * z), dtype=complex)


def _psi_jacobian(t, minv, z, params: ModelParams):
    """Exact k x k Jacobian of Psi at the current iterate.

    dPsi_a/dg_b = (1/c0) (z - t_a)^{-2} c_b (1/p) tr C_a M^{-1} C_b M^{-1};
    at the fixed point this is the kernel Omega(z, z).
    """
    k = params.k
    x = [params.covariances[a] @ minv for a in range(k)]
    pair = np.empty((k, k), dtype=complex)
    for a in range(k):
        for b in range(a, k):
            pair[a, b] = np.einsum("ij,ji->", x[a], x[b])
            pair[b, a] = pair[a, b]
    u2 = (z - t) ** 2
    return (params.c[None, :] / params.c0) * pair / params.p / u2[:, None]


def _psi_eval(g, z, params):
    """One Psi application: (f, residual, traces, mixture inverse)."""
    t, minv = _trace_terms(g, z, params)
    denom = z - t
    if np.any(np.abs(denom) < _NORM_FLOOR):
        raise NumericalSingularityError(
            f"vanishing denominator z - trace at z={z}", z=z
        )
    f = -1.0 / (params.c0 * denom)
    resid = np.abs(f - g).max() / (np.abs(g).max() + _NORM_FLOOR)
    return f, float(resid), t, minv


def _wrong_half_plane(candidate, z):
    """True when a step jumps toward the conjugate branch."""
    if z.imag == 0.0:
        return False
    sign = 1.0 if z.imag > 0 else -1.0
    scale = np.abs(candidate).max() + _NORM_FLOOR
    return bool(np.any(sign * candidate.imag < -0.02 * scale))


def _iterate(z, g0, params: ModelParams, opts: SolverOptions):
    """Damped Picard iteration on Psi from g0, at fixed z.

    Near the real axis the Picard multipliers approach the unit circle and
    plain (real-)damped iteration stalls, so once slow progress is detected
    the step switches to Newton on Psi(g) - g with the exact k x k Jacobian,
    halving the Newton step until the true residual decreases. Every
    candidate is judged on its actual residual, so the returned g always
    satisfies ||Psi(g) - g||_inf <= tol ||g||_inf regardless of how the
    step was produced.
    """
    g = np.asarray(g0, dtype=complex)
    f, resid, t, minv = _psi_eval(g, z, params)
    evals = 1
    if resid <= opts.tol:
        return g, resid, evals
    damping = opts.damping
    prev_delta = None
    prev_resid = np.inf
    worse_count = 0
    newton = False
    jac = None
    jac_age = 0
    while evals < opts.max_iter:
        delta = f - g

        # Dominant-mode multiplier estimate from consecutive increments
        # (unconjugated: the map is holomorphic in g).
        mu = None
        if prev_delta is not None:
            denom_mu = prev_delta @ prev_delta
            if abs(denom_mu) > _NORM_FLOOR:
                mu = (prev_delta @ delta) / denom_mu

        if not newton and evals >= 5 and resid > 100.0 * opts.tol:
            slow_mode = mu is not None and abs(mu) > 0.6
            slow_resid = prev_resid < np.inf and resid > 0.5 * prev_resid
            if slow_mode or slow_resid:
                newton = True

        stepped = False
        if newton:
            # chord variant: the Jacobian is refreshed only when stale,
            # otherwise Newton costs one Psi application per step
            if jac is None or jac_age >= 4:
                jac = _psi_jacobian(t, minv, z, params)
                jac_age = 0
            try:
                step = np.linalg.solve(np.eye(params.k) - jac, delta)
            except np.linalg.LinAlgError:
                step = delta
            for frac in (1.0, 0.5, 0.25, 0.125):
                candidate = g + frac * step
                if _wrong_half_plane(candidate, z):
                    continue
                f_c, resid_c, t_c, minv_c = _psi_eval(candidate, z, params)
                evals += 1
                if resid_c < resid:
                    prev_resid = resid
                    prev_delta = None
                    g, f, resid, t, minv = candidate, f_c, resid_c, t_c, minv_c
                    stepped = True
                    jac_age += 1
                    break
                if evals >= opts.max_iter:
                    break
            if not stepped and jac_age > 0:
                # stale Jacobian may be the culprit: rebuild and retry once
                jac = _psi_jacobian(t, minv, z, params)
                jac_age = 0
                try:
                    step = np.linalg.solve(np.eye(params.k) - jac, delta)
                except np.linalg.LinAlgError:
                    step = delta
                candidate = g + step
                if not _wrong_half_plane(candidate, z) and evals < opts.max_iter:
                    f_c, resid_c, t_c, minv_c = _psi_eval(candidate, z, params)
                    evals += 1
                    if resid_c < resid:
                        prev_resid = resid
                        prev_delta = None
                        g, f, resid, t, minv = candidate, f_c, resid_c, t_c, minv_c
                        stepped = True
                        jac_age = 1

        if not stepped:
            # damped Picard step (also the fallback when Newton stalls)
            if resid > prev_resid:
                worse_count += 1
                if worse_count >= 2:
                    damping = max(damping / 2.0, 1.0 / 64.0)
                    worse_count = 0
            else:
                worse_count = 0
            if (mu is not None and mu.real < -0.3 and abs(mu) > 0.6
                    and damping > 0.5):
                damping = max(damping / 2.0, 1.0 / 64.0)
            candidate = g + damping * delta
            f_c, resid_c, t_c, minv_c = _psi_eval(candidate, z, params)
            evals += 1
            prev_resid = resid
            prev_delta = delta
            g, f, resid, t, minv = candidate, f_c, resid_c, t_c, minv_c

        if resid <= opts.tol:
            return g, resid, evals
    raise NonConvergenceError(
        f"no convergence at z={z} after {opts.max_iter} evaluations "
        f"(last residual {resid:.3e})",
        z=z,
        residual=float(resid),
        iterations=evals,
    )


def _check_admissible(z, g, params: ModelParams, tol):
    """Sign constraints on the admissible half-plane solution, with slack."""
    sign = 1.0 if z.imag > 0 else -1.0
    img = sign * g.imag
    imzg = sign * (z * g).imag
    scale = np.abs(g).max() + _NORM_FLOOR
    slack = 1e-10 * scale
    if np.any(img < -slack) or np.any(imzg < -slack * abs(z)):
        raise ConsistencyError(
            f"solution at z={z} violates half-plane sign constraints "
            f"(min Im g = {img.min():.3e})"
        )
    if np.any((img >= 0) & (img < 1e-14)) and abs(z.imag) < 1e6:
        warnings.warn(
            f"Im g_a at z={z} is below 1e-14; strict positivity is marginal",
            RuntimeWarning,
            stacklevel=3,
        )
    bound = 1.0 / abs(z.imag)
    if np.any(params.c0 * np.abs(g) > bound * (1.0 + 1e-8)):
        raise ConsistencyError(
            f"solution at z={z} violates c0 |g_a| <= 1/|Im z|"
        )


def _finish(z, g, resid, evals, params: ModelParams) -> ResolventPoint:
    t, _ = _trace_terms(g, z, params)
    g_tilde = -t / z
    m_mu = params.c0 * complex(params.c @ g)
    g = g.copy()
    g.setflags(write=False)
    g_tilde.setflags(write=False)
    return ResolventPoint(
        z=complex(z),
        g=g,
        g_tilde=g_tilde,
        m_mu=m_mu,
        iterations=int(evals),
        residual=float(resid),
    )


def _continuation_levels(target_im, start_im):
    """Imaginary parts from start_im down to target_im by halving."""
    levels = []
    eta = start_im
    while eta > target_im * (1.0 + 1e-12):
        levels.append(eta)
        eta /= 2.0
    levels.append(target_im)
    return levels


def _capped(opts: SolverOptions) -> SolverOptions:
    if opts.max_iter <= _WARM_EVAL_CAP:
        return opts
    return SolverOptions(
        tol=opts.tol,
        max_iter=_WARM_EVAL_CAP,
        damping=opts.damping,
        continuation_start_im=opts.continuation_start_im,
    )


def _solve_complex(z, params, opts, warm_start=None):
    if warm_start is not None:
        try:
            g, resid, evals = _iterate(z, warm_start, params, _capped(opts))
            return g, resid, evals
        except NonConvergenceError:
            pass  # fall back to a fresh continuation ladder
    if abs(z.imag) >= opts.continuation_start_im:
        return _iterate(z, initial_guess(z, params), params, opts)
    sign = 1.0 if z.imag > 0 else -1.0
    total = 0
    g = None
    for eta in _continuation_levels(abs(z.imag), opts.continuation_start_im):
        z_level = complex(z.real, sign * eta)
        g0 = initial_guess(z_level, params) if g is None else g
        g, resid, evals = _iterate(z_level, g0, params, opts)
        total += evals
    return g, resid, total


def _solve_real(z, params, opts, warm_start=None):
    """Real z outside the support: descend in Im z, then polish at eta = 0."""
    x = float(z.real)
    total = 0
    if warm_start is not None:
        try:
            g, resid, evals = _iterate(complex(x, 0.0), warm_start, params,
                                       _capped(opts))
            total = evals
        except NonConvergenceError:
            warm_start = None
    if warm_start is None:
        g = None
        for eta in _continuation_levels(_REAL_AXIS_ETA_FLOOR, opts.continuation_start_im):
            z_level = complex(x, eta)
            g0 = initial_guess(z_level, params) if g is None else g
            g, resid, evals = _iterate(z_level, g0, params, opts)
            total += evals
        # final undamped polish at exactly eta = 0
        polish = SolverOptions(
            tol=opts.tol,
            max_iter=opts.max_iter,
            damping=1.0,
            continuation_start_im=opts.continuation_start_im,
        )
        g, resid, evals = _iterate(complex(x, 0.0), g, params, polish)
        total += evals
    rel_imag = np.abs(g.imag).max() / (np.abs(g).max() + _NORM_FLOOR)
    if rel_imag > 1e-6:
        raise ConsistencyError(
            f"real-axis solve at z={x} kept imaginary mass {rel_imag:.3e}; "
            "the point is inside or too close to the support"
        )
    g = g.real.astype(complex)
    t, _ = _trace_terms(g, complex(x, 0.0), params)
    f = -1.0 / (params.c0 * (x - t))
    resid = np.abs(f - g).max() / (np.abs(g).max() + _NORM_FLOOR)
    if x < 0 and np.any(params.c0 * g.real <= 0):
        raise ConsistencyError(
            f"real-axis solve at z={x} lost positivity of c0 g_a"
        )
    return g, resid, total


def solve_g(z, params: ModelParams, opts: SolverOptions | None = None,
            warm_start=None) -> ResolventPoint:
    """Solve the coupled fixed-point system at one complex point.

    Points with small |Im z| are reached by continuation from
    Re z + i * continuation_start_im unless a warm start is supplied, in
    which case direct iteration is tried first. Real z must lie outside
    the support (and away from 0); this is verified a posteriori via the
    residual and the vanishing imaginary part.
    """
    opts = opts or DEFAULT_OPTIONS
    params = _require_validated(params)
    z = complex(z)
    if z == 0:
        raise ValidationError("z = 0 is excluded (atom location)")
    if warm_start is not None:
        warm_start = np.asarray(warm_start, dtype=complex)
        if warm_start.shape != (params.k,):
            raise ValidationError(
                f"warm start has shape {warm_start.shape}, expected ({params.k},)"
            )
    if z.imag == 0.0:
        g, resid, evals = _solve_real(z, params, opts, warm_start)
    else:
        g, resid, evals = _solve_complex(z, params, opts, warm_start)
        try:
            _check_admissible(z, g, params, opts.tol)
        except ConsistencyError:
            if warm_start is None:
                raise
            # a warm start across a support edge can land on the conjugate
            # branch; redo the point through the continuation ladder
            g, resid, evals2 = _solve_complex(z, params, opts, None)
            evals += evals2
            _check_admissible(z, g, params, opts.tol)
    return _finish(z, g, resid, evals, params)


def solve_grid(zs, params: ModelParams, opts: SolverOptions | None = None):
    """Warm-started sweep over an ordered list of complex points.

    Point i+1 starts from point i's solution; the first point (and any
    point where the warm start fails) goes through the continuation
    ladder inside solve_g. Real grid points are rejected: evaluating on
    the axis requires an explicit eta (see the spectrum module).
    """
    zs = [complex(zv) for zv in zs]
    if not zs:
        raise ValidationError("empty grid")
    if any(zv.imag == 0.0 for zv in zs):
        raise ValidationError(
            "solve_grid requires Im z != 0 for every point; use an explicit eta"
        )
    opts = opts or DEFAULT_OPTIONS
    params = _require_validated(params)
    points = []
    warm = None
    for i, zv in enumerate(zs):
        try:
            point = solve_g(zv, params, opts, warm_start=warm)
        except Exception as exc:
            raise type(exc)(f"grid index {i} (z={zv}): {exc}") from exc
        points.append(point)
        warm = point.g
    return points


def g_derivative(point: ResolventPoint, params: ModelParams) -> np.ndarray:
    """g'(z) from the solved point via g' = c0 (I - Omega(z,z))^{-1} g^2.

    Omega(z,z)_ab = c0 c_b (z g_a)^2 (1/p) tr C_a Qt_z C_b Qt_z collapses to
    c0 c_b g_a^2 (1/p) tr C_a M^{-1} C_b M^{-1} with M = I + sum c_b g_b C_b.
    """
    params = _require_validated(params)
    g = np.asarray(point.g, dtype=complex)
    _, minv = _trace_terms(g, point.z, params)
    k = params.k
    x = [params.covariances[a] @ minv for a in range(k)]
    pair = np.empty((k, k), dtype=complex)
    for a in range(k):
        for b in range(k):
            pair[a, b] = np.einsum("ij,ji->", x[a], x[b])
    omega = params.c0 * (g**2)[:, None] * params.c[None, :] * pair / params.p
    try:
        deriv = np.linalg.solve(np.eye(k) - omega, params.c0 * g**2)
    except np.linalg.LinAlgError as exc:
        raise NumericalSingularityError(
            f"I - Omega(z,z) singular at z={point.z}: too close to the support",
            z=point.z,
        ) from exc
    return deriv


def _require_validated(params: ModelParams) -> ModelParams:
    if not params.validated:
        raise ValidationError("ModelParams must go through validate_model first")
    return params
