"""Density of the limiting measure on the real line, support detection, atom at 0.

The density at x is (1/pi) Im m(x + i eta) for small eta > 0. The support
is recovered as the region where the near-axis density exceeds a
threshold; candidate region boundaries coming from a coarse grid are
verified and refined at eta_edge = 1e-6, where Lorentzian smoothing is
negligible at the threshold scale.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import ValidationError
from .fixed_point import DEFAULT_OPTIONS, SolverOptions, solve_g, solve_grid
from .model import ModelParams

# eta used for edge verification/bisection; Lorentzian fill from neighboring
# bulks at this eta sits far below any sensible threshold.
EDGE_ETA = 1e-6
_EDGE_BISECTIONS = 40
# grid values below this fraction of the peak get re-verified at EDGE_ETA
_SUSPECT_FRACTION = 0.05


@dataclass(frozen=True)
class DensityGrid:
    """Density values on an ascending grid, with detected support and atom.

    density holds the continuous part: when the measure carries an atom at
    zero, the atom's smoothing kernel atom * (eta/pi) / (x^2 + eta^2) is
    subtracted so that atom_at_zero + integral(density) is the total mass.
    """

    xs: np.ndarray
    density: np.ndarray
    eta: float
    support: tuple[tuple[float, float], ...]
    atom_at_zero: float
    total_mass: float
    params: ModelParams
    opts: SolverOptions


def density_at(x: float, eta: float, params: ModelParams,
               opts: SolverOptions | None = None) -> float:
    """(1/pi) Im m(x + i eta), clamped at zero."""
    if not eta > 0:
        raise ValidationError(f"eta must be positive, got {eta}")
    point = solve_g(complex(x, eta), params, opts or DEFAULT_OPTIONS)
    return max(point.m_mu.imag / np.pi, 0.0)


class _WarmDensity:
    """Chained density evaluations at fixed eta, warm-started point to point.

    When the measure has an atom at zero, its smoothing kernel is removed
    so that values are comparable with the continuous density stored on
    grids.
    """

    def __init__(self, params, opts, eta, atom=0.0):
        self.params = params
        self.opts = opts
        self.eta = eta
        self.atom = atom
        self._g = None

    def __call__(self, x: float) -> float:
        point = solve_g(complex(x, self.eta), self.params, self.opts,
                        warm_start=self._g)
        self._g = point.g
        val = point.m_mu.imag / np.pi
        if self.atom > 0.0:
            val -= self.atom * (self.eta / np.pi) / (x**2 + self.eta**2)
        return max(val, 0.0)


def atom_at_zero(params: ModelParams, opts: SolverOptions | None = None,
                 etas=(1e-3, 1e-4, 1e-5)) -> float:
    """Mass of the atom at zero.

    With every class covariance nonsingular the rank argument is exact:
    the n x n Gram matrix has exactly n - p zero eigenvalues when p < n,
    so the atom is max(0, 1 - c0). Otherwise the atom is the eta -> 0
    limit of Re(-i eta m(i eta)), estimated on a decreasing eta ladder
    with geometric (Aitken) extrapolation.
    """
    opts = opts or DEFAULT_OPTIONS
    min_eig = min(np.linalg.eigvalsh(cov)[0] for cov in params.covariances)
    if min_eig > 1e-10 * (1.0 + params.c_max):
        # nonsingular classes: rank forces exactly n - p zeros when p < n
        return max(0.0, 1.0 - params.c0)
    vals = []
    warm = None
    for eta in sorted(etas, reverse=True):
        point = solve_g(1j * eta, params, opts, warm_start=warm)
        warm = point.g
        vals.append(min(max((-1j * eta * point.m_mu).real, 0.0), 1.0))
    a1, a2, a3 = vals[-3:] if len(vals) >= 3 else (vals + vals)[:3]
    d1, d2 = a2 - a1, a3 - a2
    if d1 * d2 <= 0 or abs(d2) >= abs(d1):
        if abs(d2) > 1e-12:
            warnings.warn(
                "atom-at-zero extrapolation is non-monotone; returning the "
                f"smallest-eta estimate {a3:.6f}",
                RuntimeWarning,
                stacklevel=2,
            )
        return float(np.clip(a3, 0.0, 1.0))
    q = d2 / d1
    return float(np.clip(a3 + d2 * q / (1.0 - q), 0.0, 1.0))


def _runs(mask) -> list[tuple[int, int]]:
    """Maximal runs of True as (first, last) index pairs."""
    out = []
    i = 0
    n = len(mask)
    while i < n:
        if mask[i]:
            j = i
            while j + 1 < n and mask[j + 1]:
                j += 1
            out.append((i, j))
            i = j + 1
        else:
            i += 1
    return out


def _bisect_edge(lo, hi, evaluate, threshold, rising):
    """Refine a support edge inside (lo, hi) at EDGE_ETA.

    rising=True means density crosses upward from lo to hi (a left edge).
    """
    f_lo = evaluate(lo) - threshold
    f_hi = evaluate(hi) - threshold
    want_lo, want_hi = (-1, 1) if rising else (1, -1)
    if np.sign(f_lo) != want_lo or np.sign(f_hi) != want_hi:
        # grid-eta smoothing misplaced the bracket by up to a cell; give up
        # refining rather than chase a sign pattern that is not there
        return lo if rising else hi
    for _ in range(_EDGE_BISECTIONS):
        mid = 0.5 * (lo + hi)
        above = (evaluate(mid) - threshold) > 0
        if above == rising:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def support_detect(grid: DensityGrid, threshold: float | None = None):
    """Support of the measure as disjoint closed intervals.

    Runs of grid density above the threshold (default 1e-4 of the peak)
    are candidates; low-lying candidate points are re-evaluated at
    EDGE_ETA to discard Lorentzian fill from the grid's larger eta, and
    the surviving run boundaries are refined by bisection at EDGE_ETA.
    Runs closer than two grid spacings are merged.
    """
    xs = np.asarray(grid.xs, dtype=float)
    if xs.size == 0:
        raise ValidationError("empty grid")
    dens = np.asarray(grid.density, dtype=float)
    peak = dens.max()
    if peak <= 0.0:
        return ()
    if threshold is None:
        threshold = 1e-4 * peak
    if not threshold > 0:
        raise ValidationError(f"threshold must be positive, got {threshold}")
    dx = xs[1] - xs[0] if xs.size > 1 else 0.0

    mask = dens > threshold
    # verify low-lying points at EDGE_ETA: grid-eta smoothing fills true
    # gaps at the level eta/(pi dist^2), far above threshold on coarse grids
    suspect = mask & (dens < _SUSPECT_FRACTION * peak)
    if suspect.any() and grid.eta > 2 * EDGE_ETA:
        evaluate = _WarmDensity(grid.params, grid.opts, EDGE_ETA,
                                atom=grid.atom_at_zero)
        for i in np.flatnonzero(suspect):
            mask[i] = evaluate(xs[i]) > threshold

    runs = _runs(mask)
    if not runs:
        return ()

    # trim run ends whose grid values are pure smoothing fill: verify the
    # boundary-adjacent points at EDGE_ETA and walk inward until the true
    # density exceeds the threshold
    if grid.eta > 2 * EDGE_ETA:
        trimmed = []
        for lo, hi in runs:
            evaluate = _WarmDensity(grid.params, grid.opts, EDGE_ETA,
                                    atom=grid.atom_at_zero)
            while lo <= hi and evaluate(xs[lo]) <= threshold:
                lo += 1
            while hi >= lo and evaluate(xs[hi]) <= threshold:
                hi -= 1
            if lo <= hi:
                trimmed.append((lo, hi))
        runs = trimmed
        if not runs:
            return ()

    # merge runs separated by less than two grid spacings
    merged = [runs[0]]
    for lo, hi in runs[1:]:
        if xs[lo] - xs[merged[-1][1]] < 2.0 * dx:
            merged[-1] = (merged[-1][0], hi)
        else:
            merged.append((lo, hi))

    intervals = []
    for lo, hi in merged:
        evaluate = _WarmDensity(grid.params, grid.opts, EDGE_ETA,
                                atom=grid.atom_at_zero)
        if lo > 0:
            left = _bisect_edge(xs[lo - 1], xs[lo], evaluate, threshold, rising=True)
        else:
            left = xs[0]
        evaluate = _WarmDensity(grid.params, grid.opts, EDGE_ETA,
                                atom=grid.atom_at_zero)
        if hi < xs.size - 1:
            right = _bisect_edge(xs[hi], xs[hi + 1], evaluate, threshold, rising=False)
        else:
            right = xs[-1]
        intervals.append((max(float(left), 0.0), float(right)))
    return tuple(intervals)


def density_grid(x_min: float, x_max: float, n_points: int, params: ModelParams,
                 opts: SolverOptions | None = None) -> DensityGrid:
    """Density on a uniform grid with eta = max(1e-5, 0.1 * spacing).

    Fills the detected support, the atom at zero and the total mass
    (atom + trapezoid integral of the continuous density).
    """
    if not x_min < x_max:
        raise ValidationError(f"need x_min < x_max, got [{x_min}, {x_max}]")
    if n_points < 2:
        raise ValidationError(f"need at least 2 grid points, got {n_points}")
    opts = opts or DEFAULT_OPTIONS
    _warn_if_dependent(params)
    xs = np.linspace(float(x_min), float(x_max), int(n_points))
    eta = max(1e-5, 0.1 * (xs[1] - xs[0]))
    points = solve_grid(xs + 1j * eta, params, opts)
    dens = np.array([max(pt.m_mu.imag / np.pi, 0.0) for pt in points])
    atom = atom_at_zero(params, opts)
    if atom > 1e-12:
        dens = np.clip(dens - atom * (eta / np.pi) / (xs**2 + eta**2), 0.0, None)
    dens.setflags(write=False)
    xs.setflags(write=False)
    grid = DensityGrid(
        xs=xs,
        density=dens,
        eta=float(eta),
        support=(),
        atom_at_zero=float(atom),
        total_mass=float("nan"),
        params=params,
        opts=opts,
    )
    support = support_detect(grid)
    total = atom + float(np.trapezoid(dens, xs))
    return replace(grid, support=support, total_mass=total)


def _warn_if_dependent(params: ModelParams):
    """Report (not enforce) linear dependence of {C_1..C_k, I}."""
    mats = list(params.covariances) + [np.eye(params.p)]
    k1 = len(mats)
    gram = np.empty((k1, k1))
    for i in range(k1):
        for j in range(i, k1):
            gram[i, j] = gram[j, i] = float(np.sum(mats[i] * mats[j]))
    eigs = np.linalg.eigvalsh(gram)
    if eigs[0] < 1e-8 * max(eigs[-1], 1e-300):
        warnings.warn(
            "covariances plus identity are (near-)linearly dependent; the "
            "density may be discontinuous",
            RuntimeWarning,
            stacklevel=3,
        )


def write_density_csv(grid: DensityGrid, path, header_comment: str | None = None):
    """CSV export: optional comment line, then 'x,density' rows."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["x", "density"])
        for x, d in zip(grid.xs, grid.density):
            writer.writerow([f"{x:.12g}", f"{d:.12g}"])


def write_support_json(grid: DensityGrid, path, extra: dict | None = None):
    """JSON sidecar: support intervals, atom mass and the eta used."""
    payload = {
        "support": [[l, r] for l, r in grid.support],
        "atom_at_zero": grid.atom_at_zero,
        "eta": grid.eta,
    }
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
