"""k-class covariance model: compact covariance specs, construction, validation.

The ensemble is defined by an observation dimension p, class sizes
n_1..n_k and one symmetric PSD p x p covariance per class. Derived
ratios c0 = p/n and c_a = n_a/n drive everything downstream.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .errors import ValidationError

# Numerical tolerances for accepting covariance input.
PSD_TOL = 1e-10
SYM_TOL = 1e-12

_COV_KINDS = ("identity", "scaled_identity", "toeplitz", "diagonal", "dense")


@dataclass(frozen=True)
class CovarianceSpec:
    """Compact description of one class covariance.

    kind is one of: identity, scaled_identity(scale), toeplitz(scale, rho),
    diagonal(values), dense(path).
    """

    kind: str
    scale: float = 1.0
    rho: float = 0.0
    values: tuple[float, ...] | None = None
    path: str | None = None

    def __post_init__(self):
        if self.kind not in _COV_KINDS:
            raise ValidationError(f"unknown covariance kind {self.kind!r}")
        if self.kind in ("scaled_identity", "toeplitz") and not self.scale > 0:
            raise ValidationError(f"scale must be positive, got {self.scale}")
        if self.kind == "toeplitz" and not 0.0 <= self.rho < 1.0:
            raise ValidationError(f"rho must lie in [0, 1), got {self.rho}")
        if self.kind == "diagonal":
            if self.values is None or len(self.values) == 0:
                raise ValidationError("diagonal covariance needs a values list")
            if any(v < 0 for v in self.values):
                raise ValidationError("diagonal covariance values must be >= 0")
        if self.kind == "dense" and not self.path:
            raise ValidationError("dense covariance needs a file path")

    @classmethod
    def from_dict(cls, d: dict) -> "CovarianceSpec":
        d = dict(d)
        kind = d.pop("kind", None)
        if kind is None:
            raise ValidationError("covariance spec needs a 'kind' key")
        known = {"scale", "rho", "values", "path"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown covariance spec keys: {sorted(unknown)}")
        if "values" in d and d["values"] is not None:
            d["values"] = tuple(float(v) for v in d["values"])
        return cls(kind=kind, **d)


def load_dense_covariance(path) -> np.ndarray:
    """Read a dense covariance file: first line p, then p rows of p decimals."""
    with open(path) as fh:
        first = fh.readline().split()
        if len(first) != 1:
            raise ValidationError(f"{path}: first line must hold the dimension p")
        p = int(first[0])
        try:
            rows = [np.array(line.split(), dtype=float)
                    for line in fh if line.strip()]
        except ValueError as exc:
            raise ValidationError(f"{path}: non-numeric entry: {exc}") from exc
    if len(rows) != p or any(r.size != p for r in rows):
        raise ValidationError(f"{path}: expected {p} rows of {p} entries")
    return np.vstack(rows)


def build_covariance(spec: CovarianceSpec, p: int) -> np.ndarray:
    """Materialize a p x p covariance matrix from its spec."""
    if p < 1:
        raise ValidationError(f"p must be a positive integer, got {p}")
    if spec.kind == "identity":
        return np.eye(p)
    if spec.kind == "scaled_identity":
        return spec.scale * np.eye(p)
    if spec.kind == "toeplitz":
        col = spec.scale * spec.rho ** np.arange(p)
        return scipy.linalg.toeplitz(col)
    if spec.kind == "diagonal":
        if len(spec.values) != p:
            raise ValidationError(
                f"diagonal covariance has {len(spec.values)} values, expected p={p}"
            )
        return np.diag(np.asarray(spec.values, dtype=float))
    # dense file
    mat = load_dense_covariance(spec.path)
    if mat.shape != (p, p):
        raise ValidationError(f"{spec.path}: matrix is {mat.shape}, expected ({p}, {p})")
    asym = np.abs(mat - mat.T).max()
    if asym > SYM_TOL * (1.0 + np.abs(mat).max()):
        raise ValidationError(f"{spec.path}: matrix not symmetric (max asymmetry {asym:.3e})")
    eigs = np.linalg.eigvalsh(mat)
    if eigs[0] < -PSD_TOL:
        raise ValidationError(
            f"{spec.path}: matrix not PSD, most negative eigenvalue {eigs[0]:.6e}"
        )
    return mat


@dataclass(frozen=True)
class ModelParams:
    """The ensemble (p, n_1..n_k, C_1..C_k) with derived ratios.

    Construct with raw fields, then pass through validate_model, which
    certifies PSD-ness, symmetrizes, fills c_max and freezes the arrays.
    Instances are immutable after validation and safe to share.
    """

    p: int
    class_sizes: tuple[int, ...]
    covariances: tuple[np.ndarray, ...]
    c_max: float = 0.0
    validated: bool = False

    @property
    def k(self) -> int:
        return len(self.class_sizes)

    @property
    def n(self) -> int:
        return int(sum(self.class_sizes))

    @property
    def c0(self) -> float:
        return self.p / self.n

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.class_sizes, dtype=float) / self.n

    def class_slices(self) -> list[slice]:
        """Column ranges of each class inside the n columns of W."""
        out, start = [], 0
        for n_a in self.class_sizes:
            out.append(slice(start, start + n_a))
            start += n_a
        return out


def validate_model(params: ModelParams) -> ModelParams:
    """Check invariants, clamp tiny negative eigenvalues, fill derived fields.

    Idempotent: a validated instance is returned unchanged.
    """
    if params.validated:
        return params
    p = int(params.p)
    if p < 1:
        raise ValidationError(f"p must be a positive integer, got {params.p}")
    sizes = tuple(int(n_a) for n_a in params.class_sizes)
    if len(sizes) < 1:
        raise ValidationError("need at least one class")
    if any(n_a < 1 for n_a in sizes):
        raise ValidationError(f"class sizes must be >= 1, got {sizes}")
    if len(params.covariances) != len(sizes):
        raise ValidationError(
            f"{len(sizes)} class sizes but {len(params.covariances)} covariances"
        )

    covs = []
    c_max = 0.0
    for a, cov in enumerate(params.covariances):
        mat = np.asarray(cov, dtype=float)
        if mat.shape != (p, p):
            raise ValidationError(
                f"covariance {a} has shape {mat.shape}, expected ({p}, {p})"
            )
        asym = np.abs(mat - mat.T).max()
        if asym > SYM_TOL * (1.0 + np.abs(mat).max()):
            raise ValidationError(
                f"covariance {a} not symmetric (max asymmetry {asym:.3e})"
            )
        mat = 0.5 * (mat + mat.T)
        eigs = np.linalg.eigvalsh(mat)
        if eigs[0] < -PSD_TOL:
            raise ValidationError(
                f"covariance {a} not PSD, most negative eigenvalue {eigs[0]:.6e}"
            )
        if eigs[0] < 0.0:
            # within tolerance: clamp the offending directions to exactly zero
            w, v = np.linalg.eigh(mat)
            mat = (v * np.clip(w, 0.0, None)) @ v.T
            mat = 0.5 * (mat + mat.T)
        if not np.isfinite(mat).all():
            raise ValidationError(f"covariance {a} has non-finite entries")
        c_max = max(c_max, float(np.abs(eigs).max()))
        mat.setflags(write=False)
        covs.append(mat)

    return replace(
        params,
        p=p,
        class_sizes=sizes,
        covariances=tuple(covs),
        c_max=c_max,
        validated=True,
    )


@dataclass(frozen=True)
class ModelSpec:
    """Size-free model description: class fractions plus covariance specs.

    Used where the same ensemble family is needed at several dimensions
    (rate and variance scaling reports). Scaling by s multiplies p and
    every n_a by s, rebuilding the covariances at the new dimension.
    """

    p: int
    classes: tuple[tuple[int, CovarianceSpec], ...]

    def materialize(self, scale: int = 1) -> ModelParams:
        if scale < 1 or int(scale) != scale:
            raise ValidationError(f"scale must be a positive integer, got {scale}")
        p = self.p * int(scale)
        sizes = tuple(n_a * int(scale) for n_a, _ in self.classes)
        covs = tuple(build_covariance(spec, p) for _, spec in self.classes)
        return validate_model(ModelParams(p=p, class_sizes=sizes, covariances=covs))

    def at_p(self, p_target: int) -> ModelParams:
        if p_target % self.p:
            raise ValidationError(
                f"target p={p_target} is not an integer multiple of base p={self.p}"
            )
        return self.materialize(scale=p_target // self.p)
