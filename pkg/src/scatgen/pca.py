"""PCA fitting and whitening of flattened scattering coefficients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericDomainError, ParameterError
from .tensor import Tensor

VARIANCE_FLOOR_RATIO = 1e-8  # floor = ratio * largest eigenvalue


@dataclass(frozen=True)
class PcaModel:
    """Principal directions of a data matrix.

    ``components`` rows are orthonormal, ordered by descending
    ``eigenvalues`` (the variances along them); the sign convention is
    that each row's largest-magnitude entry is positive.
    """

    mean: np.ndarray
    components: np.ndarray   # (n_components, D)
    eigenvalues: np.ndarray  # (n_components,), descending, >= 0
    variance_floor: float

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def scales(self) -> np.ndarray:
        """Per-component standard deviations used by whiten/unwhiten."""
        return np.sqrt(self.eigenvalues + self.variance_floor)


@dataclass(frozen=True)
class WhitenedCoeffs:
    """Zero-mean, unit-variance, decorrelated component vectors."""

    values: Tensor  # (B, n_components)

    @property
    def n_components(self) -> int:
        return self.values.shape[1]


def _as_matrix(data, name: str) -> np.ndarray:
    arr = data.data if isinstance(data, Tensor) else np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-d, got shape {arr.shape}")
    return np.asarray(arr, dtype=np.float64)


def fit_pca(data, n_components: int) -> PcaModel:
    """Fit principal components to rows of an (n, D) data matrix.

    Directions and variances come from the singular value
    decomposition of the centered data, which is the eigendecomposition
    of the sample covariance (denominator n - 1) without forming it.
    """
    matrix = _as_matrix(data, "data")
    n, width = matrix.shape
    if n < 2:
        raise ParameterError(f"fit_pca needs at least 2 samples, got {n}")
    if not 1 <= n_components <= min(n, width):
        raise ParameterError(
            f"n_components must lie in [1, {min(n, width)}], got {n_components}"
        )
    if not np.all(np.isfinite(matrix)):
        raise NumericDomainError("fit_pca input contains non-finite values")

    mean = matrix.mean(axis=0)
    centered = matrix - mean
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    eigenvalues = (singular ** 2) / (n - 1)
    components = vt[:n_components].copy()
    eigenvalues = eigenvalues[:n_components].copy()

    # fixed sign: the largest-magnitude entry of each row is positive
    anchor = np.abs(components).argmax(axis=1)
    signs = np.sign(components[np.arange(n_components), anchor])
    signs[signs == 0] = 1.0
    components *= signs[:, None]

    floor = VARIANCE_FLOOR_RATIO * (eigenvalues[0] if eigenvalues.size else 1.0)
    if floor <= 0.0:
        raise NumericDomainError("fit_pca: data has zero total variance")
    return PcaModel(mean=mean, components=components,
                    eigenvalues=eigenvalues, variance_floor=float(floor))


def whiten(model: PcaModel, flat) -> WhitenedCoeffs:
    """Project rows onto the components and rescale to unit variance."""
    matrix = _as_matrix(flat, "flat")
    if matrix.shape[1] != model.mean.shape[0]:
        raise DimensionError(
            f"whiten expects width {model.mean.shape[0]}, got {matrix.shape[1]}"
        )
    w = (matrix - model.mean) @ model.components.T / model.scales
    return WhitenedCoeffs(values=Tensor(w))


def unwhiten(model: PcaModel, w) -> Tensor:
    """Map whitened vectors back to coefficient space (retained subspace)."""
    values = w.values if isinstance(w, WhitenedCoeffs) else w
    matrix = _as_matrix(values, "w")
    if matrix.shape[1] != model.n_components:
        raise DimensionError(
            f"unwhiten expects width {model.n_components}, got {matrix.shape[1]}"
        )
    return Tensor(model.mean + (matrix * model.scales) @ model.components)
