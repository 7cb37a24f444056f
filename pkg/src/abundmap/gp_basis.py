"""Exponentiated-quadratic spatial term: exact kernel and low-rank basis.

The low-rank path is the Hilbert-space reduced-rank construction: sine
eigenfunctions of the Laplacian on a box that extends the data range by a
`boundary_factor`, weighted by the kernel's spectral density at the
eigenfrequencies. Phi @ diag(weights) @ Phi.T approximates the exact kernel
matrix, with error controlled by the number of basis functions (truncation)
and the boundary factor (box edge effects).

The default configuration is 5 basis functions per axis and a boundary
factor of 5/4. In two dimensions the basis is the tensor product of the
per-axis bases (25 features); a `layout="total"` switch instead keeps only
the `num_basis` lowest-frequency product features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ParameterError
from .validation import check_finite


@dataclass(frozen=True)
class GpConfig:
    """Configuration of the spatial random-effect term.

    sigma2_gp : marginal variance of the field, >= 0
    l_scale : kernel length scale, > 0, in coordinate units
    num_basis : basis functions per axis (or total, see layout)
    boundary_factor : box half-width as a multiple of the data half-range
    layout : "per_axis" tensor product or "total" feature budget
    """

    sigma2_gp: float = 1.0
    l_scale: float = 0.2
    num_basis: int = 5
    boundary_factor: float = 1.25
    layout: str = "per_axis"

    def __post_init__(self):
        if self.sigma2_gp < 0:
            raise ParameterError("sigma2_gp must be non-negative")
        if self.l_scale <= 0:
            raise ParameterError("l_scale must be positive")
        if self.num_basis < 1:
            raise ParameterError("num_basis must be >= 1")
        if self.boundary_factor <= 1.0:
            raise ParameterError("boundary_factor must exceed 1")
        if self.layout not in ("per_axis", "total"):
            raise ParameterError("layout must be 'per_axis' or 'total'")


def _as_sites(sites) -> np.ndarray:
    arr = np.asarray(sites, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ParameterError(f"sites must be 1-D or (n, d), got shape {arr.shape}")
    return check_finite(arr, "sites")


def kernel_matrix(config: GpConfig, sites) -> np.ndarray:
    """Exact kernel matrix k(x_i, x_j) = sigma2 * exp(-||xi - xj||^2 / (2 l^2))."""
    x = _as_sites(sites)
    d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1)
    return config.sigma2_gp * np.exp(-d2 / (2.0 * config.l_scale**2))


def kernel_cross(config: GpConfig, sites_a, sites_b) -> np.ndarray:
    """Exact cross-kernel between two site sets."""
    a = _as_sites(sites_a)
    b = _as_sites(sites_b)
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    return config.sigma2_gp * np.exp(-d2 / (2.0 * config.l_scale**2))


class HilbertBasis:
    """Reduced-rank sine basis on a boundary-expanded box.

    The box is fixed when the basis is constructed (from the training sites)
    so that features can later be evaluated at new locations consistently.
    """

    def __init__(self, sites, num_basis: int = 5, boundary_factor: float = 1.25,
                 layout: str = "per_axis"):
        x = _as_sites(sites)
        self.num_basis = int(num_basis)
        self.boundary_factor = float(boundary_factor)
        self.layout = layout
        self.center = (x.max(axis=0) + x.min(axis=0)) / 2.0
        half = (x.max(axis=0) - x.min(axis=0)) / 2.0
        half = np.maximum(half, 1e-9)
        self.half_width = self.boundary_factor * half
        self.ndim = x.shape[1]

        js = np.arange(1, self.num_basis + 1)
        if self.layout == "per_axis":
            grids = np.meshgrid(*([js] * self.ndim), indexing="ij")
            index = np.column_stack([g.ravel() for g in grids])
        else:
            # lowest combined frequencies first; the spectral density is a
            # decreasing function of the frequency norm, so this choice is
            # optimal for every length scale
            grids = np.meshgrid(*([js] * self.ndim), indexing="ij")
            all_index = np.column_stack([g.ravel() for g in grids])
            freq2 = np.zeros(len(all_index))
            for ax in range(self.ndim):
                freq2 += (np.pi * all_index[:, ax] / (2.0 * self.half_width[ax])) ** 2
            order = np.lexsort((np.arange(len(all_index)), freq2))
            index = all_index[order[: self.num_basis]]
        self.index = index
        self.eigenvalues = np.zeros(len(index))
        for ax in range(self.ndim):
            self.eigenvalues += (np.pi * index[:, ax] / (2.0 * self.half_width[ax])) ** 2

    @property
    def n_features(self) -> int:
        return len(self.index)

    def features(self, sites) -> np.ndarray:
        """Evaluate the sine eigenfunctions at sites, shape (n, n_features)."""
        x = _as_sites(sites) - self.center
        phi = np.ones((x.shape[0], self.n_features))
        for ax in range(self.ndim):
            L = self.half_width[ax]
            arg = np.pi * self.index[None, :, ax] * (x[:, [ax]] + L) / (2.0 * L)
            phi *= np.sin(arg) / np.sqrt(L)
        return phi

    def spectral_weights(self, sigma2_gp: float, l_scale: float) -> np.ndarray:
        """Spectral density of the kernel at each eigenfrequency."""
        d = self.ndim
        return (
            sigma2_gp
            * (2.0 * np.pi) ** (d / 2.0)
            * l_scale**d
            * np.exp(-(l_scale**2) * self.eigenvalues / 2.0)
        )

    def to_dict(self) -> dict:
        return {
            "num_basis": self.num_basis,
            "boundary_factor": self.boundary_factor,
            "layout": self.layout,
            "center": self.center.tolist(),
            "half_width": self.half_width.tolist(),
            "ndim": self.ndim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HilbertBasis":
        obj = cls.__new__(cls)
        obj.num_basis = int(d["num_basis"])
        obj.boundary_factor = float(d["boundary_factor"])
        obj.layout = d["layout"]
        obj.center = np.asarray(d["center"], dtype=float)
        obj.half_width = np.asarray(d["half_width"], dtype=float)
        obj.ndim = int(d["ndim"])
        js = np.arange(1, obj.num_basis + 1)
        grids = np.meshgrid(*([js] * obj.ndim), indexing="ij")
        all_index = np.column_stack([g.ravel() for g in grids])
        if obj.layout == "total":
            freq2 = np.zeros(len(all_index))
            for ax in range(obj.ndim):
                freq2 += (np.pi * all_index[:, ax] / (2.0 * obj.half_width[ax])) ** 2
            order = np.lexsort((np.arange(len(all_index)), freq2))
            all_index = all_index[order[: obj.num_basis]]
        obj.index = all_index
        obj.eigenvalues = np.zeros(len(obj.index))
        for ax in range(obj.ndim):
            obj.eigenvalues += (np.pi * obj.index[:, ax] / (2.0 * obj.half_width[ax])) ** 2
        return obj


def basis_features(config: GpConfig, sites) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix Phi and spectral weights for the low-rank kernel.

    Phi @ diag(weights) @ Phi.T approximates kernel_matrix(config, sites).
    """
    basis = HilbertBasis(sites, config.num_basis, config.boundary_factor, config.layout)
    phi = basis.features(sites)
    weights = basis.spectral_weights(config.sigma2_gp, config.l_scale)
    return phi, weights


def approx_kernel_matrix(config: GpConfig, sites) -> np.ndarray:
    """Low-rank kernel matrix, for error measurement against the exact one."""
    phi, weights = basis_features(config, sites)
    return phi @ (weights[:, None] * phi.T)


def draw_field(basis: HilbertBasis, sigma2_gp: float, l_scale: float,
               rng: np.random.Generator) -> np.ndarray:
    """Standard-normal coefficients scaled by sqrt spectral weights."""
    z = rng.standard_normal(basis.n_features)
    return np.sqrt(basis.spectral_weights(sigma2_gp, l_scale)) * z


__all__ = [
    "GpConfig",
    "kernel_matrix",
    "kernel_cross",
    "HilbertBasis",
    "basis_features",
    "approx_kernel_matrix",
    "draw_field",
]
