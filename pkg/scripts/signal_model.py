"""
SAIR imaging physics on a Cartesian u-v grid.
Grids, the modified brightness temperature, the discrete visibility/BT
Fourier pair, point-source visibilities and the covariance-matrix view.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from scripts.errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

VIS_ROLES = ("clean", "rfi", "dirty", "estimate")
IMAG_RESIDUAL_LIMIT = 1e-6


def _frozen(values, dtype):
    """Private read-only copy of an array"""
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GridSpec:
    """Direction-cosine grid xi_k = -1 + k*dxi paired with u_i = (i - n/2)*du"""
    n: int = 32
    du: float = 0.5
    c0: float = 1.0
    support_radius: float = 0.9

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 8 or self.n % 2:
            raise ConfigError(f"Grid size n must be an even integer >= 8, got {self.n}")
        if self.du <= 0:
            raise ConfigError(f"Grid spacing du must be positive, got {self.du}")
        if not 0.0 < self.support_radius < 1.0:
            raise ConfigError(f"Support radius must be in (0, 1), got {self.support_radius}")
        if abs(self.du * self.dxi * self.n - 1.0) > 1e-12:
            raise ConfigError(f"Grid violates du*dxi*n = 1 (du={self.du}, n={self.n})")

    @property
    def dxi(self):
        return 2.0 / self.n

    @property
    def ds(self):
        return self.du * self.du

    @property
    def u(self):
        return (np.arange(self.n) - self.n // 2) * self.du

    @property
    def xi(self):
        return -1.0 + np.arange(self.n) * self.dxi

    def direction_cosines(self):
        """(xi, eta) meshgrids, axis 0 = xi, axis 1 = eta"""
        return np.meshgrid(self.xi, self.xi, indexing="ij")

    def radius_sq(self):
        xi, eta = self.direction_cosines()
        return xi ** 2 + eta ** 2

    def support_mask(self):
        return self.radius_sq() <= self.support_radius ** 2

    def disk_mask(self, radius):
        return self.radius_sq() <= radius ** 2

    def pixel_index(self, xi):
        """Nearest grid index of a direction cosine"""
        return int(np.rint((xi + 1.0) / self.dxi))

    def pixel_position(self, k):
        """Direction cosine of a (possibly fractional) grid index"""
        return -1.0 + k * self.dxi

    def as_dict(self):
        return {"n": int(self.n), "du": float(self.du), "c0": float(self.c0),
                "support_radius": float(self.support_radius)}


def grid_from_config(cfg):
    """GridSpec from the grid section of a RunConfig"""
    g = cfg.grid
    return GridSpec(n=g.n, du=g.du, c0=g.c0, support_radius=g.support_radius)


@dataclass(frozen=True)
class SceneImage:
    """Brightness temperature T_B in Kelvin"""
    grid: GridSpec
    values: np.ndarray
    clamped: int = 0

    def __post_init__(self):
        values = _frozen(self.values, np.float64)
        if values.shape != (self.grid.n, self.grid.n):
            raise DomainError(f"Scene shape {values.shape} does not match grid n={self.grid.n}")
        if not np.all(np.isfinite(values)):
            raise DomainError("Scene contains non-finite values")
        if np.any(values < 0):
            raise DomainError("Scene brightness temperatures must be >= 0")
        if np.any(values[~self.grid.support_mask()] != 0):
            raise DomainError("Scene must be zero outside the support disk")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class AntennaPattern:
    grid: GridSpec
    kind: str = "gaussian"
    sigma: float = 0.8

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian"):
            raise ConfigError(f"Unknown antenna pattern kind: {self.kind}")
        if self.sigma <= 0:
            raise ConfigError(f"Antenna pattern width must be positive, got {self.sigma}")

    def gain(self):
        """|f(xi, eta)|^2 on the grid, 1 at boresight"""
        if self.kind == "uniform":
            return np.ones((self.grid.n, self.grid.n))
        return np.exp(-self.grid.radius_sq() / (2.0 * self.sigma ** 2))


@dataclass(frozen=True)
class ModifiedBT:
    """T_M image; imag_residual/non_hermitian report how real the inversion was"""
    grid: GridSpec
    values: np.ndarray
    imag_residual: float = 0.0
    non_hermitian: bool = False

    def __post_init__(self):
        values = _frozen(self.values, np.float64)
        if values.shape != (self.grid.n, self.grid.n):
            raise DomainError(f"Modified BT shape {values.shape} does not match grid n={self.grid.n}")
        if not np.all(np.isfinite(values)):
            raise DomainError("Modified BT contains non-finite values")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class VisibilityGrid:
    grid: GridSpec
    values: np.ndarray
    role: str = "clean"

    def __post_init__(self):
        if self.role not in VIS_ROLES:
            raise DomainError(f"Unknown visibility role: {self.role}")
        values = _frozen(self.values, np.complex128)
        if values.shape != (self.grid.n, self.grid.n):
            raise DomainError(f"Visibility shape {values.shape} does not match grid n={self.grid.n}")
        if not np.all(np.isfinite(values)):
            raise DomainError("Visibility grid contains non-finite values")
        object.__setattr__(self, "values", values)

    def with_role(self, role):
        return VisibilityGrid(self.grid, self.values, role)


def _check_same_grid(a, b):
    if a != b:
        raise ConfigError(f"Grid mismatch: {a} vs {b}")


def _obliquity(grid):
    """sqrt(1 - xi^2 - eta^2) inside support, 1 outside (never evaluated there)"""
    support = grid.support_mask()
    return np.where(support, np.sqrt(np.where(support, 1.0 - grid.radius_sq(), 1.0)), 1.0)


def modify_bt(scene, pattern):
    """T_M = c0 * T_B * |f|^2 / sqrt(1 - xi^2 - eta^2) inside support, 0 outside"""
    _check_same_grid(scene.grid, pattern.grid)
    grid = scene.grid
    tm = grid.c0 * scene.values * pattern.gain() / _obliquity(grid)
    return ModifiedBT(grid, np.where(grid.support_mask(), tm, 0.0))


def demodify_bt(tm, pattern):
    """Algebraic inverse of modify_bt; negative temperatures are clamped to 0"""
    _check_same_grid(tm.grid, pattern.grid)
    grid = tm.grid
    support = grid.support_mask()
    tb = np.where(support, tm.values * _obliquity(grid) / (grid.c0 * pattern.gain()), 0.0)
    negative = tb < 0
    clamped = int(np.count_nonzero(negative))
    if clamped:
        logger.debug("demodify_bt clamped %d negative pixels", clamped)
    return SceneImage(grid, np.where(negative, 0.0, tb), clamped=clamped)


def _phase_matrix(coords, positions, sign):
    return np.exp(sign * 2j * np.pi * np.outer(coords, positions))


def forward_visibility(tm, method="fft"):
    """V(u_i, v_j) = dxi^2 * sum_kl T_M(xi_k, eta_l) exp(-j2pi(u_i xi_k + v_j eta_l))"""
    grid = tm.grid
    if method == "fft":
        values = grid.dxi ** 2 * np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(tm.values)))
    elif method == "direct":
        e = _phase_matrix(grid.u, grid.xi, -1.0)
        values = grid.dxi ** 2 * (e @ tm.values @ e.T)
    else:
        raise ConfigError(f"Unknown transform method: {method}")
    return VisibilityGrid(grid, values, "clean")


def inverse_bt(vis, method="fft"):
    """T_M(xi_k, eta_l) = ds * sum_ij V(u_i, v_j) exp(+j2pi(u_i xi_k + v_j eta_l)), real part"""
    grid = vis.grid
    if method == "fft":
        image = grid.ds * grid.n ** 2 * np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(vis.values)))
    elif method == "direct":
        e = _phase_matrix(grid.xi, grid.u, 1.0)
        image = grid.ds * (e @ vis.values @ e.T)
    else:
        raise ConfigError(f"Unknown transform method: {method}")

    real_norm = np.linalg.norm(image.real)
    imag_norm = np.linalg.norm(image.imag)
    residual = imag_norm / real_norm if real_norm > 0 else (np.inf if imag_norm > 0 else 0.0)
    non_hermitian = bool(residual > IMAG_RESIDUAL_LIMIT)
    if non_hermitian:
        logger.warning("inverse_bt: imaginary residual %.3e exceeds %.0e (non-Hermitian input)",
                       residual, IMAG_RESIDUAL_LIMIT)
    return ModifiedBT(grid, image.real, imag_residual=float(residual), non_hermitian=non_hermitian)


def point_source_visibility(src, grid):
    """Rank-one visibility p * dxi^2 * exp(-j2pi(u xi0 + v eta0)) of one point source"""
    if src.xi0 ** 2 + src.eta0 ** 2 > 1.0:
        raise DomainError(f"Point source ({src.xi0}, {src.eta0}) lies outside the unit disk")
    a = np.exp(-2j * np.pi * grid.u * src.xi0)
    b = np.exp(-2j * np.pi * grid.u * src.eta0)
    return VisibilityGrid(grid, src.peak_bt * grid.dxi ** 2 * np.outer(a, b), "rfi")


def as_covariance_matrix(vis):
    """Visibility grid read as the matrix [R]_ij = V(u_i, v_j) (writeable copy)"""
    return np.array(vis.values, copy=True)


def from_covariance_matrix(matrix, grid, role="estimate"):
    return VisibilityGrid(grid, matrix, role)


def reflect(values):
    """values[(n - i) % n, (n - j) % n], the (-u, -v) sample of every (u, v)"""
    return np.roll(values[::-1, ::-1], 1, axis=(0, 1))


def hermitian_symmetrize(values):
    """Average a grid with its reflected conjugate"""
    return 0.5 * (values + np.conj(reflect(values)))


def hermitian_error(values):
    """max |V(-u,-v) - conj V(u,v)| relative to max |V|"""
    scale = np.max(np.abs(values))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(reflect(values) - np.conj(values))) / scale)


def impulse_image(grid, k, l, height=1.0):
    values = np.zeros((grid.n, grid.n))
    values[k, l] = height
    return ModifiedBT(grid, values)


def reconstruct_scene(vis, pattern):
    """BT image of a visibility grid: demodify(inverse_bt(vis))"""
    return demodify_bt(inverse_bt(vis), pattern)
