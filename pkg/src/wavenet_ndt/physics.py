"""Born-approximation SH-wave reflection model and its Fourier inversion (WNST).

The reflection coefficient of a weak plate-thinning defect with depth
profile d(X) is

    C(xi) = i (xi^2 + k^2) / (2 b xi) * integral d(X) exp(2 i xi X) dX

so C and d are a Fourier pair in the spatial frequency kappa = 2 xi.
`forward_reflection` evaluates this integral on a sampled profile and
`wnst_invert` undoes it with an inverse DFT on the grid's Fourier bins.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CoverageError,
    EvanescentMode,
    GridMismatch,
    InvalidParameter,
    SingularWavenumber,
)

DEFAULT_HALF_THICKNESS = 5e-3
DEFAULT_SHEAR_SPEED = 3200.0
DEFAULT_DETECTION_LENGTH = 0.1
DEFAULT_POINT_COUNT = 100

# relative imaginary residue tolerated after Hermitian extension
_IMAG_RESIDUE_TOL = 1e-9


@dataclass(frozen=True)
class PlateSpec:
    """Plate of thickness 2b carrying SH mode ``mode_index_n``."""

    half_thickness_b: float = DEFAULT_HALF_THICKNESS
    shear_speed_cT: float = DEFAULT_SHEAR_SPEED
    mode_index_n: int = 0

    def __post_init__(self):
        if not self.half_thickness_b > 0:
            raise InvalidParameter("half_thickness_b must be positive")
        if not self.shear_speed_cT > 0:
            raise InvalidParameter("shear_speed_cT must be positive")
        if int(self.mode_index_n) != self.mode_index_n or self.mode_index_n < 0:
            raise InvalidParameter("mode_index_n must be a nonnegative integer")

    @property
    def beta(self) -> float:
        """Through-thickness wavenumber n*pi/(2b)."""
        return self.mode_index_n * np.pi / (2.0 * self.half_thickness_b)

    def to_dict(self) -> dict:
        return {
            "half_thickness_b": self.half_thickness_b,
            "shear_speed_cT": self.shear_speed_cT,
            "mode_index_n": self.mode_index_n,
        }


@dataclass(frozen=True)
class SpatialGrid:
    origin_x: float = 0.0
    spacing_dx: float = DEFAULT_DETECTION_LENGTH / (DEFAULT_POINT_COUNT - 1)
    point_count: int = DEFAULT_POINT_COUNT

    def __post_init__(self):
        if not self.spacing_dx > 0:
            raise InvalidParameter("spacing_dx must be positive")
        if self.point_count < 2:
            raise InvalidParameter("point_count must be at least 2")

    @classmethod
    def spanning(cls, start: float, stop: float, point_count: int) -> SpatialGrid:
        """Grid whose first and last nodes sit exactly on ``start`` and ``stop``."""
        return cls(start, (stop - start) / (point_count - 1), point_count)

    @property
    def x(self) -> np.ndarray:
        return self.origin_x + self.spacing_dx * np.arange(self.point_count)

    @property
    def length(self) -> float:
        return self.spacing_dx * (self.point_count - 1)

    def to_dict(self) -> dict:
        return {
            "origin_x": self.origin_x,
            "spacing_dx": self.spacing_dx,
            "point_count": self.point_count,
        }


@dataclass(eq=False)
class DefectProfile:
    grid: SpatialGrid
    depths: np.ndarray

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=float)
        if self.depths.shape != (self.grid.point_count,):
            raise GridMismatch(
                f"expected {self.grid.point_count} depths, got shape {self.depths.shape}"
            )

    def check_plate(self, plate: PlateSpec) -> None:
        if np.any(self.depths < 0):
            raise InvalidParameter("defect depths must be nonnegative")
        if self.depths.max(initial=0.0) >= 2 * plate.half_thickness_b:
            raise InvalidParameter("defect is deeper than the plate")


@dataclass(eq=False)
class WavenumberGrid:
    xi_values: np.ndarray

    def __post_init__(self):
        self.xi_values = np.asarray(self.xi_values, dtype=float)
        if self.xi_values.ndim != 1 or self.xi_values.size == 0:
            raise InvalidParameter("xi_values must be a nonempty 1-D array")
        if np.any(np.diff(self.xi_values) <= 0):
            raise InvalidParameter("xi_values must be strictly increasing")

    @classmethod
    def aligned_to(cls, grid: SpatialGrid) -> WavenumberGrid:
        """Positive wavenumbers with 2*xi on the grid's DFT bins 1..N//2."""
        return cls(_bin_wavenumbers(grid))

    def __len__(self) -> int:
        return self.xi_values.size


@dataclass(eq=False)
class ReflectionSpectrum:
    grid: WavenumberGrid
    coefficients: np.ndarray = field(default=None)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=complex)
        if self.coefficients.shape != self.grid.xi_values.shape:
            raise GridMismatch("coefficient count does not match wavenumber grid")
        if not np.all(np.isfinite(self.coefficients)):
            raise InvalidParameter("reflection coefficients must be finite")


def _bin_wavenumbers(grid: SpatialGrid) -> np.ndarray:
    n = grid.point_count
    m = np.arange(1, n // 2 + 1)
    return np.pi * m / (n * grid.spacing_dx)


def dispersion(plate: PlateSpec, angular_frequency: float) -> float:
    """Propagation wavenumber of the plate's SH mode at ``angular_frequency``."""
    if not angular_frequency > 0:
        raise InvalidParameter("angular_frequency must be positive")
    k = angular_frequency / plate.shear_speed_cT
    if plate.mode_index_n == 0:
        return k
    beta = plate.beta
    if k <= beta:
        raise EvanescentMode(
            f"mode {plate.mode_index_n} is cut off: k={k:.6g} <= beta={beta:.6g}"
        )
    return float(np.sqrt(k * k - beta * beta))


def _prefactor(xi: np.ndarray, plate: PlateSpec) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if np.any(xi <= 0):
        raise SingularWavenumber("wavenumbers must be strictly positive")
    k2 = xi**2 + plate.beta**2
    return 1j * (xi**2 + k2) / (2.0 * plate.half_thickness_b * xi)


def _half_hat(theta: np.ndarray) -> np.ndarray:
    """integral_0^1 (1 - s) exp(i theta s) ds, stable near theta = 0."""
    theta = np.asarray(theta, dtype=float)
    re = 0.5 * np.sinc(theta / (2 * np.pi)) ** 2
    small = np.abs(theta) < 0.1
    t = np.where(small, 1.0, theta)
    im = np.where(
        small,
        theta / 6 - theta**3 / 120 + theta**5 / 5040,
        (t - np.sin(t)) / t**2,
    )
    return re + 1j * im


def quadrature_kernel(alpha: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Weights W[m, j] with integral d(X) exp(i alpha_m X) dX = W @ d.

    The depth is interpolated linearly between nodes over the grid span and
    the oscillatory factor is integrated exactly (product trapezoid rule), so
    piecewise-linear profiles integrate without discretisation error.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    h = grid.spacing_dx
    x = grid.x
    theta = alpha * h
    kernel = np.exp(1j * np.outer(alpha, x)) * h
    interior = np.sinc(theta / (2 * np.pi)) ** 2
    kernel[:, 1:-1] *= interior[:, None]
    kernel[:, 0] *= _half_hat(theta)
    kernel[:, -1] *= _half_hat(-theta)
    return kernel


def forward_reflection(
    defect: DefectProfile, plate: PlateSpec, grid: WavenumberGrid
) -> ReflectionSpectrum:
    """Born reflection spectrum of ``defect`` sampled on ``grid``."""
    if not isinstance(defect, DefectProfile):
        raise GridMismatch("defect has no spatial grid")
    coeffs = forward_reflection_batch(defect.depths[None, :], defect.grid, plate, grid)
    return ReflectionSpectrum(grid, coeffs[0])


def forward_reflection_batch(
    depths: np.ndarray, spatial: SpatialGrid, plate: PlateSpec, grid: WavenumberGrid
) -> np.ndarray:
    """Vectorised forward model: rows of ``depths`` map to rows of coefficients."""
    depths = np.atleast_2d(np.asarray(depths, dtype=float))
    if depths.shape[1] != spatial.point_count:
        raise GridMismatch("depth rows do not match the spatial grid")
    pref = _prefactor(grid.xi_values, plate)
    kernel = quadrature_kernel(2 * grid.xi_values, spatial)
    return (depths @ kernel.T) * pref


def analytic_rectangle_reflection(
    d0: float, w: float, X0: float, plate: PlateSpec, xi
) -> complex | np.ndarray:
    """Closed-form reflection of a rectangular thinning of depth d0, width w."""
    if not w > 0:
        raise InvalidParameter("width must be positive")
    xi_arr = np.asarray(xi, dtype=float)
    pref = _prefactor(xi_arr, plate)
    value = pref * d0 * np.exp(2j * xi_arr * X0) * np.sin(xi_arr * w) / xi_arr
    return complex(value) if value.ndim == 0 else value


def _check_alignment(spectrum: ReflectionSpectrum, target: SpatialGrid) -> int:
    expected = _bin_wavenumbers(target)
    xi = spectrum.grid.xi_values
    if xi.size < expected.size:
        raise CoverageError(
            f"need {expected.size} wavenumbers for a {target.point_count}-point grid, "
            f"got {xi.size}"
        )
    if not np.allclose(xi[: expected.size], expected, rtol=1e-9, atol=0.0):
        raise CoverageError("spectrum wavenumbers are not on the target grid's Fourier bins")
    return expected.size


def wnst_invert(
    spectrum: ReflectionSpectrum, plate: PlateSpec, target: SpatialGrid
) -> DefectProfile:
    """Reconstruct a depth profile by inverse Fourier transform of the spectrum.

    The DC bin is not measured (xi > 0) and is set to zero, so the result is
    mean-free. Wavenumbers beyond the grid's Nyquist bin are ignored.
    """
    depths = wnst_invert_batch(spectrum.coefficients[None, :], spectrum.grid, plate, target)
    return DefectProfile(target, depths[0])


def wnst_invert_batch(
    coefficients: np.ndarray, grid: WavenumberGrid, plate: PlateSpec, target: SpatialGrid
) -> np.ndarray:
    coefficients = np.atleast_2d(np.asarray(coefficients, dtype=complex))
    probe = ReflectionSpectrum(grid, coefficients[0])
    nbins = _check_alignment(probe, target)
    n = target.point_count
    h = target.spacing_dx

    xi = grid.xi_values[:nbins]
    kappa = 2 * xi
    shape_ft = coefficients[:, :nbins] / _prefactor(xi, plate)
    # strip the origin phase and the interpolation kernel of the forward quadrature
    per_bin = np.exp(-1j * kappa * target.origin_x) / (h * np.sinc(kappa * h / (2 * np.pi)) ** 2)
    e = shape_ft * per_bin

    profile = hermitian_inverse_dft(e, n)
    scale = np.linalg.norm(profile, axis=1)
    resid = np.linalg.norm(profile.imag, axis=1)
    if np.any(resid > _IMAG_RESIDUE_TOL * np.maximum(scale, np.finfo(float).tiny)):
        raise FloatingPointError("Hermitian extension left an imaginary residue")
    return profile.real


def hermitian_inverse_dft(bins: np.ndarray, n: int) -> np.ndarray:
    """Inverse DFT of positive-frequency bins 1..len(bins), DC set to zero.

    Negative frequencies are filled with conjugates and an even-length
    Nyquist bin is made real, so the result is real up to rounding.
    Returned complex so callers can inspect the imaginary residue.
    """
    bins = np.atleast_2d(bins)
    nbins = bins.shape[1]
    if nbins != n // 2:
        raise CoverageError(f"{n}-point inverse needs {n // 2} bins, got {nbins}")
    full = np.zeros((bins.shape[0], n), dtype=complex)
    full[:, 1 : nbins + 1] = bins
    if n % 2 == 0:
        full[:, n // 2] = bins[:, -1].real
        full[:, n - nbins + 1 :] = np.conj(bins[:, -2::-1])
    else:
        full[:, n - nbins :] = np.conj(bins[:, ::-1])
    return np.fft.fft(full, axis=1) / n


def write_spectrum_csv(spectrum: ReflectionSpectrum, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["xi_rad_per_m", "re", "im"])
        for xi, c in zip(spectrum.grid.xi_values, spectrum.coefficients):
            writer.writerow([repr(float(xi)), repr(float(c.real)), repr(float(c.imag))])


def read_spectrum_csv(path) -> ReflectionSpectrum:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["xi_rad_per_m", "re", "im"]:
            raise InvalidParameter(f"{path}: unexpected spectrum header {header!r}")
        rows = [[float(v) for v in row] for row in reader if row]
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    return ReflectionSpectrum(WavenumberGrid(arr[:, 0]), arr[:, 1] + 1j * arr[:, 2])


def write_profile_csv(profile: DefectProfile, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x_m", "depth_m"])
        for x, d in zip(profile.grid.x, profile.depths):
            writer.writerow([repr(float(x)), repr(float(d))])


def read_profile_csv(path: str | Path) -> DefectProfile:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["x_m", "depth_m"]:
            raise InvalidParameter(f"{path}: unexpected profile header {header!r}")
        rows = [[float(v) for v in row] for row in reader if row]
    arr = np.array(rows, dtype=float).reshape(-1, 2)
    x = arr[:, 0]
    if x.size < 2:
        raise GridMismatch("profile needs at least two points")
    grid = SpatialGrid(float(x[0]), float(x[1] - x[0]), x.size)
    if not np.allclose(grid.x, x, rtol=0, atol=1e-9 * max(1.0, abs(x[-1]))):
        raise GridMismatch("profile abscissae are not uniformly spaced")
    return DefectProfile(grid, arr[:, 1])
