"""Wigner functions from displaced photon-number parity.

``W(alpha) = (2/pi) Tr[D(-alpha) rho D(alpha) P]`` with ``P = exp(i pi N)``.
With ``units="paper_units"`` the 2/pi prefactor is dropped, so the vacuum peaks at 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fock import FieldState, _as_amplitude, _displacement_columns, _quadrature_eig, padded_dim

NATURAL = "natural"
PAPER_UNITS = "paper_units"
DEFAULT_EXTENT = (-3.5, 3.5, -3.5, 3.5)
DEFAULT_RESOLUTION = (101, 101)


@dataclass
class WignerGrid:
    extent: tuple  # (x_min, x_max, y_min, y_max)
    resolution: tuple  # (nx, ny)
    values: np.ndarray  # values[i, j] at x[i], y[j]
    units: str = PAPER_UNITS

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.extent[0], self.extent[1], self.resolution[0])

    @property
    def y(self) -> np.ndarray:
        return np.linspace(self.extent[2], self.extent[3], self.resolution[1])

    @property
    def cell_area(self) -> float:
        dx = (self.extent[1] - self.extent[0]) / (self.resolution[0] - 1)
        dy = (self.extent[3] - self.extent[2]) / (self.resolution[1] - 1)
        return dx * dy

    def natural(self) -> np.ndarray:
        """Values normalized so that the phase-space integral is 1."""
        return self.values * (2 / math.pi) if self.units == PAPER_UNITS else self.values

    def integral(self) -> float:
        """Trapezoidal integral of the natural-unit values."""
        return float(np.trapezoid(np.trapezoid(self.natural(), self.y, axis=1), self.x))

    def at_index(self, i: int, j: int) -> complex:
        return complex(self.x[i], self.y[j])


def _parity_block(alpha: complex, dim: int, work_dim: int) -> np.ndarray:
    # D(alpha) P D(-alpha) restricted to the first dim levels, via columns of D(-alpha)
    cols = _displacement_columns(-alpha, work_dim, dim)
    par = (-1.0) ** np.arange(work_dim)
    return cols.conj().T @ (par[:, None] * cols)


def wigner_at(rho: FieldState, alpha, units: str = NATURAL, work_dim: int | None = None) -> float:
    """Wigner function of ``rho`` at one phase-space point.

    The displacement acts in a padded space, so this is the Wigner function
    of ``rho`` viewed as a state of the untruncated oscillator.
    """
    alpha = _as_amplitude(alpha)
    if work_dim is None:
        work_dim = padded_dim(rho.dim, abs(alpha))
    val = rho.expect(_parity_block(alpha, rho.dim, work_dim))
    if abs(val.imag) > 1e-10:
        raise ArithmeticError(f"Wigner value has imaginary part {val.imag:.2e}")
    return val.real * 2 / math.pi if units == NATURAL else val.real


def wigner_values(rho: FieldState, points, work_dim: int | None = None, batch: int = 256) -> np.ndarray:
    """Wigner values without the 2/pi prefactor at an array of complex ``points``."""
    pts = np.asarray(points, dtype=complex).ravel()
    dim = rho.dim
    if work_dim is None:
        work_dim = padded_dim(dim, float(np.max(np.abs(pts), initial=0.0)))
    x, v = _quadrature_eig(work_dim)
    n = np.arange(work_dim)
    par = (-1.0) ** n
    out = np.empty(pts.shape, dtype=float)
    vh = v.conj().T
    for start in range(0, len(pts), batch):
        chunk = -pts[start : start + batch]  # columns of D(-alpha)
        r = np.abs(chunk)
        rot = np.exp(1j * np.angle(chunk)[:, None] * n[None, :])  # (B, W)
        right = np.exp(-1j * r[:, None, None] * x[None, :, None]) * vh[None, :, :dim] * rot[:, None, :dim].conj()
        cols = rot[:, :, None] * (v[None] @ right)  # (B, W, dim)
        # Tr[rho C^dag P C] = sum_{w,i} conj(C_wi) P_w (C rho)_wi
        vals = np.einsum("bwi,w,bwi->b", cols.conj(), par, cols @ rho.matrix, optimize=True)
        out[start : start + batch] = vals.real
    return out.reshape(np.shape(points))


def wigner_grid(
    rho: FieldState,
    extent=DEFAULT_EXTENT,
    resolution=DEFAULT_RESOLUTION,
    units: str = PAPER_UNITS,
) -> WignerGrid:
    """Evaluate the Wigner function on a rectangular grid, ``alpha = x + i y``."""
    x0, x1, y0, y1 = extent
    nx, ny = resolution
    if nx < 2 or ny < 2:
        raise ValueError("resolution must be at least 2x2")
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate extent {extent}")
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    pts = xs[:, None] + 1j * ys[None, :]
    vals = wigner_values(rho, pts)
    if units == NATURAL:
        vals = vals * 2 / math.pi
    return WignerGrid(tuple(extent), (nx, ny), vals, units)


def negativity_volume(grid: WignerGrid) -> float:
    """Integral of ``max(0, -W)`` (natural units) by the trapezoidal rule."""
    neg = np.clip(-grid.natural(), 0.0, None)
    return float(np.trapezoid(np.trapezoid(neg, grid.y, axis=1), grid.x))


def husimi_smooth(grid: WignerGrid) -> np.ndarray:
    """Convolve the grid with the Gaussian that turns W into the Q function.

    The kernel has variance 1/4 per quadrature; interference fringes are
    suppressed while coherent-state peaks stay where they are. Values outside
    the grid are taken as zero.
    """
    out = np.array(grid.values, dtype=float)
    for axis, coords in ((0, grid.x), (1, grid.y)):
        d = coords[1] - coords[0]
        half = min(int(np.ceil(2.5 / d)), (len(coords) - 1) // 2)
        offs = np.arange(-half, half + 1) * d
        kern = np.exp(-2.0 * offs**2)
        kern /= kern.sum()
        out = np.apply_along_axis(lambda v: np.convolve(v, kern, mode="same"), axis, out)
    return out


def find_peaks(grid: WignerGrid, count: int = 2, min_separation: float = 0.5, smooth: bool = False):
    """Largest local maxima with sub-cell quadratic refinement.

    Returns a list of ``(alpha, value)`` sorted by decreasing value; peaks
    closer than ``min_separation`` to a stronger one are dropped. With
    ``smooth=True`` the search runs on :func:`husimi_smooth` output, which
    locates the classical components of a cat rather than its fringes.
    """
    w = husimi_smooth(grid) if smooth else grid.values
    nx, ny = w.shape
    xs, ys = grid.x, grid.y
    dx, dy = xs[1] - xs[0], ys[1] - ys[0]
    cands = []
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            patch = w[i - 1 : i + 2, j - 1 : j + 2]
            if w[i, j] >= patch.max() and w[i, j] > 0:
                cands.append((w[i, j], i, j))
    cands.sort(reverse=True)
    peaks = []
    for val, i, j in cands:
        ox = _vertex(w[i - 1, j], w[i, j], w[i + 1, j])
        oy = _vertex(w[i, j - 1], w[i, j], w[i, j + 1])
        a = complex(xs[i] + ox * dx, ys[j] + oy * dy)
        if all(abs(a - p) >= min_separation for p, _ in peaks):
            peaks.append((a, float(val)))
        if len(peaks) == count:
            break
    return peaks


def _vertex(fm, f0, fp) -> float:
    denom = fm - 2 * f0 + fp
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (fm - fp) / denom, -0.5, 0.5))


def write_csv(grid: WignerGrid, path) -> None:
    """Write ``x,y,w`` rows, x-major."""
    xs, ys = grid.x, grid.y
    with open(path, "w") as fh:
        fh.write("x,y,w\n")
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                fh.write(f"{x:.17g},{y:.17g},{grid.values[i, j]:.17g}\n")


def read_csv(path, units: str = PAPER_UNITS) -> WignerGrid:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    xs = np.unique(data[:, 0])
    ys = np.unique(data[:, 1])
    vals = data[:, 2].reshape(len(xs), len(ys))
    return WignerGrid((xs[0], xs[-1], ys[0], ys[-1]), (len(xs), len(ys)), vals, units)


def write_ppm(grid: WignerGrid, path) -> None:
    """Plain-text grayscale PPM; black is -max|W|, white +max|W|, y up."""
    w = grid.values
    vmax = float(np.max(np.abs(w))) or 1.0
    levels = np.rint((w / vmax + 1) * 127.5).astype(int)
    nx, ny = w.shape
    with open(path, "w") as fh:
        fh.write(f"P3\n{nx} {ny}\n255\n")
        for j in range(ny - 1, -1, -1):
            fh.write(" ".join(f"{v} {v} {v}" for v in levels[:, j]))
            fh.write("\n")
