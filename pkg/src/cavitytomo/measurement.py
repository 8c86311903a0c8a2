"""Ramsey-interferometer probe model.

A probe setting translates the field by ``alpha`` and then sends atoms through
the interferometer with phase ``phi``. The ensemble signal
``P_e - P_g = Tr[rho G]`` is the expectation of

    G(alpha, phi, delta) = D(-alpha) cos(Phi(N, delta) + phi) D(alpha).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dispersive import DispersiveParams, phase_shift
from .fock import FieldState, displaced_compression, padded_dim

WINDOW_S = 4e-3
ATOM_INTERVAL_S = 0.5e-3


@dataclass(frozen=True)
class MeasurementSetting:
    alpha: complex
    phi: float
    dispersive: DispersiveParams
    window_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "alpha", complex(self.alpha))
        if not (math.isfinite(self.alpha.real) and math.isfinite(self.alpha.imag) and math.isfinite(self.phi)):
            raise ValueError("setting fields must be finite")
        if self.window_index < 0:
            raise ValueError("window_index must be >= 0")

    def with_alpha(self, alpha: complex) -> "MeasurementSetting":
        return MeasurementSetting(alpha, self.phi, self.dispersive, self.window_index)


@dataclass(frozen=True)
class DetectionRecord:
    setting: MeasurementSetting
    n_e: int
    n_g: int

    def __post_init__(self):
        if self.n_e < 0 or self.n_g < 0:
            raise ValueError("counts must be nonnegative")

    @property
    def n_atoms(self) -> int:
        return self.n_e + self.n_g


@dataclass(frozen=True)
class ImperfectionModel:
    """Affine distortion of the Ramsey signal: raw = contrast * g + offset."""

    contrast: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if not 0 < self.contrast <= 1:
            raise ValueError(f"contrast must lie in (0, 1], got {self.contrast}")
        if abs(self.offset) + self.contrast > 1 + 1e-12:
            raise ValueError("|offset| + contrast must not exceed 1")


IDEAL = ImperfectionModel(1.0, 0.0)
REALISTIC = ImperfectionModel(0.8, 0.0)


def g_operator(s: MeasurementSetting, dim: int, work_dim: int | None = None) -> np.ndarray:
    """G(alpha, phi, delta) restricted to the first ``dim`` Fock levels.

    The displacement is carried out in a padded space (``work_dim``, chosen
    automatically) so the block is accurate for states supported below
    ``dim``. Pass ``work_dim=dim`` for the purely truncated operator.
    """
    if work_dim is None:
        work_dim = padded_dim(dim, abs(s.alpha))
    p, phi = s.dispersive, s.phi
    return displaced_compression(lambda n: np.cos(phase_shift(n, p) + phi), s.alpha, dim, work_dim)


def expected_signal(rho: FieldState, s: MeasurementSetting, work_dim: int | None = None) -> float:
    """Ideal ``P_e - P_g`` for state ``rho`` probed with setting ``s``."""
    g = g_operator(s, rho.dim, work_dim)
    return float(np.clip(rho.expect(g).real, -1.0, 1.0))


def ramsey_kraus(phi: float, p: DispersiveParams, dim: int):
    """Field Kraus operators ``(M_e, M_g)`` for one detected probe atom."""
    half = 0.5 * (phase_shift(np.arange(dim), p) + phi)
    return np.diag(np.cos(half)).astype(complex), np.diag(np.sin(half)).astype(complex)


def excitation_probability(g: float, imp: ImperfectionModel) -> float:
    pe = 0.5 * (1.0 + imp.contrast * g + imp.offset)
    if not -1e-12 <= pe <= 1 + 1e-12:
        raise ValueError(f"P_e={pe} outside [0, 1]; check the imperfection model")
    return min(1.0, max(0.0, pe))


def sample_detections(
    rho_true: FieldState,
    s: MeasurementSetting,
    n_atoms: int,
    imp: ImperfectionModel = IDEAL,
    seed=0,
    signal: float | None = None,
) -> DetectionRecord:
    """Draw ``n_atoms`` i.i.d. atom detections for one setting.

    ``signal`` skips recomputing ``expected_signal`` when it is already known.
    ``seed`` is anything accepted by :func:`numpy.random.default_rng`.
    """
    if n_atoms < 1:
        raise ValueError("n_atoms must be >= 1")
    g = expected_signal(rho_true, s) if signal is None else signal
    pe = excitation_probability(g, imp)
    rng = np.random.default_rng(seed)
    n_e = int(rng.binomial(n_atoms, pe))
    return DetectionRecord(s, n_e, n_atoms - n_e)


def correct_signal(record: DetectionRecord, imp: ImperfectionModel = IDEAL):
    """Undo the affine distortion; return ``(g_hat, sigma)``.

    ``sigma`` is the binomial standard error of the raw signal mapped through
    the same affine correction.
    """
    n = record.n_atoms
    if n < 1:
        raise ValueError("record holds no atoms")
    if imp.contrast == 0:
        raise ValueError("contrast must be nonzero")
    raw = (record.n_e - record.n_g) / n
    g_hat = float(np.clip((raw - imp.offset) / imp.contrast, -1.0, 1.0))
    pe = record.n_e / n
    # floor at one pseudo-count so all-e or all-g records keep a finite weight
    pe_var = max(pe * (1 - pe), 1.0 / (n + 2)) / n
    sigma = 2.0 * math.sqrt(pe_var) / imp.contrast
    return g_hat, sigma


def window_time(index: int, window_s: float = WINDOW_S) -> float:
    """Centre of the ``index``-th detection window after preparation."""
    return (index + 0.5) * window_s


def atoms_per_window(rng: np.random.Generator, window_s: float = WINDOW_S, interval_s: float = ATOM_INTERVAL_S) -> int:
    """Poisson atom count in one window (mean 8 for the default 4 ms / 0.5 ms)."""
    return int(rng.poisson(window_s / interval_s))
