"""Photon-number-dependent phase shift of the probe atoms.

All frequencies are given as ``f = omega / 2 pi`` in Hz; the model works with
angular frequencies internally.

The phase accumulated between the two atomic levels in a field of ``n``
photons is the square-pulse dressed-state expression

    Phi(n) = (t_eff / 2) * (sqrt(Delta^2 + Omega^2 (n + 1)) - Delta)

with ``Delta = 2 pi delta`` and ``Omega = 2 pi omega``. It is linear in ``n``
when ``delta >> omega sqrt(n + 1)`` and concave otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class DispersiveParams:
    omega: float  # vacuum Rabi frequency / 2pi, Hz
    delta: float  # atom-cavity detuning / 2pi, Hz
    t_eff: float  # effective interaction time, s

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"omega must be > 0, got {self.omega}")
        if self.delta == 0:
            raise ValueError("delta must be nonzero")
        if not self.t_eff > 0:
            raise ValueError(f"t_eff must be > 0, got {self.t_eff}")

    @property
    def phi0(self) -> float:
        """Phase shift in the vacuum, Phi(0, delta)."""
        return float(phase_shift(0, self))

    def to_config(self) -> dict:
        return {"omega_hz": self.omega, "delta_hz": self.delta, "t_eff_s": self.t_eff}

    @classmethod
    def from_config(cls, cfg: dict) -> "DispersiveParams":
        return cls(float(cfg["omega_hz"]), float(cfg["delta_hz"]), float(cfg["t_eff_s"]))


def _radicand(n, p: DispersiveParams):
    big_delta = TWO_PI * p.delta
    big_omega = TWO_PI * p.omega
    return big_delta**2 + big_omega**2 * (np.asarray(n, dtype=float) + 1.0)


def phase_shift(n, p: DispersiveParams):
    """Phi(n, delta) in radians; ``n`` may be a scalar or an array."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 0):
        raise ValueError("photon number must be >= 0")
    big_delta = TWO_PI * p.delta
    big_omega = TWO_PI * p.omega
    if big_delta > 0:
        # rationalized form avoids cancellation when delta >> omega
        out = 0.5 * p.t_eff * big_omega**2 * (n + 1.0) / (np.sqrt(_radicand(n, p)) + big_delta)
    else:
        out = 0.5 * p.t_eff * (np.sqrt(_radicand(n, p)) - big_delta)
    return float(out) if out.ndim == 0 else out


def phase_slope(n, p: DispersiveParams):
    """Analytic derivative dPhi/dn in radians per photon."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 0):
        raise ValueError("photon number must be >= 0")
    big_omega = TWO_PI * p.omega
    out = 0.5 * p.t_eff * big_omega**2 / (2.0 * np.sqrt(_radicand(n, p)))
    return float(out) if out.ndim == 0 else out


def phase_operator(p: DispersiveParams, dim: int) -> np.ndarray:
    """Diagonal operator Phi(N, delta) on ``dim`` Fock levels."""
    return np.diag(phase_shift(np.arange(dim), p)).astype(complex)


def calibrate_teff(delta: float, n: float, target_slope: float, p0: DispersiveParams) -> DispersiveParams:
    """Return ``p0`` with ``delta`` replaced and ``t_eff`` chosen so that
    ``phase_slope(n) == target_slope``. The slope is linear in ``t_eff``."""
    if not target_slope > 0:
        raise ValueError("target_slope must be > 0")
    unit = replace(p0, delta=delta, t_eff=1.0)
    return replace(unit, t_eff=target_slope / phase_slope(n, unit))


# Reference probe setups of the modelled experiment.
RABI_HZ = 49e3


def fock_setup() -> DispersiveParams:
    """delta = 120 kHz, slope pi/2 at n = 3."""
    return calibrate_teff(120e3, 3.0, math.pi / 2, DispersiveParams(RABI_HZ, 120e3, 1.0))


def cat_setup(n_m: float = 3.5, chi: float = 0.37 * math.pi) -> DispersiveParams:
    """delta = 51 kHz, half-slope chi at the mean photon number."""
    return calibrate_teff(51e3, n_m, 2.0 * chi, DispersiveParams(RABI_HZ, 51e3, 1.0))


def coherent_setup() -> DispersiveParams:
    """delta = 65 kHz. No slope anchor is given for this setup; the Fock-state
    interaction time is reused."""
    return replace(fock_setup(), delta=65e3)
