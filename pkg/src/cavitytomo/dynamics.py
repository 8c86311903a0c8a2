"""Cavity damping at finite temperature and decoherence analysis.

The field obeys the thermal master equation

    d rho/dt = kappa (1 + n_b) (a rho a^dag - {N, rho}/2)
             + kappa n_b (a^dag rho a - {a a^dag, rho}/2),   kappa = 1/T_c.

Because ``a`` only has one off-diagonal band, every term is an index shift or
a diagonal scaling, so the right-hand side costs O(D^2) per density matrix.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fock import FieldState, embed, padded_dim, translate, fidelity, _displacement_columns
from .dispersive import DispersiveParams, phase_shift
from .measurement import DetectionRecord, ImperfectionModel, IDEAL, excitation_probability
from .prepare import CatSpec
from . import maxent

logger = logging.getLogger(__name__)

LOCAL_TOL = 1e-9


class IntegrationError(RuntimeError):
    pass


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class CavityParams:
    t_c: float = 0.13
    n_b: float = 0.05

    def __post_init__(self):
        if not self.t_c > 0:
            raise ValueError("t_c must be > 0")
        if self.n_b < 0:
            raise ValueError("n_b must be >= 0")

    @property
    def kappa(self) -> float:
        return 1.0 / self.t_c


@dataclass
class CoherenceSeries:
    times: np.ndarray
    values: np.ndarray
    errors: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.errors is not None:
            self.errors = np.asarray(self.errors, dtype=float)
            if self.errors.shape != self.values.shape:
                raise ValueError("errors must match values")
            if np.any(self.errors <= 0):
                raise ValueError("errors must be positive")
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have the same length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")


# -- master equation -------------------------------------------------------


def _liouvillian_rhs(dim: int, cav: CavityParams):
    n = np.arange(dim, dtype=float)
    sq = np.sqrt(n)
    aad = np.append(n[1:], 0.0)  # diagonal of truncated a a^dag
    down = cav.kappa * (1 + cav.n_b)
    up = cav.kappa * cav.n_b
    outer_sq = np.outer(sq, sq)
    decay = -0.5 * (down * (n[:, None] + n[None, :]) + up * (aad[:, None] + aad[None, :]))

    def rhs(rho):
        out = decay * rho
        # a rho a^dag: (m, n) <- sqrt(m+1) sqrt(n+1) rho[m+1, n+1]
        out[..., :-1, :-1] += down * outer_sq[1:, 1:] * rho[..., 1:, 1:]
        if up:
            # a^dag rho a: (m, n) <- sqrt(m) sqrt(n) rho[m-1, n-1]
            out[..., 1:, 1:] += up * outer_sq[1:, 1:] * rho[..., :-1, :-1]
        return out

    return rhs


def _population_rhs(dim: int, cav: CavityParams):
    n = np.arange(dim, dtype=float)
    aad = np.append(n[1:], 0.0)
    down = cav.kappa * (1 + cav.n_b)
    up = cav.kappa * cav.n_b

    def rhs(p):
        out = -(down * n + up * aad) * p
        out[..., :-1] += down * n[1:] * p[..., 1:]
        out[..., 1:] += up * n[1:] * p[..., :-1]
        return out

    return rhs


def _rk4(rhs, y, h):
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * h * k1)
    k3 = rhs(y + 0.5 * h * k2)
    k4 = rhs(y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(rhs, y0: np.ndarray, times: Sequence[float], rate: float, tol: float = LOCAL_TOL) -> np.ndarray:
    """Integrate a linear ODE with RK4 and step-doubling error control.

    Returns an array of snapshots, one per entry of ``times`` (which must be
    nondecreasing and start at or after 0). Each accepted step is the
    Richardson combination of one full and two half steps.
    """
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be nonnegative and nondecreasing")
    y = np.array(y0)
    scale = max(float(np.max(np.abs(y))), 1e-300)
    h = 0.1 / max(rate, 1e-12)
    t = 0.0
    out = np.empty((len(times),) + y.shape, dtype=y.dtype)
    for i, t_stop in enumerate(times):
        while t < t_stop:
            h = min(h, t_stop - t)
            full = _rk4(rhs, y, h)
            half = _rk4(rhs, _rk4(rhs, y, h / 2), h / 2)
            err = float(np.max(np.abs(half - full))) / 15.0 / scale
            if err <= tol or h <= 1e-14 * max(t_stop, 1e-300):
                if err > tol:
                    raise IntegrationError(f"step size underflow at t={t:.3e}")
                y = half + (half - full) / 15.0
                t = t_stop if t_stop - t <= h else t + h
                factor = 4.0 if err == 0 else min(4.0, 0.9 * (tol / err) ** 0.2)
                h *= factor
            else:
                h *= max(0.1, 0.9 * (tol / err) ** 0.2)
        out[i] = y
    return out


def _rate(dim: int, cav: CavityParams) -> float:
    return cav.kappa * (1 + 2 * cav.n_b) * max(dim, 1)


def evolve_matrices(rhos: np.ndarray, times: Sequence[float], cav: CavityParams, tol: float = LOCAL_TOL) -> np.ndarray:
    """Snapshots of one or many density matrices (shape ``(..., D, D)``)."""
    rhos = np.asarray(rhos, dtype=complex)
    dim = rhos.shape[-1]
    return integrate(_liouvillian_rhs(dim, cav), rhos, times, _rate(dim, cav), tol)


def evolve_populations(pops: np.ndarray, times: Sequence[float], cav: CavityParams, tol: float = LOCAL_TOL) -> np.ndarray:
    """Snapshots of photon-number distributions (shape ``(..., D)``).

    Damping never couples populations to coherences, so the diagonal evolves
    on its own.
    """
    pops = np.asarray(pops, dtype=float)
    dim = pops.shape[-1]
    return integrate(_population_rhs(dim, cav), pops, times, _rate(dim, cav), tol)


def lindblad_evolve(rho: FieldState, t: float, cav: CavityParams, tol: float = LOCAL_TOL) -> FieldState:
    """State after damping for a time ``t`` (seconds)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return rho
    m = evolve_matrices(rho.matrix, [t], cav, tol)[0]
    return FieldState.clipped(m, floor=1e-7)


def lindblad_series(rho: FieldState, times: Sequence[float], cav: CavityParams, tol: float = LOCAL_TOL) -> list[FieldState]:
    return [FieldState.clipped(m, floor=1e-7) for m in evolve_matrices(rho.matrix, times, cav, tol)]


def damping_step(cav: CavityParams, dt: float = 0.5e-3):
    """Callable applying ``dt`` of damping, for use between preparation atoms."""
    return lambda rho: lindblad_evolve(rho, dt, cav)


# -- translation and analysis ---------------------------------------------


def rescale_translation(alpha, t: float, cav: CavityParams) -> complex:
    if t < 0:
        raise ValueError("t must be >= 0")
    return complex(alpha) * math.exp(-t / (2 * cav.t_c))


def translation_identity_gap(rho: FieldState, alpha, t: float, cav: CavityParams, work_dim: int | None = None) -> float:
    """Trace norm between ``D(a') L[rho, t] D(-a')`` and ``L[D(a) rho D(-a), t]``
    with ``a' = a exp(-t / 2 T_c)``, both sides computed in a padded space."""
    alpha = complex(alpha)
    if work_dim is None:
        work_dim = padded_dim(rho.dim, abs(alpha), margin=3.0)
    big = embed(rho, work_dim)
    evolved = evolve_matrices(np.stack([big.matrix, translate(big, alpha).matrix]), [t], cav)[0]
    lhs = translate(FieldState.clipped(evolved[0]), rescale_translation(alpha, t, cav))
    rhs = evolved[1]
    diff = lhs.matrix - rhs
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))


def translated_matrix(rho: FieldState, spec: CatSpec, dim: int | None = None) -> FieldState:
    """``rho`` translated by ``-beta e^{i chi}`` so that one cat component sits
    on the vacuum; ``dim`` enlarges the space first."""
    if dim is not None and dim > rho.dim:
        rho = embed(rho, dim)
    return translate(rho, -spec.beta * np.exp(1j * spec.chi))


def coherence_metric(rho_t: FieldState, n_min: int = 5) -> float:
    """Sum of ``|rho_{n0}|`` for ``n >= n_min``."""
    return float(np.sum(np.abs(rho_t.matrix[n_min:, 0])))


def predicted_td(d2: float, cav: CavityParams) -> float:
    """Decoherence time ``2 T_c / (d^2 (1 + 2 n_b) + 4 n_b)`` in seconds."""
    if not d2 > 0:
        raise ValueError("d2 must be > 0")
    return 2 * cav.t_c / (d2 * (1 + 2 * cav.n_b) + 4 * cav.n_b)


# -- exponential fit -------------------------------------------------------


@dataclass
class ExpFit:
    t_d: float
    amplitude: float
    offset: float
    t_d_std: float

    def __iter__(self):
        return iter((self.t_d, self.amplitude, self.offset, self.t_d_std))


def _linear_ac(t, y, w, tau):
    basis = np.stack([np.exp(-t / tau), np.ones_like(t)], axis=1)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(basis * sw[:, None], y * sw, rcond=None)
    r = y - basis @ coef
    return coef, float(np.sum(w * r**2))


def fit_exponential_offset(series: CoherenceSeries, max_iter: int = 200) -> ExpFit:
    """Least-squares fit of ``A exp(-t/T_d) + C``.

    A log-spaced grid over ``T_d`` (with ``A`` and ``C`` solved linearly)
    seeds a damped Gauss-Newton refinement. With ``series.errors`` the fit
    is weighted and the uncertainty uses them as absolute; otherwise the
    residual variance sets the scale.
    """
    t, y = series.times, series.values
    if len(t) < 4:
        raise FitError("need at least 4 points")
    w = np.ones_like(y) if series.errors is None else 1.0 / np.maximum(series.errors, 1e-300) ** 2
    span = t[-1] - t[0]
    y_scale = max(float(np.max(np.abs(y))), 1e-300)
    if float(np.ptp(y)) <= 1e-12 * y_scale:
        raise FitError("series is constant: decay time unidentifiable")

    taus = np.geomspace(span / 200, span * 50, 400)
    best = min(taus, key=lambda tau: _linear_ac(t, y, w, tau)[1])
    (a, c), _ = _linear_ac(t, y, w, best)
    params = np.array([a, best, c])

    def model(p):
        return p[0] * np.exp(-t / p[1]) + p[2]

    def jac(p):
        e = np.exp(-t / p[1])
        return np.stack([e, p[0] * t / p[1] ** 2 * e, np.ones_like(t)], axis=1)

    def cost(p):
        return float(np.sum(w * (y - model(p)) ** 2))

    lam = 1e-3
    c_now = cost(params)
    for _ in range(max_iter):
        j = jac(params)
        r = y - model(params)
        jtj = j.T @ (w[:, None] * j)
        grad = j.T @ (w * r)
        step = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj) + 1e-300), grad)
        trial = params + step
        if trial[1] > 0 and cost(trial) <= c_now:
            converged = np.all(np.abs(step) <= 1e-12 * (np.abs(params) + 1e-12)) or c_now - cost(trial) <= 1e-15 * max(c_now, 1e-300)
            params, c_now = trial, cost(trial)
            lam = max(lam / 10, 1e-12)
            if converged:
                break
        else:
            lam *= 10
            if lam > 1e12:
                break

    a, tau, c = params
    if not tau > 0:
        raise FitError(f"fitted decay time is not positive ({tau})")
    if abs(a) <= 1e-9 * y_scale:
        raise FitError("fitted amplitude vanishes: decay time unidentifiable")
    j = jac(params)
    jtj = j.T @ (w[:, None] * j)
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError as exc:
        raise FitError("singular Jacobian at optimum") from exc
    if series.errors is None:
        dof = max(len(t) - 3, 1)
        cov = cov * c_now / dof
    return ExpFit(float(tau), float(a), float(c), float(math.sqrt(max(cov[1, 1], 0.0))))


# -- movies ----------------------------------------------------------------

MOVIE_TIMES_S = (1.3e-3, 4.3e-3, 15.8e-3, 22.9e-3)


@dataclass
class Frame:
    t: float
    state: FieldState | None
    ok: bool = True
    message: str = ""
    records: list = field(default_factory=list, repr=False)


def windowed_records(
    rho0: FieldState,
    settings,
    times: Sequence[float],
    cav: CavityParams,
    n_atoms: int,
    imp: ImperfectionModel = IDEAL,
    seed: int = 0,
) -> list[list[DetectionRecord]]:
    """Simulate the translate-then-wait protocol.

    Each setting's translation is applied right after preparation; the
    translated field is then damped and probed during every window in
    ``times``. Returns one list of records per window, with settings keeping
    their original ``alpha`` and ``window_index`` set to the window number.
    """
    settings = list(settings)
    dim = rho0.dim
    amp = max((abs(s.alpha) for s in settings), default=0.0)
    work_dim = padded_dim(dim, amp)
    pops = np.empty((len(settings), work_dim))
    for i, s in enumerate(settings):
        cols = _displacement_columns(s.alpha, work_dim, dim)
        pops[i] = np.einsum("ij,jk,ik->i", cols, rho0.matrix, cols.conj()).real
    snaps = evolve_populations(pops, times, cav)
    out = []
    root = np.random.SeedSequence(seed)
    for w, child in enumerate(root.spawn(len(times))):
        rngs = child.spawn(len(settings))
        recs = []
        for i, s in enumerate(settings):
            cosine = np.cos(phase_shift(np.arange(work_dim), s.dispersive) + s.phi)
            g = float(np.clip(snaps[w, i] @ cosine, -1, 1))
            pe = excitation_probability(g, imp)
            n_e = int(np.random.default_rng(rngs[i]).binomial(n_atoms, pe))
            recs.append(DetectionRecord(type(s)(s.alpha, s.phi, s.dispersive, w), n_e, n_atoms - n_e))
        out.append(recs)
    return out


def decoherence_movie(
    rho0: FieldState,
    windows: Sequence[float],
    cav: CavityParams,
    pipeline: str = "via_measurement",
    settings=None,
    n_atoms: int = 2000,
    imp: ImperfectionModel = IDEAL,
    recon_dim: int | None = None,
    seed: int = 0,
    **recon_opts,
) -> list[Frame]:
    """Snapshots of a decaying state.

    ``ideal`` integrates the master equation directly. ``via_measurement``
    simulates windowed detection records (see :func:`windowed_records`),
    analyses window ``t`` with translations rescaled by ``exp(-t/2T_c)`` and
    reconstructs each frame by maximum entropy in ``recon_dim`` levels.
    Frames whose reconstruction fails are returned with ``ok=False``.
    """
    windows = list(windows)
    if any(np.diff(windows) <= 0):
        raise ValueError("windows must be increasing")
    if pipeline == "ideal":
        return [Frame(t, s) for t, s in zip(windows, lindblad_series(rho0, windows, cav))]
    if pipeline != "via_measurement":
        raise ValueError(f"unknown pipeline {pipeline!r}")
    if not settings:
        raise ValueError("via_measurement needs probe settings")
    recon_dim = recon_dim or rho0.dim
    per_window = windowed_records(rho0, settings, windows, cav, n_atoms, imp, seed)
    frames = []
    cache: dict = {}
    for t, recs in zip(windows, per_window):
        cs = maxent.constraints_from_records(
            recs, recon_dim, imp, alpha_map=lambda s, t=t: rescale_translation(s.alpha, t, cav), cache=cache
        )
        try:
            res = maxent.reconstruct(cs, **recon_opts)
        except Exception as exc:  # noqa: BLE001 - frame is marked failed, movie continues
            logger.warning("frame at t=%.4g s failed: %s", t, exc)
            frames.append(Frame(t, None, False, str(exc), recs))
            continue
        frames.append(Frame(t, res.rho, res.converged, res.message, recs))
    return frames
