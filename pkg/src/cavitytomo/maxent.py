"""Maximum-entropy density-matrix reconstruction.

Given measured expectations ``g_k`` of Hermitian operators ``G_k``, the
maximum-entropy state has the exponential form
``rho(lam) = exp(-sum_k lam_k G_k) / Z`` and ``lam`` minimizes the convex dual

    F(lam) = ln Z(lam) + sum_k lam_k g_k  [+ 1/2 sum_k sigma_k^2 lam_k^2]

The bracketed term is present in noise-relaxed mode; it trades the hard
constraints for a Gaussian misfit penalty with per-constraint width
``sigma_k``. ``dF/dlam_k = g_k - Tr[rho G_k] (+ sigma_k^2 lam_k)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .fock import FieldState
from .measurement import DetectionRecord, ImperfectionModel, IDEAL, correct_signal, g_operator

logger = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e4


class ReconstructionError(RuntimeError):
    pass


@dataclass
class ConstraintSet:
    operators: np.ndarray  # (K, D, D) Hermitian
    values: np.ndarray  # (K,)
    sigmas: np.ndarray  # (K,)

    def __post_init__(self):
        self.operators = np.asarray(self.operators, dtype=complex)
        if self.operators.ndim == 2:
            self.operators = self.operators[None]
        k = self.operators.shape[0]
        self.values = np.asarray(self.values, dtype=float).reshape(k)
        self.sigmas = np.zeros(k) if self.sigmas is None else np.asarray(self.sigmas, dtype=float).reshape(k)
        if np.any(np.abs(self.values) > 1 + 1e-12):
            raise ValueError("constraint values must satisfy |g_k| <= 1")
        if np.any(self.sigmas < 0):
            raise ValueError("sigmas must be >= 0")

    @classmethod
    def empty(cls, dim: int) -> "ConstraintSet":
        return cls(np.zeros((0, dim, dim), dtype=complex), np.zeros(0), np.zeros(0))

    @property
    def dim(self) -> int:
        return self.operators.shape[-1]

    def __len__(self) -> int:
        return self.operators.shape[0]

    def subset(self, idx) -> "ConstraintSet":
        idx = np.asarray(idx, dtype=int)
        return ConstraintSet(self.operators[idx], self.values[idx], self.sigmas[idx])

    def concat(self, other: "ConstraintSet") -> "ConstraintSet":
        return ConstraintSet(
            np.concatenate([self.operators, other.operators]),
            np.concatenate([self.values, other.values]),
            np.concatenate([self.sigmas, other.sigmas]),
        )


@dataclass
class ReconstructionResult:
    rho: FieldState
    entropy: float
    residuals: np.ndarray
    iterations: int
    converged: bool
    lambdas: np.ndarray = field(repr=False)
    message: str = ""


def entropy(rho: FieldState) -> float:
    """von Neumann entropy ``-Tr[rho ln rho]`` in nats."""
    p = np.linalg.eigvalsh(rho.matrix)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


class _Dual:
    """Evaluates the dual objective and its derivatives for one constraint set."""

    def __init__(self, cs: ConstraintSet, relaxed: bool):
        self.cs = cs
        self.ops = cs.operators
        self.flat = cs.operators.reshape(len(cs), cs.dim * cs.dim)
        self.s2 = cs.sigmas**2 if relaxed else np.zeros(len(cs))

    def state(self, lam):
        d = self.cs.dim
        h = (lam @ self.flat).reshape(d, d) if len(lam) else np.zeros((d, d), dtype=complex)
        e, v = np.linalg.eigh(0.5 * (h + h.conj().T))
        e0 = e[0]
        w = np.exp(-(e - e0))
        z = w.sum()
        return e, v, w / z, math.log(z) - e0

    def value(self, lam) -> float:
        if not np.all(np.isfinite(lam)):
            return math.inf
        try:
            _, _, _, log_z = self.state(lam)
        except np.linalg.LinAlgError:
            return math.inf
        return log_z + float(lam @ self.cs.values) + 0.5 * float(np.sum(self.s2 * lam**2))

    def full(self, lam, hessian: bool = False):
        e, v, p, log_z = self.state(lam)
        f = log_z + float(lam @ self.cs.values) + 0.5 * float(np.sum(self.s2 * lam**2))
        d = self.cs.dim
        # G_k in the eigenbasis of the exponent
        gt = np.einsum("ia,kij,jb->kab", v.conj(), self.ops, v, optimize=True)
        expect = np.einsum("kaa,a->k", gt, p).real
        grad = self.cs.values - expect + self.s2 * lam
        if not hessian:
            return f, grad, expect, (e, v, p)
        # Kubo-Mori kernel: divided difference of p over the spectrum
        de = e[None, :] - e[:, None]  # E_j - E_i
        pi_ = np.broadcast_to(p[:, None], (d, d))
        pj_ = np.broadcast_to(p[None, :], (d, d))
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            # branch on the spectrum, not on p: both p can underflow to zero
            kern = np.where(de >= 0, pi_ * -np.expm1(-de) / de, pj_ * -np.expm1(de) / (-de))
        kern = np.where(np.abs(de) < 1e-12, 0.5 * (pi_ + pj_), kern)
        a = gt.reshape(len(self.cs), d * d)
        hess = ((a * kern.reshape(-1)) @ a.conj().T).real - np.outer(expect, expect)
        hess += np.diag(self.s2)
        return f, grad, expect, (e, v, p), 0.5 * (hess + hess.T)


def dual_value_and_gradient(lam, cs: ConstraintSet, relaxed: bool = False):
    """Return ``(F, grad)`` of the dual at ``lam``."""
    lam = np.asarray(lam, dtype=float)
    f, grad, _, _ = _Dual(cs, relaxed).full(lam)
    return f, grad


def dual_hessian(lam, cs: ConstraintSet, relaxed: bool = False) -> np.ndarray:
    return _Dual(cs, relaxed).full(np.asarray(lam, dtype=float), hessian=True)[4]


def _rho_from(e, v, p) -> FieldState:
    m = (v * p) @ v.conj().T
    return FieldState(m / np.trace(m).real)


def reconstruct(
    cs: ConstraintSet,
    tol: float = 1e-4,
    max_iter: int = 2000,
    noise_relaxation: bool = True,
) -> ReconstructionResult:
    """Maximum-entropy state consistent with ``cs``.

    Minimizes the dual with Levenberg-damped Newton steps and an Armijo
    backtracking line search, starting from the maximally mixed state.
    Exact mode stops when every residual is below ``tol``; relaxed mode when
    the dual gradient norm is.
    """
    dual = _Dual(cs, noise_relaxation)
    k = len(cs)
    lam = np.zeros(k)
    if k == 0:
        rho = FieldState.maximally_mixed(cs.dim)
        return ReconstructionResult(rho, entropy(rho), np.zeros(0), 0, True, lam, "no constraints")

    mu = 1e-6
    converged, message, it = False, "max_iter reached", 0
    f, grad, expect, eig, hess = dual.full(lam, hessian=True)
    for it in range(1, max_iter + 1):
        resid = np.abs(expect - cs.values)
        crit = np.linalg.norm(grad) if noise_relaxation else resid.max()
        if crit <= tol:
            converged, message = True, "converged"
            it -= 1
            break
        if np.max(np.abs(lam)) > DIVERGENCE_NORM:
            message = "multipliers diverging: constraints look infeasible, enable noise relaxation"
            logger.warning(message)
            break
        scale = max(float(np.max(np.abs(np.diag(hess)))), 1e-12)
        accepted = False
        for _ in range(30):
            try:
                chol = np.linalg.cholesky(hess + mu * scale * np.eye(k))
            except np.linalg.LinAlgError:
                mu *= 10
                continue
            step = -np.linalg.solve(chol.conj().T, np.linalg.solve(chol, grad))
            if not np.all(np.isfinite(step)):
                mu *= 10
                continue
            slope = float(grad @ step)
            t = 1.0
            while t > 1e-10:
                trial = lam + t * step
                f_new = dual.value(trial)
                if f_new <= f + 1e-4 * t * slope:
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                break
            mu *= 10
        if not accepted:
            message = "line search failed"
            break
        lam = trial
        mu = max(mu * (0.3 if t == 1.0 else 3.0), 1e-12)
        f_prev = f
        f, grad, expect, eig, hess = dual.full(lam, hessian=True)
        if abs(f_prev - f) < 1e-15 * max(1.0, abs(f)) and t < 1e-6:
            message = "stalled"
            break

    rho = _rho_from(*eig)
    resid = np.abs(np.einsum("kij,ji->k", cs.operators, rho.matrix).real - cs.values)
    return ReconstructionResult(rho, entropy(rho), resid, it, converged, lam, message)


def constraints_from_records(
    records,
    dim: int,
    imp: ImperfectionModel = IDEAL,
    alpha_map=None,
    cache: dict | None = None,
) -> ConstraintSet:
    """Turn detection records into constraints.

    ``alpha_map(setting) -> complex`` overrides the translation used for the
    G operator (used for the time-rescaled analysis). ``cache`` maps settings
    to already-built operators.
    """
    cache = {} if cache is None else cache
    ops, vals, sigs = [], [], []
    for rec in records:
        s = rec.setting if alpha_map is None else rec.setting.with_alpha(alpha_map(rec.setting))
        key = (s.alpha, s.phi, s.dispersive, dim)
        if key not in cache:
            cache[key] = g_operator(s, dim)
        g_hat, sigma = correct_signal(rec, imp)
        ops.append(cache[key])
        vals.append(g_hat)
        sigs.append(sigma)
    if not ops:
        return ConstraintSet.empty(dim)
    return ConstraintSet(np.array(ops), np.array(vals), np.array(sigs))


def bootstrap_errorbars(
    records,
    functional,
    n_resamples: int,
    seed=0,
    dim: int = 11,
    imp: ImperfectionModel = IDEAL,
    alpha_map=None,
    **opts,
):
    """Mean and standard deviation of ``functional(rho)`` over reconstructions
    from records resampled with replacement.

    Returns ``(mean, std, n_failed)``; failed reconstructions are excluded.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to resample")
    full = constraints_from_records(records, dim, imp, alpha_map=alpha_map)
    rng = np.random.default_rng(seed)
    values, failed = [], 0
    for _ in range(n_resamples):
        idx = rng.integers(0, len(records), size=len(records))
        res = reconstruct(full.subset(idx), **opts)
        if not res.converged:
            failed += 1
            continue
        values.append(float(functional(res.rho)))
    if failed:
        logger.warning("%d of %d bootstrap reconstructions failed", failed, n_resamples)
    if not values:
        raise ReconstructionError("every bootstrap reconstruction failed")
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return float(np.mean(values)), std, failed
