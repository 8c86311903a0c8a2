"""Field-state engineering: QND photon counting and conditional cat states."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dispersive import DispersiveParams, phase_shift, phase_slope
from .fock import FieldState, coherent_ket, coherent_state, poisson_tail, TruncationError, DEFAULT_TAIL_BOUND
from .measurement import ramsey_kraus, ATOM_INTERVAL_S


class PreparationError(RuntimeError):
    pass


@dataclass(frozen=True)
class QndPlan:
    phi_set: Sequence[float]
    dispersive: DispersiveParams
    max_atoms: int = 60
    threshold: float = 0.9

    def __post_init__(self):
        if len(self.phi_set) == 0:
            raise ValueError("phi_set must not be empty")
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must lie in (0, 1]")
        object.__setattr__(self, "phi_set", tuple(float(p) for p in self.phi_set))


@dataclass
class QndOutcome:
    final: FieldState
    n0: int | None
    trajectory: list = field(default_factory=list)  # (outcome 'e'|'g', posterior populations)
    converged: bool = False


def qnd_project(
    initial: FieldState,
    plan: QndPlan,
    seed=0,
    damping: Callable[[FieldState], FieldState] | None = None,
) -> QndOutcome:
    """Count photons non-destructively until one Fock level dominates.

    Each atom is detected with probability ``Tr[M_x rho M_x]`` and the field
    is updated to ``M_x rho M_x / Tr[...]``, cycling the Ramsey phase through
    ``plan.phi_set``. ``damping`` is applied to the field between atoms when
    given (e.g. a short cavity relaxation step).

    When no level exceeds ``plan.threshold`` within ``plan.max_atoms`` the
    outcome has ``converged=False`` and ``n0=None``; callers discard it.
    """
    rng = np.random.default_rng(seed)
    dim = initial.dim
    kraus = [ramsey_kraus(phi, plan.dispersive, dim) for phi in plan.phi_set]
    rho = initial.matrix.copy()
    trajectory = []

    def converged_level(m):
        pops = m.diagonal().real
        n = int(np.argmax(pops))
        return n if pops[n] > plan.threshold else None

    n0 = converged_level(rho)
    atoms = 0
    while n0 is None and atoms < plan.max_atoms:
        m_e, m_g = kraus[atoms % len(kraus)]
        ce, cg = m_e.diagonal().real, m_g.diagonal().real
        p_e = float(np.dot(ce**2, rho.diagonal().real))
        if rng.random() < p_e:
            outcome, c, prob = "e", ce, p_e
        else:
            outcome, c, prob = "g", cg, 1.0 - p_e
        # M rho M for diagonal M
        rho = (c[:, None] * rho * c[None, :]) / prob
        rho = 0.5 * (rho + rho.conj().T)
        rho /= np.trace(rho).real
        if damping is not None:
            rho = damping(FieldState(rho)).matrix.copy()
        atoms += 1
        trajectory.append((outcome, rho.diagonal().real.copy()))
        n0 = converged_level(rho)
    return QndOutcome(FieldState(rho), n0, trajectory, n0 is not None)


def fock_plan(dispersive: DispersiveParams, n0: int | None = None, max_atoms: int = 60) -> QndPlan:
    """Two-phase plan (-Phi(0)+pi, -Phi(0)+pi/2); threshold 0.8 for n0 = 4."""
    phi0 = dispersive.phi0
    threshold = 0.8 if n0 == 4 else 0.9
    return QndPlan((-phi0 + math.pi, -phi0 + math.pi / 2), dispersive, max_atoms, threshold)


def prepare_fock(
    n0: int,
    initial: FieldState,
    plan: QndPlan,
    seed=0,
    max_tries: int = 10000,
    damping=None,
) -> tuple[FieldState, int]:
    """Repeat QND projection on fresh copies of ``initial`` until ``n0`` is
    selected. Returns the selected state and the number of attempts."""
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = np.random.SeedSequence(seed if isinstance(seed, int) else list(seed))
    for tries, child in enumerate(ss.spawn(max_tries), start=1):
        out = qnd_project(initial, plan, child, damping)
        if out.converged and out.n0 == n0:
            return out.final, tries
    raise PreparationError(f"n0={n0} not selected in {max_tries} attempts")


@dataclass(frozen=True)
class CatSpec:
    beta: complex
    chi: float
    parity_label: str = "even"  # even | odd | mixture
    exact_nonlinear: bool = False

    def __post_init__(self):
        object.__setattr__(self, "beta", complex(self.beta))
        if not abs(self.chi) < math.pi:
            raise ValueError("|chi| must be < pi")
        if self.parity_label not in ("even", "odd", "mixture"):
            raise ValueError(f"unknown parity label {self.parity_label!r}")

    @property
    def n_m(self) -> float:
        return abs(self.beta) ** 2


def cat_size(spec: CatSpec) -> float:
    """Squared distance between the two classical components, 4|beta|^2 sin^2(chi)."""
    return 4.0 * abs(spec.beta) ** 2 * math.sin(spec.chi) ** 2


def conditional_kraus(p: DispersiveParams, dim: int, n_ref: float = 0.0):
    """Field operators ``(K_even, K_odd)`` applied by one preparation atom.

    ``K_+- = (exp(i Psi/2) +- exp(-i Psi/2)) / 2`` with
    ``Psi = Phi(N) - c``. The offset ``c`` is the intercept of the tangent to
    ``Phi`` at ``n_ref``, so near ``n_ref`` the outcomes give the even and odd
    superpositions of ``|beta e^{+-i chi}>``; ``n_ref = 0`` gives
    ``c = Phi(0)``. The offset is a preparation Ramsey phase.
    ``K_+^dag K_+ + K_-^dag K_- = I``.
    """
    c = phase_shift(n_ref, p) - phase_slope(n_ref, p) * n_ref
    psi = phase_shift(np.arange(dim), p) - c
    return np.diag(np.cos(psi / 2)).astype(complex), np.diag(1j * np.sin(psi / 2)).astype(complex)


def implied_chi(beta, p: DispersiveParams) -> float:
    """Half the phase slope at the mean photon number."""
    return 0.5 * phase_slope(abs(beta) ** 2, p)


def prepare_cat(
    spec: CatSpec,
    p: DispersiveParams | None,
    dim: int,
    tail_bound: float = DEFAULT_TAIL_BOUND,
) -> FieldState:
    """Density matrix of an even, odd or mixed cat state.

    Linear mode builds ``(|beta e^{i chi}> +- |beta e^{-i chi}>)`` directly.
    Exact mode applies :func:`conditional_kraus` to ``|beta>``; the component
    rotation then follows the full phase curve (``chi`` is implied by ``p``).
    """
    tail = poisson_tail(spec.n_m, dim)
    if tail > tail_bound:
        raise TruncationError(f"dim={dim} discards Poisson tail {tail:.2e} for |beta|^2={spec.n_m:.3g}")
    if spec.parity_label == "mixture":
        even = prepare_cat(_with_label(spec, "even"), p, dim, tail_bound)
        odd = prepare_cat(_with_label(spec, "odd"), p, dim, tail_bound)
        return even.mix(odd, 0.5)
    sign = 1.0 if spec.parity_label == "even" else -1.0
    if spec.exact_nonlinear:
        if p is None:
            raise ValueError("exact_nonlinear preparation needs dispersive parameters")
        k_even, k_odd = conditional_kraus(p, dim, spec.n_m)
        k = k_even if sign > 0 else k_odd
        psi = k @ coherent_ket(spec.beta, dim)
    else:
        plus = coherent_ket(spec.beta * np.exp(1j * spec.chi), dim)
        minus = coherent_ket(spec.beta * np.exp(-1j * spec.chi), dim)
        psi = plus + sign * minus
    norm = np.linalg.norm(psi)
    if norm < 1e-12:
        raise PreparationError("cat state has vanishing norm (odd cat with chi ~ 0)")
    return FieldState.from_ket(psi / norm)


def _with_label(spec: CatSpec, label: str) -> CatSpec:
    return CatSpec(spec.beta, spec.chi, label, spec.exact_nonlinear)


def cat_ket(spec: CatSpec, dim: int) -> np.ndarray:
    """State vector of a linear-mode even/odd cat."""
    sign = 1.0 if spec.parity_label == "even" else -1.0
    psi = coherent_ket(spec.beta * np.exp(1j * spec.chi), dim) + sign * coherent_ket(spec.beta * np.exp(-1j * spec.chi), dim)
    return psi / np.linalg.norm(psi)
