"""Truncated Fock-space linear algebra.

States are density matrices in the basis |0>, ..., |D-1>; operators are plain
``numpy`` arrays of shape ``(D, D)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-9
EIGEN_FLOOR = 1e-9
DEFAULT_TAIL_BOUND = 1e-3


class StateError(ValueError):
    """Raised when a matrix is not a valid density matrix."""


class TruncationError(ValueError):
    """Raised when the Fock cutoff is too small for the requested state."""


def _as_amplitude(alpha) -> complex:
    alpha = complex(alpha)
    if not (math.isfinite(alpha.real) and math.isfinite(alpha.imag)):
        raise ValueError(f"non-finite amplitude {alpha!r}")
    return alpha


@dataclass(frozen=True)
class FieldState:
    """Density matrix of the cavity field in a truncated Fock basis.

    Deviations from Hermiticity below ``HERMITIAN_TOL`` are removed by
    symmetrizing; anything larger, a trace off by more than ``TRACE_TOL`` or an
    eigenvalue below ``-eig_floor`` raises :class:`StateError`.
    """

    matrix: np.ndarray
    eig_floor: float = field(default=EIGEN_FLOOR, repr=False, compare=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise StateError(f"density matrix must be square, got shape {m.shape}")
        asym = np.max(np.abs(m - m.conj().T))
        if asym > HERMITIAN_TOL:
            raise StateError(f"matrix not Hermitian (max deviation {asym:.3e})")
        m = 0.5 * (m + m.conj().T)
        tr = np.trace(m).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise StateError(f"trace is {tr!r}, expected 1")
        evals = np.linalg.eigvalsh(m)
        if evals[0] < -self.eig_floor:
            raise StateError(f"negative eigenvalue {evals[0]:.3e}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_ket(cls, psi) -> "FieldState":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def fock(cls, n: int, dim: int) -> "FieldState":
        if not 0 <= n < dim:
            raise ValueError(f"Fock level {n} outside truncated space of dim {dim}")
        psi = np.zeros(dim, dtype=complex)
        psi[n] = 1.0
        return cls.from_ket(psi)

    @classmethod
    def maximally_mixed(cls, dim: int) -> "FieldState":
        return cls(np.eye(dim, dtype=complex) / dim)

    @classmethod
    def clipped(cls, matrix, floor: float = 1e-7) -> "FieldState":
        """Build a state from a numerically noisy matrix.

        Eigenvalues in ``[-floor, 0)`` are set to zero and the trace is
        restored; anything more negative is still an error.
        """
        m = np.asarray(matrix, dtype=complex)
        m = 0.5 * (m + m.conj().T)
        evals, vecs = np.linalg.eigh(m)
        if evals[0] < -floor:
            raise StateError(f"negative eigenvalue {evals[0]:.3e} below floor {floor}")
        if evals[0] < 0:
            evals = np.clip(evals, 0.0, None)
            m = (vecs * evals) @ vecs.conj().T
        return cls(m / np.trace(m).real)

    def populations(self) -> np.ndarray:
        return self.matrix.diagonal().real.copy()

    def expect(self, op) -> complex:
        return complex(np.einsum("ij,ji->", self.matrix, op))

    def mean_photon_number(self) -> float:
        return float(np.dot(np.arange(self.dim), self.populations()))

    def mix(self, other: "FieldState", weight: float = 0.5) -> "FieldState":
        """Return ``weight * self + (1 - weight) * other``."""
        _check_dims(self, other)
        return FieldState(weight * self.matrix + (1.0 - weight) * other.matrix)


def _check_dims(a: FieldState, b: FieldState) -> None:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def embed(rho: FieldState, dim: int) -> FieldState:
    """Zero-pad ``rho`` into a larger truncated space."""
    if dim < rho.dim:
        raise ValueError(f"cannot embed dim {rho.dim} into smaller dim {dim}")
    m = np.zeros((dim, dim), dtype=complex)
    m[: rho.dim, : rho.dim] = rho.matrix
    return FieldState(m)


def project(rho: FieldState, dim: int) -> FieldState:
    """Restrict ``rho`` to the first ``dim`` Fock levels and renormalize."""
    if dim > rho.dim:
        return embed(rho, dim)
    m = np.array(rho.matrix[:dim, :dim])
    return FieldState(m / np.trace(m).real)


def poisson_tail(mean: float, dim: int) -> float:
    """Probability that a Poisson(mean) variable is >= dim."""
    if mean == 0:
        return 0.0
    n = np.arange(dim)
    logp = n * math.log(mean) - mean - np.array([math.lgamma(k + 1) for k in n])
    return max(0.0, 1.0 - float(np.exp(logp).sum()))


def coherent_ket(beta, dim: int) -> np.ndarray:
    """Normalized truncated coherent-state amplitudes."""
    beta = _as_amplitude(beta)
    n = np.arange(dim)
    logfact = np.array([math.lgamma(k + 1) for k in n])
    if beta == 0:
        psi = np.zeros(dim, dtype=complex)
        psi[0] = 1.0
        return psi
    mod = abs(beta)
    psi = np.exp(-0.5 * mod**2 + n * math.log(mod) - 0.5 * logfact) * np.exp(
        1j * n * np.angle(beta)
    )
    return psi / np.linalg.norm(psi)


def coherent_state(beta, dim: int, tail_bound: float = DEFAULT_TAIL_BOUND) -> FieldState:
    """Coherent state |beta><beta| renormalized over ``dim`` Fock levels.

    Raises :class:`TruncationError` when the discarded Poisson tail exceeds
    ``tail_bound``.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    beta = _as_amplitude(beta)
    tail = poisson_tail(abs(beta) ** 2, dim)
    if tail > tail_bound:
        raise TruncationError(
            f"dim={dim} discards Poisson tail {tail:.2e} > {tail_bound:.0e} "
            f"for |beta|^2={abs(beta) ** 2:.3g}"
        )
    return FieldState.from_ket(coherent_ket(beta, dim))


@lru_cache(maxsize=64)
def _ladder(dim: int):
    a = np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)
    a.setflags(write=False)
    return a


def ladder_operators(dim: int):
    """Return ``(a, a_dag, N)`` on the truncated space."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    a = np.array(_ladder(dim))
    return a, a.conj().T.copy(), number_operator(dim)


def number_operator(dim: int) -> np.ndarray:
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def parity_operator(dim: int) -> np.ndarray:
    return np.diag((-1.0) ** np.arange(dim)).astype(complex)


@lru_cache(maxsize=64)
def _quadrature_eig(dim: int):
    # Eigenbasis of X = i(a^dag - a); D(r) = exp(r(a^dag - a)) = V exp(-i r x) V^dag.
    a = _ladder(dim)
    x_op = 1j * (a.conj().T - a)
    x, v = np.linalg.eigh(x_op)
    x.setflags(write=False)
    v.setflags(write=False)
    return x, v


def displacement_operator(alpha, dim: int) -> np.ndarray:
    """Exact exponential of the truncated generator ``alpha a^dag - alpha* a``.

    The generator is diagonalized once per dimension: with ``alpha = r e^{i t}``
    the rotation ``e^{i t N}`` maps the real-axis generator onto the general
    one, so the result is unitary to machine precision.
    """
    alpha = _as_amplitude(alpha)
    if abs(alpha) ** 2 > dim / 4:
        warnings.warn(
            f"|alpha|^2={abs(alpha) ** 2:.3g} > dim/4={dim / 4:.3g}: truncation will bias D(alpha)",
            stacklevel=2,
        )
    return _displacement_columns(alpha, dim, dim)


def _displacement_columns(alpha: complex, work_dim: int, ncols: int) -> np.ndarray:
    """First ``ncols`` columns of D(alpha) computed in a ``work_dim`` space."""
    x, v = _quadrature_eig(work_dim)
    r, theta = abs(alpha), np.angle(alpha)
    rot = np.exp(1j * theta * np.arange(work_dim))
    # D = R V e^{-i r x} V^dag R^dag, R = diag(rot)
    right = (np.exp(-1j * r * x)[:, None] * v.conj().T[:, :ncols]) * rot[:ncols].conj()[None, :]
    return rot[:, None] * (v @ right)


def padded_dim(dim: int, amplitude: float, margin: float = 6.0) -> int:
    """Working dimension large enough to displace any |n < dim> by ``amplitude``."""
    need = int(math.ceil((math.sqrt(dim) + abs(amplitude) + margin) ** 2))
    return max(dim, need)


def displaced_compression(diag_values, alpha, dim: int, work_dim: int | None = None) -> np.ndarray:
    """Block ``P D(-alpha) F D(alpha) P`` of a diagonal operator ``F``.

    ``diag_values`` is a callable ``n -> F_nn`` evaluated on the working
    space; ``P`` projects on the first ``dim`` levels. With a padded working
    space this is the exact restriction of the infinite-dimensional operator.
    """
    alpha = _as_amplitude(alpha)
    if work_dim is None:
        work_dim = padded_dim(dim, abs(alpha))
    cols = _displacement_columns(alpha, work_dim, dim)
    f = np.asarray(diag_values(np.arange(work_dim)), dtype=float)
    g = cols.conj().T @ (f[:, None] * cols)
    return 0.5 * (g + g.conj().T)


def translate(rho: FieldState, alpha) -> FieldState:
    """Return ``D(alpha) rho D(-alpha)``."""
    alpha = _as_amplitude(alpha)
    if alpha == 0:
        return rho
    d = _displacement_columns(alpha, rho.dim, rho.dim)
    return FieldState(d @ rho.matrix @ d.conj().T)


def mean_amplitude(rho: FieldState) -> complex:
    a = _ladder(rho.dim)
    return rho.expect(a)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    evals, vecs = np.linalg.eigh(m)
    return (vecs * np.sqrt(np.clip(evals, 0.0, None))) @ vecs.conj().T


def fidelity(rho: FieldState, target) -> float:
    """Overlap of ``rho`` with ``target``.

    A ket (1-d array) or rank-one state gives ``<psi|rho|psi>``; a mixed
    target gives the Uhlmann fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2``.
    """
    if isinstance(target, FieldState):
        _check_dims(rho, target)
        evals, vecs = np.linalg.eigh(target.matrix)
        if evals[-1] > 1.0 - 1e-12:
            return _clip01(fidelity(rho, vecs[:, -1]))
        s = _psd_sqrt(rho.matrix)
        inner = s @ target.matrix @ s
        ev = np.clip(np.linalg.eigvalsh(0.5 * (inner + inner.conj().T)), 0.0, None)
        return _clip01(float(np.sum(np.sqrt(ev)) ** 2))
    psi = np.asarray(target, dtype=complex)
    if psi.shape != (rho.dim,):
        raise ValueError(f"dimension mismatch: ket of length {psi.shape} vs dim {rho.dim}")
    psi = psi / np.linalg.norm(psi)
    return _clip01(float(np.real(psi.conj() @ rho.matrix @ psi)))


def _clip01(x: float) -> float:
    return min(1.0, max(0.0, x))


def trace_distance(a: FieldState | np.ndarray, b: FieldState | np.ndarray) -> float:
    """Trace norm ``||a - b||_1`` (no factor 1/2)."""
    ma = a.matrix if isinstance(a, FieldState) else a
    mb = b.matrix if isinstance(b, FieldState) else b
    diff = ma - mb
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))


def hermitian_exp(h: np.ndarray, shift: bool = False) -> np.ndarray:
    """Matrix exponential of a Hermitian matrix via eigendecomposition.

    With ``shift=True`` the largest eigenvalue is subtracted first, so the
    result is ``exp(h - max(eig) I)``.
    """
    h = np.asarray(h, dtype=complex)
    if np.max(np.abs(h - h.conj().T), initial=0.0) > 1e-8:
        raise ValueError("hermitian_exp requires a Hermitian matrix")
    evals, vecs = np.linalg.eigh(0.5 * (h + h.conj().T))
    if shift:
        evals = evals - evals[-1]
    return (vecs * np.exp(evals)) @ vecs.conj().T
