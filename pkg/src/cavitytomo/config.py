"""Run configuration and default probe plans.

The config file is flat ``key = value`` text with ``#`` comments. Every key is
also a command-line flag (``t_c_s`` -> ``--t-c-s``); flags win.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .dispersive import DispersiveParams, RABI_HZ, cat_setup, coherent_setup, fock_setup
from .dynamics import CavityParams, MOVIE_TIMES_S
from .measurement import ImperfectionModel, MeasurementSetting

KINDS = ("coherent", "fock", "cat", "cat-mixture")

# (points, phase offsets in units of pi relative to -Phi(0), atoms per setting)
PLAN_DEFAULTS = {
    "coherent": (161, (1.0,), 7000),
    "fock": (400, (1.0, 0.5), 2500),
    "cat": (500, (1.0,), 2000),
}


@dataclass
class RunConfig:
    kind: str = "coherent"
    dim: int = 11
    sim_dim: int = 0  # 0: chosen from the prepared state
    seed: int = 0
    # cavity
    t_c_s: float = 0.13
    n_b: float = 0.05
    # dispersive probe; unset delta/t_eff fall back to the per-kind setup
    omega_hz: float = RABI_HZ
    delta_hz: float | None = None
    t_eff_s: float | None = None
    # interferometer
    contrast: float = 0.8
    offset: float = 0.0
    # state
    nm: float | None = None
    n0: int = 1
    chi: float = 0.37 * math.pi
    parity: str = "even"
    exact_nonlinear: bool = False
    fock_method: str = "qnd"  # qnd | ideal
    prep_damping: bool = False
    # sampling plan
    plan_points: int | None = None
    plan_radius: float | None = None
    plan_phases: str | None = None  # comma list, units of pi, relative to -Phi(0)
    atoms: int | None = None
    # reconstruction
    mode: str = "relaxed"
    tol: float = 1e-4
    max_iter: int = 2000
    # time windows
    window_ms: float = 4.0
    window_times_ms: str | None = None
    evolve_ms: float = 0.0
    movie_times_ms: str = ",".join(f"{t * 1e3:g}" for t in MOVIE_TIMES_S)
    movie_dim: int = 30
    movie_recon_dim: int = 30
    movie_pipeline: str = "via_measurement"
    n_resamples: int = 0
    # wigner grid
    grid_extent: float = 3.5
    grid_resolution: int = 101

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.mode not in ("exact", "relaxed"):
            raise ValueError("mode must be 'exact' or 'relaxed'")
        if self.fock_method not in ("qnd", "ideal"):
            raise ValueError("fock_method must be 'qnd' or 'ideal'")

    # -- derived parameters ---------------------------------------------

    @property
    def plan_kind(self) -> str:
        return "cat" if self.kind.startswith("cat") else self.kind

    @property
    def mean_photons(self) -> float:
        if self.nm is not None:
            return float(self.nm)
        if self.kind == "fock":
            return 5.5 if self.n0 >= 4 else 1.5
        return 2.5 if self.kind == "coherent" else 3.5

    def cavity(self) -> CavityParams:
        return CavityParams(self.t_c_s, self.n_b)

    def imperfection(self) -> ImperfectionModel:
        return ImperfectionModel(self.contrast, self.offset)

    def dispersive(self) -> DispersiveParams:
        if self.plan_kind == "fock":
            base = fock_setup()
        elif self.plan_kind == "cat":
            base = cat_setup(self.mean_photons, self.chi)
        else:
            base = coherent_setup()
        base = replace(base, omega=self.omega_hz)
        if self.delta_hz is not None:
            base = replace(base, delta=self.delta_hz)
        if self.t_eff_s is not None:
            base = replace(base, t_eff=self.t_eff_s)
        return base

    def phases(self, p: DispersiveParams) -> list[float]:
        offs = _floats(self.plan_phases) if self.plan_phases else PLAN_DEFAULTS[self.plan_kind][1]
        return [-p.phi0 + o * math.pi for o in offs]

    def atoms_per_setting(self) -> int:
        return int(self.atoms) if self.atoms else PLAN_DEFAULTS[self.plan_kind][2]

    def window_times(self, count: int | None = None) -> list[float]:
        if self.window_times_ms:
            return [t * 1e-3 for t in _floats(self.window_times_ms)]
        count = 1 if count is None else count
        return [(k + 0.5) * self.window_ms * 1e-3 for k in range(count)]

    def movie_times(self) -> list[float]:
        return [t * 1e-3 for t in _floats(self.movie_times_ms)]

    def canonical_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in asdict(self).items())

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()


def _floats(text: str) -> list[float]:
    return [float(x) for x in str(text).replace(";", ",").split(",") if x.strip()]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _coerce(name: str, raw):
    ftype = {f.name: f.type for f in fields(RunConfig)}[name]
    if raw is None or (isinstance(raw, str) and raw.strip() == "" and "None" in ftype):
        return None
    if isinstance(raw, str):
        raw = raw.strip()
    if ftype.startswith("bool"):
        if isinstance(raw, bool):
            return raw
        return str(raw).lower() in ("1", "true", "yes", "on")
    if ftype.startswith("int"):
        return int(raw)
    if ftype.startswith("float"):
        return float(raw)
    return str(raw)


def parse_config_text(text: str) -> dict:
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, val)
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if path:
        with open(path) as fh:
            values.update(parse_config_text(fh.read()))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = _coerce(k, v)
    return RunConfig(**values)


def config_fields():
    return fields(RunConfig)


# -- sampling plans --------------------------------------------------------


def disc_lattice(count: int, radius: float) -> list[complex]:
    """``count`` points of a square lattice inside a disc.

    The lattice spacing is shrunk until the disc holds at least ``count``
    points; the ``count`` points nearest the centre are kept (ties broken by
    angle).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if count == 1:
        return [0j]
    h = radius
    while True:
        k = int(math.floor(radius / h))
        coords = np.arange(-k, k + 1) * h
        pts = (coords[:, None] + 1j * coords[None, :]).ravel()
        pts = pts[np.abs(pts) <= radius * (1 + 1e-12)]
        if len(pts) >= count:
            break
        h *= 0.98
    order = np.lexsort((np.round(np.angle(pts), 12), np.round(np.abs(pts), 12)))
    return [complex(z) for z in pts[order][:count]]


def sampling_plan_default(kind: str, dim: int, amplitude: float | None = None, dispersive: DispersiveParams | None = None, atoms: int | None = None, points: int | None = None, phase_offsets=None, radius: float | None = None):
    """Default probe plan as a list of ``(alpha, phi, n_atoms)``.

    Translations cover a disc of radius ``1.6 * amplitude + 1``; phases are
    ``-Phi(0) + offset * pi``.
    """
    kind = "cat" if kind.startswith("cat") else kind
    if kind not in PLAN_DEFAULTS:
        raise ValueError(f"unknown plan kind {kind!r}")
    n_pts, offs, n_atoms = PLAN_DEFAULTS[kind]
    n_pts = points or n_pts
    offs = phase_offsets or offs
    n_atoms = atoms or n_atoms
    if amplitude is None:
        amplitude = {"coherent": math.sqrt(2.5), "fock": math.sqrt(1.5), "cat": math.sqrt(3.5)}[kind]
    if dispersive is None:
        dispersive = {"coherent": coherent_setup, "fock": fock_setup, "cat": cat_setup}[kind]()
    r = radius if radius is not None else 1.6 * amplitude + 1.0
    phis = [-dispersive.phi0 + o * math.pi for o in offs]
    return [(a, phi, n_atoms) for a in disc_lattice(n_pts, r) for phi in phis]


def plan_from_config(cfg: RunConfig, p: DispersiveParams):
    offs = _floats(cfg.plan_phases) if cfg.plan_phases else None
    return sampling_plan_default(
        cfg.plan_kind,
        cfg.dim,
        amplitude=math.sqrt(cfg.mean_photons),
        dispersive=p,
        atoms=cfg.atoms_per_setting(),
        points=cfg.plan_points,
        phase_offsets=offs,
        radius=cfg.plan_radius,
    )


def settings_from_plan(plan, p: DispersiveParams, window_index: int = 0) -> list[MeasurementSetting]:
    return [MeasurementSetting(a, phi, p, window_index) for a, phi, _ in plan]
