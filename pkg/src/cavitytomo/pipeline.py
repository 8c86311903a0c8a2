"""Stage runner: prepare -> measure -> reconstruct -> wigner -> evolve -> movie -> fit."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import platform
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, io
from .config import RunConfig, plan_from_config, settings_from_plan
from .dynamics import (
    CoherenceSeries,
    coherence_metric,
    decoherence_movie,
    fit_exponential_offset,
    lindblad_evolve,
    rescale_translation,
    translated_matrix,
    damping_step,
)
from .fock import FieldState, coherent_state, embed, fidelity, poisson_tail
from .maxent import bootstrap_errorbars, constraints_from_records, reconstruct
from .measurement import sample_detections
from .prepare import CatSpec, fock_plan, prepare_cat, prepare_fock
from . import wigner

logger = logging.getLogger(__name__)

STAGES = ("prepare", "measure", "reconstruct", "wigner", "evolve", "movie", "fit")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def sub_seed(master: int, stage: str, *index: int) -> np.random.SeedSequence:
    """Seed derived from the master seed, a stage name and integer indices."""
    return np.random.SeedSequence(master, spawn_key=(zlib.crc32(stage.encode()),) + tuple(int(i) for i in index))


def simulation_dim(cfg: RunConfig, tail: float = 1e-6) -> int:
    if cfg.sim_dim:
        return max(cfg.sim_dim, cfg.dim)
    if cfg.kind == "fock" and cfg.fock_method == "ideal":
        return max(cfg.dim, cfg.n0 + 1)
    d = cfg.dim
    while poisson_tail(cfg.mean_photons, d) > tail:
        d += 1
    return d


def cat_spec(cfg: RunConfig) -> CatSpec:
    label = "mixture" if cfg.kind == "cat-mixture" else cfg.parity
    return CatSpec(math.sqrt(cfg.mean_photons), cfg.chi, label, cfg.exact_nonlinear)


def prepare_state(cfg: RunConfig, dim: int | None = None) -> FieldState:
    """The state the configuration asks for, in ``dim`` (default: simulation) levels."""
    dim = dim or simulation_dim(cfg)
    p = cfg.dispersive()
    if cfg.kind == "coherent":
        return coherent_state(math.sqrt(cfg.mean_photons), dim)
    if cfg.kind == "fock":
        if cfg.fock_method == "ideal":
            return FieldState.fock(cfg.n0, dim)
        initial = coherent_state(math.sqrt(cfg.mean_photons), dim)
        damping = damping_step(cfg.cavity()) if cfg.prep_damping else None
        state, _ = prepare_fock(cfg.n0, initial, fock_plan(p, cfg.n0), sub_seed(cfg.seed, "prepare"), damping=damping)
        return state
    return prepare_cat(cat_spec(cfg), p, dim)


def simulate_records(truth: FieldState, plan, p, imp, seed: int, threads: int = 1, window_index: int = 0):
    settings = settings_from_plan(plan, p, window_index)

    def one(i):
        s = settings[i]
        return sample_detections(truth, s, plan[i][2], imp, sub_seed(seed, "measure", i))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(one, range(len(settings))))
    return [one(i) for i in range(len(settings))]


def reconstruct_records(records, cfg: RunConfig):
    times = None
    if cfg.window_times_ms or any(r.setting.window_index for r in records):
        n = 1 + max(r.setting.window_index for r in records)
        times = cfg.window_times(n)
    alpha_map = None
    if times is not None:
        cav = cfg.cavity()
        alpha_map = lambda s: rescale_translation(s.alpha, times[s.window_index], cav)  # noqa: E731
    cs = constraints_from_records(records, cfg.dim, cfg.imperfection(), alpha_map=alpha_map)
    return reconstruct(cs, tol=cfg.tol, max_iter=cfg.max_iter, noise_relaxation=cfg.mode == "relaxed")


def _overlap(recon: FieldState, truth: FieldState) -> float:
    d = max(recon.dim, truth.dim)
    return fidelity(embed(recon, d), embed(truth, d))


def format_report(res, truth: FieldState | None = None) -> str:
    lines = [
        f"converged {res.converged}",
        f"message {res.message}",
        f"iterations {res.iterations}",
        f"entropy {res.entropy:.17g}",
        f"max_residual {float(res.residuals.max(initial=0.0)):.17g}",
    ]
    if truth is not None:
        lines.append(f"fidelity {_overlap(res.rho, truth):.17g}")
    edges = [0, 1e-4, 1e-3, 1e-2, 3e-2, 1e-1, np.inf]
    counts, _ = np.histogram(res.residuals, bins=edges)
    lines.append("residual_histogram")
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        lines.append(f"  [{lo:g}, {hi:g}) {c}")
    return "\n".join(lines) + "\n"


@dataclass
class Context:
    cfg: RunConfig
    out: Path
    threads: int = 1
    truth: FieldState | None = None
    plan: list | None = None
    records: list | None = None
    recon: FieldState | None = None
    report: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    series: CoherenceSeries | None = None


def _stage_prepare(ctx: Context):
    ctx.truth = prepare_state(ctx.cfg)
    io.write_state(ctx.truth, ctx.out / "state.txt")


def _stage_measure(ctx: Context):
    cfg = ctx.cfg
    if ctx.truth is None:
        raise RuntimeError("no state to measure (run 'prepare' or pass a state file)")
    p = cfg.dispersive()
    if ctx.plan is None:
        ctx.plan = plan_from_config(cfg, p)
    io.write_plan(ctx.plan, ctx.out / "plan.txt")
    ctx.meta["sampling_plan"] = {
        "geometry": "square lattice clipped to a disc, nearest points kept",
        "settings": len(ctx.plan),
        "points": len({a for a, _, _ in ctx.plan}),
        "radius": max(abs(a) for a, _, _ in ctx.plan),
        "phases": sorted({phi for _, phi, _ in ctx.plan}),
        "atoms_per_setting": sorted({n for _, _, n in ctx.plan}),
    }
    ctx.records = simulate_records(ctx.truth, ctx.plan, p, cfg.imperfection(), cfg.seed, ctx.threads)
    io.write_records(ctx.records, ctx.out / "records.txt")


def _stage_reconstruct(ctx: Context):
    if not ctx.records:
        raise RuntimeError("no detection records")
    res = reconstruct_records(ctx.records, ctx.cfg)
    ctx.recon = res.rho
    io.write_state(res.rho, ctx.out / "reconstructed.txt")
    text = format_report(res, ctx.truth)
    (ctx.out / "report.txt").write_text(text)
    ctx.report["converged"] = res.converged
    if ctx.truth is not None:
        ctx.report["fidelity"] = _overlap(res.rho, ctx.truth)


def _grid(ctx: Context, rho: FieldState, stem: str):
    e = ctx.cfg.grid_extent
    n = ctx.cfg.grid_resolution
    g = wigner.wigner_grid(rho, (-e, e, -e, e), (n, n))
    wigner.write_csv(g, ctx.out / f"{stem}.csv")
    wigner.write_ppm(g, ctx.out / f"{stem}.ppm")
    return g


def _stage_wigner(ctx: Context):
    rho = ctx.recon or ctx.truth
    if rho is None:
        raise RuntimeError("no state for the Wigner function")
    _grid(ctx, rho, "wigner")


def _stage_evolve(ctx: Context):
    rho = ctx.recon or ctx.truth
    if rho is None:
        raise RuntimeError("no state to evolve")
    evolved = lindblad_evolve(rho, ctx.cfg.evolve_ms * 1e-3, ctx.cfg.cavity())
    io.write_state(evolved, ctx.out / "evolved.txt")
    ctx.truth = evolved


def _stage_movie(ctx: Context):
    cfg = ctx.cfg
    spec = cat_spec(cfg)
    rho0 = prepare_state(cfg, cfg.movie_dim) if ctx.truth is None or ctx.truth.dim != cfg.movie_dim else ctx.truth
    p = cfg.dispersive()
    plan = ctx.plan or plan_from_config(cfg, p)
    settings = settings_from_plan(plan, p)
    times = cfg.movie_times()
    frames = decoherence_movie(
        rho0,
        times,
        cfg.cavity(),
        cfg.movie_pipeline,
        settings=settings,
        n_atoms=plan[0][2],
        imp=cfg.imperfection(),
        recon_dim=cfg.movie_recon_dim,
        seed=int(sub_seed(cfg.seed, "movie").generate_state(1)[0]),
        tol=cfg.tol,
        max_iter=cfg.max_iter,
        noise_relaxation=cfg.mode == "relaxed",
    )
    movie_dir = io.ensure_dir(ctx.out / "movie")
    ts, vals, errs, failed = [], [], [], 0
    for k, fr in enumerate(frames):
        if fr.state is None or not fr.ok:
            failed += 1
            logger.warning("movie frame %d (t=%.4g s) failed: %s", k, fr.t, fr.message)
            if fr.state is None:
                continue
        io.write_state(fr.state, movie_dir / f"frame_{k:03d}_state.txt")
        _grid(ctx, fr.state, f"movie/frame_{k:03d}_wigner")
        metric = lambda r: coherence_metric(translated_matrix(r, spec, max(cfg.movie_dim, r.dim)))  # noqa: E731
        ts.append(fr.t)
        vals.append(metric(fr.state))
        err = 0.0
        if cfg.n_resamples > 1 and fr.records:
            cav = cfg.cavity()
            _, err, _ = bootstrap_errorbars(
                fr.records,
                metric,
                cfg.n_resamples,
                sub_seed(cfg.seed, "bootstrap", k),
                dim=cfg.movie_recon_dim,
                imp=cfg.imperfection(),
                tol=cfg.tol,
                alpha_map=lambda s, t=fr.t: rescale_translation(s.alpha, t, cav),
            )
        errs.append(err)
    errs = errs if cfg.n_resamples > 1 else None
    io.write_series(ctx.out / "series.csv", ts, vals, errs)
    ctx.series = CoherenceSeries(ts, vals, errs)
    ctx.report["movie_failed_frames"] = failed


def _stage_fit(ctx: Context):
    if ctx.series is None:
        path = ctx.out / "series.csv"
        t, v, e = io.read_series(path)
        ctx.series = CoherenceSeries(t, v, e)
    fit = fit_exponential_offset(ctx.series)
    (ctx.out / "td.txt").write_text(
        f"T_d_ms {fit.t_d * 1e3:.6g}\nT_d_std_ms {fit.t_d_std * 1e3:.6g}\namplitude {fit.amplitude:.6g}\noffset {fit.offset:.6g}\n"
    )
    ctx.report["t_d"] = fit.t_d


_RUNNERS = {
    "prepare": _stage_prepare,
    "measure": _stage_measure,
    "reconstruct": _stage_reconstruct,
    "wigner": _stage_wigner,
    "evolve": _stage_evolve,
    "movie": _stage_movie,
    "fit": _stage_fit,
}


def _output_hashes(out: Path, since_ns: int) -> dict:
    """SHA-256 of every file under ``out`` written during this run."""
    hashes = {}
    for path in sorted(out.rglob("*")):
        if path.is_file() and path.name != "manifest.json" and path.stat().st_mtime_ns >= since_ns:
            hashes[path.relative_to(out).as_posix()] = hashlib.sha256(path.read_bytes()).hexdigest()
    return hashes


def run_pipeline(cfg: RunConfig, stages, out_dir, threads: int = 1, truth: FieldState | None = None, records=None, plan=None) -> Context:
    """Run ``stages`` in order, writing artifacts and ``manifest.json`` to ``out_dir``.

    Raises :class:`PipelineError` naming the failing stage; the manifest is
    written either way.
    """
    out = io.ensure_dir(out_dir)
    started = time.time_ns()
    ctx = Context(cfg, out, threads, truth=truth, records=records, plan=plan)
    manifest = {
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "versions": {
            "cavitytomo": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "stages": [],
    }
    (out / "config.txt").write_text(cfg.canonical_text())
    try:
        for name in stages:
            if name not in _RUNNERS:
                raise PipelineError(name, ValueError(f"unknown stage (choose from {', '.join(STAGES)})"))
            start = time.perf_counter()
            try:
                _RUNNERS[name](ctx)
            except PipelineError:
                raise
            except Exception as exc:
                manifest["stages"].append({"name": name, "status": "failed", "seconds": time.perf_counter() - start})
                raise PipelineError(name, exc) from exc
            manifest["stages"].append({"name": name, "status": "ok", "seconds": time.perf_counter() - start})
    finally:
        manifest["report"] = ctx.report
        manifest.update(ctx.meta)
        manifest["outputs"] = _output_hashes(out, started)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return ctx
