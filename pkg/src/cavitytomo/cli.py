"""Command-line front end.

Every subcommand accepts ``--config FILE``, ``--seed``, ``--out DIR`` and
``--threads`` plus one flag per config key; flags override the file.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys

import numpy as np

from . import io
from .config import config_fields, load_config
from .dynamics import CoherenceSeries, FitError, fit_exponential_offset
from .pipeline import STAGES, PipelineError, run_pipeline

log = logging.getLogger("cavitytomo")

_BOOL_KEYS = {"exact_nonlinear", "prep_damping"}


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    g = common.add_argument_group("global")
    g.add_argument("--config", help="flat key = value config file")
    g.add_argument("--out", default="out", help="output directory (default: out)")
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("-v", "--verbose", action="store_true")
    keys = common.add_argument_group("config keys")
    for f in config_fields():
        flag = "--" + f.name.replace("_", "-")
        if f.name in _BOOL_KEYS:
            keys.add_argument(flag, dest=f.name, action="store_const", const="true", default=None)
        else:
            keys.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper())
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="cavitytomo", description=__doc__.splitlines()[0], allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("prepare", parents=[common], help="prepare a field state and write state.txt")

    p = sub.add_parser("simulate-measure", parents=[common], help="simulate atom detections on a state")
    p.add_argument("--state", required=True)
    p.add_argument("--plan", help="plan file (alpha_re alpha_im phi n_atoms); default plan otherwise")

    p = sub.add_parser("reconstruct", parents=[common], help="maximum-entropy reconstruction from records")
    p.add_argument("--records", required=True)
    p.add_argument("--truth", help="state file used to report the fidelity")

    p = sub.add_parser("wigner", parents=[common], help="Wigner grid (CSV + PPM) of a state")
    p.add_argument("--state", required=True)

    p = sub.add_parser("evolve", parents=[common], help="damp a state for a time")
    p.add_argument("--state", required=True)
    p.add_argument("--t", dest="t_ms", type=float, required=True, help="time in ms")

    p = sub.add_parser("movie", parents=[common], help="decoherence movie frames and coherence series")
    p.add_argument("--spec", help="config file for the movie (same format as --config)")
    p.add_argument("--out-dir", help="alias of --out")

    p = sub.add_parser("fit-td", parents=[common], help="fit A exp(-t/T_d) + C to a series.csv")
    p.add_argument("--series", required=True)

    sub.add_parser("selftest", parents=[common], help="run quick built-in checks")

    p = sub.add_parser("run", parents=[common], help="run several stages in one go")
    p.add_argument("--stages", default="prepare,measure,reconstruct,wigner", help=f"comma list from {','.join(STAGES)}")
    return parser


def _config(args):
    overrides = {f.name: getattr(args, f.name, None) for f in config_fields()}
    path = getattr(args, "spec", None) or args.config
    return load_config(path, overrides)


def _run(args, stages, **inputs) -> int:
    cfg = _config(args)
    try:
        ctx = run_pipeline(cfg, stages, args.out, args.threads, **inputs)
    except PipelineError as exc:
        log.error("%s", exc)
        return 2
    for key, val in ctx.report.items():
        print(f"{key} {val}")
    return 0


def cmd_selftest(args) -> int:
    from .dynamics import CavityParams, predicted_td, translation_identity_gap
    from .fock import coherent_state, displacement_operator, fidelity
    from .maxent import ConstraintSet, reconstruct
    from .measurement import MeasurementSetting, g_operator
    from .dispersive import coherent_setup
    from .config import disc_lattice

    checks = []
    cav0, cav = CavityParams(0.13, 0.0), CavityParams(0.13, 0.05)
    checks.append(("T_d at 0 K", abs(predicted_td(11.8, cav0) * 1e3 - 22.03) < 0.01))
    checks.append(("T_d for d2 = 8", abs(predicted_td(8.0, cav) * 1e3 - 28.89) < 0.01))
    d = displacement_operator(0.7 + 0.3j, 15)
    checks.append(("displacement unitary", np.max(np.abs(d @ d.conj().T - np.eye(15))) < 1e-10))
    rho = coherent_state(0.6, 12)
    checks.append(("rescaled translation", translation_identity_gap(rho, 0.5, 0.01, cav) < 1e-5))
    p = coherent_setup()
    truth = coherent_state(math.sqrt(2.5), 11)
    ops = np.array([g_operator(MeasurementSetting(a, -p.phi0 + math.pi, p), 11) for a in disc_lattice(161, 1.6 * math.sqrt(2.5) + 1)])
    vals = np.einsum("kij,ji->k", ops, truth.matrix).real
    res = reconstruct(ConstraintSet(ops, vals, None), noise_relaxation=False)
    checks.append(("ideal coherent reconstruction", fidelity(res.rho, truth) >= 0.999))
    ok = True
    for name, passed in checks:
        print(f"{'PASS' if passed else 'FAIL'} {name}")
        ok &= bool(passed)
    return 0 if ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    cmd = args.command
    try:
        if cmd == "prepare":
            return _run(args, ["prepare"])
        if cmd == "simulate-measure":
            plan = io.read_plan(args.plan) if args.plan else None
            return _run(args, ["measure"], truth=io.read_state(args.state), plan=plan)
        if cmd == "reconstruct":
            cfg = _config(args)
            records = io.read_records(args.records, cfg.dispersive())
            truth = io.read_state(args.truth) if args.truth else None
            return _run(args, ["reconstruct"], truth=truth, records=records)
        if cmd == "wigner":
            return _run(args, ["wigner"], truth=io.read_state(args.state))
        if cmd == "evolve":
            args.evolve_ms = str(args.t_ms)
            return _run(args, ["evolve"], truth=io.read_state(args.state))
        if cmd == "movie":
            if args.out_dir:
                args.out = args.out_dir
            return _run(args, ["movie"])
        if cmd == "fit-td":
            t, v, e = io.read_series(args.series)
            try:
                fit = fit_exponential_offset(CoherenceSeries(t, v, e))
            except FitError as exc:
                log.error("fit failed: %s", exc)
                return 2
            print(f"T_d = {fit.t_d * 1e3:.3f} +/- {fit.t_d_std * 1e3:.3f} ms (A = {fit.amplitude:.4g}, C = {fit.offset:.4g})")
            return 0
        if cmd == "selftest":
            return cmd_selftest(args)
        if cmd == "run":
            stages = [s.strip() for s in args.stages.split(",") if s.strip()]
            return _run(args, stages)
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
