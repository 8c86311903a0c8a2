"""Plain-text file formats.

State file::

    dim <D>
    <n> <m> <re> <im>      # D*D lines, row-major, 17 significant digits

Detection-record file, one record per line::

    <alpha_re> <alpha_im> <phi> <delta_hz> <window_index> <n_e> <n_g>

Sampling-plan file, one setting per line::

    <alpha_re> <alpha_im> <phi> <n_atoms>

Lines starting with ``#`` are ignored by every reader.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np

from .dispersive import DispersiveParams
from .fock import FieldState
from .measurement import DetectionRecord, MeasurementSetting


class FormatError(ValueError):
    pass


def _lines(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def write_state(rho: FieldState, path) -> None:
    m = rho.matrix
    with open(path, "w") as fh:
        fh.write(f"dim {rho.dim}\n")
        for n in range(rho.dim):
            for k in range(rho.dim):
                z = m[n, k]
                fh.write(f"{n} {k} {z.real:.17g} {z.imag:.17g}\n")


def read_state(path) -> FieldState:
    it = _lines(path)
    try:
        _, head = next(it)
    except StopIteration:
        raise FormatError(f"{path}: empty state file") from None
    if len(head) != 2 or head[0] != "dim":
        raise FormatError(f"{path}: first line must be 'dim <D>'")
    dim = int(head[1])
    m = np.zeros((dim, dim), dtype=complex)
    seen = np.zeros((dim, dim), dtype=bool)
    for lineno, tok in it:
        if len(tok) != 4:
            raise FormatError(f"{path}:{lineno}: expected 'n m re im'")
        n, k = int(tok[0]), int(tok[1])
        m[n, k] = complex(float(tok[2]), float(tok[3]))
        seen[n, k] = True
    if not seen.all():
        raise FormatError(f"{path}: missing {int((~seen).sum())} matrix entries")
    return FieldState(m)


def write_records(records, path) -> None:
    with open(path, "w") as fh:
        for r in records:
            s = r.setting
            fh.write(
                f"{s.alpha.real:.17g} {s.alpha.imag:.17g} {s.phi:.17g} {s.dispersive.delta:.17g} "
                f"{s.window_index} {r.n_e} {r.n_g}\n"
            )


def read_records(path, dispersive: DispersiveParams) -> list[DetectionRecord]:
    """Read records; ``dispersive`` supplies omega and t_eff (delta comes from the file)."""
    out = []
    for lineno, tok in _lines(path):
        if len(tok) != 7:
            raise FormatError(f"{path}:{lineno}: expected 7 fields, got {len(tok)}")
        a_re, a_im, phi, delta = (float(x) for x in tok[:4])
        p = dispersive if delta == dispersive.delta else replace(dispersive, delta=delta)
        setting = MeasurementSetting(complex(a_re, a_im), phi, p, int(tok[4]))
        out.append(DetectionRecord(setting, int(tok[5]), int(tok[6])))
    return out


def write_plan(plan, path) -> None:
    """``plan`` is a list of ``(alpha, phi, n_atoms)``."""
    with open(path, "w") as fh:
        for alpha, phi, n in plan:
            fh.write(f"{alpha.real:.17g} {alpha.imag:.17g} {phi:.17g} {int(n)}\n")


def read_plan(path) -> list[tuple[complex, float, int]]:
    out = []
    for lineno, tok in _lines(path):
        if len(tok) != 4:
            raise FormatError(f"{path}:{lineno}: expected 'alpha_re alpha_im phi n_atoms'")
        out.append((complex(float(tok[0]), float(tok[1])), float(tok[2]), int(tok[3])))
    return out


def write_series(path, times_s, values, errors=None) -> None:
    with open(path, "w") as fh:
        fh.write("t_ms,coherence,err\n")
        for i, (t, v) in enumerate(zip(times_s, values)):
            e = "" if errors is None else f"{errors[i]:.17g}"
            fh.write(f"{t * 1e3:.17g},{v:.17g},{e}\n")


def read_series(path):
    """Return ``(times_s, values, errors or None)``."""
    times, vals, errs = [], [], []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["t_ms", "coherence"]:
            raise FormatError(f"{path}: expected header 't_ms,coherence,err'")
        for line in fh:
            if not line.strip():
                continue
            parts = line.strip().split(",")
            times.append(float(parts[0]) * 1e-3)
            vals.append(float(parts[1]))
            errs.append(float(parts[2]) if len(parts) > 2 and parts[2] else None)
    errors = None if any(e is None for e in errs) else np.array(errs)
    return np.array(times), np.array(vals), errors


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
