"""Run artifacts: equilibrium tables, path traces, manifests, checkpoints.

Every float is rendered with 17 significant digits, row order is fixed by
sorting on content, and the line terminator is pinned, so a rerun with the
same config and seed reproduces each CSV body byte for byte. Anything that
may legitimately differ between reruns (wall time, host) belongs in the
manifest JSON, never in a CSV body.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import time

import numpy as np

from . import __version__
from .errors import ConfigError

_STATUS_ORDER = {"proper": 0, "improper": 1, "complex": 2,
                 "singular-endpoint": 3, "divergent": 4}


def _fmt(v) -> str:
    return "%.17g" % float(v)


def _open_csv(path):
    return open(path, "w", newline="")


def _sort_key(eq):
    x = np.atleast_1d(np.real(np.asarray(eq.x)))
    return (_STATUS_ORDER.get(eq.status, 9), tuple(np.round(x, 12)))


def write_equilibria(path: str, J: int, equilibria) -> None:
    """Equilibrium table: eq_id, status, residual, then x, q, psi blocks."""
    cols = (["eq_id", "status", "residual"]
            + ["x_%d" % (j + 1) for j in range(J)]
            + ["q_%d" % (j + 1) for j in range(J)]
            + ["psi_%d" % (j + 1) for j in range(J)])
    rows = sorted(equilibria, key=_sort_key)
    with _open_csv(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for k, eq in enumerate(rows):
            vec = []
            for block in (eq.x, eq.qprice, eq.psi):
                block = np.atleast_1d(np.real(np.asarray(block)))
                vec.extend(_fmt(v) for v in block)
            w.writerow([str(k), eq.status, _fmt(eq.residual)] + vec)


def write_trace(path: str, results) -> None:
    """Per-step tracker trace; one row per accepted step of each path."""
    dim = 0
    for pr in results:
        if pr.trace:
            dim = len(pr.trace[0][2])
            break
    cols = (["path_id", "t", "step"]
            + ["re_%d" % (j + 1) for j in range(dim)]
            + ["im_%d" % (j + 1) for j in range(dim)]
            + ["min_sv"])
    with _open_csv(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for pid, pr in enumerate(results):
            for (t, step, z, smin) in (pr.trace or []):
                z = np.asarray(z, dtype=complex)
                w.writerow([str(pid), _fmt(t), _fmt(step)]
                           + [_fmt(v) for v in z.real]
                           + [_fmt(v) for v in z.imag] + [_fmt(smin)])


def write_states(path: str, rows) -> None:
    """Elasticity path: one row per accepted zeta with psi and q blocks."""
    if not rows:
        raise ConfigError("no states to write")
    J = len(np.atleast_1d(rows[0][1]))
    cols = (["zeta"] + ["psi_%d" % (j + 1) for j in range(J)]
            + ["q_%d" % (j + 1) for j in range(J)])
    with _open_csv(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for (zeta, psi, q) in rows:
            w.writerow([_fmt(zeta)] + [_fmt(v) for v in np.atleast_1d(psi)]
                       + [_fmt(v) for v in np.atleast_1d(q)])


def write_menus(path: str, menus) -> None:
    """Community menus in long form: one row per (entry, neighborhood)."""
    cols = ["community", "entry", "welfare", "residual",
            "member", "x", "psi"]
    with _open_csv(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for menu in menus:
            for e_id, entry in enumerate(menu.entries):
                for k in range(len(entry.x)):
                    w.writerow([str(menu.community), str(e_id),
                                _fmt(entry.welfare), _fmt(entry.residual),
                                str(k), _fmt(entry.x[k]), _fmt(entry.psi[k])])


def write_regions(path: str, equilibria) -> None:
    """Region-level equilibria in long form, one row per community."""
    cols = ["region", "eq", "status", "residual", "community", "x", "L_w",
            "psi"]
    with _open_csv(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        counter: dict[int, int] = {}
        for rq in equilibria:
            e_id = counter.get(rq.region, 0)
            counter[rq.region] = e_id + 1
            for k in range(len(rq.x)):
                w.writerow([str(rq.region), str(e_id), rq.status,
                            _fmt(rq.residual), str(k), _fmt(rq.x[k]),
                            _fmt(rq.L_w[k]), _fmt(rq.psi[k])])


def write_citywide_path(path: str, states) -> None:
    """Citywide supply path: per zeta, neighborhood prices and both fields."""
    if not states:
        raise ConfigError("no states to write")
    J_n = states[0].q_n.size
    J_c = states[0].U_w.size
    cols = ["zeta"]
    cols += ["q_%d" % (j + 1) for j in range(J_n)]
    cols += ["psi_w_%d" % (j + 1) for j in range(J_n)]
    cols += ["psi_b_%d" % (j + 1) for j in range(J_n)]
    cols += ["L_w_%d" % (i + 1) for i in range(J_c)]
    cols += ["L_b_%d" % (i + 1) for i in range(J_c)]
    with _open_csv(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for s in states:
            row = [_fmt(s.zeta)]
            for block in (s.q_n, s.psi_n[0], s.psi_n[1], s.L_w, s.L_b):
                row.extend(_fmt(v) for v in block)
            w.writerow(row)


def write_table(path: str, fieldnames, rows) -> None:
    """Generic table with formatted floats; rows are dicts."""
    with _open_csv(path) as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (_fmt(v) if isinstance(v, float) else str(v))
                        for k, v in row.items()})


def config_hash(cfg: dict) -> str:
    """Hash of the canonical key=value rendering, whitespace-insensitive."""
    canon = "\n".join("%s=%s" % (k, cfg[k]) for k in sorted(cfg))
    return hashlib.sha256(canon.encode()).hexdigest()


def write_manifest(out_dir: str, cfg: dict, seed: int,
                   gamma_phase: float | None = None, **extra) -> str:
    """Manifest JSON tying outputs to config hash, seed, and tool version."""
    doc = {"config_hash": config_hash(cfg), "seed": int(seed),
           "gamma_phase": gamma_phase, "version": __version__,
           "written_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())}
    doc.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def checkpoint_read(path: str) -> set[str]:
    """Completed sweep cell ids, empty when the file does not exist."""
    if not os.path.exists(path):
        return set()
    with open(path) as fh:
        return {line.strip() for line in fh if line.strip()}


def checkpoint_add(path: str, cell_id: str) -> None:
    with open(path, "a") as fh:
        fh.write(cell_id + "\n")
