"""Config-driven command line front end.

One flat key=value config file selects the mode and describes the city; the
flags only override execution details (seed, threads, budget, output dir).
Exit codes: 0 success, 2 path budget exceeded, 3 config error, 4 numerical
failure, 5 output I/O failure. All diagnostics go to standard error; CSV and
JSON artifacts land in the output directory.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import zlib
from dataclasses import replace

import numpy as np

from . import output
from .errors import (ApproximationInfeasible, BadStart, ConfigError,
                     DomainError, HierarchyError, NoConvergence,
                     PathBudgetExceeded, SchemaError, SingularWeights,
                     StepFailure, UrbaneqError)
from .homotopies import (solve_amenity_homotopy, solve_elasticity_homotopy,
                         solve_maclaurin, solve_total_degree)
from .model import City, line_dist
from .nested import (combination_count, community_menus, ingest_neighborhoods,
                     synthetic_nested_city)
from .oracle import GridSpec, brute_force_equilibria
from .polysys import DEFAULT_MAX_DEN, rational_approx
from .tracker import TrackerConfig

MODES = ("enumerate", "elasticity", "maclaurin", "nested", "sweep",
         "bifurcate", "oracle")

_CONFIG_ERRORS = (ConfigError, SchemaError, HierarchyError, DomainError,
                  ApproximationInfeasible, KeyError, ValueError)
_NUMERICAL_ERRORS = (NoConvergence, BadStart, StepFailure, SingularWeights)


def read_config(path: str) -> dict[str, str]:
    """Flat key = value lines; '#' starts a comment; later keys win."""
    cfg: dict[str, str] = {}
    try:
        with open(path) as fh:
            for ln, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{ln}: expected key = value")
                key, val = line.split("=", 1)
                cfg[key.strip()] = val.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if "mode" not in cfg:
        raise ConfigError("config needs a mode key")
    if cfg["mode"] not in MODES:
        raise ConfigError(f"unknown mode {cfg['mode']!r}")
    return cfg


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def _get(cfg, key, default=None, cast=float):
    if key not in cfg:
        if default is None:
            raise ConfigError(f"config needs {key}")
        return default
    if cast is float and cfg[key] == "inf":
        return math.inf
    return cast(cfg[key])


def _vector(cfg, key, J, default):
    if key not in cfg:
        return np.full(J, default, dtype=float)
    vals = _floats(cfg[key])
    if len(vals) == 1:
        return np.full(J, vals[0])
    if len(vals) != J:
        raise ConfigError(f"{key} needs 1 or J={J} values")
    return np.array(vals)


def city_from_config(cfg: dict, seed: int) -> City:
    J = _get(cfg, "J", cast=int)
    A = _vector(cfg, "A", J, 1.0)
    if "sigma_A" in cfg:
        sig = float(cfg["sigma_A"])
        if sig > 0:
            A = A * np.exp(np.random.default_rng(seed).normal(0.0, sig, J))
    dist_key = cfg.get("dist", "line")
    if dist_key == "line":
        dist = line_dist(J) * _get(cfg, "dist_step", 1.0)
    else:
        rows = [_floats(r) for r in dist_key.split(";")]
        dist = np.array(rows, dtype=float)
    return City(J=J, L1=_get(cfg, "L1", 1.0), L2=_get(cfg, "L2", 0.0),
                A=A, dist=dist, xi=_get(cfg, "xi", 1.0),
                c=_vector(cfg, "c", J, 1.0), mc=_vector(cfg, "mc", J, 1.0),
                eta=_get(cfg, "eta", math.inf),
                gamma1=_get(cfg, "gamma1"), gamma2=_get(cfg, "gamma2", 0.0),
                alpha=_get(cfg, "alpha", 0.3))


def tracker_from_config(cfg: dict) -> TrackerConfig:
    tc = TrackerConfig()
    overrides = {}
    for field in ("newton_tol", "step_init", "step_max", "step_min",
                  "singular_eig_tol", "endgame_radius"):
        key = "tracker_" + field
        if key in cfg:
            overrides[field] = float(cfg[key])
    if "tracker_newton_max_iters" in cfg:
        overrides["newton_max_iters"] = int(cfg["tracker_newton_max_iters"])
    if not overrides:
        return tc
    return replace(tc, **overrides)


def _solve_inelastic(city, cfg, args, tc, stats):
    solver = args.solver or cfg.get("solver", "total-degree")
    rat = rational_approx(city.gamma1, float(cfg.get("rational_eps", 1e-8)),
                          int(cfg.get("max_den", DEFAULT_MAX_DEN)))
    if solver == "total-degree":
        eqs = solve_total_degree(city, rat, tc, seed=args.seed,
                                 budget=args.budget, trace=args.trace,
                                 threads=args.threads, stats_out=stats)
    elif solver == "amenity-homotopy":
        eqs = solve_amenity_homotopy(city, rat, tc, seed=args.seed,
                                     trace=args.trace, threads=args.threads,
                                     stats_out=stats)
    else:
        raise ConfigError(f"unknown solver {solver!r}")
    stats["rational"] = "%d/%d" % (rat.p, rat.q)
    return eqs


def _continue_to_eta(city, eqs, eta, tc):
    """Continue every proper inelastic equilibrium to supply elasticity eta."""
    elastic = replace(city, eta=eta)
    endpoints = []
    for eq in eqs:
        if eq.status != "proper":
            continue
        try:
            _, end = solve_elasticity_homotopy(elastic, eq, tc,
                                               zeta_to=1.0 / eta)
        except (BadStart, StepFailure, NoConvergence):
            continue
        if end is not None:
            endpoints.append(end)
    uniq = []
    for e in endpoints:
        if not any(e.status == u.status
                   and np.max(np.abs(np.real(e.x) - np.real(u.x))) < 1e-6
                   for u in uniq):
            uniq.append(e)
    return uniq


def cmd_enumerate(cfg, args, out_dir):
    city = city_from_config(cfg, args.seed)
    tc = tracker_from_config(cfg)
    stats: dict = {}
    eqs = _solve_inelastic(city, cfg, args, tc, stats)
    if all(eq.status in ("divergent", "singular-endpoint") for eq in eqs) \
            and eqs:
        raise NoConvergence("no path produced a classifiable endpoint")
    output.write_equilibria(os.path.join(out_dir, "equilibria.csv"),
                            city.J, eqs)
    if args.trace and stats.get("path_results"):
        output.write_trace(os.path.join(out_dir, "trace.csv"),
                           stats["path_results"])
    n_proper = sum(e.status == "proper" for e in eqs)
    _say(args, f"proper equilibria: {n_proper}")
    counts = {"inf": n_proper}
    for eta in args.eta or []:
        ends = _continue_to_eta(city, eqs, eta, tc)
        tag = ("%g" % eta).replace(".", "p")
        output.write_equilibria(
            os.path.join(out_dir, f"equilibria_eta_{tag}.csv"), city.J, ends)
        counts["%g" % eta] = sum(e.status == "proper" for e in ends)
        _say(args, f"eta={eta:g}: {counts['%g' % eta]} proper endpoints")
    output.write_manifest(out_dir, cfg, args.seed,
                          gamma_phase=stats.get("gamma_phase"),
                          rational=stats.get("rational"),
                          proper_counts=counts)
    return 0


def cmd_elasticity(cfg, args, out_dir):
    city = city_from_config(cfg, args.seed)
    if not math.isfinite(city.eta):
        raise ConfigError("elasticity mode needs a finite eta")
    tc = tracker_from_config(cfg)
    stats: dict = {}
    eqs = _solve_inelastic(replace(city, eta=math.inf), cfg, args, tc, stats)
    proper = [e for e in eqs if e.status == "proper"]
    if not proper:
        raise NoConvergence("no inelastic equilibrium to continue from")
    idx = int(cfg.get("start_index", 0))
    if not 0 <= idx < len(proper):
        raise ConfigError(f"start_index {idx} out of range ({len(proper)})")
    pr, end = solve_elasticity_homotopy(city, proper[idx], tc,
                                        zeta_to=1.0 / city.eta, trace=True)
    J = city.J
    rows = [(t, np.exp(np.real(y[:J])), np.exp(np.real(y[J:])))
            for (t, _, y, _) in pr.trace]
    output.write_states(os.path.join(out_dir, "path.csv"), rows)
    if end is not None:
        output.write_equilibria(os.path.join(out_dir, "equilibria.csv"),
                                city.J, [end])
    output.write_manifest(out_dir, cfg, args.seed,
                          gamma_phase=stats.get("gamma_phase"),
                          rational=stats.get("rational"),
                          endpoint_status=None if end is None else end.status)
    _say(args, f"path rows: {len(rows)}; endpoint: "
         + ("none" if end is None else end.status))
    return 0


def cmd_maclaurin(cfg, args, out_dir):
    city = city_from_config(cfg, args.seed)
    tc = tracker_from_config(cfg)
    stats: dict = {}
    n = _get(cfg, "order", cast=int)
    eqs = solve_maclaurin(city, n, tc, seed=args.seed, budget=args.budget,
                          trace=args.trace, threads=args.threads,
                          stats_out=stats)
    output.write_equilibria(os.path.join(out_dir, "equilibria.csv"),
                            city.J, eqs)
    if args.trace and stats.get("path_results"):
        output.write_trace(os.path.join(out_dir, "trace.csv"),
                           stats["path_results"])
    output.write_manifest(out_dir, cfg, args.seed,
                          gamma_phase=stats.get("gamma_phase"), order=n)
    _say(args, "proper equilibria: %d"
         % sum(e.status == "proper" for e in eqs))
    return 0


def _nested_city(cfg, seed):
    if "neighborhoods_file" in cfg:
        kw = {}
        for key in ("theta", "gamma_w", "gamma_b", "xi", "alpha",
                    "L_w", "L_b"):
            if key in cfg:
                kw[key] = float(cfg[key])
        return ingest_neighborhoods(cfg["neighborhoods_file"], **kw)
    kw = {}
    for key, cast in (("n_neighborhoods", int), ("n_communities", int),
                      ("n_regions", int), ("sigma_log_amenity", float),
                      ("theta", float), ("gamma_w", float),
                      ("gamma_b", float), ("xi", float), ("alpha", float),
                      ("L_w", float), ("L_b", float)):
        if key in cfg:
            kw[key] = cast(cfg[key])
    return synthetic_nested_city(seed, **kw)


def cmd_nested(cfg, args, out_dir):
    nc = _nested_city(cfg, args.seed)
    tc = tracker_from_config(cfg)
    menus = community_menus(nc, tc, seed=args.seed)
    output.write_menus(os.path.join(out_dir, "menus.csv"), menus)
    sizes = [len(m.entries) for m in menus]
    rows = [{"community": i, "entries": s} for i, s in enumerate(sizes)]
    output.write_table(os.path.join(out_dir, "menu_sizes.csv"),
                       ["community", "entries"], rows)
    output.write_manifest(out_dir, cfg, args.seed,
                          communities=nc.J_c, neighborhoods=nc.J_n,
                          regions=nc.n_regions,
                          selections=combination_count(menus))
    _say(args, f"{nc.J_c} menus; sizes min {min(sizes)} max {max(sizes)}; "
         f"{combination_count(menus)} selections")
    return 0


def cmd_oracle(cfg, args, out_dir):
    city = city_from_config(cfg, args.seed)
    gs = GridSpec(resolution=int(cfg.get("resolution", 64)))
    eqs = brute_force_equilibria(city, gs)
    output.write_equilibria(os.path.join(out_dir, "equilibria.csv"),
                            city.J, eqs)
    output.write_manifest(out_dir, cfg, args.seed, resolution=gs.resolution)
    _say(args, f"oracle equilibria: {len(eqs)}")
    return 0


def cmd_bifurcate(cfg, args, out_dir):
    city = city_from_config(cfg, args.seed)
    tc = tracker_from_config(cfg)
    stats: dict = {}
    rat = rational_approx(city.gamma1, float(cfg.get("rational_eps", 1e-8)),
                          int(cfg.get("max_den", DEFAULT_MAX_DEN)))
    eqs = solve_amenity_homotopy(city, rat, tc, seed=args.seed,
                                 threads=args.threads, stats_out=stats)
    rows = [{"t_star": float(t), "max_x": float(np.max(np.abs(x)))}
            for t, x in stats.get("singular_locations", [])]
    output.write_table(os.path.join(out_dir, "singular.csv"),
                       ["t_star", "max_x"], rows)
    output.write_equilibria(os.path.join(out_dir, "equilibria.csv"),
                            city.J, eqs)
    output.write_manifest(out_dir, cfg, args.seed,
                          rational="%d/%d" % (rat.p, rat.q),
                          singular_points=len(rows))
    _say(args, f"singular points: {len(rows)}; endpoints: {len(eqs)}")
    return 0


def _sweep_grid(cfg):
    grids = {
        "J": [int(v) for v in _floats(cfg.get("sweep_J", "3"))],
        "gamma1": _floats(cfg.get("sweep_gamma1", "2.0")),
        "gamma2": _floats(cfg.get("sweep_gamma2", "0.0")),
        "xi": _floats(cfg.get("sweep_xi", "1.0")),
        "sigma": _floats(cfg.get("sweep_sigma", "0.0")),
    }
    etas = []
    for tok in cfg.get("sweep_eta", "inf").replace(",", " ").split():
        etas.append(math.inf if tok == "inf" else float(tok))
    replicates = int(cfg.get("replicates", 1))
    if replicates < 1:
        raise ConfigError("replicates must be >= 1")
    from itertools import product
    cells = []
    for J, g1, g2, xi, sig in product(grids["J"], grids["gamma1"],
                                      grids["gamma2"], grids["xi"],
                                      grids["sigma"]):
        for rep in range(replicates):
            cells.append(dict(J=J, gamma1=g1, gamma2=g2, xi=xi,
                              sigma=sig, rep=rep))
    return cells, etas


def _cell_id(cell):
    return ("J%d_g1%g_g2%g_xi%g_s%g_r%d"
            % (cell["J"], cell["gamma1"], cell["gamma2"], cell["xi"],
               cell["sigma"], cell["rep"])).replace(".", "p")


def cmd_sweep(cfg, args, out_dir):
    cells, etas = _sweep_grid(cfg)
    tc = tracker_from_config(cfg)
    ck_path = os.path.join(out_dir, "checkpoint.txt")
    done = output.checkpoint_read(ck_path)
    sweep_path = os.path.join(out_dir, "sweep.csv")
    eta_cols = [("n_eta_%g" % e).replace(".", "p")
                for e in etas if math.isfinite(e)]
    fields = (["cell", "J", "gamma1", "gamma2", "xi", "sigma", "rep", "seed",
               "n_proper", "paths", "failures"] + eta_cols)
    fresh = not os.path.exists(sweep_path)
    import csv as _csv
    with open(sweep_path, "a", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        if fresh:
            writer.writeheader()
        n_err = 0
        for cell in cells:
            cid = _cell_id(cell)
            if cid in done:
                continue
            seed = args.seed * 100003 + zlib.crc32(cid.encode()) % 99991
            sub_cfg = {"J": str(cell["J"]), "gamma1": repr(cell["gamma1"]),
                       "gamma2": repr(cell["gamma2"]), "xi": repr(cell["xi"]),
                       "sigma_A": repr(cell["sigma"]),
                       "alpha": cfg.get("alpha", "0.3"),
                       "eta": cfg.get("eta", "inf")}
            row = dict(cell, cell=cid, seed=seed)
            row["sigma"] = cell["sigma"]
            try:
                city = city_from_config(sub_cfg, seed)
                stats: dict = {}
                rat = rational_approx(city.gamma1,
                                      float(cfg.get("rational_eps", 1e-8)),
                                      int(cfg.get("max_den",
                                                  DEFAULT_MAX_DEN)))
                eqs = solve_total_degree(city, rat, tc, seed=seed,
                                         budget=args.budget,
                                         threads=args.threads,
                                         stats_out=stats)
                pc = stats["path_counts"]
                row["n_proper"] = sum(e.status == "proper" for e in eqs)
                row["paths"] = stats["paths_total"]
                row["failures"] = (pc.get("diverged", 0)
                                   + pc.get("step-failure", 0))
                for eta in etas:
                    if not math.isfinite(eta):
                        continue
                    col = ("n_eta_%g" % eta).replace(".", "p")
                    ends = _continue_to_eta(city, eqs, eta, tc)
                    row[col] = sum(e.status == "proper" for e in ends)
            except UrbaneqError as exc:
                n_err += 1
                print(f"cell {cid}: {type(exc).__name__}: {exc}",
                      file=sys.stderr)
                continue
            writer.writerow({k: str(row.get(k, "")) for k in fields})
            fh.flush()
            output.checkpoint_add(ck_path, cid)
            _say(args, f"{cid}: {row['n_proper']} proper")
    _summarize_sweep(sweep_path, out_dir, etas)
    output.write_manifest(out_dir, cfg, args.seed, cells=len(cells),
                          errors=n_err)
    return 0 if n_err == 0 else 4


def _summarize_sweep(sweep_path, out_dir, etas):
    """Mean proper-equilibrium count per gamma1 level, one row per level."""
    import csv as _csv
    by_gamma: dict[float, list] = {}
    with open(sweep_path) as fh:
        for row in _csv.DictReader(fh):
            by_gamma.setdefault(float(row["gamma1"]), []).append(row)
    rows = []
    eta_cols = [("n_eta_%g" % e).replace(".", "p")
                for e in etas if math.isfinite(e)]
    for g in sorted(by_gamma):
        grp = by_gamma[g]
        rec = {"gamma1": g, "cells": len(grp),
               "mean_proper": float(np.mean([int(r["n_proper"])
                                             for r in grp]))}
        for col in eta_cols:
            vals = [int(r[col]) for r in grp if r.get(col)]
            rec["mean_" + col[2:]] = (float(np.mean(vals)) if vals
                                      else float("nan"))
        rows.append(rec)
    output.write_table(os.path.join(out_dir, "summary.csv"),
                       list(rows[0]) if rows else ["gamma1"], rows)


def _say(args, msg):
    if not args.quiet:
        print(msg)


_DISPATCH = {"enumerate": cmd_enumerate, "elasticity": cmd_elasticity,
             "maclaurin": cmd_maclaurin, "nested": cmd_nested,
             "sweep": cmd_sweep, "bifurcate": cmd_bifurcate,
             "oracle": cmd_oracle}


def _parse_args(argv):
    ap = argparse.ArgumentParser(
        prog="urbaneq",
        description="Equilibrium enumeration for spatial choice models")
    ap.add_argument("--config", required=True, help="key=value config file")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1,
                    help="path-tracking worker pool size")
    ap.add_argument("--trace", action="store_true",
                    help="also write per-step path traces")
    ap.add_argument("--budget", type=int, default=None,
                    help="maximum number of tracked paths")
    ap.add_argument("--solver", choices=["total-degree", "amenity-homotopy"],
                    default=None, help="override the solver key")
    ap.add_argument("--eta", default=None,
                    help="comma list of finite supply elasticities")
    ap.add_argument("--quiet", action="store_true")
    args = ap.parse_args(argv)
    args.eta = _floats(args.eta) if args.eta else []
    return args


def main(argv=None) -> int:
    args = _parse_args(argv)
    try:
        cfg = read_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        return _DISPATCH[cfg["mode"]](cfg, args, args.out)
    except PathBudgetExceeded as exc:
        print(f"budget: {exc}", file=sys.stderr)
        return 2
    except _CONFIG_ERRORS as exc:
        print(f"config: {exc}", file=sys.stderr)
        return 3
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"io: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
