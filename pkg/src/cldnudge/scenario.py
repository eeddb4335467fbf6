"""Reproducible experiments: simulate a scenario, estimate from its record, diagnose."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ScenarioConfig, SeedConfig
from .diagnostics import (check_condition, log_moment_F, moment_asymptotics_check, ratio_limits,
                          un_vn_sequences, boundary_values)
from .estimators import BFNObserver, build_model
from .exceptions import ConfigurationError
from .kernel import OrientationQuadrature, amplification, log_a_moments
from .operator import output_energy, read_record_csv, write_record_csv
from .population import ExtendedDomain, PsdState, literal_extension

logger = logging.getLogger(__name__)

RECORD_FILE = "record.csv"
TRUTH_DIR = "truth"
ESTIMATE_DIR = "estimate"
DIAGNOSTICS_DIR = "diagnostics"
MANIFEST_FILE = "manifest.json"


def _f(x: float) -> str:
    return f"{x:.17g}"


def make_seed_psd(seed: SeedConfig, domain: ExtendedDomain, t: float = 0.0) -> PsdState:
    """Gaussian of unit L1 mass times ``amplitude``, zero on ``[r_max, r_hi)``."""
    if not domain.r_lo <= seed.center <= domain.r_hi:
        raise ConfigurationError(
            f"seed center {seed.center} outside the domain [{domain.r_lo}, {domain.r_hi}]")
    r = domain.grid
    v = np.exp(-0.5 * ((r - seed.center) / seed.width) ** 2)
    v[r >= domain.r_max] = 0.0
    mass = v.sum() * domain.dx
    if mass == 0.0 or seed.amplitude == 0.0:
        return PsdState(t=t, values=np.zeros(domain.n), domain=domain)
    return PsdState(t=t, values=seed.amplitude * v / mass, domain=domain)


def model_from_config(cfg: ScenarioConfig):
    g = cfg.grid
    return build_model([s.spec() for s in cfg.shapes], cfg.growth.law(), g.dx, g.dt, g.d_ell,
                       g.n_phi, g.n_theta,
                       r_lo=[s.r_lo for s in cfg.shapes], r_hi=[s.r_hi for s in cfg.shapes])


def seeds_for(cfg: ScenarioConfig, model) -> list[PsdState]:
    return [make_seed_psd(s, d) for s, d in zip(cfg.seeds, model.domains)]


def snapshot_name(shape: int, t: float) -> str:
    return f"psi{shape}_t{t:.6f}.csv"


def _write_rows(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _domain_info(cfg: ScenarioConfig, model) -> list[dict]:
    law = cfg.growth.law()
    out = []
    for sc, dom in zip(cfg.shapes, model.domains):
        lo, hi = literal_extension(sc.spec(), law)
        out.append({
            "literal_r_lo": lo, "literal_r_hi": hi,
            "r_lo": dom.r_lo, "r_hi": dom.r_hi, "nodes": dom.n,
            "override": sc.r_lo is not None or sc.r_hi is not None,
        })
    return out


def write_manifest(out: Path, cfg: ScenarioConfig, command: str, extra: dict | None = None) -> Path:
    """Record every file under ``out`` (the manifest lists itself without a hash)."""
    path = out / MANIFEST_FILE
    previous = {}
    if path.is_file():
        try:
            previous = json.loads(path.read_text())
        except json.JSONDecodeError:
            previous = {}
    now = datetime.now(timezone.utc).isoformat(timespec="seconds")
    runs = previous.get("runs", []) + [{"command": command, "finished": now, **(extra or {})}]
    files = []
    for p in sorted(out.rglob("*")):
        if p.is_file() and p != path:
            data = p.read_bytes()
            files.append({"path": p.relative_to(out).as_posix(), "bytes": len(data),
                          "sha256": hashlib.sha256(data).hexdigest()})
    files.append({"path": MANIFEST_FILE, "bytes": None, "sha256": None})
    manifest = {
        "tool": "cldnudge",
        "tool_version": __version__,
        "config_name": cfg.name,
        "config_hash": cfg.digest(),
        "created": previous.get("created", now),
        "updated": now,
        "runs": runs,
        "files": files,
    }
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def write_kernels(cfg: ScenarioConfig, out) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model = model_from_config(cfg)
    paths = []
    for i, table in enumerate(model.operator.tables, 1):
        p = out / f"kernel_shape{i}.csv"
        table.to_csv(p)
        paths.append(p)
    (out / "config.json").write_text(cfg.dumps())
    write_manifest(out, cfg, "kernel")
    return paths


def simulate(cfg: ScenarioConfig, out) -> dict:
    """Write truth snapshots, the CLD record and a manifest under ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model = model_from_config(cfg)
    psi0 = seeds_for(cfg, model)
    traj = model.simulate([p.values for p in psi0])
    record = model.measure(traj)

    truth_dir = out / TRUTH_DIR
    truth_dir.mkdir(exist_ok=True)
    for t, state in zip(model.times, traj):
        for i, (v, dom) in enumerate(zip(state, model.domains), 1):
            PsdState(t=float(t), values=v, domain=dom).to_csv(truth_dir / snapshot_name(i, t))
    write_record_csv(out / RECORD_FILE, model.times, model.operator.ell_grid, record)
    (out / "config.json").write_text(cfg.dumps())

    energy = output_energy(record, model.dt, model.operator.d_ell)
    domains = _domain_info(cfg, model)
    write_manifest(out, cfg, "simulate", {"output_energy": energy, "domains": domains})
    logger.info("simulated %d steps, output energy %.6g", model.n_steps, energy)
    return {"record": record, "times": model.times, "trajectory": traj, "energy": energy,
            "model": model}


def _load_truth(out: Path, model) -> list[np.ndarray] | None:
    vals = []
    for i, dom in enumerate(model.domains, 1):
        p = out / TRUTH_DIR / snapshot_name(i, 0.0)
        if not p.is_file():
            return None
        r, v = PsdState.read_csv(p)
        if r.shape != dom.grid.shape or not np.allclose(r, dom.grid):
            return None
        vals.append(v)
    return vals


def estimate(cfg: ScenarioConfig, out, record_path=None) -> dict:
    """Run the preflight diagnostics and the BFN iteration on a stored record."""
    out = Path(out)
    model = model_from_config(cfg)
    record_path = Path(record_path) if record_path else out / RECORD_FILE
    if not record_path.is_file():
        raise ConfigurationError(f"record file not found: {record_path}")
    times, ell, record = read_record_csv(record_path)
    if (times.shape != model.times.shape or not np.allclose(times, model.times)
            or ell.shape != model.operator.ell_grid.shape
            or not np.allclose(ell, model.operator.ell_grid)):
        raise ConfigurationError(
            "record grids do not match the configuration: record has "
            f"{times.size} times in [{times[0]}, {times[-1]}] and {ell.size} chords in "
            f"[{ell[0]}, {ell[-1]}]; config expects {model.times.size} times in "
            f"[0, {model.times[-1]}] and {model.operator.ell_grid.size} chords in "
            f"[0, {model.operator.ell_grid[-1]}]")

    shapes = [s.spec() for s in cfg.shapes]
    cond = check_condition(*shapes)
    warnings = []
    if not cond.satisfied:
        warnings.append("WARNING: geometric condition violated "
                        f"(lhs={cond.lhs:.6g}, rhs={cond.rhs:.6g}); the approximate "
                        "observability guarantee does not apply to this scenario")
        logger.warning(warnings[-1])

    truth = _load_truth(out, model)
    obs = cfg.observer
    checkpoints = sorted(set(obs.checkpoints) | {obs.n_iterations})
    g = cfg.grid
    est = BFNObserver(shapes=shapes, growth=cfg.growth.law(), dx=g.dx, dt=g.dt, d_ell=g.d_ell,
                      mu=obs.mu, n_iterations=obs.n_iterations, n_phi=g.n_phi, n_theta=g.n_theta,
                      r_lo=[s.r_lo for s in cfg.shapes], r_hi=[s.r_hi for s in cfg.shapes],
                      checkpoints=checkpoints)
    y = None if truth is None else np.concatenate(truth)
    est.fit(record, y)
    hist = est.history_

    edir = out / ESTIMATE_DIR
    edir.mkdir(parents=True, exist_ok=True)
    kept = [k for k in range(hist.n_iterations + 1) if hist.estimates[k] is not None]
    for k in kept:
        for i, (v, dom) in enumerate(zip(hist.estimates[k], model.domains), 1):
            PsdState(t=0.0, values=v, domain=dom).to_csv(edir / f"iter_{k:04d}_psi{i}.csv")

    rows = []
    for k in range(hist.n_iterations + 1):
        if hist.metrics:
            m = hist.metrics[k]
            rows.append([k, _f(m.l2[0]), _f(m.l2[1]), _f(m.peak[0]), _f(m.peak[1]),
                         _f(hist.innovation[k])])
        else:
            rows.append([k, "nan", "nan", "nan", "nan", _f(hist.innovation[k])])
    _write_rows(edir / "metrics.csv",
                ["iteration", "L2_err_1", "L2_err_2", "peak_err_1", "peak_err_2", "innovation"], rows)

    for i, dom in enumerate(model.domains, 1):
        header = ["r", "truth"] + [f"iter_{k}" for k in kept]
        cols = [dom.grid, truth[i - 1] if truth is not None else np.full(dom.n, np.nan)]
        cols += [hist.estimates[k][i - 1] for k in kept]
        _write_rows(edir / f"plot_shape{i}.csv", header,
                    ([_f(c[j]) for c in cols] for j in range(dom.n)))

    lines = [f"scenario: {cfg.name}",
             f"mu: {obs.mu}",
             f"iterations: {obs.n_iterations}",
             f"condition_lhs: {cond.lhs:.17g}",
             f"condition_rhs: {cond.rhs:.17g}",
             f"condition_satisfied: {cond.satisfied}"]
    lines += warnings
    if hist.metrics:
        last = hist.metrics[-1]
        lines += [f"final_L2_err_1: {last.l2[0]:.17g}", f"final_L2_err_2: {last.l2[1]:.17g}",
                  f"final_peak_err_1: {last.peak[0]:.17g}", f"final_peak_err_2: {last.peak[1]:.17g}"]
    (edir / "report.txt").write_text("\n".join(lines) + "\n")
    write_manifest(out, cfg, "estimate", {"warnings": warnings})
    return {"history": hist, "model": model, "condition": cond, "warnings": warnings,
            "truth": truth}


def diagnose(cfg: ScenarioConfig, out) -> dict:
    """Condition check, moment asymptotics and U_n/V_n tables for the scenario seeds."""
    out = Path(out)
    ddir = out / DIAGNOSTICS_DIR
    ddir.mkdir(parents=True, exist_ok=True)
    model = model_from_config(cfg)
    shapes = [s.spec() for s in cfg.shapes]
    dg = cfg.diagnostics
    quad = OrientationQuadrature(cfg.grid.n_phi, cfg.grid.n_theta)
    cond = check_condition(*shapes)
    lines = [f"scenario: {cfg.name}",
             f"condition_lhs: {cond.lhs:.17g}",
             f"condition_rhs: {cond.rhs:.17g}",
             f"condition_satisfied: {cond.satisfied}",
             f"condition_margin: {cond.margin:.17g}"]

    moment_rows = []
    for i, s in enumerate(shapes, 1):
        la = log_a_moments(s.eta, dg.n_max + 1, quad)
        ratio = math.exp(la[dg.n_max + 1] - la[dg.n_max])
        A = amplification(s.eta)
        lines += [f"shape{i}_A: {A:.17g}",
                  f"shape{i}_a_ratio_at_n_max: {ratio:.17g}",
                  f"shape{i}_a_ratio_within_tol: {abs(ratio / A - 1) <= dg.ratio_tol}"]
        for n in range(1, dg.n_max + 1):
            moment_rows.append([i, n, _f(la[n]), _f(math.exp(la[n + 1] - la[n])),
                                _f(math.exp(la[n] / n))])
    _write_rows(ddir / "moments.csv", ["shape", "n", "log_a_n", "ratio", "a_n_root"], moment_rows)

    seeds = seeds_for(cfg, model)
    n_checks = [n for n in (10, 20, 50, 100, dg.n_max) if n <= dg.n_max]
    for i, psi in enumerate(seeds, 1):
        rep = moment_asymptotics_check(psi, n_checks)
        lines.append(f"shape{i}_moment_asymptotics_variant: {rep.variant}")
        if rep.variant != "skipped":
            lines.append(f"shape{i}_moment_asymptotics_deviation: "
                         + " ".join(f"n={n}:{d:.3e}" for n, d in zip(rep.n, rep.deviation)))

    m = cfg.growth.m
    n_range = range(m + 1, dg.n_max + 1)
    seq = un_vn_sequences(boundary_values(seeds[0]), boundary_values(seeds[1]),
                          lambda k: log_moment_F(seeds[0], k), shapes[0], shapes[1], m,
                          n_range, quad)
    ru, rv = seq.ratios()
    u_lim, v_lim = ratio_limits(*shapes)
    lines += [f"U_ratio_limit: {u_lim:.17g}", f"V_ratio_limit: {v_lim:.17g}",
              f"U_ratio_at_n_max: {ru[-1]:.17g}", f"V_ratio_at_n_max: {rv[-1]:.17g}",
              f"ratio_limits_separated: {abs(u_lim - v_lim) > dg.ratio_tol * max(u_lim, v_lim)}"]
    _write_rows(ddir / "sequences.csv", ["n", "log_abs_U", "sign_U", "log_abs_V", "sign_V"],
                ([int(n), _f(a), _f(b), _f(c), _f(d)]
                 for n, a, b, c, d in zip(seq.n, seq.log_u, seq.sign_u, seq.log_v, seq.sign_v)))
    (ddir / "report.txt").write_text("\n".join(lines) + "\n")
    write_manifest(out, cfg, "diagnose")
    return {"condition": cond, "sequences": seq, "lines": lines}
