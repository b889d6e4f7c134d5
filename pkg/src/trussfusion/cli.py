"""Command line interface.

Subcommands: model, modes, place, excite, simulate, estimate, tune,
report.  All take ``--config`` (YAML experiment config), ``--out-dir``
and ``--seed`` (overrides the excitation seed).  Outputs are CSV files
with a JSON metadata sidecar carrying the config hash and seeds.
Exit code is 0 on success, nonzero with a diagnostic on error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as config_mod
from .excitation import write_ground_motion
from .modal import write_matrix_dump
from .model import geometry_to_dict
from .placement import greedy_prune
from .simulate import (channel_estimates, compute_metrics, ldv_dof_indices,
                       run_estimator, run_experiment, sample_sensors,
                       simulate_truth, write_estimate_csv, write_reference_csv,
                       write_sensor_csv, SensorLog)
from .tuning import PARAM_ORDER, TABLE_ROW_LABELS, TuningProblem, tune


def _load_cfg(args):
    if args.config:
        cfg = config_mod.load_config(args.config)
    else:
        cfg = config_mod.default_config()
    if args.seed is not None:
        cfg.excitation = dict(cfg.excitation, seed=int(args.seed))
    cfg.validate()
    return cfg


def _out_dir(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_meta(out, cfg, extra=None):
    meta = {"config_hash": config_mod.config_hash(cfg),
            "seeds": {"gauge": cfg.seed_gauge_noise,
                      "camera": cfg.seed_camera_noise,
                      "excitation": cfg.excitation.get("seed")},
            "version": __version__}
    if extra:
        meta.update(extra)
    with open(out / "run_meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_model(args):
    import yaml

    cfg = _load_cfg(args)
    out = _out_dir(args)
    model = config_mod.build_model(cfg)
    doc = geometry_to_dict(model.geometry, model.params,
                           cfg.element_mass_kg, cfg.include_element_mass)
    with open(out / "model.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
    print(f"nodes: {len(model.geometry.nodes)}  elements: "
          f"{len(model.geometry.elements)}  free DOFs: {model.n}")
    print(f"model description written to {out / 'model.yaml'}")
    _write_meta(out, cfg)
    return 0


def cmd_modes(args):
    cfg = _load_cfg(args)
    out = _out_dir(args)
    model, basis, ss, gauges, camera, _ = config_mod.build_components(cfg)
    print("mode  freq_hz   zeta")
    for i, (f, z) in enumerate(zip(basis.frequencies_hz(), basis.zeta), 1):
        print(f"{i:4d}  {f:8.4f}  {z:.5f}")
    if args.dump_matrices:
        path = out / "matrices.txt"
        with open(path, "w", encoding="utf-8") as fh:
            for name, arr in [("A", ss.A), ("B", ss.B), ("E", ss.E),
                              ("C_t", ss.C_t), ("H0", ss.H0), ("F", ss.F),
                              ("Phi_p", basis.phi), ("omega", basis.omega),
                              ("zeta", basis.zeta)]:
                write_matrix_dump(fh, name, arr)
        print(f"matrix dump written to {path}")
    _write_meta(out, cfg)
    return 0


def cmd_place(args):
    cfg = _load_cfg(args)
    out = _out_dir(args)
    model, basis, ss, gauges, camera, _ = config_mod.build_components(cfg)
    result = greedy_prune(ss.F, ss.H0, gauges.element_ids, C_t=ss.C_t,
                          target_n_sg=args.min_sensors)
    with open(out / "placement_curve.csv", "w", encoding="utf-8") as fh:
        fh.write("n_sg,normalized_trace\n")
        for n, tr in result.trace_curve:
            fh.write(f"{n},{tr:.17g}\n")
    sets = {str(n): list(ids) for n, ids in sorted(result.selected_sets.items())}
    with open(out / "placement_sets.json", "w", encoding="utf-8") as fh:
        json.dump({"removal_order": result.removal_order, "sets": sets},
                  fh, indent=2)
        fh.write("\n")
    print(f"placement curve ({len(result.trace_curve)} points) written to "
          f"{out / 'placement_curve.csv'}")
    _write_meta(out, cfg)
    return 0


def cmd_excite(args):
    cfg = _load_cfg(args)
    out = _out_dir(args)
    if args.type:
        kind = {"chirp": "chirp", "noise": "noise", "quake": "quake"}[args.type]
        cfg.excitation = dict(cfg.excitation, type=kind)
        if args.duration is not None:
            cfg.excitation["duration_s"] = args.duration
    motion = config_mod.build_motion(cfg)
    write_ground_motion(motion, out / "motion.csv", out / "motion_meta.json")
    print(f"{motion.meta.get('type')} motion: {motion.accel.size} samples, "
          f"peak |a| = {np.abs(motion.accel).max():.4g} m/s^2")
    _write_meta(out, cfg)
    return 0


def cmd_simulate(args):
    cfg = _load_cfg(args)
    out = _out_dir(args)
    model, basis, ss, gauges, camera, _ = config_mod.build_components(cfg)
    motion = config_mod.build_motion(cfg)
    try:
        truth = simulate_truth(model, motion, duration=cfg.duration_s)
        log = sample_sensors(
            truth, model, gauges, camera, f_sg=cfg.f_sg_hz,
            ldv_channels=cfg.ldv_channels,
            truth_noise={"r_b": cfg.truth_r_b_n2, "r_c": cfg.truth_r_c_n2,
                         "r_t": cfg.truth_r_t_m2},
            seeds=(cfg.seed_gauge_noise, cfg.seed_camera_noise),
            through_projection=cfg.camera_through_projection)
    finally:
        write_ground_motion(motion, out / "motion.csv", out / "motion_meta.json")
    write_sensor_csv(log, out / "sensors.csv")
    write_reference_csv(log, out / "references.csv")
    print(f"simulated {log.n_ticks} gauge ticks, "
          f"{log.cam_capture_ticks.size} camera frames")
    _write_meta(out, cfg, {"n_ticks": log.n_ticks})
    return 0


def cmd_estimate(args):
    cfg = _load_cfg(args)
    out = _out_dir(args)
    if args.data_dir:
        model, basis, ss, gauges, camera, gauge_model = config_mod.build_components(cfg)
        log = read_sensor_csv(Path(args.data_dir) / "sensors.csv", cfg, model,
                              gauges, camera)
        trace = run_estimator(
            ss, gauge_model, log, camera, q=cfg.q, P0=cfg.p0_diag,
            highpass=(cfg.highpass_fc_hz, cfg.f_sg_hz),
            fused_channel_idx=config_mod.fused_channel_indices(cfg, camera),
            lag_noise_scale=cfg.oosm_lag_noise_scale)
        write_estimate_csv(trace, out / "estimates.csv")
        print(f"estimated {trace.n_ticks} ticks from recorded data; "
              f"runtime {trace.runtime_s:.2f} s")
    else:
        record, report = run_experiment(cfg)
        write_estimate_csv(record.trace, out / "estimates.csv")
        write_reference_csv(record.log, out / "references.csv")
        with open(out / "est_channels.csv", "w", encoding="utf-8") as fh:
            names = [f"{n}{a}" for n, a in cfg.ldv_channels]
            fh.write("t," + ",".join(names) + "\n")
            for k, t in enumerate(record.trace.times):
                vals = ",".join(f"{v:.17g}" for v in record.est_ldv[k])
                fh.write(f"{t:.17g},{vals}\n")
        print(report.summary())
    _write_meta(out, cfg)
    return 0


def cmd_tune(args):
    cfg = _load_cfg(args) if args.config else config_mod.tuning_config()
    if not cfg.reference_channels:
        cfg = cfg.replace(
            reference_channels=config_mod.DEFAULT_REFERENCE_CHANNELS)
    out = _out_dir(args)
    model, basis, ss, gauges, camera, _ = config_mod.build_components(cfg)
    motion = config_mod.build_motion(cfg)
    truth = simulate_truth(model, motion, duration=cfg.duration_s)
    log = sample_sensors(
        truth, model, gauges, camera, f_sg=cfg.f_sg_hz,
        ldv_channels=cfg.ldv_channels,
        truth_noise={"r_b": cfg.truth_r_b_n2, "r_c": cfg.truth_r_c_n2,
                     "r_t": cfg.truth_r_t_m2},
        seeds=(cfg.seed_gauge_noise, cfg.seed_camera_noise),
        through_projection=cfg.camera_through_projection)
    base = {"alpha0": cfg.alpha0_per_s, "alpha1": cfg.alpha1_s,
            "k_b": cfg.k_b_n_per_m, "k_ca": cfg.k_ca_n_per_m,
            "k_cp": cfg.k_cp_n_per_m, "q": cfg.q, "r_b": cfg.r_b_n2,
            "r_c": cfg.r_c_n2, "r_t": cfg.r_t_m2}
    problem = TuningProblem(config=cfg, log=log, base=base)
    result = tune(problem, free=args.free.split(",") if args.free else None,
                  max_evals=args.max_evals, seed=args.seed or 0)

    doc = {"cost": result.cost, "n_evaluations": result.n_evaluations,
           "parameters": [
               {"label": label, "name": name,
                "initial_guess": base[name],
                "p_normalized": float(result.p_norm[i]),
                "physical": result.p_physical[name]}
               for i, (label, name) in enumerate(zip(TABLE_ROW_LABELS, PARAM_ORDER))]}
    with open(out / "p_star.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    with open(out / "cost_trace.csv", "w", encoding="utf-8") as fh:
        fh.write("evaluation,best_cost\n")
        for i, c in enumerate(result.cost_trace, 1):
            fh.write(f"{i},{c:.17g}\n")
    print(f"tuned in {result.n_evaluations} evaluations, cost {result.cost:.4e}")
    for label, guess, p, phys in result.table():
        print(f"  {label:18s} base {guess:10.4g}  p {p:7.3f}  -> {phys:10.4g}")
    _write_meta(out, cfg)
    return 0


def cmd_report(args):
    cfg = _load_cfg(args)
    out = _out_dir(args)
    data = Path(args.data_dir) if args.data_dir else out
    est = _read_wide_csv(data / "est_channels.csv")
    ref = _read_wide_csv(data / "references.csv")
    names = [c for c in est.dtype.names if c != "t"]
    e = np.column_stack([est[c] for c in names])
    r = np.column_stack([ref[c] for c in names])
    report = compute_metrics(e, r, burn_in=cfg.burn_in_ticks(),
                             channels=tuple(names))
    print(report.summary())
    doc = {"rmse_m": dict(zip(names, report.rmse.tolist())),
           "peak_error_m": dict(zip(names, report.peak_error.tolist())),
           "lag_ticks": dict(zip(names, report.lag_ticks.tolist()))}
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return 0


def _read_wide_csv(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    if data.shape == ():
        data = data.reshape(1)
    return data


def read_sensor_csv(path, cfg, model, gauges, camera) -> SensorLog:
    """Rebuild a SensorLog from the long-format sensor CSV."""
    dt = cfg.dt_tick()
    times, ids, values = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != "t,sensor_id,value":
            raise ValueError(f"{path} is not a sensor CSV")
        for line in fh:
            t, sid, val = line.strip().split(",")
            times.append(float(t))
            ids.append(sid)
            values.append(float(val))
    gauge_ids = list(gauges.element_ids)
    col_of = {f"sg{eid}": j for j, eid in enumerate(gauge_ids)}
    n_ticks = 0
    gauge_rows = {}
    cam_rows = {}
    for t, sid, val in zip(times, ids, values):
        k = int(round(t / dt))
        n_ticks = max(n_ticks, k)
        if sid.startswith("sg"):
            gauge_rows.setdefault(k, {})[col_of[sid]] = val
        elif sid.startswith("cam"):
            cam_rows.setdefault(k, {})[int(sid[3:])] = val
    gauge = np.zeros((n_ticks, len(gauge_ids)))
    for k, row in gauge_rows.items():
        for j, v in row.items():
            gauge[k - 1, j] = v
    cam_ticks = np.array(sorted(cam_rows), dtype=int)
    cam_values = np.zeros((cam_ticks.size, camera.n_channels))
    for i, k in enumerate(cam_ticks):
        for j, v in cam_rows[k].items():
            cam_values[i, j] = v
    return SensorLog(dt_tick=dt, n_ticks=n_ticks, gauge=gauge,
                     gauge_element_ids=tuple(gauge_ids),
                     cam_capture_ticks=cam_ticks, cam_values=cam_values,
                     cam_lag=camera.lag, ldv=np.zeros((n_ticks, 0)),
                     ldv_channels=())


def build_parser():
    ap = argparse.ArgumentParser(
        prog="trussfusion",
        description="Adaptive-truss state estimation toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config YAML")
        p.add_argument("--out-dir", default="out", help="output directory")
        p.add_argument("--seed", type=int, help="override excitation seed")

    p = sub.add_parser("model", help="assemble the structural model")
    common(p)
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("modes", help="modal analysis report")
    common(p)
    p.add_argument("--dump-matrices", action="store_true",
                   help="write A,B,E,C_t,H0,F,Phi_p,omega,zeta as text")
    p.set_defaults(func=cmd_modes)

    p = sub.add_parser("place", help="greedy gauge placement curve")
    common(p)
    p.add_argument("--min-sensors", type=int, default=0)
    p.set_defaults(func=cmd_place)

    p = sub.add_parser("excite", help="generate a ground motion")
    common(p)
    p.add_argument("--type", choices=["chirp", "noise", "quake"])
    p.add_argument("--duration", type=float)
    p.set_defaults(func=cmd_excite)

    p = sub.add_parser("simulate", help="simulate truth and sensor samples")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="run the fusion estimator")
    common(p)
    p.add_argument("--data-dir", help="read sensors.csv from this directory")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("tune", help="self-tune model and filter parameters")
    common(p)
    p.add_argument("--max-evals", type=int, default=300)
    p.add_argument("--free", help="comma-separated parameter names to tune")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("report", help="metrics from recorded estimates")
    common(p)
    p.add_argument("--data-dir", help="directory holding est_channels/references")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # CLI boundary: report and signal failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
