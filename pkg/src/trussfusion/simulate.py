"""Ground-truth simulation, multi-rate sensor sampling and metrics.

The truth simulator integrates the FULL-order model under base
excitation in relative coordinates (effective force -M iota a_g) using
the exact per-mode damped-oscillator propagator with linear
interpolation of the ground acceleration inside each step.  Because the
propagation is exact for piecewise-linear forcing, refining the step
does not change the result beyond round-off.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .excitation import GroundMotion
from .fusion import FusionFilter
from .model import AXES, AssembledModel
from .modal import ModalStateSpace, modal_damping
from .sensors import (CameraModel, StrainGaugeSet, build_R_sg,
                      camera_positions_through_projection,
                      tracked_world_positions)
from .validation import check_positive


@dataclass(eq=False)
class TruthTrajectory:
    """Full-order modal truth at the fine integration step."""
    dt: float
    eta: np.ndarray      # (n_steps, n_modes) modal displacements
    eta_dot: np.ndarray  # (n_steps, n_modes) modal velocities
    phi: np.ndarray      # (n, n_modes) mass-normalized full basis
    omega: np.ndarray
    zeta: np.ndarray
    direction: str

    @property
    def n_steps(self):
        return self.eta.shape[0]

    @property
    def times(self):
        return np.arange(self.n_steps) * self.dt

    def q_at(self, step_indices):
        """Nodal displacements at the given fine steps, (len, n)."""
        return self.eta[step_indices] @ self.phi.T

    def qdot_at(self, step_indices):
        return self.eta_dot[step_indices] @ self.phi.T

    def modal_energy(self):
        """Total mechanical energy (eta_dot^2 + omega^2 eta^2)/2 per step."""
        return 0.5 * (self.eta_dot ** 2 + (self.omega[None, :] * self.eta) ** 2).sum(axis=1)


def _foh_propagators(omega, zeta, dt):
    """Exact transition and first-order-hold input gains per mode.

    For each 2-state mode the augmented exponential of
    [[A, b, 0], [0, 0, 1], [0, 0, 0]] dt yields F = e^{A dt},
    g0 = int e^{A(dt-s)} b ds and g1 = int e^{A(dt-s)} s b ds, giving

        x_{k+1} = F x_k + g0 u_k + (g1/dt) (u_{k+1} - u_k).
    """
    m = omega.size
    F = np.zeros((m, 2, 2))
    g0 = np.zeros((m, 2))
    g1 = np.zeros((m, 2))
    aug = np.zeros((4, 4))
    for i in range(m):
        aug[:] = 0.0
        aug[0, 1] = 1.0
        aug[1, 0] = -omega[i] ** 2
        aug[1, 1] = -2.0 * zeta[i] * omega[i]
        aug[1, 2] = 1.0   # b = (0, 1): unit modal force input
        aug[2, 3] = 1.0
        E = scipy.linalg.expm(aug * dt)
        F[i] = E[:2, :2]
        g0[i] = E[:2, 2]
        g1[i] = E[:2, 3]
    return F, g0, g1 / dt


def influence_vector(model: AssembledModel, direction="x"):
    """Rigid-body influence: 1 on every free DOF along the excitation axis."""
    axis = AXES.index(direction)
    iota = np.zeros(model.n)
    for (node_id, ax), idx in model.dof_map.items():
        if ax == axis:
            iota[idx] = 1.0
    return iota


def simulate_truth(model: AssembledModel, motion: GroundMotion, duration=None,
                   q0=None, v0=None) -> TruthTrajectory:
    """Integrate the full-order model under base excitation.

    Returns relative displacements (absolute = relative + table motion;
    references are compared in relative coordinates throughout).
    """
    dt = motion.dt
    n_avail = motion.accel.size
    if duration is None:
        n_steps = n_avail
    else:
        check_positive(duration, "duration")
        n_steps = min(n_avail, int(round(duration / dt)) + 1)
    if n_steps < 2:
        raise ValueError("motion provides fewer than two samples")

    w2, phi = scipy.linalg.eigh(model.K, model.M)
    if w2[0] <= 0.0:
        raise ValueError("full model has a non-positive eigenvalue")
    omega = np.sqrt(w2)
    zeta = np.atleast_1d(modal_damping(omega, model.params.alpha0,
                                       model.params.alpha1))
    iota = influence_vector(model, motion.direction)
    gamma_part = phi.T @ model.M @ iota  # participation factors

    F, g0, g1 = _foh_propagators(omega, zeta, dt)
    f_modal = -np.outer(motion.accel[:n_steps], gamma_part)  # (n_steps, m)

    m = omega.size
    state = np.zeros((m, 2))
    if q0 is not None:
        state[:, 0] = phi.T @ model.M @ np.asarray(q0, dtype=float)
    if v0 is not None:
        state[:, 1] = phi.T @ model.M @ np.asarray(v0, dtype=float)

    eta = np.zeros((n_steps, m))
    eta_dot = np.zeros((n_steps, m))
    eta[0], eta_dot[0] = state[:, 0], state[:, 1]
    for k in range(n_steps - 1):
        u = f_modal[k]
        du = f_modal[k + 1] - u
        state = np.einsum("mij,mj->mi", F, state) \
            + g0 * u[:, None] + g1 * du[:, None]
        eta[k + 1], eta_dot[k + 1] = state[:, 0], state[:, 1]
    return TruthTrajectory(dt=dt, eta=eta, eta_dot=eta_dot, phi=phi,
                           omega=omega, zeta=zeta, direction=motion.direction)


# ---------------------------------------------------------------------------
# multi-rate sensor sampling

@dataclass(eq=False)
class SensorLog:
    """Multi-rate sensor samples for one run (ticks are 1-based)."""
    dt_tick: float
    n_ticks: int
    gauge: np.ndarray              # (n_ticks, n_sg)
    gauge_element_ids: tuple
    cam_capture_ticks: np.ndarray  # (n_caps,) int
    cam_values: np.ndarray         # (n_caps, n_channels) positions, m
    cam_lag: int
    ldv: np.ndarray                # (n_ticks, n_ldv) noiseless truth taps
    ldv_channels: tuple            # ((node_id, axis_char), ...)
    meta: dict = field(default_factory=dict)

    @property
    def times(self):
        return (1 + np.arange(self.n_ticks)) * self.dt_tick

    def cam_delivery_ticks(self):
        return self.cam_capture_ticks + self.cam_lag


def ldv_dof_indices(model: AssembledModel, channels):
    return [model.dof_index(int(node), AXES.index(ax)) for node, ax in channels]


def sample_sensors(truth: TruthTrajectory, model: AssembledModel,
                   gauges: StrainGaugeSet, camera: CameraModel, f_sg=200.0,
                   ldv_channels=(), truth_noise=None, seeds=(1, 2),
                   through_projection=True) -> SensorLog:
    """Sample gauges every tick and the camera every rate_divisor-th tick.

    ``truth_noise`` is a dict with gauge/camera noise variances for the
    generated data (r_b, r_c in N^2, r_t in m^2); it is distinct from the
    filter's assumed covariances.  Camera samples are world positions of
    the tracked channels, delivered ``camera.lag`` ticks after capture.
    """
    check_positive(f_sg, "f_sg")
    dt_tick = 1.0 / f_sg
    per_tick = dt_tick / truth.dt
    if abs(per_tick - round(per_tick)) > 1e-9:
        raise ValueError(f"gauge step {dt_tick} is not a multiple of the "
                         f"truth step {truth.dt}")
    per_tick = int(round(per_tick))
    n_ticks = (truth.n_steps - 1) // per_tick
    if n_ticks < 1:
        raise ValueError("truth trajectory shorter than one gauge tick")
    tick_steps = per_tick * (1 + np.arange(n_ticks))

    noise = {"r_b": 0.0, "r_c": 0.0, "r_t": 0.0}
    if truth_noise:
        noise.update(truth_noise)
    rng_gauge = np.random.default_rng(seeds[0])
    rng_cam = np.random.default_rng(seeds[1])

    q_ticks = truth.q_at(tick_steps)
    forces = _gauge_forces(gauges, q_ticks)
    sigma = np.where(gauges.is_bracing, np.sqrt(noise["r_b"]), np.sqrt(noise["r_c"]))
    gauge_samples = forces + sigma[None, :] * rng_gauge.standard_normal(forces.shape)

    divisor = camera.rate_divisor
    capture_phase = (divisor - 1) % divisor
    ticks = 1 + np.arange(n_ticks)
    cam_ticks = ticks[ticks % divisor == capture_phase]
    cam_values = np.zeros((cam_ticks.size, camera.n_channels))
    sigma_t = np.sqrt(noise["r_t"])
    for i, k in enumerate(cam_ticks):
        q = q_ticks[k - 1]
        world = tracked_world_positions(q, camera)
        if through_projection:
            measured = camera_positions_through_projection(world, camera)
        else:
            measured = world
        vals = np.concatenate([measured[j, list(camera.axes)]
                               for j in range(camera.n_e)])
        cam_values[i] = vals + sigma_t * rng_cam.standard_normal(vals.size)

    ldv_idx = ldv_dof_indices(model, ldv_channels)
    ldv = q_ticks[:, ldv_idx] if ldv_idx else np.zeros((n_ticks, 0))

    return SensorLog(dt_tick=dt_tick, n_ticks=n_ticks, gauge=gauge_samples,
                     gauge_element_ids=gauges.element_ids,
                     cam_capture_ticks=cam_ticks, cam_values=cam_values,
                     cam_lag=camera.lag, ldv=ldv, ldv_channels=tuple(ldv_channels),
                     meta={"seeds": tuple(int(s) for s in seeds),
                           "truth_noise": dict(noise),
                           "through_projection": bool(through_projection)})


def _gauge_forces(gauges: StrainGaugeSet, q_ticks):
    q_pad = np.hstack([q_ticks, np.zeros((q_ticks.shape[0], 1))])
    idx = np.array([k.dof_idx for k in gauges.kinematics])
    rel = q_pad[:, idx[:, :, 1]] - q_pad[:, idx[:, :, 0]]
    e0 = np.array([k.e0 for k in gauges.kinematics])
    L0 = np.array([k.L0 for k in gauges.kinematics])
    gam = np.array([k.gamma for k in gauges.kinematics])
    L = np.linalg.norm(e0[None, :, :] + rel, axis=2)
    return gam[None, :] * (L - L0[None, :])


# ---------------------------------------------------------------------------
# estimation over a sensor log

@dataclass(eq=False)
class EstimateTrace:
    dt_tick: float
    xhat: np.ndarray        # (n_ticks, 2p) posteriors
    trace_P: np.ndarray
    nis_sg: np.ndarray
    nis_cam: np.ndarray     # NaN on ticks without camera delivery
    min_eig_ratio: np.ndarray
    runtime_s: float
    P_hist: np.ndarray | None = None  # (n_ticks, 2p, 2p) when requested

    @property
    def n_ticks(self):
        return self.xhat.shape[0]

    @property
    def times(self):
        return (1 + np.arange(self.n_ticks)) * self.dt_tick


def run_estimator(ss: ModalStateSpace, gauge_model, log: SensorLog, camera,
                  q=1e-7, P0=1e-4, highpass=(0.1, 200.0), fused_channel_idx=None,
                  use_gauges=True, use_camera=True, track_health=True,
                  lag_noise_scale=None, keep_covariances=False) -> EstimateTrace:
    """Run the multi-rate fusion filter over a recorded sensor log.

    ``fused_channel_idx`` selects which camera channels feed the filter
    (reference channels held out for self-tuning are simply excluded).
    """
    if fused_channel_idx is None:
        fused_channel_idx = list(range(log.cam_values.shape[1]))
    use_camera = use_camera and ss.C_t.size > 0 and len(fused_channel_idx) > 0
    C_t = ss.C_t[fused_channel_idx] if use_camera else None
    p0 = camera.p0[fused_channel_idx] if use_camera else None
    R_cam = camera.r_t * np.eye(len(fused_channel_idx)) if use_camera else None

    filt = FusionFilter(
        F=ss.F, q=q,
        R_sg=build_R_sg(gauge_model.gauges) if use_gauges else None,
        strain_model=gauge_model if use_gauges else None,
        C_t=C_t, R_cam=R_cam, p0=p0, lag=log.cam_lag,
        highpass=highpass, P0=P0, track_health=track_health,
        lag_noise_scale=lag_noise_scale)

    deliveries = {int(k + log.cam_lag): i
                  for i, k in enumerate(log.cam_capture_ticks)}
    n = log.n_ticks
    xhat = np.zeros((n, filt.nx))
    trace_P = np.zeros(n)
    nis_sg = np.full(n, np.nan)
    nis_cam = np.full(n, np.nan)
    health = np.full(n, np.nan)
    P_hist = np.zeros((n, filt.nx, filt.nx)) if keep_covariances else None

    t0 = time.perf_counter()
    for k in range(1, n + 1):
        y_sg = log.gauge[k - 1] if use_gauges else None
        y_cam = None
        if use_camera and k in deliveries:
            y_cam = log.cam_values[deliveries[k]][fused_channel_idx]
        diag = filt.step(y_sg=y_sg, y_cam=y_cam)
        xhat[k - 1] = filt.x
        trace_P[k - 1] = float(np.trace(filt.P))
        nis_sg[k - 1] = diag.nis_sg
        nis_cam[k - 1] = diag.nis_cam
        health[k - 1] = diag.min_eig_ratio
        if keep_covariances:
            P_hist[k - 1] = filt.P
    runtime = time.perf_counter() - t0
    return EstimateTrace(dt_tick=log.dt_tick, xhat=xhat, trace_P=trace_P,
                         nis_sg=nis_sg, nis_cam=nis_cam, min_eig_ratio=health,
                         runtime_s=runtime, P_hist=P_hist)


def channel_estimates(trace: EstimateTrace, basis_phi, dof_indices):
    """Displacement estimates for selected DOFs, (n_ticks, n_channels)."""
    p = basis_phi.shape[1]
    rows = basis_phi[np.asarray(dof_indices, dtype=int), :]
    return trace.xhat[:, :p] @ rows.T


# ---------------------------------------------------------------------------
# metrics

@dataclass(eq=False)
class MetricsReport:
    rmse: np.ndarray          # per channel, m
    peak_error: np.ndarray    # per channel, m
    lag_ticks: np.ndarray     # cross-correlation lag per channel
    nis_mean: float
    nis_in_band_frac: float
    nees_mean: float
    runtime_s: float
    channels: tuple = ()

    def summary(self):
        lines = ["channel  rmse_m       peak_m       lag_ticks"]
        for i, ch in enumerate(self.channels or range(self.rmse.size)):
            lines.append(f"{str(ch):8s} {self.rmse[i]:<12.4e} "
                         f"{self.peak_error[i]:<12.4e} {self.lag_ticks[i]:+d}")
        lines.append(f"NIS mean {self.nis_mean:.2f}, in-band {self.nis_in_band_frac:.1%}; "
                     f"NEES mean {self.nees_mean:.2f}; runtime {self.runtime_s:.2f} s")
        return "\n".join(lines)


def crosscorr_lag(est, ref, max_lag=50):
    """Lag (ticks) maximizing correlation; positive = ref leads est.

    With ref delayed by d ticks relative to est the reported lag is +d.
    """
    e = est - est.mean()
    r = ref - ref.mean()
    n = e.size
    lags = range(-max_lag, max_lag + 1)
    best_lag, best_val = 0, -np.inf
    for lag in lags:
        if lag >= 0:
            a, b = e[:n - lag] if lag else e, r[lag:]
        else:
            a, b = e[-lag:], r[:n + lag]
        if a.size < 2:
            continue
        val = float(np.dot(a, b))
        if val > best_val:
            best_val, best_lag = val, lag
    return best_lag


def compute_metrics(est, ref, nis=None, nis_dim=None, nees=None, burn_in=0,
                    runtime_s=0.0, channels=()) -> MetricsReport:
    """RMSE, peak error, lag and consistency statistics per channel."""
    est = np.atleast_2d(np.asarray(est, dtype=float))
    ref = np.atleast_2d(np.asarray(ref, dtype=float))
    if est.shape != ref.shape:
        raise ValueError(f"estimate {est.shape} and reference {ref.shape} differ")
    if est.shape[0] <= burn_in:
        raise ValueError("no overlap left after burn-in")
    e = est[burn_in:] - ref[burn_in:]
    rmse = np.sqrt(np.mean(e ** 2, axis=0))
    peak = np.abs(e).max(axis=0)
    lags = np.array([crosscorr_lag(est[burn_in:, i], ref[burn_in:, i])
                     for i in range(est.shape[1])], dtype=int)

    nis_mean, in_band = np.nan, np.nan
    if nis is not None and nis_dim:
        from scipy.stats import chi2

        vals = np.asarray(nis, dtype=float)
        vals = vals[np.isfinite(vals)]
        if vals.size:
            lo, hi = chi2.ppf([0.025, 0.975], df=nis_dim)
            nis_mean = float(vals.mean())
            in_band = float(np.mean((vals >= lo) & (vals <= hi)))
    nees_mean = float(np.mean(nees)) if nees is not None else np.nan
    return MetricsReport(rmse=rmse, peak_error=peak, lag_ticks=lags,
                         nis_mean=nis_mean, nis_in_band_frac=in_band,
                         nees_mean=nees_mean, runtime_s=runtime_s,
                         channels=tuple(channels))


# ---------------------------------------------------------------------------
# full experiment orchestration

@dataclass(eq=False)
class ExperimentRecord:
    """Everything one synthetic run produced."""
    config: object
    truth: TruthTrajectory
    log: SensorLog
    trace: EstimateTrace
    est_ldv: np.ndarray       # estimates at the LDV reference channels
    nees: np.ndarray | None = None


def run_experiment(cfg, gauge_element_ids=None, prediction_only=False,
                   keep_covariances=False, components=None):
    """Simulate truth, sample sensors, estimate and score one run.

    ``gauge_element_ids`` restricts the fused gauge set (placement
    ablations); the recorded log always carries the restricted set so
    runs with different sensor counts share nothing but the seed.
    Returns (ExperimentRecord, MetricsReport).
    """
    from . import config as config_mod
    from .modal import build_state_space
    from .sensors import GaugeModel

    cfg.validate()
    if components is None:
        model, basis, ss, gauges, camera, gauge_model = config_mod.build_components(cfg)
    else:
        model, basis, ss, gauges, camera, gauge_model = components
    if gauge_element_ids is not None:
        gauges = gauges.subset(gauge_element_ids)
        ss = build_state_space(basis, model, cfg.dt_tick(), gauges=gauges,
                               camera=camera)
        gauge_model = GaugeModel(gauges, basis)

    motion = config_mod.build_motion(cfg)
    truth = simulate_truth(model, motion, duration=cfg.duration_s)
    log = sample_sensors(
        truth, model, gauges, camera, f_sg=cfg.f_sg_hz,
        ldv_channels=cfg.ldv_channels,
        truth_noise={"r_b": cfg.truth_r_b_n2, "r_c": cfg.truth_r_c_n2,
                     "r_t": cfg.truth_r_t_m2},
        seeds=(cfg.seed_gauge_noise, cfg.seed_camera_noise),
        through_projection=cfg.camera_through_projection)

    fused_idx = config_mod.fused_channel_indices(cfg, camera)
    trace = run_estimator(
        ss, gauge_model, log, camera, q=cfg.q, P0=cfg.p0_diag,
        highpass=(cfg.highpass_fc_hz, cfg.f_sg_hz),
        fused_channel_idx=fused_idx,
        use_gauges=not prediction_only, use_camera=not prediction_only,
        lag_noise_scale=cfg.oosm_lag_noise_scale,
        keep_covariances=keep_covariances)

    ldv_idx = ldv_dof_indices(model, cfg.ldv_channels)
    est_ldv = channel_estimates(trace, basis.phi, ldv_idx)

    nees = None
    if keep_covariances:
        nees = _nees_series(trace, truth, model, basis, cfg)

    burn = min(cfg.burn_in_ticks(), max(log.n_ticks - 1, 0))
    report = compute_metrics(
        est_ldv, log.ldv, nis=trace.nis_sg, nis_dim=gauges.n_sg,
        nees=nees, burn_in=burn, runtime_s=trace.runtime_s,
        channels=tuple(f"{n}{a}" for n, a in cfg.ldv_channels))
    record = ExperimentRecord(config=cfg, truth=truth, log=log, trace=trace,
                              est_ldv=est_ldv, nees=nees)
    return record, report


def _nees_series(trace: EstimateTrace, truth: TruthTrajectory, model, basis, cfg):
    """NEES against the modal projection of the full-order truth."""
    per_tick = int(round((1.0 / cfg.f_sg_hz) / truth.dt))
    steps = per_tick * (1 + np.arange(trace.n_ticks))
    q_t = truth.q_at(steps)
    qd_t = truth.qdot_at(steps)
    proj = model.M @ basis.phi            # eta_p = phi^T M q
    x_true = np.hstack([q_t @ proj, qd_t @ proj])
    nees = np.zeros(trace.n_ticks)
    for k in range(trace.n_ticks):
        e = trace.xhat[k] - x_true[k]
        nees[k] = float(e @ np.linalg.solve(trace.P_hist[k], e))
    return nees


# ---------------------------------------------------------------------------
# CSV writers for the external interfaces

def write_sensor_csv(log: SensorLog, path):
    """Long-format sensor samples: t, sensor_id, value."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,sensor_id,value\n")
        times = log.times
        for k in range(log.n_ticks):
            for j, eid in enumerate(log.gauge_element_ids):
                fh.write(f"{times[k]:.17g},sg{eid},{log.gauge[k, j]:.17g}\n")
        for i, kcap in enumerate(log.cam_capture_ticks):
            t = kcap * log.dt_tick
            for j in range(log.cam_values.shape[1]):
                fh.write(f"{t:.17g},cam{j},{log.cam_values[i, j]:.17g}\n")


def write_estimate_csv(trace: EstimateTrace, path):
    """Wide-format estimate trace with covariance and NIS diagnostics."""
    n_x = trace.xhat.shape[1]
    cols = ["tick", "t"] + [f"xhat{i}" for i in range(n_x)] \
        + ["trace_P", "nis_sg", "nis_cam"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        times = trace.times
        for k in range(trace.n_ticks):
            row = [str(k + 1), f"{times[k]:.17g}"]
            row += [f"{v:.17g}" for v in trace.xhat[k]]
            row += [f"{trace.trace_P[k]:.17g}", f"{trace.nis_sg[k]:.17g}",
                    f"{trace.nis_cam[k]:.17g}"]
            fh.write(",".join(row) + "\n")


def write_reference_csv(log: SensorLog, path):
    """LDV-style noiseless reference channels, one column per channel."""
    names = [f"{n}{a}" for n, a in log.ldv_channels]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t," + ",".join(names) + "\n")
        times = log.times
        for k in range(log.n_ticks):
            vals = ",".join(f"{v:.17g}" for v in log.ldv[k])
            fh.write(f"{times[k]:.17g},{vals}\n")
