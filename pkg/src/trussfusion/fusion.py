"""Multi-rate fusion engine: EKF with an l-step-lag OOSM camera update.

Every gauge tick runs the prediction and, when a force sample is
present, the EKF strain update on high-pass filtered innovations.  When
a delayed camera sample (captured l ticks earlier) arrives, the one-step
l-step-lag OOSM update folds it into the current posterior using the
stored posterior from the capture tick.

Two deliberate deviations from the published OOSM formulas, both forced
by the in-sequence reprocessing equivalence that the tests pin down:

* The equivalent-innovation information matrix is used in its collapsed
  form S*^-1 = P^-1 - P^-1 P_k^+ P^-1 with P = P_{k|k-l}; the literal
  nested-inverse expression is algebraically identical and kept behind
  a debug flag (asserted equal in tests).
* The retrodiction noise cross-covariance carries its trailing noise
  factor, P_xv = (I - P_{k|k-l} S*^-1) Q_{k,kappa}.  Without it the
  expression is dimensionally inconsistent and the zero-process-noise
  case no longer reproduces exact reprocessing.

The camera innovation is formed as (y_cam - p0) - C_t x_retro, i.e.
measured minus predicted displacement with the positive displacement
convention used by the output rows.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import BufferMissError, FilterNumericsError
from .sensors import HighpassFilter
from .validation import check_square, symmetrize, min_eig_ratio


@dataclass(eq=False)
class FilterState:
    """Posterior snapshot: estimate, covariance and tick index."""
    x: np.ndarray
    P: np.ndarray
    tick: int


class OosmBuffer:
    """Ring buffer of recent posteriors keyed by tick."""

    def __init__(self, depth):
        if depth < 1:
            raise ValueError("buffer depth must be >= 1")
        self._buf = deque(maxlen=depth)

    def append(self, state: FilterState):
        if self._buf and state.tick != self._buf[-1].tick + 1:
            raise ValueError("buffer entries must be contiguous in tick")
        self._buf.append(state)

    def get(self, tick) -> FilterState:
        for entry in self._buf:
            if entry.tick == tick:
                return entry
        held = [e.tick for e in self._buf]
        raise BufferMissError(
            f"posterior for tick {tick} not buffered (held: {held}); "
            "camera lag exceeds buffer depth")

    def __len__(self):
        return len(self._buf)


@dataclass(eq=False)
class StepDiagnostics:
    tick: int
    nis_sg: float = np.nan
    nis_cam: float = np.nan
    min_eig_ratio: float = np.nan


def _solve_spd(S, B, what):
    """Solve S X = B for symmetric positive definite S."""
    try:
        c, low = scipy.linalg.cho_factor(symmetrize(S), check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        cond = float(np.linalg.cond(S))
        raise FilterNumericsError(
            f"{what} covariance is not positive definite "
            f"(cond ~ {cond:.3e}); check noise settings") from exc
    return scipy.linalg.cho_solve((c, low), B, check_finite=False)


class FusionFilter:
    """EKF over the reduced modal model with strain and delayed camera data.

    Parameters
    ----------
    F : (2p, 2p) discrete transition matrix at the gauge rate.
    q : scalar process noise density; Q = q I.
    strain_model : callable x -> (h(x), H(x)) or None for camera-only use.
    R_sg : (n_sg, n_sg) strain measurement covariance.
    C_t : (m, 2p) camera output rows; None disables camera updates.
    R_cam : (m, m) camera measurement covariance.
    p0 : (m,) rest coordinates of the camera channels; camera samples are
        positions and are converted to displacements via y - p0.
    lag : OOSM lag in ticks (kappa = k - lag).
    highpass : (fc, fs) for the force-channel filters, or None to fuse
        raw innovations.
    lag_noise_scale : multiplier on Q for the accumulated lag noise;
        default sqrt(lag) generalizes the published sqrt(3) for lag 3.
    """

    def __init__(self, F, q, R_sg=None, strain_model=None, C_t=None, R_cam=None,
                 p0=None, lag=3, highpass=(0.1, 200.0), x0=None, P0=1e-4,
                 lag_noise_scale=None, literal_equivalent_innovation=False,
                 track_health=False):
        self.F = check_square(F, "F")
        self.nx = self.F.shape[0]
        self.q = float(q)
        self.Q = self.q * np.eye(self.nx)
        self.strain_model = strain_model
        self.R_sg = None if R_sg is None else check_square(R_sg, "R_sg")
        self.C_t = None if C_t is None else np.asarray(C_t, dtype=float)
        self.R_cam = None if R_cam is None else check_square(R_cam, "R_cam")
        if self.C_t is not None:
            m = self.C_t.shape[0]
            self.p0 = np.zeros(m) if p0 is None else np.asarray(p0, dtype=float)
        else:
            self.p0 = None
        self.lag = int(lag)
        if self.lag < 0:
            raise ValueError("lag must be >= 0")
        self.F_lag = np.linalg.matrix_power(self.F, self.lag)
        self.F_lag_inv = np.linalg.inv(self.F_lag)
        scale = np.sqrt(self.lag) if lag_noise_scale is None else float(lag_noise_scale)
        self.Q_lag = scale * self.Q
        self.literal_equivalent_innovation = bool(literal_equivalent_innovation)
        self.track_health = bool(track_health)
        self.health_log = []

        self.x = np.zeros(self.nx) if x0 is None else np.asarray(x0, dtype=float).copy()
        self.P = P0 * np.eye(self.nx) if np.isscalar(P0) else np.asarray(P0, dtype=float).copy()
        self.tick = 0
        self.buffer = OosmBuffer(depth=self.lag + 2)

        if highpass is not None and strain_model is not None:
            fc, fs = highpass
            n_sg = self.R_sg.shape[0]
            self.hp_meas = HighpassFilter(fc, fs, n_sg)
            self.hp_pred = HighpassFilter(fc, fs, n_sg)
        else:
            self.hp_meas = self.hp_pred = None

    # -- core steps ---------------------------------------------------------

    def predict(self):
        """x <- F x, P <- F P F^T + Q (u and z are zero/unknown)."""
        self.x = self.F @ self.x
        self.P = symmetrize(self.F @ self.P @ self.F.T + self.Q)
        self._note_health()

    def update_strain(self, y_sg):
        """EKF update on (high-passed) force innovations; returns NIS."""
        if self.strain_model is None:
            raise ValueError("filter was built without a strain model")
        y_sg = np.asarray(y_sg, dtype=float)
        h, H = self.strain_model(self.x)
        if self.hp_meas is not None:
            y_t = self.hp_meas.step(y_sg)
            h_t = self.hp_pred.step(h)
        else:
            y_t, h_t = y_sg, h
        innov = y_t - h_t
        S = H @ self.P @ H.T + self.R_sg
        K = _solve_spd(S, H @ self.P, "strain innovation").T
        nis = float(innov @ _solve_spd(S, innov, "strain innovation"))
        self.x = self.x + K @ innov
        self.P = symmetrize((np.eye(self.nx) - K @ H) @ self.P)
        self._note_health()
        return nis

    def _equivalent_innovation_information(self, P_kkl_inv, P_plus):
        if not self.literal_equivalent_innovation:
            return P_kkl_inv - P_kkl_inv @ P_plus @ P_kkl_inv
        inner = np.linalg.inv(P_kkl_inv + np.linalg.inv(P_plus) - P_kkl_inv)
        return P_kkl_inv - P_kkl_inv @ inner @ P_kkl_inv

    def oosm_update(self, y_cam, lag=None):
        """One-step l-lag OOSM update with a camera sample captured at k - l.

        Returns the NIS of the retrodicted camera innovation.
        """
        if self.C_t is None:
            raise ValueError("filter was built without a camera model")
        y_cam = np.asarray(y_cam, dtype=float)
        if lag is None or lag == self.lag:
            lag, F_lag, F_lag_inv, Q_lag = self.lag, self.F_lag, self.F_lag_inv, self.Q_lag
        else:
            lag = int(lag)
            F_lag = np.linalg.matrix_power(self.F, lag)
            F_lag_inv = np.linalg.inv(F_lag)
            Q_lag = np.sqrt(lag) * self.Q

        kappa = self.tick - lag
        stored = self if kappa == self.tick else self.buffer.get(kappa)
        P_kkl = symmetrize(F_lag @ stored.P @ F_lag.T + Q_lag)
        P_kkl_inv = _solve_spd(P_kkl, np.eye(self.nx), "lagged prior")
        S_star_inv = self._equivalent_innovation_information(P_kkl_inv, self.P)
        P_xv = (np.eye(self.nx) - P_kkl @ S_star_inv) @ Q_lag

        x_retro = F_lag_inv @ self.x
        P_retro = symmetrize(
            F_lag_inv @ (self.P + Q_lag - P_xv - P_xv.T) @ F_lag_inv.T)

        P_xy = (self.P - P_xv) @ F_lag_inv.T @ self.C_t.T
        S = self.C_t @ P_retro @ self.C_t.T + self.R_cam
        W = _solve_spd(S, P_xy.T, "camera innovation").T
        innov = (y_cam - self.p0) - self.C_t @ x_retro
        nis = float(innov @ _solve_spd(S, innov, "camera innovation"))
        self.x = self.x + W @ innov
        self.P = symmetrize(self.P - W @ P_xy.T)
        self._note_health()
        return nis

    def step(self, y_sg=None, y_cam=None) -> StepDiagnostics:
        """Advance one gauge tick: predict, fuse what arrived, buffer."""
        self.tick += 1
        n0 = len(self.health_log)
        self.predict()
        diag = StepDiagnostics(tick=self.tick)
        if y_sg is not None:
            diag.nis_sg = self.update_strain(y_sg)
        if y_cam is not None:
            diag.nis_cam = self.oosm_update(y_cam)
        self.buffer.append(FilterState(self.x.copy(), self.P.copy(), self.tick))
        if self.track_health and len(self.health_log) > n0:
            diag.min_eig_ratio = min(self.health_log[n0:])
        return diag

    def _note_health(self):
        if self.track_health:
            self.health_log.append(min_eig_ratio(self.P))

    @property
    def state(self) -> FilterState:
        return FilterState(self.x.copy(), self.P.copy(), self.tick)
