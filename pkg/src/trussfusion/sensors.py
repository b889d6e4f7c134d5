"""Measurement models: strain-gauge forces, camera projection, noise.

Strain gauges report the axial element force

    F_e^i = gamma^i (|| d^i q + e0^i ||_2 - L0^i)

evaluated on the modal displacement reconstruction q = Phi_p eta.  The
camera reports in-plane (x, z) positions of tracked nodes; the synthetic
sensing path runs project -> distort -> undistort -> back-project at the
known rest depth so lens/projection residuals show up in the samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CollapsedElementError, ModelError, NotConvergedError
from .model import AXES, COLUMN_CLASSES, AssembledModel
from .validation import as_float_array, check_positive


# ---------------------------------------------------------------------------
# strain gauges

@dataclass(frozen=True, eq=False)
class StrainGaugeSet:
    """Measured element subset with class indicators and noise weights."""
    element_ids: tuple[int, ...]
    kinematics: tuple              # ElementKinematics per measured element
    is_bracing: np.ndarray         # bool (n_sg,), the paper's b vector
    r_b: float                     # bracing noise variance, N^2
    r_c: float                     # column noise variance, N^2

    def __post_init__(self):
        if self.n_sg < 1:
            raise ModelError("strain gauge set must contain at least one element")
        check_positive(self.r_b, "r_b")
        check_positive(self.r_c, "r_c")

    @property
    def n_sg(self):
        return len(self.element_ids)

    @property
    def is_column(self):
        return ~self.is_bracing

    def variances(self):
        return np.where(self.is_bracing, self.r_b, self.r_c)

    @staticmethod
    def from_model(model: AssembledModel, element_ids=None, r_b=1e-3, r_c=1e-3):
        by_id = {k.element_id: k for k in model.element_kinematics}
        cls_by_id = {e.id: e.cls for e in model.geometry.elements}
        if element_ids is None:
            element_ids = tuple(sorted(by_id))
        element_ids = tuple(int(i) for i in element_ids)
        missing = [i for i in element_ids if i not in by_id]
        if missing:
            raise ModelError(f"gauge elements not in model: {missing}")
        kin = tuple(by_id[i] for i in element_ids)
        is_bracing = np.array([cls_by_id[i] not in COLUMN_CLASSES
                               for i in element_ids], dtype=bool)
        return StrainGaugeSet(element_ids, kin, is_bracing, float(r_b), float(r_c))

    def subset(self, element_ids):
        keep = tuple(int(i) for i in element_ids)
        idx = {e: j for j, e in enumerate(self.element_ids)}
        missing = [i for i in keep if i not in idx]
        if missing:
            raise ModelError(f"gauge subset not in set: {missing}")
        sel = [idx[i] for i in keep]
        return StrainGaugeSet(keep, tuple(self.kinematics[j] for j in sel),
                              self.is_bracing[sel], self.r_b, self.r_c)


class GaugeModel:
    """Force model and Jacobian for a gauge set on a modal basis.

    Precomputes the per-element maps T^i = d^i Phi_p (3 x n_p) so force
    and Jacobian evaluations are vectorized over the measured elements.
    Instances are callable as ``h(x) -> (forces, jacobian)`` which is
    the interface the fusion filter consumes.
    """

    def __init__(self, gauges: StrainGaugeSet, basis):
        self.gauges = gauges
        self.n_p = basis.n_modes
        phi_pad = np.vstack([basis.phi, np.zeros((1, self.n_p))])
        idx = np.array([k.dof_idx for k in gauges.kinematics])  # (n_sg, 3, 2)
        self.T = phi_pad[idx[:, :, 1]] - phi_pad[idx[:, :, 0]]  # (n_sg, 3, n_p)
        self.e0 = np.array([k.e0 for k in gauges.kinematics])
        self.L0 = np.array([k.L0 for k in gauges.kinematics])
        self.gamma = np.array([k.gamma for k in gauges.kinematics])

    def _current_vectors(self, x):
        x = np.asarray(x, dtype=float)
        eta = x[:self.n_p]
        e = self.e0 + np.einsum("ijk,k->ij", self.T, eta)
        L = np.linalg.norm(e, axis=1)
        if np.any(L < 1e-9 * self.L0):
            bad = self.gauges.element_ids[int(np.argmin(L / self.L0))]
            raise CollapsedElementError(
                f"element {bad} collapsed to zero length; force Jacobian undefined")
        return e, L

    def forces(self, x):
        _, L = self._current_vectors(x)
        return self.gamma * (L - self.L0)

    def forces_and_jacobian(self, x):
        e, L = self._current_vectors(x)
        forces = self.gamma * (L - self.L0)
        unit = e / L[:, None]
        H = np.zeros((self.gauges.n_sg, 2 * self.n_p))
        H[:, :self.n_p] = self.gamma[:, None] * np.einsum("ij,ijk->ik", unit, self.T)
        return forces, H

    def forces_from_q(self, q):
        """Exact forces from a full-order displacement vector (truth path)."""
        rel = np.array([k.relative_displacement(q) for k in self.gauges.kinematics])
        L = np.linalg.norm(self.e0 + rel, axis=1)
        return self.gamma * (L - self.L0)

    def forces_from_q_batch(self, Q):
        """Exact forces for a batch of displacement vectors, (n_t, n) -> (n_t, n_sg)."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        q_pad = np.hstack([Q, np.zeros((Q.shape[0], 1))])
        idx = np.array([k.dof_idx for k in self.gauges.kinematics])  # (n_sg, 3, 2)
        rel = q_pad[:, idx[:, :, 1]] - q_pad[:, idx[:, :, 0]]        # (n_t, n_sg, 3)
        L = np.linalg.norm(self.e0[None, :, :] + rel, axis=2)
        return self.gamma[None, :] * (L - self.L0[None, :])

    __call__ = forces_and_jacobian


def element_force(x, gauges: StrainGaugeSet, basis):
    """Axial forces of the measured elements at modal state x."""
    return GaugeModel(gauges, basis).forces(x)


def force_jacobian(x, gauges: StrainGaugeSet, basis):
    """Jacobian dF_e/dx (n_sg x 2 n_p); velocity columns are zero."""
    return GaugeModel(gauges, basis).forces_and_jacobian(x)[1]


def build_R_sg(gauges: StrainGaugeSet):
    """diag(b r_b + c r_c) over the measured elements."""
    return np.diag(gauges.variances())


# ---------------------------------------------------------------------------
# first-order Butterworth high-pass (bilinear transform)

def highpass_coefficients(fc, fs):
    """(b0, b1, a1) of the first-order Butterworth high-pass.

    y_k = b0 u_k + b1 u_{k-1} - a1 y_{k-1} with K = tan(pi fc / fs),
    b0 = 1/(1+K), b1 = -b0, a1 = (K-1)/(K+1).  b0 + b1 = 0 nulls DC.
    """
    check_positive(fc, "fc")
    check_positive(fs, "fs")
    if fc >= fs / 2:
        raise ValueError(f"fc={fc} must be below Nyquist {fs / 2}")
    K = np.tan(np.pi * fc / fs)
    b0 = 1.0 / (1.0 + K)
    return b0, -b0, (K - 1.0) / (K + 1.0)


class HighpassFilter:
    """Per-channel first-order high-pass state (direct form I)."""

    def __init__(self, fc, fs, n_channels=1):
        self.b0, self.b1, self.a1 = highpass_coefficients(fc, fs)
        self.fc, self.fs = float(fc), float(fs)
        self.u_prev = np.zeros(n_channels)
        self.y_prev = np.zeros(n_channels)

    def step(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        y = self.b0 * u + self.b1 * self.u_prev - self.a1 * self.y_prev
        self.u_prev = u.copy()
        self.y_prev = y.copy()
        return y

    def reset(self):
        self.u_prev[:] = 0.0
        self.y_prev[:] = 0.0


# ---------------------------------------------------------------------------
# camera

@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera tracking the (x, z) coordinates of selected nodes.

    Channel ordering is x then z per tracked node.  ``lag`` is the image
    processing delay in strain-gauge ticks, ``rate_divisor`` the ratio of
    gauge rate to camera rate.
    """
    node_ids: tuple[int, ...]
    rest_positions: np.ndarray        # (n_e, 3) world coordinates at q = 0
    node_dofs: np.ndarray             # (n_e, 3) free-DOF index per axis, -1 fixed
    fx: float = 2400.0
    fy: float = 2400.0
    cx: float = 968.0
    cy: float = 608.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    distortion: np.ndarray = field(default_factory=lambda: np.zeros(5))  # k1,k2,k3,p1,p2
    lag: int = 3
    rate_divisor: int = 2
    r_t: float = 1e-2                 # position noise variance, m^2
    axes: tuple[int, ...] = (0, 2)    # reported world axes per node

    def __post_init__(self):
        if self.rate_divisor < 1:
            raise ModelError("rate_divisor must be >= 1")
        if self.lag < 0:
            raise ModelError("camera lag must be >= 0")
        check_positive(self.r_t, "r_t")
        R = as_float_array(self.rotation, "rotation", shape=(3, 3))
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-9:
            raise ModelError("camera rotation is not orthonormal within 1e-9")

    @property
    def n_e(self):
        return len(self.node_ids)

    @property
    def n_channels(self):
        return len(self.axes) * self.n_e

    @property
    def channels(self):
        return tuple((nid, ax) for nid in self.node_ids for ax in self.axes)

    @property
    def dof_indices(self):
        """Free-DOF index per reported channel (x then z per node)."""
        return tuple(int(self.node_dofs[i, ax])
                     for i in range(self.n_e) for ax in self.axes)

    @property
    def p0(self):
        """Rest coordinates of the tracked channels."""
        return np.concatenate([self.rest_positions[i, list(self.axes)]
                               for i in range(self.n_e)])

    @staticmethod
    def from_model(model: AssembledModel, node_ids, standoff=2.0, height=None,
                   axes=(0, 2), **kwargs):
        """Camera in front of the y = min face at the given standoff.

        The optical axis points along +y; image v grows with world x and
        image w grows with -z (image rows run downward).
        """
        node_ids = tuple(int(i) for i in node_ids)
        pos = model.geometry.positions
        missing = [i for i in node_ids if i not in pos]
        if missing:
            raise ModelError(f"camera nodes not in model: {missing}")
        rest = np.array([pos[i] for i in node_ids])
        for nid in node_ids:
            for ax in axes:
                model.dof_index(nid, ax)  # raises if a reported DOF is fixed
        node_dofs = np.array([[model.dof_map.get((nid, ax), -1) for ax in range(3)]
                              for nid in node_ids], dtype=int)
        if height is None:
            height = float(np.mean(rest[:, 2]))
        center = np.array([float(np.mean(rest[:, 0])), float(rest[:, 1].min()) - standoff,
                           height])
        R = np.array([[1.0, 0.0, 0.0],
                      [0.0, 0.0, -1.0],
                      [0.0, 1.0, 0.0]])
        t = -R @ center
        return CameraModel(node_ids=node_ids, rest_positions=rest,
                           node_dofs=node_dofs, rotation=R, translation=t,
                           axes=tuple(axes), **kwargs)

    def subset_nodes(self, node_ids):
        """Restrict to a subset of tracked nodes (used to hold out references)."""
        keep = [i for i, nid in enumerate(self.node_ids) if nid in set(node_ids)]
        missing = set(node_ids) - set(self.node_ids)
        if missing:
            raise ModelError(f"camera subset nodes not tracked: {sorted(missing)}")
        return CameraModel(node_ids=tuple(self.node_ids[i] for i in keep),
                           rest_positions=self.rest_positions[keep],
                           node_dofs=self.node_dofs[keep], fx=self.fx, fy=self.fy,
                           cx=self.cx, cy=self.cy, rotation=self.rotation,
                           translation=self.translation, distortion=self.distortion,
                           lag=self.lag, rate_divisor=self.rate_divisor,
                           r_t=self.r_t, axes=self.axes)


def build_R_cam(camera: CameraModel):
    """r_t * I with rank 2 n_e."""
    return camera.r_t * np.eye(camera.n_channels)


def project_point(P, camera: CameraModel):
    """Pinhole projection of a world point to image coordinates."""
    P = as_float_array(P, "point", shape=(3,))
    Xc = camera.rotation @ P + camera.translation
    if Xc[2] <= 0.0:
        raise ValueError(f"point has non-positive depth {Xc[2]:.3g} in camera frame")
    return (camera.fx * Xc[0] / Xc[2] + camera.cx,
            camera.fy * Xc[1] / Xc[2] + camera.cy)


def distort_point(v, w, distortion):
    """Polynomial radial/tangential distortion of normalized coordinates."""
    k1, k2, k3, p1, p2 = np.asarray(distortion, dtype=float)
    r2 = v * v + w * w
    radial = 1.0 + k1 * r2 + k2 * r2 ** 2 + k3 * r2 ** 3
    vd = v * radial + 2.0 * p1 * v * w + p2 * (r2 + 2.0 * v * v)
    wd = w * radial + 2.0 * p2 * v * w + p1 * (r2 + 2.0 * w * w)
    return vd, wd


def undistort_point(vd, wd, distortion, tol=1e-12, max_iter=100):
    """Invert distort_point by fixed-point iteration from the distorted point."""
    k1, k2, k3, p1, p2 = np.asarray(distortion, dtype=float)
    v, w = float(vd), float(wd)
    for _ in range(max_iter):
        r2 = v * v + w * w
        radial = 1.0 + k1 * r2 + k2 * r2 ** 2 + k3 * r2 ** 3
        v_new = (vd - (2.0 * p1 * v * w + p2 * (r2 + 2.0 * v * v))) / radial
        w_new = (wd - (2.0 * p2 * v * w + p1 * (r2 + 2.0 * w * w))) / radial
        if abs(v_new - v) < tol and abs(w_new - w) < tol:
            return v_new, w_new
        v, w = v_new, w_new
    raise NotConvergedError(
        f"undistort did not converge within {max_iter} iterations for "
        f"({vd:.4g}, {wd:.4g}); distortion coefficients too extreme")


def camera_positions_through_projection(world_points, camera: CameraModel):
    """Measured world coordinates of LED points via the full pixel path.

    project -> distort -> undistort -> back-project at the rest depth.
    Residuals of the fixed-depth back-projection and any imperfect
    distortion inversion are what distinguishes this from an ideal tap.
    """
    world_points = np.atleast_2d(as_float_array(world_points, "world_points"))
    out = np.zeros_like(world_points)
    Rt = camera.rotation.T
    for i, P in enumerate(world_points):
        Xc = camera.rotation @ P + camera.translation
        if Xc[2] <= 0.0:
            raise ValueError("tracked point moved behind the camera")
        v, w = Xc[0] / Xc[2], Xc[1] / Xc[2]
        vd, wd = distort_point(v, w, camera.distortion)
        # pixel readout and normalization cancel exactly for a noiseless
        # sensor; noise is injected in meters after back-projection
        vu, wu = undistort_point(vd, wd, camera.distortion)
        X0 = camera.rotation @ camera.rest_positions[i] + camera.translation
        depth = X0[2]
        Xc_hat = np.array([vu * depth, wu * depth, depth])
        out[i] = Rt @ (Xc_hat - camera.translation)
    return out


def camera_output(x, camera: CameraModel, basis, through_projection=False):
    """Tracked displacement vector for modal state x.

    The plain path returns C_t x.  With ``through_projection`` the node
    positions are pushed through the synthetic pixel pipeline and the
    rest coordinates are subtracted, so projection error is included.
    """
    x = np.asarray(x, dtype=float)
    p = basis.n_modes
    q = basis.phi @ x[:p]
    if not through_projection:
        return np.array([q[idx] for idx in camera.dof_indices])
    world = tracked_world_positions(q, camera)
    measured = camera_positions_through_projection(world, camera)
    vals = np.concatenate([measured[i, list(camera.axes)]
                           for i in range(camera.n_e)])
    return vals - camera.p0


def tracked_world_positions(q, camera: CameraModel):
    """World positions of the tracked nodes for a full displacement vector."""
    q_pad = np.concatenate([np.asarray(q, dtype=float), [0.0]])
    return camera.rest_positions + q_pad[camera.node_dofs]
