"""Modal analysis, truncation and the reduced state-space model.

Solves the generalized symmetric eigenproblem (K - w^2 M) phi = 0 with
mass-normalized eigenvectors, keeps the lowest modes, and builds the
block state-space system

    A = [[0, I], [-diag(w^2), -diag(2 zeta w)]]

together with its zero-order-hold discretization F = expm(A dt).

Note on the modal matrices: decoupling the Rayleigh-damped equations
yields diag(w^2) for the stiffness block and diag(2 zeta w) for the
damping block; anything else is dimensionally inconsistent with
zeta_i = (alpha0/w_i + alpha1 w_i)/2, which is what is implemented here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ModelError
from .model import AssembledModel
from .validation import check_positive

MASS_NORM_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class ModalBasis:
    phi: np.ndarray    # (n, n_p) mass-normalized mode shapes
    omega: np.ndarray  # (n_p,) natural frequencies, rad/s, ascending
    zeta: np.ndarray   # (n_p,) modal damping ratios

    @property
    def n_modes(self):
        return self.omega.size

    def frequencies_hz(self):
        return self.omega / (2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class ModalStateSpace:
    A: np.ndarray       # (2p, 2p) continuous system matrix
    B: np.ndarray       # (2p, m_u) actuator input map
    E: np.ndarray       # (2p, m_d) disturbance map
    C_t: np.ndarray     # (m_cam, 2p) camera output rows (displacement half)
    H0: np.ndarray      # (m_sg, 2p) strain-gauge force Jacobian at x = 0
    F: np.ndarray       # (2p, 2p) discrete transition matrix for step dt
    dt: float
    omega: np.ndarray
    zeta: np.ndarray

    @property
    def n_modes(self):
        return self.omega.size


def modal_damping(omega, alpha0, alpha1):
    """Rayleigh modal damping ratios zeta_i = (alpha0/w_i + alpha1 w_i)/2."""
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    if np.any(w <= 0.0):
        raise ValueError("modal frequencies must be > 0")
    check_positive(alpha0, "alpha0", strict=False)
    check_positive(alpha1, "alpha1", strict=False)
    zeta = 0.5 * (alpha0 / w + alpha1 * w)
    return zeta if np.ndim(omega) else float(zeta[0])


def solve_modes(model: AssembledModel, n_p: int) -> ModalBasis:
    """Lowest n_p modes of (K - w^2 M) phi = 0, mass-normalized.

    The sign of each eigenvector is fixed by making its largest-magnitude
    entry positive so repeated runs produce identical output.
    """
    if not 1 <= n_p <= model.n:
        raise ValueError(f"n_p must be in 1..{model.n}, got {n_p}")
    try:
        np.linalg.cholesky(model.M)
    except np.linalg.LinAlgError as exc:
        raise ModelError("mass matrix is not positive definite") from exc

    w2, vecs = scipy.linalg.eigh(model.K, model.M,
                                 subset_by_index=[0, n_p - 1])
    if w2[0] <= 0.0:
        raise ModelError("non-positive eigenvalue: stiffness matrix is singular")
    for j in range(vecs.shape[1]):
        i = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[i, j] < 0.0:
            vecs[:, j] = -vecs[:, j]
    omega = np.sqrt(w2)
    zeta = modal_damping(omega, model.params.alpha0, model.params.alpha1)
    return ModalBasis(phi=vecs, omega=omega, zeta=np.atleast_1d(zeta))


def system_matrix(omega, zeta):
    """Continuous block matrix [[0, I], [-diag(w^2), -diag(2 zeta w)]]."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    p = omega.size
    A = np.zeros((2 * p, 2 * p))
    A[:p, p:] = np.eye(p)
    A[p:, :p] = -np.diag(omega ** 2)
    A[p:, p:] = -np.diag(2.0 * zeta * omega)
    return A


def discretize(A, dt):
    """Zero-order-hold transition matrix F = expm(A dt)."""
    check_positive(dt, "dt")
    return scipy.linalg.expm(np.asarray(A, dtype=float) * dt)


def output_rows(basis: ModalBasis, dof_indices):
    """Displacement-selecting output rows: [Phi_p[dof], 0] per tracked DOF."""
    p = basis.n_modes
    rows = np.zeros((len(dof_indices), 2 * p))
    for r, idx in enumerate(dof_indices):
        rows[r, :p] = basis.phi[idx, :]
    return rows


def build_state_space(basis: ModalBasis, model: AssembledModel, dt,
                      gauges=None, camera=None,
                      actuator_map=None, disturbance_map=None) -> ModalStateSpace:
    """Assemble the reduced state-space model for a sensor suite.

    ``gauges`` and ``camera`` come from :mod:`trussfusion.sensors`; the
    strain-gauge output block is the force Jacobian at x = 0.
    """
    p = basis.n_modes
    A = system_matrix(basis.omega, basis.zeta)

    def input_block(full_map):
        if full_map is None:
            return np.zeros((2 * p, 0))
        fm = np.asarray(full_map, dtype=float)
        if fm.shape[0] != model.n:
            raise ModelError(f"input map must have {model.n} rows, got {fm.shape}")
        blk = np.zeros((2 * p, fm.shape[1]))
        blk[p:, :] = basis.phi.T @ fm
        return blk

    B = input_block(actuator_map)
    E = input_block(disturbance_map)

    if camera is not None:
        C_t = output_rows(basis, camera.dof_indices)
    else:
        C_t = np.zeros((0, 2 * p))

    if gauges is not None:
        from .sensors import GaugeModel

        H0 = GaugeModel(gauges, basis).forces_and_jacobian(np.zeros(2 * p))[1]
    else:
        H0 = np.zeros((0, 2 * p))

    F = discretize(A, dt)
    return ModalStateSpace(A=A, B=B, E=E, C_t=C_t, H0=H0, F=F, dt=float(dt),
                           omega=basis.omega.copy(), zeta=basis.zeta.copy())


# ---------------------------------------------------------------------------
# plain-text matrix dumps shared by the placement and estimator CLIs

def write_matrix_dump(fh, name, arr):
    """Write one matrix as ``# name rows cols`` followed by row-major text."""
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    fh.write(f"# {name} {arr.shape[0]} {arr.shape[1]}\n")
    for row in arr:
        fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def read_matrix_dump(fh):
    """Read every matrix from a dump file into a name -> array dict."""
    out = {}
    name, rows, cols, buf = None, 0, 0, []

    def flush():
        if name is not None:
            arr = np.array(buf, dtype=float).reshape(rows, cols)
            out[name] = arr

    for line in fh:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            flush()
            parts = line[1:].split()
            name, rows, cols = parts[0], int(parts[1]), int(parts[2])
            buf = []
        else:
            buf.extend(float(v) for v in line.split())
    flush()
    return out
