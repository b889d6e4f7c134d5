"""Greedy strain-gauge placement by observability Gramian trace.

Backward elimination: starting from the full gauge set (camera rows are
always retained), repeatedly drop the gauge whose removal keeps the
largest Gramian trace.  Because trace(W_o) is additive over output rows,
each gauge's contribution is the quadratic form h_i G h_i^T with G the
Lyapunov solution of G = F G F^T + I; the greedy step evaluates exactly
the single-removal candidates through these contributions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_square


def solve_discrete_lyapunov(A, C, tol=1e-12, max_doublings=200):
    """Solve X = A^T X A + C by fixed-point doubling.

    Requires the spectral radius of A to be < 1.  Doubling squares the
    propagator each sweep, so convergence is reached in O(log) steps.
    """
    A = check_square(A, "A")
    C = check_square(C, "C")
    rho = float(np.max(np.abs(np.linalg.eigvals(A))))
    if rho >= 1.0:
        raise ValueError(f"spectral radius {rho:.6f} >= 1; Gramian does not exist")
    X = C.copy()
    Ak = A.copy()
    for _ in range(max_doublings):
        incr = Ak.T @ X @ Ak
        X_new = X + incr
        if np.abs(incr).max() <= tol * max(np.abs(X_new).max(), 1.0):
            return 0.5 * (X_new + X_new.T)
        X = X_new
        Ak = Ak @ Ak
    raise RuntimeError("Lyapunov doubling did not converge; A is too close to "
                       "the unit circle")


def observability_gramian(F, H_stack):
    """W_o = F^T W_o F + H^T H for the discrete system (F, H_stack)."""
    H = np.atleast_2d(np.asarray(H_stack, dtype=float))
    return solve_discrete_lyapunov(F, H.T @ H)


def gauge_trace_contributions(F, H_rows):
    """Per-row Gramian trace contributions h_i G h_i^T.

    G solves G = F G F^T + I; additivity of trace(W_o) over output rows
    makes these exact single-row contributions for any retained set.
    """
    F = check_square(F, "F")
    G = solve_discrete_lyapunov(F.T, np.eye(F.shape[0]))
    H = np.atleast_2d(np.asarray(H_rows, dtype=float))
    return np.einsum("ij,jk,ik->i", H, G, H)


@dataclass(eq=False)
class PlacementResult:
    removal_order: list          # element ids, first removed first
    trace_curve: list            # (n_sg, normalized trace), n_sg descending
    selected_sets: dict          # n_sg -> tuple of retained element ids

    def retained(self, n_sg):
        if n_sg not in self.selected_sets:
            raise KeyError(f"no selection recorded for n_sg={n_sg}")
        return self.selected_sets[n_sg]


def greedy_prune(F, H0, gauge_element_ids, C_t=None, target_n_sg=0) -> PlacementResult:
    """Backward greedy gauge elimination maximizing the Gramian trace.

    H0 holds one row per gauge, C_t the camera rows that stay in every
    candidate set.  Ties are broken toward the lowest element id.  The
    curve is normalized to the full-set trace.
    """
    H0 = np.atleast_2d(np.asarray(H0, dtype=float))
    ids = [int(i) for i in gauge_element_ids]
    if H0.shape[0] != len(ids):
        raise ValueError("one H0 row per gauge element is required")
    if target_n_sg < 0:
        raise ValueError("target_n_sg must be >= 0")

    contrib = gauge_trace_contributions(F, H0)
    base = 0.0
    if C_t is not None and np.asarray(C_t).size:
        base = float(np.trace(observability_gramian(F, C_t)))
    full = base + float(contrib.sum())
    if full <= 0.0:
        raise ValueError("total Gramian trace is zero; no observable output")

    remaining = list(range(len(ids)))
    current = full
    removal_order = []
    trace_curve = [(len(ids), current / full)]
    selected_sets = {len(ids): tuple(ids[i] for i in remaining)}

    while len(remaining) > target_n_sg:
        # best single removal = smallest contribution; lowest id on ties
        best = min(remaining, key=lambda i: (contrib[i], ids[i]))
        remaining.remove(best)
        removal_order.append(ids[best])
        current -= float(contrib[best])
        n_sg = len(remaining)
        trace_curve.append((n_sg, max(current, 0.0) / full))
        selected_sets[n_sg] = tuple(ids[i] for i in remaining)

    return PlacementResult(removal_order, trace_curve, selected_sets)
