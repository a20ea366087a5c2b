"""Exact nonlinear power flow for PQ-bus multiphase feeders.

The solver iterates the fixed-point map

    v  <-  YLL^-1 (conj(s / v) - YL0 v0)

starting from the no-load voltage ``w = -YLL^-1 YL0 v0``.  Convergence
is declared on the power-balance residual, so a returned state always
satisfies the nodal equations to ``tol``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import PowerFlowError
from .feeder import MultiphaseAdmittance

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 200


@dataclass(frozen=True)
class StateVector:
    """Voltage phasors and net power injections at all non-slack phases."""

    v: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        if self.v.shape != self.s.shape:
            raise ValueError("v and s must have the same length")


def no_load_voltage(adm: MultiphaseAdmittance, v0: np.ndarray) -> np.ndarray:
    """Voltage with all injections zero: ``w = -YLL^-1 YL0 v0``."""
    return np.linalg.solve(adm.YLL, -adm.YL0 @ np.asarray(v0, dtype=complex))


def power_flow_residual(
    adm: MultiphaseAdmittance, v: np.ndarray, s: np.ndarray, v0: np.ndarray
) -> float:
    """Max-norm mismatch between injected and computed power."""
    i_load = adm.YLL @ v + adm.YL0 @ v0
    return float(np.max(np.abs(v * np.conj(i_load) - s)))


def solve_power_flow(
    adm: MultiphaseAdmittance,
    s: np.ndarray,
    v0: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> StateVector:
    """Solve the nonlinear power flow for the given injections.

    Parameters
    ----------
    adm : MultiphaseAdmittance
        Partitioned network matrix.
    s : ndarray
        Complex net injection per non-slack phase (loads negative), p.u.
    v0 : ndarray
        Slack voltage phasors, p.u.
    tol : float
        Residual bound, max-norm of the power mismatch.
    max_iter : int
        Iteration cap; exceeding it signals infeasible loading.

    Returns
    -------
    StateVector
        Converged voltages and the echoed injections.

    Raises
    ------
    PowerFlowError
        On divergence, the iteration cap, or a zero voltage iterate.
    """
    s = np.asarray(s, dtype=complex)
    v0 = np.asarray(v0, dtype=complex)
    if s.shape != (adm.YLL.shape[0],):
        raise ValueError(f"injection vector must have length {adm.YLL.shape[0]}")

    lu = lu_factor(adm.YLL)
    rhs0 = -adm.YL0 @ v0
    v = lu_solve(lu, rhs0)  # no-load start; exact solution for s = 0
    for _ in range(max_iter):
        if power_flow_residual(adm, v, s, v0) <= tol:
            return StateVector(v=v, s=s.copy())
        if np.any(np.abs(v) == 0.0):
            raise PowerFlowError("zero voltage iterate; loading infeasible")
        v = lu_solve(lu, np.conj(s / v) + rhs0)
        if not np.all(np.isfinite(v)):
            raise PowerFlowError("power flow diverged (non-finite iterate)")
    raise PowerFlowError(
        f"power flow did not converge in {max_iter} iterations; "
        "injections likely exceed the loadability of the feeder"
    )
