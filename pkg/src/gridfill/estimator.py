"""Low-rank completion of the data matrix with a physics penalty.

The recovered matrix is parameterized as a product ``X = U V`` of a
tall and a wide factor, which bounds its rank by the factor width and
replaces the nuclear norm with ``(||U||_F^2 + ||V||_F^2) / 2``.  The
estimate minimizes

    (||U||_F^2 + ||V||_F^2) / 2
  + mu/2 * || masked(UV - M) ||_F^2
  + nu/2 * || voltage_rows(UV) - linear_model(power_rows(UV)) ||_2^2

by alternating exact minimizations over U and V.  Each subproblem is a
strongly convex quadratic (its Hessian is the identity plus PSD terms),
solved either through explicitly assembled normal equations or by
conjugate gradients on a matrix-free operator.

Index layout: every 5-row block of the matrix is one snapshot; rows
0..2 of a block (Re v, Im v, |v|) are tied to rows 3..4 (Re s, Im s)
through the linear voltage model.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.linalg import LinearOperator, cg

from .errors import ConfigError, NumericalError
from .linmodel import StackedLinearModel
from .measurements import MeasurementMatrix, ObservationMask, ROWS_PER_STEP

DESCENT_RTOL = 1e-9          # allowed relative objective increase
GRAD_NORM_FACTOR = 1e-8      # subproblem gradient bound: f * (1 + ||sol||_F)


# -- selector maps ----------------------------------------------------------

@dataclass(frozen=True)
class SelectorMaps:
    """Row bookkeeping: which rows of the matrix are voltage quantities
    (the y rows) and which are injections (the x rows)."""

    T: int

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError("T must be >= 1")

    @property
    def y_rows(self) -> np.ndarray:
        return np.array(
            [ROWS_PER_STEP * t + k for t in range(self.T) for k in (0, 1, 2)]
        )

    @property
    def x_rows(self) -> np.ndarray:
        return np.array(
            [ROWS_PER_STEP * t + k for t in range(self.T) for k in (3, 4)]
        )


def select_y(X: np.ndarray, maps: SelectorMaps) -> np.ndarray:
    """Stack the voltage rows of ``X`` into one vector (row-major)."""
    if X.shape[0] != ROWS_PER_STEP * maps.T:
        raise ConfigError(f"X must have {ROWS_PER_STEP * maps.T} rows")
    return X[maps.y_rows].reshape(-1)


def select_x(X: np.ndarray, maps: SelectorMaps) -> np.ndarray:
    """Stack the injection rows of ``X`` into one vector (row-major)."""
    if X.shape[0] != ROWS_PER_STEP * maps.T:
        raise ConfigError(f"X must have {ROWS_PER_STEP * maps.T} rows")
    return X[maps.x_rows].reshape(-1)


# -- configuration and result types -----------------------------------------

@dataclass(frozen=True)
class FactorPair:
    """Bilinear factors of the completed matrix."""

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        m, ru = self.U.shape
        rv, n = self.V.shape
        if ru != rv:
            raise ConfigError("factor inner dimensions differ")
        if not 1 <= ru <= min(m, n):
            raise ConfigError(f"rank {ru} outside [1, min(m, n)]")
        if not (np.all(np.isfinite(self.U)) and np.all(np.isfinite(self.V))):
            raise NumericalError("non-finite factor entries")

    @property
    def r(self) -> int:
        return self.U.shape[1]

    def product(self) -> np.ndarray:
        return self.U @ self.V


@dataclass(frozen=True)
class EstimatorConfig:
    rank: int = 4
    mu: float = 100.0
    nu: float = 10.0
    max_iter: int = 100
    tol: float = 1e-6
    early_stop: bool = True
    method: str = "direct"   # "direct" (normal equations) or "cg"

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError("rank must be >= 1")
        if self.mu < 0 or self.nu < 0:
            raise ConfigError("mu and nu must be >= 0")
        if self.tol <= 0:
            raise ConfigError("tolerance must be > 0")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")
        if self.method not in ("direct", "cg"):
            raise ConfigError(f"unknown subproblem method {self.method!r}")


@dataclass
class IterationTrace:
    """Objective values and step norms recorded by the solver.

    ``objectives[0]`` is the value at the initialization; entry ``k``
    is the value after full iteration ``k``.
    """

    objectives: list[float] = field(default_factory=list)
    u_step_norms: list[float] = field(default_factory=list)
    v_step_norms: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.u_step_norms)

    def combined_step_norms(self) -> np.ndarray:
        return np.asarray(self.u_step_norms) + np.asarray(self.v_step_norms)

    def tail_step_sum(self, start: int) -> float:
        return float(self.combined_step_norms()[start:].sum())


@dataclass
class EstimateResult:
    X: np.ndarray
    magnitudes: np.ndarray      # T x n, p.u.
    angles_deg: np.ndarray      # T x n
    factors: FactorPair
    trace: IterationTrace
    config: EstimatorConfig
    seeds: dict = field(default_factory=dict)


# -- objective ---------------------------------------------------------------

def _as_values(M) -> np.ndarray:
    values = M.values if isinstance(M, MeasurementMatrix) else np.asarray(M)
    if values.ndim != 2 or values.shape[0] % ROWS_PER_STEP:
        raise ConfigError("matrix must be 2-D with a multiple of 5 rows")
    return values


def _as_bool_mask(mask, shape) -> np.ndarray:
    if isinstance(mask, ObservationMask):
        return mask.as_bool(shape)
    W = np.asarray(mask, dtype=bool)
    if W.shape != shape:
        raise ConfigError(f"mask shape {W.shape} does not match matrix {shape}")
    return W


def constraint_linear(X: np.ndarray, model: StackedLinearModel) -> np.ndarray:
    """Linear part of the physics residual, one 3-row block per snapshot:
    ``rho[3t+k] = X[5t+k] - X[5t+3] P_k' - X[5t+4] Q_k'``."""
    T, n = model.T, model.n
    x_re = X[3::ROWS_PER_STEP]
    x_im = X[4::ROWS_PER_STEP]
    rho = np.empty((3 * T, n))
    for k in range(3):
        P, Q = model.coeff_rows(k)
        rho[k::3] = X[k::ROWS_PER_STEP] - x_re @ P.T - x_im @ Q.T
    return rho


def constraint_residual(X: np.ndarray, model: StackedLinearModel) -> np.ndarray:
    """Physics residual including the constant offsets."""
    rho = constraint_linear(X, model)
    for k in range(3):
        rho[k::3] -= model.offset_rows(k)[None, :]
    return rho


def constraint_adjoint(rho: np.ndarray, model: StackedLinearModel) -> np.ndarray:
    """Adjoint of :func:`constraint_linear`: maps a residual back onto
    the 5T-row matrix space."""
    T, n = model.T, model.n
    X = np.zeros((ROWS_PER_STEP * T, n))
    for k in range(3):
        P, Q = model.coeff_rows(k)
        X[k::ROWS_PER_STEP] = rho[k::3]
        X[3::ROWS_PER_STEP] -= rho[k::3] @ P
        X[4::ROWS_PER_STEP] -= rho[k::3] @ Q
    return X


def evaluate_objective(
    U: np.ndarray,
    V: np.ndarray,
    M,
    mask,
    model: StackedLinearModel,
    mu: float,
    nu: float,
) -> float:
    """Full objective value at the given factors."""
    reg, fid, cons = objective_terms(U, V, M, mask, model)
    return reg + mu * fid + nu * cons


def objective_terms(U, V, M, mask, model) -> tuple[float, float, float]:
    """The three objective terms before weighting:
    regularizer, 1/2 masked misfit, 1/2 physics residual."""
    values = _as_values(M)
    W = _as_bool_mask(mask, values.shape)
    X = U @ V
    if X.shape != values.shape:
        raise ConfigError(f"factor product {X.shape} does not match M {values.shape}")
    reg = 0.5 * (np.sum(U * U) + np.sum(V * V))
    diff = np.where(W, X - values, 0.0)
    fid = 0.5 * float(np.sum(diff * diff))
    rho = constraint_residual(X, model)
    cons = 0.5 * float(np.sum(rho * rho))
    return float(reg), fid, cons


# -- initialization -----------------------------------------------------------

def initialize_factors(M, mask, r: int) -> FactorPair:
    """Balanced factors from the rank-r SVD of the zero-filled matrix."""
    values = _as_values(M)
    W = _as_bool_mask(mask, values.shape)
    if not W.any():
        raise ConfigError("cannot initialize from an empty observation set")
    m, n = values.shape
    if not 1 <= r <= min(m, n):
        raise ConfigError(f"rank {r} outside [1, min({m}, {n})]")
    filled = np.where(W, values, 0.0)
    u, s, vt = np.linalg.svd(filled, full_matrices=False)
    root = np.sqrt(s[:r])
    return FactorPair(U=u[:, :r] * root[None, :], V=root[:, None] * vt[:r])


# -- subproblem machinery ------------------------------------------------------

class _Workspace:
    """Iteration-invariant pieces shared by both subproblems.

    The V-step Hessian is a sum of Kronecker products (phase coupling)
    x (factor coupling).  The phase-side matrices depend only on the
    linear model, so they are flattened into one (n^2, 24) stack here;
    per iteration the Hessian assembly is a single GEMM against the
    corresponding stack of (r, r) factor couplings.
    """

    def __init__(self, model: StackedLinearModel):
        self.model = model
        self.T, self.n = model.T, model.n
        self.P = []
        self.Q = []
        for k in range(3):
            P, Q = model.coeff_rows(k)
            self.P.append(P)
            self.Q.append(Q)
        lefts = []
        for k in range(3):
            PtQ = self.P[k].T @ self.Q[k]
            lefts += [self.P[k], self.Q[k], PtQ]
            lefts += [self.P[k].T, self.Q[k].T, PtQ.T]
            lefts += [self.P[k].T @ self.P[k], self.Q[k].T @ self.Q[k]]
        self.flat_lefts = np.ascontiguousarray(
            np.stack([L.reshape(-1) for L in lefts], axis=1)
        )
        beta = np.empty((3 * self.T, self.n))
        for k in range(3):
            beta[k::3] = model.offset_rows(k)[None, :]
        self.beta = beta
        self.adj_beta = constraint_adjoint(beta, model)

    def v_coupling_stack(self, U: np.ndarray) -> np.ndarray:
        """The (24, r^2) factor-coupling partners of ``flat_lefts``."""
        r = U.shape[1]
        Uy = [U[k::ROWS_PER_STEP] for k in range(3)]
        U3 = U[3::ROWS_PER_STEP]
        U4 = U[4::ROWS_PER_STEP]
        G33 = U3.T @ U3
        G34 = U3.T @ U4
        G44 = U4.T @ U4
        rights = []
        for k in range(3):
            Gk3 = Uy[k].T @ U3
            Gk4 = Uy[k].T @ U4
            rights += [-Gk3, -Gk4, G34]
            rights += [-Gk3.T, -Gk4.T, G34.T]
            rights += [G33, G44]
        return np.stack([R.reshape(-1) for R in rights], axis=0)


def _grad_tol(x: np.ndarray) -> float:
    # ||vec(sol)||_2 equals the Frobenius norm of the factor
    return GRAD_NORM_FACTOR * (1.0 + float(np.linalg.norm(x)))


def _solve_spd(H: np.ndarray, b: np.ndarray, want_factor: bool = False):
    """Dense SPD solve, refined until the gradient bound holds."""
    if not np.all(np.isfinite(H)):
        raise NumericalError("non-finite subproblem system")
    try:
        factor = cho_factor(H, lower=False, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"subproblem factorization failed: {exc}") from exc
    x = cho_solve(factor, b, check_finite=False)
    for _ in range(5):
        res = b - H @ x
        if np.linalg.norm(res) <= _grad_tol(x):
            return (x, factor) if want_factor else x
        x = x + cho_solve(factor, res, check_finite=False)
    raise NumericalError(
        "subproblem too ill-conditioned to meet the gradient bound; "
        "mu/nu are likely badly scaled"
    )


def _pcg(matvec, b, psolve, maxiter: int = 12):
    """Preconditioned CG, exiting on the subproblem gradient bound.

    Used with a slightly stale Cholesky factor as preconditioner: when
    the factors have barely moved between outer iterations this
    converges in a few steps and skips the Hessian reassembly.
    """
    x = psolve(b)
    res = b - matvec(x)
    if np.linalg.norm(res) <= _grad_tol(x):
        return x, True
    z = psolve(res)
    p = z.copy()
    rz = float(res @ z)
    for _ in range(maxiter):
        Hp = matvec(p)
        denom = float(p @ Hp)
        if denom <= 0.0 or not np.isfinite(denom):
            return x, False
        alpha = rz / denom
        x = x + alpha * p
        res = res - alpha * Hp
        if np.linalg.norm(res) <= _grad_tol(x):
            return x, True
        z = psolve(res)
        rz_new = float(res @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, False


def _solve_cg(matvec, dim: int, b: np.ndarray) -> np.ndarray:
    op = LinearOperator((dim, dim), matvec=matvec, dtype=float)
    x, _ = cg(op, b, rtol=1e-14, atol=0.01 * GRAD_NORM_FACTOR, maxiter=20 * dim)
    for _ in range(4):
        res = b - matvec(x)
        if np.linalg.norm(res) <= _grad_tol(x):
            return x
        dx, _ = cg(op, res, rtol=1e-14, atol=0.01 * GRAD_NORM_FACTOR,
                   maxiter=20 * dim)
        x = x + dx
    if np.linalg.norm(b - matvec(x)) > _grad_tol(x):
        raise NumericalError("conjugate gradients failed to meet the gradient bound")
    return x


def _u_system(V, WM, W, ws, mu, nu):
    """Normal equations for the U-step over vec(U), row-major."""
    m = W.shape[0]
    r = V.shape[0]
    Hv = np.zeros((m, r, m, r))
    idx = np.arange(m)
    # identity + masked-misfit blocks (each couples one row of U only)
    E = mu * np.einsum("aj,bj,ij->iab", V, V, W)
    E += np.eye(r)[None, :, :]
    Hv[idx, :, idx, :] += E
    rhs = mu * (WM @ V.T)
    if nu > 0.0:
        VVt = V @ V.T
        PV = [ws.P[k] @ V.T for k in range(3)]
        QV = [ws.Q[k] @ V.T for k in range(3)]
        B = np.zeros((ROWS_PER_STEP, r, ROWS_PER_STEP, r))
        for k in range(3):
            B[k, :, k, :] = VVt
            B[k, :, 3, :] = -V @ PV[k]
            B[k, :, 4, :] = -V @ QV[k]
            B[3, :, k, :] = B[k, :, 3, :].T
            B[4, :, k, :] = B[k, :, 4, :].T
            B[3, :, 3, :] += PV[k].T @ PV[k]
            B[3, :, 4, :] += PV[k].T @ QV[k]
            B[4, :, 3, :] += (PV[k].T @ QV[k]).T
            B[4, :, 4, :] += QV[k].T @ QV[k]
        for t in range(ws.T):
            sl = slice(ROWS_PER_STEP * t, ROWS_PER_STEP * (t + 1))
            Hv[sl, :, sl, :] += nu * B
        rhs = rhs + nu * (ws.adj_beta @ V.T)
    return Hv.reshape(m * r, m * r), rhs.reshape(-1)


def _v_system(U, WM, W, ws, mu, nu):
    """Normal equations for the V-step over vec(V'), column-major in V."""
    n = W.shape[1]
    r = U.shape[1]
    rhs = mu * (U.T @ WM)
    diag = mu * np.einsum("ia,ib,ij->jab", U, U, W)
    diag += np.eye(r)[None, :, :]
    if nu > 0.0:
        flat = ws.flat_lefts @ ws.v_coupling_stack(U)        # (n^2, r^2)
        flat *= nu
        H = np.ascontiguousarray(
            flat.reshape(n, n, r, r).transpose(0, 2, 1, 3)
        ).reshape(n * r, n * r)
        gaa = np.zeros((r, r))
        for k in range(3):
            Uy = U[k::ROWS_PER_STEP]
            gaa += Uy.T @ Uy
        diag = diag + nu * gaa[None, :, :]
        rhs = rhs + nu * (U.T @ ws.adj_beta)
    else:
        H = np.zeros((n * r, n * r))
    Hv = H.reshape(n, r, n, r)
    idx = np.arange(n)
    Hv[idx, :, idx, :] += diag
    return H, rhs.T.reshape(-1)


def _u_matvec(V, W, ws, mu, nu, m, r):
    def matvec(u):
        Umat = u.reshape(m, r)
        out = Umat.copy()
        if mu > 0.0:
            out += mu * (np.where(W, Umat @ V, 0.0) @ V.T)
        if nu > 0.0:
            out += nu * (
                constraint_adjoint(constraint_linear(Umat @ V, ws.model), ws.model)
                @ V.T
            )
        return out.reshape(-1)

    return matvec


def _v_matvec(U, W, ws, mu, nu, n, r):
    def matvec(v):
        Vmat = v.reshape(n, r).T
        out = Vmat.copy()
        if mu > 0.0:
            out += mu * (U.T @ np.where(W, U @ Vmat, 0.0))
        if nu > 0.0:
            out += nu * (
                U.T
                @ constraint_adjoint(constraint_linear(U @ Vmat, ws.model), ws.model)
            )
        return out.T.reshape(-1)

    return matvec


def _u_step(V, WM, W, ws, mu, nu, method) -> np.ndarray:
    m, r = W.shape[0], V.shape[0]
    if method == "cg":
        rhs = mu * (WM @ V.T)
        if nu > 0.0:
            rhs = rhs + nu * (ws.adj_beta @ V.T)
        sol = _solve_cg(_u_matvec(V, W, ws, mu, nu, m, r), m * r, rhs.reshape(-1))
    else:
        H, rhs = _u_system(V, WM, W, ws, mu, nu)
        sol = _solve_spd(H, rhs)
    return sol.reshape(m, r)


def _v_step(U, WM, W, ws, mu, nu, method, cache: dict | None = None) -> np.ndarray:
    n, r = W.shape[1], U.shape[1]
    if method == "cg":
        rhs = mu * (U.T @ WM)
        if nu > 0.0:
            rhs = rhs + nu * (U.T @ ws.adj_beta)
        sol = _solve_cg(_v_matvec(U, W, ws, mu, nu, n, r), n * r,
                        rhs.T.reshape(-1))
        return sol.reshape(n, r).T
    if cache is not None and cache.get("factor") is not None:
        rhs = mu * (U.T @ WM)
        if nu > 0.0:
            rhs = rhs + nu * (U.T @ ws.adj_beta)
        factor = cache["factor"]
        sol, ok = _pcg(
            _v_matvec(U, W, ws, mu, nu, n, r),
            rhs.T.reshape(-1),
            lambda y: cho_solve(factor, y, check_finite=False),
        )
        if ok:
            return sol.reshape(n, r).T
    H, rhs = _v_system(U, WM, W, ws, mu, nu)
    if cache is not None:
        sol, factor = _solve_spd(H, rhs, want_factor=True)
        cache["factor"] = factor
    else:
        sol = _solve_spd(H, rhs)
    return sol.reshape(n, r).T


def solve_u_step(V, M, mask, model, mu, nu, method="direct") -> np.ndarray:
    """Exact minimizer of the objective over U with V held fixed."""
    values = _as_values(M)
    W = _as_bool_mask(mask, values.shape)
    ws = _Workspace(model)
    return _u_step(V, np.where(W, values, 0.0), W, ws, mu, nu, method)


def solve_v_step(U, M, mask, model, mu, nu, method="direct") -> np.ndarray:
    """Exact minimizer of the objective over V with U held fixed."""
    values = _as_values(M)
    W = _as_bool_mask(mask, values.shape)
    ws = _Workspace(model)
    return _v_step(U, np.where(W, values, 0.0), W, ws, mu, nu, method)


# -- the solver ---------------------------------------------------------------

def run_alternating_minimization(
    M, mask, model: StackedLinearModel, config: EstimatorConfig,
    seeds: dict | None = None,
) -> EstimateResult:
    """Alternate exact U and V minimizations from the SVD initialization.

    Stops after ``config.max_iter`` iterations, or earlier once the
    relative objective decrease falls below ``config.tol`` (unless
    ``early_stop`` is off).  The objective is checked to be
    nonincreasing at every iteration.
    """
    values = _as_values(M)
    m, n = values.shape
    if m != ROWS_PER_STEP * model.T or n != model.n:
        raise ConfigError(
            f"matrix {values.shape} does not match the {model.T}-step model "
            f"over {model.n} phases"
        )
    W = _as_bool_mask(mask, values.shape)
    WM = np.where(W, values, 0.0)
    ws = _Workspace(model)
    maps = SelectorMaps(model.T)

    pair = initialize_factors(values, W, config.rank)
    U, V = pair.U, pair.V
    trace = IterationTrace()
    f_prev = evaluate_objective(U, V, values, W, model, config.mu, config.nu)
    trace.objectives.append(f_prev)

    v_cache: dict = {}
    for _ in range(config.max_iter):
        tic = time.perf_counter()
        U_new = _u_step(V, WM, W, ws, config.mu, config.nu, config.method)
        V_new = _v_step(U_new, WM, W, ws, config.mu, config.nu, config.method,
                        cache=v_cache)
        f_new = evaluate_objective(
            U_new, V_new, values, W, model, config.mu, config.nu
        )
        if not np.isfinite(f_new):
            raise NumericalError("objective became non-finite; aborting")
        if f_new - f_prev > DESCENT_RTOL * max(1.0, abs(f_prev)):
            raise NumericalError(
                f"objective increased from {f_prev!r} to {f_new!r}"
            )
        trace.u_step_norms.append(float(np.linalg.norm(U_new - U)))
        trace.v_step_norms.append(float(np.linalg.norm(V_new - V)))
        trace.seconds.append(time.perf_counter() - tic)
        trace.objectives.append(f_new)
        U, V = U_new, V_new
        rel_drop = (f_prev - f_new) / max(1.0, abs(f_prev))
        f_prev = f_new
        if config.early_stop and rel_drop < config.tol:
            break

    X = U @ V
    magnitudes, angles = extract_state(X, maps)
    return EstimateResult(
        X=X,
        magnitudes=magnitudes,
        angles_deg=angles,
        factors=FactorPair(U=U, V=V),
        trace=trace,
        config=config,
        seeds=dict(seeds or {}),
    )


def extract_state(X: np.ndarray, maps: SelectorMaps) -> tuple[np.ndarray, np.ndarray]:
    """Magnitudes (p.u.) and angles (degrees) from the phasor rows.

    Only the Re/Im rows are consulted; the magnitude measurement row is
    a measurement, not the estimate.
    """
    if X.shape[0] != ROWS_PER_STEP * maps.T:
        raise ConfigError(f"X must have {ROWS_PER_STEP * maps.T} rows")
    re = X[0::ROWS_PER_STEP]
    im = X[1::ROWS_PER_STEP]
    return np.hypot(re, im), np.degrees(np.arctan2(im, re))


# -- baseline: singular value thresholding ------------------------------------

def svt_complete(M, mask, mu: float, steps: int = 200) -> np.ndarray:
    """Proximal-gradient completion without the physics penalty.

    Each step takes a unit gradient step on the masked misfit (step
    size 1/mu) and soft-thresholds the singular values at 1/mu.
    """
    values = _as_values(M)
    W = _as_bool_mask(mask, values.shape)
    if not W.any():
        raise ConfigError("SVT needs a nonempty observation set")
    if mu <= 0:
        raise ConfigError("mu must be > 0")
    X = np.zeros_like(values)
    thresh = 1.0 / mu
    for _ in range(steps):
        grad_point = X - np.where(W, X - values, 0.0)
        u, s, vt = np.linalg.svd(grad_point, full_matrices=False)
        s = np.maximum(s - thresh, 0.0)
        X = (u * s[None, :]) @ vt
    return X
