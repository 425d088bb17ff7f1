"""Per-frame minimization: quasi-Newton descent, L-BFGS, Chebyshev, Newton baseline.

All directions feed the same backtracking line search with the Armijo
sufficient-decrease test; the descent direction for the base method is
-(M/h^2 + L)^{-1} grad g, reusing the prefactorized system matrix.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from qnsim.linalg import Factorization, solve_prefactored
from qnsim.dynamics import (
    SimState,
    SimSystem,
    gradient,
    inertia_target,
    objective,
    update_collisions,
)

SOLVER_KINDS = ("pd_qn", "lbfgs", "chebyshev", "newton")
LBFGS_INITS = ("system_matrix", "scaled_identity", "rest_pose_hessian")

CURVATURE_GUARD = 1e-12
ALPHA_FLOOR = 1e-12
HESSIAN_EIG_FLOOR = 1e-8
NEWTON_FD_STEP_REL = 1e-6


class SolverError(Exception):
    pass


class StagnationError(SolverError):
    """Line search underflow: the direction makes no progress."""


@dataclass
class SolverConfig:
    kind: str = "pd_qn"
    iterations: int = 10
    m: int = 5
    gamma: float = 0.3
    alpha_init: float = 2.0
    alpha_shrink: float = 0.5
    rho: float = 0.9
    S: int = 10
    lbfgs_init: str = "system_matrix"
    line_search: bool = True

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise SolverError(f"unknown solver kind {self.kind!r}; valid: {SOLVER_KINDS}")
        if not (0.0 < self.gamma < 1.0):
            raise SolverError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.m < 0:
            raise SolverError("m must be >= 0")
        if not (0.0 <= self.rho < 1.0):
            raise SolverError(f"rho must be in [0, 1), got {self.rho}")
        if self.iterations < 1:
            raise SolverError("iterations must be >= 1")
        if self.lbfgs_init not in LBFGS_INITS:
            raise SolverError(f"unknown lbfgs_init {self.lbfgs_init!r}; valid: {LBFGS_INITS}")


@dataclass
class ConvergenceRecord:
    g0: float = 0.0
    g: list = field(default_factory=list)
    ls_trials: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    cum_ms: list = field(default_factory=list)
    rel_error: list = field(default_factory=list)
    fallbacks: int = 0
    stagnated: bool = False


class LbfgsHistory:
    """Ring buffer of (s, t) iterate/gradient difference pairs with rho = tr(t^T s)."""

    def __init__(self, m: int):
        self.m = m
        self.pairs = []  # (s, t, rho), oldest first

    def push(self, s: np.ndarray, t: np.ndarray):
        rho = float(np.vdot(t, s))
        guard = CURVATURE_GUARD * float(np.linalg.norm(s)) * float(np.linalg.norm(t))
        if rho <= guard:
            return  # non-positive curvature pair: skip
        self.pairs.append((s, t, rho))
        if len(self.pairs) > self.m:
            self.pairs.pop(0)

    def clear(self):
        self.pairs.clear()

    def __len__(self):
        return len(self.pairs)


def relative_error(g_k: float, g_0: float, g_star: float) -> float:
    """(g_k - g*) / (g_0 - g*); undefined when the frame made no progress."""
    if g_0 <= g_star + 1e-15:
        raise SolverError(f"degenerate frame: g_0 ({g_0}) not above g* ({g_star})")
    return (g_k - g_star) / (g_0 - g_star)


def direction_pd_qn(system: SimSystem, grad: np.ndarray) -> np.ndarray:
    """d = -(M/h^2 + L)^{-1} grad on free DOFs; zero rows for fixed vertices."""
    d = np.zeros_like(grad)
    d[system.free] = -solve_prefactored(system.sysfact, grad[system.free])
    return d


def direction_lbfgs(
    system: SimSystem, history: LbfgsHistory, grad: np.ndarray, config: SolverConfig
) -> np.ndarray:
    """Two-loop recursion; with an empty history this is exactly direction_pd_qn."""
    q = -grad.copy()
    zetas = []
    for s, t, rho in reversed(history.pairs):
        zeta = float(np.vdot(s, q)) / rho
        q -= zeta * t
        zetas.append(zeta)
    zetas.reverse()

    if config.lbfgs_init == "system_matrix":
        r = np.zeros_like(q)
        r[system.free] = solve_prefactored(system.sysfact, q[system.free])
    elif config.lbfgs_init == "scaled_identity":
        if history.pairs:
            s, t, rho = history.pairs[-1]
            scale = rho / float(np.vdot(t, t))
        else:
            scale = 1.0
        r = scale * q
    else:  # rest_pose_hessian
        fact = _rest_pose_hessian_fact(system)
        r = np.zeros_like(q)
        rhs = q[system.free].reshape(-1)
        r[system.free] = fact.solve(rhs).reshape(-1, 3)

    for (s, t, rho), zeta in zip(history.pairs, zetas):
        eta = float(np.vdot(t, r)) / rho
        r += s * (zeta - eta)
    return r


def direction_chebyshev(x_k, x_km1, q, k: int, omega_prev: float, config: SolverConfig):
    """Chebyshev semi-iterative blend of the base update with the previous iterate."""
    if k < config.S:
        omega = 1.0
    elif k == config.S:
        omega = 2.0 / (2.0 - config.rho**2)
    else:
        omega = 4.0 / (4.0 - config.rho**2 * omega_prev)
    x_hat = x_k + q
    d = omega * (x_hat - x_km1) + x_km1 - x_k
    return d, omega


# ---------------------------------------------------------------------------
# Newton baseline


def _elem_hessians_fd(group, x: np.ndarray, step: float) -> np.ndarray:
    """Per-element Hessian blocks by central differences of the analytic gradient."""
    X0 = x[group.verts]
    k, a, _ = X0.shape
    dim = 3 * a
    H = np.empty((k, dim, dim))
    for v in range(a):
        for c in range(3):
            Xp = X0.copy()
            Xp[:, v, c] += step
            Xm = X0.copy()
            Xm[:, v, c] -= step
            col = (group.elem_gradient(Xp) - group.elem_gradient(Xm)) / (2.0 * step)
            H[:, :, 3 * v + c] = col.reshape(k, dim)
    return 0.5 * (H + np.swapaxes(H, 1, 2))


def project_psd(blocks: np.ndarray, floor: float = HESSIAN_EIG_FLOOR) -> np.ndarray:
    """Clamp negative eigenvalues of symmetric blocks (definiteness fix)."""
    w, Q = np.linalg.eigh(blocks)
    w = np.maximum(w, floor)
    return np.einsum("kij,kj,klj->kil", Q, w, Q)


def newton_hessian_fact(system: SimSystem, state: SimState, x: np.ndarray) -> Factorization:
    """Assemble the 3n x 3n Hessian with per-element definiteness fix and factor it."""
    n = system.n
    step = NEWTON_FD_STEP_REL * system.scale
    rows, cols, vals = [], [], []
    for group in system.groups:
        H = project_psd(_elem_hessians_fd(group, x, step))
        verts = group.verts
        a = verts.shape[1]
        dofs = (verts[:, :, None] * 3 + np.arange(3)).reshape(verts.shape[0], 3 * a)
        rows.append(np.repeat(dofs, 3 * a, axis=1).reshape(-1))
        cols.append(np.tile(dofs, (1, 3 * a)).reshape(-1))
        vals.append(H.reshape(-1))
    cons = state.collisions
    if cons.count:
        blocks = 2.0 * system.w_col * np.einsum("ka,kb->kab", cons.n, cons.n)
        dofs = (cons.idx[:, None] * 3 + np.arange(3)).reshape(cons.count, 3)
        rows.append(np.repeat(dofs, 3, axis=1).reshape(-1))
        cols.append(np.tile(dofs, (1, 3)).reshape(-1))
        vals.append(blocks.reshape(-1))
    diag = np.repeat(system.masses / system.h**2, 3)
    if rows:
        H = scipy.sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(3 * n, 3 * n),
        ).toarray()
    else:
        H = np.zeros((3 * n, 3 * n))
    H[np.diag_indices_from(H)] += diag
    free3 = (system.free[:, None] * 3 + np.arange(3)).reshape(-1)
    return Factorization(H[np.ix_(free3, free3)])


def direction_newton(system: SimSystem, state: SimState, x: np.ndarray, grad=None) -> np.ndarray:
    if grad is None:
        grad = gradient(system, state, x)
    fact = newton_hessian_fact(system, state, x)
    d = np.zeros_like(x)
    d[system.free] = fact.solve(-grad[system.free].reshape(-1)).reshape(-1, 3)
    return d


# ---------------------------------------------------------------------------
# line search and frame loop


def line_search(system, state, x, d, g_x, grad_x, config: SolverConfig):
    """Backtracking with the Armijo test; alpha_init is halved before the first
    trial, so alpha = 1 is tested first."""
    slope = float(np.vdot(grad_x, d))
    if slope >= 0.0:
        raise SolverError(f"line search requires a descent direction, slope={slope}")
    alpha = config.alpha_init
    trials = 0
    while True:
        alpha *= config.alpha_shrink
        if alpha < ALPHA_FLOOR:
            raise StagnationError("line search step underflow: pathological direction")
        trials += 1
        x_new = x + alpha * d
        g_new = objective(system, state, x_new)
        if g_new <= g_x + config.gamma * alpha * slope:
            return alpha, x_new, g_new, trials


def simulate_frame(system: SimSystem, state: SimState, config: SolverConfig, fixed_targets=None):
    """Advance one frame; returns (next_state, ConvergenceRecord).

    The collision set is rebuilt at the start of each iteration; the L-BFGS
    history is per-frame (pairs from a previous frame describe a different
    objective and are discarded).
    """
    t_start = time.perf_counter()
    y = inertia_target(state, system, fixed_targets)
    st = SimState(q_l=state.q_l, q_prev=state.q_prev, y=y)
    x = y.copy()
    rec = ConvergenceRecord()
    history = LbfgsHistory(config.m)
    x_prev_iter = x.copy()
    omega = 1.0
    prev_x = None
    prev_grad = None

    grad_tol = 1e-12 * system.scale * max(1.0, float(system.masses.max()) / system.h**2)

    st.collisions = update_collisions(system, st, x)
    rec.g0 = objective(system, st, x)
    g_x = rec.g0

    for k in range(1, config.iterations + 1):
        st.collisions = update_collisions(system, st, x)
        g_x = objective(system, st, x)
        grad = gradient(system, st, x)

        if config.kind == "lbfgs" and prev_x is not None:
            history.push(x - prev_x, grad - prev_grad)

        if float(np.linalg.norm(grad)) <= grad_tol:
            rec.g.append(g_x)
            rec.ls_trials.append(0)
            rec.alphas.append(0.0)
            rec.cum_ms.append(1000.0 * (time.perf_counter() - t_start))
            prev_x, prev_grad = x, grad
            continue

        if config.kind == "pd_qn":
            d = direction_pd_qn(system, grad)
        elif config.kind == "lbfgs":
            d = direction_lbfgs(system, history, grad, config)
        elif config.kind == "chebyshev":
            q = direction_pd_qn(system, grad)
            d, omega = direction_chebyshev(x, x_prev_iter, q, k, omega, config)
            if float(np.vdot(grad, d)) >= 0.0:
                d = q
                rec.fallbacks += 1
        else:  # newton
            d = direction_newton(system, st, x, grad)
            if float(np.vdot(grad, d)) >= 0.0:
                d = direction_pd_qn(system, grad)
                rec.fallbacks += 1

        if config.line_search:
            # a predicted decrease below the float resolution of g means the
            # frame is converged as far as the objective can resolve
            slope = float(np.vdot(grad, d))
            if slope < 0.0 and -slope <= 1e-12 * max(abs(g_x), 1.0):
                rec.g.append(g_x)
                rec.ls_trials.append(0)
                rec.alphas.append(0.0)
                rec.cum_ms.append(1000.0 * (time.perf_counter() - t_start))
                prev_x, prev_grad = x, grad
                continue
            try:
                alpha, x_new, g_new, trials = line_search(system, st, x, d, g_x, grad, config)
            except StagnationError:
                rec.stagnated = True
                while len(rec.g) < config.iterations:
                    rec.g.append(g_x)
                    rec.ls_trials.append(0)
                    rec.alphas.append(0.0)
                    rec.cum_ms.append(1000.0 * (time.perf_counter() - t_start))
                break
        else:
            alpha = 1.0
            x_new = x + d
            g_new = objective(system, st, x_new)
            trials = 1

        prev_x, prev_grad = x, grad
        x_prev_iter = x
        x = x_new
        rec.g.append(g_new)
        rec.ls_trials.append(trials)
        rec.alphas.append(alpha)
        rec.cum_ms.append(1000.0 * (time.perf_counter() - t_start))

    next_state = SimState(q_l=x, q_prev=state.q_l, y=y, collisions=st.collisions)
    return next_state, rec


def newton_reference(
    system: SimSystem,
    state: SimState,
    fixed_targets=None,
    grad_tol_rel: float = 1e-10,
    max_iterations: int = 200,
    config: SolverConfig | None = None,
):
    """Solve the frame to (near) optimality with Newton; used as the reference
    minimum g* when normalizing per-iteration errors.  Returns (x*, g*)."""
    config = config or SolverConfig(kind="newton", iterations=1)
    y = inertia_target(state, system, fixed_targets)
    st = SimState(q_l=state.q_l, q_prev=state.q_prev, y=y)
    x = y.copy()
    st.collisions = update_collisions(system, st, x)
    grad0 = gradient(system, st, x)
    tol = grad_tol_rel * max(1.0, float(np.linalg.norm(grad0)))
    g_x = objective(system, st, x)
    best_grad = np.inf
    stalled = 0
    for _ in range(max_iterations):
        st.collisions = update_collisions(system, st, x)
        g_x = objective(system, st, x)
        grad = gradient(system, st, x)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= tol:
            break
        # the differenced Hessian has a finite precision floor: once the
        # gradient stops shrinking, further iterations cannot improve g*
        if grad_norm >= 0.999 * best_grad:
            stalled += 1
            if stalled >= 3:
                break
        else:
            stalled = 0
        best_grad = min(best_grad, grad_norm)
        d = direction_newton(system, st, x, grad)
        if float(np.vdot(grad, d)) >= 0.0:
            d = direction_pd_qn(system, grad)
        try:
            _, x, g_x, _ = line_search(system, st, x, d, g_x, grad, config)
        except StagnationError:
            break
    return x, g_x


def _rest_pose_hessian_fact(system: SimSystem) -> Factorization:
    """Hessian of g at the rest configuration (with inertia term), cached."""
    if system.rest_hessian_fact is None:
        rest = system.mesh.vertices.copy()
        st = SimState(q_l=rest, q_prev=rest, y=rest)
        system.rest_hessian_fact = newton_hessian_fact(system, st, rest)
    return system.rest_hessian_fact
