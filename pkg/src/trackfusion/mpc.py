"""Finite-horizon trajectory optimization for the spoofed track.

The K-step problem minimizes discounted position/velocity tracking error
against a reference trajectory plus a soft separation penalty that activates
inside a protection radius around predicted victim positions:

    J(U) = a_p * sum_k g_p^k ||p_k - p_k^ref||^2
         + a_v * sum_k g_v^k ||v_k - v_k^ref||^2
         + a_c * sum_k max(c - ||p_k - p_k^vic||, 0)^2

subject to double-integrator dynamics (exact by construction), per-step
acceleration-norm bounds (handled by projection) and velocity-norm bounds
(handled by an outer quadratic penalty with a final feasibility check).

The decision variable is the control sequence only; states are eliminated by
forward substitution, and gradients are computed with an adjoint recursion,
so each iteration is O(K). The separation penalty is C^1, which keeps the
whole objective smooth enough for projected gradient descent with a
backtracking (monotone) line search.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class MpcParams:
    horizon: int = 20
    alpha_p: float = 1.0
    alpha_v: float = 0.1
    alpha_c: float = 0.1
    gamma_p: float = 0.99
    gamma_v: float = 0.99
    cutoff: float = 100.0
    v_max: float = 30.0
    a_max: float = 30.0
    dt: float = 1.0
    grad_tol: float = 1e-5
    # behavior is insensitive to budgets beyond a few dozen iterations
    # (applied controls match a 500-iteration solve to centimeters) while
    # far-target phases would otherwise crawl; keep the cap small and
    # configurable
    max_iterations: int = 60
    velocity_tol: float = 1e-6

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if min(self.alpha_p, self.alpha_v, self.alpha_c) < 0:
            raise ValueError("weights must be nonnegative")
        for g in (self.gamma_p, self.gamma_v):
            if not (0.0 < g <= 1.0):
                raise ValueError("discount factors must lie in (0, 1]")
        if self.v_max <= 0 or self.a_max <= 0:
            raise ValueError("v_max and a_max must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass
class MpcSolution:
    U: np.ndarray  # (2, K) control sequence
    X: np.ndarray  # (4, K+1) predicted states, X[:, 0] = x_init
    objective: float
    iterations: int
    converged: bool
    velocity_violation: float = 0.0
    monotone: bool = True


def build_dynamics(dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Double-integrator discretization: position rows of B are dt^2/2, velocity rows dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    A = np.array(
        [
            [1.0, 0.0, dt, 0.0],
            [0.0, 1.0, 0.0, dt],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    B = np.array(
        [
            [0.5 * dt**2, 0.0],
            [0.0, 0.5 * dt**2],
            [dt, 0.0],
            [0.0, dt],
        ]
    )
    return A, B


def rollout(x0: np.ndarray, U: np.ndarray, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Forward-substitute the dynamics; returns states (K+1, 4) with row 0 = x0."""
    K = U.shape[0]
    X = np.empty((K + 1, 4))
    X[0] = x0
    for k in range(K):
        X[k + 1] = A @ X[k] + B @ U[k]
    return X


_HESSIAN_CACHE: dict[tuple, np.ndarray] = {}


def _project_controls(U: np.ndarray, a_max: float) -> np.ndarray:
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    scale = np.where(norms > a_max, a_max / np.maximum(norms, 1e-300), 1.0)
    return U * scale


class _Objective:
    """J and its gradient on the condensed problem, with optional velocity penalty.

    The forward map and the adjoint are evaluated in closed form for the
    double-integrator dynamics (cumulative sums instead of per-step matrix
    products), which keeps each iteration O(K) with small constants.
    """

    def __init__(self, x0, ref, victim, params: MpcParams, mu: float):
        self.x0 = np.asarray(x0, dtype=float).reshape(4)
        self.ref = np.asarray(ref, dtype=float).reshape(params.horizon, 4)
        self.victim = None if victim is None else np.asarray(victim, dtype=float).reshape(params.horizon, 2)
        self.params = params
        self.mu = mu
        self.A, self.B = build_dynamics(params.dt)
        ks = np.arange(1, params.horizon + 1)
        self.wp = params.alpha_p * params.gamma_p**ks
        self.wv = params.alpha_v * params.gamma_v**ks
        self._Hq: np.ndarray | None = None

    def _fast_rollout(self, U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Positions and velocities at k = 1..K, each (K, 2)."""
        dt = self.params.dt
        V = self.x0[2:] + dt * np.cumsum(U, axis=0)
        Vprev = np.vstack([self.x0[2:], V[:-1]])
        P = self.x0[:2] + np.cumsum(dt * Vprev + 0.5 * dt**2 * U, axis=0)
        return P, V

    def value(self, U: np.ndarray, *, with_penalty=True) -> float:
        P, V = self._fast_rollout(U)
        return self._value_pv(P, V, with_penalty=with_penalty)

    def _value_pv(self, P: np.ndarray, V: np.ndarray, *, with_penalty=True) -> float:
        ep = P - self.ref[:, :2]
        ev = V - self.ref[:, 2:]
        J = float(self.wp @ (ep * ep).sum(axis=1) + self.wv @ (ev * ev).sum(axis=1))
        if self.victim is not None and self.params.alpha_c > 0:
            diff = P - self.victim
            d = np.sqrt((diff * diff).sum(axis=1))
            J += self.params.alpha_c * float((np.maximum(self.params.cutoff - d, 0.0) ** 2).sum())
        if with_penalty and self.mu > 0:
            s = np.sqrt((V * V).sum(axis=1))
            J += self.mu * float((np.maximum(s - self.params.v_max, 0.0) ** 2).sum())
        return J

    def value_from_states(self, X: np.ndarray, *, with_penalty=True) -> float:
        return self._value_pv(X[1:, :2], X[1:, 2:], with_penalty=with_penalty)

    def value_and_gradient(self, U: np.ndarray) -> tuple[float, np.ndarray]:
        K = self.params.horizon
        dt = self.params.dt
        P, V = self._fast_rollout(U)
        gp = 2.0 * self.wp[:, None] * (P - self.ref[:, :2])
        gv = 2.0 * self.wv[:, None] * (V - self.ref[:, 2:])
        if self.victim is not None and self.params.alpha_c > 0:
            diff = P - self.victim
            d = np.sqrt((diff * diff).sum(axis=1))
            active = d < self.params.cutoff
            safe = np.maximum(d, 1e-9)
            coef = np.where(active, -2.0 * self.params.alpha_c * (self.params.cutoff - d) / safe, 0.0)
            gp = gp + coef[:, None] * diff
        if self.mu > 0:
            s = np.sqrt((V * V).sum(axis=1))
            over = s > self.params.v_max
            safe = np.maximum(s, 1e-12)
            coef = np.where(over, 2.0 * self.mu * (s - self.params.v_max) / safe, 0.0)
            gv = gv + coef[:, None] * V
        # closed-form adjoint for these dynamics:
        # grad_u[j] = dt^2 * sum_{i>=j} (i + 1/2 - j) gp[i] + dt * sum_{i>=j} gv[i]
        rc_gp = np.cumsum(gp[::-1], axis=0)[::-1]
        rc_igp = np.cumsum(((np.arange(K) + 0.5)[:, None] * gp)[::-1], axis=0)[::-1]
        rc_gv = np.cumsum(gv[::-1], axis=0)[::-1]
        grad = dt**2 * (rc_igp - np.arange(K)[:, None] * rc_gp) + dt * rc_gv
        return self._value_pv(P, V), grad

    def quad_hessian(self) -> np.ndarray:
        """Exact (2K x 2K) Hessian of the quadratic tracking terms.

        Position coefficient of u_j on p_i is dt^2 (i + 1/2 - j) for i >= j and
        the velocity coefficient is dt; both planar components are independent
        and share scales, so the scalar K x K matrix is expanded with kron.
        """
        if self._Hq is None:
            key = (
                self.params.horizon, self.params.dt, self.params.alpha_p, self.params.alpha_v,
                self.params.gamma_p, self.params.gamma_v, self.mu,
            )
            cached = _HESSIAN_CACHE.get(key)
            if cached is None:
                K, dt = self.params.horizon, self.params.dt
                ii = np.arange(K)
                # coef[j, i] of u_j on p_i (i >= j), and dt on v_i
                Cp = dt**2 * np.where(ii[None, :] >= ii[:, None], ii[None, :] + 0.5 - ii[:, None], 0.0)
                mask = (ii[None, :] >= ii[:, None]).astype(float)
                Hs = 2.0 * (Cp * self.wp) @ Cp.T + 2.0 * dt**2 * (mask * (self.wv + self.mu)) @ mask.T
                cached = np.kron(Hs, np.eye(2))
                if len(_HESSIAN_CACHE) > 32:
                    _HESSIAN_CACHE.clear()
                _HESSIAN_CACHE[key] = cached
            self._Hq = cached
        return self._Hq

    def newton_direction(self, U: np.ndarray, g: np.ndarray) -> np.ndarray | None:
        """Projected-Newton trial direction with an active-set on saturated
        control balls and Gauss-Newton curvature for the hinge terms."""
        K, dt = self.params.horizon, self.params.dt
        H = self.quad_hessian().copy()
        P, V = self._fast_rollout(U)
        if self.victim is not None and self.params.alpha_c > 0:
            diff = P - self.victim
            d = np.sqrt((diff * diff).sum(axis=1))
            active = np.nonzero((d < self.params.cutoff) & (d > 1e-9))[0]
            if active.size:
                rows = np.zeros((active.size, K, 2))
                for r, i in enumerate(active):
                    nhat = diff[i] / d[i]
                    rows[r, : i + 1] = dt**2 * (i + 0.5 - np.arange(i + 1))[:, None] * nhat
                A_gn = rows.reshape(active.size, 2 * K)
                H += 2.0 * self.params.alpha_c * A_gn.T @ A_gn
        # active set: saturated blocks whose gradient pushes further outward
        norms = np.linalg.norm(U, axis=1)
        fixed = np.zeros(K, dtype=bool)
        for j in np.nonzero(norms >= self.params.a_max * (1 - 1e-12))[0]:
            if float(g[j] @ U[j]) < 0:
                fixed[j] = True
        free = np.repeat(~fixed, 2)
        if not np.any(free):
            return None
        Hf = H[np.ix_(free, free)]
        Hf = Hf + np.eye(Hf.shape[0]) * (1e-10 * max(np.trace(Hf), 1.0))
        try:
            df = np.linalg.solve(Hf, -g.ravel()[free])
        except np.linalg.LinAlgError:
            return None
        d = np.zeros(2 * K)
        d[free] = df
        return d.reshape(K, 2)


def objective_value(x_init, ref_traj, victim_traj, params: MpcParams, U: np.ndarray) -> float:
    """The planning objective (no constraint penalties) at a given control sequence."""
    return _Objective(x_init, ref_traj, victim_traj, params, mu=0.0).value(np.asarray(U, float).reshape(params.horizon, 2))


def objective_gradient(x_init, ref_traj, victim_traj, params: MpcParams, U: np.ndarray) -> np.ndarray:
    """Analytic gradient of the planning objective with respect to the controls."""
    _, g = _Objective(x_init, ref_traj, victim_traj, params, mu=0.0).value_and_gradient(
        np.asarray(U, float).reshape(params.horizon, 2)
    )
    return g


def solve_mpc(
    x_init: np.ndarray,
    ref_traj: np.ndarray,
    victim_traj: np.ndarray | None,
    params: MpcParams,
    warm_start: np.ndarray | None = None,
) -> MpcSolution:
    """Solve the K-step problem; returns a feasible local minimizer.

    ``ref_traj`` is (K, 4) reference states and ``victim_traj`` (K, 2) predicted
    victim positions (or None to drop the separation term). Controls respect
    the acceleration ball exactly; the velocity bound is enforced by an
    escalating outer penalty and verified on exit.
    """
    x_init = np.asarray(x_init, dtype=float).reshape(4)
    if np.linalg.norm(x_init[2:]) > params.v_max + 1e-9:
        raise ValueError(f"initial speed {np.linalg.norm(x_init[2:]):.3f} exceeds v_max={params.v_max}")
    K = params.horizon
    U = np.zeros((K, 2)) if warm_start is None else np.asarray(warm_start, dtype=float).reshape(K, 2).copy()
    U = _project_controls(U, params.a_max)

    total_iters = 0
    monotone = True
    converged = False
    # escalating velocity penalty; the exact restoration pass below closes
    # whatever small violation the penalty leaves over, so the (cheaper)
    # penalty rounds run on a reduced iteration budget
    for mu in (0.0, 1e2, 1e4):
        obj = _Objective(x_init, ref_traj, victim_traj, params, mu=mu)
        budget = params.max_iterations if mu == 0.0 else min(30, params.max_iterations)
        U, iters, conv, mono = _projected_descent(obj, U, params, budget)
        total_iters += iters
        monotone &= mono
        if mu == 0.0:
            converged = conv
        _, V = obj._fast_rollout(U)
        violation = float(np.max(np.maximum(np.linalg.norm(V, axis=1) - params.v_max, 0.0)))
        # the exact restoration pass tolerates small overshoots gracefully
        if violation <= max(params.velocity_tol, 0.05 * params.v_max):
            break

    clean = _Objective(x_init, ref_traj, victim_traj, params, mu=0.0)
    U = _restore_velocity_feasibility(x_init, U, clean.A, clean.B, params)
    X = rollout(x_init, U, clean.A, clean.B)
    violation = float(np.max(np.maximum(np.linalg.norm(X[1:, 2:], axis=1) - params.v_max, 0.0)))
    return MpcSolution(
        U=U.T.copy(),
        X=X.T.copy(),
        objective=clean.value_from_states(X, with_penalty=False),
        iterations=total_iters,
        converged=converged and violation <= params.velocity_tol,
        velocity_violation=violation,
        monotone=monotone,
    )


def _restore_velocity_feasibility(
    x0: np.ndarray, U: np.ndarray, A: np.ndarray, B: np.ndarray, params: MpcParams
) -> np.ndarray:
    """Forward pass making the velocity bound hold exactly.

    Each step's resulting velocity is projected onto the speed ball and the
    control recomputed from the projected velocity. Projection onto a convex
    set is non-expansive toward the (feasible) current velocity, so the
    corrected control never exceeds the original's norm and the acceleration
    bound is preserved.
    """
    out = U.copy()
    x = x0.copy()
    dt = params.dt
    for k in range(U.shape[0]):
        v_next = x[2:] + dt * out[k]
        speed = np.linalg.norm(v_next)
        if speed > params.v_max:
            v_next = v_next * (params.v_max / speed)
            out[k] = (v_next - x[2:]) / dt
        x = A @ x + B @ out[k]
    return out


def _projected_descent(
    obj: _Objective, U0: np.ndarray, params: MpcParams, max_iterations: int | None = None
) -> tuple[np.ndarray, int, bool, bool]:
    """Projected descent, Newton-first with a projected-gradient fallback.

    Each iteration tries a damped Newton direction (exact quadratic Hessian
    plus Gauss-Newton hinge curvature, saturated control balls held fixed) and
    falls back to a backtracking gradient step if the trial does not decrease
    the objective. Accepted iterates never increase the objective.
    Convergence is declared when the unit-step projected-gradient residual
    falls below a tolerance tied to the problem scale (the gradient at zero
    controls), so warm starts terminate quickly instead of chasing an
    iterate-relative target.
    """

    def project(U: np.ndarray) -> np.ndarray:
        return _project_controls(U, params.a_max)

    limit = params.max_iterations if max_iterations is None else max_iterations
    _, g0 = obj.value_and_gradient(np.zeros_like(U0))
    tol = params.grad_tol * max(1.0, float(np.linalg.norm(g0)))

    U = project(np.asarray(U0, dtype=float))
    J, g = obj.value_and_gradient(U)
    step = 1.0 / max(np.linalg.norm(g), 1e-12)
    monotone = True
    best_J = J
    stall = 0
    newton_rejections = 0
    newton_enabled = True
    for it in range(1, limit + 1):
        residual = np.linalg.norm(U - project(U - g))
        if residual < tol:
            return U, it - 1, True, monotone
        accepted = False
        d = obj.newton_direction(U, g) if newton_enabled and newton_rejections < 2 else None
        if d is not None and float((d * g).sum()) < 0:
            t = 1.0
            for _nt in range(6):
                cand = project(U + t * d)
                Jc = obj.value(cand)
                if Jc < J:
                    U, J = cand, Jc
                    _, g = obj.value_and_gradient(U)
                    accepted = True
                    newton_rejections = 0
                    break
                t *= 0.25
            if not accepted:
                newton_rejections += 1
                if newton_rejections >= 2:
                    # saturated phases reject Newton persistently; stop paying
                    # for trial directions within this solve
                    newton_enabled = False
        if not accepted:
            for _bt in range(30):
                cand = project(U - step * g)
                delta = U - cand
                Jc = obj.value(cand)
                if Jc <= J - 1e-4 / max(step, 1e-300) * float((delta * delta).sum()):
                    prev_g, prev_U = g, U
                    U, J = cand, Jc
                    _, g = obj.value_and_gradient(U)
                    # Barzilai-Borwein step seed for the next gradient step
                    dU = (U - prev_U).ravel()
                    dg = (g - prev_g).ravel()
                    denom = float(dU @ dg)
                    step = float(dU @ dU) / denom if denom > 1e-300 else step * 2.0
                    step = float(np.clip(step, 1e-12, 1e6))
                    accepted = True
                    break
                step *= 0.5
        if not accepted:
            return U, it, False, monotone
        if J < best_J - max(1e-6 * abs(best_J), 1e-12):
            best_J = J
            stall = 0
        else:
            stall += 1
            if stall >= 12:
                return U, it, False, monotone
    return U, limit, False, monotone


def cv_predict(state: np.ndarray, K: int, dt: float) -> np.ndarray:
    """Constant-velocity propagation of a 4-state over k = 1..K; returns (K, 4)."""
    A, _ = build_dynamics(dt)
    out = np.empty((K, 4))
    x = np.asarray(state, dtype=float).reshape(4).copy()
    for k in range(K):
        x = A @ x
        out[k] = x
    return out


def spoof_track(
    x0: np.ndarray,
    n_steps: int,
    network: Callable[[int], tuple[np.ndarray | None, np.ndarray | None]],
    params: MpcParams,
) -> tuple[np.ndarray, list[dict]]:
    """Receding-horizon generation of a full spoofed state sequence.

    At each step the current impostor/victim states are refreshed from
    ``network(n)`` (either may be None on reporting gaps, in which case the
    last prediction is held and flagged), constant-velocity reference and
    victim predictions are built over the horizon, the K-step problem is
    solved warm-started from the shifted previous solution, and only the first
    control is applied. Returns the (n_steps+1, 4) state sequence and a
    per-step diagnostics log.
    """
    A, B = build_dynamics(params.dt)
    x = np.asarray(x0, dtype=float).reshape(4).copy()
    S = [x.copy()]
    log: list[dict] = []
    warm = None
    last_imp: np.ndarray | None = None
    last_vic: np.ndarray | None = None
    for n in range(n_steps):
        imp, vic = network(n)
        held = imp is None
        if imp is not None:
            last_imp = np.asarray(imp, dtype=float).reshape(4).copy()
        elif last_imp is not None:
            last_imp = A @ last_imp  # hold: extrapolate the stale report
        if vic is not None:
            last_vic = np.asarray(vic, dtype=float).reshape(4).copy()
        elif last_vic is not None:
            last_vic = A @ last_vic
        if last_imp is None:
            raise ValueError("network accessor never provided an impostor state")
        ref = cv_predict(last_imp, params.horizon, params.dt)
        victim_pred = cv_predict(last_vic, params.horizon, params.dt)[:, :2] if last_vic is not None else None
        sol = solve_mpc(x, ref, victim_pred, params, warm_start=warm)
        u = sol.U[:, 0]
        x = A @ x + B @ u
        S.append(x.copy())
        warm = np.vstack([sol.U.T[1:], sol.U.T[-1:]])
        entry = {
            "n": n,
            "objective": sol.objective,
            "iterations": sol.iterations,
            "applied_u": u.copy(),
            "held_impostor": held,
        }
        if victim_pred is not None:
            entry["min_victim_distance"] = float(np.min(np.linalg.norm(sol.X[:2, 1:].T - victim_pred, axis=1)))
        log.append(entry)
    return np.array(S), log
