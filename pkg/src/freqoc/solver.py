"""Trajectory synthesis: exact active-set KKT for linear-quadratic data and
an augmented-Lagrangian path for nonlinear or piecewise-smooth problems.

The linear-quadratic route (:func:`solve_lq`) solves the lifted convex QP by
primal active-set iteration on a dense KKT system: dynamics, frequency rows
and pinned coordinates form the fixed equality block; box bounds enter and
leave a working set one at a time with lowest-index tie-breaking.  The
returned multipliers are exact KKT duals, which the certificate module can
replay against the first-order optimality conditions.

The general route (:func:`solve_general`) runs an augmented-Lagrangian outer
loop over the equality maps (dynamics residual and both frequency maps)
with inner projected-gradient descent over the product of admissible sets,
following the designated branch of each dynamics oracle at kinks.  An
optional equality-KKT polish tightens stationarity when the final
trajectory stays clear of nonsmooth points.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.optimize

from .cones import Box, Singleton, Whole
from .lift import LiftedProblem
from .problem import ProblemSpec, QuadraticStageCost, QuadraticTerminalCost, Trajectory, total_cost

__all__ = [
    "SolverOptions",
    "Multipliers",
    "Solution",
    "SolverFailure",
    "solve_lq",
    "solve_general",
    "solve",
    "is_linear_quadratic",
    "adjoint_recursion_smooth",
]


class SolverFailure(RuntimeError):
    """Raised when a solve cannot produce a usable KKT point."""

    def __init__(self, kind: str, message: str, report: dict | None = None):
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.report = report or {}


@dataclass(frozen=True)
class SolverOptions:
    """Tuning knobs; defaults are the documented contract values."""

    max_outer_iters: int = 100
    max_inner_iters: int = 5000
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    violation_shrink: float = 0.25
    equality_tol: float = 1e-8
    stationarity_tol: float = 1e-6
    activity_tol: float = 1e-9
    armijo_factor: float = 0.5
    armijo_slope: float = 1e-4
    polish: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("penalty_init", "penalty_growth", "equality_tol",
                     "stationarity_tol", "activity_tol", "armijo_factor", "armijo_slope"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class Multipliers:
    """Multiplier tuple attached to a candidate trajectory.

    ``nu`` is the cost multiplier (solvers always return 1); ``lambdas`` are
    the adjoint vectors for the dynamics rows, ``mu_state``/``mu_control``
    the frequency-map multipliers, and ``eta_x``/``eta_u`` the pointwise
    set multipliers living in the respective normal cones.
    """

    nu: float
    lambdas: np.ndarray      # (T, n)
    mu_state: np.ndarray     # (rows_x,)
    mu_control: np.ndarray   # (rows_u,)
    eta_x: np.ndarray        # (T+1, n)
    eta_u: np.ndarray        # (T, m)

    def as_tuple(self):
        return (self.nu, self.lambdas, self.mu_state, self.mu_control)


@dataclass(frozen=True)
class Solution:
    trajectory: Trajectory
    multipliers: Multipliers
    objective: float
    converged: bool
    status: str
    diagnostics: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# Lifted QP assembly
# --------------------------------------------------------------------------


def is_linear_quadratic(spec: ProblemSpec) -> bool:
    """True when the exact active-set path applies."""
    if not all(d.affine is not None for d in spec.dynamics):
        return False
    if not all(isinstance(c, QuadraticStageCost) for c in spec.stage_costs):
        return False
    if not isinstance(spec.terminal_cost, QuadraticTerminalCost):
        return False
    sets = list(spec.state_sets) + list(spec.control_sets)
    return all(isinstance(s, (Box, Singleton, Whole)) for s in sets)


class _LiftedQP:
    """Dense data of the lifted QP plus row bookkeeping for multipliers."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        lp = LiftedProblem(spec)
        self.lp = lp
        n, m, T, M = lp.n, lp.m, lp.T, lp.M
        self.P = np.zeros((M, M))
        self.q = np.zeros(M)
        self.const = 0.0
        for t in range(T):
            c = spec.stage_costs[t]
            self.P[lp.x_slices[t], lp.x_slices[t]] += c.Q
            self.P[lp.u_slices[t], lp.u_slices[t]] += c.R
            self.q[lp.x_slices[t]] += c.q
            self.q[lp.u_slices[t]] += c.r
            self.const += c.const
        cT = spec.terminal_cost
        self.P[lp.x_slices[T], lp.x_slices[T]] += cT.Q
        self.q[lp.x_slices[T]] += cT.q
        self.const += cT.const

        rows = []
        rhs = []
        self.row_kind = []  # ("dyn", t, comp) | ("sfreq", r) | ("cfreq", r) | ("pin_x"/"pin_u", t, comp)
        for t in range(T):
            A, B, c = spec.dynamics[t].affine
            for i in range(n):
                r = np.zeros(M)
                r[lp.x_slices[t + 1]][...] = 0.0
                r[lp.x_slices[t + 1].start + i] = 1.0
                r[lp.x_slices[t]] = -A[i]
                r[lp.u_slices[t]] = -B[i]
                rows.append(r)
                rhs.append(c[i])
                self.row_kind.append(("dyn", t, i))
        if spec.state_freq is not None:
            Js = lp.state_freq_matrix()
            for r_i in range(Js.shape[0]):
                rows.append(Js[r_i])
                rhs.append(-spec.state_freq.offset[r_i])
                self.row_kind.append(("sfreq", r_i, 0))
        if spec.control_freq is not None:
            Ju = lp.control_freq_matrix()
            for r_i in range(Ju.shape[0]):
                rows.append(Ju[r_i])
                rhs.append(-spec.control_freq.offset[r_i])
                self.row_kind.append(("cfreq", r_i, 0))

        lo = np.full(M, -np.inf)
        hi = np.full(M, np.inf)

        def add_set(set_, sl, kind, t):
            if isinstance(set_, Singleton):
                for i in range(set_.dim):
                    r = np.zeros(M)
                    r[sl.start + i] = 1.0
                    rows.append(r)
                    rhs.append(set_.point[i])
                    self.row_kind.append((kind, t, i))
            elif isinstance(set_, Box):
                for i in range(set_.dim):
                    if np.isfinite(set_.lo[i]) and set_.lo[i] == set_.hi[i]:
                        r = np.zeros(M)
                        r[sl.start + i] = 1.0
                        rows.append(r)
                        rhs.append(set_.lo[i])
                        self.row_kind.append((kind, t, i))
                    else:
                        lo[sl.start + i] = set_.lo[i]
                        hi[sl.start + i] = set_.hi[i]
            elif isinstance(set_, Whole):
                pass
            else:
                raise ValueError(f"set {set_!r} unsupported by the LQ path")

        for t in range(T + 1):
            add_set(spec.state_sets[t], lp.x_slices[t], "pin_x", t)
        for t in range(T):
            add_set(spec.control_sets[t], lp.u_slices[t], "pin_u", t)

        self.E = np.array(rows).reshape(len(rows), M)
        self.e = np.array(rhs)
        self.lo, self.hi = lo, hi
        self.M = M

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.P @ z + self.q @ z + self.const)


def _coord_owner(lp: LiftedProblem, idx: int):
    """Map a lifted coordinate to ('x'|'u', stage, component)."""
    n, m, T = lp.n, lp.m, lp.T
    if idx < n * (T + 1):
        return ("x", idx // n, idx % n)
    idx -= n * (T + 1)
    return ("u", idx // m, idx % m)


class _BorderedKKT:
    """Solves [[K0, C^T], [C, 0]] systems where K0 = [[P, E^T], [E, 0]] is
    factored once and C holds unit rows for working-set bounds."""

    def __init__(self, P, E):
        self.M = P.shape[0]
        self.p = E.shape[0]
        dim = self.M + self.p
        K0 = np.zeros((dim, dim))
        K0[: self.M, : self.M] = P
        K0[: self.M, self.M:] = E.T
        K0[self.M:, : self.M] = E
        self.K0 = K0
        self._lu = None
        try:
            lu, piv = scipy.linalg.lu_factor(K0)
            d = np.abs(np.diag(lu))
            if d.min() > 1e-12 * max(d.max(), 1.0):
                self._lu = (lu, piv)
        except (scipy.linalg.LinAlgError, ValueError):
            self._lu = None
        self._cols = {}

    @property
    def factorized(self) -> bool:
        return self._lu is not None

    def _solve0(self, rhs):
        return scipy.linalg.lu_solve(self._lu, rhs)

    def _col(self, idx):
        if idx not in self._cols:
            r = np.zeros(self.M + self.p)
            r[idx] = 1.0
            self._cols[idx] = self._solve0(r)
        return self._cols[idx]

    def solve(self, rhs_top, active_idx, rhs_active):
        """Return (w, y_active) for the bordered system."""
        w0 = self._solve0(rhs_top)
        k = len(active_idx)
        if k == 0:
            return w0, np.zeros(0)
        V = np.column_stack([self._col(i) for i in active_idx])
        S = V[active_idx, :]
        yW = np.linalg.solve(S, w0[active_idx] - rhs_active)
        w = w0 - V @ yW
        return w, yW


def _phase1_feasible_point(qp: _LiftedQP) -> np.ndarray:
    """Bound-respecting point on the equality manifold (phase-1 LP)."""
    res = scipy.optimize.linprog(
        c=np.zeros(qp.M),
        A_eq=qp.E if qp.E.shape[0] else None,
        b_eq=qp.e if qp.E.shape[0] else None,
        bounds=list(zip(qp.lo, qp.hi)),
        method="highs",
    )
    if not res.success:
        raise SolverFailure(
            "infeasible",
            f"no bound-respecting point satisfies the equality constraints ({res.message})",
            {"lp_status": res.status},
        )
    return np.clip(res.x, qp.lo, qp.hi)


def solve_lq(spec: ProblemSpec, options: SolverOptions | None = None) -> Solution:
    """Exact KKT point of the lifted convex QP via primal active-set iteration.

    Requires affine dynamics, convex quadratic costs, and Box / Singleton /
    Whole admissible sets.  Returns primal and exact multipliers with nu = 1;
    the stationarity residual of the assembled KKT system is verified to be
    below ``options.stationarity_tol``.
    """
    opts = options or SolverOptions()
    if not is_linear_quadratic(spec):
        raise ValueError("solve_lq requires affine dynamics, quadratic costs, box-like sets")
    qp = _LiftedQP(spec)
    lp = qp.lp
    M, p = qp.M, qp.E.shape[0]

    # consistency of the equality block alone
    z_ls, *_ = np.linalg.lstsq(qp.E, qp.e, rcond=None)
    eq_gap = float(np.max(np.abs(qp.E @ z_ls - qp.e))) if p else 0.0
    if eq_gap > 1e-6 * (1.0 + float(np.max(np.abs(qp.e))) if p else 1.0):
        raise SolverFailure(
            "infeasible",
            f"equality constraints are inconsistent (least-squares gap {eq_gap:.3e})",
            {"equality_gap": eq_gap},
        )

    kkt = _BorderedKKT(qp.P, qp.E)

    def bordered(rhs_top, active, rhs_active):
        idx = [i for i, _ in active]
        if kkt.factorized:
            w, yW = kkt.solve(rhs_top, idx, rhs_active)
            # one step of iterative refinement on the full bordered system
            resid_top = rhs_top - kkt.K0 @ w
            for j, i in enumerate(idx):
                resid_top[i] -= yW[j]
            resid_act = rhs_active - w[idx] if len(idx) else rhs_active
            dw, dy = kkt.solve(resid_top, idx, resid_act)
            return w + dw, yW + dy
        # dense fallback for rank-deficient base systems
        k = len(idx)
        dim = M + p + k
        K = np.zeros((dim, dim))
        K[: M + p, : M + p] = kkt.K0
        for j, i in enumerate(idx):
            K[i, M + p + j] = 1.0
            K[M + p + j, i] = 1.0
        rhs = np.concatenate([rhs_top, rhs_active])
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        if np.max(np.abs(K @ sol - rhs)) > 1e-6 * (1.0 + np.max(np.abs(rhs))):
            raise SolverFailure("infeasible", "KKT system has no solution for the working set")
        return sol[: M + p], sol[M + p:]

    ptol = opts.activity_tol
    # unconstrained-in-bounds first shot; feasible instances often need no more
    w, yW = bordered(np.concatenate([-qp.q, qp.e]), [], np.zeros(0))
    z = w[:M]
    active: list = []  # (coordinate index, side) with side +1 at hi, -1 at lo
    if np.any(z > qp.hi + ptol) or np.any(z < qp.lo - ptol):
        # phase-1 restart; the working set fills up via blocking constraints
        z = _phase1_feasible_point(qp)
        active = []

    # primal active-set iteration: every step solves the equality-constrained
    # KKT system with the working-set bounds pinned, then either moves to the
    # blocking bound (add) or releases a wrong-signed multiplier (drop).
    # Cycling needs drop events, so only working sets seen at drops are
    # recorded; the record resets whenever the objective strictly decreases.
    seen_at_drop = set()
    best_obj = None
    dual_slack = 1e-9  # escalated when degenerate multipliers toggle signs
    max_iters = max(400, 6 * M)
    status = ""
    for it in range(max_iters):
        obj_now = qp.objective(z)
        if best_obj is None or obj_now < best_obj - 1e-13 * (1.0 + abs(best_obj)):
            best_obj = obj_now
            seen_at_drop.clear()
        rhs_top = np.concatenate([-(qp.P @ z + qp.q), qp.e - qp.E @ z])
        w, yW = bordered(rhs_top, active, np.zeros(len(active)))
        pvec = w[:M]
        # threshold sits above the refined KKT solve's noise floor
        if np.max(np.abs(pvec)) <= 1e-9 * (1.0 + np.max(np.abs(z))):
            # stationary on the working set; verify multiplier signs
            dual_tol = dual_slack * (1.0 + (np.max(np.abs(yW)) if len(yW) else 0.0))
            wrong = []
            for j, (i, side) in enumerate(active):
                if side > 0 and yW[j] < -dual_tol:
                    wrong.append((i, side))
                elif side < 0 and yW[j] > dual_tol:
                    wrong.append((i, side))
            if not wrong:
                status = f"optimal after {it + 1} active-set iterations"
                break
            key = frozenset(active)
            if key in seen_at_drop:
                dual_slack *= 100.0
                seen_at_drop.clear()
                if dual_slack > 1e-5:
                    raise SolverFailure("cycle", f"active-set cycle after {it} iterations")
                continue
            seen_at_drop.add(key)
            wrong.sort()
            active.remove(wrong[0])
            continue
        # longest feasible step along pvec
        alpha = 1.0
        blocker = None
        in_ws = {i for i, _ in active}
        for i in range(M):
            if i in in_ws:
                continue
            if pvec[i] > 1e-14 and np.isfinite(qp.hi[i]):
                a = (qp.hi[i] - z[i]) / pvec[i]
                if a < alpha - 1e-14:
                    alpha, blocker = max(a, 0.0), (i, +1)
            elif pvec[i] < -1e-14 and np.isfinite(qp.lo[i]):
                a = (qp.lo[i] - z[i]) / pvec[i]
                if a < alpha - 1e-14:
                    alpha, blocker = max(a, 0.0), (i, -1)
        z = z + alpha * pvec
        if blocker is not None:
            z[blocker[0]] = qp.hi[blocker[0]] if blocker[1] > 0 else qp.lo[blocker[0]]
            active.append(blocker)
            active.sort()
    else:
        raise SolverFailure("cycle", f"no convergence within {max_iters} active-set iterations")

    y_eq = w[M: M + p]
    # stationarity residual of the full KKT system
    grad = qp.P @ z + qp.q + qp.E.T @ y_eq
    for j, (i, _) in enumerate(active):
        grad[i] += yW[j]
    stat_res = float(np.max(np.abs(grad))) if M else 0.0
    eq_res = float(np.max(np.abs(qp.E @ z - qp.e))) if p else 0.0
    if stat_res > opts.stationarity_tol or eq_res > 1e-6:
        raise SolverFailure(
            "nonconverged",
            f"KKT residuals too large (stationarity {stat_res:.3e}, equality {eq_res:.3e})",
        )

    T, n, m = lp.T, lp.n, lp.m
    lambdas = np.zeros((T, n))
    mu_s = np.zeros(spec.state_freq.rows if spec.state_freq else 0)
    mu_c = np.zeros(spec.control_freq.rows if spec.control_freq else 0)
    eta_x = np.zeros((T + 1, n))
    eta_u = np.zeros((T, m))
    for r_i, (kind, t, comp) in enumerate(qp.row_kind):
        if kind == "dyn":
            lambdas[t, comp] = y_eq[r_i]
        elif kind == "sfreq":
            mu_s[t] = y_eq[r_i]
        elif kind == "cfreq":
            mu_c[t] = y_eq[r_i]
        elif kind == "pin_x":
            eta_x[t, comp] = y_eq[r_i]
        elif kind == "pin_u":
            eta_u[t, comp] = y_eq[r_i]
    for j, (i, _) in enumerate(active):
        space, t, comp = _coord_owner(lp, i)
        if space == "x":
            eta_x[t, comp] += yW[j]
        else:
            eta_u[t, comp] += yW[j]

    traj = Trajectory(lp.states(z), lp.controls(z))
    mult = Multipliers(1.0, lambdas, mu_s, mu_c, eta_x, eta_u)
    return Solution(
        trajectory=traj,
        multipliers=mult,
        objective=qp.objective(z),
        converged=True,
        status=status,
        diagnostics={
            "iterations": it + 1,
            "stationarity_residual": stat_res,
            "equality_residual": eq_res,
            "active_bounds": len(active),
        },
    )


# --------------------------------------------------------------------------
# Augmented-Lagrangian general path
# --------------------------------------------------------------------------


def _sanitize_eta(set_, x, eta, tol):
    """Force a stationarity-gap block into the Clarke normal cone of the set."""
    if isinstance(set_, Whole):
        return np.zeros_like(eta)
    if isinstance(set_, Singleton):
        return eta
    if isinstance(set_, Box):
        at_lo, at_hi = set_._active(x, tol)
        out = np.zeros_like(eta)
        for i in range(set_.dim):
            if at_lo[i] and at_hi[i]:
                out[i] = eta[i]
            elif at_lo[i]:
                out[i] = min(eta[i], 0.0)
            elif at_hi[i]:
                out[i] = max(eta[i], 0.0)
        return out
    if set_.normal_contains(x, eta):
        return eta
    gens = set_.normal_generators(np.asarray(x, dtype=float))
    if gens.shape[0] == 0:
        return np.zeros_like(eta)
    coef, _ = scipy.optimize.nnls(gens.T, eta)
    return gens.T @ coef


def _initial_point(lp: LiftedProblem) -> np.ndarray:
    spec = lp.spec
    z = np.zeros(lp.M)
    u0 = np.zeros((lp.T, lp.m))
    for t in range(lp.T):
        u0[t] = spec.control_sets[t].project(np.zeros(lp.m))
    x = np.zeros((lp.T + 1, lp.n))
    x[0] = spec.state_sets[0].project(np.zeros(lp.n))
    for t in range(lp.T):
        try:
            x[t + 1] = spec.dynamics[t](x[t], u0[t])
        except Exception:
            x[t + 1] = x[t]
        if not np.all(np.isfinite(x[t + 1])):
            x[t + 1] = x[t]
        x[t + 1] = spec.state_sets[t + 1].project(x[t + 1])
    z[: lp.n * (lp.T + 1)] = x.ravel()
    z[lp.n * (lp.T + 1):] = u0.ravel()
    return lp.project_onto_sets(z)


def solve_general(spec: ProblemSpec, options: SolverOptions | None = None) -> Solution:
    """Augmented-Lagrangian solve over the product of admissible sets.

    Equality maps (dynamics residual and frequency maps) are penalized; the
    inner loop is projected gradient descent with Armijo backtracking and a
    Barzilai-Borwein initial step, using the designated-branch derivatives
    at kinks.  Non-convergence is reported in the returned Solution, never
    silently accepted.
    """
    opts = options or SolverOptions()
    lp = LiftedProblem(spec)
    Js = lp.state_freq_matrix()
    Ju = lp.control_freq_matrix()
    lam = np.zeros(lp.n * lp.T)
    mu_s = np.zeros(Js.shape[0])
    mu_c = np.zeros(Ju.shape[0])
    rho = opts.penalty_init
    z = _initial_point(lp)

    def residuals(zv):
        return (lp.dynamics_residual(zv), lp.state_freq_residual(zv), lp.control_freq_residual(zv))

    def al_value(zv):
        d, s, u = residuals(zv)
        pen = d @ d + s @ s + u @ u
        return (lp.cost(zv) + lam @ d + mu_s @ s + mu_c @ u + 0.5 * rho * pen), (d, s, u)

    def al_grad(zv, d, s, u):
        g = lp.cost_grad(zv)
        g += lp.dynamics_jacobian_T_vec(zv, (lam + rho * d).reshape(lp.T, lp.n))
        if Js.shape[0]:
            g += Js.T @ (mu_s + rho * s)
        if Ju.shape[0]:
            g += Ju.T @ (mu_c + rho * u)
        return g

    def inner_minimize(zv, tol):
        f, (d, s, u) = al_value(zv)
        g = al_grad(zv, d, s, u)
        z_prev, g_prev = None, None
        alpha = 1.0 / max(1.0, np.linalg.norm(g))
        stall = 0
        for _ in range(opts.max_inner_iters):
            step_gap = np.max(np.abs(zv - lp.project_onto_sets(zv - g)))
            if step_gap <= tol:
                break
            if stall >= 30:
                break
            if z_prev is not None:
                sv = zv - z_prev
                yv = g - g_prev
                sy = sv @ yv
                if sy > 1e-16:
                    alpha = float(np.clip((sv @ sv) / sy, 1e-12, 1e8))
            trial_alpha = alpha
            accepted = False
            for _bt in range(60):
                z_trial = lp.project_onto_sets(zv - trial_alpha * g)
                f_trial, (dt, st, ut) = al_value(z_trial)
                decrease = opts.armijo_slope * float(g @ (zv - z_trial))
                if f_trial <= f - decrease:
                    accepted = True
                    break
                trial_alpha *= opts.armijo_factor
            if not accepted:
                break
            stall = stall + 1 if f - f_trial <= 1e-16 * (1.0 + abs(f)) else 0
            z_prev, g_prev = zv, g
            zv, f, (d, s, u) = z_trial, f_trial, (dt, st, ut)
            g = al_grad(zv, d, s, u)
        return zv

    history = []
    v_best = np.inf
    converged = False
    inner_tol = 1e-2
    for outer in range(opts.max_outer_iters):
        z = inner_minimize(z, inner_tol)
        d, s, u = residuals(z)
        v = max(
            float(np.max(np.abs(d))) if d.size else 0.0,
            float(np.max(np.abs(s))) if s.size else 0.0,
            float(np.max(np.abs(u))) if u.size else 0.0,
        )
        improved = v <= max(opts.equality_tol, opts.violation_shrink * v_best)
        if improved:
            lam = lam + rho * d
            mu_s = mu_s + rho * s
            mu_c = mu_c + rho * u
            v_best = min(v_best, v)
            inner_tol = max(inner_tol * 0.2, 1e-9)
        else:
            rho *= opts.penalty_growth
            inner_tol = max(min(inner_tol, 10.0 / rho), 1e-9)
        history.append({"outer": outer, "violation": v, "rho": rho, "updated": improved})
        gL = lp.cost_grad(z) + lp.dynamics_jacobian_T_vec(z, lam.reshape(lp.T, lp.n))
        if Js.shape[0]:
            gL += Js.T @ mu_s
        if Ju.shape[0]:
            gL += Ju.T @ mu_c
        stat = float(np.max(np.abs(z - lp.project_onto_sets(z - gL))))
        if v <= opts.equality_tol and stat <= opts.stationarity_tol:
            converged = True
            break
        if rho > 1e14:
            break

    if opts.polish and max(
        float(np.max(np.abs(lp.dynamics_residual(z)))),
        float(np.max(np.abs(lp.state_freq_residual(z)))) if Js.shape[0] else 0.0,
        float(np.max(np.abs(lp.control_freq_residual(z)))) if Ju.shape[0] else 0.0,
    ) <= max(opts.equality_tol, 1e-6):
        polished = _kkt_polish(lp, z, lam, mu_s, mu_c, opts)
        if polished is not None:
            z, lam, mu_s, mu_c = polished

    d, s, u = residuals(z)
    v = max(
        float(np.max(np.abs(d))) if d.size else 0.0,
        float(np.max(np.abs(s))) if s.size else 0.0,
        float(np.max(np.abs(u))) if u.size else 0.0,
    )
    gL = lp.cost_grad(z) + lp.dynamics_jacobian_T_vec(z, lam.reshape(lp.T, lp.n))
    if Js.shape[0]:
        gL += Js.T @ mu_s
    if Ju.shape[0]:
        gL += Ju.T @ mu_c
    stat = float(np.max(np.abs(z - lp.project_onto_sets(z - gL))))
    converged = v <= opts.equality_tol and stat <= opts.stationarity_tol

    gap = -gL
    eta_x = np.zeros((lp.T + 1, lp.n))
    eta_u = np.zeros((lp.T, lp.m))
    xs, us = lp.states(z), lp.controls(z)
    for t in range(lp.T + 1):
        eta_x[t] = _sanitize_eta(spec.state_sets[t], xs[t], gap[lp.x_slices[t]], opts.activity_tol)
    for t in range(lp.T):
        eta_u[t] = _sanitize_eta(spec.control_sets[t], us[t], gap[lp.u_slices[t]], opts.activity_tol)

    traj = Trajectory(xs, us)
    mult = Multipliers(1.0, lam.reshape(lp.T, lp.n).copy(), mu_s.copy(), mu_c.copy(), eta_x, eta_u)
    status = "converged" if converged else (
        f"not converged: constraint violation {v:.3e}, stationarity {stat:.3e}"
    )
    return Solution(
        trajectory=traj,
        multipliers=mult,
        objective=total_cost(spec, traj),
        converged=converged,
        status=status,
        diagnostics={
            "outer_history": history,
            "violation": v,
            "stationarity": stat,
            "rho_final": rho,
        },
    )


def _kkt_polish(lp: LiftedProblem, z, lam, mu_s, mu_c, opts):
    """Newton-polish the first-order system on the frozen active set.

    Only applies when the trajectory sits strictly inside the smooth regime
    of every dynamics oracle; rejected (returns None) if the root find
    fails, leaves the active set, or flips a bound-multiplier sign.
    """
    spec = lp.spec
    xs, us = lp.states(z), lp.controls(z)
    for t in range(lp.T):
        if not (spec.dynamics[t].is_smooth_in_x(xs[t], us[t])
                and spec.dynamics[t].is_smooth_in_u(xs[t], us[t])):
            return None
    bounds = lp.box_bounds()
    if bounds is None:
        return None
    lo, hi = bounds
    pins = []
    for i in range(lp.M):
        if np.isfinite(lo[i]) and abs(z[i] - lo[i]) <= max(opts.activity_tol, 1e-7):
            pins.append((i, lo[i], -1))
        elif np.isfinite(hi[i]) and abs(z[i] - hi[i]) <= max(opts.activity_tol, 1e-7):
            pins.append((i, hi[i], +1))
    # singletons already appear as lo == hi coordinates: pin without sign restriction
    Js = lp.state_freq_matrix()
    Ju = lp.control_freq_matrix()
    nd, ns, nc, npin = lp.n * lp.T, Js.shape[0], Ju.shape[0], len(pins)

    def unpack(v):
        zz = v[: lp.M]
        off = lp.M
        ll = v[off: off + nd]
        off += nd
        ms = v[off: off + ns]
        off += ns
        mc = v[off: off + nc]
        off += nc
        kap = v[off: off + npin]
        return zz, ll, ms, mc, kap

    def F(v):
        zz, ll, ms, mc, kap = unpack(v)
        g = lp.cost_grad(zz) + lp.dynamics_jacobian_T_vec(zz, ll.reshape(lp.T, lp.n))
        if ns:
            g += Js.T @ ms
        if nc:
            g += Ju.T @ mc
        for j, (i, _, _) in enumerate(pins):
            g[i] += kap[j]
        eqs = [g, lp.dynamics_residual(zz)]
        if ns:
            eqs.append(lp.state_freq_residual(zz))
        if nc:
            eqs.append(lp.control_freq_residual(zz))
        if npin:
            eqs.append(np.array([zz[i] - b for i, b, _ in pins]))
        return np.concatenate(eqs)

    v0 = np.concatenate([z, lam, mu_s, mu_c, np.zeros(npin)])
    try:
        res = scipy.optimize.root(F, v0, method="hybr", tol=1e-12)
    except Exception:
        return None
    if not res.success and np.max(np.abs(F(res.x))) > 1e-9:
        return None
    zz, ll, ms, mc, kap = unpack(res.x)
    if np.max(np.abs(zz - z)) > 1e-3 * (1.0 + np.max(np.abs(z))):
        return None  # wandered off; distrust the polish
    if np.any(zz < lo - 1e-9) or np.any(zz > hi + 1e-9):
        return None
    for j, (i, _, side) in enumerate(pins):
        if side > 0 and kap[j] < -1e-8:
            return None
        if side < 0 and kap[j] > 1e-8:
            return None
    return zz, ll, ms, mc


def solve(spec: ProblemSpec, options: SolverOptions | None = None) -> Solution:
    """Dispatch to the exact LQ path when the structure allows, else the
    augmented-Lagrangian path."""
    if is_linear_quadratic(spec):
        return solve_lq(spec, options)
    return solve_general(spec, options)


def adjoint_recursion_smooth(spec: ProblemSpec, sol: Solution) -> np.ndarray:
    """Backward adjoint recursion for dynamics smooth in the state.

    Starts from the terminal condition
    ``lambda_{T-1} = -nu grad c_T - G_T^T mu_state - eta_x[T]`` and applies
    ``lambda_{t-1} = (df_t/dx)^T lambda_t - nu grad_x c_t - G_t^T mu_state - eta_x[t]``
    for t = T-1 .. 1.  Refuses (raises) when a visited interior state is a
    nonsmooth point of its stage map; inclusion checks handle those.

    The replay compounds the state transition backward, so on long horizons
    of unstable plants float noise is amplified exponentially; prefer the
    certificate's per-stage residuals there.
    """
    T, n = spec.horizon, spec.state_dim
    xs, us = sol.trajectory.states, sol.trajectory.controls
    mult = sol.multipliers
    nu, mu_s = mult.nu, mult.mu_state

    def gx(t):
        if spec.state_freq is None:
            return np.zeros(n)
        return spec.state_freq.stage_maps[t].T @ mu_s

    lambdas = np.zeros((T, n))
    lambdas[T - 1] = -nu * spec.terminal_cost.grad(xs[T]) - gx(T) - mult.eta_x[T]
    for t in range(T - 1, 0, -1):
        if not spec.dynamics[t].is_smooth_in_x(xs[t], us[t]):
            raise ValueError(
                f"dynamics not smooth in x at stage {t}; use the inclusion checks instead"
            )
        A_t = spec.dynamics[t].jac_x(xs[t], us[t])
        lambdas[t - 1] = (
            A_t.T @ lambdas[t]
            - nu * spec.stage_costs[t].grad_x(xs[t], us[t])
            - gx(t)
            - mult.eta_x[t]
        )
    return lambdas
