"""Lift a trajectory problem to one static vector z = (states, controls).

The stacked vector lives in R^M with M = n(T+1) + mT, ordered as
(x_0, ..., x_T, u_0, ..., u_{T-1}).  The lifted problem exposes the total
cost C(z), the dynamics residual D(z) (zero exactly on rollouts), the
affine frequency residuals S(z)/U(z), and cylinder extensions of the
admissible sets.  Evaluation is stagewise; nothing dense of size M x M is
ever formed here, so the general path stays O(T) in memory per stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import ProblemSpec, RolloutError

__all__ = [
    "LiftedPoint",
    "LiftedProblem",
    "lift",
    "unlift",
    "dynamics_residual",
    "lagrangian_dirderiv",
]


@dataclass(frozen=True)
class LiftedPoint:
    """Stacked decision vector with projection accessors."""

    data: np.ndarray
    state_dim: int
    control_dim: int
    horizon: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float).copy()
        M = self.state_dim * (self.horizon + 1) + self.control_dim * self.horizon
        if data.shape != (M,):
            raise ValueError(f"lifted data shape {data.shape} != ({M},)")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def size(self) -> int:
        return self.data.size

    def state(self, t: int) -> np.ndarray:
        n = self.state_dim
        if not 0 <= t <= self.horizon:
            raise IndexError(f"state index {t} outside 0..{self.horizon}")
        return self.data[t * n:(t + 1) * n]

    def control(self, t: int) -> np.ndarray:
        if not 0 <= t < self.horizon:
            raise IndexError(f"control index {t} outside 0..{self.horizon - 1}")
        off = self.state_dim * (self.horizon + 1)
        m = self.control_dim
        return self.data[off + t * m: off + (t + 1) * m]

    def states(self) -> np.ndarray:
        n = self.state_dim
        return self.data[: n * (self.horizon + 1)].reshape(self.horizon + 1, n)

    def controls(self) -> np.ndarray:
        off = self.state_dim * (self.horizon + 1)
        return self.data[off:].reshape(self.horizon, self.control_dim)


def lift(states, controls) -> LiftedPoint:
    """Concatenate (states, controls) into the stacked vector."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    T = controls.shape[0]
    if states.shape[0] != T + 1:
        raise ValueError("states must have one more row than controls")
    data = np.concatenate([states.ravel(), controls.ravel()])
    return LiftedPoint(data, states.shape[1], controls.shape[1], T)


def unlift(z: LiftedPoint):
    """Inverse of :func:`lift`."""
    return z.states().copy(), z.controls().copy()


def _slices(n: int, m: int, T: int):
    xs = [slice(t * n, (t + 1) * n) for t in range(T + 1)]
    off = n * (T + 1)
    us = [slice(off + t * m, off + (t + 1) * m) for t in range(T)]
    return xs, us


class LiftedProblem:
    """Stagewise evaluation of the lifted cost and constraint maps."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.n = spec.state_dim
        self.m = spec.control_dim
        self.T = spec.horizon
        self.M = spec.lifted_dim
        self.x_slices, self.u_slices = _slices(self.n, self.m, self.T)

    # -- views ---------------------------------------------------------

    def point(self, zdata: np.ndarray) -> LiftedPoint:
        return LiftedPoint(zdata, self.n, self.m, self.T)

    def states(self, zdata: np.ndarray) -> np.ndarray:
        return zdata[: self.n * (self.T + 1)].reshape(self.T + 1, self.n)

    def controls(self, zdata: np.ndarray) -> np.ndarray:
        return zdata[self.n * (self.T + 1):].reshape(self.T, self.m)

    # -- cost ------------------------------------------------------------

    def cost(self, zdata: np.ndarray) -> float:
        xs, us = self.states(zdata), self.controls(zdata)
        acc = 0.0
        for t in range(self.T):
            acc += self.spec.stage_costs[t].value(xs[t], us[t])
        return acc + self.spec.terminal_cost.value(xs[self.T])

    def cost_grad(self, zdata: np.ndarray) -> np.ndarray:
        xs, us = self.states(zdata), self.controls(zdata)
        g = np.zeros(self.M)
        for t in range(self.T):
            g[self.x_slices[t]] += self.spec.stage_costs[t].grad_x(xs[t], us[t])
            g[self.u_slices[t]] += self.spec.stage_costs[t].grad_u(xs[t], us[t])
        g[self.x_slices[self.T]] += self.spec.terminal_cost.grad(xs[self.T])
        return g

    # -- dynamics residual -------------------------------------------------

    def dynamics_residual(self, zdata: np.ndarray) -> np.ndarray:
        xs, us = self.states(zdata), self.controls(zdata)
        out = np.empty(self.n * self.T)
        for t in range(self.T):
            val = self.spec.dynamics[t](xs[t], us[t])
            if not np.all(np.isfinite(val)):
                raise RolloutError(t, "dynamics produced a non-finite value")
            out[t * self.n:(t + 1) * self.n] = xs[t + 1] - val
        return out

    def dynamics_jacobian(self, zdata: np.ndarray) -> np.ndarray:
        """Dense (nT, M) Jacobian of the residual, designated branch at kinks."""
        xs, us = self.states(zdata), self.controls(zdata)
        J = np.zeros((self.n * self.T, self.M))
        eye = np.eye(self.n)
        for t in range(self.T):
            rows = slice(t * self.n, (t + 1) * self.n)
            J[rows, self.x_slices[t + 1]] = eye
            J[rows, self.x_slices[t]] = -self.spec.dynamics[t].jac_x(xs[t], us[t])
            J[rows, self.u_slices[t]] = -self.spec.dynamics[t].jac_u(xs[t], us[t])
        return J

    def dynamics_jacobian_T_vec(self, zdata: np.ndarray, lambdas: np.ndarray) -> np.ndarray:
        """Compute D'(z)^T Lambda stagewise; lambdas has shape (T, n)."""
        xs, us = self.states(zdata), self.controls(zdata)
        out = np.zeros(self.M)
        for t in range(self.T):
            lam = lambdas[t]
            out[self.x_slices[t + 1]] += lam
            out[self.x_slices[t]] -= self.spec.dynamics[t].jac_x(xs[t], us[t]).T @ lam
            out[self.u_slices[t]] -= self.spec.dynamics[t].jac_u(xs[t], us[t]).T @ lam
        return out

    def dynamics_dirderiv(self, zdata: np.ndarray, v: np.ndarray) -> np.ndarray:
        """One-sided directional derivative of the residual along v,
        assembled from the per-stage ddx/ddu oracles."""
        xs, us = self.states(zdata), self.controls(zdata)
        out = np.empty(self.n * self.T)
        for t in range(self.T):
            vx = v[self.x_slices[t]]
            vu = v[self.u_slices[t]]
            d = self.spec.dynamics[t].ddx(xs[t], us[t], vx) + self.spec.dynamics[t].ddu(xs[t], us[t], vu)
            out[t * self.n:(t + 1) * self.n] = v[self.x_slices[t + 1]] - d
        return out

    # -- frequency maps ---------------------------------------------------

    def state_freq_residual(self, zdata: np.ndarray) -> np.ndarray:
        if self.spec.state_freq is None:
            return np.zeros(0)
        return self.spec.state_freq.residual(self.states(zdata))

    def control_freq_residual(self, zdata: np.ndarray) -> np.ndarray:
        if self.spec.control_freq is None:
            return np.zeros(0)
        return self.spec.control_freq.residual(self.controls(zdata))

    def state_freq_matrix(self) -> np.ndarray:
        """Constant (rows, M) Jacobian of the lifted state-frequency map."""
        if self.spec.state_freq is None:
            return np.zeros((0, self.M))
        fc = self.spec.state_freq
        J = np.zeros((fc.rows, self.M))
        for t in range(self.T + 1):
            J[:, self.x_slices[t]] = fc.stage_maps[t]
        return J

    def control_freq_matrix(self) -> np.ndarray:
        if self.spec.control_freq is None:
            return np.zeros((0, self.M))
        fc = self.spec.control_freq
        J = np.zeros((fc.rows, self.M))
        for t in range(self.T):
            J[:, self.u_slices[t]] = fc.stage_maps[t]
        return J

    # -- admissible product set -------------------------------------------

    def project_onto_sets(self, zdata: np.ndarray) -> np.ndarray:
        """Stagewise projection onto the product of X_t and U_t."""
        out = zdata.copy()
        for t in range(self.T + 1):
            out[self.x_slices[t]] = self.spec.state_sets[t].project(out[self.x_slices[t]])
        for t in range(self.T):
            out[self.u_slices[t]] = self.spec.control_sets[t].project(out[self.u_slices[t]])
        return out

    def box_bounds(self):
        """(lo, hi) for the product set when every factor is box-like, else None."""
        lo = np.empty(self.M)
        hi = np.empty(self.M)
        for t in range(self.T + 1):
            b = self.spec.state_sets[t].box_bounds()
            if b is None:
                return None
            lo[self.x_slices[t]], hi[self.x_slices[t]] = b
        for t in range(self.T):
            b = self.spec.control_sets[t].box_bounds()
            if b is None:
                return None
            lo[self.u_slices[t]], hi[self.u_slices[t]] = b
        return lo, hi


def dynamics_residual(spec: ProblemSpec, z: LiftedPoint) -> np.ndarray:
    """Stacked residual x_{t+1} - f_t(x_t, u_t); zero iff z encodes a rollout."""
    return LiftedProblem(spec).dynamics_residual(np.asarray(z.data, dtype=float))


def lagrangian_dirderiv(spec: ProblemSpec, z: LiftedPoint, mult, direction) -> float:
    """One-sided directional derivative of the weighted Lagrangian.

    ``mult`` is (nu, lambdas, mu_state, mu_control) with lambdas of shape
    (T, n).  The smooth terms (cost and the affine frequency maps) enter
    through plain inner products; the dynamics terms sum the per-stage
    one-sided derivatives of <lambda_t, x_{t+1} - f_t(x_t, u_t)>.  For
    fully smooth data the result is the gradient inner product.
    """
    nu, lambdas, mu_state, mu_control = mult
    lp = LiftedProblem(spec)
    zd = np.asarray(z.data, dtype=float)
    v = np.asarray(direction, dtype=float)
    if v.shape != zd.shape:
        raise ValueError(f"direction shape {v.shape} != {zd.shape}")
    lambdas = np.atleast_2d(np.asarray(lambdas, dtype=float))
    total = float(nu) * float(lp.cost_grad(zd) @ v)
    if spec.state_freq is not None:
        total += float(np.asarray(mu_state, dtype=float) @ (lp.state_freq_matrix() @ v))
    if spec.control_freq is not None:
        total += float(np.asarray(mu_control, dtype=float) @ (lp.control_freq_matrix() @ v))
    xs, us = lp.states(zd), lp.controls(zd)
    for t in range(lp.T):
        vx = v[lp.x_slices[t]]
        vu = v[lp.u_slices[t]]
        vx_next = v[lp.x_slices[t + 1]]
        dft = spec.dynamics[t].ddx(xs[t], us[t], vx) + spec.dynamics[t].ddu(xs[t], us[t], vu)
        total += float(lambdas[t] @ (vx_next - dft))
    return total
