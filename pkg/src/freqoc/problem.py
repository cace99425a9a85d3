"""Core problem model: dynamics oracles, stage costs, admissible tubes.

A :class:`ProblemSpec` collects everything a finite-horizon discrete-time
trajectory problem needs: per-stage transition oracles, smooth stage and
terminal costs, closed admissible sets for states and controls, optional
band (frequency) equality constraints, and boundary data.  Fixed boundary
states are always realized as singleton admissible sets so the cone
calculus treats them uniformly with every other pointwise constraint.

All objects are immutable value data after construction and safe for
concurrent read-only use; the operations here are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cones import AdmissibleSet, Singleton, Whole
from .spectrum import FrequencyConstraint

__all__ = [
    "DynamicsOracle",
    "StageCostOracle",
    "QuadraticStageCost",
    "TerminalCostOracle",
    "QuadraticTerminalCost",
    "Trajectory",
    "ProblemSpec",
    "ValidationReport",
    "RolloutError",
    "validate",
    "simulate",
    "total_cost",
]

# Step used by the numeric one-sided fallback derivative.  Oracles should
# supply exact directional derivatives; the fallback is accurate to about
# sqrt(eps) and exists only so partially specified models remain usable.
_FALLBACK_STEP = 1e-7


class RolloutError(RuntimeError):
    """Non-finite dynamics or cost output, tagged with the offending stage."""

    def __init__(self, stage: int, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


def _as_predicate(flag):
    if callable(flag):
        return flag
    return lambda x, u, _v=bool(flag): _v


class DynamicsOracle:
    """Per-stage transition map with one-sided directional derivatives.

    Parameters
    ----------
    fn : callable
        (x, u) -> next state, locally Lipschitz.
    jac_x, jac_u : callable, optional
        Exact Jacobians where the map is smooth.  At kinks they must return
        the designated-branch representative the solver should follow.
    ddx, ddu : callable, optional
        Exact one-sided directional derivatives (x, u, direction) -> vector.
        Defaults to Jacobian action when available, else a one-sided
        numeric difference.
    smooth_in_x, smooth_in_u : bool or callable
        Point predicates (x, u) -> bool; constants are promoted.
    affine : tuple, optional
        (A, B, c) for maps of the form A x + B u + c; enables the exact
        linear-quadratic solver path.
    kink_directions : callable, optional
        (x, u) -> list of ("x"|"u", direction) pairs worth probing at that
        point; used by inclusion checks near nonsmooth structure.
    """

    def __init__(
        self,
        fn,
        *,
        jac_x=None,
        jac_u=None,
        ddx=None,
        ddu=None,
        smooth_in_x=True,
        smooth_in_u=True,
        affine=None,
        kink_directions=None,
        name: str = "",
    ):
        self._fn = fn
        self._jac_x = jac_x
        self._jac_u = jac_u
        self._ddx = ddx
        self._ddu = ddu
        self._smooth_in_x = _as_predicate(smooth_in_x)
        self._smooth_in_u = _as_predicate(smooth_in_u)
        self.affine = None
        if affine is not None:
            A, B, c = affine
            A = np.asarray(A, dtype=float)
            B = np.asarray(B, dtype=float)
            c = np.zeros(A.shape[0]) if c is None else np.asarray(c, dtype=float)
            self.affine = (A, B, c)
        self._kinks = kink_directions
        self.name = name

    @classmethod
    def linear(cls, A, B, c=None, name: str = "") -> "DynamicsOracle":
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        c = np.zeros(A.shape[0]) if c is None else np.asarray(c, dtype=float)
        return cls(
            lambda x, u: A @ x + B @ u + c,
            jac_x=lambda x, u: A,
            jac_u=lambda x, u: B,
            smooth_in_x=True,
            smooth_in_u=True,
            affine=(A, B, c),
            name=name or "linear",
        )

    @classmethod
    def smooth(cls, fn, jac_x, jac_u, name: str = "") -> "DynamicsOracle":
        return cls(fn, jac_x=jac_x, jac_u=jac_u, name=name)

    def __call__(self, x, u) -> np.ndarray:
        return np.asarray(self._fn(np.asarray(x, dtype=float), np.asarray(u, dtype=float)), dtype=float)

    def is_smooth_in_x(self, x, u) -> bool:
        return bool(self._smooth_in_x(x, u))

    def is_smooth_in_u(self, x, u) -> bool:
        return bool(self._smooth_in_u(x, u))

    def jac_x(self, x, u) -> np.ndarray:
        if self._jac_x is not None:
            return np.asarray(self._jac_x(x, u), dtype=float)
        # fallback: assemble columns from one-sided directional derivatives
        x = np.asarray(x, dtype=float)
        cols = [self.ddx(x, u, e) for e in np.eye(x.size)]
        return np.column_stack(cols)

    def jac_u(self, x, u) -> np.ndarray:
        if self._jac_u is not None:
            return np.asarray(self._jac_u(x, u), dtype=float)
        u = np.asarray(u, dtype=float)
        cols = [self.ddu(x, u, e) for e in np.eye(u.size)]
        return np.column_stack(cols)

    def ddx(self, x, u, y) -> np.ndarray:
        """One-sided directional derivative of f(., u) at x along y."""
        if self._ddx is not None:
            return np.asarray(self._ddx(x, u, y), dtype=float)
        if self._jac_x is not None:
            return np.asarray(self._jac_x(x, u), dtype=float) @ np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        h = _FALLBACK_STEP * (1.0 + np.linalg.norm(x))
        return (self(x + h * y, u) - self(x, u)) / h

    def ddu(self, x, u, w) -> np.ndarray:
        """One-sided directional derivative of f(x, .) at u along w."""
        if self._ddu is not None:
            return np.asarray(self._ddu(x, u, w), dtype=float)
        if self._jac_u is not None:
            return np.asarray(self._jac_u(x, u), dtype=float) @ np.asarray(w, dtype=float)
        u = np.asarray(u, dtype=float)
        w = np.asarray(w, dtype=float)
        h = _FALLBACK_STEP * (1.0 + np.linalg.norm(u))
        return (self(x, u + h * w) - self(x, u)) / h

    def kink_directions(self, x, u):
        if self._kinks is None:
            return []
        return list(self._kinks(x, u))


class StageCostOracle:
    """Continuously differentiable stage cost c(x, u) with exact gradients."""

    def __init__(self, value, grad_x, grad_u, name: str = ""):
        self._value = value
        self._grad_x = grad_x
        self._grad_u = grad_u
        self.name = name

    def value(self, x, u) -> float:
        return float(self._value(np.asarray(x, dtype=float), np.asarray(u, dtype=float)))

    def grad_x(self, x, u) -> np.ndarray:
        return np.asarray(self._grad_x(x, u), dtype=float)

    def grad_u(self, x, u) -> np.ndarray:
        return np.asarray(self._grad_u(x, u), dtype=float)


class QuadraticStageCost(StageCostOracle):
    """c(x, u) = x'Qx/2 + q'x + u'Ru/2 + r'u + const with Q, R symmetric PSD."""

    def __init__(self, Q, R, q=None, r=None, const: float = 0.0):
        self.Q = np.asarray(Q, dtype=float)
        self.R = np.asarray(R, dtype=float)
        n, m = self.Q.shape[0], self.R.shape[0]
        self.q = np.zeros(n) if q is None else np.asarray(q, dtype=float)
        self.r = np.zeros(m) if r is None else np.asarray(r, dtype=float)
        self.const = float(const)
        super().__init__(
            lambda x, u: 0.5 * x @ self.Q @ x + self.q @ x + 0.5 * u @ self.R @ u + self.r @ u + self.const,
            lambda x, u: self.Q @ x + self.q,
            lambda x, u: self.R @ u + self.r,
            name="quadratic",
        )


class TerminalCostOracle:
    """Terminal cost c_T(x).  ``dd`` optionally supplies the one-sided
    directional derivative for merely regular (nonsmooth) terminal costs."""

    def __init__(self, value, grad=None, dd=None, name: str = ""):
        self._value = value
        self._grad = grad
        self._dd = dd
        self.name = name

    @property
    def smooth(self) -> bool:
        return self._grad is not None

    def value(self, x) -> float:
        return float(self._value(np.asarray(x, dtype=float)))

    def grad(self, x) -> np.ndarray:
        if self._grad is None:
            raise ValueError("terminal cost has no gradient; use dd for inclusion checks")
        return np.asarray(self._grad(x), dtype=float)

    def dd(self, x, y) -> float:
        if self._dd is not None:
            return float(self._dd(x, y))
        return float(self.grad(x) @ np.asarray(y, dtype=float))


class QuadraticTerminalCost(TerminalCostOracle):
    def __init__(self, Q, q=None, const: float = 0.0):
        self.Q = np.asarray(Q, dtype=float)
        self.q = np.zeros(self.Q.shape[0]) if q is None else np.asarray(q, dtype=float)
        self.const = float(const)
        super().__init__(
            lambda x: 0.5 * x @ self.Q @ x + self.q @ x + self.const,
            lambda x: self.Q @ x + self.q,
            name="quadratic-terminal",
        )


def zero_terminal_cost(n: int) -> QuadraticTerminalCost:
    return QuadraticTerminalCost(np.zeros((n, n)))


@dataclass(frozen=True)
class Trajectory:
    """States (T+1, n) paired with controls (T, m)."""

    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float)).copy()
        controls = np.atleast_2d(np.asarray(self.controls, dtype=float)).copy()
        if states.shape[0] != controls.shape[0] + 1:
            raise ValueError(
                f"states rows {states.shape[0]} must be controls rows {controls.shape[0]} + 1"
            )
        states.flags.writeable = False
        controls.flags.writeable = False
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]


@dataclass(frozen=True)
class ProblemSpec:
    """Full problem instance; see module docstring.

    ``initial_state`` / ``terminal_state``, when given, are materialized as
    singleton state sets at times 0 / T.
    """

    horizon: int
    state_dim: int
    control_dim: int
    dynamics: tuple
    stage_costs: tuple
    terminal_cost: TerminalCostOracle
    state_sets: tuple
    control_sets: tuple
    state_freq: FrequencyConstraint | None = None
    control_freq: FrequencyConstraint | None = None
    initial_state: np.ndarray | None = None
    terminal_state: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "dynamics", tuple(self.dynamics))
        object.__setattr__(self, "stage_costs", tuple(self.stage_costs))
        state_sets = list(self.state_sets)
        if self.initial_state is not None:
            x0 = np.asarray(self.initial_state, dtype=float).copy()
            x0.flags.writeable = False
            object.__setattr__(self, "initial_state", x0)
            state_sets[0] = Singleton(x0)
        if self.terminal_state is not None:
            xf = np.asarray(self.terminal_state, dtype=float).copy()
            xf.flags.writeable = False
            object.__setattr__(self, "terminal_state", xf)
            state_sets[-1] = Singleton(xf)
        object.__setattr__(self, "state_sets", tuple(state_sets))
        object.__setattr__(self, "control_sets", tuple(self.control_sets))

    @classmethod
    def create(
        cls,
        horizon,
        state_dim,
        control_dim,
        dynamics,
        stage_costs,
        terminal_cost=None,
        state_sets=None,
        control_sets=None,
        state_freq=None,
        control_freq=None,
        initial_state=None,
        terminal_state=None,
    ) -> "ProblemSpec":
        """Build a spec, defaulting missing sets to the whole space."""
        T = int(horizon)
        if state_sets is None:
            state_sets = [Whole(state_dim) for _ in range(T + 1)]
        if control_sets is None:
            control_sets = [Whole(control_dim) for _ in range(T)]
        if terminal_cost is None:
            terminal_cost = zero_terminal_cost(state_dim)
        return cls(
            horizon=T,
            state_dim=int(state_dim),
            control_dim=int(control_dim),
            dynamics=tuple(dynamics),
            stage_costs=tuple(stage_costs),
            terminal_cost=terminal_cost,
            state_sets=tuple(state_sets),
            control_sets=tuple(control_sets),
            state_freq=state_freq,
            control_freq=control_freq,
            initial_state=initial_state,
            terminal_state=terminal_state,
        )

    @property
    def lifted_dim(self) -> int:
        """n(T+1) + mT, the dimension of the stacked (states, controls) vector."""
        return self.state_dim * (self.horizon + 1) + self.control_dim * self.horizon


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def add(self, msg: str):
        self.errors.append(msg)


def validate(spec: ProblemSpec) -> ValidationReport:
    """Structural consistency check; a valid spec yields an empty error list."""
    rep = ValidationReport()
    T, n, m = spec.horizon, spec.state_dim, spec.control_dim
    if T < 1:
        rep.add(f"horizon must be >= 1, got {T}")
    if len(spec.dynamics) != T:
        rep.add(f"dynamics list has length {len(spec.dynamics)}, expected {T}")
    if len(spec.stage_costs) != T:
        rep.add(f"stage_costs list has length {len(spec.stage_costs)}, expected {T}")
    if len(spec.state_sets) != T + 1:
        rep.add(f"state_sets list has length {len(spec.state_sets)}, expected {T + 1}")
    if len(spec.control_sets) != T:
        rep.add(f"control_sets list has length {len(spec.control_sets)}, expected {T}")
    for t, s in enumerate(spec.state_sets):
        if not isinstance(s, AdmissibleSet):
            rep.add(f"state_sets[{t}] is not an AdmissibleSet")
        elif s.dim != n:
            rep.add(f"state_sets[{t}] has dim {s.dim}, expected {n}")
    for t, s in enumerate(spec.control_sets):
        if not isinstance(s, AdmissibleSet):
            rep.add(f"control_sets[{t}] is not an AdmissibleSet")
        elif s.dim != m:
            rep.add(f"control_sets[{t}] has dim {s.dim}, expected {m}")
    for t, d in enumerate(spec.dynamics):
        if not isinstance(d, DynamicsOracle):
            rep.add(f"dynamics[{t}] is not a DynamicsOracle")
    for t, c in enumerate(spec.stage_costs):
        if not isinstance(c, StageCostOracle):
            rep.add(f"stage_costs[{t}] is not a StageCostOracle")
    if not isinstance(spec.terminal_cost, TerminalCostOracle):
        rep.add("terminal_cost is not a TerminalCostOracle")
    if spec.state_freq is not None:
        fc = spec.state_freq
        if fc.signal_len != T + 1:
            rep.add(f"state frequency constraint covers {fc.signal_len} samples, expected {T + 1}")
        if fc.dim != n:
            rep.add(f"state frequency constraint acts on dim {fc.dim}, expected {n}")
    if spec.control_freq is not None:
        fc = spec.control_freq
        if fc.signal_len != T:
            rep.add(f"control frequency constraint covers {fc.signal_len} samples, expected {T}")
        if fc.dim != m:
            rep.add(f"control frequency constraint acts on dim {fc.dim}, expected {m}")
    if spec.initial_state is not None and spec.initial_state.shape != (n,):
        rep.add(f"initial_state shape {spec.initial_state.shape} != ({n},)")
    if spec.terminal_state is not None and spec.terminal_state.shape != (n,):
        rep.add(f"terminal_state shape {spec.terminal_state.shape} != ({n},)")
    return rep


def simulate(spec: ProblemSpec, x0, controls) -> np.ndarray:
    """Roll the dynamics forward: x_{t+1} = f_t(x_t, u_t), exactly."""
    x0 = np.asarray(x0, dtype=float)
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if controls.shape != (spec.horizon, spec.control_dim):
        raise ValueError(
            f"controls shape {controls.shape} != ({spec.horizon}, {spec.control_dim})"
        )
    if x0.shape != (spec.state_dim,):
        raise ValueError(f"x0 shape {x0.shape} != ({spec.state_dim},)")
    states = np.empty((spec.horizon + 1, spec.state_dim))
    states[0] = x0
    for t in range(spec.horizon):
        nxt = spec.dynamics[t](states[t], controls[t])
        if not np.all(np.isfinite(nxt)):
            raise RolloutError(t, "dynamics produced a non-finite state")
        states[t + 1] = nxt
    return states


def total_cost(spec: ProblemSpec, traj: Trajectory) -> float:
    """Sum of stage costs plus the terminal cost."""
    if traj.states.shape != (spec.horizon + 1, spec.state_dim):
        raise ValueError("trajectory state shape does not match spec")
    if traj.controls.shape != (spec.horizon, spec.control_dim):
        raise ValueError("trajectory control shape does not match spec")
    acc = 0.0
    for t in range(spec.horizon):
        c = spec.stage_costs[t].value(traj.states[t], traj.controls[t])
        if not np.isfinite(c):
            raise RolloutError(t, "stage cost is non-finite")
        acc += c
    cT = spec.terminal_cost.value(traj.states[-1])
    if not np.isfinite(cT):
        raise RolloutError(spec.horizon, "terminal cost is non-finite")
    return acc + cT
