"""Ready-made problem instances: cart-pendulum, a nonsmooth toy system,
and a buck converter, plus ZOH discretization and the filter baseline.

Parameter notes for the cart-pendulum:

* ``J`` (pendulum inertia) is not an independent input; the default is the
  uniform-rod value m*l^2/3 for half-length l.
* Lengths are in meters (l = 0.25 m, track half-range L = 0.5 m); the cart
  position bound 0.2 m is consistent with that reading.
* The control bound is symmetric, |u_t| <= b_u.

Buck converter: with zero diode resistance the two dynamic branches agree
exactly along the borderline curve; nonzero diode resistance introduces a
mismatch that is rejected at construction when it exceeds 1e-9.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .cones import Box, Whole
from .problem import (
    DynamicsOracle,
    ProblemSpec,
    QuadraticStageCost,
    Trajectory,
    simulate,
    zero_terminal_cost,
)
from .spectrum import BannedBinSet, build_band_constraint, ideal_filter

__all__ = [
    "PendulumParams",
    "BuckParams",
    "ModelConsistencyError",
    "FilterBaselineResult",
    "zoh_discretize",
    "pendulum_problem",
    "example2_problem",
    "buck_problem",
    "without_frequency",
    "filter_baseline",
]

_KINK_TOL = 1e-9


class ModelConsistencyError(ValueError):
    """Model data violates a structural requirement (e.g. branch mismatch)."""


def zoh_discretize(Ac: np.ndarray, Bc: np.ndarray, Ts: float):
    """Zero-order-hold discretization via the augmented matrix exponential.

    Returns A = exp(Ac*Ts) and B = (integral_0^Ts exp(Ac*s) ds) Bc, read off
    the exponential of the block matrix [[Ac, Bc], [0, 0]] * Ts.
    """
    if Ts <= 0:
        raise ValueError("sample time must be > 0")
    Ac = np.atleast_2d(np.asarray(Ac, dtype=float))
    Bc = np.asarray(Bc, dtype=float)
    if Bc.ndim == 1:
        Bc = Bc.reshape(-1, 1)
    n, m = Ac.shape[0], Bc.shape[1]
    blk = np.zeros((n + m, n + m))
    blk[:n, :n] = Ac
    blk[:n, n:] = Bc
    E = expm(blk * Ts)
    A, B = E[:n, :n], E[:n, n:]
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise ValueError("matrix exponential produced non-finite entries")
    return A, B


# -- Example 1: inverted pendulum on a cart ---------------------------------


@dataclass(frozen=True)
class PendulumParams:
    """Cart-pendulum data; defaults reproduce the reference configuration."""

    cart_mass: float = 2.5           # M, kg
    pendulum_mass: float = 0.6       # m, kg
    half_length: float = 0.25        # l, m
    track_half_range: float = 0.5    # L, m
    gravity: float = 9.8             # g, m/s^2
    inertia: float | None = None     # J, kg m^2; default m*l^2/3
    sample_time: float = 0.1         # Ts, s
    horizon: int = 240               # T, control stages
    state_bounds: tuple = (0.2, 20.0 * np.pi / 180.0, 15.0, 30.0)
    control_bound: float = 5.0
    banned_bins: frozenset = field(default_factory=lambda: frozenset(range(97, 144)))
    # Boundary states are user inputs, not reference data.  The default is an
    # aggressive-but-feasible catch: the cart starts at -0.15 m drifting at
    # 0.7 m/s toward the 0.2 m track limit, which drives the unfiltered
    # minimum-energy control onto the +-5 N bound and makes the
    # solve-then-filter baseline overshoot it.
    x_init: tuple = (-0.15, 0.0, 0.7, 0.0)
    x_final: tuple = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("cart_mass", "pendulum_mass", "half_length", "track_half_range",
                     "gravity", "sample_time"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.inertia is not None and self.inertia <= 0:
            raise ValueError("inertia must be > 0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if any(b <= 0 for b in self.state_bounds) or self.control_bound <= 0:
            raise ValueError("bounds must be > 0")

    @property
    def J(self) -> float:
        if self.inertia is not None:
            return self.inertia
        return self.pendulum_mass * self.half_length ** 2 / 3.0

    def continuous_matrices(self):
        """Linearized cart-pendulum (Ac, Bc) about the upright equilibrium."""
        M, m, l, g, J = (self.cart_mass, self.pendulum_mass, self.half_length,
                         self.gravity, self.J)
        denom = m + M - (m * l) ** 2 / (J + m * l ** 2)
        Ac = np.zeros((4, 4))
        Ac[0, 2] = 1.0
        Ac[1, 3] = 1.0
        Ac[2, 1] = -((m * l) ** 2) * g / ((J + m * l ** 2) * denom)
        Ac[3, 1] = m * g * l * (m + M) / ((J + m * l ** 2) * denom)
        Bc = np.zeros((4, 1))
        Bc[2, 0] = 1.0 / denom
        Bc[3, 0] = -m * l / ((J + m * l ** 2) * denom)
        return Ac, Bc

    def discrete_matrices(self):
        Ac, Bc = self.continuous_matrices()
        return zoh_discretize(Ac, Bc, self.sample_time)


def pendulum_problem(p: PendulumParams | None = None) -> ProblemSpec:
    """Minimum control-effort point-to-point transfer with a banned control band.

    Linear ZOH dynamics, cost sum u_t^2, box bounds on all four states and
    the control, singleton endpoint sets, and an equality constraint zeroing
    the banned DFT bins of the control trajectory.
    """
    p = p or PendulumParams()
    A, B = p.discrete_matrices()
    T = p.horizon
    dyn = DynamicsOracle.linear(A, B, name="cart-pendulum")
    cost = QuadraticStageCost(np.zeros((4, 4)), 2.0 * np.eye(1))
    b = np.asarray(p.state_bounds, dtype=float)
    state_box = Box(-b, b)
    control_box = Box([-p.control_bound], [p.control_bound])
    banned = BannedBinSet.uniform(p.banned_bins, 1)
    control_freq = None if banned.is_empty() else build_band_constraint(T, 1, banned)
    return ProblemSpec.create(
        horizon=T,
        state_dim=4,
        control_dim=1,
        dynamics=[dyn] * T,
        stage_costs=[cost] * T,
        terminal_cost=zero_terminal_cost(4),
        state_sets=[state_box] * (T + 1),
        control_sets=[control_box] * T,
        control_freq=control_freq,
        initial_state=np.asarray(p.x_init, dtype=float),
        terminal_state=np.asarray(p.x_final, dtype=float),
    )


# -- Example 2: norm-driven nonsmooth system --------------------------------


def _example2_dynamics() -> DynamicsOracle:
    """f(x, u) = (x1*(1-u), ||x||*u): smooth in u, kinked in x at the origin."""

    def fn(x, u):
        return np.array([x[0] * (1.0 - u[0]), np.linalg.norm(x) * u[0]])

    def ddx(x, u, y):
        nx = np.linalg.norm(x)
        if nx > _KINK_TOL:
            return np.array([y[0] * (1.0 - u[0]), (x @ y) / nx * u[0]])
        return np.array([y[0] * (1.0 - u[0]), np.linalg.norm(y) * u[0]])

    def ddu(x, u, w):
        return np.array([-x[0] * w[0], np.linalg.norm(x) * w[0]])

    def jac_x(x, u):
        nx = np.linalg.norm(x)
        if nx > _KINK_TOL:
            return np.array([[1.0 - u[0], 0.0], [x[0] / nx * u[0], x[1] / nx * u[0]]])
        # designated branch at the origin kink: zero radial slope
        return np.array([[1.0 - u[0], 0.0], [0.0, 0.0]])

    def jac_u(x, u):
        return np.array([[-x[0]], [np.linalg.norm(x)]])

    def kinks(x, u):
        if np.linalg.norm(x) > _KINK_TOL:
            return []
        r2 = 1.0 / np.sqrt(2.0)
        dirs = [np.array([1.0, 0.0]), np.array([-1.0, 0.0]),
                np.array([0.0, 1.0]), np.array([0.0, -1.0]),
                np.array([r2, r2]), np.array([-r2, r2])]
        return [("x", d) for d in dirs]

    return DynamicsOracle(
        fn,
        jac_x=jac_x,
        jac_u=jac_u,
        ddx=ddx,
        ddu=ddu,
        smooth_in_x=lambda x, u: np.linalg.norm(x) > _KINK_TOL,
        smooth_in_u=True,
        kink_directions=kinks,
        name="norm-driven",
    )


def example2_problem(x_init, horizon: int) -> ProblemSpec:
    """Quadratic tracking-to-zero with controls in [0, 1] and free states."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    x_init = np.asarray(x_init, dtype=float)
    if x_init.shape != (2,):
        raise ValueError("x_init must be a 2-vector")
    T = horizon
    dyn = _example2_dynamics()
    cost = QuadraticStageCost(2.0 * np.eye(2), 2.0 * np.eye(1))
    return ProblemSpec.create(
        horizon=T,
        state_dim=2,
        control_dim=1,
        dynamics=[dyn] * T,
        stage_costs=[cost] * T,
        terminal_cost=zero_terminal_cost(2),
        state_sets=[Whole(2)] * (T + 1),
        control_sets=[Box([0.0], [1.0])] * T,
        initial_state=x_init,
    )


# -- Example 3: buck converter ----------------------------------------------


@dataclass(frozen=True)
class BuckParams:
    """Buck converter primitives; derived quantities are recomputed on use.

    With ``diode_resistance`` = 0 the compact two-branch dynamics are exactly
    continuous along the borderline curve; small positive values are allowed
    as long as the branch mismatch stays below 1e-9.
    """

    load_resistance: float = 1.0    # R, ohm
    inductance: float = 0.1         # L, henry
    diode_resistance: float = 0.0   # R_D, ohm
    clock_period: float = 0.05      # T_clk, s
    reference_current: float = 2.0  # I_ref, ampere

    def __post_init__(self):
        if min(self.load_resistance, self.inductance, self.clock_period,
               self.reference_current) <= 0:
            raise ValueError("R, L, T_clk, I_ref must be > 0")
        if self.diode_resistance < 0:
            raise ValueError("diode resistance must be >= 0")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("derived decay factor must lie in (0, 1)")

    @property
    def alpha(self) -> float:
        return float(np.exp(-self.load_resistance * self.clock_period / self.inductance))

    @property
    def beta(self) -> float:
        return (1.0 - self.alpha) / self.load_resistance

    @property
    def gamma(self) -> float:
        R, RD = self.load_resistance, self.diode_resistance
        return R * self.reference_current * float(np.exp(-(R + RD) * self.clock_period / self.inductance))

    @property
    def delta(self) -> float:
        R, RD = self.load_resistance, self.diode_resistance
        return self.reference_current * float(np.exp(-(R + RD) * self.clock_period / self.inductance))

    @property
    def v_ref(self) -> float:
        """Borderline voltage scale: reference current times load resistance."""
        return self.reference_current * self.load_resistance

    def borderline_current(self, V: float) -> float:
        """Current level where the dynamic branches meet, at input voltage V."""
        R, L, T = self.load_resistance, self.inductance, self.clock_period
        return (self.reference_current - V / R) * float(np.exp(R * T / L)) + V / R

    def borderline_voltage(self, i: float) -> float:
        """Inverse of the borderline curve: voltage at which current i switches."""
        R, L, T = self.load_resistance, self.inductance, self.clock_period
        e = float(np.exp(R * T / L))
        return R * (i - self.reference_current * e) / (1.0 - e)

    def branch_low(self, i: float, V: float) -> float:
        """Affine branch, valid for i <= borderline_current(V)."""
        return self.alpha * i + self.beta * V

    def branch_high(self, i: float, V: float) -> float:
        """Discontinuous-conduction branch, valid for i >= borderline_current(V)."""
        denom = V - self.v_ref
        if denom == 0.0:
            raise ZeroDivisionError("high branch undefined at V equal to the reference voltage")
        return (-self.gamma * i + self.delta * V) / denom

    def branch_high_di(self, i: float, V: float) -> float:
        return -self.gamma / (V - self.v_ref)

    def branch_high_dV(self, i: float, V: float) -> float:
        return (self.gamma * i - self.delta * self.v_ref) / (V - self.v_ref) ** 2

    def check_branch_continuity(self, V_grid) -> float:
        """Max |branch mismatch| along the borderline over the given voltages."""
        worst = 0.0
        for V in np.asarray(V_grid, dtype=float):
            ib = self.borderline_current(V)
            if V == self.v_ref:
                continue
            worst = max(worst, abs(self.branch_low(ib, V) - self.branch_high(ib, V)))
        return worst


def _buck_dynamics(p: BuckParams) -> DynamicsOracle:
    """Scalar piecewise-smooth map; the affine branch wins ties on the borderline."""

    def on_low_branch(i, V):
        return i <= p.borderline_current(V)

    def fn(x, u):
        i, V = x[0], u[0]
        if on_low_branch(i, V):
            return np.array([p.branch_low(i, V)])
        return np.array([p.branch_high(i, V)])

    def x_kink(i, V):
        return abs(i - p.borderline_current(V)) <= _KINK_TOL

    def u_kink(i, V):
        return abs(V - p.borderline_voltage(i)) <= _KINK_TOL

    def jac_x(x, u):
        i, V = x[0], u[0]
        if on_low_branch(i, V):
            return np.array([[p.alpha]])
        return np.array([[p.branch_high_di(i, V)]])

    def jac_u(x, u):
        i, V = x[0], u[0]
        if on_low_branch(i, V):
            return np.array([[p.beta]])
        return np.array([[p.branch_high_dV(i, V)]])

    def ddx(x, u, y):
        i, V = x[0], u[0]
        if x_kink(i, V):
            slope = p.branch_high_di(i, V) if y[0] > 0 else p.alpha
            return np.array([slope * y[0]])
        return jac_x(x, u) @ y

    def ddu(x, u, w):
        i, V = x[0], u[0]
        if u_kink(i, V):
            # raising V leaves the affine region (borderline current drops)
            slope = p.branch_high_dV(i, V) if w[0] > 0 else p.beta
            return np.array([slope * w[0]])
        return jac_u(x, u) @ w

    def kinks(x, u):
        i, V = x[0], u[0]
        out = []
        if x_kink(i, V):
            out += [("x", np.array([1.0])), ("x", np.array([-1.0]))]
        if u_kink(i, V):
            out += [("u", np.array([1.0])), ("u", np.array([-1.0]))]
        return out

    return DynamicsOracle(
        fn,
        jac_x=jac_x,
        jac_u=jac_u,
        ddx=ddx,
        ddu=ddu,
        smooth_in_x=lambda x, u: not x_kink(x[0], u[0]),
        smooth_in_u=lambda x, u: not u_kink(x[0], u[0]),
        kink_directions=kinks,
        name="buck-converter",
    )


def buck_problem(p: BuckParams, i_init: float, i_final: float, horizon: int) -> ProblemSpec:
    """Power-loss minimization between fixed current levels.

    Cost sum i_t^2 + V_t^2, free intermediate currents, unconstrained
    voltages, singleton endpoint sets.  Construction verifies that the two
    dynamic branches agree along the borderline to 1e-9.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    grid = p.v_ref + np.linspace(-0.9, 0.9, 25) * p.v_ref
    mismatch = p.check_branch_continuity(grid)
    if mismatch > 1e-9:
        raise ModelConsistencyError(
            f"dynamic branches disagree by {mismatch:.3e} on the borderline; "
            "reduce the diode resistance"
        )
    T = horizon
    dyn = _buck_dynamics(p)
    cost = QuadraticStageCost(2.0 * np.eye(1), 2.0 * np.eye(1))
    return ProblemSpec.create(
        horizon=T,
        state_dim=1,
        control_dim=1,
        dynamics=[dyn] * T,
        stage_costs=[cost] * T,
        terminal_cost=zero_terminal_cost(1),
        state_sets=[Whole(1)] * (T + 1),
        control_sets=[Whole(1)] * T,
        initial_state=np.array([float(i_init)]),
        terminal_state=np.array([float(i_final)]),
    )


# -- solve-then-filter baseline ----------------------------------------------


def without_frequency(spec: ProblemSpec) -> ProblemSpec:
    """Copy of the spec with both frequency constraints dropped."""
    return ProblemSpec(
        horizon=spec.horizon,
        state_dim=spec.state_dim,
        control_dim=spec.control_dim,
        dynamics=spec.dynamics,
        stage_costs=spec.stage_costs,
        terminal_cost=spec.terminal_cost,
        state_sets=spec.state_sets,
        control_sets=spec.control_sets,
        state_freq=None,
        control_freq=None,
        initial_state=spec.initial_state,
        terminal_state=spec.terminal_state,
    )


@dataclass(frozen=True)
class FilterBaselineResult:
    """Outcome of the solve-then-filter comparison."""

    unfiltered: Trajectory
    filtered: Trajectory            # filtered controls with their re-simulated rollout
    max_abs_control_unfiltered: float
    max_abs_control_filtered: float
    control_bound: float | None
    worst_state_violation_unfiltered: float
    worst_state_violation_filtered: float
    terminal_miss_unfiltered: float
    terminal_miss_filtered: float


def _worst_state_violation(spec: ProblemSpec, states: np.ndarray) -> float:
    worst = 0.0
    for t in range(spec.horizon + 1):
        worst = max(worst, spec.state_sets[t].distance(states[t]))
    return worst


def filter_baseline(spec_without_freq: ProblemSpec, banned: BannedBinSet,
                    options=None) -> FilterBaselineResult:
    """Solve ignoring the band constraint, then zero the banned bins.

    The filtered control is fed back through the true dynamics; the report
    records how badly the post-hoc filtering breaks the pointwise bounds and
    the terminal condition.
    """
    from .solver import solve  # local import to keep module load cheap

    if spec_without_freq.control_freq is not None or spec_without_freq.state_freq is not None:
        raise ValueError("filter_baseline expects a spec without frequency constraints")
    sol = solve(spec_without_freq, options)
    traj = sol.trajectory
    u = traj.controls
    u_filt = ideal_filter(u, banned)
    x0 = traj.states[0]
    states_filt = simulate(spec_without_freq, x0, u_filt)
    traj_filt = Trajectory(states_filt, u_filt)

    cb = spec_without_freq.control_sets[0].box_bounds()
    bound = None
    if cb is not None and np.all(np.isfinite(cb[1])):
        bound = float(np.max(np.abs(np.concatenate(cb))))

    xf = spec_without_freq.terminal_state
    miss_unf = float(np.linalg.norm(traj.states[-1] - xf)) if xf is not None else 0.0
    miss_f = float(np.linalg.norm(states_filt[-1] - xf)) if xf is not None else 0.0
    return FilterBaselineResult(
        unfiltered=traj,
        filtered=traj_filt,
        max_abs_control_unfiltered=float(np.max(np.abs(u))),
        max_abs_control_filtered=float(np.max(np.abs(u_filt))),
        control_bound=bound,
        worst_state_violation_unfiltered=_worst_state_violation(spec_without_freq, traj.states),
        worst_state_violation_filtered=_worst_state_violation(spec_without_freq, states_filt),
        terminal_miss_unfiltered=miss_unf,
        terminal_miss_filtered=miss_f,
    )
