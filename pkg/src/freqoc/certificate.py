"""Executable first-order optimality certificates.

Given a candidate trajectory and multiplier tuple, every necessary
condition of the discrete-time maximum principle is evaluated as a
residual: exact recursions where the data is smooth at the visited points,
seeded sampled-direction inclusion tests where it is not.  All stationarity
quantities are assembled from the Hamiltonian

    H(lam, t, x, u) = <lam, f_t(x,u)> - nu*c_t(x,u)
                      - <mu_state, G^x_t x> - <mu_control, G^u_t u>

via the dynamics oracles' one-sided directional derivatives; closed-form
conditions quoted elsewhere are never transcribed, so algebraic slips in a
source formula cannot leak into a certificate.

A passing certificate asserts necessity only; it does not prove optimality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cones import Box, Singleton, normal_contains, tangent_contains
from .problem import ProblemSpec
from .solver import Multipliers, Solution

__all__ = [
    "CertificateOptions",
    "ConditionRecord",
    "CertificateReport",
    "HamiltonianEvaluator",
    "MultiplierConeError",
    "check_nonneg_nontrivial",
    "check_adjoint",
    "check_transversality",
    "check_hmax",
    "check_frequency",
    "certify",
]


class MultiplierConeError(ValueError):
    """A pointwise-set multiplier fails its normal-cone precondition."""

    def __init__(self, which: str, stage: int):
        super().__init__(f"{which}[{stage}] is not in the normal cone at the visited point")
        self.which = which
        self.stage = stage


@dataclass(frozen=True)
class CertificateOptions:
    equality_tol: float = 1e-8
    inequality_tol: float = 1e-6
    n_dirs: int = 1000
    seed: int = 0
    nontriviality_floor: float = 1e-12
    cone_membership_tol: float = 1e-8
    local_hmax_probe: bool = False  # extra H-comparison probe on compact convex sets
    terminal_variant: str = "smooth-cost"  # or "regular-cost"


@dataclass
class ConditionRecord:
    name: str
    passed: bool
    residual: float
    tolerance: float
    witness: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)


@dataclass
class CertificateReport:
    records: dict
    options: CertificateOptions

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records.values())

    def to_text(self) -> str:
        lines = ["[certificate]"]
        lines.append(f"overall = {'PASS' if self.passed else 'FAIL'}")
        lines.append(f"n_dirs = {self.options.n_dirs}")
        lines.append(f"seed = {self.options.seed}")
        lines.append(f"equality_tol = {self.options.equality_tol:.17g}")
        lines.append(f"inequality_tol = {self.options.inequality_tol:.17g}")
        lines.append(f"terminal_variant = {self.options.terminal_variant}")
        for name, rec in self.records.items():
            lines.append("")
            lines.append(f"[{name}]")
            lines.append(f"pass = {'true' if rec.passed else 'false'}")
            lines.append(f"residual = {rec.residual:.17g}")
            lines.append(f"tolerance = {rec.tolerance:.17g}")
            for key in sorted(rec.witness):
                val = rec.witness[key]
                if isinstance(val, np.ndarray):
                    val = " ".join(f"{v:.17g}" for v in np.atleast_1d(val))
                elif isinstance(val, float):
                    val = f"{val:.17g}"
                lines.append(f"witness_{key} = {val}")
            for i, note in enumerate(rec.notes):
                lines.append(f"note_{i} = {note}")
        return "\n".join(lines) + "\n"


class HamiltonianEvaluator:
    """Closure over (nu, mu_state, mu_control) evaluating H and its one-sided
    derivatives; the derivative in the adjoint argument is f_t itself."""

    def __init__(self, spec: ProblemSpec, nu: float, mu_state: np.ndarray, mu_control: np.ndarray):
        self.spec = spec
        self.nu = float(nu)
        self.mu_state = np.asarray(mu_state, dtype=float)
        self.mu_control = np.asarray(mu_control, dtype=float)

    def _gx(self, t: int) -> np.ndarray:
        """Pullback (G^x_t)^T mu_state, zero when no state band constraint."""
        if self.spec.state_freq is None:
            return np.zeros(self.spec.state_dim)
        return self.spec.state_freq.stage_maps[t].T @ self.mu_state

    def _gu(self, t: int) -> np.ndarray:
        if self.spec.control_freq is None:
            return np.zeros(self.spec.control_dim)
        return self.spec.control_freq.stage_maps[t].T @ self.mu_control

    def dynamics_value(self, t, x, u) -> np.ndarray:
        return self.spec.dynamics[t](x, u)

    def value(self, lam, t, x, u) -> float:
        out = float(lam @ self.dynamics_value(t, x, u))
        out -= self.nu * self.spec.stage_costs[t].value(x, u)
        if self.spec.state_freq is not None:
            out -= float(self.mu_state @ (self.spec.state_freq.stage_maps[t] @ x))
        if self.spec.control_freq is not None:
            out -= float(self.mu_control @ (self.spec.control_freq.stage_maps[t] @ u))
        return out

    def grad_x(self, lam, t, x, u) -> np.ndarray:
        d = self.spec.dynamics[t]
        return d.jac_x(x, u).T @ lam - self.nu * self.spec.stage_costs[t].grad_x(x, u) - self._gx(t)

    def grad_u(self, lam, t, x, u) -> np.ndarray:
        d = self.spec.dynamics[t]
        return d.jac_u(x, u).T @ lam - self.nu * self.spec.stage_costs[t].grad_u(x, u) - self._gu(t)

    def dd_x(self, lam, t, x, u, y) -> float:
        d = self.spec.dynamics[t]
        out = float(lam @ d.ddx(x, u, y))
        out -= self.nu * float(self.spec.stage_costs[t].grad_x(x, u) @ y)
        out -= float(self._gx(t) @ y)
        return out

    def dd_u(self, lam, t, x, u, w) -> float:
        d = self.spec.dynamics[t]
        out = float(lam @ d.ddu(x, u, w))
        out -= self.nu * float(self.spec.stage_costs[t].grad_u(x, u) @ w)
        out -= float(self._gu(t) @ w)
        return out

    def terminal_gx(self) -> np.ndarray:
        if self.spec.state_freq is None:
            return np.zeros(self.spec.state_dim)
        return self.spec.state_freq.stage_maps[self.spec.horizon].T @ self.mu_state


def _sample_directions(dim: int, n_dirs: int, seed, tag: int) -> np.ndarray:
    """Deterministic unit directions: ±axes followed by a seeded stream.

    The random block is a prefix-stable stream, so enlarging ``n_dirs``
    only appends directions and can never hide a violation.
    """
    rng = np.random.default_rng([abs(int(seed)), int(tag) + 2])
    raw = rng.standard_normal((n_dirs, dim))
    norms = np.linalg.norm(raw, axis=1)
    norms[norms == 0] = 1.0
    sampled = raw / norms[:, None]
    axes = np.vstack([np.eye(dim), -np.eye(dim)])
    return np.vstack([axes, sampled])


def _hamiltonian(spec: ProblemSpec, mult: Multipliers) -> HamiltonianEvaluator:
    return HamiltonianEvaluator(spec, mult.nu, mult.mu_state, mult.mu_control)


def check_nonneg_nontrivial(sol: Solution, opts: CertificateOptions | None = None):
    """Cost-multiplier admissibility and non-vanishing of (nu, lambdas, mus)."""
    opts = opts or CertificateOptions()
    m = sol.multipliers
    nonneg_res = float(min(abs(m.nu), abs(m.nu - 1.0)))
    rec1 = ConditionRecord(
        name="nonnegativity",
        passed=nonneg_res == 0.0,
        residual=nonneg_res,
        tolerance=0.0,
        witness={"nu": float(m.nu)},
    )
    magnitude = max(
        abs(m.nu),
        float(np.max(np.abs(m.lambdas))) if m.lambdas.size else 0.0,
        float(np.max(np.abs(m.mu_state))) if m.mu_state.size else 0.0,
        float(np.max(np.abs(m.mu_control))) if m.mu_control.size else 0.0,
    )
    rec2 = ConditionRecord(
        name="nontriviality",
        passed=magnitude >= opts.nontriviality_floor,
        residual=float(opts.nontriviality_floor - magnitude),
        tolerance=0.0,
        witness={"magnitude": magnitude},
    )
    return rec1, rec2


def check_adjoint(spec: ProblemSpec, sol: Solution, n_dirs: int | None = None,
                  opts: CertificateOptions | None = None) -> ConditionRecord:
    """Adjoint condition at interior stages t = 1..T-1.

    Smooth-in-state stages use the exact recursion residual
    ``lambda_{t-1} - (dH/dx - eta_x[t])``; nonsmooth stages test the
    inclusion inequality over sampled tangent-space directions plus the
    oracle-exposed kink directions.
    """
    opts = opts or CertificateOptions()
    n_dirs = opts.n_dirs if n_dirs is None else int(n_dirs)
    ham = _hamiltonian(spec, sol.multipliers)
    xs, us = sol.trajectory.states, sol.trajectory.controls
    m = sol.multipliers
    T = spec.horizon
    worst = 0.0
    witness: dict = {}
    notes = []
    if T == 1:
        notes.append("no interior stages at horizon 1")
    for t in range(1, T):
        if not normal_contains(spec.state_sets[t], xs[t], m.eta_x[t], opts.cone_membership_tol):
            raise MultiplierConeError("eta_x", t)
        lam_prev = m.lambdas[t - 1]
        lam_t = m.lambdas[t]
        if spec.dynamics[t].is_smooth_in_x(xs[t], us[t]):
            res = float(np.max(np.abs(
                lam_prev - (ham.grad_x(lam_t, t, xs[t], us[t]) - m.eta_x[t])
            )))
            if res > worst:
                worst, witness = res, {"stage": t, "mode": "smooth"}
        else:
            dirs = _sample_directions(spec.state_dim, n_dirs, opts.seed, 11 * t)
            extra = [d for sp, d in spec.dynamics[t].kink_directions(xs[t], us[t]) if sp == "x"]
            if extra:
                dirs = np.vstack([dirs, np.array(extra)])
            for y in dirs:
                viol = (ham.dd_x(lam_t, t, xs[t], us[t], y)
                        - float(m.eta_x[t] @ y) - float(lam_prev @ y))
                if viol > worst:
                    worst, witness = float(viol), {"stage": t, "mode": "inclusion", "direction": y.copy()}
    return ConditionRecord(
        name="adjoint",
        passed=worst <= opts.inequality_tol,
        residual=worst,
        tolerance=opts.inequality_tol,
        witness=witness,
        notes=notes,
    )


def check_transversality(spec: ProblemSpec, sol: Solution,
                         variant: str | None = None,
                         opts: CertificateOptions | None = None) -> ConditionRecord:
    """Boundary conditions at t = 0 and t = T.

    Singleton endpoint sets make either end vacuous (their normal cone is
    the whole dual space).  The terminal check uses the exact gradient
    identity for smooth terminal costs and a sampled inequality for merely
    regular ones.
    """
    opts = opts or CertificateOptions()
    variant = variant or opts.terminal_variant
    if variant not in ("smooth-cost", "regular-cost"):
        raise ValueError(f"unknown transversality variant {variant!r}")
    ham = _hamiltonian(spec, sol.multipliers)
    xs, us = sol.trajectory.states, sol.trajectory.controls
    m = sol.multipliers
    T = spec.horizon
    notes = []
    worst = 0.0
    witness: dict = {}

    # initial end
    if isinstance(spec.state_sets[0], Singleton):
        notes.append("initial: vacuous by singleton")
    else:
        if not normal_contains(spec.state_sets[0], xs[0], m.eta_x[0], opts.cone_membership_tol):
            raise MultiplierConeError("eta_x", 0)
        lam0 = m.lambdas[0]
        if spec.dynamics[0].is_smooth_in_x(xs[0], us[0]):
            res = float(np.max(np.abs(ham.grad_x(lam0, 0, xs[0], us[0]) - m.eta_x[0])))
            if res > worst:
                worst, witness = res, {"end": "initial", "mode": "smooth"}
        else:
            dirs = _sample_directions(spec.state_dim, opts.n_dirs, opts.seed, 1)
            extra = [d for sp, d in spec.dynamics[0].kink_directions(xs[0], us[0]) if sp == "x"]
            if extra:
                dirs = np.vstack([dirs, np.array(extra)])
            for y in dirs:
                viol = ham.dd_x(lam0, 0, xs[0], us[0], y) - float(m.eta_x[0] @ y)
                if viol > worst:
                    worst, witness = float(viol), {"end": "initial", "direction": y.copy()}

    # terminal end
    if isinstance(spec.state_sets[T], Singleton):
        notes.append("terminal: vacuous by singleton")
    else:
        if not normal_contains(spec.state_sets[T], xs[T], m.eta_x[T], opts.cone_membership_tol):
            raise MultiplierConeError("eta_x", T)
        carry = ham.terminal_gx() + m.eta_x[T]
        if variant == "smooth-cost":
            res = float(np.max(np.abs(
                m.lambdas[T - 1] + m.nu * spec.terminal_cost.grad(xs[T]) + carry
            )))
            if res > worst:
                worst, witness = res, {"end": "terminal", "mode": "smooth"}
        else:
            dirs = _sample_directions(spec.state_dim, opts.n_dirs, opts.seed, 3)
            for y in dirs:
                viol = -(float(m.lambdas[T - 1] @ y)
                         + m.nu * spec.terminal_cost.dd(xs[T], y)
                         + float(carry @ y))
                if viol > worst:
                    worst, witness = float(viol), {"end": "terminal", "direction": y.copy()}

    return ConditionRecord(
        name="transversality",
        passed=worst <= opts.inequality_tol,
        residual=worst,
        tolerance=opts.inequality_tol,
        witness=witness,
        notes=notes,
    )


def check_hmax(spec: ProblemSpec, sol: Solution, n_dirs: int | None = None,
               opts: CertificateOptions | None = None) -> ConditionRecord:
    """Hamiltonian stationarity over the control tangent cones.

    Box sets with control-smooth dynamics get the exact componentwise sign
    conditions; everything else is a sampled inclusion test over accepted
    tangent directions.  Optionally probes local maximality by comparing H
    against projected perturbations on compact convex sets.
    """
    opts = opts or CertificateOptions()
    n_dirs = opts.n_dirs if n_dirs is None else int(n_dirs)
    ham = _hamiltonian(spec, sol.multipliers)
    xs, us = sol.trajectory.states, sol.trajectory.controls
    m = sol.multipliers
    worst = 0.0
    witness: dict = {}
    notes = []
    for t in range(spec.horizon):
        U = spec.control_sets[t]
        if not U.contains(us[t]):
            raise MultiplierConeError("control", t)
        smooth_u = spec.dynamics[t].is_smooth_in_u(xs[t], us[t])
        if isinstance(U, Box) and smooth_u:
            g = ham.grad_u(m.lambdas[t], t, xs[t], us[t])
            at_lo, at_hi = U._active(us[t])
            for i in range(U.dim):
                if at_lo[i] and at_hi[i]:
                    continue
                if at_lo[i]:
                    viol = g[i]
                elif at_hi[i]:
                    viol = -g[i]
                else:
                    viol = abs(g[i])
                if viol > worst:
                    worst, witness = float(viol), {"stage": t, "component": i, "mode": "box"}
        else:
            dirs = _sample_directions(spec.control_dim, n_dirs, opts.seed, 101 * (t + 1))
            extra = [d for sp, d in spec.dynamics[t].kink_directions(xs[t], us[t]) if sp == "u"]
            if extra:
                dirs = np.vstack([dirs, np.array(extra)])
            for w in dirs:
                if not tangent_contains(U, us[t], w):
                    continue
                viol = ham.dd_u(m.lambdas[t], t, xs[t], us[t], w)
                if viol > worst:
                    worst, witness = float(viol), {"stage": t, "mode": "inclusion", "direction": w.copy()}
        if opts.local_hmax_probe:
            bb = U.box_bounds()
            compact = bb is not None and np.all(np.isfinite(bb[0])) and np.all(np.isfinite(bb[1]))
            if compact or type(U).__name__ == "Ball":
                h0 = ham.value(m.lambdas[t], t, xs[t], us[t])
                eps = 1e-5
                probe_dirs = _sample_directions(spec.control_dim, min(n_dirs, 64), opts.seed, 9000 + t)
                for w in probe_dirs:
                    u_probe = U.project(us[t] + eps * w)
                    hp = ham.value(m.lambdas[t], t, xs[t], u_probe)
                    viol = (hp - h0) / eps - eps  # first-order rate, curvature allowance
                    if viol > worst:
                        worst, witness = float(viol), {"stage": t, "mode": "local-probe"}
    return ConditionRecord(
        name="hamiltonian_max",
        passed=worst <= opts.inequality_tol,
        residual=worst,
        tolerance=opts.inequality_tol,
        witness=witness,
        notes=notes,
    )


def check_frequency(spec: ProblemSpec, sol: Solution,
                    opts: CertificateOptions | None = None):
    """Equality residuals of the state and control band constraints."""
    opts = opts or CertificateOptions()
    recs = []
    for name, fc, signal in (
        ("state_frequency", spec.state_freq, sol.trajectory.states),
        ("control_frequency", spec.control_freq, sol.trajectory.controls),
    ):
        if fc is None:
            recs.append(ConditionRecord(name, True, 0.0, opts.equality_tol,
                                        notes=["no constraint present"]))
            continue
        res = float(np.max(np.abs(fc.residual(signal))))
        recs.append(ConditionRecord(name, res <= opts.equality_tol, res, opts.equality_tol))
    return tuple(recs)


def certify(spec: ProblemSpec, sol: Solution,
            opts: CertificateOptions | None = None) -> CertificateReport:
    """Run every condition; overall pass iff all pass.

    Normal-cone precondition failures are reported as failing records that
    name the offending stage rather than aborting the whole certificate.
    """
    opts = opts or CertificateOptions()
    if sol.trajectory.states.shape != (spec.horizon + 1, spec.state_dim):
        raise ValueError("solution state shape does not match spec")
    if sol.trajectory.controls.shape != (spec.horizon, spec.control_dim):
        raise ValueError("solution control shape does not match spec")
    records = {}
    rec1, rec2 = check_nonneg_nontrivial(sol, opts)
    records[rec1.name] = rec1
    records[rec2.name] = rec2
    for fn, name in ((check_adjoint, "adjoint"), (check_transversality, "transversality"),
                     (check_hmax, "hamiltonian_max")):
        try:
            if fn is check_transversality:
                rec = fn(spec, sol, opts.terminal_variant, opts)
            else:
                rec = fn(spec, sol, opts.n_dirs, opts)
        except MultiplierConeError as err:
            rec = ConditionRecord(
                name=name,
                passed=False,
                residual=float("inf"),
                tolerance=opts.inequality_tol,
                witness={"stage": err.stage},
                notes=[str(err)],
            )
        records[name] = rec
    for rec in check_frequency(spec, sol, opts):
        records[rec.name] = rec
    return CertificateReport(records=records, options=opts)
