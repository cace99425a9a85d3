"""Independent oracles the test suite checks the library against.

Everything here is deliberately written the slow, obvious way (direct
summation, finite differences, series expansion, generic NLP solves) and
shares no code path with the library internals it cross-checks.
"""

from __future__ import annotations

import numpy as np
import scipy.optimize

from freqoc.cones import Box, Singleton, Whole
from freqoc.problem import (
    DynamicsOracle,
    ProblemSpec,
    QuadraticStageCost,
    QuadraticTerminalCost,
)
from freqoc.spectrum import BannedBinSet, FrequencyConstraint, build_band_constraint, ideal_filter


# -- spectral oracles ---------------------------------------------------------


def naive_dft(x: np.ndarray) -> np.ndarray:
    """O(K^2) direct-sum DFT of a 1-d signal."""
    x = np.asarray(x, dtype=complex)
    K = x.size
    out = np.zeros(K, dtype=complex)
    for j in range(K):
        for t in range(K):
            out[j] += x[t] * np.exp(-2j * np.pi * j * t / K)
    return out


def naive_idft(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=complex)
    K = X.size
    out = np.zeros(K, dtype=complex)
    for t in range(K):
        for j in range(K):
            out[t] += X[j] * np.exp(2j * np.pi * j * t / K)
    return out / K


def naive_band_projection(signal: np.ndarray, banned_bins) -> np.ndarray:
    """Zero the banned bins using the naive transforms; real part returned."""
    sig = np.atleast_2d(np.asarray(signal, dtype=float))
    out = np.empty_like(sig)
    for k in range(sig.shape[1]):
        spec = naive_dft(sig[:, k])
        for j in banned_bins:
            spec[j] = 0.0
        out[:, k] = naive_idft(spec).real
    return out


# -- differentiation oracles --------------------------------------------------


def central_diff_grad(fn, x, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


def one_sided_dirderiv(fn, x, y, thetas=(1e-4, 1e-5, 1e-6)):
    """Right-hand directional derivative by Richardson-style extrapolation:
    evaluates the forward quotient on a decreasing step grid and returns the
    finest two-point extrapolation."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    f0 = np.asarray(fn(x), dtype=float)
    quots = [(np.asarray(fn(x + th * y), dtype=float) - f0) / th for th in thetas]
    # steps shrink by 10x, so linear-error extrapolation is (10*q2 - q1)/9
    return (10.0 * quots[-1] - quots[-2]) / 9.0


# -- matrix exponential oracle ------------------------------------------------


def series_expm(A: np.ndarray, order: int = 30) -> np.ndarray:
    """Scaling-and-squaring Taylor series, independent of scipy.linalg.expm."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    norm = np.linalg.norm(A, ord=np.inf)
    s = max(0, int(np.ceil(np.log2(max(norm, 1e-16)))) + 1)
    As = A / (2.0 ** s)
    E = np.eye(n)
    term = np.eye(n)
    for k in range(1, order + 1):
        term = term @ As / k
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def zoh_series(Ac, Bc, Ts, order: int = 40):
    """ZOH pair from the defining series: A = sum (Ac Ts)^k / k!,
    B = (sum Ac^k Ts^{k+1} / (k+1)!) Bc, via scaled quadrature of exp."""
    Ac = np.atleast_2d(np.asarray(Ac, dtype=float))
    Bc = np.asarray(Bc, dtype=float)
    if Bc.ndim == 1:
        Bc = Bc.reshape(-1, 1)
    A = series_expm(Ac * Ts)
    # integral of exp(Ac s) ds over [0, Ts] by composite Simpson quadrature
    K = 2000
    s_grid = np.linspace(0.0, Ts, 2 * K + 1)
    vals = [series_expm(Ac * s) for s in s_grid]
    h = Ts / (2 * K)
    integral = vals[0] + vals[-1]
    for i in range(1, 2 * K):
        integral = integral + (4.0 if i % 2 == 1 else 2.0) * vals[i]
    integral = integral * (h / 3.0)
    return A, integral @ Bc


# -- numeric Clarke-derivative estimator --------------------------------------


def numeric_gdd_distance(set_, x, y, thetas=(1e-2, 1e-3, 1e-4, 1e-5, 1e-6),
                         n_base: int = 12, radius: float = 1e-4, seed: int = 0):
    """Brute-force estimate of the generalized directional derivative of the
    distance function d_S at x along y: sup over base points near x and
    steps theta of the forward difference quotient."""
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    bases = [x] + [x + radius * rng.standard_normal(x.size) for _ in range(n_base)]
    worst = -np.inf
    for b in bases:
        db = set_.distance(b)
        for th in thetas:
            q = (set_.distance(b + th * y) - db) / th
            worst = max(worst, q)
    return worst


# -- dense brute-force KKT oracle ---------------------------------------------


def assemble_dense_qp(spec: ProblemSpec):
    """Stand-alone dense assembly of the stacked QP (independent indexing)."""
    T, n, m = spec.horizon, spec.state_dim, spec.control_dim
    M = n * (T + 1) + m * T

    def xs(t):
        return slice(t * n, (t + 1) * n)

    def us(t):
        off = n * (T + 1)
        return slice(off + t * m, off + (t + 1) * m)

    P = np.zeros((M, M))
    q = np.zeros(M)
    const = 0.0
    for t in range(T):
        c = spec.stage_costs[t]
        assert isinstance(c, QuadraticStageCost)
        P[xs(t), xs(t)] += c.Q
        P[us(t), us(t)] += c.R
        q[xs(t)] += c.q
        q[us(t)] += c.r
        const += c.const
    cT = spec.terminal_cost
    assert isinstance(cT, QuadraticTerminalCost)
    P[xs(T), xs(T)] += cT.Q
    q[xs(T)] += cT.q
    const += cT.const

    rows, rhs, kinds = [], [], []
    for t in range(T):
        A, B, cvec = spec.dynamics[t].affine
        for i in range(n):
            r = np.zeros(M)
            r[t * n + n + i] = 1.0  # x_{t+1} component i
            r[xs(t)] -= A[i]
            r[us(t)] -= B[i]
            rows.append(r)
            rhs.append(cvec[i])
            kinds.append(("dyn", t, i))
    if spec.state_freq is not None:
        fc = spec.state_freq
        for r_i in range(fc.rows):
            r = np.zeros(M)
            for t in range(T + 1):
                r[xs(t)] = fc.stage_maps[t][r_i]
            rows.append(r)
            rhs.append(-fc.offset[r_i])
            kinds.append(("sfreq", r_i, 0))
    if spec.control_freq is not None:
        fc = spec.control_freq
        for r_i in range(fc.rows):
            r = np.zeros(M)
            for t in range(T):
                r[us(t)] = fc.stage_maps[t][r_i]
            rows.append(r)
            rhs.append(-fc.offset[r_i])
            kinds.append(("cfreq", r_i, 0))

    lo = np.full(M, -np.inf)
    hi = np.full(M, np.inf)

    def pin(sl, point, kind, t):
        for i in range(point.size):
            r = np.zeros(M)
            r[sl.start + i] = 1.0
            rows.append(r)
            rhs.append(point[i])
            kinds.append((kind, t, i))

    for t in range(T + 1):
        s = spec.state_sets[t]
        if isinstance(s, Singleton):
            pin(xs(t), s.point, "pin_x", t)
        elif isinstance(s, Box):
            lo[xs(t)], hi[xs(t)] = s.lo, s.hi
        elif isinstance(s, Whole):
            pass
        else:
            raise AssertionError("oracle only handles box-like sets")
    for t in range(T):
        s = spec.control_sets[t]
        if isinstance(s, Singleton):
            pin(us(t), s.point, "pin_u", t)
        elif isinstance(s, Box):
            lo[us(t)], hi[us(t)] = s.lo, s.hi
        elif isinstance(s, Whole):
            pass
        else:
            raise AssertionError("oracle only handles box-like sets")

    E = np.array(rows).reshape(len(rows), M)
    e = np.array(rhs)
    return P, q, const, E, e, lo, hi, kinds


def dense_kkt_qp_oracle(spec: ProblemSpec, z_hint=None):
    """Brute-force KKT solve of the stacked QP.

    An SLSQP run produces an approximate primal; the active set read off it
    seeds a dense KKT solve (least squares on the stationarity system) that
    is then verified: primal feasibility, multiplier signs, and stationarity
    residual must all hold.  Wrong-signed bounds are released a handful of
    times before giving up.  Returns (z, objective, multiplier dict).
    """
    P, q, const, E, e, lo, hi, kinds = assemble_dense_qp(spec)
    M = P.shape[0]

    def obj(z):
        return 0.5 * z @ P @ z + q @ z + const

    def obj_grad(z):
        return P @ z + q

    z0 = np.clip(np.zeros(M), lo, hi) if z_hint is None else np.clip(z_hint, lo, hi)
    cons = [{"type": "eq", "fun": lambda z: E @ z - e, "jac": lambda z: E}]
    bounds = [(None if not np.isfinite(l) else l, None if not np.isfinite(h) else h)
              for l, h in zip(lo, hi)]
    res = scipy.optimize.minimize(
        obj, z0, jac=obj_grad, method="SLSQP", bounds=bounds, constraints=cons,
        options={"maxiter": 2000, "ftol": 1e-14},
    )
    z_approx = res.x

    atol = 1e-6
    active = []
    for i in range(M):
        if np.isfinite(hi[i]) and hi[i] - z_approx[i] <= atol:
            active.append((i, +1))
        elif np.isfinite(lo[i]) and z_approx[i] - lo[i] <= atol:
            active.append((i, -1))

    p_eq = E.shape[0]
    for _attempt in range(30):
        k = len(active)
        dim = M + p_eq + k
        K = np.zeros((dim, dim))
        K[:M, :M] = P
        K[:M, M:M + p_eq] = E.T
        K[M:M + p_eq, :M] = E
        rhs = np.concatenate([-q, e, np.zeros(k)])
        for j, (i, side) in enumerate(active):
            K[i, M + p_eq + j] = 1.0
            K[M + p_eq + j, i] = 1.0
            rhs[M + p_eq + j] = hi[i] if side > 0 else lo[i]
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        z = sol[:M]
        y_eq = sol[M:M + p_eq]
        y_act = sol[M + p_eq:]
        # verification
        stat = np.max(np.abs(K[:M] @ sol - rhs[:M]))
        feas_eq = np.max(np.abs(E @ z - e)) if p_eq else 0.0
        viol = [(i, +1) for i in range(M)
                if np.isfinite(hi[i]) and z[i] > hi[i] + 1e-8 and (i, +1) not in active]
        viol += [(i, -1) for i in range(M)
                 if np.isfinite(lo[i]) and z[i] < lo[i] - 1e-8 and (i, -1) not in active]
        wrong = [(i, s) for j, (i, s) in enumerate(active)
                 if (s > 0 and y_act[j] < -1e-8) or (s < 0 and y_act[j] > 1e-8)]
        if stat <= 1e-8 and feas_eq <= 1e-8 and not viol and not wrong:
            break
        if wrong:
            active.remove(sorted(wrong)[0])
        elif viol:
            active.append(sorted(viol)[0])
            active.sort()
        elif active and (stat > 1e-8 or feas_eq > 1e-8):
            # a spurious pin (bound detected active but not truly so) makes
            # the pinned system inconsistent; release the weakest one
            j_min = int(np.argmin(np.abs(y_act)))
            active.pop(j_min)
        else:
            raise AssertionError(
                f"oracle KKT verification failed: stat={stat:.2e} feas={feas_eq:.2e}"
            )
    else:
        raise AssertionError("oracle active-set repair did not settle")

    T, n, m = spec.horizon, spec.state_dim, spec.control_dim
    lambdas = np.zeros((T, n))
    mu_s = np.zeros(spec.state_freq.rows if spec.state_freq else 0)
    mu_c = np.zeros(spec.control_freq.rows if spec.control_freq else 0)
    eta_x = np.zeros((T + 1, n))
    eta_u = np.zeros((T, m))
    for r_i, (kind, t, comp) in enumerate(kinds):
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
    off = n * (T + 1)
    for j, (i, _) in enumerate(active):
        if i < off:
            eta_x[i // n, i % n] += y_act[j]
        else:
            eta_u[(i - off) // m, (i - off) % m] += y_act[j]
    mult = {"lambdas": lambdas, "mu_state": mu_s, "mu_control": mu_c,
            "eta_x": eta_x, "eta_u": eta_u}
    return z, obj(z), mult


# -- random feasible LQ instance generator ------------------------------------


def _symmetric_bins(rng, N, max_bins):
    """Nonempty conjugate-symmetric set of bins, excluding nothing a priori."""
    reps = list(range(0, N // 2 + 1))
    rng.shuffle(reps)
    chosen = set()
    for rep in reps[: rng.integers(1, max_bins + 1)]:
        chosen.add(rep)
        chosen.add((N - rep) % N)
    return frozenset(chosen)


def random_lq_instance(seed: int) -> ProblemSpec:
    """Feasible-by-construction random LQ instance with boxes and bands.

    A reference trajectory is rolled out first (its controls pre-filtered
    through any control band), then boxes are inflated around it and the
    state-band offset is chosen so the reference satisfies every constraint.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, 3))
    T = int(rng.integers(2, 7))

    A = rng.standard_normal((n, n))
    rad = max(np.abs(np.linalg.eigvals(A)))
    if rad > 1e-9:
        A *= rng.uniform(0.5, 1.2) / rad
    B = rng.standard_normal((n, m))
    cvec = rng.standard_normal(n) * 0.1 if rng.random() < 0.5 else np.zeros(n)
    dyn = DynamicsOracle.linear(A, B, cvec)

    def psd(k, scale=1.0):
        L = rng.standard_normal((k, k)) * scale
        return L @ L.T

    costs = []
    for _ in range(T):
        Q = psd(n, 0.6) if rng.random() < 0.8 else np.zeros((n, n))
        R = psd(m, 0.6) + 0.3 * np.eye(m)
        costs.append(QuadraticStageCost(Q, R, rng.standard_normal(n) * 0.2,
                                        rng.standard_normal(m) * 0.2))
    term = QuadraticTerminalCost(psd(n, 0.5), rng.standard_normal(n) * 0.2)

    control_freq = None
    u_ref = rng.standard_normal((T, m))
    if rng.random() < 0.6 and T >= 2:
        bins = _symmetric_bins(rng, T, max_bins=max(1, T // 3))
        banned = BannedBinSet.uniform(bins, m)
        control_freq = build_band_constraint(T, m, banned)
        u_ref = ideal_filter(u_ref, banned)

    x0 = rng.standard_normal(n)
    states = np.zeros((T + 1, n))
    states[0] = x0
    for t in range(T):
        states[t + 1] = A @ states[t] + B @ u_ref[t] + cvec

    state_freq = None
    if rng.random() < 0.4:
        bins = _symmetric_bins(rng, T + 1, max_bins=1)
        banned = BannedBinSet.uniform(bins, n)
        fc = build_band_constraint(T + 1, n, banned)
        offset = np.zeros(fc.rows)
        for t in range(T + 1):
            offset -= fc.stage_maps[t] @ states[t]
        state_freq = FrequencyConstraint(fc.stage_maps, offset)

    def box_around(vals, dim):
        lo = vals.min(axis=0) - rng.uniform(0.05, 1.0, size=dim)
        hi = vals.max(axis=0) + rng.uniform(0.05, 1.0, size=dim)
        return Box(lo, hi)

    state_sets = [box_around(states, n) if rng.random() < 0.8 else Whole(n)
                  for _ in range(T + 1)]
    control_sets = [box_around(u_ref, m) for _ in range(T)]
    terminal_state = states[T].copy() if rng.random() < 0.5 else None

    return ProblemSpec.create(
        horizon=T, state_dim=n, control_dim=m,
        dynamics=[dyn] * T, stage_costs=costs, terminal_cost=term,
        state_sets=state_sets, control_sets=control_sets,
        state_freq=state_freq, control_freq=control_freq,
        initial_state=x0, terminal_state=terminal_state,
    )
