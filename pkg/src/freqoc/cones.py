"""Tangent/normal cone calculus for an analytic catalog of closed sets.

The admissible sets supported here (boxes, balls, singletons, the whole
space, halfspace intersections, and planar epigraph cones ``x2 >= a|x1|``)
all have closed-form Clarke tangent and normal cones, so membership tests
are exact up to fixed activity tolerances.  That exactness is what makes
the downstream optimality certificates trustworthy; numeric limsup
estimation of generalized directional derivatives is kept only as a test
oracle.

Conventions: "x in S" means dist_S(x) <= MEMBERSHIP_TOL, and a face counts
as active when the point sits within ACTIVITY_TOL of it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

__all__ = [
    "ACTIVITY_TOL",
    "MEMBERSHIP_TOL",
    "AdmissibleSet",
    "Box",
    "Ball",
    "Singleton",
    "Whole",
    "HalfspaceIntersection",
    "EpigraphCone",
    "ConeDescription",
    "GradientInterval",
    "GradientBall",
    "GradientPoint",
    "NotInSetError",
    "UnsupportedProjectionError",
    "tangent_contains",
    "normal_cone",
    "normal_contains",
    "project",
    "distance",
    "generalized_gradient_1d",
    "tangent_of_intersection",
]

ACTIVITY_TOL = 1e-9
MEMBERSHIP_TOL = 1e-9


class NotInSetError(ValueError):
    """Raised when a cone query is made at a point outside the set."""


class UnsupportedProjectionError(NotImplementedError):
    """Raised for set variants without a closed-form projection."""


@dataclass(frozen=True)
class ConeDescription:
    """Finitely generated cone with vertex: { vertex + sum_i k_i g_i, k >= 0 }."""

    vertex: np.ndarray
    generators: np.ndarray  # (count, dim); empty count means the cone {vertex}

    def contains(self, v: np.ndarray, tol: float = 1e-8) -> bool:
        w = np.asarray(v, dtype=float) - self.vertex
        if self.generators.shape[0] == 0:
            return bool(np.linalg.norm(w) <= tol * (1.0 + np.linalg.norm(self.vertex)))
        _, resid = nnls(self.generators.T, w)
        return bool(resid <= tol * (1.0 + np.linalg.norm(w)))


class AdmissibleSet:
    """Base class; subclasses implement the cone calculus per variant."""

    dim: int

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        raise NotImplementedError

    def project(self, p: np.ndarray) -> np.ndarray:
        raise UnsupportedProjectionError(f"{type(self).__name__} has no projection")

    def distance(self, p: np.ndarray) -> float:
        q = self.project(np.asarray(p, dtype=float))
        return float(np.linalg.norm(np.asarray(p, dtype=float) - q))

    def tangent_contains(self, x, y, tol: float = ACTIVITY_TOL) -> bool:
        raise NotImplementedError

    def normal_generators(self, x) -> np.ndarray:
        raise NotImplementedError

    def normal_contains(self, x, eta, tol: float = 1e-8) -> bool:
        gens = self.normal_generators(np.asarray(x, dtype=float))
        cone = ConeDescription(np.zeros(self.dim), gens)
        return cone.contains(np.asarray(eta, dtype=float), tol)

    def box_bounds(self):
        """(lo, hi) arrays when the set is a box/singleton/whole, else None."""
        return None

    def _require_member(self, x):
        if not self.contains(x):
            raise NotInSetError(f"point {np.asarray(x)} not in {self!r}")


class Whole(AdmissibleSet):
    """All of R^dim."""

    def __init__(self, dim: int):
        self.dim = int(dim)

    def __repr__(self):
        return f"Whole(dim={self.dim})"

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return np.asarray(x).shape == (self.dim,)

    def project(self, p):
        return np.asarray(p, dtype=float).copy()

    def tangent_contains(self, x, y, tol=ACTIVITY_TOL):
        return True

    def normal_generators(self, x):
        return np.zeros((0, self.dim))

    def normal_contains(self, x, eta, tol=1e-8):
        return bool(np.linalg.norm(np.asarray(eta, dtype=float)) <= tol)

    def box_bounds(self):
        return np.full(self.dim, -np.inf), np.full(self.dim, np.inf)


class Box(AdmissibleSet):
    """Axis-aligned box; entries of lo/hi may be -inf/+inf."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float).copy()
        self.hi = np.asarray(hi, dtype=float).copy()
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise ValueError("lo/hi must be 1-d arrays of equal length")
        if np.any(self.lo > self.hi):
            raise ValueError("box requires lo <= hi componentwise")
        self.dim = self.lo.size
        self.lo.flags.writeable = False
        self.hi.flags.writeable = False

    def __repr__(self):
        return f"Box(lo={self.lo}, hi={self.hi})"

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def project(self, p):
        return np.clip(np.asarray(p, dtype=float), self.lo, self.hi)

    def _active(self, x, tol=ACTIVITY_TOL):
        x = np.asarray(x, dtype=float)
        at_lo = np.isfinite(self.lo) & (x - self.lo <= tol)
        at_hi = np.isfinite(self.hi) & (self.hi - x <= tol)
        return at_lo, at_hi

    def tangent_contains(self, x, y, tol=ACTIVITY_TOL):
        self._require_member(x)
        y = np.asarray(y, dtype=float)
        at_lo, at_hi = self._active(x)
        return bool(np.all(y[at_lo] >= -tol) and np.all(y[at_hi] <= tol))

    def normal_generators(self, x):
        self._require_member(x)
        at_lo, at_hi = self._active(x)
        gens = []
        for i in range(self.dim):
            if at_lo[i]:
                e = np.zeros(self.dim)
                e[i] = -1.0
                gens.append(e)
            if at_hi[i]:
                e = np.zeros(self.dim)
                e[i] = 1.0
                gens.append(e)
        return np.array(gens).reshape(len(gens), self.dim)

    def normal_contains(self, x, eta, tol=1e-8):
        self._require_member(x)
        eta = np.asarray(eta, dtype=float)
        at_lo, at_hi = self._active(x)
        for i in range(self.dim):
            if at_lo[i] and at_hi[i]:
                continue  # pinned coordinate, any sign
            if at_lo[i]:
                if eta[i] > tol:
                    return False
            elif at_hi[i]:
                if eta[i] < -tol:
                    return False
            elif abs(eta[i]) > tol:
                return False
        return True

    def box_bounds(self):
        return self.lo.copy(), self.hi.copy()


class Singleton(AdmissibleSet):
    """One-point set; its tangent cone is {0} and its normal cone everything."""

    def __init__(self, point):
        self.point = np.asarray(point, dtype=float).copy()
        self.dim = self.point.size
        self.point.flags.writeable = False

    def __repr__(self):
        return f"Singleton({self.point})"

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return bool(np.linalg.norm(np.asarray(x, dtype=float) - self.point) <= tol)

    def project(self, p):
        return self.point.copy()

    def tangent_contains(self, x, y, tol=ACTIVITY_TOL):
        self._require_member(x)
        return bool(np.linalg.norm(np.asarray(y, dtype=float)) <= tol)

    def normal_generators(self, x):
        self._require_member(x)
        eye = np.eye(self.dim)
        return np.vstack([eye, -eye])

    def normal_contains(self, x, eta, tol=1e-8):
        self._require_member(x)
        return True

    def box_bounds(self):
        return self.point.copy(), self.point.copy()


class Ball(AdmissibleSet):
    """Closed Euclidean ball."""

    def __init__(self, center, radius: float):
        self.center = np.asarray(center, dtype=float).copy()
        self.radius = float(radius)
        if self.radius <= 0:
            raise ValueError("ball radius must be > 0")
        self.dim = self.center.size
        self.center.flags.writeable = False

    def __repr__(self):
        return f"Ball(center={self.center}, radius={self.radius})"

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return bool(np.linalg.norm(np.asarray(x, dtype=float) - self.center) <= self.radius + tol)

    def project(self, p):
        p = np.asarray(p, dtype=float)
        d = p - self.center
        nd = np.linalg.norm(d)
        if nd <= self.radius:
            return p.copy()
        return self.center + d * (self.radius / nd)

    def _boundary_normal(self, x, tol=ACTIVITY_TOL):
        d = np.asarray(x, dtype=float) - self.center
        nd = np.linalg.norm(d)
        if abs(nd - self.radius) <= tol * (1.0 + self.radius):
            return d / nd
        return None

    def tangent_contains(self, x, y, tol=ACTIVITY_TOL):
        self._require_member(x)
        n = self._boundary_normal(x)
        if n is None:
            return True
        y = np.asarray(y, dtype=float)
        return bool(float(n @ y) <= tol * (1.0 + np.linalg.norm(y)))

    def normal_generators(self, x):
        self._require_member(x)
        n = self._boundary_normal(x)
        if n is None:
            return np.zeros((0, self.dim))
        return n.reshape(1, self.dim)


class HalfspaceIntersection(AdmissibleSet):
    """{x : A x <= b} for rows a_i, offsets b_i."""

    def __init__(self, A, b):
        self.A = np.atleast_2d(np.asarray(A, dtype=float)).copy()
        self.b = np.atleast_1d(np.asarray(b, dtype=float)).copy()
        if self.A.shape[0] != self.b.size:
            raise ValueError("row count of A must match length of b")
        norms = np.linalg.norm(self.A, axis=1)
        if np.any(norms == 0):
            raise ValueError("halfspace rows must be nonzero")
        self.dim = self.A.shape[1]
        self._row_norms = norms
        self.A.flags.writeable = False
        self.b.flags.writeable = False

    def __repr__(self):
        return f"HalfspaceIntersection(rows={self.A.shape[0]}, dim={self.dim})"

    def _slack(self, x):
        return (self.b - self.A @ np.asarray(x, dtype=float)) / self._row_norms

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return bool(np.all(self._slack(x) >= -tol))

    def project(self, p):
        if self.A.shape[0] != 1:
            raise UnsupportedProjectionError(
                "projection onto a general halfspace intersection is not supported"
            )
        p = np.asarray(p, dtype=float)
        a, b = self.A[0], self.b[0]
        excess = float(a @ p - b)
        if excess <= 0:
            return p.copy()
        return p - a * (excess / float(a @ a))

    def _active_rows(self, x, tol=ACTIVITY_TOL):
        return np.nonzero(np.abs(self._slack(x)) <= tol)[0]

    def tangent_contains(self, x, y, tol=ACTIVITY_TOL):
        self._require_member(x)
        y = np.asarray(y, dtype=float)
        idx = self._active_rows(x)
        if idx.size == 0:
            return True
        vals = (self.A[idx] @ y) / self._row_norms[idx]
        return bool(np.all(vals <= tol * (1.0 + np.linalg.norm(y))))

    def normal_generators(self, x):
        self._require_member(x)
        idx = self._active_rows(x)
        return self.A[idx].reshape(idx.size, self.dim)


class EpigraphCone(AdmissibleSet):
    """Planar set {x in R^2 : x2 >= alpha*|x1|} for alpha > 0."""

    def __init__(self, alpha: float = 1.0):
        self.alpha = float(alpha)
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        self.dim = 2

    def __repr__(self):
        return f"EpigraphCone(alpha={self.alpha})"

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = np.asarray(x, dtype=float)
        return bool(x[1] >= self.alpha * abs(x[0]) - tol * (1.0 + self.alpha))

    def project(self, p):
        p = np.asarray(p, dtype=float)
        if self.contains(p, tol=0.0):
            return p.copy()
        best, best_d = np.zeros(2), np.linalg.norm(p)
        for s in (1.0, -1.0):
            ray = np.array([s, self.alpha]) / np.hypot(1.0, self.alpha)
            t = max(0.0, float(ray @ p))
            cand = t * ray
            d = np.linalg.norm(p - cand)
            if d < best_d:
                best, best_d = cand, d
        return best

    def _regime(self, x, tol=ACTIVITY_TOL):
        x = np.asarray(x, dtype=float)
        if np.linalg.norm(x) <= tol:
            return "vertex"
        if abs(x[1] - self.alpha * abs(x[0])) <= tol * (1.0 + abs(x[0])):
            return "boundary"
        return "interior"

    def tangent_contains(self, x, y, tol=ACTIVITY_TOL):
        self._require_member(x)
        y = np.asarray(y, dtype=float)
        regime = self._regime(x)
        if regime == "interior":
            return True
        if regime == "vertex":
            return bool(y[1] >= self.alpha * abs(y[0]) - tol * (1.0 + np.linalg.norm(y)))
        s = np.sign(np.asarray(x, dtype=float)[0])
        return bool(self.alpha * s * y[0] - y[1] <= tol * (1.0 + np.linalg.norm(y)))

    def normal_generators(self, x):
        self._require_member(x)
        regime = self._regime(x)
        if regime == "interior":
            return np.zeros((0, 2))
        if regime == "vertex":
            return np.array([[self.alpha, -1.0], [-self.alpha, -1.0]])
        s = np.sign(np.asarray(x, dtype=float)[0])
        return np.array([[self.alpha * s, -1.0]])


# -- module-level operations ------------------------------------------------


def tangent_contains(set_: AdmissibleSet, x, y, tol: float = ACTIVITY_TOL) -> bool:
    """True iff direction y lies in the Clarke tangent cone of the set at x."""
    return set_.tangent_contains(x, y, tol)


def normal_cone(set_: AdmissibleSet, x) -> ConeDescription:
    """Clarke normal cone at x as a finitely generated cone with vertex 0.

    Polarity against :func:`tangent_contains` holds by construction: every
    generator has nonpositive inner product with every tangent direction.
    """
    gens = set_.normal_generators(np.asarray(x, dtype=float))
    return ConeDescription(np.zeros(set_.dim), gens)


def normal_contains(set_: AdmissibleSet, x, eta, tol: float = 1e-8) -> bool:
    """True iff eta lies in the Clarke normal cone of the set at x."""
    return set_.normal_contains(x, eta, tol)


def project(set_: AdmissibleSet, p) -> np.ndarray:
    """Closest point of the set; raises UnsupportedProjectionError if none known."""
    return set_.project(np.asarray(p, dtype=float))


def distance(set_: AdmissibleSet, p) -> float:
    return set_.distance(p)


@dataclass(frozen=True)
class GradientInterval:
    """Generalized gradient of a scalar function: the interval [lo, hi]."""

    lo: float
    hi: float

    def contains(self, g: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= g <= self.hi + tol


@dataclass(frozen=True)
class GradientBall:
    """Generalized gradient equal to the closed ball of given radius at 0."""

    radius: float

    def contains(self, g, tol: float = 0.0) -> bool:
        return bool(np.linalg.norm(np.asarray(g, dtype=float)) <= self.radius + tol)


@dataclass(frozen=True)
class GradientPoint:
    """Singleton generalized gradient {value}."""

    value: np.ndarray

    def contains(self, g, tol: float = 0.0) -> bool:
        return bool(np.linalg.norm(np.asarray(g, dtype=float) - self.value) <= tol)


_GRADIENT_CATALOG = ("max0", "abs", "norm")


def generalized_gradient_1d(fn: str, x):
    """Exact generalized gradient for the catalog {max(0,.), |.|, euclidean norm}.

    Kinks are detected by exact comparison with zero; the scalar entries
    return :class:`GradientInterval`, the norm returns a point or the unit
    ball at the origin.
    """
    if fn not in _GRADIENT_CATALOG:
        raise ValueError(f"unknown catalog function {fn!r}; choose from {_GRADIENT_CATALOG}")
    if fn == "norm":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n = np.linalg.norm(x)
        if n == 0.0:
            return GradientBall(1.0)
        return GradientPoint(x / n)
    xv = float(x)
    if fn == "max0":
        if xv > 0:
            return GradientInterval(1.0, 1.0)
        if xv < 0:
            return GradientInterval(0.0, 0.0)
        return GradientInterval(0.0, 1.0)
    # abs
    if xv > 0:
        return GradientInterval(1.0, 1.0)
    if xv < 0:
        return GradientInterval(-1.0, -1.0)
    return GradientInterval(-1.0, 1.0)


def tangent_of_intersection(sets, x):
    """Membership predicate for the tangent cone of an intersection.

    The tangent cone of a finite intersection is the intersection of the
    tangent cones, so the predicate is a conjunction of per-set tests.
    """
    x = np.asarray(x, dtype=float)
    for s in sets:
        if not s.contains(x):
            raise NotInSetError(f"point {x} not in {s!r}")

    def predicate(y) -> bool:
        return all(s.tangent_contains(x, y) for s in sets)

    return predicate
