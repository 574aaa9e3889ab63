"""B-spline trajectory representation, evaluation and fitting."""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError

HULL_TOLERANCE = 1e-9
FIT_RIDGE = 1e-9


@dataclass(frozen=True)
class KnotVector:
    """Open uniform knot vector over normalized time [0, 1]."""

    knots: Tuple[float, ...]
    degree: int = 3

    def __post_init__(self):
        knots = tuple(float(k) for k in self.knots)
        object.__setattr__(self, "knots", knots)
        d = self.degree
        if d < 0:
            raise ValueError(f"degree must be non-negative, got {d}")
        if any(b < a for a, b in zip(knots, knots[1:])):
            raise ValueError("knots must be non-decreasing")
        if any(k < 0.0 or k > 1.0 for k in knots):
            raise ValueError("knots must lie in [0, 1]")
        if len(knots) - d - 1 < 1:
            raise ValueError(
                f"{len(knots)} knots with degree {d} give n = m - d - 1 < 1 coefficients"
            )
        if knots[: d + 1] != (0.0,) * (d + 1) or knots[-(d + 1):] != (1.0,) * (d + 1):
            raise ValueError("knot vector is not open: first/last d+1 knots must be 0/1")

    @property
    def n_coeffs(self) -> int:
        return len(self.knots) - self.degree - 1

    @classmethod
    def open_uniform(cls, n_coeffs: int = 4, degree: int = 3) -> "KnotVector":
        """Build the open uniform knot vector for ``n_coeffs`` control points."""
        if n_coeffs < degree + 1:
            raise ValueError(f"need at least {degree + 1} coefficients for degree {degree}")
        n_inner = n_coeffs - degree - 1
        inner = [i / (n_inner + 1) for i in range(1, n_inner + 1)]
        return cls(tuple([0.0] * (degree + 1) + inner + [1.0] * (degree + 1)), degree)


DEFAULT_KNOTS = KnotVector((0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0), 3)


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not (0.0 <= tau <= 1.0):
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    return tau


def _basis_all(knots: Tuple[float, ...], degree: int, tau: float) -> np.ndarray:
    # Cox-de Boor, bottom-up; 0/0 terms are taken as 0
    t = knots
    m = len(t)
    last = t[-1]
    basis = np.zeros(m - 1)
    for j in range(m - 1):
        lo, hi = t[j], t[j + 1]
        if lo <= tau < hi or (tau == hi == last and lo < hi):
            basis[j] = 1.0
    for p in range(1, degree + 1):
        nxt = np.zeros(m - 1 - p)
        for j in range(m - 1 - p):
            left_den = t[j + p] - t[j]
            right_den = t[j + p + 1] - t[j + 1]
            left = (tau - t[j]) / left_den * basis[j] if left_den > 0 else 0.0
            right = (t[j + p + 1] - tau) / right_den * basis[j + 1] if right_den > 0 else 0.0
            nxt[j] = left + right
        basis = nxt
    return basis


def basis_eval(kv: KnotVector, i: int, tau: float) -> float:
    """
    Evaluate the i-th basis function at ``tau``.

    The right end tau = 1 uses the left limit so the last span stays closed.

    Args:
        kv: Knot vector
        i: Basis index, 0 <= i < n
        tau: Normalized parameter in [0, 1]

    Returns:
        B_i(tau)
    """
    if not (0 <= i < kv.n_coeffs):
        raise ValueError(f"basis index {i} out of range [0, {kv.n_coeffs})")
    return float(_basis_all(kv.knots, kv.degree, _check_tau(tau))[i])


def basis_matrix(kv: KnotVector, taus: Sequence[float]) -> np.ndarray:
    """Rows of basis values, one row per parameter value."""
    return np.array([_basis_all(kv.knots, kv.degree, _check_tau(tau)) for tau in taus])


@lru_cache(maxsize=64)
def uniform_basis_matrix(kv: KnotVector, count: int) -> np.ndarray:
    """Basis matrix on ``count`` uniformly spaced parameters (cached, read-only)."""
    matrix = basis_matrix(kv, np.linspace(0.0, 1.0, count))
    matrix.setflags(write=False)
    return matrix


def greville_times(kv: KnotVector, horizon_s: float) -> np.ndarray:
    """Time instant associated with each control point (Greville abscissae)."""
    t = np.asarray(kv.knots)
    d = kv.degree
    if d == 0:
        return horizon_s * 0.5 * (t[:-1] + t[1:])
    return np.array([horizon_s * t[i + 1:i + 1 + d].mean() for i in range(kv.n_coeffs)])


@dataclass(frozen=True, eq=False)
class BSpline2D:
    """Planned trajectory in the ego frame (x forward, y left), meters."""

    knotvec: KnotVector
    control_points: np.ndarray = field(repr=False)
    horizon_s: float = 20.0

    def __post_init__(self):
        points = np.array(self.control_points, dtype=float)
        if points.shape != (self.knotvec.n_coeffs, 2):
            raise ValueError(
                f"expected {self.knotvec.n_coeffs} control points of dimension 2, got {points.shape}"
            )
        if not np.all(np.isfinite(points)):
            raise ValueError("control points must be finite")
        if np.any(points[0] != 0.0):
            raise ValueError("first control point must be the origin")
        if self.horizon_s <= 0:
            raise ValueError("horizon_s must be positive")
        points.setflags(write=False)
        object.__setattr__(self, "control_points", points)

    @classmethod
    def from_coefficients(
        cls,
        coeffs: Sequence[float],
        horizon_s: float = 20.0,
        kv: KnotVector = DEFAULT_KNOTS,
    ) -> "BSpline2D":
        """Build from the flat free coefficients (ax1, ay1, ax2, ay2, ...)."""
        free = np.asarray(coeffs, dtype=float).reshape(-1, 2)
        return cls(kv, np.vstack([np.zeros((1, 2)), free]), horizon_s)

    def coefficients(self) -> np.ndarray:
        """Flat free coefficients, origin point dropped."""
        return self.control_points[1:].reshape(-1).copy()

    def eval(self, tau: float) -> np.ndarray:
        """Point (x, y) at normalized time ``tau``."""
        weights = _basis_all(self.knotvec.knots, self.knotvec.degree, _check_tau(tau))
        return weights @ self.control_points

    def at_time(self, t_s: float) -> np.ndarray:
        return self.eval(min(max(t_s / self.horizon_s, 0.0), 1.0))

    def sample(self, count: int) -> np.ndarray:
        """``count`` curve points at uniform normalized times, shape (count, 2)."""
        return uniform_basis_matrix(self.knotvec, count) @ self.control_points


def fit_spline(points: Sequence[Sequence[float]], horizon_s: float, kv: KnotVector = DEFAULT_KNOTS) -> BSpline2D:
    """
    Least-squares spline through timed points with the first control point pinned at the origin.

    Args:
        points: Rows of (t_s, x, y)
        horizon_s: Planning horizon scaling normalized time
        kv: Knot vector

    Returns:
        Fitted BSpline2D
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n_free = kv.n_coeffs - 1
    if len(pts) < n_free:
        raise ValueError(f"need at least {n_free} points to fit {n_free} free coefficients, got {len(pts)}")
    t = pts[:, 0]
    if np.any(t < 0.0) or np.any(t > horizon_s):
        raise ValueError(f"point times must lie in [0, {horizon_s}]")
    basis = basis_matrix(kv, t / horizon_s)[:, 1:]
    normal = basis.T @ basis + FIT_RIDGE * np.eye(n_free)
    rhs = basis.T @ pts[:, 1:]
    try:
        free = np.linalg.solve(normal, rhs)
    except np.linalg.LinAlgError:
        raise ValueError("singular normal equations in spline fit") from None
    if not np.all(np.isfinite(free)):
        raise ValueError("singular normal equations in spline fit")
    return BSpline2D(kv, np.vstack([np.zeros((1, 2)), free]), horizon_s)


def fit_residual_rms(spline: BSpline2D, points: Sequence[Sequence[float]]) -> float:
    """RMS distance between timed points and the spline at the same times."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    curve = basis_matrix(spline.knotvec, pts[:, 0] / spline.horizon_s) @ spline.control_points
    return float(np.sqrt(np.mean(np.sum((curve - pts[:, 1:]) ** 2, axis=1))))


def _inside_segment(points: np.ndarray, a: np.ndarray, b: np.ndarray, tol: float) -> bool:
    direction = b - a
    length_sq = float(direction @ direction)
    if length_sq == 0.0:
        return bool(np.all(np.linalg.norm(points - a, axis=1) <= tol))
    s = np.clip((points - a) @ direction / length_sq, 0.0, 1.0)
    nearest = a + s[:, None] * direction
    return bool(np.all(np.linalg.norm(points - nearest, axis=1) <= tol))


def in_convex_hull(spline: BSpline2D, samples: int = 100, tol: float = HULL_TOLERANCE) -> bool:
    """True when every sampled curve point lies in the control-point hull."""
    if samples < 2:
        raise ValueError("samples must be at least 2")
    curve = spline.sample(samples)
    hull_pts = spline.control_points
    centered = hull_pts - hull_pts.mean(axis=0)
    singular = np.linalg.svd(centered, compute_uv=False)
    scale = max(1.0, float(singular[0]))
    if singular[0] <= 1e-12:
        return _inside_segment(curve, hull_pts[0], hull_pts[0], tol)
    if singular[1] <= 1e-12 * scale:
        return _collinear_check(curve, hull_pts, tol)
    try:
        hull = ConvexHull(hull_pts)
    except QhullError:
        return _collinear_check(curve, hull_pts, tol)
    # equations are unit outward normals with offsets: n . p + c <= 0 inside
    distances = curve @ hull.equations[:, :2].T + hull.equations[:, 2]
    return bool(np.all(distances <= tol))


def _collinear_check(curve: np.ndarray, hull_pts: np.ndarray, tol: float) -> bool:
    center = hull_pts.mean(axis=0)
    _, _, vt = np.linalg.svd(hull_pts - center)
    proj = (hull_pts - center) @ vt[0]
    a = center + proj.min() * vt[0]
    b = center + proj.max() * vt[0]
    return _inside_segment(curve, a, b, tol)
