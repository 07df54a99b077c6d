"""Extended Kalman filter for a target point circling a spin axis.

The target is tracked in 2-D coordinates of the plane perpendicular to the
estimated spin axis. The state is ``X = [x, y, heading, speed]`` and the
heading turns at the externally supplied spin rate. The model
``x += v cos(h) dt, y += v sin(h) dt, h += rate dt`` is exact for uniform
circular motion sampled every ``dt``: the state then walks the chords of the
circle, with ``v`` the chord length over ``dt``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .so3 import wrap_angle

DEFAULT_Q = np.diag([1e-6, 1e-6, 1e-5, 1e-5])
DEFAULT_P0 = np.diag([0.01, 0.01, 0.1, 0.1])


class FitError(ValueError):
    pass


@dataclass
class PlaneFrame:
    """Right-handed basis ``(u, v, normal)``; ``center`` lies in the plane through the origin."""

    normal: np.ndarray
    center: np.ndarray
    u: np.ndarray
    v: np.ndarray
    offset: float = 0.0
    radius: float = float("nan")

    @property
    def rotation_center(self) -> np.ndarray:
        return self.center + self.offset * self.normal


def plane_basis(normal) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic ``(u, v, n)`` for a spin axis.

    ``u`` is the normalized rejection of the world axis least aligned with
    ``n`` (lowest index on ties) and ``v = n x u``.
    """
    n = np.asarray(normal, float)
    norm = np.linalg.norm(n)
    if not np.isfinite(norm) or norm < 1e-12:
        raise ValueError("axis must be a non-zero finite vector")
    n = n / norm
    e = np.zeros(3)
    e[int(np.argmin(np.abs(n)))] = 1.0
    u = e - np.dot(e, n) * n
    u /= np.linalg.norm(u)
    return u, np.cross(n, u), n


def fit_circle(xy: np.ndarray) -> tuple[np.ndarray, float]:
    """Algebraic least-squares circle through 2-D points: ``(center, radius)``."""
    xy = np.asarray(xy, float)
    if len(xy) < 3:
        raise FitError("need at least 3 points for a circle fit")
    A = np.c_[2 * xy, np.ones(len(xy))]
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= 1e-10 * s[0]:
        raise FitError("points are collinear; circle is not determined")
    b = np.sum(xy**2, axis=1)
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    c = sol[:2]
    return c, float(np.sqrt(max(sol[2] + c @ c, 0.0)))


def build_plane_frame(normal, points) -> PlaneFrame:
    """Frame whose in-plane origin is the fitted circle center of ``points``."""
    u, v, n = plane_basis(normal)
    pts = np.asarray(points, float).reshape(-1, 3)
    xy = np.c_[pts @ u, pts @ v]
    c2, radius = fit_circle(xy)
    return PlaneFrame(n, c2[0] * u + c2[1] * v, u, v, float(np.mean(pts @ n)), radius)


def project(p, frame: PlaneFrame) -> np.ndarray:
    d = np.asarray(p, float) - frame.center
    return np.array([d @ frame.u, d @ frame.v])


def lift(xy, frame: PlaneFrame) -> np.ndarray:
    return frame.center + xy[0] * frame.u + xy[1] * frame.v + frame.offset * frame.normal


# ---------------------------------------------------------------------------
# filter


@dataclass
class EkfState:
    X: np.ndarray  # [x, y, heading, speed]
    P: np.ndarray
    Q: np.ndarray = field(default_factory=lambda: DEFAULT_Q.copy())
    R: np.ndarray = field(default_factory=lambda: 0.005**2 * np.eye(2))
    dt: float = 0.05
    rate: float = 0.0

    def __post_init__(self):
        self.X = np.asarray(self.X, float)
        self.P = np.asarray(self.P, float)
        self.Q = np.asarray(self.Q, float)
        self.R = np.asarray(self.R, float)
        if self.X.shape != (4,) or self.P.shape != (4, 4) or self.Q.shape != (4, 4) or self.R.shape != (2, 2):
            raise ValueError("EKF state has wrong shapes")


def transition(X, dt: float, rate: float) -> np.ndarray:
    x, y, h, v = X
    return np.array([x + v * np.cos(h) * dt, y + v * np.sin(h) * dt, wrap_angle(h + rate * dt), v])


def transition_jacobian(X, dt: float) -> np.ndarray:
    _, _, h, v = X
    c, s = np.cos(h), np.sin(h)
    return np.array([
        [1.0, 0.0, -v * s * dt, c * dt],
        [0.0, 1.0, v * c * dt, s * dt],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])


def _sym(P):
    return 0.5 * (P + P.T)


def ekf_predict(state: EkfState) -> EkfState:
    if state.dt <= 0:
        raise ValueError("control cycle must be positive")
    F = transition_jacobian(state.X, state.dt)
    X = transition(state.X, state.dt, state.rate)
    return replace(state, X=X, P=_sym(F @ state.P @ F.T + state.Q))


H = np.hstack([np.eye(2), np.zeros((2, 2))])


def ekf_update(state: EkfState, z) -> tuple[EkfState, np.ndarray]:
    """Correction with a planar position measurement; returns ``(state, innovation)``."""
    z = np.asarray(z, float)
    if z.shape != (2,) or not np.all(np.isfinite(z)):
        raise ValueError("measurement must be a finite 2-vector")
    P0 = state.P
    S = P0[:2, :2] + state.R
    det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
    if not np.isfinite(det) or abs(det) <= 1e-14 * max(S[0, 0] * S[1, 1], 1e-300):
        raise np.linalg.LinAlgError("innovation covariance is singular")
    S_inv = np.array([[S[1, 1], -S[0, 1]], [-S[1, 0], S[0, 0]]]) / det
    K = P0[:, :2] @ S_inv
    innov = z - state.X[:2]
    X = state.X + K @ innov
    X[2] = wrap_angle(X[2])
    A = np.eye(4)
    A[:, :2] -= K
    P = _sym(A @ P0 @ A.T + K @ state.R @ K.T)
    return replace(state, X=X, P=P), innov


def ekf_step(state: EkfState, z) -> tuple[EkfState, np.ndarray]:
    """Predict then correct, i.e. ``X+ = f(X) + K (z - h(f(X)))``."""
    return ekf_update(ekf_predict(state), z)


def ekf_init(z0, z1, radius: float, rate: float, dt: float, Q=None, R=None, meas_std: float = 0.005,
             P0=None) -> EkfState:
    """State at the second measurement: heading from the bearing z0 -> z1, speed ``radius * rate``."""
    z0, z1 = np.asarray(z0, float), np.asarray(z1, float)
    d = z1 - z0
    h = float(np.arctan2(d[1], d[0])) if np.linalg.norm(d) > 0 else 0.0
    X = np.array([z1[0], z1[1], h, radius * rate])
    return EkfState(X, DEFAULT_P0.copy() if P0 is None else P0,
                    DEFAULT_Q.copy() if Q is None else Q,
                    meas_std**2 * np.eye(2) if R is None else R, dt, rate)


def predict_target(state: EkfState, frame: PlaneFrame) -> np.ndarray:
    """One-step-ahead 3-D target position."""
    return lift(transition(state.X, state.dt, state.rate)[:2], frame)


TRACE_COLUMNS = ["t", "x", "y", "varsigma", "v", "meas_x", "meas_y", "pred_err"]


class TargetTracker:
    """Frame + filter for one target point, fed with 3-D position measurements."""

    def __init__(self, frame: PlaneFrame, rate: float, dt: float, meas_std: float = 0.005, Q=None):
        self.frame = frame
        self.rate = rate
        self.dt = dt
        self.meas_std = meas_std
        self.Q = Q
        self.state: EkfState | None = None
        self._first: np.ndarray | None = None
        self._pending: np.ndarray | None = None
        self.trace: list[list[float]] = []
        self.t = 0

    def set_model(self, frame: PlaneFrame | None = None, rate: float | None = None) -> None:
        """Swap in a refreshed spin estimate; the filter state is re-expressed in the new frame."""
        if frame is not None:
            if self.state is not None:
                p = lift(self.state.X[:2], self.frame)
                h = self.state.X[2]
                d = np.cos(h) * self.frame.u + np.sin(h) * self.frame.v
                self.state.X[:2] = project(p, frame)
                self.state.X[2] = np.arctan2(d @ frame.v, d @ frame.u)
            if self._first is not None:
                self._first = project(lift(self._first, self.frame), frame)
            self.frame = frame
        if rate is not None:
            self.rate = rate
            if self.state is not None:
                self.state.rate = rate

    def update(self, measurement) -> np.ndarray:
        """Consume one measurement and return the next-step 3-D prediction."""
        z = project(measurement, self.frame)
        err = np.nan
        if self._pending is not None:
            err = float(np.linalg.norm(lift(z, self.frame) - self._pending))
        if self.state is None:
            if self._first is None:
                self._first = z
                pred = lift(z, self.frame)
                self._record(z, err, np.array([z[0], z[1], 0.0, 0.0]))
                self._pending = pred
                return pred
            self.state = ekf_init(self._first, z, self.frame.radius if np.isfinite(self.frame.radius) else 0.0,
                                  self.rate, self.dt, Q=self.Q, meas_std=self.meas_std)
        else:
            self.state, _ = ekf_step(self.state, z)
        self._record(z, err, self.state.X)
        self._pending = predict_target(self.state, self.frame)
        return self._pending

    def _record(self, z, err, X):
        self.trace.append([self.t * self.dt, X[0], X[1], X[2], X[3], z[0], z[1], err])
        self.t += 1

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            w.writerows(self.trace)
