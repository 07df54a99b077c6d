"""Relative rotation of a spinning object from two point-cloud frames.

Two estimators are provided: the closed-form least-squares fit for clouds
with known correspondences (:func:`kabsch_estimate`) and a learned
permutation-invariant encoder (:class:`EncoderNet`) trained on the geodesic
rotation loss. Either estimate is turned into a spin axis, angle and angular
rate by :func:`axis_angle_from_rotation` and :func:`angular_rate`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .nn import AdamState, adam_step, load_tensors, save_tensors
from .so3 import project_to_rotation, rodrigues

log = logging.getLogger(__name__)


class DegenerateGeometryError(ValueError):
    pass


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3)
    normals: np.ndarray  # (N, 3), unit length

    def __post_init__(self):
        self.points = np.asarray(self.points, float)
        self.normals = np.asarray(self.normals, float)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or self.normals.shape != self.points.shape:
            raise ValueError("points and normals must both have shape (N, 3)")
        if np.any(np.abs(np.linalg.norm(self.normals, axis=1) - 1.0) > 1e-6):
            raise ValueError("normals must be unit length")

    def __len__(self) -> int:
        return len(self.points)

    def rotated(self, R: np.ndarray) -> "PointCloud":
        return PointCloud(self.points @ R.T, self.normals @ R.T)

    def features(self) -> np.ndarray:
        return np.hstack([self.points, self.normals])


def save_cloud(cloud: PointCloud, path, comment: str | None = None) -> None:
    """Text format: one ``x y z nx ny nz`` line per point, ``#`` comments."""
    header = comment or "x y z nx ny nz"
    np.savetxt(path, cloud.features(), fmt="%.17g", header=header, comments="# ")


def load_cloud(path) -> PointCloud:
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 6:
        raise ValueError(f"expected 6 columns per point, got {data.shape[1]}")
    n = data[:, 3:]
    return PointCloud(data[:, :3], n / np.linalg.norm(n, axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# sampling


def _box(dims, n, rng):
    a, b, c = (0.5 * float(d) for d in dims)
    # faces: +-x (area 4bc), +-y (4ac), +-z (4ab)
    areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    nrm = np.zeros((n, 3))
    half = np.array([a, b, c])
    for f in range(6):
        m = face == f
        ax, sign = f // 2, 1.0 if f % 2 == 0 else -1.0
        others = [i for i in range(3) if i != ax]
        pts[m, ax] = sign * half[ax]
        pts[m, others[0]] = u[m, 0] * half[others[0]]
        pts[m, others[1]] = u[m, 1] * half[others[1]]
        nrm[m, ax] = sign
    return pts, nrm, float(np.linalg.norm(half)), face


def _cylinder(dims, n, rng):
    r, h = float(dims[0]), float(dims[1])
    areas = np.array([2 * np.pi * r * h, np.pi * r * r, np.pi * r * r])
    part = rng.choice(3, size=n, p=areas / areas.sum())
    phi = rng.uniform(0, 2 * np.pi, n)
    pts = np.empty((n, 3))
    nrm = np.zeros((n, 3))
    side = part == 0
    pts[side] = np.c_[r * np.cos(phi[side]), r * np.sin(phi[side]), rng.uniform(-h / 2, h / 2, side.sum())]
    nrm[side] = np.c_[np.cos(phi[side]), np.sin(phi[side]), np.zeros(side.sum())]
    for k, z in ((1, h / 2), (2, -h / 2)):
        m = part == k
        rad = r * np.sqrt(rng.random(m.sum()))
        pts[m] = np.c_[rad * np.cos(phi[m]), rad * np.sin(phi[m]), np.full(m.sum(), z)]
        nrm[m, 2] = np.sign(z)
    return pts, nrm, float(np.hypot(r, h / 2)), part


def _sphere(dims, n, rng):
    r = float(dims[0])
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return r * v, v, r, np.zeros(n, int)


_SHAPES = {"box": (_box, 3), "cylinder": (_cylinder, 2), "sphere": (_sphere, 1)}


def sample_surface(shape: str = "box", n: int = 128, noise: float = 0.0, seed: int | None = None,
                   dims=None, return_faces: bool = False):
    """Area-uniform samples on a primitive's surface with outward normals.

    The primitive is centred at the origin and scaled so its bounding sphere
    has radius 1; Gaussian noise of std ``noise`` (in those normalized units)
    is then added to the positions.
    """
    if shape not in _SHAPES:
        raise ValueError(f"unknown shape {shape!r}")
    fn, ndims = _SHAPES[shape]
    if dims is None:
        dims = {"box": (1.0, 1.0, 1.0), "cylinder": (1.0, 2.0), "sphere": (1.0,)}[shape]
    dims = tuple(float(d) for d in dims)
    if len(dims) != ndims or min(dims) <= 0:
        raise ValueError(f"{shape} needs {ndims} positive dimension(s), got {dims}")
    if n < 4:
        raise ValueError("need at least 4 points")
    rng = np.random.default_rng(seed)
    pts, nrm, scale, faces = fn(dims, n, rng)
    pts = pts / scale
    if noise > 0:
        pts = pts + rng.normal(0.0, noise, pts.shape)
    cloud = PointCloud(pts, nrm)
    return (cloud, faces) if return_faces else cloud


def random_rotation(rng: np.random.Generator, max_angle: float | None = None) -> np.ndarray:
    """Haar-uniform rotation, or (with ``max_angle``) uniform axis and angle in [0, max_angle]."""
    if max_angle is None:
        q = rng.standard_normal(4)
        q /= np.linalg.norm(q)
        w, x, y, z = q
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])
    axis = rng.standard_normal(3)
    return rodrigues(axis, rng.uniform(0.0, max_angle))


def make_rotation_pair(cloud: PointCloud, seed: int | None = None, noise: float = 0.0,
                       max_angle: float | None = None, orient: bool = False):
    """``(cloud_a, cloud_b, R_p)`` with ``cloud_b = R_p @ cloud_a`` pointwise.

    ``orient`` first applies a Haar-random rotation to produce ``cloud_a``;
    ``noise`` adds independent position jitter to each cloud afterwards.
    """
    rng = np.random.default_rng(seed)
    a = cloud.rotated(random_rotation(rng)) if orient else PointCloud(cloud.points.copy(), cloud.normals.copy())
    R = random_rotation(rng, max_angle)
    b = a.rotated(R)
    if noise > 0:
        a = PointCloud(a.points + rng.normal(0, noise, a.points.shape), a.normals)
        b = PointCloud(b.points + rng.normal(0, noise, b.points.shape), b.normals)
    return a, b, R


# ---------------------------------------------------------------------------
# classical estimate and rotation metrics


def kabsch_estimate(cloud_a, cloud_b) -> np.ndarray:
    """Least-squares proper rotation ``R`` minimising ``sum |R a_i - b_i|^2`` after centring."""
    a = cloud_a.points if isinstance(cloud_a, PointCloud) else np.asarray(cloud_a, float)
    b = cloud_b.points if isinstance(cloud_b, PointCloud) else np.asarray(cloud_b, float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise ValueError("clouds must have the same (N, 3) shape")
    if len(a) < 3:
        raise DegenerateGeometryError("need at least 3 points")
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    sa = np.linalg.svd(ac, compute_uv=False)
    if sa[1] <= 1e-9 * max(sa[0], 1e-300):
        raise DegenerateGeometryError("points are collinear; rotation is not determined")
    u, _, vt = np.linalg.svd(ac.T @ bc)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    return vt.T @ np.diag([1.0, 1.0, d]) @ u.T


def icp_refine(cloud_a: PointCloud, cloud_b: PointCloud, R0: np.ndarray | None = None, iters: int = 30,
               tol: float = 1e-10) -> np.ndarray:
    """Correspondence-free refinement: nearest-neighbour matching + Kabsch."""
    tree = cKDTree(cloud_b.points)
    R = np.eye(3) if R0 is None else R0
    ca, cb = cloud_a.points.mean(axis=0), cloud_b.points.mean(axis=0)
    prev = np.inf
    for _ in range(iters):
        moved = (cloud_a.points - ca) @ R.T + cb
        dist, idx = tree.query(moved)
        R = kabsch_estimate(cloud_a.points, cloud_b.points[idx])
        err = float(np.mean(dist**2))
        if abs(prev - err) < tol:
            break
        prev = err
    return R


def geodesic_loss(R_p: np.ndarray, R_e: np.ndarray) -> float:
    """Angle (rad) of the relative rotation, via ``2 asin(|R_p - R_e|_F / (2 sqrt 2))``."""
    x = np.linalg.norm(np.asarray(R_p) - np.asarray(R_e)) / (2.0 * np.sqrt(2.0))
    return float(2.0 * np.arcsin(np.clip(x, -1.0, 1.0)))


def check_rotation(R: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    R = np.asarray(R, float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ValueError("rotation must be a finite 3x3 matrix")
    if np.abs(R.T @ R - np.eye(3)).max() > tol or np.linalg.det(R) < 0:
        raise ValueError("matrix is not a proper rotation")
    return R


@dataclass
class RotationEstimate:
    R: np.ndarray
    axis: np.ndarray
    angle: float
    rate: float | None = None
    degenerate: bool = False


def axis_angle_from_rotation(R: np.ndarray, interval: float | None = None, eps: float = 1e-8) -> RotationEstimate:
    """Spin axis and angle in [0, pi] of ``R``; flags the identity as degenerate."""
    R = check_rotation(R)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = 0.5 * np.linalg.norm(w)  # sin(angle)
    c = 0.5 * (np.trace(R) - 1.0)  # cos(angle)
    angle = float(np.arctan2(s, c))
    rate = None if interval is None else angle / interval
    if angle < eps:
        return RotationEstimate(R, np.zeros(3), angle, rate, degenerate=True)
    if np.pi - angle > 1e-3:
        axis = w / (2.0 * s)
    else:
        # near a half turn the skew part vanishes; use the symmetric part
        B = (R + R.T - 2.0 * c * np.eye(3)) / (2.0 * (1.0 - c))
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(B[k, k])
        if np.dot(axis, w) < 0:
            axis = -axis
        axis /= np.linalg.norm(axis)
    return RotationEstimate(R, axis, angle, rate, degenerate=False)


def angular_rate(estimates: list[RotationEstimate], interval: float) -> tuple[float, np.ndarray]:
    """Consensus spin rate (rad/s) and unit axis from per-frame estimates.

    Axes are sign-aligned to the first usable one (an axis flip negates the
    matching angle); the rate is the median aligned angle over ``interval``.
    """
    if interval <= 0:
        raise ValueError("frame interval must be positive")
    usable = [e for e in estimates if not e.degenerate]
    if len(estimates) < 1 or not usable:
        raise ValueError("no non-degenerate rotation estimates")
    ref = usable[0].axis
    axes, angles = [], []
    for e in usable:
        if np.dot(e.axis, ref) < 0:
            axes.append(-e.axis)
            angles.append(-e.angle)
        else:
            axes.append(e.axis)
            angles.append(e.angle)
    axis = np.mean(axes, axis=0)
    axis /= np.linalg.norm(axis)
    rate = float(np.median(angles)) / interval
    if rate < 0:
        axis, rate = -axis, -rate
    return rate, axis


# ---------------------------------------------------------------------------
# learned encoder


def gram_schmidt(x: np.ndarray) -> np.ndarray:
    """Map ``(B, 6)`` to rotations ``(B, 3, 3)`` whose first two columns span ``x``."""
    return _gs_forward(x)[0]


def _gs_forward(x):
    a1, a2 = x[:, :3], x[:, 3:]
    n1 = np.maximum(np.linalg.norm(a1, axis=1, keepdims=True), 1e-12)
    b1 = a1 / n1
    d = np.sum(b1 * a2, axis=1, keepdims=True)
    u2 = a2 - d * b1
    n2 = np.maximum(np.linalg.norm(u2, axis=1, keepdims=True), 1e-12)
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    R = np.stack([b1, b2, b3], axis=2)
    return R, (a2, n1, b1, d, n2, b2)


def _gs_backward(gR, cache):
    a2, n1, b1, d, n2, b2 = cache
    gb1, gb2, gb3 = gR[:, :, 0].copy(), gR[:, :, 1].copy(), gR[:, :, 2]
    gb1 += np.cross(b2, gb3)
    gb2 += np.cross(gb3, b1)
    gu2 = (gb2 - b2 * np.sum(b2 * gb2, axis=1, keepdims=True)) / n2
    ga2 = gu2.copy()
    gd = -np.sum(gu2 * b1, axis=1, keepdims=True)
    gb1 += -d * gu2
    gb1 += gd * a2
    ga2 += gd * b1
    ga1 = (gb1 - b1 * np.sum(b1 * gb1, axis=1, keepdims=True)) / n1
    return np.hstack([ga1, ga2])


def geodesic_loss_batch(R_p: np.ndarray, R_e: np.ndarray, need_grad: bool = False):
    diff = R_p - R_e
    f = np.sqrt(np.sum(diff**2, axis=(1, 2)))
    x = np.clip(f / (2.0 * np.sqrt(2.0)), 0.0, 1.0)
    loss = 2.0 * np.arcsin(x)
    if not need_grad:
        return loss
    # d loss / d R_e, averaged over the batch; the clip keeps the slope finite at a half turn
    xg = np.minimum(x, 1.0 - 1e-7)
    coef = 2.0 / np.sqrt(1.0 - xg**2) / (2.0 * np.sqrt(2.0)) / np.maximum(f, 1e-9)
    g = -(coef[:, None, None] * diff) / len(f)
    return loss, g


class _Linear:
    def __init__(self, m, n, rng, dtype=np.float32):
        self.W = (rng.standard_normal((m, n)) * np.sqrt(2.0 / m)).astype(dtype)
        self.b = np.zeros(n, dtype)

    def params(self):
        return [self.W, self.b]

    def forward(self, x):
        self.x = x
        return x @ self.W + self.b

    def backward(self, g):
        return [self.x.T @ g, g.sum(axis=0)], g @ self.W.T


class _BatchNorm:
    def __init__(self, n, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.gamma = np.ones(n, dtype)
        self.beta = np.zeros(n, dtype)
        self.running_mean = np.zeros(n, dtype)
        self.running_var = np.ones(n, dtype)
        self.momentum, self.eps = momentum, eps

    def params(self):
        return [self.gamma, self.beta]

    def forward(self, x, train):
        if train:
            mu = x.mean(axis=0, dtype=np.float64).astype(x.dtype)
            var = x.var(axis=0, dtype=np.float64).astype(x.dtype)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mu, var = self.running_mean, self.running_var
        self.inv = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        self.xhat = (x - mu) * self.inv
        return self.gamma * self.xhat + self.beta

    def backward(self, g):
        n = g.shape[0]
        dgamma = np.sum(g * self.xhat, axis=0)
        dbeta = g.sum(axis=0)
        dxhat = g * self.gamma
        dx = (self.inv / n) * (n * dxhat - dxhat.sum(axis=0) - self.xhat * np.sum(dxhat * self.xhat, axis=0))
        return [dgamma, dbeta], dx


class _Block:
    """Linear -> BatchNorm -> ReLU."""

    def __init__(self, m, n, rng, dtype=np.float32):
        self.lin = _Linear(m, n, rng, dtype)
        self.bn = _BatchNorm(n, dtype=dtype)

    def params(self):
        return self.lin.params() + self.bn.params()

    def forward(self, x, train):
        self.out = np.maximum(self.bn.forward(self.lin.forward(x), train), 0)
        return self.out

    def backward(self, g):
        g = g * (self.out > 0)
        gbn, g = self.bn.backward(g)
        glin, g = self.lin.backward(g)
        return glin + gbn, g


class EncoderNet:
    """Siamese point encoder with max pooling and a 6-D rotation head.

    Each cloud's per-point features ``(x, y, z, nx, ny, nz)`` go through shared
    Linear-BatchNorm-ReLU layers and are max-pooled into a latent code; the two
    codes are concatenated and regressed to six numbers that Gram-Schmidt turns
    into a rotation.
    """

    def __init__(self, point_layers=(64, 128, 256), head_layers=(256, 128), seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        sizes = [6, *point_layers]
        self.point = [_Block(m, n, rng, dtype) for m, n in zip(sizes[:-1], sizes[1:])]
        hs = [2 * point_layers[-1], *head_layers]
        self.head = [_Block(m, n, rng, dtype) for m, n in zip(hs[:-1], hs[1:])]
        self.out = _Linear(hs[-1], 6, rng, dtype)
        # start near the identity rotation
        self.out.W *= 0.01
        self.out.b[:] = [1, 0, 0, 0, 1, 0]
        self.latent_dim = point_layers[-1]
        self.train_mode = False

    def params(self):
        ps = []
        for blk in self.point + self.head:
            ps += blk.params()
        return ps + self.out.params()

    def buffers(self):
        return [t for blk in self.point + self.head for t in (blk.bn.running_mean, blk.bn.running_var)]

    def encode(self, feats: np.ndarray, train: bool = False):
        """``(B, N, 6)`` point features -> ``(B, F)`` latent codes."""
        b, n, _ = feats.shape
        h = feats.reshape(b * n, 6).astype(self.dtype)
        for blk in self.point:
            h = blk.forward(h, train)
        h = h.reshape(b, n, -1)
        self._argmax = np.argmax(h, axis=1)
        self._pool_shape = h.shape
        return h.max(axis=1)

    def forward(self, feats_a: np.ndarray, feats_b: np.ndarray, train: bool = False):
        bsz = feats_a.shape[0]
        both = np.concatenate([feats_a, feats_b], axis=0)
        z = self.encode(both, train)
        code = np.hstack([z[:bsz], z[bsz:]])
        h = code
        for blk in self.head:
            h = blk.forward(h, train)
        six = self.out.forward(h)
        R, self._gs_cache = _gs_forward(six.astype(np.float64))
        return R, z[:bsz], z[bsz:]

    def backward(self, gR):
        grads = {}
        g6 = _gs_backward(gR, self._gs_cache).astype(self.dtype)
        gout, g = self.out.backward(g6)
        head_grads = []
        for blk in reversed(self.head):
            gp, g = blk.backward(g)
            head_grads.append(gp)
        bsz = g.shape[0]
        f = self.latent_dim
        gz = np.vstack([g[:, :f], g[:, f:]])
        b2, n, _ = self._pool_shape
        gpool = np.zeros(self._pool_shape, self.dtype)
        np.put_along_axis(gpool, self._argmax[:, None, :], gz[:, None, :], axis=1)
        g = gpool.reshape(b2 * n, f)
        point_grads = []
        for blk in reversed(self.point):
            gp, g = blk.backward(g)
            point_grads.append(gp)
        out = []
        for gp in reversed(point_grads):
            out += gp
        for gp in reversed(head_grads):
            out += gp
        return out + gout

    def estimate(self, cloud_a: PointCloud, cloud_b: PointCloud):
        """Evaluation-mode rotation estimate and the latent code of ``cloud_a``."""
        R, za, _ = self.forward(cloud_a.features()[None], cloud_b.features()[None], train=False)
        return project_to_rotation(R[0]), za[0]

    def save(self, path) -> None:
        tensors = {f"p{i}": p for i, p in enumerate(self.params())}
        tensors.update({f"s{i}": s for i, s in enumerate(self.buffers())})
        point = [blk.lin.W.shape[1] for blk in self.point]
        head = [blk.lin.W.shape[1] for blk in self.head]
        save_tensors(tensors, path, meta={"kind": "encoder", "point_layers": point, "head_layers": head})

    @classmethod
    def load(cls, path) -> "EncoderNet":
        tensors, meta = load_tensors(path)
        if meta.get("kind") != "encoder":
            raise ValueError("checkpoint does not hold an encoder")
        net = cls(meta["point_layers"], meta["head_layers"], seed=0)
        for i, p in enumerate(net.params()):
            p[...] = tensors[f"p{i}"]
        blocks = net.point + net.head
        for i, blk in enumerate(blocks):
            blk.bn.running_mean = tensors[f"s{2 * i}"].copy()
            blk.bn.running_var = tensors[f"s{2 * i + 1}"].copy()
        return net


def encoder_estimate(net: EncoderNet, cloud_a: PointCloud, cloud_b: PointCloud):
    return net.estimate(cloud_a, cloud_b)


@dataclass
class EncoderTraining:
    net: EncoderNet
    losses: list[float] = field(default_factory=list)


def rotation_batch(base_clouds: list[PointCloud], batch: int, rng: np.random.Generator, noise: float,
                   max_angle: float | None):
    fa, fb, Rs = [], [], []
    for _ in range(batch):
        cloud = base_clouds[rng.integers(len(base_clouds))]
        a, b, R = make_rotation_pair(cloud, seed=int(rng.integers(2**31)), noise=noise, max_angle=max_angle,
                                     orient=True)
        fa.append(a.features())
        fb.append(b.features())
        Rs.append(R)
    return np.array(fa), np.array(fb), np.array(Rs)


def train_encoder(shape: str = "box", dims=None, n_points: int = 128, noise: float = 0.01,
                  max_angle: float | None = 1.3, iterations: int = 4000, batch_size: int = 32, lr: float = 3e-3,
                  seed: int = 0, point_layers=(64, 128, 256), head_layers=(256, 128), n_base: int = 64,
                  progress: bool = False) -> EncoderTraining:
    """Fit an :class:`EncoderNet` on freshly generated rotation pairs."""
    rng = np.random.default_rng(seed)
    net = EncoderNet(point_layers, head_layers, seed=seed)
    base = [sample_surface(shape, n_points, 0.0, seed=int(rng.integers(2**31)), dims=dims) for _ in range(n_base)]
    opt = AdamState(lr=lr)
    losses = []
    for it in range(iterations):
        fa, fb, Rp = rotation_batch(base, batch_size, rng, noise, max_angle)
        R, _, _ = net.forward(fa, fb, train=True)
        loss, gR = geodesic_loss_batch(Rp, R, need_grad=True)
        mean = float(loss.mean())
        if not np.isfinite(mean):
            raise FloatingPointError(f"encoder training diverged at iteration {it}")
        losses.append(mean)
        grads = net.backward(gR)
        # cosine decay of the step size
        opt.lr = lr * 0.5 * (1.0 + np.cos(np.pi * it / iterations))
        adam_step(net.params(), grads, opt)
        if progress and it % 100 == 0:
            log.info("encoder iteration %d loss %.4f", it, np.mean(losses[-100:]))
    return EncoderTraining(net, losses)


def evaluate_encoder(net: EncoderNet, shape: str = "box", dims=None, n_points: int = 128, noise: float = 0.01,
                     max_angle: float | None = 1.3, n_pairs: int = 200, seed: int = 12345) -> np.ndarray:
    """Geodesic errors (rad) on held-out pairs built from unseen surface samples."""
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n_pairs):
        cloud = sample_surface(shape, n_points, 0.0, seed=int(rng.integers(2**31)), dims=dims)
        a, b, R = make_rotation_pair(cloud, seed=int(rng.integers(2**31)), noise=noise, max_angle=max_angle,
                                     orient=True)
        Re, _ = net.estimate(a, b)
        errs.append(geodesic_loss(R, Re))
    return np.array(errs)
