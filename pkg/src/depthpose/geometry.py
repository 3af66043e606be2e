"""Rigid-body transforms, the pinhole camera and the pixel warp.

Conventions used throughout the package:

* ``T_a_to_b`` (an :class:`Se3Transform`) maps coordinates expressed in camera
  frame *a* into camera frame *b*: ``p_b = R @ p_a + t``.  The camera pose of
  frame *k* is stored as the world-to-camera transform ``T_w_to_k``.
* Tangent vectors are ordered ``(rot, trans)``; ``exp_map`` is the SE(3)
  exponential, so ``exp_map(-xi) == inverse(exp_map(xi))``.
* Derivatives with respect to a pose are taken for a *left* perturbation,
  ``exp_map(delta) * T`` at ``delta = 0``.  Chain with
  :func:`se3_left_jacobian` to differentiate through ``T = exp_map(xi)``.
* Pixel coordinates are continuous with the origin at the center of the
  top-left pixel; ``u`` runs along columns, ``v`` along rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import BehindCameraError, DegenerateRotationError, NoGradientError

_ORTHO_TOL = 1e-9
# below this angle the trigonometric coefficients use their Taylor series;
# the Q-matrix coefficients lose ~1/theta**4 relative precision otherwise
_SERIES_ANGLE = 0.05
_PI_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Se3Transform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if np.max(np.abs(R.T @ R - np.eye(3))) >= _ORTHO_TOL or abs(np.linalg.det(R) - 1.0) >= _ORTHO_TOL:
            raise ValueError("rotation is not a proper orthonormal matrix")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Se3Transform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> Se3Transform:
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def inverse(self) -> Se3Transform:
        return inverse(self)

    def apply(self, points) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def __matmul__(self, other: Se3Transform) -> Se3Transform:
        return compose(self, other)

    def __repr__(self):
        return f"Se3Transform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True)
class Se3Tangent:
    rot: np.ndarray = field(default_factory=lambda: np.zeros(3))
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rot", np.array(self.rot, dtype=float).reshape(3))
        object.__setattr__(self, "trans", np.array(self.trans, dtype=float).reshape(3))

    @classmethod
    def from_vector(cls, xi) -> Se3Tangent:
        xi = np.asarray(xi, dtype=float).reshape(6)
        return cls(xi[:3], xi[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rot, self.trans])

    def __neg__(self):
        return Se3Tangent(-self.rot, -self.trans)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, level: int) -> CameraIntrinsics:
        """Intrinsics of pyramid level ``level`` (2x2 box downsampling per level).

        Focal lengths scale by ``2**-level``.  The principal point follows the
        pixel-center convention: a coarse pixel ``i`` covers fine pixels
        ``2i`` and ``2i + 1``, so ``c' = (c + 0.5) / 2 - 0.5``.
        """
        if level == 0:
            return self
        f = 2.0**level
        w, h = self.width // 2**level, self.height // 2**level
        cx = (self.cx + 0.5) / f - 0.5
        cy = (self.cy + 0.5) / f - 0.5
        return CameraIntrinsics(self.fx / f, self.fy / f, min(max(cx, 0.0), w - 1e-9), min(max(cy, 0.0), h - 1e-9), w, h)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}


def skew(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def vee(W) -> np.ndarray:
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


def _trig_coefficients(theta):
    """sin(t)/t, (1-cos t)/t^2, (t-sin t)/t^3."""
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0)))
        b = 0.5 - t2 / 24.0 + t2**2 / 720.0 - t2**3 / 40320.0 + t2**4 / 3628800.0
        c = 1.0 / 6.0 - t2 / 120.0 + t2**2 / 5040.0 - t2**3 / 362880.0 + t2**4 / 39916800.0
        return a, b, c
    s, co = np.sin(theta), np.cos(theta)
    return s / theta, (1.0 - co) / theta**2, (theta - s) / theta**3


def so3_exp(w) -> np.ndarray:
    """Rodrigues formula: axis-angle vector to rotation matrix."""
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    a, b, _ = _trig_coefficients(theta)
    W = skew(w)
    return np.eye(3) + a * W + b * (W @ W)


def so3_log(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    s = 0.5 * vee(R - R.T)
    sin_t = float(np.linalg.norm(s))
    cos_t = 0.5 * (np.trace(R) - 1.0)
    theta = float(np.arctan2(sin_t, cos_t))
    if np.pi - theta < _PI_TOL:
        raise DegenerateRotationError("rotation angle is pi; logarithm axis is ambiguous")
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        # theta / sin(theta)
        return s * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0 + 31.0 * t2**3 / 15120.0)
    if theta < np.pi - 1e-3:
        return s * (theta / sin_t)
    # near pi the skew part vanishes; recover the axis from the symmetric part
    S = 0.5 * (R + R.T) - cos_t * np.eye(3)
    S /= 1.0 - cos_t
    i = int(np.argmax(np.diag(S)))
    axis = S[:, i] / np.sqrt(S[i, i])
    if axis @ s < 0:
        axis = -axis
    return theta * axis


def so3_left_jacobian(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    _, b, c = _trig_coefficients(theta)
    W = skew(w)
    return np.eye(3) + b * W + c * (W @ W)


def _q_coefficients(theta):
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        c1 = 1.0 / 6.0 - t2 / 120.0 + t2**2 / 5040.0 - t2**3 / 362880.0 + t2**4 / 39916800.0
        c2 = 1.0 / 24.0 - t2 / 720.0 + t2**2 / 40320.0 - t2**3 / 3628800.0 + t2**4 / 479001600.0
        c3 = 1.0 / 120.0 - t2 / 2520.0 + t2**2 / 120960.0 - t2**3 / 9979200.0 + t2**4 / 1245404160.0
        return c1, c2, c3
    s, co = np.sin(theta), np.cos(theta)
    c1 = (theta - s) / theta**3
    c2 = (theta**2 + 2.0 * co - 2.0) / (2.0 * theta**4)
    c3 = (2.0 * theta - 3.0 * s + theta * co) / (2.0 * theta**5)
    return c1, c2, c3


def se3_left_jacobian(xi) -> np.ndarray:
    """6x6 left Jacobian of the SE(3) exponential in ``(rot, trans)`` order.

    ``exp_map(xi + d) ~= exp_map(J @ d) * exp_map(xi)`` to first order.
    """
    xi = np.asarray(xi, dtype=float).reshape(6)
    phi, rho = xi[:3], xi[3:]
    theta = float(np.linalg.norm(phi))
    P, Rh = skew(phi), skew(rho)
    c1, c2, c3 = _q_coefficients(theta)
    PR = P @ Rh
    RP = Rh @ P
    PRP = PR @ P
    PP = P @ P
    Q = (
        0.5 * Rh
        + c1 * (PR + RP + PRP)
        + c2 * (PP @ Rh + RP @ P - 3.0 * PRP)
        + c3 * (PRP @ P + PP @ Rh @ P)
    )
    Jr = so3_left_jacobian(phi)
    J = np.zeros((6, 6))
    J[:3, :3] = Jr
    J[3:, :3] = Q
    J[3:, 3:] = Jr
    return J


def _as_tangent_vector(t) -> np.ndarray:
    if isinstance(t, Se3Tangent):
        return t.as_vector()
    return np.asarray(t, dtype=float).reshape(6)


def exp_map(t) -> Se3Transform:
    """SE(3) exponential of a tangent (``Se3Tangent`` or 6-vector)."""
    xi = _as_tangent_vector(t)
    R = so3_exp(xi[:3])
    return Se3Transform(R, so3_left_jacobian(xi[:3]) @ xi[3:])


def log_map(T: Se3Transform) -> Se3Tangent:
    phi = so3_log(T.rotation)
    rho = np.linalg.solve(so3_left_jacobian(phi), T.translation)
    return Se3Tangent(phi, rho)


def compose(a: Se3Transform, b: Se3Transform) -> Se3Transform:
    """``a * b``: apply ``b`` first, then ``a``."""
    return Se3Transform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(T: Se3Transform) -> Se3Transform:
    Rt = T.rotation.T
    return Se3Transform(Rt, -(Rt @ T.translation))


def relative_transform(t_w_prev: Se3Transform, t_w_curr: Se3Transform) -> Se3Transform:
    """Motion from the previous camera frame into the current one."""
    return compose(t_w_curr, inverse(t_w_prev))


def project(K: CameraIntrinsics, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(p[..., 2] <= 0):
        raise BehindCameraError("cannot project a point with z <= 0")
    x = p[..., 0] / p[..., 2]
    y = p[..., 1] / p[..., 2]
    return np.stack([K.fx * x + K.cx, K.fy * y + K.cy], axis=-1)


def backproject(K: CameraIntrinsics, u, depth) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    depth = np.asarray(depth, dtype=float)
    if np.any(depth <= 0):
        raise BehindCameraError("depth must be positive")
    x = (u[..., 0] - K.cx) / K.fx
    y = (u[..., 1] - K.cy) / K.fy
    return np.stack([depth * x, depth * y, depth * np.ones_like(x)], axis=-1)


@dataclass
class WarpResult:
    """Vectorized warp of N pixels; Jacobians are present when requested."""

    uv: np.ndarray  # (N, 2)
    valid: np.ndarray  # (N,)
    points: np.ndarray  # (N, 3) in the target camera frame
    d_depth: np.ndarray | None = None  # (N, 2)
    d_pose: np.ndarray | None = None  # (N, 2, 6), left perturbation


def warp_points(K: CameraIntrinsics, T: Se3Transform, depth, uv, jacobians=False, K_out=None) -> WarpResult:
    """Reproject pixels ``uv`` (N, 2) with depths (N,) through ``T``.

    ``K_out`` defaults to ``K``.  A warp is valid when the transformed point
    has z > 0 and lands inside ``[0, width-1] x [0, height-1]``.
    """
    K_out = K if K_out is None else K_out
    depth = np.asarray(depth, dtype=float).reshape(-1)
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    rays = np.stack([(uv[:, 0] - K.cx) / K.fx, (uv[:, 1] - K.cy) / K.fy, np.ones(len(uv))], axis=-1)
    rot_rays = rays @ T.rotation.T
    p = depth[:, None] * rot_rays + T.translation
    z = p[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    u2 = K_out.fx * (p[:, 0] / zs) + K_out.cx
    v2 = K_out.fy * (p[:, 1] / zs) + K_out.cy
    if K_out is K and not T.translation.any() and np.array_equal(T.rotation, np.eye(3)):
        # K (K^-1 u) rounds; the identity map must be exact
        u2, v2 = uv[:, 0].copy(), uv[:, 1].copy()
    inside = (u2 >= 0) & (u2 <= K_out.width - 1) & (v2 >= 0) & (v2 <= K_out.height - 1)
    out = WarpResult(np.stack([u2, v2], axis=-1), front & inside, p)
    if jacobians:
        n = len(depth)
        inv_z = 1.0 / zs
        # d(u,v)/dp, (N, 2, 3)
        Jp = np.zeros((n, 2, 3))
        Jp[:, 0, 0] = K_out.fx * inv_z
        Jp[:, 0, 2] = -K_out.fx * p[:, 0] * inv_z**2
        Jp[:, 1, 1] = K_out.fy * inv_z
        Jp[:, 1, 2] = -K_out.fy * p[:, 1] * inv_z**2
        out.d_depth = np.einsum("nij,nj->ni", Jp, rot_rays)
        # dp/d(rot) = -[p]x, dp/d(trans) = I
        Jrot = np.empty((n, 2, 3))
        Jrot[:, :, 0] = Jp[:, :, 1] * (-p[:, 2:3]) + Jp[:, :, 2] * p[:, 1:2]
        Jrot[:, :, 1] = Jp[:, :, 0] * p[:, 2:3] + Jp[:, :, 2] * (-p[:, 0:1])
        Jrot[:, :, 2] = Jp[:, :, 0] * (-p[:, 1:2]) + Jp[:, :, 1] * p[:, 0:1]
        out.d_pose = np.concatenate([Jrot, Jp], axis=2)
    return out


def warp_pixel(K: CameraIntrinsics, T: Se3Transform, depth: float, u) -> tuple[np.ndarray, bool]:
    if depth <= 0:
        raise BehindCameraError("depth must be positive")
    r = warp_points(K, T, [depth], [u])
    return r.uv[0], bool(r.valid[0])


def warp_jacobian(K: CameraIntrinsics, T: Se3Transform, depth: float, u) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of :func:`warp_pixel` w.r.t. depth and a left pose perturbation."""
    r = warp_points(K, T, [depth], [u], jacobians=True)
    if not r.valid[0]:
        raise NoGradientError("warp is invalid at this configuration")
    return r.d_depth[0], r.d_pose[0]
