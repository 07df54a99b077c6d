"""Compiled inner loops of the manipulator simulator.

Chains are passed as packed arrays indexed ``[arm, link, ...]`` (see
``KinematicChain.packed``). Everything here works in the inertial frame.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_CACHE = True


@njit(cache=_CACHE)
def skew3(v):
    m = np.zeros((3, 3))
    m[0, 1] = -v[2]
    m[0, 2] = v[1]
    m[1, 0] = v[2]
    m[1, 2] = -v[0]
    m[2, 0] = -v[1]
    m[2, 1] = v[0]
    return m


@njit(cache=_CACHE)
def cross3(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=_CACHE)
def axis_rotation(axis, angle):
    k = skew3(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


@njit(cache=_CACHE)
def quat_matrix(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    r = np.empty((3, 3))
    r[0, 0] = 1 - 2 * (y * y + z * z)
    r[0, 1] = 2 * (x * y - w * z)
    r[0, 2] = 2 * (x * z + w * y)
    r[1, 0] = 2 * (x * y + w * z)
    r[1, 1] = 1 - 2 * (x * x + z * z)
    r[1, 2] = 2 * (y * z - w * x)
    r[2, 0] = 2 * (x * z - w * y)
    r[2, 1] = 2 * (y * z + w * x)
    r[2, 2] = 1 - 2 * (x * x + y * y)
    return r


@njit(cache=_CACHE)
def arm_frames(mount_rot, mount_pos, axes, off_rot, off_pos, com_local, tool_rot, tool_pos, base_pos, base_rot, theta):
    n = axes.shape[0]
    jp = np.empty((n, 3))
    ja = np.empty((n, 3))
    lr = np.empty((n, 3, 3))
    com = np.empty((n, 3))
    rot = base_rot @ mount_rot
    pos = base_pos + base_rot @ mount_pos
    for i in range(n):
        pos = pos + rot @ off_pos[i]
        rot = rot @ off_rot[i]
        jp[i] = pos
        ja[i] = rot @ axes[i]
        rot = rot @ axis_rotation(axes[i], theta[i])
        lr[i] = rot
        com[i] = pos + rot @ com_local[i]
    ee_pos = pos + rot @ tool_pos
    ee_rot = rot @ tool_rot
    return jp, ja, lr, com, ee_pos, ee_rot


@njit(cache=_CACHE)
def coupling(base_mass, base_inertia, mount_rot, mount_pos, axes, off_rot, off_pos, com_local, mass, inertia,
             tool_rot, tool_pos, base_pos, base_rot, thetas):
    """Returns ``H_b (6,6)``, ``H_r (2,6,n)``, ``H_rr (2,n,n)`` and EE positions ``(2,3)``."""
    n = axes.shape[1]
    hb = np.zeros((6, 6))
    hr = np.zeros((2, 6, n))
    hrr = np.zeros((2, n, n))
    ee = np.zeros((2, 3))
    for i in range(3):
        hb[i, i] = base_mass
    hb[3:, 3:] = base_rot @ base_inertia @ base_rot.T
    for a in range(2):
        jp, ja, lr, com, ee_pos, _ = arm_frames(mount_rot[a], mount_pos[a], axes[a], off_rot[a], off_pos[a],
                                                com_local[a], tool_rot[a], tool_pos[a], base_pos, base_rot, thetas[a])
        ee[a] = ee_pos
        for k in range(n):
            m = mass[a, k]
            iw = lr[k] @ inertia[a, k] @ lr[k].T
            rho = com[k] - base_pos
            s = skew3(rho)
            # base block: v = v_b - [rho]x w_b, w = w_b
            hb[:3, :3] += m * np.eye(3)
            hb[:3, 3:] += -m * s
            hb[3:, :3] += m * s
            hb[3:, 3:] += iw + m * (s.T @ s)
            jv = np.zeros((3, n))
            jw = np.zeros((3, n))
            for j in range(k + 1):
                jv[:, j] = cross3(ja[j], com[k] - jp[j])
                jw[:, j] = ja[j]
            hr[a, :3] += m * jv
            hr[a, 3:] += iw @ jw + m * (s @ jv)
            hrr[a] += m * (jv.T @ jv) + jw.T @ iw @ jw
    return hb, hr, hrr, ee


@njit(cache=_CACHE)
def wrap(x):
    # (-pi, pi], +/-pi -> +pi
    two_pi = 2.0 * np.pi
    out = x.copy()
    for i in range(x.shape[0]):
        if not (-np.pi < x[i] <= np.pi):
            out[i] = -(np.mod(-x[i] + np.pi, two_pi) - np.pi)
    return out


@njit(cache=_CACHE)
def quat_mul(a, b):
    out = np.empty(4)
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]
    return out


@njit(cache=_CACHE)
def quat_exp(rv):
    angle = np.sqrt(rv[0] ** 2 + rv[1] ** 2 + rv[2] ** 2)
    q = np.empty(4)
    if angle < 1e-12:
        q[0] = 1.0
        q[1:] = 0.5 * rv
        return q / np.sqrt(np.sum(q * q))
    q[0] = np.cos(0.5 * angle)
    q[1:] = np.sin(0.5 * angle) * rv / angle
    return q


@njit(cache=_CACHE)
def integrate(base_mass, base_inertia, mount_rot, mount_pos, axes, off_rot, off_pos, com_local, mass, inertia,
              tool_rot, tool_pos, pos, quat, th, thd, cmd, h, substeps, alpha, torque, rate_lim, angle_lim, noise):
    """Run the substep loop; returns ``pos, quat, th, thd``."""
    n = axes.shape[1]
    pos = pos.copy()
    quat = quat.copy()
    th = th.copy()
    thd = thd.copy()
    thetas = np.empty((2, n))
    for it in range(substeps):
        thetas[0] = th[:n]
        thetas[1] = th[n:]
        rot = quat_matrix(quat)
        hb, hr, hrr, _ = coupling(base_mass, base_inertia, mount_rot, mount_pos, axes, off_rot, off_pos, com_local,
                                  mass, inertia, tool_rot, tool_pos, pos, rot, thetas)
        # per-joint effective inertia with the free base eliminated
        inv_hb = np.linalg.inv(hb)
        cap = np.empty(2 * n)
        for a in range(2):
            red = hrr[a] - hr[a].T @ inv_hb @ hr[a]
            for j in range(n):
                cap[a * n + j] = torque / max(red[j, j], 1e-9)
        target = thd + alpha * (cmd - thd)
        acc = (target - thd) / h
        for j in range(2 * n):
            acc[j] = min(max(acc[j], -cap[j]), cap[j])
        thd = thd + h * acc + noise[it]
        for j in range(2 * n):
            thd[j] = min(max(thd[j], -rate_lim), rate_lim)
        twist = -(inv_hb @ (hr[0] @ thd[:n] + hr[1] @ thd[n:]))
        pos = pos + h * twist[:3]
        quat = quat_mul(quat_exp(h * twist[3:]), quat)
        quat = quat / np.sqrt(np.sum(quat * quat))
        th = th + h * thd
        if angle_lim < np.pi:
            for j in range(2 * n):
                if abs(th[j]) >= angle_lim:
                    th[j] = min(max(th[j], -angle_lim), angle_lim)
                    if thd[j] * th[j] > 0:
                        thd[j] = 0.0
        th = wrap(th)
    return pos, quat, th, thd
