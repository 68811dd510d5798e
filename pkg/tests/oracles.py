"""Straightforward reimplementations of the trajectory metrics, used as test oracles."""
import numpy as np

from dfvo.evaluation import KITTI_LENGTHS
from dfvo.geometry import RigidTransform, so3_exp
from dfvo.io import Trajectory


def bf_ate(P, G):
    total = 0.0
    for p, g in zip(P, G):
        total += sum((p[k] - g[k]) ** 2 for k in range(3))
    return (total / len(P)) ** 0.5


def bf_angle(R):
    # chord formula |R - I|_F = 2 sqrt(2) sin(angle / 2); accurate near identity, unlike arccos of the trace
    chord = np.sqrt(np.sum((R - np.eye(3)) ** 2))
    return float(2.0 * np.arcsin(min(1.0, chord / (2.0 * np.sqrt(2.0)))))


def bf_rpe(pm, gm):
    ts, rs = [], []
    for i in range(1, len(gm)):
        rel_g = np.linalg.inv(gm[i - 1]) @ gm[i]
        rel_p = np.linalg.inv(pm[i - 1]) @ pm[i]
        E = np.linalg.inv(rel_g) @ rel_p
        ts.append(np.sqrt(E[0, 3] ** 2 + E[1, 3] ** 2 + E[2, 3] ** 2))
        rs.append(bf_angle(E[:3, :3]))
    return sum(ts) / len(ts), np.degrees(sum(rs) / len(rs))


def bf_kitti(pm, gm, stride=10, lengths=KITTI_LENGTHS):
    dist = [0.0]
    for i in range(1, len(gm)):
        d = gm[i][:3, 3] - gm[i - 1][:3, 3]
        dist.append(dist[-1] + np.sqrt(d @ d))
    t_errs, r_errs = [], []
    for first in range(0, len(gm), stride):
        for L in lengths:
            last = -1
            for j in range(first, len(gm)):
                if dist[j] >= dist[first] + L:
                    last = j
                    break
            if last < 0:
                continue
            dg = np.linalg.inv(gm[first]) @ gm[last]
            dp = np.linalg.inv(pm[first]) @ pm[last]
            t_errs.append(np.linalg.norm(dp[:3, 3] - dg[:3, 3]) / L)
            r_errs.append(bf_angle(dg[:3, :3].T @ dp[:3, :3]) / L)
    return 100 * np.mean(t_errs), 100 * np.degrees(np.mean(r_errs))


def sim3(traj, s, R, t):
    return Trajectory(RigidTransform(R @ T.rotation, s * R @ T.translation + t) for T in traj)


def scale_noise_loop(rng, n=520, radius=80.0, noise=0.005):
    """A ~500 m circle and a copy whose per-frame steps carry multiplicative scale noise."""
    ang = np.linspace(0, 2 * np.pi, n, endpoint=False)
    gt = Trajectory(RigidTransform(so3_exp(np.array([0.0, -a, 0.0])),
                                   [radius * np.sin(a), 0.0, radius * (1 - np.cos(a))]) for a in ang)
    poses = [gt[0]]
    for i in range(1, n):
        rel = gt[i - 1].inverse() @ gt[i]
        rel = RigidTransform(rel.rotation, rel.translation * (1 + rng.normal(scale=noise)))
        poses.append(poses[-1] @ rel)
    return Trajectory(poses), gt


# --- ATE ----------------------------------------------------------------------
