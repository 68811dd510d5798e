import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfvo.epipolar import (cheirality_select, decompose_essential, eight_point, essential_from_pose,
                           estimate_essential_ransac, project_to_essential, recover_pose,
                           sampson_distance, triangulate, triangulate_normalized)
from dfvo.exceptions import AmbiguousCheirality, DegenerateConfiguration, TooFewMatches, ZeroBaseline
from dfvo.geometry import CameraIntrinsics, RigidTransform, normalize, rotation_angle, skew
from dfvo.matching import MatchSet
from dfvo.ransac import EssentialRansacParams, required_iterations
from dfvo.synth import random_rotation, random_two_view_problem

E_X = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def angle_deg(a, b):
    c = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return np.degrees(np.arccos(np.clip(c, -1, 1)))


def recomposition_error(R, t, E):
    En = E / np.linalg.norm(E)
    A = skew(t) @ R
    A = A / np.linalg.norm(A)
    return min(np.linalg.norm(A - En), np.linalg.norm(A + En))


def with_outliers(problem, frac, rng):
    m = problem.matches
    n = len(m)
    bad = np.zeros(n, dtype=bool)
    bad[rng.choice(n, int(frac * n), replace=False)] = True
    p_prev = m.p_prev.copy()
    shift = rng.uniform(15, 40, size=(bad.sum(), 2)) * rng.choice([-1, 1], size=(bad.sum(), 2))
    p_prev[bad] += shift
    return MatchSet.from_points(p_prev, m.p_cur, m.image_size), bad


def test_pure_x_translation():
    rng = np.random.default_rng(0)
    pr = random_two_view_problem(rng, pose=RigidTransform(np.eye(3), [1.0, 0.0, 0.0]))
    E, mask = estimate_essential_ransac(pr.matches, pr.K)
    assert mask.all()
    ref = E_X * np.sqrt(2) / np.linalg.norm(E_X)
    assert min(np.abs(E - ref).max(), np.abs(E + ref).max()) < 1e-9


def test_exact_matches_have_tiny_sampson():
    rng = np.random.default_rng(1)
    pr = random_two_view_problem(rng)
    E, mask = estimate_essential_ransac(pr.matches, pr.K)
    d = sampson_distance(E, normalize(pr.K, pr.matches.p_cur), normalize(pr.K, pr.matches.p_prev))
    assert mask.all() and d.max() < 1e-10


def test_outliers_rejected():
    rng = np.random.default_rng(2)
    for _ in range(5):
        pr = random_two_view_problem(rng, n_points=300)
        m, bad = with_outliers(pr, 0.3, rng)
        _, mask = estimate_essential_ransac(m, pr.K, seed=7)
        assert (~mask[bad]).mean() >= 0.95
        assert mask[~bad].mean() > 0.95


def test_essential_structure():
    rng = np.random.default_rng(3)
    pr = random_two_view_problem(rng)
    E, _ = estimate_essential_ransac(pr.matches, pr.K)
    S = np.linalg.svd(E, compute_uv=False)
    assert np.linalg.norm(E) == pytest.approx(np.sqrt(2), abs=1e-12)
    assert S[2] < 1e-7 * S[0]
    assert S[0] == pytest.approx(S[1], abs=1e-12)


def test_projection_averages_singular_values():
    M = np.diag([3.0, 1.0, 0.5])
    E = project_to_essential(M)
    S = np.linalg.svd(E, compute_uv=False)
    assert np.allclose(S, [1.0, 1.0, 0.0], atol=1e-12)


def test_too_few_matches():
    pr = random_two_view_problem(np.random.default_rng(4), n_points=7)
    with pytest.raises(TooFewMatches):
        estimate_essential_ransac(pr.matches, pr.K)


def test_degenerate_single_plane():
    # all points on one plane: the 8-point system loses rank
    rng = np.random.default_rng(5)
    K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
    u = rng.uniform(0, 639, 100)
    v = rng.uniform(0, 479, 100)
    X = np.column_stack([(u - 320) / 500 * 8, (v - 240) / 500 * 8, np.full(100, 8.0)])
    pose = RigidTransform(random_rotation(rng, 5), [0.5, 0.1, 0.3])
    Y = pose.apply(X)
    p_prev = np.column_stack([500 * Y[:, 0] / Y[:, 2] + 320, 500 * Y[:, 1] / Y[:, 2] + 240])
    with pytest.raises(DegenerateConfiguration):
        estimate_essential_ransac(MatchSet.from_points(p_prev, np.column_stack([u, v])), K)
    assert eight_point(normalize(K, np.column_stack([u, v]))[:8], normalize(K, p_prev)[:8]) is None


def test_decompose_known():
    cands = decompose_essential(E_X)
    assert len(cands) == 4
    found = [c for c in cands if np.allclose(c[0], np.eye(3), atol=1e-12)]
    ts = sorted(tuple(np.round(t, 12)) for _, t in found)
    assert ts == [(-1.0, 0.0, 0.0), (1.0, 0.0, 0.0)]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_decompose_recomposes(seed):
    rng = np.random.default_rng(seed)
    R = random_rotation(rng, 180)
    t = rng.normal(size=3)
    E = project_to_essential(essential_from_pose(R, t))
    cands = decompose_essential(E)
    rots = [c[0] for c in cands]
    assert not np.allclose(rots[0], rots[2])
    for Rc, tc in cands:
        assert np.linalg.det(Rc) == pytest.approx(1.0, abs=1e-12)
        assert np.linalg.norm(tc) == pytest.approx(1.0, abs=1e-12)
        assert recomposition_error(Rc, tc, E) < 1e-8


def test_cheirality_unique_and_correct():
    rng = np.random.default_rng(6)
    pr = random_two_view_problem(rng, pose=RigidTransform(random_rotation(rng, 3), [0.05, -0.02, 1.0]))
    E, mask = estimate_essential_ransac(pr.matches, pr.K)
    res = cheirality_select(decompose_essential(E), pr.matches, pr.K, mask)
    fracs = np.array(res.candidate_counts) / mask.sum()
    assert (fracs > 0.99).sum() == 1
    assert res.cheirality_count <= res.n_inliers
    assert np.degrees(rotation_angle(res.rotation.T @ pr.pose.rotation)) < 0.01
    assert angle_deg(res.t_unit, pr.pose.translation) < 0.05
    assert np.linalg.norm(res.t_unit) == pytest.approx(1.0, abs=1e-12)


def test_tiny_baseline_is_ambiguous():
    rng = np.random.default_rng(7)
    for _ in range(3):
        d = rng.normal(size=3)
        pose = RigidTransform(random_rotation(rng, 10), 1e-6 * d / np.linalg.norm(d))
        pr = random_two_view_problem(rng, pose=pose)
        with pytest.raises((AmbiguousCheirality, DegenerateConfiguration)) as info:
            recover_pose(pr.matches, pr.K)
        assert info.type is AmbiguousCheirality


def test_epipolar_residual_of_inliers():
    rng = np.random.default_rng(8)
    pr = random_two_view_problem(rng, n_points=400)
    m, _ = with_outliers(pr, 0.2, rng)
    params = EssentialRansacParams()
    E, mask = estimate_essential_ransac(m, pr.K, params)
    a = np.column_stack([normalize(pr.K, m.p_cur[mask]), np.ones(mask.sum())])
    b = np.column_stack([normalize(pr.K, m.p_prev[mask]), np.ones(mask.sum())])
    assert np.abs(np.sum(b * (a @ E.T), axis=1)).max() < 10 * params.threshold


def test_jitter_does_not_change_inliers():
    rng = np.random.default_rng(9)
    pr = random_two_view_problem(rng, n_points=300)
    m, _ = with_outliers(pr, 0.25, rng)
    jit = MatchSet.from_points(m.p_prev + rng.uniform(-1e-9, 1e-9, m.p_prev.shape), m.p_cur, m.image_size)
    _, a = estimate_essential_ransac(m, pr.K, seed=3)
    _, b = estimate_essential_ransac(jit, pr.K, seed=3)
    assert np.array_equal(a, b)


def test_deterministic():
    rng = np.random.default_rng(10)
    pr = random_two_view_problem(rng)
    m, _ = with_outliers(pr, 0.3, rng)
    r1 = recover_pose(m, pr.K, seed=[0, 4, 1])
    r2 = recover_pose(m, pr.K, seed=[0, 4, 1])
    assert r1.rotation.tobytes() == r2.rotation.tobytes()
    assert r1.t_unit.tobytes() == r2.t_unit.tobytes()
    assert np.array_equal(r1.inlier_mask, r2.inlier_mask)


def test_triangulate_known_depth():
    K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
    X = np.array([[0.7, -0.4, 10.0], [-1.0, 0.5, 10.0]])
    pose = RigidTransform(np.eye(3), [0.5, 0.0, 0.0])
    Y = pose.apply(X)
    p_cur = np.column_stack([500 * X[:, 0] / 10 + 320, 500 * X[:, 1] / 10 + 240])
    p_prev = np.column_stack([500 * Y[:, 0] / Y[:, 2] + 320, 500 * Y[:, 1] / Y[:, 2] + 240])
    d, ok = triangulate(MatchSet.from_points(p_prev, p_cur), K, pose)
    assert ok.all()
    assert np.abs(d - 10.0).max() < 1e-8


def test_triangulate_zero_parallax_invalid():
    # a point straight along the baseline direction has no parallax
    R, t = np.eye(3), np.array([0.0, 0.0, -1.0])
    X = np.array([[0.0, 0.0, 5.0], [1.0, 0.0, 5.0]])
    Y = X @ R.T + t
    d_cur, _, ok = triangulate_normalized(X[:, :2] / X[:, 2:], Y[:, :2] / Y[:, 2:], R, t)
    assert not ok[0] and ok[1]


def test_triangulate_zero_baseline():
    pr = random_two_view_problem(np.random.default_rng(11))
    with pytest.raises(ZeroBaseline):
        triangulate(pr.matches, pr.K, RigidTransform.identity())


def test_required_iterations():
    assert required_iterations(1.0, 8, 0.999, 1000) == 1
    assert required_iterations(0.0, 8, 0.999, 1000) == 1000
    assert required_iterations(0.5, 1, 0.999, 1000) == 10
    assert required_iterations(1e-9, 8, 0.999, 1000) == 1000
