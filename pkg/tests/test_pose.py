from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cherlab.pose import (DegenerateGeometryError, EncoderNet, PointCloud, RotationEstimate, angular_rate,
                          axis_angle_from_rotation, check_rotation, encoder_estimate, geodesic_loss,
                          geodesic_loss_batch, gram_schmidt, icp_refine, kabsch_estimate, load_cloud,
                          make_rotation_pair, random_rotation, rotation_batch, sample_surface, save_cloud,
                          train_encoder)
from cherlab.so3 import rodrigues, rot_z

from oracles import rodrigues_angle

BOX = (1.0, 0.6, 0.35)


def assert_rotation(R, tol=1e-9):
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=tol)
    assert abs(np.linalg.det(R) - 1.0) < tol


# -- sampling ------------------------------------------------------------------


def test_unit_sphere_samples():
    c = sample_surface("sphere", 500, 0.0, seed=0, dims=(1.0,))
    np.testing.assert_allclose(np.linalg.norm(c.points, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(c.normals, c.points, atol=1e-12)


def test_box_faces_are_area_weighted():
    n = 100_000
    _, faces = sample_surface("box", n, 0.0, seed=1, dims=BOX, return_faces=True)
    a, b, c = BOX
    areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
    expected = areas / areas.sum()
    observed = np.bincount(faces, minlength=6) / n
    np.testing.assert_allclose(observed, expected, rtol=0.05)


def test_box_points_lie_on_surface_with_outward_normals():
    c = sample_surface("box", 400, 0.0, seed=2, dims=BOX)
    half = np.array(BOX) / 2 / np.linalg.norm(np.array(BOX) / 2)
    on_face = np.isclose(np.abs(c.points), half, atol=1e-12)
    assert np.all(on_face.sum(axis=1) >= 1)
    assert np.all(np.sum(c.points * c.normals, axis=1) > 0)


def test_cylinder_normals_unit():
    c = sample_surface("cylinder", 300, 0.0, seed=3)
    np.testing.assert_allclose(np.linalg.norm(c.normals, axis=1), 1.0, atol=1e-12)
    assert np.max(np.linalg.norm(c.points, axis=1)) <= 1.0 + 1e-12


def test_sampling_is_seeded():
    a = sample_surface("box", 64, 0.01, seed=7, dims=BOX)
    b = sample_surface("box", 64, 0.01, seed=7, dims=BOX)
    np.testing.assert_array_equal(a.points, b.points)


def test_sampling_rejects_bad_input():
    with pytest.raises(ValueError):
        sample_surface("box", 64, dims=(1.0, -1.0, 1.0))
    with pytest.raises(ValueError):
        sample_surface("torus", 64)
    with pytest.raises(ValueError):
        sample_surface("box", 3)


def test_cloud_file_roundtrip(tmp_path):
    c = sample_surface("box", 50, 0.01, seed=0, dims=BOX)
    path = tmp_path / "cloud.txt"
    save_cloud(c, path, comment="test cloud")
    assert path.read_text().startswith("#")
    d = load_cloud(path)
    np.testing.assert_array_equal(c.points, d.points)
    np.testing.assert_allclose(c.normals, d.normals, atol=1e-15)


def test_cloud_rejects_non_unit_normals():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((4, 3)), np.ones((4, 3)))


# -- rotation pairs ------------------------------------------------------------


def test_identity_pair_is_identical():
    c = sample_surface("box", 64, 0.0, seed=0, dims=BOX)
    b = c.rotated(np.eye(3))
    np.testing.assert_array_equal(b.points, c.points)


def test_pair_roundtrip():
    c = sample_surface("box", 64, 0.0, seed=0, dims=BOX)
    a, b, R = make_rotation_pair(c, seed=3)
    np.testing.assert_allclose(b.points @ R, a.points, atol=1e-12)
    np.testing.assert_allclose(b.normals @ R, a.normals, atol=1e-12)
    assert_rotation(R)


def test_uniform_rotation_angle_density():
    rng = np.random.default_rng(0)
    angles = np.array([np.arccos(np.clip((np.trace(random_rotation(rng)) - 1) / 2, -1, 1)) for _ in range(10_000)])
    # Haar measure on SO(3): density (1 - cos k) / pi, cdf (k - sin k) / pi
    p = stats.kstest(angles, lambda k: (k - np.sin(k)) / np.pi).pvalue
    assert p > 0.01


def test_bounded_rotation_angles():
    rng = np.random.default_rng(1)
    for _ in range(200):
        R = random_rotation(rng, max_angle=0.5)
        assert axis_angle_from_rotation(R).angle <= 0.5 + 1e-12


# -- kabsch --------------------------------------------------------------------


def test_kabsch_identical_clouds():
    c = sample_surface("box", 64, 0.0, seed=0, dims=BOX)
    np.testing.assert_allclose(kabsch_estimate(c, c), np.eye(3), atol=1e-12)


def test_kabsch_recovers_rodrigues_rotation():
    c = sample_surface("box", 128, 0.0, seed=0, dims=BOX)
    R = rodrigues(np.array([0.0, 0.0, 1.0]), np.pi / 3)
    assert geodesic_loss(R, kabsch_estimate(c, c.rotated(R))) < 1e-9


def test_kabsch_never_returns_reflection():
    c = sample_surface("box", 64, 0.0, seed=0, dims=BOX)
    mirrored = c.points * np.array([1.0, 1.0, -1.0])
    assert_rotation(kabsch_estimate(c.points, mirrored))


def test_kabsch_noise_monte_carlo():
    c = sample_surface("box", 128, 0.0, seed=4, dims=BOX)
    errs = []
    for k in range(100):
        a, b, R = make_rotation_pair(c, seed=k, noise=0.01)
        errs.append(geodesic_loss(R, kabsch_estimate(a, b)))
    assert np.mean(np.array(errs) < 0.05) >= 0.95


def test_kabsch_rejects_collinear_points():
    line = np.outer(np.linspace(0, 1, 10), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateGeometryError):
        kabsch_estimate(line, line)


def test_icp_refines_without_correspondences():
    c = sample_surface("box", 256, 0.0, seed=5, dims=BOX)
    R = rodrigues(np.array([0.3, 1.0, 0.2]), 0.25)
    b = c.rotated(R)
    perm = np.random.default_rng(0).permutation(len(c))
    shuffled = PointCloud(b.points[perm], b.normals[perm])
    R0 = rodrigues(np.array([0.3, 1.0, 0.2]), 0.2)
    assert geodesic_loss(R, icp_refine(c, shuffled, R0)) < 1e-6


# -- geodesic loss -------------------------------------------------------------


def test_geodesic_loss_known_values():
    assert geodesic_loss(np.eye(3), np.eye(3)) == 0.0
    assert geodesic_loss(np.eye(3), rot_z(np.pi / 2)) == pytest.approx(np.pi / 2, abs=1e-12)
    assert geodesic_loss(np.eye(3), rot_z(np.pi)) == pytest.approx(np.pi, abs=1e-7)


def test_geodesic_loss_equals_rodrigues_angle():
    rng = np.random.default_rng(0)
    for _ in range(500):
        R1, R2 = random_rotation(rng), random_rotation(rng)
        d = geodesic_loss(R1, R2)
        assert d == pytest.approx(geodesic_loss(R2, R1), abs=1e-15)
        assert abs(d - rodrigues_angle(R1, R2)) < 1e-9


def test_batched_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    Rp = np.array([random_rotation(rng) for _ in range(3)])
    Re = np.array([random_rotation(rng, 1.0) @ r for r in Rp])
    _, g = geodesic_loss_batch(Rp, Re, need_grad=True)
    h = 1e-7
    fd = np.zeros_like(Re)
    for idx in np.ndindex(Re.shape):
        d = np.zeros_like(Re)
        d[idx] = h
        fd[idx] = (geodesic_loss_batch(Rp, Re + d).mean() - geodesic_loss_batch(Rp, Re - d).mean()) / (2 * h)
    np.testing.assert_allclose(g, fd, atol=1e-6)


# -- axis / angle --------------------------------------------------------------


def test_identity_is_degenerate():
    est = axis_angle_from_rotation(np.eye(3))
    assert est.degenerate and est.angle == 0.0


def test_quarter_turn_about_z():
    est = axis_angle_from_rotation(rot_z(np.pi / 2), interval=0.5)
    assert est.angle == pytest.approx(np.pi / 2, abs=1e-15)
    np.testing.assert_allclose(est.axis, [0, 0, 1], atol=1e-15)
    assert est.rate == pytest.approx(np.pi)


@given(st.floats(0.01, np.pi - 0.01), st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 0.1))
@settings(max_examples=200, deadline=None)
def test_axis_angle_roundtrip(angle, axis):
    n = np.array(axis) / np.linalg.norm(axis)
    est = axis_angle_from_rotation(rodrigues(n, angle))
    assert abs(est.angle - angle) < 1e-9
    np.testing.assert_allclose(est.axis, n, atol=1e-9)
    np.testing.assert_allclose(rodrigues(est.axis, est.angle), est.R, atol=1e-9)


def test_half_turn_uses_symmetric_part():
    n = np.array([1.0, 2.0, -2.0]) / 3.0
    est = axis_angle_from_rotation(rodrigues(n, np.pi))
    assert est.angle == pytest.approx(np.pi, abs=1e-12)
    assert abs(abs(est.axis @ n) - 1.0) < 1e-12


def test_axis_angle_rejects_non_rotation():
    with pytest.raises(ValueError):
        axis_angle_from_rotation(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        check_rotation(2 * np.eye(3))


def test_angular_rate_exact_spin():
    n = np.array([0.0, 0.6, 0.8])
    ests = [axis_angle_from_rotation(rodrigues(n, 0.3)) for _ in range(5)]
    rate, axis = angular_rate(ests, 0.5)
    assert rate == pytest.approx(0.6, abs=1e-12)
    np.testing.assert_allclose(axis, n, atol=1e-12)


def test_angular_rate_aligns_flipped_axes():
    n = np.array([0.0, 0.0, 1.0])
    ests = [RotationEstimate(np.eye(3), n, 0.3), RotationEstimate(np.eye(3), -n, -0.3),
            RotationEstimate(np.eye(3), n, 0.3), RotationEstimate(np.eye(3), np.eye(3)[0], 0.0, degenerate=True)]
    rate, axis = angular_rate(ests, 1.0)
    assert rate == pytest.approx(0.3)
    np.testing.assert_allclose(axis, n)


def test_angular_rate_noisy_estimates():
    rng = np.random.default_rng(0)
    omega, dt = 1.0, 0.5
    n = np.array([0.0, 1.0, 0.0])
    ests = [axis_angle_from_rotation(rodrigues(n, omega * dt + rng.normal(0, 0.02))) for _ in range(20)]
    rate, _ = angular_rate(ests, dt)
    assert abs(rate - omega) / omega < 0.05


def test_angular_rate_all_degenerate():
    with pytest.raises(ValueError):
        angular_rate([axis_angle_from_rotation(np.eye(3))], 0.5)


# -- encoder -------------------------------------------------------------------


def test_gram_schmidt_gives_rotations():
    x = np.random.default_rng(0).normal(size=(20, 6))
    for R in gram_schmidt(x):
        assert_rotation(R, 1e-12)


def test_untrained_encoder_outputs_rotation():
    net = EncoderNet((16, 16, 32), (32,), seed=0)
    c = sample_surface("box", 128, 0.01, seed=0, dims=BOX)
    a, b, _ = make_rotation_pair(c, seed=1)
    R, latent = encoder_estimate(net, a, b)
    assert_rotation(R)
    assert latent.shape == (32,)


def test_encoder_is_permutation_invariant():
    net = EncoderNet((16, 16, 32), (32,), seed=0)
    c = sample_surface("box", 128, 0.01, seed=0, dims=BOX)
    a, b, _ = make_rotation_pair(c, seed=1)
    rng = np.random.default_rng(2)
    pa, pb = rng.permutation(128), rng.permutation(128)
    R1, z1 = net.estimate(a, b)
    R2, z2 = net.estimate(PointCloud(a.points[pa], a.normals[pa]), PointCloud(b.points[pb], b.normals[pb]))
    np.testing.assert_allclose(R1, R2, atol=1e-6)
    np.testing.assert_allclose(z1, z2, atol=1e-6)


def test_encoder_gradient_matches_finite_differences():
    net = EncoderNet((8, 8, 8), (8,), seed=1, dtype=np.float64)
    rng = np.random.default_rng(0)
    base = [sample_surface("box", 10, 0.0, seed=i, dims=BOX) for i in range(3)]
    fa, fb, Rp = rotation_batch(base, 4, rng, 0.01, 1.3)

    def loss():
        R, _, _ = net.forward(fa, fb, train=True)
        return geodesic_loss_batch(Rp, R).mean()

    R, _, _ = net.forward(fa, fb, train=True)
    _, gR = geodesic_loss_batch(Rp, R, need_grad=True)
    grads = net.backward(gR)
    h = 1e-6
    for p, g in zip(net.params(), grads):
        fd = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            dn = loss()
            p[idx] = old
            fd[idx] = (up - dn) / (2 * h)
        scale = max(np.abs(fd).max(), np.abs(g).max(), 1e-8)
        assert np.abs(fd - g).max() / scale < 1e-4


def test_encoder_training_is_seeded_and_checkpoints(tmp_path):
    kw = dict(iterations=4, batch_size=4, point_layers=(8, 8, 16), head_layers=(16,), n_base=4, dims=BOX)
    a = train_encoder(seed=3, **kw)
    b = train_encoder(seed=3, **kw)
    assert a.losses == b.losses
    path = tmp_path / "enc.ckpt"
    a.net.save(path)
    net = EncoderNet.load(path)
    c = sample_surface("box", 128, 0.01, seed=0, dims=BOX)
    x, y, _ = make_rotation_pair(c, seed=1)
    np.testing.assert_array_equal(a.net.estimate(x, y)[0], net.estimate(x, y)[0])
