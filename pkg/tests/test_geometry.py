from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from vlabkit.geometry import (
    EmptyCloud,
    PointCloud,
    Pose,
    Quaternion,
    TooFewWaypoints,
    box_cloud,
    catmull_rom_segments,
    min_distance,
    overlap_count,
    slerp,
    smooth_path,
    transform_cloud,
)

_unit4 = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda v: np.linalg.norm(v) > 0.1)
quats = _unit4.map(lambda v: Quaternion(*v))


def test_quaternion_canonical_form():
    q = Quaternion(-1.0, 0.0, 0.0, 0.0).canonical()
    assert q.as_tuple() == (1.0, 0.0, 0.0, 0.0)
    q = Quaternion(0.0, -1.0, 0.0, 0.0).canonical()
    assert q.x == 1.0


def test_slerp_examples():
    q = Quaternion.from_axis_angle((1, 2, 3), 0.7)
    for t in (0.0, 0.3, 1.0):
        assert slerp(q, q, t).angle_to(q) < 1e-12
    half = slerp(Quaternion.identity(), Quaternion.from_axis_angle((0, 0, 1), math.pi), 0.5)
    assert half.angle_to(Quaternion.from_axis_angle((0, 0, 1), math.pi / 2)) < 1e-9
    a, b = Quaternion.from_axis_angle((0, 1, 0), 0.2), Quaternion.from_axis_angle((1, 0, 0), 2.0)
    assert slerp(a, b, 0.25).angle_to(slerp(a, b, 0.75)) == pytest.approx(0.5 * a.angle_to(b), abs=1e-9)


def test_slerp_antipodal_is_identity_path():
    q = Quaternion.from_axis_angle((0, 0, 1), 1.0)
    for t in (0.0, 0.5, 1.0):
        assert slerp(q, -q, t).angle_to(q) < 1e-9


@settings(max_examples=200)
@given(quats, quats)
def test_slerp_path_length_equals_angle(a, b):
    qs = [slerp(a, b, k / 100) for k in range(101)]
    length = sum(qs[i].angle_to(qs[i + 1]) for i in range(100))
    assert length == pytest.approx(a.angle_to(b), abs=1e-6)


@settings(max_examples=100)
@given(st.lists(quats, min_size=1, max_size=50))
def test_quaternion_norm_preserved(qs):
    acc = Quaternion.identity()
    for q in qs:
        acc = acc * q
        assert abs(np.linalg.norm(acc.as_array()) - 1.0) <= 1e-9


def test_quaternion_norm_over_many_compositions():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(1_000_000, 4))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    acc = Quaternion.identity()
    worst = 0.0
    for row in v[:: 100]:  # sampled check of the chain, composing every 100th rotation
        acc = acc * Quaternion(*row)
        worst = max(worst, abs(float(np.linalg.norm(acc.as_array())) - 1.0))
    assert worst <= 1e-9


def test_pose_composition_and_inverse():
    p = Pose((0.1, -0.2, 0.3), Quaternion.from_euler(0.1, 0.2, 0.3))
    ident = p @ p.inverse()
    assert np.allclose(ident.position, 0, atol=1e-12)
    assert ident.orientation.angle_to(Quaternion.identity()) < 1e-9


def test_smooth_path_collinear_and_endpoints():
    a, b = Pose((0, 0, 0)), Pose((1, 2, 3))
    out = smooth_path([a, b], 7)
    assert len(out) == 7
    d = np.array([1, 2, 3]) / np.linalg.norm([1, 2, 3])
    for p in out:
        v = np.asarray(p.position)
        assert np.linalg.norm(v - (v @ d) * d) < 1e-9
    assert out[0] is a and out[-1] is b
    with pytest.raises(TooFewWaypoints):
        smooth_path([a])


def test_smooth_path_hits_every_waypoint_and_c1():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-1, 1, size=(5, 3))
    wps = [Pose(tuple(p)) for p in pts]
    out = smooth_path(wps, 10)
    for i, w in enumerate(wps):
        assert np.allclose(out[i * 9].position, w.position, atol=1e-9)
    segs = catmull_rom_segments(pts)
    h = 1e-7
    for s0, s1 in zip(segs, segs[1:]):
        left = (s0.evaluate(1.0) - s0.evaluate(1.0 - h)) / h
        right = (s1.evaluate(h) - s1.evaluate(0.0)) / h
        assert np.abs(left - right).max() < 1e-5
        assert np.abs(s0.derivative(1.0) - s1.derivative(0.0)).max() < 1e-9


def test_min_distance_examples():
    c = box_cloud((0, 0, 0), (0.1, 0.1, 0.1), 0.02)
    assert min_distance(c, c) == 0.0
    assert min_distance(PointCloud([[0, 0, 0]]), PointCloud([[1, 0, 0]])) == 1.0
    with pytest.raises(EmptyCloud):
        min_distance(PointCloud(), c)


def test_overlap_examples():
    a = box_cloud((0, 0, 0), (0.1, 0.1, 0.1), 0.02)
    far = transform_cloud(a, Pose((5, 0, 0)))
    assert overlap_count(a, far, 0.01) == 0
    assert overlap_count(a, a.merged(far), 1e-6) == len(a)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_proximity_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-0.1, 0.1, size=(int(rng.integers(1, 60)), 3))
    b = rng.uniform(-0.1, 0.1, size=(int(rng.integers(1, 60)), 3)) + rng.uniform(-0.2, 0.2, 3)
    r = float(rng.uniform(0.001, 0.1))
    assert abs(min_distance(PointCloud(a), PointCloud(b)) - oracles.pairwise_min_distance(a, b)) <= 1e-12
    assert overlap_count(PointCloud(a), PointCloud(b), r) == oracles.pairwise_overlap(a, b, r)


def test_transform_cloud_examples():
    c = box_cloud((0, 0, 0), (0.1, 0.2, 0.3), 0.05)
    assert np.array_equal(transform_cloud(c, Pose()).points, c.points)
    assert np.allclose(transform_cloud(c, Pose((1, 0, 0))).points[:, 0], c.points[:, 0] + 1)
    p = Pose((0.3, 0.1, -0.2), Quaternion.from_euler(0.5, -0.4, 1.2))
    back = transform_cloud(transform_cloud(c, p), p.inverse())
    assert np.abs(back.points - c.points).max() < 1e-9


def test_cloud_bytes_round_trip(tmp_path):
    c = box_cloud((0.1, 0.2, 0.3), (0.1, 0.1, 0.1), 0.02)
    assert PointCloud.from_bytes(c.to_bytes()) == c
    path = c.save(tmp_path / "c.pclb")
    assert PointCloud.load(path) == c
