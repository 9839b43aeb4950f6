import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lts.association import (
    UNMATCHED, Correspondence, IdentityMotion, PoseMotion, associate, nearest_neighbors,
)
from lts.scan_io import PointCloud, Pose


def brute_force(prev_xyz, curr_xyz, max_dist):
    """All-pairs nearest neighbour, lower index on exact ties."""
    n = len(curr_xyz)
    idx = np.full(n, UNMATCHED, dtype=np.int64)
    dist = np.full(n, np.inf)
    if len(prev_xyz) == 0:
        return idx, dist
    d = curr_xyz[:, None, :] - prev_xyz[None, :, :]
    sq = d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]
    best = np.argmin(sq, axis=1)  # first occurrence = lowest index
    bd = np.sqrt(sq[np.arange(n), best])
    ok = bd <= max_dist
    idx[ok] = best[ok]
    dist[ok] = bd[ok]
    return idx, dist


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


class FixedMotion:
    def __init__(self, pose):
        self.pose = pose

    def relative(self, prev_id, curr_id):
        return self.pose


def test_identical_clouds_match_themselves():
    rng = np.random.default_rng(0)
    cloud = PointCloud.from_xyz(rng.uniform(-10, 10, (200, 3)))
    corr = associate(cloud, cloud, IdentityMotion(), 0.5)
    np.testing.assert_array_equal(corr.prev_index, np.arange(200))
    np.testing.assert_array_equal(corr.distance, 0.0)


def test_translated_far_away_unmatched():
    rng = np.random.default_rng(1)
    prev = PointCloud.from_xyz(rng.uniform(-1, 1, (50, 3)))
    curr = PointCloud.from_xyz(prev.xyz + [10, 0, 0])
    corr = associate(prev, curr, IdentityMotion(), 0.5)
    assert not corr.matched.any()


def test_single_pair():
    corr = associate(PointCloud.from_xyz([[0, 0, 0]]), PointCloud.from_xyz([[0.1, 0, 0]]),
                     IdentityMotion(), 0.5)
    assert corr.prev_index.tolist() == [0]
    assert corr.distance[0] == pytest.approx(0.1, abs=1e-15)


def test_empty_previous():
    corr = associate(PointCloud(np.zeros((0, 4))), PointCloud.from_xyz([[1, 2, 3]]))
    assert corr.prev_index.tolist() == [UNMATCHED]


def test_empty_current():
    corr = associate(PointCloud.from_xyz([[1, 2, 3]]), PointCloud(np.zeros((0, 4))))
    assert len(corr) == 0


def test_bad_threshold():
    with pytest.raises(ValueError):
        associate(PointCloud.from_xyz([[0, 0, 0]]), PointCloud.from_xyz([[0, 0, 0]]), max_dist=0)


def test_ties_go_to_lower_index():
    prev = PointCloud.from_xyz([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [1, 0, 0]])
    curr = PointCloud.from_xyz([[0, 0, 0], [1, 0, 0]])
    corr = associate(prev, curr, IdentityMotion(), 2.0)
    assert corr.prev_index.tolist() == [0, 0]


def test_many_to_one():
    corr = associate(PointCloud.from_xyz([[0, 0, 0]]), PointCloud.from_xyz([[0.1, 0, 0], [0, 0.2, 0]]))
    assert corr.prev_index.tolist() == [0, 0]


def test_pose_motion_aligns_ego_motion():
    rng = np.random.default_rng(5)
    world = rng.uniform(-20, 20, (300, 3))
    c, s = np.cos(0.2), np.sin(0.2)
    poses = [Pose(), Pose([[c, -s, 0], [s, c, 0], [0, 0, 1]], [1.5, 0.3, 0])]
    prev = PointCloud.from_xyz(poses[0].inverse().apply(world), scan_id=0)
    curr = PointCloud.from_xyz(poses[1].inverse().apply(world), scan_id=1)
    corr = associate(prev, curr, PoseMotion(poses), 1e-6)
    np.testing.assert_array_equal(corr.prev_index, np.arange(300))
    # without ego-motion most points find no partner
    assert associate(prev, curr, IdentityMotion(), 1e-6).matched.sum() < 10


def test_pose_motion_missing_pose():
    with pytest.raises(IndexError):
        PoseMotion([Pose()]).relative(0, 1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 400), st.integers(0, 400),
       st.floats(0.01, 3.0))
def test_equals_brute_force(seed, n_prev, n_curr, max_dist):
    rng = np.random.default_rng(seed)
    prev = rng.uniform(-5, 5, (n_prev, 3))
    # grid-snapped points make exact ties common
    if seed % 2:
        prev = np.round(prev)
    curr = rng.uniform(-5, 5, (n_curr, 3))
    if seed % 3 == 0:
        curr = np.round(curr * 2) / 2
    corr = associate(PointCloud.from_xyz(prev), PointCloud.from_xyz(curr), IdentityMotion(), max_dist)
    idx, dist = brute_force(prev, curr, max_dist)
    np.testing.assert_array_equal(corr.prev_index, idx)
    m = idx != UNMATCHED
    np.testing.assert_allclose(corr.distance[m], dist[m], rtol=0, atol=1e-9)
    assert np.all(corr.distance[m] <= max_dist)
    assert np.all(np.isinf(corr.distance[~m]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rigid_motion_invariance(seed):
    rng = np.random.default_rng(seed)
    prev = rng.uniform(-10, 10, (300, 3))
    curr = prev[rng.permutation(300)[:200]] + rng.normal(0, 0.2, (200, 3))
    motion = Pose(random_rotation(rng), rng.normal(0, 1, 3))
    g = Pose(random_rotation(rng), rng.normal(0, 5, 3))

    # moving both scans by g is undone by conjugating the provider with g
    base = associate(PointCloud.from_xyz(prev), PointCloud.from_xyz(motion.apply(curr)),
                     FixedMotion(motion), 0.5)
    moved = associate(PointCloud.from_xyz(g.apply(prev)), PointCloud.from_xyz(g.apply(motion.apply(curr))),
                      FixedMotion(g.compose(motion).compose(g.inverse())), 0.5)
    np.testing.assert_array_equal(base.prev_index, moved.prev_index)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 1.0), st.floats(0.0, 1.0))
def test_monotone_in_threshold(seed, d1, extra):
    rng = np.random.default_rng(seed)
    prev = rng.uniform(-3, 3, (200, 3))
    curr = rng.uniform(-3, 3, (150, 3))
    a = associate(PointCloud.from_xyz(prev), PointCloud.from_xyz(curr), max_dist=d1)
    b = associate(PointCloud.from_xyz(prev), PointCloud.from_xyz(curr), max_dist=d1 + extra)
    assert np.all(b.matched[a.matched])
    np.testing.assert_array_equal(b.prev_index[a.matched], a.prev_index[a.matched])


def test_nearest_neighbors_duplicates():
    ref = np.zeros((5, 3))
    idx, dist = nearest_neighbors(ref, np.array([[0.0, 0, 0], [1.0, 0, 0]]))
    assert idx.tolist() == [0, 0]
    assert dist.tolist() == [0.0, 1.0]


def test_unmatched_constructor():
    c = Correspondence.unmatched(3)
    assert not c.matched.any() and len(c) == 3
