import numpy as np
import pytest

from odechan.angular_delay import forward_values
from odechan.channel_oracle import channel_at, toy_scene
from odechan.dataset_store import (
    StaticSampleDb, generate_trajectories, read_db, read_trajectories, sample_static_db, write_db,
    write_trajectories,
)

from conftest import small_scene


@pytest.fixture(scope="module")
def tiny_scene():
    return small_scene(area=(0.0, 2.0, 0.0, 2.0))


@pytest.fixture(scope="module")
def tiny_db(tiny_scene):
    return sample_static_db(tiny_scene, 25, seed=3)


def test_record_count(tiny_db):
    assert len(tiny_db) == 100


def test_records_are_oracle_channels(tiny_scene, tiny_db):
    for k in (0, 57):
        np.testing.assert_allclose(tiny_db.channels[k], forward_values(channel_at(tiny_scene, tiny_db.positions[k]).values),
                                   rtol=0, atol=0)
    assert tiny_db.header["scene_hash"] == tiny_scene.fingerprint()
    assert tiny_db.header["seed"] == 3


def test_same_seed_bit_identical(tiny_scene, tiny_db):
    again = sample_static_db(tiny_scene, 25, seed=3)
    assert again.positions.tobytes() == tiny_db.positions.tobytes()
    assert again.channels.tobytes() == tiny_db.channels.tobytes()
    other = sample_static_db(tiny_scene, 25, seed=4)
    assert other.positions.tobytes() != tiny_db.positions.tobytes()


def test_quadrant_density():
    scene = small_scene(n_antennas=2, n_subcarriers=1, area=(0.0, 10.0, 0.0, 10.0))
    db = sample_static_db(scene, 40, seed=1)
    n = len(db)
    sigma = np.sqrt(n * 0.25 * 0.75)
    x, y = db.positions[:, 0], db.positions[:, 1]
    for mx in (x < 5, x >= 5):
        for my in (y < 5, y >= 5):
            assert abs(np.sum(mx & my) - n / 4) < 3 * sigma
    assert np.all((x >= 0) & (x <= 10) & (y >= 0) & (y <= 10))
    assert np.all(db.positions[:, 2] == scene.ue_height)


def test_sampling_errors(tiny_scene):
    with pytest.raises(ValueError):
        sample_static_db(tiny_scene, 0, seed=0)
    flat = small_scene(area=(0.0, 0.0, 0.0, 2.0))
    with pytest.raises(ValueError):
        sample_static_db(flat, 10, seed=0)


# ---------------------------------------------------------------- nearest

def test_nearest_at_stored_point(tiny_db):
    idx, dist = tiny_db.neighbors(tiny_db.positions[42], 1)
    assert idx[0] == 42 and dist[0] == 0.0
    assert tiny_db.nearest(tiny_db.positions[42]) == 42


def test_nearest_matches_linear_scan(tiny_db):
    r = np.random.default_rng(0)
    queries = np.column_stack([r.uniform(-0.5, 2.5, size=(1000, 2)), np.full(1000, 1.5)])
    for q in queries:
        d = np.linalg.norm(tiny_db.positions - q, axis=1)
        assert tiny_db.nearest(q) == int(np.argmin(d))


def test_equidistant_lower_index_wins():
    pos = [[2.0, 0, 0], [0.0, 1, 0], [0.0, -1, 0], [5.0, 0, 0]]
    db = StaticSampleDb({"n_antennas": 1, "n_subcarriers": 1}, pos, np.ones((4, 1, 1)))
    assert db.nearest([0.0, 0, 0]) == 1
    idx, _ = db.neighbors([0.0, 0, 0], 2)
    assert idx.tolist() == [1, 2]


def test_tie_group_larger_than_probe():
    # 40 points on a circle are all tied; the index order must still win
    ang = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    pos = np.column_stack([np.cos(ang), np.sin(ang), np.zeros(40)])
    pos = np.round(pos * 2 ** 20) / 2 ** 20
    pos[:, :2] /= np.linalg.norm(pos[:, :2], axis=1, keepdims=True)
    d = np.linalg.norm(pos, axis=1)
    db = StaticSampleDb({"n_antennas": 1, "n_subcarriers": 1}, pos[::-1], np.ones((40, 1, 1)))
    idx, _ = db.neighbors([0.0, 0, 0], 3)
    want = np.lexsort((np.arange(40), d[::-1]))[:3]
    assert idx.tolist() == want.tolist()


def test_neighbors_exclude(tiny_db):
    idx, _ = tiny_db.neighbors(tiny_db.positions[5], 3, exclude=5)
    assert 5 not in idx and len(idx) == 3


def test_empty_db_nearest():
    db = StaticSampleDb({"n_antennas": 1, "n_subcarriers": 1}, np.zeros((0, 3)), np.zeros((0, 1, 1)))
    with pytest.raises(ValueError):
        db.nearest([0, 0, 0])


def test_header_dims_enforced():
    with pytest.raises(ValueError):
        StaticSampleDb({"n_antennas": 2, "n_subcarriers": 2}, np.zeros((1, 3)), np.zeros((1, 3, 2)))


# ---------------------------------------------------------------- trajectories

@pytest.fixture(scope="module")
def trajectories():
    return generate_trajectories(toy_scene(0), 6, 5, 1e-3, (10.0, 40.0), seed=2)


def test_positions_linear_in_time(trajectories):
    t = trajectories.times
    np.testing.assert_allclose(np.diff(t), 1e-3, rtol=1e-12)
    for k in range(len(trajectories)):
        want = trajectories.positions[k, 0] + np.outer(t, trajectories.velocity(k))
        np.testing.assert_allclose(trajectories.positions[k], want, rtol=0, atol=1e-12)
        assert 10.0 <= trajectories.speeds[k] <= 40.0


def test_trajectories_inside_area(trajectories):
    scene = toy_scene(0)
    assert all(scene.contains(p) for p in trajectories.positions.reshape(-1, 3))


def test_speed_zero_channels_are_static():
    scene = toy_scene(0)
    ds = generate_trajectories(scene, 3, 4, 1e-3, (0.0, 0.0), seed=1)
    for k in range(3):
        H0 = channel_at(scene, ds.positions[k, 0]).values
        for j in range(4):
            assert np.array_equal(ds.channels[k, j], H0)


def test_trajectory_determinism_and_streams(trajectories):
    again = generate_trajectories(toy_scene(0), 6, 5, 1e-3, (10.0, 40.0), seed=2)
    assert again.channels.tobytes() == trajectories.channels.tobytes()
    other = generate_trajectories(toy_scene(0), 6, 5, 1e-3, (10.0, 40.0), seed=2, stream="test")
    assert other.positions.tobytes() != trajectories.positions.tobytes()


def test_trajectory_retry_limit():
    with pytest.raises(RuntimeError):
        generate_trajectories(toy_scene(0), 1, 3, 1.0, (100.0, 100.0), seed=0, max_retries=5)


# ---------------------------------------------------------------- files

def test_db_round_trip_bit_exact(tmp_path, tiny_db):
    write_db(tiny_db, tmp_path / "a.socdb")
    back = read_db(tmp_path / "a.socdb")
    assert back.header == tiny_db.header
    assert back.channels.tobytes() == tiny_db.channels.tobytes()
    write_db(back, tmp_path / "b.socdb")
    assert (tmp_path / "a.socdb").read_bytes() == (tmp_path / "b.socdb").read_bytes()
    assert (tmp_path / "a.socdb").read_bytes()[:6] == b"SOCDB1"


def test_trajectory_round_trip_bit_exact(tmp_path, trajectories):
    write_trajectories(trajectories, tmp_path / "a.soctrj")
    back = read_trajectories(tmp_path / "a.soctrj")
    assert back.channels.tobytes() == trajectories.channels.tobytes()
    assert back.header == trajectories.header
    write_trajectories(back, tmp_path / "b.soctrj")
    assert (tmp_path / "a.soctrj").read_bytes() == (tmp_path / "b.soctrj").read_bytes()


def test_corrupt_files(tmp_path, tiny_db):
    write_db(tiny_db, tmp_path / "a.socdb")
    raw = (tmp_path / "a.socdb").read_bytes()
    (tmp_path / "bad.socdb").write_bytes(b"XXXXXX" + raw[6:])
    with pytest.raises(ValueError):
        read_db(tmp_path / "bad.socdb")
    (tmp_path / "long.socdb").write_bytes(raw + b"\0")
    with pytest.raises(ValueError):
        read_db(tmp_path / "long.socdb")
