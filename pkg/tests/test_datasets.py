import numpy as np
import pytest

from ganmanifold.datasets import (UNLABELED, LabeledSet, SplitSpec, load_csv, moons_distance,
                                  save_csv, split_semi_supervised, two_circles, two_moons)
from ganmanifold.errors import DatasetFormatError
from ganmanifold.nn import make_rng


def brute_moons_distance(points, m=20001):
    """Nearest distance to densely sampled arcs."""
    t = np.linspace(0, np.pi, m)
    arcs = np.vstack([np.column_stack([np.cos(t), np.sin(t)]),
                      np.column_stack([1 - np.cos(t), 0.5 - np.sin(t)])])
    out = np.empty(len(points))
    for i, p in enumerate(points):
        out[i] = np.min(np.hypot(*(arcs - p).T))
    return out


def test_moons_noiseless_on_arcs():
    data = two_moons(200, 0.0, make_rng(0))
    upper = data.points[data.labels == 0]
    np.testing.assert_allclose(np.sum(upper**2, axis=1), 1.0, atol=1e-12)
    assert np.all(upper[:, 1] >= 0)
    lower = data.points[data.labels == 1]
    np.testing.assert_allclose(np.sum((lower - [1.0, 0.5]) ** 2, axis=1), 1.0, atol=1e-12)
    assert np.all(lower[:, 1] <= 0.5 + 1e-12)
    assert np.max(moons_distance(data.points)) < 1e-12


def test_moons_balance_and_odd_n():
    data = two_moons(4, 0.3, make_rng(1))
    assert np.bincount(data.labels).tolist() == [2, 2]
    with pytest.raises(ValueError):
        two_moons(5, 0.0, make_rng(0))


def test_moons_distance_matches_brute_force():
    pts = make_rng(3).uniform(-1.5, 2.5, size=(300, 2))
    np.testing.assert_allclose(moons_distance(pts), brute_moons_distance(pts), atol=1e-4)


def test_moons_noise_level():
    data = two_moons(10_000, 0.1, make_rng(2))
    sub = data.points[::20]
    brute = brute_moons_distance(sub)
    np.testing.assert_allclose(moons_distance(sub), brute, atol=1e-4)
    assert 0.06 < moons_distance(data.points).mean() < 0.10


def test_circles_geometry():
    data = two_circles(400, 0.0, 0.5, make_rng(0))
    inner = data.points[data.labels == 1]
    outer = data.points[data.labels == 0]
    np.testing.assert_allclose(np.sum(inner**2, 1), 0.25, atol=1e-12)
    np.testing.assert_allclose(np.sum(outer**2, 1), 1.0, atol=1e-12)
    for ring in (inner, outer):
        ang = np.sort(np.arctan2(ring[:, 1], ring[:, 0]))
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
        assert gaps.max() < 2 * (2 * np.pi / 200)
    two = two_circles(2, 0.0, 0.5, make_rng(0))
    assert sorted(two.labels.tolist()) == [0, 1]
    with pytest.raises(ValueError):
        two_circles(3, 0.0, 0.5, make_rng(0))


def test_generators_seed_deterministic():
    a = two_moons(100, 0.1, make_rng(4))
    b = two_moons(100, 0.1, make_rng(4))
    assert a.points.tobytes() == b.points.tobytes()


def _rows(s):
    return sorted(map(tuple, np.column_stack([s.points, s.ground_truth()]).tolist()))


def test_split_counts_and_partition():
    data = two_moons(200, 0.1, make_rng(5))
    lab, unl, val = split_semi_supervised(data, SplitSpec(3, 0.1), make_rng(6))
    assert len(lab) == 6
    assert np.bincount(lab.labels).tolist() == [3, 3]
    assert np.all(unl.labels == UNLABELED)
    assert len(val) == round(0.1 * 194)
    assert _rows(data) == sorted(_rows(lab) + _rows(unl) + _rows(val))


def test_split_without_validation():
    data = two_moons(20, 0.0, make_rng(0))
    _, unl, val = split_semi_supervised(data, SplitSpec(2, 0.0), make_rng(0))
    assert len(val) == 0
    assert len(unl) == 16


def test_split_insufficient_members():
    data = two_moons(4, 0.0, make_rng(0))
    with pytest.raises(ValueError):
        split_semi_supervised(data, SplitSpec(3), make_rng(0))


def test_csv_roundtrip(tmp_path):
    data = two_moons(50, 0.1, make_rng(7))
    data = LabeledSet(data.points, np.where(np.arange(50) % 3 == 0, UNLABELED, data.labels))
    path = tmp_path / "d.csv"
    save_csv(data, path)
    back = load_csv(path)
    assert np.array_equal(back.points, data.points)
    assert np.array_equal(back.labels, data.labels)
    text = path.read_bytes()
    assert text.startswith(b"x0,x1,label\n") and b"\r" not in text


def test_csv_unlabeled_sentinel(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("x0,x1,label\n0.5,1.5,-1\n1,2,0\n")
    data = load_csv(path)
    assert data.labels.tolist() == [UNLABELED, 0]


@pytest.mark.parametrize("text,needle", [
    ("x0,y1,label\n1,2,0\n", "'y1'"),
    ("x0,x1,target\n1,2,0\n", "'target'"),
    ("", "missing header"),
    ("x0,x1,label\n1,2\n", "expected 3 fields"),
    ("x0,x1,label\n1,abc,0\n", "non-numeric"),
    ("x0,x1,label\n1,2,zero\n", "not an integer"),
    ("x0,x1,label\n1,2,-5\n", "invalid"),
])
def test_csv_errors(tmp_path, text, needle):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(DatasetFormatError, match=needle):
        load_csv(path)
