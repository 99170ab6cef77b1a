import pytest

from cloudfill.cloud_sim import CloudShapeParams, simulate_mask
from cloudfill.scenes import KINDS, ChangeSpec, change_pair, class_map, smooth_field


def mask(seed, size=64):
    return simulate_mask(size, size, CloudShapeParams(0.25, 4, seed))


def test_smooth_field_normalised():
    f = smooth_field(3, (40, 50), radius=2)
    assert f.shape == (40, 50)
    assert abs(f.mean()) <= 1e-12 and abs(f.std() - 1.0) <= 1e-12


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", range(5))
def test_change_is_large_and_covers_omega(kind, seed):
    m = mask(seed)
    ref, truth, changed = change_pair(m, 3, seed, kind=kind)
    diff = truth.values - ref.values
    assert (diff[:, changed] >= 0.2).all()
    assert not diff[:, ~changed].any()
    assert changed[m.cells].mean() >= 0.30
    assert 0.0 <= ref.values.min() and ref.values.max() <= 1.0


@pytest.mark.parametrize("kind", KINDS)
def test_deterministic(kind):
    m = mask(1)
    a = change_pair(m, 2, 1, kind=kind)
    b = change_pair(m, 2, 1, kind=kind)
    assert a[0] == b[0] and a[1] == b[1]
    assert (a[2] == b[2]).all()
    assert change_pair(m, 2, 2, kind=kind)[0] != a[0]


def test_checker_pattern_is_finer_than_coarse_cell():
    m = mask(2)
    classes = class_map(m, 2, "checker", ChangeSpec(checker=2))
    # class 0 and 1 alternate every two cells wherever class 2 is absent
    rows = classes[:, :8]
    both = ((rows == 0) | (rows == 1)).all(axis=1)
    assert both.any()
    r = rows[both][0]
    assert r[0] == r[1] and r[2] == r[3] and r[0] != r[2]


def test_unknown_kind():
    with pytest.raises(ValueError):
        change_pair(mask(0), 1, 0, kind="stripes")
