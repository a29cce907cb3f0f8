import numpy as np
import pytest

from seriesdiff.tensor import ParamSet, Tensor


def test_tensor_shape_data_contract():
    t = Tensor((2, 3), [1, 2, 3, 4, 5, 6])
    assert t.size == 6
    assert t.as_array().shape == (2, 3)
    assert t.as_array()[1, 0] == 4.0  # row-major


def test_tensor_rejects_bad_shapes_and_values():
    with pytest.raises(ValueError):
        Tensor((0, 3), [])
    with pytest.raises(ValueError):
        Tensor((2,), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        Tensor((2,), [1.0, np.nan])
    with pytest.raises(ValueError):
        Tensor((2,), [1.0, np.inf])


def test_tensor_is_immutable():
    t = Tensor((2,), [1.0, 2.0])
    with pytest.raises(ValueError):
        t.as_array()[0] = 5.0
    with pytest.raises(AttributeError):
        t.shape = (1,)


def test_paramset_requires_unique_names():
    t = Tensor((1,), [0.0])
    with pytest.raises(ValueError):
        ParamSet([("a", t), ("a", t)])


def test_paramset_preserves_order():
    rng = np.random.default_rng(0)
    ps = ParamSet.from_arrays({"z": rng.standard_normal(3), "a": rng.standard_normal(2)})
    assert ps.names == ("z", "a")


def test_flatten_unflatten_round_trip_exact():
    rng = np.random.default_rng(1)
    ps = ParamSet.from_arrays(
        {"w": rng.standard_normal((3, 4)), "b": rng.standard_normal(4)}
    )
    flat = ps.flatten()
    assert flat.size == ps.total_size == 16
    back = ps.unflatten(flat)
    assert back.names == ps.names
    for name in ps.names:
        assert back[name].shape == ps[name].shape
        np.testing.assert_array_equal(back[name].data, ps[name].data)


def test_unflatten_rejects_wrong_length():
    ps = ParamSet.from_arrays({"w": np.zeros(4)})
    with pytest.raises(ValueError):
        ps.unflatten(np.zeros(5))
