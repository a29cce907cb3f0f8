import numpy as np
import pytest

from seriesdiff import autodiff as ad
from seriesdiff.condition import ConditionVector
from seriesdiff.network import (
    Architecture,
    ScoreNetwork,
    forward_batch,
    init_params,
    predict_noise,
    time_embedding,
)
from seriesdiff.tensor import ParamSet

from conftest import max_rel_err


def test_architecture_validation():
    with pytest.raises(ValueError):
        Architecture(series_len=0)
    with pytest.raises(ValueError):
        Architecture(series_len=8, time_dim=5)
    with pytest.raises(ValueError):
        Architecture(series_len=8, activation="relu")


def test_default_architecture_shape():
    arch = Architecture(series_len=64)
    assert arch.hidden == (128, 128, 128)
    assert arch.time_dim == 16
    assert arch.input_dim == 64 + 16 + 6
    dims = arch.layer_dims()
    assert dims[0] == (86, 128)
    assert dims[-1] == (128, 64)


def test_zero_final_layer_outputs_zero(small_arch):
    net = ScoreNetwork.init(small_arch, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    out = predict_noise(net, rng.standard_normal(16), 3, rng.standard_normal(6))
    np.testing.assert_array_equal(out, np.zeros(16))


def test_predict_noise_deterministic(small_arch):
    params = init_params(small_arch, np.random.default_rng(2))
    arrays = params.to_arrays()
    arrays["w3"] = np.random.default_rng(3).standard_normal(arrays["w3"].shape) * 0.1
    net = ScoreNetwork(small_arch, ParamSet.from_arrays(arrays))
    x = np.random.default_rng(4).standard_normal(16)
    a = predict_noise(net, x, 5, None)
    b = predict_noise(net, x, 5, None)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (16,)


def test_predict_noise_accepts_condition_vector(small_arch):
    net = ScoreNetwork.init(small_arch, np.random.default_rng(5))
    cv = ConditionVector(np.zeros(6), is_null=True)
    out = predict_noise(net, np.zeros(16), 1, cv)
    np.testing.assert_array_equal(out, predict_noise(net, np.zeros(16), 1, None))


def test_predict_noise_shape_errors(small_arch):
    net = ScoreNetwork.init(small_arch, np.random.default_rng(6))
    with pytest.raises(ValueError):
        predict_noise(net, np.zeros(15), 1, None)
    with pytest.raises(ValueError):
        predict_noise(net, np.zeros(16), 1, np.zeros(5))


def test_null_condition_routes_through_same_parameters(small_arch):
    # the NULL token is the zero vector fed through the very same weights
    params = init_params(small_arch, np.random.default_rng(7))
    arrays = params.to_arrays()
    arrays["w3"] = np.random.default_rng(8).standard_normal(arrays["w3"].shape) * 0.1
    net = ScoreNetwork(small_arch, ParamSet.from_arrays(arrays))
    x = np.random.default_rng(9).standard_normal(16)
    np.testing.assert_array_equal(
        predict_noise(net, x, 2, None), predict_noise(net, x, 2, np.zeros(6))
    )


def test_time_embedding_shape_and_distinct_steps():
    emb = time_embedding(np.array([1, 2, 100, 200]), 16)
    assert emb.shape == (4, 16)
    assert not np.allclose(emb[0], emb[1])
    assert np.all(np.abs(emb) <= 1.0)


def test_forward_gradients_match_finite_differences(small_arch):
    rng = np.random.default_rng(10)
    params = init_params(small_arch, rng)
    arrays = params.to_arrays()
    arrays["w3"] = rng.standard_normal(arrays["w3"].shape) * 0.2
    params = ParamSet.from_arrays(arrays)
    x_t = rng.standard_normal((3, 16))
    t = np.array([1, 4, 9])
    cond = rng.standard_normal((3, 6))

    def computation(nodes):
        out = forward_batch(nodes, small_arch, x_t, t, cond)
        return ad.mean(ad.sq_err(out, ad.constant(np.zeros_like(x_t))))

    _, grads = ad.value_and_grad(computation, params)
    coords = np.random.default_rng(11).choice(params.total_size, 40, replace=False)
    fd = ad.finite_difference_at(computation, params, coords, 1e-6)
    assert max_rel_err(grads.flatten()[coords], fd) < 1e-4


def test_params_must_match_architecture(small_arch):
    other = Architecture(series_len=16, cond_dim=6, time_dim=4, hidden=(5,))
    params = init_params(other, np.random.default_rng(0))
    with pytest.raises(ValueError):
        ScoreNetwork(small_arch, params)
