import numpy as np
import pytest

from seriesdiff import autodiff as ad
from seriesdiff.errors import NumericalInstabilityError
from seriesdiff.tensor import ParamSet, Tensor

from conftest import max_rel_err, perceptron_37


def square(nodes):
    return ad.mean(ad.sq_err(nodes["theta"], ad.constant(0.0)))


def test_scalar_square():
    params = ParamSet({"theta": Tensor.from_array(3.0)})
    value, grads = ad.value_and_grad(square, params)
    assert value == 9.0
    assert grads["theta"].data[0] == 6.0


def test_vector_norm_squared():
    theta = np.array([1.0, 0.0, -2.0, 3.0])
    params = ParamSet({"theta": Tensor.from_array(theta)})

    def norm_sq(nodes):
        return ad.scale(ad.mean(ad.sq_err(nodes["theta"], ad.constant(0.0))), theta.size)

    value, grads = ad.value_and_grad(norm_sq, params)
    assert value == pytest.approx(14.0, abs=1e-12)
    np.testing.assert_allclose(grads["theta"].data, [2.0, 0.0, -4.0, 6.0], atol=1e-12)


def test_perceptron_matches_finite_differences():
    comp, params = perceptron_37(np.random.default_rng(7))
    assert params.total_size == 37
    _, grads = ad.value_and_grad(comp, params)
    fd = ad.finite_difference(comp, params, 1e-6)
    assert max_rel_err(grads.flatten(), fd.flatten()) < 1e-5


def test_finite_difference_quadratic_and_constant():
    params = ParamSet({"theta": Tensor.from_array(3.0)})
    fd = ad.finite_difference(square, params, 1e-6)
    assert fd["theta"].data[0] == pytest.approx(6.0, abs=1e-6)

    fd0 = ad.finite_difference(lambda n: ad.constant(2.5), params, 1e-6)
    assert fd0["theta"].data[0] == 0.0


def test_finite_difference_rejects_bad_h():
    params = ParamSet({"theta": Tensor.from_array(1.0)})
    with pytest.raises(ValueError):
        ad.finite_difference(square, params, 0.0)
    with pytest.raises(ValueError):
        ad.finite_difference(square, params, -1e-6)


def test_gradient_linearity():
    rng = np.random.default_rng(3)
    comp_f, params = perceptron_37(rng)
    comp_g, _ = perceptron_37(rng)
    a, b = 2.5, -1.25

    def combined(nodes):
        return ad.add(ad.scale(comp_f(nodes), a), ad.scale(comp_g(nodes), b))

    _, gf = ad.value_and_grad(comp_f, params)
    _, gg = ad.value_and_grad(comp_g, params)
    _, gc = ad.value_and_grad(combined, params)
    expected = a * gf.flatten() + b * gg.flatten()
    np.testing.assert_allclose(gc.flatten(), expected, rtol=1e-10, atol=1e-14)


def test_determinism_bit_identical():
    comp, params = perceptron_37(np.random.default_rng(11))
    v1, g1 = ad.value_and_grad(comp, params)
    v2, g2 = ad.value_and_grad(comp, params)
    assert v1 == v2
    np.testing.assert_array_equal(g1.flatten(), g2.flatten())


@pytest.mark.parametrize(
    "op_name, build",
    [
        ("matmul", lambda n: ad.mean(ad.matmul(n["a"], n["b"]))),
        ("add", lambda n: ad.mean(ad.add(n["a"], n["b"]))),
        ("tanh", lambda n: ad.mean(ad.tanh(n["a"]))),
        ("silu", lambda n: ad.mean(ad.silu(n["a"]))),
        ("sq_err", lambda n: ad.mean(ad.sq_err(n["a"], n["b"]))),
        ("scale", lambda n: ad.mean(ad.scale(n["a"], -1.7))),
        ("concat", lambda n: ad.mean(ad.concat([n["a"], n["b"]], axis=1))),
    ],
)
def test_each_primitive_against_finite_differences(op_name, build):
    rng = np.random.default_rng(hash(op_name) % 2**32)
    params = ParamSet.from_arrays(
        {"a": rng.standard_normal((3, 3)), "b": rng.standard_normal((3, 3))}
    )
    _, grads = ad.value_and_grad(build, params)
    fd = ad.finite_difference(build, params, 1e-6)
    assert max_rel_err(grads.flatten(), fd.flatten()) < 1e-6


def test_broadcast_add_gradients():
    rng = np.random.default_rng(5)
    params = ParamSet.from_arrays(
        {"w": rng.standard_normal((4, 3)), "b": rng.standard_normal(3)}
    )

    def comp(nodes):
        return ad.mean(ad.sq_err(ad.add(nodes["w"], nodes["b"]), ad.constant(1.0)))

    _, grads = ad.value_and_grad(comp, params)
    fd = ad.finite_difference(comp, params, 1e-6)
    assert max_rel_err(grads.flatten(), fd.flatten()) < 1e-6


def test_non_finite_intermediate_names_primitive():
    params = ParamSet({"theta": Tensor.from_array(1e200)})

    def blows_up(nodes):
        return ad.mean(ad.scale(nodes["theta"], 1e200))

    with pytest.raises(NumericalInstabilityError) as err:
        ad.value_and_grad(blows_up, params)
    assert "scale" in str(err.value)


def test_unused_parameter_gets_zero_gradient():
    params = ParamSet.from_arrays({"used": np.array([2.0]), "unused": np.ones(3)})

    def comp(nodes):
        return ad.mean(ad.sq_err(nodes["used"], ad.constant(0.0)))

    _, grads = ad.value_and_grad(comp, params)
    np.testing.assert_array_equal(grads["unused"].data, np.zeros(3))


def test_non_scalar_output_rejected():
    params = ParamSet.from_arrays({"a": np.ones(3)})
    with pytest.raises(ValueError):
        ad.value_and_grad(lambda n: n["a"], params)
