import numpy as np
import pytest

from seriesdiff import autodiff as ad
from seriesdiff.network import Architecture, ScoreNetwork
from seriesdiff.schedule import make_linear_schedule
from seriesdiff.tensor import ParamSet


@pytest.fixture(scope="session")
def small_arch():
    return Architecture(series_len=16, cond_dim=6, time_dim=4, hidden=(12, 12, 12))


@pytest.fixture()
def small_net(small_arch):
    return ScoreNetwork.init(small_arch, np.random.default_rng(42))


@pytest.fixture(scope="session")
def schedule():
    return make_linear_schedule()


def random_params(rng, sizes) -> ParamSet:
    return ParamSet.from_arrays(
        {f"p{i}": rng.standard_normal(size) for i, size in enumerate(sizes)}
    )


def perceptron_37(rng):
    """4 -> 6 -> 1 perceptron: 24 + 6 + 6 + 1 = 37 scalars."""
    params = ParamSet.from_arrays(
        {
            "w1": rng.standard_normal((4, 6)) * 0.5,
            "b1": rng.standard_normal(6) * 0.1,
            "w2": rng.standard_normal((6, 1)) * 0.5,
            "b2": rng.standard_normal(1) * 0.1,
        }
    )
    X = rng.standard_normal((8, 4))
    Y = rng.standard_normal((8, 1))

    def computation(nodes):
        h = ad.tanh(ad.add(ad.matmul(ad.constant(X), nodes["w1"]), nodes["b1"]))
        out = ad.add(ad.matmul(h, nodes["w2"]), nodes["b2"])
        return ad.mean(ad.sq_err(out, ad.constant(Y)))

    return computation, params


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
