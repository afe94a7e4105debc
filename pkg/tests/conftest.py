import numpy as np
import pytest

from delay_kolmogorov.model.kernel import NoiseSpec
from delay_kolmogorov.model.spec import ModelSpec
from delay_kolmogorov.model.zoo import build_zoo_model
from delay_kolmogorov.sdde.config import SimConfig


@pytest.fixture
def lv_params():
    # 閉じた式 λ_2(π_1) = -1 になる競争LV（a_1 - σ_11/2 = 1, b_11 + b̂_11 = 1）
    return {
        "r": 1.0,
        "a": [2.0, 1.5],
        "b": [[1.0, 0.5], [0.5, 1.0]],
        "b_hat": [[0.0, 0.0], [1.5, 0.0]],
        "sigma": [[2.0, 0.0], [0.0, 1.0]],
    }


@pytest.fixture
def lv_model(lv_params):
    return build_zoo_model("competitive_lv", lv_params)


@pytest.fixture
def bistable_params():
    return {
        "r": 1.0,
        "a": [2.0, 2.0],
        "b": [[1.0, 2.0], [2.0, 1.0]],
        "b_hat": [[0.0, 0.0], [0.0, 0.0]],
        "sigma": [[2.0, 0.0], [0.0, 2.0]],
    }


@pytest.fixture
def sir_params():
    # λ_I(π) = -b_2 - σ_22/2 + a(c_1 + c_2)/b_1 = -0.5
    return {
        "r": 1.0,
        "a": 1.0,
        "b1": 1.0,
        "b2": 1.0,
        "c1": 0.5,
        "c2": 0.5,
        "sigma": [[1.0, 0.0], [0.0, 1.0]],
    }


@pytest.fixture
def sir_model(sir_params):
    return build_zoo_model("sir", sir_params)


@pytest.fixture
def chemostat_params():
    return {"r": 1.0, "a": 0.5, "uptake": [{"m": 2.0, "k": 1.0}]}


@pytest.fixture
def replicator_params():
    return {
        "r": 1.0,
        "total": 2.0,
        "sigmas": [0.5, 0.5, 0.5],
        "payoff_matrix": [[1.0, 2.0, 0.0], [0.0, 1.0, 2.0], [2.0, 0.0, 1.0]],
    }


@pytest.fixture
def zero_model():
    # 係数がすべて0の2種モデル（状態は動かない）
    def drift(view):
        return np.zeros_like(view.now)

    def diffusion(view):
        return np.zeros(view.now.shape + (2,))

    return ModelSpec(
        name="zero",
        n=2,
        r=1.0,
        per_capita_drift=drift,
        per_capita_diffusion=diffusion,
        noise=NoiseSpec(gamma=np.eye(2)),
    )


@pytest.fixture
def short_config():
    return SimConfig(horizon=10.0, seed=1234)
