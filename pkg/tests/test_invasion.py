import math

import numpy as np
import pytest

from delay_kolmogorov.invasion.closed_form import closed_form_lambda, face_means
from delay_kolmogorov.invasion.estimate import (
    InvasionMethod,
    closed_form_estimate,
    estimate_lambda,
    estimates_by_key,
    lambda_table,
    lyapunov_exponent,
)
from delay_kolmogorov.model.spec import restrict_to_face
from delay_kolmogorov.model.zoo import build_zoo_model
from delay_kolmogorov.sdde.config import SimConfig


def test_lv_closed_forms(lv_model):
    assert closed_form_lambda(lv_model, [], 0) == pytest.approx(1.0)
    assert closed_form_lambda(lv_model, [], 1) == pytest.approx(1.0)
    assert closed_form_lambda(lv_model, [0], 1) == pytest.approx(-1.0)
    assert closed_form_lambda(lv_model, [1], 0) == pytest.approx(0.5)
    # 面 {x1,x2} の内部には測度が無い（λ_2(π_1) < 0）
    assert closed_form_lambda(lv_model, [0, 1], 0) is None

    np.testing.assert_allclose(face_means(lv_model, [0]), [1.0, 0.0])


def test_predator_prey_closed_form():
    model = build_zoo_model(
        "predator_prey",
        {
            "a": [2.0, 0.2],
            "b": [[1.0, 0.5], [1.0, 1.0]],
            "b_hat": [[0.0, 0.0], [0.0, 0.0]],
            "sigma": [[2.0, 0.0], [0.0, 0.2]],
        },
    )

    # -a_2 - σ_22/2 + b_21 E[x_1] = -0.2 - 0.1 + 1
    assert closed_form_lambda(model, [0], 1) == pytest.approx(0.7)
    assert closed_form_lambda(model, [], 1) == pytest.approx(-0.3)


def test_predator_prey_faces_with_prey():
    model = build_zoo_model(
        "predator_prey",
        {
            "a": [2.0, 0.2, 0.3],
            "b": [[1.0, 0.5, 0.5], [1.0, 1.0, 0.0], [1.0, 0.0, 1.0]],
            "b_hat": np.zeros((3, 3)).tolist(),
            "sigma": [[2.0, 0.0, 0.0], [0.0, 0.2, 0.0], [0.0, 0.0, 0.2]],
        },
    )

    # 面 {x1,x2} の平均は x1 = 23/30, x2 = 7/15
    np.testing.assert_allclose(face_means(model, [0, 1]), [23 / 30, 7 / 15, 0.0])
    # -0.3 - 0.1 + E[x_1]
    assert closed_form_lambda(model, [0, 1], 2) == pytest.approx(11 / 30)
    assert closed_form_lambda(model, [0], 2) == pytest.approx(0.6)
    # 被食者のいない面には測度が無い
    assert closed_form_lambda(model, [1], 0) is None


def test_sir_closed_forms(sir_model):
    assert closed_form_lambda(sir_model, ["S"], "I") == pytest.approx(-0.5)
    assert closed_form_lambda(sir_model, [], "I") == pytest.approx(-1.5)
    assert closed_form_lambda(sir_model, [], "S") is None


def test_replicator_vertex_closed_form():
    model = build_zoo_model(
        "replicator", {"total": 1.0, "sigmas": [0.5, 0.5], "payoff_matrix": [[1.0, 2.0], [3.0, 4.0]]}
    )

    # f(e_2) = (2, 4) なので 2 - 4 - (0.25 + 0.25)/2
    assert closed_form_lambda(model, [1], 0) == pytest.approx(-2.25)
    assert closed_form_lambda(model, [0], 1) == pytest.approx(3.0 - 1.0 - 0.25)
    assert closed_form_lambda(model, [], 0) is None


def test_chemostat_has_no_closed_form(chemostat_params):
    model = build_zoo_model("chemostat", chemostat_params)

    assert closed_form_lambda(model, ["S"], "x1") is None
    assert closed_form_estimate(model, ["S"], "x1") is None


def test_closed_form_estimate_record(sir_model):
    estimate = closed_form_estimate(sir_model, ["S"], "I")

    assert estimate.method is InvasionMethod.CLOSED_FORM
    assert estimate.se == 0.0
    assert not estimate.interval_contains_zero()
    report = estimate.to_dict()
    assert report["method"] == "closed-form"
    assert report["lambda"] == pytest.approx(-0.5)
    assert report["face_label"] == "{S}"


def test_empty_face_time_average_is_exact(lv_model, short_config):
    estimate = estimate_lambda(lv_model, [], 0, short_config)

    assert estimate.method is InvasionMethod.TIME_AVERAGE
    # Γ = √Σ を経由するので丸めの分だけずれる
    assert estimate.lambda_hat == pytest.approx(1.0, abs=1e-12)
    assert estimate.se == 0.0
    assert estimate.valid
    assert estimate.closed_form == 1.0


def test_time_average_matches_closed_form(lv_model):
    config = SimConfig(horizon=200.0, seed=77, replicates=4)
    estimate = estimate_lambda(lv_model, [0], 1, config)

    assert estimate.replicates == 4
    assert len(estimate.per_replicate) == 4
    assert abs(estimate.lambda_hat - (-1.0)) < 4 * estimate.se + 0.05
    assert not any(flag.startswith("wrong ergodic measure") for flag in estimate.flags)


def test_face_species_rate_vanishes(lv_model):
    # 面の種については λ_i(π) = 0
    config = SimConfig(horizon=400.0, seed=2024, replicates=4)
    estimate = estimate_lambda(lv_model, [0], 0, config)

    assert estimate.se is not None and estimate.se > 0
    assert abs(estimate.lambda_hat) < 4 * estimate.se


def test_estimate_accepts_restricted_model(lv_model, short_config):
    restricted = restrict_to_face(lv_model, {0})
    estimate = estimate_lambda(restricted, [], "x2", short_config)

    # 制限済みのモデルでも元のモデルの面で推定する
    assert estimate.species == 1
    assert estimate.lambda_hat == 1.0


def test_wrong_measure_is_flagged():
    # 面 {x1,x2} 上で種2は排除されるので，長時間では部分面 {x1} の近くにいる
    model = build_zoo_model(
        "competitive_lv",
        {
            "a": [2.0, 0.6],
            "b": [[1.0, 0.0], [1.5, 1.0]],
            "b_hat": [[0.0, 0.0], [0.0, 0.0]],
            "sigma": [[0.1, 0.0], [0.0, 0.1]],
        },
    )
    config = SimConfig(horizon=200.0, seed=4)
    estimate = estimate_lambda(model, [0, 1], 0, config)

    assert any(flag.startswith("wrong ergodic measure") for flag in estimate.flags)
    assert not estimate.valid


def test_lyapunov_exponent_at_origin(lv_model):
    config = SimConfig(horizon=5.0, seed=31, replicates=16)
    estimate = lyapunov_exponent(lv_model, [], 0, config)

    assert estimate.method is InvasionMethod.LYAPUNOV_EXPONENT
    assert estimate.replicates == 16
    # 小さい侵入種の成長率は λ_1(δ*) = a_1 - σ_11/2 = 1
    assert abs(estimate.lambda_hat - 1.0) < 4 * estimate.se + 0.05
    assert math.isclose(estimate.closed_form, 1.0)


def test_lyapunov_exponent_rejects_bad_arguments(lv_model, short_config):
    with pytest.raises(ValueError, match="含まれています"):
        lyapunov_exponent(lv_model, [0], 0, short_config)
    with pytest.raises(ValueError, match="invader_scale"):
        lyapunov_exponent(lv_model, [], 0, short_config, invader_scale=0.5)


def test_lambda_table_prefers_closed_form(lv_model, short_config):
    table = lambda_table(lv_model, [[], [0], [1]], short_config)

    assert len(table) == 4
    assert all(est.method is InvasionMethod.CLOSED_FORM for est in table)
    keyed = estimates_by_key(table)
    assert keyed[(frozenset({0}), 1)].lambda_hat == pytest.approx(-1.0)
    assert keyed[(frozenset(), 0)].lambda_hat == pytest.approx(1.0)


def test_lambda_table_time_average(lv_model, short_config):
    table = lambda_table(lv_model, [[]], short_config, species=["x2"], use_closed_form=False)

    assert len(table) == 1
    assert table[0].method is InvasionMethod.TIME_AVERAGE
    assert table[0].species_label == "x2"
    assert table[0].lambda_hat == 1.0
