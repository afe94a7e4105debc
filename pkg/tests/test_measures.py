import numpy as np
import pytest

from delay_kolmogorov.errors import DivergenceError
from delay_kolmogorov.measures.occupation import (
    accumulate,
    accumulate_all,
    merge,
    stationarity_diagnostic,
    tail_mass,
)
from delay_kolmogorov.model.zoo import build_zoo_model
from delay_kolmogorov.sdde.config import SimConfig
from delay_kolmogorov.sdde.integrator import default_initial, integrate, integrate_replicates


def test_empty_face_statistics(lv_model, short_config):
    trajectory = integrate(lv_model, default_initial(lv_model, short_config, []), short_config, face=[])
    stats = accumulate(trajectory, short_config)

    assert stats.count == 32
    assert stats.se_available
    np.testing.assert_array_equal(stats.mean_now, [0.0, 0.0])
    np.testing.assert_array_equal(stats.mean_lagged, [0.0, 0.0])
    np.testing.assert_allclose(stats.mean_integrand, [1.0, 1.0])
    np.testing.assert_array_equal(stats.occupancy, np.ones(len(stats.epsilons)))
    assert tail_mass(stats, 0.0).fraction == 0.0

    # 差が0で標準誤差も0なら z=0
    reports = stationarity_diagnostic(stats)
    assert reports["x1"].z == 0.0
    assert not reports["x1"].flagged


def test_logistic_face_matches_exponential_law(lv_model):
    # 面 {x1} は dX = X(2 - X)dt + √2 X dB．定常分布は平均1の指数分布
    config = SimConfig(horizon=400.0, seed=2024, replicates=4)
    trajectories = integrate_replicates(lv_model, default_initial(lv_model, config, [0]), config, face=[0])
    stats = accumulate_all(trajectories, config)

    assert stats.replicates == 4
    mean, se = stats.mean("now")[0], stats.se("now")[0]
    assert abs(mean - 1.0) < 4 * se + 0.02

    # 定常なら φ(0) と φ(-r) の平均は一致し，面の種の侵入率は0
    difference, difference_se = stats.mean("difference")[0], stats.se("difference")[0]
    assert abs(difference) < 4 * difference_se
    integrand, integrand_se = stats.mean("integrand")[0], stats.se("integrand")[0]
    assert abs(integrand) < 4 * integrand_se + 0.02

    # 面の外の種は常に0
    assert stats.mean("now")[1] == 0.0
    assert stats.occupancy[0] == 0.0


def test_tail_mass_uses_nearest_radius(lv_model):
    config = SimConfig(horizon=50.0, seed=5)
    trajectory = integrate(lv_model, default_initial(lv_model, config, [0]), config, face=[0])
    stats = accumulate(trajectory, config)

    assert tail_mass(stats, 0.0).fraction == 1.0
    assert tail_mass(stats, 1000.0).fraction == 0.0

    approx = tail_mass(stats, 3.0)
    assert approx.radius_used == 2.0
    assert "R=2" in approx.note
    assert tail_mass(stats, 5.0).note is None


def test_merge_equals_union_window(lv_model):
    config = SimConfig(horizon=40.0, seed=8, batches=20)
    trajectory = integrate(lv_model, default_initial(lv_model, config), config)
    split = 80

    merged = merge(
        accumulate(trajectory, config, window=slice(40, split)),
        accumulate(trajectory, config, window=slice(split, 160)),
    )
    whole = accumulate(trajectory, config, window=slice(40, 160))

    assert merged.count == whole.count
    assert merged.window_length == pytest.approx(whole.window_length)
    for key in ("now", "lagged", "integrand", "difference"):
        np.testing.assert_allclose(merged.mean(key), whole.mean(key), rtol=1e-10)
    np.testing.assert_array_equal(merged.tail_counts, whole.tail_counts)
    np.testing.assert_array_equal(merged.occupancy_counts, whole.occupancy_counts)


def test_merge_rejects_mismatched_labels(lv_model, sir_model, short_config):
    lv_stats = accumulate(integrate(lv_model, default_initial(lv_model, short_config), short_config), short_config)
    sir_stats = accumulate(
        integrate(sir_model, default_initial(sir_model, short_config), short_config), short_config
    )

    with pytest.raises(ValueError, match="種ラベル"):
        merge(lv_stats, sir_stats)


def test_transient_run_is_flagged():
    # 平衡 x=1 から遠い x=100 から出発し，20時間では緩和しない
    model = build_zoo_model("competitive_lv", {"a": [0.001], "b": [[0.001]], "b_hat": [[0.0]], "sigma": [[1e-6]]})
    config = SimConfig(horizon=20.0, seed=0, burn_in=0.0)
    initial = default_initial(model, config).with_species(0, 100.0)
    stats = accumulate(integrate(model, initial, config), config)

    reports = stationarity_diagnostic(stats)
    assert reports["x1"].flagged
    assert reports["x1"].difference < 0


def test_few_batches_disable_standard_errors(lv_model):
    config = SimConfig(horizon=10.0, seed=1, batches=10)
    stats = accumulate(integrate(lv_model, default_initial(lv_model, config), config), config)

    assert not stats.se_available
    assert stats.se("now") is None
    assert any("標準誤差" in note for note in stats.notes)
    with pytest.raises(ValueError, match="標準誤差"):
        stationarity_diagnostic(stats)


def test_empty_window_rejected(lv_model, short_config):
    trajectory = integrate(lv_model, default_initial(lv_model, short_config), short_config)

    with pytest.raises(ValueError, match="記録がありません"):
        accumulate(trajectory, short_config, window=slice(5, 5))


def test_observables_are_averaged(sir_model, short_config):
    trajectory = integrate(sir_model, default_initial(sir_model, short_config), short_config)
    stats = accumulate(trajectory, short_config)

    means = stats.observable_means()
    assert set(means) == {"incidence"}
    assert np.all(np.asarray(means["incidence"]) >= 0)
    report = stats.to_dict()
    assert report["labels"] == ["S", "I"]
    assert "incidence" in report["observables"]


def test_accumulate_all_without_usable_replicates():
    model = build_zoo_model("competitive_lv", {"a": [5.0], "b": [[1.0]], "b_hat": [[0.0]], "sigma": [[0.01]]})
    config = SimConfig(horizon=10.0, seed=0, replicates=2, divergence_ceiling=1.0)
    trajectories = integrate_replicates(model, default_initial(model, config), config)
    assert all(t.diverged for t in trajectories)

    with pytest.raises(DivergenceError, match="発散"):
        accumulate_all(trajectories, config)
