import math

import numpy as np
import pytest

from delay_kolmogorov.audit.certificate import parse_certificate
from delay_kolmogorov.audit.checks import (
    check_drift_condition,
    check_extinction_bounds,
    check_generator_bound,
    check_growth_condition,
    check_lipschitz,
    check_moment_bound,
    check_nondegeneracy,
    drift_margin,
    evaluate_V,
    grid_search_certificate,
)
from delay_kolmogorov.audit.sampler import SegmentSampler
from delay_kolmogorov.errors import CertificateError
from delay_kolmogorov.model.kernel import NoiseSpec
from delay_kolmogorov.model.spec import ModelSpec
from delay_kolmogorov.model.view import SegmentView
from delay_kolmogorov.model.zoo import build_zoo_model
from delay_kolmogorov.sdde.config import SimConfig
from delay_kolmogorov.sdde.segment import Segment


def _cert(**overrides):
    data = {
        "c": [1.0, 1.0],
        "gamma_b": 0.04,
        "gamma_0": 0.1,
        "a0": 1.0,
        "a1": 0.5,
        "a2": 0.25,
        "m": 100.0,
        "h": {"kappa1": 0.0, "kappa2": 0.0},
    }
    data.update(overrides)
    return parse_certificate(data)


def _lyapunov_cert(**overrides):
    return _cert(lyapunov={"gamma": 0.01, "rho": [0.0, 0.0], "p0": 0.001}, **overrides)


@pytest.fixture
def sampler():
    return SegmentSampler(samples=200, radius=50.0, seed=7)


def test_zero_model_drift_condition(zero_model, sampler):
    # 係数0なら LHS = 0，RHS = A_0 - γ_0 - A_1 + A_2 = 0.65
    report = check_drift_condition(zero_model, _cert(), sampler)

    assert report.passed
    assert report.samples == 200
    assert report.worst_margin == pytest.approx(-0.65)
    assert report.statement == "no violation found over 200 samples in radius 50"


def test_small_indicator_radius_violates(zero_model, sampler):
    report = check_drift_condition(zero_model, _cert(m=1e-3), sampler)

    assert not report.passed
    assert report.violations >= 198
    assert report.worst_margin == pytest.approx(0.35)
    assert len(report.violating_samples) == 5
    assert report.to_dict()["statement"].startswith(f"{report.violations} violations")


def test_drift_margin_at_zero_segment(lv_model):
    cert = _cert(h={"kappa1": 0.0, "kappa2": 1.0}, m=1.0)
    view = SegmentView.from_grid(np.zeros((1, 17, 2)), 1.0 / 16)

    margin = drift_margin(lv_model, cert, view)

    # x = 0 では γ_b Σ(|a_i| + g_i²) - (A_0 - γ_0 - A_1 + A_2)
    expected = 0.04 * (2.0 + 1.5 + 2.0) - (1.0 - 0.1 - 0.5 + 0.25)
    assert float(margin[0]) == pytest.approx(expected)


def test_grid_search_certificate_passes_own_samples(lv_model, sampler):
    search = grid_search_certificate(lv_model, sampler)

    assert search.certificate is not None
    assert search.feasible > 0
    assert search.candidates >= search.feasible
    report = check_drift_condition(lv_model, search.certificate, sampler)
    assert report.passed
    assert search.certificate.lyapunov is not None
    assert "best-effort" in search.notes[0]


def test_strong_growth_breaks_dissipativity(sampler):
    model = build_zoo_model(
        "competitive_lv",
        {"a": [200.0, 150.0], "b": [[1.0, 0.5], [0.5, 1.0]], "b_hat": [[0.0, 0.0], [0.0, 0.0]]},
    )
    report = check_drift_condition(model, _cert(m=1.0, gamma_b=0.01, gamma_0=0.01), sampler)

    assert not report.passed
    assert report.worst_margin > 0


def test_growth_condition_a(lv_model, sampler):
    cert = _cert(h={"kappa1": 0.0, "kappa2": 1.0}, growth={"kind": "a", "k_tilde": 10.0})
    assert check_growth_condition(lv_model, cert, sampler).passed

    # K̃ = 0 では Σg_i² > 0 の分だけ必ず違反する
    tight = _cert(growth={"kind": "a", "k_tilde": 0.0})
    report = check_growth_condition(lv_model, tight, sampler)
    assert report.violations == report.samples
    assert report.assumption == "growth-condition-a"


def test_growth_condition_replicator(replicator_params, sampler):
    model = build_zoo_model("replicator", replicator_params)
    cert = _cert(c=[1.0, 1.0, 1.0], growth={"kind": "a", "k_tilde": 100.0})

    assert check_growth_condition(model, cert, sampler).passed


def test_growth_condition_requires_data(lv_model, sampler):
    with pytest.raises(CertificateError, match="growth"):
        check_growth_condition(lv_model, _cert(), sampler)


def test_nondegeneracy_identity_covariance(lv_params, sampler):
    model = build_zoo_model("competitive_lv", dict(lv_params, sigma=[[1.0, 0.0], [0.0, 1.0]]))
    epsilon = 0.1
    report = check_nondegeneracy(model, sampler, epsilon=epsilon, radius=10.0)

    assert report.passed
    assert report.min_eigenvalue == pytest.approx(1.0)
    # 内部では (x_i x_j σ_ij)^{-1} のノルムは 1/min x_i² ≤ 1/ε²
    assert report.max_inverse_norm <= (1.0 + 1e-9) / epsilon**2


def test_nondegeneracy_detects_singular_noise(sampler):
    model = ModelSpec.from_kolmogorov(
        name="singular",
        n=2,
        r=1.0,
        drift=lambda view: np.zeros_like(view.now),
        g=lambda view: np.ones_like(view.now),
        noise=NoiseSpec(gamma=np.array([[1.0, 1.0], [1.0, 1.0]])),
    )
    report = check_nondegeneracy(model, sampler)

    assert not report.passed
    assert report.pd_violations == report.samples
    assert report.to_dict()["assumption"] == "nondegeneracy"


def test_replicator_nondegenerate_on_tangent_space(replicator_params, sampler):
    # 雑音は単体の接空間に沿うので，全空間では共分散は常に特異
    model = build_zoo_model("replicator", replicator_params)
    samples = sampler.draw(model)
    G = model.diffusion(samples.view())
    assert np.abs(np.einsum("bi,bij->bj", samples.now, G)).max() < 1e-12

    report = check_nondegeneracy(model, sampler)

    assert report.passed
    assert report.space == "simplex-tangent"
    assert report.to_dict()["space"] == "simplex-tangent"
    # G G^T の接空間での最小固有値は min σ_i² 以上
    assert report.min_eigenvalue >= 0.25 - 1e-12


def test_nondegeneracy_rejects_bad_arguments(lv_model, sampler):
    with pytest.raises(ValueError, match="正"):
        check_nondegeneracy(lv_model, sampler, epsilon=0.0)


def test_evaluate_V_on_constant_segment():
    cert = _cert(h={"kappa1": 0.0, "kappa2": 1.0}, lyapunov={"gamma": 0.1, "p0": 0.001})
    segment = Segment.constant([1.0, 2.0], r=1.0, dt=1.0 / 64)

    # 定数セグメントでは (1+cᵀx)·exp(A_2 h(x)(e^{γr}-1)/γ)
    expected = 4.0 * math.exp(0.25 * 6.0 * (math.exp(0.1) - 1.0) / 0.1)
    assert evaluate_V(cert, segment) == pytest.approx(expected, rel=1e-5)


def test_evaluate_V_trapezoid_refinement():
    cert = _cert(h={"kappa1": 0.0, "kappa2": 1.0}, lyapunov={"gamma": 1.0, "p0": 0.001})
    exact = 4.0 * math.exp(0.25 * 6.0 * (math.e - 1.0))

    errors = [
        abs(evaluate_V(cert, Segment.constant([1.0, 2.0], r=1.0, dt=dt)) - exact) for dt in (1 / 8, 1 / 16, 1 / 32)
    ]

    # 台形則は2次収束
    for coarse, fine in zip(errors[:-1], errors[1:]):
        assert 3.5 <= coarse / fine <= 4.5


def test_evaluate_V_infinite_for_negative_power_at_zero():
    cert = _cert(lyapunov={"gamma": 0.01, "rho": [-0.001, 0.0], "p0": 0.001})
    segment = Segment.constant([0.0, 1.0], r=1.0, dt=1.0 / 16)

    with pytest.raises(ValueError, match="無限大"):
        evaluate_V(cert, segment)


def test_evaluate_V_requires_lyapunov_data():
    with pytest.raises(CertificateError, match="lyapunov"):
        evaluate_V(_cert(), Segment.constant([1.0, 1.0], r=1.0, dt=0.25))


def test_certificate_validation():
    with pytest.raises(CertificateError, match="A_1 > A_2"):
        _cert(a1=0.2, a2=0.25)
    with pytest.raises(CertificateError, match="c_i"):
        _cert(c=[1.0, 0.0])
    with pytest.raises(CertificateError, match="B_1 > B_2"):
        _cert(extinction={"p2": 1.0, "b0": 1.0, "b1": 0.5, "b2": 1.0, "b3": 1.0})
    with pytest.raises(CertificateError):
        _cert(unknown=1.0)
    with pytest.raises(CertificateError):
        _cert(mu=[[0.5, 0.3]])


def test_certificate_dimension_checked(sir_model, sampler):
    cert = _cert(c=[1.0, 1.0, 1.0])

    with pytest.raises(CertificateError, match="次元"):
        check_drift_condition(sir_model, cert, sampler)


def test_lyapunov_bounds(lv_model):
    bounds = _cert().lyapunov_bounds(lv_model)

    # σ* = 2，γ_b = 0.04，n = 2
    assert bounds["sigma_star"] == pytest.approx(2.0)
    assert bounds["rho_bound"] == pytest.approx(0.005)
    assert bounds["p0_bound"] == pytest.approx(0.00125)


def test_require_lyapunov_limits(lv_model):
    with pytest.raises(CertificateError, match="γ_b"):
        _cert(lyapunov={"gamma": 0.05, "p0": 0.001}).require_lyapunov(lv_model)
    with pytest.raises(CertificateError, match="p_0"):
        _cert(lyapunov={"gamma": 0.01, "p0": 0.01}).require_lyapunov(lv_model)
    with pytest.raises(CertificateError, match="ρ"):
        _cert(lyapunov={"gamma": 0.01, "rho": [0.01, 0.0], "p0": 0.001}).require_lyapunov(lv_model)


def test_generator_constant(zero_model):
    cert = _lyapunov_cert()

    assert cert.generator_constant(zero_model) == pytest.approx(0.5 - 0.25 * math.exp(0.01))
    quiet = build_zoo_model(
        "competitive_lv",
        {
            "a": [1.0, 1.0],
            "b": [[1.0, 0.0], [0.0, 1.0]],
            "b_hat": [[0.0, 0.0], [0.0, 0.0]],
            "sigma": [[0.01, 0.0], [0.0, 0.01]],
        },
    )
    # A_1 - A_2 e^{γr} = 0.5 - 0.49 e^{0.1} < 0
    steep = _cert(a1=0.5, a2=0.49, gamma_b=1.0, lyapunov={"gamma": 0.1, "p0": 0.001})
    with pytest.raises(CertificateError, match="正ではありません"):
        steep.generator_constant(quiet)


def test_generator_bound_on_zero_model(zero_model):
    segment = Segment.constant([1.0, 1.0], r=1.0, dt=1.0 / 64)
    report = check_generator_bound(zero_model, _lyapunov_cert(), segment, samples=50)

    # 状態が動かないので生成作用素は0，上界は正
    assert report.generator == pytest.approx(0.0, abs=1e-12)
    assert report.bound > 0
    assert report.holds
    assert report.samples == 50


def test_moment_bound_on_zero_model(zero_model):
    segment = Segment.constant([1.0, 1.0], r=1.0, dt=1.0 / 64)
    config = SimConfig(horizon=2.0, seed=0, replicates=2, record_stride=8)
    report = check_moment_bound(zero_model, _lyapunov_cert(), segment, config)

    assert report.holds
    assert report.replicates == 2
    assert report.m_bar == pytest.approx(10.0 * report.v0)


def test_moment_bound_requires_nonnegative_powers(zero_model):
    cert = _cert(lyapunov={"gamma": 0.01, "rho": [-1e-4, 0.0], "p0": 0.001})
    segment = Segment.constant([1.0, 1.0], r=1.0, dt=1.0 / 64)

    with pytest.raises(CertificateError, match="ρ ≥ 0"):
        check_moment_bound(zero_model, cert, segment, SimConfig(horizon=1.0, seed=0))


def test_extinction_bounds_report(lv_model, sampler):
    cert = _cert(extinction={"p2": 0.5, "b0": 100.0, "b1": 2.0, "b2": 1.0, "b3": 100.0})
    reports = check_extinction_bounds(lv_model, cert, sampler)

    assert [r.assumption for r in reports] == ["extinction-drift", "extinction-volatility"]
    assert all(r.samples == 200 for r in reports)

    with pytest.raises(CertificateError, match="extinction"):
        check_extinction_bounds(lv_model, _cert(), sampler)


def test_lipschitz_constants(lv_model, sampler):
    report = check_lipschitz(lv_model, sampler)

    b = np.array([[1.0, 0.5], [0.5, 1.0]])
    b_hat = np.array([[0.0, 0.0], [1.5, 0.0]])
    # G = Γ^T は状態に依らない
    assert report.diffusion_constant == 0.0
    assert report.drift_constant <= np.linalg.norm(b, 2) + np.linalg.norm(b_hat, 2) + 1e-9
    assert report.nonfinite == 0

    with pytest.raises(ValueError, match="perturbation"):
        check_lipschitz(lv_model, sampler, perturbation=0.0)


def test_sampler_is_deterministic_and_bounded(lv_model, sampler):
    first = sampler.draw(lv_model)
    again = sampler.draw(lv_model)

    np.testing.assert_array_equal(first.values, again.values)
    assert first.values.shape == (200, 17, 2)
    assert np.all(first.values >= 0)
    assert np.all(first.sup_norms() <= 50.0 * (1 + 1e-12))
    assert np.all(first.values[0] == 0.0)
    assert first.dt == pytest.approx(1.0 / 16)


def test_sampler_face_and_floor(lv_model):
    sampler = SegmentSampler(samples=50, radius=5.0, seed=1, face=[0])
    samples = sampler.draw(lv_model, floor=0.2)

    assert np.all(samples.values[..., 1] == 0.0)
    assert np.all(samples.values[..., 0] >= 0.2)


def test_sampler_stays_on_simplex(replicator_params):
    model = build_zoo_model("replicator", replicator_params)
    samples = SegmentSampler(samples=30, seed=2).draw(model)

    np.testing.assert_allclose(samples.values.sum(axis=-1), 2.0, rtol=1e-12)
