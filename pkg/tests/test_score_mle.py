import numpy as np
import pytest
from scipy.optimize import approx_fprime

from src.bench.oracles import kalman_mle, kalman_score
from src.estimation_engine import LagChoice
from src.models.data_models import (
    AdamState,
    CouplingStrategy,
    MeetingRecord,
    SVParams,
    TransformedParams,
    UnbiasedEstimate,
)
from src.models.feynman_kac import simulate_lg_data, simulate_sv_data
from src.smc.kernels import cbpf_transition, particle_filter
from src.score_mle import (
    LinearGaussianFamily,
    SVFamily,
    adam_step,
    log_joint_gradient,
    mle_fit,
    sv_initial_params,
)
from src.utils.errors import EstimatorCapExceeded, NonFiniteGradientError
from src.utils.seeding import make_rng
from src.utils.transforms import jacobian_diagonal, to_constrained, to_raw


def numeric_gradient(f, at):
    return approx_fprime(np.asarray(at, dtype=float), f, 1e-6)


@pytest.fixture
def lg_data():
    return simulate_lg_data(0.8, 1.2, 0.7, 15, make_rng(0))


@pytest.fixture
def sv_data():
    return simulate_sv_data(SVParams(mu=-1.0, phi=0.9, rho=-0.5, sigma=0.3), 15, make_rng(1))


def test_linear_gaussian_gradient_matches_finite_differences(lg_data):
    x, y = lg_data
    family = LinearGaussianFamily(y)
    theta = np.array([0.7, 1.3, 0.8])
    expected = numeric_gradient(lambda th: family.log_joint(th, x), theta)
    assert np.allclose(family.constrained_gradient(theta, x), expected, rtol=1e-4, atol=1e-4)


@pytest.mark.parametrize("stationary_variance", ["printed", "phi"])
def test_sv_gradient_matches_finite_differences(sv_data, stationary_variance):
    x, y = sv_data
    family = SVFamily(y, stationary_variance=stationary_variance)
    theta = np.array([-0.8, 0.85, -0.4, 0.35])
    expected = numeric_gradient(lambda th: family.log_joint(th, x), theta)
    assert np.allclose(family.constrained_gradient(theta, x), expected, rtol=1e-4, atol=1e-4)


@pytest.mark.parametrize("family_cls,constrained", [
    (LinearGaussianFamily, [0.6, 0.9, 1.4]),
    (SVFamily, [-1.2, 0.7, -0.3, 0.5]),
])
def test_raw_gradient_applies_the_jacobian(lg_data, sv_data, family_cls, constrained):
    x, y = lg_data if family_cls is LinearGaussianFamily else sv_data
    family = family_cls(y)
    theta = TransformedParams.from_constrained(constrained, family.transforms)
    expected = numeric_gradient(lambda u: family.log_joint(to_constrained(u, family.transforms), x),
                                theta.raw_array())
    assert np.allclose(log_joint_gradient(family, theta, x), expected, rtol=1e-4, atol=1e-4)


def test_gradient_data_override(lg_data):
    x, y = lg_data
    theta = TransformedParams.from_constrained([0.5, 1.0, 1.0], LinearGaussianFamily.transforms)
    other = y[::-1].copy()
    assert np.allclose(log_joint_gradient(LinearGaussianFamily(y), theta, x, data=other),
                       log_joint_gradient(LinearGaussianFamily(other), theta, x))


def test_non_finite_gradient_names_the_time_index(lg_data):
    x, y = lg_data
    x = x.copy()
    x[3] = np.nan
    with pytest.raises(NonFiniteGradientError) as info:
        LinearGaussianFamily(y).constrained_gradient([0.5, 1.0, 1.0], x)
    assert info.value.time_index == 3


def test_adam_first_step_has_learning_rate_size():
    state, delta = adam_step(AdamState.fresh(2), [4.0, -0.5])
    assert state.step == 1
    assert np.allclose(delta, [0.01, -0.01], rtol=1e-6)
    assert np.allclose(state.m, [0.4, -0.05])


def test_adam_zero_gradient_does_not_move():
    _, delta = adam_step(AdamState.fresh(3), np.zeros(3))
    assert np.all(delta == 0.0)


def test_adam_dimension_mismatch():
    with pytest.raises(ValueError):
        adam_step(AdamState.fresh(2), [1.0, 2.0, 3.0])


def test_adam_ascends_a_concave_objective():
    state = AdamState.fresh(1, alpha=0.05)
    x = np.array([0.0])
    for _ in range(2000):
        state, delta = adam_step(state, -2.0 * (x - 3.0))
        x = x + delta
    assert x[0] == pytest.approx(3.0, abs=0.1)


def test_transforms_round_trip():
    kinds = ["identity", "log", "logit"]
    values = np.array([-2.5, 0.3, -0.95])
    assert np.allclose(to_constrained(to_raw(values, kinds), kinds), values)
    raw = np.array([0.4, -1.0, 2.0])
    eps = 1e-6
    numeric = (to_constrained(raw + eps, kinds) - to_constrained(raw - eps, kinds)) / (2 * eps)
    assert np.allclose(jacobian_diagonal(raw, kinds), numeric, rtol=1e-6)


def test_transforms_reject_out_of_range_values():
    with pytest.raises(ValueError):
        to_raw([0.0], ["log"])
    with pytest.raises(ValueError):
        to_raw([1.0], ["logit"])
    with pytest.raises(ValueError):
        to_constrained([0.0], ["softplus"])


def test_sv_initial_params():
    y = [1.0, -1.0, 1.0, -1.0]
    printed = sv_initial_params(y)
    assert np.allclose(printed.constrained(), [1.0, 0.0, 0.0, 1.0])
    assert list(printed.transforms) == ["identity", "logit", "logit", "log"]
    assert sv_initial_params(y, mu_init="log").constrained()[0] == pytest.approx(0.0)
    with pytest.raises(ValueError):
        sv_initial_params(y, mu_init="other")


def test_mle_zero_iterations_returns_the_initial_point(lg_data):
    _, y = lg_data
    init = TransformedParams.from_constrained([0.5, 1.0, 1.0], LinearGaussianFamily.transforms)
    trace = mle_fit(LinearGaussianFamily(y), None, init, 8, CouplingStrategy.IMC, "markovian", 0, make_rng(2))
    assert len(trace) == 1
    assert trace[0].iteration == 0
    assert trace[0].grad_norm == 0.0
    assert np.allclose(trace[0].constrained, [0.5, 1.0, 1.0])


def test_mle_rejects_bad_arguments(lg_data):
    _, y = lg_data
    init = TransformedParams.from_constrained([0.5, 1.0, 1.0], LinearGaussianFamily.transforms)
    with pytest.raises(ValueError):
        mle_fit(LinearGaussianFamily(y), None, init, 8, CouplingStrategy.IMC, "sgd", 1, make_rng(3))
    with pytest.raises(ValueError):
        mle_fit(LinearGaussianFamily(y), None, init, 8, CouplingStrategy.IMC, "markovian", -1, make_rng(3))


def test_mle_markovian_schedule(lg_data, buffers):
    _, y = lg_data
    init = TransformedParams.from_constrained([0.5, 1.0, 1.0], LinearGaussianFamily.transforms)
    trace = mle_fit(LinearGaussianFamily(y), None, init, 8, CouplingStrategy.IMC, "markovian", 5, make_rng(4),
                    buffers=buffers)
    assert [row.iteration for row in trace] == list(range(6))
    assert all(row.meeting_tau is None for row in trace)
    rho, sx, sy = trace[-1].constrained
    assert -1.0 < rho < 1.0 and sx > 0.0 and sy > 0.0
    assert np.allclose(to_constrained(trace[-1].raw, LinearGaussianFamily.transforms), trace[-1].constrained)


def test_mle_unbiased_schedule(lg_data, buffers):
    _, y = lg_data
    init = TransformedParams.from_constrained([0.5, 1.0, 1.0], LinearGaussianFamily.transforms)
    trace = mle_fit(LinearGaussianFamily(y), None, init, 8, CouplingStrategy.IMC, "unbiased", 2, make_rng(5),
                    pilot_runs=10, buffers=buffers)
    assert len(trace) == 3
    assert all(row.meeting_tau >= 1 for row in trace[1:])
    assert all(row.grad_norm > 0.0 for row in trace[1:])
    assert "Tuned lag" in buffers.dump("progress")


def test_mle_retries_once_after_cap(mocker, lg_data, buffers):
    _, y = lg_data
    init = TransformedParams.from_constrained([0.5, 1.0, 1.0], LinearGaussianFamily.transforms)
    estimate = UnbiasedEstimate(value=[0.1, -0.2, 0.3], k=1, ell=5, L=1, meeting=MeetingRecord(tau=4))
    mocker.patch("src.score_mle.tune_lag", return_value=LagChoice(1, 1, 5, 2))
    averaged = mocker.patch("src.score_mle.averaged_estimate", side_effect=[EstimatorCapExceeded(50), estimate])

    trace = mle_fit(LinearGaussianFamily(y), None, init, 8, CouplingStrategy.IMC, "unbiased", 1, make_rng(6),
                    buffers=buffers)
    assert averaged.call_count == 2
    first_rng = averaged.call_args_list[0].args[7]
    second_rng = averaged.call_args_list[1].args[7]
    assert first_rng is not second_rng
    assert trace[1].meeting_tau == 4
    assert trace[1].grad_norm == pytest.approx(np.linalg.norm([0.1, -0.2, 0.3]))
    assert "retrying with a fresh seed" in buffers.dump("diagnostics")


def test_mle_second_cap_propagates(mocker, lg_data):
    _, y = lg_data
    init = TransformedParams.from_constrained([0.5, 1.0, 1.0], LinearGaussianFamily.transforms)
    mocker.patch("src.score_mle.tune_lag", return_value=LagChoice(1, 1, 5, 2))
    mocker.patch("src.score_mle.averaged_estimate", side_effect=EstimatorCapExceeded(50))
    with pytest.raises(EstimatorCapExceeded):
        mle_fit(LinearGaussianFamily(y), None, init, 8, CouplingStrategy.IMC, "unbiased", 1, make_rng(7))


def test_mle_passes_pilot_tau_to_the_estimator(mocker, lg_data):
    _, y = lg_data
    init = TransformedParams.from_constrained([0.5, 1.0, 1.0], LinearGaussianFamily.transforms)
    estimate = UnbiasedEstimate(value=[0.0, 0.0, 0.0], k=1, ell=5, L=1, meeting=MeetingRecord(tau=3))
    mocker.patch("src.score_mle.tune_lag", return_value=LagChoice(1, 1, 5, 7))
    averaged = mocker.patch("src.score_mle.averaged_estimate", return_value=estimate)
    mle_fit(LinearGaussianFamily(y), None, init, 8, CouplingStrategy.IMC, "unbiased", 1, make_rng(12))
    assert averaged.call_args.kwargs["tau_hint"] == 7


@pytest.mark.slow
def test_fisher_identity_score_matches_kalman_score():
    """The smoothing mean of the log-joint gradient is the exact score."""
    theta = np.array([0.9, 1.0, 1.0])
    _, y = simulate_lg_data(*theta, 20, make_rng(13))
    family = LinearGaussianFamily(y)
    model = family.build(theta)
    rng = make_rng(14)
    grads = []
    for _ in range(400):
        path = particle_filter(model, 32, rng)
        for _ in range(10):
            path = cbpf_transition(model, path, 32, rng).path
        grads.append(family.constrained_gradient(theta, path))
    grads = np.array(grads)
    se = grads.std(axis=0) / np.sqrt(len(grads))
    assert np.all(np.abs(grads.mean(axis=0) - kalman_score(theta, y)) < 3.0 * se)


@pytest.mark.slow
def test_markovian_mle_approaches_the_kalman_mle():
    _, y = simulate_lg_data(0.9, 1.0, 1.0, 100, make_rng(8))
    target = kalman_mle(y)
    init = TransformedParams.from_constrained([0.5, 1.0, 1.0], LinearGaussianFamily.transforms)
    trace = mle_fit(LinearGaussianFamily(y), None, init, 32, CouplingStrategy.IMC, "markovian", 5000,
                    make_rng(9))
    tail = np.mean([row.constrained for row in trace[-1000:]], axis=0)
    assert np.allclose(tail, target, atol=0.1)


@pytest.mark.slow
def test_markovian_mle_recovers_sv_parameters():
    theta = SVParams(mu=-9.2, phi=0.97, rho=-0.67, sigma=0.20)
    _, y = simulate_sv_data(theta, 2000, make_rng(10))
    trace = mle_fit(SVFamily(y), None, sv_initial_params(y, mu_init="log"), 32, CouplingStrategy.IMC,
                    "markovian", 5000, make_rng(11))
    assert np.all(np.isfinite([row.raw for row in trace]))
    mu, phi, rho, sigma = np.mean([row.constrained for row in trace[-1000:]], axis=0)
    assert abs(phi - theta.phi) < 0.03
    assert abs(sigma - theta.sigma) < 0.05
