import numpy as np
import pytest
from scipy import stats

from src.smc.coupling import (
    DensitySampler,
    categorical_sample,
    coupling_probability,
    max_couple_categorical,
    max_couple_generic,
    max_couple_generic_batch,
    normalize,
)
from src.utils.errors import CouplingCapExceeded, DegenerateWeightsError
from src.utils.seeding import make_rng

GAUSSIAN_OVERLAP = 2.0 * stats.norm.cdf(-0.5)  # 1 - TV(N(0,1), N(1,1)) = 0.6171...


def gaussian(mean):
    return DensitySampler(
        sample=lambda rng, size=None: rng.normal(mean, 1.0, size),
        log_density=lambda x: stats.norm.logpdf(x, mean, 1.0),
    )


def uniform_on(lo, hi):
    def log_density(x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= lo) & (x <= hi), -np.log(hi - lo), -np.inf)
    return DensitySampler(sample=lambda rng, size=None: rng.uniform(lo, hi, size), log_density=log_density)


def binomial_ok(successes, n, p, sigmas=3.0):
    return abs(successes / n - p) <= sigmas * np.sqrt(p * (1.0 - p) / n) + 1e-12


def test_normalize_guards_against_overflow():
    probs = normalize([1000.0, 1000.0 + np.log(3.0)])
    assert np.allclose(probs, [0.25, 0.75])


def test_categorical_equal_weights_is_uniform():
    draws = categorical_sample(np.zeros(4), make_rng(0), size=100_000)
    _, p = stats.chisquare(np.bincount(draws, minlength=4))
    assert p > 0.001


def test_categorical_single_support_point():
    draws = categorical_sample([-np.inf, -np.inf, np.log(5.0)], make_rng(1), size=1000)
    assert np.all(draws == 2)
    assert categorical_sample([-np.inf, -np.inf, np.log(5.0)], make_rng(1)) == 2


def test_categorical_frequencies():
    draws = categorical_sample(np.log([1.0, 3.0]), make_rng(2), size=100_000)
    assert binomial_ok(np.sum(draws == 1), draws.size, 0.75)


def test_categorical_degenerate_weights():
    with pytest.raises(DegenerateWeightsError, match="degenerate weight vector"):
        categorical_sample([-np.inf, -np.inf], make_rng(3))
    with pytest.raises(DegenerateWeightsError):
        categorical_sample([0.0, np.nan], make_rng(3))


def test_categorical_coupling_identical_weights():
    i, j = max_couple_categorical(np.log([1.0, 2.0, 3.0]), np.log([1.0, 2.0, 3.0]), make_rng(4), size=1000)
    assert np.array_equal(i, j)


def test_categorical_coupling_disjoint_supports():
    i, j = max_couple_categorical([0.0, -np.inf], [-np.inf, 0.0], make_rng(5), size=1000)
    assert np.all(i == 0) and np.all(j == 1)


def test_categorical_coupling_meeting_probability():
    lwa, lwb = np.log([1.0, 1.0]), np.log([1.0, 3.0])
    assert coupling_probability(lwa, lwb) == pytest.approx(0.75)
    i, j = max_couple_categorical(lwa, lwb, make_rng(6), size=100_000)
    assert binomial_ok(np.sum(i == j), i.size, 0.75)
    assert binomial_ok(np.sum(i == 1), i.size, 0.5)
    assert binomial_ok(np.sum(j == 1), j.size, 0.75)


def test_categorical_coupling_scalar_draws():
    rng = make_rng(7)
    pairs = [max_couple_categorical(np.log([1.0, 1.0]), np.log([1.0, 3.0]), rng) for _ in range(5000)]
    i, j = np.array(pairs).T
    assert isinstance(pairs[0][0], int)
    assert binomial_ok(np.sum(i == j), i.size, 0.75, sigmas=4.0)


def test_categorical_coupling_uses_two_uniforms():
    """One uniform picks the branch and the first index; a second one the other residual."""
    rng = make_rng(20)
    max_couple_categorical(np.log([0.2, 0.5, 0.3]), np.log([0.6, 0.1, 0.3]), rng)
    reference = make_rng(20)
    reference.random(2)
    assert rng.random() == reference.random()


def test_categorical_coupling_length_mismatch():
    with pytest.raises(ValueError):
        max_couple_categorical([0.0, 0.0], [0.0, 0.0, 0.0], make_rng(8))


def test_categorical_coupling_is_exchangeable():
    lwa, lwb = np.log([0.2, 0.5, 0.3]), np.log([0.6, 0.1, 0.3])
    i, j = max_couple_categorical(lwa, lwb, make_rng(9), size=50_000)
    k, l = max_couple_categorical(lwb, lwa, make_rng(10), size=50_000)
    p = coupling_probability(lwa, lwb)
    assert binomial_ok(np.sum(i == j), i.size, p, sigmas=4.0)
    assert binomial_ok(np.sum(k == l), k.size, p, sigmas=4.0)


def test_bounded_weights_share_every_index():
    # weights in [1, 4]: P(I = J = i) >= (1/4) / (N + 1)
    rng = make_rng(11)
    N = 7
    for _ in range(5):
        lwa, lwb = np.log(rng.uniform(1.0, 4.0, (2, N + 1)))
        common = np.minimum(normalize(lwa), normalize(lwb))
        assert np.all(common >= 0.25 / (N + 1))
        i, j = max_couple_categorical(lwa, lwb, rng, size=50_000)
        for idx in range(N + 1):
            rate = np.mean((i == idx) & (j == idx))
            floor = 0.25 / (N + 1)
            assert rate >= floor - 3.0 * np.sqrt(floor * (1.0 - floor) / i.size)


def test_generic_coupling_identical_laws_always_meet():
    rng = make_rng(12)
    for _ in range(200):
        x, y, met = max_couple_generic(gaussian(0.0), gaussian(0.0), rng)
        assert met and x == y


def test_generic_coupling_disjoint_laws_never_meet():
    rng = make_rng(13)
    for _ in range(200):
        x, y, met = max_couple_generic(uniform_on(0.0, 1.0), uniform_on(2.0, 3.0), rng)
        assert not met
        assert 0.0 <= x <= 1.0 and 2.0 <= y <= 3.0


def test_generic_coupling_gaussian_overlap():
    rng = make_rng(14)
    met = [max_couple_generic(gaussian(0.0), gaussian(1.0), rng)[2] for _ in range(20_000)]
    assert np.mean(met) == pytest.approx(GAUSSIAN_OVERLAP, abs=0.02)


def test_generic_coupling_cap():
    stubborn_p = DensitySampler(sample=lambda rng, size=None: 0.0, log_density=lambda x: 0.0)
    stubborn_q = DensitySampler(sample=lambda rng, size=None: 1.0, log_density=lambda x: -50.0)
    with pytest.raises(CouplingCapExceeded):
        max_couple_generic(stubborn_p, stubborn_q, make_rng(15), cap=10)


def test_batch_coupling_gaussian_overlap_and_marginals():
    x, y, met = max_couple_generic_batch(gaussian(0.0), gaussian(1.0), 100_000, make_rng(16))
    assert np.mean(met) == pytest.approx(GAUSSIAN_OVERLAP, abs=0.01)
    assert np.array_equal(x[met], y[met])
    assert stats.kstest(x, stats.norm(0.0, 1.0).cdf).pvalue > 0.001
    assert stats.kstest(y, stats.norm(1.0, 1.0).cdf).pvalue > 0.001


def test_batch_coupling_is_exchangeable():
    _, _, met_ab = max_couple_generic_batch(gaussian(0.0), gaussian(1.0), 50_000, make_rng(17))
    _, _, met_ba = max_couple_generic_batch(gaussian(1.0), gaussian(0.0), 50_000, make_rng(18))
    assert abs(met_ab.mean() - met_ba.mean()) < 0.015


@pytest.mark.slow
def test_categorical_coupling_exact_on_random_weights():
    rng = make_rng(19)
    for _ in range(20):
        lwa, lwb = rng.normal(0.0, 1.0, (2, 8))
        i, j = max_couple_categorical(lwa, lwb, rng, size=100_000)
        assert binomial_ok(np.sum(i == j), i.size, coupling_probability(lwa, lwb))


@pytest.mark.slow
def test_generic_coupling_acceptance():
    rng = make_rng(20)
    draws = np.array([max_couple_generic(gaussian(0.0), gaussian(1.0), rng) for _ in range(100_000)])
    x, y, met = draws[:, 0], draws[:, 1], draws[:, 2].astype(bool)
    assert np.mean(met) == pytest.approx(GAUSSIAN_OVERLAP, abs=0.01)
    direct = make_rng(21).normal(0.0, 1.0, 100_000)
    assert stats.ks_2samp(x, direct).pvalue > 0.001
    assert stats.ks_2samp(y, direct + 1.0).pvalue > 0.001
