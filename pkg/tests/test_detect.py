import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from dualtrap.detect import (
    CountModel,
    PhotonHistogram,
    classify_spin,
    detection_contrast,
    fit_ion_fractions,
    fractions_to_csv,
    histogram_from_csv,
    histogram_to_csv,
    misclassification,
    posterior_fractions,
    simulate_counts,
    simulate_mixture,
)
from dualtrap.errors import IdentifiabilityError, InputError

FRACTIONS = (0.04, 0.95, 0.01)


def poisson_sum(k_max, mu):
    return sum(math.exp(-mu) * mu**k / math.factorial(k) for k in range(k_max + 1))


# -- count simulation ---------------------------------------------------------------

def test_dark_ion_without_background_gives_zero_counts():
    h = simulate_counts(0, CountModel(mu_dark=0.0), shots=3030, seed=1)
    assert h.counts[0] == 3030 and h.total == 3030


@pytest.mark.parametrize("n, mean", [(1, 12.2), (2, 24.2)])
def test_sample_means(n, mean):
    h = simulate_counts(n, shots=200_000, seed=3)
    assert (h.photons @ h.counts) / h.total == pytest.approx(mean, rel=0.005)


def test_simulation_is_deterministic_and_validated():
    a = simulate_counts(1, shots=500, seed=8)
    b = simulate_counts(1, shots=500, seed=8)
    assert np.array_equal(a.counts, b.counts)
    with pytest.raises(InputError):
        simulate_counts(3)
    with pytest.raises(InputError):
        simulate_counts(1, shots=0)
    with pytest.raises(InputError):
        simulate_mixture((0.5, 0.6, 0.0))


def test_count_model_validation():
    with pytest.raises(InputError):
        CountModel(mu_bright=1.0, mu_dark=1.0)
    with pytest.raises(InputError):
        CountModel(mu_dark=-0.1)
    with pytest.raises(InputError):
        CountModel(window=0.0)


# -- classification ----------------------------------------------------------------

def test_threshold_examples():
    assert classify_spin(3) == "dark"
    assert classify_spin(4) == "bright"
    assert classify_spin(0) == "dark"
    with pytest.raises(InputError):
        classify_spin(-1)


@settings(max_examples=50)
@given(st.lists(st.integers(0, 60), min_size=2, max_size=40))
def test_classification_monotone(counts):
    counts = sorted(counts)
    bright = classify_spin(counts) == "bright"
    assert np.all(np.diff(bright.astype(int)) >= 0)


def test_misclassification_matches_direct_summation():
    assert stats.poisson.cdf(3, 12) == pytest.approx(poisson_sum(3, 12.0), abs=1e-12)
    e_b, e_d = misclassification(CountModel(12.0, 0.0))
    assert e_b == pytest.approx(poisson_sum(3, 12.0), abs=1e-6)
    assert e_b == pytest.approx(2.3e-3, rel=0.01)
    assert e_d == 0.0
    e_b, e_d = misclassification()
    assert e_b == pytest.approx(poisson_sum(3, 12.2), abs=1e-12)
    assert e_d == pytest.approx(1 - poisson_sum(3, 0.2), abs=1e-12)
    assert detection_contrast() == pytest.approx(1 - e_b - e_d, rel=1e-12)


# -- mixture fits ----------------------------------------------------------------------

@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fraction_recovery(seed):
    _, counts = simulate_mixture(FRACTIONS, shots=5050, seed=seed)
    fit = fit_ion_fractions(PhotonHistogram.from_samples(counts))
    assert np.allclose(fit.fractions, FRACTIONS, atol=0.015)
    assert fit.fractions.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(fit.fractions >= 0)
    assert np.all(fit.stderr > 0) and np.all(fit.stderr < 0.01)


def test_pure_single_ion_histogram():
    fit = fit_ion_fractions(simulate_counts(1, shots=5000, seed=4))
    assert np.allclose(fit.fractions, (0, 1, 0), atol=0.01)


def test_fit_agrees_with_per_shot_posterior():
    _, counts = simulate_mixture(FRACTIONS, shots=5050, seed=6)
    fit = fit_ion_fractions(PhotonHistogram.from_samples(counts))
    # at the maximum-likelihood point the mean posterior reproduces the weights
    assert np.allclose(posterior_fractions(counts, fit.fractions), fit.fractions, atol=1e-6)
    # under the generating weights the per-shot posteriors average to the same fractions
    assert np.allclose(posterior_fractions(counts, FRACTIONS), fit.fractions, atol=0.01)


def test_fit_requires_enough_shots_and_identifiable_model():
    with pytest.raises(InputError):
        fit_ion_fractions(simulate_counts(1, shots=50))
    flat = SimpleNamespace(mu_bright=1.0, mu_dark=1.0, mean=lambda n: 1.0)
    with pytest.raises(IdentifiabilityError):
        fit_ion_fractions(simulate_counts(1, shots=200), flat)


def test_simulated_histograms_pass_goodness_of_fit():
    model = CountModel()
    edges = [0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 24, 28, 200]
    mix = lambda k: sum(f * stats.poisson.pmf(k, model.mean(n)) for n, f in enumerate(FRACTIONS))  # noqa: E731
    expected = np.array([mix(np.arange(a, b)).sum() for a, b in zip(edges[:-1], edges[1:])])
    passed = 0
    for seed in range(40):
        _, counts = simulate_mixture(FRACTIONS, model, shots=5050, seed=100 + seed)
        observed = np.histogram(counts, bins=edges)[0]
        chi2 = np.sum((observed - 5050 * expected) ** 2 / (5050 * expected))
        passed += stats.chi2.sf(chi2, len(expected) - 1) > 0.01
    assert passed / 40 >= 0.95


# -- file formats ----------------------------------------------------------------------

def test_histogram_csv_round_trip():
    _, counts = simulate_mixture(FRACTIONS, shots=1000, seed=2)
    h = PhotonHistogram.from_samples(counts)
    text = histogram_to_csv(h)
    assert text.splitlines()[0] == "photon_count,experiments"
    back = histogram_from_csv(text)
    assert np.array_equal(back.counts, h.counts)
    assert histogram_to_csv(back) == text


def test_histogram_csv_rejects_bad_rows():
    with pytest.raises(InputError):
        histogram_from_csv("k,n\n0,1\n")
    with pytest.raises(InputError):
        histogram_from_csv("photon_count,experiments\n0,x\n")
    with pytest.raises(InputError):
        histogram_from_csv("photon_count,experiments\n-1,4\n")
    with pytest.raises(InputError):
        PhotonHistogram(np.array([1.5, 2]))


def test_histograms_add():
    a = PhotonHistogram(np.array([1, 2]))
    b = PhotonHistogram(np.array([0, 1, 5]))
    assert np.array_equal((a + b).counts, [1, 3, 5])


def test_fractions_csv_shape():
    fit = fit_ion_fractions(simulate_counts(1, shots=500, seed=0))
    lines = fractions_to_csv(fit).splitlines()
    assert lines[0] == "n_ions,fraction,stderr" and len(lines) == 4
