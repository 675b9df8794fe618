"""Fluorescence detection: Poisson count models, threshold classification, mixture fits."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import IdentifiabilityError, InputError

MODULE = "detect"
THRESHOLD = 3


@dataclass(frozen=True)
class CountModel:
    """Mean counts in one detection window: ``n * mu_bright + mu_dark`` for n bright ions."""

    mu_bright: float = 12.0
    mu_dark: float = 0.2
    window: float = 200e-6

    def __post_init__(self):
        if not (self.mu_dark >= 0 and self.mu_bright > self.mu_dark):
            raise InputError("need mu_bright > mu_dark >= 0", module=MODULE)
        if not self.window > 0:
            raise InputError("detection window must be positive", module=MODULE)

    def mean(self, n_bright):
        return n_bright * self.mu_bright + self.mu_dark


@dataclass(frozen=True)
class PhotonHistogram:
    """``counts[k]`` = number of experiments that detected k photons."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 1 or np.any(c < 0) or not np.all(c == np.round(c)):
            raise InputError("histogram bins must be non-negative integers", module=MODULE)
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def photons(self):
        return np.arange(len(self.counts))

    @classmethod
    def from_samples(cls, samples, n_bins=None):
        samples = np.asarray(samples, dtype=np.int64)
        n_bins = int(samples.max()) + 1 if n_bins is None else n_bins
        return cls(np.bincount(samples, minlength=n_bins))

    def __add__(self, other):
        n = max(len(self.counts), len(other.counts))
        return PhotonHistogram(np.pad(self.counts, (0, n - len(self.counts)))
                               + np.pad(other.counts, (0, n - len(other.counts))))


def sample_counts(n_bright, model: CountModel, shots, rng):
    """Per-shot photon counts for an array (or scalar) of bright-ion numbers."""
    lam = model.mu_bright * np.asarray(n_bright, dtype=float) + model.mu_dark
    return rng.poisson(np.broadcast_to(lam, (shots,) if np.ndim(lam) == 0 else lam.shape))


def simulate_counts(n_bright, model: CountModel = CountModel(), shots=1000, seed=0):
    if n_bright not in (0, 1, 2):
        raise InputError("n_bright must be 0, 1 or 2", module=MODULE)
    if shots < 1:
        raise InputError("shots must be >= 1", module=MODULE)
    rng = np.random.default_rng(seed)
    return PhotonHistogram.from_samples(sample_counts(n_bright, model, shots, rng))


def simulate_mixture(fractions, model: CountModel = CountModel(), shots=5050, seed=0):
    """Per-shot ``(ion_numbers, counts)`` with 0/1/2 bright ions drawn at ``fractions``."""
    f = np.asarray(fractions, dtype=float)
    if f.shape != (3,) or np.any(f < 0) or abs(f.sum() - 1) > 1e-9:
        raise InputError("fractions must be three non-negative weights summing to 1", module=MODULE)
    if shots < 1:
        raise InputError("shots must be >= 1", module=MODULE)
    rng = np.random.default_rng(seed)
    n = rng.choice(3, size=shots, p=f / f.sum())
    return n, sample_counts(n, model, shots, rng)


def classify_spin(counts, threshold=THRESHOLD):
    """``"dark"`` (spin up) for counts <= threshold, otherwise ``"bright"`` (spin down)."""
    counts = np.asarray(counts)
    if np.any(counts < 0):
        raise InputError("counts must be >= 0", module=MODULE)
    out = np.where(counts <= threshold, "dark", "bright")
    return str(out) if out.ndim == 0 else out


def misclassification(model: CountModel = CountModel(), threshold=THRESHOLD):
    """``(P(bright read as dark), P(dark read as bright))`` for one ion."""
    return (float(stats.poisson.cdf(threshold, model.mean(1))),
            float(stats.poisson.sf(threshold, model.mean(0))))


def detection_contrast(model: CountModel = CountModel(), threshold=THRESHOLD):
    """Fringe-contrast factor from imperfect state readout."""
    e_b, e_d = misclassification(model, threshold)
    return 1.0 - e_b - e_d


@dataclass(frozen=True)
class FractionFit:
    fractions: np.ndarray
    stderr: np.ndarray
    log_likelihood: float
    iterations: int


def _component_pmf(hist: PhotonHistogram, model: CountModel):
    k = hist.photons
    return np.array([stats.poisson.pmf(k, model.mean(n)) for n in range(3)])


def fit_ion_fractions(hist: PhotonHistogram, model: CountModel = CountModel(), tol=1e-12, max_iter=10000):
    """Maximum-likelihood weights of the 0/1/2-ion Poisson components (EM).

    Standard errors come from the observed information of the two free weights
    ``(f1, f2)`` with ``f0 = 1 - f1 - f2``.
    """
    if hist.total < 100:
        raise InputError("histogram needs at least 100 experiments", module=MODULE)
    if not model.mu_bright > model.mu_dark:
        raise IdentifiabilityError("components are not identifiable", module=MODULE)
    pmf = _component_pmf(hist, model)
    n_k = hist.counts.astype(float)
    f = np.full(3, 1 / 3)
    prev = -np.inf
    for it in range(1, max_iter + 1):
        mix = f @ pmf
        resp = f[:, None] * pmf / np.where(mix > 0, mix, 1.0)
        f = resp @ n_k / n_k.sum()
        ll = float(n_k @ np.log(np.where(mix > 0, mix, 1e-300)))
        if ll - prev < tol * abs(ll):
            break
        prev = ll
    f = f / f.sum()
    mix = f @ pmf
    d = pmf[1:] - pmf[0]
    w = n_k / np.where(mix > 0, mix, 1.0) ** 2
    info = (d * w) @ d.T
    cov = np.linalg.pinv(info)
    grad0 = np.array([-1.0, -1.0])
    se = np.sqrt(np.maximum([grad0 @ cov @ grad0, cov[0, 0], cov[1, 1]], 0.0))
    return FractionFit(f, se, float(n_k @ np.log(np.where(mix > 0, mix, 1e-300))), it)


def posterior_fractions(samples, prior, model: CountModel = CountModel()):
    """Mean per-shot posterior over ion number, for a given prior."""
    samples = np.asarray(samples)
    like = np.array([stats.poisson.pmf(samples, model.mean(n)) for n in range(3)])
    post = np.asarray(prior)[:, None] * like
    post /= post.sum(axis=0)
    return post.mean(axis=1)


def histogram_to_csv(hist: PhotonHistogram):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["photon_count", "experiments"])
    for k, c in enumerate(hist.counts):
        w.writerow([k, int(c)])
    return buf.getvalue()


def histogram_from_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["photon_count", "experiments"]:
        raise InputError("histogram CSV needs header photon_count,experiments", module=MODULE)
    data = {}
    for r in rows[1:]:
        if not r:
            continue
        try:
            k, c = int(r[0]), int(r[1])
        except (ValueError, IndexError) as exc:
            raise InputError(f"bad histogram row {r!r}", module=MODULE) from exc
        if k < 0 or c < 0:
            raise InputError(f"bad histogram row {r!r}", module=MODULE)
        data[k] = data.get(k, 0) + c
    counts = np.zeros(max(data) + 1 if data else 1, dtype=np.int64)
    for k, c in data.items():
        counts[k] = c
    return PhotonHistogram(counts)


def fractions_to_csv(fit: FractionFit):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n_ions", "fraction", "stderr"])
    for n in range(3):
        w.writerow([n, f"{fit.fractions[n]:.9g}", f"{fit.stderr[n]:.9g}"])
    return buf.getvalue()
