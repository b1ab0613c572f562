"""Rating histograms, Gaussian summaries, binary labels and the distribution losses."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .engine import log_softmax

N_BINS = 10
SIGMA_FLOOR = 0.1
RATINGS = np.arange(1, N_BINS + 1, dtype=np.float64)


class BinaryLabel(enum.IntEnum):
    LOW = 0
    HIGH = 1
    EXCLUDED = -1


@dataclass(frozen=True)
class RatingGaussian:
    mu: float
    sigma: float

    def __post_init__(self):
        if not np.isfinite(self.mu):
            raise ValueError(f"mu must be finite, got {self.mu}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


def _counts(h) -> np.ndarray:
    c = np.asarray(h, dtype=np.float64)
    if c.shape[-1] != N_BINS:
        raise ValueError(f"rating histogram needs {N_BINS} bins, got shape {c.shape}")
    if np.any(c < 0):
        raise ValueError("rating counts must be non-negative")
    if np.any(c.sum(axis=-1) <= 0):
        raise ValueError("rating histogram is empty")
    return c


def mean_rating(h) -> float | np.ndarray:
    c = _counts(h)
    return (c @ RATINGS) / c.sum(axis=-1)


def fit_gaussian(h, sigma_floor=SIGMA_FLOOR) -> RatingGaussian:
    """Moment-matched Gaussian; sigma is floored at ``sigma_floor``."""
    c = _counts(h)
    mu = mean_rating(c)
    var = c @ (RATINGS - mu) ** 2 / c.sum()
    return RatingGaussian(float(mu), float(max(np.sqrt(var), sigma_floor)))


def fit_gaussians(hs, sigma_floor=SIGMA_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``fit_gaussian`` over an (n, 10) array -> (mu, sigma) arrays."""
    c = _counts(hs)
    mu = (c @ RATINGS) / c.sum(axis=1)
    var = ((RATINGS[None, :] - mu[:, None]) ** 2 * c).sum(axis=1) / c.sum(axis=1)
    return mu, np.maximum(np.sqrt(var), sigma_floor)


def quantize_binary(mean: float, delta: float) -> BinaryLabel:
    """Low below 5 - delta, High above 5 + delta, Excluded otherwise (ties excluded)."""
    if delta < 0:
        raise ValueError(f"delta must be non-negative, got {delta}")
    if mean < 5 - delta:
        return BinaryLabel.LOW
    if mean > 5 + delta:
        return BinaryLabel.HIGH
    return BinaryLabel.EXCLUDED


def quantize_many(means, delta) -> np.ndarray:
    return np.array([int(quantize_binary(m, delta)) for m in np.asarray(means, dtype=float)], dtype=int)


def kl_gaussian(n1: RatingGaussian, n2: RatingGaussian, literal_paper_form=False) -> float:
    """KL(n1 || n2) between univariate Gaussians.

    ``literal_paper_form`` uses 2*mu2**2 in place of 2*sigma2**2 in the
    quadratic term, as the formula was originally printed.
    """
    return float(kl_gaussian_arrays(n1.mu, n1.sigma, n2.mu, n2.sigma, literal_paper_form))


def kl_gaussian_arrays(mu1, s1, mu2, s2, literal_paper_form=False):
    mu1, s1, mu2, s2 = (np.asarray(a, dtype=np.float64) for a in (mu1, s1, mu2, s2))
    if np.any(s1 <= 0) or np.any(s2 <= 0):
        raise ValueError("sigmas must be positive")
    if literal_paper_form:
        if np.any(mu2 == 0):
            raise ValueError("literal form is undefined for mu2 == 0")
        denom = 2 * mu2**2
    else:
        denom = 2 * s2**2
    return np.log(s2 / s1) + (s1**2 + (mu1 - mu2) ** 2) / denom - 0.5


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def head_to_gaussian(pred_raw, sigma_floor=SIGMA_FLOOR):
    """Map raw (n, 2[, 1, 1]) head output to (mu, sigma) arrays."""
    r = np.asarray(pred_raw, dtype=np.float64).reshape(len(pred_raw), -1)
    if r.shape[1] != 2:
        raise ValueError(f"Gaussian head needs 2 outputs per image, got {r.shape[1]}")
    return r[:, 0], softplus(r[:, 1]) + sigma_floor


def kl_loss_and_grad(pred_raw, target_mu, target_sigma, sigma_floor=SIGMA_FLOOR,
                     literal_paper_form=False):
    """Mean KL(target || predicted) over the batch and its gradient w.r.t. ``pred_raw``.

    The first head channel is the predicted mean; the second passes through
    softplus plus ``sigma_floor`` to give the predicted standard deviation.
    """
    pred_raw = np.asarray(pred_raw, dtype=np.float64)
    n = len(pred_raw)
    r = pred_raw.reshape(n, -1)
    m1, s1 = np.asarray(target_mu, float), np.asarray(target_sigma, float)
    m2, s2 = head_to_gaussian(r, sigma_floor)
    kl = kl_gaussian_arrays(m1, s1, m2, s2, literal_paper_form)
    quad = s1**2 + (m1 - m2) ** 2
    if literal_paper_form:
        d_m2 = (m2 - m1) / m2**2 - quad / m2**3
        d_s2 = 1.0 / s2
    else:
        d_m2 = (m2 - m1) / s2**2
        d_s2 = 1.0 / s2 - quad / s2**3
    grad = np.stack([d_m2, d_s2 * sigmoid(r[:, 1])], axis=1) / n
    return float(kl.mean()), grad.reshape(pred_raw.shape)


def normalize_histogram(h) -> np.ndarray:
    c = _counts(h)
    return c / c.sum(axis=-1, keepdims=True)


def entropy(h) -> float | np.ndarray:
    p = normalize_histogram(h)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.where(p > 0, p * np.log(p), 0.0).sum(axis=-1)


def _as_batch(logits, h):
    logits = np.asarray(logits, dtype=np.float64)
    z = logits.reshape(-1, N_BINS) if logits.ndim != 1 else logits[None, :]
    p = normalize_histogram(h).reshape(-1, N_BINS)
    if len(p) != len(z):
        raise ValueError(f"{len(z)} logit rows but {len(p)} histograms")
    return logits, z, p


def distribution_softmax_loss(logits, h):
    """Mean cross-entropy between softmax(logits) and the normalized histograms."""
    logits, z, p = _as_batch(logits, h)
    logq = log_softmax(z)
    loss = -(p * logq).sum(axis=1).mean()
    grad = (np.exp(logq) - p) / len(z)
    return float(loss), grad.reshape(logits.shape)


def distribution_kl_loss(logits, h):
    """Mean KL(histogram || softmax(logits)); same gradient as the cross-entropy."""
    loss, grad = distribution_softmax_loss(logits, h)
    _, _, p = _as_batch(logits, h)
    return float(loss - np.mean(entropy(p))), grad


def predicted_mean_from_distribution(logits) -> np.ndarray:
    """Expected rating under softmax(logits) for (n, 10[, 1, 1]) logits."""
    z = np.asarray(logits, dtype=np.float64).reshape(len(logits), N_BINS)
    q = np.exp(log_softmax(z))
    return q @ RATINGS


def gaussian_from_distribution(logits, sigma_floor=SIGMA_FLOOR):
    z = np.asarray(logits, dtype=np.float64).reshape(len(logits), N_BINS)
    q = np.exp(log_softmax(z))
    mu = q @ RATINGS
    var = ((RATINGS[None, :] - mu[:, None]) ** 2 * q).sum(axis=1)
    return mu, np.maximum(np.sqrt(var), sigma_floor)
