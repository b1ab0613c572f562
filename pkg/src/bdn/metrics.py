"""Evaluation: binary accuracy, average Gaussian KL, mean-error fraction and
re-binarized accuracy."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .arch import BdnModel, Head
from .data import Dataset, DatasetManifest, batch_iterator
from .engine import softmax
from .rating import (BinaryLabel, fit_gaussians, gaussian_from_distribution, head_to_gaussian,
                     kl_gaussian_arrays, mean_rating, quantize_many)


@dataclass
class Predictions:
    ids: list[str]
    head: Head
    p_high: np.ndarray | None = None  # binary head
    mu: np.ndarray | None = None      # Gaussian / distribution heads
    sigma: np.ndarray | None = None

    def __post_init__(self):
        self.head = Head(self.head)
        if self.head is Head.BINARY and self.p_high is None:
            raise ValueError("binary predictions need p_high")
        if self.head is not Head.BINARY and (self.mu is None or self.sigma is None):
            raise ValueError(f"{self.head.value} predictions need mu and sigma")

    def labels(self) -> np.ndarray:
        """Predicted High(1)/Low(0): p_high > 0.5 or predicted mean > 5."""
        if self.head is Head.BINARY:
            return (np.asarray(self.p_high) > 0.5).astype(int)
        return (np.asarray(self.mu) > 5.0).astype(int)

    def to_lines(self) -> list[str]:
        names = np.where(self.labels() == 1, "high", "low")
        if self.head is Head.BINARY:
            return [f"{i},{lab},{p!r}" for i, lab, p in zip(self.ids, names, map(float, self.p_high))]
        return [f"{i},{lab},{float(m)!r},{float(s)!r}"
                for i, lab, m, s in zip(self.ids, names, self.mu, self.sigma)]

    @classmethod
    def from_lines(cls, lines, head) -> "Predictions":
        head = Head(head)
        rows = [ln.strip().split(",") for ln in lines if ln.strip()]
        width = 3 if head is Head.BINARY else 4
        for k, r in enumerate(rows, 1):
            if len(r) != width:
                raise ValueError(f"prediction line {k}: expected {width} fields, got {len(r)}")
        ids = [r[0] for r in rows]
        if head is Head.BINARY:
            return cls(ids, head, p_high=np.array([float(r[2]) for r in rows]))
        return cls(ids, head, mu=np.array([float(r[2]) for r in rows]),
                   sigma=np.array([float(r[3]) for r in rows]))


def predict(model: BdnModel, data: Dataset, batch_size=64) -> Predictions:
    ids, outs = [], []
    for b in batch_iterator(data, batch_size, mode="eval"):
        outs.append(model.predict(b.images))
        ids += b.ids
    raw = np.concatenate(outs) if outs else np.zeros((0, 2))
    if model.head is Head.BINARY:
        return Predictions(ids, model.head, p_high=softmax(raw)[:, 1])
    if model.head is Head.GAUSSIAN:
        mu, sigma = head_to_gaussian(raw)
    else:
        mu, sigma = gaussian_from_distribution(raw)
    return Predictions(ids, model.head, mu=mu, sigma=sigma)


@dataclass
class EvalReport:
    delta: float
    n_images: int
    head: str
    binary_accuracy: float | None = None
    n_scored: int = 0
    confusion: dict = field(default_factory=dict)
    average_kl: float | None = None
    mean_within_1: float | None = None
    rebinarized_accuracy: float | None = None

    def to_records(self) -> list[str]:
        out = []
        for k, v in asdict(self).items():
            if isinstance(v, dict):
                out += [f"{k}.{kk},{vv}" for kk, vv in sorted(v.items())]
            elif v is not None:
                out.append(f"{k},{v!r}" if isinstance(v, float) else f"{k},{v}")
        return out

    def summary(self) -> str:
        lines = [f"evaluation of {self.n_images} images ({self.head} head, delta={self.delta})"]
        if self.binary_accuracy is not None:
            lines.append(f"  binary accuracy      {self.binary_accuracy:.4f} over {self.n_scored} images")
        if self.average_kl is not None:
            lines.append(f"  average KL           {self.average_kl:.4f}")
            lines.append(f"  |mu_hat - mu| < 1    {self.mean_within_1:.4f}")
            lines.append(f"  re-binarized acc.    {self.rebinarized_accuracy:.4f} over {self.n_scored} images")
        if self.confusion:
            c = self.confusion
            lines.append(f"  confusion            tp={c['tp']} tn={c['tn']} fp={c['fp']} fn={c['fn']}")
        return "\n".join(lines)


def compute_metrics(pred: Predictions, manifest: DatasetManifest, delta: float = 0.0) -> EvalReport:
    """Score predictions against the manifest's rating histograms.

    Images whose ground-truth mean falls in the delta band are left out of
    every accuracy denominator.
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    index = {r.image_id: k for k, r in enumerate(manifest.records)}
    missing = [i for i in pred.ids if i not in index]
    if missing:
        raise ValueError(f"predictions for unknown images: {missing[:5]}")
    if not pred.ids:
        raise ValueError("no predictions to evaluate")
    rows = [index[i] for i in pred.ids]
    hists = manifest.histograms[rows]
    gt_mu, gt_sigma = fit_gaussians(hists)
    truth = quantize_many(mean_rating(hists), delta)
    scored = truth != BinaryLabel.EXCLUDED
    guess = pred.labels()
    report = EvalReport(delta=float(delta), n_images=len(rows), head=pred.head.value,
                        n_scored=int(scored.sum()))
    if scored.any():
        t, g = truth[scored], guess[scored]
        report.confusion = {"tp": int(np.sum((t == 1) & (g == 1))), "tn": int(np.sum((t == 0) & (g == 0))),
                            "fp": int(np.sum((t == 0) & (g == 1))), "fn": int(np.sum((t == 1) & (g == 0)))}
        acc = float(np.mean(t == g))
    else:
        acc = None
    if pred.head is Head.BINARY:
        report.binary_accuracy = acc
    else:
        mu, sigma = np.asarray(pred.mu, float), np.asarray(pred.sigma, float)
        report.average_kl = float(np.mean(kl_gaussian_arrays(gt_mu, gt_sigma, mu, sigma)))
        report.mean_within_1 = float(np.mean(np.abs(mu - gt_mu) < 1.0))
        report.rebinarized_accuracy = acc
    return report
