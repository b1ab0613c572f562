"""Staged training: SCAE pretraining, per-style pathway training, and joint
fine-tuning of the assembled network with plateau annealing."""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import arch
from .arch import BdnModel, Head, Variant, composite_label_loss
from .augment import parse_pipeline
from .data import Dataset, batch_iterator
from .engine import Conv, GlobalAvgPool, Sequential, mse_loss, softmax_xent
from .optim import SGD
from .rating import (SIGMA_FLOOR, BinaryLabel, distribution_kl_loss, distribution_softmax_loss,
                     fit_gaussians, kl_loss_and_grad, mean_rating, quantize_many)

log = logging.getLogger(__name__)

STAGE_CODES = {"scae": 1, "pathway": 2, "finetune": 3, "composite": 4}
INIT = 1_000_000  # epoch slot used for initialization seeds


@dataclass
class TrainConfig:
    batch_size: int = 128
    eta_scae: float = 0.05
    eta_pathway: float = 0.01
    eta_prime_pathway_ft: float = 0.001
    rho_synthesis: float = 0.01
    momentum: float = 0.9
    plateau_patience: int = 5
    plateau_min_delta: float = 1e-3
    max_anneals: int = 2
    augment: str = "default"
    seed: int = 0
    epochs_scae: int = 20
    epochs_pathway: int = 30
    epochs_finetune: int = 50
    val_fraction: float = 0.1
    delta: float = 0.0
    profile: str = "desk"
    head_warm_start: bool = True

    def __post_init__(self):
        for name in ("eta_scae", "eta_pathway", "eta_prime_pathway_ft", "rho_synthesis"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")
        arch.get_profile(self.profile)
        parse_pipeline(self.augment)

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        """Parse ``key = value`` lines ('#' starts a comment)."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (p.strip() for p in line.partition("="))
            if not sep:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            if key not in types:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _coerce(types[key], value, lineno)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(), **overrides)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(self).items())


def _coerce(type_name, value, lineno):
    try:
        if type_name == "bool":
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if type_name == "int":
            return int(value)
        if type_name == "float":
            return float(value)
        return value
    except ValueError:
        raise ValueError(f"config line {lineno}: cannot parse {value!r} as {type_name}") from None


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def append(self, **rec):
        self.records.append(rec)
        log.info("%s", rec)

    def anneal_events(self) -> list[dict]:
        return [r for r in self.records if r.get("event") == "anneal"]

    def without_clock(self) -> list[dict]:
        return [{k: v for k, v in r.items() if k != "wall"} for r in self.records]

    def write(self, path):
        with open(path, "w") as f:
            for r in self.records:
                f.write(json.dumps(r, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "TrainLog":
        return cls([json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()])


class PlateauDetector:
    """Fires when the best loss has not improved by ``min_delta`` for ``patience`` epochs."""

    def __init__(self, patience=5, min_delta=1e-3, max_fires=2):
        self.patience, self.min_delta, self.max_fires = patience, min_delta, max_fires
        self.best = np.inf
        self.bad = 0
        self.fires = 0

    def update(self, loss: float) -> bool:
        if loss < self.best - self.min_delta:
            self.best = loss
            self.bad = 0
            return False
        self.bad += 1
        if self.bad >= self.patience and self.fires < self.max_fires:
            self.fires += 1
            self.bad = 0
            return True
        return False


def plateau_detector(losses, patience=5, min_delta=1e-3, max_fires=2) -> list[int]:
    """1-based epochs at which annealing fires for a sequence of validation losses."""
    det = PlateauDetector(patience, min_delta, max_fires)
    return [e for e, loss in enumerate(losses, 1) if det.update(loss)]


def _rng(config, stage, *extra):
    return np.random.default_rng([config.seed, STAGE_CODES[stage], *extra])


def split_indices(n, config, stage="finetune", eligible=None):
    """Deterministic (train, validation) index split by ``config.seed``."""
    idx = np.arange(n) if eligible is None else np.asarray(eligible)
    perm = np.random.default_rng([config.seed, 99]).permutation(idx)
    n_val = int(round(len(perm) * config.val_fraction))
    if config.val_fraction > 0 and len(perm) > 1:
        n_val = max(n_val, 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _epoch_seed(config, stage, epoch, *extra):
    return int(_rng(config, stage, epoch, *extra).integers(2**63))


# -- stage 1 -----------------------------------------------------------------------

def reconstruction_loss(scae: Sequential, data: Dataset, batch_size=64) -> float:
    total, count = 0.0, 0
    for b in batch_iterator(data, batch_size, mode="eval"):
        x = arch.to_input(b.images)
        loss, _ = mse_loss(scae.forward(x), x)
        total += loss * len(b.ids)
        count += len(b.ids)
    return total / count


def pretrain_scae(data: Dataset, config: TrainConfig, train_log: TrainLog | None = None,
                  seed=None) -> Sequential:
    """Unsupervised reconstruction training at the fixed rate ``eta_scae``."""
    if len(data) == 0:
        raise ValueError("cannot pretrain on an empty dataset")
    train_log = TrainLog() if train_log is None else train_log
    scae = arch.build_scae(_epoch_seed(config, "scae", INIT) if seed is None else seed, config.profile)
    opt = SGD({"scae": scae.params()}, {"scae": config.eta_scae}, config.momentum)
    train_log.append(stage="scae", epoch=0, lr_scae=config.eta_scae,
                     train_loss=reconstruction_loss(scae, data), wall=time.time())
    for epoch in range(1, config.epochs_scae + 1):
        total, count = 0.0, 0
        for b in batch_iterator(data, config.batch_size, (), _epoch_seed(config, "scae", epoch)):
            x = arch.to_input(b.images)
            opt.zero_grad()
            loss, g = mse_loss(scae.forward(x, training=True), x)
            scae.backward(g, need_input_grad=False)
            opt.step()
            total += loss * len(b.ids)
            count += len(b.ids)
        train_log.append(stage="scae", epoch=epoch, lr_scae=config.eta_scae,
                         train_loss=total / count, wall=time.time())
    return scae


# -- stage 2 -----------------------------------------------------------------------

def style_accuracy(pathway: Sequential, data: Dataset, style_index, indices=None, batch_size=64) -> float:
    correct, count = 0, 0
    for b in batch_iterator(data, batch_size, mode="eval", indices=indices):
        p = arch.pathway_predict_style(pathway, b.images)
        correct += int(np.sum(p.argmax(axis=1) == b.flags[:, style_index]))
        count += len(b.ids)
    return correct / count


def train_pathway(data: Dataset, style_index: int, scae: Sequential | None, config: TrainConfig,
                  train_log: TrainLog | None = None, return_head=False) -> Sequential:
    """Supervised training of one pathway on its binary individual label.

    Returns conv1-conv3 only unless ``return_head`` is set.
    """
    labels = data.manifest.flags[:, style_index]
    if labels.sum() == 0:
        raise ValueError(f"style {style_index} has no positive examples")
    train_log = TrainLog() if train_log is None else train_log
    net = arch.build_pathway(_epoch_seed(config, "pathway", INIT, style_index), config.profile, scae=scae)
    tr, va = split_indices(len(data), config, "pathway")
    opt = SGD({"pathway": net.params()}, {"pathway": config.eta_pathway}, config.momentum)
    ops = parse_pipeline(config.augment)
    for epoch in range(1, config.epochs_pathway + 1):
        total, count = 0.0, 0
        seed = _epoch_seed(config, "pathway", epoch, style_index)
        for b in batch_iterator(data, config.batch_size, ops, seed, indices=tr):
            opt.zero_grad()
            out = net.forward(arch.to_input(b.images), training=True, rng=seed + count)
            loss, g = softmax_xent(out, b.flags[:, style_index])
            net.backward(g, need_input_grad=False)
            opt.step()
            total += loss * len(b.ids)
            count += len(b.ids)
        rec = dict(stage="pathway", style=style_index, epoch=epoch, lr_pathway=config.eta_pathway,
                   train_loss=total / count)
        if len(va):
            rec["val_accuracy"] = style_accuracy(net, data, style_index, va)
        train_log.append(**rec, wall=time.time())
    return net if return_head else arch.headless(net)


def unsupervised_attributes(scae: Sequential, n_pathways: int, config: TrainConfig) -> list[Sequential]:
    """BFCN attribute stage: SCAE-initialized conv1/conv2, label-free conv3."""
    return [arch.headless(arch.build_pathway(_epoch_seed(config, "pathway", INIT, 100 + i),
                                             config.profile, scae=scae))
            for i in range(n_pathways)]


def train_composite_attributes(data: Dataset, style_indices, scae, config: TrainConfig,
                               train_log: TrainLog | None = None) -> list[Sequential]:
    """BDN-WP attribute stage: the bound pathway stack trained on one composite label."""
    train_log = TrainLog() if train_log is None else train_log
    k = len(style_indices)
    pathways = [arch.headless(arch.build_pathway(_epoch_seed(config, "composite", INIT, i),
                                                 config.profile, scae=scae)) for i in range(k)]
    w = arch.get_profile(config.profile).pathway_channels
    rng = np.random.default_rng(_epoch_seed(config, "composite", INIT + 1))
    head = Sequential([("drop3", arch.Dropout(arch.DROPOUT)),
                       ("conv4", Conv(arch._he_conv(rng, k * w, 2 * k, 1, 1, 0))),
                       ("gap", GlobalAvgPool())])
    params = [t for p in pathways for t in p.params()] + head.params()
    opt = SGD({"attr": params}, {"attr": config.eta_pathway}, config.momentum)
    tr, _ = split_indices(len(data), config, "pathway")
    ops = parse_pipeline(config.augment)
    cols = list(style_indices)
    for epoch in range(1, config.epochs_pathway + 1):
        total, count = 0.0, 0
        seed = _epoch_seed(config, "composite", epoch)
        for b in batch_iterator(data, config.batch_size, ops, seed, indices=tr):
            opt.zero_grad()
            x = arch.to_input(b.images)
            feats = np.concatenate([p.forward(x, True) for p in pathways], axis=1)
            out = head.forward(feats, True, seed + count)
            loss, g = composite_label_loss(out, b.flags[:, cols])
            g = head.backward(g)
            for i, p in enumerate(pathways):
                p.backward(g[:, i * w : (i + 1) * w], need_input_grad=False)
            opt.step()
            total += loss * len(b.ids)
            count += len(b.ids)
        train_log.append(stage="composite", epoch=epoch, lr_pathway=config.eta_pathway,
                         train_loss=total / count, wall=time.time())
    return pathways


# -- stage 3 -----------------------------------------------------------------------

def targets_for(head: Head, data: Dataset, delta: float):
    """Return (eligible indices, per-image target arrays) for a head type."""
    hists = data.manifest.histograms
    if head is Head.BINARY:
        labels = quantize_many(mean_rating(hists), delta)
        keep = np.flatnonzero(labels != BinaryLabel.EXCLUDED)
        return keep, {"label": labels}
    if head is Head.GAUSSIAN:
        mu, sigma = fit_gaussians(hists)
        return np.arange(len(data)), {"mu": mu, "sigma": sigma}
    return np.arange(len(data)), {"hist": hists}


def loss_for(model: BdnModel, out, targets, idx):
    head = model.head
    if head is Head.BINARY:
        return softmax_xent(out, targets["label"][idx])
    if head is Head.GAUSSIAN:
        return kl_loss_and_grad(out, targets["mu"][idx], targets["sigma"][idx])
    if model.variant is Variant.BDN_KL_D:
        return distribution_kl_loss(out, targets["hist"][idx])
    return distribution_softmax_loss(out, targets["hist"][idx])


def dataset_loss(model: BdnModel, data: Dataset, targets, indices, batch_size=64) -> float:
    total, count = 0.0, 0
    for b in batch_iterator(data, batch_size, mode="eval", indices=indices):
        loss, _ = loss_for(model, model.forward(b.images), targets, b.index)
        total += loss * len(b.ids)
        count += len(b.ids)
    return total / max(count, 1)


def make_optimizer(model: BdnModel, config: TrainConfig) -> SGD:
    eta_prime = 0.0 if model.frozen_pathways else config.eta_prime_pathway_ft
    return SGD({"pathways": model.pathway_params(), "synthesis": model.synthesis_params()},
               {"pathways": eta_prime, "synthesis": config.rho_synthesis}, config.momentum)


def finetune_step(model: BdnModel, opt: SGD, batch, targets, rng=None) -> float:
    opt.zero_grad()
    out = model.forward(batch.images, training=True, rng=rng)
    loss, g = loss_for(model, out, targets, batch.index)
    model.backward(g)
    opt.step()
    return loss


HEAD_LAYER = "synthesis.conv4."


def _init_gaussian_bias(model: BdnModel, targets, idx):
    """Start the Gaussian head at the best constant prediction for the training targets."""
    mu = float(np.mean(targets["mu"][idx]))
    sigma = max(float(np.mean(targets["sigma"][idx])) - SIGMA_FLOOR, 1e-3)
    params = dict(model.named_params())
    params[HEAD_LAYER + "weight"].data[...] = 0.0
    params[HEAD_LAYER + "bias"].data[...] = [mu, sigma + np.log(-np.expm1(-sigma))]  # inverse softplus


def finetune_bdn(data: Dataset, pathways, config: TrainConfig, head="binary", variant="bdn",
                 frozen_pathways=False, style_indices=None, warm_start: BdnModel | None = None,
                 train_log: TrainLog | None = None) -> BdnModel:
    """Train the synthesis network on top of the pathways, tuning both jointly.

    Pathways update at ``eta_prime_pathway_ft`` (not at all when frozen), the
    synthesis network at ``rho_synthesis``, which is divided by 10 whenever
    validation loss plateaus, at most ``max_anneals`` times. A Gaussian head
    with ``warm_start`` copies the warm model's weights except the output
    layer, which starts as the constant best-fit (mu, sigma); pathways are
    frozen and only the synthesis network retrains.
    """
    head, variant = Head(head), Variant(variant)
    arch.check_head(variant, head)
    train_log = TrainLog() if train_log is None else train_log
    pathways = [arch.headless(p) for p in pathways]
    shapes = {tuple(t.shape for t in p.params()) for p in pathways}
    if len(shapes) != 1:
        raise ValueError("pathway states have mismatched shapes")
    ref = arch.headless(arch.build_pathway(0, config.profile))
    if shapes != {tuple(t.shape for t in ref.params())}:
        raise ValueError(f"pathway states do not match the {config.profile} pathway topology")

    model = arch.assemble(variant, pathways, head, config.profile,
                          _epoch_seed(config, "finetune", INIT), style_indices, frozen_pathways)
    if warm_start is not None and config.head_warm_start:
        if head is Head.DIST10:
            raise ValueError("warm start is defined for the binary and Gaussian heads only")
        for (name, dst), (_, src) in zip(model.named_params(), warm_start.named_params()):
            if head is Head.GAUSSIAN and name.startswith(HEAD_LAYER):
                continue  # class logits are no use as (mu, sigma); keep the fresh output layer
            dst.data[...] = src.data

    eligible, targets = targets_for(head, data, config.delta)
    if warm_start is not None and config.head_warm_start and head is Head.GAUSSIAN:
        model.frozen_pathways = True
        _init_gaussian_bias(model, targets, eligible)
    if len(eligible) == 0:
        raise ValueError("no training images left after label quantization")
    tr, va = split_indices(len(data), config, "finetune", eligible)
    opt = make_optimizer(model, config)
    plateau = PlateauDetector(config.plateau_patience, config.plateau_min_delta, config.max_anneals)
    ops = parse_pipeline(config.augment)

    def record(epoch, train_loss, event=None):
        val = dataset_loss(model, data, targets, va) if len(va) else train_loss
        rec = dict(stage="finetune", head=head.value, variant=variant.value, epoch=epoch,
                   lr_pathway=opt.lrs["pathways"], lr_synthesis=opt.lrs["synthesis"],
                   train_loss=train_loss, val_loss=val)
        if event:
            rec["event"] = event
        train_log.append(**rec, wall=time.time())
        return val

    record(0, dataset_loss(model, data, targets, tr))
    for epoch in range(1, config.epochs_finetune + 1):
        total, count = 0.0, 0
        seed = _epoch_seed(config, "finetune", epoch)
        for b in batch_iterator(data, config.batch_size, ops, seed, indices=tr):
            total += finetune_step(model, opt, b, targets, seed + count) * len(b.ids)
            count += len(b.ids)
        val = record(epoch, total / count)
        if plateau.update(val):
            opt.lrs["synthesis"] /= 10.0
            train_log.append(stage="finetune", epoch=epoch, event="anneal",
                             lr_synthesis=opt.lrs["synthesis"], wall=time.time())
    return model
