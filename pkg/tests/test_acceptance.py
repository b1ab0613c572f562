"""Acceptance suite: one PASS/FAIL line per criterion (see the terminal summary).

Each test records its verdict before asserting, so failures still print.
The end-to-end toy experiment runs once per session and takes several
minutes on one CPU core.
"""
import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest

from acceptance_log import record
from bdn import arch
from bdn.arch import N_STYLES, build_bdn, composite_label_loss
from bdn.bradley_terry import Comparison, bt_fit, simulate_tournament
from bdn.checkpoint import save_model, save_pathway, save_scae
from bdn.data import SyntheticTaskSpec, generate_synthetic, toy_spec
from bdn.engine import (ConvLayer, DeconvLayer, Tensor, conv_backward, conv_forward, deconv_backward,
                        deconv_forward, dropout_backward, dropout_forward, gap_backward, gap_forward,
                        mse_loss, relu_backward, relu_forward, softmax_xent)
from bdn.gradcheck import check_function, numeric_grad, relative_error
from bdn.metrics import compute_metrics, predict
from bdn.rating import (RatingGaussian, distribution_kl_loss, distribution_softmax_loss, fit_gaussian,
                        kl_gaussian, kl_loss_and_grad, mean_rating)
from bdn.training import (TrainConfig, TrainLog, finetune_bdn, plateau_detector, pretrain_scae,
                          reconstruction_loss, style_accuracy, train_pathway, unsupervised_attributes)
from oracles import conv_direct, gaussian_kl_quadrature

ROOT = Path(__file__).resolve().parents[1]
INSTANCES = 20
TOL = 1e-4


# -- reference values ------------------------------------------------------------------

def test_reference_values_documented():
    text = (ROOT / "README.md").read_text()
    wanted = ["76.80%", "76.04%", "0.1743", "96%", "78.08%", "77.27%"]
    missing = [w for w in wanted if w not in text]
    ok = not missing and "reference" in text.lower()
    record("large-scale numbers documented as reference values only", ok,
           f"missing {missing}" if missing else "README lists all six")
    assert ok


# -- gradient suite ------------------------------------------------------------------------

def _random_conv(rng):
    k = tuple(int(v) for v in rng.integers(1, 4, 2))
    s, p = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    cin, cout = (int(v) for v in rng.integers(1, 4, 2))
    layer = ConvLayer(cin, cout, k, s, p, weight=Tensor(rng.normal(size=(cout, cin) + k)),
                      bias=Tensor(rng.normal(size=cout)))
    x = rng.normal(size=(int(rng.integers(1, 3)), cin, int(rng.integers(4, 7)), int(rng.integers(4, 7))))
    return layer, x


def _random_deconv(rng):
    k = tuple(int(v) for v in rng.integers(1, 4, 2))
    s, p = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    p = min(p, k[0] - 1, k[1] - 1)
    op = int(rng.integers(0, s))
    cin, cout = (int(v) for v in rng.integers(1, 4, 2))
    layer = DeconvLayer(cin, cout, k, s, p, op, weight=Tensor(rng.normal(size=(cin, cout) + k)),
                        bias=Tensor(rng.normal(size=cout)))
    x = rng.normal(size=(int(rng.integers(1, 3)), cin, int(rng.integers(2, 5)), int(rng.integers(2, 5))))
    return layer, x


def _layer_error(forward, backward, layer, x, rng):
    r = rng.normal(size=forward(x, layer).shape)
    gx, gw, gb = backward(x, layer, r)
    value = lambda: float(np.sum(r * forward(x, layer)))  # noqa: E731
    return max(relative_error(gx, numeric_grad(value, x)),
               relative_error(gw, numeric_grad(value, layer.weight.data)),
               relative_error(gb, numeric_grad(value, layer.bias.data)))


def _pointwise_error(forward, backward, x, rng):
    r = rng.normal(size=x.shape)
    return check_function(lambda z: (float(np.sum(r * forward(z))), backward(z, r)), x)


def _gradient_cases():
    def conv(rng):
        layer, x = _random_conv(rng)
        return _layer_error(conv_forward, conv_backward, layer, x, rng)

    def deconv(rng):
        layer, x = _random_deconv(rng)
        return _layer_error(deconv_forward, deconv_backward, layer, x, rng)

    def relu(rng):
        x = rng.normal(size=(2, 3, 4, 4))
        x[np.abs(x) < 1e-2] = 0.5  # stay away from the kink
        return _pointwise_error(relu_forward, relu_backward, x, rng)

    def gap(rng):
        x = rng.normal(size=(2, 3, int(rng.integers(1, 6)), int(rng.integers(1, 6))))
        r = rng.normal(size=(2, 3, 1, 1))
        return check_function(lambda z: (float(np.sum(r * gap_forward(z))), gap_backward(z.shape, r)), x)

    def dropout(rng):
        x = rng.normal(size=(2, 3, 4, 4))
        seed = int(rng.integers(2**32))
        _, mask = dropout_forward(x, 0.5, seed, training=True)
        return _pointwise_error(lambda z: dropout_forward(z, 0.5, seed, True)[0],
                                lambda z, r: dropout_backward(mask, r), x, rng)

    def xent(rng):
        n, k = int(rng.integers(1, 5)), int(rng.integers(2, 6))
        labels = rng.integers(0, k, n)
        return check_function(lambda z: softmax_xent(z, labels), rng.normal(size=(n, k, 1, 1)))

    def mse(rng):
        t = rng.normal(size=(2, 3, 4, 4))
        return check_function(lambda z: mse_loss(z, t), rng.normal(size=t.shape))

    def kl_head(rng):
        n = int(rng.integers(1, 6))
        mu, sigma = rng.uniform(1, 10, n), rng.uniform(0.1, 3, n)
        raw = np.stack([rng.uniform(1, 10, n), rng.normal(0, 1.5, n)], axis=1)[..., None, None]
        return check_function(lambda z: kl_loss_and_grad(z, mu, sigma), raw)

    def composite(rng):
        labels = rng.integers(0, 2, (3, 14))
        return check_function(lambda z: composite_label_loss(z, labels), rng.normal(size=(3, 28, 1, 1)))

    def hist_batch(rng):
        return rng.integers(0, 30, (3, 10)) + (np.arange(10) == rng.integers(0, 10))

    def dist_softmax(rng):
        h = hist_batch(rng)
        return check_function(lambda z: distribution_softmax_loss(z, h), rng.normal(size=(3, 10, 1, 1)))

    def dist_kl(rng):
        h = hist_batch(rng)
        return check_function(lambda z: distribution_kl_loss(z, h), rng.normal(size=(3, 10, 1, 1)))

    return {"conv": conv, "deconv": deconv, "relu": relu, "gap": gap, "dropout (fixed mask)": dropout,
            "softmax cross-entropy": xent, "mse": mse, "gaussian KL head": kl_head,
            "composite 28-channel": composite, "10-bin softmax": dist_softmax, "10-bin KL": dist_kl}


def test_gradient_suite():
    start = time.perf_counter()
    worst = {}
    for k, (name, case) in enumerate(_gradient_cases().items()):
        rng = np.random.default_rng(1000 + k)
        worst[name] = max(case(rng) for _ in range(INSTANCES))
    elapsed = time.perf_counter() - start
    bad = {n: e for n, e in worst.items() if not e < TOL}
    ok = not bad and elapsed < 120
    record("gradient suite: every layer and loss, 20 instances each, rel err < 1e-4, < 2 min", ok,
           f"worst {max(worst.values()):.1e} ({max(worst, key=worst.get)}), {elapsed:.1f}s"
           + (f", failing {bad}" if bad else ""))
    assert ok


# -- convolution oracle -----------------------------------------------------------------------

def test_convolution_oracle_grid():
    rng = np.random.default_rng(7)
    worst, cases = 0.0, 0
    kernels = [(1, 1), (1, 2), (2, 1), (2, 2), (1, 3), (3, 1), (2, 3), (3, 2), (3, 3)]
    for n, c, hw, k, s, p in itertools.product([1, 2], [1, 2, 3, 4], [(3, 3), (5, 8), (8, 8)],
                                                kernels, [1, 2], [0, 1]):
        if hw[0] + 2 * p < k[0] or hw[1] + 2 * p < k[1]:
            continue
        layer = ConvLayer(c, 2, k, s, p, weight=Tensor(rng.normal(size=(2, c) + k)),
                          bias=Tensor(rng.normal(size=2)))
        x = rng.normal(size=(n, c) + hw)
        ref = conv_direct(x, layer.weight.data, layer.bias.data, (s, s), (p, p))
        worst = max(worst, float(np.abs(conv_forward(x, layer) - ref).max()))
        cases += 1
    ok = worst <= 1e-12
    record("conv_forward matches direct-loop oracle to 1e-12 on the small-shape grid", ok,
           f"{cases} shapes, max abs diff {worst:.1e}")
    assert ok


# -- Gaussian KL fidelity -------------------------------------------------------------------

def test_kl_fidelity():
    rng = np.random.default_rng(11)
    quad_err = 0.0
    for _ in range(100):
        m1, m2 = rng.uniform(1, 10, 2)
        s1, s2 = rng.uniform(0.3, 3, 2)
        got = kl_gaussian(RatingGaussian(m1, s1), RatingGaussian(m2, s2))
        quad_err = max(quad_err, abs(got - gaussian_kl_quadrature(m1, s1, m2, s2)))
    self_kl = max(abs(kl_gaussian(RatingGaussian(m, s), RatingGaussian(m, s)))
                  for m, s in rng.uniform([1, 0.1], [10, 3], (100, 2)))
    # literal form, evaluated by hand: log(s2/s1) + (s1^2 + (m1-m2)^2) / (2 m2^2) - 1/2
    hand = [((5, 1), (6, 1), 2 / 72 - 0.5),
            ((4, 2), (2, 1), -math.log(2) + 0.5),
            ((3, 1), (1, 2), math.log(2) + 2.0)]
    literal_err = max(abs(kl_gaussian(RatingGaussian(*a), RatingGaussian(*b), literal_paper_form=True) - v)
                      for a, b, v in hand)
    ok = quad_err < 1e-6 and self_kl <= 1e-12 and literal_err < 1e-14
    record("Gaussian KL: quadrature within 1e-6, KL(N,N)=0, literal form matches hand values", ok,
           f"quad {quad_err:.1e}, self {self_kl:.1e}, literal {literal_err:.1e}")
    assert ok


# -- Bradley-Terry ---------------------------------------------------------------------------

LP_PROFILE = {"ground_truth": 1.0, "reflection": 0.99, "random_scaling": 0.94, "small_noise": 0.87,
              "large_noise": 0.63, "squeezing": 0.55, "rotation": 0.26, "alter_rgb": 0.10}


def test_bradley_terry_recovery():
    truth_order = sorted(LP_PROFILE, key=lambda k: -LP_PROFILE[k])
    rows = []
    for seed in range(5):
        res = bt_fit(simulate_tournament(LP_PROFILE, 20_000, seed), reference="ground_truth")
        err = max(abs(res.lp_factors[k] - v) for k, v in LP_PROFILE.items())
        order = [k for k, _ in res.ranking()] == truth_order
        rows.append((seed, err, order))
    pair = bt_fit([Comparison("a", "b", "a")] * 3 + [Comparison("a", "b", "b")], reference="b")
    ratio_err = abs(pair.scores["a"] / pair.scores["b"] - 3.0)
    ok = all(e <= 0.05 and o for _, e, o in rows) and ratio_err < 1e-6
    detail = "; ".join(f"seed {s}: err {e:.3f} order {'ok' if o else 'swapped'}" for s, e, o in rows)
    record("Bradley-Terry: LP factors within 0.05 and exact order on 5 seeds, pair MLE ratio", ok,
           f"{detail}; pair ratio err {ratio_err:.1e}")
    assert ok


# -- Gaussian fitting -------------------------------------------------------------------------

def test_gaussian_fitting():
    draws = np.random.default_rng(5).normal(6.2, 1.1, 10**5)
    h = np.bincount(np.clip(np.rint(draws), 1, 10).astype(int) - 1, minlength=10)
    mu = fit_gaussian(h).mu
    fixtures = [np.eye(10)[k] * 200 for k in range(10)]
    fixtures += [[0, 0, 10, 20, 40, 20, 10, 0, 0, 0], [0, 0, 0, 100, 0, 100, 0, 0, 0, 0], h]
    fixtures += list(generate_synthetic(SyntheticTaskSpec(), 50, seed=1).manifest.histograms)
    exact = all(fit_gaussian(f).mu == mean_rating(f) for f in fixtures)
    ok = abs(mu - 6.2) <= 0.05 and exact
    record("Gaussian fit: 1e5 draws of N(6.2, 1.1) give mu within 0.05; mu == mean_rating", ok,
           f"mu {mu:.4f}, {len(fixtures)} fixtures exact={exact}")
    assert ok


# -- end-to-end toy training ---------------------------------------------------------------------

TOY_STYLES = (0, 1, 2, 3)
TOY_CONFIG = dict(batch_size=8, epochs_scae=20, epochs_pathway=30, epochs_finetune=30, seed=0)


@pytest.fixture(scope="module")
def toy_run():
    start = time.perf_counter()
    ds = generate_synthetic(toy_spec(styles=TOY_STYLES), 700, seed=0)
    train, test = ds.subset(range(500)), ds.subset(range(500, 700))
    cfg = TrainConfig(**TOY_CONFIG)
    log = TrainLog()
    scae = pretrain_scae(train, cfg, log)
    out = {"scae_init": log.records[0]["train_loss"], "scae_final": reconstruction_loss(scae, train)}
    pathways, accs = [], []
    for s in TOY_STYLES:
        net = train_pathway(train, s, scae, cfg, log, return_head=True)
        accs.append(style_accuracy(net, test, s))
        pathways.append(arch.headless(net))
    out["pathway_acc"] = accs
    bdn = finetune_bdn(train, pathways, cfg, "binary", "bdn", style_indices=TOY_STYLES, train_log=log)
    bfcn = finetune_bdn(train, unsupervised_attributes(scae, len(TOY_STYLES), cfg), cfg, "binary", "bfcn",
                        style_indices=TOY_STYLES)
    out["bdn_acc"] = compute_metrics(predict(bdn, test), test.manifest, 0.0).binary_accuracy
    out["bfcn_acc"] = compute_metrics(predict(bfcn, test), test.manifest, 0.0).binary_accuracy
    warm_cfg = TrainConfig(**{**TOY_CONFIG, "epochs_finetune": 0})
    warm = finetune_bdn(train, bdn.pathways, warm_cfg, "gaussian", "bdn", style_indices=TOY_STYLES,
                        warm_start=bdn)
    gauss = finetune_bdn(train, bdn.pathways, cfg, "gaussian", "bdn", style_indices=TOY_STYLES,
                         warm_start=bdn)
    out["kl_warm"] = compute_metrics(predict(warm, test), test.manifest, 0.0).average_kl
    out["kl_final"] = compute_metrics(predict(gauss, test), test.manifest, 0.0).average_kl
    out["seconds"] = time.perf_counter() - start
    return out


def test_toy_scae_reconstruction(toy_run):
    drop = 1 - toy_run["scae_final"] / toy_run["scae_init"]
    ok = drop >= 0.30
    record("toy: SCAE reconstruction loss drops >= 30% from init", ok,
           f"{toy_run['scae_init']:.4f} -> {toy_run['scae_final']:.4f} ({drop:.0%})")
    assert ok


def test_toy_pathways(toy_run):
    accs = toy_run["pathway_acc"]
    ok = all(a > 0.90 for a in accs)
    record("toy: every pathway > 90% held-out style accuracy", ok, ", ".join(f"{a:.3f}" for a in accs))
    assert ok


def test_toy_bdn_beats_bfcn(toy_run):
    ok = toy_run["bdn_acc"] > 0.85 and toy_run["bfcn_acc"] < toy_run["bdn_acc"]
    record("toy: BDN > 85% held-out binary accuracy and BFCN lower", ok,
           f"BDN {toy_run['bdn_acc']:.3f}, BFCN {toy_run['bfcn_acc']:.3f}")
    assert ok


def test_toy_gaussian_halves_kl(toy_run):
    ok = toy_run["kl_final"] <= 0.5 * toy_run["kl_warm"]
    record("toy: Gaussian-head fine-tune halves average KL vs warm start", ok,
           f"{toy_run['kl_warm']:.4f} -> {toy_run['kl_final']:.4f}")
    assert ok


def test_toy_runtime(toy_run):
    ok = toy_run["seconds"] < 30 * 60
    record("toy: whole experiment under 30 minutes", ok, f"{toy_run['seconds'] / 60:.1f} min")
    assert ok


# -- protocol assertions -----------------------------------------------------------------------

def test_protocol():
    ds = generate_synthetic(toy_spec(), 24, seed=3)
    cfg = TrainConfig(batch_size=8, epochs_finetune=6, plateau_patience=1, plateau_min_delta=100.0,
                      augment="none")
    pathways = [arch.headless(arch.build_pathway(s)) for s in range(2)]
    log = TrainLog()
    finetune_bdn(ds, pathways, cfg, style_indices=[0, 1], train_log=log)
    rates = [r["lr_synthesis"] for r in log.records if r.get("event") != "anneal"]
    steps = [b / a for a, b in zip(rates, rates[1:]) if b != a]
    anneal_ok = (len(steps) <= 2 and all(abs(x - 0.1) < 1e-12 for x in steps)
                 and plateau_detector([1.0] * 100, patience=1) == [2, 3])

    before = [t.data.copy() for p in pathways for t in p.params()]
    frozen = finetune_bdn(ds, pathways, TrainConfig(**{**cfg.__dict__, "epochs_finetune": 2}),
                          frozen_pathways=True, style_indices=[0, 1])
    frozen_ok = all(np.array_equal(a, t.data) for a, t in zip(before, frozen.pathway_params()))

    model = build_bdn("bdn", profile="full", seed=0)
    shapes = []
    for h, w in [(64, 64), (96, 64)]:
        feats = model.attributes(np.random.default_rng(0).uniform(0, 255, (1, 3, h, w)))
        shapes.append(feats.shape)
    shape_ok = shapes == [(1, 3 + N_STYLES * 64, 16, 16), (1, 3 + N_STYLES * 64, 24, 16)]
    ok = anneal_ok and frozen_ok and shape_ok
    record("protocol: rho / 10 at most twice, frozen pathways bit-identical, 899-channel maps at input/4",
           ok, f"lr steps {steps}, frozen={frozen_ok}, shapes {shapes}")
    assert ok


# -- determinism ---------------------------------------------------------------------------------

def _pipeline(directory: Path):
    ds = generate_synthetic(toy_spec(), 40, seed=5)
    train, test = ds.subset(range(30)), ds.subset(range(30, 40))
    cfg = TrainConfig(batch_size=8, epochs_scae=2, epochs_pathway=2, epochs_finetune=2, seed=9)
    directory.mkdir()
    log = TrainLog()
    scae = pretrain_scae(train, cfg, log)
    save_scae(scae, directory / "scae.ckpt")
    pathways = []
    for s in (0, 1):
        net = train_pathway(train, s, scae, cfg, log, return_head=True)
        save_pathway(net, directory / f"pathway{s}.ckpt", s)
        pathways.append(net)
    model = finetune_bdn(train, pathways, cfg, style_indices=[0, 1], train_log=log)
    save_model(model, directory / "bdn.ckpt")
    gauss = finetune_bdn(train, model.pathways, cfg, "gaussian", style_indices=[0, 1], warm_start=model)
    save_model(gauss, directory / "gauss.ckpt")
    reports = [compute_metrics(predict(m, test), test.manifest, d) for m in (model, gauss) for d in (0, 1)]
    files = {p.name: p.read_bytes() for p in sorted(directory.iterdir())}
    return files, reports, log.without_clock()


def test_determinism(tmp_path):
    a_files, a_reports, a_log = _pipeline(tmp_path / "a")
    b_files, b_reports, b_log = _pipeline(tmp_path / "b")
    ok = a_files == b_files and a_reports == b_reports and a_log == b_log
    record("determinism: repeated pipeline gives bit-identical checkpoints and reports", ok,
           f"{len(a_files)} checkpoints, {len(a_reports)} reports compared")
    assert ok
