"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

import numpy as np

EPS = 1e-5
# entries whose analytic and numeric gradients are both below this count as agreeing
FLOOR = 1e-8


def relative_error(analytic, numeric, floor=FLOOR) -> float:
    a, n = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numeric_grad(f, x: np.ndarray, eps=EPS, indices=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size) if indices is None else indices:
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def check_function(f_and_grad, x: np.ndarray, eps=EPS) -> float:
    """``f_and_grad(x) -> (value, grad)``; compares grad with central differences."""
    x = np.array(x, dtype=float)
    _, analytic = f_and_grad(x)
    numeric = numeric_grad(lambda: f_and_grad(x)[0], x, eps)
    return relative_error(analytic, numeric)


def grad_check(network, x: np.ndarray, loss, training=False, seed=0, eps=EPS,
               max_entries=None, check_input=True) -> float:
    """Worst relative error over every parameter (and optionally the input).

    ``loss(out) -> (value, grad_out)``. In training mode the dropout RNG is
    reseeded for every forward pass, so masks stay fixed across perturbations.
    ``max_entries`` caps the number of perturbed entries per array (sampled
    deterministically) to bound runtime on larger networks.
    """
    x = np.array(x, dtype=float)
    rng = np.random.default_rng(seed)

    def value():
        return loss(network.forward(x, training, seed if training else None))[0]

    network.zero_grad()
    _, g = loss(network.forward(x, training, seed if training else None))
    gx = network.backward(g)
    targets = [(p.data, p.ensure_grad().copy()) for p in network.params()]
    if check_input:
        targets.append((x, gx))
    worst = 0.0
    for arr, analytic in targets:
        idx = None
        if max_entries is not None and arr.size > max_entries:
            idx = rng.choice(arr.size, max_entries, replace=False)
        numeric = numeric_grad(value, arr, eps, idx)
        if idx is None:
            worst = max(worst, relative_error(analytic, numeric))
        else:
            worst = max(worst, relative_error(analytic.reshape(-1)[idx], numeric.reshape(-1)[idx]))
    return worst
