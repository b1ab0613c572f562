"""Bradley-Terry strengths from pairwise comparisons via the MM iteration.

Strengths are normalized so a designated reference item (the untransformed
ground truth) scores 1; the resulting ratios are the LP factors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

VIRTUAL = "__virtual__"


class ComparisonGraphError(ValueError):
    pass


@dataclass(frozen=True)
class Comparison:
    item_a: str
    item_b: str
    winner: str  # "a" or "b"

    def __post_init__(self):
        if self.item_a == self.item_b:
            raise ValueError(f"an item cannot be compared with itself: {self.item_a!r}")
        if self.winner not in ("a", "b"):
            raise ValueError(f"winner must be 'a' or 'b', got {self.winner!r}")

    @property
    def winner_id(self) -> str:
        return self.item_a if self.winner == "a" else self.item_b

    @property
    def loser_id(self) -> str:
        return self.item_b if self.winner == "a" else self.item_a


@dataclass
class BtScores:
    scores: dict[str, float]
    lp_factors: dict[str, float]
    reference: str
    iterations: int
    converged: bool
    log_likelihood: list[float] = field(default_factory=list)

    def ranking(self) -> list[tuple[str, float]]:
        return sorted(self.lp_factors.items(), key=lambda kv: (-kv[1], kv[0]))


def win_matrix(comparisons, items=None):
    """Return (items, W) with W[i, j] = number of times item i beat item j."""
    if items is None:
        seen = {}
        for c in comparisons:
            seen.setdefault(c.item_a, None)
            seen.setdefault(c.item_b, None)
        items = list(seen)
    index = {it: k for k, it in enumerate(items)}
    W = np.zeros((len(items), len(items)))
    for c in comparisons:
        W[index[c.winner_id], index[c.loser_id]] += 1
    return list(items), W


def log_likelihood(W, s) -> float:
    i, j = np.nonzero(W)
    return float(np.sum(W[i, j] * (np.log(s[i]) - np.log(s[i] + s[j]))))


def _check_identifiable(items, W):
    played = W.sum(axis=0) + W.sum(axis=1)
    idle = [items[k] for k in np.flatnonzero(played == 0)]
    if idle:
        raise ComparisonGraphError(f"items with zero wins and zero losses: {idle}")
    n_weak, weak = connected_components(csr_matrix(W + W.T), directed=False)
    if n_weak > 1:
        groups = [[items[k] for k in np.flatnonzero(weak == g)] for g in range(n_weak)]
        raise ComparisonGraphError(f"comparison graph is disconnected; components: {groups}")
    n_strong, strong = connected_components(csr_matrix(W), directed=True, connection="strong")
    if n_strong > 1:
        no_wins = [items[k] for k in np.flatnonzero(W.sum(axis=1) == 0)]
        no_losses = [items[k] for k in np.flatnonzero(W.sum(axis=0) == 0)]
        groups = [[items[k] for k in np.flatnonzero(strong == g)] for g in range(n_strong)]
        raise ComparisonGraphError(
            "maximum-likelihood strengths diverge: some items never lose (or never win) "
            f"against the rest (no wins: {no_wins}, no losses: {no_losses}; "
            f"strongly connected groups: {groups}); pass virtual_ties=True to regularize")


def bt_fit(comparisons, reference=None, max_iter=10_000, tol=1e-8, virtual_ties=False,
           items=None) -> BtScores:
    """Maximum-likelihood Bradley-Terry fit.

    ``reference`` is the item whose LP factor is pinned to 1 (default: the
    strongest item). With ``virtual_ties`` every item gets one tie, i.e. half
    a win and half a loss, against a phantom opponent that is dropped from
    the result.
    """
    items, W = win_matrix(comparisons, items)
    if not items:
        raise ComparisonGraphError("no comparisons given")
    if reference is not None and reference not in items:
        raise ValueError(f"reference item {reference!r} does not appear in the comparisons")
    if virtual_ties:
        k = len(items)
        Wv = np.zeros((k + 1, k + 1))
        Wv[:k, :k] = W
        Wv[:k, k] = 0.5
        Wv[k, :k] = 0.5
        W = Wv
        items = items + [VIRTUAL]
    _check_identifiable(items, W)

    N = W + W.T
    wins = W.sum(axis=1)
    s = np.ones(len(items))
    history = [log_likelihood(W, s)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        denom = (N / (s[:, None] + s[None, :])).sum(axis=1)
        new = wins / denom
        new /= np.exp(np.mean(np.log(new)))
        change = np.max(np.abs(new - s) / s)
        s = new
        history.append(log_likelihood(W, s))
        if change < tol:
            converged = True
            break

    scores = dict(zip(items, s))
    scores.pop(VIRTUAL, None)
    if reference is None:
        reference = max(scores, key=scores.get)
    ref = scores[reference]
    return BtScores(scores={k: float(v) for k, v in scores.items()},
                    lp_factors={k: float(v / ref) for k, v in scores.items()},
                    reference=reference, iterations=it, converged=converged,
                    log_likelihood=history)


def simulate_tournament(true_scores: dict, n_comparisons: int, seed=None) -> list[Comparison]:
    """Uniformly random distinct pairs; item_a wins with probability s_a / (s_a + s_b)."""
    names = list(true_scores)
    if len(names) < 2:
        raise ValueError("need at least two items")
    s = np.array([true_scores[k] for k in names], dtype=float)
    if np.any(s <= 0):
        raise ValueError("strengths must be positive")
    rng = np.random.default_rng(seed)
    a = rng.integers(0, len(names), n_comparisons)
    b = rng.integers(0, len(names) - 1, n_comparisons)
    b = b + (b >= a)
    a_wins = rng.random(n_comparisons) < s[a] / (s[a] + s[b])
    return [Comparison(names[i], names[j], "a" if w else "b") for i, j, w in zip(a, b, a_wins)]


def read_comparisons(lines) -> list[Comparison]:
    """Parse ``item_a,item_b,winner`` lines; winner is 'a', 'b' or one of the two ids.

    Blank lines and lines starting with '#' are skipped, as is a leading
    ``item_a,item_b,winner`` header.
    """
    out = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 3 fields, got {len(parts)}")
        a, b, w = parts
        if lineno == 1 and (a, b, w) == ("item_a", "item_b", "winner"):
            continue
        if w not in ("a", "b"):
            if w == a:
                w = "a"
            elif w == b:
                w = "b"
            else:
                raise ValueError(f"line {lineno}: winner {w!r} is neither 'a', 'b', {a!r} nor {b!r}")
        try:
            out.append(Comparison(a, b, w))
        except ValueError as e:
            raise ValueError(f"line {lineno}: {e}") from None
    return out
