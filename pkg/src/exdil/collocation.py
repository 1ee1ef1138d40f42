"""Quadrature over the coefficient space of the random interface.

Three rule families produce nodes s_q in [a, b]^K and probability weights
w_q (summing to one), so an expectation is the weighted sum

    E[f] = sum_q w_q f(s_q).

* ``tensor_gl`` — Gauss-Legendre per dimension, tensorized.  Exact for
  per-dimension polynomial degree <= 2n-1; the acceptance oracle.
* ``smolyak`` — the sparse combination of nested Clenshaw-Curtis rules.
  With 1D levels m(1) = 1, m(l) = 2**(l-1) + 1, the level-q rule in K
  dimensions sums the tensor products of all 1D levels i with
  q <= |i| <= q + K - 1, weighted by the usual alternating binomial
  combination coefficients.  Nested points are merged exactly by indexing
  them on the finest level's grid (integers, no float keying).
* ``monte_carlo`` — i.i.d. uniform draws with equal weights; seeded.

Node evaluation may fan out over worker threads, but the reduction is
always the fixed node-order weighted sum, so results are bit-identical
regardless of the worker count.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import comb
from typing import Callable, Optional

import numpy as np

from .fd_core import Field2D

__all__ = [
    "TENSOR_GL",
    "SMOLYAK",
    "MONTE_CARLO",
    "QuadratureRule",
    "ExpectationResult",
    "CollocationError",
    "build_rule",
    "expect",
    "expect_field",
    "export_rule_csv",
]

TENSOR_GL = "tensor_gl"
SMOLYAK = "smolyak"
MONTE_CARLO = "monte_carlo"


class CollocationError(RuntimeError):
    """A node functional failed; the message names the offending node."""


@dataclass(frozen=True)
class QuadratureRule:
    kind: str
    dim: int
    nodes: np.ndarray     # (Q, dim)
    weights: np.ndarray   # (Q,)
    descriptor: str

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape != (weights.size, self.dim):
            raise ValueError("nodes and weights are inconsistent")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {weights.sum()!r}, not 1")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def node_count(self) -> int:
        return self.weights.size


@dataclass
class ExpectationResult:
    value: float
    node_count: int
    descriptor: str
    node_values: Optional[np.ndarray] = None


def _gauss_legendre_1d(n: int, a: float, b: float):
    x, w = np.polynomial.legendre.leggauss(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, w / 2.0


def _cc_size(level: int) -> int:
    return 1 if level == 1 else 2 ** (level - 1) + 1


def _clenshaw_curtis_1d(npts: int):
    """Clenshaw-Curtis nodes (ascending, on [-1, 1]) and probability weights."""
    if npts == 1:
        return np.array([0.0]), np.array([1.0])
    N = npts - 1
    k = np.arange(npts)
    x = -np.cos(np.pi * k / N)
    w = np.zeros(npts)
    js = np.arange(1, N // 2 + 1)
    bj = np.where(2 * js == N, 1.0, 2.0)
    for idx in range(npts):
        s = np.sum(bj * np.cos(2.0 * js * idx * np.pi / N) / (4.0 * js ** 2 - 1.0))
        ck = 1.0 if idx in (0, N) else 2.0
        w[idx] = (ck / N) * (1.0 - s)
    return x, w / 2.0


def _smolyak(dim: int, level: int, a: float, b: float):
    """Combination-technique sparse rule on [a, b]^dim."""
    if level < 1:
        raise ValueError("level must be >= 1")
    q = level + dim - 1
    finest = _cc_size(level) - 1 if level > 1 else 2  # key scale, arbitrary >0 for level 1

    # 1D nodes keyed by their index on the finest level's grid (nested).
    keys1d, nodes1d, weights1d = {}, {}, {}
    for lev in range(1, level + 1):
        m = _cc_size(lev)
        x, w = _clenshaw_curtis_1d(m)
        if m == 1:
            key = np.array([finest // 2])
        else:
            key = np.arange(m) * (finest // (m - 1))
        keys1d[lev], nodes1d[lev], weights1d[lev] = key, x, w

    acc: dict[tuple[int, ...], float] = {}
    pos: dict[tuple[int, ...], tuple[float, ...]] = {}
    for ii in itertools.product(range(1, level + 1), repeat=dim):
        total = sum(ii)
        if not (level <= total <= q):
            continue
        coeff = (-1.0) ** (q - total) * comb(dim - 1, q - total)
        grids = [keys1d[l] for l in ii]
        for combo in itertools.product(*(range(k.size) for k in grids)):
            key = tuple(int(grids[d][combo[d]]) for d in range(dim))
            wgt = coeff
            for d in range(dim):
                wgt *= weights1d[ii[d]][combo[d]]
            acc[key] = acc.get(key, 0.0) + wgt
            if key not in pos:
                pos[key] = tuple(nodes1d[ii[d]][combo[d]] for d in range(dim))

    ordered = sorted(acc)
    nodes = np.array([pos[k] for k in ordered])
    weights = np.array([acc[k] for k in ordered])
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * nodes, weights


def build_rule(kind: str, dim: int, size: int, support=(-1.0, 1.0),
               seed: int | None = None) -> QuadratureRule:
    """Build a quadrature rule over [a, b]^dim.

    ``size`` means points per dimension for ``tensor_gl``, the sparse level
    for ``smolyak``, and the sample count for ``monte_carlo``.
    """
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    if size < 1:
        raise ValueError("size must be >= 1")
    a, b = float(support[0]), float(support[1])
    if a > b:
        raise ValueError("support bounds are reversed")
    kind = kind.lower()
    if kind == TENSOR_GL:
        x, w = _gauss_legendre_1d(size, a, b)
        idx = np.stack(np.meshgrid(*([np.arange(size)] * dim), indexing="ij"),
                       axis=-1).reshape(-1, dim)
        nodes = x[idx]
        weights = np.prod(w[idx], axis=1)
        desc = f"tensor_gl(n={size}, dim={dim}, support=({a:g},{b:g}))"
    elif kind == SMOLYAK:
        nodes, weights = _smolyak(dim, size, a, b)
        desc = (f"smolyak(level={size}, dim={dim}, support=({a:g},{b:g}), "
                f"Q={weights.size})")
    elif kind == MONTE_CARLO:
        rng = np.random.default_rng(seed)
        nodes = rng.uniform(a, b, size=(size, dim))
        weights = np.full(size, 1.0 / size)
        desc = f"monte_carlo(q={size}, dim={dim}, seed={seed})"
    else:
        raise ValueError(f"unknown rule kind {kind!r}")
    return QuadratureRule(kind=kind, dim=dim, nodes=nodes, weights=weights,
                          descriptor=desc)


def expect(rule: QuadratureRule, functional: Callable[[np.ndarray], float],
           jobs: int = 1, keep_node_values: bool = False) -> ExpectationResult:
    """Weighted sum of ``functional`` over the rule's nodes.

    The reduction runs in node-index order whatever ``jobs`` is, so the
    result does not depend on the worker count.
    """
    values = np.empty(rule.node_count)
    if jobs <= 1:
        for qi in range(rule.node_count):
            values[qi] = _eval_node(functional, rule, qi)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(_eval_node, functional, rule, qi)
                    for qi in range(rule.node_count)]
            for qi, fut in enumerate(futs):
                values[qi] = fut.result()
    total = float(np.sum(rule.weights * values))
    return ExpectationResult(value=total, node_count=rule.node_count,
                             descriptor=rule.descriptor,
                             node_values=values if keep_node_values else None)


def _eval_node(functional, rule, qi):
    try:
        return float(functional(rule.nodes[qi]))
    except Exception as exc:
        raise CollocationError(
            f"functional failed at node {qi} of {rule.node_count} "
            f"({rule.descriptor}): {exc}") from exc


def expect_field(rule: QuadratureRule,
                 field_functional: Callable[[np.ndarray], Field2D]) -> Field2D:
    """Node-wise weighted sum of fields sharing one grid."""
    acc = None
    grid = None
    for qi in range(rule.node_count):
        try:
            f = field_functional(rule.nodes[qi])
        except Exception as exc:
            raise CollocationError(
                f"field functional failed at node {qi} of {rule.node_count}: "
                f"{exc}") from exc
        if acc is None:
            grid, acc = f.grid, rule.weights[qi] * f.values
        else:
            if f.grid != grid:
                raise ValueError(f"grid mismatch at node {qi}")
            acc = acc + rule.weights[qi] * f.values
    return Field2D(grid, acc)


def export_rule_csv(rule: QuadratureRule, path) -> None:
    """Dump nodes and weights for external verification."""
    with open(path, "w") as fh:
        cols = ",".join(f"s{d + 1}" for d in range(rule.dim))
        fh.write(f"# {rule.descriptor}\n{cols},weight\n")
        for qi in range(rule.node_count):
            xs = ",".join(f"{v:.17g}" for v in rule.nodes[qi])
            fh.write(f"{xs},{rule.weights[qi]:.17g}\n")
