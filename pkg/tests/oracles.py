"""Independent reference computations shared by the test modules.

Everything here is deliberately written with plain numpy, straight-line style,
so it cannot share a code path with the library under test.
"""
from __future__ import annotations

import numpy as np


def mc_gaussian_kl(mu: np.ndarray, sigma: np.ndarray, n_samples: int,
                   rng: np.random.Generator) -> float:
    """Monte-Carlo estimate of KL(N(mu, sigma^2) || N(0, I)), summed over dims."""
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    x = mu[None, :] + sigma[None, :] * rng.standard_normal((n_samples, mu.size))
    log_q = -0.5 * np.log(2 * np.pi) - np.log(sigma)[None, :] \
        - (x - mu[None, :]) ** 2 / (2 * sigma[None, :] ** 2)
    log_p = -0.5 * np.log(2 * np.pi) - x ** 2 / 2
    return float((log_q - log_p).sum(axis=1).mean())


def closed_form_gaussian_kl(mu: np.ndarray, sigma: np.ndarray) -> float:
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    return float(np.sum(0.5 * (mu ** 2 + sigma ** 2 - 1.0) - np.log(sigma)))


def bfs_nodes(n_nodes: int, undirected_edges, start: int, depth: int) -> set:
    """Set of nodes within `depth` undirected hops of `start` (inclusive)."""
    adj = {i: set() for i in range(n_nodes)}
    for u, v in undirected_edges:
        adj[u].add(v)
        adj[v].add(u)
    frontier = {start}
    seen = {start}
    for _ in range(depth):
        frontier = {w for u in frontier for w in adj[u]} - seen
        seen |= frontier
    return seen


def macro_f1(true_labels, pred_labels, classes) -> float:
    """Unweighted mean of per-class F1; empty precision/recall counts as 0."""
    f1s = []
    for c in classes:
        tp = sum(1 for t, p in zip(true_labels, pred_labels) if t == c and p == c)
        fp = sum(1 for t, p in zip(true_labels, pred_labels) if t != c and p == c)
        fn = sum(1 for t, p in zip(true_labels, pred_labels) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return float(np.mean(f1s))
