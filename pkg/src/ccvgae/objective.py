"""Loss terms: weighted reconstruction BCE, Gaussian KL, DAG penalty, MSE."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Node

P_CLAMP = 1e-10
DAG_FORMS = ("poly_plus", "paper_literal_abs")


def train_labels(edges: Iterable[tuple[int, int]] | np.ndarray, n: int) -> np.ndarray:
    """Dense 0/1 target ``A + I`` from an edge list or adjacency matrix."""
    if isinstance(edges, np.ndarray):
        a = (edges != 0).astype(np.float64)
    else:
        a = np.zeros((n, n))
        for u, v in edges:
            a[u, v] = a[v, u] = 1.0
    np.fill_diagonal(a, 1.0)
    return a


def class_weights(labels: np.ndarray) -> tuple[float, float]:
    """``(pos_weight, norm)`` rebalancing; both 1 when there are no negatives."""
    total = labels.size
    m = float(labels.sum())
    if m == total:
        return 1.0, 1.0
    return (total - m) / m, total / (2.0 * (total - m))


def _weighted_bce(log_p: Node, log_1mp: Node, labels: np.ndarray) -> Node:
    pos_w, norm = class_weights(labels)
    tape = log_p.tape
    pos = tape.const(pos_w * labels)
    neg = tape.const(1.0 - labels)
    ll = log_p * pos + log_1mp * neg
    return ad.scale(ad.mean(ll), -norm)


def recon_loss(p: Node, adj_train, n: int) -> Node:
    """Negative weighted log-likelihood of ``A + I`` under edge probabilities ``p``."""
    labels = train_labels(adj_train, n)
    if p.shape != labels.shape:
        raise ad.DimensionError(f"p is {p.shape}, labels are {labels.shape}")
    pc = ad.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    return _weighted_bce(ad.log(pc), ad.log(1.0 - pc), labels)


def recon_loss_logits(logits: Node, adj_train, n: int) -> Node:
    """Same loss as :func:`recon_loss` with ``p = sigmoid(logits)``, without clamping."""
    labels = train_labels(adj_train, n)
    return _weighted_bce(ad.log_sigmoid(logits), ad.log_sigmoid(-logits), labels)


def kl_loss(mu: Node, log_sigma: Node, n: int) -> Node:
    """KL(N(mu, sigma^2) || N(0, 1)) summed over entries, divided by ``n``."""
    if mu.shape != log_sigma.shape:
        raise ad.DimensionError(f"mu {mu.shape} vs log_sigma {log_sigma.shape}")
    var = ad.exp(ad.scale(log_sigma, 2.0))
    inner = 1.0 + ad.scale(log_sigma, 2.0) - ad.square(mu) - var
    return ad.scale(ad.total(inner), -0.5 / n)


def dag_penalty(phi: Node, r: float = 1.0, form: str = "poly_plus") -> Node:
    """Polynomial acyclicity measure ``tr((I +/- (r/K) phi*phi)^K) - K``."""
    if not r > 0:
        raise ValueError("r must be positive")
    k = phi.shape[0]
    sq = phi * phi
    eye = phi.tape.const(np.eye(k))
    if form == "poly_plus":
        m = eye + ad.scale(sq, r / k)
        return ad.matrix_power_trace(m, k) - float(k)
    if form == "paper_literal_abs":
        m = eye - ad.scale(sq, r / k)
        return ad.absolute(ad.matrix_power_trace(m, k) - float(k))
    raise ValueError(f"unknown DAG penalty form {form!r}; expected one of {DAG_FORMS}")


def mse_loss(x, x_hat: Node) -> Node:
    x = x_hat.tape.const(x) if not isinstance(x, Node) else x
    if x.shape != x_hat.shape:
        raise ad.DimensionError(f"mse: {x.shape} vs {x_hat.shape}")
    return ad.mean(ad.square(x_hat - x))


def total_loss(recon: Node, kl: Node, dag: Node, mse: Node, alpha: float = 1.0,
               beta: float = 1.0) -> Node:
    """``recon + kl + alpha * dag + beta * mse``; recon is already the negative log-likelihood."""
    return recon + kl + ad.scale(dag, alpha) + ad.scale(mse, beta)
