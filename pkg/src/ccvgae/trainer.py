"""Training loop, edge scoring, AUC / AP and the singular-value report."""
from __future__ import annotations

import dataclasses
import logging
import time
from fractions import Fraction
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from . import autodiff as ad
from . import model as mdl
from . import objective as obj
from .graphio import EdgeSplit, GraphDataset, normalize

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """A non-finite value appeared during training."""


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 0.01
    hidden_dim: int = 32
    latent_dim: int = 16
    alpha: float = 1.0
    beta: float = 1.0
    r: float = 1.0
    seed: int = 0
    dag_form: str = "poly_plus"
    attr_mode: str = "direct"
    val_frac: float = 0.05
    test_frac: float = 0.10

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.hidden_dim < 1 or self.latent_dim < 1:
            raise ValueError("dimensions must be positive")
        if not (0 <= self.val_frac < 1 and 0 <= self.test_frac < 1):
            raise ValueError("fractions must lie in [0, 1)")
        if self.dag_form not in obj.DAG_FORMS:
            raise ValueError(f"dag_form must be one of {obj.DAG_FORMS}")
        if self.attr_mode not in mdl.ATTR_MODES:
            raise ValueError(f"attr_mode must be one of {mdl.ATTR_MODES}")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = sorted(set(d) - set(cls.keys()))
        if unknown:
            raise KeyError(f"unknown config keys {unknown}; valid keys: {cls.keys()}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class EvalReport:
    auc: float
    ap: float
    epochs: int
    losses: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    wall_time_s: float | None = None
    val_auc: float | None = None
    val_ap: float | None = None

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


LOSS_KEYS = ("recon", "kl", "dag", "mse", "total")


def forward_losses(b: mdl.Bound, anorm, attrs, labels, noise, cfg: TrainConfig, gate=None):
    """Full forward pass on ``b.tape``; returns (total, terms dict, G node)."""
    n = attrs.shape[0]
    enc = mdl.encode(b, anorm, attrs, noise, gate=gate)
    g = mdl.causal_layer(b.phi, enc.eps)
    recon = obj.recon_loss_logits(mdl.adjacency_logits(g), labels, n)
    kl = obj.kl_loss(enc.mu, enc.log_sigma, n)
    dag = obj.dag_penalty(b.phi, cfg.r, cfg.dag_form)
    mse = obj.mse_loss(attrs, mdl.decode_attributes(g, b, cfg.attr_mode))
    total = obj.total_loss(recon, kl, dag, mse, cfg.alpha, cfg.beta)
    return total, {"recon": recon, "kl": kl, "dag": dag, "mse": mse, "total": total}, g


def fit(g: GraphDataset, split: EdgeSplit, cfg: TrainConfig | None = None):
    """Full-batch training on the train edges; returns ``(params, EvalReport)``."""
    cfg = cfg or TrainConfig()
    start = time.perf_counter()
    params = mdl.init_params(g.d, cfg.hidden_dim, cfg.latent_dim, cfg.seed, cfg.attr_mode)
    anorm = normalize(g, split.train_pos)
    labels = obj.train_labels(split.train_pos, g.n)
    rng = np.random.default_rng([cfg.seed, 1])
    state = ad.AdamState.for_params(params.arrays(), lr=cfg.lr)
    losses = []
    for epoch in range(cfg.epochs):
        noise = rng.standard_normal((g.n, cfg.latent_dim))
        tape = ad.Tape()
        b = params.bind(tape)
        try:
            total, terms, _ = forward_losses(b, anorm, g.attrs, labels, noise, cfg)
            tape.backward(total)
        except ad.NumericError as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}") from exc
        grads = b.grads()
        if not all(np.all(np.isfinite(gr)) for gr in grads):
            raise TrainingDiverged(f"epoch {epoch}: non-finite gradient")
        losses.append({k: terms[k].item() for k in LOSS_KEYS})
        ad.adam_step(state, params.arrays(), grads)
        np.fill_diagonal(params.phi, 0.0)
    report = evaluate(params, g, split, anorm=anorm)
    report.losses = losses
    report.epochs = cfg.epochs
    report.config = cfg.to_dict()
    report.wall_time_s = time.perf_counter() - start
    log.info("fit done: auc=%.4f ap=%.4f (%.1fs)", report.auc, report.ap, report.wall_time_s)
    return params, report


def evaluate(params: mdl.CcvgaeParams, g: GraphDataset, split: EdgeSplit,
             anorm: np.ndarray | None = None) -> EvalReport:
    """Test (and validation, if present) AUC/AP with mean-mode scoring."""
    if params.dims[0] != g.d:
        raise mdl.ConfigError(f"checkpoint expects d={params.dims[0]}, data has d={g.d}")
    anorm = normalize(g, split.train_pos) if anorm is None else anorm
    latent = mdl.latent_factors(params, anorm, g.attrs)

    def metrics(pos, neg):
        if not pos or not neg:
            return None, None
        s = _pair_scores(latent, pos + neg)
        y = [1] * len(pos) + [0] * len(neg)
        return auc(y, s), average_precision(y, s)

    test_auc, test_ap = metrics(split.test_pos, split.test_neg)
    val_auc, val_ap = metrics(split.val_pos, split.val_neg)
    return EvalReport(auc=test_auc, ap=test_ap, epochs=0, val_auc=val_auc, val_ap=val_ap)


def _pair_scores(latent: np.ndarray, pairs) -> np.ndarray:
    idx = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if idx.size and (idx.min() < 0 or idx.max() >= latent.shape[0]):
        raise IndexError(f"pair index out of range for n={latent.shape[0]}")
    return expit(np.einsum("ij,ij->i", latent[idx[:, 0]], latent[idx[:, 1]]))


def score_edges(params: mdl.CcvgaeParams, anorm: np.ndarray, attrs: np.ndarray, pairs,
                mode: str = "mean", rng: np.random.Generator | None = None) -> np.ndarray:
    """``sigmoid(g_i . g_j)`` for each requested pair."""
    if mode == "mean":
        noise = None
    elif mode == "sample":
        rng = rng or np.random.default_rng(0)
        noise = rng.standard_normal((attrs.shape[0], params.dims[2]))
    else:
        raise ValueError(f"mode must be 'mean' or 'sample', got {mode!r}")
    return _pair_scores(mdl.latent_factors(params, anorm, attrs, noise), pairs)


def _check_labels(labels, scores):
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ValueError("labels and scores must be 1-D and equally long")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return y.astype(bool), s


def auc(labels, scores) -> float:
    """ROC AUC in Mann-Whitney form; tied scores count one half."""
    y, s = _check_labels(labels, scores)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(labels, scores) -> float:
    """Mean precision at each positive's rank.

    Items are ordered by descending score; ties keep their input order
    (stable sort), so AP is tie-order sensitive by construction.
    """
    y, s = _check_labels(labels, scores)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    ranks = np.flatnonzero(hits) + 1
    # exact rational sum, rounded once, so the result is the correctly rounded AP
    total = sum(Fraction(k, int(r)) for k, r in enumerate(ranks, 1))
    return float(total / n_pos)


def svd_spectrum(g) -> list[float]:
    """Singular values of the factor matrix, descending, scaled so the first is 1."""
    g = np.asarray(g.value if isinstance(g, ad.Node) else g, dtype=np.float64)
    s = np.linalg.svd(g, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        raise ValueError("spectrum of an all-zero factor matrix is undefined")
    out = s / s[0]
    out[0] = 1.0
    return out.tolist()
