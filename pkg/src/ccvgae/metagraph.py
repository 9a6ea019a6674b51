"""Few-shot link prediction over a family of graphs (first-order meta-learning).

A global set of GCN weights, a graph-signature network ``psi`` and a shared
causal matrix ``C`` are meta-trained.  For each graph the GCN weights are
copied and adapted for a few plain gradient steps with ``psi`` and ``C``
held fixed; the validation loss of the adapted copy then drives one outer
step on all three global pieces.
"""
from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from . import model as mdl
from . import objective as obj
from .graphio import EdgeSplit, GraphDataset, normalize, num_non_edges, sample_negatives
from .synth import ScmSpec, gen_graph
from .trainer import auc, average_precision

log = logging.getLogger(__name__)

GNN_NAMES = ("w0", "w1", "w2")
VAL_FRAC = 0.20


@dataclass
class GraphFamily:
    graphs: list[GraphDataset]
    meta_train: list[int]
    meta_val: list[int]
    meta_test: list[int]
    access_log: list[tuple[str, int]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        ds = {g.d for g in self.graphs}
        if len(ds) > 1:
            raise ValueError(f"graphs disagree on attribute dimension: {sorted(ds)}")
        idx = sorted(self.meta_train + self.meta_val + self.meta_test)
        if idx != list(range(len(self.graphs))):
            raise ValueError("meta split must partition the graph list")

    @property
    def d(self) -> int:
        return self.graphs[0].d

    def get(self, i: int, phase: str) -> GraphDataset:
        self.access_log.append((phase, i))
        return self.graphs[i]


def build_family(spec: ScmSpec, count: int, seed: int = 0) -> GraphFamily:
    """``count`` graphs from one shared causal matrix, split 80/10/10 by floor rule."""
    if count < 5:
        raise ValueError("a family needs at least 5 graphs")
    seeds = np.random.SeedSequence(seed).generate_state(count + 1)
    graphs = [gen_graph(spec.with_seed(int(s)), name=f"family-{seed}-{i}")
              for i, s in enumerate(seeds[:count])]
    order = np.random.default_rng(int(seeds[-1])).permutation(count).tolist()
    n_train, n_val = math.floor(0.8 * count), math.floor(0.1 * count)
    return GraphFamily(graphs, sorted(order[:n_train]), sorted(order[n_train:n_train + n_val]),
                       sorted(order[n_train + n_val:]))


@dataclass
class MetaConfig:
    inner_loops: int = 10
    inner_lr: float = 0.001
    outer_lr: float = 0.001
    edge_fraction: float = 0.05
    signature_dim: int = 16
    seed: int = 0
    meta_epochs: int = 30
    hidden_dim: int = 32
    latent_dim: int = 16
    alpha: float = 1.0
    beta: float = 1.0
    r: float = 1.0
    signature_hidden: int = 16

    def __post_init__(self):
        if self.inner_lr < 0 or self.outer_lr < 0:
            raise ValueError("learning rates must be non-negative")
        if not 0 < self.edge_fraction < 1:
            raise ValueError("edge_fraction must lie in (0, 1)")
        if self.signature_dim != self.latent_dim:
            raise ValueError("signature_dim must equal latent_dim (it gates the latent heads)")
        if self.inner_loops < 0:
            raise ValueError("inner_loops must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class SignatureNet:
    w: np.ndarray      # d x hs, one GCN layer
    proj: np.ndarray   # hs x k
    bias: np.ndarray   # 1 x k

    def arrays(self):
        return [self.w, self.proj, self.bias]

    def copy(self):
        return SignatureNet(self.w.copy(), self.proj.copy(), self.bias.copy())


@dataclass
class GlobalState:
    gnn: mdl.CcvgaeParams
    psi: SignatureNet
    c: np.ndarray

    def copy(self) -> "GlobalState":
        return GlobalState(self.gnn.copy(), self.psi.copy(), self.c.copy())

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in self.gnn.arrays() + self.psi.arrays() + [self.c]:
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def init_global(d: int, cfg: MetaConfig, seed: int | None = None) -> GlobalState:
    seed = cfg.seed if seed is None else seed
    gnn = mdl.init_params(d, cfg.hidden_dim, cfg.latent_dim, seed,
                          attr_mode="direct" if d == cfg.latent_dim else "linear")
    # sigma = 1 at start; Glorot log-sigma weights overflow exp() under plain gradient steps
    gnn.w2[...] = 0.0
    rng = np.random.default_rng([seed, 7])
    psi = SignatureNet(mdl.glorot(rng, d, cfg.signature_hidden),
                       mdl.glorot(rng, cfg.signature_hidden, cfg.signature_dim),
                       np.zeros((1, cfg.signature_dim)))
    return GlobalState(gnn, psi, np.zeros((cfg.latent_dim, cfg.latent_dim)))


def _signature_node(tape: ad.Tape, psi_nodes, g: GraphDataset, edges) -> ad.Node:
    w, proj, bias = psi_nodes
    a = tape.const(normalize(g, edges))
    h = ad.relu(a @ (tape.const(g.attrs) @ w))
    return ad.sigmoid(ad.mean_rows(h) @ proj + bias)


def signature(psi: SignatureNet, g: GraphDataset, visible_edges) -> np.ndarray:
    """Per-dimension gate in (0, 1): GCN layer, mean-pool, affine map, sigmoid."""
    tape = ad.Tape()
    nodes = [tape.const(a) for a in psi.arrays()]
    return _signature_node(tape, nodes, g, list(visible_edges)).value.ravel()


def _episode_loss(b: mdl.Bound, c: ad.Node, gate, g: GraphDataset, visible, labels,
                  noise, cfg: MetaConfig) -> ad.Node:
    anorm = normalize(g, visible)
    enc = mdl.encode(b, anorm, g.attrs, noise, gate=gate)
    z = mdl.causal_layer(c, enc.eps)
    recon = obj.recon_loss_logits(mdl.adjacency_logits(z), labels, g.n)
    kl = obj.kl_loss(enc.mu, enc.log_sigma, g.n)
    loss = recon + kl + ad.scale(obj.dag_penalty(c, cfg.r), cfg.alpha)
    if cfg.beta:
        x_hat = mdl.decode_attributes(z, b, b.params.attr_mode)
        loss = loss + ad.scale(obj.mse_loss(g.attrs, x_hat), cfg.beta)
    return loss


def inner_adapt(state: GlobalState, g: GraphDataset, train_edges, cfg: MetaConfig,
                loops: int | None = None, rng: np.random.Generator | None = None) -> mdl.CcvgaeParams:
    """Copy the global GCN weights and take ``loops`` plain gradient steps on ``g``.

    The signature gate and ``C`` enter as constants, so ``state`` is never
    touched.
    """
    loops = cfg.inner_loops if loops is None else loops
    rng = rng or np.random.default_rng(cfg.seed)
    local = state.gnn.copy()
    train_edges = list(train_edges)
    gate = signature(state.psi, g, train_edges)[None, :]
    labels = obj.train_labels(train_edges, g.n)
    for _ in range(loops):
        tape = ad.Tape()
        b = local.bind(tape)
        c = tape.const(state.c)
        loss = _episode_loss(b, c, gate, g, train_edges, labels,
                             rng.standard_normal((g.n, cfg.latent_dim)), cfg)
        tape.backward(loss)
        for name in GNN_NAMES:
            getattr(local, name)[...] -= cfg.inner_lr * b.nodes[name].grad
    return local


def outer_update(state: GlobalState, g: GraphDataset, split: EdgeSplit, local: mdl.CcvgaeParams,
                 cfg: MetaConfig, rng: np.random.Generator | None = None) -> float:
    """One first-order meta step from the validation loss of the adapted ``local``.

    Gradients with respect to the local GCN weights are applied to the
    global weights directly (no differentiation through the inner steps);
    ``psi`` and ``C`` get their exact gradients.  Returns the loss value.
    """
    rng = rng or np.random.default_rng(cfg.seed)
    visible = list(split.train_pos)
    seen = visible + list(split.val_pos)
    tape = ad.Tape()
    b = local.bind(tape)
    psi_nodes = [tape.leaf(a) for a in state.psi.arrays()]
    c = tape.leaf(state.c)
    gate = _signature_node(tape, psi_nodes, g, seen)
    labels = obj.train_labels(seen, g.n)
    loss = _episode_loss(b, c, gate, g, visible, labels,
                         rng.standard_normal((g.n, cfg.latent_dim)), cfg)
    tape.backward(loss)
    lr = cfg.outer_lr
    for name in GNN_NAMES:
        getattr(state.gnn, name)[...] -= lr * b.nodes[name].grad
    for arr, node in zip(state.psi.arrays(), psi_nodes):
        arr -= lr * node.grad
    state.c -= lr * c.grad
    # keep C a DAG candidate with no self-loops, as for phi during plain training
    np.fill_diagonal(state.c, 0.0)
    return loss.item()


def fewshot_split(g: GraphDataset, fraction: float, seed: int) -> EdgeSplit:
    """Reveal ``floor(fraction |E|)`` edges, hold out 20% for validation, test on the rest.

    Only the test set gets negatives, as many as there are test edges or
    non-edges, whichever is smaller; ``val_neg`` stays empty.
    """
    rng = np.random.default_rng(seed)
    edges = g.sorted_edges()
    m = len(edges)
    n_train, n_val = math.floor(fraction * m), math.floor(VAL_FRAC * m)
    shuffled = [edges[i] for i in rng.permutation(m)]
    train, val, test = shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:]
    k = min(len(test), num_non_edges(g))
    return EdgeSplit(train, val, [], test, sample_negatives(g, k, rng=rng), seed)


def meta_train(family: GraphFamily, cfg: MetaConfig) -> GlobalState:
    state = init_global(family.d, cfg)
    rng = np.random.default_rng([cfg.seed, 11])
    for epoch in range(cfg.meta_epochs):
        for i in rng.permutation(family.meta_train).tolist():
            g = family.get(i, "meta-train")
            split = fewshot_split(g, cfg.edge_fraction, seed=int(rng.integers(2**31)))
            local = inner_adapt(state, g, split.train_pos, cfg, rng=rng)
            outer_update(state, g, split, local, cfg, rng=rng)
    return state


def pretrain(family: GraphFamily, cfg: MetaConfig) -> GlobalState:
    """No-meta baseline: plain gradient steps on the meta-train graphs.

    Each graph visit takes ``inner_loops + 1`` steps, the same gradient
    budget as one meta-training episode.
    """
    state = init_global(family.d, cfg)
    rng = np.random.default_rng([cfg.seed, 13])
    steps = cfg.inner_loops + 1
    for epoch in range(cfg.meta_epochs):
        for i in rng.permutation(family.meta_train).tolist():
            g = family.get(i, "meta-train")
            split = fewshot_split(g, cfg.edge_fraction, seed=int(rng.integers(2**31)))
            for _ in range(steps):
                outer_update(state, g, split, state.gnn.copy(), cfg, rng=rng)
    return state


def evaluate_graph(state: GlobalState, g: GraphDataset, split: EdgeSplit, cfg: MetaConfig,
                   loops: int, rng: np.random.Generator) -> tuple[float, float]:
    local = inner_adapt(state, g, split.train_pos, cfg, loops=loops, rng=rng)
    gate = signature(state.psi, g, split.train_pos)[None, :]
    tape = ad.Tape()
    b = local.bind(tape, trainable=False)
    anorm = normalize(g, split.train_pos)
    enc = mdl.encode(b, anorm, g.attrs, np.zeros((g.n, cfg.latent_dim)), gate=gate)
    z = mdl.causal_layer(tape.const(state.c), enc.eps).value
    pos = split.test_pos[:len(split.test_neg)]
    pairs = np.array(pos + split.test_neg)
    scores = expit(np.einsum("ij,ij->i", z[pairs[:, 0]], z[pairs[:, 1]]))
    labels = [1] * len(pos) + [0] * len(split.test_neg)
    return auc(labels, scores), average_precision(labels, scores)


def _eval_family(state_for, family: GraphFamily, cfg: MetaConfig, loops: int) -> list[float]:
    out = []
    for j, i in enumerate(family.meta_test):
        g = family.get(i, "meta-test")
        split = fewshot_split(g, cfg.edge_fraction, seed=cfg.seed * 1000 + i)
        rng = np.random.default_rng([cfg.seed, 17, i])
        out.append(evaluate_graph(state_for(j), g, split, cfg, loops, rng)[0])
    return out


def run_fewshot(family: GraphFamily, cfg: MetaConfig, loops_list=(10, 30, 50, 70),
                fractions=(0.05, 0.10), methods=("cc", "pretrain", "rand")) -> list[dict]:
    """Sweep (loops, fraction) and report mean/std meta-test AUC per method.

    Global states are trained once per fraction (meta-training uses
    ``cfg.inner_loops``); ``loops`` is the number of adaptation steps on each
    meta-test graph.
    """
    cells = []
    for fraction in fractions:
        c = dataclasses.replace(cfg, edge_fraction=fraction)
        states = {}
        if "cc" in methods:
            meta = meta_train(family, c)
            states["cc"] = lambda j, s=meta: s
        if "pretrain" in methods:
            pre = pretrain(family, c)
            states["pretrain"] = lambda j, s=pre: s
        if "rand" in methods:
            states["rand"] = lambda j: init_global(family.d, c, seed=c.seed * 7919 + 101 + j)
        for loops in loops_list:
            for method in methods:
                aucs = _eval_family(states[method], family, c, loops)
                cells.append({"loops": int(loops), "fraction": float(fraction), "method": method,
                              "auc_mean": float(np.mean(aucs)), "auc_std": float(np.std(aucs))})
                log.info("fewshot %s loops=%d frac=%.2f auc=%.4f", method, loops, fraction,
                         cells[-1]["auc_mean"])
    return cells
