import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccvgae import graphio, synth, trainer
from ccvgae.graphio import normalize
from ccvgae.trainer import TrainConfig


def auc_oracle(labels, scores):
    """Fraction of (positive, negative) pairs ranked correctly, ties counting one half."""
    pos = [s for y, s in zip(labels, scores) if y]
    neg = [s for y, s in zip(labels, scores) if not y]
    wins = sum(Fraction(1) if p > q else Fraction(1, 2) if p == q else Fraction(0)
               for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def ap_oracle(labels, scores):
    order = sorted(range(len(scores)), key=lambda i: -scores[i])  # sorted() is stable
    hits, acc = 0, Fraction(0)
    for rank, i in enumerate(order, 1):
        if labels[i]:
            hits += 1
            acc += Fraction(hits, rank)
    return acc / hits


@st.composite
def scored_labels(draw, need_both=True):
    n = draw(st.integers(2 if need_both else 1, 20))
    labels = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    if need_both and len(set(labels)) < 2:
        labels[0], labels[-1] = 1, 0
    elif not any(labels):
        labels[0] = 1
    # a small score alphabet makes ties common
    scores = draw(st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]), min_size=n, max_size=n))
    return labels, scores


# ---------------------------------------------------------------- metrics


def test_auc_examples():
    assert trainer.auc([1, 1, 0, 0], [0.9, 0.8, 0.3, 0.1]) == 1.0
    assert trainer.auc([1, 0, 1, 0], [0.9, 0.8, 0.2, 0.1]) == 0.75
    assert trainer.auc([1, 0, 1, 0], [0.3] * 4) == 0.5
    with pytest.raises(ValueError):
        trainer.auc([1, 1], [0.1, 0.2])
    with pytest.raises(ValueError):
        trainer.auc([1, 2], [0.1, 0.2])


def test_ap_examples():
    assert trainer.average_precision([1, 1, 0, 0], [0.9, 0.8, 0.3, 0.1]) == 1.0
    assert trainer.average_precision([1, 0, 1, 0], [0.9, 0.8, 0.2, 0.1]) == pytest.approx(5 / 6)
    assert trainer.average_precision([0, 0, 0, 1], [0.9, 0.8, 0.2, 0.1]) == 0.25
    with pytest.raises(ValueError):
        trainer.average_precision([0, 0], [0.1, 0.2])


def test_ap_ties_follow_input_order():
    assert trainer.average_precision([1, 0], [0.5, 0.5]) == 1.0
    assert trainer.average_precision([0, 1], [0.5, 0.5]) == 0.5


@settings(max_examples=1000, deadline=None)
@given(scored_labels())
def test_auc_matches_pairwise_oracle(case):
    labels, scores = case
    assert trainer.auc(labels, scores) == float(auc_oracle(labels, scores))


@settings(max_examples=1000, deadline=None)
@given(scored_labels(need_both=False))
def test_ap_matches_rank_oracle(case):
    labels, scores = case
    assert trainer.average_precision(labels, scores) == float(ap_oracle(labels, scores))


# ---------------------------------------------------------------- scoring and spectrum


def test_pair_scores_examples():
    z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    s = trainer._pair_scores(z, [(0, 1), (0, 2)])
    assert s[0] == pytest.approx(1 / (1 + np.exp(-1.0))) and s[0] >= 0.5
    assert s[1] == 0.5
    with pytest.raises(IndexError):
        trainer._pair_scores(z, [(0, 3)])


def test_score_edges_modes(toy_graph):
    p = trainer.mdl.init_params(2, 4, 2, seed=0)
    a = normalize(toy_graph)
    pairs = [(0, 1), (2, 4)]
    s1 = trainer.score_edges(p, a, toy_graph.attrs, pairs)
    assert np.array_equal(s1, trainer.score_edges(p, a, toy_graph.attrs, pairs))
    assert np.all((s1 > 0) & (s1 < 1))
    s2 = trainer.score_edges(p, a, toy_graph.attrs, pairs, mode="sample", rng=np.random.default_rng(1))
    assert s2.shape == (2,)
    with pytest.raises(ValueError):
        trainer.score_edges(p, a, toy_graph.attrs, pairs, mode="median")


def test_svd_spectrum_examples(rng):
    assert trainer.svd_spectrum(np.vstack([np.eye(3), np.zeros((2, 3))])) == pytest.approx([1, 1, 1])
    rank1 = np.outer(rng.normal(size=6), rng.normal(size=3))
    s = trainer.svd_spectrum(rank1)
    assert s[0] == 1.0 and max(s[1:]) < 1e-12
    with pytest.raises(ValueError):
        trainer.svd_spectrum(np.zeros((4, 2)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_svd_spectrum_ordered(seed):
    s = trainer.svd_spectrum(np.random.default_rng(seed).normal(size=(8, 4)))
    assert s[0] == 1.0 and all(a >= b for a, b in zip(s, s[1:])) and s[-1] >= 0


# ---------------------------------------------------------------- config and fit


def test_config_defaults_and_keys():
    c = TrainConfig()
    assert (c.epochs, c.lr, c.hidden_dim, c.latent_dim) == (200, 0.01, 32, 16)
    assert (c.alpha, c.beta, c.r, c.val_frac, c.test_frac) == (1.0, 1.0, 1.0, 0.05, 0.10)
    assert TrainConfig.from_dict({"alpha": 0}).alpha == 0
    with pytest.raises(KeyError, match="valid keys"):
        TrainConfig.from_dict({"alhpa": 0})
    for bad in ({"epochs": 0}, {"latent_dim": 0}, {"val_frac": 1.0}, {"dag_form": "x"}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def toy_fit(toy_graph, epochs=1, seed=0):
    split = graphio.split_edges(toy_graph, 0.0, 0.3, seed=0)
    cfg = TrainConfig(epochs=epochs, hidden_dim=4, latent_dim=2, seed=seed)
    return trainer.fit(toy_graph, split, cfg)


def test_fit_smoke_on_toy(toy_graph):
    _, rep = toy_fit(toy_graph)
    assert len(rep.losses) == rep.epochs == 1
    assert all(np.isfinite(v) for v in rep.losses[0].values())
    assert 0 <= rep.auc <= 1 and 0 <= rep.ap <= 1


def test_fit_deterministic(toy_graph):
    p1, r1 = toy_fit(toy_graph, epochs=15, seed=3)
    p2, r2 = toy_fit(toy_graph, epochs=15, seed=3)
    assert r1.losses == r2.losses
    assert all(a.tobytes() == b.tobytes() for a, b in zip(p1.arrays(), p2.arrays()))
    assert np.all(np.diag(p1.phi) == 0)


def test_fit_diverges_loudly(toy_graph):
    split = graphio.split_edges(toy_graph, 0.0, 0.3, seed=0)
    with pytest.raises(trainer.TrainingDiverged):
        trainer.fit(toy_graph, split, TrainConfig(epochs=50, lr=1e6, hidden_dim=4, latent_dim=2))


def test_report_json_shape(toy_graph):
    _, rep = toy_fit(toy_graph, epochs=2)
    obj = json.loads(json.dumps(rep.to_json()))
    assert {"auc", "ap", "epochs", "losses", "config", "wall_time_s"} <= set(obj)
    assert set(obj["losses"][0]) == set(trainer.LOSS_KEYS)


def test_evaluate_matches_fit_report(toy_graph):
    split = graphio.split_edges(toy_graph, 0.0, 0.3, seed=0)
    params, rep = trainer.fit(toy_graph, split, TrainConfig(epochs=5, hidden_dim=4, latent_dim=2))
    again = trainer.evaluate(params, toy_graph, split)
    assert (again.auc, again.ap) == (rep.auc, rep.ap)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fit_reduces_recon_on_synthetic(seed):
    g = synth.gen_graph(synth.gen_spec(16, 100, 10.0, seed))
    split = graphio.split_edges(g, seed=seed)
    _, rep = trainer.fit(g, split, TrainConfig(seed=seed))
    assert rep.losses[-1]["recon"] < rep.losses[0]["recon"]
