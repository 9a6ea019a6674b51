"""Synthetic attributed graphs driven by a ground-truth linear SCM.

Latent rows follow ``z = C^T z + eps``, i.e. ``z = (I - C^T)^-1 eps`` with
``C`` strictly lower-triangular.  Attributes are ``20 sin(z)`` and each
unordered pair ``(i, j)`` is joined with probability ``sigmoid(z_i . z_j)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit

from .graphio import GraphDataset, save_graph


@dataclass(frozen=True, eq=False)
class ScmSpec:
    k: int = 16
    n: int = 100
    c: np.ndarray = field(default=None, repr=False)
    noise_var: float = 1.0
    seed: int = 0

    def __post_init__(self):
        c = np.zeros((self.k, self.k)) if self.c is None else np.asarray(self.c, dtype=np.float64)
        if c.shape != (self.k, self.k):
            raise ValueError(f"c must be {self.k}x{self.k}, got {c.shape}")
        if np.any(np.triu(c) != 0):
            raise ValueError("c must be strictly lower-triangular")
        if not self.noise_var > 0:
            raise ValueError("noise_var must be positive")
        if self.k < 1 or self.n < 1:
            raise ValueError("k and n must be positive")
        object.__setattr__(self, "c", c)

    def with_seed(self, seed: int) -> "ScmSpec":
        return ScmSpec(self.k, self.n, self.c, self.noise_var, seed)

    def covariance(self) -> np.ndarray:
        """Population covariance of a latent row."""
        m = np.linalg.inv(np.eye(self.k) - self.c.T)
        return self.noise_var * m @ m.T

    def to_json(self) -> dict:
        return {"k": self.k, "n": self.n, "noise_var": float(self.noise_var),
                "seed": int(self.seed), "c": self.c.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "ScmSpec":
        return cls(int(obj["k"]), int(obj["n"]), np.array(obj["c"], dtype=np.float64),
                   float(obj["noise_var"]), int(obj["seed"]))


def _streams(seed: int):
    factor_ss, edge_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(factor_ss), np.random.default_rng(edge_ss)


def gen_spec(k: int = 16, n: int = 100, noise_var: float = 1.0, seed: int = 0) -> ScmSpec:
    """Random strictly lower-triangular ``C`` with U[-1, 1] entries below the diagonal."""
    if k < 1 or n < 1:
        raise ValueError("k and n must be positive")
    rng = np.random.default_rng(seed)
    c = np.tril(rng.uniform(-1.0, 1.0, size=(k, k)), k=-1)
    return ScmSpec(k, n, c, noise_var, seed)


def gen_factors(spec: ScmSpec, eps: np.ndarray | None = None) -> np.ndarray:
    """Latent factors, one row per node.

    ``eps`` (n x k) may be passed to bypass sampling.
    """
    if eps is None:
        rng, _ = _streams(spec.seed)
        eps = rng.normal(0.0, np.sqrt(spec.noise_var), size=(spec.n, spec.k))
    eps = np.asarray(eps, dtype=np.float64)
    # (I - C^T) is unit upper-triangular; solve column-wise for z^T
    return solve_triangular(np.eye(spec.k) - spec.c.T, eps.T, lower=False, unit_diagonal=True).T


def gen_graph(spec: ScmSpec, z: np.ndarray | None = None, name: str = "synthetic") -> GraphDataset:
    """Sample a graph from the SCM (or from supplied latent rows ``z``)."""
    if z is None:
        z = gen_factors(spec)
    _, rng = _streams(spec.seed)
    n = z.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    prob = expit(np.einsum("ij,ij->i", z[iu], z[ju]))
    keep = rng.random(len(prob)) < prob
    edges = frozenset(zip(iu[keep].tolist(), ju[keep].tolist()))
    return GraphDataset(n, z.shape[1], edges, 20.0 * np.sin(z), name)


def density(g: GraphDataset) -> float:
    pairs = g.n * (g.n - 1) // 2
    return len(g.edges) / pairs if pairs else 0.0


def write_dataset(spec: ScmSpec, out) -> GraphDataset:
    """Write graphio files plus ``scm.json`` (with the realized edge count)."""
    g = gen_graph(spec)
    out = Path(out)
    save_graph(g, out)
    meta = spec.to_json()
    meta["num_edges"] = len(g.edges)
    (out / "scm.json").write_text(json.dumps(meta) + "\n")
    return g
