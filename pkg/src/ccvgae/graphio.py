"""Attributed graph storage, the GCN propagation operator, and edge splits."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

Edge = tuple[int, int]


class GraphFormatError(ValueError):
    pass


class InsufficientNonEdgesError(ValueError):
    pass


def canonical(u: int, v: int) -> Edge:
    u, v = int(u), int(v)
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class GraphDataset:
    n: int
    d: int
    edges: frozenset[Edge]
    attrs: np.ndarray
    name: str = "graph"

    def __post_init__(self):
        attrs = np.asarray(self.attrs, dtype=np.float64)
        if attrs.size == 0 and self.n * self.d == 0:
            attrs = attrs.reshape(self.n, self.d)
        if attrs.ndim != 2 or attrs.shape != (self.n, self.d):
            raise GraphFormatError(f"attrs must be {self.n}x{self.d}, got {np.shape(self.attrs)}")
        object.__setattr__(self, "attrs", attrs)
        object.__setattr__(self, "edges", frozenset(self.edges))
        for u, v in self.edges:
            if not (0 <= u < v < self.n):
                raise GraphFormatError(f"edge ({u}, {v}) is not canonical or out of range for n={self.n}")

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Edge], attrs, name: str = "graph") -> "GraphDataset":
        seen: set[Edge] = set()
        for u, v in edges:
            if u == v:
                raise GraphFormatError(f"self-loop at node {u}")
            e = canonical(u, v)
            if e in seen:
                raise GraphFormatError(f"duplicate edge {e}")
            seen.add(e)
        attrs = np.asarray(attrs, dtype=np.float64)
        if attrs.ndim != 2:
            raise GraphFormatError(f"attrs must be 2-D, got shape {attrs.shape}")
        return cls(n, attrs.shape[1], frozenset(seen), attrs, name)

    def sorted_edges(self) -> list[Edge]:
        return sorted(self.edges)

    def adjacency(self, edges: Iterable[Edge] | None = None) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for u, v in (self.edges if edges is None else edges):
            a[u, v] = a[v, u] = 1.0
        return a

    def __eq__(self, other):
        if not isinstance(other, GraphDataset):
            return NotImplemented
        return (self.n, self.d, self.edges, self.name) == (other.n, other.d, other.edges, other.name) \
            and np.array_equal(self.attrs, other.attrs)

    __hash__ = None


def load_graph(path) -> GraphDataset:
    path = Path(path)
    for fname in ("edges.tsv", "attrs.csv", "meta.json"):
        if not (path / fname).is_file():
            raise FileNotFoundError(path / fname)
    meta = json.loads((path / "meta.json").read_text())
    try:
        n, d = int(meta["n"]), int(meta["d"])
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphFormatError(f"meta.json needs integer 'n' and 'd': {exc}") from None
    name = str(meta.get("name", path.name))

    edges = []
    for lineno, line in enumerate((path / "edges.tsv").read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphFormatError(f"edges.tsv:{lineno}: expected two indices, got {line!r}")
        u, v = int(parts[0]), int(parts[1])
        if not (0 <= u < n and 0 <= v < n):
            raise GraphFormatError(f"edges.tsv:{lineno}: index out of range for n={n}")
        edges.append((u, v))

    rows = []
    for lineno, line in enumerate((path / "attrs.csv").read_text().splitlines(), 1):
        if not line.strip():
            continue
        row = [float(x) for x in line.split(",")] if d else []
        if len(row) != d:
            raise GraphFormatError(f"attrs.csv:{lineno}: expected {d} values, got {len(row)}")
        rows.append(row)
    if len(rows) != n:
        raise GraphFormatError(f"attrs.csv has {len(rows)} rows, meta says n={n}")
    attrs = np.array(rows, dtype=np.float64).reshape(n, d)
    return GraphDataset.from_edges(n, edges, attrs, name)


def save_graph(g: GraphDataset, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = [f"{u}\t{v}" for u, v in g.sorted_edges()]
    (path / "edges.tsv").write_text("".join(line + "\n" for line in lines))
    # repr() of a float round-trips exactly
    (path / "attrs.csv").write_text("".join(",".join(repr(float(x)) for x in row) + "\n" for row in g.attrs))
    (path / "meta.json").write_text(json.dumps({"n": g.n, "d": g.d, "name": g.name}) + "\n")


def normalize(g: GraphDataset, edges: Iterable[Edge] | None = None) -> np.ndarray:
    """Renormalized operator D^-1/2 (A + I) D^-1/2 over ``edges`` (default: all)."""
    if g.n < 1:
        raise GraphFormatError("graph has no nodes")
    return normalize_adjacency(g.adjacency(edges))


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    a_hat = a + np.eye(a.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return a_hat * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]


@dataclass
class EdgeSplit:
    train_pos: list[Edge]
    val_pos: list[Edge]
    val_neg: list[Edge]
    test_pos: list[Edge]
    test_neg: list[Edge]
    seed: int = 0

    def to_json(self) -> dict:
        enc = lambda es: [[int(u), int(v)] for u, v in es]  # noqa: E731
        return {"train_pos": enc(self.train_pos), "val_pos": enc(self.val_pos),
                "val_neg": enc(self.val_neg), "test_pos": enc(self.test_pos),
                "test_neg": enc(self.test_neg), "seed": int(self.seed)}

    @classmethod
    def from_json(cls, obj: dict) -> "EdgeSplit":
        try:
            dec = lambda key: [canonical(u, v) for u, v in obj[key]]  # noqa: E731
            return cls(dec("train_pos"), dec("val_pos"), dec("val_neg"),
                       dec("test_pos"), dec("test_neg"), int(obj["seed"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphFormatError(f"malformed split: {exc}") from None

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "EdgeSplit":
        return cls.from_json(json.loads(Path(path).read_text()))

    def check(self, g: GraphDataset) -> None:
        """Raise AssertionError if any split invariant fails for ``g``."""
        pos = [set(self.train_pos), set(self.val_pos), set(self.test_pos)]
        assert sum(map(len, pos)) == len(self.train_pos) + len(self.val_pos) + len(self.test_pos)
        assert not (pos[0] & pos[1] or pos[0] & pos[2] or pos[1] & pos[2])
        assert pos[0] | pos[1] | pos[2] == set(g.edges)
        negs = self.val_neg + self.test_neg
        assert len(set(negs)) == len(negs)
        for u, v in negs:
            assert 0 <= u < v < g.n and (u, v) not in g.edges
        assert len(self.val_neg) == len(self.val_pos) and len(self.test_neg) == len(self.test_pos)


def num_non_edges(g: GraphDataset) -> int:
    return g.n * (g.n - 1) // 2 - len(g.edges)


def sample_negatives(g: GraphDataset, k: int, exclude: Iterable[Edge] = (), seed: int = 0,
                     rng: np.random.Generator | None = None) -> list[Edge]:
    """Uniformly sample ``k`` distinct canonical non-edges outside ``exclude``."""
    rng = np.random.default_rng(seed) if rng is None else rng
    banned = set(g.edges) | {canonical(u, v) for u, v in exclude if u != v}
    if k == 0:
        return []
    iu, ju = np.triu_indices(g.n, k=1)
    mask = np.ones(len(iu), dtype=bool)
    if banned:
        b = np.array(sorted(banned))
        # flat index of (i, j) in the upper-triangle enumeration
        flat = b[:, 0] * g.n - b[:, 0] * (b[:, 0] + 1) // 2 + (b[:, 1] - b[:, 0] - 1)
        mask[flat] = False
    avail = np.flatnonzero(mask)
    if k > len(avail):
        raise InsufficientNonEdgesError(f"requested {k} non-edges, only {len(avail)} available")
    pick = rng.choice(len(avail), size=k, replace=False)
    return [(int(iu[avail[i]]), int(ju[avail[i]])) for i in pick]


def split_edges(g: GraphDataset, val_frac: float = 0.05, test_frac: float = 0.10,
                seed: int = 0) -> EdgeSplit:
    """Shuffle edges into train/val/test and attach equally many negatives.

    Bucket sizes are ``floor(frac * |E|)`` for test and val; the remainder
    goes to train.
    """
    if not (0 <= val_frac < 1 and 0 <= test_frac < 1 and val_frac + test_frac < 1):
        raise ValueError("need 0 <= val_frac, test_frac and val_frac + test_frac < 1")
    rng = np.random.default_rng(seed)
    edges = g.sorted_edges()
    m = len(edges)
    n_test = math.floor(test_frac * m)
    n_val = math.floor(val_frac * m)
    order = rng.permutation(m)
    shuffled = [edges[i] for i in order]
    test_pos = shuffled[:n_test]
    val_pos = shuffled[n_test:n_test + n_val]
    train_pos = shuffled[n_test + n_val:]
    negs = sample_negatives(g, n_test + n_val, rng=rng)
    return EdgeSplit(train_pos, val_pos, negs[n_test:], test_pos, negs[:n_test], seed)
