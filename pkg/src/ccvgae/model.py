"""GCN encoder, linear-SCM causal layer and decoders of the causal VGAE."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape

ATTR_MODES = ("direct", "linear")
PARAM_NAMES = ("w0", "w1", "w2", "phi", "w3")


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class CcvgaeParams:
    w0: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    phi: np.ndarray
    w3: np.ndarray | None = None
    attr_mode: str = "direct"

    def __post_init__(self):
        if self.attr_mode not in ATTR_MODES:
            raise ConfigError(f"attr_mode must be one of {ATTR_MODES}, got {self.attr_mode!r}")
        d, h = self.w0.shape
        k = self.w1.shape[1]
        expected = {"w0": (d, h), "w1": (h, k), "w2": (h, k), "phi": (k, k)}
        if self.attr_mode == "linear":
            if self.w3 is None:
                raise ConfigError("attr_mode='linear' needs a w3 readout")
            expected["w3"] = (k, d)
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ConfigError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.w0.shape[0], self.w0.shape[1], self.w1.shape[1]

    def names(self) -> list[str]:
        return [n for n in PARAM_NAMES if getattr(self, n) is not None]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in self.names()]

    def copy(self) -> "CcvgaeParams":
        return CcvgaeParams(*(None if a is None else a.copy() for a in
                              (self.w0, self.w1, self.w2, self.phi, self.w3)), attr_mode=self.attr_mode)

    def bind(self, tape: Tape, trainable: bool = True) -> "Bound":
        nodes = {n: tape.leaf(getattr(self, n), requires_grad=trainable) for n in self.names()}
        return Bound(tape, self, nodes)


@dataclass
class Bound:
    """Parameters placed on a tape as leaf nodes."""
    tape: Tape
    params: CcvgaeParams
    nodes: dict[str, Node] = field(default_factory=dict)

    def __getattr__(self, name):
        nodes = self.__dict__.get("nodes", {})
        if name in nodes:
            return nodes[name]
        if name in PARAM_NAMES:
            return None
        raise AttributeError(name)

    def grads(self) -> list[np.ndarray]:
        return [self.nodes[n].grad for n in self.params.names()]


@dataclass
class EncoderOutput:
    mu: Node
    log_sigma: Node
    eps: Node


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


def init_params(d: int, h: int, k: int, seed: int = 0, attr_mode: str = "direct") -> CcvgaeParams:
    if min(d, h, k) < 1:
        raise ConfigError("dimensions must be positive")
    if attr_mode not in ATTR_MODES:
        raise ConfigError(f"attr_mode must be one of {ATTR_MODES}, got {attr_mode!r}")
    if attr_mode == "direct" and d != k:
        raise ConfigError(f"attr_mode='direct' needs d == k, got d={d}, k={k}")
    rng = np.random.default_rng(seed)
    w0, w1, w2 = glorot(rng, d, h), glorot(rng, h, k), glorot(rng, h, k)
    w3 = glorot(rng, k, d) if attr_mode == "linear" else None
    return CcvgaeParams(w0, w1, w2, np.zeros((k, k)), w3, attr_mode)


def _bound(params) -> Bound:
    return params if isinstance(params, Bound) else params.bind(Tape(), trainable=False)


def encode(params, anorm: np.ndarray, attrs: np.ndarray, rng_noise: np.ndarray,
           gate: Node | np.ndarray | None = None) -> EncoderOutput:
    """Two-layer GCN with shared first layer and reparameterized sample.

    ``gate`` (1 x k) multiplies both heads; used by the meta-learner.
    """
    b = _bound(params)
    tape = b.tape
    a = tape.const(anorm)
    x = tape.const(attrs)
    hidden = ad.relu(a @ (x @ b.w0))
    ah = a @ hidden
    mu = ah @ b.w1
    log_sigma = ah @ b.w2
    n = mu.shape[0]
    if gate is not None:
        g = gate if isinstance(gate, Node) else tape.const(gate)
        rows = ad.broadcast_rows(g, n)
        mu = mu * rows
        log_sigma = log_sigma * rows
    noise = tape.const(rng_noise)
    if noise.shape != mu.shape:
        raise ad.DimensionError(f"rng_noise must be {mu.shape}, got {noise.shape}")
    eps = mu + ad.exp(log_sigma) * noise
    return EncoderOutput(mu, log_sigma, eps)


def causal_layer(phi: Node, eps: Node) -> Node:
    """Generative factors ``G^T = (I - phi^T)^-1 eps^T``, as rows ``eps (I - phi)^-1``."""
    k = phi.shape[0]
    if eps.shape[1] != k:
        raise ad.DimensionError(f"eps has {eps.shape[1]} columns, phi is {k}x{k}")
    return eps @ ad.inverse(phi.tape.const(np.eye(k)) - phi)


def adjacency_logits(g: Node) -> Node:
    return g @ g.T


def decode_adjacency(g: Node) -> Node:
    return ad.sigmoid(adjacency_logits(g))


def decode_attributes(g: Node, params, mode: str = "direct") -> Node:
    if mode == "direct":
        d = params.params.dims[0] if isinstance(params, Bound) else params.dims[0]
        if d != g.shape[1]:
            raise ConfigError(f"direct attribute decoding needs d == k, got d={d}, k={g.shape[1]}")
        return ad.elu(g)
    if mode == "linear":
        w3 = params.w3
        if w3 is None:
            raise ConfigError("linear attribute decoding needs w3")
        if not isinstance(w3, Node):
            w3 = g.tape.const(w3)
        return ad.elu(g @ w3)
    raise ConfigError(f"unknown attribute mode {mode!r}")


def latent_factors(params: CcvgaeParams, anorm: np.ndarray, attrs: np.ndarray,
                   noise: np.ndarray | None = None) -> np.ndarray:
    """Forward pass to ``G`` without gradients; ``noise=None`` means eps = mu."""
    n, k = attrs.shape[0], params.dims[2]
    b = params.bind(Tape(), trainable=False)
    enc = encode(b, anorm, attrs, np.zeros((n, k)) if noise is None else noise)
    return causal_layer(b.phi, enc.eps).value


# ---------------------------------------------------------------- checkpoints


def _mat_json(m: np.ndarray) -> dict:
    return {"rows": int(m.shape[0]), "cols": int(m.shape[1]), "data": [float(x) for x in m.ravel()]}


def _mat_from_json(obj, name: str) -> np.ndarray:
    try:
        rows, cols, data = int(obj["rows"]), int(obj["cols"]), obj["data"]
        m = np.array(data, dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{name}: {exc}") from None
    if m.shape != (rows * cols,):
        raise CheckpointError(f"{name}: {len(data)} values for a {rows}x{cols} matrix")
    return m.reshape(rows, cols)


def params_to_json(params: CcvgaeParams) -> dict:
    d, h, k = params.dims
    return {"d": d, "h": h, "k": k, "attr_mode": params.attr_mode,
            "w0": _mat_json(params.w0), "w1": _mat_json(params.w1), "w2": _mat_json(params.w2),
            "phi": _mat_json(params.phi),
            "w3": None if params.w3 is None else _mat_json(params.w3)}


def params_from_json(obj: dict) -> CcvgaeParams:
    try:
        d, h, k, mode = int(obj["d"]), int(obj["h"]), int(obj["k"]), obj["attr_mode"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint header: {exc}") from None
    mats = {n: _mat_from_json(obj[n], n) for n in ("w0", "w1", "w2", "phi") if n in obj}
    if len(mats) != 4:
        raise CheckpointError("checkpoint needs w0, w1, w2 and phi")
    w3 = obj.get("w3")
    mats["w3"] = None if w3 is None else _mat_from_json(w3, "w3")
    try:
        params = CcvgaeParams(**mats, attr_mode=mode)
    except ConfigError as exc:
        raise CheckpointError(str(exc)) from None
    if params.dims != (d, h, k):
        raise CheckpointError(f"header dims {(d, h, k)} disagree with matrices {params.dims}")
    return params


def checkpoint_save(params: CcvgaeParams, path) -> None:
    Path(path).write_text(json.dumps(params_to_json(params)) + "\n")


def checkpoint_load(path) -> CcvgaeParams:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return params_from_json(obj)
