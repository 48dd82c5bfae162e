"""Dense MLPs with hand-written reverse mode, Adam, and text checkpoints.

Parameters are treated as immutable values: every optimizer step returns a
new ``MlpParams`` with a fresh identity token, and a ``GradTape`` is only valid
for the exact parameter version that produced it.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import NonFiniteError, StaleTapeError

ACTIVATIONS = ("tanh", "relu", "identity", "softmax")

_tokens = itertools.count()


@dataclass(frozen=True, eq=False)
class MlpParams:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activations: tuple[str, ...]
    token: int = field(default_factory=lambda: next(_tokens))

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must have one entry per layer")
        for i, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {act!r}")
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input size {w.shape[0]} != previous output size")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def tensors(self) -> list[np.ndarray]:
        return [t for pair in zip(self.weights, self.biases) for t in pair]

    def with_tensors(self, tensors: Sequence[np.ndarray]) -> "MlpParams":
        return MlpParams(tuple(tensors[0::2]), tuple(tensors[1::2]), self.activations)

    def equal(self, other: "MlpParams") -> bool:
        """Bitwise equality of architecture and every tensor."""
        return self.activations == other.activations and all(
            a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(self.tensors(), other.tensors())
        )


def init_mlp(sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator,
             last_scale: float = 1.0) -> MlpParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases; ``last_scale`` shrinks the output layer."""
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        if i == len(sizes) - 2:
            w = w * last_scale
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(weights), tuple(biases), tuple(activations))


@dataclass
class GradTape:
    token: int
    inputs: list[np.ndarray]
    outputs: list[np.ndarray]


def _activate(z: np.ndarray, act: str) -> np.ndarray:
    if act == "tanh":
        return np.tanh(z)
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "softmax":
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    return z


def forward(params: MlpParams, x) -> tuple[np.ndarray, GradTape]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[0]:
        raise ValueError(f"input shape {x.shape} incompatible with input size {params.weights[0].shape[0]}")
    inputs, outputs = [], []
    h = x
    for i, (w, b, act) in enumerate(zip(params.weights, params.biases, params.activations)):
        inputs.append(h)
        h = _activate(h @ w + b, act)
        if not np.isfinite(h).all():
            raise NonFiniteError(f"non-finite activation in layer {i}", layer=i)
        outputs.append(h)
    return h, GradTape(params.token, inputs, outputs)


def predict(params: MlpParams, x) -> np.ndarray:
    return forward(params, x)[0]


def backward(params: MlpParams, tape: GradTape, dy) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse-mode pass; returns gradients in ``params.tensors()`` order and dL/dx."""
    if tape.token != params.token:
        raise StaleTapeError("tape was recorded with a different parameter version")
    g = np.asarray(dy, dtype=np.float64)
    grads: list[np.ndarray] = [None] * (2 * len(params.weights))  # type: ignore[list-item]
    for i in reversed(range(len(params.weights))):
        y, act = tape.outputs[i], params.activations[i]
        if act == "tanh":
            g = g * (1.0 - y * y)
        elif act == "relu":
            g = g * (y > 0)
        elif act == "softmax":
            g = y * (g - np.sum(g * y, axis=-1, keepdims=True))
        grads[2 * i] = tape.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ params.weights[i].T
    return grads, g


def gaussian_sample(mean, log_var, noise) -> np.ndarray:
    """Reparameterized draw ``mean + exp(log_var / 2) * noise``."""
    mean, log_var, noise = (np.asarray(a, dtype=np.float64) for a in (mean, log_var, noise))
    if not (mean.shape == log_var.shape == noise.shape):
        raise ValueError("mean, log_var and noise must share a shape")
    return mean + np.exp(0.5 * log_var) * noise


# --------------------------------------------------------------------------
# Adam


@dataclass(frozen=True)
class OptimizerState:
    m: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _flat(params) -> list[np.ndarray]:
    if isinstance(params, MlpParams):
        return params.tensors()
    return [t for p in params for t in p.tensors()]


def _unflat(template, tensors: list[np.ndarray]):
    if isinstance(template, MlpParams):
        return template.with_tensors(tensors)
    out, k = [], 0
    for p in template:
        n = 2 * len(p.weights)
        out.append(p.with_tensors(tensors[k : k + n]))
        k += n
    return tuple(out)


def adam_init(params, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    zeros = tuple(np.zeros_like(t) for t in _flat(params))
    return OptimizerState(zeros, zeros, 0, lr, beta1, beta2, eps)


def adam_step(opt: OptimizerState, params, grads: Sequence[np.ndarray]):
    """One bias-corrected Adam update.

    ``params`` is an ``MlpParams`` or a tuple of them; ``grads`` is the flat
    list of gradients in matching tensor order. Non-finite gradients raise
    ``NonFiniteError`` before anything is modified.
    """
    tensors = _flat(params)
    grads = list(grads)
    if len(grads) != len(tensors) or any(g.shape != t.shape for g, t in zip(grads, tensors)):
        raise ValueError("gradient shapes do not match parameter shapes")
    for i, g in enumerate(grads):
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient in tensor {i}", layer=i // 2)
    t = opt.step + 1
    b1, b2 = opt.beta1, opt.beta2
    m = tuple(b1 * m_ + (1 - b1) * g for m_, g in zip(opt.m, grads))
    v = tuple(b2 * v_ + (1 - b2) * g * g for v_, g in zip(opt.v, grads))
    c1, c2 = 1 - b1**t, 1 - b2**t
    new = [p - opt.lr * (m_ / c1) / (np.sqrt(v_ / c2) + opt.eps) for p, m_, v_ in zip(tensors, m, v)]
    return _unflat(params, new), OptimizerState(m, v, t, opt.lr, b1, b2, opt.eps)


# --------------------------------------------------------------------------
# checkpoints

MAGIC = "surprise-rl-checkpoint 1"


def dumps_checkpoint(nets: dict[str, MlpParams], meta: dict[str, str] | None = None) -> str:
    """Text checkpoint: named tensors with shape headers, values as exact float hex."""
    lines = [MAGIC]
    for key, value in (meta or {}).items():
        lines.append(f"meta {key} {value}")
    for name, p in nets.items():
        lines.append(f"net {name} {len(p.weights)} {','.join(p.activations)}")
        for i, (w, b) in enumerate(zip(p.weights, p.biases)):
            for tag, t in (("W", w), ("b", b)):
                lines.append(f"tensor {name}.{tag}{i} {'x'.join(map(str, t.shape))}")
                lines.append(" ".join(float(v).hex() for v in t.ravel()))
    return "\n".join(lines) + "\n"


def loads_checkpoint(text: str) -> tuple[dict[str, MlpParams], dict[str, str]]:
    lines = text.splitlines()
    if not lines or lines[0] != MAGIC:
        raise ValueError("not a surprise-rl checkpoint")
    meta: dict[str, str] = {}
    nets: dict[str, MlpParams] = {}
    i = 1
    try:
        while i < len(lines):
            head = lines[i].split(" ")
            if head[0] == "meta":
                meta[head[1]] = " ".join(head[2:])
                i += 1
            elif head[0] == "net":
                name, n_layers, acts = head[1], int(head[2]), tuple(head[3].split(","))
                i += 1
                tensors = []
                for _ in range(2 * n_layers):
                    _, tname, shape = lines[i].split(" ")
                    dims = tuple(int(d) for d in shape.split("x"))
                    vals = lines[i + 1].split(" ") if lines[i + 1] else []
                    arr = np.array([float.fromhex(v) for v in vals], dtype=np.float64)
                    tensors.append(arr.reshape(dims))
                    i += 2
                nets[name] = MlpParams(tuple(tensors[0::2]), tuple(tensors[1::2]), acts)
            else:
                raise ValueError(f"unexpected line {i + 1}: {lines[i][:40]!r}")
    except (IndexError, ValueError) as exc:
        raise ValueError(f"corrupt checkpoint: {exc}") from exc
    return nets, meta


def save_checkpoint(path, nets: dict[str, MlpParams], meta: dict[str, str] | None = None) -> None:
    Path(path).write_text(dumps_checkpoint(nets, meta))


def load_checkpoint(path) -> tuple[dict[str, MlpParams], dict[str, str]]:
    return loads_checkpoint(Path(path).read_text())
