"""Small fully connected scorer with policy, value and strength heads.

The trunk is ``layers`` tanh layers of width ``hidden``. On top sit linear
heads: ``actions`` policy logits, a tanh value in [-1, 1], an unbounded
strength score beta and, optionally, ``ranks`` rank-classification logits
used by the supervised baseline.

Parameters live in one flat float64 vector in this order::

    W1 (input x hidden), b1 (hidden),
    [W2 (hidden x hidden), b2 (hidden)]      # only when layers == 2
    Wp (hidden x actions), bp (actions),
    Wv (hidden x 1), bv (1),
    Wb (hidden x 1), bb (1),
    [Wr (hidden x ranks), br (ranks)]        # only when ranks > 0

Initialisation draws every entry of a block uniformly from
[-1/sqrt(fan_in), 1/sqrt(fan_in)] with numpy's PCG64 generator
(``numpy.random.default_rng(seed)``), blocks in the order above.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

CHECKPOINT_MAGIC = "strengthkit-scorer"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ScorerSpec:
    input_size: int
    hidden: int = 64
    layers: int = 1
    actions: int = 25
    ranks: int = 0

    def __post_init__(self):
        if self.input_size < 1 or self.actions < 1:
            raise ValueError("input_size and actions must be positive")
        if self.hidden < 1:
            raise ValueError("hidden width must be >= 1")
        if self.layers not in (1, 2):
            raise ValueError("layers must be 1 or 2")
        if self.ranks < 0:
            raise ValueError("ranks must be >= 0")

    def blocks(self) -> list[tuple[str, tuple[int, ...], int]]:
        """(name, shape, fan_in) of every parameter block in storage order."""
        h = self.hidden
        out = [("W1", (self.input_size, h), self.input_size), ("b1", (h,), self.input_size)]
        if self.layers == 2:
            out += [("W2", (h, h), h), ("b2", (h,), h)]
        out += [
            ("Wp", (h, self.actions), h), ("bp", (self.actions,), h),
            ("Wv", (h, 1), h), ("bv", (1,), h),
            ("Wb", (h, 1), h), ("bb", (1,), h),
        ]
        if self.ranks:
            out += [("Wr", (h, self.ranks), h), ("br", (self.ranks,), h)]
        return out

    @property
    def param_count(self) -> int:
        return sum(math.prod(shape) for _, shape, _ in self.blocks())


@dataclass(frozen=True)
class ScorerParams:
    spec: ScorerSpec
    values: np.ndarray
    version: int = CHECKPOINT_VERSION

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.spec.param_count,):
            raise ValueError(f"expected {self.spec.param_count} parameters, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("parameters must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def unpack(self) -> dict[str, np.ndarray]:
        out, pos = {}, 0
        for name, shape, _ in self.spec.blocks():
            size = math.prod(shape)
            out[name] = self.values[pos:pos + size].reshape(shape)
            pos += size
        return out


@dataclass(frozen=True)
class ScorerOutput:
    logits: np.ndarray
    value: float
    beta: float
    rank_logits: Optional[np.ndarray] = None

    def policy(self, legal=None) -> np.ndarray:
        return softmax(self.logits if legal is None else self.logits[list(legal)])


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def init_params(spec: ScorerSpec, seed: int) -> ScorerParams:
    rng = np.random.default_rng(seed)
    parts = []
    for _, shape, fan_in in spec.blocks():
        bound = 1.0 / math.sqrt(fan_in)
        parts.append(rng.uniform(-bound, bound, size=math.prod(shape)))
    return ScorerParams(spec, np.concatenate(parts))


def zero_params(spec: ScorerSpec) -> ScorerParams:
    return ScorerParams(spec, np.zeros(spec.param_count))


def _as_batch(params: ScorerParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.spec.input_size:
        raise ValueError(
            f"feature length {x.shape[-1]} does not match scorer input {params.spec.input_size}"
        )
    return x


def _trunk(p, spec, x):
    acts = [x]
    h = np.tanh(x @ p["W1"] + p["b1"])
    acts.append(h)
    if spec.layers == 2:
        h = np.tanh(h @ p["W2"] + p["b2"])
        acts.append(h)
    return acts


def forward_batch(params: ScorerParams, x):
    """Batched forward: returns (logits BxA, value B, beta B, rank_logits BxR or None)."""
    x = _as_batch(params, x)
    p = params.unpack()
    h = _trunk(p, params.spec, x)[-1]
    logits = h @ p["Wp"] + p["bp"]
    value = np.tanh(h @ p["Wv"] + p["bv"])[:, 0]
    beta = (h @ p["Wb"] + p["bb"])[:, 0]
    rank_logits = h @ p["Wr"] + p["br"] if params.spec.ranks else None
    return logits, value, beta, rank_logits


def forward(params: ScorerParams, x) -> ScorerOutput:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward takes a single feature vector; use forward_batch")
    logits, value, beta, rank_logits = forward_batch(params, x)
    return ScorerOutput(
        logits[0], float(value[0]), float(beta[0]),
        None if rank_logits is None else rank_logits[0],
    )


def backward(params: ScorerParams, x, grad_logits=None, grad_value=None,
             grad_beta=None, grad_rank_logits=None) -> np.ndarray:
    """Gradient of sum_k <upstream_k, output_k> with respect to the flat parameters.

    ``x`` may be one vector or a batch; upstream gradients follow the same
    leading shape. Missing upstream terms count as zero.
    """
    x = _as_batch(params, x)
    spec = params.spec
    bsz = x.shape[0]

    def upstream(g, width, name):
        if g is None:
            return np.zeros((bsz, width))
        g = np.asarray(g, dtype=np.float64)
        if g.size != bsz * width:
            raise ValueError(f"upstream gradient for {name} has shape {g.shape}, expected {(bsz, width)}")
        return g.reshape(bsz, width)

    g_logits = upstream(grad_logits, spec.actions, "logits")
    g_value = upstream(grad_value, 1, "value")
    g_beta = upstream(grad_beta, 1, "beta")
    if grad_rank_logits is not None and not spec.ranks:
        raise ValueError("scorer has no rank head")
    g_rank = upstream(grad_rank_logits, spec.ranks, "rank_logits") if spec.ranks else None

    p = params.unpack()
    acts = _trunk(p, spec, x)
    h = acts[-1]
    v_pre = h @ p["Wv"] + p["bv"]
    g_vpre = g_value * (1.0 - np.tanh(v_pre) ** 2)

    grads = {
        "Wp": h.T @ g_logits, "bp": g_logits.sum(0),
        "Wv": h.T @ g_vpre, "bv": g_vpre.sum(0),
        "Wb": h.T @ g_beta, "bb": g_beta.sum(0),
    }
    g_h = g_logits @ p["Wp"].T + g_vpre @ p["Wv"].T + g_beta @ p["Wb"].T
    if spec.ranks:
        grads["Wr"] = h.T @ g_rank
        grads["br"] = g_rank.sum(0)
        g_h = g_h + g_rank @ p["Wr"].T

    if spec.layers == 2:
        g_pre = g_h * (1.0 - acts[2] ** 2)
        grads["W2"] = acts[1].T @ g_pre
        grads["b2"] = g_pre.sum(0)
        g_h = g_pre @ p["W2"].T
    g_pre = g_h * (1.0 - acts[1] ** 2)
    grads["W1"] = acts[0].T @ g_pre
    grads["b1"] = g_pre.sum(0)

    return np.concatenate([grads[name].ravel() for name, _, _ in spec.blocks()])


def sgd_step(params: ScorerParams, grad, lr: float) -> ScorerParams:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.values.shape:
        raise ValueError("gradient length does not match parameters")
    if not np.all(np.isfinite(grad)) or not math.isfinite(lr):
        raise ValueError("non-finite gradient or learning rate")
    return ScorerParams(params.spec, params.values - lr * grad, params.version)


# --- checkpoints --------------------------------------------------------------
#
# Line 1 (ASCII): "strengthkit-scorer <version> input=<I> hidden=<H> layers=<L>
#                  actions=<A> ranks=<R> count=<P>\n"
# Then P little-endian float64 values in storage order.


def save_checkpoint(params: ScorerParams, path) -> None:
    s = params.spec
    header = (
        f"{CHECKPOINT_MAGIC} {params.version} input={s.input_size} hidden={s.hidden} "
        f"layers={s.layers} actions={s.actions} ranks={s.ranks} count={s.param_count}\n"
    )
    Path(path).write_bytes(header.encode("ascii") + params.values.astype("<f8").tobytes())


def load_checkpoint(path) -> ScorerParams:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise CheckpointError("missing checkpoint header")
    try:
        fields = data[:nl].decode("ascii").split()
    except UnicodeDecodeError as exc:
        raise CheckpointError("corrupt checkpoint header") from exc
    if len(fields) < 2 or fields[0] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a scorer checkpoint")
    if fields[1] != str(CHECKPOINT_VERSION):
        raise CheckpointError(f"unsupported checkpoint version {fields[1]}")
    try:
        kv = dict(f.split("=", 1) for f in fields[2:])
        spec = ScorerSpec(int(kv["input"]), int(kv["hidden"]), int(kv["layers"]),
                          int(kv["actions"]), int(kv.get("ranks", 0)))
        count = int(kv["count"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    body = data[nl + 1:]
    if count != spec.param_count or len(body) != 8 * count:
        raise CheckpointError(
            f"checkpoint body holds {len(body)} bytes, expected {8 * spec.param_count}"
        )
    return ScorerParams(spec, np.frombuffer(body, dtype="<f8").astype(np.float64), CHECKPOINT_VERSION)
