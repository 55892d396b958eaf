"""One-hidden-layer sigmoid/softmax regressor, its backward pass, and AdamW."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lcgldl.errors import DataError


def softmax(v: np.ndarray) -> np.ndarray:
    """Softmax along the last axis, shifted by the max for overflow safety."""
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(out: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # row-wise Jacobian-vector product: J = diag(s) - s s^T
    return out * (grad_out - np.sum(grad_out * out, axis=-1, keepdims=True))


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class _ParamMixin:
    """Shared helpers for parameter containers whose fields are all arrays."""

    def arrays(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def map(self, fn, *others):
        return type(self)(**{k: fn(v, *(o.arrays()[k] for o in others)) for k, v in self.arrays().items()})

    def zeros_like(self):
        return self.map(np.zeros_like)

    def copy(self):
        return self.map(np.array)

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays().values()])

    def unflatten(self, flat: np.ndarray):
        out, pos = {}, 0
        for k, a in self.arrays().items():
            out[k] = np.asarray(flat[pos:pos + a.size], dtype=np.float64).reshape(a.shape).copy()
            pos += a.size
        return type(self)(**out)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays().values())


@dataclass
class MlpParams(_ParamMixin):
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def shape(self) -> tuple[int, int, int]:
        """``(n, h, t)``: input, hidden and output widths."""
        return self.W1.shape[0], self.W1.shape[1], self.W2.shape[1]

    @property
    def h(self) -> int:
        return self.W1.shape[1]


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    hidden_pre: np.ndarray
    hidden_act: np.ndarray
    logits: np.ndarray
    pred: np.ndarray


def _uniform_layer(rng, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(n: int, h: int, t: int, seed: int) -> MlpParams:
    if min(n, h, t) < 1:
        raise ValueError(f"layer widths must be positive, got n={n}, h={h}, t={t}")
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    W1 = _uniform_layer(rng, n, h)
    W2 = _uniform_layer(rng, h, t)
    return MlpParams(W1, np.zeros(h), W2, np.zeros(t))


def forward(params: MlpParams, batch: np.ndarray) -> ForwardTrace:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.W1.shape[0]:
        raise DataError(f"batch shape {batch.shape} does not match input width {params.W1.shape[0]}")
    hidden_pre = batch @ params.W1 + params.b1
    hidden_act = sigmoid(hidden_pre)
    logits = hidden_act @ params.W2 + params.b2
    return ForwardTrace(batch, hidden_pre, hidden_act, logits, softmax(logits))


def predict(params: MlpParams, features: np.ndarray) -> np.ndarray:
    return forward(params, features).pred


def l1_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Sum of absolute differences over labels, averaged over the batch."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DataError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.abs(pred - target).sum() / pred.shape[0])


def l1_loss_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    # np.sign(0) == 0 gives the zero subgradient at the kink
    return np.sign(pred - target) / pred.shape[0]


def backward(trace: ForwardTrace, params: MlpParams, grad_pred: np.ndarray) -> MlpParams:
    if grad_pred.shape != trace.pred.shape:
        raise DataError(f"grad_pred shape {grad_pred.shape} does not match prediction {trace.pred.shape}")
    g_logits = softmax_backward(trace.pred, grad_pred)
    g_W2 = trace.hidden_act.T @ g_logits
    g_b2 = g_logits.sum(axis=0)
    g_act = g_logits @ params.W2.T
    g_pre = g_act * trace.hidden_act * (1.0 - trace.hidden_act)
    g_W1 = trace.inputs.T @ g_pre
    g_b1 = g_pre.sum(axis=0)
    return MlpParams(g_W1, g_b1, g_W2, g_b2)


@dataclass
class AdamWState:
    first_moment: object
    second_moment: object
    step_count: int = 0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamWState":
        return cls(params.zeros_like(), params.zeros_like(), **hyper)


def adamw_step(state: AdamWState, params, grads):
    """One decoupled-weight-decay Adam update; returns ``(new_state, new_params)``.

    Decay is applied to every tensor (biases included), as the reference
    formulation does not single any out.
    """
    step = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    m = state.first_moment.map(lambda mm, g: b1 * mm + (1.0 - b1) * g, grads)
    v = state.second_moment.map(lambda vv, g: b2 * vv + (1.0 - b2) * g * g, grads)
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step

    def update(p, mm, vv):
        p = p - state.lr * state.weight_decay * p
        return p - state.lr * (mm / c1) / (np.sqrt(vv / c2) + state.eps)

    new_params = params.map(update, m, v)
    return dataclasses.replace(state, first_moment=m, second_moment=v, step_count=step), new_params


def save_params(path, params: _ParamMixin, **meta) -> None:
    """Write a JSON checkpoint: one entry per tensor with its shape and row-major data."""
    doc = {
        "format": "lcgldl-params",
        "version": 1,
        "kind": type(params).__name__,
        "meta": meta,
        "tensors": [
            {"name": k, "shape": list(a.shape), "data": [float(x) for x in a.ravel(order="C")]}
            for k, a in params.arrays().items()
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_params(path):
    from lcgldl.ldp import SubMlpParams

    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "lcgldl-params":
        raise DataError(f"{path}: not a parameter checkpoint")
    kinds = {"MlpParams": MlpParams, "SubMlpParams": SubMlpParams}
    cls = kinds.get(doc.get("kind"))
    if cls is None:
        raise DataError(f"{path}: unknown parameter kind {doc.get('kind')!r}")
    arrays = {
        item["name"]: np.array(item["data"], dtype=np.float64).reshape(item["shape"])
        for item in doc["tensors"]
    }
    return cls(**arrays)
