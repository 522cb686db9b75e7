"""Compact scoring MLP (15 -> 32 -> 32 -> 16 -> 1) with manual backprop and Adam."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FeatureFormatError, NumericError, ValidationError
from .parallel import derive_rng

LAYER_DIMS = (15, 32, 32, 16, 1)
WEIGHT_FORMAT = "rapgs-mlp"

# Scores are kept strictly inside (0, 1) even when the logit saturates float32.
SCORE_EPS = 2.0**-24


@dataclass(frozen=True, eq=False)
class MlpWeights:
    """Weights are (out, in) row-major float32 matrices, biases float32 vectors."""

    weights: tuple
    biases: tuple
    activation: str = "relu"

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=np.float32) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float32) for b in self.biases)
        dims = dims_of(ws)
        if dims != LAYER_DIMS:
            raise ValidationError(f"layer dims {dims} != {LAYER_DIMS}")
        for w, b in zip(ws, bs):
            if b.shape != (w.shape[0],):
                raise ValidationError(f"bias shape {b.shape} does not match weight {w.shape}")
        if self.activation not in _ACTIVATIONS:
            raise ValidationError(f"unknown hidden activation {self.activation!r}")
        for a in ws + bs:
            a.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_params(cls, params, activation="relu") -> "MlpWeights":
        return cls(tuple(params[0::2]), tuple(params[1::2]), activation)

    def is_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())


def dims_of(weights) -> tuple:
    if not weights:
        return ()
    return (weights[0].shape[1],) + tuple(w.shape[0] for w in weights)


def _relu(z):
    return np.maximum(z, 0)


def _relu_grad(z, a):
    return (z > 0).astype(np.float64)


def _tanh_grad(z, a):
    a = a.astype(np.float64)
    return 1.0 - a * a


_ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "tanh": (np.tanh, _tanh_grad),
}


def init(seed: int = 0, activation: str = "relu") -> MlpWeights:
    """Glorot-uniform weights, zero biases."""
    rng = derive_rng(seed, "mlp-init")
    ws, bs = [], []
    for fan_in, fan_out in zip(LAYER_DIMS[:-1], LAYER_DIMS[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(np.float32))
        bs.append(np.zeros(fan_out, dtype=np.float32))
    return MlpWeights(tuple(ws), tuple(bs), activation)


@dataclass(eq=False)
class ForwardCache:
    inputs: np.ndarray
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)
    scores: np.ndarray | None = None
    weights: MlpWeights | None = None


def forward(features, w: MlpWeights, dtype=np.float32) -> tuple[np.ndarray, ForwardCache]:
    """Scores for every feature row and the activations needed by backward."""
    if not w.is_finite():
        raise NumericError("non-finite MLP weight")
    x = np.asarray(features, dtype=dtype)
    if x.ndim != 2 or x.shape[1] != LAYER_DIMS[0]:
        raise ValidationError(f"features must be (N, {LAYER_DIMS[0]}), got {x.shape}")
    act, _ = _ACTIVATIONS[w.activation]
    cache = ForwardCache(inputs=x, weights=w)
    a = x
    last = len(w.weights) - 1
    for i, (wm, b) in enumerate(zip(w.weights, w.biases)):
        z = a @ wm.astype(dtype).T + b.astype(dtype)
        cache.pre.append(z)
        if i < last:
            a = act(z)
            cache.post.append(a)
    logits = cache.pre[-1][:, 0].astype(np.float64)
    s = np.clip(0.5 * (1.0 + np.tanh(0.5 * logits)), SCORE_EPS, 1.0 - SCORE_EPS)
    cache.scores = s
    return s.astype(dtype), cache


def score(features, w: MlpWeights) -> np.ndarray:
    return forward(features, w)[0]


def backward(cache: ForwardCache, d_scores) -> list[np.ndarray]:
    """float64 gradients, ordered like ``MlpWeights.params()``."""
    g = np.asarray(d_scores, dtype=np.float64)
    n = cache.inputs.shape[0]
    if g.shape != (n,):
        raise ValidationError(f"score gradient shape {g.shape} != ({n},)")
    w = cache.weights
    _, act_grad = _ACTIVATIONS[w.activation]
    s = cache.scores
    dz = (g * s * (1.0 - s))[:, None]
    grads: list = [None] * (2 * len(w.weights))
    for i in range(len(w.weights) - 1, -1, -1):
        a_prev = cache.inputs if i == 0 else cache.post[i - 1]
        a_prev = a_prev.astype(np.float64)
        grads[2 * i] = dz.T @ a_prev
        grads[2 * i + 1] = dz.sum(axis=0)
        if i > 0:
            da = dz @ w.weights[i].astype(np.float64)
            dz = da * act_grad(cache.pre[i - 1], cache.post[i - 1])
    return grads


@dataclass
class AdamState:
    step: int
    m: list
    v: list

    @classmethod
    def fresh(cls, w: MlpWeights) -> "AdamState":
        return cls(0, [np.zeros(p.shape) for p in w.params()], [np.zeros(p.shape) for p in w.params()])

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "m": [a.tolist() for a in self.m],
            "v": [a.tolist() for a in self.v],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        return cls(int(d["step"]), [np.array(a, dtype=np.float64) for a in d["m"]],
                   [np.array(a, dtype=np.float64) for a in d["v"]])


def adam_step(
    w: MlpWeights,
    grads,
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[MlpWeights, AdamState]:
    """One bias-corrected Adam update; returns new weights and state."""
    params = w.params()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValidationError("gradient shapes do not match weights")
    t = state.step + 1
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_p.append((p.astype(np.float64) - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(np.float32))
        new_m.append(m)
        new_v.append(v)
    return MlpWeights.from_params(new_p, w.activation), AdamState(t, new_m, new_v)


# ---------------------------------------------------------------------------
# serialization


def _shortest(a: np.ndarray) -> list[float]:
    # str() of a float32 scalar is its shortest round-trip decimal
    return [float(str(x)) for x in np.asarray(a, dtype=np.float32).ravel()]


def weights_to_dict(w: MlpWeights) -> dict:
    return {
        "format": WEIGHT_FORMAT,
        "version": 1,
        "dims": list(LAYER_DIMS),
        "activation": w.activation,
        "layers": [
            {"in": int(wm.shape[1]), "out": int(wm.shape[0]), "weight": _shortest(wm), "bias": _shortest(b)}
            for wm, b in zip(w.weights, w.biases)
        ],
    }


def weights_from_dict(doc: dict) -> MlpWeights:
    try:
        layers = doc["layers"]
        if doc.get("format", WEIGHT_FORMAT) != WEIGHT_FORMAT:
            raise FeatureFormatError(f"unexpected weight format {doc.get('format')!r}")
        if len(layers) != len(LAYER_DIMS) - 1:
            raise FeatureFormatError(
                f"expected {len(LAYER_DIMS) - 1} layers, found {len(layers)}"
            )
        ws, bs = [], []
        for i, layer in enumerate(layers):
            fi, fo = LAYER_DIMS[i], LAYER_DIMS[i + 1]
            if (layer["in"], layer["out"]) != (fi, fo):
                raise FeatureFormatError(
                    f"layer {i} is {layer['in']}x{layer['out']}, expected {fi}x{fo}"
                )
            wm = np.array(layer["weight"], dtype=np.float32)
            b = np.array(layer["bias"], dtype=np.float32)
            if wm.size != fi * fo or b.size != fo:
                raise FeatureFormatError(f"layer {i} coefficient count mismatch")
            ws.append(wm.reshape(fo, fi))
            bs.append(b)
        return MlpWeights(tuple(ws), tuple(bs), doc.get("activation", "relu"))
    except (KeyError, TypeError) as exc:
        raise FeatureFormatError(f"malformed weight document: {exc}") from None
    except ValidationError as exc:
        if isinstance(exc, FeatureFormatError):
            raise
        raise FeatureFormatError(str(exc)) from None


def save_weights(w: MlpWeights, path) -> None:
    with open(path, "w") as fh:
        json.dump(weights_to_dict(w), fh, indent=1)
        fh.write("\n")


def load_weights(path) -> MlpWeights:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FeatureFormatError(f"weight file is not JSON: {exc}") from None
    return weights_from_dict(doc)


def pretrained_path():
    from importlib.resources import files

    return files("rapgs") / "data" / "pretrained.json"


def load_pretrained() -> MlpWeights:
    return load_weights(pretrained_path())
