"""Online per-object LSTM classifier over proposal features.

One frame = one timestep. Every proposal in a frame is scored independently
against the single previously estimated state (cell + hidden per layer); the
state of the winning proposal becomes the next frame's input state. Training
is single-step: the loss is taken on the current frame's samples and the
previous state is treated as a constant, so gradients never propagate through
earlier timesteps.

Layer stacking: layer l > 0 consumes layer l-1's hidden output; the estimated
state stores every layer's (cell, hidden) pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError
from .nn import AdamSet, sigmoid, softmax, softmax_xent
from .nn.ops import dsigmoid_from_out, dtanh_from_out, ensure_finite

GATES = ("i", "f", "o", "c")


class LstmParams:
    """Flat named-tensor store for the input layer, gate weights and output layer.

    Keys: ``input.w`` (m,n), ``input.b`` (n,), per layer ``layer{l}.u_{g}`` /
    ``layer{l}.v_{g}`` (n,n) and ``layer{l}.b_{g}`` (n,) for g in i,f,o,c,
    ``output.w`` (n,2), ``output.b`` (2,).
    """

    def __init__(self, tensors: dict[str, np.ndarray], n_layers: int):
        self.tensors = tensors
        self.n_layers = n_layers

    @property
    def input_dim(self) -> int:
        return self.tensors["input.w"].shape[0]

    @property
    def units(self) -> int:
        return self.tensors["input.w"].shape[1]

    @classmethod
    def init(
        cls, rng: np.random.Generator, input_dim: int, units: int, n_layers: int = 2
    ) -> "LstmParams":
        """Uniform +-1/sqrt(units) weights, zero biases, forget bias +1."""
        a = 1.0 / np.sqrt(units)
        t: dict[str, np.ndarray] = {
            "input.w": rng.uniform(-a, a, size=(input_dim, units)),
            "input.b": np.zeros(units),
        }
        for l in range(n_layers):
            for g in GATES:
                t[f"layer{l}.u_{g}"] = rng.uniform(-a, a, size=(units, units))
                t[f"layer{l}.v_{g}"] = rng.uniform(-a, a, size=(units, units))
                t[f"layer{l}.b_{g}"] = np.zeros(units)
            t[f"layer{l}.b_f"] = np.full(units, 1.0)
        t["output.w"] = rng.uniform(-a, a, size=(units, 2))
        t["output.b"] = np.zeros(2)
        return cls(t, n_layers)

    def copy(self) -> "LstmParams":
        return LstmParams({k: v.copy() for k, v in self.tensors.items()}, self.n_layers)

    def checksum(self) -> bytes:
        import hashlib

        h = hashlib.sha256()
        for k in sorted(self.tensors):
            h.update(k.encode())
            h.update(self.tensors[k].tobytes())
        return h.digest()


@dataclass
class LstmState:
    """Per-layer (cell, hidden) pair; the tracker's object-representation model."""

    c: np.ndarray  # (n_layers, units)
    h: np.ndarray  # (n_layers, units)

    @classmethod
    def zeros(cls, n_layers: int, units: int) -> "LstmState":
        return cls(c=np.zeros((n_layers, units)), h=np.zeros((n_layers, units)))

    def copy(self) -> "LstmState":
        return LstmState(c=self.c.copy(), h=self.h.copy())


@dataclass
class ClassScores:
    """Per-proposal classification output plus each proposal's candidate state."""

    probs: np.ndarray  # (B, 2); column 1 is the positive score p+
    cand_c: np.ndarray  # (n_layers, B, units)
    cand_h: np.ndarray  # (n_layers, B, units)

    @property
    def p_plus(self) -> np.ndarray:
        return self.probs[:, 1]


def _forward_cached(params: LstmParams, prev_state: LstmState, features: np.ndarray):
    t = params.tensors
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise DimensionError(
            f"expected (B, {params.input_dim}) features, got {x.shape}"
        )
    z = x @ t["input.w"] + t["input.b"]
    a = z
    layer_caches = []
    for l in range(params.n_layers):
        pre = {
            g: a @ t[f"layer{l}.u_{g}"].T
            + prev_state.h[l] @ t[f"layer{l}.v_{g}"].T
            + t[f"layer{l}.b_{g}"]
            for g in GATES
        }
        i = sigmoid(pre["i"])
        f = sigmoid(pre["f"])
        o = sigmoid(pre["o"])
        g_in = np.tanh(pre["c"])
        c = f * prev_state.c[l] + i * g_in
        tanh_c = np.tanh(c)
        h = o * tanh_c
        if not np.all(np.isfinite(h)):
            raise NumericError(f"non-finite hidden state in layer {l}")
        layer_caches.append(
            {"a": a, "i": i, "f": f, "o": o, "g": g_in, "c": c, "tanh_c": tanh_c, "h": h}
        )
        a = h
    logits = a @ t["output.w"] + t["output.b"]
    probs = softmax(logits)
    ensure_finite(probs, "classifier probabilities")
    return x, z, layer_caches, logits, probs


def forward(
    params: LstmParams, prev_state: LstmState, features: np.ndarray
) -> ClassScores:
    """Classify a batch of flattened proposal features against one shared state.

    Every row of ``features`` is evaluated independently against the same
    ``prev_state``; there is no cross-proposal state chaining. ``prev_state``
    is never mutated.
    """
    _, _, layer_caches, _, probs = _forward_cached(params, prev_state, features)
    cand_c = np.stack([lc["c"] for lc in layer_caches])
    cand_h = np.stack([lc["h"] for lc in layer_caches])
    return ClassScores(probs=probs, cand_c=cand_c, cand_h=cand_h)


def init_state(params: LstmParams, initial_feature: np.ndarray) -> LstmState:
    """State after one forward step from the zero state on the target feature."""
    feat = np.asarray(initial_feature, dtype=np.float64).reshape(1, -1)
    if feat.shape[1] != params.input_dim:
        raise DimensionError(
            f"feature length {feat.shape[1]} != input dim {params.input_dim}"
        )
    zero = LstmState.zeros(params.n_layers, params.units)
    scores = forward(params, zero, feat)
    return LstmState(c=scores.cand_c[:, 0, :].copy(), h=scores.cand_h[:, 0, :].copy())


def backward(
    params: LstmParams,
    prev_state: LstmState,
    features: np.ndarray,
    labels: np.ndarray,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and exact gradients of the batch-mean cross-entropy.

    ``prev_state`` is a constant: no gradient flows into the previous cell or
    hidden vectors (single-step training).
    """
    t = params.tensors
    x, z, layer_caches, logits, _ = _forward_cached(params, prev_state, features)
    loss, d_logits = softmax_xent(logits, np.asarray(labels))

    grads: dict[str, np.ndarray] = {}
    h_last = layer_caches[-1]["h"]
    grads["output.w"] = h_last.T @ d_logits
    grads["output.b"] = d_logits.sum(axis=0)
    dh = d_logits @ t["output.w"].T

    for l in range(params.n_layers - 1, -1, -1):
        lc = layer_caches[l]
        # standard-gate cell gradient: d o/d c is zero, only the tanh path remains
        dc = dh * lc["o"] * dtanh_from_out(lc["tanh_c"])
        dpre = {
            "o": dh * lc["tanh_c"] * dsigmoid_from_out(lc["o"]),
            "c": dc * lc["i"] * dtanh_from_out(lc["g"]),
            "i": dc * lc["g"] * dsigmoid_from_out(lc["i"]),
            "f": dc * prev_state.c[l] * dsigmoid_from_out(lc["f"]),
        }
        da = np.zeros_like(lc["a"])
        for g in GATES:
            grads[f"layer{l}.u_{g}"] = dpre[g].T @ lc["a"]
            grads[f"layer{l}.v_{g}"] = np.outer(dpre[g].sum(axis=0), prev_state.h[l])
            grads[f"layer{l}.b_{g}"] = dpre[g].sum(axis=0)
            da += dpre[g] @ t[f"layer{l}.u_{g}"]
        dh = da

    grads["input.w"] = x.T @ dh
    grads["input.b"] = dh.sum(axis=0)
    return loss, grads


def train_step(
    params: LstmParams,
    prev_state: LstmState,
    features: np.ndarray,
    labels: np.ndarray,
    adam: AdamSet,
    iterations: int = 1,
) -> tuple[LstmParams, float]:
    """backward + ADAM, ``iterations`` times. Returns the pre-update loss."""
    first_loss = None
    for _ in range(iterations):
        loss, grads = backward(params, prev_state, features, labels)
        if first_loss is None:
            first_loss = loss
        params = LstmParams(adam.update(params.tensors, grads), params.n_layers)
    return params, float(first_loss if first_loss is not None else 0.0)


def choose_target(scores: ClassScores, n_proposals: int | None = None) -> tuple[int, LstmState]:
    """Index of the max-p+ proposal and its candidate state.

    Ties go to the lowest index; proposals arrive sorted by matcher
    confidence, so the tie rule prefers the strongest pre-estimate.
    """
    if scores.probs.shape[0] == 0:
        raise ValueError("empty score batch")
    if n_proposals is not None and scores.probs.shape[0] != n_proposals:
        raise DimensionError(
            f"scores batch {scores.probs.shape[0]} != proposals {n_proposals}"
        )
    idx = int(np.argmax(scores.p_plus))
    state = LstmState(c=scores.cand_c[:, idx, :].copy(), h=scores.cand_h[:, idx, :].copy())
    return idx, state
