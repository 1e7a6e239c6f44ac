"""Generator/discriminator pair for positive-sample augmentation.

A small DCGAN-flavoured pair trained online on the bank of real positive
patches accumulated while tracking. The generator maps noise to a grayscale
patch through a dense layer and two upsample+valid-conv stages; the
discriminator is two strided valid convs plus a dense logit. The generator
objective is the non-saturating form (maximize log D(G(z)) instead of
minimizing log(1 - D(G(z)))), which points the same way with healthier
gradients early on.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError
from .nn import (
    AdamSet,
    conv2d_valid_batch,
    conv2d_backward_batch,
    conv_output_extent,
    sigmoid,
    upsample2,
    upsample2_backward,
)
from .nn.ops import dsigmoid_from_out, leaky_relu, dleaky_relu, relu


def generator_plan(patch_size: int) -> tuple[int, int, int]:
    """(seed spatial extent, conv1 k, conv2 k) with 4*s0 - 2*k1 - k2 + 3 == patch."""
    for s0 in range(2, 64):
        for k1 in range(1, 6):
            for k2 in range(1, 8):
                if 4 * s0 - 2 * k1 - k2 + 3 == patch_size:
                    return s0, k1, k2
    raise DimensionError(f"no upsample/valid-conv plan reaches patch size {patch_size}")


@dataclass
class GanConfig:
    patch_size: int = 32
    noise_dim: int = 32
    g_channels: tuple[int, int] = (12, 12)
    d_channels: tuple[int, int] = (8, 16)
    lr: float = 2e-3
    beta1: float = 0.5
    batch_size: int = 16


@dataclass
class GanParams:
    config: GanConfig
    tensors: dict[str, np.ndarray]

    @classmethod
    def init(cls, config: GanConfig, rng: np.random.Generator) -> "GanParams":
        s0, k1, k2 = generator_plan(config.patch_size)
        c1, c2 = config.g_channels
        d1, d2 = config.d_channels
        zdim = config.noise_dim

        def he(shape, fan_in):
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

        d_in = config.patch_size
        e1 = conv_output_extent(d_in, 3, 2)
        e2 = conv_output_extent(e1, 3, 2)

        t = {
            "g.fc.w": he((zdim, c1 * s0 * s0), zdim),
            "g.fc.b": np.zeros(c1 * s0 * s0),
            "g.conv1.k": he((c2, c1, k1, k1), c1 * k1 * k1),
            "g.conv1.b": np.zeros(c2),
            "g.conv2.k": he((1, c2, k2, k2), c2 * k2 * k2),
            "g.conv2.b": np.zeros(1),
            "d.conv1.k": he((d1, 1, 3, 3), 9),
            "d.conv1.b": np.zeros(d1),
            "d.conv2.k": he((d2, d1, 3, 3), d1 * 9),
            "d.conv2.b": np.zeros(d2),
            "d.fc.w": he((d2 * e2 * e2, 1), d2 * e2 * e2),
            "d.fc.b": np.zeros(1),
        }
        return cls(config=config, tensors=t)

    def copy(self) -> "GanParams":
        return GanParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


class PositiveBank:
    """FIFO ring buffer of real positive patches (grayscale, [0,1])."""

    def __init__(self, capacity: int = 256):
        self.buf: deque[np.ndarray] = deque(maxlen=capacity)

    def add(self, patch: np.ndarray) -> None:
        self.buf.append(np.asarray(patch, dtype=np.float64))

    def extend(self, patches) -> None:
        for p in patches:
            self.add(p)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if not self.buf:
            raise ValueError("positive bank is empty")
        idx = rng.integers(0, len(self.buf), size=count)
        return np.stack([self.buf[i] for i in idx])

    def __len__(self) -> int:
        return len(self.buf)


def gan_losses(d_real: np.ndarray, d_fake: np.ndarray) -> tuple[float, float]:
    """Discriminator and (non-saturating) generator losses from probabilities."""
    d_real = np.asarray(d_real, dtype=np.float64)
    d_fake = np.asarray(d_fake, dtype=np.float64)
    if d_real.size == 0 or d_fake.size == 0:
        raise ValueError("empty batch")
    r = np.clip(d_real, 1e-7, 1.0 - 1e-7)
    f = np.clip(d_fake, 1e-7, 1.0 - 1e-7)
    loss_d = float(-np.mean(np.log(r)) - np.mean(np.log(1.0 - f)))
    loss_g = float(-np.mean(np.log(f)))
    return loss_d, loss_g


# ---------------------------------------------------------------------------
# forward/backward passes


def generator_forward(params: GanParams, z: np.ndarray):
    t = params.tensors
    c1, _ = params.config.g_channels
    s0, _, _ = generator_plan(params.config.patch_size)
    b = z.shape[0]

    a1 = z @ t["g.fc.w"] + t["g.fc.b"]
    r1 = relu(a1).reshape(b, c1, s0, s0)
    u1 = upsample2(r1)
    p2 = conv2d_valid_batch(u1, t["g.conv1.k"], 1, t["g.conv1.b"])
    r2 = relu(p2)
    u2 = upsample2(r2)
    p3 = conv2d_valid_batch(u2, t["g.conv2.k"], 1, t["g.conv2.b"])
    img = sigmoid(p3)
    cache = {"z": z, "a1": a1, "u1": u1, "p2": p2, "u2": u2, "img": img}
    return img, cache


def generator_backward(params: GanParams, cache, d_img: np.ndarray):
    t = params.tensors
    b = cache["z"].shape[0]
    dp3 = d_img * dsigmoid_from_out(cache["img"])
    du2, gk2, gb2 = conv2d_backward_batch(cache["u2"], t["g.conv2.k"], 1, dp3)
    dr2 = upsample2_backward(du2)
    dp2 = dr2 * (cache["p2"] > 0)
    du1, gk1, gb1 = conv2d_backward_batch(cache["u1"], t["g.conv1.k"], 1, dp2)
    dr1 = upsample2_backward(du1).reshape(b, -1)
    da1 = dr1 * (cache["a1"] > 0)
    return {
        "g.fc.w": cache["z"].T @ da1,
        "g.fc.b": da1.sum(axis=0),
        "g.conv1.k": gk1,
        "g.conv1.b": gb1,
        "g.conv2.k": gk2,
        "g.conv2.b": gb2,
    }


def discriminator_forward(params: GanParams, imgs: np.ndarray):
    t = params.tensors
    x = imgs if imgs.ndim == 4 else imgs[:, None, :, :]
    p1 = conv2d_valid_batch(x, t["d.conv1.k"], 2, t["d.conv1.b"])
    r1 = leaky_relu(p1)
    p2 = conv2d_valid_batch(r1, t["d.conv2.k"], 2, t["d.conv2.b"])
    r2 = leaky_relu(p2)
    flat = r2.reshape(x.shape[0], -1)
    logits = (flat @ t["d.fc.w"] + t["d.fc.b"])[:, 0]
    probs = sigmoid(logits)
    cache = {"x": x, "p1": p1, "r1": r1, "p2": p2, "r2_shape": r2.shape, "flat": flat}
    return probs, logits, cache


def discriminator_backward(params: GanParams, cache, d_logits: np.ndarray):
    """Returns (param grads, gradient w.r.t. the input images)."""
    t = params.tensors
    dl = d_logits[:, None]
    grads = {
        "d.fc.w": cache["flat"].T @ dl,
        "d.fc.b": dl.sum(axis=0),
    }
    dflat = dl @ t["d.fc.w"].T
    dr2 = dflat.reshape(cache["r2_shape"])
    dp2 = dr2 * dleaky_relu(cache["p2"])
    dr1, gk2, gb2 = conv2d_backward_batch(cache["r1"], t["d.conv2.k"], 2, dp2)
    dp1 = dr1 * dleaky_relu(cache["p1"])
    dx, gk1, gb1 = conv2d_backward_batch(cache["x"], t["d.conv1.k"], 2, dp1)
    grads.update({"d.conv1.k": gk1, "d.conv1.b": gb1, "d.conv2.k": gk2, "d.conv2.b": gb2})
    return grads, dx


def _split(tensors: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {k: v for k, v in tensors.items() if k.startswith(prefix)}


def discriminator_loss_and_grads(params: GanParams, real: np.ndarray, z: np.ndarray):
    """loss_D and its gradients w.r.t. the discriminator parameters.

    Gradients go through the logits directly (d loss/d logit_real =
    (sigmoid - 1)/B, d loss/d logit_fake = sigmoid/B), which is the exact
    derivative of the unclamped loss.
    """
    fake, _ = generator_forward(params, z)
    p_real, _, cache_r = discriminator_forward(params, real)
    p_fake, _, cache_f = discriminator_forward(params, fake)
    loss_d, _ = gan_losses(p_real, p_fake)
    g_real, _ = discriminator_backward(params, cache_r, (p_real - 1.0) / len(p_real))
    g_fake, _ = discriminator_backward(params, cache_f, p_fake / len(p_fake))
    return loss_d, {k: g_real[k] + g_fake[k] for k in g_real}


def generator_loss_and_grads(params: GanParams, z: np.ndarray):
    """Non-saturating loss_G and its gradients w.r.t. the generator parameters."""
    fake, g_cache = generator_forward(params, z)
    p_fake, _, cache_f = discriminator_forward(params, fake)
    _, loss_g = gan_losses(np.array([0.5]), p_fake)
    _, d_img = discriminator_backward(params, cache_f, (p_fake - 1.0) / len(p_fake))
    return loss_g, generator_backward(params, g_cache, d_img)


def train_gan(
    params: GanParams,
    bank: PositiveBank,
    steps: int,
    rng: np.random.Generator,
    adam_d: AdamSet | None = None,
    adam_g: AdamSet | None = None,
) -> tuple[GanParams, list[tuple[float, float]]]:
    """Alternating 1:1 discriminator/generator ADAM steps on bank minibatches.

    Deterministic given the rng state. Returns the updated params and the
    (loss_D, loss_G) history.
    """
    if len(bank) == 0:
        raise ValueError("positive bank is empty")
    cfg = params.config
    adam_d = adam_d if adam_d is not None else AdamSet(lr=cfg.lr, beta1=cfg.beta1)
    adam_g = adam_g if adam_g is not None else AdamSet(lr=cfg.lr, beta1=cfg.beta1)
    history = []
    t = params.tensors
    for step in range(steps):
        real = bank.sample(rng, cfg.batch_size)[:, None, :, :]
        z = rng.standard_normal((cfg.batch_size, cfg.noise_dim))
        loss_d, d_grads = discriminator_loss_and_grads(params, real, z)
        if not all(np.all(np.isfinite(v)) for v in d_grads.values()):
            raise NumericError(f"non-finite discriminator gradient at step {step}")
        t.update(adam_d.update(_split(t, "d."), d_grads))

        z = rng.standard_normal((cfg.batch_size, cfg.noise_dim))
        loss_g, g_grads = generator_loss_and_grads(params, z)
        if not all(np.all(np.isfinite(v)) for v in g_grads.values()):
            raise NumericError(f"non-finite generator gradient at step {step}")
        t.update(adam_g.update(_split(t, "g."), g_grads))
        history.append((loss_d, loss_g))
    return params, history


def generate_positives(
    params: GanParams, count: int, rng: np.random.Generator
) -> np.ndarray:
    """(count, patch, patch) grayscale patches in [0,1]."""
    z = rng.standard_normal((count, params.config.noise_dim))
    imgs, _ = generator_forward(params, z)
    return imgs[:, 0, :, :]


def features_for_generated(patches: np.ndarray, embedding, exemplar_size: int) -> np.ndarray:
    """Resize patches to exemplar size, embed, flatten channel-major to (B, m)."""
    from .imaging import resize

    batch = np.stack([resize(p, exemplar_size) for p in patches])
    feats = embedding.forward_batch(batch[:, None, :, :])
    return feats.reshape(feats.shape[0], -1)
