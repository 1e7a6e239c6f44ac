"""Convolutional embedding and template/search-region similarity scoring.

The embedding is a small stack of valid (never padded) convolutions with a
total spatial stride of 4 and a receptive field of 7 pixels, so that a
71x71 exemplar maps to 17x17 features, a 199x199 search crop maps to 49x49
features, and sliding the template features over the search features yields a
33x33 score map. Because every layer is valid, a 17x17 crop of the search
feature map at offset (r, c) equals the embedding of the 71x71 sub-window at
pixel offset (4r, 4c) exactly; the proposal stage depends on that equality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AnnotationError, DimensionError, GeometryError
from .imaging import crop_replicate, resize, square_patch
from .nn import (
    AdamSet,
    conv2d_valid,
    conv2d_valid_batch,
    conv2d_backward,
    conv_output_extent,
    cross_correlate,
    cross_correlate_backward,
)
from .nn.ops import ACTIVATIONS
from .nn.weights import load_weights, save_weights


@dataclass
class ConvLayer:
    kernels: np.ndarray  # (out_ch, in_ch, k, k)
    bias: np.ndarray  # (out_ch,)
    stride: int
    activation: str  # key into nn.ops.ACTIVATIONS

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[2]


@dataclass
class Embedding:
    """Stack of valid convolution layers with element-wise nonlinearities."""

    layers: list[ConvLayer]

    @property
    def in_channels(self) -> int:
        return self.layers[0].kernels.shape[1]

    @property
    def out_channels(self) -> int:
        return self.layers[-1].kernels.shape[0]

    @property
    def total_stride(self) -> int:
        s = 1
        for layer in self.layers:
            s *= layer.stride
        return s

    @property
    def receptive_field(self) -> int:
        rf, jump = 1, 1
        for layer in self.layers:
            rf += (layer.kernel_size - 1) * jump
            jump *= layer.stride
        return rf

    def output_extent(self, in_extent: int) -> int:
        e = in_extent
        for layer in self.layers:
            e = conv_output_extent(e, layer.kernel_size, layer.stride)
        return e

    def mac_count(self, in_extent: int) -> int:
        """Exact multiply-accumulate count of one forward pass on a square input."""
        total, e = 0, in_extent
        for layer in self.layers:
            o, c, k, _ = layer.kernels.shape
            e = conv_output_extent(e, k, layer.stride)
            total += o * e * e * c * k * k
        return total

    def forward(self, image: np.ndarray) -> np.ndarray:
        """Embed one (C, H, W) image patch into a (C_out, H', W') feature map."""
        if image.ndim == 2:
            image = image[None, ...]
        if image.shape[0] != self.in_channels:
            raise DimensionError(
                f"expected {self.in_channels} input channels, got {image.shape[0]}"
            )
        if min(image.shape[1], image.shape[2]) < self.receptive_field:
            raise GeometryError(
                f"patch {image.shape[1]}x{image.shape[2]} smaller than receptive "
                f"field {self.receptive_field}"
            )
        x = np.asarray(image, dtype=np.float64)
        for layer in self.layers:
            x = conv2d_valid(x, layer.kernels, layer.stride, layer.bias)
            x = ACTIVATIONS[layer.activation][0](x)
        return x

    def forward_batch(self, images: np.ndarray) -> np.ndarray:
        """Embed (B, C, H, W) patches in one vectorized pass."""
        if images.ndim == 3:
            images = images[:, None, :, :]
        x = np.asarray(images, dtype=np.float64)
        for layer in self.layers:
            x = conv2d_valid_batch(x, layer.kernels, layer.stride, layer.bias)
            x = ACTIVATIONS[layer.activation][0](x)
        return x

    def forward_cached(self, image: np.ndarray):
        """Forward pass retaining pre-activation inputs for the backward pass."""
        if image.ndim == 2:
            image = image[None, ...]
        x = np.asarray(image, dtype=np.float64)
        caches = []
        for layer in self.layers:
            pre = conv2d_valid(x, layer.kernels, layer.stride, layer.bias)
            caches.append((x, pre))
            x = ACTIVATIONS[layer.activation][0](pre)
        return x, caches

    def backward(self, caches, grad_out: np.ndarray):
        """Gradients of a scalar loss w.r.t. every kernel/bias and the input."""
        grads = {}
        g = grad_out
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            x, pre = caches[idx]
            g = g * ACTIVATIONS[layer.activation][1](pre)
            gx, gk, gb = conv2d_backward(x, layer.kernels, layer.stride, g)
            grads[f"conv{idx}.kernels"] = gk
            grads[f"conv{idx}.bias"] = gb
            g = gx
        return grads, g

    def to_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for idx, layer in enumerate(self.layers):
            out[f"conv{idx}.kernels"] = layer.kernels
            out[f"conv{idx}.bias"] = layer.bias
            out[f"conv{idx}.stride"] = np.array([layer.stride], dtype=np.float64)
            out[f"conv{idx}.activation"] = np.array(
                [float(list(ACTIVATIONS).index(layer.activation))]
            )
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "Embedding":
        acts = list(ACTIVATIONS)
        layers = []
        idx = 0
        while f"conv{idx}.kernels" in tensors:
            layers.append(
                ConvLayer(
                    kernels=tensors[f"conv{idx}.kernels"].copy(),
                    bias=tensors[f"conv{idx}.bias"].copy(),
                    stride=int(tensors[f"conv{idx}.stride"][0]),
                    activation=acts[int(tensors[f"conv{idx}.activation"][0])],
                )
            )
            idx += 1
        if not layers:
            raise DimensionError("no convolution layers found in weight tensors")
        return cls(layers)

    def save(self, path) -> None:
        save_weights(path, self.to_tensors())

    @classmethod
    def load(cls, path) -> "Embedding":
        return cls.from_tensors(load_weights(path))


def default_embedding(
    rng: np.random.Generator,
    in_channels: int = 1,
    channels: tuple[int, ...] = (8, 16, 16),
) -> Embedding:
    """3-layer embedding: k3/s1 relu, k3/s2 relu, k2/s2 linear (stride 4, RF 7)."""
    spec = [(3, 1, "relu"), (3, 2, "relu"), (2, 2, "linear")]
    if len(channels) != len(spec):
        raise DimensionError(f"need {len(spec)} channel counts, got {len(channels)}")
    layers = []
    c_in = in_channels
    for (k, s, act), c_out in zip(spec, channels):
        fan_in = c_in * k * k
        a = math.sqrt(6.0 / fan_in)
        kernels = rng.uniform(-a, a, size=(c_out, c_in, k, k))
        layers.append(ConvLayer(kernels=kernels, bias=np.zeros(c_out), stride=s, activation=act))
        c_in = c_out
    return Embedding(layers)


@dataclass
class SearchGeometry:
    """Pixel/feature geometry shared by template creation and search scoring."""

    exemplar_size: int = 71
    search_size: int = 199
    context: float = 0.2
    scale_factors: tuple[float, ...] = (0.964, 1.0, 1.0375)
    template_extent: int = 17
    search_extent: int = 49
    feature_stride: int = 4
    receptive_field: int = 7

    @property
    def score_extent(self) -> int:
        return self.search_extent - self.template_extent + 1

    @classmethod
    def for_embedding(
        cls,
        embedding: Embedding,
        exemplar_size: int = 71,
        search_size: int = 199,
        context: float = 0.2,
        scale_factors: tuple[float, ...] = (0.964, 1.0, 1.0375),
    ) -> "SearchGeometry":
        geo = cls(
            exemplar_size=exemplar_size,
            search_size=search_size,
            context=context,
            scale_factors=tuple(scale_factors),
            template_extent=embedding.output_extent(exemplar_size),
            search_extent=embedding.output_extent(search_size),
            feature_stride=embedding.total_stride,
            receptive_field=embedding.receptive_field,
        )
        if geo.score_extent < 1:
            raise GeometryError(
                f"search features {geo.search_extent} smaller than template "
                f"features {geo.template_extent}"
            )
        return geo


@dataclass
class Template:
    """First-frame object representation; computed once, never updated."""

    features: np.ndarray  # (C, template_extent, template_extent)
    patch: np.ndarray  # (exemplar_size, exemplar_size) resized crop
    box: tuple[float, float, float, float]
    crop_side: int


@dataclass
class ScoreMap:
    scores: np.ndarray  # (score_extent, score_extent)
    scale_index: int
    scale_factor: float
    search_image: np.ndarray  # resized crop, (search_size, search_size)
    features: np.ndarray  # (C, search_extent, search_extent)
    crop_x0: int
    crop_y0: int
    crop_side: int


@dataclass
class ScoreMapSet:
    """Per-scale score maps plus the mapping between cells and image boxes."""

    maps: list[ScoreMap]
    geometry: SearchGeometry
    prev_box: tuple[float, float, float, float]
    frame_shape: tuple[int, int]

    def cell_to_box(self, scale_index: int, row: int, col: int):
        m = self.maps[scale_index]
        g = self.geometry
        half = (g.exemplar_size - 1) / 2.0
        ratio = m.crop_side / g.search_size
        fx = m.crop_x0 + (col * g.feature_stride + half) * ratio
        fy = m.crop_y0 + (row * g.feature_stride + half) * ratio
        w = self.prev_box[2] * m.scale_factor
        h = self.prev_box[3] * m.scale_factor
        return (fx - w / 2.0, fy - h / 2.0, w, h)

    def box_to_cell(self, scale_index: int, box) -> tuple[int, int]:
        m = self.maps[scale_index]
        g = self.geometry
        half = (g.exemplar_size - 1) / 2.0
        ratio = m.crop_side / g.search_size
        fx = box[0] + box[2] / 2.0
        fy = box[1] + box[3] / 2.0
        col = ((fx - m.crop_x0) / ratio - half) / g.feature_stride
        row = ((fy - m.crop_y0) / ratio - half) / g.feature_stride
        return (int(round(row)), int(round(col)))


@dataclass
class Matcher:
    """Embedding + geometry + the score-map similarity, Siamese style."""

    embedding: Embedding
    geometry: SearchGeometry
    k_bias: float = 0.0

    def embed(self, patch: np.ndarray) -> np.ndarray:
        return self.embedding.forward(patch)

    def make_template(self, frame: np.ndarray, box) -> Template:
        x, y, w, h = box
        if w <= 0 or h <= 0:
            raise AnnotationError(f"degenerate annotation {box}")
        fh, fw = frame.shape[:2]
        if x + w <= 0 or y + h <= 0 or x >= fw or y >= fh:
            raise AnnotationError(f"annotation {box} outside {fw}x{fh} frame")
        patch = square_patch(frame, box, self.geometry.context, self.geometry.exemplar_size)
        side = int(round(math.sqrt(w * h) * (1.0 + self.geometry.context)))
        return Template(
            features=self.embedding.forward(patch),
            patch=patch,
            box=tuple(float(v) for v in box),
            crop_side=max(side, 2),
        )

    def score_search(self, template: Template, frame: np.ndarray, prev_box) -> ScoreMapSet:
        g = self.geometry
        fh, fw = frame.shape[:2]
        if min(fh, fw) < g.receptive_field:
            raise GeometryError(f"frame {fw}x{fh} smaller than receptive field")
        x, y, w, h = prev_box
        if w <= 0 or h <= 0:
            raise GeometryError(f"degenerate previous box {prev_box}")
        cx = min(max(x + w / 2.0, 0.0), fw - 1.0)
        cy = min(max(y + h / 2.0, 0.0), fh - 1.0)
        base_side = math.sqrt(w * h) * (1.0 + g.context) * (g.search_size / g.exemplar_size)

        maps = []
        for idx, factor in enumerate(g.scale_factors):
            side = max(int(round(base_side * factor)), 2)
            x0 = int(round(cx - side / 2.0))
            y0 = int(round(cy - side / 2.0))
            crop = resize(crop_replicate(frame, x0, y0, side), g.search_size)
            feats = self.embedding.forward(crop)
            scores = cross_correlate(template.features, feats, self.k_bias)
            maps.append(
                ScoreMap(
                    scores=scores,
                    scale_index=idx,
                    scale_factor=factor,
                    search_image=crop,
                    features=feats,
                    crop_x0=x0,
                    crop_y0=y0,
                    crop_side=side,
                )
            )
        return ScoreMapSet(
            maps=maps,
            geometry=g,
            prev_box=tuple(float(v) for v in prev_box),
            frame_shape=(fh, fw),
        )


# ---------------------------------------------------------------------------
# tiny offline trainer: synthetic planted-object pairs


def _value_noise(rng: np.random.Generator, size: int, cells: int = 6) -> np.ndarray:
    coarse = rng.random((cells, cells))
    return resize(coarse, size)


def _plant(frame: np.ndarray, patch: np.ndarray, cx: float, cy: float) -> None:
    ph, pw = patch.shape
    x0 = int(round(cx - pw / 2.0))
    y0 = int(round(cy - ph / 2.0))
    frame[y0 : y0 + ph, x0 : x0 + pw] = patch


def _synthetic_pair(geometry: SearchGeometry, rng: np.random.Generator):
    """One training pair: frame with a planted textured object at a known cell."""
    g = geometry
    obj_side = int(rng.integers(24, 48))
    frame_side = 4 * g.search_size
    frame = _value_noise(rng, frame_side, cells=24)
    obj = _value_noise(rng, obj_side, cells=5)

    prev = (
        frame_side / 2.0 - obj_side / 2.0,
        frame_side / 2.0 - obj_side / 2.0,
        float(obj_side),
        float(obj_side),
    )
    base_side = math.sqrt(prev[2] * prev[3]) * (1.0 + g.context) * (g.search_size / g.exemplar_size)
    side = max(int(round(base_side)), 2)
    x0 = int(round(frame_side / 2.0 - side / 2.0))
    y0 = int(round(frame_side / 2.0 - side / 2.0))
    ratio = side / g.search_size
    half = (g.exemplar_size - 1) / 2.0

    margin = 4
    row = int(rng.integers(margin, g.score_extent - margin))
    col = int(rng.integers(margin, g.score_extent - margin))
    fx = x0 + (col * g.feature_stride + half) * ratio
    fy = y0 + (row * g.feature_stride + half) * ratio
    _plant(frame, obj, fx, fy)

    tmpl_box = (fx - obj_side / 2.0, fy - obj_side / 2.0, float(obj_side), float(obj_side))
    tmpl_patch = square_patch(frame, tmpl_box, g.context, g.exemplar_size)
    crop = resize(crop_replicate(frame, x0, y0, side), g.search_size)
    return tmpl_patch, crop, (row, col)


def pretrain_embedding(
    embedding: Embedding,
    geometry: SearchGeometry,
    rng: np.random.Generator,
    steps: int = 200,
    lr: float = 1e-3,
) -> list[float]:
    """Train the embedding on synthetic planted-object pairs.

    Loss: softmax cross-entropy over score-map cells with the true planted
    cell as the target class. Mutates the embedding in place; returns the
    per-step loss history.
    """
    adam = AdamSet(lr=lr)
    n_feat = float(embedding.out_channels * geometry.template_extent**2)
    losses = []
    for _ in range(steps):
        tmpl_patch, crop, (row, col) = _synthetic_pair(geometry, rng)
        tf, tcache = embedding.forward_cached(tmpl_patch)
        sf, scache = embedding.forward_cached(crop)
        scores = cross_correlate(tf, sf) / n_feat

        flat = scores.ravel()
        shifted = flat - flat.max()
        p = np.exp(shifted)
        p /= p.sum()
        true = row * geometry.score_extent + col
        losses.append(float(-math.log(max(p[true], 1e-300))))
        d_flat = p.copy()
        d_flat[true] -= 1.0
        d_scores = (d_flat / n_feat).reshape(scores.shape)

        d_tf, d_sf = cross_correlate_backward(tf, sf, d_scores)
        g_t, _ = embedding.backward(tcache, d_tf)
        g_s, _ = embedding.backward(scache, d_sf)
        grads = {k: g_t[k] + g_s[k] for k in g_t}

        params = {}
        for idx, layer in enumerate(embedding.layers):
            params[f"conv{idx}.kernels"] = layer.kernels
            params[f"conv{idx}.bias"] = layer.bias
        new = adam.update(params, grads)
        for idx, layer in enumerate(embedding.layers):
            layer.kernels = new[f"conv{idx}.kernels"]
            layer.bias = new[f"conv{idx}.bias"]
    return losses
