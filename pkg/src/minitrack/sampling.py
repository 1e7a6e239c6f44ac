"""Training-sample acquisition around the estimated target.

Positives and negatives are drawn by perturbing the estimated box with
Gaussian translation and log-scale noise, then labelled by IoU against the
estimate and rejection-resampled until the requested counts are met. Hard
negatives come straight from the score map: high-confidence cells far enough
from the estimate, whose features are already available as crops, so mining
them adds no convolution work.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SamplingError
from .imaging import square_patch
from .matcher import ScoreMapSet
from .proposals import crop_features

Box = tuple[float, float, float, float]


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 for disjoint or degenerate boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        return 0.0
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return float(inter / union) if union > 0 else 0.0


@dataclass
class SamplerConfig:
    n_pos: int = 32
    n_neg: int = 96
    sigma_xy: float = 0.1
    sigma_scale: float = 0.2
    # negatives need wider jitter: IoU <= neg_iou_max is a >=5-sigma event
    # under the positive sigmas, so rejection would never terminate
    neg_sigma_xy: float = 0.6
    neg_sigma_scale: float = 0.3
    pos_iou_min: float = 0.7
    neg_iou_max: float = 0.3
    hard_negatives: int = 16
    attempt_factor: int = 50


@dataclass
class SamplePatchSet:
    """Labelled patches (exemplar-sized, grayscale) with boxes and provenance."""

    positives: list[tuple[np.ndarray, Box]] = field(default_factory=list)
    negatives: list[tuple[np.ndarray, Box]] = field(default_factory=list)
    pos_tags: list[str] = field(default_factory=list)
    neg_tags: list[str] = field(default_factory=list)


def _draw_class(
    frame: np.ndarray,
    center_box: Box,
    count: int,
    rng: np.random.Generator,
    sigma_xy: float,
    sigma_scale: float,
    accept,
    budget: int,
) -> list[Box]:
    """Rejection-sample ``count`` boxes passing ``accept`` (IoU predicate)."""
    if count == 0:
        return []
    x, y, w, h = center_box
    cx, cy = x + w / 2.0, y + h / 2.0
    fh, fw = frame.shape[:2]
    out: list[Box] = []
    attempts = 0
    chunk = max(count * 4, 32)
    while len(out) < count and attempts < budget:
        take = min(chunk, budget - attempts)
        attempts += take
        dx = rng.normal(0.0, 1.0, size=take) * sigma_xy * w
        dy = rng.normal(0.0, 1.0, size=take) * sigma_xy * h
        s = np.exp(rng.normal(0.0, sigma_scale, size=take))
        for k in range(take):
            nw, nh = w * s[k], h * s[k]
            ncx = min(max(cx + dx[k], 0.0), fw - 1.0)
            ncy = min(max(cy + dy[k], 0.0), fh - 1.0)
            cand: Box = (ncx - nw / 2.0, ncy - nh / 2.0, nw, nh)
            if accept(iou(cand, center_box)):
                out.append(cand)
                if len(out) == count:
                    break
    return out


def draw_gaussian_samples(
    frame: np.ndarray,
    center_box: Box,
    counts: tuple[int, int],
    rng: np.random.Generator,
    config: SamplerConfig,
    context: float,
    exemplar_size: int,
) -> SamplePatchSet:
    """Gaussian-jittered positives and negatives around ``center_box``.

    Raises SamplingError when the attempt budget runs out with zero positives;
    the caller then skips this frame's update.
    """
    n_pos, n_neg = counts
    budget = config.attempt_factor * max(n_pos + n_neg, 1)
    pos_boxes = _draw_class(
        frame, center_box, n_pos, rng,
        config.sigma_xy, config.sigma_scale,
        lambda v: v >= config.pos_iou_min, budget,
    )
    if n_pos > 0 and not pos_boxes:
        raise SamplingError(
            f"no positive candidates with IoU >= {config.pos_iou_min} "
            f"within {budget} attempts"
        )
    neg_boxes = _draw_class(
        frame, center_box, n_neg, rng,
        config.neg_sigma_xy, config.neg_sigma_scale,
        lambda v: v <= config.neg_iou_max, budget,
    )
    out = SamplePatchSet()
    for b in pos_boxes:
        out.positives.append((square_patch(frame, b, context, exemplar_size), b))
        out.pos_tags.append("gaussian")
    for b in neg_boxes:
        out.negatives.append((square_patch(frame, b, context, exemplar_size), b))
        out.neg_tags.append("gaussian")
    return out


@dataclass
class MinedNegative:
    patch: np.ndarray  # exemplar-sized slice of the resized search crop
    box: Box
    features: np.ndarray  # (C, template_extent, template_extent), cropped
    confidence: float


def hard_negative_mine(
    score_maps: ScoreMapSet,
    estimated_box: Box,
    k: int,
    neg_iou_max: float = 0.3,
) -> list[MinedNegative]:
    """The k highest-confidence cells whose boxes stay clear of the estimate.

    Both the candidate ranking and the feature patches reuse what the scoring
    pass already computed; no embedding or scoring is re-run. May return fewer
    than k when too few cells qualify.
    """
    if k <= 0:
        return []
    g = score_maps.geometry
    scales, rows, cols, vals = [], [], [], []
    for m in score_maps.maps:
        idx_r, idx_c = np.indices(m.scores.shape)
        scales.append(np.full(m.scores.size, m.scale_index))
        rows.append(idx_r.ravel())
        cols.append(idx_c.ravel())
        vals.append(m.scores.ravel())
    scales = np.concatenate(scales)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    order = np.lexsort((cols, rows, scales, -vals))

    out: list[MinedNegative] = []
    for i in order:
        si, r, c = int(scales[i]), int(rows[i]), int(cols[i])
        box = score_maps.cell_to_box(si, r, c)
        if iou(box, estimated_box) > neg_iou_max:
            continue
        m = score_maps.maps[si]
        y0 = r * g.feature_stride
        x0 = c * g.feature_stride
        patch = m.search_image[y0 : y0 + g.exemplar_size, x0 : x0 + g.exemplar_size].copy()
        out.append(
            MinedNegative(
                patch=patch,
                box=box,
                features=crop_features(m.features, (r, c), g.template_extent),
                confidence=float(vals[i]),
            )
        )
        if len(out) == k:
            break
    return out
