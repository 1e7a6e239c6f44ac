"""Proposal selection: top-N score cells plus direct feature-map cropping.

Selecting a cell costs nothing beyond the search-region embedding that
produced the score maps, because the cell's classifier features are a plain
sub-array of the search feature map rather than a fresh forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError
from .matcher import Embedding, ScoreMapSet, SearchGeometry


@dataclass
class Proposal:
    scale_index: int
    row: int
    col: int
    confidence: float
    box: tuple[float, float, float, float]
    features: np.ndarray  # (C, extent, extent)


@dataclass
class ProposalSet:
    proposals: list[Proposal]
    n_requested: int

    def __len__(self) -> int:
        return len(self.proposals)

    def __getitem__(self, idx: int) -> Proposal:
        return self.proposals[idx]


def crop_features(
    search_features: np.ndarray, coordinate: tuple[int, int], extent: int
) -> np.ndarray:
    """(C, extent, extent) sub-array of the search features at (row, col).

    For a valid-padded, stride-1-correlation pipeline this equals the
    embedding of the corresponding image sub-window.
    """
    row, col = coordinate
    _, h, w = search_features.shape
    if row < 0 or col < 0 or row + extent > h or col + extent > w:
        raise GeometryError(
            f"feature crop ({row},{col})+{extent} outside {h}x{w} map"
        )
    return search_features[:, row : row + extent, col : col + extent].copy()


def select_top(
    score_maps: ScoreMapSet, n: int, scale_penalty: float = 1.0
) -> ProposalSet:
    """The n globally highest score cells across scales, features attached.

    Non-unit scales are multiplied by ``scale_penalty`` before ranking
    (1.0 disables it). Ties break by (scale index, row, col) ascending, so
    the result is a deterministic function of the score values alone.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not score_maps.maps or score_maps.maps[0].scores.size == 0:
        raise ValueError("empty score maps")
    extent = score_maps.geometry.score_extent

    scales, rows, cols, vals = [], [], [], []
    for m in score_maps.maps:
        s = m.scores
        penal = s * scale_penalty if m.scale_factor != 1.0 else s
        idx_r, idx_c = np.indices(s.shape)
        scales.append(np.full(s.size, m.scale_index))
        rows.append(idx_r.ravel())
        cols.append(idx_c.ravel())
        vals.append(penal.ravel())
    scales = np.concatenate(scales)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)

    order = np.lexsort((cols, rows, scales, -vals))
    take = order[: min(n, vals.size)]

    proposals = []
    for i in take:
        si, r, c = int(scales[i]), int(rows[i]), int(cols[i])
        proposals.append(
            Proposal(
                scale_index=si,
                row=r,
                col=c,
                confidence=float(vals[i]),
                box=score_maps.cell_to_box(si, r, c),
                features=crop_features(
                    score_maps.maps[si].features,
                    (r, c),
                    score_maps.geometry.template_extent,
                ),
            )
        )
    return ProposalSet(proposals=proposals, n_requested=n)


def count_embed_flops(
    embedding: Embedding,
    geometry: SearchGeometry,
    mode: str,
    n: int,
) -> int:
    """Multiply-accumulate count for obtaining n proposal feature patches.

    ``cropped``: one search-region embedding, independent of n.
    ``per-proposal``: n exemplar-sized embeddings.
    """
    if mode == "cropped":
        return embedding.mac_count(geometry.search_size)
    if mode == "per-proposal":
        return n * embedding.mac_count(geometry.exemplar_size)
    raise ValueError(f"unknown mode {mode!r} (expected 'cropped' or 'per-proposal')")
