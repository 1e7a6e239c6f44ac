"""Sequence ingestion, OTB-style export and a scripted synthetic generator.

A sequence directory holds one image subfolder plus a ground-truth text file
with one ``x,y,w,h`` box per line (comma or whitespace separated, 1-indexed
origin). Synthetic sequences render a textured object over a textured
background with scripted motion, scale drift, appearance interpolation,
illumination gain, occluders and distractor objects; their ground truth is
exact by construction and integer-valued, so export + re-ingestion is the
identity on boxes.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from pydantic import BaseModel, ConfigDict

from .errors import IngestionError, SynthSpecError
from .imaging import resize

IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".bmp"}


@dataclass
class Sequence:
    name: str
    frames: list[np.ndarray]  # uint8 grayscale (H, W)
    boxes: np.ndarray  # (T, 4) float64, 0-indexed x,y,w,h
    attributes: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)


def _parse_gt_line(line: str, lineno: int, path: Path) -> tuple[float, float, float, float]:
    fields = [f for f in re.split(r"[,\s]+", line.strip()) if f]
    if len(fields) != 4:
        raise IngestionError(
            f"{path}: line {lineno}: expected 4 box fields, got {len(fields)}"
        )
    try:
        x, y, w, h = (float(f) for f in fields)
    except ValueError as exc:
        raise IngestionError(f"{path}: line {lineno}: {exc}") from exc
    return (x - 1.0, y - 1.0, w, h)  # 1-indexed origin -> 0-indexed


def load_sequence(directory: str | Path) -> Sequence:
    directory = Path(directory)
    gt_files = sorted(directory.glob("groundtruth*.txt"))
    if not gt_files:
        raise IngestionError(f"missing ground-truth file in {directory}")
    gt_path = gt_files[0]

    img_dirs = [d for d in sorted(directory.iterdir()) if d.is_dir()]
    frame_paths: list[Path] = []
    for d in sorted(img_dirs, key=lambda p: (p.name != "img", p.name)):
        paths = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_EXTS)
        if paths:
            frame_paths = paths
            break
    if not frame_paths:
        raise IngestionError(f"no image subfolder with frames in {directory}")

    boxes = []
    with gt_path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            boxes.append(_parse_gt_line(line, lineno, gt_path))
    if len(boxes) != len(frame_paths):
        raise IngestionError(
            f"{directory}: {len(frame_paths)} frames but {len(boxes)} ground-truth boxes"
        )
    if boxes and (boxes[0][2] <= 0 or boxes[0][3] <= 0):
        raise IngestionError(f"{directory}: degenerate first-frame box {boxes[0]}")

    frames = []
    for p in frame_paths:
        img = cv2.imread(str(p), cv2.IMREAD_GRAYSCALE)
        if img is None:
            raise IngestionError(f"unreadable image {p}")
        frames.append(img)

    attributes: list[str] = []
    name = directory.name
    meta = directory / "meta.json"
    if meta.exists():
        data = json.loads(meta.read_text())
        attributes = list(data.get("attributes", []))
        name = data.get("name", name)
    return Sequence(name=name, frames=frames, boxes=np.array(boxes, dtype=np.float64), attributes=attributes)


def save_sequence(seq: Sequence, directory: str | Path) -> None:
    directory = Path(directory)
    img_dir = directory / "img"
    img_dir.mkdir(parents=True, exist_ok=True)
    for idx, frame in enumerate(seq.frames):
        cv2.imwrite(str(img_dir / f"{idx + 1:04d}.png"), frame)
    lines = []
    for x, y, w, h in seq.boxes:
        lines.append(f"{x + 1.0!r},{y + 1.0!r},{w!r},{h!r}")
    (directory / "groundtruth_rect.txt").write_text("\n".join(lines) + "\n")
    (directory / "meta.json").write_text(
        json.dumps({"name": seq.name, "attributes": seq.attributes}, sort_keys=True)
    )


# ---------------------------------------------------------------------------
# synthetic sequences


class DistractorSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    texture: str = "clone"  # "clone" copies the target's initial texture
    texture_seed: int = 0
    start: tuple[float, float] = (0.0, 0.0)  # center, pixels
    velocity: tuple[float, float] = (0.0, 0.0)
    size: tuple[int, int] | None = None  # (w, h); defaults to object size


class OcclusionSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    frames: list[int]
    fraction: float = 1.0  # of the object side covered
    texture_seed: int = 7


class SynthSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    name: str = "synthetic"
    seed: int = 0
    frame_size: tuple[int, int] = (200, 200)  # (H, W)
    n_frames: int = 30
    object_size: tuple[int, int] = (36, 36)  # (w, h)
    start: tuple[float, float] | None = None  # center; defaults to frame center
    velocity: tuple[float, float] = (0.0, 0.0)
    scale_drift: float = 1.0  # per-frame side multiplier
    deform_rate: float = 0.0  # appearance interpolation speed, 0..
    illumination_amp: float = 0.0
    illumination_period: float = 20.0
    occlusion: OcclusionSpec | None = None
    distractors: list[DistractorSpec] = []
    background_cells: int = 12
    noise_sigma: float = 0.0

    def derived_attributes(self) -> list[str]:
        tags = []
        if self.scale_drift != 1.0:
            tags.append("scale_variation")
        if self.deform_rate > 0:
            tags.append("deformation")
        if self.illumination_amp > 0:
            tags.append("illumination_variation")
        if self.occlusion is not None:
            tags.append("occlusion")
        if self.distractors:
            tags.append("background_clutter")
        if max(abs(self.velocity[0]), abs(self.velocity[1])) >= 6:
            tags.append("fast_motion")
        return tags


def _value_noise(rng: np.random.Generator, h: int, w: int, cells: int) -> np.ndarray:
    coarse = rng.random((cells, cells))
    return cv2.resize(coarse, (w, h), interpolation=cv2.INTER_LINEAR)


def _paste(frame: np.ndarray, tex: np.ndarray, box: tuple[int, int, int, int]) -> None:
    x, y, w, h = box
    fh, fw = frame.shape
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, fw), min(y + h, fh)
    if x1 <= x0 or y1 <= y0:
        return
    patch = cv2.resize(tex, (w, h), interpolation=cv2.INTER_LINEAR)
    frame[y0:y1, x0:x1] = patch[y0 - y : y1 - y, x0 - x : x1 - x]


def synth_sequence(spec: SynthSpec, rng: np.random.Generator | None = None) -> Sequence:
    """Render the scripted sequence; ground truth is the rendered integer box."""
    if spec.n_frames < 1 or min(spec.object_size) < 4 or min(spec.frame_size) < 16:
        raise SynthSpecError(f"degenerate synthetic spec {spec.name!r}")
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    fh, fw = spec.frame_size
    ow, oh = spec.object_size

    background = _value_noise(rng, fh, fw, spec.background_cells)
    tex_a = 0.25 + 0.75 * _value_noise(rng, oh, ow, 5)
    tex_b = _value_noise(rng, oh, ow, 5) * 0.75
    occl_tex = None
    if spec.occlusion is not None:
        occl_tex = _value_noise(np.random.default_rng(spec.occlusion.texture_seed), 16, 16, 4)
    dis_texs = []
    for d in spec.distractors:
        if d.texture == "clone":
            dis_texs.append(tex_a.copy())
        else:
            dw, dh = d.size if d.size is not None else (ow, oh)
            dis_texs.append(0.25 + 0.75 * _value_noise(np.random.default_rng(d.texture_seed), dh, dw, 5))
    noise_rng = np.random.default_rng(rng.integers(0, 2**63))

    cx0, cy0 = spec.start if spec.start is not None else (fw / 2.0, fh / 2.0)
    frames: list[np.ndarray] = []
    boxes: list[tuple[float, float, float, float]] = []
    for t in range(spec.n_frames):
        frame = background.copy()

        for d, tex in zip(spec.distractors, dis_texs):
            dw, dh = d.size if d.size is not None else (ow, oh)
            dcx = d.start[0] + d.velocity[0] * t
            dcy = d.start[1] + d.velocity[1] * t
            _paste(frame, tex, (int(round(dcx - dw / 2)), int(round(dcy - dh / 2)), dw, dh))

        alpha = min(1.0, spec.deform_rate * t)
        tex = (1.0 - alpha) * tex_a + alpha * tex_b
        scale = spec.scale_drift**t
        w_t = int(round(ow * scale))
        h_t = int(round(oh * scale))
        cx = cx0 + spec.velocity[0] * t
        cy = cy0 + spec.velocity[1] * t
        x_t = int(round(cx - w_t / 2.0))
        y_t = int(round(cy - h_t / 2.0))
        if x_t < 0 or y_t < 0 or x_t + w_t > fw or y_t + h_t > fh or w_t < 2 or h_t < 2:
            raise SynthSpecError(
                f"{spec.name!r}: object box ({x_t},{y_t},{w_t},{h_t}) leaves the "
                f"{fw}x{fh} frame at frame {t}"
            )
        _paste(frame, tex, (x_t, y_t, w_t, h_t))

        if spec.occlusion is not None and t in spec.occlusion.frames:
            side_w = int(round(w_t * spec.occlusion.fraction))
            side_h = int(round(h_t * spec.occlusion.fraction))
            ox = x_t + (w_t - side_w) // 2
            oy = y_t + (h_t - side_h) // 2
            _paste(frame, occl_tex, (ox, oy, max(side_w, 1), max(side_h, 1)))

        if spec.illumination_amp > 0:
            gain = 1.0 + spec.illumination_amp * np.sin(2 * np.pi * t / spec.illumination_period)
            frame = frame * gain
        if spec.noise_sigma > 0:
            frame = frame + noise_rng.normal(0.0, spec.noise_sigma, size=frame.shape)

        frames.append((np.clip(frame, 0.0, 1.0) * 255.0).round().astype(np.uint8))
        boxes.append((float(x_t), float(y_t), float(w_t), float(h_t)))

    return Sequence(
        name=spec.name,
        frames=frames,
        boxes=np.array(boxes, dtype=np.float64),
        attributes=spec.derived_attributes(),
    )


def standard_suite(base_seed: int = 41) -> list[SynthSpec]:
    """Ten fixed-seed sequences with appearance drift and clutter.

    Each sequence deforms the target away from its first-frame appearance and
    plants a distractor that keeps the initial appearance, which is exactly
    the situation where first-frame template matching alone goes wrong.
    """
    suite = []
    motions = [(2.4, 0.0), (-2.2, 1.0), (0.0, 2.4), (1.8, -1.6), (2.0, 1.4),
               (-1.6, -1.8), (2.6, 0.8), (-2.4, 0.0), (1.2, 2.2), (-1.0, -2.4)]
    for i, vel in enumerate(motions):
        start = (70.0 + 12.0 * (i % 4), 70.0 + 10.0 * (i % 3))
        dis_start = (200.0 - start[0], 200.0 - start[1])
        suite.append(
            SynthSpec(
                name=f"drift{i:02d}",
                seed=base_seed + i,
                frame_size=(200, 200),
                n_frames=24,
                object_size=(34, 34),
                start=start,
                velocity=vel,
                deform_rate=0.055,
                distractors=[
                    DistractorSpec(texture="clone", start=dis_start,
                                   velocity=(-vel[0] * 0.4, -vel[1] * 0.4))
                ],
                illumination_amp=0.08 if i % 2 else 0.0,
                scale_drift=1.004 if i % 3 == 0 else 1.0,
                noise_sigma=0.01,
            )
        )
    return suite
