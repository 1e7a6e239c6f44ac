"""End-to-end online tracking loop.

Per frame: score the search region against the first-frame template, select
the top-N cells, crop their features, classify them against the previous
estimated state, take the max-positive proposal as the result and advance the
state to its candidate. When the winner's positive score clears the update
threshold, new training samples are drawn around it (hard negatives mined
straight from the score map), the generator is refreshed and sampled to pad
out the positives, and the classifier takes a gradient step. Frames that blow
up geometrically or numerically are marked failed and carry the previous box
forward; the session stays usable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .config import TrackerConfig
from .errors import MinitrackError, SamplingError
from .gan import (
    GanConfig,
    GanParams,
    PositiveBank,
    features_for_generated,
    generate_positives,
    train_gan,
)
from .imaging import clamp_box, square_patch, to_gray_float
from .lstm import LstmParams, LstmState, choose_target, forward, init_state, train_step
from .matcher import Embedding, Matcher, SearchGeometry, default_embedding
from .nn import AdamSet, load_weights, save_weights
from .proposals import ProposalSet, count_embed_flops, select_top
from .sampling import SamplerConfig, draw_gaussian_samples, hard_negative_mine

Box = tuple[float, float, float, float]

# classifier inputs are rescaled so components have this RMS at the template;
# keeps gate pre-activations in a trainable range for any embedding weights
FEATURE_TARGET_RMS = 0.3


@dataclass
class TrackResult:
    frame_index: int
    box: Box
    p_plus: float
    confidence: float
    updated: bool
    failed: bool
    error: str | None = None
    timing_ms: dict[str, float] = field(default_factory=dict)
    flops: dict[str, int] = field(default_factory=dict)
    gan_samples: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "box": [float(v) for v in self.box],
            "p_plus": float(self.p_plus),
            "confidence": float(self.confidence),
            "updated": self.updated,
            "failed": self.failed,
            "error": self.error,
            "flops": {k: int(v) for k, v in self.flops.items()},
            "timing_ms": self.timing_ms,
        }


def _sampler_config(cfg: TrackerConfig) -> SamplerConfig:
    s = cfg.sampler
    return SamplerConfig(
        n_pos=s.n_pos,
        n_neg=s.n_neg,
        sigma_xy=s.sigma_xy,
        sigma_scale=s.sigma_scale,
        neg_sigma_xy=s.neg_sigma_xy,
        neg_sigma_scale=s.neg_sigma_scale,
        pos_iou_min=s.pos_iou_min,
        neg_iou_max=s.neg_iou_max,
        hard_negatives=s.hard_negatives,
        attempt_factor=s.attempt_factor,
    )


class TrackerSession:
    """One tracked object: template, classifier state, generator, sample bank."""

    def __init__(
        self,
        first_frame: np.ndarray,
        annotation: Box,
        config: TrackerConfig,
        embedding: Embedding | None = None,
    ):
        self.config = config
        ss = np.random.SeedSequence(config.seed)
        (ss_embed, ss_lstm, ss_gan_init, ss_gan, ss_sampler) = ss.spawn(5)
        self.rng_gan = np.random.default_rng(ss_gan)
        self.rng_sampler = np.random.default_rng(ss_sampler)

        if embedding is None:
            if config.embedding.weights_path:
                embedding = Embedding.load(config.embedding.weights_path)
            else:
                embedding = default_embedding(
                    np.random.default_rng(ss_embed), channels=tuple(config.embedding.channels)
                )
        geo = SearchGeometry.for_embedding(
            embedding,
            exemplar_size=config.geometry.exemplar_size,
            search_size=config.geometry.search_size,
            context=config.geometry.context,
            scale_factors=tuple(config.geometry.scale_factors),
        )
        self.matcher = Matcher(embedding, geo, k_bias=config.geometry.k_bias)
        self.sampler_cfg = _sampler_config(config)

        gray = to_gray_float(first_frame)
        self.frame_shape = gray.shape
        self.template = self.matcher.make_template(gray, annotation)

        x1 = self.template.features.ravel()
        self.feature_scale = FEATURE_TARGET_RMS * np.sqrt(x1.size) / (
            float(np.linalg.norm(x1)) + 1e-12
        )
        self.input_dim = x1.size

        self.lstm_params = LstmParams.init(
            np.random.default_rng(ss_lstm), self.input_dim, config.lstm.units, config.lstm.layers
        )
        self.adam_lstm = AdamSet(lr=config.lstm.lr)
        self.state = init_state(self.lstm_params, x1 * self.feature_scale)

        gan_cfg = GanConfig(
            patch_size=config.gan.patch_size,
            noise_dim=config.gan.noise_dim,
            g_channels=tuple(config.gan.g_channels),
            d_channels=tuple(config.gan.d_channels),
            lr=config.gan.lr,
            beta1=config.gan.beta1,
            batch_size=config.gan.batch_size,
        )
        self.gan_params = GanParams.init(gan_cfg, np.random.default_rng(ss_gan_init))
        self.adam_gan_d = AdamSet(lr=gan_cfg.lr, beta1=gan_cfg.beta1)
        self.adam_gan_g = AdamSet(lr=gan_cfg.lr, beta1=gan_cfg.beta1)
        self.bank = PositiveBank(capacity=config.gan.bank_capacity)

        self.prev_box: Box = tuple(float(v) for v in annotation)
        self.frame_index = 0
        self.totals: dict[str, int] = {
            "embed_macs": 0,
            "cropped_mode_macs": 0,
            "per_proposal_mode_macs": 0,
        }
        self.update_count = 0
        self.frame_count = 0
        self.last_gan_samples: np.ndarray | None = None

        self._initial_training(gray, self.prev_box)

    # -- initialization ----------------------------------------------------

    def _embed_patches(self, patches: list[np.ndarray]) -> np.ndarray:
        feats = self.matcher.embedding.forward_batch(np.stack(patches)[:, None, :, :])
        return feats.reshape(feats.shape[0], -1) * self.feature_scale

    def _initial_training(self, gray: np.ndarray, annotation: Box) -> None:
        cfg = self.config
        samples = draw_gaussian_samples(
            gray,
            annotation,
            (cfg.sampler.n_pos, cfg.sampler.n_neg),
            self.rng_sampler,
            self.sampler_cfg,
            cfg.geometry.context,
            cfg.geometry.exemplar_size,
        )
        if cfg.lstm_enabled and cfg.lstm.init_iterations > 0:
            patches = [p for p, _ in samples.positives] + [p for p, _ in samples.negatives]
            labels = np.array([1] * len(samples.positives) + [0] * len(samples.negatives))
            feats = self._embed_patches(patches)
            self.totals["embed_macs"] += len(patches) * self.matcher.embedding.mac_count(
                cfg.geometry.exemplar_size
            )
            for _ in range(cfg.lstm.init_iterations):
                self.lstm_params, loss = train_step(
                    self.lstm_params, self.state, feats, labels, self.adam_lstm
                )
                if loss <= cfg.lstm.init_loss_target:
                    break
        if cfg.gan_enabled and cfg.lstm_enabled:  # the generator only feeds the classifier
            for _, box in samples.positives:
                self.bank.add(square_patch(gray, box, cfg.geometry.context, cfg.gan.patch_size))
            if len(self.bank) and cfg.gan.init_steps > 0:
                train_gan(
                    self.gan_params,
                    self.bank,
                    cfg.gan.init_steps,
                    self.rng_gan,
                    self.adam_gan_d,
                    self.adam_gan_g,
                )

    # -- per-frame loop ----------------------------------------------------

    def track_frame(self, frame: np.ndarray) -> TrackResult:
        self.frame_index += 1
        self.frame_count += 1
        cfg = self.config
        geo = self.matcher.geometry
        timing: dict[str, float] = {}
        flops = {
            "search_macs": 0,
            "proposal_feature_macs": 0,
            "sample_macs": 0,
            "generated_macs": 0,
            "cropped_mode_macs": count_embed_flops(
                self.matcher.embedding, geo, "cropped", cfg.n_proposals
            ),
            "per_proposal_mode_macs": count_embed_flops(
                self.matcher.embedding, geo, "per-proposal", cfg.n_proposals
            ),
        }
        try:
            result = self._track_frame_inner(frame, timing, flops)
        except MinitrackError as exc:
            result = TrackResult(
                frame_index=self.frame_index,
                box=self.prev_box,
                p_plus=0.0,
                confidence=0.0,
                updated=False,
                failed=True,
                error=str(exc),
                timing_ms=timing,
                flops=flops,
            )
        self.totals["embed_macs"] += (
            result.flops["search_macs"]
            + result.flops["proposal_feature_macs"]
            + result.flops["sample_macs"]
            + result.flops["generated_macs"]
        )
        self.totals["cropped_mode_macs"] += result.flops["cropped_mode_macs"]
        self.totals["per_proposal_mode_macs"] += result.flops["per_proposal_mode_macs"]
        if result.updated:
            self.update_count += 1
        return result

    def _track_frame_inner(
        self, frame: np.ndarray, timing: dict[str, float], flops: dict[str, int]
    ) -> TrackResult:
        cfg = self.config
        geo = self.matcher.geometry
        gray = to_gray_float(frame)

        t0 = time.perf_counter()
        smap = self.matcher.score_search(self.template, gray, self.prev_box)
        flops["search_macs"] = len(geo.scale_factors) * self.matcher.embedding.mac_count(
            geo.search_size
        )
        timing["match"] = (time.perf_counter() - t0) * 1e3

        t0 = time.perf_counter()
        props = select_top(smap, cfg.n_proposals, cfg.geometry.scale_penalty)
        feats = np.stack([p.features for p in props.proposals])
        if cfg.per_proposal_embed:
            # same values as the crops (valid-only pipeline), at per-patch cost
            windows = []
            for p in props.proposals:
                m = smap.maps[p.scale_index]
                y0, x0 = p.row * geo.feature_stride, p.col * geo.feature_stride
                windows.append(
                    m.search_image[y0 : y0 + geo.exemplar_size, x0 : x0 + geo.exemplar_size]
                )
            feats = self.matcher.embedding.forward_batch(np.stack(windows)[:, None, :, :])
            flops["proposal_feature_macs"] = len(props) * self.matcher.embedding.mac_count(
                geo.exemplar_size
            )
        flat = feats.reshape(len(props), -1) * self.feature_scale
        timing["select"] = (time.perf_counter() - t0) * 1e3

        t0 = time.perf_counter()
        if cfg.lstm_enabled:
            scores = forward(self.lstm_params, self.state, flat)
            idx, cand_state = choose_target(scores, len(props))
            p_plus = float(scores.p_plus[idx])
            self.state = cand_state  # state advances whether or not we update
        else:
            idx, p_plus = 0, 0.0
        timing["classify"] = (time.perf_counter() - t0) * 1e3

        winner = props.proposals[idx]
        box = winner.box
        if cfg.box_smoothing > 0:
            a = cfg.box_smoothing
            box = tuple(a * p + (1 - a) * b for p, b in zip(self.prev_box, box))
        box = clamp_box(box, self.frame_shape[1], self.frame_shape[0])

        t0 = time.perf_counter()
        updated = False
        if cfg.lstm_enabled and p_plus > cfg.update_threshold:
            updated = self._update(gray, box, smap, flops)
        timing["update"] = (time.perf_counter() - t0) * 1e3

        self.prev_box = box
        return TrackResult(
            frame_index=self.frame_index,
            box=box,
            p_plus=p_plus,
            confidence=float(winner.confidence),
            updated=updated,
            failed=False,
            timing_ms=timing,
            flops=flops,
            gan_samples=self.last_gan_samples if updated else None,
        )

    def _update(self, gray: np.ndarray, box: Box, smap, flops: dict[str, int]) -> bool:
        cfg = self.config
        geo = self.matcher.geometry
        try:
            samples = draw_gaussian_samples(
                gray,
                box,
                (cfg.sampler.n_pos, cfg.sampler.n_neg),
                self.rng_sampler,
                self.sampler_cfg,
                geo.context,
                geo.exemplar_size,
            )
        except SamplingError:
            return False

        patches = [p for p, _ in samples.positives] + [p for p, _ in samples.negatives]
        feats = self._embed_patches(patches)
        flops["sample_macs"] = len(patches) * self.matcher.embedding.mac_count(geo.exemplar_size)
        pos_feats = feats[: len(samples.positives)]
        neg_feats = feats[len(samples.positives) :]

        hard_feats = np.zeros((0, self.input_dim))
        if cfg.hardneg_enabled and cfg.sampler.hard_negatives > 0:
            mined = hard_negative_mine(
                smap, box, cfg.sampler.hard_negatives, cfg.sampler.neg_iou_max
            )
            if mined:
                hard_feats = (
                    np.stack([m.features for m in mined]).reshape(len(mined), -1)
                    * self.feature_scale
                )

        gen_feats = np.zeros((0, self.input_dim))
        if cfg.gan_enabled:
            for _, b in samples.positives:
                self.bank.add(square_patch(gray, b, geo.context, cfg.gan.patch_size))
            if cfg.gan.update_steps > 0:
                train_gan(
                    self.gan_params,
                    self.bank,
                    cfg.gan.update_steps,
                    self.rng_gan,
                    self.adam_gan_d,
                    self.adam_gan_g,
                )
            if cfg.gan.samples_per_update > 0:
                gen = generate_positives(self.gan_params, cfg.gan.samples_per_update, self.rng_gan)
                self.last_gan_samples = gen
                gen_feats = (
                    features_for_generated(gen, self.matcher.embedding, geo.exemplar_size)
                    * self.feature_scale
                )
                flops["generated_macs"] = len(gen) * self.matcher.embedding.mac_count(
                    geo.exemplar_size
                )

        features = np.concatenate([pos_feats, gen_feats, neg_feats, hard_feats])
        labels = np.concatenate(
            [
                np.ones(len(pos_feats) + len(gen_feats), dtype=int),
                np.zeros(len(neg_feats) + len(hard_feats), dtype=int),
            ]
        )
        self.lstm_params, _ = train_step(
            self.lstm_params,
            self.state,
            features,
            labels,
            self.adam_lstm,
            iterations=cfg.lstm.update_iterations,
        )
        return True

    # -- bookkeeping ---------------------------------------------------------

    def checksums(self) -> dict[str, str]:
        import hashlib

        def digest(tensors: dict[str, np.ndarray]) -> str:
            h = hashlib.sha256()
            for k in sorted(tensors):
                h.update(k.encode())
                h.update(np.ascontiguousarray(tensors[k]).tobytes())
            return h.hexdigest()

        return {
            "lstm": digest(self.lstm_params.tensors),
            "gan": digest(self.gan_params.tensors),
            "embedding": digest(self.matcher.embedding.to_tensors()),
        }

    def report(self) -> dict:
        return {
            "frames_tracked": self.frame_count,
            "updates": self.update_count,
            "update_rate": (self.update_count / self.frame_count) if self.frame_count else 0.0,
            "flops": dict(self.totals),
            "flop_ratio_cropped_vs_per_proposal": (
                self.totals["cropped_mode_macs"] / self.totals["per_proposal_mode_macs"]
                if self.totals["per_proposal_mode_macs"]
                else None
            ),
        }

    def save_checkpoint(self, path) -> None:
        tensors: dict[str, np.ndarray] = {}
        for k, v in self.matcher.embedding.to_tensors().items():
            tensors[f"embedding.{k}"] = v
        for k, v in self.lstm_params.tensors.items():
            tensors[f"lstm.{k}"] = v
        for k, v in self.gan_params.tensors.items():
            tensors[f"gan.{k}"] = v
        tensors["state.c"] = self.state.c
        tensors["state.h"] = self.state.h
        save_weights(path, tensors)

    def load_checkpoint(self, path) -> None:
        tensors = load_weights(path)
        for k in self.lstm_params.tensors:
            self.lstm_params.tensors[k] = tensors[f"lstm.{k}"].copy()
        for k in self.gan_params.tensors:
            self.gan_params.tensors[k] = tensors[f"gan.{k}"].copy()
        self.state = LstmState(c=tensors["state.c"].copy(), h=tensors["state.h"].copy())


def run_sequence(
    config: TrackerConfig,
    sequence,
    embedding: Embedding | None = None,
) -> tuple[TrackerSession, list[TrackResult], dict]:
    """One-pass evaluation: initialize on the annotated first frame, track through."""
    if len(sequence.frames) < 1:
        raise ValueError("sequence has no frames")
    t0 = time.perf_counter()
    session = TrackerSession(
        sequence.frames[0], tuple(sequence.boxes[0]), config, embedding=embedding
    )
    results = [session.track_frame(f) for f in sequence.frames[1:]]
    wall_ms = (time.perf_counter() - t0) * 1e3
    report = session.report()
    report["sequence"] = sequence.name
    report["wall_clock"] = {
        "total_ms": wall_ms,
        "fps": (len(sequence.frames) / (wall_ms / 1e3)) if wall_ms > 0 else None,
    }
    return session, results, report
