import numpy as np
import pytest

from minitrack.errors import AnnotationError, GeometryError
from minitrack.imaging import resize
from minitrack.matcher import (
    ConvLayer,
    Embedding,
    Matcher,
    SearchGeometry,
    default_embedding,
    pretrain_embedding,
)
from minitrack.nn import cross_correlate


def make_matcher(seed=0, context=0.2, scales=(0.964, 1.0, 1.0375)):
    emb = default_embedding(np.random.default_rng(seed))
    geo = SearchGeometry.for_embedding(emb, context=context, scale_factors=scales)
    return Matcher(emb, geo)


def build_embedding(rng, spec, channels):
    layers = []
    c_in = 1
    for (k, s), c_out in zip(spec, channels):
        layers.append(
            ConvLayer(
                kernels=rng.normal(size=(c_out, c_in, k, k)) * 0.2,
                bias=np.zeros(c_out),
                stride=s,
                activation="relu",
            )
        )
        c_in = c_out
    return Embedding(layers)


class TestEmbed:
    def test_feature_extents(self):
        m = make_matcher()
        rng = np.random.default_rng(1)
        assert m.embed(rng.random((1, 71, 71))).shape == (16, 17, 17)
        assert m.embed(rng.random((1, 199, 199))).shape == (16, 49, 49)

    def test_zero_weights_zero_features(self):
        m = make_matcher()
        for layer in m.embedding.layers:
            layer.kernels = np.zeros_like(layer.kernels)
            layer.bias = np.zeros_like(layer.bias)
        out = m.embed(np.random.default_rng(2).random((1, 71, 71)))
        assert np.all(out == 0)

    def test_patch_below_receptive_field(self):
        m = make_matcher()
        with pytest.raises(GeometryError):
            m.embed(np.zeros((1, 5, 5)))

    def test_batch_matches_single(self):
        m = make_matcher()
        rng = np.random.default_rng(3)
        batch = rng.random((4, 1, 71, 71))
        out = m.embedding.forward_batch(batch)
        for i in range(4):
            assert np.max(np.abs(out[i] - m.embed(batch[i]))) < 1e-12


class TestMakeTemplate:
    def test_full_frame_no_context_is_resized_frame(self):
        m = make_matcher(context=0.0)
        rng = np.random.default_rng(4)
        frame = rng.random((64, 64))
        tpl = m.make_template(frame, (0.0, 0.0, 64.0, 64.0))
        assert np.max(np.abs(tpl.patch - resize(frame, 71))) < 1e-12

    def test_context_margin_recorded(self):
        m = make_matcher()
        frame = np.random.default_rng(5).random((128, 128))
        tpl = m.make_template(frame, (40.0, 40.0, 30.0, 40.0))
        assert tpl.crop_side == int(round(np.sqrt(30.0 * 40.0) * 1.2))

    def test_deterministic(self):
        m = make_matcher()
        frame = np.random.default_rng(6).random((100, 100))
        a = m.make_template(frame, (20.0, 20.0, 40.0, 40.0))
        b = m.make_template(frame, (20.0, 20.0, 40.0, 40.0))
        assert np.array_equal(a.features, b.features)

    def test_degenerate_box(self):
        m = make_matcher()
        with pytest.raises(AnnotationError):
            m.make_template(np.zeros((50, 50)), (10.0, 10.0, 0.0, 20.0))

    def test_box_outside_frame(self):
        m = make_matcher()
        with pytest.raises(AnnotationError):
            m.make_template(np.zeros((50, 50)), (60.0, 60.0, 10.0, 10.0))


class TestScoreSearch:
    def test_planted_target_peaks_at_center(self):
        m = make_matcher(seed=7, scales=(1.0,))
        rng = np.random.default_rng(8)
        frame = np.zeros((300, 300))
        frame[134:166, 134:166] = 0.5 + 0.5 * rng.random((32, 32))
        box = (134.0, 134.0, 32.0, 32.0)
        tpl = m.make_template(frame, box)
        smap = m.score_search(tpl, frame, box)
        center = (smap.geometry.score_extent - 1) // 2
        peak = np.unravel_index(np.argmax(smap.maps[0].scores), smap.maps[0].scores.shape)
        assert peak == (center, center)

    def test_three_scales_three_maps(self):
        m = make_matcher(seed=9)
        frame = np.random.default_rng(10).random((256, 256))
        box = (100.0, 100.0, 40.0, 40.0)
        tpl = m.make_template(frame, box)
        smap = m.score_search(tpl, frame, box)
        assert len(smap.maps) == 3
        for sm in smap.maps:
            assert sm.scores.shape == (33, 33)

    def test_matches_embed_then_slide_oracle(self):
        m = make_matcher(seed=11)
        rng = np.random.default_rng(12)
        frame = rng.random((256, 256))
        box = (90.0, 110.0, 36.0, 44.0)
        tpl = m.make_template(frame, box)
        smap = m.score_search(tpl, frame, box)
        for sm in smap.maps:
            feats = m.embed(sm.search_image[None])
            oracle = np.zeros_like(sm.scores)
            e = m.geometry.template_extent
            for i in range(oracle.shape[0]):
                for j in range(oracle.shape[1]):
                    oracle[i, j] = np.sum(tpl.features * feats[:, i : i + e, j : j + e])
            assert np.max(np.abs(sm.scores - oracle)) < 1e-9

    def test_tiny_frame_rejected(self):
        m = make_matcher()
        tpl_frame = np.random.default_rng(13).random((100, 100))
        tpl = m.make_template(tpl_frame, (30.0, 30.0, 40.0, 40.0))
        with pytest.raises(GeometryError):
            m.score_search(tpl, np.zeros((5, 5)), (1.0, 1.0, 2.0, 2.0))

    def test_translation_equivariance_one_stride(self):
        # crop side == search size (no resampling): a 4 px shift of the target
        # must shift the whole score map by exactly one cell
        side = 71.0 / 1.2  # sqrt(w*h)*(1+context)*(199/71) == 199
        m = make_matcher(seed=14, scales=(1.0,))
        obj = 0.5 + 0.5 * np.random.default_rng(15).random((25, 25))

        def scored(cx):
            frame = np.zeros((400, 400))
            frame[188 : 188 + 25, cx : cx + 25] = obj
            prev = (200.0 - side / 2.0, 200.0 - side / 2.0, side, side)
            tpl_box = (float(cx), 188.0, 25.0, 25.0)
            tpl = m.make_template(frame, tpl_box)
            return m.score_search(tpl, frame, prev).maps[0].scores

        s0 = scored(160)
        s1 = scored(164)
        assert np.max(np.abs(s1[:, 1:] - s0[:, :-1])) < 1e-9
        p0 = np.unravel_index(np.argmax(s0), s0.shape)
        p1 = np.unravel_index(np.argmax(s1), s1.shape)
        assert p1 == (p0[0], p0[1] + 1)

    def test_box_mapping_round_trip(self):
        m = make_matcher(seed=16)
        frame = np.random.default_rng(17).random((256, 256))
        box = (80.0, 95.0, 42.0, 30.0)
        tpl = m.make_template(frame, box)
        smap = m.score_search(tpl, frame, box)
        rng = np.random.default_rng(18)
        for _ in range(50):
            si = int(rng.integers(0, 3))
            r = int(rng.integers(0, 33))
            c = int(rng.integers(0, 33))
            mapped = smap.cell_to_box(si, r, c)
            assert smap.box_to_cell(si, mapped) == (r, c)

    def test_subwindows_inside_search_image(self):
        m = make_matcher(seed=19)
        frame = np.random.default_rng(20).random((256, 256))
        box = (10.0, 10.0, 30.0, 30.0)  # near the border: crop gets clamped+padded
        tpl = m.make_template(frame, box)
        smap = m.score_search(tpl, frame, box)
        g = m.geometry
        last = (g.score_extent - 1) * g.feature_stride + g.exemplar_size
        assert last == g.search_size  # every cell's sub-window fits exactly


class TestGeometryIdentity:
    ARCHS = [
        ([(3, 1), (3, 2), (2, 2)], (8, 16, 16), 71, 199),  # the default: 17/49/33
        ([(3, 1), (3, 2), (2, 2)], (4, 4, 4), 39, 103),
        ([(5, 2), (3, 1)], (4, 8), 31, 75),
        ([(7, 2), (5, 2)], (4, 4), 35, 95),
        ([(3, 1)], (6,), 19, 43),
    ]

    @pytest.mark.parametrize("spec,channels,exemplar,search", ARCHS)
    def test_score_extent_identity(self, spec, channels, exemplar, search):
        rng = np.random.default_rng(21)
        emb = build_embedding(rng, spec, channels)
        te = emb.output_extent(exemplar)
        se = emb.output_extent(search)
        tpl_feat = emb.forward(rng.random((1, exemplar, exemplar)))
        search_feat = emb.forward(rng.random((1, search, search)))
        scores = cross_correlate(tpl_feat, search_feat)
        assert tpl_feat.shape[1] == te and search_feat.shape[1] == se
        assert scores.shape == (se - te + 1, se - te + 1)

    def test_paper_instance(self):
        emb = default_embedding(np.random.default_rng(22))
        assert emb.output_extent(71) == 17
        assert emb.output_extent(199) == 49
        assert SearchGeometry.for_embedding(emb).score_extent == 33


class TestWeightsIO:
    def test_save_load_round_trip(self, tmp_path):
        emb = default_embedding(np.random.default_rng(23))
        path = tmp_path / "emb.mtw"
        emb.save(path)
        back = Embedding.load(path)
        x = np.random.default_rng(24).random((1, 71, 71))
        assert np.array_equal(emb.forward(x), back.forward(x))


def test_pretrain_reduces_loss():
    rng = np.random.default_rng(25)
    emb = default_embedding(rng, channels=(4, 8, 8))
    geo = SearchGeometry.for_embedding(emb)
    losses = pretrain_embedding(emb, geo, rng, steps=40, lr=2e-3)
    assert len(losses) == 40
    assert np.mean(losses[-10:]) < np.mean(losses[:10])
