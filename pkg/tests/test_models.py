import numpy as np
import pytest

from egoheight.models import (
    REDUCED_WIDTHS,
    TEMPORAL_SHAPES,
    ModelArtifact,
    TrainConfig,
    build_classifier,
    build_spatial,
    build_temporal,
    build_twostream,
    config_digest,
    dead_arrays,
    feature_layer,
    gradcheck_cases,
    predict_clip,
    predict_proba,
    predict_video,
    predict_video_class,
    train_model,
)
from egoheight.nncore import ShapeError, layers as L
from egoheight.preprocess import ClipSample, LabelScale

SMALL = {"widths": REDUCED_WIDTHS}


def fake_clips(n, rng, heights=None, mounts=None):
    heights = heights or [90.0, 120.0, 150.0, 180.0]
    mounts = mounts or ["waist", "chest", "head"]
    clips = []
    for i in range(n):
        h = heights[i % len(heights)]
        clips.append(ClipSample(
            rng.uniform(0, 1, (32, 32, 120)).astype(np.float32),
            rng.uniform(0, 1, (32, 32, 60)).astype(np.float32),
            (h - 85) / 103, f"v{i % len(heights)}", 0, h, mounts[i % len(mounts)],
        ))
    return clips


class TestArchitectures:
    def test_temporal_chain(self):
        net = build_temporal()
        assert [tuple(s) for s in net.shapes] == TEMPORAL_SHAPES
        assert net.shapes[0] == (8, 8, 26, 30)
        assert net.shapes[2] == (4, 4, 2, 30)
        assert net.shapes[4] == (2, 2, 100)
        assert net.shapes[6] == (1, 1, 100)
        assert [s.kind for s in net.specs].count("relu") == 4

    def test_temporal_first_layer_params(self):
        assert build_temporal().init(0).n_params(0) == 17 * 17 * 20 * 30 + 30

    def test_spatial_chain(self):
        net = build_spatial()
        assert net.specs[0]["kernel"] == (17, 17, 10) and net.specs[0]["stride"] == (2, 2, 2)
        assert net.shapes[0] == (8, 8, 26, 30)
        kinds = [s.kind for s in net.specs]
        assert "relu" not in kinds
        # every ELU is preceded by a batchnorm
        for i, k in enumerate(kinds):
            if k == "elu":
                assert kinds[i - 1] == "batchnorm"
        assert net.output_shape == (1,)

    @pytest.mark.parametrize("join,width", [("at_1", 2), ("at_50", 100)])
    def test_fusion_widths(self, join, width):
        ts = build_twostream(join)
        assert ts.head.shapes[0] == (width,)
        assert ts.head.output_shape == (1,)

    def test_feature_layer_is_penultimate(self):
        net = build_temporal()
        assert net.shapes[feature_layer(net) - 1] == (50,)

    def test_bad_join(self):
        with pytest.raises(ValueError):
            build_twostream("at_400")

    @pytest.mark.parametrize("bins", [3, 5, 11])
    def test_classifier_head(self, bins):
        net = build_classifier(bins)
        assert net.output_shape == (bins,) and net.specs[-1].kind == "softmax"

    def test_classifier_bad_bins(self):
        with pytest.raises(ValueError):
            build_classifier(4)

    def test_shape_violation_is_reported(self):
        from egoheight.models import _require_shapes

        with pytest.raises(ShapeError, match="layer 0"):
            _require_shapes(build_temporal(conv3d_filters=4), TEMPORAL_SHAPES, "temporal")


class TestGradcheckCases:
    def test_every_layer_kind_covered(self):
        kinds = {s.kind for _, net, _, _ in gradcheck_cases() for s in net.specs}
        assert kinds == set(L.KINDS)

    def test_no_dead_parameters(self):
        for name, net, x, training in gradcheck_cases():
            assert dead_arrays(net, x, training) == [], name


class TestTwoStreamInit:
    @pytest.mark.parametrize("join", ["at_1", "at_50"])
    def test_head_starts_as_stream_average(self, join, rng):
        ts = build_twostream(join, **REDUCED_WIDTHS)
        ts.temporal.init(1)
        ts.spatial.init(2)
        ts.head.init(3)
        ts.init_head_from_streams()
        flow = rng.uniform(size=(3, 32, 32, 120)).astype(np.float32)
        gray = rng.uniform(size=(3, 32, 32, 60)).astype(np.float32)
        avg = 0.5 * (ts.temporal.predict(flow) + ts.spatial.predict(gray))
        np.testing.assert_allclose(ts.predict(flow, gray), avg, rtol=1e-5, atol=1e-6)


class TestTraining:
    def test_config_digest_stable_and_sensitive(self):
        assert TrainConfig().digest() == TrainConfig().digest()
        assert TrainConfig(lr=1e-3).digest() != TrainConfig(lr=2e-3).digest()
        assert config_digest({"a": 1, "b": 2}) == config_digest({"b": 2, "a": 1})

    def test_train_predict_and_reload(self, rng, tmp_path):
        clips = fake_clips(8, rng)
        cfg = TrainConfig(max_epochs=2, batch_size=4, **SMALL)
        art = train_model("temporal", clips, cfg)
        assert art.label_scale == LabelScale(90.0, 180.0)
        h = predict_video(art, clips[:2])
        assert np.isfinite(h)
        path = art.save(tmp_path / "t.egm")
        back = ModelArtifact.load(path)
        assert predict_clip(back, clips[0]) == pytest.approx(predict_clip(art, clips[0]))
        assert back.to_bytes() == art.to_bytes()

    def test_deterministic(self, rng):
        clips = fake_clips(6, rng)
        cfg = TrainConfig(max_epochs=2, batch_size=3, **SMALL)
        assert train_model("spatial", clips, cfg).to_bytes() == train_model("spatial", clips, cfg).to_bytes()

    @pytest.mark.parametrize("arch", ["twostream1", "twostream50"])
    def test_twostream_reuses_streams(self, arch, rng):
        clips = fake_clips(6, rng)
        cfg = TrainConfig(max_epochs=1, head_epochs=2, batch_size=3, **SMALL)
        streams = {"temporal": train_model("temporal", clips, cfg), "spatial": train_model("spatial", clips, cfg)}
        before = streams["temporal"].networks["main"].params[0]["w"].copy()
        art = train_model(arch, clips, cfg, streams=streams)
        # frozen streams: the trained copy equals the given stream
        np.testing.assert_array_equal(art.networks["temporal"].params[0]["w"], before)
        assert np.isfinite(predict_video(art, clips))

    def test_fine_tune_changes_streams(self, rng):
        clips = fake_clips(6, rng)
        cfg = TrainConfig(max_epochs=1, head_epochs=1, batch_size=3, fine_tune=True, **SMALL)
        streams = {"temporal": train_model("temporal", clips, cfg), "spatial": train_model("spatial", clips, cfg)}
        art = train_model("twostream50", clips, cfg, streams=streams)
        assert not np.array_equal(art.networks["temporal"].params[0]["w"],
                                  streams["temporal"].networks["main"].params[0]["w"])

    def test_classifier(self, rng):
        clips = fake_clips(6, rng)
        art = train_model("classifier3", clips, TrainConfig(max_epochs=2, batch_size=3, **SMALL))
        p = predict_proba(art, clips)
        assert p.shape == (6, 3)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-5)
        assert predict_video_class(art, clips[:1]) in (0, 1, 2)
        with pytest.raises(ValueError):
            predict_clip(art, clips[0])

    def test_unknown_arch(self, rng):
        with pytest.raises(ValueError):
            train_model("resnet", fake_clips(2, rng))

    def test_empty_clips(self):
        with pytest.raises(ValueError):
            train_model("temporal", [])

    def test_load_rejects_foreign_chain(self, tmp_path):
        from egoheight.nncore import Network, save_model

        net = Network([L.dense(1)], (3,)).init(0)
        path = save_model(tmp_path / "x.egm", {"arch": "temporal", "extra": {}}, (85.0, 188.0), {"main": net})
        with pytest.raises(ValueError, match="canonical"):
            ModelArtifact.load(path)
