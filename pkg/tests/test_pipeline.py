import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lighthead import lht
from lighthead.config import ConfigError, toy_config
from lighthead.pipeline import (Detector, TrainingDiverged, class_intensity, evaluate, make_scene,
                                scene_stream, train_toy)


@pytest.fixture(scope="module")
def cfg():
    return toy_config()


@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 4), st.integers(1, 5))
@settings(max_examples=30)
def test_scene_invariants(seed, max_objects, num_classes):
    s = make_scene(np.random.default_rng(seed), 64, num_classes, max_objects)
    assert s.image.shape == (3, 64, 64) and s.image.dtype == np.float32
    assert 1 <= len(s.boxes) <= max_objects and len(s.boxes) == len(s.classes)
    assert (s.boxes[:, :2] >= 0).all() and (s.boxes[:, 2:] <= 64).all()
    assert (s.boxes[:, 2:] - s.boxes[:, :2] >= 8).all()
    assert ((s.classes >= 1) & (s.classes <= num_classes)).all()


def test_scene_intensity_codes_class():
    s = make_scene(np.random.default_rng(3), noise=0.0, max_objects=3, num_classes=3)
    for (x1, y1, x2, y2), c in zip(s.boxes.astype(int), s.classes):
        assert np.all(s.image[:, y1:y2, x1:x2] == np.float32(class_intensity(c, 3)))


def test_scene_errors_and_empty():
    with pytest.raises(ValueError):
        make_scene(np.random.default_rng(0), min_side=4)
    s = make_scene(np.random.default_rng(0), empty=True)
    assert s.boxes.shape == (0, 4) and len(s.classes) == 0


def test_scene_stream_splits_differ(cfg):
    a, b = next(scene_stream(cfg, 0, 0)), next(scene_stream(cfg, 0, 1))
    assert not np.array_equal(a.image, b.image)
    assert np.array_equal(next(scene_stream(cfg, 0, 1)).image, b.image)


def test_one_iteration_one_update(cfg):
    fresh = Detector(cfg, cfg.train.seed).state_dict()
    res = train_toy(cfg, iters=1)
    assert len(res.losses) == 1 and len(res.components) == 1
    after = res.detector.state_dict()
    assert any(not np.array_equal(fresh[k], after[k]) for k in fresh)


def test_training_is_deterministic(cfg):
    a, b = train_toy(cfg, iters=3), train_toy(cfg, iters=3)
    assert a.losses == b.losses
    sa, sb = a.detector.state_dict(), b.detector.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    assert train_toy(cfg, iters=3, seed=1).losses != a.losses


def test_iters_must_be_positive(cfg):
    with pytest.raises(ValueError):
        train_toy(cfg, iters=0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_iteration():
    cfg = toy_config()
    cfg.train.lr = 1e30
    with pytest.raises(TrainingDiverged) as info:
        train_toy(cfg, iters=20)
    assert 0 < info.value.iteration < 20


def test_loss_parts(cfg):
    det = Detector(cfg, 0)
    scenes = [next(scene_stream(cfg, 0, 0)) for _ in range(2)]
    total, parts = det.loss(np.stack([s.image for s in scenes]), scenes)
    assert total.item() == pytest.approx(parts["rpn"] + parts["rcnn"], rel=1e-6)
    assert parts["rois"] >= sum(len(s.boxes) for s in scenes)


def test_zero_weight_head_detects_nothing(cfg):
    det = Detector(cfg, 0)
    for p in det.head.named_parameters().values():
        p.data[:] = 0
    img = next(scene_stream(cfg, 0, 1)).image
    k1 = cfg.head.num_classes + 1
    assert all(d.score == pytest.approx(1 / k1) for d in det.detect(img))
    det.cfg = dataclasses.replace(cfg, detect=dataclasses.replace(cfg.detect, score_thresh=1 / k1 + 1e-6))
    assert det.detect(img) == []


def test_detection_invariants_and_trace(cfg):
    det = Detector(cfg, 0)
    det.cfg = dataclasses.replace(cfg, detect=dataclasses.replace(cfg.detect, score_thresh=0.0))
    for s in [next(scene_stream(cfg, 5, 1)) for _ in range(3)]:
        dets = det.detect(s.image)
        assert 0 < len(dets) <= cfg.detect.max_detections
        scores = [d.score for d in dets]
        assert scores == sorted(scores, reverse=True)
        for d in dets:
            x1, y1, x2, y2 = d.box
            assert 0 <= x1 <= x2 <= 64 and 0 <= y1 <= y2 <= 64
            assert 1 <= d.class_id <= cfg.head.num_classes and 0 < d.score <= 1
        bound = cfg.warp.channels
        assert [a.name for a in det.trace][:2] == ["thin", "warp"]
        assert all(a.channels <= bound for a in det.trace if a.kind == "map")
        assert det.trace[0].channels == bound


def test_detect_is_deterministic(cfg):
    det = Detector(cfg, 0)
    img = next(scene_stream(cfg, 0, 1)).image
    assert det.detect(img) == det.detect(img[None])


def test_detect_rejects_bad_size(cfg):
    with pytest.raises(ValueError):
        Detector(cfg, 0).detect(np.zeros((3, 48, 64), np.float32))


def test_inconsistent_config_fails_at_build():
    cfg = toy_config()
    cfg.thin.c_out = 480
    with pytest.raises(ConfigError):
        Detector(cfg)


def test_weights_round_trip(cfg, tmp_path):
    det = train_toy(cfg, iters=2).detector
    lht.save_weights(tmp_path / "w", det.state_dict())
    other = Detector(cfg, 99)
    other.load_state_dict(lht.load_weights(tmp_path / "w"))
    img = next(scene_stream(cfg, 0, 1)).image
    det.cfg = other.cfg = dataclasses.replace(cfg, detect=dataclasses.replace(cfg.detect, score_thresh=0.0))
    assert det.detect(img) == other.detect(img)


def test_evaluate_counts(cfg):
    class Fixed:
        def __init__(self, dets):
            self.dets, self.cfg = dets, cfg

        def detect(self, image):
            return self.dets

    from lighthead.pipeline import Detection
    s = make_scene(np.random.default_rng(0), max_objects=1)
    box, c = tuple(s.boxes[0]), int(s.classes[0])
    ev = evaluate(Fixed([Detection(box, c, 0.9), Detection(box, c, 0.8)]), [s])
    assert ev.recall == 1.0 and ev.false_positives_per_image == 1.0
    ev = evaluate(Fixed([Detection(box, c % 2 + 1, 0.9)]), [s])
    assert ev.recall == 0.0 and ev.max_false_positives == 1
    assert evaluate(Fixed([Detection(box, c, 0.4)]), [s]).recall == 0.0


def test_toy_stream_respects_object_size(cfg):
    stream = scene_stream(cfg, 0, 0)
    for _ in range(20):
        s = next(stream)
        sides = s.boxes[:, 2:] - s.boxes[:, :2]
        assert (sides >= cfg.train.min_side).all() and (sides <= cfg.train.max_side).all()
        assert cfg.train.min_side > cfg.thin_stride
