import numpy as np
import pytest

from skelstitch import synth
from skelstitch.adapt import (AdaptConfig, adapt, baseline_trimmed_training, build_model, clip_as_untrimmed,
                              predict, read_prediction, train_segmentation, write_prediction)
from skelstitch.core import Batch, TrimmedClip, UntrimmedSequence
from skelstitch.errors import EmptyDataset, FormatError, LabelOutOfRange, TopologyMismatch, ValidationError
from skelstitch.learner import Encoder, SegmentationModel, parameter_digest
from skelstitch.preprocess import preprocess


@pytest.fixture(scope="module")
def source():
    _, _, raw = synth.gen_dataset(synth.SynthConfig(clips_per_class=5, t_min=15, t_max=25, seed=3))
    return Batch(TrimmedClip(preprocess(c.sequence), c.label) for c in raw)


def encoder_for(batch, seed=0):
    return Encoder(9, 3, rng=np.random.default_rng(seed)).fit_input_stats([c.sequence for c in batch])


def test_config_validation():
    with pytest.raises(ValidationError):
        AdaptConfig(mode="deep")
    with pytest.raises(ValidationError):
        AdaptConfig(strategy="self")
    cfg = AdaptConfig(lr=0.1, epochs=10)
    assert cfg.lr_at(0) == 0.1 and cfg.lr_at(5) == pytest.approx(0.05)


def test_clip_as_untrimmed(source):
    u = clip_as_untrimmed(source[3])
    assert [(s.start, s.end, s.label) for s in u.segments] == [(0, len(source[3]), source[3].label)]


def test_linear_mode_freezes_encoder(source):
    enc = encoder_for(source)
    model = build_model(enc, 4, "linear")
    before = parameter_digest(model.encoder.named_parameters())
    head_before = parameter_digest(model.head.named_parameters())
    baseline_trimmed_training(model, source, AdaptConfig(mode="linear", epochs=2))
    assert parameter_digest(model.encoder.named_parameters()) == before
    assert parameter_digest(model.head.named_parameters()) != head_before
    # the caller's encoder is never touched, even in e2e mode
    e2e = build_model(enc, 4, "e2e")
    baseline_trimmed_training(e2e, source, AdaptConfig(epochs=1))
    assert parameter_digest(enc.named_parameters()) == before
    assert parameter_digest(e2e.encoder.named_parameters()) != before


def test_overfit_single_sequence(toy):
    classes = synth.motion_classes(3, toy, 1)
    u = synth.gen_untrimmed(classes, 1, 3, 3, seed=2)[0]
    u = UntrimmedSequence(preprocess(u.sequence), u.segments)
    model = build_model(encoder_for([u]), 3, "e2e", seed=1)
    hist = []
    train_segmentation(model, [u], AdaptConfig(epochs=200, lr=0.01, schedule="constant"), hist)
    acc = np.mean(predict(model, u.sequence).labels == u.frame_labels())
    assert acc >= 0.99
    assert hist[-1] < hist[0]


def test_determinism(source):
    digests = []
    for _ in range(2):
        model = build_model(encoder_for(source), 4, "e2e", seed=5)
        baseline_trimmed_training(model, source, AdaptConfig(epochs=2, seed=5))
        digests.append(parameter_digest(model.named_parameters()))
    assert digests[0] == digests[1]


def test_errors(source):
    model = build_model(encoder_for(source), 2, "linear")
    with pytest.raises(EmptyDataset):
        train_segmentation(model, [], AdaptConfig())
    with pytest.raises(LabelOutOfRange):
        baseline_trimmed_training(model, source, AdaptConfig(epochs=1))
    with pytest.raises(EmptyDataset):
        adapt(encoder_for(source), 4, AdaptConfig(strategy="zero_shot"))
    with pytest.raises(EmptyDataset):
        adapt(encoder_for(source), 4, AdaptConfig(strategy="supervised"))


def test_predict_any_length(rng):
    model = SegmentationModel.create(9, 3, 4, temporal=True, seed=2)
    for T in (1, 7, 500):
        res = predict(model, rng.standard_normal((T, 9, 3)))
        assert res.scores.shape == (T, 4)
        assert np.max(np.abs(res.scores.sum(1) - 1)) < 1e-9
        assert np.array_equal(res.labels, np.argmax(res.scores, 1))
        assert res.segments[0].start == 0 and res.segments[-1].end == T
    assert len(predict(model, rng.standard_normal((1, 9, 3))).segments) == 1
    with pytest.raises(TopologyMismatch):
        predict(model, np.zeros((3, 5, 3)))


def test_constant_repeat_gives_constant_label(source):
    model = build_model(encoder_for(source), 4, "e2e", seed=0)
    baseline_trimmed_training(model, source, AdaptConfig(epochs=15))
    frame = source[0].sequence.frames[5]
    labels = predict(model, np.repeat(frame[None], 30, 0)).labels
    assert len(set(labels.tolist())) == 1


def test_zero_shot_uses_stitched_source(source):
    hist = []
    model = adapt(encoder_for(source), 4, AdaptConfig(strategy="zero_shot", mode="linear", epochs=1,
                                                      expand_count=6), source=source, history=hist)
    assert len(hist) == 1 and model.classes == 4


def test_prediction_file_roundtrip(tmp_path, rng):
    scores = rng.dirichlet(np.ones(3), 6)
    write_prediction(tmp_path / "a.prd", scores)
    assert np.array_equal(read_prediction(tmp_path / "a.prd"), scores)
    (tmp_path / "b.prd").write_text("PRD 1\nframes 2\nclasses 2\n0.5 0.5\n")
    with pytest.raises(FormatError):
        read_prediction(tmp_path / "b.prd")
