"""Smoke tests for the Python bindings: a miniature end-to-end pass through
corpus generation, encoding, training, retrieval, and evaluation."""

import math

import pytest

import ctfr


@pytest.fixture(scope="module")
def corpus():
    cfg = ctfr.CorpusConfig()
    cfg.num_images = 10
    cfg.captions_per_image = 2
    cfg.num_concepts = 6
    cfg.concepts_per_image = 2
    cfg.signal_len = 24
    cfg.roi_count = 4
    cfg.roi_feature_dim = 6
    cfg.noise_std = 0.05
    cfg.seed = 13
    cfg.split_counts = [6, 1, 3]
    return ctfr.generate_corpus(cfg)


@pytest.fixture(scope="module")
def model():
    return ctfr.Model(ctfr.ModelConfig.micro(), seed=21)


def test_version_and_exports():
    assert ctfr.__version__
    for name in ctfr.__all__:
        assert getattr(ctfr, name) is not None


def test_corpus_shape(corpus):
    assert len(corpus.image_ids) == 10
    assert len(corpus.caption_ids) == 20
    assert len(corpus.image_ids_of("train")) == 6
    assert len(corpus.image_ids_of("test")) == 3
    test_images = set(corpus.image_ids_of("test"))
    for cap, owner in zip(corpus.caption_ids, corpus.caption_image_ids):
        if cap in corpus.caption_ids_of("test"):
            assert owner in test_images


def test_corpus_generation_is_deterministic(corpus):
    cfg = corpus.config
    again = ctfr.generate_corpus(cfg)
    assert again.image_ids == corpus.image_ids
    assert again.caption_ids == corpus.caption_ids


def test_encode_and_score(model):
    cfg = model.config
    assert cfg.model_dim == 8
    signal = [math.sin(0.3 * t) for t in range(model.min_signal_length + 4)]
    audio = model.encode_audio(signal)
    assert len(audio.summary) == cfg.model_dim

    rois = [[0.1 * (r + c) for c in range(cfg.roi_feature_dim)] for r in range(3)]
    boxes = [[0.1, 0.1, 0.5, 0.5], [0.2, 0.3, 0.9, 0.8], [0.0, 0.0, 1.0, 1.0]]
    image = model.encode_image(rois, boxes)
    assert len(image.summary) == cfg.model_dim

    coarse = model.coarse_score(audio, image)
    assert coarse == pytest.approx(
        sum(a * v for a, v in zip(audio.summary, image.summary))
    )
    model.reset_xmodal_passes()
    fine = model.fine_score(audio, image)
    assert math.isfinite(fine)
    assert model.xmodal_passes == 1


def test_encode_image_rejects_ragged_rows(model):
    with pytest.raises(ValueError):
        model.encode_image([[0.0] * 6, [0.0] * 5], [[0.1, 0.1, 0.5, 0.5]] * 2)


def test_same_seed_same_model(corpus):
    a = ctfr.Model(ctfr.ModelConfig.micro(), seed=21)
    b = ctfr.Model(ctfr.ModelConfig.micro(), seed=21)
    signal = [0.1 * t for t in range(a.min_signal_length)]
    assert a.encode_audio(signal).summary == b.encode_audio(signal).summary


def test_train_returns_history_and_updates_model(corpus, model):
    tc = ctfr.TrainConfig()
    tc.epochs = 1
    tc.batch_size = 2
    tc.seed = 3
    history = ctfr.train(model, corpus, tc)
    assert len(history) == 6  # 12 train captions / batch of 2
    for row in history:
        assert set(row) == {"step", "lr", "coarse_loss", "fine_loss", "total_loss"}
        assert math.isfinite(row["total_loss"])
    assert history[0]["step"] == 1


def test_retrieval_modes_and_instrumentation(corpus, model):
    caption_id = corpus.caption_ids_of("test")[0]
    query = model.encode_audio(corpus.caption_signal(caption_id))
    store = ctfr.image_store(model, corpus, "test")
    index = ctfr.build_index(store)
    n = len(store)
    assert n == len(index) == 3

    model.reset_xmodal_passes()
    coarse = ctfr.coarse_retrieve(query.summary, index, k=n)
    assert model.xmodal_passes == 0
    assert coarse.xmodal_passes == 0
    ids = [target for target, _ in coarse.ranked]
    assert set(ids) <= set(corpus.image_ids_of("test"))
    scores = [score for _, score in coarse.ranked]
    assert scores == sorted(scores, reverse=True)

    fine = ctfr.fine_retrieve(model, query, store, k=n)
    assert fine.xmodal_passes == n

    # A full-size shortlist makes the two-stage mode exactly exhaustive.
    ctf = ctfr.ctf_retrieve(model, query, index, store, k_c=n, k=n)
    assert [t for t, _ in ctf.ranked] == [t for t, _ in fine.ranked]

    # A short shortlist caps the cross-modal work at k_c passes.
    ctf2 = ctfr.ctf_retrieve(model, query, index, store, k_c=2, k=2)
    assert ctf2.xmodal_passes == 2
    assert len(ctf2.ranked) == 2


def test_evaluate_schema(corpus, model):
    metrics = ctfr.evaluate(model, corpus, "test", "coarse")
    assert set(metrics) == {
        "audio_to_image",
        "image_to_audio",
        "averaged",
        "num_queries",
        "mode",
        "k_c",
    }
    for direction in ("audio_to_image", "image_to_audio", "averaged"):
        for key in ("R@1", "R@5", "R@10"):
            assert 0.0 <= metrics[direction][key] <= 1.0
    assert metrics["num_queries"] == 9  # 6 captions + 3 images
    assert metrics["mode"] == "coarse"


def test_evaluate_ctf_full_shortlist_matches_fine(corpus, model):
    fine = ctfr.evaluate(model, corpus, "test", "fine")
    ctf = ctfr.evaluate(model, corpus, "test", "ctf", k_c=6)
    for direction in ("audio_to_image", "image_to_audio", "averaged"):
        assert fine[direction] == ctf[direction]


def test_model_save_load_roundtrip(tmp_path, model):
    path = tmp_path / "model.ckpt"
    model.save(path)
    clone = ctfr.Model.load(path)
    signal = [0.05 * t for t in range(model.min_signal_length)]
    assert clone.encode_audio(signal).summary == model.encode_audio(signal).summary


def test_corpus_roundtrip(tmp_path, corpus):
    ctfr.write_corpus(corpus, tmp_path / "corpus")
    again = ctfr.read_corpus(tmp_path / "corpus")
    assert again.image_ids == corpus.image_ids
    assert again.caption_ids == corpus.caption_ids
