import json
from collections import Counter

import numpy as np
import pytest

from dialret.data import (
    CorpusSpec,
    Dialog,
    ParseError,
    TopicWorld,
    Utterance,
    generate_caption_pairs,
    generate_corpus,
    read_jsonl,
    sample_batches,
    split_of,
    write_jsonl,
)
from dialret.errors import ConfigError
from dialret.numerics import Rng
from dialret.types import Modality, RetrievalType

SMALL = CorpusSpec(n_topics=6, dialogs_per_topic=40, seed=3)


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(SMALL)


def test_utterance_needs_matching_payload():
    with pytest.raises(ValueError):
        Utterance(Modality.TEXT, "user", tokens=None, patches=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        Utterance(Modality.IMAGE, "user", tokens=[1, 2], patches=None)
    with pytest.raises(ValueError):
        Utterance.text([1], role="narrator")


def test_dialog_context_and_current_input():
    a, b, c = Utterance.text([1]), Utterance.text([2], "system"), Utterance.image(np.ones((2, 2)))
    d = Dialog("x", [a, b, c], Utterance.text([3], "system"), 0, "train")
    assert d.context == [a, b]
    assert d.current_input == c
    assert d.retrieval_type == RetrievalType(Modality.IMAGE, Modality.TEXT)
    with pytest.raises(ValueError):
        Dialog("y", [], Utterance.text([3]), 0, "train")


def test_generation_is_deterministic(corpus):
    again = generate_corpus(SMALL)
    assert [d.to_json() for d in again] == [d.to_json() for d in corpus]
    other = generate_corpus(CorpusSpec(n_topics=6, dialogs_per_topic=40, seed=4))
    assert [d.to_json() for d in other] != [d.to_json() for d in corpus]


def test_degenerate_corpus_settings_rejected():
    with pytest.raises(ConfigError):
        generate_corpus(CorpusSpec(n_topics=1))


def test_topic_means_pairwise_distinct():
    means = TopicWorld(SMALL).image_means.reshape(SMALL.n_topics, -1)
    d = np.linalg.norm(means[:, None] - means[None], axis=-1)
    assert np.all(d[~np.eye(len(d), dtype=bool)] > 0)


def test_positive_shares_dialog_topic(corpus):
    world = TopicWorld(SMALL)
    for d in corpus:
        r = d.response
        if r.modality is Modality.TEXT:
            owners = {t // SMALL.tokens_per_topic for t in r.tokens if t < SMALL.n_topic_tokens}
            assert owners <= {d.topic_id}
        else:
            dist = ((world.image_means - r.patches) ** 2).sum(axis=(1, 2))
            assert int(np.argmin(dist)) == d.topic_id


def test_split_sizes(corpus):
    counts = Counter(d.split for d in corpus)
    assert counts == {"train": 6 * 28, "dev": 6 * 4, "test": 6 * 8}
    assert len(split_of(corpus, "dev")) == counts["dev"]


def _bag_classifier(spec, train, test, view):
    """Multinomial naive Bayes over the token counts of the chosen turns."""
    counts = np.ones((spec.n_topics, spec.vocab_size))
    for d in train:
        for u in view(d):
            if u.modality is Modality.TEXT:
                np.add.at(counts[d.topic_id], np.asarray(u.tokens), 1)
    logp = np.log(counts / counts.sum(axis=1, keepdims=True))
    hits, n = 0, 0
    for d in test:
        tokens = [t for u in view(d) if u.modality is Modality.TEXT for t in u.tokens]
        score = logp[:, tokens].sum(axis=1) if tokens else np.zeros(spec.n_topics)
        hits += int(np.argmax(score) == d.topic_id)
        n += 1
    return hits / n


def test_ambiguous_input_needs_context():
    spec = CorpusSpec(n_topics=8, dialogs_per_topic=150, image_rate=0.0, min_turns=3, seed=1)
    corpus = generate_corpus(spec)
    train, test = split_of(corpus, "train"), split_of(corpus, "test")
    last_only = _bag_classifier(spec, train, test, lambda d: [d.current_input])
    full = _bag_classifier(spec, train, test, lambda d: d.turns)
    chance = 1 / spec.n_topics
    assert abs(last_only - chance) < 0.06
    assert full > 0.9


def test_ambiguous_image_input_has_no_topic_mean():
    spec = CorpusSpec(n_topics=4, dialogs_per_topic=200, image_rate=1.0, n_patches=4, patch_dim=4, seed=2)
    inputs = np.stack([d.current_input.patches for d in generate_corpus(spec)])
    assert np.abs(inputs.mean(axis=0)).max() < 4 * spec.noise_sigma / np.sqrt(len(inputs))


def test_jsonl_round_trip(tmp_path, corpus):
    for name in ("c.jsonl", "c.jsonl.gz"):
        path = tmp_path / name
        write_jsonl(corpus, path)
        back = read_jsonl(path)
        assert back == corpus
        assert all(
            np.array_equal(a.patches, b.patches)
            for x, y in zip(corpus, back)
            for a, b in zip(x.turns + [x.response], y.turns + [y.response])
            if a.modality is Modality.IMAGE
        )


def test_empty_file_reads_empty(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert read_jsonl(path) == []


def test_missing_response_names_field_and_line(tmp_path, corpus):
    rows = [d.to_json() for d in corpus[:3]]
    del rows[1]["response"]
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    with pytest.raises(ParseError, match=r"line 2: .*response"):
        read_jsonl(path)


def test_malformed_json_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": 1\n')
    with pytest.raises(ParseError, match="line 1"):
        read_jsonl(path)


def test_batches_homogeneous_and_partition(corpus):
    batches = list(sample_batches(corpus, 7, Rng(0), epochs=1))
    for b in batches:
        assert len({d.retrieval_type for d in b}) == 1
        assert 1 <= len(b) <= 7
    seen = Counter(d.id for b in batches for d in b)
    assert seen == Counter(d.id for d in corpus)


def test_batch_order_fixed_by_seed(corpus):
    ids = lambda seed: [[d.id for d in b] for b in sample_batches(corpus, 8, Rng(seed), epochs=2)]
    assert ids(5) == ids(5)
    assert ids(5) != ids(6)


def test_caption_pairs_share_topic():
    pairs = generate_caption_pairs(SMALL, 50)
    assert len(pairs) == 50
    for text, image, z in pairs:
        assert text.modality is Modality.TEXT and image.modality is Modality.IMAGE
        assert {t // SMALL.tokens_per_topic for t in text.tokens if t < SMALL.n_topic_tokens} <= {z}
