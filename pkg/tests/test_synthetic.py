from collections import Counter

import pytest

from mlta.embedding import vocabulary
from mlta.labels import EMOTIONS
from mlta.preprocess import clean
from mlta.synthetic import GenConfig, build_vocabulary, embedding_table, generate


def test_balanced_and_deterministic():
    cfg = GenConfig(tweets_per_class=25, seed=3)
    a = generate(cfg)
    assert a == generate(cfg)
    assert Counter(t.label for t in a) == {e: 25 for e in EMOTIONS}


def test_seed_changes_corpus():
    assert generate(GenConfig(tweets_per_class=5, seed=1)) != generate(GenConfig(tweets_per_class=5, seed=2))


def test_noise_free_tokens_stay_in_class():
    cfg = GenConfig(tweets_per_class=40, noise_rate=0.0, seed=0)
    vocab = build_vocabulary(cfg)
    owner = {w: c for c, words in enumerate(vocab.class_words) for w in words}
    table = embedding_table(cfg)
    seen: dict[str, set] = {}
    for t in generate(cfg):
        ct = clean(t, vocabulary=vocabulary(table))
        for tok in ct.tokens:
            if tok in owner:
                seen.setdefault(tok, set()).add(t.label.index)
    assert all(classes == {owner[tok]} for tok, classes in seen.items())


def test_full_noise_mixes_vocabularies():
    cfg = GenConfig(tweets_per_class=100, noise_rate=1.0, seed=0)
    vocab = build_vocabulary(cfg)
    owner = {w: c for c, words in enumerate(vocab.class_words) for w in words}
    per_class = [Counter() for _ in EMOTIONS]
    for t in generate(cfg):
        for tok in t.text.split():
            if tok in owner:
                per_class[t.label.index][owner[tok]] += 1
    for counts in per_class:
        own_share = max(counts.values()) / sum(counts.values())
        assert own_share < 0.3


def test_every_tweet_survives_cleaning():
    cfg = GenConfig(tweets_per_class=50, seed=9)
    vocab = vocabulary(embedding_table(cfg))
    for t in generate(cfg):
        clean(t, vocabulary=vocab)


def test_hashtags_segment_into_class_words():
    cfg = GenConfig(tweets_per_class=30, hashtag_rate=1.0, noise_rate=0.0)
    words = set(build_vocabulary(cfg).all_words)
    vocab = vocabulary(embedding_table(cfg))
    for t in generate(cfg)[:50]:
        assert set(clean(t, vocabulary=vocab).hashtag_tokens) <= words


def test_embedding_table_covers_vocabulary():
    cfg = GenConfig(embedding_dim=12)
    table = embedding_table(cfg)
    assert table.dimension == 12
    assert set(build_vocabulary(cfg).all_words) == set(table.vectors)


@pytest.mark.parametrize("field,value", [("noise_rate", 1.5), ("classes", 4), ("min_tokens", 0), ("tweets_per_class", 0)])
def test_config_validation(field, value):
    with pytest.raises(ValueError):
        GenConfig(**{field: value})
