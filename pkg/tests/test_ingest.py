from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twon.behavior import Language
from twon.embeddings import HashEmbedder
from twon.errors import InputError
from twon.ingest import (
    Corpus,
    RawSample,
    build_likelihood_dataset,
    build_reply_pairs,
    filter_corpus,
    filter_sample,
    select_active_users,
    split,
)
from twon.model import MessageKind

LONG = "this text is long enough to clear the length filter"


def _post(user="u1", text=LONG, ts=0, language=Language.EN, topic=None):
    return RawSample(
        user_id=user, text=text, kind=MessageKind.POST,
        language=language, timestamp=ts, topic=topic,
    )


def _reply(user="u1", text=LONG, parent="parent post", ts=0):
    return RawSample(
        user_id=user, text=text, kind=MessageKind.REPLY,
        language=Language.EN, timestamp=ts, reply_to_text=parent,
    )


def test_filter_drops_urls():
    for text in (
        "read this https://example.com/a now please and thanks",
        "see www.example.org for details, quite interesting stuff",
        "just example.com honestly, nothing else to say here",
        "Mehr unter beispiel.de/artikel steht alles Wichtige drin",
    ):
        assert filter_sample(_post(text=text)).reason == "url"


def test_filter_keeps_url_lookalikes():
    for text in (
        "i waited 3.5 hours for this appointment, never again honestly",
        "the U.S. economy grew again this quarter, against forecasts",
        "e.g. the second amendment debate keeps going round in circles",
    ):
        assert filter_sample(_post(text=text)).keep, text


def test_filter_drops_retweets():
    assert filter_sample(_post(text="RT @user: " + LONG)).reason == "retweet"
    assert filter_sample(_post(text="RT@user " + LONG)).reason == "retweet"
    # Not at the start: kept.
    assert filter_sample(_post(text="great point about RT policies and more")).keep


def test_filter_length_boundary():
    assert filter_sample(_post(text="x" * 31)).reason == "too_short"
    assert filter_sample(_post(text="x" * 32)).keep
    assert filter_sample(_post(text="x" * 5), min_chars=5).keep
    assert filter_sample(_post(text="x" * 4), min_chars=5).reason == "too_short"
    with pytest.raises(InputError):
        filter_sample(_post(), min_chars=0)


def test_filter_rule_order_url_wins():
    # URL and short and RT-prefixed: the url rule is checked first.
    assert filter_sample(_post(text="RT x.com")).reason == "url"


def test_filter_corpus_counts_reconcile():
    samples = [
        _post(text=LONG),
        _post(text="see www.x.io now"),
        _post(text="RT " + LONG),
        _post(text="short"),
    ]
    corpus = filter_corpus(Corpus.from_samples(samples))
    assert len(corpus.samples) == 1
    assert corpus.provenance == {"url": 1, "retweet": 1, "too_short": 1}
    assert len(corpus.samples) + sum(corpus.provenance.values()) == len(samples)


def test_filter_corpus_is_idempotent():
    samples = [
        _post(text=LONG), _post(text="tiny"), _post(text="https://a.io b c")
    ]
    once = filter_corpus(Corpus.from_samples(samples))
    twice = filter_corpus(once)
    assert twice.samples == once.samples
    # Drop counters accumulate, but nothing new is dropped.
    assert sum(twice.provenance.values()) == sum(once.provenance.values())


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_filter_fuzz_conservation(seed):
    rng = random.Random(seed)
    fragments = ["ok", "https://t.co/x", "RT ", "x" * 40, "visit site.com", "y" * 20]
    samples = []
    for i in range(rng.randint(1, 30)):
        text = "".join(rng.choice(fragments) for _ in range(rng.randint(1, 3)))
        samples.append(_post(user=f"u{i % 5}", text=text, ts=i))
    corpus = filter_corpus(Corpus.from_samples(samples))
    assert len(corpus.samples) + sum(corpus.provenance.values()) == len(samples)
    for sample in corpus.samples:
        assert filter_sample(sample).keep


def test_select_active_users_by_count_then_id():
    samples = (
        [_post(user="c", ts=i) for i in range(3)]
        + [_post(user="a", ts=i) for i in range(2)]
        + [_post(user="b", ts=i) for i in range(2)]
        + [_post(user="d", ts=0)]
    )
    kept = select_active_users(Corpus.from_samples(samples), top_k=2)
    assert set(s.user_id for s in kept.samples) == {"c", "a"}  # tie a-vs-b: a wins
    assert kept.provenance == {"inactive_user": 3}
    assert [s.user_id for s in kept.samples] == ["c", "c", "c", "a", "a"]


def test_select_active_users_validation():
    with pytest.raises(InputError):
        select_active_users(Corpus.from_samples([_post()]), top_k=0)
    with pytest.raises(InputError):
        select_active_users(Corpus.from_samples([]), top_k=1)
    everyone = select_active_users(Corpus.from_samples([_post()]), top_k=5)
    assert len(everyone.samples) == 1
    assert "inactive_user" not in everyone.provenance


def test_build_reply_pairs_chronological_and_capped():
    samples = [
        _reply(user="u1", parent="p2", text="r2", ts=20),
        _reply(user="u1", parent="p1", text="r1", ts=10),
        _post(user="u1", ts=5),
    ] + [_reply(user="u2", parent=f"q{i}", text=f"s{i}", ts=i) for i in range(8)]
    pairs = build_reply_pairs(Corpus.from_samples(samples), per_user_cap=5)
    assert pairs["u1"].pairs == (("p1", "r1"), ("p2", "r2"))
    assert len(pairs["u2"].pairs) == 5
    assert pairs["u2"].pairs[0] == ("q3", "s3")
    assert pairs["u2"].pairs[-1] == ("q7", "s7")
    assert "u3" not in pairs
    with pytest.raises(InputError):
        build_reply_pairs(Corpus.from_samples(samples), per_user_cap=0)


def _likelihood_corpus():
    # u1 replies to 3 distinct posts between ts 10 and 30; five other-user
    # posts sit inside that window, one of them duplicated, one replied-to.
    samples = [
        _reply(user="u1", parent="pos one", text="r1", ts=10),
        _reply(user="u1", parent="pos two", text="r2", ts=20),
        _reply(user="u1", parent="pos two", text="r2 again", ts=25),
        _reply(user="u1", parent="pos three", text="r3", ts=30),
        _post(user="u2", text="neg alpha", ts=12),
        _post(user="u2", text="neg alpha", ts=14),  # duplicate text
        _post(user="u3", text="neg beta", ts=18),
        _post(user="u3", text="pos two", ts=19),  # replied-to: not a negative
        _post(user="u2", text="neg gamma", ts=29),
        _post(user="u2", text="outside window", ts=40),
        _post(user="u1", text="own post, never a negative", ts=15),
    ]
    return Corpus.from_samples(samples)


def test_likelihood_dataset_balanced_and_leave_one_out():
    corpus = _likelihood_corpus()
    embedder = HashEmbedder(dim=8)
    examples = build_likelihood_dataset(corpus, embedder, seed=1)
    pos = [e for e in examples if e.label == 1]
    neg = [e for e in examples if e.label == 0]
    assert len(pos) == 3 and len(neg) == 3

    all_pos_vecs = embedder.embed(["pos one", "pos two", "pos three"])
    by_text = {t: all_pos_vecs[i] for i, t in enumerate(["pos one", "pos two", "pos three"])}
    for e in pos:
        # History holds the other two positives, never the candidate.
        assert e.history.shape == (2, 8)
        assert not any(np.allclose(e.post, row) for row in e.history)
        assert any(np.allclose(e.post, v) for v in by_text.values())
    neg_texts = {"neg alpha", "neg beta", "neg gamma"}
    neg_vecs = embedder.embed(sorted(neg_texts))
    for e in neg:
        assert e.history.shape == (3, 8)
        assert any(np.allclose(e.post, v) for v in neg_vecs)


def test_likelihood_dataset_skips_users_without_both_classes(caplog):
    samples = [
        # one distinct positive only -> too_few_positives
        _reply(user="single", parent="only parent", text="r", ts=0),
        _reply(user="single", parent="only parent", text="r2", ts=1),
        # two positives but no pool post in window -> no_negatives
        _reply(user="dry", parent="dp1", text="r", ts=100),
        _reply(user="dry", parent="dp2", text="r2", ts=101),
        # no replies at all
        _post(user="silent", ts=0),
    ]
    with caplog.at_level("INFO", logger="twon.ingest"):
        examples = build_likelihood_dataset(
            Corpus.from_samples(samples), HashEmbedder(dim=4), seed=0
        )
    assert examples == []
    text = caplog.text
    assert "single" in text and "too_few_positives" in text
    assert "dry" in text and "no_negatives" in text
    assert "silent" in text and "no_replies" in text


def test_likelihood_dataset_downsamples_the_larger_side():
    # 2 positives, 5 negatives in window -> 2 of each.
    samples = [
        _reply(user="u1", parent="pa", text="r", ts=0),
        _reply(user="u1", parent="pb", text="r", ts=50),
    ] + [_post(user="u2", text=f"filler negative {i}", ts=10 + i) for i in range(5)]
    examples = build_likelihood_dataset(
        Corpus.from_samples(samples), HashEmbedder(dim=4), seed=3
    )
    labels = sorted(e.label for e in examples)
    assert labels == [0, 0, 1, 1]


def test_likelihood_dataset_deterministic():
    corpus = _likelihood_corpus()
    embedder = HashEmbedder(dim=8)
    a = build_likelihood_dataset(corpus, embedder, seed=5)
    b = build_likelihood_dataset(corpus, embedder, seed=5)
    assert len(a) == len(b)
    for ea, eb in zip(a, b):
        assert ea.label == eb.label
        np.testing.assert_array_equal(ea.history, eb.history)
        np.testing.assert_array_equal(ea.post, eb.post)


def test_split_user_level_and_disjoint():
    samples = [_post(user=f"u{i}", ts=j) for i in range(10) for j in range(3)]
    train, test = split(Corpus.from_samples(samples), train_fraction=0.8, seed=0)
    train_users = {s.user_id for s in train.samples}
    test_users = {s.user_id for s in test.samples}
    assert len(train_users) == 8 and len(test_users) == 2
    assert train_users.isdisjoint(test_users)
    assert len(train.samples) + len(test.samples) == len(samples)
    # Every sample of a user lands on one side.
    for s in samples:
        assert (s.user_id in train_users) != (s.user_id in test_users)


def test_split_deterministic_and_clamped():
    samples = [_post(user=f"u{i}") for i in range(2)]
    corpus = Corpus.from_samples(samples)
    a_train, a_test = split(corpus, train_fraction=0.99, seed=7)
    b_train, b_test = split(corpus, train_fraction=0.99, seed=7)
    assert a_train.samples == b_train.samples
    assert len(a_train.samples) == 1 and len(a_test.samples) == 1


def test_split_validation():
    single = Corpus.from_samples([_post(user="only")])
    with pytest.raises(InputError):
        split(single, train_fraction=0.8, seed=0)
    two = Corpus.from_samples([_post(user="a"), _post(user="b")])
    with pytest.raises(InputError):
        split(two, train_fraction=0.0, seed=0)
    with pytest.raises(InputError):
        split(two, train_fraction=1.0, seed=0)


def test_raw_sample_round_trip_and_validation():
    sample = _reply(user="u9", parent="the parent", text="the reply", ts=44)
    assert RawSample.from_dict(sample.to_dict()) == sample
    with pytest.raises(InputError):
        RawSample.from_dict({"user_id": "x"})
    bad_ts = sample.to_dict()
    bad_ts["timestamp"] = "44"
    with pytest.raises(InputError):
        RawSample.from_dict(bad_ts)
    bad_kind = sample.to_dict()
    bad_kind["kind"] = "repost"
    with pytest.raises(InputError):
        RawSample.from_dict(bad_kind)
    with pytest.raises(InputError):
        RawSample(
            user_id="u", text="t", kind=MessageKind.REPLY,
            language=Language.EN, timestamp=0,
        )


def test_corpus_jsonl_round_trip(tmp_path):
    corpus = _likelihood_corpus()
    path = tmp_path / "corpus.jsonl"
    corpus.dump_jsonl(path)
    loaded = Corpus.load_jsonl(path)
    assert loaded.samples == corpus.samples
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"user_id": "x"\n', encoding="utf-8")
    with pytest.raises(InputError):
        Corpus.load_jsonl(bad)
