import io
import json
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from compound_ueba.errors import ConfigError, DataError
from compound_ueba.neuralnet import TrainConfig, init_model, model_to_dict, reconstruction_errors
from compound_ueba.scoring import (
    AspectScores,
    RankTable,
    optimistic,
    pessimistic,
    prioritize,
    rank_users,
    score_trend,
    score_users,
    train_ensemble,
)


def test_rank_users_basic_and_ties():
    assert rank_users({"a": 0.9, "b": 0.1, "c": 0.5}).ranks == {"a": 1, "c": 2, "b": 3}
    assert rank_users({"c": 1.0, "a": 1.0, "b": 1.0}).ranks == {"a": 1, "b": 2, "c": 3}
    with pytest.raises(DataError):
        rank_users({"a": float("nan")})
    with pytest.raises(DataError):
        rank_users({})


def test_tie_rules():
    labels = {"a": True, "b": False}
    scores = {"a": 1.0, "b": 1.0}
    assert rank_users(scores, pessimistic(labels)).ranks == {"b": 1, "a": 2}
    assert rank_users(scores, optimistic(labels)).ranks == {"a": 1, "b": 2}


def test_rank_users_matches_sort_oracle():
    rng = random.Random(0)
    scores = {f"u{i:03d}": rng.random() for i in range(100)}
    by_score = sorted(scores, key=scores.get, reverse=True)
    assert rank_users(AspectScores("File", None, scores)).ranks == {u: i + 1 for i, u in enumerate(by_score)}


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.text("abc", min_size=1, max_size=3), st.floats(0, 1e6), min_size=1),
       st.floats(1e-3, 1e3))
def test_rank_invariant_under_positive_scaling(scores, c):
    scaled = {u: s * c for u, s in scores.items()}
    # scaling may create or break float ties only through rounding; compare where order is strict
    r1, r2 = rank_users(scores).ranks, rank_users(scaled).ranks
    assert sorted(r1.values()) == list(range(1, len(scores) + 1))
    for u in scores:
        for v in scores:
            if scores[u] > scores[v] and scaled[u] > scaled[v]:
                assert r1[u] < r1[v] and r2[u] < r2[v]


def test_prioritize_worked_example():
    lst = prioritize({"x": [3, 5, 4]}, 2)
    assert lst.entries[0].priority == 4
    assert prioritize({"x": [3, 5, 4]}, 1).entries[0].priority == 3
    with pytest.raises(ConfigError):
        prioritize({"x": [3, 5, 4]}, 4)
    with pytest.raises(ConfigError):
        prioritize({"x": [3, 5, 4]}, 0)
    with pytest.raises(ConfigError):
        prioritize({"x": [3, 5], "y": [1]}, 1)


def _random_ranks(rng, n_users, n_aspects):
    users = [f"u{i:02d}" for i in range(n_users)]
    cols = [rng.sample(range(1, n_users + 1), n_users) for _ in range(n_aspects)]
    return {u: [cols[a][i] for a in range(n_aspects)] for i, u in enumerate(users)}


def test_prioritize_matches_line_by_line_oracle():
    rng = random.Random(1)
    for _ in range(50):
        ranks = _random_ranks(rng, 50, 3)
        lst = prioritize(ranks, 3)
        expected = oracles.critic(sorted(ranks.items()), 3)
        assert [(e.user_id, e.priority) for e in lst.entries] == expected


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.integers(1, 5), st.randoms(use_true_random=False))
def test_prioritize_properties(n_users, n_aspects, rnd):
    ranks = _random_ranks(rnd, n_users, n_aspects)
    first = prioritize(ranks, 1)
    last = prioritize(ranks, n_aspects)
    assert [e.priority for e in first.entries] == sorted(min(r) for r in ranks.values())
    assert [e.priority for e in last.entries] == sorted(max(r) for r in ranks.values())
    for n in range(1, n_aspects + 1):
        lst = prioritize(ranks, n)
        assert sorted(lst.users) == sorted(ranks)
        ps = [e.priority for e in lst.entries]
        assert ps == sorted(ps)
        for e in lst.entries:
            if sum(r == 1 for r in ranks[e.user_id]) >= n:
                assert e.priority == 1


def test_prioritize_from_rank_tables_and_exports():
    t1 = RankTable("File", None, {"a": 1, "b": 2, "c": 3})
    t2 = RankTable("Http", None, {"a": 3, "b": 1, "c": 2})
    lst = prioritize([t1, t2], 2)
    assert lst.aspects == ["File", "Http"]
    assert [(e.user_id, e.priority) for e in lst.entries] == [("b", 2), ("a", 3), ("c", 3)]
    assert lst.position("c") == 3
    buf = io.StringIO()
    lst.write_csv(buf)
    assert buf.getvalue().splitlines() == [
        "rank,user,priority,rank_File,rank_Http", "1,b,2,2,1", "2,a,3,1,3", "3,c,3,3,2"]
    data = json.loads(json.dumps(lst.to_json()))
    assert data["entries"][0]["aspect_ranks"] == {"File": 2, "Http": 1}
    with pytest.raises(ConfigError):
        prioritize([t1, RankTable("X", None, {"a": 1})], 1)


def test_train_ensemble_independent_models():
    rng = np.random.default_rng(0)
    sets = {"File": rng.random((30, 8)), "Http": rng.random((30, 12)), "Device": rng.random((30, 4))}
    cfg = TrainConfig(epochs=2)
    models = train_ensemble(sets, cfg, hidden_widths=[3, 2])
    assert sorted(models) == ["Device", "File", "Http"]
    assert models["Http"].input_dim == 12
    again = train_ensemble(sets, cfg, hidden_widths=[3, 2])
    assert all(model_to_dict(models[a]) == model_to_dict(again[a]) for a in models)
    # retraining one aspect alone leaves the other aspect's model identical
    alone = train_ensemble({"File": sets["File"]}, cfg, hidden_widths=[3, 2])
    assert model_to_dict(alone["File"]) == model_to_dict(models["File"])


def test_train_ensemble_errors():
    with pytest.raises(ConfigError):
        train_ensemble({})
    with pytest.raises(ConfigError, match="Http"):
        train_ensemble({"Http": [[0.1, 0.2], [0.3]]}, TrainConfig(epochs=1))


def test_score_users_and_trend():
    rng = np.random.default_rng(1)
    m = init_model(4, [3, 2], seed=0)
    X = rng.random((3, 4))
    s = score_users(m, X, ["a", "b", "c"], "File")
    assert list(s.scores.values()) == reconstruction_errors(m, X).tolist()
    trend = score_trend(m, lambda d: None if d < 2 else X[d % 3], range(5))
    assert [t[1] is None for t in trend] == [True, True, False, False, False]
    assert trend[2][1] == pytest.approx(reconstruction_errors(m, X[2])[0])
    single = score_trend(m, lambda d: X[0], [7])
    assert single == [(7, float(reconstruction_errors(m, X[0])[0]))]
