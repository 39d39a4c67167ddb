from datetime import timedelta

import numpy as np
import pytest

from compound_ueba.errors import ConfigError
from compound_ueba.pipeline import (
    ALL_IN_ONE,
    VARIANTS,
    AblationConfig,
    ModelConfig,
    SingleDayRepresentation,
    build_representations,
    dataset_from_synth,
    extract_for_variant,
    run_variant,
    training_matrix,
)
from compound_ueba.synthgen import OrgSpec, ScenarioSpec, generate, inject, typical_users

TINY = ModelConfig(omega=5, epochs=2, hidden_widths=[8, 4], max_train_samples=300, critic_n=2)


@pytest.fixture(scope="module")
def dataset():
    org = OrgSpec(n_users=12, n_groups=3, train_days=40, test_days=8, min_history_days=30, seed=2)
    victim = typical_users(org)[0]
    events, labels = inject(generate(org), ScenarioSpec("after_hours_exfil", victim, org.train_end + timedelta(days=2), duration=4))
    return dataset_from_synth(org, events, labels), victim


def test_variant_knobs_are_fixed():
    assert AblationConfig.for_variant("acobe") == AblationConfig()
    nog = AblationConfig.for_variant("no_group")
    assert nog.group_block is False and nog.representation == "deviation"
    base = AblationConfig.for_variant("baseline")
    assert base.feature_preset("synthetic") == "coarse" and base.frame_config().n_frames == 24
    assert AblationConfig.for_variant("base_ff").feature_preset("synthetic") == "synthetic"
    with pytest.raises(ConfigError):
        AblationConfig(variant="no_group")  # default knobs keep the group block
    with pytest.raises(ConfigError):
        AblationConfig.for_variant("nope")


def test_model_config_validation():
    for bad in (dict(train_stride=0), dict(critic_n=0), dict(omega=1), dict(epochs=-1), dict(max_train_samples=1)):
        with pytest.raises(ConfigError):
            ModelConfig(**bad)


def test_dimensions_per_variant(dataset):
    ds, _ = dataset
    dims = {}
    for v in ("acobe", "no_group", "one_day", "all_in_one"):
        cfg = AblationConfig.for_variant(v)
        store = extract_for_variant(ds, cfg, TINY)
        reps = build_representations(store, ds.groups, cfg, TINY, store.day_index(ds.train_end))
        dims[v] = {a: r.dim for a, r in reps.items()}
    for a, d in dims["acobe"].items():
        assert dims["no_group"][a] * 2 == d
        assert dims["one_day"][a] * TINY.omega == d
    assert list(dims["all_in_one"]) == [ALL_IN_ONE]
    assert dims["all_in_one"][ALL_IN_ONE] == sum(dims["acobe"].values())


def test_single_day_vectors_scaled_by_training_max(dataset):
    ds, _ = dataset
    cfg = AblationConfig.for_variant("one_day")
    store = extract_for_variant(ds, cfg, TINY)
    te = store.day_index(ds.train_end)
    rep = SingleDayRepresentation(store, "File", ds.groups, False, 8, te)
    raw = store.aspects["File"].values
    scale = np.maximum(raw[..., 8:te + 1].max(axis=(0, 3)), 1.0)
    k = te + 3
    np.testing.assert_allclose(rep.vectors(k), np.clip(raw[..., k] / scale, 0, 1).reshape(len(store.users), -1))
    train = np.concatenate([rep.vectors(j) for j in range(8, te + 1)])
    assert train.max() == 1.0 and train.min() >= 0


def test_training_matrix_stride_and_cap(dataset):
    ds, _ = dataset
    cfg = AblationConfig.for_variant("acobe")
    store = extract_for_variant(ds, cfg, TINY)
    te = store.day_index(ds.train_end)
    rep = build_representations(store, ds.groups, cfg, TINY, te)["File"]
    n_days = len(range(rep.first_scorable, te + 1, 3))
    full = training_matrix(rep, te, ModelConfig(omega=5, train_stride=3, max_train_samples=None), 0)
    assert full.shape == (n_days * 12, rep.dim)
    capped = training_matrix(rep, te, ModelConfig(omega=5, train_stride=3, max_train_samples=50), 0)
    assert capped.shape == (50, rep.dim)
    again = training_matrix(rep, te, ModelConfig(omega=5, train_stride=3, max_train_samples=50), 0)
    assert np.array_equal(capped, again)


def test_training_must_end_after_burn_in(dataset):
    ds, _ = dataset
    cfg = AblationConfig.for_variant("acobe")
    store = extract_for_variant(ds, cfg, TINY)
    with pytest.raises(ConfigError):
        build_representations(store, ds.groups, cfg, TINY, TINY.deviation_params(True).first_scorable - 1)


@pytest.mark.parametrize("variant", VARIANTS)
def test_run_variant_shapes_and_lists(dataset, variant):
    ds, victim = dataset
    res = run_variant(ds, variant, TINY)
    assert res.test_days[0] == ds.train_end + timedelta(days=1) and len(res.test_days) == 8
    for a, s in res.scores.items():
        assert s.shape == (12, 8) and np.all(np.isfinite(s)) and np.all(s >= 0)
    assert len(res.daily_lists) == 8
    assert sorted(e.user_id for e in res.period_list.entries) == sorted(ds.users)
    prios = [e.priority for e in res.period_list.entries]
    assert prios == sorted(prios)
    expect_n = 1 if variant == "all_in_one" else 2
    assert res.period_list.n == expect_n
    for e in res.period_list.entries:
        best = min(inv.entries[inv.position(e.user_id) - 1].priority for inv in res.daily_lists)
        assert e.priority == best


def test_run_variant_deterministic(dataset):
    ds, _ = dataset
    a, b = run_variant(ds, "acobe", TINY), run_variant(ds, "acobe", TINY)
    for k in a.scores:
        assert np.array_equal(a.scores[k], b.scores[k])
    assert [e.user_id for e in a.period_list.entries] == [e.user_id for e in b.period_list.entries]
