import io
from datetime import timedelta

import numpy as np
import pytest

from compound_ueba.deviation import DeviationCube, DeviationParams
from compound_ueba.errors import ConfigError
from compound_ueba.ingest import FrameConfig, extract_measurements, feature_sets_named, write_events
from compound_ueba.synthgen import (
    EnvChange,
    LabelSet,
    OrgSpec,
    ScenarioSpec,
    generate,
    inject,
    typical_users,
    user_profiles,
)

SMALL = dict(n_users=12, n_groups=3, train_days=40, test_days=14, min_history_days=30)


@pytest.fixture(scope="module")
def small_org():
    org = OrgSpec(**SMALL, seed=3)
    return org, generate(org)


def _bytes(events):
    buf = io.StringIO()
    write_events(events, buf)
    return buf.getvalue()


def test_zero_rates_give_empty_stream():
    org = OrgSpec(n_users=1, n_groups=1, train_days=1, test_days=0, min_history_days=1,
                  rates={a: (0.0, 0.0) for a in ("Logon", "File", "Http")}, env_changes=[])
    assert generate(org) == []


def test_same_seed_same_bytes(small_org):
    org, events = small_org
    assert _bytes(generate(OrgSpec(**SMALL, seed=3))) == _bytes(events)
    assert _bytes(generate(OrgSpec(**SMALL, seed=4))) != _bytes(events)


def test_stream_sorted_and_inside_calendar(small_org):
    org, events = small_org
    ts = [e.timestamp for e in events]
    assert ts == sorted(ts)
    store = extract_measurements(events, feature_sets_named("synthetic"), FrameConfig(),
                                 start_day=org.start, end_day=org.end, users=org.users)
    assert store.days[0] == org.start and len(store.days) == org.n_days


def test_spec_validation():
    with pytest.raises(ConfigError):
        OrgSpec(n_users=2, n_groups=3)
    with pytest.raises(ConfigError):
        OrgSpec(rates={"File": (-1.0, 0.0)})
    with pytest.raises(ConfigError):
        OrgSpec(train_days=10)
    with pytest.raises(ConfigError):
        ScenarioSpec("phishing", "u1", OrgSpec().start)


def test_weekday_means_match_habit_rates():
    org = OrgSpec(n_users=50, n_groups=2, train_days=60, test_days=0, env_changes=[], seed=11)
    events = generate(org)
    profiles = {p.user_id: p for p in user_profiles(org)}
    weekdays = [k for k in range(org.n_days) if (org.start + timedelta(days=k)).weekday() < 5]
    counts = {u: np.zeros(org.n_days) for u in org.users}
    day0 = org.start
    for e in events:
        if e.action in ("logoff", "disconnect"):  # end events pair with a start event
            continue
        k = int((e.timestamp - 6 * 3600) // 86400) - (day0 - day0.__class__(1970, 1, 1)).days
        counts[e.user_id][k] += 1
    checked = 0
    for u, p in profiles.items():
        expected = sum(float(r.sum()) for r in p.rates.values())
        if expected < 5:
            continue
        observed = counts[u][weekdays].mean()
        assert abs(observed - expected) <= 0.2 * expected, (u, observed, expected)
        checked += 1
    assert checked >= 40


def test_group_series_has_weekly_rhythm(small_org):
    org = OrgSpec(n_users=20, n_groups=2, train_days=70, test_days=0, seed=1)
    events = generate(org)
    store = extract_measurements(events, feature_sets_named("synthetic"), FrameConfig(),
                                 start_day=org.start, end_day=org.end, users=org.users)
    vals = store.aspects["Http"].values  # (U, F, T, N)
    groups = org.groups
    members = [i for i, u in enumerate(store.users) if groups[u] == "g0"]
    series = vals[members, 0, 0, :].mean(axis=0)
    x = series - series.mean()
    lag7 = float((x[7:] * x[:-7]).sum() / (x * x).sum())
    assert lag7 > 0.3


def test_env_change_scales_group(small_org):
    base = OrgSpec(**SMALL, seed=5, env_changes=[])
    bumped = OrgSpec(**SMALL, seed=5, env_changes=[EnvChange(day=20, aspect="File", group="g1", rate_factor=4.0)])

    def file_count(events, group):
        members = {u for u, g in base.groups.items() if g == group}
        day = base.start + timedelta(days=20)
        lo = (day - day.__class__(1970, 1, 1)).days * 86400 + 6 * 3600
        return sum(1 for e in events if e.user_id in members and e.aspect.value == "File" and lo <= e.timestamp < lo + 86400)

    a, b = generate(base), generate(bumped)
    assert file_count(b, "g1") > 2 * file_count(a, "g1")
    assert file_count(b, "g0") == file_count(a, "g0")


@pytest.mark.parametrize("scenario", ["after_hours_exfil", "job_search_thumb_drive", "ransomware_like", "botnet_like"])
def test_inject_is_local(small_org, scenario):
    org, events = small_org
    victim = typical_users(org)[0]
    spec = ScenarioSpec(scenario, victim, org.train_end + timedelta(days=2), duration=8)
    out, labels = inject(events, spec)
    assert len(out) > len(events)
    others = [e for e in out if e.user_id != victim]
    assert _bytes(others) == _bytes([e for e in events if e.user_id != victim])
    # the victim's original events are all still there
    def lines(evs):
        return _bytes(evs).splitlines()

    victim_after = lines([e for e in out if e.user_id == victim])
    assert not set(lines([e for e in events if e.user_id == victim])) - set(victim_after)
    assert labels.abnormal_users() == [victim]
    assert labels.labels[victim] == (spec.start, spec.end)
    assert sum(labels.abnormal.values()) == 1


def test_inject_unknown_victim(small_org):
    org, events = small_org
    with pytest.raises(ConfigError):
        inject(events, ScenarioSpec("botnet_like", "ghost", org.start))


def test_labelset_json_round_trip():
    ls = LabelSet({"a": None, "b": (OrgSpec().start, OrgSpec().end)})
    assert LabelSet.from_json(ls.to_json()) == ls


def _victim_store(org, events, scenario, victim, start_offset=3):
    spec = ScenarioSpec(scenario, victim, org.train_end + timedelta(days=start_offset), duration=8, seed=org.seed)
    out, _ = inject(events, spec)
    store = extract_measurements(out, feature_sets_named("synthetic"), FrameConfig(),
                                 start_day=org.start, end_day=org.end, users=org.users)
    return spec, store


def test_botnet_failure_novelty_jumps(small_org):
    org, events = small_org
    victim = typical_users(org)[1]
    spec, store = _victim_store(org, events, "botnet_like", victim)
    http = store.aspects["Http"]
    f = http.features.index("failure-new-domain")
    u = store.user_index(victim)
    daily = http.values[u, f].sum(axis=0)  # over frames
    k0 = store.day_index(spec.start)
    pre_max = daily[:k0].max()
    attack = daily[k0 + 2:store.day_index(spec.end) + 1]
    assert attack.min() >= 5 * max(pre_max, 1)


@pytest.mark.parametrize("scenario", ["after_hours_exfil", "job_search_thumb_drive", "ransomware_like", "botnet_like"])
def test_detectable_by_construction(small_org, scenario):
    org, events = small_org
    victim = typical_users(org)[2]
    spec, store = _victim_store(org, events, scenario, victim)
    params = DeviationParams(omega=14)
    hit = False
    for aspect in store.aspects:
        cube = DeviationCube.from_store(store, aspect, params, org.groups)
        u = store.user_index(victim)
        lo, hi = store.day_index(spec.start), store.day_index(spec.end)
        if np.any(np.abs(cube.user_sigma[u, :, :, lo:hi + 1]) >= params.delta_cap):
            hit = True
    assert hit
