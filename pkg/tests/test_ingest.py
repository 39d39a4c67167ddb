import io
import random
from datetime import date, datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compound_ueba.errors import ConfigError, FormatError, UsageError
from compound_ueba.ingest import (
    Aspect,
    AuditEvent,
    FeatureDef,
    FeatureKind,
    FeatureSet,
    FrameConfig,
    Match,
    MeasurementStore,
    NoveltyState,
    advance_novelty,
    assign_timeframe,
    casestudy_feature_sets,
    cert_feature_sets,
    count_features,
    extract_features,
    extract_measurements,
    feature_sets_named,
    parse_event_stream,
    partition_by_user,
    read_events,
    write_events,
)


def ts(text):
    return datetime.fromisoformat(text).replace(tzinfo=timezone.utc).timestamp()


def ev(user="a", t=0.0, aspect=Aspect.DEVICE, action="connect", obj="h1", **attrs):
    return AuditEvent(user, t, aspect, action, obj, attrs)


DEVICE = cert_feature_sets()[0]


# -- parsing ---------------------------------------------------------------


def test_jsonl_identity():
    line = b'{"user":"u1","ts":1275375600,"aspect":"Http","action":"upload","object":"cnn.com","attrs":{"filetype":"doc"}}\n'
    res = parse_event_stream(line)
    assert res.malformed == 0
    (e,) = res.events
    assert e == AuditEvent("u1", 1275375600.0, Aspect.HTTP, "upload", "cnn.com", {"filetype": "doc"})


def test_missing_user_is_skipped_and_counted():
    lines = (b'{"user":"u1","ts":1,"aspect":"File","action":"open"}\n'
             b'{"ts":2,"aspect":"File","action":"open"}\n'
             b'{"user":"u2","ts":"2010-06-01T07:00:00Z","aspect":"file","action":"open"}\n')
    res = parse_event_stream(lines)
    assert len(res.events) == 2 and res.malformed == 1
    assert [e.user_id for e in res.events] == ["u1", "u2"]
    assert res.events[1].timestamp == ts("2010-06-01T07:00:00")


def test_mostly_malformed_raises_format_error():
    with pytest.raises(FormatError):
        parse_event_stream(b"a,b,c\nd,e,f\n{\"user\":\"x\",\"ts\":1,\"aspect\":\"File\",\"action\":\"o\"}\n")


def test_invalid_utf8_is_format_error():
    with pytest.raises(FormatError):
        parse_event_stream(b"\xff\xfe\n")


def test_csv_round_trip_and_header_check():
    events = [ev("a", 10.0, Aspect.FILE, "copy", "f1", direction="local-to-remote"), ev("b", 20.5)]
    buf = io.StringIO()
    write_events(events, buf, "csv")
    res = parse_event_stream(buf.getvalue().encode(), "csv")
    assert res.events == events
    with pytest.raises(FormatError):
        parse_event_stream(b"u,t\n1,2\n", "csv")
    with pytest.raises(ConfigError):
        parse_event_stream(b"", "xml")


def test_jsonl_file_round_trip(tmp_path):
    events = [ev("a", float(i), Aspect.HTTP, "visit", f"d{i}", status="404") for i in range(5)]
    p = tmp_path / "e.jsonl"
    with open(p, "w") as fh:
        assert write_events(events, fh) == 5
    assert read_events(p).events == events


def test_event_invariants():
    with pytest.raises(ValueError):
        AuditEvent("", 1.0, Aspect.FILE, "open")
    with pytest.raises(ValueError):
        AuditEvent("a", -1.0, Aspect.FILE, "open")


# -- time frames ------------------------------------------------------------


@pytest.mark.parametrize("when,day,label", [
    ("2010-06-01T07:00:00", date(2010, 6, 1), "working"),
    ("2010-06-01T19:00:00", date(2010, 6, 1), "off"),
    ("2010-06-02T02:00:00", date(2010, 6, 1), "off"),
    ("2010-06-01T06:00:00", date(2010, 6, 1), "working"),
    ("2010-06-01T05:59:59", date(2010, 5, 31), "off"),
    ("2010-06-01T18:00:00", date(2010, 6, 1), "off"),
])
def test_assign_timeframe(when, day, label):
    d, f = assign_timeframe(ts(when))
    assert (d, f.label) == (day, label)


def test_hourly_frames():
    d, f = assign_timeframe(ts("2010-06-01T13:30:00"), FrameConfig.hourly())
    assert (d, f.index, f.label) == (date(2010, 6, 1), 13, "h13")
    d, f = assign_timeframe(ts("2010-06-01T00:10:00"), FrameConfig.hourly())
    assert (d, f.index) == (date(2010, 6, 1), 0)


def test_frame_config_must_partition():
    with pytest.raises(ConfigError):
        FrameConfig((10, 5), ("a", "b"))
    with pytest.raises(ConfigError):
        FrameConfig((0, 90000), ("a", "b"))
    with pytest.raises(ConfigError):
        FrameConfig((0,), ("a", "b"))
    with pytest.raises(ConfigError):
        FrameConfig.named("weekly")


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2_000_000_000))
def test_timeframe_is_a_function_within_24h_of_its_day(t):
    d, f = assign_timeframe(float(t))
    assert assign_timeframe(float(t)) == (d, f)
    start = datetime(d.year, d.month, d.day, 6, tzinfo=timezone.utc).timestamp()
    assert start <= t < start + 86400
    assert f.label == ("working" if t < start + 12 * 3600 else "off")


# -- partition ----------------------------------------------------------------


def test_partition_by_user():
    e1, e2, e3 = ev("a", 1.0), ev("b", 2.0), ev("a", 3.0)
    assert partition_by_user([e1, e2, e3]) == {"a": [e1, e3], "b": [e2]}
    assert partition_by_user([]) == {}


def test_partition_property_random():
    rng = random.Random(3)
    events = [ev(f"u{rng.randrange(10)}", float(i)) for i in range(1000)]
    parts = partition_by_user(events)
    index = {id(e): i for i, e in enumerate(events)}
    merged = sorted((e for seq in parts.values() for e in seq), key=lambda e: index[id(e)])
    assert merged == events
    for seq in parts.values():
        assert [index[id(e)] for e in seq] == sorted(index[id(e)] for e in seq)


# -- features -----------------------------------------------------------------


def test_device_counts_and_novelty():
    events = [ev(obj="h1"), ev(obj="h1"), ev(obj="h2")]
    assert count_features(events, DEVICE, NoveltyState()) == [3.0, 3.0]
    known = NoveltyState(frozenset({("device", "h1"), ("device", "h2")}))
    assert count_features(events, DEVICE, known) == [3.0, 0.0]
    assert count_features([], DEVICE, NoveltyState()) == [0.0, 0.0]


def test_distinct_novelty_option():
    fs = FeatureSet(Aspect.DEVICE, (FeatureDef("new", FeatureKind.NOVELTY, Match.of("connect"), "device", distinct=True),))
    assert count_features([ev(obj="h1"), ev(obj="h1"), ev(obj="h2")], fs, NoveltyState()) == [2.0]


def test_extract_features_measurements_and_aspect_mismatch():
    day = date(2010, 6, 1)
    frame = FrameConfig().frame(0)
    ms = extract_features([ev()], DEVICE, NoveltyState(), user_id="a", day=day, frame=frame)
    assert [(m.feature, m.value) for m in ms] == [("connection", 1.0), ("new-host-connection", 1.0)]
    with pytest.raises(UsageError):
        count_features([ev(aspect=Aspect.FILE, action="open")], DEVICE, NoveltyState())


def test_duplicate_feature_names_rejected():
    f = FeatureDef("x", FeatureKind.COUNT)
    with pytest.raises(ConfigError):
        FeatureSet(Aspect.FILE, (f, f))


def test_file_family_includes_direction():
    fs = cert_feature_sets()[1]
    events = [ev(aspect=Aspect.FILE, action="copy", obj="f1", direction="local-to-remote")]
    state = advance_novelty(NoveltyState(), events, fs, date(2010, 1, 1))
    assert ("file-copy-local-to-remote", "f1") in state
    # same file copied the other way is still new
    other = [ev(aspect=Aspect.FILE, action="copy", obj="f1", direction="remote-to-local")]
    assert count_features(other, fs, state)[-1] == 1.0


def test_advance_novelty():
    http = cert_feature_sets()[2]
    up = ev(aspect=Aspect.HTTP, action="upload", obj="cnn.com", filetype="doc")
    s1 = advance_novelty(NoveltyState(), [up], http, date(2010, 1, 1))
    assert s1.pairs == {("http-upload-doc", "cnn.com")}
    s2 = advance_novelty(s1, [up], http, date(2010, 1, 2))
    assert s2.pairs == s1.pairs
    with pytest.raises(UsageError):
        advance_novelty(s2, [up], http, date(2009, 12, 31))


def test_two_day_novelty_via_extraction():
    http = cert_feature_sets()[2]
    d1 = ts("2010-06-01T08:00:00")
    events = [
        ev("a", d1, Aspect.HTTP, "upload", "x.com", filetype="doc"),
        ev("a", d1 + 60, Aspect.HTTP, "upload", "x.com", filetype="doc"),
        ev("a", d1 + 86400, Aspect.HTTP, "upload", "x.com", filetype="doc"),
        ev("a", d1 + 86400, Aspect.HTTP, "upload", "y.com", filetype="doc"),
    ]
    store = extract_measurements(events, [http], FrameConfig())
    vals = store.aspects["Http"].values  # (U, F, T, N)
    new = http.names.index("http-new-op")
    assert vals[0, new, 0, 0] == 2.0  # both day-1 events are new
    assert vals[0, new, 0, 1] == 1.0  # only y.com is new on day 2
    assert vals[0, http.names.index("upload-doc"), 0, 1] == 2.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["open", "write", "delete"]), st.sampled_from("abcde")), max_size=30),
       st.randoms())
def test_triple_bounds_and_order_insensitivity(pairs, rnd):
    fs = casestudy_feature_sets()[0]
    events = [ev(aspect=Aspect.FILE, action=a, obj=o) for a, o in pairs]
    novelty = NoveltyState(frozenset({("file-open", "a")}))
    f1, f2, f3 = count_features(events, fs, novelty)
    assert f2 <= f1 and f3 <= f1
    shuffled = list(events)
    rnd.shuffle(shuffled)
    assert count_features(shuffled, fs, novelty) == [f1, f2, f3]


def test_http_failure_features():
    http = casestudy_feature_sets()[3]
    events = [ev(aspect=Aspect.HTTP, action="visit", obj="a.com", status="200"),
              ev(aspect=Aspect.HTTP, action="visit", obj="b.biz", status="404"),
              ev(aspect=Aspect.HTTP, action="visit", obj="c.biz", status="503")]
    vals = dict(zip(http.names, count_features(events, http, NoveltyState())))
    assert vals == {"success": 1, "success-new-domain": 1, "failure": 2, "failure-new-domain": 2}


def test_feature_presets():
    assert {fs.aspect.value for fs in feature_sets_named("synthetic")} == {
        "Logon", "Device", "File", "Http", "Command", "Config"}
    with pytest.raises(ConfigError):
        feature_sets_named("nope")


def test_measurement_store_dense_and_save_load(tmp_path):
    t0 = ts("2010-06-01T08:00:00")
    events = [ev("a", t0), ev("b", t0 + 2 * 86400 + 12 * 3600)]
    store = extract_measurements(events, [DEVICE], FrameConfig(), users=["a", "b", "c"])
    vals = store.aspects["Device"].values
    assert vals.shape == (3, 2, 2, 3)
    assert vals.sum() == 4.0  # two events, each counted by both features
    assert vals[1, 0, 1, 2] == 1.0
    assert store.measurements("c", "Device")[0].value == 0.0
    assert len(store.measurements("a", "Device")) == 2 * 2 * 3
    p = tmp_path / "m.npz"
    store.save(p)
    back = MeasurementStore.load(p)
    assert back.users == store.users and back.days == store.days
    np.testing.assert_array_equal(back.aspects["Device"].values, vals)
    with pytest.raises(UsageError):
        store.day_index(date(2000, 1, 1))


def test_novelty_state_warmed_before_start_day():
    t0 = ts("2010-06-01T08:00:00")
    events = [ev("a", t0, obj="h1"), ev("a", t0 + 86400, obj="h1")]
    store = extract_measurements(events, [DEVICE], FrameConfig(), start_day=date(2010, 6, 2), end_day=date(2010, 6, 2))
    assert store.aspects["Device"].values[0, :, 0, 0].tolist() == [1.0, 0.0]
