"""Audit event parsing, time-frame bucketing and per-aspect feature extraction.

Events are normalized into :class:`AuditEvent` records, split per user, mapped
onto (day, time-frame) buckets and reduced to feature counts.  Three feature
kinds exist:

* ``count``   -- number of matching events,
* ``unique``  -- number of distinct ``(action, object)`` among matching events,
* ``novelty`` -- number of matching events whose ``(family, object)`` pair the
  user never produced on an earlier day.

Novelty state only ever grows and is advanced once per (user, day) *after*
that day was extracted, so a pair first seen on day ``d`` counts as new for
every event of day ``d``.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from bisect import bisect_right
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from enum import Enum
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, FormatError, UsageError

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400
EPOCH_DATE = date(1970, 1, 1)


class Aspect(str, Enum):
    DEVICE = "Device"
    FILE = "File"
    HTTP = "Http"
    COMMAND = "Command"
    CONFIG = "Config"
    LOGON = "Logon"

    @classmethod
    def parse(cls, value: str) -> "Aspect":
        if isinstance(value, Aspect):
            return value
        key = str(value).strip().lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ValueError(f"unknown aspect {value!r}")


@dataclass(frozen=True)
class AuditEvent:
    user_id: str
    timestamp: float
    aspect: Aspect
    action: str
    object: str = ""
    attrs: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.user_id:
            raise ValueError("user_id must be nonempty")
        if not (self.timestamp >= 0) or math.isinf(self.timestamp):
            raise ValueError(f"timestamp must be a finite value >= 0, got {self.timestamp}")


# ---------------------------------------------------------------------------
# Serialization


def _parse_ts(raw) -> float:
    if isinstance(raw, bool):
        raise ValueError("boolean timestamp")
    if isinstance(raw, (int, float)):
        return float(raw)
    text = str(raw).strip()
    try:
        return float(text)
    except ValueError:
        pass
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _event_from_fields(user, ts, aspect, action, obj, attrs) -> AuditEvent:
    if not user or not action or ts is None or aspect is None:
        raise ValueError("missing required field")
    if attrs is None:
        attrs = {}
    if not isinstance(attrs, dict):
        raise ValueError("attrs must be an object")
    return AuditEvent(
        user_id=str(user),
        timestamp=_parse_ts(ts),
        aspect=Aspect.parse(aspect),
        action=str(action),
        object="" if obj is None else str(obj),
        attrs={str(k): str(v) for k, v in attrs.items()},
    )


def _epoch_repr(ts: float):
    return int(ts) if float(ts).is_integer() else ts


def event_to_json(event: AuditEvent) -> str:
    """One JSONL line (no trailing newline) with a fixed key order."""
    record = {
        "user": event.user_id,
        "ts": _epoch_repr(event.timestamp),
        "aspect": event.aspect.value,
        "action": event.action,
        "object": event.object,
    }
    if event.attrs:
        record["attrs"] = dict(sorted(event.attrs.items()))
    return json.dumps(record, separators=(",", ":"))


CSV_HEADER = ["user", "ts", "aspect", "action", "object", "attrs_json"]


def write_events(events: Iterable[AuditEvent], stream: IO[str], fmt: str = "jsonl") -> int:
    n = 0
    if fmt == "jsonl":
        for ev in events:
            stream.write(event_to_json(ev))
            stream.write("\n")
            n += 1
    elif fmt == "csv":
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for ev in events:
            attrs = json.dumps(dict(sorted(ev.attrs.items())), separators=(",", ":")) if ev.attrs else ""
            writer.writerow([ev.user_id, _epoch_repr(ev.timestamp), ev.aspect.value, ev.action, ev.object, attrs])
            n += 1
    else:
        raise ConfigError(f"unknown event format {fmt!r}")
    return n


@dataclass
class ParseResult:
    events: list[AuditEvent]
    malformed: int = 0

    @property
    def total(self) -> int:
        return len(self.events) + self.malformed


def _iter_jsonl(lines: Iterator[str]):
    for line in lines:
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            if not isinstance(rec, dict):
                raise ValueError("record is not an object")
            yield _event_from_fields(
                rec.get("user"), rec.get("ts"), rec.get("aspect"),
                rec.get("action"), rec.get("object"), rec.get("attrs"),
            )
        except (ValueError, TypeError) as exc:
            yield exc


def _iter_csv(lines: Iterator[str]):
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None:
        return
    if [h.strip() for h in header] != CSV_HEADER:
        raise FormatError(f"CSV header must be {','.join(CSV_HEADER)}")
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        try:
            if len(row) != len(CSV_HEADER):
                raise ValueError(f"expected {len(CSV_HEADER)} columns, got {len(row)}")
            user, ts, aspect, action, obj, attrs_json = row
            attrs = json.loads(attrs_json) if attrs_json.strip() else {}
            yield _event_from_fields(user, ts or None, aspect or None, action, obj, attrs)
        except (ValueError, TypeError) as exc:
            yield exc


def parse_event_stream(source: IO[bytes] | bytes, fmt: str = "jsonl") -> ParseResult:
    """Parse a UTF-8 byte stream of JSONL or CSV audit records.

    Malformed records are skipped and counted.  More than half of the records
    being malformed almost always means the wrong ``fmt`` was given, so that
    case raises :class:`FormatError`.
    """
    if fmt not in ("jsonl", "csv"):
        raise ConfigError(f"unknown event format {fmt!r}")
    raw = source if isinstance(source, (bytes, bytearray)) else source.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"source is not valid UTF-8: {exc}") from exc
    lines = iter(io.StringIO(text))
    records = _iter_jsonl(lines) if fmt == "jsonl" else _iter_csv(lines)
    result = ParseResult(events=[])
    for rec in records:
        if isinstance(rec, Exception):
            result.malformed += 1
            logger.debug("skipping malformed record: %s", rec)
        else:
            result.events.append(rec)
    if result.total and result.malformed * 2 > result.total:
        raise FormatError(
            f"{result.malformed} of {result.total} records malformed; is the format flag ({fmt}) right?"
        )
    if result.malformed:
        logger.warning("skipped %d malformed records", result.malformed)
    return result


def read_events(path, fmt: str | None = None) -> ParseResult:
    path = str(path)
    if fmt is None:
        fmt = "csv" if path.endswith(".csv") else "jsonl"
    with open(path, "rb") as fh:
        return parse_event_stream(fh, fmt)


# ---------------------------------------------------------------------------
# Time frames


@dataclass(frozen=True)
class TimeFrame:
    index: int
    label: str


@dataclass(frozen=True)
class FrameConfig:
    """Partition of a 24h day into frames given by their start offsets (seconds).

    A "day" starts at the first boundary; the last frame wraps past midnight
    and belongs to the day it started on.
    """

    boundaries: tuple[int, ...] = (6 * 3600, 18 * 3600)
    labels: tuple[str, ...] = ("working", "off")

    def __post_init__(self):
        b = self.boundaries
        if not b:
            raise ConfigError("frame config needs at least one boundary")
        if any(not (0 <= x < SECONDS_PER_DAY) for x in b):
            raise ConfigError("frame boundaries must lie in [0, 86400) seconds")
        if any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise ConfigError("frame boundaries must be strictly increasing")
        if len(self.labels) != len(b) or len(set(self.labels)) != len(self.labels):
            raise ConfigError("frame labels must be unique and match the boundaries")

    @property
    def n_frames(self) -> int:
        return len(self.boundaries)

    @classmethod
    def two_frame(cls) -> "FrameConfig":
        return cls()

    @classmethod
    def hourly(cls) -> "FrameConfig":
        return cls(tuple(h * 3600 for h in range(24)), tuple(f"h{h:02d}" for h in range(24)))

    @classmethod
    def named(cls, name: str) -> "FrameConfig":
        if name in ("two", "default"):
            return cls.two_frame()
        if name == "hourly":
            return cls.hourly()
        raise ConfigError(f"unknown frame config {name!r}")

    def frame(self, index: int) -> TimeFrame:
        return TimeFrame(index, self.labels[index])


def assign_timeframe(timestamp: float, frame_config: FrameConfig | None = None) -> tuple[date, TimeFrame]:
    """Map a UTC timestamp onto ``(day, frame)``."""
    cfg = frame_config or FrameConfig()
    anchor = cfg.boundaries[0]
    day_no, offset = divmod(math.floor(timestamp) - anchor, SECONDS_PER_DAY)
    idx = bisect_right(cfg.boundaries, offset + anchor) - 1
    if offset + anchor >= SECONDS_PER_DAY:
        # past midnight: still inside the last frame of the day that started it
        idx = cfg.n_frames - 1
    return EPOCH_DATE + timedelta(days=int(day_no)), cfg.frame(idx)


def partition_by_user(events: Iterable[AuditEvent]) -> dict[str, list[AuditEvent]]:
    out: dict[str, list[AuditEvent]] = {}
    for ev in events:
        out.setdefault(ev.user_id, []).append(ev)
    return out


# ---------------------------------------------------------------------------
# Feature definitions


class FeatureKind(str, Enum):
    COUNT = "count"
    UNIQUE = "unique"
    NOVELTY = "novelty"


class _EventFields(dict):
    def __missing__(self, key):
        return ""


@dataclass(frozen=True)
class Match:
    """Predicate over ``(action, object, attrs)``; ``None`` fields match anything."""

    actions: frozenset[str] | None = None
    attrs: tuple[tuple[str, frozenset[str]], ...] = ()

    def __call__(self, event: AuditEvent) -> bool:
        if self.actions is not None and event.action not in self.actions:
            return False
        for key, allowed in self.attrs:
            if event.attrs.get(key) not in allowed:
                return False
        return True

    @classmethod
    def of(cls, actions=None, **attrs) -> "Match":
        acts = None if actions is None else frozenset([actions] if isinstance(actions, str) else actions)
        items = tuple(
            sorted((k, frozenset([v] if isinstance(v, str) else v)) for k, v in attrs.items())
        )
        return cls(acts, items)


@dataclass(frozen=True)
class FeatureDef:
    name: str
    kind: FeatureKind
    match: Match = Match()
    # Novelty key template, formatted with action/object/aspect and attrs.
    family: str = "{aspect}"
    # For novelty features: count distinct new pairs instead of events.
    distinct: bool = False

    def family_of(self, event: AuditEvent) -> str:
        fields = _EventFields(event.attrs)
        fields.update(action=event.action, object=event.object, aspect=event.aspect.value.lower())
        return self.family.format_map(fields)


@dataclass(frozen=True)
class FeatureSet:
    aspect: Aspect
    features: tuple[FeatureDef, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate feature names in {self.aspect.value} feature set")
        for f in self.features:
            if not isinstance(f.kind, FeatureKind):
                raise ConfigError(f"feature {f.name} has invalid kind {f.kind!r}")

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]


@dataclass(frozen=True)
class NoveltyState:
    """Per-user ``(family, object)`` pairs seen strictly before ``last_day + 1``."""

    pairs: frozenset[tuple[str, str]] = frozenset()
    last_day: date | None = None

    def __contains__(self, pair) -> bool:
        return pair in self.pairs

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class FeatureMeasurement:
    user_id: str
    day: date
    frame: TimeFrame
    feature: str
    value: float


def count_features(events: Sequence[AuditEvent], feature_set: FeatureSet, novelty: NoveltyState) -> list[float]:
    """Feature values for one (user, day, frame) bucket, in feature-set order."""
    for ev in events:
        if ev.aspect is not feature_set.aspect:
            raise UsageError(
                f"event aspect {ev.aspect.value} does not match feature set aspect {feature_set.aspect.value}"
            )
    values = []
    for fd in feature_set.features:
        matched = [ev for ev in events if fd.match(ev)]
        if fd.kind is FeatureKind.COUNT:
            values.append(float(len(matched)))
        elif fd.kind is FeatureKind.UNIQUE:
            values.append(float(len({(ev.action, ev.object) for ev in matched})))
        else:
            new = [(fd.family_of(ev), ev.object) for ev in matched]
            new = [p for p in new if p not in novelty.pairs]
            values.append(float(len(set(new)) if fd.distinct else len(new)))
    return values


def extract_features(
    events: Sequence[AuditEvent],
    feature_set: FeatureSet,
    novelty: NoveltyState,
    *,
    user_id: str,
    day: date,
    frame: TimeFrame,
) -> list[FeatureMeasurement]:
    values = count_features(events, feature_set, novelty)
    return [
        FeatureMeasurement(user_id, day, frame, name, v)
        for name, v in zip(feature_set.names, values)
    ]


def novelty_pairs(events: Iterable[AuditEvent], feature_sets: Iterable[FeatureSet]) -> set[tuple[str, str]]:
    by_aspect: dict[Aspect, list[FeatureDef]] = defaultdict(list)
    for fs in feature_sets:
        by_aspect[fs.aspect].extend(f for f in fs.features if f.kind is FeatureKind.NOVELTY)
    pairs = set()
    for ev in events:
        for fd in by_aspect.get(ev.aspect, ()):
            if fd.match(ev):
                pairs.add((fd.family_of(ev), ev.object))
    return pairs


def advance_novelty(
    novelty: NoveltyState,
    user_events_for_day: Iterable[AuditEvent],
    feature_sets: Iterable[FeatureSet] | FeatureSet,
    day: date,
) -> NoveltyState:
    """Fold one day's novelty pairs into the state; days must arrive in order."""
    if novelty.last_day is not None and day < novelty.last_day:
        raise UsageError(f"novelty advanced out of order: {day} after {novelty.last_day}")
    if isinstance(feature_sets, FeatureSet):
        feature_sets = [feature_sets]
    fresh = novelty_pairs(user_events_for_day, feature_sets) - novelty.pairs
    pairs = novelty.pairs | fresh if fresh else novelty.pairs
    return NoveltyState(pairs, day)


# ---------------------------------------------------------------------------
# Feature-set presets


def _novelty(name, family, actions=None, distinct=False, **attrs):
    return FeatureDef(name, FeatureKind.NOVELTY, Match.of(actions, **attrs), family, distinct)


def _count(name, actions=None, **attrs):
    return FeatureDef(name, FeatureKind.COUNT, Match.of(actions, **attrs))


def _unique(name, actions=None, **attrs):
    return FeatureDef(name, FeatureKind.UNIQUE, Match.of(actions, **attrs))


def _triple(aspect: Aspect, family: str) -> FeatureSet:
    # events / unique events / new events
    return FeatureSet(aspect, (_count("events"), _unique("unique"), _novelty("new", family)))


def cert_feature_sets() -> list[FeatureSet]:
    """Device / File / HTTP features of the insider-threat evaluation."""
    file_ops = [
        ("open-from-local", "open", "local"),
        ("open-from-remote", "open", "remote"),
        ("write-to-local", "write", "local"),
        ("write-to-remote", "write", "remote"),
        ("copy-from-local-to-remote", "copy", "local-to-remote"),
        ("copy-from-remote-to-local", "copy", "remote-to-local"),
    ]
    uploads = ["doc", "exe", "jpg", "pdf", "txt", "zip"]
    return [
        FeatureSet(Aspect.DEVICE, (
            _count("connection", "connect"),
            _novelty("new-host-connection", "device", "connect"),
        )),
        FeatureSet(Aspect.FILE, tuple(
            [_count(n, a, direction=d) for n, a, d in file_ops]
            + [_novelty("new-op", "file-{action}-{direction}", [a for _, a, _ in file_ops])]
        )),
        FeatureSet(Aspect.HTTP, tuple(
            [_count(f"upload-{t}", "upload", filetype=t) for t in uploads]
            + [_novelty("http-new-op", "http-{action}-{filetype}", "upload")]
        )),
    ]


_HTTP_OK = [str(c) for c in range(200, 400)]


def casestudy_feature_sets() -> list[FeatureSet]:
    """File / Command / Config triples plus the four HTTP success/failure features."""
    return [
        _triple(Aspect.FILE, "file-{action}"),
        _triple(Aspect.COMMAND, "command"),
        _triple(Aspect.CONFIG, "config"),
        FeatureSet(Aspect.HTTP, (
            _count("success", status=_HTTP_OK),
            _novelty("success-new-domain", "http-success", status=_HTTP_OK),
            FeatureDef("failure", FeatureKind.COUNT, _NotStatusOk()),
            FeatureDef("failure-new-domain", FeatureKind.NOVELTY, _NotStatusOk(), "http-failure"),
        )),
    ]


class _NotStatusOk(Match):
    def __call__(self, event: AuditEvent) -> bool:
        return event.attrs.get("status", "200") not in _HTTP_OK_SET


_HTTP_OK_SET = frozenset(_HTTP_OK)


def synthetic_feature_sets() -> list[FeatureSet]:
    """Six-aspect fine-grained preset used with the bundled generator."""
    cs = {fs.aspect: fs for fs in casestudy_feature_sets()}
    http = cs[Aspect.HTTP]
    return [
        FeatureSet(Aspect.LOGON, (
            _count("logon", "logon"),
            _novelty("new-host-logon", "logon", "logon"),
        )),
        FeatureSet(Aspect.DEVICE, (
            _count("connection", "connect"),
            _novelty("new-host-connection", "device", "connect"),
        )),
        cs[Aspect.FILE],
        FeatureSet(Aspect.HTTP, http.features + (_count("upload", "upload"),)),
        cs[Aspect.COMMAND],
        cs[Aspect.CONFIG],
    ]


COARSE_ACTIONS = {
    Aspect.LOGON: ["logon", "logoff"],
    Aspect.DEVICE: ["connect", "disconnect"],
    Aspect.FILE: ["open", "write", "copy", "delete"],
    Aspect.HTTP: ["visit", "download", "upload"],
    Aspect.COMMAND: ["exec"],
    Aspect.CONFIG: ["modify"],
}


def coarse_feature_sets(aspects: Iterable[Aspect] | None = None) -> list[FeatureSet]:
    """Unweighted per-activity counts (one count per action verb)."""
    aspects = list(aspects) if aspects is not None else list(COARSE_ACTIONS)
    return [
        FeatureSet(a, tuple(_count(act, act) for act in COARSE_ACTIONS[a]))
        for a in aspects
    ]


FEATURE_PRESETS = {
    "synthetic": synthetic_feature_sets,
    "cert": cert_feature_sets,
    "casestudy": casestudy_feature_sets,
    "coarse": coarse_feature_sets,
}


def feature_sets_named(name: str) -> list[FeatureSet]:
    try:
        return FEATURE_PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown feature preset {name!r}; choose from {sorted(FEATURE_PRESETS)}") from None


# ---------------------------------------------------------------------------
# Measurement store


@dataclass
class AspectMeasurements:
    features: list[str]
    values: np.ndarray  # (users, features, frames, days)


@dataclass
class MeasurementStore:
    """Dense ``m[user, feature, frame, day]`` arrays per aspect.

    Days are contiguous; users without activity on a day hold zeros.
    """

    users: list[str]
    days: list[date]
    frame_labels: list[str]
    aspects: dict[str, AspectMeasurements]

    def day_index(self, day: date) -> int:
        idx = (day - self.days[0]).days
        if not (0 <= idx < len(self.days)) or self.days[idx] != day:
            raise UsageError(f"day {day} not in store range {self.days[0]}..{self.days[-1]}")
        return idx

    def user_index(self, user_id: str) -> int:
        try:
            return self._uidx[user_id]
        except AttributeError:
            self._uidx = {u: i for i, u in enumerate(self.users)}
            return self.user_index(user_id)
        except KeyError:
            raise UsageError(f"unknown user {user_id!r}") from None

    def measurements(self, user_id: str, aspect: str) -> list[FeatureMeasurement]:
        am = self.aspects[aspect]
        u = self.user_index(user_id)
        out = []
        for k, day in enumerate(self.days):
            for t, label in enumerate(self.frame_labels):
                for f, name in enumerate(am.features):
                    out.append(FeatureMeasurement(user_id, day, TimeFrame(t, label), name, float(am.values[u, f, t, k])))
        return out

    def save(self, path) -> None:
        arrays = {f"aspect_{name}": am.values for name, am in self.aspects.items()}
        meta = {
            "users": self.users,
            "days": [d.isoformat() for d in self.days],
            "frame_labels": self.frame_labels,
            "aspects": {name: am.features for name, am in self.aspects.items()},
        }
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path) -> "MeasurementStore":
        with np.load(path) as data:
            meta = json.loads(data["meta"].tobytes().decode())
            aspects = {
                name: AspectMeasurements(list(feats), data[f"aspect_{name}"].astype(np.float64))
                for name, feats in meta["aspects"].items()
            }
        return cls(
            users=list(meta["users"]),
            days=[date.fromisoformat(d) for d in meta["days"]],
            frame_labels=list(meta["frame_labels"]),
            aspects=aspects,
        )


def extract_measurements(
    events: Iterable[AuditEvent],
    feature_sets: Sequence[FeatureSet],
    frame_config: FrameConfig | None = None,
    *,
    start_day: date | None = None,
    end_day: date | None = None,
    users: Sequence[str] | None = None,
) -> MeasurementStore:
    """Run bucketing, extraction and novelty tracking over a whole event stream.

    Events of aspects without a feature set are ignored.  Days outside
    ``[start_day, end_day]`` still advance novelty (when earlier than
    ``start_day``) but are not stored.
    """
    cfg = frame_config or FrameConfig()
    sets_by_aspect = {fs.aspect: fs for fs in feature_sets}
    per_user = partition_by_user(ev for ev in events if ev.aspect in sets_by_aspect)

    # bucket[user][day][aspect][frame] -> events
    buckets: dict[str, dict[date, dict[Aspect, dict[int, list[AuditEvent]]]]] = {}
    all_days: set[date] = set()
    for user, evs in per_user.items():
        ub: dict = {}
        for ev in evs:
            day, frame = assign_timeframe(ev.timestamp, cfg)
            ub.setdefault(day, {}).setdefault(ev.aspect, {}).setdefault(frame.index, []).append(ev)
        buckets[user] = ub
        all_days.update(ub)

    if start_day is None or end_day is None:
        if not all_days:
            raise UsageError("no events and no explicit day range")
        start_day = start_day or min(all_days)
        end_day = end_day or max(all_days)
    if end_day < start_day:
        raise UsageError("end_day precedes start_day")
    n_days = (end_day - start_day).days + 1
    days = [start_day + timedelta(days=i) for i in range(n_days)]
    user_list = sorted(set(users) if users is not None else set(buckets))
    uidx = {u: i for i, u in enumerate(user_list)}
    T = cfg.n_frames
    arrays = {
        fs.aspect: np.zeros((len(user_list), len(fs.features), T, n_days))
        for fs in feature_sets
    }
    empty: list[AuditEvent] = []
    for user, ub in buckets.items():
        if user not in uidx:
            continue
        u = uidx[user]
        novelty = NoveltyState()
        for day in sorted(ub):
            if day > end_day:
                break
            by_aspect = ub[day]
            k = (day - start_day).days
            if k >= 0:
                for aspect, frames in by_aspect.items():
                    fs = sets_by_aspect[aspect]
                    arr = arrays[aspect]
                    for t in range(T):
                        vals = count_features(frames.get(t, empty), fs, novelty)
                        arr[u, :, t, k] = vals
            day_events = [ev for frames in by_aspect.values() for bucket in frames.values() for ev in bucket]
            novelty = advance_novelty(novelty, day_events, feature_sets, day)
    return MeasurementStore(
        users=user_list,
        days=days,
        frame_labels=list(cfg.labels),
        aspects={
            fs.aspect.value: AspectMeasurements(fs.names, arrays[fs.aspect]) for fs in feature_sets
        },
    )
