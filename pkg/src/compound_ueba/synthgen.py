"""Synthetic organization audit logs with injectable attack scenarios.

Every user gets a habit profile: per-aspect Poisson rates for the working and
off frame, drawn around organization-wide defaults with log-normal jitter,
plus a personal repertoire of hosts, files, domains, processes and registry
keys.  Weekends and holidays scale human activity down.  Environmental
changes bump one aspect for a whole group on given days, optionally routing
part of the traffic to a brand-new shared object (a new service) or making
HTTP requests fail (an outage).

Scenarios only ever add events for the labeled victim; the rest of the
stream is left untouched.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta, timezone
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .ingest import Aspect, AuditEvent

logger = logging.getLogger(__name__)

# Mean events per frame on a working day: (working frame, off frame).
DEFAULT_RATES: dict[str, tuple[float, float]] = {
    "Logon": (2.0, 0.3),
    "Device": (1.0, 0.05),
    "File": (8.0, 0.8),
    "Http": (12.0, 1.5),
    "Command": (1.5, 0.4),
    "Config": (0.4, 0.15),
}
# Share of each aspect that follows the weekday rhythm (rest is machine-initiated).
HUMAN_SHARE = {"Logon": 1.0, "Device": 1.0, "File": 0.9, "Http": 0.9, "Command": 0.6, "Config": 0.5}
REPERTOIRE = {"Logon": 3, "Device": 2, "File": 40, "Http": 25, "Command": 12, "Config": 6}
NEW_OBJECT_PROB = {"Logon": 0.01, "Device": 0.01, "File": 0.03, "Http": 0.03, "Command": 0.01, "Config": 0.02}
FILETYPES = ("doc", "exe", "jpg", "pdf", "txt", "zip")
SHARED_DOMAINS = tuple(f"site{i:03d}.com" for i in range(300))

WORK_START = 6 * 3600
FRAME_LEN = 12 * 3600


@dataclass
class EnvChange:
    day: int
    aspect: str
    group: str
    rate_factor: float = 2.5
    new_object_share: float = 0.3
    failure_share: float = 0.0
    duration: int = 1


@dataclass
class OrgSpec:
    n_users: int = 200
    n_groups: int = 4
    train_days: int = 180
    test_days: int = 30
    start: date = date(2010, 1, 4)
    rates: dict = field(default_factory=lambda: dict(DEFAULT_RATES))
    user_jitter: float = 0.6
    weekend_factor: float = 0.1
    holidays: list[int] = field(default_factory=list)
    # None -> a seeded schedule with one change every `env_change_every` days
    env_changes: list[EnvChange] | None = None
    env_change_every: int = 9
    env_change_days: int = 1
    device_user_share: float = 0.35
    http_failure_rate: float = 0.03
    # requests to never-visited domains fail more often (typos, dead links)
    novel_failure_rate: float = 0.25
    novelty_jitter: float = 0.8
    # power users (developers, automation owners) touch many new objects,
    # hit many failing endpoints and stay active at night
    power_user_share: float = 0.1
    power_novelty_mult: float = 6.0
    power_failure_mult: float = 5.0
    power_off_mult: float = 3.0
    seed: int = 0
    min_history_days: int = 30

    def __post_init__(self):
        if self.n_users < 1 or self.n_groups < 1 or self.n_groups > self.n_users:
            raise ConfigError("need 1 <= n_groups <= n_users")
        if any(r < 0 for pair in self.rates.values() for r in pair):
            raise ConfigError("rates must be >= 0")
        if self.train_days < self.min_history_days:
            raise ConfigError(f"train_days must cover at least {self.min_history_days} days of history")
        if self.env_changes is not None:
            self.env_changes = [EnvChange(**c) if isinstance(c, dict) else c for c in self.env_changes]
        if isinstance(self.start, str):
            self.start = date.fromisoformat(self.start)

    @property
    def n_days(self) -> int:
        return self.train_days + self.test_days

    @property
    def end(self) -> date:
        return self.start + timedelta(days=self.n_days - 1)

    @property
    def train_end(self) -> date:
        return self.start + timedelta(days=self.train_days - 1)

    @property
    def users(self) -> list[str]:
        width = len(str(self.n_users - 1))
        return [f"u{i:0{width}d}" for i in range(self.n_users)]

    @property
    def groups(self) -> dict[str, str]:
        return {u: f"g{i % self.n_groups}" for i, u in enumerate(self.users)}

    def to_json(self) -> dict:
        d = asdict(self)
        d["start"] = self.start.isoformat()
        d["env_changes"] = [asdict(c) for c in self.resolved_env_changes()]
        return d

    @classmethod
    def from_json(cls, data: dict) -> "OrgSpec":
        return cls(**data)

    def resolved_env_changes(self) -> list[EnvChange]:
        if self.env_changes is not None:
            return list(self.env_changes)
        rng = np.random.default_rng([self.seed, 7919])
        groups = sorted(set(self.groups.values()))
        out = []
        for day in range(5, self.n_days, self.env_change_every):
            aspect = str(rng.choice(["Http", "File", "Command"]))
            out.append(EnvChange(
                day=int(day), aspect=aspect, group=str(rng.choice(groups)),
                rate_factor=float(rng.uniform(2.0, 3.5)),
                new_object_share=float(rng.uniform(0.2, 0.5)),
                failure_share=float(rng.uniform(0.2, 0.5)) if aspect == "Http" else 0.0,
                duration=self.env_change_days,
            ))
        return out


@dataclass
class UserProfile:
    user_id: str
    group: str
    rates: dict[str, np.ndarray]  # aspect -> (working, off) mean counts
    repertoire: dict[str, list[str]]
    failure_rate: float
    novelty: dict[str, float]  # aspect -> probability that an event touches a new object
    power: bool = False


def _epoch(day: date) -> int:
    return int(datetime(day.year, day.month, day.day, tzinfo=timezone.utc).timestamp())


def user_profiles(org: OrgSpec) -> list[UserProfile]:
    groups = org.groups
    out = []
    for i, user in enumerate(org.users):
        rng = np.random.default_rng([org.seed, 1, i])
        power = bool(rng.random() < org.power_user_share)
        rates = {}
        for aspect, (work, off) in sorted(org.rates.items()):
            mult = rng.lognormal(0.0, org.user_jitter)
            # off-frame habits vary independently of working-frame habits
            off_mult = rng.lognormal(0.0, org.user_jitter)
            r = np.array([work * mult, off * off_mult])
            if power and aspect in ("Http", "Command"):
                r[1] *= org.power_off_mult
            if aspect == "Device" and rng.random() >= org.device_user_share:
                r[:] = 0.0
            rates[aspect] = r
        rep = {
            "Logon": [f"pc-{user}"] + [f"srv{int(k):02d}" for k in rng.choice(40, REPERTOIRE["Logon"] - 1, replace=False)],
            "Device": [f"pc-{user}"] + [f"pc-shared{int(k):02d}" for k in rng.choice(20, REPERTOIRE["Device"] - 1, replace=False)],
            "File": [f"f-{user}-{k:03d}" for k in range(REPERTOIRE["File"] // 2)]
            + [f"f-{groups[user]}-{int(k):03d}" for k in rng.choice(200, REPERTOIRE["File"] // 2, replace=False)],
            "Http": [SHARED_DOMAINS[int(k)] for k in rng.choice(len(SHARED_DOMAINS), REPERTOIRE["Http"], replace=False)],
            "Command": [f"proc{int(k):02d}.exe" for k in rng.choice(40, REPERTOIRE["Command"], replace=False)],
            "Config": [f"HKLM/key{int(k):02d}" for k in rng.choice(30, REPERTOIRE["Config"], replace=False)],
        }
        nov_mult = org.power_novelty_mult if power else 1.0
        novelty = {a: float(min(0.5, p * nov_mult * rng.lognormal(0.0, org.novelty_jitter)))
                   for a, p in sorted(NEW_OBJECT_PROB.items())}
        failure = 0.0
        if org.http_failure_rate > 0:
            failure = float(min(0.6, (org.power_failure_mult if power else 1.0)
                                * rng.lognormal(np.log(org.http_failure_rate), 0.5)))
        out.append(UserProfile(user, groups[user], rates, rep, failure, novelty, power))
    return out


def typical_users(org: OrgSpec) -> list[str]:
    """Users that are not power users, in id order."""
    return [p.user_id for p in user_profiles(org) if not p.power]


def pick_victim(org: OrgSpec, index: int = 0) -> str:
    """Deterministic victim for the ``index``-th scenario: a typical user, spread out by index."""
    candidates = typical_users(org)
    return candidates[(17 + 31 * index) % len(candidates)]


def _day_factors(org: OrgSpec) -> np.ndarray:
    """(n_days,) multiplier for human-initiated activity."""
    f = np.ones(org.n_days)
    for k in range(org.n_days):
        if (org.start + timedelta(days=k)).weekday() >= 5:
            f[k] = org.weekend_factor
    for h in org.holidays:
        if 0 <= h < org.n_days:
            f[h] = org.weekend_factor
    return f


def _zipf_probs(n: int) -> np.ndarray:
    p = 1.0 / np.arange(1, n + 1)
    return p / p.sum()


def _make_event(user, ts, aspect, action, obj, attrs=None) -> AuditEvent:
    return AuditEvent(user, float(ts), Aspect(aspect), action, obj, attrs or {})


def _aspect_events(rng, org, prof: UserProfile, aspect: str, counts: np.ndarray,
                   env_today: dict[int, EnvChange]) -> list[AuditEvent]:
    """Events of one aspect given (frames, days) counts."""
    T, N = counts.shape
    n = int(counts.sum())
    if n == 0:
        return []
    frames = np.repeat(np.tile(np.arange(T), N), counts.T.ravel())
    days = np.repeat(np.repeat(np.arange(N), T), counts.T.ravel())
    offsets = rng.integers(0, FRAME_LEN, size=n)
    rep = prof.repertoire[aspect]
    obj_idx = rng.choice(len(rep), size=n, p=_zipf_probs(len(rep)))
    novel = rng.random(n) < prof.novelty[aspect]
    u01 = rng.random(n)
    u02 = rng.random(n)
    ft = rng.integers(0, len(FILETYPES), size=n)
    base = _epoch(org.start)
    events = []
    user = prof.user_id
    for j in range(n):
        k = int(days[j])
        ts = base + k * 86400 + WORK_START + int(frames[j]) * FRAME_LEN + int(offsets[j])
        obj = f"{aspect.lower()}-new-{user}-{k}-{j}" if novel[j] else rep[obj_idx[j]]
        env = env_today.get(k)
        env_obj = env is not None and env.aspect == aspect and u02[j] < env.new_object_share
        if env_obj:
            obj = f"env-{aspect.lower()}-{env.group}-{env.day}"
        if aspect == "Logon":
            events.append(_make_event(user, ts, aspect, "logon", obj))
            events.append(_make_event(user, min(ts + 1800, ts + FRAME_LEN), aspect, "logoff", obj))
        elif aspect == "Device":
            events.append(_make_event(user, ts, aspect, "connect", obj))
            events.append(_make_event(user, ts + 600, aspect, "disconnect", obj))
        elif aspect == "File":
            if u01[j] < 0.55:
                action, direction = "open", ("local" if u02[j] < 0.6 else "remote")
            elif u01[j] < 0.85:
                action, direction = "write", ("local" if u02[j] < 0.7 else "remote")
            elif u01[j] < 0.95:
                action, direction = "copy", ("remote-to-local" if u02[j] < 0.7 else "local-to-remote")
            else:
                action, direction = "delete", "local"
            events.append(_make_event(user, ts, aspect, action, obj, {"direction": direction}))
        elif aspect == "Http":
            if u01[j] < 0.85:
                action = "visit"
            elif u01[j] < 0.96:
                action = "download"
            else:
                action = "upload"
            if env_obj:
                fail_p = 0.0  # a new service that works
            elif novel[j]:
                fail_p = org.novel_failure_rate
            else:
                fail_p = prof.failure_rate
                if env is not None and env.aspect == "Http":
                    fail_p = max(fail_p, env.failure_share)  # outage of known services
            status = "404" if rng.random() < fail_p else "200"
            attrs = {"status": status}
            if action != "visit":
                attrs["filetype"] = FILETYPES[ft[j]]
            events.append(_make_event(user, ts, aspect, action, obj, attrs))
        elif aspect == "Command":
            events.append(_make_event(user, ts, aspect, "exec", obj))
        else:
            events.append(_make_event(user, ts, aspect, "modify", obj))
    return events


def _sort_key(ev: AuditEvent):
    return (ev.timestamp, ev.user_id, ev.aspect.value, ev.action, ev.object, tuple(sorted(ev.attrs.items())))


def generate(org: OrgSpec) -> list[AuditEvent]:
    """Anomaly-free event stream, sorted by timestamp (deterministic per seed)."""
    day_f = _day_factors(org)
    changes = org.resolved_env_changes()
    events: list[AuditEvent] = []
    for i, prof in enumerate(user_profiles(org)):
        rng = np.random.default_rng([org.seed, 2, i])
        env_today: dict[int, EnvChange] = {}
        for c in changes:
            if c.group == prof.group:
                for k in range(c.day, min(c.day + c.duration, org.n_days)):
                    env_today[k] = c
        for aspect in sorted(prof.rates):
            human = HUMAN_SHARE.get(aspect, 1.0)
            scale = human * day_f + (1 - human)  # (N,)
            lam = prof.rates[aspect][:, None] * scale[None, :]  # (T, N)
            for k, c in env_today.items():
                if c.aspect == aspect:
                    lam[:, k] *= c.rate_factor
            counts = rng.poisson(lam)
            events.extend(_aspect_events(rng, org, prof, aspect, counts, env_today))
    events.sort(key=_sort_key)
    return events


# ---------------------------------------------------------------------------
# Scenarios

SCENARIOS = ("after_hours_exfil", "job_search_thumb_drive", "ransomware_like", "botnet_like")


@dataclass
class ScenarioSpec:
    scenario: str
    victim: str
    start: date
    duration: int = 10
    intensity: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.start, str):
            self.start = date.fromisoformat(self.start)
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.duration < 1:
            raise ConfigError("duration must be >= 1")

    @property
    def end(self) -> date:
        return self.start + timedelta(days=self.duration - 1)

    def to_json(self) -> dict:
        d = asdict(self)
        d["start"] = self.start.isoformat()
        return d


@dataclass
class LabelSet:
    """``user -> None`` (normal) or ``(first_day, last_day)`` of the abnormal period."""

    labels: dict[str, tuple[date, date] | None]

    @property
    def abnormal(self) -> dict[str, bool]:
        return {u: r is not None for u, r in self.labels.items()}

    def abnormal_users(self) -> list[str]:
        return sorted(u for u, r in self.labels.items() if r is not None)

    def to_json(self) -> dict:
        return {
            "users": {
                u: ({"label": "normal"} if r is None
                    else {"label": "abnormal", "start": r[0].isoformat(), "end": r[1].isoformat()})
                for u, r in sorted(self.labels.items())
            }
        }

    @classmethod
    def from_json(cls, data: dict) -> "LabelSet":
        out = {}
        for u, rec in data["users"].items():
            if rec["label"] == "normal":
                out[u] = None
            else:
                out[u] = (date.fromisoformat(rec["start"]), date.fromisoformat(rec["end"]))
        return cls(out)

    def merge(self, other: "LabelSet") -> "LabelSet":
        merged = dict(self.labels)
        for u, r in other.labels.items():
            if r is not None:
                merged[u] = r
            else:
                merged.setdefault(u, None)
        return LabelSet(merged)


def _times(rng, day: date, frame: str, n: int) -> list[int]:
    base = _epoch(day) + WORK_START + (FRAME_LEN if frame == "off" else 0)
    return sorted(int(base + x) for x in rng.integers(0, FRAME_LEN, size=n))


def _count(rng, mean: float) -> int:
    return int(max(1, round(mean * rng.uniform(0.8, 1.2))))


def scenario_events(spec: ScenarioSpec) -> list[AuditEvent]:
    rng = np.random.default_rng([spec.seed, 3])
    v, I = spec.victim, spec.intensity
    tag = f"{spec.scenario}-{spec.seed}"
    out: list[AuditEvent] = []

    def add(day, frame, n, aspect, action, obj_fn, attrs=None):
        for j, ts in enumerate(_times(rng, day, frame, n)):
            out.append(_make_event(v, ts, aspect, action, obj_fn(j), attrs))

    days = [spec.start + timedelta(days=k) for k in range(spec.duration)]
    if spec.scenario == "after_hours_exfil":
        for k, day in enumerate(days):
            add(day, "off", _count(rng, 3 * I), "Logon", "logon", lambda j: "pc-exfil")
            add(day, "off", _count(rng, 4 * I), "Device", "connect", lambda j, k=k: f"thumb-{tag}-{k}-{j}")
            add(day, "off", _count(rng, 5 * I), "File", "copy", lambda j, k=k: f"secret-{tag}-{k}-{j}",
                {"direction": "local-to-remote"})
            add(day, "off", _count(rng, 4 * I), "Http", "upload", lambda j: "wikileaks.org",
                {"filetype": "doc", "status": "200"})
    elif spec.scenario == "job_search_thumb_drive":
        half = max(1, spec.duration // 2)
        for k, day in enumerate(days):
            if k < half:
                add(day, "working", _count(rng, 4 * I), "Http", "upload", lambda j, k=k: f"jobs{k}-{j}-{tag}.com",
                    {"filetype": "doc", "status": "200"})
                add(day, "working", _count(rng, 6 * I), "Http", "visit", lambda j, k=k: f"jobs{k}-{j % 3}-{tag}.com",
                    {"status": "200"})
            else:
                add(day, "working", _count(rng, 10 * I), "Device", "connect", lambda j, k=k: f"thumb-{tag}-{k}-{j % 3}")
                add(day, "working", _count(rng, 20 * I), "File", "copy", lambda j, k=k: f"proj-{tag}-{k}-{j}",
                    {"direction": "local-to-remote"})
    elif spec.scenario == "ransomware_like":
        day = days[0]
        add(day, "working", _count(rng, 15 * I), "Command", "exec", lambda j: f"wcry-{tag}-{j}.exe")
        add(day, "working", _count(rng, 10 * I), "Config", "modify", lambda j: f"HKLM/wcry-{tag}-{j}")
        for action in ("write", "delete"):
            add(day, "working", _count(rng, 120 * I), "File", action, lambda j, a=action: f"enc-{tag}-{a}-{j}",
                {"direction": "local"})
        add(day, "off", _count(rng, 60 * I), "File", "write", lambda j: f"enc-{tag}-off-{j}", {"direction": "local"})
        for day in days[1:]:
            add(day, "working", _count(rng, 3 * I), "Command", "exec", lambda j: f"wcry-{tag}-{j % 2}.exe")
    else:  # botnet_like
        day0 = days[0]
        add(day0, "working", _count(rng, 2 * I), "Command", "exec", lambda j: f"downloader-{tag}-{j}.exe")
        add(day0, "working", 1, "File", "delete", lambda j: f"downloader-{tag}.exe", {"direction": "local"})
        add(day0, "working", _count(rng, 2 * I), "Config", "modify", lambda j: f"HKCU/run-{tag}-{j}")
        # after a quiet spell the bot wakes every night: it re-asserts its run key
        # and spawns a helper; it probes generated domains whenever the host is
        # up and polls its C&C
        for k, day in enumerate(days[2:], start=2):
            add(day, "off", 2, "Command", "exec", lambda j: (f"zbot-{tag}.exe", f"rundll-{tag}.exe")[j])
            add(day, "off", 1, "Config", "modify", lambda j: f"HKCU/run-{tag}-0")
            for frame in ("working", "off"):
                add(day, frame, _count(rng, 8 * I), "Http", "visit",
                    lambda j, k=k: f"{int(rng.integers(0, 2**32)):08x}{k}.biz", {"status": "404"})
            add(day, "off", 1, "Http", "visit", lambda j: f"cc-{tag}.net", {"status": "200"})
    return out


def inject(events: Sequence[AuditEvent], scenario: ScenarioSpec) -> tuple[list[AuditEvent], LabelSet]:
    """Merge the scenario's events for the victim into ``events``."""
    users = {ev.user_id for ev in events}
    if scenario.victim not in users:
        raise ConfigError(f"victim {scenario.victim!r} has no events in the stream")
    extra = scenario_events(scenario)
    merged = sorted([*events, *extra], key=_sort_key)
    labels = LabelSet({u: None for u in users})
    labels.labels[scenario.victim] = (scenario.start, scenario.end)
    return merged, labels


def labels_for(users: Iterable[str], scenarios: Sequence[ScenarioSpec] = ()) -> LabelSet:
    labels = LabelSet({u: None for u in users})
    for s in scenarios:
        labels.labels[s.victim] = (s.start, s.end)
    return labels
