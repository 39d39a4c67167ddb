"""Per-aspect autoencoder ensemble, rank tables and the investigation-priority critic."""
from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import dataclass, field, replace
from datetime import date
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .neuralnet import AutoencoderModel, TrainConfig, init_model, reconstruction_errors, train

TieKey = Callable[[str], Hashable]


def lexicographic(user_id: str) -> str:
    return user_id


def pessimistic(labels: Mapping[str, bool]) -> TieKey:
    """Tie key placing normal users before abnormal ones (worst-case order)."""
    return lambda user: (bool(labels.get(user, False)), user)


def optimistic(labels: Mapping[str, bool]) -> TieKey:
    return lambda user: (not labels.get(user, False), user)


def aspect_seed(base_seed: int, aspect: str) -> int:
    return (int(base_seed) * 1_000_003 + zlib.crc32(aspect.encode())) % (2**32)


def train_ensemble(
    matrix_sets: Mapping[str, np.ndarray],
    config: TrainConfig | None = None,
    *,
    hidden_widths="auto",
    seed: int = 0,
) -> dict[str, AutoencoderModel]:
    """One independently seeded autoencoder per aspect."""
    if not matrix_sets:
        raise ConfigError("no aspects to train")
    config = config or TrainConfig()
    models = {}
    for aspect in sorted(matrix_sets):
        X = matrix_sets[aspect]
        try:
            X = np.asarray(X, dtype=np.float64)
        except ValueError:
            raise ConfigError(f"aspect {aspect}: matrices have inconsistent dimensions") from None
        if X.ndim != 2:
            raise ConfigError(f"aspect {aspect}: matrices have inconsistent dimensions")
        s = aspect_seed(seed, aspect)
        model = init_model(X.shape[1], hidden_widths, seed=s, eps_bn=config.eps_bn)
        train(model, X, replace(config, shuffle_seed=aspect_seed(config.shuffle_seed, aspect)))
        models[aspect] = model
    return models


@dataclass
class AspectScores:
    aspect: str
    end_day: date | None
    scores: dict[str, float]


@dataclass
class RankTable:
    aspect: str
    end_day: date | None
    ranks: dict[str, int]


def rank_users(scores: AspectScores | Mapping[str, float], tie_key: TieKey = lexicographic) -> RankTable:
    """Rank 1 is the highest score; equal scores are ordered by ``tie_key``."""
    if isinstance(scores, AspectScores):
        aspect, end_day, values = scores.aspect, scores.end_day, scores.scores
    else:
        aspect, end_day, values = "", None, scores
    if not values:
        raise DataError("no users to rank")
    for user, s in values.items():
        if s is None or math.isnan(s):
            raise DataError(f"score of {user} is NaN")
    order = sorted(values, key=lambda u: (-values[u], tie_key(u)))
    return RankTable(aspect, end_day, {u: i + 1 for i, u in enumerate(order)})


@dataclass(frozen=True)
class ListEntry:
    user_id: str
    priority: int
    aspect_ranks: tuple[int, ...]


@dataclass
class InvestigationList:
    end_day: date | None
    n: int
    aspects: list[str]
    entries: list[ListEntry] = field(default_factory=list)

    @property
    def users(self) -> list[str]:
        return [e.user_id for e in self.entries]

    def position(self, user_id: str) -> int:
        """1-based position of ``user_id`` in the list."""
        return self.users.index(user_id) + 1

    def to_rows(self) -> list[list]:
        rows = [["rank", "user", "priority", *[f"rank_{a}" for a in self.aspects]]]
        for i, e in enumerate(self.entries, 1):
            rows.append([i, e.user_id, e.priority, *e.aspect_ranks])
        return rows

    def write_csv(self, stream) -> None:
        csv.writer(stream, lineterminator="\n").writerows(self.to_rows())

    def to_json(self) -> dict:
        return {
            "end_day": self.end_day.isoformat() if self.end_day else None,
            "n": self.n,
            "aspects": self.aspects,
            "entries": [
                {"rank": i, "user": e.user_id, "priority": e.priority,
                 "aspect_ranks": dict(zip(self.aspects, e.aspect_ranks))}
                for i, e in enumerate(self.entries, 1)
            ],
        }

    def write_json(self, stream) -> None:
        json.dump(self.to_json(), stream, indent=1)
        stream.write("\n")


def prioritize(
    ranks: Mapping[str, Sequence[int]] | Sequence[RankTable],
    n: int,
    tie_key: TieKey = lexicographic,
    *,
    aspects: Sequence[str] | None = None,
    end_day: date | None = None,
) -> InvestigationList:
    """Order users by their ``n``-th best rank across aspects (smaller is more urgent)."""
    if ranks and isinstance(next(iter(ranks)), RankTable):
        tables: Sequence[RankTable] = ranks  # type: ignore[assignment]
        aspects = [t.aspect for t in tables]
        end_day = end_day or tables[0].end_day
        users = set(tables[0].ranks)
        for t in tables[1:]:
            if set(t.ranks) != users:
                raise ConfigError(f"aspect {t.aspect} ranks a different user set")
        per_user = {u: [t.ranks[u] for t in tables] for u in users}
    else:
        per_user = {u: list(r) for u, r in ranks.items()}  # type: ignore[union-attr]
    if not per_user:
        return InvestigationList(end_day, n, list(aspects or []), [])
    n_aspects = {len(r) for r in per_user.values()}
    if len(n_aspects) != 1:
        raise ConfigError("every user needs a rank in every aspect")
    (k,) = n_aspects
    if not 1 <= n <= k:
        raise ConfigError(f"N={n} out of range 1..{k}")
    entries = [ListEntry(u, sorted(r)[n - 1], tuple(r)) for u, r in per_user.items()]
    entries.sort(key=lambda e: (e.priority, tie_key(e.user_id)))
    return InvestigationList(end_day, n, list(aspects or [f"aspect{i}" for i in range(k)]), entries)


def score_users(model: AutoencoderModel, vectors: np.ndarray, users: Sequence[str], aspect: str,
                end_day: date | None = None) -> AspectScores:
    errs = reconstruction_errors(model, vectors)
    return AspectScores(aspect, end_day, {u: float(s) for u, s in zip(users, errs)})


def score_trend(
    model: AutoencoderModel,
    vector_for_day: Callable[[date], np.ndarray | None],
    days: Iterable[date],
) -> list[tuple[date, float | None]]:
    """Score of one user's window ending on each day; ``None`` marks burn-in days."""
    out = []
    for day in days:
        v = vector_for_day(day)
        out.append((day, None if v is None else float(reconstruction_errors(model, v)[0])))
    return out
