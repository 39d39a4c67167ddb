"""Variant-aware detection pipeline: measurements -> representations -> models -> lists.

The representation of one user on one end day is a flat [0, 1] vector.  Two
kinds exist:

* ``deviation``: the compound deviation matrix (weighted, clamped z-scores of
  the user and optionally their group over the trailing window);
* ``single_day``: the raw measurements of the end day itself, divided by the
  largest value seen during training and clipped to [0, 1].

Variants choose the representation, the group block, weighting, frame
granularity and whether aspects are scored separately or by one model.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from typing import Mapping, Sequence

import numpy as np

from .deviation import DeviationCube, DeviationParams, group_index, group_mean_series
from .errors import ConfigError, UsageError
from .ingest import AuditEvent, FrameConfig, MeasurementStore, extract_measurements, feature_sets_named
from .neuralnet import AutoencoderModel, TrainConfig, reconstruction_errors
from .scoring import (
    AspectScores,
    InvestigationList,
    ListEntry,
    TieKey,
    lexicographic,
    prioritize,
    rank_users,
    train_ensemble,
)

logger = logging.getLogger(__name__)

VARIANTS = ("acobe", "one_day", "no_group", "all_in_one", "baseline", "base_ff")
ALL_IN_ONE = "all"

# Knobs fixed by each variant's definition.
_VARIANT_KNOBS = {
    "acobe": dict(representation="deviation", group_block=True, weighting=True, frames="two", coarse=False, all_in_one=False),
    "one_day": dict(representation="single_day", group_block=True, weighting=False, frames="two", coarse=False, all_in_one=False),
    "no_group": dict(representation="deviation", group_block=False, weighting=True, frames="two", coarse=False, all_in_one=False),
    "all_in_one": dict(representation="deviation", group_block=True, weighting=True, frames="two", coarse=False, all_in_one=True),
    "baseline": dict(representation="single_day", group_block=False, weighting=False, frames="hourly", coarse=True, all_in_one=False),
    "base_ff": dict(representation="single_day", group_block=False, weighting=False, frames="hourly", coarse=False, all_in_one=False),
}


@dataclass(frozen=True)
class AblationConfig:
    variant: str = "acobe"
    representation: str = "deviation"
    group_block: bool = True
    weighting: bool = True
    frames: str = "two"
    coarse: bool = False
    all_in_one: bool = False

    def __post_init__(self):
        if self.variant not in _VARIANT_KNOBS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        want = _VARIANT_KNOBS[self.variant]
        have = {k: getattr(self, k) for k in want}
        if have != want:
            bad = sorted(k for k in want if have[k] != want[k])
            raise ConfigError(f"variant {self.variant} requires {', '.join(f'{k}={want[k]!r}' for k in bad)}")

    @classmethod
    def for_variant(cls, variant: str) -> "AblationConfig":
        if variant not in _VARIANT_KNOBS:
            raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        return cls(variant=variant, **_VARIANT_KNOBS[variant])

    def feature_preset(self, fine_preset: str) -> str:
        return "coarse" if self.coarse else fine_preset

    def frame_config(self) -> FrameConfig:
        return FrameConfig.named(self.frames)


@dataclass
class ModelConfig:
    """Detection knobs shared by all variants."""

    omega: int = 30
    delta_cap: float = 3.0
    eps: float = 0.01
    window_days: int | None = None
    features: str = "synthetic"
    hidden_widths: object = "desk"
    epochs: int = 30
    batch_size: int = 32
    train_stride: int = 2
    max_train_samples: int | None = 4000
    critic_n: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.train_stride < 1:
            raise ConfigError("train_stride must be >= 1")
        if self.max_train_samples is not None and self.max_train_samples < 2:
            raise ConfigError("max_train_samples must be >= 2")
        if self.critic_n < 1:
            raise ConfigError("critic_n must be >= 1")
        self.deviation_params(True)
        self.train_config()

    def deviation_params(self, weighting: bool) -> DeviationParams:
        return DeviationParams(omega=self.omega, delta_cap=self.delta_cap, eps=self.eps,
                               weighting=weighting, window_days=self.window_days)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, shuffle_seed=self.seed)

    def to_json(self) -> dict:
        d = asdict(self)
        if not isinstance(self.hidden_widths, str):
            d["hidden_widths"] = list(self.hidden_widths)
        return d


# ---------------------------------------------------------------------------
# Representations


class Representation:
    aspect: str
    users: list[str]
    days: list[date]
    first_scorable: int
    dim: int

    def vectors(self, k: int) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError


class DeviationRepresentation(Representation):
    def __init__(self, store: MeasurementStore, aspect: str, params: DeviationParams,
                 groups: Mapping[str, str] | None, group_block: bool):
        self.cube = DeviationCube.from_store(store, aspect, params, groups, group_block=group_block)
        self.aspect = aspect
        self.users = store.users
        self.days = store.days
        self.first_scorable = params.first_scorable
        self.dim = self.cube.dim

    def vectors(self, k: int) -> np.ndarray:
        return self.cube.vectors(k)


class SingleDayRepresentation(Representation):
    """End-day measurements scaled by their training-period maxima."""

    def __init__(self, store: MeasurementStore, aspect: str, groups: Mapping[str, str] | None,
                 group_block: bool, burn_in: int, train_end: int):
        values = store.aspects[aspect].values
        self.aspect = aspect
        self.users = store.users
        self.days = store.days
        self.first_scorable = burn_in
        _, member = group_index(store.users, groups)
        self._member = member
        self._user = values
        self._group = group_mean_series(values, member, int(member.max()) + 1) if group_block else None
        hi = train_end + 1
        self._user_scale = np.maximum(values[..., burn_in:hi].max(axis=(0, 3)), 1.0)
        if self._group is not None:
            self._group_scale = np.maximum(self._group[..., burn_in:hi].max(axis=(0, 3)), 1.0)
        F, T = values.shape[1:3]
        self.dim = (2 if group_block else 1) * F * T

    def vectors(self, k: int) -> np.ndarray:
        if k < self.first_scorable:
            raise UsageError(f"day index {k} inside burn-in")
        parts = [np.clip(self._user[..., k] / self._user_scale, 0.0, 1.0).reshape(len(self.users), -1)]
        if self._group is not None:
            g = self._group[self._member, :, :, k] / self._group_scale
            parts.append(np.clip(g, 0.0, 1.0).reshape(len(self.users), -1))
        return np.concatenate(parts, axis=1)


class ConcatRepresentation(Representation):
    """All aspects side by side, for the single-model variant."""

    def __init__(self, parts: Sequence[Representation]):
        self.parts = list(parts)
        self.aspect = ALL_IN_ONE
        self.users = parts[0].users
        self.days = parts[0].days
        self.first_scorable = max(p.first_scorable for p in parts)
        self.dim = sum(p.dim for p in parts)

    def vectors(self, k: int) -> np.ndarray:
        return np.concatenate([p.vectors(k) for p in self.parts], axis=1)


def build_representations(
    store: MeasurementStore,
    groups: Mapping[str, str] | None,
    variant: AblationConfig,
    model_cfg: ModelConfig,
    train_end: int,
) -> dict[str, Representation]:
    params = model_cfg.deviation_params(variant.weighting)
    reps: dict[str, Representation] = {}
    for aspect in sorted(store.aspects):
        if variant.representation == "deviation":
            reps[aspect] = DeviationRepresentation(store, aspect, params, groups, variant.group_block)
        else:
            # the same burn-in as the deviation variants keeps novelty warm and splits comparable
            reps[aspect] = SingleDayRepresentation(store, aspect, groups, variant.group_block,
                                                   params.first_scorable, train_end)
    if train_end < max(r.first_scorable for r in reps.values()):
        raise ConfigError("training period ends inside the burn-in")
    if variant.all_in_one:
        return {ALL_IN_ONE: ConcatRepresentation([reps[a] for a in sorted(reps)])}
    return reps


# ---------------------------------------------------------------------------
# Running


@dataclass
class Dataset:
    events: list[AuditEvent]
    groups: dict[str, str]
    users: list[str]
    start: date
    end: date
    train_end: date
    labels: dict[str, bool] | None = None


@dataclass
class RunResult:
    variant: str
    aspects: list[str]
    users: list[str]
    test_days: list[date]
    scores: dict[str, np.ndarray]  # aspect -> (users, test days)
    train_scores: dict[str, np.ndarray]  # aspect -> flat training-sample scores
    dims: dict[str, int]
    models: dict[str, AutoencoderModel] = field(repr=False, default_factory=dict)
    daily_lists: list[InvestigationList] = field(default_factory=list)
    period_list: InvestigationList | None = None

    def peak_scores(self) -> dict[str, dict[str, float]]:
        return {a: dict(zip(self.users, s.max(axis=1).tolist())) for a, s in self.scores.items()}

    def day_scores(self, aspect: str, day: date) -> dict[str, float]:
        j = self.test_days.index(day)
        return dict(zip(self.users, self.scores[aspect][:, j].tolist()))


def extract_for_variant(dataset: Dataset, variant: AblationConfig, model_cfg: ModelConfig) -> MeasurementStore:
    fsets = feature_sets_named(variant.feature_preset(model_cfg.features))
    return extract_measurements(dataset.events, fsets, variant.frame_config(),
                                start_day=dataset.start, end_day=dataset.end, users=dataset.users)


def training_matrix(rep: Representation, train_end: int, model_cfg: ModelConfig, seed: int) -> np.ndarray:
    ks = range(rep.first_scorable, train_end + 1, model_cfg.train_stride)
    X = np.concatenate([rep.vectors(k) for k in ks], axis=0)
    cap = model_cfg.max_train_samples
    if cap is not None and len(X) > cap:
        rng = np.random.default_rng([seed, 11])
        X = X[np.sort(rng.choice(len(X), cap, replace=False))]
    return X


def fit_models(reps: Mapping[str, Representation], train_end: int, model_cfg: ModelConfig):
    sets = {a: training_matrix(r, train_end, model_cfg, model_cfg.seed) for a, r in reps.items()}
    for a, X in sets.items():
        logger.info("aspect %s: %d training vectors of dim %d", a, *X.shape)
    models = train_ensemble(sets, model_cfg.train_config(), hidden_widths=model_cfg.hidden_widths,
                            seed=model_cfg.seed)
    train_scores = {a: reconstruction_errors(models[a], X) for a, X in sets.items()}
    return models, train_scores


def score_days(models: Mapping[str, AutoencoderModel], reps: Mapping[str, Representation],
               day_indices: Sequence[int]) -> dict[str, np.ndarray]:
    out = {}
    for a, rep in reps.items():
        cols = [reconstruction_errors(models[a], rep.vectors(k)) for k in day_indices]
        out[a] = np.stack(cols, axis=1) if cols else np.zeros((len(rep.users), 0))
    return out


def investigation_lists(result: RunResult, n: int, tie_key: TieKey = lexicographic) -> None:
    """Fill ``daily_lists`` and the period-level ``period_list``.

    The period list ranks each user by their best (smallest) daily priority
    over the test days and reports the aspect ranks of that day.  Combining
    per-aspect peaks from different days would let a normal user assemble a
    high priority out of unrelated bad days.
    """
    if result.aspects == [ALL_IN_ONE]:
        n = 1  # a single model yields a single rank per user
    daily = []
    for j, day in enumerate(result.test_days):
        tables = [rank_users(AspectScores(a, day, dict(zip(result.users, result.scores[a][:, j].tolist()))), tie_key)
                  for a in result.aspects]
        daily.append(prioritize(tables, n, tie_key, end_day=day))
    result.daily_lists = daily
    best: dict[str, ListEntry] = {}
    for inv in daily:
        for e in inv.entries:
            if e.user_id not in best or e.priority < best[e.user_id].priority:
                best[e.user_id] = e
    entries = sorted(best.values(), key=lambda e: (e.priority, tie_key(e.user_id)))
    end = result.test_days[-1] if result.test_days else None
    result.period_list = InvestigationList(end, n, list(result.aspects), entries)


def run_variant(
    dataset: Dataset,
    variant: AblationConfig | str,
    model_cfg: ModelConfig | None = None,
    *,
    store: MeasurementStore | None = None,
    tie_key: TieKey = lexicographic,
) -> RunResult:
    if isinstance(variant, str):
        variant = AblationConfig.for_variant(variant)
    model_cfg = model_cfg or ModelConfig()
    store = store or extract_for_variant(dataset, variant, model_cfg)
    train_end = store.day_index(dataset.train_end)
    reps = build_representations(store, dataset.groups, variant, model_cfg, train_end)
    models, train_scores = fit_models(reps, train_end, model_cfg)
    test_idx = list(range(train_end + 1, len(store.days)))
    scores = score_days(models, reps, test_idx)
    result = RunResult(
        variant=variant.variant,
        aspects=sorted(reps),
        users=list(store.users),
        test_days=[store.days[k] for k in test_idx],
        scores=scores,
        train_scores=train_scores,
        dims={a: r.dim for a, r in reps.items()},
        models=dict(models),
    )
    investigation_lists(result, model_cfg.critic_n, tie_key)
    return result


def dataset_from_synth(org, events, labels=None) -> Dataset:
    return Dataset(
        events=list(events),
        groups=org.groups,
        users=org.users,
        start=org.start,
        end=org.end,
        train_end=org.train_end,
        labels=None if labels is None else labels.abnormal,
    )


def day_after_training(dataset: Dataset, offset: int) -> date:
    return dataset.train_end + timedelta(days=offset)


__all__ = [
    "VARIANTS", "AblationConfig", "ModelConfig", "Dataset", "RunResult", "Representation",
    "DeviationRepresentation", "SingleDayRepresentation", "ConcatRepresentation",
    "build_representations", "extract_for_variant", "training_matrix", "fit_models", "score_days",
    "investigation_lists", "run_variant", "dataset_from_synth", "day_after_training"
]
