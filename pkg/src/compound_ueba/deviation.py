"""Weighted, clamped behavioral deviations and compound deviation matrices.

For a measurement ``m`` on day ``d`` and the ``omega - 1`` measurements of
the same (feature, frame) on the days before ``d``::

    std*   = max(population_std(history), eps)
    sigma  = clamp((m - mean(history)) / std*, -delta_cap, delta_cap)
    weight = 1 / log2(max(std*, 2))

A compound matrix for ``(user, end_day)`` stacks the user's weighted
deviations over the ``window_days`` days ending at ``end_day`` on top of the
same quantity computed from the group-mean measurement series.  Flattening
order is user block then group block; inside a block feature-major, then
frame, then day ascending (C order of a ``(F, T, D)`` array).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import date
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .errors import ConfigError, GapError, UsageError
from .ingest import MeasurementStore


@dataclass(frozen=True)
class DeviationParams:
    omega: int = 30
    delta_cap: float = 3.0
    eps: float = 0.01
    weighting: bool = True
    # Matrix width in days; defaults to omega.
    window_days: int | None = None

    def __post_init__(self):
        if self.omega < 2:
            raise ConfigError("omega must be >= 2")
        if not self.delta_cap > 0:
            raise ConfigError("delta_cap must be > 0")
        if not self.eps > 0:
            raise ConfigError("eps must be > 0")
        if self.window_days is not None and self.window_days < 1:
            raise ConfigError("window_days must be >= 1")

    @property
    def days(self) -> int:
        return self.window_days or self.omega

    @property
    def first_scorable(self) -> int:
        """Index of the first end day whose whole window has warmed histories."""
        return (self.omega - 1) + (self.days - 1)


def _population_std(values: np.ndarray) -> float:
    mean = values.sum() / values.size
    return math.sqrt(float(((values - mean) ** 2).sum()) / values.size)


def _history(history, params: DeviationParams | None) -> np.ndarray:
    h = np.asarray(history, dtype=np.float64)
    if h.ndim != 1 or h.size == 0:
        raise UsageError("history must be a nonempty 1-d sequence")
    if params is not None and h.size != params.omega - 1:
        raise UsageError(f"history has {h.size} entries, expected omega-1={params.omega - 1} (burn-in not done?)")
    return h


def compute_sigma(m: float, history, params: DeviationParams) -> float:
    h = _history(history, params)
    std = max(_population_std(h), params.eps)
    delta = (m - h.sum() / h.size) / std
    return min(max(delta, -params.delta_cap), params.delta_cap)


def compute_weight(history) -> float:
    h = _history(history, None)
    return 1.0 / math.log2(max(_population_std(h), 2.0))


def group_measurement(members_m: Sequence[float]) -> float:
    if len(members_m) == 0:
        raise ConfigError("group has no members")
    return math.fsum(members_m) / len(members_m)


def group_index(users: Sequence[str], groups: Mapping[str, str] | None) -> tuple[list[str], np.ndarray]:
    """Group names (sorted) and the group index of every user.

    Users missing from ``groups`` fall into a shared ``"all"`` group.
    """
    groups = groups or {}
    names = sorted({groups.get(u, "all") for u in users})
    pos = {g: i for i, g in enumerate(names)}
    return names, np.array([pos[groups.get(u, "all")] for u in users], dtype=np.intp)


def group_mean_series(values: np.ndarray, member_group: np.ndarray, n_groups: int) -> np.ndarray:
    """Per-group mean over users of a ``(U, ...)`` array."""
    out = np.zeros((n_groups,) + values.shape[1:])
    counts = np.bincount(member_group, minlength=n_groups)
    if np.any(counts == 0):
        raise ConfigError("empty group")
    np.add.at(out, member_group, values)
    return out / counts.reshape((-1,) + (1,) * (values.ndim - 1))


def deviation_arrays(values: np.ndarray, params: DeviationParams) -> tuple[np.ndarray, np.ndarray]:
    """Sigma and weight for every cell of a ``(..., days)`` measurement array.

    Cells whose history is not yet full hold NaN.
    """
    shape = values.shape
    flat = np.ascontiguousarray(values.reshape(-1, shape[-1]), dtype=np.float64)
    sigma, weight = _kernels.deviation_series(flat, params.omega, float(params.delta_cap), float(params.eps), bool(params.weighting))
    return sigma.reshape(shape), weight.reshape(shape)


@dataclass
class CompoundMatrix:
    user_id: str
    end_day: date
    features: list[str]
    frames: list[str]
    days: list[date]
    user_sigma: np.ndarray  # (F, T, D)
    user_weight: np.ndarray
    group_sigma: np.ndarray | None = None
    group_weight: np.ndarray | None = None

    @property
    def user_block(self) -> np.ndarray:
        return self.user_sigma * self.user_weight

    @property
    def group_block(self) -> np.ndarray | None:
        if self.group_sigma is None:
            return None
        return self.group_sigma * self.group_weight

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.user_sigma.shape


@dataclass
class DeviationCube:
    """Precomputed deviations of one aspect for every user, group and day."""

    users: list[str]
    days: list[date]
    features: list[str]
    frames: list[str]
    params: DeviationParams
    user_sigma: np.ndarray  # (U, F, T, N)
    user_weight: np.ndarray
    member_group: np.ndarray
    group_names: list[str]
    group_sigma: np.ndarray | None = None  # (G, F, T, N)
    group_weight: np.ndarray | None = None
    _uidx: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_store(
        cls,
        store: MeasurementStore,
        aspect: str,
        params: DeviationParams,
        groups: Mapping[str, str] | None = None,
        *,
        group_block: bool = True,
    ) -> "DeviationCube":
        for a, b in zip(store.days, store.days[1:]):
            if (b - a).days != 1:
                raise GapError(f"store days not contiguous between {a} and {b}")
        am = store.aspects[aspect]
        us, uw = deviation_arrays(am.values, params)
        names, member = group_index(store.users, groups)
        gs = gw = None
        if group_block:
            gm = group_mean_series(am.values, member, len(names))
            gs, gw = deviation_arrays(gm, params)
        return cls(store.users, store.days, list(am.features), list(store.frame_labels), params,
                   us, uw, member, names, gs, gw)

    @property
    def has_group(self) -> bool:
        return self.group_sigma is not None

    @property
    def dim(self) -> int:
        F, T = len(self.features), len(self.frames)
        return (2 if self.has_group else 1) * F * T * self.params.days

    def _end_index(self, end: date | int) -> int:
        k = end if isinstance(end, (int, np.integer)) else (end - self.days[0]).days
        D = self.params.days
        if not (0 <= k < len(self.days)):
            raise GapError(f"end day {end} outside store range {self.days[0]}..{self.days[-1]}")
        if k < self.params.first_scorable:
            raise UsageError(
                f"end day {end} inside burn-in: windows need {self.params.first_scorable + 1} days of data"
            )
        return int(k) - D + 1

    def matrix(self, user_id: str, end_day: date | int) -> CompoundMatrix:
        if not self._uidx:
            self._uidx.update({u: i for i, u in enumerate(self.users)})
        try:
            u = self._uidx[user_id]
        except KeyError:
            raise UsageError(f"unknown user {user_id!r}") from None
        lo = self._end_index(end_day)
        hi = lo + self.params.days
        g = self.member_group[u]
        return CompoundMatrix(
            user_id=user_id,
            end_day=self.days[hi - 1],
            features=self.features,
            frames=self.frames,
            days=self.days[lo:hi],
            user_sigma=self.user_sigma[u, :, :, lo:hi].copy(),
            user_weight=self.user_weight[u, :, :, lo:hi].copy(),
            group_sigma=None if not self.has_group else self.group_sigma[g, :, :, lo:hi].copy(),
            group_weight=None if not self.has_group else self.group_weight[g, :, :, lo:hi].copy(),
        )

    def vectors(self, end_day: date | int, user_indices=None) -> np.ndarray:
        """Flattened, [0,1]-normalized matrices of many users for one end day."""
        lo = self._end_index(end_day)
        hi = lo + self.params.days
        idx = np.arange(len(self.users)) if user_indices is None else np.asarray(user_indices)
        ub = (self.user_sigma[idx, :, :, lo:hi] * self.user_weight[idx, :, :, lo:hi]).reshape(len(idx), -1)
        parts = [ub]
        if self.has_group:
            g = self.member_group[idx]
            gb = (self.group_sigma[g, :, :, lo:hi] * self.group_weight[g, :, :, lo:hi]).reshape(len(idx), -1)
            parts.append(gb)
        cap = self.params.delta_cap
        return (np.concatenate(parts, axis=1) + cap) / (2 * cap)


def build_matrix(
    user_id: str,
    end_day: date,
    store: MeasurementStore,
    aspect: str,
    params: DeviationParams,
    groups: Mapping[str, str] | None = None,
    *,
    group_block: bool = True,
) -> CompoundMatrix:
    return DeviationCube.from_store(store, aspect, params, groups, group_block=group_block).matrix(user_id, end_day)


def flatten_normalize(matrix: CompoundMatrix, params: DeviationParams) -> np.ndarray:
    parts = [matrix.user_block.ravel()]
    if matrix.group_sigma is not None:
        parts.append(matrix.group_block.ravel())
    cap = params.delta_cap
    return (np.concatenate(parts) + cap) / (2 * cap)


def unflatten(vector, shape: tuple[int, int, int], params: DeviationParams, *, group_block: bool = True):
    """Inverse of :func:`flatten_normalize`: ``(user_block, group_block | None)``."""
    v = np.asarray(vector, dtype=np.float64)
    n = int(np.prod(shape))
    expected = n * (2 if group_block else 1)
    if v.size != expected:
        raise UsageError(f"vector has {v.size} entries, expected {expected}")
    cells = v * (2 * params.delta_cap) - params.delta_cap
    user = cells[:n].reshape(shape)
    group = cells[n:].reshape(shape) if group_block else None
    return user, group


# ---------------------------------------------------------------------------
# Export


def write_matrices_csv(matrices: Sequence[CompoundMatrix], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["user", "end_day", "day", "frame", "feature", "block", "sigma", "weight"])
    for mx in matrices:
        blocks = [("user", mx.user_sigma, mx.user_weight)]
        if mx.group_sigma is not None:
            blocks.append(("group", mx.group_sigma, mx.group_weight))
        for name, sig, wt in blocks:
            for f, feat in enumerate(mx.features):
                for t, frame in enumerate(mx.frames):
                    for k, day in enumerate(mx.days):
                        writer.writerow([mx.user_id, mx.end_day.isoformat(), day.isoformat(), frame, feat, name,
                                         repr(float(sig[f, t, k])), repr(float(wt[f, t, k]))])


def matrix_to_json(mx: CompoundMatrix) -> dict:
    out = {
        "user": mx.user_id,
        "end_day": mx.end_day.isoformat(),
        "features": mx.features,
        "frames": mx.frames,
        "days": [d.isoformat() for d in mx.days],
        "user_sigma": mx.user_sigma.ravel().tolist(),
        "user_weight": mx.user_weight.ravel().tolist(),
    }
    if mx.group_sigma is not None:
        out["group_sigma"] = mx.group_sigma.ravel().tolist()
        out["group_weight"] = mx.group_weight.ravel().tolist()
    return out


def matrix_from_json(data: dict) -> CompoundMatrix:
    shape = (len(data["features"]), len(data["frames"]), len(data["days"]))
    arr = lambda key: None if key not in data else np.asarray(data[key], dtype=np.float64).reshape(shape)  # noqa: E731
    return CompoundMatrix(
        user_id=data["user"],
        end_day=date.fromisoformat(data["end_day"]),
        features=list(data["features"]),
        frames=list(data["frames"]),
        days=[date.fromisoformat(d) for d in data["days"]],
        user_sigma=arr("user_sigma"),
        user_weight=arr("user_weight"),
        group_sigma=arr("group_sigma"),
        group_weight=arr("group_weight"),
    )


def _heat_color(value: float, cap: float) -> str:
    x = max(-1.0, min(1.0, value / cap))
    if x >= 0:
        r, g, b = 255, int(255 * (1 - x)), int(255 * (1 - x))
    else:
        r, g, b = int(255 * (1 + x)), int(255 * (1 + x)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(mx: CompoundMatrix, params: DeviationParams, cell: int = 10) -> str:
    """Rows are (block, feature, frame); columns are days.  Red is positive."""
    rows = []
    for name, block in (("user", mx.user_block), ("group", mx.group_block)):
        if block is None:
            continue
        for f, feat in enumerate(mx.features):
            for t, frame in enumerate(mx.frames):
                rows.append((f"{name}:{feat}:{frame}", block[f, t]))
    label_w = 8 * max(len(r[0]) for r in rows) + 10
    width = label_w + cell * len(mx.days)
    height = cell * len(rows) + 20
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-size="9" font-family="monospace">']
    for i, (label, vals) in enumerate(rows):
        y = i * cell
        out.append(f'<text x="0" y="{y + cell - 2}">{label}</text>')
        for k, v in enumerate(vals):
            out.append(f'<rect x="{label_w + k * cell}" y="{y}" width="{cell}" height="{cell}" fill="{_heat_color(float(v), params.delta_cap)}"/>')
    out.append(f'<text x="{label_w}" y="{height - 4}">{mx.days[0]} .. {mx.days[-1]} ({mx.user_id})</text>')
    out.append("</svg>")
    return "\n".join(out)
