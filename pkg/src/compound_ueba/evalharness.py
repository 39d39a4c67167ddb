"""Detection metrics, ROC / precision-recall curves and the variant comparison.

A detector's output is an ordering of users.  Investigating the top ``k``
users is a prediction of "abnormal" for them and "normal" for the rest, so a
curve is swept by letting ``k`` go from 0 to ``n``.

Conventions:

* a rate whose denominator is zero is reported as 0;
* the precision-recall curve starts at (recall 0, precision 1) for ``k = 0``
  so that its area is well defined;
* users with equal priority form a tie group.  ``pessimistic`` puts the
  normal users of a group first, ``optimistic`` the abnormal ones and
  ``given`` keeps the incoming order.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import groupby
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .scoring import InvestigationList

logger = logging.getLogger(__name__)

TIE_MODES = ("pessimistic", "optimistic", "given")


@dataclass(frozen=True)
class LabeledOutcome:
    user_id: str
    abnormal: bool
    priority: float = 0.0

    @property
    def label(self) -> str:
        return "abnormal" if self.abnormal else "normal"


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    def __iter__(self):
        return iter((self.tp, self.fp, self.tn, self.fn))


@dataclass(frozen=True)
class CurvePoint:
    k: int
    tp_rate: float
    fp_rate: float
    precision: float
    recall: float


@dataclass
class Curve:
    mode: str
    tie_mode: str
    points: list[CurvePoint]
    area: float

    def xy(self) -> list[tuple[float, float]]:
        if self.mode == "roc":
            return [(p.fp_rate, p.tp_rate) for p in self.points]
        return [(p.recall, p.precision) for p in self.points]


def outcomes_from_list(inv: InvestigationList, labels: Mapping[str, bool]) -> list[LabeledOutcome]:
    missing = [u for u in inv.users if u not in labels]
    if missing:
        raise DataError(f"{len(missing)} listed users have no label, e.g. {missing[0]!r}")
    if len(set(inv.users)) != len(inv.users):
        raise DataError("investigation list repeats a user")
    return [LabeledOutcome(e.user_id, bool(labels[e.user_id]), e.priority) for e in inv.entries]


def order_outcomes(outcomes: Sequence[LabeledOutcome], tie_mode: str = "pessimistic") -> list[LabeledOutcome]:
    """Stable order by priority with ties resolved per ``tie_mode``."""
    if tie_mode not in TIE_MODES:
        raise ConfigError(f"unknown tie mode {tie_mode!r}; choose from {TIE_MODES}")
    if tie_mode == "given":
        return list(outcomes)
    first_abnormal = tie_mode == "optimistic"
    return sorted(outcomes, key=lambda o: (o.priority, o.abnormal != first_abnormal))


def confusion_at_k(outcomes: Sequence[LabeledOutcome], k: int) -> Confusion:
    """Counts when the first ``k`` outcomes are predicted abnormal."""
    if not 0 <= k <= len(outcomes):
        raise ConfigError(f"k={k} outside 0..{len(outcomes)}")
    tp = sum(o.abnormal for o in outcomes[:k])
    fp = k - tp
    pos = sum(o.abnormal for o in outcomes)
    fn = pos - tp
    tn = len(outcomes) - pos - fp
    return Confusion(tp, fp, tn, fn)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def metrics(tp: int, fp: int, tn: int, fn: int) -> dict[str, float]:
    """Rates of a confusion matrix; 0/0 counts as 0."""
    if min(tp, fp, tn, fn) < 0:
        raise ConfigError("confusion counts must be >= 0")
    return {
        "tp_rate": _ratio(tp, tp + fn),
        "fp_rate": _ratio(fp, fp + tn),
        "precision": _ratio(tp, tp + fp),
        "recall": _ratio(tp, tp + fn),
    }


def _cumulative(ordered: Sequence[LabeledOutcome]) -> tuple[list[int], list[int]]:
    tps, fps = [0], [0]
    for o in ordered:
        tps.append(tps[-1] + int(o.abnormal))
        fps.append(fps[-1] + int(not o.abnormal))
    return tps, fps


def curves_and_auc(outcomes: Sequence[LabeledOutcome], mode: str = "roc", tie_mode: str = "pessimistic") -> Curve:
    """Sweep ``k = 0..n`` and integrate by the trapezoid rule.

    The ROC area is computed from integer counts, so it equals the
    pairwise-comparison probability exactly (up to the final division).
    """
    if mode not in ("roc", "pr"):
        raise ConfigError(f"unknown curve mode {mode!r}")
    ordered = order_outcomes(outcomes, tie_mode)
    P = sum(o.abnormal for o in ordered)
    N = len(ordered) - P
    if P == 0 or N == 0:
        raise DataError("curve undefined: outcomes need both normal and abnormal labels")
    tps, fps = _cumulative(ordered)
    points = []
    for k in range(len(ordered) + 1):
        tp, fp = tps[k], fps[k]
        prec = 1.0 if k == 0 else tp / k
        points.append(CurvePoint(k, tp / P, fp / N, prec, tp / P))
    if mode == "roc":
        twice = sum((fps[k] - fps[k - 1]) * (tps[k] + tps[k - 1]) for k in range(1, len(tps)))
        area = float(Fraction(twice, 2 * P * N))
    else:
        area = 0.0
        for a, b in zip(points, points[1:]):
            area += (b.recall - a.recall) * (a.precision + b.precision) / 2
    return Curve(mode, tie_mode, points, area)


def pairwise_auc(outcomes: Sequence[LabeledOutcome]) -> float:
    """Probability that an abnormal user is ordered before a normal one (ties count 1/2)."""
    pos = [o.priority for o in outcomes if o.abnormal]
    neg = [o.priority for o in outcomes if not o.abnormal]
    if not pos or not neg:
        raise DataError("curve undefined: outcomes need both normal and abnormal labels")
    wins = sum(2 if p < q else 1 if p == q else 0 for p in pos for q in neg)
    return float(Fraction(wins, 2 * len(pos) * len(neg)))


def fps_before_tps(outcomes: Sequence[LabeledOutcome], tie_mode: str = "pessimistic") -> list[int]:
    """Entry ``i`` is the number of normal users listed before the ``i+1``-th abnormal user."""
    out, fp = [], 0
    for o in order_outcomes(outcomes, tie_mode):
        if o.abnormal:
            out.append(fp)
        else:
            fp += 1
    return out


def tie_groups(outcomes: Sequence[LabeledOutcome]) -> list[list[LabeledOutcome]]:
    ordered = sorted(outcomes, key=lambda o: o.priority)
    return [list(g) for _, g in groupby(ordered, key=lambda o: o.priority)]


# ---------------------------------------------------------------------------
# Variant comparison


@dataclass
class VariantReport:
    variant: str
    seed: int
    roc: Curve
    pr: Curve
    fps_before_tps: list[int]
    dims: dict[str, int]
    victim_best_daily_position: dict[str, int] = field(default_factory=dict)

    @property
    def auc(self) -> float:
        return self.roc.area

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "seed": self.seed,
            "roc_auc": self.roc.area,
            "pr_auc": self.pr.area,
            "fps_before_tps": self.fps_before_tps,
            "dims": self.dims,
            "victim_best_daily_position": self.victim_best_daily_position,
            "roc": [[x, y] for x, y in self.roc.xy()],
            "pr": [[x, y] for x, y in self.pr.xy()],
        }


def evaluate_result(result, labels: Mapping[str, bool], seed: int = 0, tie_mode: str = "pessimistic") -> VariantReport:
    """Curves over the period-level list of a pipeline run."""
    outcomes = outcomes_from_list(result.period_list, labels)
    best = {}
    for user in (u for u, ab in labels.items() if ab):
        best[user] = min(inv.position(user) for inv in result.daily_lists) if result.daily_lists else 0
    return VariantReport(
        variant=result.variant,
        seed=seed,
        roc=curves_and_auc(outcomes, "roc", tie_mode),
        pr=curves_and_auc(outcomes, "pr", tie_mode),
        fps_before_tps=fps_before_tps(outcomes, tie_mode),
        dims=dict(result.dims),
        victim_best_daily_position=best,
    )


def alert_thresholds(result, q: float = 99.0) -> dict[str, float]:
    """Per-aspect alert level: the ``q``-th percentile of the training scores."""
    if not 0 < q <= 100:
        raise ConfigError("percentile must be in (0, 100]")
    return {a: float(np.percentile(s, q)) for a, s in result.train_scores.items()}


def victim_alert_levels(result, victim: str, start, end) -> dict[str, float]:
    """Per-aspect alert level that still catches ``victim``: their peak score on days ``start..end``."""
    if victim not in result.users:
        raise DataError(f"unknown victim {victim!r}")
    cols = [j for j, d in enumerate(result.test_days) if start <= d <= end]
    if not cols:
        raise DataError(f"no test days between {start} and {end}")
    i = result.users.index(victim)
    return {a: float(s[i, cols].max()) for a, s in result.scores.items()}


def users_above(result, day, thresholds: Mapping[str, float], aspects: Iterable[str] | None = None,
                exclude: Iterable[str] = ()) -> list[str]:
    """Users whose score on ``day`` exceeds the alert level in any of ``aspects``."""
    j = result.test_days.index(day)
    skip = set(exclude)
    hit = set()
    for a in (result.aspects if aspects is None else aspects):
        col = result.scores[a][:, j]
        hit.update(u for u, s in zip(result.users, col.tolist()) if s > thresholds[a] and u not in skip)
    return sorted(hit)


def run_ablation(dataset, variants: Iterable, seeds: Sequence[int] = (0,), model_cfg=None,
                 tie_mode: str = "pessimistic") -> dict[str, list[VariantReport]]:
    """Run every variant for every seed on a labeled dataset."""
    from dataclasses import replace

    from .pipeline import AblationConfig, ModelConfig, extract_for_variant, run_variant

    if not dataset.labels:
        raise ConfigError("dataset has no labels")
    if sum(dataset.labels.values()) == 0 or all(dataset.labels.values()):
        raise DataError("curve undefined: dataset labels are single-class")
    model_cfg = model_cfg or ModelConfig()
    configs = [v if isinstance(v, AblationConfig) else AblationConfig.for_variant(v) for v in variants]
    reports: dict[str, list[VariantReport]] = {}
    stores = {}
    for cfg in configs:
        key = (cfg.feature_preset(model_cfg.features), cfg.frames)
        if key not in stores:
            stores[key] = extract_for_variant(dataset, cfg, model_cfg)
        for seed in seeds:
            logger.info("variant %s seed %d", cfg.variant, seed)
            result = run_variant(dataset, cfg, replace(model_cfg, seed=seed), store=stores[key])
            reports.setdefault(cfg.variant, []).append(evaluate_result(result, dataset.labels, seed, tie_mode))
    return reports


def ablation_to_json(reports: Mapping[str, Sequence[VariantReport]]) -> dict:
    return {v: [r.to_json() for r in rs] for v, rs in sorted(reports.items())}


def write_fp_table_csv(reports: Mapping[str, Sequence[VariantReport]], stream) -> None:
    """Rows ``variant, seed, fps_before_tp_1, fps_before_tp_2, ...``."""
    width = max((len(r.fps_before_tps) for rs in reports.values() for r in rs), default=0)
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["variant", "seed", "roc_auc", "pr_auc", *[f"fps_before_tp_{i + 1}" for i in range(width)]])
    for v, rs in sorted(reports.items()):
        for r in rs:
            w.writerow([v, r.seed, f"{r.roc.area:.6f}", f"{r.pr.area:.6f}", *r.fps_before_tps])


def write_report_json(reports: Mapping[str, Sequence[VariantReport]], stream) -> None:
    json.dump(ablation_to_json(reports), stream, indent=1, sort_keys=True)
    stream.write("\n")


# ---------------------------------------------------------------------------
# SVG charts

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def line_chart_svg(
    series: Mapping[str, Sequence[tuple[float, float]]],
    *,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    width: int = 480,
    height: int = 360,
    xrange: tuple[float, float] | None = None,
    yrange: tuple[float, float] | None = None,
) -> str:
    """Minimal standalone SVG with one polyline per series and a legend."""
    pad_l, pad_r, pad_t, pad_b = 56, 16, 28, 44
    pts = [p for s in series.values() for p in s if p[1] is not None]
    xs = [p[0] for p in pts] or [0.0, 1.0]
    ys = [p[1] for p in pts] or [0.0, 1.0]
    x0, x1 = xrange or (min(xs), max(xs))
    y0, y1 = yrange or (min(ys), max(ys))
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def sx(x):
        return pad_l + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return pad_t + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="white" stroke="#888"/>',
        f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" font-size="13">{_esc(title)}</text>',
        f'<text x="{pad_l + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{_esc(xlabel)}</text>',
        f'<text x="14" y="{pad_t + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 14 {pad_t + ph / 2:.1f})">{_esc(ylabel)}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        out.append(f'<text x="{sx(xv):.1f}" y="{pad_t + ph + 14}" text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<text x="{pad_l - 4}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
    for i, (name, s) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in s if y is not None)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = pad_t + 14 + 14 * i
        out.append(f'<line x1="{pad_l + pw - 110}" y1="{ly - 4}" x2="{pad_l + pw - 92}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{pad_l + pw - 88}" y="{ly}">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def curves_svg(reports: Mapping[str, Sequence[VariantReport]], mode: str = "roc") -> str:
    series = {}
    for v, rs in sorted(reports.items()):
        r = rs[0]
        curve = r.roc if mode == "roc" else r.pr
        series[f"{v} ({curve.area:.3f})"] = curve.xy()
    if mode == "roc":
        return line_chart_svg(series, title="ROC", xlabel="FP rate", ylabel="TP rate",
                              xrange=(0, 1), yrange=(0, 1))
    return line_chart_svg(series, title="Precision-recall", xlabel="recall", ylabel="precision",
                          xrange=(0, 1), yrange=(0, 1))


def trend_svg(trends: Mapping[str, Sequence[tuple[int, float | None]]], title: str = "Anomaly score") -> str:
    return line_chart_svg(trends, title=title, xlabel="day", ylabel="score")
