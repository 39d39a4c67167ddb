"""``compound-ueba`` command line: gen, extract, train, score, rank, eval, repro.

Configuration precedence (later wins): built-in defaults, the JSON file given
by ``--config``, the ``COMPOUND_UEBA_WORKDIR`` environment variable (workdir
only), explicit flags (``--workdir``, ``--seed``, ``--variant``) and finally
``--set key.path=value`` overrides, whose values are parsed as JSON when
possible.

Every stage reads its inputs from and writes its outputs to the workdir and
records content hashes in ``manifest.json``.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from datetime import date, timedelta
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, FormatError, GapError, StageError, TrainingDiverged, UsageError
from .evalharness import (
    curves_svg,
    evaluate_result,
    trend_svg,
    write_fp_table_csv,
    write_report_json,
)
from .ingest import MeasurementStore, read_events, write_events
from .neuralnet import load_model, save_model
from .pipeline import (
    AblationConfig,
    Dataset,
    ModelConfig,
    RunResult,
    build_representations,
    extract_for_variant,
    fit_models,
    investigation_lists,
    run_variant,
    score_days,
)
from .synthgen import LabelSet, OrgSpec, ScenarioSpec, generate, inject, pick_victim

logger = logging.getLogger(__name__)

WORKDIR_ENV = "COMPOUND_UEBA_WORKDIR"
EXIT_OK, EXIT_VALIDATION, EXIT_STAGE, EXIT_DIVERGED = 0, 2, 3, 4

EVENTS = "events.jsonl"
LABELS = "labels.json"
SPEC = "spec.json"
STORE = "measurements.npz"
CHECKPOINTS = "checkpoints"
SCORES = "scores.json"
RANKS = "ranks.csv"
LIST_CSV = "investigation_list.csv"
LIST_JSON = "investigation_list.json"
DAILY = "daily_lists"
REPORT = "report.json"
FP_TABLE = "fp_table.csv"
MANIFEST = "manifest.json"


# ---------------------------------------------------------------------------
# Configuration


def default_config() -> dict:
    text = resources.files("compound_ueba").joinpath("configs/default.json").read_text()
    return json.loads(text)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _apply_set(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"--set expects key.path=value, got {item!r}")
    path, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    keys = path.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {path}: {k} is not a section")
    node[keys[-1]] = value


def _known(cls, data: dict, section: str) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {', '.join(unknown)}")
    return data


@dataclass
class RunConfig:
    """Validated view of the merged JSON configuration."""

    raw: dict
    workdir: Path
    org: OrgSpec
    model: ModelConfig
    variant: AblationConfig
    scenarios: list[dict]
    events_path: Path | None
    labels_path: Path | None
    groups_path: Path | None
    train_end: date | None
    tie_mode: str
    eval_variants: list[str]

    @classmethod
    def from_dict(cls, cfg: dict) -> "RunConfig":
        allowed = {"workdir", "seed", "variant", "org", "scenarios", "paths", "model", "split", "eval"}
        unknown = sorted(set(cfg) - allowed)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        seed = int(cfg.get("seed", 0))
        try:
            org = OrgSpec(**_known(OrgSpec, {**cfg.get("org", {}), "seed": seed}, "org"))
            model = ModelConfig(**_known(ModelConfig, {**cfg.get("model", {}), "seed": seed}, "model"))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        variant = AblationConfig.for_variant(cfg.get("variant", "acobe"))
        paths = cfg.get("paths", {}) or {}
        unknown = sorted(set(paths) - {"events", "labels", "groups"})
        if unknown:
            raise ConfigError(f"unknown keys in paths: {', '.join(unknown)}")
        scenarios = list(cfg.get("scenarios", []))
        for s in scenarios:
            off = int(s.get("start_offset", 1))
            if not 1 <= off <= org.test_days:
                raise ConfigError(f"scenario start_offset {off} outside the test span 1..{org.test_days}")
            if off + int(s.get("duration", 10)) - 1 > org.test_days:
                raise ConfigError("scenario window extends past the calendar")
            ScenarioSpec(s.get("scenario", ""), "x", org.start, int(s.get("duration", 10)))
        ev = cfg.get("eval", {}) or {}
        tie_mode = ev.get("tie_mode", "pessimistic")
        if tie_mode not in ("pessimistic", "optimistic", "given"):
            raise ConfigError(f"unknown tie mode {tie_mode!r}")
        eval_variants = list(ev.get("variants", []))
        for v in eval_variants:
            AblationConfig.for_variant(v)
        split = cfg.get("split", {}) or {}
        train_end = date.fromisoformat(split["train_end"]) if split.get("train_end") else None
        return cls(
            raw=cfg,
            workdir=Path(cfg.get("workdir", "runs/default")),
            org=org,
            model=model,
            variant=variant,
            scenarios=scenarios,
            events_path=Path(paths["events"]) if paths.get("events") else None,
            labels_path=Path(paths["labels"]) if paths.get("labels") else None,
            groups_path=Path(paths["groups"]) if paths.get("groups") else None,
            train_end=train_end,
            tie_mode=tie_mode,
            eval_variants=eval_variants,
        )


def load_config(args: argparse.Namespace) -> RunConfig:
    cfg = default_config()
    if getattr(args, "config", None):
        try:
            user = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from None
        cfg = _merge(cfg, user)
    if os.environ.get(WORKDIR_ENV):
        cfg["workdir"] = os.environ[WORKDIR_ENV]
    if getattr(args, "workdir", None):
        cfg["workdir"] = args.workdir
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "variant", None):
        cfg["variant"] = args.variant
    for item in getattr(args, "set", None) or []:
        _apply_set(cfg, item)
    return RunConfig.from_dict(cfg)


# ---------------------------------------------------------------------------
# Manifest and artifact helpers


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_tree(workdir: Path, rels: list[str]) -> dict[str, str]:
    out = {}
    for rel in rels:
        p = workdir / rel
        if p.is_dir():
            for f in sorted(p.rglob("*")):
                if f.is_file():
                    out[f.relative_to(workdir).as_posix()] = sha256_file(f)
        elif p.is_file():
            out[rel] = sha256_file(p)
    return out


def record_stage(rc: RunConfig, stage: str, inputs: list[str], outputs: list[str]) -> None:
    path = rc.workdir / MANIFEST
    manifest = json.loads(path.read_text()) if path.exists() else {}
    manifest["tool"] = "compound-ueba"
    manifest["version"] = __version__
    manifest["config"] = rc.raw
    stages = manifest.setdefault("stages", {})
    stages[stage] = {"inputs": _hash_tree(rc.workdir, inputs), "outputs": _hash_tree(rc.workdir, outputs)}
    manifest["stages"] = dict(sorted(stages.items()))
    _write_json(path, manifest)


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _require(path: Path, stage: str, producer: str) -> Path:
    if not path.exists():
        raise StageError(f"{stage}: missing {path} (run `{producer}` first)")
    return path


def _events_path(rc: RunConfig) -> Path:
    return rc.events_path or rc.workdir / EVENTS


def _read_spec(rc: RunConfig) -> dict:
    if rc.events_path is not None:
        groups = {}
        if rc.groups_path is not None:
            groups = json.loads(_require(rc.groups_path, "extract", "provide paths.groups").read_text())
        return {"groups": groups}
    return json.loads(_require(rc.workdir / SPEC, "extract", "gen").read_text())


def _dataset(rc: RunConfig, with_events: bool = True) -> Dataset:
    spec = _read_spec(rc)
    events = []
    if with_events:
        path = _require(_events_path(rc), "extract", "gen")
        result = read_events(path)
        if result.malformed:
            logger.warning("%d malformed records skipped in %s", result.malformed, path)
        events = result.events
    if "calendar" in spec:
        cal = spec["calendar"]
        start, end = date.fromisoformat(cal["start"]), date.fromisoformat(cal["end"])
        train_end = rc.train_end or date.fromisoformat(cal["train_end"])
        users = list(spec["users"])
    else:
        if not events:
            raise DataError("no events to derive the calendar from")
        from .ingest import assign_timeframe
        days = sorted({assign_timeframe(ev.timestamp)[0] for ev in events})
        start, end = days[0], days[-1]
        if rc.train_end is None:
            raise ConfigError("split.train_end is required for external event files")
        train_end = rc.train_end
        users = sorted({ev.user_id for ev in events})
    if not start <= train_end < end:
        raise ConfigError(f"train_end {train_end} must fall inside {start}..{end} and leave test days")
    labels = None
    lp = rc.labels_path or (rc.workdir / LABELS)
    if lp.exists():
        labels = LabelSet.from_json(json.loads(lp.read_text())).abnormal
    return Dataset(events, spec.get("groups", {}), users, start, end, train_end, labels)


# ---------------------------------------------------------------------------
# Stages


def cmd_gen(rc: RunConfig) -> None:
    rc.workdir.mkdir(parents=True, exist_ok=True)
    org = rc.org
    events = generate(org)
    labels = LabelSet({u: None for u in org.users})
    scenario_specs = []
    for i, s in enumerate(rc.scenarios):
        victim = s.get("victim", "auto")
        if victim == "auto":
            victim = pick_victim(org, i)
        spec = ScenarioSpec(
            scenario=s["scenario"], victim=victim,
            start=org.train_end + timedelta(days=int(s.get("start_offset", 1))),
            duration=int(s.get("duration", 10)), intensity=float(s.get("intensity", 1.0)),
            seed=org.seed * 1000 + i,
        )
        events, lab = inject(events, spec)
        labels = labels.merge(lab)
        scenario_specs.append(spec.to_json())
    with open(rc.workdir / EVENTS, "w", encoding="utf-8", newline="\n") as fh:
        write_events(events, fh, "jsonl")
    _write_json(rc.workdir / LABELS, labels.to_json())
    _write_json(rc.workdir / SPEC, {
        "org": org.to_json(),
        "scenarios": scenario_specs,
        "groups": org.groups,
        "users": org.users,
        "calendar": {"start": org.start.isoformat(), "end": org.end.isoformat(),
                     "train_end": org.train_end.isoformat()},
    })
    record_stage(rc, "gen", [], [EVENTS, LABELS, SPEC])
    logger.info("generated %d events for %d users", len(events), org.n_users)


def cmd_extract(rc: RunConfig) -> None:
    ds = _dataset(rc)
    store = extract_for_variant(ds, rc.variant, rc.model)
    rc.workdir.mkdir(parents=True, exist_ok=True)
    store.save(rc.workdir / STORE)
    ins = [] if rc.events_path else [EVENTS, SPEC]
    record_stage(rc, "extract", ins, [STORE])


def _load_store(rc: RunConfig, stage: str) -> MeasurementStore:
    return MeasurementStore.load(_require(rc.workdir / STORE, stage, "extract"))


def _representations(rc: RunConfig, store: MeasurementStore):
    spec = _read_spec(rc)
    if rc.train_end is not None:
        end = rc.train_end
    elif "calendar" in spec:
        end = date.fromisoformat(spec["calendar"]["train_end"])
    else:
        raise ConfigError("split.train_end is required for external event files")
    train_end = store.day_index(end)
    if train_end >= len(store.days) - 1:
        raise ConfigError(f"train_end {end} leaves no test days")
    return train_end, build_representations(store, spec.get("groups", {}), rc.variant, rc.model, train_end)


def cmd_train(rc: RunConfig) -> None:
    store = _load_store(rc, "train")
    train_end, reps = _representations(rc, store)
    models, train_scores = fit_models(reps, train_end, rc.model)
    ck = rc.workdir / CHECKPOINTS
    ck.mkdir(parents=True, exist_ok=True)
    for aspect, model in models.items():
        save_model(model, ck / f"{aspect}.json")
    _write_json(ck / "train_scores.json", {a: [float(x) for x in s] for a, s in sorted(train_scores.items())})
    record_stage(rc, "train", [STORE], [CHECKPOINTS])


def _score(rc: RunConfig) -> RunResult:
    store = _load_store(rc, "score")
    train_end, reps = _representations(rc, store)
    models = {}
    for aspect in reps:
        path = _require(rc.workdir / CHECKPOINTS / f"{aspect}.json", "score", "train")
        models[aspect] = load_model(path)
    test_idx = list(range(train_end + 1, len(store.days)))
    scores = score_days(models, reps, test_idx)
    return RunResult(rc.variant.variant, sorted(reps), list(store.users), [store.days[k] for k in test_idx],
                     scores, {}, {a: r.dim for a, r in reps.items()}, models)


def cmd_score(rc: RunConfig) -> None:
    result = _score(rc)
    _write_json(rc.workdir / SCORES, {
        "users": result.users,
        "days": [d.isoformat() for d in result.test_days],
        "scores": {a: result.scores[a].T.tolist() for a in result.aspects},
    })
    with open(rc.workdir / RANKS, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day", "aspect", "user", "score", "rank"])
        for j, day in enumerate(result.test_days):
            for a in result.aspects:
                col = result.scores[a][:, j]
                order = sorted(range(len(col)), key=lambda i: (-col[i], result.users[i]))
                for r, i in enumerate(order, 1):
                    w.writerow([day.isoformat(), a, result.users[i], repr(float(col[i])), r])
    record_stage(rc, "score", [STORE, CHECKPOINTS], [SCORES, RANKS])


def _result_from_scores(rc: RunConfig) -> RunResult:
    data = json.loads(_require(rc.workdir / SCORES, "rank", "score").read_text())
    scores = {a: np.asarray(v, dtype=np.float64).T for a, v in data["scores"].items()}
    return RunResult(rc.variant.variant, sorted(scores), data["users"],
                     [date.fromisoformat(d) for d in data["days"]], scores, {}, {})


def cmd_rank(rc: RunConfig) -> RunResult:
    result = _result_from_scores(rc)
    investigation_lists(result, rc.model.critic_n)
    with open(rc.workdir / LIST_CSV, "w", newline="") as fh:
        result.period_list.write_csv(fh)
    with open(rc.workdir / LIST_JSON, "w") as fh:
        result.period_list.write_json(fh)
    daily = rc.workdir / DAILY
    daily.mkdir(exist_ok=True)
    for inv in result.daily_lists:
        with open(daily / f"{inv.end_day.isoformat()}.csv", "w", newline="") as fh:
            inv.write_csv(fh)
    record_stage(rc, "rank", [SCORES], [LIST_CSV, LIST_JSON, DAILY])
    return result


def cmd_eval(rc: RunConfig) -> dict:
    lp = rc.labels_path or (rc.workdir / LABELS)
    labels = LabelSet.from_json(json.loads(_require(lp, "eval", "gen").read_text())).abnormal
    ds = _dataset(rc) if rc.eval_variants else None
    result = _result_from_scores(rc)
    investigation_lists(result, rc.model.critic_n)
    reports = {rc.variant.variant: [evaluate_result(result, labels, rc.model.seed, rc.tie_mode)]}
    for v in rc.eval_variants:
        if v == rc.variant.variant:
            continue
        other = run_variant(ds, v, rc.model)
        reports[v] = [evaluate_result(other, labels, rc.model.seed, rc.tie_mode)]
    with open(rc.workdir / REPORT, "w") as fh:
        write_report_json(reports, fh)
    with open(rc.workdir / FP_TABLE, "w", newline="") as fh:
        write_fp_table_csv(reports, fh)
    (rc.workdir / "roc.svg").write_text(curves_svg(reports, "roc"))
    (rc.workdir / "pr.svg").write_text(curves_svg(reports, "pr"))
    victims = [u for u, ab in sorted(labels.items()) if ab]
    trends = {}
    for u in victims:
        i = result.users.index(u)
        for a in result.aspects:
            trends[f"{u} {a}"] = [(j, float(result.scores[a][i, j])) for j in range(len(result.test_days))]
    (rc.workdir / "trend.svg").write_text(trend_svg(trends, "Victim anomaly scores over the test days"))
    record_stage(rc, "eval", [SCORES], [REPORT, FP_TABLE, "roc.svg", "pr.svg", "trend.svg"])
    summary = {v: rs[0].auc for v, rs in reports.items()}
    logger.info("ROC AUC: %s", summary)
    return summary


def cmd_repro(rc: RunConfig) -> None:
    if rc.events_path is None:
        cmd_gen(rc)
    cmd_extract(rc)
    cmd_train(rc)
    cmd_score(rc)
    cmd_rank(rc)
    if rc.labels_path is not None or (rc.workdir / LABELS).exists():
        cmd_eval(rc)


COMMANDS = {
    "gen": cmd_gen,
    "extract": cmd_extract,
    "train": cmd_train,
    "score": cmd_score,
    "rank": cmd_rank,
    "eval": cmd_eval,
    "repro": cmd_repro,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="compound-ueba", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", help="JSON config file (merged over the bundled defaults)")
        p.add_argument("--workdir", help="output directory (overrides config and environment)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--variant", help="detector variant")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. model.epochs=5")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = load_config(args)
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        COMMANDS[args.command](rc)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except StageError as exc:
        print(f"stage error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DataError, FormatError, GapError) as exc:
        print(f"stage error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
