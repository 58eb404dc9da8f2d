"""Command-line entry point: ``afnet <subcommand> ...``.

Subcommands:

synth       write a synthetic corpus (recordings + manifest.csv)
preprocess  segment recordings into 30-s windows with bSQI and cache them
train       two-step training from a window cache
predict     per-window predictions to the interchange CSV
evaluate    metrics report (JSON + text table) from a prediction CSV
compare     bootstrap F1 of two prediction sets and a rank test
errors      automatic categorisation of false positives and negatives

Exit status is 0 on success, 2 on a configuration error and 1 when the run
itself fails. ``--seed`` falls back to the ``AFNET_SEED`` environment
variable, then to 0.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import evaluation as ev
from . import synthetic
from .dsu import DsuConfig
from .rawecgnet import TINY_SPEC, ModelSpec, RawECGNet, TrainConfig, fit, predict_recording
from .signal_io import CANONICAL_FS, EcgRecording, list_recordings, read_recording
from .windowing import (
    align_to_grid, exclude_recording, label_cells, read_windows, rhythm_durations,
    segment, write_windows,
)

log = logging.getLogger("afnet")

PRED_COLUMNS = ["recording_id", "lead", "start_s", "end_s", "prob", "pred"]
INDEX_COLUMNS = ["split", "recording_id", "lead", "lead_order", "n_windows", "n_poor", "kept", "reason"]


class ConfigError(Exception):
    """Invalid flags, overrides or inputs detected before running."""


# --- configuration helpers --------------------------------------------------------------

def resolve_seed(seed: Optional[int]) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("AFNET_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"AFNET_SEED must be an integer, got {env!r}") from None


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(pairs, spec_kw: dict, train_kw: dict) -> None:
    """``key=value`` into the spec (``dsu.<field>`` for DSU) or ``train.<field>``."""
    spec_keys = {f.name for f in fields(ModelSpec)} - {"dsu"}
    dsu_keys = {f.name for f in fields(DsuConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        value = _parse_value(raw)
        if key in spec_keys:
            spec_kw[key] = value
        elif key.startswith("dsu.") and key[4:] in dsu_keys:
            spec_kw.setdefault("dsu", {})[key[4:]] = value
        elif key.startswith("train.") and key[6:] in train_keys:
            train_kw[key[6:]] = value
        else:
            raise ConfigError(f"unknown override key {key!r}")


def _require_dir(path, what) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise ConfigError(f"{what} {p} is not a directory")
    return p


def _require_file(path, what) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} {p} does not exist")
    return p


def _load(path) -> EcgRecording:
    rec = read_recording(path)
    return rec if rec.fs_hz == CANONICAL_FS else rec.resampled(CANONICAL_FS)


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _write_text(path, text):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


# --- prediction interchange CSV ------------------------------------------------------------

def write_predictions(rows, path) -> None:
    """Rows are ``(recording_id, lead, start_s, end_s, prob, pred)``."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRED_COLUMNS)
        for rid, lead, t0, t1, prob, pred in rows:
            w.writerow([rid, lead, repr(float(t0)), repr(float(t1)), repr(float(prob)), int(pred)])


def read_predictions(path) -> dict:
    """``{(recording_id, lead): [((t0, t1), prob, pred), ...]}``."""
    out: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(PRED_COLUMNS) - set(reader.fieldnames):
            raise ConfigError(f"{path}: expected columns {','.join(PRED_COLUMNS)}")
        for row in reader:
            prob = None if row["prob"] in ("", "nan") else float(row["prob"])
            out.setdefault((row["recording_id"], row["lead"]), []).append(
                ((float(row["start_s"]), float(row["end_s"])), prob, int(row["pred"])))
    return out


def _truth_burdens(manifest) -> dict:
    if manifest is None:
        return {}
    return {r["recording_id"]: r["b_af_truth"] for r in synthetic.read_manifest(manifest)}


def _recording_index(data_dir) -> dict:
    return {p.name: p for p in list_recordings(data_dir)}


def _annotation_burden(rec: EcgRecording) -> float:
    dur = rhythm_durations(rec.annotations, 0.0, rec.duration_s)
    total = sum(dur.values())
    return sum(v for r, v in dur.items() if r.is_afl_combined) / total if total > 0 else 0.0


def cells_by_lead(preds: dict, data_dir, manifest=None) -> dict:
    """``{lead: [RecordingCells, ...]}`` by aligning predictions to annotated grids."""
    index = _recording_index(data_dir)
    burdens = _truth_burdens(manifest)
    out: dict = {}
    cache: dict = {}
    for (rid, lead), rows in sorted(preds.items()):
        if rid not in index:
            raise ConfigError(f"prediction for unknown recording {rid!r}")
        rec = cache.get(rid) or read_recording(index[rid])
        cache = {rid: rec}
        cells = label_cells(align_to_grid(rows, rec.duration_s), rec.annotations, rec.duration_s)
        b = burdens.get(rid, _annotation_burden(rec))
        out.setdefault(lead, []).append(ev.RecordingCells(rid, cells, b, lead))
    return out


# --- subcommands -----------------------------------------------------------------------

def cmd_synth(args) -> int:
    profile = synthetic.MixProfile(af_prevalence=args.af_prevalence, duration_s=args.duration)
    splits = None
    if args.train is not None or args.val is not None or args.test is not None:
        if None in (args.train, args.val, args.test):
            raise ConfigError("--train, --val and --test must be given together")
        splits = {"train": args.train, "val": args.val, "test": args.test}
        if sum(splits.values()) != args.n_recordings:
            raise ConfigError("--train + --val + --test must equal --n-recordings")
    manifest = synthetic.generate_corpus(args.out, args.n_recordings, profile, args.seed, splits)
    log.info("wrote %s", manifest)
    return 0


def _preprocess_one(job):
    split, path, out = job
    rec = _load(path)
    rows = []
    per_lead = [(lead, segment(rec, lead)) for lead in rec.lead_names]
    keep, reason = exclude_recording(rec, per_lead[0][1] if per_lead else [])
    for order, (lead, windows) in enumerate(per_lead):
        target = Path(out) / split / rec.recording_id / f"windows_{lead}.bin"
        target.parent.mkdir(parents=True, exist_ok=True)
        write_windows(windows, target)
        rows.append([split, rec.recording_id, lead, order, len(windows),
                     sum(w.bsqi < 0.8 for w in windows), int(keep), reason])
    return rows


def cmd_preprocess(args) -> int:
    data = _require_dir(args.data, "data")
    splits = args.splits.split(",")
    jobs = []
    for split in splits:
        root = data / split if (data / split).is_dir() else None
        if root is None:
            raise ConfigError(f"split directory {data / split} missing")
        jobs += [(split, p, str(args.out)) for p in list_recordings(root)]
    if not jobs:
        raise ConfigError(f"no recordings found below {data}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "index.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INDEX_COLUMNS)
        for rows in _map(_preprocess_one, jobs, args.jobs):
            w.writerows(rows)
    return 0


def _read_index(cache) -> list[dict]:
    path = _require_file(Path(cache) / "index.csv", "cache index")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_split_windows(cache, split: str, single_lead: bool) -> list:
    windows = []
    for row in _read_index(cache):
        if row["split"] != split or row["kept"] != "1":
            continue
        if single_lead and row["lead_order"] != "0":
            continue
        path = Path(cache) / split / row["recording_id"] / f"windows_{row['lead']}.bin"
        windows += read_windows(path, row["recording_id"], row["lead"])
    return windows


def build_spec(args) -> tuple[ModelSpec, TrainConfig]:
    spec_kw = dict(TINY_SPEC) if args.tiny else {}
    train_kw = {}
    apply_overrides(args.set, spec_kw, train_kw)
    if args.no_dsu:
        spec_kw["use_dsu"] = False
    if args.no_bigru:
        spec_kw["use_bigru"] = False
    if args.single_lead:
        spec_kw["multi_lead_training"] = False
    for flag in ("max_epochs", "batch_size", "lr", "patience"):
        if getattr(args, flag) is not None:
            train_kw[flag] = getattr(args, flag)
    train_kw["seed"] = args.seed
    try:
        return ModelSpec.from_dict(spec_kw), TrainConfig(**train_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def cmd_train(args) -> int:
    spec, cfg = build_spec(args)
    _read_index(args.cache)
    train = load_split_windows(args.cache, "train", not spec.multi_lead_training)
    val = load_split_windows(args.cache, "val", not spec.multi_lead_training)
    if not train:
        raise ConfigError("cache holds no usable training windows")
    model = RawECGNet.build(spec, args.seed)
    history = fit(model, train, val, cfg)
    model.save(args.out)
    _write_text(Path(args.out) / "history.json", json.dumps(history, indent=2, sort_keys=True) + "\n")
    log.info("threshold %.4f, %d parameters", model.threshold, model.n_params())
    return 0


_WORKER_MODEL = None


def _init_worker(model_dir):
    global _WORKER_MODEL
    _WORKER_MODEL = RawECGNet.load(model_dir)


def _predict_one(job):
    path, leads = job
    rec = _load(path)
    rows = []
    for lead in (leads or rec.lead_names):
        if lead not in rec.lead_names:
            continue
        for (t0, t1), prob, pred in predict_recording(rec, lead, _WORKER_MODEL):
            rows.append((rec.recording_id, lead, t0, t1, prob, pred))
    return rows


def cmd_predict(args) -> int:
    _require_dir(args.model, "model")
    data = _require_dir(args.data, "data")
    paths = list_recordings(data)
    if not paths:
        raise ConfigError(f"no recordings found below {data}")
    leads = None if args.leads in (None, "all") else args.leads.split(",")
    jobs = [(p, leads) for p in paths]
    if args.jobs <= 1:
        _init_worker(args.model)
        results = [_predict_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(args.jobs, initializer=_init_worker, initargs=(str(args.model),)) as pool:
            results = list(pool.map(_predict_one, jobs))
    write_predictions([r for rows in results for r in rows], args.out)
    return 0


def cmd_evaluate(args) -> int:
    preds = read_predictions(_require_file(args.pred, "prediction file"))
    data = _require_dir(args.data, "data")
    manifest = _require_file(args.manifest, "manifest") if args.manifest else None
    groups = cells_by_lead(preds, data, manifest)
    reports = [ev.evaluate(recs, args.n_boot, args.seed, args.dataset, lead, args.model_name)
               for lead, recs in sorted(groups.items())]
    payload = {"reports": [r.to_dict() for r in reports]}
    if args.json:
        _write_text(args.json, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _write_text(args.table, ev.format_table(reports))
    return 0


def cmd_compare(args) -> int:
    pa = read_predictions(_require_file(args.pred_a, "prediction file"))
    pb = read_predictions(_require_file(args.pred_b, "prediction file"))
    data = _require_dir(args.data, "data")
    ga, gb = cells_by_lead(pa, data), cells_by_lead(pb, data)
    leads = sorted(set(ga) & set(gb))
    if not leads:
        raise ConfigError("the two prediction sets share no lead")
    out = {}
    for lead in leads:
        # the same resampling stream for both sets (common random numbers)
        fa = ev.bootstrap_f1_samples([r.cells for r in ga[lead]], args.n_boot, np.random.default_rng(args.seed))
        fb = ev.bootstrap_f1_samples([r.cells for r in gb[lead]], args.n_boot, np.random.default_rng(args.seed))
        u, p = ev.mann_whitney(fa[~np.isnan(fa)], fb[~np.isnan(fb)])
        out[lead] = {"f1_a": list(ev.quartiles(fa)), "f1_b": list(ev.quartiles(fb)),
                     "u": u, "p_value": p, "significant": bool(p < 0.05)}
    _write_text(args.out, json.dumps(out, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_errors(args) -> int:
    preds = read_predictions(_require_file(args.pred, "prediction file"))
    index = _recording_index(_require_dir(args.data, "data"))
    all_errors, per_recording = [], {}
    for (rid, lead), rows in sorted(preds.items()):
        if rid not in index:
            raise ConfigError(f"prediction for unknown recording {rid!r}")
        rec = _load(index[rid])
        cells = label_cells(align_to_grid(rows, rec.duration_s), rec.annotations, rec.duration_s)
        errs = ev.categorize_errors(cells, rec.annotations, segment(rec, lead))
        all_errors += errs
        per_recording[f"{rid}/{lead}"] = ev.summarize_errors(errs)
    out = {"total": ev.summarize_errors(all_errors), "per_recording": per_recording}
    _write_text(args.out, json.dumps(out, indent=2, sort_keys=True) + "\n")
    return 0


# --- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="afnet", description="Raw-ECG AF detection pipeline")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="random seed (default: $AFNET_SEED or 0)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes across recordings")
        return sp

    s = common(sub.add_parser("synth", help="generate a synthetic corpus"))
    s.add_argument("--out", required=True)
    s.add_argument("--n-recordings", type=int, default=90)
    s.add_argument("--train", type=int)
    s.add_argument("--val", type=int)
    s.add_argument("--test", type=int)
    s.add_argument("--duration", type=float, default=600.0, help="seconds per recording")
    s.add_argument("--af-prevalence", type=float, default=0.2)
    s.set_defaults(func=cmd_synth)

    s = common(sub.add_parser("preprocess", help="segment, score quality and cache windows"))
    s.add_argument("--data", required=True, help="corpus root holding split directories")
    s.add_argument("--out", required=True, help="window cache directory")
    s.add_argument("--splits", default="train,val,test")
    s.set_defaults(func=cmd_preprocess)

    s = common(sub.add_parser("train", help="two-step training from a window cache"))
    s.add_argument("--cache", required=True)
    s.add_argument("--out", required=True, help="checkpoint directory")
    s.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="spec override; dsu.<field> and train.<field> are also accepted")
    s.add_argument("--tiny", action="store_true", help="start from the compact desk-scale spec")
    s.add_argument("--no-dsu", action="store_true")
    s.add_argument("--no-bigru", action="store_true")
    s.add_argument("--single-lead", action="store_true")
    s.add_argument("--max-epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--patience", type=int)
    s.set_defaults(func=cmd_train)

    s = common(sub.add_parser("predict", help="window predictions to CSV"))
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True, help="directory searched for recordings")
    s.add_argument("--out", required=True)
    s.add_argument("--leads", default="all", help="comma-separated lead names or 'all'")
    s.set_defaults(func=cmd_predict)

    s = common(sub.add_parser("evaluate", help="metrics report from a prediction CSV"))
    s.add_argument("--pred", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--manifest", help="manifest.csv with truth burdens")
    s.add_argument("--json", help="write the JSON report here")
    s.add_argument("--table", default="-", help="text table destination (default stdout)")
    s.add_argument("--dataset", default="")
    s.add_argument("--model-name", default="")
    s.add_argument("--n-boot", type=int, default=100)
    s.set_defaults(func=cmd_evaluate)

    s = common(sub.add_parser("compare", help="bootstrap F1 comparison of two prediction sets"))
    s.add_argument("--pred-a", required=True)
    s.add_argument("--pred-b", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--n-boot", type=int, default=100)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_compare)

    s = common(sub.add_parser("errors", help="categorise prediction errors"))
    s.add_argument("--pred", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_errors)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.seed = resolve_seed(args.seed)
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        return args.func(args)
    except ConfigError as exc:
        print(f"afnet: configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"afnet: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
