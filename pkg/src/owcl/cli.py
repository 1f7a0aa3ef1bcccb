"""Experiment command line: dataset generation, grids, presets and reports.

Usage::

    owcl generate --config exp.yaml --out data/
    owcl run      --config exp.yaml --out results/ --jobs 4
    owcl ablate   --out results/ablate
    owcl strategies --seed 0 --out results/strategies
    owcl report   --out results/

A grid cell is one (trainer, increment, seed) triple. Every method sharing
a trainer is scored from the same training run, so ACC columns of methods
that differ only in scoring are identical by construction. Each cell writes
its own JSON result atomically; ``report`` rebuilds every CSV and plot from
those files. Timestamps and timings live only in ``manifest.json``.
"""

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import platform
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from functools import lru_cache

import numpy as np

from . import __version__, datagen, kernels
from .errors import ConfigError, OwclError
from .evaluation import aggregate, evaluate_task, paired_wilcoxon
from .memory import Policy
from .model import ArchConfig, save_checkpoint
from .plots import histogram, taskwise_curve
from .score import Strategy
from .train import TrainConfig, TrainerKind, run_stream

log = logging.getLogger("owcl")

DEFAULT_METHODS = (
    "morst+moas_adaptive",
    "er+baseline_msp",
    "er+baseline_maxlogit",
    "er+baseline_entropy",
    "er+baseline_energy",
    "derpp_style+baseline_energy",
)

ABLATION_METHODS = (
    {"trainer": "morst", "strategy": "moas_adaptive", "label": "MAND"},
    {"trainer": "morst", "strategy": "main_only", "label": "w/o MoAS"},
    {"trainer": "er", "strategy": "moas_adaptive", "label": "w/o MoRST"},
    {"trainer": "er", "strategy": "baseline_maxlogit", "label": "w/o MoAS and MoRST"},
)

STRATEGY_METHODS = (
    {"trainer": "morst", "strategy": "main_only", "label": "main only"},
    {"trainer": "morst", "strategy": "uniform_sum", "label": "uniform sum"},
    {"trainer": "morst", "strategy": "uniform_average", "label": "uniform average"},
    {"trainer": "morst", "strategy": "moas_adaptive", "label": "adaptive"},
)

TOP_KEYS = ("dataset", "settings", "seeds", "methods", "train", "reference",
            "dump_scores", "checkpoints", "histogram_task", "out")
GEN_FIELDS = {f.name for f in fields(datagen.GenSpec)}
TRAIN_FIELDS = {f.name for f in fields(TrainConfig)} - {"trainer"}
ARCH_FIELDS = {f.name for f in fields(ArchConfig)}

METRIC_COLUMNS = ("method", "strategy", "setting", "seed", "task", "auc", "fpr95", "acc", "fgt",
                  "auc_final", "fpr95_final", "auc_std", "fpr95_std", "acc_std", "fgt_std", "label")
TASKWISE_COLUMNS = ("method", "strategy", "setting", "seed", "task", "auc", "fpr95", "acc", "label")
SIGNIFICANCE_COLUMNS = ("method_a", "method_b", "metric", "p_value", "direction", "setting", "n")
LOSS_COLUMNS = ("run_id", "trainer", "task", "epoch", "l_ce_main", "l_ce_mod", "l_kd", "l_total")


# configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class Method:
    trainer: str
    strategy: str
    label: str


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: datagen.GenSpec
    dataset_path: str
    dataset_digest: str
    settings: tuple
    seeds: tuple
    methods: tuple
    train: TrainConfig
    reference: str
    dump_scores: bool
    checkpoints: bool
    histogram_task: int
    out: str

    def trainers(self):
        out = []
        for m in self.methods:
            if m.trainer not in out:
                out.append(m.trainer)
        return out

    def strategies_for(self, trainer):
        out = []
        for m in self.methods:
            if m.trainer == trainer and m.strategy not in out:
                out.append(m.strategy)
        return out

    def normalized(self):
        """Plain-data view used for hashing and for ``config.json``."""
        train = asdict(self.train)
        train.pop("trainer")
        train["decay_epochs"] = list(train["decay_epochs"])
        ds = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.dataset).items()}
        return {
            "dataset": {"path": self.dataset_path, "sha256": self.dataset_digest} if self.dataset_path else ds,
            "settings": list(self.settings),
            "seeds": list(self.seeds),
            "methods": [asdict(m) for m in self.methods],
            "train": train,
            "reference": self.reference,
            "dump_scores": self.dump_scores,
            "checkpoints": self.checkpoints,
            "histogram_task": self.histogram_task,
        }


def canonical_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def config_hash(cfg):
    return canonical_hash(cfg.normalized())


def _is_int(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)


def _parse_method(entry, path, problems):
    if isinstance(entry, str):
        parts = entry.split("+")
        if len(parts) != 2:
            problems.append(f"{path}: expected 'trainer+strategy', got {entry!r}")
            return None
        trainer, strategy, label = parts[0], parts[1], entry
    elif isinstance(entry, dict):
        unknown = set(entry) - {"trainer", "strategy", "label"}
        for k in sorted(unknown):
            problems.append(f"{path}.{k}: unknown key")
        trainer, strategy = entry.get("trainer"), entry.get("strategy")
        label = entry.get("label") or f"{trainer}+{strategy}"
    else:
        problems.append(f"{path}: expected a string or mapping, got {type(entry).__name__}")
        return None
    ok = True
    if trainer not in {k.value for k in TrainerKind}:
        problems.append(f"{path}.trainer: unknown trainer {trainer!r}")
        ok = False
    if strategy not in {s.value for s in Strategy}:
        problems.append(f"{path}.strategy: unknown strategy {strategy!r}")
        ok = False
    return Method(trainer, strategy, str(label)) if ok else None


def _file_digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _check_dataset(raw, problems):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        problems.append("dataset: expected a mapping")
        return datagen.GenSpec(), None, None
    if "path" in raw:
        for k in sorted(set(raw) - {"path"}):
            problems.append(f"dataset.{k}: not allowed together with dataset.path")
        path = str(raw["path"])
        try:
            obj = datagen.load(path)
        except (OSError, OwclError) as exc:
            problems.append(f"dataset.path: cannot load {path!r}: {exc}")
            return datagen.GenSpec(), path, None
        if isinstance(obj, datagen.TaskStream):
            problems.append(f"dataset.path: {path!r} holds a task stream, expected a plain dataset")
            return datagen.GenSpec(), path, None
        return datagen.GenSpec(num_classes=obj.num_classes, dims=obj.dims,
                               informativeness=(1.0,) * len(obj.dims),
                               dominance_scale=(1.0,) * len(obj.dims),
                               spread=(1.0,) * len(obj.dims),
                               degradation=(0.0,) * len(obj.dims)), path, obj.num_classes
    kw = {}
    for k, v in raw.items():
        if k not in GEN_FIELDS:
            problems.append(f"dataset.{k}: unknown key")
            continue
        if isinstance(v, list):
            bad = [x for x in v if not _is_num(x)]
            if bad:
                problems.append(f"dataset.{k}: expected numbers, got {bad[0]!r}")
                continue
            v = tuple(int(x) if k == "dims" else float(x) for x in v)
        elif k in ("num_classes", "train_per_class", "test_per_class", "seed"):
            if not _is_int(v):
                problems.append(f"dataset.{k}: expected an integer, got {v!r}")
                continue
        elif not _is_num(v):
            problems.append(f"dataset.{k}: expected a number or list, got {v!r}")
            continue
        kw[k] = v
    # a shorter dims list implies matching per-modality defaults
    if "dims" in kw:
        k = len(kw["dims"])
        defaults = {"informativeness": (1.0,) + (0.5,) * (k - 1), "dominance_scale": (2.0,) + (1.0,) * (k - 1),
                    "spread": (1.0,) * k, "degradation": (0.0,) * k}
        for name, val in defaults.items():
            kw.setdefault(name, val)
    try:
        spec = datagen.GenSpec(**kw)
        datagen.group_assignment(spec)
    except OwclError as exc:
        problems.append(f"dataset: {exc}")
        return datagen.GenSpec(), None, kw.get("num_classes")
    return spec, None, spec.num_classes


def _check_train(raw, problems):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        problems.append("train: expected a mapping")
        return TrainConfig()
    kw = {}
    for k, v in raw.items():
        p = f"train.{k}"
        if k == "trainer":
            problems.append(f"{p}: the trainer is chosen per method, not in train")
        elif k not in TRAIN_FIELDS:
            problems.append(f"{p}: unknown key")
        elif k == "arch":
            if not isinstance(v, dict):
                problems.append(f"{p}: expected a mapping")
                continue
            arch = {}
            for ak, av in v.items():
                if ak not in ARCH_FIELDS:
                    problems.append(f"{p}.{ak}: unknown key")
                elif not _is_int(av) or av < 1:
                    problems.append(f"{p}.{ak}: must be an integer >= 1, got {av!r}")
                else:
                    arch[ak] = int(av)
            kw["arch"] = ArchConfig(**arch)
        elif k in ("lam", "beta"):
            if not _is_num(v) or not math.isfinite(v) or v < 0:
                problems.append(f"{p}: must be a finite number >= 0, got {v!r}")
            else:
                kw[k] = float(v)
        elif k in ("epochs", "batch_size"):
            if not _is_int(v) or v < 1:
                problems.append(f"{p}: must be an integer >= 1, got {v!r}")
            else:
                kw[k] = int(v)
        elif k in ("replay_batch_size", "buffer_capacity", "stats_ddof"):
            if not _is_int(v) or v < 0:
                problems.append(f"{p}: must be an integer >= 0, got {v!r}")
            else:
                kw[k] = int(v)
        elif k in ("lr_sgd", "lr_rmsprop", "rmsprop_epsilon", "decay_factor"):
            if not _is_num(v) or not v > 0:
                problems.append(f"{p}: must be > 0, got {v!r}")
            else:
                kw[k] = float(v)
        elif k == "rmsprop_decay":
            if not _is_num(v) or not 0 <= v < 1:
                problems.append(f"{p}: must lie in [0, 1), got {v!r}")
            else:
                kw[k] = float(v)
        elif k == "decay_epochs":
            if not isinstance(v, list) or not all(_is_int(x) and x >= 0 for x in v):
                problems.append(f"{p}: must be a list of integers >= 0, got {v!r}")
            else:
                kw[k] = tuple(int(x) for x in v)
        elif k == "buffer_policy":
            if v not in {p_.value for p_ in Policy}:
                problems.append(f"{p}: unknown policy {v!r}")
            else:
                kw[k] = v
    return TrainConfig(**kw)


def validate_config(raw, overrides=None):
    """Normalise a parsed config mapping, filling every default.

    Raises ConfigError listing every problem with its field path.
    ``overrides`` holds command-line values (``seed``, ``out``).
    """
    problems = []
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError([f"<root>: expected a mapping, got {type(raw).__name__}"])
    for k in sorted(set(raw) - set(TOP_KEYS)):
        problems.append(f"{k}: unknown key")
    spec, path, n_classes = _check_dataset(raw.get("dataset"), problems)
    n_classes = n_classes or spec.num_classes

    settings = raw.get("settings")
    if settings is None:
        settings = [n_classes // d for d in (2, 4, 8) if n_classes // d >= 1 and n_classes % (n_classes // d) == 0]
    if not isinstance(settings, list) or not settings:
        problems.append("settings: expected a non-empty list of increments")
        settings = []
    for i, inc in enumerate(settings):
        if not _is_int(inc) or inc < 1:
            problems.append(f"settings[{i}]: increment must be an integer >= 1, got {inc!r}")
        elif n_classes % inc:
            problems.append(f"settings[{i}]: increment {inc} does not divide {n_classes} classes")

    seeds = raw.get("seeds", list(range(5)))
    if overrides and overrides.get("seed") is not None:
        seeds = [overrides["seed"]]
    if not isinstance(seeds, list) or not seeds:
        problems.append("seeds: expected a non-empty list")
        seeds = []
    elif not all(_is_int(s) and s >= 0 for s in seeds):
        problems.append(f"seeds: expected integers >= 0, got {seeds!r}")
    elif len(set(seeds)) != len(seeds):
        problems.append(f"seeds: must be distinct, got {seeds!r}")

    methods_raw = raw.get("methods", list(DEFAULT_METHODS))
    methods = []
    if not isinstance(methods_raw, list) or not methods_raw:
        problems.append("methods: expected a non-empty list")
    else:
        for i, entry in enumerate(methods_raw):
            m = _parse_method(entry, f"methods[{i}]", problems)
            if m is not None:
                methods.append(m)
        labels = [m.label for m in methods]
        if len(set(labels)) != len(labels):
            problems.append(f"methods: labels must be distinct, got {labels}")

    train = _check_train(raw.get("train"), problems)
    reference = raw.get("reference", methods[0].label if methods else "")
    if methods and reference not in [m.label for m in methods]:
        problems.append(f"reference: {reference!r} is not a method label")

    for flag in ("dump_scores", "checkpoints"):
        if flag in raw and not isinstance(raw[flag], bool):
            problems.append(f"{flag}: expected true or false, got {raw[flag]!r}")
    hist_task = raw.get("histogram_task", 0)
    if not _is_int(hist_task) or hist_task < 0:
        problems.append(f"histogram_task: must be an integer >= 0, got {hist_task!r}")
    out = (overrides or {}).get("out") or raw.get("out") or "results"
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        dataset=spec,
        dataset_path=path,
        dataset_digest=_file_digest(path) if path else "",
        settings=tuple(int(s) for s in settings),
        seeds=tuple(int(s) for s in seeds),
        methods=tuple(methods),
        train=train,
        reference=reference,
        dump_scores=bool(raw.get("dump_scores", False)),
        checkpoints=bool(raw.get("checkpoints", False)),
        histogram_task=int(hist_task),
        out=str(out),
    )


def load_config(path, overrides=None):
    """Read a YAML (or JSON) file and validate it. ``None`` gives the defaults."""
    import yaml

    if path is None:
        return validate_config({}, overrides)
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError([f"<file>: cannot parse {path}: {exc}"]) from exc
    return validate_config(raw, overrides)


# grid cells ------------------------------------------------------------------


@lru_cache(maxsize=4)
def _dataset(spec, path):
    return datagen.load(path) if path else datagen.generate(spec)


def run_id(trainer, inc, seed):
    return f"{trainer}-inc{inc}-seed{seed}"


def cell_hash(cfg, trainer, inc, seed):
    norm = cfg.normalized()
    return canonical_hash({
        "dataset": norm["dataset"], "train": norm["train"], "trainer": trainer, "setting": inc, "seed": seed,
        "strategies": cfg.strategies_for(trainer), "histogram_task": cfg.histogram_task,
        "histogram_seed": cfg.seeds[0],
    })


def _atomic_write(path, text):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if r.get(c) is None else r.get(c) for c in columns])
    return buf.getvalue()


def _num(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return None
    return f"{v:.10g}"


def _nan_to_none(v):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v)


def run_cell(cfg, trainer, inc, seed):
    """Train one stream and score it with every strategy requested for ``trainer``.

    Returns the result dict that is also written to ``cells/<run_id>.json``.
    """
    rid = run_id(trainer, inc, seed)
    dataset = _dataset(cfg.dataset, cfg.dataset_path)
    stream = datagen.split_tasks(dataset, inc, seed)
    tcfg = replace(cfg.train, trainer=trainer)
    res = run_stream(stream, tcfg, seed)
    strategies = cfg.strategies_for(trainer)
    n_tasks = len(stream.tasks)
    acc = []
    per = {s: {"auc": [], "fpr95": []} for s in strategies}
    hist = {}
    want_hist = seed == cfg.seeds[0] and cfg.histogram_task < n_tasks - 1
    keep = cfg.dump_scores or want_hist
    score_rows = []
    for t in range(n_tasks):
        ev = evaluate_task(res.snapshots[t], res.stats[t], stream, t, strategies, keep_scores=keep)
        acc.append(ev.accuracies)
        for s in strategies:
            if t < n_tasks - 1:
                per[s]["auc"].append(ev.auc[s])
                per[s]["fpr95"].append(ev.fpr95[s])
        if want_hist and t == cfg.histogram_task:
            for s in strategies:
                sc = ev.scores[s].s
                hist[s] = {"known": sc[~ev.is_novel].tolist(), "novel": sc[ev.is_novel].tolist()}
        if cfg.dump_scores:
            score_rows.extend(_score_rows(rid, t, ev, strategies, stream))
    out_dir = cfg.out
    losses = [
        {"run_id": rid, "trainer": trainer, "task": lg.task + 1, "epoch": lg.epoch + 1,
         "l_ce_main": _num(lg.losses.l_ce_main), "l_ce_mod": _num(lg.losses.l_ce_modality_avg),
         "l_kd": _num(lg.losses.l_kd), "l_total": _num(lg.losses.l_total)}
        for lg in res.logs
    ]
    _atomic_write(os.path.join(out_dir, "losses", f"{rid}.csv"), _csv_text(LOSS_COLUMNS, losses))
    if cfg.dump_scores:
        mods = stream.modalities
        cols = ("run_id", "task", "sample_id", "true_label", "is_novel", "strategy", "s") + tuple(
            f"{k}_{m}" for k in ("E", "r", "alpha") for m in mods)
        _atomic_write(os.path.join(out_dir, "scores", f"{rid}.csv"), _csv_text(cols, score_rows))
    if cfg.checkpoints:
        path = os.path.join(out_dir, "checkpoints", f"{rid}.npz")
        save_checkpoint(res.snapshots[-1], path + ".tmp", res.buffer.to_arrays())
        os.replace(path + ".tmp", path)
    result = {
        "run_id": rid,
        "cell_hash": cell_hash(cfg, trainer, inc, seed),
        "trainer": trainer,
        "setting": inc,
        "seed": seed,
        "tasks": n_tasks,
        "acc_matrix": acc,
        "novelty": per,
        "histogram": hist,
    }
    _atomic_write(os.path.join(out_dir, "cells", f"{rid}.json"),
                  json.dumps(result, sort_keys=True, indent=1) + "\n")
    return result


def _score_rows(rid, t, ev, strategies, stream):
    order = np.asarray(stream.class_order)
    mods = stream.modalities
    rows = []
    for s in strategies:
        b = ev.scores[s]
        for i in range(len(b.s)):
            row = {"run_id": rid, "task": t + 1, "sample_id": int(ev.ids[i]),
                   "true_label": int(order[ev.labels[i]]), "is_novel": int(ev.is_novel[i]),
                   "strategy": s, "s": _num(float(b.s[i]))}
            for j, m in enumerate(mods):
                row[f"E_{m}"] = _num(float(b.energy[i, j])) if b.energy is not None else None
                row[f"r_{m}"] = _num(float(b.reliability[i, j])) if b.reliability is not None else None
                row[f"alpha_{m}"] = _num(float(b.alpha[i, j])) if b.alpha is not None else None
            rows.append(row)
    return rows


def _cell_worker(args):
    cfg, trainer, inc, seed = args
    start = time.time()
    try:
        run_cell(cfg, trainer, inc, seed)
        return run_id(trainer, inc, seed), "ok", time.time() - start, ""
    except (OwclError, ArithmeticError, ValueError) as exc:
        return run_id(trainer, inc, seed), "failed", time.time() - start, f"{type(exc).__name__}: {exc}"


# reports ---------------------------------------------------------------------


def _mean_std(vals):
    vals = [v for v in vals if v is not None]
    if not vals:
        return None, None
    std = float(np.std(vals, ddof=1)) if len(vals) >= 2 else None
    return float(np.mean(vals)), std


def build_tables(config_norm, cells):
    """Metric, task-wise and significance rows from cell results."""
    cells = {(c["trainer"], c["setting"], c["seed"]): c for c in cells}
    metrics, taskwise, summary = [], [], {}
    methods = [Method(**m) for m in config_norm["methods"]]
    for inc in config_norm["settings"]:
        for m in methods:
            seed_rows = []
            for seed in config_norm["seeds"]:
                c = cells.get((m.trainer, inc, seed))
                if c is None:
                    continue
                nov = c["novelty"][m.strategy]
                accm = c["acc_matrix"]
                agg = aggregate(nov["auc"], nov["fpr95"], accm)
                for t in range(c["tasks"]):
                    taskwise.append({
                        "method": m.trainer, "strategy": m.strategy, "setting": inc, "seed": seed, "task": t + 1,
                        "auc": _num(nov["auc"][t]) if t < len(nov["auc"]) else None,
                        "fpr95": _num(nov["fpr95"][t]) if t < len(nov["fpr95"]) else None,
                        "acc": _num(float(np.mean(accm[t]))), "label": m.label})
                row = {"method": m.trainer, "strategy": m.strategy, "setting": inc, "seed": seed, "task": "all",
                       "auc": agg.auc_T, "fpr95": agg.fpr95_T, "acc": agg.acc_T, "fgt": _nan_to_none(agg.fgt_T),
                       "auc_final": agg.auc_final, "fpr95_final": agg.fpr95_final, "label": m.label}
                seed_rows.append(row)
                summary[(m.label, inc, seed)] = (nov, agg)
            for r in seed_rows:
                metrics.append({k: (_num(v) if isinstance(v, float) else v) for k, v in r.items()})
            if seed_rows:
                agg_row = {"method": m.trainer, "strategy": m.strategy, "setting": inc, "seed": "mean",
                           "task": "all", "label": m.label}
                for k in ("auc", "fpr95", "acc", "fgt", "auc_final", "fpr95_final"):
                    mean, std = _mean_std([_nan_to_none(r[k]) for r in seed_rows])
                    agg_row[k] = _num(mean)
                    if k in ("auc", "fpr95", "acc", "fgt"):
                        agg_row[f"{k}_std"] = _num(std)
                metrics.append(agg_row)
    significance = []
    ref = config_norm["reference"]
    for inc in config_norm["settings"]:
        for m in methods:
            if m.label == ref:
                continue
            pairs = {"auc": ([], []), "fpr95": ([], []), "acc": ([], [])}
            for seed in config_norm["seeds"]:
                a, b = summary.get((m.label, inc, seed)), summary.get((ref, inc, seed))
                if a is None or b is None:
                    continue
                for k in ("auc", "fpr95"):
                    pairs[k][0].extend(a[0][k])
                    pairs[k][1].extend(b[0][k])
                pairs["acc"][0].append(a[1].acc_T)
                pairs["acc"][1].append(b[1].acc_T)
            for metric, (xa, xb) in pairs.items():
                if not xa:
                    continue
                res, direction = paired_wilcoxon(xa, xb)
                significance.append({"method_a": m.label, "method_b": ref, "metric": metric,
                                     "p_value": _num(res.p_value), "direction": direction,
                                     "setting": inc, "n": res.n})
    return metrics, taskwise, significance


def _slug(text):
    return re.sub(r"[^A-Za-z0-9]+", "_", text).strip("_").lower()


def report(out_dir):
    """Rebuild every CSV and plot in ``out_dir`` from its cell results."""
    with open(os.path.join(out_dir, "config.json"), encoding="utf-8") as fh:
        norm = json.load(fh)
    cell_dir = os.path.join(out_dir, "cells")
    cells = []
    for name in sorted(os.listdir(cell_dir)) if os.path.isdir(cell_dir) else []:
        if name.endswith(".json"):
            with open(os.path.join(cell_dir, name), encoding="utf-8") as fh:
                cells.append(json.load(fh))
    metrics, taskwise, significance = build_tables(norm, cells)
    _atomic_write(os.path.join(out_dir, "metrics.csv"), _csv_text(METRIC_COLUMNS, metrics))
    _atomic_write(os.path.join(out_dir, "taskwise.csv"), _csv_text(TASKWISE_COLUMNS, taskwise))
    _atomic_write(os.path.join(out_dir, "significance.csv"), _csv_text(SIGNIFICANCE_COLUMNS, significance))
    loss_dir = os.path.join(out_dir, "losses")
    parts = [_csv_text(LOSS_COLUMNS, [])]
    for name in sorted(os.listdir(loss_dir)) if os.path.isdir(loss_dir) else []:
        if name.endswith(".csv"):
            with open(os.path.join(loss_dir, name), encoding="utf-8") as fh:
                parts.append("".join(fh.readlines()[1:]))
    _atomic_write(os.path.join(out_dir, "losses.csv"), "".join(parts))
    _plots(out_dir, norm, taskwise, cells)
    return metrics, taskwise, significance


def _plots(out_dir, norm, taskwise, cells):
    plot_dir = os.path.join(out_dir, "plots")
    os.makedirs(plot_dir, exist_ok=True)
    methods = [Method(**m) for m in norm["methods"]]
    for inc in norm["settings"]:
        for metric in ("auc", "acc"):
            series = {}
            for m in methods:
                by_task = {}
                for r in taskwise:
                    if r["label"] == m.label and r["setting"] == inc and r[metric] is not None:
                        by_task.setdefault(r["task"], []).append(float(r[metric]))
                if by_task:
                    series[m.label] = [float(np.mean(by_task[t])) for t in sorted(by_task)]
            if series:
                taskwise_curve(series, os.path.join(plot_dir, f"{metric}_inc{inc}.svg"),
                               title=f"{metric.upper()} per task, increment {inc}", ylabel=metric.upper())
        first = norm["seeds"][0]
        for m in methods:
            for c in cells:
                if (c["trainer"], c["setting"], c["seed"]) == (m.trainer, inc, first) and m.strategy in c["histogram"]:
                    h = c["histogram"][m.strategy]
                    if h["known"] and h["novel"]:
                        histogram({"known": h["known"], "novel": h["novel"]},
                                  os.path.join(plot_dir, f"hist_{_slug(m.label)}_inc{inc}.svg"),
                                  title=f"{m.label}, increment {inc}, task {norm['histogram_task'] + 1}")


# grid driver -------------------------------------------------------------------


def _versions():
    import scipy

    return {"owcl": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "kernels": kernels.BACKEND}


def run_grid(cfg, jobs=1):
    """Run every cell, flush results, then rebuild the reports. Returns the failed run ids."""
    out = cfg.out
    for sub in ("cells", "losses", "plots") + (("scores",) if cfg.dump_scores else ()) + (
            ("checkpoints",) if cfg.checkpoints else ()):
        os.makedirs(os.path.join(out, sub), exist_ok=True)
    norm = cfg.normalized()
    _atomic_write(os.path.join(out, "config.json"), json.dumps(norm, sort_keys=True, indent=1) + "\n")
    work = [(cfg, tr, inc, seed) for inc in cfg.settings for tr in cfg.trainers() for seed in cfg.seeds]
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    t0 = time.time()
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cell_worker, work))
    else:
        results = [_cell_worker(w) for w in work]
    for rid, status, secs, err in results:
        log.info("%s %s (%.1fs) %s", rid, status, secs, err)
    report(out)
    manifest = {
        "config_hash": config_hash(cfg),
        "config": norm,
        "versions": _versions(),
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "seconds": round(time.time() - t0, 3),
        "jobs": jobs,
        "cells": [{"run_id": rid, "cell_hash": cell_hash(cfg, *w[1:]), "seed": w[3], "status": status,
                   "seconds": round(secs, 3), "error": err}
                  for (rid, status, secs, err), w in zip(results, work)],
    }
    _atomic_write(os.path.join(out, "manifest.json"), json.dumps(manifest, indent=1) + "\n")
    return [rid for rid, status, _, _ in results if status != "ok"]


def _print_summary(out_dir):
    with open(os.path.join(out_dir, "metrics.csv"), encoding="utf-8") as fh:
        rows = [r for r in csv.DictReader(fh) if r["seed"] == "mean"]
    print(f"{'method':<28} {'inc':>4} {'AUC_T':>8} {'FPR95_T':>8} {'ACC_T':>8} {'FGT_T':>8}")
    for r in rows:
        vals = [float(r[k]) * 100 if r[k] else float("nan") for k in ("auc", "fpr95", "acc", "fgt")]
        print(f"{r['label']:<28} {r['setting']:>4} " + " ".join(f"{v:8.2f}" for v in vals))


# command line ----------------------------------------------------------------


def _preset(raw, methods, reference):
    raw = dict(raw or {})
    raw["methods"] = [dict(m) for m in methods]
    raw["reference"] = reference
    return raw


def _read_raw(path):
    import yaml

    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ConfigError([f"<file>: cannot parse {path}: {exc}"]) from exc


def cmd_generate(args):
    raw = _read_raw(args.config)
    if args.seed is not None:
        raw.setdefault("dataset", {})
        raw["dataset"] = dict(raw["dataset"] or {}, seed=args.seed)
    cfg = validate_config(raw, {"out": args.out})
    os.makedirs(cfg.out, exist_ok=True)
    ds = _dataset(cfg.dataset, cfg.dataset_path)
    path = os.path.join(cfg.out, "dataset.owcl")
    datagen.save(ds, path)
    print(path)
    if args.increment:
        spath = os.path.join(cfg.out, f"stream_inc{args.increment}.owcl")
        datagen.save(datagen.split_tasks(ds, args.increment, cfg.dataset.seed), spath)
        print(spath)
    return 0


def _cmd_grid(args, methods=None, reference=None):
    raw = _read_raw(args.config)
    if methods is not None:
        raw = _preset(raw, methods, reference)
    cfg = validate_config(raw, {"seed": args.seed, "out": args.out})
    failed = run_grid(cfg, args.jobs)
    _print_summary(cfg.out)
    if failed:
        print(f"{len(failed)} cell(s) failed: {', '.join(failed)}", file=sys.stderr)
        return 2
    return 0


def cmd_report(args):
    out = args.out or "results"
    report(out)
    _print_summary(out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="owcl", description="Open-world continual learning experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, jobs=True):
        p.add_argument("--config", metavar="PATH", help="YAML or JSON experiment config")
        p.add_argument("--seed", type=int, metavar="N", help="run a single seed (dataset seed for generate)")
        p.add_argument("--out", metavar="DIR", help="output directory")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, metavar="N", help="parallel grid cells")

    p = sub.add_parser("generate", help="write a synthetic dataset file")
    common(p, jobs=False)
    p.add_argument("--increment", type=int, help="also write the task stream split with this increment")
    p.set_defaults(func=cmd_generate)
    p = sub.add_parser("run", help="run the configured method grid")
    common(p)
    p.set_defaults(func=_cmd_grid)
    p = sub.add_parser("ablate", help="component ablation preset")
    common(p)
    p.set_defaults(func=lambda a: _cmd_grid(a, ABLATION_METHODS, "MAND"))
    p = sub.add_parser("strategies", help="modality weighting preset")
    common(p)
    p.set_defaults(func=lambda a: _cmd_grid(a, STRATEGY_METHODS, "adaptive"))
    p = sub.add_parser("report", help="rebuild CSVs and plots from finished cells")
    common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return 1
    except (OSError, OwclError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
