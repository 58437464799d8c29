"""Config-driven experiment runner, parameter sweeps, and report tables.

Layout of a results directory::

    runs/<run_id>/record.tsv        one header row + one value row
    runs/<run_id>/config.yaml       fully resolved config of the run
    runs/<run_id>/trace.tsv         per-round losses and dropout masks
    runs/<run_id>/attack_trace.tsv  per-epoch attack accuracy (when tracked)
    runs/<run_id>/checkpoints/      one file per network + manifest.json
    runs/<run_id>/manifest.json     file list with content digests
    runs/<run_id>/timing.tsv        wall-clock seconds (not part of the record)
    sweeps/<axis>.tsv               tidy table, one row per (value, seed)
    report/                         summary.txt and curves.tsv

Records are written once per run and never edited; a sweep that crashes
leaves every finished run intact.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import itertools
import json
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import config as C
from . import engine
from .attacks import AttackConfig, amc, amc_update, pmc
from .data import VerticalDataset, generate_synthetic, load_tabular
from .defenses import DefenseConfig
from .errors import ConfigError, VFLError

Progress = Callable[[str], None]

IDENTITY_COLUMNS = ["run_id", "name", "config_hash", "data_digest", "seed", "sweep_axis", "sweep_value",
                    "n_classes", "dropout_p", "defense_kind", "defense_level"]


class RunError(VFLError):
    """A run failed; the message names the config source and seed."""


@dataclass
class SeedResult:
    seed: int
    data_digest: str
    identity: dict[str, str]
    metrics: dict[str, float]
    attack_trace: list[float] = field(default_factory=list)
    run_dir: str | None = None
    wall_time: float = 0.0


@dataclass
class ExperimentResult:
    name: str
    config_hash: str
    per_seed: list[SeedResult]
    wall_time: float = 0.0

    def values(self, key: str) -> list[float]:
        return [r.metrics[key] for r in self.per_seed]

    @property
    def mean(self) -> dict[str, float]:
        keys = [k for k in self.per_seed[0].metrics if all(k in r.metrics for r in self.per_seed)]
        return {k: float(np.mean(self.values(k))) for k in keys}


# --------------------------------------------------------------------------
# building blocks


def make_dataset(cfg: C.ExperimentConfig, seed: int) -> VerticalDataset:
    d = cfg.dataset
    if d.source == "synthetic":
        return generate_synthetic(d.synthetic_spec(seed))
    return load_tabular(d.path, d.label_column, d.boundaries, test_fraction=d.test_fraction,
                        seed=seed if d.seed is None else d.seed)


def dimip_enabled(cfg: C.ExperimentConfig) -> bool:
    return cfg.dimip.lam is not None


def federation_config(cfg: C.ExperimentConfig, n_passive: int) -> engine.FederationConfig:
    p = cfg.train.dropout_p
    if isinstance(p, list):
        dropout = tuple(p)
    else:
        dropout = (p,) * n_passive if p else ()
    defense = DefenseConfig(kind="dimip") if dimip_enabled(cfg) else cfg.defense
    return engine.FederationConfig(
        extractor_hidden=cfg.model.extractor_hidden, rep_dim=cfg.model.rep_dim,
        rep_activation=cfg.model.rep_activation, head_hidden=cfg.model.head_hidden,
        lr=cfg.train.lr, dropout_p=dropout, defense=defense,
        dimip_lambda=cfg.dimip.lam or 0.0, aux_hidden=cfg.dimip.aux_hidden, aux_lr=cfg.dimip.aux_lr,
        aux_steps=cfg.dimip.aux_steps, use_lr_term=cfg.dimip.use_lr_term, multi_head=cfg.train.multi_head)


def reference_config(cfg: C.ExperimentConfig) -> engine.FederationConfig:
    """Same architecture and budget, no dropout, no defense, one head."""
    return engine.FederationConfig(
        extractor_hidden=cfg.model.extractor_hidden, rep_dim=cfg.model.rep_dim,
        rep_activation=cfg.model.rep_activation, head_hidden=cfg.model.head_hidden, lr=cfg.train.lr)


def defense_identity(cfg: C.ExperimentConfig) -> tuple[str, str]:
    if dimip_enabled(cfg):
        return "dimip", _fmt(cfg.dimip.lam)
    d = cfg.defense
    level = {"none": "", "ng": d.ng_scale, "gc": d.gc_rate, "ppdl": d.ppdl_theta, "dsgd": d.dsgd_levels}[d.kind]
    return d.kind, _fmt(level)


def quit_patterns(n_parties: int) -> list[tuple[int, ...]]:
    """Every non-empty set of absent passive parties, smallest first."""
    passive = range(2, n_parties + 1)
    return [c for r in range(1, n_parties) for c in itertools.combinations(passive, r)]


def quit_key(absent: Sequence[int]) -> str:
    return "acc_quit_" + "+".join(map(str, absent))


def attack_keys(attacks: Sequence[AttackConfig]) -> list[str]:
    keys, seen = [], {}
    for a in attacks:
        base = "attack:" + a.label()
        seen[base] = seen.get(base, 0) + 1
        keys.append(base if seen[base] == 1 else f"{base}#{seen[base]}")
    return keys


def floor_summary(trace: Sequence[float], n_classes: int, margin: float) -> tuple[int, float, float]:
    """(first epoch after which the curve stays at or below the floor, tail std, tail mean).

    The floor is ``1/C + margin``. Epochs are 1-based; ``len(trace) + 1``
    means the curve never settled. The tail is the final 20% of epochs.
    """
    floor = 1.0 / n_classes + margin
    t = np.asarray(trace, dtype=np.float64)
    settle = len(t) + 1
    for e in range(len(t) - 1, -1, -1):
        if t[e] > floor:
            break
        settle = e + 1
    tail = t[int(0.8 * len(t)):] if len(t) else t
    if len(t) and not len(tail):
        tail = t[-1:]
    return settle, float(tail.std()) if len(tail) else math.nan, float(tail.mean()) if len(tail) else math.nan


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    return str(v)


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", text).strip("-") or "run"


def run_id(cfg: C.ExperimentConfig, seed: int) -> str:
    return f"{_slug(cfg.name)}-{C.config_hash(cfg)[:12]}-s{seed}"


# --------------------------------------------------------------------------
# one (config, seed)


def _train(ds: VerticalDataset, fcfg: engine.FederationConfig, cfg: C.ExperimentConfig, seed: int,
           updates=None, on_epoch=None) -> engine.Federation:
    fed = engine.build_federation(ds, fcfg, seed, updates=updates)
    return engine.fit(fed, ds, cfg.train.epochs, cfg.train.batch_size, seed, on_epoch)


def run_seed(cfg: C.ExperimentConfig, seed: int, root: str | None = None,
             sweep: tuple[str, Any] | None = None) -> SeedResult:
    """Train, evaluate and attack for one seed; write its files under ``root``."""
    t0 = time.perf_counter()
    ds = make_dataset(cfg, seed)
    n_passive = ds.n_parties - 1
    fcfg = federation_config(cfg, n_passive)
    metrics: dict[str, float] = {}
    trace: list[float] = []
    track = cfg.evaluate.track_attack and n_passive >= 1
    tracker = AttackConfig(kind="pmc", head="mlp", labeled_budget="all", epochs=cfg.evaluate.track_attack_epochs)

    def on_epoch(fed, epoch):
        trace.append(pmc(fed.party(engine.PROTECTED).extractor, ds, tracker, seed).accuracy)

    fed = _train(ds, fcfg, cfg, seed, on_epoch=on_epoch if track else None)
    metrics["acc_all"] = engine.evaluate(fed, ds)
    for absent in quit_patterns(ds.n_parties):
        present = [k for k in range(1, ds.n_parties + 1) if k not in absent]
        metrics[quit_key(absent)] = engine.evaluate(fed, ds, present=present)
    if cfg.evaluate.standalone:
        alone = ds.only([1])
        metrics["acc_standalone"] = engine.evaluate(_train(alone, reference_config(cfg), cfg, seed), alone)
    if cfg.evaluate.scratch_passive and n_passive >= 1:
        own = ds.only([engine.PROTECTED])
        metrics["acc_scratch_passive"] = engine.evaluate(_train(own, reference_config(cfg), cfg, seed), own)
    for key, a in zip(attack_keys(cfg.attacks), cfg.attacks):
        if n_passive < 1:
            break
        if a.kind == "pmc":
            metrics[key] = pmc(fed.party(engine.PROTECTED).extractor, ds, a, seed).accuracy
        else:
            bad = _train(ds, fcfg, cfg, seed, updates={engine.PROTECTED: amc_update(a)})
            metrics[key + ":acc_all"] = engine.evaluate(bad, ds)
            metrics[key] = amc(bad.party(engine.PROTECTED).extractor, ds, a, seed).accuracy
    if track:
        settle, sd, mean = floor_summary(trace, ds.n_classes, cfg.evaluate.floor_margin)
        metrics["attack_floor_epoch"] = float(settle)
        metrics["attack_tail_std"] = sd
        metrics["attack_tail_mean"] = mean
    last = fed.log[-max(1, math.ceil(len(ds.train_idx) / cfg.train.batch_size)):] if fed.log else []
    metrics["final_loss"] = float(np.mean([r.L_C for r in last])) if last else math.nan

    kind, level = defense_identity(cfg)
    identity = {
        "run_id": run_id(cfg, seed), "name": cfg.name, "config_hash": C.config_hash(cfg),
        "data_digest": ds.digest(), "seed": str(seed),
        "sweep_axis": sweep[0] if sweep else "", "sweep_value": _fmt(sweep[1]) if sweep else "",
        "n_classes": str(ds.n_classes), "dropout_p": _fmt(fcfg.dropout_p or 0.0),
        "defense_kind": kind, "defense_level": level,
    }
    res = SeedResult(seed, ds.digest(), identity, metrics, trace)
    res.wall_time = time.perf_counter() - t0
    if root is not None:
        res.run_dir = _write_run(root, cfg, res, fed)
    return res


def record_text(res: SeedResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(IDENTITY_COLUMNS + list(res.metrics))
    w.writerow([res.identity[c] for c in IDENTITY_COLUMNS] + [_fmt(float(v)) for v in res.metrics.values()])
    return buf.getvalue()


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _write_run(root: str, cfg: C.ExperimentConfig, res: SeedResult, fed: engine.Federation) -> str:
    d = os.path.join(root, "runs", res.identity["run_id"])
    os.makedirs(d, exist_ok=True)
    with open(os.path.join(d, "record.tsv"), "w") as fh:
        fh.write(record_text(res))
    with open(os.path.join(d, "config.yaml"), "w") as fh:
        fh.write(C.dump(dataclasses.replace(cfg, seeds=[res.seed])))
    files = ["record.tsv", "config.yaml"]
    if cfg.evaluate.round_trace:
        engine.write_trace(fed, os.path.join(d, "trace.tsv"))
        files.append("trace.tsv")
    if res.attack_trace:
        with open(os.path.join(d, "attack_trace.tsv"), "w") as fh:
            fh.write("epoch\tattack_acc\n")
            for e, a in enumerate(res.attack_trace, start=1):
                fh.write(f"{e}\t{_fmt(float(a))}\n")
        files.append("attack_trace.tsv")
    if cfg.evaluate.checkpoints:
        engine.save_federation(fed, os.path.join(d, "checkpoints"))
        for name in sorted(os.listdir(os.path.join(d, "checkpoints"))):
            files.append(f"checkpoints/{name}")
    manifest = {
        "run_id": res.identity["run_id"], "config_hash": res.identity["config_hash"],
        "data_digest": res.data_digest, "seed": res.seed,
        "files": {f: _sha256_file(os.path.join(d, f)) for f in files},
    }
    with open(os.path.join(d, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(d, "timing.tsv"), "w") as fh:
        fh.write(f"wall_seconds\n{res.wall_time:.3f}\n")
    return d


def _job(args) -> SeedResult:
    cfg_tree, seed, root, sweep, source = args
    cfg = C.from_dict(C.ExperimentConfig, cfg_tree)
    try:
        return run_seed(cfg, seed, root, sweep)
    except ConfigError as e:
        raise ConfigError(f"{source}: seed {seed}: {e}") from e
    except VFLError as e:
        raise RunError(f"{source}: seed {seed}: {type(e).__name__}: {e}") from e


def _progress_line(res: SeedResult) -> str:
    parts = [f"event=run_done", f"run_id={res.identity['run_id']}", f"seed={res.seed}"]
    if res.identity["sweep_axis"]:
        parts.append(f"{res.identity['sweep_axis']}={res.identity['sweep_value']}")
    parts += [f"{k}={v:.4f}" for k, v in res.metrics.items() if k.startswith("acc_")]
    return " ".join(parts)


def _execute(jobs_args: list, jobs: int, progress: Progress | None) -> list[SeedResult]:
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_job, jobs_args))
    else:
        results = []
        for a in jobs_args:
            results.append(_job(a))
            if progress:
                progress(_progress_line(results[-1]))
        return results
    if progress:
        for r in results:
            progress(_progress_line(r))
    return results


def run(cfg: C.ExperimentConfig, *, root: str | None = None, write: bool = True, jobs: int = 1,
        progress: Progress | None = None, source: str | None = None) -> ExperimentResult:
    """Run every seed of ``cfg``.

    Args:
        root: results directory; defaults to the config's output location.
        write: when false nothing touches the filesystem.
        jobs: seeds run in this many worker processes.
        source: label for error messages, usually the config file path.
    """
    cfg.validate()
    t0 = time.perf_counter()
    root = (root or C.output_root(cfg)) if write else None
    tree = C.to_dict(cfg)
    label = source or f"config {cfg.name!r}"
    results = _execute([(tree, s, root, None, label) for s in cfg.seeds], jobs, progress)
    return ExperimentResult(cfg.name, C.config_hash(cfg), results, time.perf_counter() - t0)


# --------------------------------------------------------------------------
# sweeps


def sweep(cfg: C.ExperimentConfig, axis: str, values: Iterable[Any], *, root: str | None = None,
          write: bool = True, jobs: int = 1, progress: Progress | None = None,
          source: str | None = None) -> list[dict[str, Any]]:
    """One run per value per seed; returns rows keyed by (value, seed)."""
    values = list(values)
    hint = C.field_type(cfg, axis)
    current = _get_path(C.to_dict(cfg), axis)
    if not C.is_scalar_type(hint) or isinstance(current, (list, dict)):
        raise ConfigError(f"sweep axis {axis!r} is not a scalar config field")
    points = [C.apply_overrides(cfg, {axis: v}) for v in values]
    root = (root or C.output_root(cfg)) if write else None
    label = source or f"config {cfg.name!r}"
    args = [(C.to_dict(p), s, root, (axis, _get_path(C.to_dict(p), axis)), label)
            for p in points for s in p.seeds]
    results = _execute(args, jobs, progress)
    rows = []
    for r in results:
        row: dict[str, Any] = {"axis": axis, "value": r.identity["sweep_value"], "seed": r.seed,
                               "run_id": r.identity["run_id"], "config_hash": r.identity["config_hash"]}
        row.update(r.metrics)
        rows.append(row)
    if root is not None:
        os.makedirs(os.path.join(root, "sweeps"), exist_ok=True)
        _write_table(os.path.join(root, "sweeps", f"{_slug(axis)}.tsv"), rows,
                     ["axis", "value", "seed", "run_id", "config_hash"])
    return rows


def _get_path(tree: Any, path: str) -> Any:
    node = tree
    for part in path.split("."):
        node = node[int(part)] if isinstance(node, list) else node[part]
    return node


def _write_table(path: str, rows: list[dict[str, Any]], lead: list[str]) -> None:
    cols = list(lead)
    for r in rows:
        cols += [k for k in r if k not in cols]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) if c in r else "" for c in cols])


# --------------------------------------------------------------------------
# reports


@dataclass
class Report:
    summary: str
    curves: list[dict[str, Any]]
    problems: list[str]


def read_records(results_dir: str) -> tuple[list[dict[str, str]], list[str]]:
    """Parse every ``runs/*/record.tsv``; unreadable ones are listed, not fatal."""
    rows, problems = [], []
    runs = os.path.join(results_dir, "runs")
    if not os.path.isdir(runs):
        return rows, [f"{runs}: no runs directory"]
    for name in sorted(os.listdir(runs)):
        path = os.path.join(runs, name, "record.tsv")
        if not os.path.isfile(path):
            problems.append(f"{path}: missing record")
            continue
        try:
            with open(path, newline="") as fh:
                lines = list(csv.reader(fh, delimiter="\t"))
        except (OSError, UnicodeDecodeError, csv.Error) as e:
            problems.append(f"{path}: unreadable ({e})")
            continue
        if len(lines) != 2 or len(lines[0]) != len(lines[1]) or lines[0][:len(IDENTITY_COLUMNS)] != IDENTITY_COLUMNS:
            problems.append(f"{path}: corrupt record")
            continue
        row = dict(zip(*lines))
        if not re.fullmatch(r"[0-9a-f]{64}", row["config_hash"]):
            problems.append(f"{path}: corrupt record (bad config hash)")
            continue
        rows.append(row)
    return rows, problems


def _num(v: str) -> float:
    try:
        return float(v)
    except ValueError:
        return math.nan


def _groups(rows: list[dict[str, str]]) -> list[tuple[dict[str, str], list[dict[str, str]]]]:
    by: dict[str, list[dict[str, str]]] = {}
    for r in rows:
        by.setdefault(r["config_hash"], []).append(r)

    def order(h):
        r = by[h][0]
        return (r["name"], r["sweep_axis"], _num(r["sweep_value"]) if r["sweep_value"] else -math.inf,
                r["sweep_value"], r["defense_kind"], r["dropout_p"], h)
    return [(by[h][0], by[h]) for h in sorted(by, key=order)]


def _mean(rows: list[dict[str, str]], key: str) -> float:
    vals = [_num(r[key]) for r in rows if r.get(key, "") != ""]
    return float(np.mean(vals)) if vals else math.nan


def _table(title: str, header: list[str], body: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h) for i, h in enumerate(header)]
    line = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    out = [title, line(header), line(["-" * w for w in widths])]
    out += [line(r) for r in body]
    return "\n".join(out) + "\n"


def _cell(v: float) -> str:
    return "-" if math.isnan(v) else f"{v:.4f}"


def report(results_dir: str, write: bool = True) -> Report:
    """Summary tables and trade-off curve data from a results directory."""
    rows, problems = read_records(results_dir)
    groups = _groups(rows)
    metric_cols = []
    for r in rows:
        metric_cols += [k for k in r if k not in IDENTITY_COLUMNS and k not in metric_cols]
    quit_cols = sorted(k for k in metric_cols if k.startswith("acc_quit_"))
    attack_cols = [k for k in metric_cols if k.startswith("attack:") and ":acc_all" not in k]

    def ident(first, members):
        sweep = f"{first['sweep_axis']}={first['sweep_value']}" if first["sweep_axis"] else "-"
        return [first["name"], first["config_hash"][:12], sweep, str(len(members))]

    t1 = _table("Model accuracy: all parties present, active party alone, after quitting",
                ["name", "config", "sweep", "seeds", "all_present", "standalone"] + quit_cols,
                [ident(f, m) + [_cell(_mean(m, "acc_all")), _cell(_mean(m, "acc_standalone"))]
                 + [_cell(_mean(m, q)) for q in quit_cols] for f, m in groups])
    t2 = _table("Label leakage: completion attacks on party 2's extractor",
                ["name", "config", "sweep", "seeds", "defense", "level", "scratch_passive"] + attack_cols,
                [ident(f, m) + [f["defense_kind"], f["defense_level"] or "-",
                                _cell(_mean(m, "acc_scratch_passive"))]
                 + [_cell(_mean(m, a)) for a in attack_cols] for f, m in groups])
    first_quit = quit_cols[0] if quit_cols else None
    t3 = _table("Party-wise dropout: accuracy before and after quitting",
                ["name", "config", "sweep", "seeds", "dropout_p", "before_quit", "after_quit"],
                [ident(f, m) + [f["dropout_p"], _cell(_mean(m, "acc_all")),
                                _cell(_mean(m, first_quit)) if first_quit else "-"] for f, m in groups])
    summary = "\n".join([t1, t2, t3])
    if problems:
        summary += "\nProblems\n" + "".join(f"  {p}\n" for p in problems)

    curves = []
    for f, m in groups:
        row: dict[str, Any] = {"name": f["name"], "defense": f["defense_kind"], "level": f["defense_level"],
                               "dropout_p": f["dropout_p"], "seeds": len(m), "model_acc": _mean(m, "acc_all")}
        if first_quit:
            row["after_quit_acc"] = _mean(m, first_quit)
        for a in attack_cols:
            row[a] = _mean(m, a)
        curves.append(row)

    if write:
        out = os.path.join(results_dir, "report")
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "summary.txt"), "w") as fh:
            fh.write(summary)
        _write_table(os.path.join(out, "curves.tsv"), curves,
                     ["name", "defense", "level", "dropout_p", "seeds", "model_acc"])
    return Report(summary, curves, problems)


# --------------------------------------------------------------------------
# datasets and stand-alone attacks


def write_dataset(ds: VerticalDataset, path: str) -> None:
    """Comma-delimited export that :func:`load_tabular` reads back.

    Columns are ``p<k>_<j>`` for party ``k``'s ``j``-th feature, then
    ``label``; a JSON sidecar records the party boundaries and the split.
    """
    names = [f"p{k}_{j}" for k, x in enumerate(ds.party_features, start=1) for j in range(x.shape[1])]
    x = np.hstack(ds.party_features)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["label"])
        for row, y in zip(x, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [int(y)])
    side = {"boundaries": list(ds.boundaries), "n_classes": ds.n_classes, "digest": ds.digest(),
            "train_idx": ds.train_idx.tolist(), "test_idx": ds.test_idx.tolist()}
    with open(path + ".json", "w") as fh:
        json.dump(side, fh, sort_keys=True)
        fh.write("\n")


def gen_data(cfg: C.ExperimentConfig, root: str | None = None,
             progress: Progress | None = None) -> list[str]:
    root = root or C.output_root(cfg)
    os.makedirs(os.path.join(root, "data"), exist_ok=True)
    paths = []
    for seed in cfg.seeds:
        ds = make_dataset(cfg, seed)
        path = os.path.join(root, "data", f"{_slug(cfg.name)}-s{seed}.csv")
        write_dataset(ds, path)
        paths.append(path)
        if progress:
            progress(f"event=dataset seed={seed} rows={ds.n_samples} dims={_fmt(list(ds.dims))} "
                     f"digest={ds.digest()} path={path}")
    return paths


def attack_checkpoint(run_dir: str, attacks: Sequence[AttackConfig], root: str,
                      progress: Progress | None = None) -> dict[str, float]:
    """Run passive completion attacks against a finished run's party-2 checkpoint."""
    from . import nn

    cfg_path = os.path.join(run_dir, "config.yaml")
    net_path = os.path.join(run_dir, "checkpoints", f"extractor_{engine.PROTECTED}.net")
    for p in (cfg_path, net_path):
        if not os.path.isfile(p):
            raise ConfigError(f"{run_dir}: missing {os.path.basename(p)}")
    run_cfg = C.load(cfg_path)
    seed = run_cfg.seeds[0]
    ds = make_dataset(run_cfg, seed)
    extractor = nn.load(net_path)
    results = {}
    for key, a in zip(attack_keys(attacks), attacks):
        if a.kind != "pmc":
            raise ConfigError(f"{key}: active completion needs training; run it through 'train'")
        results[key] = pmc(extractor, ds, a, seed).accuracy
        if progress:
            progress(f"event=attack run={os.path.basename(run_dir.rstrip(os.sep))} attack={key} "
                     f"accuracy={results[key]:.4f}")
    os.makedirs(os.path.join(root, "attacks"), exist_ok=True)
    out = os.path.join(root, "attacks", f"{os.path.basename(run_dir.rstrip(os.sep))}.tsv")
    _write_table(out, [{"attack": k, "accuracy": v} for k, v in results.items()], ["attack", "accuracy"])
    return results
