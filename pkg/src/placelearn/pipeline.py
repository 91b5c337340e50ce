"""End-to-end orchestration: generate, train, evaluate, rank, simulate.

Everything under the configured output directory is a pure function of
the config file: reruns are byte-identical, worker count included,
because each task's dataset depends only on (config, task_id, split)
and files are always written in sorted task order via temp-then-rename.

Layout:
    <outdir>/config.json
    <outdir>/datasets/task_<id>/{train,test}/{features.csv,labels.csv}
    <outdir>/datasets/manifest.json
    <outdir>/models/<method>/task_<id>.json
    <outdir>/reports/<scenario>_<method>.{csv,txt}
    <outdir>/reports/rank_task<id>_<method>.csv
    <outdir>/reports/trajectory_task<id>_cand<cid>.csv
"""

from __future__ import annotations

import concurrent.futures
import io
import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from . import evaluate, learn, physics, scenes
from .config import PipelineConfig
from .evaluate import BenchmarkReport, EmptySplitError, Scenario
from .features import FEATURE_NAMES
from .geometry import Placement, Rotation

log = logging.getLogger(__name__)

METHODS = ("independent", "joint", "shared")
LABEL_COLUMNS = ("candidate_id", "Tx", "Ty", "Tz", "qw", "qx", "qy", "qz",
                 "stable", "preferred", "y")
SPLITS = ("train", "test")


class MissingDataError(FileNotFoundError):
    pass


# ---------------------------------------------------------------------------
# corpus plumbing
# ---------------------------------------------------------------------------


def build_tasks(cfg: PipelineConfig) -> list:
    objs = cfg.object_specs()
    envs = cfg.env_specs()
    tasks = []
    for env_kind, obj_kind in cfg.compat:
        tid = scenes.task_id_for(env_kind, obj_kind,
                                 tuple(cfg.env_order), tuple(cfg.object_order))
        tasks.append(scenes.PlacingTask(objs[obj_kind], envs[env_kind], tid))
    return sorted(tasks, key=lambda t: t.task_id)


def task_by_id(cfg: PipelineConfig, task_id: int):
    for t in build_tasks(cfg):
        if t.task_id == task_id:
            return t
    raise ValueError(f"task {task_id} is not in the configured corpus")


def clouds_for(cfg: PipelineConfig, task):
    obj_clouds, env_clouds = scenes.corpus_clouds([task], cfg.seeds["geometry"])
    return obj_clouds[task.object_spec.kind], env_clouds[task.env_spec.kind]


def _dataset_config(cfg: PipelineConfig, split: str) -> scenes.DatasetConfig:
    return scenes.DatasetConfig(
        seed=cfg.seeds[split],
        geometry_seed=cfg.seeds["geometry"],
        n_orientations=cfg.n_orientations,
        feature_config=cfg.feature_config(),
        sim_params=cfg.sim_params(),
        headroom=cfg.headroom,
    )


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------


def _fmt_matrix(M: np.ndarray, header: str) -> str:
    buf = io.StringIO()
    np.savetxt(buf, np.atleast_2d(M), fmt="%.17g", delimiter=",",
               header=header, comments="")
    return buf.getvalue()


def _atomic_write(path: str, text: str):
    evaluate._atomic_write(path, text)


def dataset_dir(outdir: str, task_id: int, split: str) -> str:
    return os.path.join(outdir, "datasets", f"task_{task_id}", split)


def write_dataset(ds: scenes.TaskDataset, dirpath: str):
    os.makedirs(dirpath, exist_ok=True)
    _atomic_write(os.path.join(dirpath, "features.csv"),
                  _fmt_matrix(ds.X.reshape(-1, len(FEATURE_NAMES)),
                              ",".join(FEATURE_NAMES)))
    m = len(ds.candidate_ids)
    lab = np.zeros((m, len(LABEL_COLUMNS)))
    lab[:, 0] = ds.candidate_ids
    lab[:, 1:4] = ds.locations.reshape(m, 3)
    lab[:, 4:8] = ds.quaternions.reshape(m, 4)
    lab[:, 8] = ds.stable
    lab[:, 9] = ds.preferred
    lab[:, 10] = ds.y
    _atomic_write(os.path.join(dirpath, "labels.csv"),
                  _fmt_matrix(lab, ",".join(LABEL_COLUMNS)))


@dataclass
class LoadedDataset:
    """Dataset read back from disk; satisfies the evaluate-module duck
    type (X, y, stable, candidate_ids, locations, quaternions)."""

    task_id: int
    candidate_ids: np.ndarray
    locations: np.ndarray
    quaternions: np.ndarray
    X: np.ndarray
    stable: np.ndarray
    preferred: np.ndarray
    y: np.ndarray


def read_dataset(outdir: str, task_id: int, split: str) -> LoadedDataset:
    dirpath = dataset_dir(outdir, task_id, split)
    fpath = os.path.join(dirpath, "features.csv")
    lpath = os.path.join(dirpath, "labels.csv")
    if not (os.path.exists(fpath) and os.path.exists(lpath)):
        raise MissingDataError(
            f"dataset for task {task_id} ({split}) not found under {dirpath}; "
            "run gen first")
    X = np.loadtxt(fpath, delimiter=",", skiprows=1, ndmin=2)
    lab = np.loadtxt(lpath, delimiter=",", skiprows=1, ndmin=2)
    if lab.size == 0:
        lab = lab.reshape(0, len(LABEL_COLUMNS))
        X = X.reshape(0, len(FEATURE_NAMES))
    return LoadedDataset(
        task_id=task_id,
        candidate_ids=lab[:, 0].astype(np.int64),
        locations=lab[:, 1:4],
        quaternions=lab[:, 4:8],
        X=X,
        stable=lab[:, 8].astype(bool),
        preferred=lab[:, 9].astype(bool),
        y=lab[:, 10].astype(np.int8),
    )


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------


def _build_one(cfg_dict: dict, task_id: int, split: str):
    """Worker entry: build one task's dataset for one split."""
    cfg = PipelineConfig.from_dict(cfg_dict)
    task = task_by_id(cfg, task_id)
    obj, env = clouds_for(cfg, task)
    ds = scenes.build_task_dataset(task, cfg.n_locations,
                                   _dataset_config(cfg, split), obj, env)
    return task_id, split, ds


def cmd_gen(cfg: PipelineConfig) -> dict:
    """Build and write train/test datasets for every task; returns the
    manifest dict."""
    tasks = build_tasks(cfg)
    jobs = [(t.task_id, split) for t in tasks for split in SPLITS]
    results = {}
    n_workers = min(cfg.n_workers(), len(jobs))
    if n_workers > 1:
        with concurrent.futures.ProcessPoolExecutor(n_workers) as pool:
            futs = [pool.submit(_build_one, cfg.to_dict(), tid, split)
                    for tid, split in jobs]
            for fut in concurrent.futures.as_completed(futs):
                tid, split, ds = fut.result()
                results[(tid, split)] = ds
    else:
        for tid, split in jobs:
            results[(tid, split)] = _build_one(cfg.to_dict(), tid, split)[2]

    entries = []
    totals = {"candidates": 0, "collision_free": 0, "stable": 0, "preferred": 0}
    for t in tasks:  # sorted: merge order is deterministic
        entry = {
            "task_id": t.task_id,
            "name": t.name,
            "object": t.object_spec.kind,
            "environment": t.env_spec.kind,
            "splits": {},
        }
        for split in SPLITS:
            ds = results[(t.task_id, split)]
            write_dataset(ds, dataset_dir(cfg.outdir, t.task_id, split))
            counts = ds.counts
            entry["splits"][split] = dict(counts, seed=ds.seed,
                                          attempts=ds.attempts)
            for key in totals:
                totals[key] += counts[key]
        entries.append(entry)
    manifest = {
        "schema_version": cfg.schema_version,
        "n_locations": cfg.n_locations,
        "n_orientations": cfg.n_orientations,
        "seeds": dict(cfg.seeds),
        "tasks": entries,
        "totals": totals,
    }
    os.makedirs(os.path.join(cfg.outdir, "datasets"), exist_ok=True)
    _atomic_write(os.path.join(cfg.outdir, "datasets", "manifest.json"),
                  json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _atomic_write(os.path.join(cfg.outdir, "config.json"), cfg.dumps())
    log.info("gen: %d tasks, totals %s", len(tasks), totals)
    return manifest


def read_manifest(outdir: str) -> dict:
    path = os.path.join(outdir, "datasets", "manifest.json")
    if not os.path.exists(path):
        raise MissingDataError(f"no manifest at {path}; run gen first")
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _train_data(cfg: PipelineConfig, task_ids) -> list:
    return [learn.TaskData(d.X, d.y, d.task_id)
            for d in (read_dataset(cfg.outdir, tid, "train")
                      for tid in task_ids)]


def cmd_train(cfg: PipelineConfig, method: str) -> dict:
    """Train per-task model files for `method` on the train datasets."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    tasks = build_tasks(cfg)
    data = _train_data(cfg, [t.task_id for t in tasks])
    hp = cfg.hyper_params()
    if method == "independent":
        models = learn.train_independent(data, hp)
    elif method == "shared":
        models = learn.train_shared(data, hp)
    else:
        pooled = learn.train_joint(data, hp)
        models = []
        for t in data:
            m = learn.TaskModel(S=pooled.S, B=pooled.B, b=pooled.b,
                                mean=pooled.mean, std=pooled.std,
                                task_id=t.task_id, converged=pooled.converged)
            models.append(m)
    mdir = os.path.join(cfg.outdir, "models", method)
    os.makedirs(mdir, exist_ok=True)
    paths = {}
    for m in models:
        path = os.path.join(mdir, f"task_{m.task_id}.json")
        learn.save_model(m, path, hp)
        paths[m.task_id] = path
    log.info("train[%s]: wrote %d model files", method, len(paths))
    return paths


def load_models(cfg: PipelineConfig, method: str, task_ids) -> dict:
    out = {}
    for tid in task_ids:
        path = os.path.join(cfg.outdir, "models", method, f"task_{tid}.json")
        if not os.path.exists(path):
            raise MissingDataError(f"no model file {path}; run train first")
        out[tid] = learn.load_model(path)
    return out


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _scorer_for(cfg: PipelineConfig, tasks, test_task, scenario: Scenario,
                method: str, cache: dict):
    """Model (or model list) used to rank `test_task` under `scenario`.

    Independent models train on single tasks, so saved per-task models are
    reusable: own-task for SESO, voting over the split otherwise.  Joint and
    shared models train across the whole split, so any split that is not
    simply the test task itself is retrained here from the train datasets.
    """
    train_tasks = evaluate.make_split(tasks, test_task, scenario)
    split_ids = tuple(sorted(t.task_id for t in train_tasks))
    if method == "independent":
        models = load_models(cfg, method, split_ids)
        if scenario is Scenario.SESO:
            return models[test_task.task_id]
        return [models[tid] for tid in split_ids]
    key = (method, split_ids)
    if key not in cache:
        data = _train_data(cfg, split_ids)
        hp = cfg.hyper_params()
        if method == "joint":
            cache[key] = learn.train_joint(data, hp)
        else:
            cache[key] = learn.train_shared(data, hp)
    trained = cache[key]
    if method == "joint":
        return trained
    if scenario is Scenario.SESO:
        return trained[split_ids.index(test_task.task_id)]
    return list(trained)


def cmd_eval(cfg: PipelineConfig, scenario, method: str) -> BenchmarkReport:
    """Rank every task's test set under `scenario` with `method` and
    write reports/<scenario>_<method>.{csv,txt}."""
    scenario = Scenario(scenario)
    known = METHODS + evaluate.BASELINES
    if method not in known:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(known)}")
    tasks = build_tasks(cfg)
    report = BenchmarkReport(metric_n=cfg.metric_n)
    cache: dict = {}
    for t in tasks:
        data = read_dataset(cfg.outdir, t.task_id, "test")
        note = ""
        result = None
        n_valid = int((data.y > 0).sum())
        if len(data.candidate_ids) == 0:
            note = "no collision-free candidates"
        else:
            try:
                if method in METHODS:
                    scorer = _scorer_for(cfg, tasks, t, scenario, method, cache)
                    result = evaluate.evaluate(scorer, data, cfg.metric_n)
                else:
                    env_pts = None
                    if method == "flat_upright":
                        _, env = clouds_for(cfg, t)
                        env_pts = env.points
                    scores = evaluate.baseline_scores(
                        method, data, env_pts,
                        cfg.seeds["baseline"] + t.task_id)
                    result = evaluate.rank_metrics(
                        scores, data.y, data.stable, data.candidate_ids,
                        cfg.metric_n)
            except EmptySplitError as exc:
                note = str(exc)
        excluded = result is None or n_valid == 0
        if result is not None and n_valid == 0:
            note = "no valid candidates in the test set"
        report.add(environment=t.env_spec.kind, object_kind=t.object_spec.kind,
                   task_id=t.task_id, scenario=scenario.value, method=method,
                   result=result, n_valid=n_valid, excluded=excluded, note=note)
    report.check_averages()
    rdir = os.path.join(cfg.outdir, "reports")
    os.makedirs(rdir, exist_ok=True)
    base = os.path.join(rdir, f"{scenario.value}_{method}")
    report.to_csv(base + ".csv")
    _atomic_write(base + ".txt", report.to_text())
    log.info("eval[%s,%s]: overall %s", scenario.value, method,
             report.overall())
    return report


# ---------------------------------------------------------------------------
# rank / simulate
# ---------------------------------------------------------------------------


def cmd_rank(cfg: PipelineConfig, task_id: int, top_k: int,
             method: str = "independent") -> list:
    """Rank the task's test candidates, re-verify the top k in the
    simulator, and mark the first verified-valid row."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    task = task_by_id(cfg, task_id)
    data = read_dataset(cfg.outdir, task_id, "test")
    if len(data.candidate_ids) == 0:
        raise ValueError(f"task {task_id} has no collision-free candidates")
    model = load_models(cfg, method, [task_id])[task_id]
    scores = evaluate.model_scores(model, data.X)
    order = np.lexsort((data.candidate_ids, -scores))
    if top_k > len(order):
        log.warning("top_k=%d exceeds %d candidates; clamping",
                    top_k, len(order))
        top_k = len(order)
    obj, env = clouds_for(cfg, task)
    sim = cfg.sim_params()
    grid = physics.env_contact_grid(env, sim)
    rows = []
    first_marked = False
    for rank, idx in enumerate(order[:top_k], start=1):
        start = Placement(data.locations[idx], Rotation(data.quaternions[idx]))
        res = physics.settle(obj, start, env, sim, env_grid=grid)
        ok = physics.label_validity(start, res, sim.validity_delta)
        first = ok and not first_marked
        first_marked = first_marked or ok
        rows.append({
            "rank": rank,
            "candidate_id": int(data.candidate_ids[idx]),
            "score": float(scores[idx]),
            "Tx": data.locations[idx][0], "Ty": data.locations[idx][1],
            "Tz": data.locations[idx][2],
            "qw": data.quaternions[idx][0], "qx": data.quaternions[idx][1],
            "qy": data.quaternions[idx][2], "qz": data.quaternions[idx][3],
            "stored_stable": bool(data.stable[idx]),
            "verified_stable": bool(ok),
            "first_verified_valid": first,
        })
    rdir = os.path.join(cfg.outdir, "reports")
    os.makedirs(rdir, exist_ok=True)
    cols = list(rows[0].keys())
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(
            f"{r[c]:.17g}" if isinstance(r[c], float) else str(int(r[c]))
            if isinstance(r[c], bool) else str(r[c]) for c in cols))
    _atomic_write(os.path.join(rdir, f"rank_task{task_id}_{method}.csv"),
                  "\n".join(lines) + "\n")
    return rows


def cmd_simulate(cfg: PipelineConfig, task_id: int,
                 candidate_id: int | None = None) -> str:
    """Settle one stored candidate with trajectory recording; returns the
    trajectory CSV path."""
    task = task_by_id(cfg, task_id)
    data = read_dataset(cfg.outdir, task_id, "test")
    if len(data.candidate_ids) == 0:
        raise ValueError(f"task {task_id} has no collision-free candidates")
    if candidate_id is None:
        idx = 0
    else:
        hits = np.nonzero(data.candidate_ids == candidate_id)[0]
        if len(hits) == 0:
            raise ValueError(
                f"candidate {candidate_id} not in task {task_id}'s test set")
        idx = int(hits[0])
    cid = int(data.candidate_ids[idx])
    obj, env = clouds_for(cfg, task)
    sim = cfg.sim_params()
    start = Placement(data.locations[idx], Rotation(data.quaternions[idx]))
    res = physics.settle(obj, start, env, sim, record_poses=True)
    M = np.array(list(physics.trajectory_rows(res)))
    rdir = os.path.join(cfg.outdir, "reports")
    os.makedirs(rdir, exist_ok=True)
    path = os.path.join(rdir, f"trajectory_task{task_id}_cand{cid}.csv")
    _atomic_write(path, _fmt_matrix(
        M, "step,E_n,Tx,Ty,Tz,qw,qx,qy,qz"))
    log.info("simulate: task %d candidate %d -> %s (%d steps, converged=%s)",
             task_id, cid, path, res.steps, res.converged)
    return path
