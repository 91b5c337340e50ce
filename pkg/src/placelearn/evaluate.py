"""Scenario splits, baselines, and ranking metrics.

A trained ranker is judged by ordering a labeled test set and reading
off R0 (1-based rank of the first valid candidate) and Precision@n
(valid fraction among the top n).  "Valid" means the preference label;
stable-only variants of both metrics ride along as a secondary column.

Four train/test scenarios control what the models saw: SESO trains on
the test task's own training split; SENO keeps the environment but
excludes the test object; NESO keeps the object but excludes the test
environment; NENO excludes both.  Splits that leave no training task
(an environment hosting a single object, say) raise, and reports show
those cells as '-'.

Baselines are label-blind by construction: they take poses, never
labels, and return scores that the shared metric code ranks.
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import learn

DEFAULT_PRECISION_N = 5

FEATURE_FAMILIES = {
    "contact": (0, 3),
    "caging": (3, 24),
    "signature": (24, 120),
    "all": (0, 120),
}


class Scenario(str, Enum):
    SESO = "SESO"
    SENO = "SENO"
    NESO = "NESO"
    NENO = "NENO"


class EmptySplitError(ValueError):
    """No training tasks remain for the requested scenario."""


def make_split(tasks, test_task, scenario: Scenario):
    """Training tasks for evaluating `test_task` under `scenario`.

    'Same' keeps only the matching attribute, 'new' excludes it: SESO
    trains on the test task itself (its disjoint training split), NENO
    on tasks sharing neither the environment nor the object.
    """
    scenario = Scenario(scenario)
    ids = {t.task_id for t in tasks}
    if test_task.task_id not in ids:
        raise ValueError(f"test task {test_task.task_id} not in the corpus")
    env = test_task.env_spec.kind
    obj = test_task.object_spec.kind
    if scenario is Scenario.SESO:
        train = [t for t in tasks if t.task_id == test_task.task_id]
    elif scenario is Scenario.SENO:
        train = [t for t in tasks
                 if t.env_spec.kind == env and t.object_spec.kind != obj]
    elif scenario is Scenario.NESO:
        train = [t for t in tasks
                 if t.env_spec.kind != env and t.object_spec.kind == obj]
    else:
        train = [t for t in tasks
                 if t.env_spec.kind != env and t.object_spec.kind != obj]
    if not train:
        raise EmptySplitError(
            f"no training tasks for {scenario.value} on "
            f"{obj}|{env}; the report marks this cell '-'")
    return train


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass
class RankingResult:
    order: np.ndarray          # candidate indices, best first
    scores: np.ndarray         # score per candidate (unordered)
    r0: int
    prec_at_n: float
    n: int
    no_valid: bool
    r0_stable: int
    prec_at_n_stable: float

    def __post_init__(self):
        if self.r0 < 1 or not (0.0 <= self.prec_at_n <= 1.0):
            raise ValueError("malformed ranking metrics")


def _first_hit(flags_ordered: np.ndarray) -> tuple[int, bool]:
    hits = np.nonzero(flags_ordered)[0]
    if len(hits) == 0:
        return len(flags_ordered) + 1, True
    return int(hits[0]) + 1, False


def rank_metrics(scores: np.ndarray, y: np.ndarray, stable: np.ndarray,
                 candidate_ids: np.ndarray, n: int = DEFAULT_PRECISION_N
                 ) -> RankingResult:
    """Order by descending score (ties broken by candidate_id) and
    compute R0 / Pre@n against y, plus stable-only variants."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(y).ravel()
    stable = np.asarray(stable, dtype=bool).ravel()
    candidate_ids = np.asarray(candidate_ids).ravel()
    if not (len(scores) == len(y) == len(stable) == len(candidate_ids)):
        raise ValueError("metric inputs disagree in length")
    if len(scores) == 0:
        raise ValueError("empty candidate set")
    if n < 1:
        raise ValueError("n must be >= 1")
    order = np.lexsort((candidate_ids, -scores))
    valid = (y > 0)[order]
    stab = stable[order]
    r0, none_valid = _first_hit(valid)
    r0_stable, _ = _first_hit(stab)
    return RankingResult(
        order=order, scores=scores,
        r0=r0, prec_at_n=float(valid[:n].sum()) / n, n=n,
        no_valid=none_valid,
        r0_stable=r0_stable,
        prec_at_n_stable=float(stab[:n].sum()) / n,
    )


# ---------------------------------------------------------------------------
# scoring front-ends
# ---------------------------------------------------------------------------


def model_scores(models, X_raw: np.ndarray) -> np.ndarray:
    """Scores for raw feature rows from one model or a voting ensemble."""
    if isinstance(models, learn.TaskModel):
        return models.score_raw(X_raw)
    return learn.score_matrix_raw(list(models), X_raw)


def evaluate(models, data, n: int = DEFAULT_PRECISION_N) -> RankingResult:
    """Rank a labeled dataset with a model (or voting list of models).

    `data` needs `X` (raw features), `y` (+-1), `stable`, and
    `candidate_ids` attributes (scenes.TaskDataset satisfies this).
    """
    y = np.asarray(data.y)
    if y.size == 0:
        raise ValueError("unlabeled data: empty label vector")
    scores = model_scores(models, data.X)
    return rank_metrics(scores, y, data.stable, data.candidate_ids, n)


# ---------------------------------------------------------------------------
# label-blind baselines (they never see y)
# ---------------------------------------------------------------------------


def baseline_chance(n_candidates: int, seed: int) -> np.ndarray:
    """Scores inducing a uniformly random permutation."""
    if n_candidates < 1:
        raise ValueError("empty candidate set")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return rng.permutation(n_candidates).astype(np.float64)


def baseline_lowest_point(locations: np.ndarray) -> np.ndarray:
    """Prefer low placements: score = -z (rank_metrics breaks ties by
    candidate_id)."""
    locations = np.atleast_2d(locations)
    return -locations[:, 2].astype(np.float64)


def flat_patches(env_points: np.ndarray, at_xy: np.ndarray,
                 radius: float = 0.05, z_stdev: float = 0.003) -> np.ndarray:
    """True where the environment under a location looks like a flat
    horizontal patch: at least 5 points within `radius` horizontally and
    their z-stdev below `z_stdev`."""
    env_points = np.asarray(env_points)
    at_xy = np.atleast_2d(at_xy)[:, :2]
    out = np.zeros(len(at_xy), dtype=bool)
    ex, ey, ez = env_points[:, 0], env_points[:, 1], env_points[:, 2]
    r2 = radius * radius
    for i, (x, y) in enumerate(at_xy):
        near = (ex - x) ** 2 + (ey - y) ** 2 <= r2
        if near.sum() >= 5:
            out[i] = float(ez[near].std()) < z_stdev
    return out


def baseline_flat_upright(locations: np.ndarray, quaternions: np.ndarray,
                          env_points: np.ndarray, seed: int,
                          cone_deg: float = 20.0) -> np.ndarray:
    """Canonical-upright candidates over flat patches come first (lowest
    placement height wins); everything else follows in seeded-random
    order.  With no flat patch anywhere this degenerates to chance."""
    locations = np.atleast_2d(locations)
    quaternions = np.atleast_2d(quaternions)
    m = len(locations)
    if m < 1:
        raise ValueError("empty candidate set")
    w, x, y, z = (quaternions[:, k] for k in range(4))
    rz_z = 1.0 - 2.0 * (x * x + y * y)   # world-z component of rotated +z
    upright = rz_z >= math.cos(math.radians(cone_deg))
    flat = flat_patches(env_points, locations)
    first = upright & flat
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    scores = rng.uniform(0.0, 1.0, size=m)
    # lift the preferred tier above every random score
    scores[first] = 2.0 + (1.0 / (1.0 + locations[first, 2]))
    return scores


BASELINES = ("chance", "flat_upright", "lowest_point")


def baseline_scores(name: str, data, env_points: np.ndarray | None,
                    seed: int) -> np.ndarray:
    if name == "chance":
        return baseline_chance(len(data.candidate_ids), seed)
    if name == "lowest_point":
        return baseline_lowest_point(data.locations)
    if name == "flat_upright":
        if env_points is None:
            raise ValueError("flat_upright needs the environment cloud")
        return baseline_flat_upright(data.locations, data.quaternions,
                                     env_points, seed)
    raise ValueError(f"unknown baseline {name!r}")


# ---------------------------------------------------------------------------
# feature ablation
# ---------------------------------------------------------------------------


def family_mask(names) -> np.ndarray:
    """Boolean mask over the 120 features for a set of family names."""
    if isinstance(names, str):
        names = [names]
    if not names:
        raise ValueError("empty feature set")
    mask = np.zeros(120, dtype=bool)
    for name in names:
        if name not in FEATURE_FAMILIES:
            raise ValueError(f"unknown feature family {name!r}")
        lo, hi = FEATURE_FAMILIES[name]
        mask[lo:hi] = True
    if not mask.any():
        raise ValueError("empty feature set")
    return mask


def ablate_features(train_sets: dict, test_sets: dict, families,
                    hp: learn.HyperParams = learn.HyperParams(),
                    n: int = DEFAULT_PRECISION_N):
    """SESO evaluation using only the named feature families.

    `train_sets` / `test_sets` map task_id -> dataset (X, y, stable,
    candidate_ids).  Returns {task_id: RankingResult}.
    """
    mask = family_mask(families)
    results = {}
    for task_id in sorted(train_sets):
        tr = train_sets[task_id]
        te = test_sets[task_id]
        td = learn.TaskData(tr.X[:, mask], tr.y, task_id)
        model = learn.train_independent([td], hp)[0]
        scores = model.score_raw(te.X[:, mask])
        results[task_id] = rank_metrics(scores, te.y, te.stable,
                                        te.candidate_ids, n)
    return results


# ---------------------------------------------------------------------------
# benchmark report
# ---------------------------------------------------------------------------


ROW_FIELDS = ("environment", "object", "task_id", "scenario", "method",
              "r0", "prec_at_n", "r0_stable", "prec_at_n_stable",
              "n_candidates", "n_valid", "excluded")


@dataclass
class BenchmarkReport:
    """One row per (task, scenario, method) cell plus recomputable
    environment-wise and object-wise averages over the included rows."""

    rows: list = field(default_factory=list)
    metric_n: int = DEFAULT_PRECISION_N

    def add(self, *, environment: str, object_kind: str, task_id: int,
            scenario: str, method: str, result: RankingResult | None,
            n_valid: int, excluded: bool = False, note: str = ""):
        row = {
            "environment": environment, "object": object_kind,
            "task_id": task_id, "scenario": str(scenario), "method": method,
            "r0": None if result is None else result.r0,
            "prec_at_n": None if result is None else result.prec_at_n,
            "r0_stable": None if result is None else result.r0_stable,
            "prec_at_n_stable": None if result is None else result.prec_at_n_stable,
            "n_candidates": 0 if result is None else len(result.order),
            "n_valid": n_valid,
            "excluded": bool(excluded or result is None),
            "note": note,
        }
        self.rows.append(row)

    def _included(self, scenario=None, method=None):
        out = []
        for r in self.rows:
            if r["excluded"]:
                continue
            if scenario is not None and r["scenario"] != str(scenario):
                continue
            if method is not None and r["method"] != method:
                continue
            out.append(r)
        return out

    @staticmethod
    def _avg(rows, key):
        vals = [r[key] for r in rows]
        return sum(vals) / len(vals) if vals else None

    def averages(self, by: str, scenario=None, method=None) -> dict:
        """Mean r0/prec over included rows grouped by 'environment',
        'object', or 'method'."""
        groups = {}
        for r in self._included(scenario, method):
            groups.setdefault(r[by], []).append(r)
        return {
            k: {
                "r0": self._avg(rs, "r0"),
                "prec_at_n": self._avg(rs, "prec_at_n"),
                "r0_stable": self._avg(rs, "r0_stable"),
                "prec_at_n_stable": self._avg(rs, "prec_at_n_stable"),
                "count": len(rs),
            }
            for k, rs in sorted(groups.items())
        }

    def overall(self, scenario=None, method=None) -> dict:
        rs = self._included(scenario, method)
        return {
            "r0": self._avg(rs, "r0"),
            "prec_at_n": self._avg(rs, "prec_at_n"),
            "r0_stable": self._avg(rs, "r0_stable"),
            "prec_at_n_stable": self._avg(rs, "prec_at_n_stable"),
            "count": len(rs),
        }

    def check_averages(self, tol: float = 1e-9):
        """Recompute every average from the raw rows; any drift beyond
        `tol` raises (stored and derived views must agree)."""
        for by in ("environment", "object"):
            for key, stats in self.averages(by).items():
                rows = [r for r in self._included() if r[by] == key]
                for metric in ("r0", "prec_at_n"):
                    fresh = self._avg(rows, metric)
                    if fresh is None and stats[metric] is None:
                        continue
                    if abs(fresh - stats[metric]) > tol:
                        raise AssertionError(
                            f"average mismatch for {by}={key} {metric}")
        return True

    # -- serialization ------------------------------------------------

    def to_csv(self, path: str):
        fields = list(ROW_FIELDS) + ["note"]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=fields)
        writer.writeheader()
        for r in self.rows:
            writer.writerow({k: ("" if r.get(k) is None else r.get(k, ""))
                             for k in fields})
        _atomic_write(path, buf.getvalue())

    def to_text(self) -> str:
        """Aligned plain-text table: per-row details, then environment-
        wise and object-wise blocks of averages."""
        def fmt(v, width, dec=2):
            if v is None:
                return "-".rjust(width)
            if isinstance(v, float):
                return f"{v:.{dec}f}".rjust(width)
            return str(v).rjust(width)

        lines = []
        hdr = (f"{'environment':16s} {'object':10s} {'scen':5s} "
               f"{'method':13s} {'R0':>6s} {'Pre@' + str(self.metric_n):>7s} "
               f"{'R0s':>6s} {'Pres':>6s}")
        lines.append(hdr)
        lines.append("-" * len(hdr))
        for r in self.rows:
            cell_r0 = "-" if r["excluded"] else fmt(r["r0"], 6)
            cell_p = "-" if r["excluded"] else fmt(r["prec_at_n"], 7)
            cell_r0s = "-" if r["excluded"] else fmt(r["r0_stable"], 6)
            cell_ps = "-" if r["excluded"] else fmt(r["prec_at_n_stable"], 6)
            lines.append(
                f"{r['environment']:16s} {r['object']:10s} "
                f"{r['scenario']:5s} {r['method']:13s} "
                f"{cell_r0:>6s} {cell_p:>7s} {cell_r0s:>6s} {cell_ps:>6s}")
        for by, title in (("environment", "environment-wise averages"),
                          ("object", "object-wise averages")):
            lines.append("")
            lines.append(title)
            lines.append("-" * len(title))
            for key, stats in self.averages(by).items():
                lines.append(
                    f"{key:16s} R0={fmt(stats['r0'], 6)} "
                    f"Pre@{self.metric_n}={fmt(stats['prec_at_n'], 5)} "
                    f"(over {stats['count']} rows)")
        o = self.overall()
        lines.append("")
        lines.append(
            f"{'overall':16s} R0={fmt(o['r0'], 6)} "
            f"Pre@{self.metric_n}={fmt(o['prec_at_n'], 5)} "
            f"(over {o['count']} rows)")
        excluded = [r for r in self.rows if r["excluded"]]
        if excluded:
            lines.append("")
            lines.append("excluded cells ('-')")
            for r in excluded:
                why = r.get("note") or "no data"
                lines.append(f"  {r['object']}|{r['environment']} "
                             f"{r['scenario']} {r['method']}: {why}")
        return "\n".join(lines) + "\n"


def _atomic_write(path: str, text: str):
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)),
                               suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
