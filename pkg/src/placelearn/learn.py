"""Max-margin rankers for placement candidates.

Three trainers over the same hinge objective:

* ``train_independent`` -- one linear SVM per task,
  ``min 1/2 |w|^2 + C sum hinge(y (w.x + b))``, solved exactly in the
  dual by sequential minimal optimization (max-violating-pair
  selection, free bias).
* ``train_joint`` -- the same objective over the row-concatenation of
  every task's data; one model serves all tasks.
* ``train_shared`` -- a weight matrix per task decomposed as
  ``w_t = S_t + B_t`` with an elementwise l1 penalty on S (private,
  sparse corrections) and an l1,inf penalty on the feature rows of B
  (features that earn weight do so for every task at once).  Solved by
  proximal subgradient descent with backtracking, warm-started from the
  independent solutions; the recorded objective trace is monotone
  non-increasing.

Features are standardized to zero mean / unit variance with statistics
from the training split (constant features get their stdev clamped to
1); each model carries the statistics it was trained with, and
``score`` expects inputs already standardized with exactly those.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

N_FEATURES = 120
MODEL_FORMAT_VERSION = 1


class DegenerateTaskError(ValueError):
    """Raised when a training set contains a single class."""


@dataclass(frozen=True)
class HyperParams:
    C: float = 1.0
    lambda_s: float = 0.1        # elementwise l1 on the private part
    lambda_b: float = 0.01       # row-wise l1,inf on the shared part
    kkt_tol: float = 1e-6        # SMO stopping threshold on KKT violation
    smo_max_iter: int = 200_000
    shared_tol: float = 1e-7     # relative objective decrease over 10 iters
    shared_max_iter: int = 5000

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be > 0")
        if self.lambda_s < 0 or self.lambda_b < 0:
            raise ValueError("penalty weights must be >= 0")
        if self.kkt_tol <= 0 or self.shared_tol <= 0:
            raise ValueError("tolerances must be > 0")
        if self.smo_max_iter < 1 or self.shared_max_iter < 1:
            raise ValueError("iteration limits must be >= 1")


@dataclass
class TaskData:
    """One task's training matrix: a feature row per candidate."""

    X: np.ndarray       # (n, p)
    y: np.ndarray       # (n,) in {+1, -1}
    task_id: int

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValueError("feature rows and labels disagree")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("non-finite feature entries")
        if not np.all(np.abs(self.y) == 1.0):
            raise ValueError("labels must be +1 or -1")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass
class TaskModel:
    """Linear scorer w = S + B with the standardization it was fit under."""

    S: np.ndarray
    B: np.ndarray
    b: float
    mean: np.ndarray
    std: np.ndarray
    task_id: int = -1
    converged: bool = True
    objective_trace: np.ndarray | None = None

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=np.float64).ravel()
        self.B = np.asarray(self.B, dtype=np.float64).ravel()
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        self.std = np.asarray(self.std, dtype=np.float64).ravel()
        if not (self.S.shape == self.B.shape == self.mean.shape == self.std.shape):
            raise ValueError("parameter vectors disagree in length")
        if not (np.all(np.isfinite(self.S)) and np.all(np.isfinite(self.B))
                and math.isfinite(self.b)):
            raise ValueError("non-finite model parameters")

    @property
    def w(self) -> np.ndarray:
        return self.S + self.B

    def standardize(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return (X - self.mean) / self.std

    def score_raw(self, X: np.ndarray) -> np.ndarray:
        """Scores for raw (unstandardized) feature rows."""
        return self.standardize(np.atleast_2d(X)) @ self.w + self.b


def fit_standardizer(X: np.ndarray):
    """Per-feature mean and stdev; stdev below 1e-12 is clamped to 1 so
    constant features pass through untouched."""
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return mean, std


def hinge_objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray,
                    C: float) -> float:
    """1/2 |w|^2 + C sum max(0, 1 - y (X w + b))."""
    margins = y * (X @ w + b)
    return 0.5 * float(w @ w) + C * float(np.maximum(0.0, 1.0 - margins).sum())


# ---------------------------------------------------------------------------
# SMO dual solver (linear kernel, free bias)
# ---------------------------------------------------------------------------

_GRAM_LIMIT = 4096  # cache the Gram matrix below this many rows


def _smo(X: np.ndarray, y: np.ndarray, C: float, tol: float, max_iter: int):
    """Maximize the SVM dual by repeatedly optimizing the pair of
    multipliers that most violates the KKT conditions.

    Returns (w, b, converged).  f tracks X w - y; the bias never enters
    the dual and is recovered from the final KKT interval.
    """
    n, p = X.shape
    alpha = np.zeros(n)
    w = np.zeros(p)
    f = -y.copy()
    pos = y > 0
    use_gram = n <= _GRAM_LIMIT
    K = X @ X.T if use_gram else None
    diag = np.einsum("ij,ij->i", X, X)
    eps_a = 1e-12 * C

    converged = False
    for _ in range(max_iter):
        up = np.where(pos, alpha < C - eps_a, alpha > eps_a)
        lo = np.where(pos, alpha > eps_a, alpha < C - eps_a)
        if not up.any() or not lo.any():
            converged = True
            break
        f_up = np.where(up, f, np.inf)
        f_lo = np.where(lo, f, -np.inf)
        i = int(np.argmin(f_up))
        j = int(np.argmax(f_lo))
        if f[j] - f[i] < tol:
            converged = True
            break

        yi, yj = y[i], y[j]
        ai, aj = alpha[i], alpha[j]
        if yi != yj:
            L = max(0.0, aj - ai)
            H = min(C, C + aj - ai)
        else:
            L = max(0.0, ai + aj - C)
            H = min(C, ai + aj)
        if use_gram:
            kij = K[i, j]
        else:
            kij = float(X[i] @ X[j])
        eta = diag[i] + diag[j] - 2.0 * kij
        if eta <= 1e-12:
            eta = 1e-12
        aj_new = aj + yj * (f[i] - f[j]) / eta
        aj_new = min(H, max(L, aj_new))
        ai_new = ai + yi * yj * (aj - aj_new)
        d_i = (ai_new - ai) * yi
        d_j = (aj_new - aj) * yj
        alpha[i] = ai_new
        alpha[j] = aj_new
        w += d_i * X[i] + d_j * X[j]
        if use_gram:
            f += d_i * K[i] + d_j * K[j]
        else:
            f += d_i * (X @ X[i]) + d_j * (X @ X[j])
    else:
        log.warning("SMO hit the iteration limit (%d rows)", n)

    up = np.where(pos, alpha < C - eps_a, alpha > eps_a)
    lo = np.where(pos, alpha > eps_a, alpha < C - eps_a)
    if up.any() and lo.any():
        b = -0.5 * (float(np.where(up, f, np.inf).min())
                    + float(np.where(lo, f, -np.inf).max()))
    elif up.any():
        b = -float(np.where(up, f, np.inf).min())
    elif lo.any():
        b = -float(np.where(lo, f, -np.inf).max())
    else:
        b = 0.0
    return w, b, converged


def _check_two_class(y: np.ndarray, what: str):
    if not ((y > 0).any() and (y < 0).any()):
        raise DegenerateTaskError(f"degenerate task: {what} has a single class")


def train_independent(tasks: list[TaskData], hp: HyperParams = HyperParams()
                      ) -> list[TaskModel]:
    """One SVM per task, each standardized with its own statistics."""
    models = []
    for t in tasks:
        _check_two_class(t.y, f"task {t.task_id}")
        mean, std = fit_standardizer(t.X)
        Xs = (t.X - mean) / std
        w, b, ok = _smo(Xs, t.y, hp.C, hp.kkt_tol, hp.smo_max_iter)
        models.append(TaskModel(S=w, B=np.zeros_like(w), b=b, mean=mean,
                                std=std, task_id=t.task_id, converged=ok))
    return models


def train_joint(tasks: list[TaskData], hp: HyperParams = HyperParams()
                ) -> TaskModel:
    """A single SVM over the pooled rows of every task."""
    if not tasks:
        raise ValueError("no tasks")
    X = np.vstack([t.X for t in tasks])
    y = np.concatenate([t.y for t in tasks])
    _check_two_class(y, "pooled data")
    mean, std = fit_standardizer(X)
    Xs = (X - mean) / std
    w, b, ok = _smo(Xs, y, hp.C, hp.kkt_tol, hp.smo_max_iter)
    return TaskModel(S=w, B=np.zeros_like(w), b=b, mean=mean, std=std,
                     task_id=-1, converged=ok)


# ---------------------------------------------------------------------------
# shared-sparsity multi-task solver
# ---------------------------------------------------------------------------


def _soft_threshold(M: np.ndarray, tau: float) -> np.ndarray:
    return np.sign(M) * np.maximum(np.abs(M) - tau, 0.0)


def _project_l1_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of each row of v onto the l1 ball."""
    if radius <= 0:
        return np.zeros_like(v)
    a = np.abs(v)
    u = np.sort(a, axis=-1)[..., ::-1]
    css = np.cumsum(u, axis=-1) - radius
    ks = np.arange(1, v.shape[-1] + 1)
    cond = u - css / ks > 0
    rho = cond.shape[-1] - 1 - np.argmax(cond[..., ::-1], axis=-1)
    theta = np.take_along_axis(css, rho[..., None], axis=-1)[..., 0] / (rho + 1)
    theta = np.maximum(theta, 0.0)
    return np.sign(v) * np.maximum(a - theta[..., None], 0.0)


def _prox_linf_rows(M: np.ndarray, tau: float) -> np.ndarray:
    """prox of tau * sum_rows ||row||_inf via the Moreau identity:
    prox(v) = v - projection of v onto the l1 ball of radius tau."""
    if tau <= 0:
        return M.copy()
    return M - _project_l1_ball(M, tau)


def _rebalance_rows(S: np.ndarray, B: np.ndarray, lam_s: float, lam_b: float):
    """Optimal split of w = S + B for fixed w, minimizing
    lam_s |S|_1,1 + lam_b sum_rows max|B| exactly.

    Per feature row, B = clip(w, +-M) and S keeps the overflow; the cost
    lam_s * sum max(|w|-M, 0) + lam_b * M is piecewise linear in M, so
    the optimum sits at M = 0 or at one of the sorted |w| kinks.
    Gradient steps alone never trade mass between the blocks (both see
    the same subgradient), so without this step the split would stay
    frozen at its warm start.
    """
    W = S + B
    a = np.sort(np.abs(W), axis=1)[:, ::-1]          # descending per row
    prefix = np.cumsum(a, axis=1)
    ks = np.arange(1, W.shape[1] + 1)
    # cost when M equals the k-th largest magnitude (overflow above it)
    cost_k = lam_s * (prefix - ks * a) + lam_b * a
    cost_0 = lam_s * prefix[:, -1:]                   # M = 0: all in S
    costs = np.concatenate([cost_k, cost_0], axis=1)
    pick = np.argmin(costs, axis=1)
    M = np.where(pick == W.shape[1], 0.0,
                 np.take_along_axis(a, np.minimum(pick, W.shape[1] - 1)[:, None],
                                    axis=1)[:, 0])
    B_new = np.clip(W, -M[:, None], M[:, None])
    return W - B_new, B_new


def _shared_objective(S, B, bias, Xs, ys, C, lam_s, lam_b) -> float:
    total = lam_s * float(np.abs(S).sum()) \
        + lam_b * float(np.abs(B).max(axis=1).sum())
    for t in range(len(Xs)):
        total += hinge_objective(S[:, t] + B[:, t], bias[t], Xs[t], ys[t], C)
    return total


def train_shared(tasks: list[TaskData], hp: HyperParams = HyperParams()
                 ) -> list[TaskModel]:
    """Proximal subgradient descent on the multi-task objective

        sum_t [ 1/2 |S_t+B_t|^2 + C sum hinge ]
            + lambda_s |S|_1,1 + lambda_b sum_rows max_t |B|,

    warm-started from the independent solutions (S = w_ind, B = 0).
    Backtracking enforces a monotone non-increasing objective; stops when
    the relative decrease over 10 iterations falls below ``shared_tol``.
    All tasks share one standardizer so the penalties compare features
    on a common scale.
    """
    if not tasks:
        raise ValueError("no tasks")
    for t in tasks:
        _check_two_class(t.y, f"task {t.task_id}")
    p = tasks[0].p
    r = len(tasks)
    mean, std = fit_standardizer(np.vstack([t.X for t in tasks]))
    Xs = [(t.X - mean) / std for t in tasks]
    ys = [t.y for t in tasks]

    S = np.empty((p, r))
    bias = np.empty(r)
    for t in range(r):
        w, b, _ = _smo(Xs[t], ys[t], hp.C, hp.kkt_tol, hp.smo_max_iter)
        S[:, t] = w
        bias[t] = b
    B = np.zeros((p, r))
    S, B = _rebalance_rows(S, B, hp.lambda_s, hp.lambda_b)

    obj = _shared_objective(S, B, bias, Xs, ys, hp.C, hp.lambda_s, hp.lambda_b)
    trace = [obj]
    best = (obj, S.copy(), B.copy(), bias.copy())
    eta = 0.1
    converged = False

    for it in range(hp.shared_max_iter):
        # subgradient of the smooth+hinge part; identical for S and B
        G = np.empty((p, r))
        gb = np.empty(r)
        for t in range(r):
            w = S[:, t] + B[:, t]
            margins = ys[t] * (Xs[t] @ w + bias[t])
            active = margins < 1.0
            ya = ys[t][active]
            G[:, t] = w - hp.C * (ya @ Xs[t][active])
            gb[t] = -hp.C * float(ya.sum())

        accepted = False
        for _ in range(60):
            S_new = _soft_threshold(S - eta * G, eta * hp.lambda_s)
            B_new = _prox_linf_rows(B - eta * G, eta * hp.lambda_b)
            b_new = bias - eta * gb
            S_new, B_new = _rebalance_rows(S_new, B_new,
                                           hp.lambda_s, hp.lambda_b)
            obj_new = _shared_objective(S_new, B_new, b_new, Xs, ys,
                                        hp.C, hp.lambda_s, hp.lambda_b)
            if obj_new <= obj:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            converged = True  # no descent step exists at any feasible length
            break
        S, B, bias, obj = S_new, B_new, b_new, obj_new
        trace.append(obj)
        if obj < best[0]:
            best = (obj, S.copy(), B.copy(), bias.copy())
        eta *= 1.2
        if len(trace) > 10:
            prev = trace[-11]
            if (prev - obj) / max(abs(prev), 1e-30) < hp.shared_tol:
                converged = True
                break
    if not converged:
        log.warning("shared solver stopped at the iteration limit; "
                    "returning the best iterate")

    _, S, B, bias = best
    trace_arr = np.array(trace)
    return [
        TaskModel(S=S[:, t], B=B[:, t], b=float(bias[t]), mean=mean, std=std,
                  task_id=tasks[t].task_id, converged=converged,
                  objective_trace=trace_arr)
        for t in range(r)
    ]


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


def score(model: TaskModel, v: np.ndarray) -> float:
    """w . v + b for a feature vector already standardized with the
    model's training statistics."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.shape != model.S.shape:
        raise ValueError("feature dimension mismatch")
    return float(model.w @ v + model.b)


def score_voting(models: list[TaskModel], v: np.ndarray) -> float:
    """Mean score across models (inference for tasks with no model of
    their own).  Callers must standardize v compatibly with every model,
    i.e. the models should share their training statistics."""
    if not models:
        raise ValueError("empty model list")
    return sum(score(m, v) for m in models) / len(models)


def score_matrix_raw(models: list[TaskModel], X_raw: np.ndarray) -> np.ndarray:
    """Voting scores for raw feature rows: each model standardizes with
    its own statistics, then the scores are averaged."""
    if not models:
        raise ValueError("empty model list")
    acc = np.zeros(len(np.atleast_2d(X_raw)))
    for m in models:
        acc += m.score_raw(X_raw)
    return acc / len(models)


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------


def model_to_dict(model: TaskModel, hp: HyperParams | None = None) -> dict:
    d = {
        "format_version": MODEL_FORMAT_VERSION,
        "task_id": model.task_id,
        "S": model.S.tolist(),
        "B": model.B.tolist(),
        "b": model.b,
        "mean": model.mean.tolist(),
        "std": model.std.tolist(),
        "converged": bool(model.converged),
    }
    if model.objective_trace is not None:
        d["objective_trace"] = model.objective_trace.tolist()
    if hp is not None:
        d["hyperparams"] = {
            "C": hp.C, "lambda_s": hp.lambda_s, "lambda_b": hp.lambda_b,
            "kkt_tol": hp.kkt_tol, "smo_max_iter": hp.smo_max_iter,
            "shared_tol": hp.shared_tol, "shared_max_iter": hp.shared_max_iter,
        }
    return d


def model_from_dict(d: dict) -> TaskModel:
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format {d.get('format_version')!r}")
    trace = d.get("objective_trace")
    return TaskModel(
        S=np.array(d["S"]), B=np.array(d["B"]), b=float(d["b"]),
        mean=np.array(d["mean"]), std=np.array(d["std"]),
        task_id=int(d["task_id"]), converged=bool(d["converged"]),
        objective_trace=None if trace is None else np.array(trace),
    )


def save_model(model: TaskModel, path: str, hp: HyperParams | None = None):
    """Write atomically: full content to a temp file, then rename."""
    payload = json.dumps(model_to_dict(model, hp), sort_keys=True, indent=1)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)),
                               suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path: str) -> TaskModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
