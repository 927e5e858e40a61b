"""Joint software-hardware configuration search over (alpha, beta).

Phase 1 sweeps the full alpha x beta grid; phase 2 refines beta by an
integer-adapted bisection at the winning alpha. Every (alpha, beta)
evaluation is cached, so the bisection revisiting grid points is free.
Selection is accuracy-first among feasible configs, breaking ties toward
cheaper hardware (smaller beta, then larger alpha / smaller tree).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import hw_model, tree_distiller
from .classifier import ClassifierModel, metrics_from_predictions
from .flow_embedder import FlowEmbedding
from .hw_model import CostCalibration, HardwareCost, ResourceBudget
from .tree_distiller import DecisionTree, PruningPath, generate_teacher_dataset

DEFAULT_BETA_RANGE = (1, 11)


class NoFeasibleConfigError(ValueError):
    pass


@dataclass
class JshcConfig:
    alpha_set: list[float] | None = None   # None -> the tree's own path alphas
    beta_set: list[int] | None = None      # None -> min_beta..max_beta
    min_beta: int = DEFAULT_BETA_RANGE[0]
    max_beta: int = DEFAULT_BETA_RANGE[1]
    tol: float = 1.0
    max_iter: int = 20
    z_max: ResourceBudget = field(default_factory=ResourceBudget)
    seed: int = 0

    def __post_init__(self):
        if self.min_beta > self.max_beta:
            raise ValueError("min_beta must not exceed max_beta")
        if self.min_beta < 1:
            raise ValueError("beta starts at 1 bit")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")
        if self.alpha_set is not None:
            if not self.alpha_set:
                raise ValueError("alpha_set must be non-empty")
            if any(a < 0 for a in self.alpha_set):
                raise ValueError("alphas must be nonnegative")


@dataclass
class ConfigEval:
    alpha: float
    beta: int
    accuracy: float
    f1: float
    cost: HardwareCost
    feasible: bool
    n_nodes: int


@dataclass
class BisectStep:
    left: int
    right: int
    mid: int
    accuracy: float
    feasible: bool


@dataclass
class JshcResult:
    best_alpha: float
    best_beta: int
    best_accuracy: float
    best: ConfigEval
    sweep_log: list[ConfigEval]
    bisection_trace: list[BisectStep]


@dataclass
class JshcArtifacts:
    """Everything an (alpha, beta) evaluation needs, with lazy caching of
    the distilled base tree, its pruning path, and quantization ranges."""
    train_x: np.ndarray          # distillation inputs
    train_y: np.ndarray          # teacher-assigned labels
    eval_x: np.ndarray
    eval_y: np.ndarray           # ground-truth labels for scoring
    class_names: list[str]
    calib: CostCalibration
    max_depth: int | None = None
    min_samples_leaf: int = 1
    criterion: str = "gini"
    _base_tree: DecisionTree | None = field(default=None, repr=False)
    _path: PruningPath | None = field(default=None, repr=False)
    _ranges: dict | None = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def base_tree(self) -> DecisionTree:
        if self._base_tree is None:
            self._base_tree = tree_distiller.cart_train(
                self.train_x, self.train_y, max_depth=self.max_depth,
                min_samples_leaf=self.min_samples_leaf, criterion=self.criterion,
                class_names=self.class_names)
        return self._base_tree

    def path(self) -> PruningPath:
        if self._path is None:
            self._path = tree_distiller.pruning_path(self.base_tree())
        return self._path

    def ranges(self) -> dict:
        if self._ranges is None:
            self._ranges = hw_model.fit_quantization_ranges(self.base_tree(), self.train_x)
        return self._ranges


def artifacts_from_embeddings(teacher: ClassifierModel,
                              train_embeddings: list[FlowEmbedding],
                              eval_embeddings: list[FlowEmbedding],
                              calib: CostCalibration | None = None,
                              **tree_params) -> JshcArtifacts:
    """Teacher-label the training side; score against eval ground truth."""
    train = generate_teacher_dataset(teacher, train_embeddings)
    eval_ds = generate_teacher_dataset(teacher, eval_embeddings)
    if np.any(eval_ds.y_true < 0):
        raise ValueError("eval embeddings must carry labels known to the teacher")
    return JshcArtifacts(train_x=train.x, train_y=train.y_teacher,
                         eval_x=eval_ds.x, eval_y=eval_ds.y_true,
                         class_names=list(teacher.class_names),
                         calib=calib or hw_model.default_calibration(),
                         **tree_params)


def default_alpha_set(artifacts: JshcArtifacts) -> list[float]:
    """The base tree's own breakpoints (plus 0) — every pruned shape shows up."""
    return sorted(set([0.0] + artifacts.path().alphas))


def evaluate_config(alpha: float, beta: int, artifacts: JshcArtifacts,
                    budget: ResourceBudget | None = None) -> ConfigEval:
    """Prune at alpha, quantize at beta, score on the eval split.

    Deterministic and cached by (alpha, beta); feasibility is recomputed
    against the given budget on every call.
    """
    if alpha < 0 or beta < 1:
        raise ValueError("need alpha >= 0 and beta >= 1")
    key = (float(alpha), int(beta))
    if key not in artifacts._cache:
        tree = tree_distiller.prune(artifacts.base_tree(), alpha, artifacts.path())
        qtree = hw_model.quantize_tree(tree, beta, artifacts.ranges())
        y_pred = tree_distiller.tree_predict_batch(qtree.tree, artifacts.eval_x)
        accuracy, f1, _ = metrics_from_predictions(artifacts.eval_y, y_pred,
                                                   len(artifacts.class_names))
        cost = hw_model.cost_estimate(qtree, artifacts.calib)
        artifacts._cache[key] = (accuracy, f1, cost, qtree.n_nodes)
    accuracy, f1, cost, n_nodes = artifacts._cache[key]
    feasible, _ = hw_model.check_constraint(cost, budget or ResourceBudget())
    return ConfigEval(alpha=float(alpha), beta=int(beta), accuracy=accuracy,
                      f1=f1, cost=cost, feasible=feasible, n_nodes=n_nodes)


def _better(a: ConfigEval, b: ConfigEval) -> bool:
    """True when a beats b: higher accuracy, then smaller beta, then larger alpha."""
    return (a.accuracy, -a.beta, a.alpha) > (b.accuracy, -b.beta, b.alpha)


def grid_sweep(cfg: JshcConfig, artifacts: JshcArtifacts) -> tuple[ConfigEval, list[ConfigEval]]:
    """Evaluate every (alpha, beta); log ordered by (alpha, beta)."""
    alphas = sorted(cfg.alpha_set) if cfg.alpha_set is not None else default_alpha_set(artifacts)
    betas = sorted(cfg.beta_set) if cfg.beta_set is not None else list(
        range(cfg.min_beta, cfg.max_beta + 1))
    if not alphas or not betas:
        raise ValueError("alpha and beta sets must be non-empty")
    log = [evaluate_config(a, b, artifacts, cfg.z_max) for a in alphas for b in betas]
    feasible = [e for e in log if e.feasible]
    if not feasible:
        counts = {}
        for e in log:
            _, violated = hw_model.check_constraint(e.cost, cfg.z_max)
            for name in violated:
                counts[name] = counts.get(name, 0) + 1
        tightest = max(sorted(counts), key=lambda n: counts[n])
        raise NoFeasibleConfigError(
            f"no feasible (alpha, beta) under the budget; tightest constraint: "
            f"{tightest} (violated by {counts[tightest]}/{len(log)} configs)")
    best = feasible[0]
    for e in feasible[1:]:
        if _better(e, best):
            best = e
    return best, log


def bisect_beta(best_alpha: float, cfg: JshcConfig, artifacts: JshcArtifacts,
                incumbent: ConfigEval | None = None) -> tuple[ConfigEval, list[BisectStep]]:
    """Integer bisection over beta at a fixed alpha.

    The interval moves by the raw accuracy rule (left up on >=, right
    down otherwise); the returned winner is the best feasible evaluation
    seen, never worse than the incumbent from the grid phase.
    """
    left, right = cfg.min_beta, cfg.max_beta
    tol = max(cfg.tol, 1.0)
    best = incumbent
    best_acc_seen = incumbent.accuracy if incumbent is not None else -1.0
    trace: list[BisectStep] = []
    iters = 0
    while right - left >= tol and iters < cfg.max_iter:
        mid = int(math.floor((left + right) / 2.0 + 0.5))
        ev = evaluate_config(best_alpha, mid, artifacts, cfg.z_max)
        trace.append(BisectStep(left=left, right=right, mid=mid,
                                accuracy=ev.accuracy, feasible=ev.feasible))
        if ev.feasible and (best is None or _better(ev, best)):
            best = ev
        prev = (left, right)
        if ev.accuracy >= best_acc_seen:
            best_acc_seen = ev.accuracy
            left = mid
        else:
            right = mid
        if (left, right) == prev:  # interval stalled at integer resolution
            break
        iters += 1
    if best is None:
        raise NoFeasibleConfigError("bisection found no feasible beta")
    return best, trace


def jshc_optimize(cfg: JshcConfig, artifacts: JshcArtifacts) -> JshcResult:
    """Grid sweep, then beta refinement at the winning alpha."""
    grid_best, log = grid_sweep(cfg, artifacts)
    best, trace = bisect_beta(grid_best.alpha, cfg, artifacts, incumbent=grid_best)
    return JshcResult(best_alpha=best.alpha, best_beta=best.beta,
                      best_accuracy=best.accuracy, best=best,
                      sweep_log=log, bisection_trace=trace)


def sweep_to_csv(log: list[ConfigEval], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "beta", "accuracy", "f1", "n_nodes",
                         "power_mw", "area_units", "latency_s", "feasible"])
        for e in log:
            writer.writerow([repr(e.alpha), e.beta, repr(e.accuracy), repr(e.f1),
                             e.n_nodes, repr(e.cost.power_mw), repr(e.cost.area_units),
                             repr(e.cost.inference_time_s), int(e.feasible)])
