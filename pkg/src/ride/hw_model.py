"""Analog-hardware cost model: β-bit threshold quantization plus a
calibrated per-node power/area table and a per-level latency.

The calibration defaults are anchored to three published measurements of
a memristor comparator-tree prototype: 0.97 mW for a 35-node tree at
β ≤ 5, a 4× power step by β = 11 (3.88 mW), and per-sample latency around
4e-5 s for a 15-node tree. Everything else is interpolated and clearly an
estimate; supply a JSON calibration file to override.
"""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .tree_distiller import DecisionTree, tree_from_dict, tree_to_dict

logger = logging.getLogger(__name__)

BETA_MIN = 1
BETA_MAX = 16

# measured anchors: 35 nodes at beta<=5 draw 0.97 mW; 4x that by beta=11
_POWER_BASE_MW = 0.97 / 35.0
_POWER_SLOPE = _POWER_BASE_MW * (4.0 - 1.0) / (11 - 5)
_LATENCY_PER_LEVEL_S = 1e-5


def _default_power(beta: int) -> float:
    if beta <= 5:
        return _POWER_BASE_MW
    return _POWER_BASE_MW + (beta - 5) * _POWER_SLOPE


def _default_area(beta: int) -> float:
    # near-flat: one 5-bit node is the unit; +-10% across the sweep
    return min(0.95 + 0.01 * beta, 1.10)


@dataclass
class CostCalibration:
    power_mw_per_node: dict[int, float]
    area_per_node: dict[int, float]
    latency_per_level_s: float

    def __post_init__(self):
        betas = list(range(BETA_MIN, BETA_MAX + 1))
        for name, table in (("power_mw_per_node", self.power_mw_per_node),
                            ("area_per_node", self.area_per_node)):
            missing = [b for b in betas if b not in table]
            if missing:
                raise ValueError(f"{name} missing beta values {missing}")
            vals = [table[b] for b in betas]
            if any(v < 0 for v in vals):
                raise ValueError(f"{name} has negative entries")
            if any(later < earlier for earlier, later in zip(vals, vals[1:])):
                raise ValueError(f"{name} must be non-decreasing in beta")
        if self.latency_per_level_s <= 0:
            raise ValueError("latency_per_level_s must be positive")


def default_calibration() -> CostCalibration:
    return CostCalibration(
        power_mw_per_node={b: _default_power(b) for b in range(BETA_MIN, BETA_MAX + 1)},
        area_per_node={b: _default_area(b) for b in range(BETA_MIN, BETA_MAX + 1)},
        latency_per_level_s=_LATENCY_PER_LEVEL_S,
    )


def calibration_to_dict(calib: CostCalibration) -> dict:
    return {
        "power_mw_per_node": {str(b): v for b, v in sorted(calib.power_mw_per_node.items())},
        "area_per_node": {str(b): v for b, v in sorted(calib.area_per_node.items())},
        "latency_per_level_s": calib.latency_per_level_s,
    }


def calibration_from_dict(doc: dict) -> CostCalibration:
    return CostCalibration(
        power_mw_per_node={int(b): float(v) for b, v in doc["power_mw_per_node"].items()},
        area_per_node={int(b): float(v) for b, v in doc["area_per_node"].items()},
        latency_per_level_s=float(doc["latency_per_level_s"]),
    )


def load_calibration(path: str | None = None) -> CostCalibration:
    """Read a JSON calibration; absent path or file falls back to defaults."""
    if path is None:
        return default_calibration()
    if not os.path.exists(path):
        logger.warning("calibration file %s not found; using built-in defaults", path)
        return default_calibration()
    with open(path) as fh:
        return calibration_from_dict(json.load(fh))


@dataclass
class QuantizedTree:
    tree: DecisionTree                      # thresholds already snapped
    beta: int
    ranges: dict[int, tuple[float, float]]  # feature -> (lo, hi)
    level_index: dict[int, int] = field(default_factory=dict)  # node id -> level

    @property
    def n_nodes(self) -> int:
        return self.tree.n_nodes

    @property
    def class_names(self) -> list[str]:
        return self.tree.class_names

    def predict_label(self, values: np.ndarray) -> str:
        return self.tree.predict_label(values)


@dataclass
class HardwareCost:
    power_mw: float
    area_units: float
    inference_time_s: float
    n_nodes: int
    beta: int

    def __post_init__(self):
        if min(self.power_mw, self.area_units, self.inference_time_s) < 0:
            raise ValueError("costs must be nonnegative")


@dataclass
class ResourceBudget:
    max_power_mw: float | None = None
    max_area_units: float | None = None
    max_latency_s: float | None = None


def fit_quantization_ranges(tree: DecisionTree, x: np.ndarray) -> dict[int, tuple[float, float]]:
    """Observed (min, max) per split feature; a constant feature widens
    by +-0.5 so the level grid stays well-defined."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("empty range-fitting batch")
    ranges = {}
    for node in tree.nodes:
        if node.is_leaf or node.feature_index in ranges:
            continue
        f = node.feature_index
        lo, hi = float(np.min(x[:, f])), float(np.max(x[:, f]))
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        ranges[f] = (lo, hi)
    return ranges


def quantize_tree(tree: DecisionTree, beta: int,
                  ranges: dict[int, tuple[float, float]]) -> QuantizedTree:
    """Snap every split threshold to the nearest of 2^beta uniform levels
    over its feature's range (midway ties snap up). Topology, features,
    and leaf classes are untouched."""
    if beta < 1:
        raise ValueError("beta must be >= 1")
    n_levels = 2 ** beta
    out = tree_from_dict(tree_to_dict(tree))  # deep structural copy
    level_index: dict[int, int] = {}
    for node in out.nodes:
        if node.is_leaf:
            continue
        if node.feature_index not in ranges:
            raise ValueError(f"no quantization range for feature {node.feature_index}")
        lo, hi = ranges[node.feature_index]
        if not hi > lo:
            raise ValueError(f"bad range for feature {node.feature_index}: ({lo}, {hi})")
        step = (hi - lo) / (n_levels - 1)
        j = int(math.floor((node.threshold - lo) / step + 0.5))
        j = min(max(j, 0), n_levels - 1)
        node.threshold = float(lo + j * step)
        level_index[node.node_id] = j
    return QuantizedTree(tree=out, beta=beta, ranges=dict(ranges), level_index=level_index)


def cost_estimate(qtree: QuantizedTree, calib: CostCalibration) -> HardwareCost:
    """power/area scale with node count; latency with the deepest path."""
    beta = qtree.beta
    if beta not in calib.power_mw_per_node or beta not in calib.area_per_node:
        raise ValueError(f"calibration does not cover beta={beta}")
    n = qtree.n_nodes
    return HardwareCost(
        power_mw=n * calib.power_mw_per_node[beta],
        area_units=n * calib.area_per_node[beta],
        inference_time_s=qtree.tree.max_depth * calib.latency_per_level_s,
        n_nodes=n,
        beta=beta,
    )


def check_constraint(cost: HardwareCost, budget: ResourceBudget) -> tuple[bool, list[str]]:
    """Inclusive comparison against every specified budget field."""
    violated = []
    if budget.max_power_mw is not None and cost.power_mw > budget.max_power_mw:
        violated.append("power")
    if budget.max_area_units is not None and cost.area_units > budget.max_area_units:
        violated.append("area")
    if budget.max_latency_s is not None and cost.inference_time_s > budget.max_latency_s:
        violated.append("latency")
    return (not violated, violated)


def budget_from_dict(doc: dict) -> ResourceBudget:
    return ResourceBudget(
        max_power_mw=doc.get("max_power_mw"),
        max_area_units=doc.get("max_area_units"),
        max_latency_s=doc.get("max_latency_s"),
    )


def cost_to_dict(cost: HardwareCost) -> dict:
    return {
        "power_mw": cost.power_mw,
        "area_units": cost.area_units,
        "inference_time_s": cost.inference_time_s,
        "n_nodes": cost.n_nodes,
        "beta": cost.beta,
    }


def qtree_to_dict(qtree: QuantizedTree) -> dict:
    return {
        "beta": qtree.beta,
        "ranges": {str(f): [lo, hi] for f, (lo, hi) in sorted(qtree.ranges.items())},
        "level_index": {str(nid): j for nid, j in sorted(qtree.level_index.items())},
        "tree": tree_to_dict(qtree.tree),
    }


def qtree_from_dict(doc: dict) -> QuantizedTree:
    return QuantizedTree(
        tree=tree_from_dict(doc["tree"]),
        beta=doc["beta"],
        ranges={int(f): (float(v[0]), float(v[1])) for f, v in doc["ranges"].items()},
        level_index={int(nid): int(j) for nid, j in doc["level_index"].items()},
    )


def save_qtree(qtree: QuantizedTree, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(qtree_to_dict(qtree), fh)


def load_qtree(path: str) -> QuantizedTree:
    with open(path) as fh:
        return qtree_from_dict(json.load(fh))
