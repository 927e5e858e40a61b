"""Teacher-student distillation of the MLP into a CART tree, plus
minimal cost-complexity pruning.

The tree is grown greedily on teacher-labeled embeddings; pruning walks
the weakest-link path, where each internal node t carries

    alpha_eff(t) = (R(t) - R(T_t)) / (|leaves(T_t)| - 1)

with R the sample-weighted impurity contribution. Collapsing every
minimizer at each step yields the nested subtree family that minimizes
R(T) + alpha * |leaves| for every alpha.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .classifier import ClassifierModel, predict_proba
from .flow_embedder import FlowEmbedding

GAIN_TOL = 1e-12
ALPHA_REL_TOL = 1e-12


@dataclass(slots=True)
class TreeNode:
    node_id: int
    class_counts: np.ndarray          # (k,) training samples routed here
    predicted_class: int = 0          # argmax counts, ties -> lowest id
    feature_index: int = -1           # -1 marks a leaf
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    r_node: float = 0.0               # R(t) = (n_t/N) * impurity(t)
    r_subtree: float = 0.0            # R(T_t) over the branch's leaves
    n_leaves: int = 1                 # |leaves(T_t)|
    depth: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.feature_index < 0


@dataclass
class DecisionTree:
    nodes: list[TreeNode]
    k: int
    class_names: list[str]
    criterion: str = "gini"
    root_id: int = 0

    def __post_init__(self):
        if len(self.class_names) != self.k:
            raise ValueError("class_names length must equal k")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_leaves(self) -> int:
        return sum(1 for n in self.nodes if n.is_leaf)

    @property
    def max_depth(self) -> int:
        """Longest root-to-leaf path, counted in edges."""
        return max(n.depth for n in self.nodes)

    def predict_label(self, values: np.ndarray) -> str:
        return self.class_names[tree_predict(self, values)]


@dataclass
class TeacherDataset:
    x: np.ndarray                    # (n, n_b)
    y_teacher: np.ndarray            # teacher argmax ids
    y_true: np.ndarray               # ground-truth ids (-1 if unlabeled)
    class_names: list[str]
    flow_ids: list[str] = field(default_factory=list)


@dataclass
class PathEntry:
    alpha_eff: float
    n_nodes: int
    tree: DecisionTree


@dataclass
class PruningPath:
    entries: list[PathEntry]

    @property
    def alphas(self) -> list[float]:
        return [e.alpha_eff for e in self.entries]


def gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


def entropy(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log2(p)))


_IMPURITY = {"gini": gini, "entropy": entropy}


def generate_teacher_dataset(teacher: ClassifierModel,
                             embeddings: list[FlowEmbedding]) -> TeacherDataset:
    """Label every embedding with the teacher's argmax prediction."""
    if not embeddings:
        raise ValueError("empty embedding batch")
    x = np.stack([np.asarray(e.values, dtype=np.float64) for e in embeddings])
    probs = predict_proba(teacher, x)
    y_teacher = np.argmax(probs, axis=1).astype(np.int64)
    index = {name: i for i, name in enumerate(teacher.class_names)}
    y_true = np.array([index.get(e.label, -1) for e in embeddings], dtype=np.int64)
    return TeacherDataset(x=x, y_teacher=y_teacher, y_true=y_true,
                          class_names=list(teacher.class_names),
                          flow_ids=[e.flow_id for e in embeddings])


def _best_split(x: np.ndarray, y: np.ndarray, k: int, impurity,
                parent_impurity: float, min_samples_leaf: int):
    """Scan midpoint candidates on every feature; returns
    (gain, feature, threshold) or None. Ties resolve to the lowest
    feature index, then the lowest threshold."""
    n = y.shape[0]
    onehot = np.zeros((n, k), dtype=np.float64)
    onehot[np.arange(n), y] = 1.0
    best = None
    for f in range(x.shape[1]):
        order = np.argsort(x[:, f], kind="stable")
        v = x[order, f]
        left_counts = np.cumsum(onehot[order], axis=0)  # after i+1 samples
        total = left_counts[-1]
        # candidate boundaries sit between distinct consecutive values
        cut = np.nonzero(v[1:] > v[:-1])[0]  # split after index i
        if cut.size == 0:
            continue
        nl = (cut + 1).astype(np.float64)
        nr = n - nl
        ok = (nl >= min_samples_leaf) & (nr >= min_samples_leaf)
        if not np.any(ok):
            continue
        cut = cut[ok]
        nl, nr = nl[ok], nr[ok]
        lc = left_counts[cut]
        rc = total - lc
        pl = lc / nl[:, None]
        pr = rc / nr[:, None]
        if impurity is gini:
            il = 1.0 - np.sum(pl * pl, axis=1)
            ir = 1.0 - np.sum(pr * pr, axis=1)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                il = -np.sum(np.where(pl > 0, pl * np.log2(pl), 0.0), axis=1)
                ir = -np.sum(np.where(pr > 0, pr * np.log2(pr), 0.0), axis=1)
        gains = parent_impurity - (nl * il + nr * ir) / n
        j = int(np.argmax(gains))
        if gains[j] > GAIN_TOL:
            thr = float((v[cut[j]] + v[cut[j] + 1]) / 2.0)
            if best is None or gains[j] > best[0] + GAIN_TOL:
                best = (float(gains[j]), f, thr)
    return best


def cart_train(x: np.ndarray, y: np.ndarray, max_depth: int | None = None,
               min_samples_leaf: int = 1, criterion: str = "gini",
               class_names: list[str] | None = None) -> DecisionTree:
    """Greedy binary splitting; only strictly impurity-reducing splits are
    kept, so every internal node has a positive pruning alpha."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    if x.shape[0] == 0 or x.shape[0] != y.shape[0]:
        raise ValueError("bad training batch")
    if min_samples_leaf < 1:
        raise ValueError("min_samples_leaf must be >= 1")
    if criterion not in _IMPURITY:
        raise ValueError(f"unknown criterion {criterion!r}")
    impurity = _IMPURITY[criterion]
    k = int(y.max()) + 1 if class_names is None else len(class_names)
    if np.any(y < 0) or np.any(y >= k):
        raise ValueError("labels out of range")
    names = class_names if class_names is not None else [str(i) for i in range(k)]
    n_total = x.shape[0]

    nodes: list[TreeNode] = []

    def build(idx: np.ndarray, depth: int) -> int:
        counts = np.bincount(y[idx], minlength=k).astype(np.float64)
        node_id = len(nodes)
        imp = impurity(counts)
        node = TreeNode(node_id=node_id, class_counts=counts,
                        predicted_class=int(np.argmax(counts)),
                        r_node=(idx.shape[0] / n_total) * imp, depth=depth)
        nodes.append(node)
        can_split = (imp > 0.0 and idx.shape[0] >= 2 * min_samples_leaf
                     and (max_depth is None or depth < max_depth))
        if can_split:
            found = _best_split(x[idx], y[idx], k, impurity, imp, min_samples_leaf)
            if found is not None:
                _gain, f, thr = found
                go_left = x[idx, f] <= thr
                node.feature_index = f
                node.threshold = thr
                node.left = build(idx[go_left], depth + 1)
                node.right = build(idx[~go_left], depth + 1)
        return node_id

    build(np.arange(n_total), 0)
    tree = DecisionTree(nodes=nodes, k=k, class_names=list(names), criterion=criterion)
    _annotate(tree)
    return tree


def _annotate(tree: DecisionTree) -> None:
    """Fill r_subtree / n_leaves bottom-up (nodes are in preorder, so a
    reverse pass sees children before parents)."""
    for node in reversed(tree.nodes):
        if node.is_leaf:
            node.r_subtree = node.r_node
            node.n_leaves = 1
        else:
            l, r = tree.nodes[node.left], tree.nodes[node.right]
            node.r_subtree = l.r_subtree + r.r_subtree
            node.n_leaves = l.n_leaves + r.n_leaves


def _compact_copy(tree: DecisionTree, drop_to_leaf: set[int]) -> DecisionTree:
    """Rebuild with the given nodes collapsed to leaves; ids re-assigned
    in preorder and bookkeeping recomputed."""
    new_nodes: list[TreeNode] = []

    def walk(old_id: int, depth: int) -> int:
        old = tree.nodes[old_id]
        nid = len(new_nodes)
        node = TreeNode(node_id=nid, class_counts=old.class_counts.copy(),
                        predicted_class=old.predicted_class,
                        r_node=old.r_node, depth=depth)
        new_nodes.append(node)
        if not old.is_leaf and old_id not in drop_to_leaf:
            node.feature_index = old.feature_index
            node.threshold = old.threshold
            node.left = walk(old.left, depth + 1)
            node.right = walk(old.right, depth + 1)
        return nid

    walk(tree.root_id, 0)
    out = DecisionTree(nodes=new_nodes, k=tree.k, class_names=list(tree.class_names),
                       criterion=tree.criterion)
    _annotate(out)
    return out


def pruning_path(tree: DecisionTree) -> PruningPath:
    """Iterated weakest-link pruning down to the root.

    Every minimizer of alpha_eff collapses simultaneously (ties within
    relative tolerance; the recorded alpha is their minimum), which makes
    alpha strictly increasing and node counts strictly decreasing.
    """
    current = _compact_copy(tree, set())
    entries = [PathEntry(alpha_eff=0.0, n_nodes=current.n_nodes, tree=current)]
    while current.n_nodes > 1:
        alphas = {}
        for node in current.nodes:
            if not node.is_leaf:
                alphas[node.node_id] = (node.r_node - node.r_subtree) / (node.n_leaves - 1)
        a_min = min(alphas.values())
        tol = ALPHA_REL_TOL * max(1.0, abs(a_min))
        weakest = {nid for nid, a in alphas.items() if a <= a_min + tol}
        current = _compact_copy(current, weakest)
        if a_min <= entries[-1].alpha_eff + tol:
            # keep alphas strictly increasing: fold into the previous step
            entries[-1] = PathEntry(alpha_eff=entries[-1].alpha_eff,
                                    n_nodes=current.n_nodes, tree=current)
        else:
            entries.append(PathEntry(alpha_eff=a_min, n_nodes=current.n_nodes,
                                     tree=current))
    return PruningPath(entries=entries)


def prune(tree: DecisionTree, alpha: float, path: PruningPath | None = None) -> DecisionTree:
    """Subtree minimizing R(T) + alpha*|leaves|: the last path entry whose
    alpha_eff does not exceed alpha."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    path = path or pruning_path(tree)
    chosen = path.entries[0]
    for entry in path.entries[1:]:
        if entry.alpha_eff <= alpha:
            chosen = entry
    return chosen.tree


def tree_predict(tree: DecisionTree, values) -> int:
    """Route to a leaf; values at the threshold go left."""
    nodes = tree.nodes
    node = nodes[tree.root_id]
    while node.feature_index >= 0:
        node = nodes[node.left if values[node.feature_index] <= node.threshold
                     else node.right]
    return node.predicted_class


def tree_predict_batch(tree: DecisionTree, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return np.array([tree_predict(tree, row) for row in x], dtype=np.int64)


def fidelity(tree: DecisionTree, teacher: ClassifierModel,
             embeddings: list[FlowEmbedding]) -> float:
    """Fraction of embeddings where the student reproduces the teacher."""
    data = generate_teacher_dataset(teacher, embeddings)
    agree = tree_predict_batch(tree, data.x) == data.y_teacher
    return float(np.mean(agree))


def tree_to_dict(tree: DecisionTree) -> dict:
    return {
        "k": tree.k,
        "class_names": list(tree.class_names),
        "criterion": tree.criterion,
        "root_id": tree.root_id,
        "nodes": [
            {
                "id": n.node_id,
                "class_counts": [float(c) for c in n.class_counts],
                "predicted_class": n.predicted_class,
                "feature_index": n.feature_index,
                "threshold": n.threshold,
                "left": n.left,
                "right": n.right,
                "r_node": n.r_node,
                "r_subtree": n.r_subtree,
                "n_leaves": n.n_leaves,
                "depth": n.depth,
            }
            for n in tree.nodes
        ],
    }


def tree_from_dict(doc: dict) -> DecisionTree:
    nodes = [
        TreeNode(node_id=nd["id"],
                 class_counts=np.array(nd["class_counts"], dtype=np.float64),
                 predicted_class=nd["predicted_class"],
                 feature_index=nd["feature_index"],
                 threshold=nd["threshold"],
                 left=nd["left"], right=nd["right"],
                 r_node=nd["r_node"], r_subtree=nd["r_subtree"],
                 n_leaves=nd["n_leaves"], depth=nd["depth"])
        for nd in doc["nodes"]
    ]
    return DecisionTree(nodes=nodes, k=doc["k"], class_names=list(doc["class_names"]),
                        criterion=doc["criterion"], root_id=doc["root_id"])


def save_tree(tree: DecisionTree, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(tree_to_dict(tree), fh)


def load_tree(path: str) -> DecisionTree:
    with open(path) as fh:
        return tree_from_dict(json.load(fh))


def rules_text(tree: DecisionTree, feature_names: list[str] | None = None) -> str:
    """Indented human-readable if/else rendering of the tree."""
    def fname(i: int) -> str:
        return feature_names[i] if feature_names else f"v_{i + 1}"

    lines: list[str] = []

    def walk(node_id: int, indent: int) -> None:
        node = tree.nodes[node_id]
        pad = "  " * indent
        if node.is_leaf:
            n = int(node.class_counts.sum())
            lines.append(f"{pad}class: {tree.class_names[node.predicted_class]} (n={n})")
            return
        lines.append(f"{pad}if {fname(node.feature_index)} <= {node.threshold:.6g}:")
        walk(node.left, indent + 1)
        lines.append(f"{pad}else:")
        walk(node.right, indent + 1)

    walk(tree.root_id, 0)
    return "\n".join(lines) + "\n"
