"""Axis-aligned binary regression trees and sum-of-trees ensembles.

Trees are stored as flat node arrays (an arena): node ``i`` is a leaf when
``var[i] == -1``, otherwise it splits on ``var[i]`` at ``threshold[i]`` and
routes ``x[var] < threshold`` to ``left[i]`` and everything else (ties
included) to ``right[i]``. The root is node 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import StructuralError
from .measures import Cell

LEAF = -1


@dataclass
class DecisionTree:
    var: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    # index into the variable's cutpoint grid, -1 when the tree was built by hand
    cut: np.ndarray = None

    def __post_init__(self):
        self.var = np.asarray(self.var, dtype=np.int64)
        n = self.var.size
        self.threshold = np.asarray(self.threshold, dtype=float)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.value = np.asarray(self.value, dtype=float)
        self.cut = (np.full(n, -1, dtype=np.int64) if self.cut is None
                    else np.asarray(self.cut, dtype=np.int64))
        for arr in (self.threshold, self.left, self.right, self.value, self.cut):
            if arr.shape != (n,):
                raise StructuralError("node arrays must have equal length")

    @classmethod
    def leaf(cls, value: float = 0.0) -> DecisionTree:
        return cls([LEAF], [np.nan], [-1], [-1], [value])

    @classmethod
    def from_nested(cls, spec) -> DecisionTree:
        """Build from nested tuples ``(var, threshold, left, right)`` with
        numbers as leaves, e.g. ``(0, 0.5, -1.0, 1.0)`` is a stump."""
        var, thr, lef, rig, val = [], [], [], [], []

        def add(node):
            idx = len(var)
            var.append(LEAF), thr.append(np.nan), lef.append(-1), rig.append(-1), val.append(0.0)
            if isinstance(node, tuple):
                k, t, lo, hi = node
                var[idx], thr[idx] = int(k), float(t)
                lef[idx] = add(lo)
                rig[idx] = add(hi)
            else:
                val[idx] = float(node)
            return idx

        add(spec)
        return cls(var, thr, lef, rig, val)

    @property
    def n_nodes(self) -> int:
        return self.var.size

    def is_leaf(self, i: int) -> bool:
        return self.var[i] == LEAF

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.var == LEAF)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.var == LEAF))

    def copy(self) -> DecisionTree:
        return DecisionTree(self.var.copy(), self.threshold.copy(), self.left.copy(),
                            self.right.copy(), self.value.copy(), self.cut.copy())

    def parents(self) -> np.ndarray:
        par = np.full(self.n_nodes, -1, dtype=np.int64)
        internal = np.flatnonzero(self.var != LEAF)
        par[self.left[internal]] = internal
        par[self.right[internal]] = internal
        return par

    def depths(self) -> np.ndarray:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        stack = [0]
        while stack:
            i = stack.pop()
            if self.var[i] != LEAF:
                for c in (self.left[i], self.right[i]):
                    depth[c] = depth[i] + 1
                    stack.append(c)
        return depth

    def apply(self, X) -> np.ndarray:
        """Index of the leaf each row of ``X`` lands in."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.var[node] != LEAF
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = X[idx, self.var[cur]] < self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.var[node] != LEAF
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def leaf_cells(self, support: Cell) -> list[tuple[Cell, float]]:
        """Cells routed to each leaf, in arena order of the leaves."""
        out = {}
        stack = [(0, support.lo.copy(), support.hi.copy())]
        while stack:
            i, lo, hi = stack.pop()
            if self.var[i] == LEAF:
                out[i] = (Cell(lo, hi), float(self.value[i]))
                continue
            k, t = self.var[i], self.threshold[i]
            if k < 0 or k >= lo.size:
                raise StructuralError(f"node {i} splits on variable {k} outside dimension {lo.size}")
            if not lo[k] < t < hi[k]:
                raise StructuralError(
                    f"node {i} splits x[{k}] at {t}, outside its interval [{lo[k]}, {hi[k]}]")
            lhi, rlo = hi.copy(), lo.copy()
            lhi[k] = t
            rlo[k] = t
            stack.append((self.left[i], lo, lhi))
            stack.append((self.right[i], rlo, hi))
        return [out[i] for i in sorted(out)]

    def validate(self) -> None:
        """Check the arena describes a single binary tree rooted at node 0."""
        n = self.n_nodes
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        while stack:
            i = stack.pop()
            if seen[i]:
                raise StructuralError(f"node {i} reached twice")
            seen[i] = True
            if self.var[i] != LEAF:
                for c in (self.left[i], self.right[i]):
                    if not 0 <= c < n:
                        raise StructuralError(f"node {i} has invalid child {c}")
                    stack.append(c)
        if not seen.all():
            raise StructuralError("unreachable nodes in arena")
        n_leaves = self.n_leaves
        if n - n_leaves != n_leaves - 1:
            raise StructuralError("binary tree must have K - 1 internal nodes")

    def to_dict(self) -> dict:
        return {
            "var": self.var.tolist(),
            "threshold": [None if np.isnan(t) else float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cut": self.cut.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> DecisionTree:
        thr = [np.nan if t is None else t for t in data["threshold"]]
        return cls(data["var"], thr, data["left"], data["right"], data["value"], data.get("cut"))


def eval_tree(tree: DecisionTree, x) -> np.ndarray:
    return tree.predict(x)


def leaf_cells(tree: DecisionTree, support: Cell) -> list[tuple[Cell, float]]:
    return tree.leaf_cells(support)


@dataclass(frozen=True)
class RescaleTransform:
    """Affine map ``z = (y - center) / width`` and its inverse."""

    center: float = 0.0
    width: float = 1.0

    @classmethod
    def fit(cls, y) -> RescaleTransform:
        """Send ``min(y)`` to -0.5 and ``max(y)`` to +0.5.

        Constant responses get unit width and are centred on their value.
        """
        y = np.asarray(y, dtype=float)
        lo, hi = float(np.min(y)), float(np.max(y))
        width = hi - lo
        if width <= 0:
            return cls(center=lo, width=1.0)
        return cls(center=0.5 * (lo + hi), width=width)

    def transform(self, y):
        return (np.asarray(y, dtype=float) - self.center) / self.width

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.width + self.center

    def to_dict(self) -> dict:
        return {"center": self.center, "width": self.width}


@dataclass
class SumOfTrees:
    """An ensemble ``sum_t tree_t(x)`` on the rescaled response scale.

    ``predict`` reports values on the original response scale.
    """

    trees: list
    sigma: float = 1.0
    rescale: RescaleTransform = field(default_factory=RescaleTransform)

    def __post_init__(self):
        if len(self.trees) < 1:
            raise StructuralError("an ensemble needs at least one tree")
        if not self.sigma > 0:
            raise StructuralError("sigma must be positive")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict_internal(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(X.shape[0])
        for tree in self.trees:
            out += tree.predict(X)
        return out

    def predict(self, X) -> np.ndarray:
        return self.rescale.inverse(self.predict_internal(X))

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "rescale": self.rescale.to_dict(),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data: dict) -> SumOfTrees:
        return cls([DecisionTree.from_dict(t) for t in data["trees"]], data["sigma"],
                   RescaleTransform(**data["rescale"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def eval_ensemble(ens: SumOfTrees, x) -> np.ndarray:
    return ens.predict(x)
