"""Hierarchy extraction, JSON/DOT export, and factor matching up to permutation and scale."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractError


@dataclass
class Hierarchy:
    """Parent maps of a Q-layer tree.

    ``parent_of[q]`` maps each node of layer ``q + 1`` (0-based list, layer 1
    being the items) to its parent in layer ``q + 2``. ``sizes`` gives the node
    count of every layer, so childless parents are still represented.
    """

    sizes: tuple
    parent_of: list
    labels: dict | None = None

    @property
    def Q(self) -> int:
        return len(self.sizes)

    def to_assignments(self) -> list:
        """One-hot ``S_q`` matrices."""
        out = []
        for q, p in enumerate(self.parent_of):
            S = np.zeros((self.sizes[q], self.sizes[q + 1]))
            S[np.arange(len(p)), p] = 1.0
            out.append(S)
        return out

    def leaf_paths(self) -> np.ndarray:
        """(M_1, Q-1) array: the ancestor of every leaf at layers 2..Q."""
        cur = np.arange(self.sizes[0])
        cols = []
        for p in self.parent_of:
            cur = np.asarray(p)[cur]
            cols.append(cur)
        return np.stack(cols, axis=1) if cols else np.empty((self.sizes[0], 0), dtype=np.int64)

    def __eq__(self, other):
        if not isinstance(other, Hierarchy):
            return NotImplemented
        return (
            tuple(self.sizes) == tuple(other.sizes)
            and len(self.parent_of) == len(other.parent_of)
            and all(np.array_equal(a, b) for a, b in zip(self.parent_of, other.parent_of))
        )


def extract_hierarchy(model) -> Hierarchy:
    """Read the parent maps off a fitted model's one-hot assignments."""
    sizes = tuple(int(m) for m in model.layer_sizes)
    parent_of = []
    for q, S in enumerate(model.S):
        if S.shape != (sizes[q], sizes[q + 1]) or not (np.all((S == 0) | (S == 1)) and np.all(S.sum(1) == 1)):
            raise ContractError(f"S_{q + 1} is not a one-hot assignment matrix")
        parent_of.append(np.argmax(S, axis=1).astype(np.int64))
    return Hierarchy(sizes, parent_of)


def from_assignments(S_list) -> Hierarchy:
    sizes = [S_list[0].shape[0]] + [S.shape[1] for S in S_list]
    return Hierarchy(tuple(sizes), [np.argmax(S, axis=1).astype(np.int64) for S in S_list])


# --------------------------------------------------------------------------
# export


def node_name(h: Hierarchy, layer: int, idx: int) -> str:
    """Leaves are ``i<k>``, roots ``c<k>``, intermediate layer q nodes ``s<q>_<k>`` (1-based q)."""
    if layer == 0:
        return f"i{idx}"
    if layer == h.Q - 1:
        return f"c{idx}"
    return f"s{layer + 1}_{idx}"


def export(h: Hierarchy, format="json") -> str:
    """Serialize a hierarchy.

    JSON: ``{"layers": Q, "nodes": [{"layer": q, "id": i, "parent": p}]}`` with
    1-based layers, leaves first and ``parent`` null on the root layer.
    DOT: a Graphviz digraph with one ``parent -> child`` edge per non-root node.
    Both orderings are by layer, then index.
    """
    if format == "json":
        nodes = []
        for q in range(h.Q):
            for i in range(h.sizes[q]):
                parent = int(h.parent_of[q][i]) if q < h.Q - 1 else None
                nodes.append({"layer": q + 1, "id": i, "parent": parent})
        doc = {"layers": h.Q, "nodes": nodes}
        if h.labels:
            doc["labels"] = h.labels
        return json.dumps(doc, indent=1)
    if format == "dot":
        lines = ["digraph tree {"]
        for q in range(h.Q - 1, 0, -1):
            for i, p in enumerate(h.parent_of[q - 1]):
                lines.append(f"  {node_name(h, q, int(p))} -> {node_name(h, q - 1, i)};")
        lines.append("}")
        return "\n".join(lines) + "\n"
    raise ContractError(f"unknown export format {format!r}")


def hierarchy_from_json(text) -> Hierarchy:
    doc = json.loads(text)
    Q = int(doc["layers"])
    by_layer = [[] for _ in range(Q)]
    for node in doc["nodes"]:
        by_layer[int(node["layer"]) - 1].append(node)
    sizes = []
    parent_of = []
    for q in range(Q):
        nodes = sorted(by_layer[q], key=lambda n: n["id"])
        if [n["id"] for n in nodes] != list(range(len(nodes))):
            raise ContractError(f"layer {q + 1} ids are not 0..{len(nodes) - 1}")
        sizes.append(len(nodes))
        if q < Q - 1:
            parent_of.append(np.array([n["parent"] for n in nodes], dtype=np.int64))
    return Hierarchy(tuple(sizes), parent_of, doc.get("labels"))


# --------------------------------------------------------------------------
# matching


@dataclass
class FactorMatch:
    """``permutation[k]`` is the estimated column matched to true column ``k``."""

    permutation: np.ndarray
    scales: np.ndarray
    score: float


def cosine_table(est, truth) -> np.ndarray:
    """Column cosine similarities, ``[k, l] = cos(truth[:, k], est[:, l])``; zero columns give 0."""
    ne = np.linalg.norm(est, axis=0)
    nt = np.linalg.norm(truth, axis=0)
    dots = truth.T @ est
    denom = np.outer(nt, ne)
    out = np.zeros_like(dots)
    ok = denom > 0
    out[ok] = dots[ok] / denom[ok]
    return out


def match_factors(est, truth) -> FactorMatch:
    """Optimal column matching of ``est`` to ``truth`` by cosine similarity (Hungarian)."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise ContractError(f"shape mismatch {est.shape} vs {truth.shape}")
    R = est.shape[1]
    if R > 64:
        raise ContractError(f"matching supports up to 64 columns, got {R}")
    C = cosine_table(est, truth)
    rows, cols = linear_sum_assignment(C, maximize=True)
    perm = np.empty(R, dtype=np.int64)
    perm[rows] = cols
    matched = np.sort(C[np.arange(R), perm])
    ne = np.linalg.norm(est, axis=0)[perm]
    nt = np.linalg.norm(truth, axis=0)
    scales = np.divide(ne, nt, out=np.zeros(R), where=nt > 0)
    return FactorMatch(perm, scales, float(matched.sum() / R))


def relabel_clusters(est_labels, true_labels, n_est, n_true) -> np.ndarray:
    """Map estimated cluster ids onto true ids maximizing membership overlap.

    Unmatched estimated clusters map to -1.
    """
    overlap = np.zeros((n_est, n_true))
    np.add.at(overlap, (est_labels, true_labels), 1.0)
    r, c = linear_sum_assignment(overlap, maximize=True)
    mapping = np.full(n_est, -1, dtype=np.int64)
    mapping[r] = c
    return mapping
