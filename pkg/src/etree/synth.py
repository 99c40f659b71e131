"""Synthetic ground truth with a planted tree, and recovery scoring.

Root embeddings are ``B_Q = [I_R; C]``: the identity block supplies an anchor
row for every latent dimension (separability), a checkable sufficient
condition for the rows being sufficiently scattered.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .data import ObservedMatrix, rng_for
from .errors import ContractError, DataError
from .linalg import normalize_rows
from .model import Hyperparams, TreeSpec, read_container, write_container
from .solver import etree_fit, random_assignment
from .tree import Hierarchy, match_factors, relabel_clusters


@dataclass(frozen=True)
class SynthSpec:
    N: int = 200
    layer_sizes: tuple = (60, 12, 4)
    R: int = 4
    noise_std: float = 0.0
    observation_rate: float = 1.0
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(m) for m in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or any(b >= a for a, b in zip(sizes, sizes[1:])):
            raise ContractError(f"layer sizes must be strictly decreasing with Q >= 2, got {sizes}")
        if sizes[-1] < self.R:
            raise ContractError(f"root layer ({sizes[-1]}) must have at least R={self.R} nodes")
        if self.R < 1 or self.N < self.R:
            raise ContractError(f"need 1 <= R <= N, got R={self.R}, N={self.N}")
        if self.noise_std < 0:
            raise ContractError("noise_std must be >= 0")
        if not 0 < self.observation_rate <= 1:
            raise ContractError("observation_rate must be in (0, 1]")


@dataclass
class GroundTruth:
    spec: SynthSpec
    A: np.ndarray
    B: list
    parents: list
    X: ObservedMatrix

    @property
    def S(self) -> list:
        out = []
        for q, p in enumerate(self.parents):
            S = np.zeros((len(p), self.B[q + 1].shape[0]))
            S[np.arange(len(p)), p] = 1.0
            out.append(S)
        return out

    def hierarchy(self) -> Hierarchy:
        return Hierarchy(self.spec.layer_sizes, [p.copy() for p in self.parents])


def gen_synthetic(spec: SynthSpec) -> GroundTruth:
    rng = rng_for(spec.seed, 40)
    sizes, R = spec.layer_sizes, spec.R
    n_extra = sizes[-1] - R
    C = rng.dirichlet(np.ones(R), size=n_extra) if n_extra else np.empty((0, R))
    C = C + 0.01 * np.abs(rng.standard_normal(C.shape))
    BQ = np.vstack([np.eye(R), C])
    parents = [random_assignment(a, b, rng) for a, b in zip(sizes, sizes[1:])]
    B = [BQ]
    for p in reversed(parents):
        B.insert(0, B[0][p])
    while True:
        A = np.abs(rng.standard_normal((spec.N, R)))
        if np.linalg.matrix_rank(A) == R:
            break
    dense = A @ B[0].T
    if spec.noise_std > 0:
        dense = dense + spec.noise_std * rng.standard_normal(dense.shape)
    mask = rng.random(dense.shape) < spec.observation_rate if spec.observation_rate < 1 else None
    X = ObservedMatrix.from_dense(dense, mask if mask is not None else np.ones(dense.shape, bool))
    return GroundTruth(spec, A, B, parents, X)


def check_separable_anchors(B, tol=1e-9) -> bool:
    """True iff every coordinate axis has a row within cosine distance ``tol`` of it."""
    B = np.asarray(B, dtype=float)
    norms = np.linalg.norm(B, axis=1)
    ok = norms > 0
    if not ok.any():
        return False
    cos = B[ok] / norms[ok, None]
    return bool(np.all((1.0 - cos.max(axis=0)) <= tol))


@dataclass
class RecoveryReport:
    A: float
    B1: float
    BQ: float
    tree_accuracy: float
    layer_accuracy: list
    root_accuracy: float

    def as_dict(self) -> dict:
        return asdict(self)


def recovery_score(est, truth: GroundTruth) -> RecoveryReport:
    """Match an estimated model to the planted truth.

    Factor scores are mean matched column cosines for ``A``, the effective item
    factors ``diag(d) B_1`` and the row-normalized roots ``B_Q`` (row scale is
    not identifiable once item rows are normalized). Tree accuracy is the
    fraction of leaves whose whole ancestor path agrees with the truth after
    relabeling each layer's clusters by maximum membership overlap.
    """
    sizes = truth.spec.layer_sizes
    if tuple(est.layer_sizes) != tuple(sizes) or est.A.shape != truth.A.shape:
        raise ContractError("estimated model and ground truth have different shapes")
    sA = match_factors(est.A, truth.A).score
    sB1 = match_factors(est.item_embeddings(), truth.B[0]).score
    sBQ = match_factors(normalize_rows(est.B[-1]), normalize_rows(truth.B[-1])).score
    est_paths = Hierarchy(sizes, list(est.parents)).leaf_paths()
    true_paths = truth.hierarchy().leaf_paths()
    hits = np.ones(sizes[0], dtype=bool)
    per_layer = []
    for q in range(len(sizes) - 1):
        m = sizes[q + 1]
        mapping = relabel_clusters(est_paths[:, q], true_paths[:, q], m, m)
        ok = mapping[est_paths[:, q]] == true_paths[:, q]
        per_layer.append(float(ok.mean()))
        hits &= ok
    return RecoveryReport(sA, sB1, sBQ, float(hits.mean()), per_layer, per_layer[-1])


# Tree weight used by the synthetic check unless overridden.
SYNTH_MU = 10.0


def synth_check(spec: SynthSpec, hp: Hyperparams, seeds) -> dict:
    """Fit one planted instance per seed and summarize recovery.

    The instance and the solver share the seed. The summary holds the mean
    factor scores, mean tree accuracy and the number of seeds whose tree
    accuracy reaches 0.9.
    """
    per_seed = []
    for seed in seeds:
        truth = gen_synthetic(replace(spec, seed=int(seed)))
        model = etree_fit(truth.X, hp.replace(seed=int(seed)), TreeSpec(spec.layer_sizes))
        rep = recovery_score(model, truth).as_dict()
        rep.update(seed=int(seed), epochs=len(model.trace))
        per_seed.append(rep)
    col = lambda k: [r[k] for r in per_seed]  # noqa: E731
    summary = {
        "seeds": len(per_seed),
        "A_mean": float(np.mean(col("A"))),
        "B1_mean": float(np.mean(col("B1"))),
        "BQ_mean": float(np.mean(col("BQ"))),
        "tree_accuracy_mean": float(np.mean(col("tree_accuracy"))),
        "root_accuracy_mean": float(np.mean(col("root_accuracy"))),
        "seeds_tree_ge_0.9": int(sum(t >= 0.9 for t in col("tree_accuracy"))),
        "seeds_root_ge_0.9": int(sum(t >= 0.9 for t in col("root_accuracy"))),
    }
    spec_d = asdict(spec)
    spec_d["layer_sizes"] = list(spec_d["layer_sizes"])
    hp_d = asdict(hp)
    hp_d.pop("seed")
    return {"spec": spec_d, "hyperparams": hp_d, "summary": summary, "per_seed": per_seed}


# --------------------------------------------------------------------------
# persistence


def save_ground_truth(truth: GroundTruth, path):
    arrays = {"A": truth.A, "X_rows": truth.X.rows, "X_cols": truth.X.cols, "X_vals": truth.X.vals}
    for q, b in enumerate(truth.B, start=1):
        arrays[f"B{q}"] = b
    for q, p in enumerate(truth.parents, start=1):
        arrays[f"S{q}"] = p
    spec = asdict(truth.spec)
    spec["layer_sizes"] = list(spec["layer_sizes"])
    write_container(path, {"kind": "ground-truth", "spec": spec, "shape": list(truth.X.shape)}, arrays)


def load_ground_truth(path) -> GroundTruth:
    meta, arr = read_container(path)
    if meta.get("kind") != "ground-truth":
        raise DataError(f"{path} holds a {meta.get('kind')!r}, not ground truth")
    spec = SynthSpec(**{**meta["spec"], "layer_sizes": tuple(meta["spec"]["layer_sizes"])})
    Q = len(spec.layer_sizes)
    n, m = meta["shape"]
    X = ObservedMatrix(n, m, arr["X_rows"], arr["X_cols"], arr["X_vals"])
    return GroundTruth(
        spec, arr["A"], [arr[f"B{q}"] for q in range(1, Q + 1)], [arr[f"S{q}"] for q in range(1, Q)], X
    )
