"""Model state, hyperparameters and the versioned checkpoint container."""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ContractError, DataError

FORMAT_TAG = "etree-v1"


@dataclass(frozen=True)
class Hyperparams:
    rank: int
    lam: float = 0.0
    mu: float = 0.0
    eta: float = 1000.0
    admm_iters: int = 5
    tree_iters: int = 5
    eps: float = 1e-4
    max_epochs: int = 1000
    tol: float = 1e-6
    patience: int = 10
    init_epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ContractError(f"rank must be >= 1, got {self.rank}")
        for name in ("lam", "mu", "eta", "eps", "tol"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("admm_iters", "tree_iters", "max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.init_epochs < 0:
            raise ContractError("init_epochs must be >= 0")

    def replace(self, **kw) -> "Hyperparams":
        return Hyperparams(**{**asdict(self), **kw})


@dataclass(frozen=True)
class TreeSpec:
    layer_sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(m) for m in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ContractError(f"a tree needs at least two layers, got {sizes}")
        if sizes[-1] < 1 or any(b >= a for a, b in zip(sizes, sizes[1:])):
            raise ContractError(f"layer sizes must be strictly decreasing and positive, got {sizes}")

    @property
    def Q(self) -> int:
        return len(self.layer_sizes)

    @classmethod
    def parse(cls, text) -> "TreeSpec":
        return cls(tuple(int(t) for t in str(text).split(",") if t.strip()))


def one_hot(parent, n_parents) -> np.ndarray:
    S = np.zeros((len(parent), n_parents))
    S[np.arange(len(parent)), parent] = 1.0
    return S


@dataclass
class FactorModel:
    """Solver state.

    ``parents[q]`` holds the assignment of layer ``q+1`` nodes to layer ``q+2``
    parents (0-based lists, so ``parents[0]`` encodes S_1). ``S`` materializes
    the one-hot matrices on demand.
    """

    A: np.ndarray
    d: np.ndarray
    B: list
    parents: list
    Z: list
    dual_A: np.ndarray
    dual_B1: np.ndarray
    hyper: Hyperparams | None = None
    trace: list = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def layer_sizes(self) -> tuple:
        return tuple(b.shape[0] for b in self.B)

    @property
    def Q(self) -> int:
        return len(self.B)

    @property
    def S(self) -> list:
        return [one_hot(p, self.B[q + 1].shape[0]) for q, p in enumerate(self.parents)]

    def item_embeddings(self) -> np.ndarray:
        """Rows of ``diag(d) @ B1``: the effective item factors."""
        return self.B[0] * self.d[:, None]

    def predict(self, i, j, clip=None):
        """Predicted value(s) at row ``i``, column ``j`` (scalars or arrays)."""
        i = np.asarray(i)
        j = np.asarray(j)
        n, m = self.A.shape[0], self.B[0].shape[0]
        if np.any((i < 0) | (i >= n)) or np.any((j < 0) | (j >= m)):
            raise ContractError(f"index out of range for a {n}x{m} model")
        out = np.einsum("...k,...k->...", self.A[i], self.B[0][j]) * self.d[j]
        if clip is not None:
            out = np.clip(out, clip[0], clip[1])
        return out if out.ndim else float(out)

    def copy(self) -> "FactorModel":
        return FactorModel(
            self.A.copy(),
            self.d.copy(),
            [b.copy() for b in self.B],
            [p.copy() for p in self.parents],
            [z.copy() for z in self.Z],
            self.dual_A.copy(),
            self.dual_B1.copy(),
            self.hyper,
            list(self.trace),
        )

    def check_invariants(self, atol=1e-9):
        """Raise ``AssertionError`` naming the first violated model invariant."""
        arrays = [self.A, self.d, self.dual_A, self.dual_B1, *self.B, *self.Z]
        assert all(np.all(np.isfinite(a)) for a in arrays), "non-finite entry"
        assert self.d.ndim == 1 and self.d.shape[0] == self.B[0].shape[0], "D must be a diagonal vector"
        assert np.all(self.A >= 0), "A has negative entries"
        assert np.all(self.B[0] >= 0), "B1 has negative entries"
        assert len(self.parents) == len(self.B) - 1
        for q, S in enumerate(self.S):
            assert S.shape == (self.B[q].shape[0], self.B[q + 1].shape[0])
            assert np.all((S == 0) | (S == 1)) and np.all(S.sum(1) == 1), f"S_{q + 1} not one-hot"
        assert len(self.Z) == len(self.B) - 1
        for q, Zq in enumerate(self.Z):
            norms = np.linalg.norm(Zq, axis=1)
            assert np.all(np.abs(norms - 1) <= atol), f"Z_{q + 1} rows not unit norm"


@dataclass
class NmfModel:
    A: np.ndarray
    B: np.ndarray
    lam: float
    dual_A: np.ndarray | None = None
    dual_B: np.ndarray | None = None
    trace: list = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    def predict(self, i, j, clip=None):
        out = np.einsum("...k,...k->...", self.A[np.asarray(i)], self.B[np.asarray(j)])
        if clip is not None:
            out = np.clip(out, clip[0], clip[1])
        return out if out.ndim else float(out)

    def as_factor_model(self) -> FactorModel:
        """Single-layer view with unit scales so shared code paths can predict."""
        m = self.B.shape[0]
        zeros = np.zeros_like
        return FactorModel(
            self.A, np.ones(m), [self.B], [], [],
            self.dual_A if self.dual_A is not None else zeros(self.A),
            self.dual_B if self.dual_B is not None else zeros(self.B),
            trace=list(self.trace),
        )


# --------------------------------------------------------------------------
# checkpoint container
#
# A zip archive with fixed timestamps holding ``meta.json`` plus one ``.npy``
# member per array. ``meta.json`` carries the format tag, the kind of object
# stored, the dimensions and the hyperparameters.


def write_container(path, meta: dict, arrays: dict):
    meta = {"format": FORMAT_TAG, **meta}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        _add(zf, "meta.json", json.dumps(meta, indent=2, sort_keys=True).encode("utf-8"))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            _add(zf, f"{name}.npy", buf.getvalue())


def _add(zf, name, data):
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def read_container(path):
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json").decode("utf-8"))
            arrays = {}
            for name in zf.namelist():
                if name.endswith(".npy"):
                    arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
    except (OSError, KeyError, zipfile.BadZipFile, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    if meta.get("format") != FORMAT_TAG:
        raise DataError(f"{path} is not an {FORMAT_TAG} container (format={meta.get('format')!r})")
    return meta, arrays


def save_model(model: FactorModel, path, extra_meta=None):
    arrays = {"A": model.A, "d": model.d, "dual_A": model.dual_A, "dual_B1": model.dual_B1}
    for q, b in enumerate(model.B, start=1):
        arrays[f"B{q}"] = b
    for q, z in enumerate(model.Z, start=1):
        arrays[f"Z{q}"] = z
    for q, p in enumerate(model.parents, start=1):
        arrays[f"S{q}"] = np.asarray(p, dtype=np.int64)
    if model.trace:
        arrays["trace"] = np.asarray(model.trace, dtype=float)
    meta = {
        "kind": "factor-model",
        "n_rows": int(model.A.shape[0]),
        "layer_sizes": list(model.layer_sizes),
        "rank": int(model.rank),
        "hyperparams": asdict(model.hyper) if model.hyper is not None else None,
        **(extra_meta or {}),
    }
    write_container(path, meta, arrays)


def load_model(path) -> FactorModel:
    meta, arr = read_container(path)
    if meta.get("kind") != "factor-model":
        raise DataError(f"{path} holds a {meta.get('kind')!r}, not a factor model")
    Q = len(meta["layer_sizes"])
    hp = meta.get("hyperparams")
    known = {f.name for f in fields(Hyperparams)}
    model = FactorModel(
        A=arr["A"],
        d=arr["d"],
        B=[arr[f"B{q}"] for q in range(1, Q + 1)],
        parents=[arr[f"S{q}"] for q in range(1, Q)],
        Z=[arr[f"Z{q}"] for q in range(1, Q) if f"Z{q}" in arr],
        dual_A=arr["dual_A"],
        dual_B1=arr["dual_B1"],
        hyper=Hyperparams(**{k: v for k, v in hp.items() if k in known}) if hp else None,
        trace=[tuple(r) for r in arr["trace"]] if "trace" in arr else [],
    )
    return model


def model_meta(path) -> dict:
    return read_container(path)[0]


def models_equal(a: FactorModel, b: FactorModel) -> bool:
    """Bitwise equality of every stored block."""
    pairs = [(a.A, b.A), (a.d, b.d), (a.dual_A, b.dual_A), (a.dual_B1, b.dual_B1)]
    if a.Q != b.Q or len(a.Z) != len(b.Z):
        return False
    pairs += list(zip(a.B, b.B)) + list(zip(a.Z, b.Z)) + list(zip(a.parents, b.parents))
    return all(np.array_equal(x, y) for x, y in pairs) and a.hyper == b.hyper
