"""Linear assignment and layerwise weight matching (the Git Re-Basin baseline).

Permutation convention: ``perm[i] = j`` means unit ``i`` of the aligned network
is unit ``j`` of the original, i.e. rows are gathered with ``W[perm]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import ModelCheckpoint


@dataclass
class Assignment:
    perm: np.ndarray
    total_cost: float


@dataclass
class AlignmentResult:
    perms: list[np.ndarray]
    objective: list[float] = field(default_factory=list)
    converged: bool = False
    sweeps: int = 0

    def to_json(self) -> str:
        return json.dumps({"perms": [p.tolist() for p in self.perms], "objective": self.objective,
                           "converged": self.converged, "sweeps": self.sweeps}, indent=2)


def lap_solve(cost, sense: str = "min") -> Assignment:
    """Optimal assignment of rows to columns (shortest augmenting path Hungarian, O(n^3)).

    Ties go to the lowest column index, so the result is deterministic.
    """
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError("cost matrix must be square")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix must be finite")
    if sense not in ("min", "max"):
        raise ValueError("sense must be 'min' or 'max'")
    n = C.shape[0]
    if n == 0:
        return Assignment(np.zeros(0, dtype=np.int64), 0.0)
    work = -C if sense == "max" else C
    # 1-based arrays; column 0 is the virtual source
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=np.int64)  # owner[j] = row matched to column j (0 = free)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            reduced = work[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    perm = np.empty(n, dtype=np.int64)
    perm[owner[1:] - 1] = np.arange(n)
    return Assignment(perm, float(C[np.arange(n), perm].sum()))


# ---------------------------------------------------------------- permutations of MLPs

def _hidden_widths(ckpt: ModelCheckpoint) -> list[int]:
    return ckpt.config.widths[1:-1]


def apply_permutation(ckpt: ModelCheckpoint, perms: list[np.ndarray]) -> ModelCheckpoint:
    """Relabel hidden units: ``W_l <- P_l W_l P_{l-1}^T`` (inputs/outputs fixed).

    Masks, fixed matrices and FiGLU matrices are permuted alongside, so the network
    function is unchanged for every asymmetry mode.
    """
    widths = _hidden_widths(ckpt)
    if len(perms) != len(widths):
        raise ValueError(f"need {len(widths)} permutations, got {len(perms)}")
    perms = [np.asarray(p, dtype=np.int64) for p in perms]
    for p, w in zip(perms, widths):
        if p.shape != (w,) or not np.array_equal(np.sort(p), np.arange(w)):
            raise ValueError("each permutation must be a bijection of its hidden layer")
    n_lin = ckpt.config.n_layers
    full = [None] + perms + [None]  # full[l] acts on layer l's units

    def rows_cols(arr, l):
        out = arr
        if full[l + 1] is not None:
            out = out[full[l + 1]]
        if full[l] is not None:
            out = out[:, full[l]]
        return out

    params = {}
    for name, arr in ckpt.params.items():
        kind, what = name.split(".")
        idx = int(kind.removeprefix("linear").removeprefix("norm"))
        if kind.startswith("linear") and what == "weight":
            params[name] = rows_cols(arr, idx).copy()
        elif kind.startswith("linear"):
            params[name] = arr[full[idx + 1]].copy() if full[idx + 1] is not None else arr.copy()
        else:
            params[name] = arr[full[idx + 1]].copy()
    payload = []
    for name, arr in ckpt.payload:
        kind, _ = name.split(".")
        if kind.startswith("linear"):
            payload.append((name, rows_cols(arr, int(kind.removeprefix("linear"))).copy()))
        else:
            p = full[int(kind.removeprefix("figlu")) + 1]
            payload.append((name, arr[p][:, p].copy()))
    assert n_lin == len(full) - 1
    return ModelCheckpoint(ckpt.config, params, payload, dict(ckpt.provenance))


def compose(first: list[np.ndarray], second: list[np.ndarray]) -> list[np.ndarray]:
    """Permutations equivalent to applying ``first`` then ``second``."""
    return [p1[p2] for p1, p2 in zip(first, second)]


def invert(perms: list[np.ndarray]) -> list[np.ndarray]:
    return [np.argsort(p) for p in perms]


def _layer_arrays(ckpt: ModelCheckpoint):
    n = ckpt.config.n_layers
    Ws = [ckpt.params[f"linear{i}.weight"] for i in range(n)]
    unit_vecs = []  # per hidden layer: vectors indexed by that layer's units
    for l in range(1, n):
        vecs = []
        for key in (f"linear{l - 1}.bias", f"norm{l - 1}.gain", f"norm{l - 1}.bias"):
            if key in ckpt.params:
                vecs.append(ckpt.params[key])
        unit_vecs.append(vecs)
    return Ws, unit_vecs


def matching_objective(a: ModelCheckpoint, b: ModelCheckpoint, perms: list[np.ndarray]) -> float:
    """Sum of inner products between ``a`` and the permuted ``b`` over all parameters."""
    pb = apply_permutation(b, perms)
    return float(sum(np.vdot(a.params[k], pb.params[k]) for k in a.params))


def weight_match(a: ModelCheckpoint, b: ModelCheckpoint, max_sweeps: int = 50,
                 init: list[np.ndarray] | None = None) -> AlignmentResult:
    """Coordinate ascent over hidden-layer permutations of ``b`` to match ``a``."""
    for c in (a, b):
        if c.config.asym_mode != "standard":
            raise ValueError("weight matching applies to standard networks only; "
                             "W-/sigma-Asymmetric networks have no permutation symmetry to align")
    if a.config.widths != b.config.widths or set(a.params) != set(b.params):
        raise ValueError("architectures differ")
    widths = _hidden_widths(a)
    perms = [np.arange(w) for w in widths] if init is None else [np.asarray(p) for p in init]
    WA, vecA = _layer_arrays(a)
    WB, vecB = _layer_arrays(b)
    L = len(widths)
    result = AlignmentResult(perms)
    for sweep in range(max_sweeps):
        changed = False
        for l in range(1, L + 1):  # hidden layer l sits between linear l-1 and linear l
            prev = perms[l - 2] if l >= 2 else None
            nxt = perms[l] if l < L else None
            w_in_b = WB[l - 1] if prev is None else WB[l - 1][:, prev]
            S = WA[l - 1] @ w_in_b.T
            for va, vb in zip(vecA[l - 1], vecB[l - 1]):
                S += np.outer(va, vb)
            w_out_b = WB[l] if nxt is None else WB[l][nxt]
            S += WA[l].T @ w_out_b
            new = lap_solve(S, "max").perm
            if not np.array_equal(new, perms[l - 1]):
                changed = True
                perms[l - 1] = new
        result.objective.append(matching_objective(a, b, perms))
        result.sweeps = sweep + 1
        if not changed:
            result.converged = True
            break
    result.perms = perms
    return result


def align(a: ModelCheckpoint, b: ModelCheckpoint, max_sweeps: int = 50) -> tuple[ModelCheckpoint, AlignmentResult]:
    res = weight_match(a, b, max_sweeps)
    return apply_permutation(b, res.perms), res
