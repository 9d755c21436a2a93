"""Symmetry checks: computation-graph automorphism search and FiGLU equivariance falsifiers."""

from __future__ import annotations

import itertools
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .checkpoint import ModelCheckpoint

RESIDUAL_TOL = 1e-8


class SearchBudgetExceeded(RuntimeError):
    """The automorphism search would exceed its exploration budget."""


@dataclass
class CompDag:
    """Layered DAG of trainable edges; ``blocks[l]`` is the ``d_{l+1} x d_l`` adjacency block."""

    widths: list[int]
    blocks: list[np.ndarray]

    def __post_init__(self):
        if len(self.blocks) != len(self.widths) - 1:
            raise ValueError("need one block per pair of consecutive layers")
        for l, blk in enumerate(self.blocks):
            if blk.shape != (self.widths[l + 1], self.widths[l]):
                raise ValueError(f"block {l} has shape {blk.shape}")
            if not np.all(blk.any(axis=1)):
                raise ValueError(f"block {l} has a node without incoming edges")

    @property
    def n_nodes(self) -> int:
        return sum(self.widths)

    @property
    def n_edges(self) -> int:
        return int(sum(b.sum() for b in self.blocks))

    def kinds(self) -> list[str]:
        out = []
        for l, w in enumerate(self.widths):
            kind = "input" if l == 0 else "output" if l == len(self.widths) - 1 else "hidden"
            out += [kind] * w
        return out

    def layer_of(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.widths)), self.widths)

    def adjacency(self) -> np.ndarray:
        """Full ``n_nodes x n_nodes`` matrix, ``A[u, v] = 1`` for an edge ``v -> u``."""
        offsets = np.concatenate([[0], np.cumsum(self.widths)])
        A = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for l, blk in enumerate(self.blocks):
            A[offsets[l + 1]:offsets[l + 2], offsets[l]:offsets[l + 1]] = blk
        return A


def build_dag(ckpt: ModelCheckpoint) -> CompDag:
    """Edges are the trainable weights; fixed entries count as absent (their values are ignored)."""
    cfg = ckpt.config
    if cfg.asym_mode == "sigma_asym":
        raise ValueError("FiGLU networks are outside the DAG formalism; use the FiGLU falsifiers")
    masks = {name: arr for name, arr in ckpt.payload if name.endswith(".mask")}
    blocks = []
    for i in range(cfg.n_layers):
        m = masks.get(f"linear{i}.mask")
        blocks.append(np.ones((cfg.widths[i + 1], cfg.widths[i]), dtype=bool) if m is None else m.astype(bool))
    return CompDag(list(cfg.widths), blocks)


# ---------------------------------------------------------------- layer-wise search

def _row_classes(block: np.ndarray, prev: np.ndarray) -> list[list[int]] | None:
    """Groups of rows that may map onto each other given the previous layer's permutation.

    A bijection ``p`` is valid iff ``block[p[i], prev] == block[i]`` for all i, which
    only happens within groups of rows that are equal after column relabeling.
    Returns None when no bijection exists.
    """
    permuted = block[:, prev]
    by_key = defaultdict(lambda: ([], []))
    for i in range(block.shape[0]):
        by_key[block[i].tobytes()][0].append(i)
        by_key[permuted[i].tobytes()][1].append(i)
    groups = []
    for targets, sources in by_key.values():
        if len(targets) != len(sources):
            return None
        groups.append((targets, sources))
    return groups


def _bijections(groups) -> "itertools.product":
    parts = [[(tuple(t), p) for p in itertools.permutations(s)] for t, s in groups]
    for combo in itertools.product(*parts):
        perm = {}
        for targets, sources in combo:
            perm.update(zip(targets, sources))
        yield np.array([perm[i] for i in range(len(perm))], dtype=np.int64)


def find_automorphisms(dag: CompDag, limit: int = 100_000) -> list[tuple[np.ndarray, ...]]:
    """All layer-preserving relabelings fixing inputs and outputs; one permutation per hidden layer.

    Raises :class:`SearchBudgetExceeded` when more than ``limit`` candidate tuples would be visited.
    """
    L = len(dag.widths) - 1
    found: list[tuple[np.ndarray, ...]] = []
    visited = 0

    def extend(l: int, prev: np.ndarray, acc: list[np.ndarray]):
        nonlocal visited
        groups = _row_classes(dag.blocks[l - 1], prev)
        if groups is None:
            return
        n_cand = math.prod(math.factorial(len(s)) for _, s in groups)
        if visited + n_cand > limit:
            raise SearchBudgetExceeded(f"more than {limit} candidates at layer {l}")
        visited += n_cand
        for perm in _bijections(groups):
            if l == L - 1:
                last = dag.blocks[L - 1]
                if np.array_equal(last[:, perm], last):
                    found.append(tuple(acc + [perm]))
            else:
                extend(l + 1, perm, acc + [perm])

    if L == 1:
        return [()]
    extend(1, np.arange(dag.widths[0]), [])
    return found


def count_automorphisms(dag: CompDag, limit: int = 1_000_000) -> int:
    """Size of the automorphism group without listing it.

    The number of completions below layer ``l`` depends on the previous permutation only
    through the column-permuted block it induces, so completions are memoized on that block.
    ``limit`` bounds the bijections visited, as in :func:`find_automorphisms`.
    """
    L = len(dag.widths) - 1
    if L == 1:
        return 1
    memo: dict[tuple[int, bytes], int] = {}
    visited = 0

    def completions(l: int, prev: np.ndarray) -> int:
        nonlocal visited
        if l == L:
            last = dag.blocks[L - 1]
            return int(np.array_equal(last[:, prev], last))
        key = (l, dag.blocks[l - 1][:, prev].tobytes())
        if key in memo:
            return memo[key]
        groups = _row_classes(dag.blocks[l - 1], prev)
        total = 0
        if groups is not None:
            n_cand = math.prod(math.factorial(len(s)) for _, s in groups)
            if visited + n_cand > limit:
                raise SearchBudgetExceeded(f"more than {limit} candidates at layer {l}")
            visited += n_cand
            total = sum(completions(l + 1, perm) for perm in _bijections(groups))
        memo[key] = total
        return total

    return completions(1, np.arange(dag.widths[0]))


def node_level_automorphisms(dag: CompDag, max_nodes: int = 9) -> list[np.ndarray]:
    """Unrestricted search over relabelings of all non-input/output nodes (tiny graphs only)."""
    if dag.n_nodes > max_nodes:
        raise SearchBudgetExceeded(f"{dag.n_nodes} nodes exceeds {max_nodes}")
    A = dag.adjacency()
    kinds = dag.kinds()
    hidden = [i for i, k in enumerate(kinds) if k == "hidden"]
    out = []
    for images in itertools.permutations(hidden):
        sigma = np.arange(dag.n_nodes)
        sigma[hidden] = images
        if np.array_equal(A[np.ix_(sigma, sigma)], A):
            out.append(sigma)
    return out


def mixes_layers(dag: CompDag, sigma: np.ndarray) -> bool:
    layer = dag.layer_of()
    return bool(np.any(layer[sigma] != layer))


# ---------------------------------------------------------------- FiGLU falsifiers

def _figlu(F: np.ndarray, x: np.ndarray) -> np.ndarray:
    return ag._sigmoid(x @ F.T) * x


def _probes(d: int, num_probes: int, seed: int, radius: float = 2.0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-radius, radius, size=(num_probes, d))


@dataclass
class FalsifierReport:
    kind: str
    d: int
    n_candidates: int
    identity_residual: float
    min_nontrivial_residual: float
    argmin: list
    n_zero_nontrivial: int
    tol: float = RESIDUAL_TOL
    residuals: list = field(default_factory=list)

    @property
    def symmetry_free(self) -> bool:
        return self.identity_residual <= self.tol and self.n_zero_nontrivial == 0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "d": self.d, "n_candidates": self.n_candidates,
                "identity_residual": self.identity_residual,
                "min_nontrivial_residual": self.min_nontrivial_residual, "argmin": self.argmin,
                "n_zero_nontrivial": self.n_zero_nontrivial, "tol": self.tol,
                "symmetry_free": self.symmetry_free, "residuals": self.residuals}


def perm_pair_residual(F: np.ndarray, p1, p2, x: np.ndarray) -> float:
    """``max_x ||sigma(P1 x) - P2 sigma(x)||_inf`` with ``(P x)_i = x_{p[i]}``."""
    return float(np.max(np.abs(_figlu(F, x[:, p1]) - _figlu(F, x)[:, p2])))


def figlu_perm_falsifier(F, num_probes: int = 100, seed: int = 0, max_pairs: int | None = None,
                         tol: float = RESIDUAL_TOL, keep_table: bool = False) -> FalsifierReport:
    """Search permutation pairs ``(P1, P2)`` for ``sigma(P1 x) = P2 sigma(x)``.

    Exhaustive over ``S_d x S_d`` when ``d <= 6``; otherwise ``max_pairs`` random pairs.
    """
    F = np.asarray(F, dtype=np.float64)
    d = F.shape[0]
    x = _probes(d, num_probes, seed)
    ident = np.arange(d)
    if d <= 6 and max_pairs is None:
        perms = [np.array(p) for p in itertools.permutations(range(d))]
        pairs = itertools.product(perms, perms)
        n = len(perms) ** 2
    else:
        rng = np.random.default_rng([seed, 1])
        n = max_pairs or 10_000
        pairs = ((rng.permutation(d), rng.permutation(d)) for _ in range(n))
    y = _figlu(F, x)
    best, arg, zeros, table = math.inf, None, 0, []
    for p1, p2 in pairs:
        if np.array_equal(p1, ident) and np.array_equal(p2, ident):
            continue
        r = float(np.max(np.abs(_figlu(F, x[:, p1]) - y[:, p2])))
        if keep_table:
            table.append({"p1": p1.tolist(), "p2": p2.tolist(), "residual": r})
        if r <= tol:
            zeros += 1
        if r < best:
            best, arg = r, [p1.tolist(), p2.tolist()]
    return FalsifierReport("permutation", d, n, perm_pair_residual(F, ident, ident, x), best, arg,
                           zeros, tol, table)


DEFAULT_GRID = (-2.0, -1.0, -0.5, 0.5, 1.0, 2.0)


def figlu_diag_falsifier(F, grid=DEFAULT_GRID, num_probes: int = 100, seed: int = 0,
                         tol: float = RESIDUAL_TOL) -> FalsifierReport:
    """Search diagonal pairs ``(A, B)`` with entries from ``grid`` for ``sigma(A x) = B sigma(x)``.

    The residual of a pair is a max over coordinates, and coordinate ``i`` only sees
    ``b_i``, so the sweep over ``B`` factorizes per coordinate.
    """
    F = np.asarray(F, dtype=np.float64)
    if np.any(F == 0):
        raise ValueError("F must have no zero entries")
    grid = np.asarray(sorted(set(float(g) for g in grid)))
    if 1.0 not in grid:
        raise ValueError("grid must contain 1 so that the identity is a candidate")
    one = int(np.flatnonzero(grid == 1.0)[0])
    d = F.shape[0]
    x = _probes(d, num_probes, seed)
    y = _figlu(F, x)  # probes x d
    best, arg, zeros = math.inf, None, 0
    ident_res = math.nan
    for a_idx in itertools.product(range(len(grid)), repeat=d):
        a = grid[list(a_idx)]
        lhs = _figlu(F, x * a)
        # r[i, k] = max_x |lhs_i - grid_k * y_i|
        r = np.max(np.abs(lhs[:, :, None] - grid[None, None, :] * y[:, :, None]), axis=0)
        ok = r <= tol
        is_one = all(k == one for k in a_idx)
        if is_one:
            ident_res = float(np.max(r[:, one]))
            zeros += int(np.prod(ok.sum(axis=1))) - int(ok[:, one].all())
            rr = r.copy()
            # nontrivial pairs with A = I must move some b_i off 1
            rr[:, one] = np.inf
            i, k = np.unravel_index(np.argmin(rr), rr.shape)
            cand = float(rr[i, k])
            b = np.ones(d)
            b[i] = grid[k]
        else:
            zeros += int(np.prod(ok.sum(axis=1)))
            ks = np.argmin(r, axis=1)
            cand = float(np.max(r[np.arange(d), ks]))
            b = grid[ks]
        if cand < best:
            best, arg = cand, [a.tolist(), b.tolist()]
    n = len(grid) ** (2 * d) - 1
    return FalsifierReport("diagonal", d, n, ident_res, best, arg, zeros, tol)


def diag_pair_residual(F, a, b, num_probes: int = 100, seed: int = 0) -> float:
    F = np.asarray(F, dtype=np.float64)
    x = _probes(F.shape[0], num_probes, seed)
    return float(np.max(np.abs(_figlu(F, x * np.asarray(a)) - np.asarray(b) * _figlu(F, x))))


# ---------------------------------------------------------------- scale probe (exploratory)

def scale_probe(ckpt: ModelCheckpoint, layer: int, scales, num_probes: int = 100, seed: int = 0) -> float:
    """Output change when hidden layer ``layer``'s units are rescaled by positive ``scales``.

    Trainable incoming weights and bias are multiplied by ``s`` and trainable outgoing
    weights divided by ``s``; fixed entries cannot move. A standard ReLU net without
    normalization returns ~0. This is a measurement, not a symmetry claim.
    """
    cfg = ckpt.config
    if not 1 <= layer < cfg.n_layers:
        raise ValueError("layer must index a hidden layer")
    s = np.asarray(scales, dtype=np.float64)
    if s.shape != (cfg.widths[layer],) or np.any(s <= 0):
        raise ValueError("need one positive scale per hidden unit")
    masks = ckpt.trainable_masks()
    params = {k: v.copy() for k, v in ckpt.params.items()}
    w_in, w_out = f"linear{layer - 1}.weight", f"linear{layer}.weight"
    m_in, m_out = masks[w_in], masks[w_out]
    scaled_in = params[w_in] * s[:, None]
    params[w_in] = scaled_in if m_in is None else np.where(m_in, scaled_in, params[w_in])
    scaled_out = params[w_out] / s[None, :]
    params[w_out] = scaled_out if m_out is None else np.where(m_out, scaled_out, params[w_out])
    if f"linear{layer - 1}.bias" in params:
        params[f"linear{layer - 1}.bias"] = params[f"linear{layer - 1}.bias"] * s
    x = np.random.default_rng(seed).normal(size=(num_probes, cfg.widths[0]))
    before = ckpt.to_model().predict(x)
    after = ckpt.with_params(params).to_model().predict(x)
    return float(np.max(np.abs(after - before)))


# ---------------------------------------------------------------- reports

def symmetry_report(ckpt: ModelCheckpoint, limit: int = 100_000, num_probes: int = 100,
                    seed: int = 0) -> dict:
    cfg = ckpt.config
    rep: dict = {"asym_mode": cfg.asym_mode, "widths": list(cfg.widths)}
    if cfg.asym_mode == "sigma_asym":
        figs = []
        for name, F in ckpt.payload:
            entry = {"layer": name, "d": F.shape[0]}
            if F.shape[0] <= 6:
                entry["permutation"] = figlu_perm_falsifier(F, num_probes, seed).to_dict()
            else:
                entry["permutation"] = figlu_perm_falsifier(F, num_probes, seed, max_pairs=1000).to_dict()
            if F.shape[0] <= 4:
                entry["diagonal"] = figlu_diag_falsifier(F, num_probes=num_probes, seed=seed).to_dict()
            figs.append(entry)
        rep["figlu"] = figs
        rep["status"] = "ok" if all(f["permutation"]["symmetry_free"] for f in figs) else "symmetric"
        return rep
    dag = build_dag(ckpt)
    rep["n_edges"] = dag.n_edges
    try:
        autos = find_automorphisms(dag, limit)
    except SearchBudgetExceeded as e:
        rep.update(status="inconclusive", reason=str(e))
        return rep
    rep["status"] = "ok"
    rep["automorphism_count"] = len(autos)
    rep["expected_standard_count"] = math.prod(math.factorial(w) for w in cfg.widths[1:-1])
    rep["automorphisms"] = [[p.tolist() for p in a] for a in autos[:64]]
    return rep


def report_json(rep: dict) -> str:
    return json.dumps(rep, indent=2, sort_keys=True)
