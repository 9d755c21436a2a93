"""Closed-form exact fits of a linear map ``W`` by ``A' relu(B' x)`` with masked (fixed-entry) layers.

Three stages, each a strict generalization of the last:

* ``fit_linear_plain``: no fixed entries; ``A = I (x) [1, -1]`` and ``B`` stacks ``+-W_i``.
* ``fit_linear_outer_masked``: ``A'`` has fixed entries; ``B`` holds three copies of each
  ``+-W_i`` row so a free copy can cancel whatever the fixed copies contribute.
* ``fit_linear_both_masked``: both layers masked, hidden width ``24 n``. Each 24-row block
  of ``B'`` is split into two halves of 12 rows whose fixed positions are pairwise disjoint,
  which lets shared correction vectors absorb every fixed entry of ``B'``.

Everything rests on ``relu(x) - relu(-x) = x``. Because of that identity a fitted pair of
layers inherits the hidden-unit redundancy of the plain two-layer fit, so exact fits are a
representability statement, not symmetry-free networks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import ModelCheckpoint
from .nn import ModelConfig

BLOCK = 24
HALF = 12


def relu(x):
    return np.maximum(x, 0.0)


def check_odd_identity(eta=relu, grid=None, atol: float = 0.0) -> bool:
    """``eta(x) - eta(-x) == x`` on a probe grid (the only property of ``eta`` the fits use)."""
    grid = np.linspace(-10, 10, 2001) if grid is None else np.asarray(grid, dtype=np.float64)
    return bool(np.all(np.abs(eta(grid) - eta(-grid) - grid) <= atol))


class InadmissibleMasks(ValueError):
    def __init__(self, message: str, report: "Admissibility"):
        super().__init__(message)
        self.report = report


# ---------------------------------------------------------------- admissibility

@dataclass
class Admissibility:
    ok: bool
    condition: str
    where: tuple | None = None  # first counterexample

    def to_dict(self) -> dict:
        return {"ok": self.ok, "condition": self.condition,
                "where": None if self.where is None else [int(v) for v in self.where]}


def check_outer_admissible(N: np.ndarray) -> Admissibility:
    """No row may contain three consecutive fixed (zero) entries; reports ``(row, start)``."""
    fixed = ~np.asarray(N, dtype=bool)
    if fixed.shape[1] >= 3:
        run = fixed[:, :-2] & fixed[:, 1:-1] & fixed[:, 2:]
        if run.any():
            r, c = np.argwhere(run)[0]
            return Admissibility(False, "three_consecutive_fixed", (r, c))
    return Admissibility(True, "three_consecutive_fixed")


def intersecting_pairs(rows: np.ndarray) -> list[tuple[int, int]]:
    fixed = ~np.asarray(rows, dtype=bool)
    shared = (fixed.astype(np.int64) @ fixed.T.astype(np.int64)) > 0
    i, j = np.nonzero(np.triu(shared, k=1))
    return list(zip(i.tolist(), j.tolist()))


def check_inner_admissible(M: np.ndarray) -> Admissibility:
    """Each 24-row block may hold at most one pair of rows sharing a fixed column.

    Reports ``(block, row_a, row_b)`` for the second offending pair (rows are block-local).
    """
    M = np.asarray(M, dtype=bool)
    if M.shape[0] % BLOCK:
        raise ValueError(f"inner mask needs a multiple of {BLOCK} rows")
    for b in range(M.shape[0] // BLOCK):
        pairs = intersecting_pairs(M[b * BLOCK:(b + 1) * BLOCK])
        if len(pairs) > 1:
            return Admissibility(False, "intersecting_pairs_per_block", (b, *pairs[1]))
    return Admissibility(True, "intersecting_pairs_per_block")


def check_admissible(mask: np.ndarray, kind: str) -> Admissibility:
    if kind == "outer":
        return check_outer_admissible(mask)
    if kind == "inner":
        return check_inner_admissible(mask)
    raise ValueError("kind must be 'outer' or 'inner'")


# ---------------------------------------------------------------- stage 1 and 2

def fit_linear_plain(W) -> tuple[np.ndarray, np.ndarray]:
    W = np.asarray(W, dtype=np.float64)
    m = W.shape[0]
    A = np.kron(np.eye(m), np.array([[1.0, -1.0]]))
    B = np.empty((2 * m, W.shape[1]))
    B[0::2], B[1::2] = W, -W
    return A, B


def _solve_outer(targets: np.ndarray, groups: list[np.ndarray], N: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Trainable ``A`` so that, in every row, each group's effective coefficients sum to its target.

    ``targets[r, g]`` is the wanted coefficient sum of group ``g`` (a set of hidden units
    computing the same function) in output row ``r``. Free entries other than the one
    absorbing the correction are zero; fixed slots of ``A`` are stored as zero.
    """
    N = np.asarray(N, dtype=bool)
    A = np.zeros(N.shape)
    for r in range(N.shape[0]):
        for g, units in enumerate(groups):
            free = units[N[r, units]]
            if free.size == 0:
                raise InadmissibleMasks(f"row {r}: every copy of hidden group {g} is fixed",
                                        Admissibility(False, "group_fully_fixed", (r, int(units[0]))))
            fixed_sum = float(np.sum(P[r, units][~N[r, units]]))
            A[r, free[0]] = targets[r, g] - fixed_sum
    return A


def effective(T: np.ndarray, mask: np.ndarray, fixed: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    return np.where(mask, T, fixed)


def fit_linear_outer_masked(W, N, P_fixed) -> tuple[np.ndarray, np.ndarray]:
    """Fit with fixed entries in the outer layer only; returns ``(A, B)`` with ``B`` of shape ``6m x n``."""
    W = np.asarray(W, dtype=np.float64)
    m = W.shape[0]
    N = np.asarray(N, dtype=bool)
    if N.shape != (m, 6 * m):
        raise ValueError(f"outer mask must be {m} x {6 * m}")
    adm = check_outer_admissible(N)
    if not adm.ok:
        raise InadmissibleMasks(f"outer mask not admissible at {adm.where}", adm)
    B = np.repeat(np.stack([W, -W], axis=1).reshape(2 * m, -1), 3, axis=0)
    groups = [np.arange(3 * g, 3 * g + 3) for g in range(2 * m)]
    targets = np.zeros((m, 2 * m))
    targets[np.arange(m), 2 * np.arange(m)] = 1.0
    targets[np.arange(m), 2 * np.arange(m) + 1] = -1.0
    return _solve_outer(targets, groups, N, np.asarray(P_fixed, dtype=np.float64)), B


# ---------------------------------------------------------------- stage 3

@dataclass
class ExactFit:
    A: np.ndarray  # outer trainable matrix (fixed slots zero)
    B: np.ndarray  # inner trainable matrix (fixed slots zero)
    N: np.ndarray
    M: np.ndarray
    P: np.ndarray  # outer fixed values (zero where N == 1)
    Q: np.ndarray  # inner fixed values (zero where M == 1)
    roles: np.ndarray  # roles[u] = block-local role of hidden unit u
    residual: float = float("nan")
    meta: dict = field(default_factory=dict)

    def outer(self) -> np.ndarray:
        return effective(self.A, self.N, self.P)

    def inner(self) -> np.ndarray:
        return effective(self.B, self.M, self.Q)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Apply to rows of ``x``."""
        return relu(x @ self.inner().T) @ self.outer().T

    def to_checkpoint(self) -> ModelCheckpoint:
        """A valid 2-layer W-Asymmetric model (no bias, no normalization)."""
        n_out, hidden = self.A.shape
        n_in = self.B.shape[1]
        n_fix = [int((~self.M.astype(bool)).sum(axis=1).max()), int((~self.N.astype(bool)).sum(axis=1).max())]
        cfg = ModelConfig([n_in, hidden, n_out], asym_mode="w_asym", layernorm=False, bias=False,
                          n_fix=n_fix, kappa=[float(self.meta.get("kappa", 1.0))] * 2)
        payload = [("linear0.mask", self.M.astype(np.uint8)), ("linear0.fixed", self.Q.copy()),
                   ("linear1.mask", self.N.astype(np.uint8)), ("linear1.fixed", self.P.copy())]
        params = {"linear0.weight": self.B.copy(), "linear1.weight": self.A.copy()}
        return ModelCheckpoint(cfg, params, payload, {"construction": "exact_fit", "residual": self.residual})

    def report(self) -> dict:
        return {"n_in": int(self.B.shape[1]), "n_out": int(self.A.shape[0]), "hidden": int(self.A.shape[1]),
                "residual": self.residual, **self.meta}


def _split_roles(block_rows: np.ndarray, N_block_cols: np.ndarray | None) -> np.ndarray:
    """Role of each row of one 24-row block.

    Roles 0..11 form the first half, 12..23 the second; rows within a half must not share
    fixed columns. With the at-most-one-intersecting-pair condition only the pair needs
    separating, done by swapping one of its rows into the other half. When the outer
    mask columns for this block are given, the swap partner is chosen so that no outer
    row ends up with a fully fixed role triple.
    """
    roles = np.arange(BLOCK)
    pairs = intersecting_pairs(block_rows)
    if len(pairs) > 1:
        raise ValueError("more than one intersecting pair in a block")
    if not pairs:
        return roles
    a, b = pairs[0]
    if (a < HALF) != (b < HALF):
        return roles
    candidates = range(HALF, BLOCK) if b < HALF else range(HALF)
    for c in candidates:
        trial = roles.copy()
        trial[b], trial[c] = roles[c], roles[b]
        if N_block_cols is None or _triples_ok(trial, N_block_cols):
            return trial
    raise InadmissibleMasks("no role assignment keeps every outer triple partly free",
                            Admissibility(False, "group_fully_fixed", (b,)))


def _triples_ok(roles: np.ndarray, N_cols: np.ndarray) -> bool:
    units_by_role = np.argsort(roles)
    for t in range(BLOCK // 3):
        units = units_by_role[3 * t:3 * t + 3]
        if np.any(~N_cols[:, units].any(axis=1)):
            return False
    return True


def _block_targets(W_row: np.ndarray, M_rows: np.ndarray, Q_rows: np.ndarray, roles: np.ndarray) -> np.ndarray:
    """Effective rows of ``B'`` for one block, indexed by unit, absorbing all fixed entries.

    Role groups: 0-2 ``W+c``, 3-5 ``-W-c``, 6-8 ``c``, 9-11 ``-c``, 12-23 ``d``. Within each
    half the fixed columns are disjoint, so ``c`` and ``d`` can be set to match every fixed
    value exactly (columns touched by no fixed entry are left at zero).
    """
    n = W_row.size
    fixed = ~M_rows.astype(bool)
    c = np.zeros(n)
    d = np.zeros(n)
    sign_w = {0: 1.0, 1: -1.0, 2: 0.0, 3: 0.0}
    sign_c = {0: 1.0, 1: -1.0, 2: 1.0, 3: -1.0}
    for u in range(BLOCK):
        cols = fixed[u]
        r = roles[u]
        if r < HALF:
            g = r // 3
            # sign_c * c + sign_w * W == Q on fixed columns
            c[cols] = (Q_rows[u, cols] - sign_w[g] * W_row[cols]) / sign_c[g]
        else:
            d[cols] = Q_rows[u, cols]
    out = np.empty((BLOCK, n))
    for u in range(BLOCK):
        r = roles[u]
        if r < HALF:
            g = r // 3
            out[u] = sign_w[g] * W_row + sign_c[g] * c
        else:
            out[u] = d
    return out


def fit_linear_both_masked(W, N, M, P_fixed, Q_fixed, check: bool = True) -> ExactFit:
    """Exact fit with fixed entries in both layers.

    ``W`` is ``m x n`` with ``m <= n``; ``M`` is ``24n x n`` (inner), ``N`` is ``m x 24n`` (outer).
    """
    W = np.asarray(W, dtype=np.float64)
    m, n = W.shape
    if m > n:
        raise ValueError("need at most as many outputs as inputs")
    M = np.asarray(M, dtype=bool)
    N = np.asarray(N, dtype=bool)
    if M.shape != (BLOCK * n, n) or N.shape != (m, BLOCK * n):
        raise ValueError(f"masks must be {BLOCK * n}x{n} (inner) and {m}x{BLOCK * n} (outer)")
    P = np.where(N, 0.0, np.asarray(P_fixed, dtype=np.float64))
    Q = np.where(M, 0.0, np.asarray(Q_fixed, dtype=np.float64))
    for adm in (check_inner_admissible(M), check_outer_admissible(N)):
        if not adm.ok:
            raise InadmissibleMasks(f"{adm.condition} violated at {adm.where}", adm)
    Wp = np.zeros((n, n))
    Wp[:m] = W
    roles = np.empty(BLOCK * n, dtype=np.int64)
    B_eff = np.empty((BLOCK * n, n))
    for i in range(n):
        sl = slice(BLOCK * i, BLOCK * (i + 1))
        roles[sl] = _split_roles(M[sl], N[:, sl])
        B_eff[sl] = _block_targets(Wp[i], M[sl], Q[sl], roles[sl])
    assert np.allclose(np.where(M, 0.0, B_eff), Q, rtol=0, atol=1e-12 * (1 + np.abs(Q).max(initial=0)))
    B = np.where(M, B_eff, 0.0)
    # outer: groups are role triples; row k wants +1,-1 on (W+c) and -(+1,-1) on c of block k
    groups, targets = [], np.zeros((m, 8 * n))
    for i in range(n):
        units_by_role = BLOCK * i + np.argsort(roles[BLOCK * i:BLOCK * (i + 1)])
        for t in range(8):
            groups.append(units_by_role[3 * t:3 * t + 3])
        if i < m:
            targets[i, 8 * i:8 * i + 4] = (1.0, -1.0, -1.0, 1.0)
    A = _solve_outer(targets, groups, N, P)
    fit = ExactFit(A, B, N, M, P, Q, roles)
    return fit


def residual(fit, W, probes: np.ndarray) -> float:
    W = np.asarray(W, dtype=np.float64)
    return float(np.max(np.abs(fit(probes) - probes @ W.T)))


def tolerance(W) -> float:
    return 1e-9 * (1.0 + float(np.max(np.abs(W)) if np.size(W) else 0.0))


# ---------------------------------------------------------------- mask sampling

def sample_inner_mask(n: int, n_fix: int, rng: np.random.Generator) -> np.ndarray:
    """Unconditioned inner mask: each of the ``24n`` rows fixes ``n_fix`` random columns."""
    if not 0 < n_fix < n:
        raise ValueError("need 0 < n_fix < n")
    M = np.ones((BLOCK * n, n), dtype=bool)
    for r in range(BLOCK * n):
        M[r, rng.choice(n, n_fix, replace=False)] = False
    return M


def sample_outer_mask(m: int, hidden: int, n_fix: int, rng: np.random.Generator) -> np.ndarray:
    if not 0 < n_fix < hidden:
        raise ValueError("need 0 < n_fix < hidden")
    N = np.ones((m, hidden), dtype=bool)
    for r in range(m):
        N[r, rng.choice(hidden, n_fix, replace=False)] = False
    return N


def sample_admissible_masks(m: int, n: int, n_fix: int, rng: np.random.Generator,
                            max_tries: int = 100) -> tuple[np.ndarray, np.ndarray, int]:
    """Rejection-sample ``(N, M)`` until both pass the admissibility checks.

    Returns the masks and the number of tries; raises :class:`InadmissibleMasks` when
    ``max_tries`` draws all fail.
    """
    last = None
    for t in range(1, max_tries + 1):
        M = sample_inner_mask(n, n_fix, rng)
        N = sample_outer_mask(m, BLOCK * n, n_fix, rng)
        a, b = check_inner_admissible(M), check_outer_admissible(N)
        if a.ok and b.ok:
            return N, M, t
        last = a if not a.ok else b
    raise InadmissibleMasks(f"no admissible masks in {max_tries} draws (n={n}, n_fix={n_fix})", last)


def sample_block_disjoint_inner_mask(n: int, n_fix: int, rng: np.random.Generator) -> np.ndarray:
    """Inner mask drawn conditionally on admissibility: fixed columns within a block never repeat.

    Needs ``n >= 24 * n_fix``.
    """
    if n < BLOCK * n_fix:
        raise ValueError(f"block-disjoint sampling needs n >= {BLOCK * n_fix}")
    M = np.ones((BLOCK * n, n), dtype=bool)
    for b in range(n):
        cols = rng.choice(n, BLOCK * n_fix, replace=False).reshape(BLOCK, n_fix)
        for j in range(BLOCK):
            M[BLOCK * b + j, cols[j]] = False
    return M


def random_fixed(shape, mask: np.ndarray, kappa: float, rng: np.random.Generator) -> np.ndarray:
    return np.where(np.asarray(mask, dtype=bool), 0.0, kappa * rng.normal(size=shape))


def uafit(W, n_fix: int, kappa: float = 1.0, seed: int = 0, max_tries: int = 100,
          num_probes: int = 500, probe_radius: float = 3.0) -> ExactFit:
    """Sample admissible masks and fixed values, fit ``W`` and measure the residual on probes."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError("W must be a matrix")
    m, n = W.shape
    if not 0 < n_fix < n:
        raise ValueError(f"n_fix must satisfy 0 < n_fix < n (got n_fix={n_fix}, n={n})")
    rng = np.random.default_rng(seed)
    N, M, tries = sample_admissible_masks(m, n, n_fix, rng, max_tries)
    P = random_fixed(N.shape, N, kappa, rng)
    Q = random_fixed(M.shape, M, kappa, rng)
    fit = fit_linear_both_masked(W, N, M, P, Q)
    x = rng.uniform(-probe_radius, probe_radius, size=(num_probes, n))
    fit.residual = residual(fit, W, x)
    fit.meta.update(n_fix=n_fix, kappa=kappa, seed=seed, mask_tries=tries,
                    tolerance=tolerance(W), num_probes=num_probes)
    return fit


def fit_report_json(fit: ExactFit) -> str:
    return json.dumps(fit.report(), indent=2, sort_keys=True)
