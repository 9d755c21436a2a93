"""Acceptance criteria 1-9, one PASS/FAIL line each (shown in the terminal summary).

Criteria 1, 5 and 9 read the MNIST results written by ``scripts/run_lmc.py`` and
``scripts/run_mli.py``; the rest are computed here.
"""

import itertools
import json
import math
import time

import numpy as np

import asymnets.autograd as ag
from asymnets.checkpoint import ModelCheckpoint
from asymnets.nn import ModelConfig, build_model, sample_figlu_matrix
from asymnets.rebasin import align, apply_permutation, lap_solve
from asymnets.symmetry import (build_dag, count_automorphisms, figlu_diag_falsifier,
                               figlu_perm_falsifier, find_automorphisms)
from asymnets.universal import InadmissibleMasks, uafit

from .conftest import ACCEPTANCE, ROOT, perturbed

RESULTS = ROOT / "results"


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def load_results(name: str) -> dict | None:
    p = RESULTS / name
    return json.loads(p.read_text()) if p.exists() else None


# ---------------------------------------------------------------- 1: barrier ordering

def test_criterion_1_barrier_ordering():
    res = load_results("lmc.json")
    if res is None:
        report(1, False, "results/lmc.json missing; run scripts/run_lmc.py")
    s = res["summary"]
    pairs = {arm: s.get(arm, {}).get("pairs", 0) for arm in ("standard", "w_asym", "sigma_asym")}
    if min(pairs.values()) < 3:
        report(1, False, f"need >= 3 pairs per arm, have {pairs}")
    std, w, sig = (s[a]["mean_barrier"] for a in ("standard", "w_asym", "sigma_asym"))
    reb = s["standard"]["mean_rebasin_barrier"]
    ok = w <= 0.02 and reb <= 0.05 and 0.02 < sig < std and std >= 0.10
    report(1, ok, f"width {res['settings']['width']}: W-Asym {w:.4f} (<=0.02), re-basin {reb:.4f} (<=0.05), "
                  f"sigma-Asym {sig:.4f} (in (0.02, std)), standard {std:.4f} (>=0.10)")


# ---------------------------------------------------------------- 2: automorphism counts

def random_w_asym_config(r: np.random.Generator) -> ModelConfig:
    while True:
        depth = int(r.integers(2, 5))
        widths = [int(w) for w in r.integers(2, 9, size=depth + 1)]
        n_fix = [int(k) for k in r.integers(1, 3, size=depth)]
        feasible = all(k < a and math.comb(a, k) >= b for a, b, k in zip(widths, widths[1:], n_fix))
        if feasible:
            return ModelConfig(widths, "w_asym", n_fix=n_fix, kappa=[1.0] * depth,
                               asym_seed=int(r.integers(2**31)))


def test_criterion_2_automorphism_counts():
    t0 = time.perf_counter()
    r = np.random.default_rng(2024)
    bad = []
    for i in range(100):
        cfg = random_w_asym_config(r)
        ck = ModelCheckpoint.from_model(build_model(cfg))
        w_count = len(find_automorphisms(build_dag(ck)))
        std = ModelCheckpoint.from_model(build_model(ModelConfig(cfg.widths, "standard")))
        std_count = count_automorphisms(build_dag(std), limit=10**7)
        expected = math.prod(math.factorial(h) for h in cfg.widths[1:-1])
        if w_count != 1 or std_count != expected:
            bad.append((cfg.widths, cfg.n_fix, w_count, std_count, expected))
    dt = time.perf_counter() - t0
    report(2, not bad and dt <= 60, f"100 configs, {len(bad)} wrong counts, {dt:.1f}s (<=60s)")


# ---------------------------------------------------------------- 3: FiGLU falsifiers

def test_criterion_3_figlu_falsifiers():
    t0 = time.perf_counter()
    failures = 0
    for d in (3, 4):
        for seed in range(100):
            F = sample_figlu_matrix(d, 1 / math.sqrt(d), np.random.default_rng([d, seed]))
            perm = figlu_perm_falsifier(F, seed=seed)
            diag = figlu_diag_falsifier(F, seed=seed)
            failures += not (perm.symmetry_free and diag.symmetry_free)
    dt = time.perf_counter() - t0
    report(3, failures == 0 and dt <= 120,
           f"200 matrices (d=3,4), {failures} with a zero off-identity residual, {dt:.1f}s (<=120s)")


# ---------------------------------------------------------------- 4: universal construction

def test_criterion_4_exact_construction():
    t0 = time.perf_counter()
    r = np.random.default_rng(4)
    fitted, inadmissible, too_large = 0, 0, 0
    for i in range(100):
        n = int(r.integers(4, 9))
        n_fix = int(r.integers(1, 3))
        W = r.normal(size=(n, n))
        try:
            fit = uafit(W, n_fix, kappa=1.0, seed=i, max_tries=20, num_probes=500)
        except InadmissibleMasks:
            inadmissible += 1
            continue
        fitted += 1
        too_large += fit.residual > fit.meta["tolerance"]
    dt = time.perf_counter() - t0
    ok = fitted == 100 and too_large == 0 and dt <= 60
    report(4, ok, f"{fitted}/100 targets fitted, {inadmissible} without admissible masks, "
                  f"{too_large} over tolerance, {dt:.1f}s (<=60s)")


# ---------------------------------------------------------------- 5: MLI

def test_criterion_5_mli():
    res = load_results("mli.json")
    if res is None:
        report(5, False, "results/mli.json missing; run scripts/run_mli.py")
    s = res["summary"]
    runs = {arm: s.get(arm, {}).get("runs", 0) for arm in ("standard", "w_asym")}
    if min(runs.values()) < 20:
        report(5, False, f"need >= 20 runs per arm, have {runs}")
    w, std = s["w_asym"], s["standard"]
    ok = w["percent_monotone"] >= std["percent_monotone"] and w["mean_global_convexity"] >= 0.95
    report(5, ok, f"monotone W-Asym {w['percent_monotone']:.0f}% vs standard {std['percent_monotone']:.0f}%, "
                  f"W-Asym global convexity {w['mean_global_convexity']:.3f} (>=0.95)")


# ---------------------------------------------------------------- 6: LAP oracle

def test_criterion_6_lap_oracle():
    r = np.random.default_rng(6)
    mismatches = 0
    for i in range(1000):
        n = int(r.integers(1, 8))
        C = r.integers(-5, 6, size=(n, n)).astype(float) if i % 2 else r.normal(size=(n, n))
        sense = "max" if i % 4 >= 2 else "min"
        perm = lap_solve(C, sense).perm
        got = C[np.arange(n), perm].sum()
        best_fn = max if sense == "max" else min
        best = best_fn(C[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n)))
        mismatches += got != best
    report(6, mismatches == 0, f"1000 instances (n<=7), {mismatches} differ from exhaustive search")


# ---------------------------------------------------------------- 7: gradient suite

def _relu_input(r, shape):
    x = r.normal(size=shape)
    return np.where(np.abs(x) < 1e-2, 1e-2, x)


def _ops():
    """(name, builder) pairs; a builder maps an rng to (scalar fn, input arrays).

    Outputs are contracted with a random weight so every output coordinate matters.
    """
    def unary(op, make=lambda r, s: r.normal(size=s)):
        def build(r):
            w = r.normal(size=(3, 4))
            return (lambda t: ag.sum_all(ag.mul(op(t), ag.Tensor(w)))), [make(r, (3, 4))]
        return build

    def binary(op):
        def build(r):
            w = r.normal(size=(3, 4))
            return (lambda a, b: ag.sum_all(ag.mul(op(a, b), ag.Tensor(w)))), [r.normal(size=(3, 4)),
                                                                                   r.normal(size=(3, 4))]
        return build

    def matmul(r):
        w = r.normal(size=(3, 2))
        return (lambda a, b: ag.sum_all(ag.mul(ag.matmul(a, b), ag.Tensor(w)))), [r.normal(size=(3, 5)),
                                                                                   r.normal(size=(5, 2))]

    def add_rowwise(r):
        w = r.normal(size=(3, 4))
        return (lambda x, b: ag.sum_all(ag.mul(ag.add_rowwise(x, b), ag.Tensor(w)))), [r.normal(size=(3, 4)),
                                                                                        r.normal(size=4)]

    def transpose(r):
        w = r.normal(size=(4, 3))
        return (lambda t: ag.sum_all(ag.mul(ag.transpose(t), ag.Tensor(w)))), [r.normal(size=(3, 4))]

    def reshape(r):
        w = r.normal(size=(2, 6))
        return (lambda t: ag.sum_all(ag.mul(ag.reshape(t, (2, 6)), ag.Tensor(w)))), [r.normal(size=(3, 4))]

    def layernorm(r):
        w = r.normal(size=(3, 5))
        return (lambda x, g, b: ag.sum_all(ag.mul(ag.layernorm(x, g, b), ag.Tensor(w)))), [
            r.normal(size=(3, 5)), r.normal(size=5), r.normal(size=5)]

    def cross_entropy(r):
        y = r.integers(0, 4, size=5)
        return (lambda z: ag.softmax_cross_entropy(z, y)), [2 * r.normal(size=(5, 4))]

    def sum_all(r):
        return (lambda t: ag.sum_all(ag.mul(t, t))), [r.normal(size=(3, 4))]

    def mean_all(r):
        return (lambda t: ag.mean_all(ag.mul(t, t))), [r.normal(size=(3, 4))]

    return [("add", binary(ag.add)), ("sub", binary(ag.sub)), ("mul", binary(ag.mul)),
            ("neg", unary(ag.neg)), ("sigmoid", unary(ag.sigmoid)), ("relu", unary(ag.relu, _relu_input)),
            ("matmul", matmul), ("transpose", transpose), ("reshape", reshape),
            ("add_rowwise", add_rowwise), ("sum_all", sum_all), ("mean_all", mean_all),
            ("layernorm", layernorm), ("softmax_cross_entropy", cross_entropy)]


def test_criterion_7_gradient_suite():
    worst = {}
    for k, (name, build) in enumerate(_ops()):
        r = np.random.default_rng([7, k])
        errs = []
        for _ in range(50):
            fn, arrays = build(r)
            errs.append(ag.gradcheck(fn, arrays))
        worst[name] = max(errs)
    failing = {k: v for k, v in worst.items() if not v < 1e-4}
    report(7, not failing, f"{len(worst)} ops x 50 instances, worst rel. err {max(worst.values()):.1e} (<1e-4)"
                           + (f", failing {failing}" if failing else ""))


# ---------------------------------------------------------------- 8: permutation symmetry

def test_criterion_8_permutation_symmetry():
    r = np.random.default_rng(8)
    worst = 0.0
    for i in range(20):
        depth = int(r.integers(2, 5))
        widths = [int(w) for w in r.integers(2, 33, size=depth + 1)]
        cfg = ModelConfig(widths, "standard", layernorm=bool(i % 2 == 0), init_seed=i)
        ck = perturbed(ModelCheckpoint.from_model(build_model(cfg)), i)
        perms = [r.permutation(h) for h in widths[1:-1]]
        x = r.normal(size=(100, widths[0]))
        diff = np.abs(apply_permutation(ck, perms).to_model().predict(x) - ck.to_model().predict(x))
        worst = max(worst, float(diff.max()))
    recovered, trials = 0, 40
    for i in range(trials):
        widths = [10, 64, 64, 64, 10]
        ck = perturbed(ModelCheckpoint.from_model(build_model(ModelConfig(widths, init_seed=100 + i))), i)
        planted = apply_permutation(ck, [r.permutation(64) for _ in range(3)])
        aligned, _ = align(ck, planted)
        recovered += all(np.array_equal(aligned.params[k], ck.params[k]) for k in ck.params)
    rate = recovered / trials
    report(8, worst <= 1e-10 and rate >= 0.95,
           f"max output change {worst:.1e} (<=1e-10) over 20 nets x 100 probes; "
           f"planted recovery {recovered}/{trials} at width 64 (>=95%)")


# ---------------------------------------------------------------- 9: distance vs barrier

def test_criterion_9_distance_does_not_explain_barrier():
    res = load_results("lmc.json")
    if res is None:
        report(9, False, "results/lmc.json missing; run scripts/run_lmc.py")
    s = res["summary"]
    if "w_asym" not in s or "standard" not in s:
        report(9, False, "need both standard and W-Asym pairs")
    dw, ds = s["w_asym"]["mean_distance_per_parameter"], s["standard"]["mean_distance_per_parameter"]
    bw, bs = s["w_asym"]["mean_barrier"], s["standard"]["mean_barrier"]
    ratio = dw / ds
    ok = 0.5 <= ratio <= 2.0 and 5 * bw <= bs
    report(9, ok, f"distance/param ratio W-Asym:standard {ratio:.2f} (in [0.5, 2]); "
                  f"barriers {bw:.4f} vs {bs:.4f} (W-Asym at least 5x smaller)")
