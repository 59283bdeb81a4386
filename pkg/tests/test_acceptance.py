"""Acceptance gate: one test per release criterion, each emitting a PASS/FAIL line.

These are the binding checks for the package.  Unit-level variants of most
of them live in the per-module test files; here every criterion runs at
its full stated scale and tolerance.
"""

import time

import numpy as np
import pytest

from relstruct import bottleneck as bn
from relstruct import catalog as cat
from relstruct import compaction as cp
from relstruct import predicates as pred
from relstruct import synthdata as sd
from relstruct import trainer
from relstruct import verify
from relstruct.autodiff import Tensor
from relstruct.mathcore import sparsemax


def _report(name, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def T(x):
    return Tensor(np.asarray(x, dtype=np.float64))


@pytest.fixture(scope="module")
def bench_data(tmp_path_factory):
    """Default benchmark: 8 classes x 4 domains x 100 samples, 64x64."""
    out = tmp_path_factory.mktemp("bench") / "data"
    sd.generate(sd.make_manifest(seed=0), out)
    return out


@pytest.fixture(scope="module")
def bench_model(bench_data):
    """One trained benchmark model (full predicates, target=solid)."""
    model, metrics = trainer.train(trainer.benchmark_config("all", 0),
                                   bench_data, "solid")
    return model, metrics


# ---------------------------------------------------------------------------
# 1. gradient integrity
# ---------------------------------------------------------------------------

def test_criterion_gradient_integrity():
    t0 = time.time()
    worst, reports = verify.gradcheck(n_models=5, seed=0)
    elapsed = time.time() - t0
    groups = {g for rep in reports for g in rep}
    ok = (worst <= 1e-4 and elapsed <= 300
          and groups == {"backbone", "bottleneck", "vocabulary", "structure"})
    _report("gradient integrity",
            ok, f"max rel err {worst:.3e} over 5 models / 4 param groups "
                f"(tol 1e-4) in {elapsed:.1f}s (limit 300s)")


# ---------------------------------------------------------------------------
# 2. sparsemax oracle
# ---------------------------------------------------------------------------

def _bisect_rows(Z, iters=120):
    lo = Z.max(axis=1) - 1.0
    hi = Z.max(axis=1)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        over = np.maximum(Z - mid[:, None], 0.0).sum(axis=1) > 1.0
        lo = np.where(over, mid, lo)
        hi = np.where(over, hi, mid)
    return np.maximum(Z - (0.5 * (lo + hi))[:, None], 0.0)


def test_criterion_sparsemax_oracle():
    t0 = time.time()
    rng = np.random.default_rng(0)
    total, worst = 0, 0.0
    perm_exact = trans_ok = True
    for dim in range(2, 65):
        n = 100_000 // 63 + 1
        Z = rng.normal(0.0, rng.uniform(0.5, 4.0), size=(n, dim))
        P = sparsemax(Z)
        worst = max(worst, float(np.max(np.abs(P - _bisect_rows(Z)))))
        total += n
        perm = rng.permutation(dim)
        perm_exact &= bool(np.array_equal(sparsemax(Z[:, perm]), P[:, perm]))
        c = rng.normal(0.0, 5.0, size=(n, 1))
        trans_ok &= float(np.max(np.abs(sparsemax(Z + c) - P))) <= 1e-12
    elapsed = time.time() - t0
    ok = worst <= 1e-9 and perm_exact and trans_ok and total >= 100_000 and elapsed <= 60
    _report("sparsemax oracle",
            ok, f"{total} vectors dims 2-64, L_inf {worst:.2e} (tol 1e-9), "
                f"permutation exact={perm_exact}, translation<=1e-12={trans_ok}, "
                f"{elapsed:.1f}s (limit 60s)")


# ---------------------------------------------------------------------------
# 3. predicate property suite
# ---------------------------------------------------------------------------

def test_criterion_predicate_properties():
    t0 = time.time()
    tol = 1e-5
    n = 10_000
    rng = np.random.default_rng(1)
    vocab = pred.PredicateVocabulary(dtype=np.float64)
    p = rng.uniform(-1.0, 1.0, size=(n, 4, 2))
    shift = rng.uniform(-0.5, 0.5, size=(n, 1, 2))
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    R = np.stack([np.stack([np.cos(theta), -np.sin(theta)], -1),
                  np.stack([np.sin(theta), np.cos(theta)], -1)], -2)
    q = np.einsum("nij,nkj->nki", R, p)
    d = rng.uniform(0.05, 0.4, size=(n, 4, 2))
    boxes = np.concatenate([p - d, p + d], axis=-1)
    boxes_t = np.concatenate([p + shift - d, p + shift + d], axis=-1)

    fail = []

    def ck(name, cond):
        if not cond:
            fail.append(name)

    def binv(kind, pts, bx=None):
        args = [T(pts[:, 0]), T(pts[:, 1])]
        if bx is not None:
            args += [T(bx[:, 0]), T(bx[:, 1])]
        return pred.eval_binary(kind, vocab, *args).data

    for kind in pred.BINARY_KINDS:
        bx = boxes if kind == "contains" else None
        a0 = binv(kind, p, bx)
        ck(f"{kind} range", np.all((a0 >= 0) & (a0 <= 1 + tol)))
        a1 = binv(kind, p + shift, boxes_t if kind == "contains" else None)
        ck(f"{kind} translation", np.max(np.abs(a0 - a1)) <= tol)
        if kind in pred.SYMMETRIC_BINARY:
            swapped = p[:, [1, 0]]
            ck(f"{kind} symmetry", np.max(np.abs(a0 - binv(kind, swapped))) <= tol)

    def tern(kind, pts):
        return pred.eval_ternary(kind, vocab, T(pts[:, 0]), T(pts[:, 1]), T(pts[:, 2])).data

    def quat(kind, pts):
        return pred.eval_quaternary(kind, vocab, *(T(pts[:, i]) for i in range(4))).data

    for kind in ("tri", "turn"):
        a0 = tern(kind, p)
        ck(f"{kind} range", np.all((a0 >= 0) & (a0 <= 1 + tol)))
        ck(f"{kind} translation", np.max(np.abs(a0 - tern(kind, p + shift))) <= tol)
        ck(f"{kind} rotation", np.max(np.abs(a0 - tern(kind, q))) <= tol)
    ck("tri wing symmetry", np.max(np.abs(tern("tri", p) - tern("tri", p[:, [0, 2, 1]]))) <= tol)
    ck("turn endpoint symmetry",
       np.max(np.abs(tern("turn", p) - tern("turn", p[:, [2, 1, 0]]))) <= tol)

    for kind in ("orient", "eqdist"):
        a0 = quat(kind, p)
        ck(f"{kind} range", np.all((a0 >= 0) & (a0 <= 1 + tol)))
        ck(f"{kind} translation", np.max(np.abs(a0 - quat(kind, p + shift))) <= tol)
        ck(f"{kind} rotation", np.max(np.abs(a0 - quat(kind, q))) <= tol)

    elapsed = time.time() - t0
    ok = not fail and elapsed <= 60
    _report("predicate property suite",
            ok, f"{n} configurations, tol {tol}, failures: {fail or 'none'}, "
                f"{elapsed:.1f}s (limit 60s)")


# ---------------------------------------------------------------------------
# 4. catalog correctness
# ---------------------------------------------------------------------------

def test_criterion_catalog():
    m3 = cat.build_catalog(3).M
    mismatches = [K for K in range(4, 21)
                  if cat.closed_form_m(K) != cat.build_catalog(K).M]
    c16 = cat.build_catalog(16)
    bijection = all(c16.index_of(c16.tuple_of(m)) == m for m in range(c16.M))
    distinct = len({c16.tuple_of(m) for m in range(c16.M)}) == c16.M
    ok = m3 == 42 and not mismatches and bijection and distinct
    _report("catalog correctness",
            ok, f"M(3)={m3} (want 42); closed form vs enumeration K=4..20 "
                f"mismatches: {mismatches or 'none'}; K=16 bijection over "
                f"M={c16.M} entries: {bijection and distinct}")


# ---------------------------------------------------------------------------
# 5. compaction losslessness
# ---------------------------------------------------------------------------

def test_criterion_compaction_lossless(bench_data, bench_model):
    model, _ = bench_model
    model64 = model.astype(np.float64)
    plan = cp.plan_for_model(model64, 0.0)
    small = cp.compact(model64, plan)
    labels = sd.load_labels(bench_data)[:1000]
    x, _ = sd.load_images(bench_data, labels, dtype=np.float64)
    report = cp.verify_equivalence(model64, small, x)
    again = cp.compact(small, cp.plan_for_model(small, 0.0))
    idem = (again.catalog.M == small.catalog.M
            and cp.verify_equivalence(small, again, x[:100]).max_logit_deviation <= 1e-12)
    ok = (report.max_logit_deviation <= 1e-12 and report.top1_agreement == 1.0
          and len(x) == 1000 and idem)
    _report("compaction losslessness",
            ok, f"tau=0 on {len(x)} samples (float64): max |dlogit| "
                f"{report.max_logit_deviation:.2e} (tol 1e-12), top-1 agreement "
                f"{report.top1_agreement:.3f}, idempotent={idem}")


# ---------------------------------------------------------------------------
# 6. structural sparsity
# ---------------------------------------------------------------------------

def test_criterion_structural_sparsity(bench_model):
    model, _ = bench_model
    plan = cp.plan_for_model(model, 0.0)
    m_before = model.catalog.M
    removed = 1.0 - plan.n_active / m_before
    ok = removed >= 0.5
    _report("structural sparsity",
            ok, f"tau=0 removes {removed:.1%} of {m_before} predicate "
                f"applications ({m_before - plan.n_active} dropped; need >= 50%)")


# ---------------------------------------------------------------------------
# 7. relational-structure benefit (leave-one-domain-out)
# ---------------------------------------------------------------------------

def test_criterion_relational_benefit(bench_data):
    t0 = time.time()
    means = {}
    for fam in ("all", "none"):
        per_seed = []
        for seed in (0, 1, 2):
            result = trainer.lodo(trainer.benchmark_config(fam, seed), bench_data)
            per_seed.append(result["mean"])
        means[fam] = float(np.mean(per_seed))
    elapsed = time.time() - t0
    gap = means["all"] - means["none"]
    ok = (gap >= 0.05 and means["all"] >= 0.325 and means["none"] >= 0.325
          and elapsed <= 45 * 60)
    _report("relational-structure benefit",
            ok, f"LODO mean over 3 seeds: full {means['all']:.3f} vs no-relations "
                f"{means['none']:.3f} (gap {gap * 100:.1f} pts, need >= 5; both need "
                f">= 0.325) in {elapsed / 60:.1f} min (limit 45)")


# ---------------------------------------------------------------------------
# 8. regularizer values
# ---------------------------------------------------------------------------

def test_criterion_regularizer_values():
    one_hot = np.zeros((1, 1, 4, 4))
    one_hot[0, 0, 1, 2] = 1.0
    conc_hot = float(bn.loss_concentration(Tensor(one_hot)).data)
    conc_uni = float(bn.loss_concentration(Tensor(np.full((1, 1, 4, 4), 1 / 16))).data)
    div_same = float(bn.loss_diversity(Tensor(np.broadcast_to(
        one_hot, (1, 3, 4, 4)).copy())).data)
    disjoint = np.zeros((1, 3, 4, 4))
    for k in range(3):
        disjoint[0, k, k, k] = 1.0
    div_disj = float(bn.loss_diversity(Tensor(disjoint)).data)
    v = pred.PredicateVocabulary.from_values(phi_orient=[0.8, 0.8], gamma=[0.3, 0.3])
    ang = float(pred.loss_angle_diversity(v).data)
    checks = {
        "conc one-hot": abs(conc_hot - (-np.log(1.01))) <= 1e-6,
        "conc uniform": abs(conc_uni - (-np.log(0.0725))) <= 1e-6,
        "div identical": abs(div_same - 1.0) <= 1e-9,
        "div disjoint": abs(div_disj) <= 1e-9,
        "ang coincident": abs(ang - 100.0) <= 1e-9,
    }
    ok = all(checks.values())
    _report("regularizer values",
            ok, f"conc(one-hot)={conc_hot:.6f} (want {-np.log(1.01):.6f}), "
                f"conc(uniform)={conc_uni:.6f} (want {-np.log(0.0725):.6f}), "
                f"div identical={div_same}, disjoint={div_disj}, "
                f"ang coincident={ang}; all within tolerance: {ok}")


# ---------------------------------------------------------------------------
# 9. determinism & persistence
# ---------------------------------------------------------------------------

def test_criterion_determinism(tmp_path):
    data = tmp_path / "d"
    sd.generate(sd.make_manifest(n_classes=4, per_class=8, image_size=32, seed=5), data)
    blobs, metric_dicts = [], []
    for run in range(2):
        cfg = trainer.TrainConfig(k=4, batch_size=8, epochs=2, seed=3, widths=(4, 6, 6))
        model, metrics = trainer.train(cfg, data, "outline")
        path = tmp_path / f"run{run}.ckpt"
        trainer.save_checkpoint(path, model, cfg, metrics)
        blobs.append(path.read_bytes())
        metric_dicts.append(metrics.to_dict())
    identical = blobs[0] == blobs[1] and metric_dicts[0] == metric_dicts[1]
    loaded, _ = trainer.load_checkpoint(tmp_path / "run0.ckpt")
    x = np.random.default_rng(0).random((8, 3, 32, 32), dtype=np.float32)
    model, _ = trainer.load_checkpoint(tmp_path / "run1.ckpt")
    bit_exact = bool(np.array_equal(loaded.forward(x)["logits"].data,
                                    model.forward(x)["logits"].data))
    ok = identical and bit_exact
    _report("determinism & persistence",
            ok, f"two identical-seed runs byte-identical={blobs[0] == blobs[1]}, "
                f"metrics identical={metric_dicts[0] == metric_dicts[1]}, "
                f"save->load->forward bit-exact={bit_exact}")
