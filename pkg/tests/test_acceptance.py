"""Acceptance criteria, one test per criterion.

Every test prints a single ``[PASS]`` / ``[FAIL]`` / ``[SKIP]`` line; the lines
are repeated in the pytest terminal summary. Run just this file with::

    pytest tests/test_acceptance.py -s

Criterion 5 needs a real interaction log: set ``CPREC_MOVIELENS`` to its path.
"""
import json
import os
import time

import numpy as np
import pytest

from cprec.batches import CprBatch, CprSample, PointwiseBatch, TripleBatch
from cprec.cli import main as cli_main
from cprec.data import SplitConfig, load_interactions, unbiased_split
from cprec.evaluation import arp_at_k, evaluate, ndcg_at_k, recall_at_k, truth_agreement
from cprec.losses import PropensityTable, bce_loss, bpr_loss, cpr_loss, relmf_loss, ubpr_loss
from cprec.model import EmbeddingModel
from cprec.sampling import SamplerConfig, dynamic_sample_batch
from cprec.synthworld import generate_world, sample_interactions
from cprec.trainer import TrainConfig, train

from conftest import random_dataset
from oracles import brute_force_dynamic, dense_grads, fd_gradient, relative_error

RESULTS = []


def record(tag, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}"
    print(line)
    RESULTS.append(line)
    assert ok, line


def shifted_model(scores, user_shift, item_shift):
    """Model scoring ``scores[u, i] + user_shift[u] + item_shift[i]`` exactly via two extra columns."""
    nu, ni = scores.shape
    uf = np.hstack([scores, user_shift[:, None], np.ones((nu, 1))])
    vf = np.hstack([np.eye(ni), np.ones((ni, 1)), item_shift[:, None]])
    return EmbeddingModel(uf, vf)


# ---------------------------------------------------------------------------

def test_criterion_1_shift_invariance():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst_cpr = worst_bpr = 0.0
    n_users = n_items = 6
    for _ in range(1000):
        k = int(rng.integers(2, 5))
        scores = rng.uniform(-5, 5, (n_users, n_items))
        c = rng.uniform(-3, 3, n_users)
        e = rng.uniform(-3, 3, n_items)
        users = np.stack([rng.choice(n_users, k, replace=False) for _ in range(3)])
        items = np.stack([rng.choice(n_items, k, replace=False) for _ in range(3)])
        batch = CprBatch(users, items)
        base = cpr_loss(shifted_model(scores, 0 * c, 0 * e), batch)[0]
        moved = cpr_loss(shifted_model(scores, c, e), batch)[0]
        worst_cpr = max(worst_cpr, abs(moved - base) / abs(base))
        tb = TripleBatch(users[:, 0], items[:, 0], items[:, 1])
        b0 = bpr_loss(shifted_model(scores, 0 * c, 0 * e), tb)[0]
        b1 = bpr_loss(shifted_model(scores, c, 0 * e), tb)[0]
        worst_bpr = max(worst_bpr, abs(b1 - b0) / abs(b0))
    # per-item witness: shift only the positive item
    scores = np.zeros((1, 2))
    tb = TripleBatch(np.array([0]), np.array([0]), np.array([1]))
    witness = abs(bpr_loss(shifted_model(scores, np.zeros(1), np.array([1.0, 0.0])), tb)[0]
                  - bpr_loss(shifted_model(scores, np.zeros(1), np.zeros(2)), tb)[0])
    elapsed = time.perf_counter() - t0
    ok = worst_cpr <= 1e-9 and worst_bpr <= 1e-9 and witness > 1e-6 and elapsed < 1.0
    record("criterion 1 (shift invariance)", ok,
           f"max CPR rel change {worst_cpr:.2e}, max BPR user-shift rel change {worst_bpr:.2e}, "
           f"BPR item-shift witness {witness:.3f}, {elapsed:.2f}s")


def test_criterion_2_gradient_checks():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = {}
    for _ in range(10):
        m = EmbeddingModel(rng.normal(0, 0.7, (5, 4)), rng.normal(0, 0.7, (6, 4)))
        props = PropensityTable(rng.uniform(0.05, 1, 6), 0.5, 0.01)
        users = rng.integers(0, 5, 8)
        pb = PointwiseBatch(users, rng.integers(0, 6, 8), rng.integers(0, 2, 8).astype(float))
        tb = TripleBatch(users, rng.integers(0, 6, 8), rng.integers(0, 6, 8))
        cs = [CprSample(tuple(rng.choice(5, k, replace=False).tolist()),
                        tuple(rng.choice(6, k, replace=False).tolist())) for k in (2, 3, 4, 2)]
        fns = {"BCE": lambda mm: bce_loss(mm, pb), "BPR": lambda mm: bpr_loss(mm, tb),
               "CPR": lambda mm: cpr_loss(mm, cs), "Rel-MF": lambda mm: relmf_loss(mm, pb, props),
               "UBPR": lambda mm: ubpr_loss(mm, tb, props)}
        for name, fn in fns.items():
            analytic = dense_grads(m, fn(m)[1])
            numeric = fd_gradient(m, lambda mm: fn(mm)[0], h=1e-3)
            worst[name] = max(worst.get(name, 0.0), relative_error(analytic, numeric))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 10
    record("criterion 2 (gradient checks)", ok,
           ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" max rel err, {elapsed:.2f}s")


def test_criterion_3_dynamic_sampler_oracle():
    rng = np.random.default_rng(3)
    ds = random_dataset(rng, 8, 8, 0.25)
    cfg = SamplerConfig(batch_size=3, beta=2, gamma=6)
    mismatches = full = 0
    for snap in range(100):
        model = EmbeddingModel(rng.normal(size=(8, 4)), rng.normal(size=(8, 4)))
        k = 2 + snap % 2
        got = dynamic_sample_batch(ds, model, cfg, k, np.random.default_rng(snap))
        want = brute_force_dynamic(ds, model, cfg.batch_size, cfg.pool_size, cfg.draw_size, k, snap)
        got = [(list(s.users), list(s.items)) for s in got]
        mismatches += got != want
        full += len(want) == cfg.batch_size
    # guard against a vacuous pass: most snapshots must yield a full batch
    record("criterion 3 (dynamic sampler oracle)", mismatches == 0 and full >= 50,
           f"{100 - mismatches}/100 snapshots match exactly ({full} full batches of {cfg.batch_size})")


# -- criterion 4 ------------------------------------------------------------

def _compare_on_world(world_kwargs, train_kwargs, seeds, sample_offset=0):
    rows = []
    for seed in seeds:
        world = generate_world(seed=seed, **world_kwargs)
        ds = sample_interactions(world, seed + sample_offset)
        tr, va, te = unbiased_split(ds, SplitConfig(seed=seed))
        row = {"seed": seed, "n": len(ds)}
        for loss in ("bpr", "cpr"):
            kw = dict(train_kwargs, beta=train_kwargs.get("beta", 1.0) if loss == "cpr" else 1.0)
            cfg = TrainConfig(loss=loss, seed=seed, **kw)
            model, hist = train(tr, va, cfg)
            truth = truth_agreement(model, world, 20)
            rep = evaluate(model, te, [tr, va], 20, train_degrees=tr.item_degrees)
            row[loss] = dict(overlap=truth["truth_overlap_at_k"], tau=truth["kendall_tau"],
                             arp=rep.arp_at_k, valid_recall=hist.best_recall, best_epoch=hist.best_epoch)
        rows.append(row)
    return rows


SPEC_WORLD = dict(n_users=300, n_items=200, latent_rank=16, propensity_skew=1.0, alpha=0.5)
# fixed before looking at results: small data, so a larger step, small batches
SPEC_TRAIN = dict(dim=32, lr=1e-2, l2=1e-4, batch_size=16, beta=2.0, epochs_max=200, patience=10)


def test_criterion_4_synthetic_unbiasedness():
    t0 = time.perf_counter()
    rows = _compare_on_world(SPEC_WORLD, SPEC_TRAIN, range(5))
    elapsed = time.perf_counter() - t0
    for r in rows:
        print(f"  seed {r['seed']}: {r['n']} interactions | "
              + " | ".join(f"{k.upper()} overlap {r[k]['overlap']:.3f} tau {r[k]['tau']:+.4f} "
                           f"ARP {r[k]['arp']:.2f} valid R@20 {r[k]['valid_recall']:.3f}" for k in ("bpr", "cpr")))
    wins = sum(r["cpr"]["overlap"] > r["bpr"]["overlap"] for r in rows)
    tau_c = np.mean([r["cpr"]["tau"] for r in rows])
    tau_b = np.mean([r["bpr"]["tau"] for r in rows])
    arp_c = np.mean([r["cpr"]["arp"] for r in rows])
    arp_b = np.mean([r["bpr"]["arp"] for r in rows])
    rec_c = np.mean([r["cpr"]["valid_recall"] for r in rows])
    rec_b = np.mean([r["bpr"]["valid_recall"] for r in rows])
    a, b, c = wins >= 4, tau_c > tau_b, arp_c < arp_b
    detail = (f"(a) overlap wins {wins}/5 [{'ok' if a else 'no'}]; "
              f"(b) mean tau CPR {tau_c:+.4f} vs BPR {tau_b:+.4f} [{'ok' if b else 'no'}]; "
              f"(c) ARP CPR {arp_c:.2f} vs BPR {arp_b:.2f} [{'ok' if c else 'no'}]; "
              f"valid R@20 CPR {rec_c:.3f} vs BPR {rec_b:.3f}; {elapsed:.0f}s")
    record("criterion 4 (synthetic unbiasedness)", a and b and c and elapsed < 600, detail)


def test_supplementary_dense_world_popularity():
    """Not an acceptance criterion: the same comparison on a denser, milder-skew world
    (about 4 interactions per user) where the exposure bias is learnable.

    Only the ARP direction is asserted; truth agreement is printed for reference.
    """
    world = dict(n_users=1000, n_items=200, latent_rank=16, propensity_skew=0.7, alpha=0.5,
                 max_item_propensity=1.0, user_propensity_range=(0.8, 1.0))
    rows = _compare_on_world(world, dict(SPEC_TRAIN, batch_size=256), range(5))
    lower = sum(r["cpr"]["arp"] < r["bpr"]["arp"] for r in rows)
    wins = sum(r["cpr"]["overlap"] > r["bpr"]["overlap"] for r in rows)
    tau_c = np.mean([r["cpr"]["tau"] for r in rows])
    tau_b = np.mean([r["bpr"]["tau"] for r in rows])
    arp = [(r["cpr"]["arp"], r["bpr"]["arp"]) for r in rows]
    record("supplementary (dense synthetic world)", lower == 5,
           f"ARP lower for CPR in {lower}/5 seeds (mean {np.mean([x for x, _ in arp]):.1f} vs "
           f"{np.mean([y for _, y in arp]):.1f}); for reference: overlap wins {wins}/5, "
           f"mean tau {tau_c:+.4f} vs {tau_b:+.4f}")


# -- criterion 5 ------------------------------------------------------------

def test_criterion_5_real_data_direction():
    path = os.environ.get("CPREC_MOVIELENS")
    if not path:
        line = "[SKIP] criterion 5 (real-data direction): set CPREC_MOVIELENS to a user<TAB>item log"
        print(line)
        RESULTS.append(line)
        pytest.skip("CPREC_MOVIELENS not set")
    t0 = time.perf_counter()
    full = load_interactions(path)
    rng = np.random.default_rng(5)
    keep_users = rng.random(full.n_users) < 0.05
    ds = full.subset(keep_users[full.users])
    tr, va, te = unbiased_split(ds, SplitConfig(cap_a=1 / 60, seed=5))
    res = {}
    for loss in ("bpr", "cpr"):
        cfg = TrainConfig(loss=loss, dim=64, lr=1e-3, l2=1e-5, batch_size=1024,
                          beta=3.0 if loss == "cpr" else 1.0, seed=5)
        model, _ = train(tr, va, cfg)
        res[loss] = evaluate(model, te, [tr, va], 20, train_degrees=tr.item_degrees)
    elapsed = time.perf_counter() - t0
    ok = (res["cpr"].recall_at_k > res["bpr"].recall_at_k
          and res["cpr"].arp_at_k < 0.5 * res["bpr"].arp_at_k and elapsed < 1800)
    record("criterion 5 (real-data direction)", ok,
           f"R@20 CPR {res['cpr'].recall_at_k:.4f} vs BPR {res['bpr'].recall_at_k:.4f}; "
           f"ARP CPR {res['cpr'].arp_at_k:.1f} vs BPR {res['bpr'].arp_at_k:.1f}; {elapsed:.0f}s")


# -- criterion 6 ------------------------------------------------------------

def test_criterion_6_metric_exactness():
    checks = {
        "NDCG rank-3 hit = 0.5": ndcg_at_k([7, 8, 9], [9], 3) == 0.5,
        "NDCG rank-1 hit = 1": ndcg_at_k([9, 8, 7], [9], 3) == 1.0,
        "NDCG ranks 1,2 of 2 = 1": ndcg_at_k([1, 2, 3], [2, 1], 3) == 1.0,
        "recall 2 of 3 = 2/3": recall_at_k([1, 2, 9], [1, 2, 3]) == 2 / 3,
        "recall all = 1": recall_at_k([1, 2, 3], [3, 2, 1]) == 1.0,
        "ARP (10,20,30) = 20": arp_at_k([[0, 1, 2]], [10, 20, 30]) == 20,
        "ARP user means 10, 30 = 20": arp_at_k([[0], [2]], [10, 20, 30]) == 20,
    }
    bad = [k for k, v in checks.items() if not v]
    record("criterion 6 (metric exactness)", not bad, f"{len(checks) - len(bad)}/{len(checks)} exact"
           + (f"; failing: {bad}" if bad else ""))


# -- criterion 7 ------------------------------------------------------------

def test_criterion_7_cli_determinism(tmp_path):
    w, s = tmp_path / "w", tmp_path / "s"
    assert cli_main(["synth", "--out", str(w), "--n-users", "300", "--n-items", "80", "--propensity-skew", "0.5",
                     "--max-item-propensity", "1", "--user-propensity-range", "0.8,1", "--seed", "7"]) == 0
    assert cli_main(["split", "--dataset", str(w / "interactions.tsv"), "--out", str(s), "--seed", "7"]) == 0
    common = ["--split-dir", str(s), "--seed", "7", "--dim", "16", "--lr", "0.01", "--batch-size", "64",
              "--epochs-max", "8", "--beta", "2", "--world", str(w / "world.cprw")]
    runs = [("a", "1"), ("b", "1"), ("c", "4"), ("d", "0")]
    for name, threads in runs:
        args = ["--out", str(tmp_path / name), "--threads", threads, *common]
        assert cli_main(["train", *args]) == 0
        assert cli_main(["eval", *args]) == 0
    metrics = [(tmp_path / n / "metrics.json").read_bytes() for n, _ in runs]
    ckpts = [(tmp_path / n / "model.cprm").read_bytes() for n, _ in runs]
    same_seed = metrics[0] == metrics[1] and ckpts[0] == ckpts[1]
    threads_free = metrics[0] == metrics[2] == metrics[3]
    recall = json.loads(metrics[0])["recall_at_k"]
    record("criterion 7 (CLI determinism)", same_seed and threads_free,
           f"repeat run byte-identical: {same_seed}; --threads 1/4/auto identical metrics: {threads_free} "
           f"(recall@20 {recall:.4f})")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
