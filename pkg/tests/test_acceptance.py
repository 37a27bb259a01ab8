"""End-to-end acceptance checks, each at its stated tolerance and time budget.

Each test records one PASS/FAIL line, printed again in the terminal summary.
"""

import math
import statistics
import time

import numpy as np
import pytest

from gcnda import cli
from gcnda import harness as H
from gcnda import model as M
from gcnda import tensor as T
from gcnda import training as TR
from gcnda.config import build_config
from gcnda.gradcheck import run_suite
from gcnda.text import build_vocab, encode_pad, random_embeddings

from conftest import record
from test_tensor import conv_oracle

SEEDS = range(5)
# Synthetic sentences are at most 20 tokens, so N=20 loses nothing to truncation.
DA_CONFIG = dict(filters=32, embed_dim=32, max_len=20)


def test_01_gradient_correctness():
    start = time.perf_counter()
    results = run_suite(seeds=(0, 1, 2))
    elapsed = time.perf_counter() - start
    worst_name = max(results, key=results.get)
    worst = results[worst_name]
    ok = worst <= 1e-5 and elapsed < 30
    record(1, ok, f"max rel err {worst:.2e} ({worst_name}) over {len(results)} checks x 3 seeds in {elapsed:.1f}s")
    assert ok


def test_02_convolution_oracle():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n, d, h, f = (int(v) for v in (rng.integers(1, 21), rng.integers(1, 9), rng.integers(1, 6), rng.integers(1, 9)))
        x, k, b = rng.normal(size=(n, d)), rng.normal(size=(f, h, d)), rng.normal(size=f)
        worst = max(worst, float(np.abs(T.conv1d_same(x, k, b) - conv_oracle(x, k, b)).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 5
    record(2, ok, f"max abs diff {worst:.1e} on 100 instances in {elapsed:.2f}s")
    assert ok


def test_03_overfit_small_set():
    start = time.perf_counter()
    needed = []
    for seed in SEEDS:
        examples = H.generate_synthetic(H.SyntheticCorpusSpec(size=32, seed=seed))["books"].examples
        vocab = build_vocab([ex.tokens for ex in examples])
        data = TR.Split(np.stack([_encode(ex.tokens, vocab) for ex in examples]), [ex.label for ex in examples])
        rng = T.make_rng(seed)
        params = M.init_model("glu", random_embeddings(vocab, 16, rng), rng, filters=8)
        opt = TR.Adadelta()
        reached = None
        for epoch in range(1, 201):
            TR.train_epoch(params, opt, data, 16, TR.epoch_rng(seed, epoch))
            if TR.evaluate(params, data)[0] == 1.0:
                reached = epoch
                break
        needed.append(reached)
    elapsed = time.perf_counter() - start
    ok = all(e is not None for e in needed) and elapsed < 60
    record(3, ok, f"epochs to train acc 1.0 per seed {needed} in {elapsed:.1f}s")
    assert ok


def _encode(tokens, vocab):
    return encode_pad(tokens, vocab, 20)


def test_04_adadelta_first_step():
    errs = []
    for g in (1.0, -0.5, 3.0):
        slot = TR.AdadeltaSlot(np.zeros(1), np.zeros(1))
        delta = TR.adadelta_step(np.zeros(1), np.array([g]), slot, 0.95, 1e-6)[0]
        errs.append(abs(delta - (-math.sqrt(1e-6 / (0.05 * g * g + 1e-6)) * g)))
    unit = TR.adadelta_step(np.zeros(1), np.ones(1), TR.AdadeltaSlot(np.zeros(1), np.zeros(1)))[0]
    ok = max(errs) <= 1e-12 and abs(unit - (-4.4721e-3)) < 5e-8
    record(4, ok, f"max abs err {max(errs):.1e}; g=1 step {unit:.4e}")
    assert ok


@pytest.fixture(scope="module")
def da_runs():
    """GLU/GTU/GTRU/NONE trained books -> electronics for 5 seeds (mix 0.5, 2000 per domain)."""
    cfg = build_config(DA_CONFIG)
    start = time.perf_counter()
    acc = {m: [] for m in ("glu", "gtu", "gtru", "none")}
    contrast = []
    for seed in SEEDS:
        spec = H.SyntheticCorpusSpec(mix_ratio=0.5, size=2000, seed=seed)
        data = H.generate_synthetic(spec)
        src, tgt = data["books"], data["electronics"]
        for model in acc:
            res = H.run_pair(src, tgt, model, cfg, seed=seed)
            acc[model].append(res.accuracy)
            if model == "glu":
                shared = set(spec.shared_pos) | set(spec.shared_neg)
                contrast.append(
                    H.gate_weight_by_ngram_class(res.params, src.split("test"), res.vocab, cfg.max_len, shared, set(spec.noise["books"]))
                )
    return acc, contrast, time.perf_counter() - start


def test_05_domain_adaptation_trend(da_runs):
    acc, _, elapsed = da_runs
    means = {m: 100 * statistics.fmean(v) for m, v in acc.items()}
    margin = means["glu"] - means["none"]
    ok = margin >= 2.0 and all(means[g] >= 70.0 for g in H.GATED) and elapsed < 15 * 60
    summary = ", ".join(f"{m} {v:.2f}" for m, v in means.items())
    record(5, ok, f"target acc % ({summary}); glu - none = {margin:+.2f} pts (need >= 2); {elapsed / 60:.1f} min")
    assert ok


def test_06_gate_interpretability(da_runs):
    _, contrast, _ = da_runs
    wins = sum(pol > noise for pol, noise in contrast)
    ok = wins >= 4
    detail = "; ".join(f"{pol:.4f} vs {noise:.4f}" for pol, noise in contrast)
    record(6, ok, f"shared-polarity > noise-only trigram gate mean in {wins}/5 seeds ({detail})")
    assert ok


def test_07_baseline_sanity():
    cfg = build_config()
    in_domain, transfer = [], []
    for seed in SEEDS:
        d0 = H.generate_synthetic(H.SyntheticCorpusSpec(mix_ratio=0.0, size=2000, seed=seed))
        in_domain.append(H.run_pair(d0["books"], d0["books"], "bow", cfg, seed=seed).accuracy)
        d1 = H.generate_synthetic(H.SyntheticCorpusSpec(mix_ratio=1.0, size=2000, seed=seed))
        transfer.append(H.run_pair(d1["books"], d1["electronics"], "bow", cfg, seed=seed).accuracy)
    a, b = statistics.fmean(in_domain), statistics.fmean(transfer)
    ok = a >= 0.9 and b <= 0.6
    record(7, ok, f"BoW in-domain at mix 0: {a:.4f} (>= 0.9); transfer at mix 1: {b:.4f} (<= 0.6)")
    assert ok


def test_08_parameter_counts():
    emb = np.zeros((2, 300))
    counts = {g: M.init_model(g, emb, T.make_rng(0)).num_parameters() for g in ("glu", "gtu", "gtru", "none")}
    ok = all(counts[g] == 720_901 for g in H.GATED) and counts["none"] == 360_601
    record(8, ok, f"non-embedding trainable scalars {counts}")
    assert ok


def test_09_matrix_determinism(tmp_path):
    data = tmp_path / "data"
    assert cli.main(["synth-gen", "--size", "200", "--seed", "5", "--out", str(data)]) == 0
    args = [
        "matrix", "--domains", str(data / "books.jsonl"), str(data / "electronics.jsonl"),
        "--models", "glu,gtu,gtru,none,bow,tfidf", "--filters", "8", "--embed-dim", "16",
        "--max-len", "20", "--epochs", "5", "--n-seeds", "2", "--seed", "5",
    ]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    a, b = (tmp_path / "a" / "matrix.csv").read_bytes(), (tmp_path / "b" / "matrix.csv").read_bytes()
    ok = a == b and len(a.splitlines()) == 13
    record(9, ok, f"two matrix runs: {len(a)} vs {len(b)} bytes, identical={a == b}")
    assert ok


def test_10_epoch_timing():
    """Epochs of every model are interleaved on identical data; medians are compared."""
    spec = H.SyntheticCorpusSpec(mix_ratio=0.5, size=2000, seed=0)
    src = H.generate_synthetic(spec)["books"]
    train = src.split("train")
    vocab = build_vocab([ex.tokens for ex in train])
    data = TR.Split(np.stack([_encode(ex.tokens, vocab) for ex in train]), [ex.label for ex in train])
    models = {}
    for gate in ("glu", "gtu", "gtru", "none"):
        rng = T.make_rng(0)
        models[gate] = (M.init_model(gate, random_embeddings(vocab, 32, rng), rng, filters=32), TR.Adadelta())
    secs = {g: [] for g in models}
    for epoch in range(1, 8):
        for gate, (params, opt) in models.items():
            t = time.perf_counter()
            TR.train_epoch(params, opt, data, 16, TR.epoch_rng(0, epoch))
            secs[gate].append(time.perf_counter() - t)
    med = {g: statistics.median(v) for g, v in secs.items()}
    ratios = {g: med[g] / med["none"] for g in H.GATED}
    ok = all(r <= 1.5 for r in ratios.values())
    detail = ", ".join(f"{g}/none {r:.2f}" for g, r in ratios.items())
    record(10, ok, f"median s/epoch none {med['none']:.3f}; {detail} (bound 1.5)")
    assert ok
