"""Acceptance suite: one pass/fail line per criterion, stated tolerances."""
import functools
import math
import time
from fractions import Fraction

import numpy as np

from infoprune import (ChannelMask, PruningRates, apply_plan, build_plan,
                       count_costs, filter_entropy, forward, keep_count,
                       kernel_probabilities, kernel_similarity,
                       renyi_matrix_entropy, score_model, select_filters)
from infoprune.scoring import minmax_normalize

from nets import random_toy_net, resnet56_manifest, vgg16_cifar_manifest


def criterion(name):
    def wrap(fn):
        @functools.wraps(fn)
        def run():
            try:
                fn()
            except BaseException:
                print(f"FAIL: {name}")
                raise
            print(f"PASS: {name}")
        return run
    return wrap


def brute_force_scores(kernels):
    """Pure-python oracle for sims, softmax and entropy."""
    flat = [list(map(float, k.reshape(-1))) for k in kernels]
    n = len(flat)
    sims = []
    for q in range(n):
        total = 0.0
        for q2 in range(n):
            if q2 == q:
                continue
            total += math.sqrt(sum((a - b) ** 2 for a, b in zip(flat[q], flat[q2])))
        sims.append(total)
    top = max(sims)
    exps = [math.exp(s - top) for s in sims]
    z = sum(exps)
    probs = [e / z for e in exps]
    entropy = -sum(p * math.log2(p) for p in probs if p > 0.0)
    return sims, probs, entropy


@criterion("scoring oracle suite (softmax/entropy vs brute force, rel 1e-9, < 1s)")
def test_scoring_oracle_suite():
    rng = np.random.default_rng(100)
    start = time.monotonic()
    checked = 0
    for _ in range(120):
        n = int(rng.integers(2, 17))
        k = int(rng.choice([1, 3, 5]))
        filt = rng.standard_normal((n, k, k))
        sims, probs, entropy = brute_force_scores(filt)
        got_sim = kernel_similarity(filt)
        got_p = kernel_probabilities(got_sim)
        got_h = filter_entropy(got_p)
        np.testing.assert_allclose(got_sim, sims, rtol=1e-9)
        np.testing.assert_allclose(got_p, probs, rtol=1e-9)
        assert abs(got_h - entropy) <= 1e-9 * max(1.0, abs(entropy))
        if n == 2:
            assert got_h == 1.0
        checked += 1
    # two-kernel forcing, explicitly
    for _ in range(20):
        filt = rng.standard_normal((2, 3, 3))
        h = filter_entropy(kernel_probabilities(kernel_similarity(filt)))
        assert h == 1.0
    assert checked >= 100
    assert time.monotonic() - start < 1.0


@criterion("M = n-1 reproduces exact similarity sums (<= 1e-12)")
def test_m_nearest_exact_consistency():
    rng = np.random.default_rng(101)
    for _ in range(100):
        n = int(rng.integers(2, 17))
        k = int(rng.choice([1, 3, 5]))
        filt = rng.standard_normal((n, k, k))
        exact = kernel_similarity(filt, "exact")
        approx = kernel_similarity(filt, n - 1)
        np.testing.assert_allclose(approx, exact, atol=1e-12)


@criterion("selection invariant under positive affine rescaling (1000 vectors)")
def test_selection_affine_invariance():
    rng = np.random.default_rng(102)
    for _ in range(1000):
        n = int(rng.integers(2, 33))
        raw = rng.standard_normal(n)
        keep = int(rng.integers(1, n + 1))
        a = float(rng.uniform(0.01, 100.0))
        b = float(rng.standard_normal() * 10)
        base = select_filters(minmax_normalize(raw), keep)
        scaled = select_filters(minmax_normalize(a * raw + b), keep)
        assert base == scaled


@criterion("masked-equivalence on >= 20 random toy nets (atol 1e-4, < 30 s)")
def test_masked_equivalence():
    start = time.monotonic()
    rng = np.random.default_rng(103)
    rates = [0.25, 0.5, 0.75]
    for idx in range(21):
        manifest, tensors = random_toy_net(rng)
        table = score_model(manifest, tensors)
        plan = build_plan(manifest, table, PruningRates(global_rate=rates[idx % 3]),
                          strategy="random", seed=idx)
        pruned = apply_plan(manifest, tensors, plan)
        mask = ChannelMask.from_plan(manifest, plan)
        for _ in range(10):
            x = rng.standard_normal(manifest.input_shape).astype(np.float32)
            masked = forward(manifest, tensors, x, mask)
            got = forward(pruned.manifest, pruned.tensors, x)
            np.testing.assert_allclose(got, masked, atol=1e-4)
    assert time.monotonic() - start < 30.0


@criterion("cost back-outs: VGG-16 and ResNet-56 baselines within 3%")
def test_cost_backouts():
    vgg = count_costs(vgg16_cifar_manifest())
    vgg_flops_target = 129.23e6 / (1 - 0.589)
    vgg_params_target = 2.53e6 / (1 - 0.831)
    assert abs(vgg.total_flops - vgg_flops_target) / vgg_flops_target < 0.03
    assert abs(vgg.total_params - vgg_params_target) / vgg_params_target < 0.03

    r56 = count_costs(resnet56_manifest())
    r56_flops_target = 52.84e6 / (1 - 0.586)
    r56_params_target = 0.36e6 / (1 - 0.576)
    assert abs(r56.total_flops - r56_flops_target) / r56_flops_target < 0.03
    assert abs(r56.total_params - r56_params_target) / r56_params_target < 0.03


@criterion("keep_count matches ceil((1-p)*n) for n in [1,512], p in {0.0..0.9}")
def test_keep_count_exhaustive():
    for tenths in range(10):
        p = tenths / 10
        frac = 1 - Fraction(tenths, 10)
        for n in range(1, 513):
            expected = -((-frac * n) // 1)  # exact ceiling via Fraction
            assert keep_count(p, n) == int(expected)


@criterion("pipeline determinism: two runs yield byte-identical outputs")
def test_pipeline_determinism():
    import json
    from infoprune.planner import plan_json_text

    def run():
        rng = np.random.default_rng(104)
        manifest, tensors = random_toy_net(rng)
        table = score_model(manifest, tensors)
        plan = build_plan(manifest, table, PruningRates(global_rate=0.5), seed=7)
        pruned = apply_plan(manifest, tensors, plan)
        blob = json.dumps(table.to_json(), sort_keys=True).encode()
        blob += plan_json_text(plan).encode()
        for name in sorted(pruned.tensors):
            blob += pruned.tensors[name].data.tobytes()
        return blob

    assert run() == run()


@criterion("Renyi alpha=2 entropy vs Frobenius-identity oracle (1e-6); identical maps -> 0")
def test_renyi_oracle():
    rng = np.random.default_rng(105)
    for _ in range(50):
        sample = rng.standard_normal((8, 6, 6))
        width = float(rng.uniform(0.5, 3.0))
        got = renyi_matrix_entropy(sample, alpha=2, kernel_width=width)
        flat = sample.reshape(8, -1)
        sq = ((flat[:, None] - flat[None]) ** 2).sum(-1)
        gram = np.exp(-sq / (2 * width ** 2))
        # alpha=2: sum of normalized-spectrum squares == ||K||_F^2 / tr(K)^2
        expected = -math.log2(float(np.sum(gram * gram)) / float(np.trace(gram)) ** 2)
        assert abs(got - expected) < 1e-6
    identical = np.tile(rng.standard_normal((1, 6, 6)), (8, 1, 1))
    assert abs(renyi_matrix_entropy(identical, alpha=2)) < 1e-9
