"""Model assembly, training loop, and exact-evaluation tests.

The exact-forward oracle here re-derives everything from definitions:
python-loop convolutions, rational batchnorm with explicit division, and
an explicit softmax-threshold comparison. It shares only the pinned float64
stand-ins for sqrt(var+eps) and log(t/(1-t)) with the implementation,
because those pins ARE the semantics.
"""

import math
from fractions import Fraction

import numpy as np
import pytest

from ndlite import nn
from ndlite.dataset import gen_dataset
from ndlite.model import (Model, ModelConfig, TrainHyper, build_model,
                          classify, evaluate, exact_bit_forward, load_model,
                          save_model, train)
from ndlite.quant import QuantSchedule


def small_cfg(**kw):
    base = dict(group_size=1, channels=3, residual_blocks=1,
                dense_sizes=(6, 5))
    base.update(kw)
    return ModelConfig(**base)


# ----------------------------------------------------------------- assembly

def test_build_default_shapes():
    m = build_model(ModelConfig(), seed=0)
    assert m.conv0_w.shape == (32, 4, 1, 1)          # 128 weights
    assert m.blocks[0].w1.shape == (32, 32, 3, 3)    # 9216 weights
    assert m.blocks[0].w2.shape == (32, 32, 3, 3)
    assert m.d1_w.shape == (4096, 64)
    assert m.d2_w.shape == (64, 64)
    assert m.out_w.shape == (64, 2)
    assert m.conv0_w.dtype == np.float32


def test_build_g1_flatten_width():
    m = build_model(ModelConfig(group_size=1), seed=0)
    assert m.d1_w.shape[0] == 512


def test_build_deterministic():
    a = build_model(ModelConfig(), seed=7)
    b = build_model(ModelConfig(), seed=7)
    c = build_model(ModelConfig(), seed=8)
    assert np.array_equal(a.conv0_w, b.conv0_w)
    assert np.array_equal(a.d1_w, b.d1_w)
    assert not np.array_equal(a.conv0_w, c.conv0_w)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(group_size=0)
    with pytest.raises(ValueError):
        ModelConfig(decision_threshold=1.0)
    with pytest.raises(ValueError):
        ModelConfig(hidden_activation="tanh")
    with pytest.raises(ValueError):
        ModelConfig(dense_sizes=(64,))


def test_forward_shapes_and_input_check():
    for g in (1, 8):
        m = build_model(ModelConfig(group_size=g), seed=1)
        x = np.random.default_rng(0).integers(0, 2, size=(6, 4, 16, g))
        logits, _ = m.forward(x.astype(np.float32), training=False)
        assert logits.shape == (6, 2)
    with pytest.raises(ValueError):
        m.forward(np.zeros((2, 4, 16, 3), dtype=np.float32), training=False)


def test_residual_block_is_identity_when_zeroed():
    # A two-block model whose second block has zero convs and exactly
    # identity batchnorm must equal the one-block model built from the same
    # pieces: the skip path then reproduces the block input bit for bit.
    cfg2 = small_cfg(residual_blocks=2)
    m2 = build_model(cfg2, seed=3)
    blk = m2.blocks[1]
    blk.w1[:] = 0.0
    blk.w2[:] = 0.0
    for bn in (blk.bn1, blk.bn2):
        bn.gamma[:] = 1.0
        bn.beta[:] = 0.0
        bn.running_mean[:] = 0.0
        bn.running_var[:] = 1.0 - bn.eps  # sqrt(var + eps) == 1 exactly

    m1 = build_model(small_cfg(residual_blocks=1), seed=3)
    m1.conv0_w = m2.conv0_w
    m1.bn0 = m2.bn0
    m1.blocks = [m2.blocks[0]]
    m1.d1_w, m1.d1_b = m2.d1_w, m2.d1_b
    m1.d2_w, m1.d2_b = m2.d2_w, m2.d2_b
    m1.out_w, m1.out_b = m2.out_w, m2.out_b

    x = np.random.default_rng(4).integers(0, 2, size=(5, 4, 16, 1))
    x = x.astype(np.float32)
    l2, _ = m2.forward(x, training=False)
    l1, _ = m1.forward(x, training=False)
    assert np.array_equal(l1, l2)


# ------------------------------------------------------------- stage logic

def test_set_stage_initializes_deltas():
    m = build_model(small_cfg(), seed=0)
    assert m.deltas == {}
    m.set_stage("weights")
    names = m.quant_layer_names()
    assert set(m.deltas) == set(names)
    for name in names:
        w = m._weight_of(name)
        assert float(m.deltas[name]) == pytest.approx(
            2.0 * float(np.mean(np.abs(w))))
    with pytest.raises(ValueError):
        m.set_stage("nope")


def test_project_deltas_clamps():
    m = build_model(small_cfg(), seed=0)
    m.set_stage("weights")
    m.deltas["conv0"][()] = -3.0
    m.project_deltas()
    assert float(m.deltas["conv0"]) == 1e-8


# --------------------------------------------------------- classify a rule

def test_symmetric_output_scores_half_and_threshold_inclusive():
    m = build_model(small_cfg(), seed=0)
    m.out_w[:] = 0.0
    m.out_b[:] = 0.0
    bits = np.random.default_rng(1).integers(0, 2, size=(4, 16, 1)).astype(np.uint8)
    label, score = classify(m, bits)
    assert score == 0.5
    assert label == 0  # 0.5 < 0.505

    m_inc = build_model(small_cfg(decision_threshold=0.5), seed=0)
    m_inc.out_w[:] = 0.0
    m_inc.out_b[:] = 0.0
    label, score = classify(m_inc, bits)
    assert score == 0.5 and label == 1  # boundary inclusive


def test_evaluate_all_half_scorer_and_errors():
    ds = gen_dataset(n_per_class=16, rounds=3, group_size=1, seed=0)
    m = build_model(small_cfg(), seed=0)
    m.out_w[:] = 0.0
    m.out_b[:] = 0.0
    acc, confusion = evaluate(m, ds)
    assert acc == 0.5  # everything classified random; the set is balanced
    assert confusion == {"tp": 0, "tn": 16, "fp": 0, "fn": 16}

    empty = gen_dataset(n_per_class=2, rounds=3, group_size=1, seed=0)
    empty.bits = empty.bits[:0]
    empty.labels = empty.labels[:0]
    with pytest.raises(ValueError):
        evaluate(m, empty)
    wrong_g = gen_dataset(n_per_class=8, rounds=3, group_size=8, seed=0)
    with pytest.raises(ValueError):
        evaluate(m, wrong_g)


# ------------------------------------------------------------ training loop

def test_train_zero_epochs_returns_unchanged():
    ds = gen_dataset(n_per_class=32, rounds=3, group_size=1, seed=0)
    m = build_model(small_cfg(), seed=0)
    before = m.conv0_w.copy()
    out, report = train(m, ds, ds, TrainHyper(epochs=0))
    assert out is m
    assert report.entries == []
    assert np.array_equal(m.conv0_w, before)


def test_train_runs_and_reports():
    tr = gen_dataset(n_per_class=128, rounds=3, group_size=1, seed=0)
    va = gen_dataset(n_per_class=64, rounds=3, group_size=1, seed=1)
    m = build_model(small_cfg(), seed=0)
    out, report = train(m, tr, va, TrainHyper(epochs=3, batch_size=64, seed=0))
    assert len(report.entries) == 3
    for e in report.entries:
        assert 0.0 <= e["train_acc"] <= 1.0
        assert 0.0 <= e["val_acc"] <= 1.0
        assert e["stage"] == "fp"
    assert report.best_val_acc == max(e["val_acc"] for e in report.entries)


def test_train_is_deterministic():
    tr = gen_dataset(n_per_class=64, rounds=3, group_size=1, seed=0)
    va = gen_dataset(n_per_class=32, rounds=3, group_size=1, seed=1)
    reports = []
    for _ in range(2):
        m = build_model(small_cfg(), seed=5)
        _, rep = train(m, tr, va, TrainHyper(epochs=2, batch_size=32, seed=9))
        reports.append([(e["loss"], e["train_acc"], e["val_acc"])
                        for e in rep.entries])
    assert reports[0] == reports[1]


def test_train_validates_inputs():
    tr = gen_dataset(n_per_class=16, rounds=3, group_size=1, seed=0)
    other_g = gen_dataset(n_per_class=16, rounds=3, group_size=8, seed=0)
    other_r = gen_dataset(n_per_class=16, rounds=4, group_size=1, seed=0)
    m = build_model(small_cfg(), seed=0)
    with pytest.raises(ValueError):
        train(m, other_g, other_g, TrainHyper(epochs=1))
    with pytest.raises(ValueError):
        train(m, tr, other_r, TrainHyper(epochs=1))
    with pytest.raises(ValueError):
        train(m, tr, tr, TrainHyper(epochs=1, batch_size=1))


def test_train_loss_decreases_fp():
    tr = gen_dataset(n_per_class=512, rounds=3, group_size=1, seed=0)
    va = gen_dataset(n_per_class=128, rounds=3, group_size=1, seed=1)
    m = build_model(small_cfg(channels=8, dense_sizes=(16, 16)), seed=0)
    _, rep = train(m, tr, va, TrainHyper(epochs=5, batch_size=128, seed=0))
    losses = [e["loss"] for e in rep.entries]
    assert losses[-1] < losses[0]


def test_staged_schedule_transitions():
    tr = gen_dataset(n_per_class=64, rounds=3, group_size=1, seed=0)
    va = gen_dataset(n_per_class=32, rounds=3, group_size=1, seed=1)
    m = build_model(small_cfg(), seed=0)
    sched = QuantSchedule(warmup_epochs=1, weight_quant_epochs=1,
                          act_quant_epochs=1)
    out, rep = train(m, tr, va, TrainHyper(batch_size=32, seed=0), quant=sched)
    assert [e["stage"] for e in rep.entries] == ["fp", "weights", "full"]
    assert out.stage == "full"
    assert set(out.deltas) == set(out.quant_layer_names())
    assert all(float(d) > 0 for d in out.deltas.values())


# --------------------------------------------------- exact forward (oracle)

def ref_exact_forward(m: Model, bits):
    """Definition-level rational evaluation of one sample, python loops."""
    F = Fraction
    g = m.cfg.group_size

    def codes_of(name):
        w = np.asarray(m._weight_of(name), dtype=np.float64)
        d = m.delta_of(name)
        v = w / d
        return np.clip(np.sign(v) * np.floor(np.abs(v) + 0.5), -1, 1).astype(int)

    def bn_bit(bn, c, acc, delta):
        pre = F(float(bn.gamma[c])) * (F(delta) * acc - F(float(bn.running_mean[c])))
        pre = pre / F(nn.bn_sigma(bn.running_var[c], bn.eps))
        return 1 if pre + F(float(bn.beta[c])) > 0 else 0

    def conv(x, k):  # x [C,16,g] ints, k [O,C,kh,kw] ints, zero padded
        o, ci, kh, kw = k.shape
        out = np.zeros((o, 16, g), dtype=int)
        for oc in range(o):
            for h in range(16):
                for w in range(g):
                    acc = 0
                    for cc in range(ci):
                        for u in range(kh):
                            for v in range(kw):
                                hh = h + u - kh // 2
                                ww = w + v - kw // 2
                                if 0 <= hh < 16 and 0 <= ww < g:
                                    acc += int(k[oc, cc, u, v]) * int(x[cc, hh, ww])
                    out[oc, h, w] = acc
        return out

    x = bits.astype(int)
    s = conv(x, codes_of("conv0"))
    d0 = m.delta_of("conv0")
    h = np.array([[[bn_bit(m.bn0, c, int(s[c, i, j]), d0)
                    for j in range(g)] for i in range(16)]
                  for c in range(s.shape[0])])
    for bi, blk in enumerate(m.blocks):
        h0 = h
        s1 = conv(h0, codes_of(f"res{bi}.c1"))
        d1 = m.delta_of(f"res{bi}.c1")
        a1 = np.array([[[bn_bit(blk.bn1, c, int(s1[c, i, j]), d1)
                         for j in range(g)] for i in range(16)]
                       for c in range(s1.shape[0])])
        s2 = conv(a1, codes_of(f"res{bi}.c2")) + h0
        d2 = m.delta_of(f"res{bi}.c2")
        h = np.array([[[bn_bit(blk.bn2, c, int(s2[c, i, j]), d2)
                        for j in range(g)] for i in range(16)]
                      for c in range(s2.shape[0])])

    flat = h.reshape(-1)

    def dense_bits(xv, codes, bias, delta):
        outs = []
        for c in range(codes.shape[1]):
            acc = int(np.dot(xv, codes[:, c]))
            outs.append(1 if F(delta) * acc + F(float(bias[c])) > 0 else 0)
        return np.array(outs, dtype=int)

    f1 = dense_bits(flat, codes_of("dense1"), m.d1_b, m.delta_of("dense1"))
    f2 = dense_bits(f1, codes_of("dense2"), m.d2_b, m.delta_of("dense2"))
    oc = codes_of("out")
    s0 = int(np.dot(f2, oc[:, 0]))
    s1 = int(np.dot(f2, oc[:, 1]))
    do = m.delta_of("out")
    diff = F(do) * (s1 - s0) + F(float(m.out_b[1])) - F(float(m.out_b[0]))
    t = m.cfg.decision_threshold
    return 1 if diff >= F(math.log(t / (1.0 - t))) else 0


def randomized_quantized_model(seed, cfg=None):
    r = np.random.default_rng(seed)
    m = build_model(cfg or small_cfg(), seed=seed)
    for bn in [m.bn0] + [s for b in m.blocks for s in (b.bn1, b.bn2)]:
        bn.gamma[:] = r.normal(size=bn.gamma.shape).astype(np.float32)
        bn.beta[:] = r.normal(scale=0.5, size=bn.beta.shape).astype(np.float32)
        bn.running_mean[:] = r.normal(size=bn.running_mean.shape).astype(np.float32)
        bn.running_var[:] = (0.05 + np.abs(r.normal(size=bn.running_var.shape))
                             ).astype(np.float32)
    for b in (m.d1_b, m.d2_b, m.out_b):
        b[:] = r.normal(scale=0.3, size=b.shape).astype(np.float32)
    m.set_stage("full")
    for name in m.deltas:
        m.deltas[name][()] = float(0.05 + r.random())
    return m


def test_exact_forward_matches_definition_oracle():
    m = randomized_quantized_model(21)
    r = np.random.default_rng(2)
    bits = r.integers(0, 2, size=(40, 4, 16, 1)).astype(np.uint8)
    labels, scores = exact_bit_forward(m, bits)
    assert np.all((scores >= 0) & (scores <= 1))
    for i in range(len(bits)):
        assert labels[i] == ref_exact_forward(m, bits[i]), f"sample {i}"


def test_exact_forward_guards():
    m = build_model(small_cfg(), seed=0)
    bits = np.zeros((2, 4, 16, 1), dtype=np.uint8)
    with pytest.raises(ValueError):
        exact_bit_forward(m, bits)  # still fp stage
    m.set_stage("full")
    with pytest.raises(ValueError):
        exact_bit_forward(m, np.full((2, 4, 16, 1), 2.0))


def test_evaluate_routes_full_stage_through_exact_path():
    m = randomized_quantized_model(33)
    ds = gen_dataset(n_per_class=64, rounds=3, group_size=1, seed=3)
    acc, confusion = evaluate(m, ds)
    labels, _ = exact_bit_forward(m, ds.bits)
    expect = float(np.mean(labels == ds.labels))
    assert acc == expect
    assert sum(confusion.values()) == len(ds)


# ---------------------------------------------------------------- persistence

def test_save_load_roundtrip(tmp_path):
    m = randomized_quantized_model(5)
    path = tmp_path / "m.ndw"
    save_model(m, path)
    back = load_model(path)
    assert back.stage == "full"
    assert back.cfg == m.cfg
    assert set(back.deltas) == set(m.deltas)
    for k in m.deltas:
        assert float(back.deltas[k]) == float(m.deltas[k])
    bits = np.random.default_rng(0).integers(0, 2, size=(16, 4, 16, 1)).astype(np.uint8)
    la, sa = exact_bit_forward(m, bits)
    lb, sb = exact_bit_forward(back, bits)
    assert np.array_equal(la, lb)
    assert np.array_equal(sa, sb)


def test_save_load_fp_stage(tmp_path):
    m = build_model(small_cfg(), seed=11)
    path = tmp_path / "fp.ndw"
    save_model(m, path)
    back = load_model(path)
    assert back.stage == "fp" and back.deltas == {}
    x = np.random.default_rng(1).integers(0, 2, size=(4, 4, 16, 1)).astype(np.float32)
    assert np.array_equal(m.scores(x), back.scores(x))
