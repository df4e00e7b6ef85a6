"""Acceptance criteria, one test per criterion.

Published reference values appear with the tolerance they are checked at;
derived values are re-established here against independent oracles (explicit
shape enumeration, plain-numpy reimplementations, finite differences) rather
than trusted from the library under test.
"""
import json
import math
from fractions import Fraction

import numpy as np
import pytest

from gradcheck import gradcheck
from uvit import (ArchConfig, ParseError, StageSpec, Tensor,
                  ablation_config, ablation_grid_configs, adapt_patch_kernel,
                  adapt_pos_embedding, count_flops, count_params,
                  fit_head_offset, format_strategy, forward, init_weights,
                  layernorm, mhsa, parse_strategy, plan_windows, preset,
                  relative_receptive_field, softmax_rows, scores_to_records,
                  TokenGrid, uniform_rrf, window_merge, window_partition)
from uvit.cli import main as cli_main

PUBLISHED_PARAMS_M = {"uvit-t-cls": 13.5, "uvit-s-cls": 21.7, "uvit-b-cls": 32.8}
PUBLISHED_GFLOPS = {"uvit-t-cls": 2.5, "uvit-s-cls": 4.0, "uvit-b-cls": 6.9}
# window strategy table at 896 px: (strategy, published end-to-end GFLOPs)
PUBLISHED_STRATEGY_TABLE = (
    ("[1]x18", 2961.9),
    ("[2^-1]x18", 1298.7),
    ("[16^-1]x4 -> [8^-1]x4 -> [4^-1]x4 -> [2^-1]x4 -> [1]x2", 1154.3),
    ("[8^-1]x9 -> [4^-1]x4 -> [2^-1]x3 -> [1]x2", 1131.2),
    ("[4^-1]x14 -> [2^-1]x2 -> [1]x2", 1160.1),
    ("[4^-1]x6 -> [2^-1]x12", 1160.1),
)


def report(n, text):
    print(f"[PASS] criterion {n}: {text}")


def enumerate_classification_params(d, depth, grid, patch):
    """Independent parameter oracle: list every tensor of the architecture
    and sum the element counts, with no calls into the cost model."""
    shapes = [(patch, patch, 3, d), (d,), (grid, grid, d), (d,), (d,)]
    for _ in range(depth):
        shapes += [(d,), (d,),                    # ln1
                   (d, 3 * d), (3 * d,),          # qkv
                   (d, d), (d,),                  # proj
                   (d,), (d,),                    # ln2
                   (d, 4 * d), (4 * d,),          # ffn in
                   (4 * d, d), (d,)]              # ffn out
    shapes += [(d,), (d,), (d, 1000), (1000,)]    # final norm, head
    return sum(int(np.prod(s)) for s in shapes)


def strategy_config(text, hidden=384, input_size=896):
    ws = parse_strategy(text)
    return ArchConfig(mode="dense", input=input_size, patch=8,
                      stages=(StageSpec(ws.depth(), hidden, Fraction(1, 8)),),
                      strategy=ws)


def test_c01_parameter_counts():
    widths = {"uvit-t-cls": 222, "uvit-s-cls": 288, "uvit-b-cls": 384}
    for name, d in widths.items():
        got = count_params(preset(name)).params
        want = enumerate_classification_params(d, 18, 14, 16)
        assert got == want, f"{name}: {got} vs enumerated {want}"
    b = count_params(preset("uvit-b-cls")).params
    published = PUBLISHED_PARAMS_M["uvit-b-cls"] * 1e6
    assert abs(b - published) / published < 0.02
    report(1, "parameter counts match an independent shape enumeration; "
              "the base model is within 2% of the published 32.8M")


def test_c02_classification_gflops():
    for name, published in PUBLISHED_GFLOPS.items():
        got = count_flops(preset(name)).gmacs
        assert abs(got - published) / published < 0.05, (name, got, published)
    report(2, "224-px classification costs within 5% of published 2.5/4.0/6.9 G")


def test_c03_strategy_cost_table():
    rows = [(strategy_config(text), 896, total)
            for text, total in PUBLISHED_STRATEGY_TABLE]
    fit = fit_head_offset(rows)
    worst = max(abs(r) for r in fit.residuals)
    assert worst < 0.015, f"worst residual {worst:.4%}"
    backbones = [count_flops(cfg, 896).gmacs for cfg, _, _ in rows]
    got_delta = backbones[0] - backbones[1]
    want_delta = PUBLISHED_STRATEGY_TABLE[0][1] - PUBLISHED_STRATEGY_TABLE[1][1]
    assert abs(got_delta - want_delta) / want_delta < 0.05
    assert backbones[4] == backbones[5]   # published totals tie exactly too
    report(3, "one constant head offset reconciles all six published "
              "window-strategy costs within 1.5%; cost deltas track the "
              "published deltas")


def test_c04_windowed_attention_kernel():
    rng = np.random.default_rng(40)
    d = 12
    values = rng.standard_normal((6, 6, d))
    from test_blocks import np_attention, random_block_weights
    w = random_block_weights(d, rng)
    grid = TokenGrid(6, 6, d, Tensor(values))
    out, _ = mhsa(grid, w, plan_windows(6, 6, Fraction(1)))
    want = np_attention(values.reshape(36, d), w)
    assert np.abs(out.values.data.reshape(36, d) - want).max() < 1e-12

    tokens = Tensor(rng.standard_normal((8, 8, 5)))
    for scale in (Fraction(1, 4), Fraction(1, 2)):
        layout = plan_windows(8, 8, scale)
        merged = window_merge(window_partition(tokens, layout), layout)
        assert (merged.data == tokens.data).all()

    n = 16 * 16
    for scale in (Fraction(1, 4), Fraction(1, 2), Fraction(1)):
        cfg = ablation_config(False, False, False, depths=2, hidden=d,
                              window_scales=scale, input_size=128, patch=8)
        assert (count_flops(cfg).mac_breakdown["attention"]
                == 2 * 2 * d * n * n * scale * scale)
    report(4, "attention matches a plain-numpy oracle at 1e-12, window "
              "partition round-trips bit-exactly, and the quadratic cost "
              "term follows the squared window scale exactly")


def test_c05_gradients():
    rng = np.random.default_rng(50)

    x = Tensor(rng.standard_normal((5, 7)), requires_grad=True)
    gradcheck(lambda: softmax_rows(x * 3.0).mean(), [x], rng=rng)

    g = Tensor(rng.standard_normal(6), requires_grad=True)
    b = Tensor(rng.standard_normal(6), requires_grad=True)
    y = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    gradcheck(lambda: layernorm(y, g, b).mean(), [y, g, b], rng=rng)

    z = Tensor(rng.standard_normal((3, 4, 2)), requires_grad=True)
    from uvit import bilinear_resize
    gradcheck(lambda: bilinear_resize(z, 5, 7).mean(), [z], rng=rng)

    cfg = ArchConfig(mode="dense", input=8, patch=2,
                     stages=(StageSpec(2, 12, Fraction(1, 2)),),
                     strategy=parse_strategy("[2^-1]x1 -> [1]x1"))
    ws = init_weights(cfg, seed=42, trainable=True)
    image = Tensor(rng.random((8, 8, 3)), requires_grad=True)
    leaves = [image] + [ws[name] for name in ws.names()]
    gradcheck(lambda: forward(cfg, ws, image).grids[0].values.mean(),
              leaves, rng=rng, samples=4)
    report(5, "analytic gradients agree with central differences below 1e-4 "
              "for the primitives and an end-to-end windowed encoder")


def test_c06_receptive_field_metric():
    for length in (1, 3, 9):
        assert relative_receptive_field(np.eye(length)) == 0.0
    for length in (2, 4, 8, 16):
        m = np.full((length, length), 1.0 / length)
        assert relative_receptive_field(m) == pytest.approx(
            uniform_rrf(length), abs=1e-14)
    assert uniform_rrf(2) == pytest.approx(0.375, abs=1e-15)
    rng = np.random.default_rng(60)
    for _ in range(1000):
        length = int(rng.integers(1, 20))
        m = rng.random((length, length))
        m /= m.sum(axis=1, keepdims=True)
        idx = np.arange(1, length + 1)
        dist = np.abs(idx[:, None] - idx[None, :])
        brute = np.mean((m * dist).sum(1) / np.maximum(idx, length - idx))
        r = relative_receptive_field(m)
        assert 0.0 <= r <= 1.0 and abs(r - brute) < 1e-12
    report(6, "receptive-field metric: identity gives 0, uniform matches the "
              "closed form (0.375 at L=2), 1000 random stochastic matrices "
              "stay in [0, 1] and match brute force")


def test_c07_strategy_notation():
    texts = [t for t, _ in PUBLISHED_STRATEGY_TABLE] + ["[2^-1]x28 -> [1]x4"]
    for text in texts:
        assert format_strategy(parse_strategy(text)) == text
    assert (format_strategy(parse_strategy("[2⁻¹]×28 → [1]×4"))
            == "[2^-1]x28 -> [1]x4")
    for bad in ("", "[5^-1]x2", "[2^-2]x2", "[2^-1]x0", "[2^-1]x2 -> "):
        with pytest.raises(ParseError) as err:
            parse_strategy(bad)
        assert err.value.position >= 0
        assert "position" in str(err.value)
    report(7, "window notation round-trips every published strategy "
              "(typeset variants included) and rejects malformed input "
              "with positions")


def test_c08_design_space():
    kinds = {(False, False): set(), (True, False): {"bilinear-merge"},
             (False, True): {"width-projection"},
             (True, True): {"strided-projection"}}
    for sd in (False, True):
        for mf in (False, True):
            for two_x in (False, True):
                if sd or mf or two_x:
                    cfg = ablation_config(sd, mf, two_x, depths=(1, 1, 1),
                                          hidden=12, window_scales=1,
                                          input_size=64, patch=8)
                else:
                    cfg = ablation_config(depths=2, hidden=12, window_scales=1,
                                          input_size=64, patch=8)
                assert (cfg.sd, cfg.mf, cfg.two_x) == (sd, mf, two_x)
                got = {t.kind for t in cfg.transitions()} - {"none"}
                assert got == kinds[(sd, two_x)]
    configs = ablation_grid_configs()
    assert len(configs) == 42
    base = [c for c in configs
            if not c.two_x and all(s.hidden == 384 for s in c.stages)]
    assert len(base) == 22
    assert {count_params(c).params for c in base} == {34_472_832}
    report(8, "all eight flag combinations build with the right transition "
              "kinds; every fixed-width row of the 42-point design grid "
              "shares one parameter count")


def test_c09_resolution_adaptation():
    rng = np.random.default_rng(90)
    kernel = rng.standard_normal((1, 1, 3, 4)) * np.ones((16, 16, 1, 1))
    out = adapt_patch_kernel(Tensor(kernel), 8, 8)
    assert (out.data == kernel[:8, :8]).all()

    pos = rng.standard_normal((1, 1, 5)) * np.ones((14, 14, 1))
    up = adapt_pos_embedding(Tensor(pos), 112, 112)
    assert up.dims == (112, 112, 5)
    assert (up.data == pos[0, 0]).all()

    same = Tensor(rng.standard_normal((14, 14, 5)))
    assert (adapt_pos_embedding(same, 14, 14).data == same.data).all()

    ramp = np.arange(4.0)[:, None, None] * np.ones((1, 4, 1))
    grown = adapt_pos_embedding(Tensor(ramp), 7, 7)
    assert np.abs(grown.data[:, 0, 0] - np.arange(7) * 0.5).max() < 1e-12
    report(9, "resolution adapters keep constants and linear ramps exact and "
              "are bit-exact at the native size")


def test_c10_cli_determinism(tmp_path, capsys):
    out_a = tmp_path / "a.json"
    out_b = tmp_path / "b.json"
    argv = ["forward", "--preset", "uvit-t-dense", "--input", "64",
            "--seed", "7"]
    assert cli_main(argv + ["--output", str(out_a)]) == 0
    assert cli_main(argv + ["--output", str(out_b)]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()
    (entry,) = json.loads(out_a.read_text())["outputs"]
    assert entry["dims"] == [8, 8, 222]
    assert len(entry["sha256"]) == 64

    cost_out = tmp_path / "cost.json"
    assert cli_main(["cost", "--preset", "uvit-b-cls", "--input", "224",
                     "--output", str(cost_out)]) == 0
    payload = json.loads(cost_out.read_text())
    assert abs(payload["gmacs"] - 6.9) / 6.9 < 0.05
    capsys.readouterr()
    report(10, "the CLI forward pass is bit-deterministic for a fixed seed "
               "and the cost command reproduces the published 6.9 G figure "
               "within 5%")
