"""Acceptance criteria 1-12, each at its stated tolerance.

Every test records one ``criterion N: PASS|FAIL ...`` line; the lines are
printed together in the pytest terminal summary. Training-based criteria
average over five seeds on the default synthetic dataset, and runs shared
between criteria are computed once per session.
"""

from __future__ import annotations

import functools
import math
import os

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from vflsim import cli, config as C, dimip as dm, engine, harness, nn, selftest
from vflsim.data import SyntheticSpec, batches, generate_synthetic
from vflsim.errors import VFLError
from vflsim.rng import stream

SEEDS = (0, 1, 2, 3, 4)
N_CLASSES = 10
CHANCE = 1.0 / N_CLASSES
FEW_SHOT = "attack:pmc[mlp,budget=0.01]"
FULL_LABEL = "attack:pmc[mlp,budget=all]"
LEAN = ("evaluate.standalone=false", "evaluate.scratch_passive=false",
        "evaluate.checkpoints=false", "evaluate.round_trace=false")
FULL_ATTACK_ONLY = "attacks=[{kind: pmc, head: mlp, labeled_budget: all, epochs: 30}]"
NO_ATTACKS = "attacks=[]"


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@functools.lru_cache(maxsize=None)
def runs(*overrides: str) -> dict[str, list[float]]:
    """Per-seed metrics of the default experiment under ``overrides``.

    A seed whose training fails numerically (a diverging baseline defense)
    contributes NaN for every metric and is listed under ``"failed"``.
    """
    cfg = C.load(None, list(overrides))
    out: dict[str, list[float]] = {"failed": []}
    per_seed = []
    for seed in SEEDS:
        try:
            per_seed.append(harness.run_seed(cfg, seed).metrics)
        except VFLError:
            per_seed.append(None)
            out["failed"].append(seed)
    keys = next((list(m) for m in per_seed if m), [])
    for k in keys:
        out[k] = [m[k] if m else math.nan for m in per_seed]
    return out


def mean(values) -> float:
    return float(np.mean(values))


def vanilla():
    return runs()


# ---------------------------------------------------------------- 1-3: exact suites


def test_criterion_1_gradient_exactness():
    check = selftest.check_gradients(range(20))
    report(1, check.passed, check.detail)
    assert check.passed, check.detail


def _monolithic_step(params, x1, x2, y, lr):
    """Centralized composite network, written out as straight-line algebra.

    ``params`` holds (W, b) for: extractor 1 layers a, b; extractor 2 layers
    a, b; head layers a, b. Both extractors end in relu.
    """
    (w1a, b1a), (w1b, b1b), (w2a, b2a), (w2b, b2b), (wha, bha), (whb, bhb) = params
    z1a = x1 @ w1a + b1a; a1a = np.maximum(z1a, 0)
    z1b = a1a @ w1b + b1b; h1 = np.maximum(z1b, 0)
    z2a = x2 @ w2a + b2a; a2a = np.maximum(z2a, 0)
    z2b = a2a @ w2b + b2b; h2 = np.maximum(z2b, 0)
    h = np.concatenate([h1, h2], axis=1)
    zha = h @ wha + bha; aha = np.maximum(zha, 0)
    logits = aha @ whb + bhb
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    n = len(y)
    d_logits = p.copy(); d_logits[np.arange(n), y] -= 1; d_logits /= n
    g_whb, g_bhb = aha.T @ d_logits, d_logits.sum(0)
    d_zha = (d_logits @ whb.T) * (zha > 0)
    g_wha, g_bha = h.T @ d_zha, d_zha.sum(0)
    d_h = d_zha @ wha.T
    r = h1.shape[1]
    grads = []
    for x, za, aa, zb, wb, dh in ((x1, z1a, a1a, z1b, w1b, d_h[:, :r]), (x2, z2a, a2a, z2b, w2b, d_h[:, r:])):
        d_zb = dh * (zb > 0)
        d_za = (d_zb @ wb.T) * (za > 0)
        grads += [(x.T @ d_za, d_za.sum(0)), (aa.T @ d_zb, d_zb.sum(0))]
    grads += [(g_wha, g_bha), (g_whb, g_bhb)]
    return [(-lr * gw, -lr * gb) for gw, gb in grads]


def test_criterion_2_monolithic_equivalence():
    ds = generate_synthetic(SyntheticSpec(n=400, seed=3))
    worst = 0.0
    for seed in range(3):
        fed = engine.build_federation(ds, engine.FederationConfig(), seed)
        before = [fed.active.extractor, fed.party(2).extractor, fed.active.head]
        flat_before = [p for net in before for p in net.params]
        batch = next(batches(ds, "train", 32, seed, 0))
        expected = _monolithic_step(flat_before, batch.parties[0], batch.parties[1], batch.labels, 0.01)
        engine.train_round(fed, batch)
        after = [p for net in (fed.active.extractor, fed.party(2).extractor, fed.active.head) for p in net.params]
        for (wa, ba), (wb, bb), (dw, db) in zip(after, flat_before, expected):
            worst = max(worst, np.abs((wa - wb) - dw).max(), np.abs((ba - bb) - db).max())
    ok = worst <= 1e-12
    report(2, ok, f"max |delta_vfl - delta_monolithic| = {worst:.3g} (<= 1e-12)")
    assert ok


def test_criterion_3_vclub_identities():
    check = selftest.check_vclub_identities()
    rng = stream(9, "acceptance", "vclub")
    lp = nn.log_softmax(rng.standard_normal((8, 5)))
    y = rng.integers(0, 5, size=8)
    diff = abs(selftest.expected_vclub_s_bruteforce(lp, y) - dm.vclub_full(lp, y))
    ok = check.passed and diff < 1e-12 and dm.vclub_s(lp, y, y) == 0.0
    report(3, ok, f"{check.detail} second_set_unbiased_diff={diff:.3g}")
    assert ok


# ---------------------------------------------------------------- 4-6: quitting and leakage


@pytest.mark.slow
def test_criterion_4_quit_ordering():
    r = vanilla()
    quit, alone, full = mean(r["acc_quit_2"]), mean(r["acc_standalone"]), mean(r["acc_all"])
    ok = alone - quit >= 0.03 and full - alone >= 0.03
    report(4, ok, f"quit {quit:.4f} < standalone {alone:.4f} < all {full:.4f} (gaps >= 0.03, 5 seeds)")
    assert ok


@pytest.mark.slow
def test_criterion_5_dropout_tradeoff():
    base = vanilla()
    low = runs("train.dropout_p=0.05", NO_ATTACKS, *LEAN)
    high = runs("train.dropout_p=0.5", NO_ATTACKS, *LEAN)
    gain = mean(low["acc_quit_2"]) - mean(base["acc_quit_2"])
    cost = mean(base["acc_all"]) - mean(low["acc_all"])
    gap = abs(mean(high["acc_quit_2"]) - mean(base["acc_standalone"]))
    ok = gain >= 0.04 and cost <= 0.02 and gap <= 0.03
    report(5, ok, f"p=0.05 quit gain {gain:+.4f} (>= 0.04), pre-quit cost {cost:+.4f} (<= 0.02); "
                  f"p=0.5 quit {mean(high['acc_quit_2']):.4f} vs standalone {mean(base['acc_standalone']):.4f} "
                  f"(|gap| {gap:.4f} <= 0.03)")
    assert ok


@pytest.mark.slow
def test_criterion_6_leakage():
    r = vanilla()
    attack, scratch = mean(r[FEW_SHOT]), mean(r["acc_scratch_passive"])
    ok = attack >= scratch - 0.05
    report(6, ok, f"PMC with 1% labels {attack:.4f} vs scratch party-2 model {scratch:.4f} (within 0.05)")
    assert ok


# ---------------------------------------------------------------- 7: defense trade-off

LAMBDAS = (0.1, 0.25, 0.5)
ATTACK_MATCH_SLACK = 0.02
BASELINE_GRID = {
    "ng": [("defense.ng_scale", v) for v in (0.003, 0.01, 0.03, 0.1)],
    "gc": [("defense.gc_rate", v) for v in (0.9, 0.99, 1.0)],
    "ppdl": [("defense.ppdl_theta", v) for v in (0.01, 0.001)],
    "dsgd": [("defense.dsgd_levels", v) for v in (1, 2)],
}


def dimip_run(lam: float):
    return runs(f"dimip.lambda={lam}", FULL_ATTACK_ONLY, *LEAN)


@pytest.mark.slow
def test_criterion_7_defense_tradeoff():
    ref_acc = mean(vanilla()["acc_all"])
    ref_attack = mean(vanilla()[FULL_LABEL])
    chosen = None
    lines = []
    for lam in LAMBDAS:
        r = dimip_run(lam)
        drop, attack = ref_acc - mean(r["acc_all"]), mean(r[FULL_LABEL])
        lines.append(f"lambda={lam}: drop {drop:+.4f} attack {attack:.4f}")
        if attack <= CHANCE + 0.05 and drop <= 0.04 and (chosen is None or drop < chosen[1]):
            chosen = (lam, drop, attack)
    ok = chosen is not None
    verdicts = []
    if chosen:
        lam, drop, attack = chosen
        for kind, grid in BASELINE_GRID.items():
            matched, best_attack = [], math.inf
            for key, value in grid:
                r = runs(f"defense.kind={kind}", f"{key}={value}", FULL_ATTACK_ONLY, *LEAN)
                if r["failed"]:
                    verdicts.append(f"{kind}@{value}: diverged on seeds {r['failed']}")
                    continue
                b_attack, b_drop = mean(r[FULL_LABEL]), ref_acc - mean(r["acc_all"])
                best_attack = min(best_attack, b_attack)
                if b_attack <= attack + ATTACK_MATCH_SLACK:
                    matched.append((value, b_drop))
                    ok &= b_drop >= 2 * drop
            if matched:
                verdicts.append(f"{kind}: matched at " + ", ".join(f"{v} drop {d:+.4f}" for v, d in matched))
            else:
                verdicts.append(f"{kind}: never reaches attack {attack + ATTACK_MATCH_SLACK:.4f} "
                                f"(best {best_attack:.4f}), dominated")
        detail = (f"undefended attack {ref_attack:.4f}; chosen lambda={lam} drop {drop:+.4f} (<= 0.04) "
                  f"attack {attack:.4f} (<= {CHANCE + 0.05:.2f}); baselines need drop >= {2 * drop:.4f}: "
                  + "; ".join(verdicts))
    else:
        detail = "no lambda meets both bounds: " + "; ".join(lines)
    report(7, ok, detail + " | sweep " + "; ".join(lines))
    assert ok


# ---------------------------------------------------------------- 8: lambda = 0


def test_criterion_8_lambda_zero_reduction():
    ds = generate_synthetic(SyntheticSpec(n=1000, seed=11))
    identical, rounds = True, 0
    for seed in (0, 1):
        plain = engine.build_federation(ds, engine.FederationConfig(), seed)
        zero = engine.build_federation(
            ds, engine.FederationConfig(defense=engine.DefenseConfig(kind="dimip"), dimip_lambda=0.0, aux_lr=0.03), seed)
        for epoch in range(2):
            for batch in batches(ds, "train", 32, seed, epoch):
                engine.train_round(plain, batch)
                engine.train_round(zero, batch)
                rounds += 1
                identical &= all(plain.parameters()[k].flat().tobytes() == zero.parameters()[k].flat().tobytes()
                                 for k in plain.parameters())
        identical &= zero.log[-1].L_A is not None  # the predictor really ran
    report(8, identical, f"active extractor, passive extractor and head byte-identical after each of {rounds} rounds (2 seeds)")
    assert identical


# ---------------------------------------------------------------- 9-10: ablation and combination

TRACKED = ("dimip.lambda=0.5", "evaluate.track_attack=true", NO_ATTACKS, *LEAN)


@pytest.mark.slow
def test_criterion_9_lr_ablation():
    with_lr = runs(*TRACKED)
    without = runs(*TRACKED, "dimip.use_lr_term=false")
    s_with, s_without = mean(with_lr["attack_floor_epoch"]), mean(without["attack_floor_epoch"])
    sd_with, sd_without = mean(with_lr["attack_tail_std"]), mean(without["attack_tail_std"])
    ok = s_with <= 0.5 * s_without and sd_with < sd_without
    report(9, ok, f"epochs to stay at floor {CHANCE + 0.05:.2f}: with shuffled-label term {s_with:.1f} vs without {s_without:.1f} "
                  f"(ratio {s_with / s_without:.2f} <= 0.5); tail std {sd_with:.4f} < {sd_without:.4f}")
    assert ok


@pytest.mark.slow
def test_criterion_10_combined():
    alone = dimip_run(0.5)
    both = runs("dimip.lambda=0.5", "train.dropout_p=0.05", FULL_ATTACK_ONLY, *LEAN)
    gain = mean(both["acc_quit_2"]) - mean(alone["acc_quit_2"])
    attack = mean(both[FULL_LABEL])
    ok = gain >= 0.04 and attack <= CHANCE + 0.05
    report(10, ok, f"after-quit {mean(both['acc_quit_2']):.4f} vs defense alone {mean(alone['acc_quit_2']):.4f} "
                   f"(gain {gain:+.4f} >= 0.04); attack {attack:.4f} (<= {CHANCE + 0.05:.2f})")
    assert ok


# ---------------------------------------------------------------- 11-12: determinism and protocol


def _record_bytes(root: str) -> dict[str, bytes]:
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            if f != "timing.tsv":
                path = os.path.join(dirpath, f)
                with open(path, "rb") as fh:
                    out[os.path.relpath(path, root)] = fh.read()
    return out


def test_criterion_11_determinism(tmp_path):
    small = ["dataset.n=600", "train.epochs=3",
             "attacks=[{kind: pmc, labeled_budget: 40, epochs: 5}, {kind: amc, labeled_budget: 40, epochs: 5, amc_boost: 2.0}]"]
    invocations = [
        ["train", "--seed", "7", "-o", "dimip.lambda=0.5", "-o", "train.dropout_p=0.1"],
        ["train", "--seed", "3", "-o", "defense.kind=ng", "-o", "defense.ng_scale=0.001"],
        ["sweep", "--axis", "train.dropout_p", "--values", "0,0.3", "-o", "seeds=[1,2]"],
    ]
    same = True
    for i, argv in enumerate(invocations):
        outputs = []
        for rep in range(2):
            root = tmp_path / f"inv{i}-{rep}"
            args = argv + [a for o in small for a in ("-o", o)] + ["--out", str(root)]
            assert cli.main(args) == 0
            outputs.append(_record_bytes(str(root)))
        same &= outputs[0] == outputs[1] and any(k.endswith("record.tsv") for k in outputs[0])
    report(11, same, f"{len(invocations)} train/sweep invocations repeated: result files byte-identical")
    assert same


def test_criterion_12_protocol_conservation_and_opacity():
    check = selftest.check_protocol()
    on = selftest._traced_rounds(True, ())
    off = selftest._traced_rounds(False, ())
    grads_differ = [e.digest for e in on.channel.events if e.kind == "grad"] != \
                   [e.digest for e in off.channel.events if e.kind == "grad"]
    ok = check.passed and grads_differ
    report(12, ok, f"{check.detail}; defended gradient payloads differ={grads_differ}")
    assert ok
