import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vflsim import dimip as dm, engine, nn
from vflsim.data import SyntheticSpec, batches, generate_synthetic
from vflsim.defenses import DefenseConfig
from vflsim.errors import ConfigError, InputError
from vflsim.rng import stream
from vflsim.selftest import _boundary_fd, expected_vclub_s_bruteforce


def log_probs(seed, b, c):
    return nn.log_softmax(stream(seed, "lp").standard_normal((b, c)))


class TestVclubS:
    def test_identical_shuffle_is_zero(self):
        lp = log_probs(0, 6, 4)
        y = np.array([0, 1, 2, 3, 0, 1])
        assert dm.vclub_s(lp, y, y) == 0.0

    def test_uniform_predictor_is_zero(self):
        lp = np.full((5, 3), -math.log(3))
        assert dm.vclub_s(lp, [0, 1, 2, 0, 1], [2, 2, 0, 1, 0]) == 0.0

    def test_hand_computed(self):
        lp = np.log([[0.9, 0.1], [0.2, 0.8]])
        assert dm.vclub_s(lp, [0, 1], [1, 0]) == pytest.approx((math.log(9) + math.log(4)) / 2, rel=1e-14)
        assert dm.vclub_s(lp, [0, 1], [1, 0]) == pytest.approx(1.7918, abs=1e-4)

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_antisymmetric_under_swap(self, seed):
        r = stream(seed, "swap")
        lp = nn.log_softmax(r.standard_normal((7, 4)))
        y, ys = r.integers(0, 4, 7), r.integers(0, 4, 7)
        assert dm.vclub_s(lp, y, ys) == -dm.vclub_s(lp, ys, y)

    @pytest.mark.parametrize("seed", range(4))
    def test_unbiased_against_full_pairing(self, seed):
        lp = log_probs(seed, 8, 3)
        y = stream(seed, "y").integers(0, 3, 8)
        assert abs(expected_vclub_s_bruteforce(lp, y) - dm.vclub_full(lp, y)) < 1e-12

    def test_bruteforce_oracle_small_case_by_hand(self):
        # n=2: four equally likely negative assignments, enumerated explicitly
        lp = np.log([[0.7, 0.3], [0.4, 0.6]])
        y = np.array([0, 1])
        estimates = [dm.vclub_s(lp, y, [y[a], y[b]]) for a in range(2) for b in range(2)]
        assert expected_vclub_s_bruteforce(lp, y) == pytest.approx(np.mean(estimates), abs=1e-15)

    def test_label_out_of_range(self):
        with pytest.raises(InputError):
            dm.vclub_s(log_probs(0, 2, 2), [0, 2], [0, 1])


class TestShuffledLabels:
    def test_constant_pool(self):
        assert set(dm.sample_shuffled(np.full(10, 3), 50, stream(0, "s")).tolist()) == {3}

    def test_frequencies_match_pool(self):
        pool = np.array([0] * 5 + [1] * 3 + [2] * 2)
        draws = dm.sample_shuffled(pool, 100_000, stream(1, "s"))
        np.testing.assert_allclose(np.bincount(draws) / draws.size, [0.5, 0.3, 0.2], atol=0.01)

    def test_seeded(self):
        pool = np.arange(20)
        assert np.array_equal(dm.sample_shuffled(pool, 9, stream(2, "s")), dm.sample_shuffled(pool, 9, stream(2, "s")))

    def test_empty_pool(self):
        with pytest.raises(InputError):
            dm.sample_shuffled(np.array([], dtype=int), 3, stream(0, "s"))


def make_state(seed=0, lam=0.5, rep_dim=4, c=3, lr=0.05):
    aux = nn.init_network(dm.aux_layers(rep_dim, c, 16), stream(seed, "aux"))
    return dm.DimipState(aux, lam, stream(seed, "shuffle"), lr)


class TestAuxFitting:
    def test_zero_lr_unchanged(self):
        st_ = make_state()
        before = st_.aux
        r = stream(0, "h")
        dm.fit_aux_step(st_, r.standard_normal((8, 4)), r.integers(0, 3, 8), lr=0.0)
        assert st_.aux == before

    def test_separable_batch_drives_log_likelihood_to_zero(self):
        st_ = make_state(lr=0.2)
        y = np.repeat(np.arange(3), 6)
        h = np.eye(4)[y] * 3.0
        values = [dm.fit_aux_step(st_, h, y) for _ in range(500)]
        ema = []
        acc = values[0]
        for v in values:
            acc = 0.9 * acc + 0.1 * v
            ema.append(acc)
        assert ema[-1] > ema[50] > ema[0]
        assert dm.log_likelihood(st_.aux, h, y) > -0.05

    @pytest.mark.parametrize("seed", range(5))
    def test_small_step_is_ascent(self, seed):
        st_ = make_state(seed)
        r = stream(seed, "h")
        h, y = r.standard_normal((10, 4)), r.integers(0, 3, 10)
        before = dm.log_likelihood(st_.aux, h, y)
        dm.fit_aux_step(st_, h, y, lr=1e-3)
        assert dm.log_likelihood(st_.aux, h, y) >= before

    def test_log_likelihood_nonpositive(self):
        st_ = make_state()
        r = stream(3, "h")
        assert dm.log_likelihood(st_.aux, r.standard_normal((5, 4)), r.integers(0, 3, 5)) <= 0

    def test_lambda_domain(self):
        with pytest.raises(InputError):
            make_state(lam=1.5)


class TestBoundaryGradient:
    @pytest.mark.parametrize("seed", range(20))
    def test_matches_finite_differences(self, seed):
        assert _boundary_fd(seed) < 1e-4

    def test_losses_reported(self):
        st_ = make_state()
        r = stream(4, "h")
        h, y, ys = r.standard_normal((6, 4)), r.integers(0, 3, 6), r.integers(0, 3, 6)
        _, la, lr_, est = dm.representation_gradient(st_, h, y, ys)
        assert la <= 0 and lr_ >= 0
        lp = nn.log_softmax(nn.predict(st_.aux, h))
        assert est == pytest.approx(dm.vclub_s(lp, y, ys), abs=1e-12)

    def test_without_lr_term_gradient_is_la_only(self):
        st_ = make_state()
        st_.use_lr_term = False
        r = stream(5, "h")
        h, y, ys = r.standard_normal((6, 4)), r.integers(0, 3, 6), r.integers(0, 3, 6)
        g, *_ = dm.representation_gradient(st_, h, y, ys)
        t = nn.forward(st_.aux, h)
        expected = nn.backward(st_.aux, t, -nn.cross_entropy_logits(t.output, y)[1]).input_grad
        np.testing.assert_array_equal(g, expected)


@pytest.fixture(scope="module")
def tiny():
    return generate_synthetic(SyntheticSpec(n=240, n_classes=3, dims=(4, 3), informativeness=(1.0, 1.0),
                                            class_separation=3.0, coarse_parties=(), confound=0.0, seed=8))


def build(ds, lam, seed=0, defended=True):
    cfg = engine.FederationConfig(extractor_hidden=6, rep_dim=4, head_hidden=8, aux_hidden=8, lr=0.05,
                                  defense=DefenseConfig(kind="dimip" if defended else "none"), dimip_lambda=lam)
    return engine.build_federation(ds, cfg, seed, record=True)


class TestDefendedRound:
    def test_lambda_zero_outgoing_gradient_bit_exact(self, tiny):
        a, b = build(tiny, 0.0), build(tiny, 0.0, defended=False)
        for batch in batches(tiny, "train", 16, 0, 0):
            engine.dimip_round(a, batch)
            engine.train_round(b, batch)
        ga = [e.digest for e in a.channel.events if e.kind == "grad"]
        gb = [e.digest for e in b.channel.events if e.kind == "grad"]
        assert ga == gb
        assert all(a.parameters()[k] == b.parameters()[k] for k in a.parameters())
        assert a.dimip.aux != build(tiny, 0.0).dimip.aux  # the predictor still trained

    def test_lambda_one_active_side_still_trains_on_task_loss(self, tiny):
        a, b = build(tiny, 1.0), build(tiny, 0.0, defended=False)
        batch = next(batches(tiny, "train", 16, 0, 0))
        engine.dimip_round(a, batch)
        engine.train_round(b, batch)
        # first round: identical active-side updates, different outgoing messages
        assert a.active.head == b.active.head and a.active.extractor == b.active.extractor
        assert a.party(2).extractor != b.party(2).extractor

    def test_lambda_one_message_has_no_task_term(self, tiny):
        fed = build(tiny, 1.0)
        batch = next(batches(tiny, "train", 16, 0, 0))
        aux_before = fed.dimip.aux
        h2 = nn.predict(fed.party(2).extractor, batch.parties[1])
        replay = dm.DimipState(aux_before, 1.0, stream(0, "dimip-shuffle"), fed.dimip.aux_lr)
        dm.fit_aux_step(replay, h2, batch.labels)
        ys = dm.sample_shuffled(fed.active.label_pool, len(batch.labels), replay.rng)
        expected, *_ = dm.representation_gradient(replay, h2, batch.labels, ys)
        captured = {}
        original = fed.party(2).receive
        fed.party(2).receive = lambda msg: (captured.setdefault("g", msg.payload), original(msg))
        engine.dimip_round(fed, batch)
        np.testing.assert_array_equal(captured["g"], expected)

    def test_round_log_has_all_losses(self, tiny):
        fed = build(tiny, 0.5)
        engine.fit(fed, tiny, 1, 16)
        rec = fed.log[-1]
        assert rec.L_A <= 0 and rec.L_R >= 0 and rec.vclub_s is not None

    def test_trace_layout_unchanged(self, tiny):
        on, off = build(tiny, 0.5), build(tiny, 0.5, defended=False)
        engine.fit(on, tiny, 1, 16)
        engine.fit(off, tiny, 1, 16)
        layout = lambda f: [(e.kind, e.party, e.round, e.shape) for e in f.channel.events]
        assert layout(on) == layout(off)

    def test_more_than_two_parties_rejected(self, three_party_ds):
        with pytest.raises(ConfigError):
            build(three_party_ds, 0.5)

    def test_dimip_round_requires_defense(self, tiny):
        with pytest.raises(ConfigError):
            engine.dimip_round(build(tiny, 0.5, defended=False), next(batches(tiny, "train", 16, 0, 0)))


def test_predictor_accuracy_falls_toward_chance():
    ds = generate_synthetic(SyntheticSpec(n=1500, seed=4))
    cfg = engine.FederationConfig(defense=DefenseConfig(kind="dimip"), dimip_lambda=0.5, aux_lr=0.03)
    fed = engine.build_federation(ds, cfg, 0)
    test_x = ds.party_features[1][ds.test_idx]
    test_y = ds.labels[ds.test_idx]
    acc = []

    def on_epoch(f, _):
        h = f.party(2).infer(test_x)
        acc.append(float((nn.predict(f.dimip.aux, h).argmax(1) == test_y).mean()))

    engine.fit(fed, ds, 20, 32, on_epoch=on_epoch)
    window = np.convolve(acc, np.ones(5) / 5, mode="valid")
    assert window[-1] <= 0.1 + 0.05
    assert window[-1] < max(acc[:3])
