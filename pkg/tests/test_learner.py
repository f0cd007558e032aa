"""Learner math: reward shaping, n-step double-Q targets, training updates."""

import math

import numpy as np
import pytest

from fogduel import net
from fogduel.learner import (
    LearnerConfig,
    OptimizerState,
    assemble_targets,
    batch_loss,
    init_optimizer,
    n_step_targets,
    shaped_terminal_reward,
    sign_terminal_reward,
    sync_target,
    train_step,
)
from fogduel.replay import SegmentedReplay, StoredSequence
from oracles import random_target_instance, reward_oracle, unrolled_targets


class TestShapedReward:
    def test_equal_scores_zero_for_any_decay(self):
        for t in (0, 1, 57, 200):
            assert shaped_terminal_reward(88.0, 88.0, t) == 0.0

    def test_direct_value(self):
        assert shaped_terminal_reward(100.0, 50.0, 0) == 0.5

    def test_swap_negates_exactly(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            a, b = rng.uniform(0, 400, 2)
            t = int(rng.integers(0, 200))
            assert shaped_terminal_reward(a, b, t) == -shaped_terminal_reward(b, a, t)

    def test_matches_oracle_on_random_triples(self):
        rng = np.random.default_rng(1)
        for _ in range(2000):
            a, b = rng.uniform(0, 500, 2)
            t = float(rng.integers(0, 200))
            assert abs(shaped_terminal_reward(a, b, t) - reward_oracle(a, b, t)) <= 1e-12

    def test_bounds_and_strict_decay(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            a, b = rng.uniform(0, 500, 2)
            r0 = shaped_terminal_reward(a, b, 0, reward_decay=0.99)
            r1 = shaped_terminal_reward(a, b, 10, reward_decay=0.99)
            assert -1.0 <= r0 <= 1.0
            if a != b:
                assert abs(r1) < abs(r0)

    def test_negative_scores_rejected(self):
        with pytest.raises(ValueError):
            shaped_terminal_reward(-1.0, 5.0, 0)

    def test_both_zero_convention(self):
        assert shaped_terminal_reward(0.0, 0.0, 12) == 0.0

    def test_sign_variant_agrees_in_sign(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            a, b = rng.uniform(0, 300, 2)
            shaped = shaped_terminal_reward(a, b, int(rng.integers(0, 150)))
            sign = sign_terminal_reward(a, b)
            assert np.sign(shaped) == np.sign(sign)
            assert sign in (-1.0, 0.0, 1.0)


class TestTargets:
    def test_terminal_step_gets_raw_reward(self):
        q = np.zeros((4, 3))
        targets, mask = assemble_targets(q, q, 4, True, 0.625, 0.997, 3)
        assert targets[3] == 0.625
        assert mask[3]

    def test_terminal_decay_within_window(self):
        q = np.zeros((6, 3))
        lam, r = 0.99, -0.8
        targets, mask = assemble_targets(q, q, 6, True, r, lam, 3)
        # last four steps see the terminal within n=3
        for back in range(4):
            t = 5 - back
            assert targets[t] == pytest.approx(lam**back * r, abs=1e-15)
            assert mask[t]

    def test_constant_network_closed_form(self):
        q_bar = 0.37
        params = net.init_params(0, in_dim=4, enc_dim=4, cell_dim=4, n_actions=3)
        for _, arr in params.arrays():
            arr[...] = 0.0
        params.b_val[0] = q_bar
        seqs = [
            StoredSequence(
                opponent_id="x",
                features=np.random.default_rng(1).uniform(size=(8, 4)),
                actions=np.zeros(8, dtype=np.int64),
                valid_len=8,
                boundary_h=np.zeros(4),
                boundary_c=np.zeros(4),
                terminal=False,
                terminal_reward=None,
                episode_id=0,
                start_tick=0,
            )
        ]
        lam, n = 0.997, 3
        targets, mask = n_step_targets(seqs, params, params.copy(), lam, n)
        assert np.all(mask[0, : 8 - n])
        assert not np.any(mask[0, 8 - n :])
        assert np.allclose(targets[0, : 8 - n], lam**n * q_bar, atol=1e-12)

    def test_double_q_split_uses_online_argmax_target_value(self):
        # Craft q tables where the online argmax differs from the target's.
        q_online = np.array([[0.0, 0.0], [10.0, -1.0]])
        q_target = np.array([[0.0, 0.0], [2.0, 99.0]])
        targets, mask = assemble_targets(q_online, q_target, 2, False, None, 0.9, 1)
        assert mask[0] and not mask[1]
        assert targets[0] == pytest.approx(0.9 * 2.0, abs=1e-15)  # not 99

    def test_window_past_slice_end_is_masked(self):
        q = np.random.default_rng(2).standard_normal((5, 3))
        _, mask = assemble_targets(q, q, 5, False, None, 0.99, 3)
        # only t with t+n inside the slice survive
        assert list(mask) == [True, True, False, False, False]

    def test_padded_region_always_masked(self):
        q = np.random.default_rng(3).standard_normal((6, 3))
        _, mask = assemble_targets(q, q, 2, True, 0.5, 0.99, 3)
        assert not np.any(mask[2:])

    def test_against_unrolled_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(500):
            q_on, q_tg, length, terminal, reward, lam, n = random_target_instance(rng)
            got_t, got_m = assemble_targets(q_on, q_tg, length, terminal, reward, lam, n)
            want_t, want_m = unrolled_targets(q_on, q_tg, length, terminal, reward, lam, n)
            assert np.array_equal(got_m, want_m)
            assert np.all(np.abs(got_t[got_m] - want_t[want_m]) <= 1e-12)


def seeded_replay(n_sequences=40, terminal_every=3, seed=5, n_actions=10):
    rng = np.random.default_rng(seed)
    replay = SegmentedReplay(["opp"], segment_capacity=64, seed=seed)
    sequences = []
    for k in range(n_sequences):
        valid = int(rng.integers(4, 17))
        terminal = k % terminal_every == 0
        seq = StoredSequence(
            opponent_id="opp",
            features=np.zeros((16, 24)),
            actions=np.zeros(16, dtype=np.int64),
            valid_len=valid,
            boundary_h=np.zeros(64),
            boundary_c=np.zeros(64),
            terminal=terminal,
            terminal_reward=float(rng.uniform(-1, 1)) if terminal else None,
            episode_id=k,
            start_tick=0,
        )
        seq.features[:valid] = rng.uniform(0, 1, size=(valid, 24))
        seq.actions[:valid] = rng.integers(0, n_actions, size=valid)
        sequences.append(seq)
    replay.append("opp", sequences, list(rng.uniform(0.5, 2.0, n_sequences)))
    return replay


class TestTrainStep:
    def test_perfect_network_zero_loss_and_no_move(self):
        # All-zero net with zero terminal rewards: q == G == 0 everywhere.
        params = net.init_params(0)
        for _, arr in params.arrays():
            arr[...] = 0.0
        rng = np.random.default_rng(6)
        replay = SegmentedReplay(["opp"], segment_capacity=64, seed=6)
        seqs = []
        for k in range(32):
            seq = StoredSequence(
                opponent_id="opp",
                features=rng.uniform(size=(16, 24)),
                actions=rng.integers(0, 10, size=16).astype(np.int64),
                valid_len=16,
                boundary_h=np.zeros(64),
                boundary_c=np.zeros(64),
                terminal=True,
                terminal_reward=0.0,
                episode_id=k,
                start_tick=0,
            )
            seqs.append(seq)
        replay.append("opp", seqs)
        before = params.copy()
        report = train_step(replay, params, params.copy(), init_optimizer(params), LearnerConfig())
        assert report.loss == 0.0
        for (_, a), (_, b) in zip(params.arrays(), before.arrays()):
            assert np.array_equal(a, b)

    def test_single_step_loss_definition(self):
        # One stored step, terminal: loss must be exactly w * delta^2 / 2 with w=1.
        params = net.init_params(7)
        replay = SegmentedReplay(["opp"], segment_capacity=4, seed=7)
        seq = StoredSequence(
            opponent_id="opp",
            features=np.zeros((16, 24)),
            actions=np.zeros(16, dtype=np.int64),
            valid_len=1,
            boundary_h=np.zeros(64),
            boundary_c=np.zeros(64),
            terminal=True,
            terminal_reward=0.75,
            episode_id=0,
            start_tick=0,
        )
        seq.features[0] = np.random.default_rng(7).uniform(size=24)
        replay.append("opp", [seq])
        q, _ = net.forward(params, seq.features[:1])
        delta = q[0, 0] - 0.75
        cfg = LearnerConfig(batch_size=1)
        report = train_step(replay, params.copy(), params.copy(), init_optimizer(params), cfg)
        assert report.loss == pytest.approx(0.5 * delta**2, rel=1e-12)
        assert report.unmasked_steps == 1

    def test_bit_identical_across_reruns(self):
        def run():
            params = net.init_params(8)
            replay = seeded_replay(seed=8)
            opt = init_optimizer(params)
            cfg = LearnerConfig()
            losses = [
                train_step(replay, params, sync_target(params), opt, cfg).loss for _ in range(3)
            ]
            return losses, params

        losses1, params1 = run()
        losses2, params2 = run()
        assert losses1 == losses2
        for (_, a), (_, b) in zip(params1.arrays(), params2.arrays()):
            assert np.array_equal(a, b)

    def test_priorities_written_back(self):
        params = net.init_params(9)
        replay = seeded_replay(seed=9)
        report = train_step(replay, params, sync_target(params), init_optimizer(params), LearnerConfig())
        floors = {p for _, pairs in replay.raw_priorities().items() for _, p in pairs}
        # every sampled item now has priority |delta| + floor
        for priority in report.priorities:
            assert any(math.isclose(f, priority + 1e-3, rel_tol=0, abs_tol=1e-12) for f in floors)

    def test_gradient_clipping_engages(self):
        params = net.init_params(10)
        replay = seeded_replay(seed=10)
        cfg = LearnerConfig(grad_clip_norm=1e-9)
        report = train_step(replay, params, sync_target(params), init_optimizer(params), cfg)
        assert report.grad_norm >= 0.0  # reported pre-clip norm

    def test_loss_invariant_under_batch_permutation(self):
        rng = np.random.default_rng(11)
        q = rng.standard_normal((8, 16))
        t = rng.standard_normal((8, 16))
        mask = rng.random((8, 16)) < 0.7
        w = rng.uniform(0.2, 1.0, 8)
        base = batch_loss(q, t, mask, w)
        for _ in range(10):
            perm = rng.permutation(8)
            assert batch_loss(q[perm], t[perm], mask[perm], w[perm]) == base


class TestSyncTarget:
    def test_copy_is_bit_exact_and_independent(self):
        params = net.init_params(12)
        target = sync_target(params)
        for (_, a), (_, b) in zip(params.arrays(), target.arrays()):
            assert np.array_equal(a, b)
        params.w_enc += 1.0
        assert not np.array_equal(params.w_enc, target.w_enc)

    def test_target_untouched_by_training(self):
        params = net.init_params(13)
        target = sync_target(params)
        frozen = target.copy()
        replay = seeded_replay(seed=13)
        opt = init_optimizer(params)
        for _ in range(3):
            train_step(replay, params, target, opt, LearnerConfig())
        for (_, a), (_, b) in zip(target.arrays(), frozen.arrays()):
            assert np.array_equal(a, b)

    def test_after_sync_double_q_reduces_to_max(self):
        params = net.init_params(14)
        target = sync_target(params)
        rng = np.random.default_rng(14)
        q, _ = net.forward(params, rng.uniform(size=(5, 24)))
        qt, _ = net.forward(target, rng.uniform(size=(5, 24)))
        # same weights: valuing the online argmax under the target equals max
        row = q[2]
        assert row[np.argmax(row)] == np.max(row)
        assert np.array_equal(q, q)


class TestOptimizer:
    def test_moment_shapes_match(self):
        params = net.init_params(15)
        opt = init_optimizer(params)
        for (_, p), (_, m), (_, v) in zip(params.arrays(), opt.m.arrays(), opt.v.arrays()):
            assert p.shape == m.shape == v.shape

    def test_steps_counted(self):
        params = net.init_params(16)
        replay = seeded_replay(seed=16)
        opt = init_optimizer(params)
        for _ in range(4):
            train_step(replay, params, sync_target(params), opt, LearnerConfig())
        assert opt.step == 4
