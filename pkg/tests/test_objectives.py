import math

import numpy as np
import pytest

from physforge.objectives import (
    CODEC_VOCAB_SIZE,
    Chunk,
    CodeSequence,
    FlowSample,
    ObjectiveError,
    PositionTriple,
    Segment,
    audio_gen_loss,
    finite_diff_grad,
    flow_matching_loss,
    flow_path,
    lm_loss,
    pack_positions,
)


class TestPackText:
    def test_three_tokens(self):
        positions, layout = pack_positions([Segment(kind="text", token_count=3)])
        assert positions == [PositionTriple(0, 0, 0), PositionTriple(1, 1, 1), PositionTriple(2, 2, 2)]
        assert layout == [Chunk("text", 0.0, 0.0, 3)]

    def test_t_equals_h_equals_w_and_strictly_increasing(self):
        positions, _ = pack_positions([Segment(kind="text", token_count=17)])
        for p in positions:
            assert p.t == p.h == p.w
        assert [p.t for p in positions] == list(range(17))


class TestPackAudio:
    def test_two_seconds_is_fifty_positions(self):
        positions, _ = pack_positions([Segment(kind="audio", duration_s=2.0)])
        assert len(positions) == 50

    def test_40ms_per_step(self):
        positions, _ = pack_positions([Segment(kind="audio", duration_s=0.2)])
        assert [p.t for p in positions] == [0, 1, 2, 3, 4]


class TestPackImage:
    def test_patches_share_one_t(self):
        positions, _ = pack_positions([Segment(kind="image", grid=(2, 3))])
        assert len(positions) == 6
        assert {p.t for p in positions} == {0}
        assert {(p.h, p.w) for p in positions} == {
            (r, c) for r in range(2) for c in range(3)
        }

    def test_offset_continues_after_grid(self):
        positions, _ = pack_positions(
            [Segment(kind="image", grid=(2, 3)), Segment(kind="text", token_count=1)]
        )
        assert positions[-1] == PositionTriple(3, 3, 3)  # max(grid) past the image base


class TestPackInterleaved:
    def make_av(self, duration):
        return [
            Segment(kind="video", duration_s=duration, fps=25.0),
            Segment(kind="audio", duration_s=duration),
        ]

    def test_five_second_six_chunk_order(self):
        _, layout = pack_positions(self.make_av(5.0))
        spans = [(c.kind, c.start_s, c.end_s) for c in layout]
        assert spans == [
            ("video", 0.0, 2.0), ("audio", 0.0, 2.0),
            ("video", 2.0, 4.0), ("audio", 2.0, 4.0),
            ("video", 4.0, 5.0), ("audio", 4.0, 5.0),
        ]

    def test_temporal_positions_never_decrease(self):
        positions, _ = pack_positions(
            [Segment(kind="text", token_count=4)]
            + self.make_av(5.0)
            + [Segment(kind="image", grid=(2, 2)), Segment(kind="text", token_count=2)]
        )
        ts = [p.t for p in positions]
        assert all(b >= a for a, b in zip(ts, ts[1:]))
        assert all(p.t >= 0 and p.h >= 0 and p.w >= 0 for p in positions)

    def test_deterministic(self):
        segs = self.make_av(4.0)
        assert pack_positions(segs) == pack_positions(segs)

    def test_video_frames_on_40ms_lattice(self):
        positions, layout = pack_positions(self.make_av(2.0))
        video_chunk = layout[0]
        assert video_chunk.n_positions == 50  # 25 fps over 2 s
        assert [p.t for p in positions[:50]] == list(range(50))

    def test_overlapping_unchunkable_av_is_error(self):
        segments = [
            Segment(kind="video", duration_s=4.0, start_time_s=0.0),
            Segment(kind="audio", duration_s=4.0, start_time_s=1.0),
        ]
        with pytest.raises(ObjectiveError, match="chunkable"):
            pack_positions(segments)

    def test_sequential_av_not_chunked(self):
        segments = [
            Segment(kind="video", duration_s=2.0, start_time_s=0.0),
            Segment(kind="audio", duration_s=2.0, start_time_s=2.0),
        ]
        positions, layout = pack_positions(segments)
        assert [c.kind for c in layout] == ["video", "audio"]
        assert len(positions) == 100

    def test_off_lattice_fps_quantizes_monotonically(self):
        # 30 fps frames do not land on the 40 ms lattice; adjacent frames may
        # share a temporal cell but positions must never decrease
        positions, _ = pack_positions(
            [Segment(kind="video", duration_s=3.0, fps=30.0), Segment(kind="audio", duration_s=3.0)]
        )
        ts = [p.t for p in positions]
        assert all(b >= a for a, b in zip(ts, ts[1:]))


def naive_nll(log_probs, targets, mask):
    """Independent oracle: explicit python accumulation."""
    total = 0.0
    count = 0
    for i, (row, target) in enumerate(zip(log_probs, targets)):
        if mask is None or mask[i]:
            total += -row[target]
            count += 1
    return total / count


class TestLmLoss:
    def test_one_hot_is_zero(self):
        log_probs = np.full((5, 4), -800.0)
        targets = [0, 3, 1, 2, 0]
        for i, t in enumerate(targets):
            log_probs[i, t] = 0.0
        assert lm_loss(log_probs, targets) == 0.0

    def test_uniform_vocab4_is_ln4(self):
        log_probs = np.full((6, 4), math.log(0.25))
        loss = lm_loss(log_probs, [0, 1, 2, 3, 0, 1])
        assert loss == pytest.approx(math.log(4.0), abs=1e-9)

    def test_matches_naive_summation_oracle(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(40, 11))
        log_probs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        targets = rng.integers(0, 11, size=40)
        mask = rng.random(40) > 0.3
        mask[0] = True
        expected = naive_nll(log_probs, targets, mask)
        assert lm_loss(log_probs, targets, mask) == pytest.approx(expected, abs=1e-12)

    def test_unnormalized_rejected(self):
        with pytest.raises(ObjectiveError, match="not normalized"):
            lm_loss(np.full((2, 4), -1.0), [0, 1])

    def test_empty_mask_rejected(self):
        log_probs = np.full((2, 4), math.log(0.25))
        with pytest.raises(ObjectiveError, match="no positions"):
            lm_loss(log_probs, [0, 1], [False, False])

    def test_out_of_vocab_target(self):
        log_probs = np.full((2, 4), math.log(0.25))
        with pytest.raises(ObjectiveError, match="vocabulary"):
            lm_loss(log_probs, [0, 4])

    def test_nonnegative_random(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            logits = rng.normal(size=(8, 6))
            log_probs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
            assert lm_loss(log_probs, rng.integers(0, 6, size=8)) >= 0.0


class TestAudioGenLoss:
    def test_perfect_prediction_zero(self):
        log_probs = np.full((3, CODEC_VOCAB_SIZE), -800.0)
        codes = [7, 4095, 0]
        for i, c in enumerate(codes):
            log_probs[i, c] = 0.0
        assert audio_gen_loss(log_probs, codes) == 0.0

    def test_uniform_is_ln4096(self):
        log_probs = np.full((4, CODEC_VOCAB_SIZE), -math.log(CODEC_VOCAB_SIZE))
        loss = audio_gen_loss(log_probs, [0, 1, 2, 3])
        assert loss == pytest.approx(math.log(4096.0), abs=1e-9)

    def test_equals_lm_loss_on_identical_inputs(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=(6, CODEC_VOCAB_SIZE))
        log_probs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        codes = rng.integers(0, CODEC_VOCAB_SIZE, size=6)
        assert audio_gen_loss(log_probs, codes) == pytest.approx(
            lm_loss(log_probs, codes), abs=1e-12
        )

    def test_out_of_vocab_code(self):
        log_probs = np.full((1, CODEC_VOCAB_SIZE), -math.log(CODEC_VOCAB_SIZE))
        with pytest.raises(ObjectiveError, match="audio code"):
            audio_gen_loss(log_probs, [4096])

    def test_wrong_width_rejected(self):
        with pytest.raises(ObjectiveError, match="4096"):
            audio_gen_loss(np.full((2, 8), -math.log(8)), [0, 1])


class TestFlowPath:
    def test_endpoints_exact(self):
        rng = np.random.default_rng(1)
        x0, x1 = rng.normal(size=8), rng.normal(size=8)
        assert np.array_equal(flow_path(x0, x1, 0.0), x0)
        assert np.array_equal(flow_path(x0, x1, 1.0), x1)

    def test_midpoint(self):
        assert flow_path(np.array([0.0, 2.0]), np.array([2.0, 0.0]), 0.5).tolist() == [1.0, 1.0]

    def test_t_out_of_range(self):
        with pytest.raises(ObjectiveError):
            flow_path(np.zeros(2), np.ones(2), 1.5)

    def test_dim_mismatch(self):
        with pytest.raises(ObjectiveError):
            flow_path(np.zeros(2), np.ones(3), 0.5)


class TestFlowMatchingLoss:
    def test_exact_velocity_is_zero(self):
        rng = np.random.default_rng(3)
        x0 = rng.normal(size=(32, 4))
        x1 = rng.normal(size=(32, 4))
        assert flow_matching_loss(x1 - x0, x0, x1) == pytest.approx(0.0, abs=1e-12)

    def test_scalar_constant_residual(self):
        x0 = np.zeros((10, 1))
        x1 = np.full((10, 1), 2.0)
        v = np.ones((10, 1))
        assert flow_matching_loss(v, x0, x1) == 1.0

    def test_least_squares_recovers_velocity(self):
        # fit v(x_t, t) = A [x_t, t, 1] by least squares on 1000 samples of a
        # single (x0, x1) pair; the optimum must reproduce x1 - x0
        rng = np.random.default_rng(4)
        dim = 3
        x0 = rng.normal(size=dim)
        x1 = rng.normal(size=dim)
        ts = rng.random(1000)
        xts = np.stack([flow_path(x0, x1, float(t)) for t in ts])
        design = np.hstack([xts, ts[:, None], np.ones((1000, 1))])
        target = np.tile(x1 - x0, (1000, 1))
        coef, *_ = np.linalg.lstsq(design, target, rcond=None)
        fitted = design @ coef
        assert np.abs(fitted - (x1 - x0)).max() < 1e-6
        loss = flow_matching_loss(
            fitted, np.tile(x0, (1000, 1)), np.tile(x1, (1000, 1))
        )
        assert loss < 1e-12

    def test_permutation_invariance(self):
        rng = np.random.default_rng(6)
        x0 = rng.normal(size=(16, 3))
        x1 = rng.normal(size=(16, 3))
        v = rng.normal(size=(16, 3))
        perm = rng.permutation(16)
        assert flow_matching_loss(v, x0, x1) == pytest.approx(
            flow_matching_loss(v[perm], x0[perm], x1[perm]), rel=1e-12
        )

    def test_strictly_positive_on_any_mismatch(self):
        x0 = np.zeros((4, 2))
        x1 = np.ones((4, 2))
        v = np.ones((4, 2))
        v[2, 1] += 1e-3
        assert flow_matching_loss(v, x0, x1) > 0.0

    def test_callable_form(self):
        x0 = np.zeros((8, 2))
        x1 = np.ones((8, 2))
        ts = np.linspace(0.0, 1.0, 8)
        loss = flow_matching_loss(lambda xt, t: np.ones(2), x0, x1, t=ts)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_empty_sample_set(self):
        with pytest.raises(ObjectiveError, match="empty"):
            flow_matching_loss(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2)))


class TestDomainTypes:
    def test_flow_sample_enforces_interpolant(self):
        x0 = np.array([0.0, 2.0])
        x1 = np.array([2.0, 0.0])
        sample = FlowSample.at(x0, x1, 0.5)
        assert sample.x_t.tolist() == [1.0, 1.0]
        with pytest.raises(ObjectiveError, match="interpolant"):
            FlowSample(x0=x0, x1=x1, t=0.5, x_t=np.array([9.0, 9.0]))

    def test_code_sequence_vocabulary_bound(self):
        assert len(CodeSequence(codes=(0, 4095))) == 2
        with pytest.raises(ObjectiveError, match="4096"):
            CodeSequence(codes=(4096,))

    def test_audio_gen_loss_accepts_code_sequence(self):
        log_probs = np.full((2, CODEC_VOCAB_SIZE), -math.log(CODEC_VOCAB_SIZE))
        wrapped = audio_gen_loss(log_probs, CodeSequence(codes=(1, 2)))
        assert wrapped == audio_gen_loss(log_probs, [1, 2])

    def test_codec_token_rate(self):
        from physforge.objectives import codec_token_count

        assert codec_token_count(1.0) == 40
        assert codec_token_count(2.5) == 100
        with pytest.raises(ObjectiveError):
            codec_token_count(0.0)


class TestFiniteDiff:
    def test_quadratic_gradient(self):
        rng = np.random.default_rng(7)
        point = rng.normal(size=5)
        grad = finite_diff_grad(lambda x: 0.5 * float(np.dot(x, x)), point, eps=1e-5)
        assert np.abs(grad - point).max() < 1e-6

    def test_flow_loss_parameter_gradient(self):
        # flow loss for scalar velocity parameter a: mean (a - delta)^2;
        # analytic gradient 2 (a - delta)
        x0 = np.zeros((50, 1))
        x1 = np.full((50, 1), 1.5)

        def f(a):
            return flow_matching_loss(np.full((50, 1), float(a[0])), x0, x1)

        point = np.array([0.7])
        numeric = finite_diff_grad(f, point, eps=1e-5)
        analytic = 2.0 * (0.7 - 1.5)
        rel = abs(numeric[0] - analytic) / abs(analytic)
        assert rel < 1e-4

    def test_eps_sweep_stability(self):
        point = np.array([0.3, -1.2])
        estimates = [
            finite_diff_grad(lambda x: float(np.sin(x).sum()), point, eps=eps)
            for eps in (1e-6, 1e-5, 1e-4)
        ]
        for est in estimates[1:]:
            assert np.abs(est - estimates[0]).max() < 1e-3

    def test_eps_validation(self):
        with pytest.raises(ObjectiveError):
            finite_diff_grad(lambda x: 0.0, np.zeros(1), eps=1e-2)

    def test_non_finite_rejected(self):
        with pytest.raises(ObjectiveError, match="non-finite"):
            finite_diff_grad(lambda x: float("nan"), np.zeros(2), eps=1e-5)
