"""Similarity scoring, the distance-based training loss, and EER."""

import numpy as np
import pytest

from evonas.errors import ContractError, DegenerateVectorError, UnknownIdError
from evonas.tensor import Tensor
from evonas.verifier import (
    EmbeddingBatch,
    ScoreParams,
    ScoreSet,
    Trial,
    TrialSet,
    centroid,
    compute_eer,
    fitness_from_eer,
    ge2e_style_loss,
    read_scores,
    read_trials,
    scaled_similarity,
    score_trials,
    softmax_xent_loss,
    write_scores,
    write_trials,
)

from helpers import eer_exhaustive, finite_diff


def params_with(w, b):
    p = ScoreParams()
    p.w = Tensor(float(w), requires_grad=True)
    p.b = Tensor(float(b), requires_grad=True)
    return p


def orthogonal_batch(n, m, d, scale=1.0):
    """N speakers whose embeddings sit on mutually orthogonal axes."""
    e = np.zeros((n, m, d))
    for j in range(n):
        e[j, :, j] = scale
    return e


class TestScaledSimilarity:
    def test_identical_vectors_unit_scale(self):
        a = np.array([0.3, -0.4, 1.2])
        out = scaled_similarity(a, a.copy(), params_with(1.0, 0.0))
        assert abs(out.item() - 1.0) < 1e-12

    def test_zero_scale_gives_offset(self):
        rng = np.random.default_rng(0)
        out = scaled_similarity(rng.standard_normal(5), rng.standard_normal(5),
                                params_with(0.0, -2.5))
        assert abs(out.item() + 2.5) < 1e-12

    def test_zero_norm_rejected(self):
        with pytest.raises(DegenerateVectorError):
            scaled_similarity(np.zeros(4), np.ones(4), ScoreParams())

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(1)
        av = rng.standard_normal(6)
        pv = rng.standard_normal(6)
        p = params_with(2.0, -1.0)
        a = Tensor(av, requires_grad=True)
        b = Tensor(pv, requires_grad=True)
        scaled_similarity(a, b, p).backward()

        def value():
            return scaled_similarity(a, b, p).item()

        for t, arr in [(a, av), (b, pv), (p.w, p.w.data), (p.b, p.b.data)]:
            numeric = finite_diff(value, np.atleast_1d(arr) if arr.ndim == 0 else arr)
            np.testing.assert_allclose(np.atleast_1d(t.grad), numeric,
                                       rtol=1e-4, atol=1e-7)


class TestCentroid:
    def test_identical_embeddings(self):
        e = np.tile(np.array([1.0, 2.0, 3.0]), (2, 4, 1))
        batch = EmbeddingBatch(Tensor(e))
        np.testing.assert_allclose(centroid(batch, 0).data, [1.0, 2.0, 3.0])

    def test_two_utterances_and_exclusion(self):
        u = np.array([1.0, 0.0])
        v = np.array([0.0, 1.0])
        e = np.stack([np.stack([u, v]), np.stack([u, u])])
        batch = EmbeddingBatch(Tensor(e))
        np.testing.assert_allclose(centroid(batch, 0).data, (u + v) / 2)
        np.testing.assert_allclose(centroid(batch, 0, exclude=0).data, v)

    def test_random_matches_mean_oracle(self):
        rng = np.random.default_rng(2)
        e = rng.standard_normal((3, 5, 8))
        batch = EmbeddingBatch(Tensor(e))
        for k in range(3):
            assert np.abs(centroid(batch, k).data - e[k].mean(axis=0)).max() < 1e-12
            excl = (e[k].sum(axis=0) - e[k, 2]) / 4
            assert np.abs(centroid(batch, k, exclude=2).data - excl).max() < 1e-12

    def test_batch_invariants_enforced(self):
        with pytest.raises(ContractError, match="N=1"):
            EmbeddingBatch(Tensor(np.ones((1, 3, 4))))
        with pytest.raises(ContractError, match="M=1"):
            EmbeddingBatch(Tensor(np.ones((3, 1, 4))))


class TestGe2eLoss:
    def test_hand_computed_orthogonal_case(self):
        # anchors equal their own centroid (cos 1), negatives orthogonal
        # (cos 0): per-anchor loss = 1 - sigmoid(1) + sigmoid(0)
        batch = EmbeddingBatch(Tensor(orthogonal_batch(3, 4, 8)))
        loss = ge2e_style_loss(batch, params_with(1.0, 0.0))
        assert abs(loss.item() - 0.768941) < 1e-6

    def test_limit_case_loss_approaches_zero(self):
        batch = EmbeddingBatch(Tensor(orthogonal_batch(3, 4, 8)))
        loss = ge2e_style_loss(batch, params_with(60.0, -30.0))
        assert loss.item() < 1e-9

    def test_loss_always_inside_0_2(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(2, 6))
            m = int(rng.integers(2, 6))
            e = rng.standard_normal((n, m, 16))
            loss = ge2e_style_loss(EmbeddingBatch(Tensor(e)),
                                   params_with(rng.uniform(0.1, 20),
                                               rng.uniform(-10, 10)))
            assert 0.0 < loss.item() < 2.0

    def test_increasing_positive_similarity_never_increases_loss(self):
        # moving every anchor toward its own axis leaves the (zero)
        # negative cosines fixed and must monotonically shrink the loss
        p = params_with(3.0, -1.0)
        rng = np.random.default_rng(4)
        base = orthogonal_batch(4, 3, 12)
        # per-utterance on-axis magnitude spread so anchors != centroid
        base *= rng.uniform(0.5, 1.5, size=(4, 3))[:, :, None]
        off_axis = np.zeros_like(base)
        for j in range(4):
            off_axis[j, :, 4 + j] = rng.uniform(0.5, 1.0, size=3)
        losses = []
        for t in np.linspace(0.0, 0.9, 7):
            e = base + (1.0 - t) * off_axis
            losses.append(ge2e_style_loss(EmbeddingBatch(Tensor(e)), p).item())
        assert all(a >= b - 1e-12 for a, b in zip(losses, losses[1:]))

    def test_invariant_to_speaker_and_utterance_order(self):
        rng = np.random.default_rng(5)
        e = rng.standard_normal((4, 3, 10))
        p = params_with(5.0, -2.0)
        base = ge2e_style_loss(EmbeddingBatch(Tensor(e)), p).item()
        perm_s = e[rng.permutation(4)]
        perm_u = e[:, rng.permutation(3)]
        assert abs(ge2e_style_loss(EmbeddingBatch(Tensor(perm_s)), p).item()
                   - base) < 1e-12
        assert abs(ge2e_style_loss(EmbeddingBatch(Tensor(perm_u)), p).item()
                   - base) < 1e-12

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(6)
        ev = rng.standard_normal((3, 3, 6))
        p = params_with(2.0, -1.0)
        e = Tensor(ev, requires_grad=True)
        ge2e_style_loss(EmbeddingBatch(e), p).backward()
        numeric = finite_diff(
            lambda: ge2e_style_loss(EmbeddingBatch(e), p).item(), ev)
        np.testing.assert_allclose(e.grad, numeric, rtol=1e-4, atol=1e-7)

    def test_softmax_alias(self):
        loss = softmax_xent_loss(Tensor(np.zeros(4)), 0)
        assert abs(loss.item() - np.log(4)) < 1e-12


class TestScoreParams:
    def test_clamp_keeps_scale_positive(self):
        p = ScoreParams()
        p.w.data = np.asarray(-3.0)
        p.clamp()
        assert float(p.w.data) == ScoreParams.W_FLOOR


def toy_embeddings():
    rng = np.random.default_rng(7)
    emb = {f"u{i}": rng.standard_normal(8) for i in range(6)}
    enroll = {"spkA": ("u0", "u1"), "spkB": ("u2", "u3")}
    trials = [
        Trial("spkA", "u4", True),
        Trial("spkB", "u4", False),
        Trial("spkA", "u5", False),
        Trial("spkB", "u5", True),
    ]
    return emb, TrialSet(trials, enroll)


class TestScoreTrials:
    def test_centroid_self_score_is_w_plus_b(self):
        emb, _ = toy_embeddings()
        c = (emb["u0"] + emb["u1"]) / 2
        emb["u4"] = c
        ts = TrialSet([Trial("spkA", "u4", True), Trial("spkA", "u5", False)],
                      {"spkA": ("u0", "u1")})
        out = score_trials(emb, ts, params_with(3.0, -0.5))
        assert abs(out.scores[0] - (3.0 - 0.5)) < 1e-12

    def test_invariant_to_enrollment_order(self):
        emb, ts = toy_embeddings()
        swapped = TrialSet(ts.trials, {"spkA": ("u1", "u0"),
                                       "spkB": ("u3", "u2")})
        p = params_with(2.0, 0.0)
        a = score_trials(emb, ts, p).scores
        b = score_trials(emb, swapped, p).scores
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_matches_direct_recomputation(self):
        emb, ts = toy_embeddings()
        p = params_with(4.0, -1.0)
        out = score_trials(emb, ts, p)
        for trial, score in zip(ts.trials, out.scores):
            c = np.mean([emb[u] for u in ts.enroll[trial.speaker]], axis=0)
            t = emb[trial.utterance]
            want = 4.0 * np.dot(c, t) / (np.linalg.norm(c) * np.linalg.norm(t)) - 1.0
            assert abs(score - want) < 1e-12

    def test_missing_id_named(self):
        emb, ts = toy_embeddings()
        del emb["u4"]
        with pytest.raises(UnknownIdError, match="u4"):
            score_trials(emb, ts, ScoreParams())


class TestComputeEer:
    def test_perfect_separation(self):
        s = ScoreSet(np.array([0.9, 0.8, 0.1, 0.2]),
                     np.array([True, True, False, False]))
        assert compute_eer(s) == 0.0

    def test_identical_multisets_are_chance(self):
        s = ScoreSet(np.array([0.3, 0.7, 0.3, 0.7]),
                     np.array([True, True, False, False]))
        assert compute_eer(s) == 0.5

    def test_vertex_convention_case(self):
        s = ScoreSet(np.array([0.8, 0.4, 0.6, 0.2]),
                     np.array([True, True, False, False]))
        assert compute_eer(s) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(ContractError):
            compute_eer(np.array([0.1, 0.2]), np.array([True, True]))

    def test_equals_exhaustive_oracle_on_random_sets(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            n = int(rng.integers(2, 400))
            scores = np.round(rng.standard_normal(n), 2)  # force ties
            labels = rng.random(n) < rng.uniform(0.2, 0.8)
            if labels.all() or not labels.any():
                continue
            assert compute_eer(scores, labels) == eer_exhaustive(scores, labels)

    def test_invariant_under_strictly_increasing_transform(self):
        rng = np.random.default_rng(9)
        scores = rng.standard_normal(300)
        labels = rng.random(300) < 0.3
        base = compute_eer(scores, labels)
        assert compute_eer(np.exp(scores), labels) == base
        assert compute_eer(3.0 * scores + 7.0, labels) == base

    def test_fitness_fold(self):
        assert abs(fitness_from_eer(0.046) - 0.954) < 1e-12


class TestFileFormats:
    def test_trial_file_round_trip(self, tmp_path):
        _, ts = toy_embeddings()
        path = tmp_path / "trials.txt"
        write_trials(path, ts)
        back = read_trials(path, ts.enroll)
        assert back.trials == ts.trials

    def test_score_file_round_trip(self, tmp_path):
        s = ScoreSet(np.array([0.125, -3.75, 0.1]),
                     np.array([True, False, True]))
        path = tmp_path / "scores.txt"
        write_scores(path, s)
        back = read_scores(path)
        np.testing.assert_array_equal(back.scores, s.scores)
        np.testing.assert_array_equal(back.labels, s.labels)

    def test_bad_lines_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("0.5 maybe\n")
        with pytest.raises(ContractError, match="bad score line"):
            read_scores(path)
