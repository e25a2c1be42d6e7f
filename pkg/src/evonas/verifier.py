"""Verification backend: similarity scoring, training losses, and EER.

The training loss pulls each anchor embedding toward its own speaker's
centroid (computed without the anchor) and pushes it away from the
hardest other-speaker centroid, through a learnable scaled cosine
d(a, p) = w*cos(a, p) + b squashed by a sigmoid.
"""

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from evonas import tensor as T
from evonas.errors import ContractError, DegenerateVectorError, UnknownIdError
from evonas.tensor import Tensor


@dataclass
class ScoreParams:
    """Learnable scale and offset of the similarity score.

    w starts high and b negative so sigmoid(w*cos + b) spans (0, 1) over
    the cosine range at initialization; w is clamped positive after every
    optimizer step.
    """

    w: Tensor = field(default_factory=lambda: Tensor(10.0, requires_grad=True))
    b: Tensor = field(default_factory=lambda: Tensor(-5.0, requires_grad=True))

    W_FLOOR = 1e-6

    def clamp(self):
        if self.w.data < self.W_FLOOR:
            self.w.data = np.asarray(self.W_FLOOR, dtype=np.float64)

    def parameters(self):
        return [self.w, self.b]

    def values(self):
        return float(self.w.data), float(self.b.data)


@dataclass(frozen=True)
class Trial:
    speaker: str
    utterance: str
    target: bool


@dataclass
class TrialSet:
    """Verification trials plus the enrollment utterances per speaker."""

    trials: list
    enroll: dict

    def __post_init__(self):
        labels = {t.target for t in self.trials}
        if labels != {True, False}:
            raise ContractError(
                "trial set needs both target and non-target trials")


@dataclass
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray


def _norm(v, what):
    n = np.linalg.norm(v)
    if n == 0.0:
        raise DegenerateVectorError(f"{what} has zero norm")
    return n


def scaled_similarity(a, p, params):
    """Differentiable w*cos(a, p) + b as a scalar Tensor."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    p = p if isinstance(p, Tensor) else Tensor(p)
    _norm(a.data, "first vector")
    _norm(p.data, "second vector")
    dot = T.tsum(a * p)
    na = T.sqrt(T.tsum(a * a))
    nb = T.sqrt(T.tsum(p * p))
    cos = dot / (na * nb)
    return params.w * cos + params.b


@dataclass
class EmbeddingBatch:
    """Embeddings of N speakers x M utterances, [N, M, D]."""

    embeddings: Tensor
    speaker_ids: tuple = ()

    def __post_init__(self):
        if self.embeddings.ndim != 3:
            raise ContractError(
                f"embedding batch must be [N,M,D], got {self.embeddings.shape}")
        n, m, _ = self.embeddings.shape
        if n < 2 or m < 2:
            raise ContractError(
                f"need at least 2 speakers and 2 utterances, got N={n}, M={m}")


def centroid(batch, speaker, exclude=None):
    """Mean embedding of one speaker, optionally excluding one utterance.

    Analysis helper over the batch values; the training loss computes its
    centroids internally so gradients flow there.
    """
    e = batch.embeddings.data
    n, m, _ = e.shape
    if exclude is None:
        return Tensor(e[speaker].mean(axis=0))
    if m < 2:
        raise ContractError("cannot exclude an utterance when M == 1")
    total = e[speaker].sum(axis=0) - e[speaker, exclude]
    return Tensor(total / (m - 1))


def ge2e_style_loss(batch, params):
    """Mean over anchors of 1 - sigmoid(d_pos) + max_k sigmoid(d_neg_k).

    d_pos scores the anchor against its own speaker's anchor-excluded
    centroid; d_neg_k against speaker k's full centroid, maximized over
    k != anchor speaker.  Every per-anchor term lies in (0, 2).
    """
    e = batch.embeddings
    n, m, d = e.shape
    if np.any(np.linalg.norm(e.data, axis=2) == 0.0):
        raise DegenerateVectorError("an embedding has zero norm")

    sums = T.tsum(e, axis=1, keepdims=True)            # [N,1,D]
    c_excl = (sums - e) * (1.0 / (m - 1))              # [N,M,D]
    c_full = T.reshape(sums, (n, d)) * (1.0 / m)       # [N,D]

    norm_e = T.sqrt(T.tsum(e * e, axis=2))             # [N,M]
    norm_ce = T.sqrt(T.tsum(c_excl * c_excl, axis=2))  # [N,M]
    norm_cf = T.sqrt(T.tsum(c_full * c_full, axis=1))  # [N]
    if np.any(norm_ce.data == 0.0) or np.any(norm_cf.data == 0.0):
        raise DegenerateVectorError("a centroid has zero norm")

    cos_pos = T.tsum(e * c_excl, axis=2) / (norm_e * norm_ce)          # [N,M]
    dots = T.matmul(T.reshape(e, (n * m, d)), T.transpose(c_full))     # [NM,N]
    denom = T.reshape(norm_e, (n * m, 1)) * T.reshape(norm_cf, (1, n))
    cos_neg = T.reshape(dots / denom, (n, m, n))                       # [N,M,N]

    d_pos = params.w * cos_pos + params.b
    d_neg = params.w * cos_neg + params.b
    sig_neg = T.sigmoid(d_neg)
    same = np.eye(n, dtype=bool)[:, None, :]
    hardest = T.tmax(T.mask_fill(sig_neg, same, -1.0), axis=2)         # [N,M]
    per_anchor = 1.0 - T.sigmoid(d_pos) + hardest
    return T.tmean(per_anchor)


def softmax_xent_loss(logits, labels):
    """Cross-entropy against integer labels (see tensor.softmax_xent)."""
    return T.softmax_xent(logits, labels)


def score_trials(embeddings: Mapping, trial_set, params):
    """Score every trial as w*cos(enroll centroid, test embedding) + b."""
    w, b = params.values()
    centroids = {}
    for speaker, utts in trial_set.enroll.items():
        vecs = []
        for u in utts:
            if u not in embeddings:
                raise UnknownIdError(f"enrollment utterance {u!r} has no embedding")
            vecs.append(np.asarray(embeddings[u], dtype=np.float64))
        if not vecs:
            raise ContractError(f"speaker {speaker!r} has no enrollment utterances")
        centroids[speaker] = np.mean(vecs, axis=0)
    scores = np.empty(len(trial_set.trials))
    labels = np.empty(len(trial_set.trials), dtype=bool)
    for i, trial in enumerate(trial_set.trials):
        if trial.speaker not in centroids:
            raise UnknownIdError(f"speaker {trial.speaker!r} has no enrollment")
        if trial.utterance not in embeddings:
            raise UnknownIdError(f"utterance {trial.utterance!r} has no embedding")
        cos = T.cosine(centroids[trial.speaker], embeddings[trial.utterance])
        scores[i] = w * cos + b
        labels[i] = trial.target
    return ScoreSet(scores, labels)


def compute_eer(scores, labels=None):
    """Equal error rate, folded into [0, 0.5].

    Sweeps the distinct scores as thresholds with FAR(t) = mean(non >= t)
    and FRR(t) = mean(tar < t).  FRR - FAR is non-decreasing from -1 to
    +1 over the sweep (a sentinel above the maximum closes it); the EER
    is the value at its zero, taken exactly at a vertex where FRR == FAR
    or by linear interpolation on the sign-flip segment otherwise.
    """
    if isinstance(scores, ScoreSet):
        scores, labels = scores.scores, scores.labels
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    tar = np.sort(scores[labels])
    non = np.sort(scores[~labels])
    if tar.size == 0 or non.size == 0:
        raise ContractError("EER needs at least one target and one non-target")
    thresholds = np.append(np.unique(scores), scores.max() + 1.0)
    fars = (non.size - np.searchsorted(non, thresholds, side="left")) / non.size
    frrs = np.searchsorted(tar, thresholds, side="left") / tar.size
    diff = frrs - fars
    i = int(np.searchsorted(diff, 0.0, side="left"))
    if diff[i] == 0.0:
        eer = fars[i]
    else:
        d1 = frrs[i - 1] - fars[i - 1]
        d2 = diff[i]
        s = d1 / (d1 - d2)
        far_s = fars[i - 1] + s * (fars[i] - fars[i - 1])
        frr_s = frrs[i - 1] + s * (frrs[i] - frrs[i - 1])
        eer = 0.5 * (far_s + frr_s)
    return min(eer, 1.0 - eer)


def fitness_from_eer(eer):
    """Search fitness: 1 - EER."""
    return 1.0 - eer


def write_trials(path, trial_set):
    """Plain-text trial list: 'enroll_speaker test_utterance target|nontarget'."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in trial_set.trials:
            kind = "target" if t.target else "nontarget"
            fh.write(f"{t.speaker} {t.utterance} {kind}\n")


def read_trials(path, enroll):
    trials = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if len(parts) != 3 or parts[2] not in ("target", "nontarget"):
                raise ContractError(f"{path}:{line_no}: bad trial line {line!r}")
            trials.append(Trial(parts[0], parts[1], parts[2] == "target"))
    return TrialSet(trials, enroll)


def write_scores(path, score_set):
    """Plain-text score list: 'score target|nontarget' per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for s, is_target in zip(score_set.scores, score_set.labels):
            kind = "target" if is_target else "nontarget"
            fh.write(f"{float(s)!r} {kind}\n")


def read_scores(path):
    scores, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if len(parts) != 2 or parts[1] not in ("target", "nontarget"):
                raise ContractError(f"{path}:{line_no}: bad score line {line!r}")
            scores.append(float(parts[0]))
            labels.append(parts[1] == "target")
    return ScoreSet(np.asarray(scores), np.asarray(labels, dtype=bool))
