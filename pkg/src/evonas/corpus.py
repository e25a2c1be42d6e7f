"""Speaker corpora: synthetic generation, disk layout, trial construction.

A synthetic corpus gives every speaker a latent identity vector whose norm
sets the speaker separation; each utterance renders (latent + noise) into
a 40x300 feature matrix through a fixed random linear map, plus a smooth
temporal jitter so columns are not constant.  Difficulty is controlled by
the separation/noise ratio and can be checked against an oracle that
scores the latent vectors directly.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from evonas import audiofeat
from evonas.checkpoint import load_checkpoint, save_checkpoint
from evonas.errors import ConfigError, ContractError
from evonas.verifier import Trial, TrialSet, compute_eer

SPLIT_TRAIN = "train"
SPLIT_ENROLL = "enroll"
SPLIT_EVAL = "eval"


@dataclass
class Utterance:
    speaker_id: str
    utt_id: str
    split: str
    features: np.ndarray = None
    latent: np.ndarray = None
    path: str = None


@dataclass
class Corpus:
    utterances: list = field(default_factory=list)

    def __post_init__(self):
        self._by_id = {u.utt_id: u for u in self.utterances}
        if len(self._by_id) != len(self.utterances):
            raise ContractError("utterance ids are not unique")

    def __len__(self):
        return len(self.utterances)

    def utterance(self, utt_id):
        if utt_id not in self._by_id:
            raise ContractError(f"unknown utterance id {utt_id!r}")
        return self._by_id[utt_id]

    def split(self, name):
        return [u for u in self.utterances if u.split == name]

    def speakers(self, split=None):
        seen = []
        for u in self.utterances:
            if split is not None and u.split != split:
                continue
            if u.speaker_id not in seen:
                seen.append(u.speaker_id)
        return seen

    def train_speakers(self):
        return self.speakers(SPLIT_TRAIN)

    def eval_speakers(self):
        seen = []
        for u in self.utterances:
            if u.split in (SPLIT_ENROLL, SPLIT_EVAL) and u.speaker_id not in seen:
                seen.append(u.speaker_id)
        return seen

    def by_speaker(self, split):
        out = {}
        for u in self.utterances:
            if u.split == split:
                out.setdefault(u.speaker_id, []).append(u)
        return out

    def check_split_disjointness(self):
        """Violations of the rule that eval-side speakers never train."""
        train = set(u.speaker_id for u in self.utterances if u.split == SPLIT_TRAIN)
        held_out = set(u.speaker_id for u in self.utterances
                       if u.split in (SPLIT_ENROLL, SPLIT_EVAL))
        overlap = sorted(train & held_out)
        return [f"speaker {s} appears in training and evaluation" for s in overlap]


def make_synthetic_corpus(n_speakers=30, n_utts=20, separation=5.0, noise=1.0,
                          seed=0, n_eval_speakers=None, n_enroll=10,
                          latent_dim=16, jitter=0.3,
                          feature_shape=(40, audiofeat.TARGET_FRAMES)):
    """Generate a deterministic synthetic corpus.

    The last ``n_eval_speakers`` speakers are held out: their first
    ``n_enroll`` utterances are enrollment, the rest evaluation.  With
    ``n_eval_speakers=None`` every speaker is held out (no training
    split).  Raises ConfigError for parameters that break downstream
    batch/centroid requirements.
    """
    if n_utts < 2:
        raise ConfigError(f"need at least 2 utterances per speaker, got {n_utts}")
    if separation < 0 or noise < 0 or (separation == 0 and noise == 0):
        raise ConfigError("separation/noise must be non-negative and not both zero")
    if n_eval_speakers is None:
        n_eval_speakers = n_speakers
    if n_eval_speakers > n_speakers:
        raise ConfigError(
            f"n_eval_speakers {n_eval_speakers} exceeds n_speakers {n_speakers}")
    if n_eval_speakers > 0 and not (0 < n_enroll < n_utts):
        raise ConfigError(
            f"n_enroll must be in (0, {n_utts}) to leave evaluation utterances")

    rng = np.random.default_rng(seed)
    d_feat, t_frames = feature_shape
    render = rng.standard_normal((d_feat, latent_dim)) / np.sqrt(latent_dim)
    n_train = n_speakers - n_eval_speakers
    utterances = []
    for s in range(n_speakers):
        direction = rng.standard_normal(latent_dim)
        direction /= np.linalg.norm(direction)
        speaker_latent = separation * direction
        is_eval = s >= n_train
        for u in range(n_utts):
            z = speaker_latent + noise * rng.standard_normal(latent_dim)
            base = render @ z
            freqs = rng.uniform(0.5, 3.0, size=latent_dim)
            phases = rng.uniform(0.0, 2.0 * np.pi, size=latent_dim)
            tt = np.arange(t_frames) / t_frames
            wiggle = np.sin(2.0 * np.pi * freqs[:, None] * tt[None, :]
                            + phases[:, None])
            feat = base[:, None] + jitter * (render @ wiggle)
            if is_eval:
                split = SPLIT_ENROLL if u < n_enroll else SPLIT_EVAL
            else:
                split = SPLIT_TRAIN
            utterances.append(Utterance(
                speaker_id=f"spk{s:03d}",
                utt_id=f"spk{s:03d}_utt{u:03d}",
                split=split,
                features=feat,
                latent=z,
            ))
    return Corpus(utterances)


def oracle_eer(corpus):
    """EER of a scorer that reads the latent vectors directly.

    Enrollment centroids are means of enrollment latents; every
    evaluation utterance is scored by cosine against every held-out
    speaker's centroid.  This bounds what any feature-based model can do.
    """
    enroll = corpus.by_speaker(SPLIT_ENROLL)
    if not enroll:
        raise ContractError("corpus has no enrollment utterances")
    centroids = {s: np.mean([u.latent for u in utts], axis=0)
                 for s, utts in enroll.items()}
    scores, labels = [], []
    for u in corpus.split(SPLIT_EVAL):
        for speaker, c in centroids.items():
            denom = np.linalg.norm(c) * np.linalg.norm(u.latent)
            if denom == 0.0:
                scores.append(0.0)
            else:
                scores.append(float(np.dot(c, u.latent) / denom))
            labels.append(speaker == u.speaker_id)
    return compute_eer(np.asarray(scores), np.asarray(labels, dtype=bool))


def build_trials(corpus, n_enroll=None, n_test=None):
    """All cross-speaker trials over the held-out split.

    Optionally caps enrollment and test utterances per speaker (taking
    the first ones, deterministically) so searches can use a cheaper
    trial set than the final evaluation.
    """
    enroll_map = {}
    for speaker, utts in corpus.by_speaker(SPLIT_ENROLL).items():
        chosen = utts if n_enroll is None else utts[:n_enroll]
        enroll_map[speaker] = tuple(u.utt_id for u in chosen)
    if not enroll_map:
        raise ContractError("corpus has no enrollment utterances")
    trials = []
    test_map = corpus.by_speaker(SPLIT_EVAL)
    for test_speaker, utts in test_map.items():
        chosen = utts if n_test is None else utts[:n_test]
        for u in chosen:
            for claimed in enroll_map:
                trials.append(Trial(claimed, u.utt_id,
                                    claimed == test_speaker))
    return TrialSet(trials, enroll_map)


def trial_utterance_ids(trial_set):
    """Every utterance id a scorer must embed for this trial set."""
    ids = []
    seen = set()
    for utts in trial_set.enroll.values():
        for u in utts:
            if u not in seen:
                seen.add(u)
                ids.append(u)
    for t in trial_set.trials:
        if t.utterance not in seen:
            seen.add(t.utterance)
            ids.append(t.utterance)
    return ids


def save_corpus(corpus, out_dir):
    """Write one feature file per utterance plus a JSON manifest."""
    out = Path(out_dir)
    feat_dir = out / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for u in corpus.utterances:
        rel = f"features/{u.utt_id}.ckpt"
        payload = {"features": u.features}
        if u.latent is not None:
            payload["latent"] = u.latent
        save_checkpoint(out / rel, payload)
        records.append({"speaker_id": u.speaker_id, "utterance_path": rel,
                        "split": u.split})
    manifest = out / "manifest.json"
    with open(manifest, "w", encoding="utf-8") as fh:
        json.dump(records, fh, indent=1)
    return manifest


def load_corpus(corpus_dir):
    root = Path(corpus_dir)
    with open(root / "manifest.json", encoding="utf-8") as fh:
        records = json.load(fh)
    utterances = []
    for rec in records:
        path = root / rec["utterance_path"]
        arrays = load_checkpoint(path)
        utt_id = Path(rec["utterance_path"]).stem
        utterances.append(Utterance(
            speaker_id=rec["speaker_id"],
            utt_id=utt_id,
            split=rec["split"],
            features=arrays["features"],
            latent=arrays.get("latent"),
            path=str(path),
        ))
    return Corpus(utterances)
