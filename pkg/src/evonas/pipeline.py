"""Experiment orchestration: config files, staged runs, manifests, reports.

A run directory holds one subdirectory per stage (gen-data,
extract-features, train-hypernet, search, retrain, evaluate, report);
re-running a stage writes the next version (v001, v002, ...) and leaves
earlier outputs untouched.  Every stage writes a manifest recording the
config snapshot, the artifacts it consumed and produced (with sha256
checksums), and wall-clock time.  Reports contain no timing, so a re-run
from the same config and seed reproduces them byte for byte.
"""

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from evonas import __version__, audiofeat
from evonas.corpus import (
    Corpus,
    Utterance,
    build_trials,
    load_corpus,
    make_synthetic_corpus,
    save_corpus,
)
from evonas.errors import ConfigError, EvoNasError
from evonas.evosearch import SearchConfig, evolve, write_history, write_result
from evonas.hypernet import (
    HyperNetConfig,
    build,
    evaluate_candidate,
    extract_subnet,
    load_weights,
    save_model,
    train_model,
)
from evonas.optim import Adam, LinearDecay
from evonas.searchspace import BlockGene, Genome, Mode, OpKind, decode, encode
from evonas.tensor import Tensor
from evonas.verifier import ScoreParams, compute_eer, score_trials, write_scores

log = logging.getLogger(__name__)

STAGES = ("gen-data", "extract-features", "train-hypernet", "search",
          "retrain", "evaluate", "report")


@dataclass(frozen=True)
class CorpusSpec:
    kind: str = "synthetic"
    n_speakers: int = 40
    n_utts: int = 20
    separation: float = 8.0
    noise: float = 1.0
    n_eval_speakers: int = 30
    n_enroll: int = 10
    latent_dim: int = 16
    jitter: float = 0.3
    wav_manifest: str = ""


@dataclass(frozen=True)
class TrainSpec:
    softmax_steps: int = 800
    ge2e_steps: int = 1200
    base_lr: float = 0.02
    batch_speakers: int = 8
    utts_per_speaker: int = 5

    @property
    def total_steps(self):
        return self.softmax_steps + self.ge2e_steps


@dataclass(frozen=True)
class SearchSpec:
    population_size: int = 50
    generations: int = 1_000_000
    budget: int = 300
    mutation_p: float = 0.1
    local_search_neighbors: int = 5
    local_search_steps: int = 2
    tournament_size: int = 10
    trials_enroll: int = 3
    trials_test: int = 2


@dataclass(frozen=True)
class RetrainSpec:
    softmax_steps: int = 300
    ge2e_steps: int = 700
    baseline_genome: str = ""  # empty: all-conv3x3

    @property
    def total_steps(self):
        return self.softmax_steps + self.ge2e_steps


@dataclass(frozen=True)
class EvalSpec:
    n_enroll: int = 10
    n_test: int = 0  # 0: all evaluation utterances


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    hypernet: HyperNetConfig = field(default_factory=lambda: HyperNetConfig(
        filters=8, blocks=6))
    train: TrainSpec = field(default_factory=TrainSpec)
    search: SearchSpec = field(default_factory=SearchSpec)
    retrain: RetrainSpec = field(default_factory=RetrainSpec)
    eval: EvalSpec = field(default_factory=EvalSpec)

    def n_train_speakers(self):
        return self.corpus.n_speakers - self.corpus.n_eval_speakers

    def validate(self):
        """Reject inconsistent settings before any compute happens."""
        c, t = self.corpus, self.train
        if c.kind not in ("synthetic", "wav"):
            raise ConfigError(f"corpus.kind must be synthetic or wav, got {c.kind!r}")
        if c.kind == "synthetic":
            if self.n_train_speakers() < t.batch_speakers:
                raise ConfigError(
                    f"batch of {t.batch_speakers} speakers but corpus has only "
                    f"{self.n_train_speakers()} train speakers")
            if c.n_utts < t.utts_per_speaker:
                raise ConfigError(
                    f"batch needs {t.utts_per_speaker} utterances per speaker "
                    f"but corpus has {c.n_utts}")
            if not 0 < c.n_enroll < c.n_utts:
                raise ConfigError(
                    f"n_enroll={c.n_enroll} must leave evaluation utterances "
                    f"out of {c.n_utts}")
        if c.kind == "wav" and not c.wav_manifest:
            raise ConfigError("corpus.kind=wav requires corpus.wav_manifest")
        if self.search.tournament_size > self.search.population_size:
            raise ConfigError("search.tournament_size exceeds population_size")
        if self.search.trials_enroll < 1 or self.search.trials_test < 1:
            raise ConfigError("search trial caps must be >= 1")
        if self.retrain.baseline_genome:
            decode(self.retrain.baseline_genome)
        return self


def _build_section(cls, data, section):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in [{section}]")
    try:
        return cls(**data)
    except TypeError as err:
        raise ConfigError(f"bad [{section}] section: {err}") from err


def load_config(path, seed=None, out_dir=None):
    """Parse a TOML experiment config, applying CLI overrides."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from err

    known_top = {"seed", "out_dir", "corpus", "hypernet", "train", "search",
                 "retrain", "eval"}
    unknown = set(raw) - known_top
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)}")

    hyper_raw = dict(raw.get("hypernet", {}))
    if "mode" in hyper_raw:
        try:
            hyper_raw["mode"] = Mode(hyper_raw["mode"])
        except ValueError as err:
            raise ConfigError(f"bad hypernet.mode: {err}") from err
    for tuple_key in ("reduction_positions", "tdnn_hidden", "window_choices"):
        if tuple_key in hyper_raw:
            hyper_raw[tuple_key] = tuple(hyper_raw[tuple_key])
    try:
        hyper = _build_section(HyperNetConfig, hyper_raw, "hypernet")
    except EvoNasError:
        raise
    cfg = ExperimentConfig(
        seed=int(seed if seed is not None else raw.get("seed", 0)),
        out_dir=str(out_dir if out_dir is not None else
                    raw.get("out_dir", "runs/default")),
        corpus=_build_section(CorpusSpec, raw.get("corpus", {}), "corpus"),
        hypernet=hyper,
        train=_build_section(TrainSpec, raw.get("train", {}), "train"),
        search=_build_section(SearchSpec, raw.get("search", {}), "search"),
        retrain=_build_section(RetrainSpec, raw.get("retrain", {}), "retrain"),
        eval=_build_section(EvalSpec, raw.get("eval", {}), "eval"),
    )
    return cfg.validate()


def config_snapshot(config):
    snap = dataclasses.asdict(config)
    snap["hypernet"]["mode"] = config.hypernet.mode.value
    return snap


def stage_seed(config, stage, salt=0):
    """Deterministic per-stage RNG seed derived from the experiment seed."""
    seq = np.random.SeedSequence([config.seed, STAGES.index(stage), salt])
    return int(seq.generate_state(1)[0])


# -- run directory and manifests ----------------------------------------


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def new_stage_dir(out_dir, stage):
    base = Path(out_dir) / stage
    base.mkdir(parents=True, exist_ok=True)
    version = 1
    while (base / f"v{version:03d}").exists():
        version += 1
    path = base / f"v{version:03d}"
    path.mkdir()
    return path


def latest_stage_dir(out_dir, stage):
    base = Path(out_dir) / stage
    if not base.is_dir():
        raise ConfigError(
            f"stage '{stage}' has not been run yet under {out_dir}")
    versions = sorted(p for p in base.iterdir() if p.name.startswith("v"))
    if not versions:
        raise ConfigError(f"stage '{stage}' has no completed versions")
    return versions[-1]


def checksum_tree(stage_dir):
    out = {}
    for p in sorted(Path(stage_dir).rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            out[str(p.relative_to(stage_dir))] = _sha256(p)
    return out


def write_manifest(stage_dir, stage, config, inputs, started, extra=None):
    manifest = {
        "stage": stage,
        "package_version": __version__,
        "config": config_snapshot(config),
        "inputs": {str(k): v for k, v in inputs.items()},
        "outputs": checksum_tree(stage_dir),
        "wall_clock_s": round(time.monotonic() - started, 3),
    }
    if extra:
        manifest.update(extra)
    tmp = Path(stage_dir) / "manifest.json.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    tmp.rename(Path(stage_dir) / "manifest.json")
    return manifest


def read_manifest(stage_dir):
    with open(Path(stage_dir) / "manifest.json", encoding="utf-8") as fh:
        return json.load(fh)


def _rel_to_run(path, config):
    """Paths inside the run directory are recorded relative to it."""
    path = Path(path)
    try:
        return str(path.relative_to(config.out_dir))
    except ValueError:
        return str(path)


def _input_ref(stage_dir, config):
    return {_rel_to_run(stage_dir, config):
            _sha256(Path(stage_dir) / "manifest.json")}


# -- stages --------------------------------------------------------------


def cmd_gen_data(config):
    """Generate the synthetic corpus and write it to disk."""
    started = time.monotonic()
    c = config.corpus
    if c.kind != "synthetic":
        raise ConfigError("gen-data requires corpus.kind = 'synthetic'")
    corpus = make_synthetic_corpus(
        n_speakers=c.n_speakers, n_utts=c.n_utts, separation=c.separation,
        noise=c.noise, seed=stage_seed(config, "gen-data"),
        n_eval_speakers=c.n_eval_speakers, n_enroll=c.n_enroll,
        latent_dim=c.latent_dim, jitter=c.jitter)
    violations = corpus.check_split_disjointness()
    if violations:
        raise EvoNasError("; ".join(violations))
    stage_dir = new_stage_dir(config.out_dir, "gen-data")
    save_corpus(corpus, stage_dir)
    write_manifest(stage_dir, "gen-data", config, {}, started)
    log.info("gen-data: %d utterances -> %s", len(corpus), stage_dir)
    return stage_dir


def cmd_extract_features(config):
    """Extract 40x300 features from a WAV manifest into a corpus directory."""
    started = time.monotonic()
    c = config.corpus
    if c.kind != "wav":
        raise ConfigError("extract-features requires corpus.kind = 'wav'")
    manifest_path = Path(c.wav_manifest)
    if not manifest_path.is_file():
        raise ConfigError(f"wav manifest not found: {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        records = json.load(fh)
    rng = np.random.default_rng(stage_seed(config, "extract-features"))
    utterances = []
    skipped = 0
    for rec in records:
        wav_path = manifest_path.parent / rec["utterance_path"]
        wave = audiofeat.read_wav(wav_path)
        mode = "train" if rec["split"] == "train" else "eval"
        feat = audiofeat.extract_features(wave, mode=mode, rng=rng)
        if feat is None:
            skipped += 1
            log.warning("skipping too-short utterance %s", wav_path)
            continue
        utterances.append(Utterance(
            speaker_id=rec["speaker_id"],
            utt_id=Path(rec["utterance_path"]).stem,
            split=rec["split"],
            features=feat,
        ))
    corpus = Corpus(utterances)
    stage_dir = new_stage_dir(config.out_dir, "extract-features")
    save_corpus(corpus, stage_dir)
    write_manifest(stage_dir, "extract-features", config,
                   {str(manifest_path): _sha256(manifest_path)}, started,
                   extra={"skipped_too_short": skipped})
    return stage_dir


def _corpus_dir(config):
    try:
        return latest_stage_dir(config.out_dir, "gen-data")
    except ConfigError:
        return latest_stage_dir(config.out_dir, "extract-features")


def _hypernet_config(config, corpus):
    n_train = len(corpus.train_speakers())
    return dataclasses.replace(config.hypernet, n_train_speakers=max(n_train, 2))


def _train_phases(model, corpus, spec, schedule, rng, *, genome=None,
                  path_dropout, start_step=0, score_params=None,
                  optimizer=None):
    """Softmax warm-up followed by distance-loss training, one schedule.

    ``spec`` provides softmax_steps, ge2e_steps, batch_speakers and
    utts_per_speaker (TrainSpec or the retrain adapter).
    """
    losses = []
    step = start_step
    phases = [("softmax", spec.softmax_steps), ("ge2e", spec.ge2e_steps)]
    if score_params is None:
        score_params = ScoreParams()
    if optimizer is None:
        optimizer = Adam(list(model.params.values())
                         + score_params.parameters(), lr=schedule.base)
    for loss_mode, steps in phases:
        if steps == 0:
            continue
        result = train_model(
            model, corpus, loss_mode=loss_mode, steps=steps, rng=rng,
            schedule=schedule, genome=genome, path_dropout=path_dropout,
            batch_speakers=spec.batch_speakers,
            utts_per_speaker=spec.utts_per_speaker,
            start_step=step, optimizer=optimizer, score_params=score_params)
        losses.extend(result.losses)
        step = result.end_step
    return losses, step, score_params


def _write_loss_trace(path, losses, start_step=0):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for i, value in enumerate(losses, start=start_step):
            fh.write(f"{i},{value!r}\n")


def _save_score_params(path, score_params):
    from evonas.checkpoint import save_checkpoint

    save_checkpoint(path, {"w": np.atleast_1d(score_params.w.data),
                           "b": np.atleast_1d(score_params.b.data)})


def _load_score_params(path):
    from evonas.checkpoint import load_checkpoint

    arrays = load_checkpoint(path)
    params = ScoreParams()
    params.w = Tensor(float(arrays["w"][0]), requires_grad=True)
    params.b = Tensor(float(arrays["b"][0]), requires_grad=True)
    return params


def cmd_train_hypernet(config, resume_from=None):
    """Train the hyper-network by single-path sampling; write a checkpoint."""
    started = time.monotonic()
    corpus_dir = _corpus_dir(config)
    corpus = load_corpus(corpus_dir)
    hcfg = _hypernet_config(config, corpus)
    net = build(hcfg, seed=stage_seed(config, "train-hypernet"))
    start_step = 0
    inputs = _input_ref(corpus_dir, config)
    if resume_from is not None:
        resume_dir = Path(resume_from)
        load_weights(resume_dir / "hypernet.ckpt", net)
        start_step = read_manifest(resume_dir)["end_step"]
        inputs.update(_input_ref(resume_dir, config))
    schedule = LinearDecay(config.train.base_lr, config.train.total_steps)
    rng = np.random.default_rng(stage_seed(config, "train-hypernet", salt=1))
    remaining = config.train.total_steps - start_step
    spec = config.train
    if remaining <= 0:
        raise ConfigError("nothing to train: step counter already at the end")
    # split remaining across the phase boundary
    softmax_left = max(0, spec.softmax_steps - start_step)
    losses, end_step, score_params = _train_phases(
        net, corpus,
        dataclasses.replace(spec, softmax_steps=softmax_left,
                            ge2e_steps=remaining - softmax_left),
        schedule, rng, path_dropout=True, start_step=start_step)
    stage_dir = new_stage_dir(config.out_dir, "train-hypernet")
    save_model(stage_dir / "hypernet.ckpt", net)
    _save_score_params(stage_dir / "score_params.ckpt", score_params)
    _write_loss_trace(stage_dir / "loss_trace.csv", losses, start_step)
    write_manifest(stage_dir, "train-hypernet", config, inputs, started,
                   extra={"end_step": end_step,
                          "lr_schedule": {"base": schedule.base,
                                          "final": schedule.rate(
                                              config.train.total_steps),
                                          "total_steps": schedule.total_steps},
                          "parameter_count": net.parameter_count()})
    return stage_dir


def _load_hypernet(config, hyper_dir):
    corpus = load_corpus(_corpus_dir(config))
    hcfg = _hypernet_config(config, corpus)
    net = build(hcfg, seed=0)
    load_weights(Path(hyper_dir) / "hypernet.ckpt", net)
    score_params = _load_score_params(Path(hyper_dir) / "score_params.ckpt")
    return net, corpus, score_params


def cmd_search(config):
    """Memetic search against the trained hyper-network; write results."""
    started = time.monotonic()
    hyper_dir = latest_stage_dir(config.out_dir, "train-hypernet")
    net, corpus, score_params = _load_hypernet(config, hyper_dir)
    trials = build_trials(corpus, n_enroll=config.search.trials_enroll,
                          n_test=config.search.trials_test)
    s = config.search

    def oracle(genome):
        eer = evaluate_candidate(net, genome, corpus, trials,
                                 score_params=score_params)
        return 1.0 - eer

    search_config = SearchConfig(
        population_size=s.population_size, generations=s.generations,
        mutation_p=s.mutation_p,
        local_search_neighbors=s.local_search_neighbors,
        local_search_steps=s.local_search_steps,
        tournament_size=s.tournament_size,
        seed=stage_seed(config, "search"),
        max_evaluations=s.budget)
    result = evolve(net.space, oracle, search_config)
    stage_dir = new_stage_dir(config.out_dir, "search")
    write_history(stage_dir / "history.csv", result.history)
    write_result(stage_dir / "result.json", result,
                 seed=search_config.seed)
    with open(stage_dir / "candidates_eer.csv", "w", encoding="utf-8") as fh:
        fh.write("eer,genome\n")
        for key, fitness in result.evaluated:
            fh.write(f"{1.0 - fitness!r},\"{key}\"\n")
    write_manifest(stage_dir, "search", config, _input_ref(hyper_dir, config),
                   started,
                   extra={"total_evaluations": result.total_evaluations,
                          "budget_exhausted": result.budget_exhausted})
    return stage_dir


def default_baseline_genome(blocks):
    return Genome(Mode.AUTO_VECTOR,
                  blocks=tuple(BlockGene((OpKind.CONV3X3,))
                               for _ in range(blocks)))


def _final_trials(config, corpus):
    return build_trials(corpus, n_enroll=config.eval.n_enroll,
                        n_test=config.eval.n_test or None)


def retrain_and_score(net, corpus, genome, config, trials, seed,
                      score_params=None):
    """Extract, retrain (warm-up then distance loss), and measure EER."""
    sub = extract_subnet(net, genome)
    schedule = LinearDecay(config.train.base_lr, config.retrain.total_steps)
    rng = np.random.default_rng(seed)
    params = ScoreParams() if score_params is None else score_params
    losses, _, params = _train_phases(
        sub, corpus, _RetrainPhases(config), schedule, rng, genome=genome,
        path_dropout=False, score_params=params)
    eer = evaluate_candidate(sub, genome, corpus, trials, score_params=params)
    return sub, eer, losses, params


class _RetrainPhases:
    """Adapter giving retrain specs the train-phase attribute shape."""

    def __init__(self, config):
        self.softmax_steps = config.retrain.softmax_steps
        self.ge2e_steps = config.retrain.ge2e_steps
        self.batch_speakers = config.train.batch_speakers
        self.utts_per_speaker = config.train.utts_per_speaker


def cmd_retrain_eval(config, genome_text=None):
    """Retrain the searched and baseline genomes; emit the comparison report."""
    started = time.monotonic()
    hyper_dir = latest_stage_dir(config.out_dir, "train-hypernet")
    net, corpus, _ = _load_hypernet(config, hyper_dir)
    inputs = _input_ref(hyper_dir, config)
    if genome_text is None:
        search_dir = latest_stage_dir(config.out_dir, "search")
        with open(search_dir / "result.json", encoding="utf-8") as fh:
            genome_text = json.load(fh)["genome"]
        inputs.update(_input_ref(search_dir, config))
    searched = decode(genome_text)
    baseline = (decode(config.retrain.baseline_genome)
                if config.retrain.baseline_genome
                else default_baseline_genome(config.hypernet.blocks))
    trials = _final_trials(config, corpus)
    rows = []
    stage_dir = new_stage_dir(config.out_dir, "retrain")
    for salt, (name, genome) in enumerate([("searched", searched),
                                           ("baseline", baseline)], start=1):
        sub, eer, losses, params = retrain_and_score(
            net, corpus, genome, config, trials,
            seed=stage_seed(config, "retrain", salt=salt))
        save_model(stage_dir / f"{name}.ckpt", sub)
        _save_score_params(stage_dir / f"{name}_score_params.ckpt", params)
        _write_loss_trace(stage_dir / f"{name}_loss_trace.csv", losses)
        rows.append({"model": name, "genome": encode(genome),
                     "eer": eer, "fitness": 1.0 - eer,
                     "parameters": sub.parameter_count()})
    report = {"rows": rows, "seed": config.seed,
              "trials": len(trials.trials)}
    with open(stage_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    write_manifest(stage_dir, "retrain", config, inputs, started)
    return stage_dir


def cmd_evaluate(config, checkpoint=None, genome_text=None):
    """Score the final trial set with a retrained model; write scores + EER."""
    started = time.monotonic()
    retrain_dir = None
    if checkpoint is None:
        retrain_dir = latest_stage_dir(config.out_dir, "retrain")
        checkpoint = retrain_dir / "searched.ckpt"
        with open(retrain_dir / "report.json", encoding="utf-8") as fh:
            genome_text = next(r["genome"] for r in json.load(fh)["rows"]
                               if r["model"] == "searched")
    if genome_text is None:
        raise ConfigError("evaluate needs a genome for the checkpoint")
    genome = decode(genome_text)
    corpus_dir = _corpus_dir(config)
    corpus = load_corpus(corpus_dir)
    hcfg = _hypernet_config(config, corpus)
    net = build(hcfg, seed=0)
    sub = extract_subnet(net, genome)
    load_weights(checkpoint, sub)
    params = ScoreParams()
    if retrain_dir is not None:
        params = _load_score_params(retrain_dir / "searched_score_params.ckpt")
    trials = _final_trials(config, corpus)
    from evonas.corpus import trial_utterance_ids
    from evonas.hypernet import embed_utterances

    embeddings = embed_utterances(sub, corpus, trial_utterance_ids(trials))
    scores = score_trials(embeddings, trials, params)
    eer = compute_eer(scores)
    stage_dir = new_stage_dir(config.out_dir, "evaluate")
    write_scores(stage_dir / "scores.txt", scores)
    from evonas.verifier import write_trials

    write_trials(stage_dir / "trials.txt", trials)
    metrics = {"eer": eer, "fitness": 1.0 - eer,
               "n_trials": len(trials.trials), "genome": genome_text}
    with open(stage_dir / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=1, sort_keys=True)
    inputs = {_rel_to_run(checkpoint, config): _sha256(checkpoint)}
    inputs.update(_input_ref(corpus_dir, config))
    write_manifest(stage_dir, "evaluate", config, inputs, started)
    return stage_dir


def cmd_report(config):
    """Aggregate the latest stage outputs into one report file."""
    started = time.monotonic()
    report = {"config": config_snapshot(config), "stages": {}}
    inputs = {}
    for stage in ("train-hypernet", "search", "retrain", "evaluate"):
        try:
            stage_dir = latest_stage_dir(config.out_dir, stage)
        except ConfigError:
            continue
        inputs.update(_input_ref(stage_dir, config))
        manifest = read_manifest(stage_dir)
        entry = {"path": _rel_to_run(stage_dir, config)}
        for key in ("end_step", "parameter_count", "total_evaluations",
                    "budget_exhausted", "lr_schedule"):
            if key in manifest:
                entry[key] = manifest[key]
        for name in ("report.json", "metrics.json", "result.json"):
            artifact = Path(stage_dir) / name
            if artifact.is_file():
                with open(artifact, encoding="utf-8") as fh:
                    entry[name] = json.load(fh)
        report["stages"][stage] = entry
    if not report["stages"]:
        raise ConfigError(f"no completed stages under {config.out_dir}")
    stage_dir = new_stage_dir(config.out_dir, "report")
    with open(stage_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    write_manifest(stage_dir, "report", config, inputs, started)
    return stage_dir
