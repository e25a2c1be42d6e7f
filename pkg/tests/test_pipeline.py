"""Staged pipeline runs, config handling, CLI exit codes, determinism."""

import json
from pathlib import Path

import numpy as np
import pytest

from evonas import audiofeat, cli, pipeline
from evonas.corpus import load_corpus
from evonas.errors import ConfigError

CONFIG_TEMPLATE = """
seed = {seed}
out_dir = "{out}"

[corpus]
n_speakers = 10
n_utts = 4
separation = 8.0
noise = 0.8
n_eval_speakers = 4
n_enroll = 2

[hypernet]
filters = 2
blocks = 2
reduction_positions = [1]
embedding_dim = 8

[train]
softmax_steps = 5
ge2e_steps = 5
batch_speakers = 4
utts_per_speaker = 3

[search]
population_size = 4
generations = 3
budget = 60
local_search_neighbors = 2
local_search_steps = 1
tournament_size = 2
trials_enroll = 2
trials_test = 2

[retrain]
softmax_steps = 3
ge2e_steps = 3

[eval]
n_enroll = 2
"""


def write_config(tmp_path, seed=7, name="exp.toml", out="run"):
    path = tmp_path / name
    path.write_text(CONFIG_TEMPLATE.format(seed=seed, out=(tmp_path / out).as_posix()))
    return path


@pytest.fixture()
def config(tmp_path):
    return pipeline.load_config(write_config(tmp_path))


class TestConfig:
    def test_defaults_and_overrides(self, tmp_path):
        path = write_config(tmp_path)
        cfg = pipeline.load_config(path, seed=99, out_dir=str(tmp_path / "other"))
        assert cfg.seed == 99
        assert cfg.out_dir.endswith("other")
        assert cfg.train.base_lr == 0.02
        assert cfg.hypernet.blocks == 2

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[corpus]\nn_speekers = 3\n")
        with pytest.raises(ConfigError, match="n_speekers"):
            pipeline.load_config(path)

    def test_inconsistent_batch_rejected(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text(CONFIG_TEMPLATE.format(seed=1, out="x").replace(
            "batch_speakers = 4", "batch_speakers = 32"))
        with pytest.raises(ConfigError, match="train speakers"):
            pipeline.load_config(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            pipeline.load_config(tmp_path / "nope.toml")

    def test_bad_toml_rejected(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("seed = [unterminated")
        with pytest.raises(ConfigError):
            pipeline.load_config(path)


class TestGenData:
    def test_same_seed_identical_checksums(self, tmp_path):
        cfg_a = pipeline.load_config(write_config(tmp_path, out="a"))
        cfg_b = pipeline.load_config(write_config(tmp_path, out="b"))
        dir_a = pipeline.cmd_gen_data(cfg_a)
        dir_b = pipeline.cmd_gen_data(cfg_b)
        sums_a = pipeline.checksum_tree(dir_a)
        sums_b = pipeline.checksum_tree(dir_b)
        assert sums_a == sums_b and sums_a

    def test_split_sizes_and_disjointness(self, config):
        stage = pipeline.cmd_gen_data(config)
        corpus = load_corpus(stage)
        assert len(corpus.train_speakers()) == 6
        assert len(corpus.eval_speakers()) == 4
        assert len(corpus.split("enroll")) == 4 * 2
        assert corpus.check_split_disjointness() == []

    def test_rerun_writes_new_version(self, config):
        first = pipeline.cmd_gen_data(config)
        second = pipeline.cmd_gen_data(config)
        assert first.name == "v001" and second.name == "v002"
        assert first.exists()


class TestTrainStage:
    def test_train_then_resume_continues_counter(self, config):
        pipeline.cmd_gen_data(config)
        first = pipeline.cmd_train_hypernet(config)
        manifest = pipeline.read_manifest(first)
        assert manifest["end_step"] == 10
        assert manifest["lr_schedule"] == {"base": 0.02, "final": 0.0,
                                           "total_steps": 10}
        trace = (first / "loss_trace.csv").read_text().strip().splitlines()
        assert trace[0] == "step,loss"
        assert len(trace) == 11
        # resume: no steps left at the end of the schedule
        with pytest.raises(ConfigError, match="step counter"):
            pipeline.cmd_train_hypernet(config, resume_from=first)

    def test_resume_extends_the_step_counter(self, tmp_path):
        cfg = pipeline.load_config(write_config(tmp_path))
        pipeline.cmd_gen_data(cfg)
        first = pipeline.cmd_train_hypernet(cfg)
        assert pipeline.read_manifest(first)["end_step"] == 10
        longer_path = tmp_path / "longer.toml"
        longer_path.write_text(write_config(tmp_path, name="t.toml").read_text()
                               .replace("ge2e_steps = 5", "ge2e_steps = 15"))
        longer = pipeline.load_config(longer_path)
        resumed = pipeline.cmd_train_hypernet(longer, resume_from=first)
        manifest = pipeline.read_manifest(resumed)
        assert manifest["end_step"] == 20
        trace = (resumed / "loss_trace.csv").read_text().strip().splitlines()
        assert trace[1].startswith("10,")
        assert len(trace) == 11


class TestFullPipeline:
    def run_all(self, cfg):
        pipeline.cmd_gen_data(cfg)
        pipeline.cmd_train_hypernet(cfg)
        pipeline.cmd_search(cfg)
        pipeline.cmd_retrain_eval(cfg)
        pipeline.cmd_evaluate(cfg)
        return pipeline.cmd_report(cfg)

    def test_stages_chain_and_report_aggregates(self, config):
        report_dir = self.run_all(config)
        with open(report_dir / "report.json") as fh:
            report = json.load(fh)
        assert set(report["stages"]) == {"train-hypernet", "search", "retrain",
                                         "evaluate"}
        search_dir = pipeline.latest_stage_dir(config.out_dir, "search")
        history = (search_dir / "history.csv").read_text().strip().splitlines()
        assert len(history) - 1 == 3  # one row per generation
        cand = (search_dir / "candidates_eer.csv").read_text().strip().splitlines()
        manifest = pipeline.read_manifest(search_dir)
        assert len(cand) - 1 == manifest["total_evaluations"]
        retrain = report["stages"]["retrain"]["report.json"]
        assert {r["model"] for r in retrain["rows"]} == {"searched", "baseline"}
        for row in retrain["rows"]:
            assert 0.0 <= row["eer"] <= 0.5
            assert row["parameters"] > 0
        metrics = report["stages"]["evaluate"]["metrics.json"]
        assert 0.0 <= metrics["eer"] <= 0.5

    def test_end_to_end_determinism(self, tmp_path):
        report_a = self.run_all(pipeline.load_config(
            write_config(tmp_path / "A", name="exp.toml")))
        report_b = self.run_all(pipeline.load_config(
            write_config(tmp_path / "B", name="exp.toml")))
        a = json.loads((report_a / "report.json").read_text())
        b = json.loads((report_b / "report.json").read_text())
        # the run roots differ in path only; mask out_dir before comparing
        a["config"]["out_dir"] = b["config"]["out_dir"] = "X"
        assert a == b

    def test_search_refuses_mismatched_checkpoint(self, tmp_path):
        cfg = pipeline.load_config(write_config(tmp_path))
        pipeline.cmd_gen_data(cfg)
        pipeline.cmd_train_hypernet(cfg)
        bigger = pipeline.load_config(write_config(tmp_path, name="big.toml"))
        bigger = pipeline.load_config(write_config(tmp_path, name="big2.toml"))
        text = write_config(tmp_path, name="big3.toml").read_text().replace(
            "blocks = 2", "blocks = 3").replace(
            "reduction_positions = [1]", "reduction_positions = [1, 2]")
        path = tmp_path / "big3.toml"
        path.write_text(text)
        mismatched = pipeline.load_config(path)
        from evonas.errors import EvoNasError
        with pytest.raises(EvoNasError, match="mismatch"):
            pipeline.cmd_search(mismatched)


class TestExtractFeatures:
    def test_wav_manifest_to_corpus(self, tmp_path):
        rng = np.random.default_rng(0)
        wav_dir = tmp_path / "wavs"
        wav_dir.mkdir()
        records = []
        for spk in range(2):
            for utt in range(2):
                name = f"s{spk}_u{utt}.wav"
                t = np.arange(16000) / 16000.0
                tone = 0.4 * np.sin(2 * np.pi * (300 + 100 * spk) * t)
                tone += 0.01 * rng.standard_normal(16000)
                audiofeat.write_wav(wav_dir / name, audiofeat.Waveform(tone))
                records.append({"speaker_id": f"s{spk}",
                                "utterance_path": name,
                                "split": "train" if utt == 0 else "eval"})
        manifest = wav_dir / "manifest.json"
        manifest.write_text(json.dumps(records))
        cfg_path = tmp_path / "wav.toml"
        cfg_path.write_text(f"""
seed = 3
out_dir = "{(tmp_path / 'run').as_posix()}"
[corpus]
kind = "wav"
wav_manifest = "{manifest.as_posix()}"
""")
        cfg = pipeline.load_config(cfg_path)
        stage = pipeline.cmd_extract_features(cfg)
        corpus = load_corpus(stage)
        assert len(corpus) == 4
        for u in corpus.utterances:
            assert u.features.shape == (40, 300)
            assert np.all(np.isfinite(u.features))


class TestCli:
    def test_gen_data_exit_zero(self, tmp_path, capsys):
        path = write_config(tmp_path)
        assert cli.main(["gen-data", "--config", str(path)]) == 0
        out = capsys.readouterr().out.strip()
        assert Path(out).is_dir()

    def test_config_error_exit_two(self, tmp_path, capsys):
        missing = tmp_path / "none.toml"
        assert cli.main(["gen-data", "--config", str(missing)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_runtime_error_exit_three(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path)
        cfg = pipeline.load_config(cfg_path)
        pipeline.cmd_gen_data(cfg)
        stage = pipeline.cmd_train_hypernet(cfg)
        (stage / "hypernet.ckpt").write_bytes(b"NOTACKPT")
        assert cli.main(["search", "--config", str(cfg_path)]) == 3
        assert "error" in capsys.readouterr().err

    def test_seed_override_changes_outputs(self, tmp_path):
        path = write_config(tmp_path)
        assert cli.main(["gen-data", "--config", str(path), "--seed", "1"]) == 0
        assert cli.main(["gen-data", "--config", str(path), "--seed", "2"]) == 0
        base = Path(pipeline.load_config(path).out_dir) / "gen-data"
        sums = [pipeline.checksum_tree(base / v) for v in ("v001", "v002")]
        assert sums[0] != sums[1]
