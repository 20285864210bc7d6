import json

import numpy as np
import pytest

from aad.cli import main, read_calibration_threshold, read_matrix, read_vector, write_matrix
from aad.config import RunConfig, load_config, load_manifest
from aad.errors import ManifestError

pytestmark = pytest.mark.cli


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small knock dataset + fast config shared by the CLI tests."""
    out = tmp_path_factory.mktemp("tiny")
    assert main(["synth", "--out", str(out), "--seed", "7",
                 "--normal-s", "60", "--anomalous-s", "24", "--rate", "30"]) == 0
    fast = out / "fast.txt"
    text = (out / "config.txt").read_text().replace("lstm_epochs = 30", "lstm_epochs = 2")
    fast.write_text(text.replace("seed = 0", "seed = 7"))
    return out


@pytest.fixture(scope="session")
def tiny_bench(tiny_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("tinybench")
    assert main(["bench", "--manifest", str(tiny_dataset / "manifest.tsv"),
                 "--out", str(out), "--config", str(tiny_dataset / "fast.txt")]) == 0
    return out


class TestSynth:
    def test_layout_and_label_policy(self, tiny_dataset):
        records = load_manifest(tiny_dataset / "manifest.tsv")
        by_split = {r.split: r for r in records}
        assert set(by_split) == {"train", "val", "calib", "test"}
        assert by_split["train"].labels is None
        assert by_split["val"].labels is None
        assert by_split["calib"].labels is not None
        assert by_split["test"].labels is not None
        for r in records:
            assert r.wav.exists()

    def test_same_seed_byte_identical(self, tmp_path):
        main(["synth", "--out", str(tmp_path / "a"), "--seed", "3",
              "--normal-s", "20", "--anomalous-s", "8", "--rate", "30"])
        main(["synth", "--out", str(tmp_path / "b"), "--seed", "3",
              "--normal-s", "20", "--anomalous-s", "8", "--rate", "30"])
        for name in ("train.wav", "val.wav", "calib.wav", "test.wav", "test.labels"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_split_durations_follow_ratios(self, tmp_path):
        main(["synth", "--out", str(tmp_path / "d"), "--seed", "5",
              "--normal-s", "64", "--anomalous-s", "16", "--rate", "30"])
        from aad.audio_io import load_wav

        frame = 0.512
        durations = {n: load_wav(tmp_path / "d" / f"{n}.wav").duration_s
                     for n in ("train", "val", "calib", "test")}
        assert durations["train"] == pytest.approx(64 * 0.875, abs=frame)
        assert durations["val"] == pytest.approx(64 * 0.125, abs=frame)
        assert durations["calib"] == pytest.approx(8.0, abs=frame)
        assert durations["test"] == pytest.approx(8.0, abs=frame)

    def test_rare_mode_layout(self, tmp_path):
        main(["synth", "--out", str(tmp_path / "r"), "--mode", "rare", "--seed", "4",
              "--normal-s", "120", "--transient-s", "2"])
        records = load_manifest(tmp_path / "r" / "manifest.tsv")
        by_split = {r.split: r for r in records}
        assert by_split["calib"].labels is None  # rare mode: no labeled calib split
        assert by_split["test"].labels is not None
        from aad.synthgen import read_intervals

        intervals = read_intervals(by_split["test"].labels)
        assert len(intervals) == 1
        assert intervals[0].kind == "transient"


class TestBenchReport:
    def test_report_rows_complete(self, tiny_bench):
        payload = json.loads((tiny_bench / "report.json").read_text())
        assert {row["method"] for row in payload["rows"]} == {"kmeans", "ocsvm", "lstmae"}
        for row in payload["rows"]:
            for key in ("train_time_s", "inference_time_s", "roc_auc", "precision",
                        "recall", "f1", "threshold"):
                assert key in row
            cm = row["confusion"]
            assert cm["tp"] + cm["fp"] + cm["tn"] + cm["fn"] > 0
            p, r = row["precision"], row["recall"]
            expected_f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
            assert row["f1"] == pytest.approx(expected_f1, abs=5e-4)

    def test_report_table_columns(self, tiny_bench):
        header = (tiny_bench / "report.txt").read_text().splitlines()[0]
        for column in ("Method", "Train Time (s)", "ROC AUC", "Precision", "Recall",
                       "F1-Score", "Inference Time (s)"):
            assert column in header

    def test_auc_recomputable_from_persisted_scores(self, tiny_bench):
        from aad.metrics import roc_auc

        payload = json.loads((tiny_bench / "report.json").read_text())
        labels = read_vector(tiny_bench / "test.framelabels").astype(int)
        for row in payload["rows"]:
            scores = read_vector(tiny_bench / f"{row['method']}.scores")
            assert roc_auc(labels, scores) == pytest.approx(row["roc_auc"], abs=1e-9)

    def test_metrics_deterministic_across_reruns(self, tiny_dataset, tiny_bench, tmp_path):
        out = tmp_path / "again"
        main(["bench", "--manifest", str(tiny_dataset / "manifest.tsv"),
              "--out", str(out), "--config", str(tiny_dataset / "fast.txt")])
        a = json.loads((tiny_bench / "report.json").read_text())
        b = json.loads((out / "report.json").read_text())
        for ra, rb in zip(a["rows"], b["rows"]):
            for key in ("roc_auc", "precision", "recall", "f1", "threshold"):
                assert ra[key] == rb[key]

    def test_inspect_artifacts_present(self, tiny_bench):
        for name in ("mel_db.tsv", "mfcc.tsv", "fft_amplitude.tsv"):
            assert (tiny_bench / "inspect" / name).exists()


class TestStageIsolation:
    def test_bench_equals_chained_commands(self, tiny_dataset, tiny_bench, tmp_path):
        cfg = str(tiny_dataset / "fast.txt")
        out = tmp_path / "staged"
        out.mkdir()
        for split in ("train", "val", "calib", "test"):
            args = ["features", "--wav", str(tiny_dataset / f"{split}.wav"),
                    "--out", str(out), "--config", cfg]
            if split in ("calib", "test"):
                args += ["--labels", str(tiny_dataset / f"{split}.labels")]
            assert main(args) == 0

        for kind in ("kmeans", "ocsvm", "lstmae"):
            assert main(["train", "--frames", str(out / "train.frames"),
                         "--detector", kind, "--out", str(out / f"{kind}.model"),
                         "--config", cfg]) == 0
            assert main(["calibrate", "--model", str(out / f"{kind}.model"),
                         "--val-frames", str(out / "val.frames"),
                         "--calib-frames", str(out / "calib.frames"),
                         "--calib-labels", str(tiny_dataset / "calib.labels"),
                         "--out", str(out / f"{kind}.calibration"), "--config", cfg]) == 0
            assert main(["score", "--model", str(out / f"{kind}.model"),
                         "--frames", str(out / "test.frames"),
                         "--out", str(out / f"{kind}.scores")]) == 0
            assert main(["eval", "--scores", str(out / f"{kind}.scores"),
                         "--labels", str(out / "test.framelabels"),
                         "--calibration", str(out / f"{kind}.calibration"),
                         "--method", kind, "--out", str(out / f"{kind}.eval.json")]) == 0

            staged_scores = read_vector(out / f"{kind}.scores")
            bench_scores = read_vector(tiny_bench / f"{kind}.scores")
            assert np.array_equal(staged_scores, bench_scores)

            staged_threshold = read_calibration_threshold(out / f"{kind}.calibration")
            bench_threshold = read_calibration_threshold(tiny_bench / f"{kind}.calibration")
            assert staged_threshold == bench_threshold

            staged = json.loads((out / f"{kind}.eval.json").read_text())
            bench_rows = json.loads((tiny_bench / "report.json").read_text())["rows"]
            bench_row = next(r for r in bench_rows if r["method"] == kind)
            for key in ("roc_auc", "precision", "recall", "f1"):
                assert staged[key] == bench_row[key]
            assert staged["confusion"] == bench_row["confusion"]


class TestInspect:
    def test_matrix_round_trip(self, tmp_path, rng):
        matrix = rng.standard_normal((7, 11))
        write_matrix(tmp_path / "m.tsv", "demo", matrix)
        name, loaded = read_matrix(tmp_path / "m.tsv")
        assert name == "demo"
        assert np.array_equal(loaded, matrix)  # %.17g round-trips doubles

    def test_normal_clip_energy_below_2khz_rows(self, tiny_dataset, tmp_path):
        assert main(["inspect", "--wav", str(tiny_dataset / "train.wav"),
                     "--out", str(tmp_path / "ins")]) == 0
        _, mel_db = read_matrix(tmp_path / "ins" / "mel_db.tsv")
        from aad.features import hz_to_mel, mel_to_hz

        n_mels = mel_db.shape[0]
        edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(8000.0), n_mels + 2))
        centers = edges[1:-1]
        power = 10 ** (mel_db / 10.0)
        low = power[centers <= 2000.0].sum()
        assert low / power.sum() > 0.95

    def test_zero_wav_surfaces_tagged_numeric_error(self, tmp_path, capsys):
        from aad.audio_io import AudioClip, save_wav

        zero = tmp_path / "zero.wav"
        save_wav(AudioClip(samples=np.zeros(32000), sample_rate=16000), zero)
        rc = main(["inspect", "--wav", str(zero), "--out", str(tmp_path / "o")])
        assert rc == 4
        err = capsys.readouterr().err
        assert "inspect:" in err

    def test_fft_matrix_has_freq_and_amp_rows(self, tiny_dataset, tmp_path):
        main(["inspect", "--wav", str(tiny_dataset / "val.wav"), "--out", str(tmp_path / "i2")])
        _, fft = read_matrix(tmp_path / "i2" / "fft_amplitude.tsv")
        assert fft.shape[0] == 2
        assert fft[0, 0] == 0.0
        assert np.all(np.diff(fft[0]) > 0)


class TestConfig:
    def test_digest_stable_under_reordering(self, tmp_path):
        a = tmp_path / "a.cfg"
        b = tmp_path / "b.cfg"
        a.write_text("n_fft = 512\nseed = 9\nlstm_lr = 0.01\n")
        b.write_text("lstm_lr = 0.01\nn_fft = 512\nseed = 9\n")
        assert load_config(a).digest() == load_config(b).digest()

    def test_digest_changes_with_values(self, tmp_path):
        a = tmp_path / "a.cfg"
        a.write_text("n_fft = 512\n")
        b = tmp_path / "b.cfg"
        b.write_text("n_fft = 1024\n")
        assert load_config(a).digest() != load_config(b).digest()

    def test_defaults_match_spec_values(self):
        cfg = RunConfig()
        assert cfg.n_fft == 1024
        assert cfg.hop_length == 512
        assert cfg.n_mels == 128
        assert cfg.time_per_frame == 0.512
        assert cfg.hop_ratio == 0.2
        assert cfg.kmeans_k == 8
        assert cfg.ocsvm_nu == 0.1
        assert cfg.lstm_hidden == 64
        assert cfg.lstm_epochs == 30
        assert cfg.lstm_batch == 64
        assert cfg.lstm_lr == 1e-3
        assert cfg.grid() == tuple(range(5, 100, 5))
        assert cfg.denoise is False

    def test_unknown_key_rejected(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("warp_speed = 9\n")
        from aad.errors import ConfigError

        with pytest.raises(ConfigError):
            load_config(bad)

    def test_round_trip_via_write(self, tmp_path):
        cfg = RunConfig(n_fft=2048, denoise=True, ocsvm_gamma=0.125, fmax=6000.0, seed=11)
        cfg.write(tmp_path / "c.cfg")
        again = load_config(tmp_path / "c.cfg")
        assert again == cfg


class TestManifest:
    def test_train_with_labels_rejected(self, tmp_path):
        bad = tmp_path / "m.tsv"
        bad.write_text("a.wav\ttrain\ta.labels\n")
        with pytest.raises(ManifestError):
            load_manifest(bad)

    def test_test_without_labels_rejected(self, tmp_path):
        bad = tmp_path / "m.tsv"
        bad.write_text("a.wav\ttest\n")
        with pytest.raises(ManifestError):
            load_manifest(bad)

    def test_unknown_split_rejected(self, tmp_path):
        bad = tmp_path / "m.tsv"
        bad.write_text("a.wav\tholdout\n")
        with pytest.raises(ManifestError):
            load_manifest(bad)

    def test_manifest_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "m.tsv"
        bad.write_text("a.wav\ttrain\ta.labels\n")
        rc = main(["bench", "--manifest", str(bad), "--out", str(tmp_path / "o")])
        assert rc == 3

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as exc:
            main(["bench"])  # missing required arguments
        assert exc.value.code == 2
