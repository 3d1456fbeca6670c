import hashlib
import json

import numpy as np
import pytest

from rantwin import anomaly, mlp
from rantwin.cli import main


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestGenDataset:
    def test_zero_samples_exits_2_with_message(self, tmp_path, capsys):
        rc = main(["gen-dataset", "--out", str(tmp_path / "d.csv"), "--n-samples", "0"])
        assert rc == 2
        assert "n_samples must be positive" in capsys.readouterr().err

    def test_small_run_row_count_and_manifest(self, tmp_path):
        out = tmp_path / "d.csv"
        rc = main(["gen-dataset", "--out", str(out), "--n-samples", "80", "--seed", "3"])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == anomaly.DATASET_HEADER
        assert len(lines) == 81
        manifest = json.loads((tmp_path / "d.csv.manifest.json").read_text())
        assert manifest["command"] == "gen-dataset"
        assert manifest["error"] is None
        assert manifest["outputs"][str(out)] == sha(out)
        assert manifest["seeds"]["dataset_seed"] == 3

    def test_reruns_are_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            rc = main(["gen-dataset", "--out", str(out), "--n-samples", "120", "--seed", "9"])
            assert rc == 0
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_uez": 10}))
        rc = main(["gen-dataset", "--config", str(cfg), "--out", str(tmp_path / "d.csv")])
        assert rc == 2
        assert "n_uez" in capsys.readouterr().err

    def test_failure_still_writes_manifest(self, tmp_path):
        out = tmp_path / "d.csv"
        rc = main(["gen-dataset", "--out", str(out), "--n-samples", "0"])
        assert rc == 2
        manifest = json.loads((tmp_path / "d.csv.manifest.json").read_text())
        assert "n_samples must be positive" in manifest["error"]

    def test_config_file_not_mutated(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_ues": 20, "n_ticks": 300}))
        before = sha(cfg)
        rc = main(["gen-dataset", "--config", str(cfg), "--out", str(tmp_path / "d.csv"),
                   "--n-samples", "60"])
        assert rc == 0
        assert sha(cfg) == before


def train_args(dataset, tmp_path, epochs="12", extra=()):
    return [
        "train",
        "--dataset", str(dataset),
        "--model-out", str(tmp_path / "model.txt"),
        "--stats-out", str(tmp_path / "stats.csv"),
        "--report-out", str(tmp_path / "report.csv"),
        "--epochs", epochs,
        *extra,
    ]


@pytest.fixture()
def small_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "small.csv"
    rc = main(["gen-dataset", "--out", str(path), "--n-samples", "400", "--seed", "5"])
    assert rc == 0
    return path


class TestTrain:
    def test_outputs_and_printed_accuracy(self, small_dataset, tmp_path, capsys):
        rc = main(train_args(small_dataset, tmp_path))
        assert rc == 0
        out = capsys.readouterr().out
        assert "final test accuracy" in out
        assert (tmp_path / "model.txt").exists()
        assert (tmp_path / "stats.csv").exists()
        report = (tmp_path / "report.csv").read_text().splitlines()
        assert report[0] == "epoch,train_loss,test_accuracy"
        assert len(report) == 13

    def test_corrupt_row_exits_2_naming_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text(anomaly.DATASET_HEADER + "\n-90,-3,10,9,1,1,0.1,2,0,1,5\nbroken\n")
        rc = main(train_args(bad, tmp_path))
        assert rc == 2
        assert "line 3" in capsys.readouterr().err

    def test_fixed_seeds_identical_model_digest(self, small_dataset, tmp_path):
        d1, d2 = tmp_path / "r1", tmp_path / "r2"
        d1.mkdir(), d2.mkdir()
        for d in (d1, d2):
            rc = main(train_args(small_dataset, d))
            assert rc == 0
        assert sha(d1 / "model.txt") == sha(d2 / "model.txt")
        assert sha(d1 / "stats.csv") == sha(d2 / "stats.csv")
        assert sha(d1 / "report.csv") == sha(d2 / "report.csv")


@pytest.fixture()
def trained(small_dataset, tmp_path_factory):
    root = tmp_path_factory.mktemp("trained")
    rc = main(train_args(small_dataset, root, epochs="40"))
    assert rc == 0
    return {
        "dataset": small_dataset,
        "model": root / "model.txt",
        "stats": root / "stats.csv",
    }


class TestEval:
    def test_eval_writes_metrics(self, trained, tmp_path, capsys):
        out = tmp_path / "eval"
        rc = main([
            "eval", "--model", str(trained["model"]), "--stats", str(trained["stats"]),
            "--dataset", str(trained["dataset"]), "--out-dir", str(out),
        ])
        assert rc == 0
        assert "accuracy on test split" in capsys.readouterr().out
        metrics = dict(
            line.split(",") for line in (out / "metrics.csv").read_text().splitlines()[1:]
        )
        assert 0.0 <= float(metrics["accuracy"]) <= 1.0
        confusion = (out / "confusion.csv").read_text().splitlines()
        assert confusion[0] == "true\\pred,Normal,RsrpError,RsrqError,SinrError"
        manifest = json.loads((out / "eval.manifest.json").read_text())
        assert manifest["error"] is None

    def test_train_split_sanity_path(self, trained, tmp_path):
        rc = main([
            "eval", "--model", str(trained["model"]), "--stats", str(trained["stats"]),
            "--dataset", str(trained["dataset"]), "--out-dir", str(tmp_path / "e"),
            "--split", "train",
        ])
        assert rc == 0

    def test_perfect_predictions_give_diagonal_confusion(self, trained, tmp_path):
        # relabel a dataset with the model's own predictions -> accuracy 1.0
        model = mlp.load_model(trained["model"])
        stats = anomaly.read_stats_csv(trained["stats"])
        samples = anomaly.read_dataset_csv(trained["dataset"])
        relabeled = [
            anomaly.LabeledSample(
                s.features,
                mlp.predict(model, anomaly.standardize(s.features, stats)),
                s.ue_id,
                s.tick,
            )
            for s in samples
        ]
        dataset = tmp_path / "relabel.csv"
        anomaly.write_dataset_csv(relabeled, dataset)
        out = tmp_path / "eval"
        rc = main([
            "eval", "--model", str(trained["model"]), "--stats", str(trained["stats"]),
            "--dataset", str(dataset), "--out-dir", str(out), "--split", "all",
        ])
        assert rc == 0
        metrics = dict(
            line.split(",") for line in (out / "metrics.csv").read_text().splitlines()[1:]
        )
        assert float(metrics["accuracy"]) == 1.0
        rows = (out / "confusion.csv").read_text().splitlines()[1:]
        counts = np.array([[int(v) for v in row.split(",")[1:]] for row in rows])
        assert np.array_equal(counts, np.diag(np.diag(counts)))

    def test_wrong_width_model_exits_2(self, trained, tmp_path, capsys):
        bad_model = tmp_path / "bad.txt"
        bad_model.write_text(mlp.MODEL_MAGIC + "\n7 4\n" + "0 0 0 0 0 0 0\n" * 4 + "0 0 0 0\n")
        rc = main([
            "eval", "--model", str(bad_model), "--stats", str(trained["stats"]),
            "--dataset", str(trained["dataset"]), "--out-dir", str(tmp_path / "e"),
        ])
        assert rc == 2


class TestTsne:
    def test_embedding_written_and_silhouette_printed(self, trained, tmp_path, capsys):
        out = tmp_path / "emb.csv"
        rc = main([
            "tsne", "--model", str(trained["model"]), "--stats", str(trained["stats"]),
            "--dataset", str(trained["dataset"]), "--out", str(out),
            "--perplexity", "12", "--iterations", "150",
        ])
        assert rc == 0
        assert "silhouette" in capsys.readouterr().out
        lines = out.read_text().splitlines()
        assert lines[0] == "ue_id,tick,label,x,y"
        assert len(lines) == 81  # 20% of 400

    def test_infeasible_perplexity_exits_2(self, trained, tmp_path, capsys):
        rc = main([
            "tsne", "--model", str(trained["model"]), "--stats", str(trained["stats"]),
            "--dataset", str(trained["dataset"]), "--out", str(tmp_path / "emb.csv"),
            "--perplexity", "1000",
        ])
        assert rc == 2
        assert "perplexity" in capsys.readouterr().err

    def test_fixed_seed_identical_embedding(self, trained, tmp_path):
        outs = [tmp_path / "e1.csv", tmp_path / "e2.csv"]
        for out in outs:
            rc = main([
                "tsne", "--model", str(trained["model"]), "--stats", str(trained["stats"]),
                "--dataset", str(trained["dataset"]), "--out", str(out),
                "--perplexity", "12", "--iterations", "120", "--seed", "44",
            ])
            assert rc == 0
        assert outs[0].read_bytes() == outs[1].read_bytes()


class TestClosedLoop:
    def test_empty_schedule_zero_fault_rows(self, trained, tmp_path):
        schedule = tmp_path / "schedule.json"
        schedule.write_text(json.dumps({"faults": []}))
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_ues": 10, "n_ticks": 60}))
        out = tmp_path / "loop"
        rc = main([
            "closed-loop", "--config", str(cfg), "--model", str(trained["model"]),
            "--stats", str(trained["stats"]), "--schedule", str(schedule),
            "--out-dir", str(out),
        ])
        assert rc == 0
        assert (out / "summary.csv").read_text().splitlines() == [
            "fault_id,ue_id,class,onset_tick,detect_tick,action_tick,restore_tick"
        ]

    def test_default_schedule_runs_and_reports(self, trained, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_ticks": 520}))
        out = tmp_path / "loop"
        rc = main([
            "closed-loop", "--config", str(cfg), "--model", str(trained["model"]),
            "--stats", str(trained["stats"]), "--out-dir", str(out),
        ])
        assert rc == 0
        assert "scheduled faults" in capsys.readouterr().out
        summary = (out / "summary.csv").read_text().splitlines()
        assert len(summary) == 4  # header + one row per class
        assert (out / "episode.jsonl").exists()

    def test_bad_schedule_exits_2(self, trained, tmp_path, capsys):
        schedule = tmp_path / "schedule.json"
        schedule.write_text(json.dumps({"faults": [{"onset_tick": 5}]}))
        rc = main([
            "closed-loop", "--model", str(trained["model"]),
            "--stats", str(trained["stats"]), "--schedule", str(schedule),
            "--out-dir", str(tmp_path / "loop"),
        ])
        assert rc == 2
        assert "fault #0" in capsys.readouterr().err

    def test_missing_model_exits_2(self, trained, tmp_path, capsys):
        rc = main([
            "closed-loop", "--model", str(tmp_path / "nope.txt"),
            "--stats", str(trained["stats"]), "--out-dir", str(tmp_path / "loop"),
        ])
        assert rc == 2
        assert "model file not found" in capsys.readouterr().err


class TestPrintDefaultConfig:
    def test_prints_parseable_defaults(self, capsys):
        rc = main(["print-default-config"])
        assert rc == 0
        config = json.loads(capsys.readouterr().out)
        assert config["n_cells"] == 3
        assert config["n_ues"] == 50
        assert config["link"]["prb_bandwidth_hz"] == 180e3
